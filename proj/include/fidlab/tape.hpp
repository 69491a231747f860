#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <stdexcept>
#include <vector>

#include "fidlab/tensor.hpp"

namespace fidlab::num {

// Reverse-mode autodiff over an eagerly evaluated op record. Values are
// computed at record time; backward() walks the record once and fills
// gradients for entries that (transitively) depend on a marked leaf.
class Tape {
 public:
  using Id = std::uint32_t;

  Id leaf(Tensor value, bool requires_grad = false) {
    value.check_finite("leaf");
    return push(Op::Leaf, {}, std::move(value), requires_grad);
  }

  Id matmul(Id a, Id b) {
    return push(Op::Matmul, {a, b}, num::matmul(val(a), val(b)));
  }

  Id transpose(Id a) { return push(Op::Transpose, {a}, num::transpose(val(a))); }

  Id add(Id a, Id b) {
    const Tensor &x = val(a), &y = val(b);
    if (!x.same_shape(y)) throw std::invalid_argument("tape add: shape mismatch");
    Tensor out = x;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += y[i];
    return push(Op::Add, {a, b}, std::move(out));
  }

  Id sub(Id a, Id b) {
    const Tensor &x = val(a), &y = val(b);
    if (!x.same_shape(y)) throw std::invalid_argument("tape sub: shape mismatch");
    Tensor out = x;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] -= y[i];
    return push(Op::Sub, {a, b}, std::move(out));
  }

  Id mul(Id a, Id b) {
    const Tensor &x = val(a), &y = val(b);
    if (!x.same_shape(y)) throw std::invalid_argument("tape mul: shape mismatch");
    Tensor out = x;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= y[i];
    return push(Op::Mul, {a, b}, std::move(out));
  }

  Id scale(Id a, double c) {
    Tensor out = val(a);
    for (double& v : out.data()) v *= c;
    return push(Op::Scale, {a}, std::move(out), false, c);
  }

  Id add_scalar(Id a, double c) {
    Tensor out = val(a);
    for (double& v : out.data()) v += c;
    return push(Op::AddScalar, {a}, std::move(out), false, c);
  }

  // a: n x m, bias: 1 x m, added to every row.
  Id add_rowvec(Id a, Id bias) {
    const Tensor &x = val(a), &b = val(bias);
    if (b.rows() != 1 || b.cols() != x.cols())
      throw std::invalid_argument("tape add_rowvec: bias must be 1 x cols(a)");
    Tensor out = x;
    for (std::size_t i = 0; i < x.rows(); ++i)
      for (std::size_t j = 0; j < x.cols(); ++j) out.at(i, j) += b.at(0, j);
    return push(Op::AddRowvec, {a, bias}, std::move(out));
  }

  Id tanh(Id a) {
    Tensor out = val(a);
    for (double& v : out.data()) v = std::tanh(v);
    return push(Op::Tanh, {a}, std::move(out));
  }

  Id sigmoid(Id a) { return push(Op::Sigmoid, {a}, num::sigmoid(val(a))); }

  // log(1 + e^x), stable for large |x|.
  Id softplus(Id a) {
    Tensor out = val(a);
    for (double& v : out.data()) {
      double m = std::max(v, 0.0);
      v = m + std::log1p(std::exp(-std::abs(v)));
    }
    return push(Op::Softplus, {a}, std::move(out));
  }

  Id softmax_rows(Id a, double temperature) {
    return push(Op::SoftmaxRows, {a}, num::softmax_rows(val(a), temperature), false, temperature);
  }

  Id concat_rows(std::span<const Id> parts) {
    if (parts.empty()) throw std::invalid_argument("tape concat_rows: no inputs");
    const std::size_t c = val(parts[0]).cols();
    std::size_t r = 0;
    for (Id p : parts) {
      if (val(p).cols() != c) throw std::invalid_argument("tape concat_rows: column mismatch");
      r += val(p).rows();
    }
    Tensor out({r, c});
    std::size_t row = 0;
    for (Id p : parts) {
      const Tensor& t = val(p);
      std::copy(t.data().begin(), t.data().end(), out.data().begin() + row * c);
      row += t.rows();
    }
    return push(Op::ConcatRows, {parts.begin(), parts.end()}, std::move(out));
  }

  Id concat_rows(std::initializer_list<Id> parts) {
    return concat_rows(std::span<const Id>(parts.begin(), parts.size()));
  }

  // Rows [r0, r1) of a.
  Id slice_rows(Id a, std::size_t r0, std::size_t r1) {
    const Tensor& x = val(a);
    if (r0 >= r1 || r1 > x.rows()) throw std::invalid_argument("tape slice_rows: bad range");
    const std::size_t c = x.cols();
    Tensor out({r1 - r0, c});
    std::copy(x.data().begin() + r0 * c, x.data().begin() + r1 * c, out.data().begin());
    Id id = push(Op::SliceRows, {a}, std::move(out), false, double(r0));
    return id;
  }

  // table: R x d, one output row per index; gradients scatter-add into the table.
  Id gather_rows(Id table, std::vector<std::size_t> indices) {
    const Tensor& t = val(table);
    const std::size_t d = t.cols();
    Tensor out({indices.size(), d});
    for (std::size_t i = 0; i < indices.size(); ++i) {
      if (indices[i] >= t.rows()) throw std::invalid_argument("tape gather_rows: index out of range");
      std::copy(t.data().begin() + indices[i] * d, t.data().begin() + (indices[i] + 1) * d,
                out.data().begin() + i * d);
    }
    Id id = push(Op::GatherRows, {table}, std::move(out));
    entries_[id].indices = std::move(indices);
    return id;
  }

  // Sum of all elements, as a 1x1 tensor.
  Id sum(Id a) {
    double s = 0.0;
    for (double v : val(a).data()) s += v;
    return push(Op::Sum, {a}, Tensor({1, 1}, {s}));
  }

  const Tensor& val(Id id) const { return entries_.at(id).value; }

  double scalar(Id id) const {
    const Tensor& t = val(id);
    if (t.size() != 1) throw std::invalid_argument("tape scalar: value is not a scalar");
    return t[0];
  }

  // Gradient of the last backward() root w.r.t. entry id.
  const Tensor& grad(Id id) const {
    if (id >= grads_.size() || grads_[id].size() == 0)
      throw std::invalid_argument("tape grad: no gradient recorded for this entry");
    return grads_[id];
  }

  void backward(Id root) {
    if (val(root).size() != 1) throw std::invalid_argument("tape backward: root must be scalar");
    grads_.assign(entries_.size(), Tensor());
    auto g = [&](Id id) -> Tensor& {
      if (grads_[id].size() == 0) grads_[id] = Tensor(entries_[id].value.shape());
      return grads_[id];
    };
    g(root)[0] = 1.0;
    for (std::size_t k = entries_.size(); k-- > 0;) {
      const Entry& e = entries_[k];
      if (!e.needs_grad || grads_[k].size() == 0) continue;
      const Tensor& gy = grads_[k];
      switch (e.op) {
        case Op::Leaf:
          break;
        case Op::Matmul: {
          const Tensor& a = val(e.in[0]);
          const Tensor& b = val(e.in[1]);
          if (needs(e.in[0])) {
            Tensor& ga = g(e.in[0]);
            const std::size_t m = a.rows(), kk = a.cols(), n = b.cols();
            for (std::size_t i = 0; i < m; ++i)
              for (std::size_t j = 0; j < n; ++j) {
                const double gij = gy.at(i, j);
                for (std::size_t p = 0; p < kk; ++p) ga.at(i, p) += gij * b.at(p, j);
              }
          }
          if (needs(e.in[1])) {
            Tensor& gb = g(e.in[1]);
            const std::size_t m = a.rows(), kk = a.cols(), n = b.cols();
            for (std::size_t i = 0; i < m; ++i)
              for (std::size_t p = 0; p < kk; ++p) {
                const double aip = a.at(i, p);
                for (std::size_t j = 0; j < n; ++j) gb.at(p, j) += aip * gy.at(i, j);
              }
          }
          break;
        }
        case Op::Transpose:
          if (needs(e.in[0])) accumulate(g(e.in[0]), num::transpose(gy));
          break;
        case Op::Add:
          if (needs(e.in[0])) accumulate(g(e.in[0]), gy);
          if (needs(e.in[1])) accumulate(g(e.in[1]), gy);
          break;
        case Op::Sub:
          if (needs(e.in[0])) accumulate(g(e.in[0]), gy);
          if (needs(e.in[1])) {
            Tensor& gb = g(e.in[1]);
            for (std::size_t i = 0; i < gy.size(); ++i) gb[i] -= gy[i];
          }
          break;
        case Op::Mul: {
          if (needs(e.in[0])) {
            Tensor& ga = g(e.in[0]);
            const Tensor& b = val(e.in[1]);
            for (std::size_t i = 0; i < gy.size(); ++i) ga[i] += gy[i] * b[i];
          }
          if (needs(e.in[1])) {
            Tensor& gb = g(e.in[1]);
            const Tensor& a = val(e.in[0]);
            for (std::size_t i = 0; i < gy.size(); ++i) gb[i] += gy[i] * a[i];
          }
          break;
        }
        case Op::Scale:
          if (needs(e.in[0])) {
            Tensor& ga = g(e.in[0]);
            for (std::size_t i = 0; i < gy.size(); ++i) ga[i] += gy[i] * e.p0;
          }
          break;
        case Op::AddScalar:
          if (needs(e.in[0])) accumulate(g(e.in[0]), gy);
          break;
        case Op::AddRowvec: {
          if (needs(e.in[0])) accumulate(g(e.in[0]), gy);
          if (needs(e.in[1])) {
            Tensor& gb = g(e.in[1]);
            for (std::size_t i = 0; i < gy.rows(); ++i)
              for (std::size_t j = 0; j < gy.cols(); ++j) gb.at(0, j) += gy.at(i, j);
          }
          break;
        }
        case Op::Tanh:
          if (needs(e.in[0])) {
            Tensor& ga = g(e.in[0]);
            for (std::size_t i = 0; i < gy.size(); ++i)
              ga[i] += gy[i] * (1.0 - e.value[i] * e.value[i]);
          }
          break;
        case Op::Sigmoid:
          if (needs(e.in[0])) {
            Tensor& ga = g(e.in[0]);
            for (std::size_t i = 0; i < gy.size(); ++i)
              ga[i] += gy[i] * e.value[i] * (1.0 - e.value[i]);
          }
          break;
        case Op::Softplus:
          // d softplus(x)/dx = sigmoid(x) = 1 - exp(-softplus(x))
          if (needs(e.in[0])) {
            Tensor& ga = g(e.in[0]);
            for (std::size_t i = 0; i < gy.size(); ++i)
              ga[i] += gy[i] * (1.0 - std::exp(-e.value[i]));
          }
          break;
        case Op::SoftmaxRows:
          if (needs(e.in[0])) {
            Tensor& ga = g(e.in[0]);
            const Tensor& y = e.value;
            for (std::size_t i = 0; i < y.rows(); ++i) {
              double dot = 0.0;
              for (std::size_t j = 0; j < y.cols(); ++j) dot += gy.at(i, j) * y.at(i, j);
              for (std::size_t j = 0; j < y.cols(); ++j)
                ga.at(i, j) += y.at(i, j) * (gy.at(i, j) - dot) / e.p0;
            }
          }
          break;
        case Op::ConcatRows: {
          std::size_t row = 0;
          const std::size_t c = e.value.cols();
          for (Id p : e.in) {
            const std::size_t r = val(p).rows();
            if (needs(p)) {
              Tensor& gp = g(p);
              for (std::size_t i = 0; i < r * c; ++i) gp[i] += gy[row * c + i];
            }
            row += r;
          }
          break;
        }
        case Op::SliceRows:
          if (needs(e.in[0])) {
            Tensor& ga = g(e.in[0]);
            const std::size_t c = e.value.cols();
            const std::size_t r0 = std::size_t(e.p0);
            for (std::size_t i = 0; i < e.value.size(); ++i) ga[r0 * c + i] += gy[i];
          }
          break;
        case Op::GatherRows:
          if (needs(e.in[0])) {
            Tensor& gt = g(e.in[0]);
            const std::size_t d = e.value.cols();
            for (std::size_t i = 0; i < e.indices.size(); ++i)
              for (std::size_t j = 0; j < d; ++j) gt.at(e.indices[i], j) += gy.at(i, j);
          }
          break;
        case Op::Sum:
          if (needs(e.in[0])) {
            Tensor& ga = g(e.in[0]);
            const double gv = gy[0];
            for (double& v : ga.data()) v += gv;
          }
          break;
      }
    }
    if (finite_checks_enabled())
      for (const Tensor& t : grads_)
        if (t.size() != 0) t.check_finite("backward");
  }

  void clear() {
    entries_.clear();
    grads_.clear();
  }

  std::size_t size() const { return entries_.size(); }

 private:
  enum class Op : std::uint8_t {
    Leaf, Matmul, Transpose, Add, Sub, Mul, Scale, AddScalar, AddRowvec,
    Tanh, Sigmoid, Softplus, SoftmaxRows, ConcatRows, SliceRows, GatherRows, Sum
  };

  struct Entry {
    Op op;
    std::vector<Id> in;
    Tensor value;
    bool needs_grad = false;
    double p0 = 0.0;
    std::vector<std::size_t> indices;
  };

  bool needs(Id id) const { return entries_[id].needs_grad; }

  static void accumulate(Tensor& dst, const Tensor& src) {
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
  }

  Id push(Op op, std::vector<Id> in, Tensor value, bool leaf_grad = false, double p0 = 0.0) {
    value.check_finite("tape op");
    Entry e;
    e.op = op;
    e.in = std::move(in);
    e.value = std::move(value);
    e.p0 = p0;
    e.needs_grad = leaf_grad;
    for (Id i : e.in) e.needs_grad = e.needs_grad || entries_[i].needs_grad;
    entries_.push_back(std::move(e));
    return Id(entries_.size() - 1);
  }

  std::vector<Entry> entries_;
  std::vector<Tensor> grads_;
};

// Compares tape gradients of a scalar function against central finite
// differences. `build` receives a tape plus leaf ids for each parameter and
// returns the id of the scalar output. Returns the worst relative error with
// denominator max(|analytic|, |numeric|, 1e-8).
template <class BuildFn>
double grad_check(BuildFn&& build, const std::vector<Tensor>& params, double eps) {
  Tape tape;
  std::vector<Tape::Id> ids;
  ids.reserve(params.size());
  for (const Tensor& p : params) ids.push_back(tape.leaf(p, true));
  Tape::Id out = build(tape, ids);
  if (!std::isfinite(tape.scalar(out)))
    throw std::runtime_error("grad_check: function value is not finite");
  tape.backward(out);

  auto eval = [&](const std::vector<Tensor>& p) {
    Tape t;
    std::vector<Tape::Id> v;
    v.reserve(p.size());
    for (const Tensor& x : p) v.push_back(t.leaf(x, false));
    double y = t.scalar(build(t, v));
    if (!std::isfinite(y)) throw std::runtime_error("grad_check: function value is not finite");
    return y;
  };

  double worst = 0.0;
  std::vector<Tensor> work = params;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    const Tensor& analytic = tape.grad(ids[pi]);
    for (std::size_t i = 0; i < params[pi].size(); ++i) {
      const double saved = work[pi][i];
      work[pi][i] = saved + eps;
      const double fp = eval(work);
      work[pi][i] = saved - eps;
      const double fm = eval(work);
      work[pi][i] = saved;
      const double numeric = (fp - fm) / (2.0 * eps);
      const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), 1e-8});
      worst = std::max(worst, std::abs(analytic[i] - numeric) / denom);
    }
  }
  return worst;
}

}  // namespace fidlab::num
