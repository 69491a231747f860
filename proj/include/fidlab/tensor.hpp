#pragma once

#include <atomic>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace fidlab::num {

// Finite-value checking at op boundaries. On by default in debug builds,
// off in release; tests flip it on explicitly.
inline std::atomic<bool>& finite_checks_flag() {
#ifdef NDEBUG
  static std::atomic<bool> flag{false};
#else
  static std::atomic<bool> flag{true};
#endif
  return flag;
}
inline bool finite_checks_enabled() { return finite_checks_flag().load(std::memory_order_relaxed); }
inline void set_finite_checks(bool on) { finite_checks_flag().store(on, std::memory_order_relaxed); }

// Dense row-major array of doubles.
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(std::vector<std::size_t> shape, double fill = 0.0)
      : shape_(std::move(shape)), data_(count(shape_), fill) {}

  Tensor(std::vector<std::size_t> shape, std::vector<double> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    if (count(shape_) != data_.size())
      throw std::invalid_argument("Tensor: shape/data size mismatch");
  }

  static Tensor zeros(std::size_t r, std::size_t c) { return Tensor({r, c}); }
  static Tensor full(std::size_t r, std::size_t c, double v) { return Tensor({r, c}, v); }
  static Tensor identity(std::size_t n) {
    Tensor t({n, n});
    for (std::size_t i = 0; i < n; ++i) t.at(i, i) = 1.0;
    return t;
  }
  static Tensor row(std::vector<double> v) {
    std::size_t n = v.size();
    return Tensor({1, n}, std::move(v));
  }
  static Tensor column(std::vector<double> v) {
    std::size_t n = v.size();
    return Tensor({n, 1}, std::move(v));
  }

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t size() const { return data_.size(); }
  std::size_t ndim() const { return shape_.size(); }

  std::size_t rows() const { require_2d(); return shape_[0]; }
  std::size_t cols() const { require_2d(); return shape_[1]; }

  double& at(std::size_t i, std::size_t j) { require_2d(); return data_[i * shape_[1] + j]; }
  double at(std::size_t i, std::size_t j) const { require_2d(); return data_[i * shape_[1] + j]; }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  std::vector<double>& data() { return data_; }
  const std::vector<double>& data() const { return data_; }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  bool all_finite() const {
    for (double v : data_)
      if (!std::isfinite(v)) return false;
    return true;
  }

  // Throws if finite checking is enabled and a NaN/Inf is present.
  void check_finite(const char* where) const {
    if (!finite_checks_enabled()) return;
    if (!all_finite())
      throw std::runtime_error(std::string("non-finite value detected in ") + where);
  }

  std::string shape_str() const {
    std::string s = "[";
    for (std::size_t i = 0; i < shape_.size(); ++i)
      s += (i ? "x" : "") + std::to_string(shape_[i]);
    return s + "]";
  }

 private:
  static std::size_t count(const std::vector<std::size_t>& shape) {
    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
    return shape.empty() ? 0 : n;
  }
  void require_2d() const {
    if (shape_.size() != 2) throw std::invalid_argument("Tensor: 2-D access on " + shape_str());
  }

  std::vector<std::size_t> shape_;
  std::vector<double> data_;
};

// Numerically stable logistic function.
inline double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  double e = std::exp(x);
  return e / (1.0 + e);
}

inline Tensor sigmoid(const Tensor& x) {
  Tensor y = x;
  for (double& v : y.data()) v = sigmoid(v);
  y.check_finite("sigmoid");
  return y;
}

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.ndim() != 2 || b.ndim() != 2 || a.cols() != b.rows())
    throw std::invalid_argument("matmul: incompatible shapes " + a.shape_str() + " * " + b.shape_str());
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  Tensor c({m, n});
  const double* A = a.data().data();
  const double* B = b.data().data();
  double* C = c.data().data();
  for (std::size_t i = 0; i < m; ++i) {
    const double* Ai = A + i * k;
    double* Ci = C + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = Ai[p];
      const double* Bp = B + p * n;
      for (std::size_t j = 0; j < n; ++j) Ci[j] += aip * Bp[j];
    }
  }
  c.check_finite("matmul");
  return c;
}

inline Tensor transpose(const Tensor& a) {
  const std::size_t m = a.rows(), n = a.cols();
  Tensor t({n, m});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) t.at(j, i) = a.at(i, j);
  return t;
}

// Row-wise softmax of x / temperature, with max subtraction.
inline Tensor softmax_rows(const Tensor& x, double temperature) {
  if (!(temperature > 0.0)) throw std::invalid_argument("softmax_rows: temperature must be positive");
  const std::size_t m = x.rows(), n = x.cols();
  Tensor y({m, n});
  for (std::size_t i = 0; i < m; ++i) {
    double mx = x.at(i, 0) / temperature;
    for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, x.at(i, j) / temperature);
    double sum = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      double e = std::exp(x.at(i, j) / temperature - mx);
      y.at(i, j) = e;
      sum += e;
    }
    for (std::size_t j = 0; j < n; ++j) y.at(i, j) /= sum;
  }
  y.check_finite("softmax_rows");
  return y;
}

}  // namespace fidlab::num
