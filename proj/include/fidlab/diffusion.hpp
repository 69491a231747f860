#pragma once

#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

#include "fidlab/checkpoint.hpp"
#include "fidlab/image.hpp"
#include "fidlab/rng.hpp"
#include "fidlab/tape.hpp"

namespace fidlab::diffusion {

struct NoiseSchedule {
  int steps = 0;  // T
  std::vector<double> betas;       // beta_t, index t-1
  std::vector<double> alphas;      // 1 - beta_t
  std::vector<double> alpha_bars;  // cumulative product, strictly decreasing

  static NoiseSchedule linear(int steps, double beta_start = 1e-4, double beta_end = 0.02) {
    if (steps < 1) throw std::invalid_argument("NoiseSchedule: steps must be >= 1");
    NoiseSchedule s;
    s.steps = steps;
    s.betas.resize(steps);
    s.alphas.resize(steps);
    s.alpha_bars.resize(steps);
    double bar = 1.0;
    for (int t = 0; t < steps; ++t) {
      const double frac = steps == 1 ? 0.0 : double(t) / double(steps - 1);
      const double beta = beta_start + (beta_end - beta_start) * frac;
      if (!(beta > 0.0 && beta < 1.0)) throw std::invalid_argument("NoiseSchedule: beta out of (0,1)");
      s.betas[t] = beta;
      s.alphas[t] = 1.0 - beta;
      bar *= s.alphas[t];
      s.alpha_bars[t] = bar;
    }
    return s;
  }

  double alpha_bar(int t) const {  // t in [1, T]
    if (t < 1 || t > steps) throw std::invalid_argument("NoiseSchedule: t out of [1,T]");
    return alpha_bars[t - 1];
  }
};

// Discrete palette class standing in for a text condition.
struct Condition {
  int palette_id = 0;
};
inline constexpr int kNullCondition = -1;

struct DenoiserConfig {
  int image_size = 32;
  int num_classes = 8;
  int hidden = 96;
  int embed = 16;
  int steps = 50;

  int flat_dim() const { return image_size * image_size * 3; }
};

// Small MLP noise predictor with learned per-step and per-class embeddings.
// The last row of cond_table is the null-condition embedding.
struct DenoiserParams {
  DenoiserConfig config;
  num::Tensor w_in;        // D x H
  num::Tensor w_time;      // e x H
  num::Tensor w_cond;      // e x H
  num::Tensor b1;          // 1 x H
  num::Tensor w_h;         // H x H
  num::Tensor b2;          // 1 x H
  num::Tensor w_out;       // H x D
  num::Tensor b_out;       // 1 x D
  num::Tensor time_table;  // T x e
  num::Tensor cond_table;  // (C+1) x e

  static DenoiserParams init(const DenoiserConfig& cfg, std::uint64_t seed) {
    Rng rng(seed);
    auto randn = [&](std::size_t r, std::size_t c, double sd) {
      num::Tensor t({r, c});
      for (double& v : t.data()) v = rng.normal() * sd;
      return t;
    };
    const auto D = std::size_t(cfg.flat_dim());
    const auto H = std::size_t(cfg.hidden);
    const auto E = std::size_t(cfg.embed);
    DenoiserParams p;
    p.config = cfg;
    p.w_in = randn(D, H, 1.0 / std::sqrt(double(D)));
    p.w_time = randn(E, H, 1.0 / std::sqrt(double(E)));
    p.w_cond = randn(E, H, 1.0 / std::sqrt(double(E)));
    p.b1 = num::Tensor({1, H});
    p.w_h = randn(H, H, 1.0 / std::sqrt(double(H)));
    p.b2 = num::Tensor({1, H});
    p.w_out = randn(H, D, 1.0 / std::sqrt(double(H)));
    p.b_out = num::Tensor({1, D});
    p.time_table = randn(std::size_t(cfg.steps), E, 0.5);
    p.cond_table = randn(std::size_t(cfg.num_classes) + 1, E, 0.5);
    return p;
  }

  static DenoiserParams zeros(const DenoiserConfig& cfg) {
    DenoiserParams p;
    p.config = cfg;
    const auto D = std::size_t(cfg.flat_dim());
    const auto H = std::size_t(cfg.hidden);
    const auto E = std::size_t(cfg.embed);
    p.w_in = num::Tensor({D, H});
    p.w_time = num::Tensor({E, H});
    p.w_cond = num::Tensor({E, H});
    p.b1 = num::Tensor({1, H});
    p.w_h = num::Tensor({H, H});
    p.b2 = num::Tensor({1, H});
    p.w_out = num::Tensor({H, D});
    p.b_out = num::Tensor({1, D});
    p.time_table = num::Tensor({std::size_t(cfg.steps), E});
    p.cond_table = num::Tensor({std::size_t(cfg.num_classes) + 1, E});
    return p;
  }

  std::vector<num::Tensor*> all() {
    return {&w_in, &w_time, &w_cond, &b1, &w_h, &b2, &w_out, &b_out, &time_table, &cond_table};
  }
  std::vector<const num::Tensor*> all() const {
    return {&w_in, &w_time, &w_cond, &b1, &w_h, &b2, &w_out, &b_out, &time_table, &cond_table};
  }
};

inline std::size_t cond_row(const DenoiserConfig& cfg, int palette_id) {
  if (palette_id == kNullCondition) return std::size_t(cfg.num_classes);
  if (palette_id < 0 || palette_id >= cfg.num_classes)
    throw std::invalid_argument("condition palette_id out of range");
  return std::size_t(palette_id);
}

// Plain forward pass: z is B x D, one timestep/condition per row.
// Kept in lockstep with the tape version below (tested against it).
inline num::Tensor denoiser_eval(const DenoiserParams& p, const num::Tensor& z,
                                 std::span<const int> ts, std::span<const int> conds) {
  const std::size_t B = z.rows();
  if (ts.size() != B || conds.size() != B)
    throw std::invalid_argument("denoiser_eval: per-row timestep/condition required");
  const std::size_t E = std::size_t(p.config.embed);

  num::Tensor t_emb({B, E}), c_emb({B, E});
  for (std::size_t i = 0; i < B; ++i) {
    if (ts[i] < 1 || ts[i] > p.config.steps) throw std::invalid_argument("denoiser_eval: t out of [1,T]");
    const std::size_t tr = std::size_t(ts[i] - 1);
    const std::size_t cr = cond_row(p.config, conds[i]);
    for (std::size_t j = 0; j < E; ++j) {
      t_emb.at(i, j) = p.time_table.at(tr, j);
      c_emb.at(i, j) = p.cond_table.at(cr, j);
    }
  }

  num::Tensor h1 = num::matmul(z, p.w_in);
  const num::Tensor ht = num::matmul(t_emb, p.w_time);
  const num::Tensor hc = num::matmul(c_emb, p.w_cond);
  for (std::size_t i = 0; i < B; ++i)
    for (std::size_t j = 0; j < h1.cols(); ++j)
      h1.at(i, j) = std::tanh(h1.at(i, j) + ht.at(i, j) + hc.at(i, j) + p.b1.at(0, j));

  num::Tensor h2 = num::matmul(h1, p.w_h);
  for (std::size_t i = 0; i < B; ++i)
    for (std::size_t j = 0; j < h2.cols(); ++j)
      h2.at(i, j) = std::tanh(h2.at(i, j) + p.b2.at(0, j));

  num::Tensor out = num::matmul(h2, p.w_out);
  for (std::size_t i = 0; i < B; ++i)
    for (std::size_t j = 0; j < out.cols(); ++j) out.at(i, j) += p.b_out.at(0, j);
  return out;
}

struct DenoiserLeaves {
  num::Tape::Id w_in, w_time, w_cond, b1, w_h, b2, w_out, b_out, time_table, cond_table;
  std::vector<num::Tape::Id> ordered() const {
    return {w_in, w_time, w_cond, b1, w_h, b2, w_out, b_out, time_table, cond_table};
  }
};

inline DenoiserLeaves leaf_denoiser(num::Tape& tape, const DenoiserParams& p, bool requires_grad) {
  DenoiserLeaves l;
  l.w_in = tape.leaf(p.w_in, requires_grad);
  l.w_time = tape.leaf(p.w_time, requires_grad);
  l.w_cond = tape.leaf(p.w_cond, requires_grad);
  l.b1 = tape.leaf(p.b1, requires_grad);
  l.w_h = tape.leaf(p.w_h, requires_grad);
  l.b2 = tape.leaf(p.b2, requires_grad);
  l.w_out = tape.leaf(p.w_out, requires_grad);
  l.b_out = tape.leaf(p.b_out, requires_grad);
  l.time_table = tape.leaf(p.time_table, requires_grad);
  l.cond_table = tape.leaf(p.cond_table, requires_grad);
  return l;
}

inline num::Tape::Id denoiser_forward(num::Tape& tape, const DenoiserConfig& cfg,
                                      const DenoiserLeaves& l, num::Tape::Id z,
                                      std::span<const int> ts, std::span<const int> conds) {
  std::vector<std::size_t> t_idx(ts.size()), c_idx(conds.size());
  for (std::size_t i = 0; i < ts.size(); ++i) {
    if (ts[i] < 1 || ts[i] > cfg.steps) throw std::invalid_argument("denoiser_forward: t out of [1,T]");
    t_idx[i] = std::size_t(ts[i] - 1);
    c_idx[i] = cond_row(cfg, conds[i]);
  }
  auto pre = tape.add(tape.matmul(z, l.w_in),
                      tape.add(tape.matmul(tape.gather_rows(l.time_table, t_idx), l.w_time),
                               tape.matmul(tape.gather_rows(l.cond_table, c_idx), l.w_cond)));
  auto h1 = tape.tanh(tape.add_rowvec(pre, l.b1));
  auto h2 = tape.tanh(tape.add_rowvec(tape.matmul(h1, l.w_h), l.b2));
  return tape.add_rowvec(tape.matmul(h2, l.w_out), l.b_out);
}

// z_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) noise
inline num::Tensor forward_noise(const num::Tensor& x0, double alpha_bar, const num::Tensor& noise) {
  if (!x0.same_shape(noise)) throw std::invalid_argument("forward_noise: shape mismatch");
  const double a = std::sqrt(alpha_bar);
  const double b = std::sqrt(1.0 - alpha_bar);
  num::Tensor z = x0;
  for (std::size_t i = 0; i < z.size(); ++i) z[i] = a * z[i] + b * noise[i];
  return z;
}

inline num::Tensor forward_noise(const num::Tensor& x0, const NoiseSchedule& sched, int t,
                                 const num::Tensor& noise) {
  return forward_noise(x0, sched.alpha_bar(t), noise);
}

// eps_u + s (eps_c - eps_u). Exact passthrough at s = 0 and s = 1.
inline num::Tensor cfg_combine(const num::Tensor& eps_u, const num::Tensor& eps_c, double s) {
  if (!eps_u.same_shape(eps_c)) throw std::invalid_argument("cfg_combine: shape mismatch");
  if (s == 0.0) return eps_u;
  if (s == 1.0) return eps_c;
  num::Tensor out = eps_u;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += s * (eps_c[i] - eps_u[i]);
  return out;
}

// Per-pixel field: s(u,v) scales the conditional difference at each spatial
// site across all channels. Tensors are flat rows over H x W x 3.
inline num::Tensor cfg_combine(const num::Tensor& eps_u, const num::Tensor& eps_c,
                               const num::Tensor& s_map, int height, int width) {
  if (!eps_u.same_shape(eps_c)) throw std::invalid_argument("cfg_combine: shape mismatch");
  if (s_map.ndim() != 2 || int(s_map.rows()) != height || int(s_map.cols()) != width)
    throw std::invalid_argument("cfg_combine: guidance field shape mismatch");
  if (eps_u.size() != std::size_t(height) * width * 3)
    throw std::invalid_argument("cfg_combine: prediction size mismatch");
  num::Tensor out = eps_u;
  for (std::size_t p = 0; p < std::size_t(height) * width; ++p) {
    const double s = s_map[p];
    for (int c = 0; c < 3; ++c) {
      const std::size_t i = p * 3 + c;
      out[i] += s * (eps_c[i] - eps_u[i]);
    }
  }
  return out;
}

namespace detail {
inline void predict_pair(const DenoiserParams& p, const num::Tensor& z, int t, Condition cond,
                         num::Tensor& eps_u, num::Tensor& eps_c) {
  const int ts[1] = {t};
  const int uncond[1] = {kNullCondition};
  const int cvals[1] = {cond.palette_id};
  eps_u = denoiser_eval(p, z, ts, uncond);
  eps_c = denoiser_eval(p, z, ts, cvals);
}
}  // namespace detail

inline num::Tensor cfg_predict(const DenoiserParams& p, const num::Tensor& z, int t,
                               Condition cond, double s) {
  num::Tensor eps_u, eps_c;
  detail::predict_pair(p, z, t, cond, eps_u, eps_c);
  return cfg_combine(eps_u, eps_c, s);
}

inline num::Tensor cfg_predict(const DenoiserParams& p, const num::Tensor& z, int t,
                               Condition cond, const num::Tensor& s_map) {
  num::Tensor eps_u, eps_c;
  detail::predict_pair(p, z, t, cond, eps_u, eps_c);
  return cfg_combine(eps_u, eps_c, s_map, p.config.image_size, p.config.image_size);
}

// Guidance for a full trajectory: a scalar, or one H x W map per step
// indexed by the step counter (0 = start of denoising).
struct Guidance {
  double scalar = 1.0;
  const std::vector<num::Tensor>* per_step = nullptr;

  static Guidance constant(double s) { return Guidance{s, nullptr}; }
  static Guidance fields(const std::vector<num::Tensor>& maps) { return Guidance{0.0, &maps}; }
};

// Ancestral sampling from pure noise. The model works in [-1, 1]; the output
// image is mapped back and clamped to [0, 1]. Pure function of its arguments:
// the same seed gives the same initial noise and per-step draws for any
// guidance, so sweeps over s share trajectories.
inline RgbImage sample(const DenoiserParams& p, const NoiseSchedule& sched, Condition cond,
                       const Guidance& guidance, std::uint64_t seed) {
  if (sched.steps != p.config.steps)
    throw std::invalid_argument("sample: schedule/model step mismatch");
  if (guidance.per_step && int(guidance.per_step->size()) != sched.steps)
    throw std::invalid_argument("sample: need one guidance field per step");

  Rng rng(seed);
  const std::size_t D = std::size_t(p.config.flat_dim());
  num::Tensor z({1, D});
  for (double& v : z.data()) v = rng.normal();

  for (int step = 0; step < sched.steps; ++step) {
    const int t = sched.steps - step;
    num::Tensor eps = guidance.per_step
                          ? cfg_predict(p, z, t, cond, (*guidance.per_step)[step])
                          : cfg_predict(p, z, t, cond, guidance.scalar);

    const double beta = sched.betas[t - 1];
    const double alpha = sched.alphas[t - 1];
    const double abar = sched.alpha_bars[t - 1];
    const double abar_prev = t > 1 ? sched.alpha_bars[t - 2] : 1.0;
    const double mean_scale = 1.0 / std::sqrt(alpha);
    const double eps_scale = beta / std::sqrt(1.0 - abar);
    const double sigma = t > 1 ? std::sqrt(beta * (1.0 - abar_prev) / (1.0 - abar)) : 0.0;

    for (std::size_t i = 0; i < D; ++i) {
      double v = mean_scale * (z[i] - eps_scale * eps[i]);
      if (t > 1) v += sigma * rng.normal();
      z[i] = v;
    }
  }

  RgbImage img(p.config.image_size, p.config.image_size);
  for (std::size_t i = 0; i < D; ++i) img.data[i] = std::clamp((z[i] + 1.0) * 0.5, 0.0, 1.0);
  return img;
}

struct LabeledImage {
  RgbImage image;
  int palette_id = 0;
};

struct TrainDenoiserOptions {
  int epochs = 30;
  int batch = 16;
  double lr = 2e-3;
  double cond_drop_prob = 0.1;
  std::uint64_t seed = 0;
};

// Standard noise-prediction training with condition dropout. Returns mean
// loss per epoch through loss_curve when provided.
inline DenoiserParams train_denoiser(const std::vector<LabeledImage>& data,
                                     const DenoiserConfig& cfg, const TrainDenoiserOptions& opt,
                                     std::vector<double>* loss_curve = nullptr) {
  if (data.empty()) throw std::invalid_argument("train_denoiser: empty dataset");
  NoiseSchedule sched = NoiseSchedule::linear(cfg.steps);
  DenoiserParams params = DenoiserParams::init(cfg, opt.seed);
  Rng rng(Rng::fork(opt.seed, 1).next_u64());

  const std::size_t D = std::size_t(cfg.flat_dim());
  std::vector<num::Tensor> x0(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (data[i].image.height != cfg.image_size || data[i].image.width != cfg.image_size)
      throw std::invalid_argument("train_denoiser: image size mismatch");
    x0[i] = num::Tensor({1, D});
    for (std::size_t j = 0; j < D; ++j) x0[i][j] = data[i].image.data[j] * 2.0 - 1.0;
  }

  std::vector<std::size_t> order(data.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  num::Tape tape;
  for (int epoch = 0; epoch < opt.epochs; ++epoch) {
    rng.shuffle(order);
    double epoch_loss = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += std::size_t(opt.batch)) {
      const std::size_t B = std::min(order.size() - start, std::size_t(opt.batch));
      num::Tensor z({B, D}), target({B, D});
      std::vector<int> ts(B), conds(B);
      for (std::size_t b = 0; b < B; ++b) {
        const std::size_t idx = order[start + b];
        ts[b] = 1 + int(rng.index(std::uint64_t(cfg.steps)));
        conds[b] = rng.uniform01() < opt.cond_drop_prob ? kNullCondition : data[idx].palette_id;
        const double a = std::sqrt(sched.alpha_bar(ts[b]));
        const double s = std::sqrt(1.0 - sched.alpha_bar(ts[b]));
        for (std::size_t j = 0; j < D; ++j) {
          const double n = rng.normal();
          target.at(b, j) = n;
          z.at(b, j) = a * x0[idx][j] + s * n;
        }
      }

      tape.clear();
      DenoiserLeaves leaves = leaf_denoiser(tape, params, true);
      auto pred = denoiser_forward(tape, cfg, leaves, tape.leaf(std::move(z)), ts, conds);
      auto diff = tape.sub(pred, tape.leaf(std::move(target)));
      auto loss = tape.scale(tape.sum(tape.mul(diff, diff)), 1.0 / double(B * D));
      tape.backward(loss);
      epoch_loss += tape.scalar(loss);
      ++batches;

      auto leaf_ids = leaves.ordered();
      auto tensors = params.all();
      for (std::size_t k = 0; k < tensors.size(); ++k) {
        const num::Tensor& g = tape.grad(leaf_ids[k]);
        num::Tensor& w = *tensors[k];
        for (std::size_t i = 0; i < w.size(); ++i) w[i] -= opt.lr * g[i];
      }
    }
    if (loss_curve) loss_curve->push_back(epoch_loss / double(batches));
  }
  return params;
}

inline constexpr char kDenoiserMagic[] = "TDIF";

inline ckpt::Checkpoint to_checkpoint(const DenoiserParams& p) {
  ckpt::Checkpoint c;
  c.magic = kDenoiserMagic;
  c.meta = {{"image_size", p.config.image_size},
            {"num_classes", p.config.num_classes},
            {"hidden", p.config.hidden},
            {"embed", p.config.embed},
            {"steps", p.config.steps}};
  const char* names[] = {"w_in", "w_time", "w_cond", "b1", "w_h", "b2", "w_out", "b_out",
                         "time_table", "cond_table"};
  auto tensors = p.all();
  for (std::size_t i = 0; i < tensors.size(); ++i) c.tensors.emplace_back(names[i], *tensors[i]);
  return c;
}

inline DenoiserParams from_checkpoint(const ckpt::Checkpoint& c) {
  DenoiserConfig cfg;
  cfg.image_size = int(c.meta_value("image_size"));
  cfg.num_classes = int(c.meta_value("num_classes"));
  cfg.hidden = int(c.meta_value("hidden"));
  cfg.embed = int(c.meta_value("embed"));
  cfg.steps = int(c.meta_value("steps"));
  DenoiserParams p = DenoiserParams::zeros(cfg);
  auto tensors = p.all();
  const char* names[] = {"w_in", "w_time", "w_cond", "b1", "w_h", "b2", "w_out", "b_out",
                         "time_table", "cond_table"};
  for (std::size_t i = 0; i < tensors.size(); ++i) *tensors[i] = c.tensor(names[i]);
  return p;
}

inline void save_denoiser(const std::string& path, const DenoiserParams& p) {
  ckpt::save(path, to_checkpoint(p));
}

inline DenoiserParams load_denoiser(const std::string& path) {
  return from_checkpoint(ckpt::load(path, kDenoiserMagic));
}

}  // namespace fidlab::diffusion
