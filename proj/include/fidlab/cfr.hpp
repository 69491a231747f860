#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "fidlab/color_stats.hpp"
#include "fidlab/diffusion.hpp"
#include "fidlab/palette.hpp"
#include "fidlab/scorer.hpp"
#include "fidlab/tensor.hpp"

namespace fidlab::cfr {

inline constexpr double kDefaultKappa = 10.0;
inline constexpr double kDefaultLambda = 0.8;

struct AttentionResult {
  num::Tensor matrix;             // N x M, rows sum to 1
  std::vector<double> per_token;  // column mean over text tokens, sums to 1
};

// Text-to-image attention over normalized embeddings, aggregated across text
// tokens into one weight per visual token.
inline AttentionResult attention(const num::Tensor& text, const num::Tensor& visual,
                                 double kappa = kDefaultKappa) {
  if (!(kappa > 0.0)) throw std::invalid_argument("attention: kappa must be positive");
  if (text.cols() != visual.cols())
    throw std::invalid_argument("attention: embedding dimension mismatch");
  AttentionResult out;
  out.matrix = num::softmax_rows(num::matmul(text, num::transpose(visual)), kappa);
  const std::size_t n = out.matrix.rows(), m = out.matrix.cols();
  out.per_token.assign(m, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) out.per_token[j] += out.matrix.at(i, j) / double(n);
  return out;
}

struct SpatialMap {
  num::Tensor map;  // H x W, values in [0, 1]
  bool degenerate = false;  // constant input collapsed to all zeros
};

// Reshape a per-token vector to its square grid, min-max normalize to [0,1]
// (constant maps become all zeros, flagged), then bilinearly upsample with
// corner alignment.
inline SpatialMap normalize_upsample(const std::vector<double>& a, int height, int width) {
  const int side = int(std::lround(std::sqrt(double(a.size()))));
  if (std::size_t(side) * side != a.size())
    throw std::invalid_argument("normalize_upsample: token count must be a perfect square");
  if (height < 1 || width < 1) throw std::invalid_argument("normalize_upsample: bad target size");

  double lo = a[0], hi = a[0];
  for (double v : a) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  SpatialMap out;
  out.map = num::Tensor({std::size_t(height), std::size_t(width)});
  if (hi == lo) {
    out.degenerate = true;
    return out;
  }

  auto grid = [&](int i, int j) { return (a[std::size_t(i) * side + j] - lo) / (hi - lo); };
  for (int y = 0; y < height; ++y) {
    const double sy = side == 1 ? 0.0 : double(y) * double(side - 1) / double(std::max(1, height - 1));
    const int y0 = std::min(int(sy), side - 1);
    const int y1 = std::min(y0 + 1, side - 1);
    const double fy = sy - y0;
    for (int x = 0; x < width; ++x) {
      const double sx = side == 1 ? 0.0 : double(x) * double(side - 1) / double(std::max(1, width - 1));
      const int x0 = std::min(int(sx), side - 1);
      const int x1 = std::min(x0 + 1, side - 1);
      const double fx = sx - x0;
      const double top = grid(y0, x0) * (1 - fx) + grid(y0, x1) * fx;
      const double bot = grid(y1, x0) * (1 - fx) + grid(y1, x1) * fx;
      out.map.at(std::size_t(y), std::size_t(x)) = top * (1 - fy) + bot * fy;
    }
  }
  return out;
}

// s_t(u,v) = s0 (1 - lambda * alpha(t) * a'(u,v)), alpha(t) = 1 - t/T.
inline double guidance_scale_at(double s0, double lambda, int t, int total_steps, double a_value) {
  const double alpha = 1.0 - double(t) / double(total_steps);
  return s0 * (1.0 - lambda * alpha * a_value);
}

enum class Mode { Baseline, TemporalOnly, SpatialOnly, Full };

inline Mode parse_mode(const std::string& s) {
  if (s == "baseline") return Mode::Baseline;
  if (s == "temporal" || s == "temporal_only") return Mode::TemporalOnly;
  if (s == "spatial" || s == "spatial_only") return Mode::SpatialOnly;
  if (s == "full") return Mode::Full;
  throw std::invalid_argument("unknown refinement mode: " + s);
}

inline std::string mode_name(Mode m) {
  switch (m) {
    case Mode::Baseline: return "baseline";
    case Mode::TemporalOnly: return "temporal_only";
    case Mode::SpatialOnly: return "spatial_only";
    case Mode::Full: return "full";
  }
  return "?";
}

// Per-step per-pixel guidance scales; step index counts from 0 at the start
// of denoising (modulation strongest early, fading as sampling proceeds).
struct GuidanceField {
  double s0 = 1.0;
  double lambda = 0.0;
  std::vector<num::Tensor> maps;  // steps x (H x W)

  bool within_bounds() const {
    const double lo = s0 * (1.0 - lambda) - 1e-12, hi = s0 + 1e-12;
    for (const num::Tensor& m : maps)
      for (double v : m.data())
        if (v < lo || v > hi) return false;
    return true;
  }
};

inline GuidanceField guidance_field(Mode mode, double s0, double lambda, int steps,
                                    const num::Tensor& a_prime) {
  if (!(s0 > 0.0)) throw std::invalid_argument("guidance_field: s0 must be positive");
  if (lambda < 0.0 || lambda > 1.0) throw std::invalid_argument("guidance_field: lambda in [0,1]");
  if (steps < 1) throw std::invalid_argument("guidance_field: steps must be >= 1");
  const std::size_t h = a_prime.rows(), w = a_prime.cols();

  GuidanceField field;
  field.s0 = s0;
  field.lambda = lambda;
  field.maps.reserve(std::size_t(steps));
  for (int t = 0; t < steps; ++t) {
    const double alpha = 1.0 - double(t) / double(steps);
    num::Tensor m({h, w});
    for (std::size_t i = 0; i < m.size(); ++i) {
      double modulation = 0.0;
      switch (mode) {
        case Mode::Baseline: modulation = 0.0; break;
        case Mode::TemporalOnly: modulation = lambda * alpha; break;
        case Mode::SpatialOnly: modulation = lambda * a_prime[i]; break;
        case Mode::Full: modulation = lambda * alpha * a_prime[i]; break;
      }
      m[i] = s0 * (1.0 - modulation);
    }
    field.maps.push_back(std::move(m));
  }
  return field;
}

struct RefineReport {
  Mode mode = Mode::Full;
  double s0 = 0.0;
  double lambda = 0.0;
  double kappa = 0.0;
  std::uint64_t seed = 0;
  int palette_id = 0;
  double sat_before = 0.0, sat_after = 0.0;
  double delta_sat_before = 0.0, delta_sat_after = 0.0;
  double score_before = 0.0, score_after = 0.0;
  double palette_distance_before = 0.0, palette_distance_after = 0.0;
  bool attention_degenerate = false;
};

struct RefineResult {
  RgbImage image;
  RefineReport report;
};

// Two-pass refinement: sample at the base scale, extract the scorer's
// attention from that image, then re-sample from the same seed under the
// mode's guidance field.
inline RefineResult refine(const diffusion::DenoiserParams& denoiser,
                           const scorer::ScorerParams& cfm, const diffusion::NoiseSchedule& sched,
                           diffusion::Condition cond, double s0, double lambda, double kappa,
                           std::uint64_t seed, Mode mode) {
  RefineResult out;
  RefineReport& rep = out.report;
  rep.mode = mode;
  rep.s0 = s0;
  rep.lambda = lambda;
  rep.kappa = kappa;
  rep.seed = seed;
  rep.palette_id = cond.palette_id;

  const RgbImage first = diffusion::sample(denoiser, sched, cond,
                                           diffusion::Guidance::constant(s0), seed);
  rep.sat_before = color::compute_stats(first).mean_saturation;
  rep.delta_sat_before = std::abs(rep.sat_before - color::kRealSaturationReference);
  rep.palette_distance_before = palette::palette_distance(first, cond.palette_id);

  const scorer::TokenSequence seq = scorer::encode(cfm, first, cond);
  rep.score_before = scorer::score(cfm, seq);
  const scorer::NormalizedEmbeddings emb = scorer::export_embeddings(seq);
  const AttentionResult attn = attention(emb.text, emb.visual, kappa);
  const SpatialMap a_prime = normalize_upsample(attn.per_token, denoiser.config.image_size,
                                                denoiser.config.image_size);
  rep.attention_degenerate = a_prime.degenerate;

  const GuidanceField field = guidance_field(mode, s0, lambda, sched.steps, a_prime.map);
  out.image = diffusion::sample(denoiser, sched, cond, diffusion::Guidance::fields(field.maps), seed);

  rep.sat_after = color::compute_stats(out.image).mean_saturation;
  rep.delta_sat_after = std::abs(rep.sat_after - color::kRealSaturationReference);
  rep.score_after = scorer::score_image(cfm, out.image, cond);
  rep.palette_distance_after = palette::palette_distance(out.image, cond.palette_id);
  return out;
}

}  // namespace fidlab::cfr
