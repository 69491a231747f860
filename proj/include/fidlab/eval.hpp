#pragma once

#include <functional>
#include <vector>

#include "fidlab/image.hpp"
#include "fidlab/rank_metrics.hpp"

namespace fidlab::eval {

// Score callback: image, palette id -> scalar. Lets tests plug in oracle or
// random scorers through the same protocol as the real model.
using ScoreFn = std::function<double(const RgbImage&, int palette_id)>;

struct EvalGroup {
  std::vector<RgbImage> images;  // rank order, reference first
  int palette_id = 0;
};

struct EvalResult {
  double syn_pairs_accuracy = 0.0;  // adjacent-level synthetic pairs
  double real_syn_accuracy = 0.0;   // reference vs lowest-level variant
  double spearman = 0.0;            // score vs fidelity level, pooled
  double pearson = 0.0;
  double kendall = 0.0;
  std::size_t n_syn_pairs = 0;
  std::size_t n_real_pairs = 0;
  std::size_t n_images = 0;
};

inline EvalResult evaluate_groups(const std::vector<EvalGroup>& groups, const ScoreFn& score) {
  if (groups.empty()) throw std::invalid_argument("evaluate_groups: no groups");
  std::vector<metrics::ScoredPair> syn_pairs, real_pairs;
  std::vector<double> scores, levels;  // level = K - rank, higher is more faithful

  for (const EvalGroup& g : groups) {
    const std::size_t k = g.images.size();
    if (k < 2) throw std::invalid_argument("evaluate_groups: group needs K >= 2 images");
    std::vector<double> s(k);
    for (std::size_t i = 0; i < k; ++i) s[i] = score(g.images[i], g.palette_id);

    // synthetic adjacent pairs exclude the reference (ranks 2..K)
    for (std::size_t i = 1; i + 1 < k; ++i) syn_pairs.push_back({s[i], s[i + 1]});
    real_pairs.push_back({s[0], s[1]});

    for (std::size_t i = 0; i < k; ++i) {
      scores.push_back(s[i]);
      levels.push_back(double(k) - double(i + 1));
    }
  }

  EvalResult r;
  r.syn_pairs_accuracy = metrics::pair_accuracy(syn_pairs);
  r.real_syn_accuracy = metrics::pair_accuracy(real_pairs);
  r.spearman = metrics::spearman(scores, levels);
  r.pearson = metrics::pearson(scores, levels);
  r.kendall = metrics::kendall_tau_b(scores, levels);
  r.n_syn_pairs = syn_pairs.size();
  r.n_real_pairs = real_pairs.size();
  r.n_images = scores.size();
  return r;
}

}  // namespace fidlab::eval
