#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <stdexcept>
#include <vector>

namespace fidlab::metrics {

// One evaluation pair; preferred_score belongs to the item with higher
// ground-truth fidelity. Exact ties count as failures.
struct ScoredPair {
  double preferred_score;
  double other_score;
};

inline double pair_accuracy(std::span<const ScoredPair> pairs) {
  if (pairs.empty()) throw std::invalid_argument("pair_accuracy: empty pair list");
  std::size_t correct = 0;
  for (const ScoredPair& p : pairs)
    if (p.preferred_score > p.other_score) ++correct;
  return double(correct) / double(pairs.size());
}

// Average ranks, ties receive the mean of the ranks they occupy.
inline std::vector<double> average_ranks(std::span<const double> x) {
  const std::size_t n = x.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
  std::vector<double> ranks(n);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && x[order[j + 1]] == x[order[i]]) ++j;
    const double avg = (double(i) + double(j)) / 2.0 + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = avg;
    i = j + 1;
  }
  return ranks;
}

inline double pearson(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2)
    throw std::invalid_argument("pearson: need two equal-length vectors, n >= 2");
  const double n = double(x.size());
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = x[i] - mx, dy = y[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx == 0.0 || syy == 0.0) throw std::invalid_argument("pearson: zero variance");
  return sxy / std::sqrt(sxx * syy);
}

inline double spearman(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2)
    throw std::invalid_argument("spearman: need two equal-length vectors, n >= 2");
  const std::vector<double> rx = average_ranks(x);
  const std::vector<double> ry = average_ranks(y);
  return pearson(rx, ry);
}

// Kendall tau-b: (C - D) / sqrt((C + D + Tx) (C + D + Ty)).
inline double kendall_tau_b(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2)
    throw std::invalid_argument("kendall_tau_b: need two equal-length vectors, n >= 2");
  long long concordant = 0, discordant = 0, tie_x = 0, tie_y = 0;
  for (std::size_t i = 0; i < x.size(); ++i)
    for (std::size_t j = i + 1; j < x.size(); ++j) {
      const double dx = x[i] - x[j], dy = y[i] - y[j];
      if (dx == 0.0 && dy == 0.0) continue;  // joint ties drop out of both factors
      if (dx == 0.0) ++tie_x;
      else if (dy == 0.0) ++tie_y;
      else if (dx * dy > 0.0) ++concordant;
      else ++discordant;
    }
  const double denom = std::sqrt(double(concordant + discordant + tie_x)) *
                       std::sqrt(double(concordant + discordant + tie_y));
  if (denom == 0.0) throw std::invalid_argument("kendall_tau_b: all values tied");
  return double(concordant - discordant) / denom;
}

}  // namespace fidlab::metrics
