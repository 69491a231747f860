#pragma once

#include <span>
#include <stdexcept>
#include <vector>

#include "fidlab/tape.hpp"

namespace fidlab::softrank {

inline constexpr double kDefaultTemperature = 0.1;

// K predicted scores for one group; ground-truth ranks are implicitly
// 1..K in element order (rank 1 = highest fidelity = element 0).
struct ScoreGroup {
  std::vector<double> scores;
  double temperature = kDefaultTemperature;
};

// P[i][j] = sigmoid((r_j - r_i) / tau). Antisymmetric: P_ij + P_ji = 1.
inline num::Tensor pairwise_probs(std::span<const double> r, double tau) {
  if (!(tau > 0.0)) throw std::invalid_argument("pairwise_probs: temperature must be positive");
  const std::size_t k = r.size();
  num::Tensor p({k, k});
  for (std::size_t i = 0; i < k; ++i)
    for (std::size_t j = 0; j < k; ++j) p.at(i, j) = num::sigmoid((r[j] - r[i]) / tau);
  return p;
}

// Soft rank per element, self-term excluded: R_hat_i = 1 + sum_{j != i} P_ij.
// Sums to K(K+1)/2 for every score vector.
inline std::vector<double> soft_ranks(const num::Tensor& p) {
  const std::size_t k = p.rows();
  std::vector<double> r(k);
  for (std::size_t i = 0; i < k; ++i) {
    double s = 1.0;
    for (std::size_t j = 0; j < k; ++j)
      if (j != i) s += p.at(i, j);
    r[i] = s;
  }
  return r;
}

// Records the loss subgraph on an existing tape; scores must be a K x 1 value.
// Loss = mean over i of (R_hat_i - (i+1))^2.
inline num::Tape::Id loss_on_tape(num::Tape& tape, num::Tape::Id scores, double tau) {
  if (!(tau > 0.0)) throw std::invalid_argument("softrank loss: temperature must be positive");
  const std::size_t k = tape.val(scores).rows();
  if (k < 2 || tape.val(scores).cols() != 1)
    throw std::invalid_argument("softrank loss: scores must be K x 1 with K >= 2");

  const auto ones_row = tape.leaf(num::Tensor::full(1, k, 1.0));
  const auto ones_col = tape.leaf(num::Tensor::full(k, 1, 1.0));
  // D_ij = r_j - r_i
  const auto d = tape.sub(tape.matmul(ones_col, tape.transpose(scores)),
                          tape.matmul(scores, ones_row));
  const auto p = tape.sigmoid(tape.scale(d, 1.0 / tau));
  // R_hat_i = 1 + rowsum(P)_i - P_ii = rowsum(P)_i + 0.5
  const auto soft = tape.add_scalar(tape.matmul(p, ones_col), 0.5);

  std::vector<double> gt(k);
  for (std::size_t i = 0; i < k; ++i) gt[i] = double(i + 1);
  const auto diff = tape.sub(soft, tape.leaf(num::Tensor::column(std::move(gt))));
  return tape.scale(tape.sum(tape.mul(diff, diff)), 1.0 / double(k));
}

struct LossResult {
  double loss = 0.0;
  std::vector<double> grad;  // dL/dr
};

inline LossResult softrank_loss(const ScoreGroup& group) {
  if (group.scores.size() < 2) throw std::invalid_argument("softrank_loss: need K >= 2 scores");
  num::Tape tape;
  const auto r = tape.leaf(num::Tensor::column(group.scores), true);
  const auto loss = loss_on_tape(tape, r, group.temperature);
  tape.backward(loss);
  return LossResult{tape.scalar(loss), tape.grad(r).data()};
}

}  // namespace fidlab::softrank
