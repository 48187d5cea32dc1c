// SPDX-License-Identifier: Apache-2.0
//
// Semantic-visual alignment: dot-product similarities between point features
// and class features, the seen-class cross-entropy, the unseen repulsion term
// and argmax inference.

#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "zsseg/tensor.hpp"

namespace zsseg {

/// Marker for points without a training label.
inline constexpr std::int32_t kUnlabeled = -1;

struct AlignmentConfig {
  double tau = 0.1;  // similarities are divided by tau
  void validate() const;
};

/// S[t, c] = F[t] . E[c]
Tensor similarity_matrix(const Tensor& features, const Tensor& class_features);

/// Mean over labeled points of -log softmax(S[t,:]/tau)[y_t], the softmax
/// running over every class. Throws if no point is labeled.
Tensor loss_seen(const Tensor& sim, std::span<const std::int32_t> labels, double tau);

/// Mean over unlabeled points of log(sum_seen exp(S/tau) / sum_all exp(S/tau)).
/// Returns a constant 0 (and logs a debug notice) when every point is labeled.
Tensor loss_unseen(const Tensor& sim, std::span<const std::int32_t> labels, const std::vector<bool>& seen_mask,
                   double tau);

Tensor loss_total(const Tensor& seen_loss, const Tensor& unseen_loss);

/// Row-wise argmax, ties to the lowest class index.
std::vector<std::int32_t> predict(const Tensor& sim);

}  // namespace zsseg
