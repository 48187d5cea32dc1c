// SPDX-License-Identifier: Apache-2.0
#include "zsseg/alignment.hpp"

#include <spdlog/spdlog.h>

#include <cmath>
#include <stdexcept>
#include <string>

namespace zsseg {

void AlignmentConfig::validate() const {
  if (!(tau > 0.0) || !std::isfinite(tau)) throw std::invalid_argument("alignment: tau must be positive");
}

Tensor similarity_matrix(const Tensor& features, const Tensor& class_features) {
  if (features.rank() != 2 || class_features.rank() != 2 || features.dim(1) != class_features.dim(1)) {
    throw DimensionError("similarity_matrix: features " + shape_str(features.shape()) + " vs classes " +
                         shape_str(class_features.shape()));
  }
  return matmul(features, transpose(class_features));
}

namespace {

void check_labels(const Tensor& sim, std::span<const std::int32_t> labels) {
  if (sim.rank() != 2) throw DimensionError("alignment: similarity must be [T,C], got " + shape_str(sim.shape()));
  if (labels.size() != sim.dim(0)) {
    throw DimensionError("alignment: " + std::to_string(labels.size()) + " labels for " + std::to_string(sim.dim(0)) +
                         " points");
  }
  const auto classes = static_cast<std::int32_t>(sim.dim(1));
  for (std::int32_t y : labels) {
    if (y != kUnlabeled && (y < 0 || y >= classes)) {
      throw IndexError("alignment: label " + std::to_string(y) + " out of range for " + std::to_string(classes) +
                       " classes");
    }
  }
}

}  // namespace

Tensor loss_seen(const Tensor& sim, std::span<const std::int32_t> labels, double tau) {
  check_labels(sim, labels);
  std::vector<std::size_t> rows;
  std::vector<std::size_t> targets;
  for (std::size_t t = 0; t < labels.size(); ++t) {
    if (labels[t] == kUnlabeled) continue;
    rows.push_back(t);
    targets.push_back(static_cast<std::size_t>(labels[t]));
  }
  if (rows.empty()) throw std::invalid_argument("loss_seen: no labeled points");
  const Tensor logits = scale(gather_rows(sim, rows), 1.0 / tau);
  return mean(sub(logsumexp(logits, 1), pick(logits, targets)));
}

Tensor loss_unseen(const Tensor& sim, std::span<const std::int32_t> labels, const std::vector<bool>& seen_mask,
                   double tau) {
  check_labels(sim, labels);
  if (seen_mask.size() != sim.dim(1)) throw DimensionError("loss_unseen: seen mask does not match class count");
  std::vector<std::size_t> rows;
  for (std::size_t t = 0; t < labels.size(); ++t) {
    if (labels[t] == kUnlabeled) rows.push_back(t);
  }
  if (rows.empty()) {
    spdlog::debug("loss_unseen: no unlabeled points, term contributes 0");
    return Tensor::scalar(0.0);
  }
  std::vector<std::size_t> seen_cols;
  for (std::size_t c = 0; c < seen_mask.size(); ++c) {
    if (seen_mask[c]) seen_cols.push_back(c);
  }
  if (seen_cols.empty()) throw std::invalid_argument("loss_unseen: no seen classes");
  const Tensor logits = scale(gather_rows(sim, rows), 1.0 / tau);
  return mean(sub(logsumexp(take(logits, 1, seen_cols), 1), logsumexp(logits, 1)));
}

Tensor loss_total(const Tensor& seen_loss, const Tensor& unseen_loss) { return add(seen_loss, unseen_loss); }

std::vector<std::int32_t> predict(const Tensor& sim) {
  if (sim.rank() != 2 || sim.dim(1) == 0) throw DimensionError("predict: expected [T,C] with C >= 1");
  const std::size_t n = sim.dim(0);
  const std::size_t c = sim.dim(1);
  std::vector<std::int32_t> out(n);
  auto s = sim.values();
  for (std::size_t t = 0; t < n; ++t) {
    std::size_t best = 0;
    for (std::size_t k = 1; k < c; ++k) {
      if (s[t * c + k] > s[t * c + best]) best = k;
    }
    out[t] = static_cast<std::int32_t>(best);
  }
  return out;
}

}  // namespace zsseg
