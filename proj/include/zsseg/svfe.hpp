// SPDX-License-Identifier: Apache-2.0
//
// Semantic-visual feature enhancement. Four decoder blocks exchange knowledge
// between the class (semantic) features and the two visual streams:
//
//   F_es = TD(TD(F_s, F_l, F_l), F_i, F_i)     (points first; image first swaps)
//   F_el = TD(F_l, F_s, F_s)
//   F_ei = TD(F_i, F_s, F_s)
//
// Visual enhancement reads the un-enhanced F_s.

#pragma once

#include <cstdint>
#include <span>
#include <string>

#include "zsseg/nn.hpp"

namespace zsseg {

enum class SvfeOrder { kPointsFirst, kImageFirst };
enum class SvfeVariant { kCrossAttention, kSelfAttentionOnly };

struct SvfeParams {
  TdParams sem_from_points;
  TdParams sem_from_image;
  TdParams points_from_sem;
  TdParams image_from_sem;
  SvfeOrder order = SvfeOrder::kPointsFirst;
  SvfeVariant variant = SvfeVariant::kCrossAttention;

  void collect(const std::string& prefix, ParamList& out);
};

SvfeParams init_svfe(std::size_t d, std::size_t heads, std::size_t mlp_hidden, Rng& rng,
                     SvfeOrder order = SvfeOrder::kPointsFirst,
                     SvfeVariant variant = SvfeVariant::kCrossAttention);

struct SvfeOutput {
  Tensor semantic;  // F_es [C, d]
  Tensor points;    // F_el [T, d]
  Tensor image;     // F_ei [T, d]
};

/// F_es. Image memory rows whose validity flag is 0 are left out of the
/// image-conditioned step; with no valid rows that step is skipped. An empty
/// mask means every row is valid.
Tensor enhance_semantic(const SvfeParams& p, const Tensor& sem, const Tensor& points, const Tensor& image_points,
                        std::span<const std::uint8_t> image_valid = {});

/// Semantic enhancement from the point stream only (image branch removed).
Tensor enhance_semantic_points_only(const SvfeParams& p, const Tensor& sem, const Tensor& points);

Tensor enhance_points(const SvfeParams& p, const Tensor& points, const Tensor& sem);
Tensor enhance_image_points(const SvfeParams& p, const Tensor& image_points, const Tensor& sem);

/// Each stream attends only to itself, reusing the four blocks' parameters so
/// the parameter count matches the cross-attention configuration.
SvfeOutput svfe_self_attention_variant(const SvfeParams& p, const Tensor& sem, const Tensor& points,
                                       const Tensor& image_points);

/// Dispatch on p.variant.
SvfeOutput run_svfe(const SvfeParams& p, const Tensor& sem, const Tensor& points, const Tensor& image_points,
                    std::span<const std::uint8_t> image_valid = {});

}  // namespace zsseg
