// SPDX-License-Identifier: Apache-2.0
//
// Semantic-guided fusion of the point and image streams.
//
// Gates are read out of the semantic memory with the visual features as
// queries, so they are indexed by point and can multiply F_el / F_ei:
//
//   w_3D = MHA(q = F_el, k = v = F_es)     w_2D = MHA(q = F_ei, k = v = F_es)
//   A    = softmax over the modality axis of stack(w_3D * F_el, w_2D * F_ei)
//   F_fusion = MLP(concat(A_3D * F_el, A_2D * F_ei))
//
// Points without a valid image projection get kInvalidImageScore added to
// their image score before the softmax, which routes them to the 3D branch.

#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>

#include "zsseg/nn.hpp"

namespace zsseg {

inline constexpr double kInvalidImageScore = -1e4;

enum class SgvfVariant {
  kSgvf,
  kConcatBaseline,
  kCrossAttentionOnly,
  kSgvfPlusSelfAttention,
  kPointOnly,
};

struct SgvfParams {
  MhaParams gate_3d;
  MhaParams gate_2d;
  MlpParams fuse_mlp;  // 2d -> d -> d
  std::optional<TdParams> post_self_attention;
  std::optional<MlpParams> point_only_mlp;  // d -> d -> d
  SgvfVariant variant = SgvfVariant::kSgvf;

  void collect(const std::string& prefix, ParamList& out);
};

/// The fusion MLP with the image half of its first layer dropped: on points
/// whose image gate is fully masked it computes the same map as fuse_mlp.
MlpParams point_only_from_fuse(const MlpParams& fuse_mlp, std::size_t d);

/// Allocates the optional blocks only when `variant` needs them.
SgvfParams init_sgvf(std::size_t d, std::size_t heads, std::size_t td_hidden, Rng& rng,
                     SgvfVariant variant = SgvfVariant::kSgvf);

struct Gates {
  Tensor w3d;  // [T, d]
  Tensor w2d;  // [T, d]
};

Gates compute_gates(const SgvfParams& p, const Tensor& sem, const Tensor& points, const Tensor& image_points);

struct FuseResult {
  Tensor fused;      // [T, d]
  Tensor weight_3d;  // modality softmax slices, A_3D + A_2D = 1
  Tensor weight_2d;
};

/// image_valid may be empty (all points valid).
FuseResult fuse(const SgvfParams& p, const Gates& gates, const Tensor& points, const Tensor& image_points,
                std::span<const std::uint8_t> image_valid = {});

Tensor concat_baseline(const SgvfParams& p, const Tensor& points, const Tensor& image_points);
/// Points query image features; semantic features are not consulted.
Tensor cross_attention_variant(const SgvfParams& p, const Tensor& points, const Tensor& image_points);
Tensor sgvf_plus_self_attention_variant(const SgvfParams& p, const Tensor& sem, const Tensor& points,
                                        const Tensor& image_points, std::span<const std::uint8_t> image_valid = {});
Tensor point_only_fusion(const SgvfParams& p, const Tensor& points);

/// Dispatch on p.variant. kPointOnly ignores sem and image_points.
Tensor run_sgvf(const SgvfParams& p, const Tensor& sem, const Tensor& points, const Tensor& image_points,
                std::span<const std::uint8_t> image_valid = {});

}  // namespace zsseg
