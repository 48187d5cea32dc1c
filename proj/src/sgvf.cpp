// SPDX-License-Identifier: Apache-2.0
#include "zsseg/sgvf.hpp"

#include <algorithm>
#include <stdexcept>
#include <vector>

namespace zsseg {

void SgvfParams::collect(const std::string& prefix, ParamList& out) {
  gate_3d.collect(prefix + "gate_3d.", out);
  gate_2d.collect(prefix + "gate_2d.", out);
  fuse_mlp.collect(prefix + "fuse_mlp.", out);
  if (post_self_attention) post_self_attention->collect(prefix + "post_self_attention.", out);
  if (point_only_mlp) point_only_mlp->collect(prefix + "point_only_mlp.", out);
}

MlpParams point_only_from_fuse(const MlpParams& fuse_mlp, std::size_t d) {
  if (fuse_mlp.layers.empty() || fuse_mlp.in_dim() != 2 * d) throw DimensionError("point_only_from_fuse: expected a 2d-input MLP");
  MlpParams out = fuse_mlp;
  const std::vector<std::size_t> rows = [d] {
    std::vector<std::size_t> r(d);
    for (std::size_t i = 0; i < d; ++i) r[i] = i;
    return r;
  }();
  out.layers[0].weight = gather_rows(fuse_mlp.layers[0].weight, rows).detach();
  return out;
}

SgvfParams init_sgvf(std::size_t d, std::size_t heads, std::size_t td_hidden, Rng& rng, SgvfVariant variant) {
  SgvfParams p;
  p.gate_3d = init_mha(d, heads, rng);
  p.gate_2d = init_mha(d, heads, rng);
  p.fuse_mlp = init_mlp({2 * d, d, d}, rng);
  if (variant == SgvfVariant::kSgvfPlusSelfAttention) p.post_self_attention = init_td(d, heads, td_hidden, rng);
  if (variant == SgvfVariant::kPointOnly) p.point_only_mlp = point_only_from_fuse(p.fuse_mlp, d);
  p.variant = variant;
  return p;
}

namespace {

void require_same(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
}

}  // namespace

Gates compute_gates(const SgvfParams& p, const Tensor& sem, const Tensor& points, const Tensor& image_points) {
  if (sem.rank() != 2 || sem.dim(0) == 0) throw std::invalid_argument("compute_gates: no semantic classes");
  require_same(points, image_points, "compute_gates");
  return Gates{mha(p.gate_3d, points, sem, sem).out, mha(p.gate_2d, image_points, sem, sem).out};
}

FuseResult fuse(const SgvfParams& p, const Gates& gates, const Tensor& points, const Tensor& image_points,
                std::span<const std::uint8_t> image_valid) {
  require_same(gates.w3d, points, "fuse");
  require_same(gates.w2d, image_points, "fuse");
  require_same(points, image_points, "fuse");
  const std::size_t n = points.dim(0);
  const std::size_t d = points.dim(1);
  const Tensor score_3d = mul(gates.w3d, points);
  Tensor score_2d = mul(gates.w2d, image_points);
  if (!image_valid.empty()) {
    if (image_valid.size() != n) throw DimensionError("fuse: validity mask size does not match point rows");
    std::vector<double> penalty(n * d, 0.0);
    bool any = false;
    for (std::size_t t = 0; t < n; ++t) {
      if (image_valid[t]) continue;
      any = true;
      std::fill_n(penalty.begin() + static_cast<std::ptrdiff_t>(t * d), d, kInvalidImageScore);
    }
    if (any) score_2d = add(score_2d, Tensor({n, d}, std::move(penalty)));
  }
  const Tensor scores[] = {score_3d, score_2d};
  const Tensor a = softmax(stack(scores, 0), 0);  // [2, T, d]
  Tensor a3 = reshape(slice(a, 0, 0, 1), {n, d});
  Tensor a2 = reshape(slice(a, 0, 1, 2), {n, d});
  const Tensor parts[] = {mul(a3, points), mul(a2, image_points)};
  return FuseResult{mlp(p.fuse_mlp, concat(parts, 1)), std::move(a3), std::move(a2)};
}

Tensor concat_baseline(const SgvfParams& p, const Tensor& points, const Tensor& image_points) {
  require_same(points, image_points, "concat_baseline");
  const Tensor parts[] = {points, image_points};
  return mlp(p.fuse_mlp, concat(parts, 1));
}

Tensor cross_attention_variant(const SgvfParams& p, const Tensor& points, const Tensor& image_points) {
  require_same(points, image_points, "cross_attention_variant");
  const Tensor attended = add(points, mha(p.gate_3d, points, image_points, image_points).out);
  const Tensor parts[] = {attended, image_points};
  return mlp(p.fuse_mlp, concat(parts, 1));
}

Tensor sgvf_plus_self_attention_variant(const SgvfParams& p, const Tensor& sem, const Tensor& points,
                                        const Tensor& image_points, std::span<const std::uint8_t> image_valid) {
  if (!p.post_self_attention) throw std::logic_error("sgvf: self-attention block was not allocated");
  const Tensor fused = fuse(p, compute_gates(p, sem, points, image_points), points, image_points, image_valid).fused;
  return self_attention_block(*p.post_self_attention, fused);
}

Tensor point_only_fusion(const SgvfParams& p, const Tensor& points) {
  if (!p.point_only_mlp) throw std::logic_error("sgvf: point-only MLP was not allocated");
  return mlp(*p.point_only_mlp, points);
}

Tensor run_sgvf(const SgvfParams& p, const Tensor& sem, const Tensor& points, const Tensor& image_points,
                std::span<const std::uint8_t> image_valid) {
  switch (p.variant) {
    case SgvfVariant::kSgvf:
      return fuse(p, compute_gates(p, sem, points, image_points), points, image_points, image_valid).fused;
    case SgvfVariant::kConcatBaseline:
      return concat_baseline(p, points, image_points);
    case SgvfVariant::kCrossAttentionOnly:
      return cross_attention_variant(p, points, image_points);
    case SgvfVariant::kSgvfPlusSelfAttention:
      return sgvf_plus_self_attention_variant(p, sem, points, image_points, image_valid);
    case SgvfVariant::kPointOnly:
      return point_only_fusion(p, points);
  }
  throw std::logic_error("sgvf: unknown variant");
}

}  // namespace zsseg
