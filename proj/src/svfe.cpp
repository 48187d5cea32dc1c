// SPDX-License-Identifier: Apache-2.0
#include "zsseg/svfe.hpp"

#include <stdexcept>
#include <vector>

namespace zsseg {

void SvfeParams::collect(const std::string& prefix, ParamList& out) {
  sem_from_points.collect(prefix + "sem_from_points.", out);
  sem_from_image.collect(prefix + "sem_from_image.", out);
  points_from_sem.collect(prefix + "points_from_sem.", out);
  image_from_sem.collect(prefix + "image_from_sem.", out);
}

SvfeParams init_svfe(std::size_t d, std::size_t heads, std::size_t mlp_hidden, Rng& rng, SvfeOrder order,
                     SvfeVariant variant) {
  SvfeParams p;
  p.sem_from_points = init_td(d, heads, mlp_hidden, rng);
  p.sem_from_image = init_td(d, heads, mlp_hidden, rng);
  p.points_from_sem = init_td(d, heads, mlp_hidden, rng);
  p.image_from_sem = init_td(d, heads, mlp_hidden, rng);
  p.order = order;
  p.variant = variant;
  return p;
}

namespace {

void require_memory(const Tensor& m, const char* what) {
  if (m.rank() != 2 || m.dim(0) == 0) throw std::invalid_argument(std::string("svfe: empty ") + what + " memory");
}

}  // namespace

Tensor enhance_semantic(const SvfeParams& p, const Tensor& sem, const Tensor& points, const Tensor& image_points,
                        std::span<const std::uint8_t> image_valid) {
  require_memory(points, "point");
  require_memory(image_points, "image");
  Tensor image_memory = image_points;
  bool has_image = true;
  if (!image_valid.empty()) {
    if (image_valid.size() != image_points.dim(0)) {
      throw DimensionError("enhance_semantic: validity mask size does not match image rows");
    }
    std::vector<std::size_t> rows;
    for (std::size_t i = 0; i < image_valid.size(); ++i) {
      if (image_valid[i]) rows.push_back(i);
    }
    has_image = !rows.empty();
    if (has_image && rows.size() != image_valid.size()) image_memory = gather_rows(image_points, rows);
  }
  auto from_points = [&](const Tensor& q) { return td(p.sem_from_points, q, points, points); };
  auto from_image = [&](const Tensor& q) {
    return has_image ? td(p.sem_from_image, q, image_memory, image_memory) : q;
  };
  if (p.order == SvfeOrder::kPointsFirst) return from_image(from_points(sem));
  return from_points(from_image(sem));
}

Tensor enhance_semantic_points_only(const SvfeParams& p, const Tensor& sem, const Tensor& points) {
  require_memory(points, "point");
  return td(p.sem_from_points, sem, points, points);
}

Tensor enhance_points(const SvfeParams& p, const Tensor& points, const Tensor& sem) {
  require_memory(sem, "semantic");
  return td(p.points_from_sem, points, sem, sem);
}

Tensor enhance_image_points(const SvfeParams& p, const Tensor& image_points, const Tensor& sem) {
  require_memory(sem, "semantic");
  return td(p.image_from_sem, image_points, sem, sem);
}

SvfeOutput svfe_self_attention_variant(const SvfeParams& p, const Tensor& sem, const Tensor& points,
                                       const Tensor& image_points) {
  const Tensor s1 = self_attention_block(p.sem_from_points, sem);
  return SvfeOutput{self_attention_block(p.sem_from_image, s1), self_attention_block(p.points_from_sem, points),
                    self_attention_block(p.image_from_sem, image_points)};
}

SvfeOutput run_svfe(const SvfeParams& p, const Tensor& sem, const Tensor& points, const Tensor& image_points,
                    std::span<const std::uint8_t> image_valid) {
  if (p.variant == SvfeVariant::kSelfAttentionOnly) return svfe_self_attention_variant(p, sem, points, image_points);
  return SvfeOutput{enhance_semantic(p, sem, points, image_points, image_valid), enhance_points(p, points, sem),
                    enhance_image_points(p, image_points, sem)};
}

}  // namespace zsseg
