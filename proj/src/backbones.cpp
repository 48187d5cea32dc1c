// SPDX-License-Identifier: Apache-2.0
#include "zsseg/backbones.hpp"

#include <cmath>

namespace zsseg {

PointEncoder init_point_encoder(std::size_t attr_channels, Rng& rng, std::size_t out) {
  return PointEncoder{init_mlp({3 + attr_channels, 64, 128, out}, rng)};
}

ImageEncoder init_image_encoder(std::size_t image_channels, Rng& rng, std::size_t out) {
  return ImageEncoder{init_mlp({2 * image_channels, 96, out}, rng)};
}

Tensor normalize_coordinates(const Tensor& points) {
  if (points.rank() != 2 || points.dim(1) != 3) {
    throw DimensionError("normalize_coordinates: expected [T,3], got " + shape_str(points.shape()));
  }
  const std::size_t n = points.dim(0);
  auto p = points.values();
  double mu[3] = {0, 0, 0};
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t a = 0; a < 3; ++a) mu[a] += p[i * 3 + a];
  }
  for (double& m : mu) m /= static_cast<double>(n ? n : 1);
  double radius = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double r2 = 0.0;
    for (std::size_t a = 0; a < 3; ++a) r2 += (p[i * 3 + a] - mu[a]) * (p[i * 3 + a] - mu[a]);
    radius = std::max(radius, std::sqrt(r2));
  }
  const double inv = radius > 0.0 ? 1.0 / radius : 0.0;
  std::vector<double> out(n * 3);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t a = 0; a < 3; ++a) out[i * 3 + a] = (p[i * 3 + a] - mu[a]) * inv;
  }
  return Tensor({n, 3}, std::move(out));
}

Tensor encode_points(const PointEncoder& enc, const Tensor& points, const Tensor& attrs) {
  return encode_normalized_points(enc, normalize_coordinates(points), attrs);
}

Tensor encode_normalized_points(const PointEncoder& enc, const Tensor& coords, const Tensor& attrs) {
  if (attrs.rank() != 2 || coords.rank() != 2 || coords.dim(1) != 3 || attrs.dim(0) != coords.dim(0)) {
    throw DimensionError("encode_points: points " + shape_str(coords.shape()) + " vs attrs " + shape_str(attrs.shape()));
  }
  if (3 + attrs.dim(1) != enc.mlp.in_dim()) {
    throw DimensionError("encode_points: encoder expects " + std::to_string(enc.mlp.in_dim() - 3) +
                         " attribute channels, got " + std::to_string(attrs.dim(1)));
  }
  const Tensor parts[] = {coords, attrs};
  return mlp(enc.mlp, concat(parts, 1));
}

RowMix box_filter_3x3(std::size_t height, std::size_t width) {
  auto reflect = [](std::ptrdiff_t i, std::size_t n) -> std::size_t {
    const auto m = static_cast<std::ptrdiff_t>(n);
    if (m == 1) return 0;
    if (i < 0) i = -i;
    if (i >= m) i = 2 * (m - 1) - i;
    return static_cast<std::size_t>(i);
  };
  RowMix mix(height * width);
  for (std::size_t r = 0; r < height; ++r) {
    for (std::size_t c = 0; c < width; ++c) {
      auto& taps = mix[r * width + c];
      taps.reserve(9);
      for (std::ptrdiff_t dr = -1; dr <= 1; ++dr) {
        for (std::ptrdiff_t dc = -1; dc <= 1; ++dc) {
          const std::size_t rr = reflect(static_cast<std::ptrdiff_t>(r) + dr, height);
          const std::size_t cc = reflect(static_cast<std::ptrdiff_t>(c) + dc, width);
          taps.push_back({rr * width + cc, 1.0 / 9.0});
        }
      }
    }
  }
  return mix;
}

Tensor image_encoder_input(const Tensor& image) {
  if (image.rank() != 3) throw DimensionError("image_encoder_input: expected [H,W,c], got " + shape_str(image.shape()));
  const std::size_t h = image.dim(0);
  const std::size_t w = image.dim(1);
  const Tensor pixels = reshape(image, {h * w, image.dim(2)});
  const Tensor parts[] = {pixels, mix_rows(pixels, box_filter_3x3(h, w))};
  return concat(parts, 1);
}

Tensor encode_image(const ImageEncoder& enc, const Tensor& image) {
  if (image.rank() != 3 || 2 * image.dim(2) != enc.mlp.in_dim()) {
    throw DimensionError("encode_image: image " + shape_str(image.shape()) + " does not match encoder input " +
                         std::to_string(enc.mlp.in_dim()));
  }
  const Tensor f = mlp(enc.mlp, image_encoder_input(image));
  return reshape(f, {image.dim(0), image.dim(1), enc.mlp.out_dim()});
}

}  // namespace zsseg
