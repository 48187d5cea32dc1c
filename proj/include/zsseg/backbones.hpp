// SPDX-License-Identifier: Apache-2.0
//
// Small stand-in encoders for the LiDAR and camera branches. Both emit
// features in the shared visual space (128 channels by default).

#pragma once

#include <cstddef>
#include <string>

#include "zsseg/nn.hpp"
#include "zsseg/tensor.hpp"

namespace zsseg {

/// Row-wise MLP over (normalized xyz, attributes): (3+k) -> 64 -> 128 -> 128.
struct PointEncoder {
  MlpParams mlp;
  void collect(const std::string& prefix, ParamList& out) { mlp.collect(prefix + "mlp.", out); }
};

/// Per-pixel MLP over the channels and their 3x3 box-filtered copies:
/// 2*c_img -> 96 -> 128.
struct ImageEncoder {
  MlpParams mlp;
  void collect(const std::string& prefix, ParamList& out) { mlp.collect(prefix + "mlp.", out); }
};

PointEncoder init_point_encoder(std::size_t attr_channels, Rng& rng, std::size_t out = 128);
ImageEncoder init_image_encoder(std::size_t image_channels, Rng& rng, std::size_t out = 128);

/// Zero mean, unit maximum radius. A single point (or all-equal points)
/// maps to the origin.
Tensor normalize_coordinates(const Tensor& points);

Tensor encode_points(const PointEncoder& enc, const Tensor& points, const Tensor& attrs);
/// Same MLP on coordinates that were already normalized (e.g. over a full
/// scene before subsampling).
Tensor encode_normalized_points(const PointEncoder& enc, const Tensor& coords, const Tensor& attrs);

/// Row mixing that averages each pixel's 3x3 neighbourhood, reflect padding.
RowMix box_filter_3x3(std::size_t height, std::size_t width);

/// [H*W, 2c]: each pixel's channels followed by their box-filtered copy.
Tensor image_encoder_input(const Tensor& image);

Tensor encode_image(const ImageEncoder& enc, const Tensor& image);

}  // namespace zsseg
