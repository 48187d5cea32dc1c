// SPDX-License-Identifier: Apache-2.0
//
// Pinhole projection of LiDAR points into the camera image and per-point
// sampling of image feature maps.

#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <vector>

#include "zsseg/tensor.hpp"

namespace zsseg {

struct CameraModel {
  double fx = 1.0;
  double fy = 1.0;
  double cx = 0.0;
  double cy = 0.0;
  // LiDAR -> camera rigid transform, row-major 4x4.
  std::array<double, 16> extrinsics{1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1};
  std::size_t width = 1;
  std::size_t height = 1;

  /// Throws std::invalid_argument on non-positive focal lengths, a
  /// principal point outside the image, or a non-orthonormal rotation.
  void validate() const;
};

/// Row-major 4x4 rigid-transform helpers.
using Transform = std::array<double, 16>;
Transform compose(const Transform& a, const Transform& b);  // a * b
Transform rigid_inverse(const Transform& t);
Transform rotation_z(double radians, std::array<double, 3> translation = {0, 0, 0});

struct ProjectionResult {
  std::vector<double> u;
  std::vector<double> v;
  std::vector<double> depth;
  std::vector<std::uint8_t> valid;  // in front of the camera and inside the image

  std::size_t size() const { return u.size(); }
  std::size_t valid_count() const;
};

ProjectionResult project_points(const Tensor& points, const CameraModel& cam);

/// Applies a rigid transform to every row of a [T,3] tensor (no gradient).
Tensor transform_points(const Tensor& points, const Transform& t);

enum class SampleMode { kNearest, kBilinear };

struct GatheredFeatures {
  Tensor features;                   // [T, d]
  std::vector<std::uint8_t> valid;   // copied from the projection
};

/// Row weights that sample an [H*W, d] pixel table at each projection; rows
/// of invalid points are empty.
RowMix image_sample_mix(const ProjectionResult& proj, std::size_t height, std::size_t width, SampleMode mode);

/// Per-point image features. Pixel (row i, col j) has its center at
/// (u, v) = (j, i). Invalid points receive zero rows.
GatheredFeatures gather_image_features(const Tensor& feature_map, const ProjectionResult& proj,
                                       SampleMode mode = SampleMode::kBilinear);

}  // namespace zsseg
