// SPDX-License-Identifier: Apache-2.0
#include "zsseg/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace zsseg {

void CameraModel::validate() const {
  if (!(fx > 0.0) || !(fy > 0.0)) throw std::invalid_argument("camera: focal lengths must be positive");
  if (width == 0 || height == 0) throw std::invalid_argument("camera: image size must be positive");
  if (!(cx >= 0.0 && cx < static_cast<double>(width)) || !(cy >= 0.0 && cy < static_cast<double>(height))) {
    throw std::invalid_argument("camera: principal point outside the image");
  }
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t j = 0; j < 3; ++j) {
      double d = 0.0;
      for (std::size_t k = 0; k < 3; ++k) d += extrinsics[i * 4 + k] * extrinsics[j * 4 + k];
      if (std::abs(d - (i == j ? 1.0 : 0.0)) > 1e-9) {
        throw std::invalid_argument("camera: extrinsic rotation is not orthonormal");
      }
    }
  }
  if (extrinsics[12] != 0.0 || extrinsics[13] != 0.0 || extrinsics[14] != 0.0 || extrinsics[15] != 1.0) {
    throw std::invalid_argument("camera: extrinsics bottom row must be [0 0 0 1]");
  }
}

Transform compose(const Transform& a, const Transform& b) {
  Transform c{};
  for (std::size_t i = 0; i < 4; ++i) {
    for (std::size_t j = 0; j < 4; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < 4; ++k) s += a[i * 4 + k] * b[k * 4 + j];
      c[i * 4 + j] = s;
    }
  }
  return c;
}

Transform rigid_inverse(const Transform& t) {
  Transform r{};
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t j = 0; j < 3; ++j) r[i * 4 + j] = t[j * 4 + i];
  }
  for (std::size_t i = 0; i < 3; ++i) {
    double s = 0.0;
    for (std::size_t k = 0; k < 3; ++k) s += r[i * 4 + k] * t[k * 4 + 3];
    r[i * 4 + 3] = -s;
  }
  r[15] = 1.0;
  return r;
}

Transform rotation_z(double radians, std::array<double, 3> translation) {
  const double c = std::cos(radians);
  const double s = std::sin(radians);
  return {c, -s, 0, translation[0], s, c, 0, translation[1], 0, 0, 1, translation[2], 0, 0, 0, 1};
}

std::size_t ProjectionResult::valid_count() const {
  return static_cast<std::size_t>(std::count(valid.begin(), valid.end(), std::uint8_t{1}));
}

Tensor transform_points(const Tensor& points, const Transform& t) {
  if (points.rank() != 2 || points.dim(1) != 3) {
    throw DimensionError("transform_points: expected [T,3], got " + shape_str(points.shape()));
  }
  const std::size_t n = points.dim(0);
  std::vector<double> out(n * 3);
  auto p = points.values();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t r = 0; r < 3; ++r) {
      out[i * 3 + r] = t[r * 4 + 0] * p[i * 3 + 0] + t[r * 4 + 1] * p[i * 3 + 1] + t[r * 4 + 2] * p[i * 3 + 2] + t[r * 4 + 3];
    }
  }
  return Tensor({n, 3}, std::move(out));
}

ProjectionResult project_points(const Tensor& points, const CameraModel& cam) {
  if (points.rank() != 2 || points.dim(1) != 3) {
    throw DimensionError("project_points: expected [T,3], got " + shape_str(points.shape()));
  }
  const Tensor pc = transform_points(points, cam.extrinsics);
  const std::size_t n = points.dim(0);
  ProjectionResult r;
  r.u.resize(n);
  r.v.resize(n);
  r.depth.resize(n);
  r.valid.assign(n, 0);
  const auto w = static_cast<double>(cam.width);
  const auto h = static_cast<double>(cam.height);
  auto c = pc.values();
  for (std::size_t i = 0; i < n; ++i) {
    const double x = c[i * 3];
    const double y = c[i * 3 + 1];
    const double z = c[i * 3 + 2];
    r.depth[i] = z;
    if (!(z > 0.0)) {
      r.u[i] = r.v[i] = 0.0;
      continue;
    }
    r.u[i] = cam.fx * x / z + cam.cx;
    r.v[i] = cam.fy * y / z + cam.cy;
    r.valid[i] = (r.u[i] >= 0.0 && r.u[i] < w && r.v[i] >= 0.0 && r.v[i] < h) ? 1 : 0;
  }
  return r;
}

RowMix image_sample_mix(const ProjectionResult& proj, std::size_t h, std::size_t w, SampleMode mode) {
  RowMix mix(proj.size());
  auto pixel = [w](std::size_t row, std::size_t col) { return row * w + col; };
  for (std::size_t t = 0; t < proj.size(); ++t) {
    if (!proj.valid[t]) continue;
    const double u = proj.u[t];
    const double v = proj.v[t];
    if (mode == SampleMode::kNearest) {
      const auto col = std::min(static_cast<std::size_t>(std::lround(u)), w - 1);
      const auto row = std::min(static_cast<std::size_t>(std::lround(v)), h - 1);
      mix[t].push_back({pixel(row, col), 1.0});
      continue;
    }
    const double fu = std::floor(u);
    const double fv = std::floor(v);
    const double au = u - fu;
    const double av = v - fv;
    const auto c0 = static_cast<std::size_t>(fu);
    const auto r0 = static_cast<std::size_t>(fv);
    const std::size_t c1 = std::min(c0 + 1, w - 1);
    const std::size_t r1 = std::min(r0 + 1, h - 1);
    const std::pair<std::size_t, double> taps[4] = {{pixel(r0, c0), (1 - au) * (1 - av)},
                                                    {pixel(r0, c1), au * (1 - av)},
                                                    {pixel(r1, c0), (1 - au) * av},
                                                    {pixel(r1, c1), au * av}};
    for (const auto& [idx, weight] : taps) {
      if (weight != 0.0) mix[t].push_back({idx, weight});
    }
  }
  return mix;
}

GatheredFeatures gather_image_features(const Tensor& feature_map, const ProjectionResult& proj, SampleMode mode) {
  if (feature_map.rank() != 3) {
    throw DimensionError("gather_image_features: expected [H,W,d], got " + shape_str(feature_map.shape()));
  }
  const std::size_t h = feature_map.dim(0);
  const std::size_t w = feature_map.dim(1);
  const std::size_t d = feature_map.dim(2);
  return GatheredFeatures{mix_rows(reshape(feature_map, {h * w, d}), image_sample_mix(proj, h, w, mode)), proj.valid};
}

}  // namespace zsseg
