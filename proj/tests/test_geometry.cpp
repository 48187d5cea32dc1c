#include <cmath>

#include "doctest.h"
#include "test_util.hpp"
#include "zsseg/backbones.hpp"
#include "zsseg/geometry.hpp"

using namespace zsseg;
using zsseg::testing::max_abs_diff;
using zsseg::testing::random_tensor;
using zsseg::testing::readout;

namespace {

CameraModel camera() {
  CameraModel c;
  c.fx = 50;
  c.fy = 40;
  c.cx = 31.5;
  c.cy = 23.5;
  c.width = 64;
  c.height = 48;
  return c;
}

}  // namespace

TEST_CASE("projection basics") {
  const CameraModel cam = camera();
  const ProjectionResult r = project_points(Tensor::matrix({{0, 0, 5}, {0.1, 0.1, -2}, {0, 0, 0}}), cam);
  CHECK(r.u[0] == 31.5);
  CHECK(r.v[0] == 23.5);
  CHECK(r.valid[0] == 1);
  CHECK(r.valid[1] == 0);
  CHECK(r.valid[2] == 0);
  CHECK(r.valid_count() == 1);
}

TEST_CASE("reprojection through a composed transform") {
  CameraModel cam = camera();
  cam.extrinsics = rotation_z(0.3, {0.2, -0.1, 0.4});
  const Transform inv = rigid_inverse(cam.extrinsics);
  const Transform id = compose(cam.extrinsics, inv);
  for (std::size_t i = 0; i < 16; ++i) CHECK(std::abs(id[i] - (i % 5 == 0 ? 1.0 : 0.0)) < 1e-12);
  Rng rng(3);
  for (int k = 0; k < 20; ++k) {
    const Tensor p = Tensor::matrix({{rng.uniform(-2, 2), rng.uniform(-2, 2), rng.uniform(4, 9)}});
    const ProjectionResult a = project_points(p, cam);
    CameraModel plain = cam;
    plain.extrinsics = Transform{1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1};
    const ProjectionResult b = project_points(transform_points(p, cam.extrinsics), plain);
    CHECK(std::abs(a.u[0] - b.u[0]) < 1e-9);
    CHECK(std::abs(a.v[0] - b.v[0]) < 1e-9);
    const Tensor back = transform_points(transform_points(p, cam.extrinsics), inv);
    CHECK(max_abs_diff(back, p) < 1e-12);
  }
}

TEST_CASE("camera validation") {
  CameraModel c = camera();
  CHECK_NOTHROW(c.validate());
  c.fx = 0;
  CHECK_THROWS(c.validate());
  c = camera();
  c.cx = 100;
  CHECK_THROWS(c.validate());
  c = camera();
  c.extrinsics[0] = 2;
  CHECK_THROWS(c.validate());
}

TEST_CASE("sampling image features") {
  const Tensor fmap = random_tensor({6, 7, 3}, 4);
  ProjectionResult p;
  p.u = {3.0, 2.0, 1.25};
  p.v = {4.0, 5.0, 0.5};
  p.depth = {1, 1, 1};
  p.valid = {1, 1, 0};
  const GatheredFeatures near = gather_image_features(fmap, p, SampleMode::kNearest);
  for (std::size_t c = 0; c < 3; ++c) CHECK(near.features.at(0, c) == fmap[(4 * 7 + 3) * 3 + c]);
  const GatheredFeatures bil = gather_image_features(fmap, p, SampleMode::kBilinear);
  for (std::size_t c = 0; c < 3; ++c) {
    CHECK(bil.features.at(1, c) == near.features.at(1, c));
    CHECK(bil.features.at(2, c) == 0.0);
  }
  p.valid = {1, 1, 1};
  CHECK(grad_check([&](const Tensor& f) { return readout(gather_image_features(f, p).features); }, fmap) <= 1e-5);
}

TEST_CASE("point encoder") {
  Rng rng(5);
  PointEncoder enc = init_point_encoder(2, rng, 8);
  const Tensor pts = random_tensor({6, 3}, 6, -5, 5);
  const Tensor attrs = random_tensor({6, 2}, 7);
  const Tensor f = encode_points(enc, pts, attrs);
  CHECK(f.shape() == Shape{6, 8});
  const std::vector<std::size_t> perm = {5, 3, 1, 0, 2, 4};
  const Tensor g = encode_points(enc, zsseg::testing::permute_rows(pts, perm), zsseg::testing::permute_rows(attrs, perm));
  CHECK(max_abs_diff(g, zsseg::testing::permute_rows(f, perm)) < 1e-12);

  const Tensor n = normalize_coordinates(pts);
  double maxr = 0;
  for (std::size_t i = 0; i < 6; ++i) maxr = std::max(maxr, std::hypot(n.at(i, 0), n.at(i, 1), n.at(i, 2)));
  CHECK(std::abs(maxr - 1) < 1e-12);
  const Tensor single = normalize_coordinates(Tensor::matrix({{3, 4, 5}}));
  for (double v : single.values()) CHECK(v == 0.0);

  ParamList params;
  enc.collect("", params);
  std::vector<Tensor> inputs = {attrs};
  for (auto& [name, t] : params) inputs.push_back(*t);
  GradCheckOptions opts;
  opts.max_coords = 40;
  CHECK(grad_check(
            [&](std::span<const Tensor> x) {
              for (std::size_t i = 0; i < params.size(); ++i) *params[i].second = x[1 + i];
              return readout(encode_points(enc, pts, x[0]));
            },
            inputs, opts) <= 1e-4);

  for (auto& layer : enc.mlp.layers) layer.weight = Tensor(layer.weight.shape());
  enc.mlp.layers.back().bias = random_tensor({8}, 8);
  const Tensor c = encode_points(enc, pts, attrs);
  for (std::size_t r = 0; r < 6; ++r) {
    for (std::size_t k = 0; k < 8; ++k) CHECK(c.at(r, k) == enc.mlp.layers.back().bias[k]);
  }
  CHECK_THROWS_AS(encode_points(enc, pts, Tensor({5, 2})), DimensionError);
}

TEST_CASE("image encoder") {
  Rng rng(9);
  ImageEncoder enc = init_image_encoder(2, rng, 8);
  const Tensor constant({5, 4, 2}, 0.7);
  const Tensor f = encode_image(enc, constant);
  CHECK(f.shape() == Shape{5, 4, 8});
  for (std::size_t p = 1; p < 20; ++p) {
    for (std::size_t k = 0; k < 8; ++k) CHECK(std::abs(f[p * 8 + k] - f[k]) < 1e-12);
  }
  const Tensor in = image_encoder_input(constant);
  for (double v : in.values()) CHECK(std::abs(v - 0.7) < 1e-12);
  CHECK(encode_image(init_image_encoder(4, rng), Tensor({48, 64, 4})).shape() == Shape{48, 64, 128});
  CHECK_THROWS_AS(encode_image(enc, Tensor({5, 4, 3})), DimensionError);

  const Tensor img = random_tensor({6, 6, 2}, 10);
  CHECK(grad_check([&](const Tensor& x) { return readout(encode_image(enc, x)); }, img) <= 1e-4);
}
