#include <cmath>

#include "doctest.h"
#include "test_util.hpp"
#include "zsseg/sgvf.hpp"
#include "zsseg/svfe.hpp"

using namespace zsseg;
using zsseg::testing::bitwise_equal;
using zsseg::testing::max_abs_diff;
using zsseg::testing::permute_rows;
using zsseg::testing::random_tensor;
using zsseg::testing::readout;

namespace {

constexpr std::size_t kD = 8;

double param_check(ParamList params, std::vector<Tensor> extra, const std::function<Tensor(std::span<const Tensor>)>& f) {
  std::vector<Tensor> inputs = extra;
  for (auto& [n, t] : params) inputs.push_back(*t);
  const std::size_t k = extra.size();
  GradCheckOptions opts;
  opts.max_coords = 32;
  return grad_check(
      [&](std::span<const Tensor> xs) {
        for (std::size_t i = 0; i < params.size(); ++i) *params[i].second = xs[k + i];
        return f(xs.first(k));
      },
      inputs, opts);
}

Tensor residual_image(const TdParams& p, const Tensor& q) {
  const Tensor q1 = layer_norm(p.norm1, q);
  return linear(p.output, layer_norm(p.norm2, add(mlp(p.mlp, q1), q1)));
}

}  // namespace

TEST_CASE("svfe degenerate sizes") {
  Rng rng(1);
  const SvfeParams p = init_svfe(kD, 2, 16, rng);
  const SvfeOutput o = run_svfe(p, random_tensor({1, kD}, 2), random_tensor({1, kD}, 3), random_tensor({1, kD}, 4));
  CHECK(o.semantic.shape() == Shape{1, kD});
  for (double v : o.semantic.values()) CHECK(std::isfinite(v));
  CHECK_THROWS(enhance_semantic(p, random_tensor({2, kD}, 5), Tensor({0, kD}), Tensor({0, kD})));
}

TEST_CASE("svfe with zero value projections ignores visual memory") {
  Rng rng(6);
  SvfeParams p = init_svfe(kD, 2, 16, rng);
  p.sem_from_points.attention.value.weight = Tensor({kD, kD});
  p.sem_from_image.attention.value.weight = Tensor({kD, kD});
  const Tensor sem = random_tensor({3, kD}, 7);
  const Tensor a = enhance_semantic(p, sem, random_tensor({5, kD}, 8), random_tensor({5, kD}, 9));
  const Tensor b = enhance_semantic(p, sem, random_tensor({4, kD}, 10), random_tensor({6, kD}, 11));
  CHECK(max_abs_diff(a, b) <= 1e-12);
  const Tensor expected = residual_image(p.sem_from_image, residual_image(p.sem_from_points, sem));
  CHECK(max_abs_diff(a, expected) <= 1e-12);
}

TEST_CASE("svfe order matters") {
  Rng rng(12);
  SvfeParams p = init_svfe(kD, 2, 16, rng);
  const Tensor sem = random_tensor({3, kD}, 13);
  const Tensor pts = random_tensor({5, kD}, 14);
  const Tensor img = random_tensor({5, kD}, 15);
  const Tensor first = enhance_semantic(p, sem, pts, img);
  p.order = SvfeOrder::kImageFirst;
  CHECK(max_abs_diff(first, enhance_semantic(p, sem, pts, img)) > 1e-6);
}

TEST_CASE("svfe invalid image rows are left out of the memory") {
  Rng rng(16);
  const SvfeParams p = init_svfe(kD, 2, 16, rng);
  const Tensor sem = random_tensor({3, kD}, 17);
  const Tensor pts = random_tensor({4, kD}, 18);
  Tensor img = random_tensor({4, kD}, 19);
  const std::vector<std::uint8_t> valid = {1, 0, 1, 0};
  const Tensor a = enhance_semantic(p, sem, pts, img, valid);
  img.mutable_values()[kD] = 50.0;
  CHECK(bitwise_equal(a, enhance_semantic(p, sem, pts, img, valid)));
  const std::vector<std::uint8_t> none = {0, 0, 0, 0};
  const Tensor only_points = enhance_semantic(p, sem, pts, img, none);
  CHECK(max_abs_diff(only_points, td(p.sem_from_points, sem, pts, pts)) == 0.0);
}

TEST_CASE("enhance_points laws") {
  Rng rng(20);
  SvfeParams p = init_svfe(kD, 2, 16, rng);
  const Tensor pts = random_tensor({6, kD}, 21);
  const Tensor sem = random_tensor({3, kD}, 22);
  const std::vector<std::size_t> perm = {2, 5, 0, 1, 4, 3};
  CHECK(max_abs_diff(enhance_points(p, permute_rows(pts, perm), sem), permute_rows(enhance_points(p, pts, sem), perm)) <=
        1e-12);
  const Tensor one = random_tensor({1, kD}, 23);
  const MhaOutput o = mha(p.points_from_sem.attention, pts, one, one);
  for (double a : o.attn.values()) CHECK(a == 1.0);
  ParamList params;
  p.points_from_sem.collect("", params);
  CHECK(param_check(params, {pts, sem}, [&](auto x) { return readout(enhance_points(p, x[0], x[1])); }) <= 1e-4);
  CHECK(enhance_image_points(p, pts, sem).shape() == pts.shape());
}

TEST_CASE("svfe self-attention variant") {
  Rng rng(24);
  const SvfeParams p = init_svfe(kD, 2, 16, rng, SvfeOrder::kPointsFirst, SvfeVariant::kSelfAttentionOnly);
  const Tensor sem = random_tensor({3, kD}, 25);
  const SvfeOutput a = run_svfe(p, sem, random_tensor({5, kD}, 26), random_tensor({5, kD}, 27));
  const SvfeOutput b = run_svfe(p, sem, random_tensor({5, kD}, 28), random_tensor({5, kD}, 29));
  CHECK(bitwise_equal(a.semantic, b.semantic));
  CHECK(a.points.shape() == Shape{5, kD});
  Rng rng2(24);
  SvfeParams cross = init_svfe(kD, 2, 16, rng2);
  SvfeParams self = p;
  ParamList pc, ps;
  cross.collect("", pc);
  self.collect("", ps);
  CHECK(count_params(pc) == count_params(ps));
}

TEST_CASE("svfe gradient") {
  Rng rng(30);
  SvfeParams p = init_svfe(kD, 2, 16, rng);
  ParamList params;
  p.collect("", params);
  const std::vector<std::uint8_t> valid = {1, 0, 1, 1, 0};
  CHECK(param_check(params, {random_tensor({3, kD}, 31), random_tensor({5, kD}, 32), random_tensor({5, kD}, 33)},
                    [&](auto x) {
                      const SvfeOutput o = run_svfe(p, x[0], x[1], x[2], valid);
                      return add(readout(o.semantic, 1), add(readout(o.points, 2), readout(o.image, 3)));
                    }) <= 1e-4);
}

TEST_CASE("gates with a single class") {
  Rng rng(40);
  const SgvfParams p = init_sgvf(kD, 2, 16, rng);
  const Tensor sem = random_tensor({1, kD}, 41);
  const Tensor pts = random_tensor({4, kD}, 42);
  const Gates g = compute_gates(p, sem, pts, random_tensor({4, kD}, 43));
  // Attention is one on the only key, so every row is the same affine image.
  for (std::size_t r = 1; r < 4; ++r) {
    for (std::size_t c = 0; c < kD; ++c) CHECK(std::abs(g.w3d.at(r, c) - g.w3d.at(0, c)) <= 1e-12);
  }
  const Tensor expected = linear(p.gate_3d.output, linear(p.gate_3d.value, sem));
  for (std::size_t c = 0; c < kD; ++c) CHECK(std::abs(g.w3d.at(0, c) - expected.at(0, c)) <= 1e-12);
  CHECK_THROWS(compute_gates(p, Tensor({0, kD}), pts, pts));
}

TEST_CASE("gates are equivariant to point order") {
  Rng rng(44);
  const SgvfParams p = init_sgvf(kD, 2, 16, rng);
  const Tensor sem = random_tensor({3, kD}, 45);
  const Tensor pts = random_tensor({5, kD}, 46);
  const Tensor img = random_tensor({5, kD}, 47);
  const std::vector<std::size_t> perm = {4, 2, 0, 3, 1};
  const Gates a = compute_gates(p, sem, pts, img);
  const Gates b = compute_gates(p, sem, permute_rows(pts, perm), permute_rows(img, perm));
  CHECK(max_abs_diff(b.w3d, permute_rows(a.w3d, perm)) <= 1e-12);
  CHECK(max_abs_diff(b.w2d, permute_rows(a.w2d, perm)) <= 1e-12);
  SgvfParams q = p;
  ParamList none;
  const Tensor in[] = {sem};
  CHECK(grad_check([&](std::span<const Tensor> x) { return readout(compute_gates(q, x[0], pts, img).w2d); }, in) <=
        1e-4);
}

TEST_CASE("fuse weights") {
  Rng rng(50);
  const SgvfParams p = init_sgvf(kD, 2, 16, rng);
  const Tensor pts = random_tensor({6, kD}, 51);
  const Tensor img = random_tensor({6, kD}, 52);
  const Gates g = compute_gates(p, random_tensor({3, kD}, 53), pts, img);
  const FuseResult f = fuse(p, g, pts, img);
  for (std::size_t i = 0; i < f.weight_3d.numel(); ++i) CHECK(std::abs(f.weight_3d[i] + f.weight_2d[i] - 1.0) <= 1e-12);

  const Gates same{g.w3d, g.w3d};
  const FuseResult s = fuse(p, same, pts, pts);
  for (double v : s.weight_3d.values()) CHECK(v == 0.5);

  const std::vector<std::uint8_t> valid = {1, 0, 1, 0, 1, 1};
  const FuseResult m = fuse(p, g, pts, img, valid);
  for (std::size_t t : {1u, 3u}) {
    for (std::size_t c = 0; c < kD; ++c) {
      CHECK(m.weight_3d.at(t, c) == 1.0);
      CHECK(m.weight_2d.at(t, c) < 1e-300);
    }
  }
  const Tensor zeros({6, kD});
  const Tensor parts[] = {pts, zeros};
  const Tensor direct = mlp(p.fuse_mlp, concat(parts, 1));
  for (std::size_t c = 0; c < kD; ++c) CHECK(std::abs(m.fused.at(1, c) - direct.at(1, c)) <= 1e-12);
}

TEST_CASE("fuse gradient") {
  Rng rng(54);
  SgvfParams p = init_sgvf(kD, 2, 16, rng);
  ParamList params;
  p.collect("", params);
  const std::vector<std::uint8_t> valid = {1, 0, 1, 1, 1, 0, 1, 1};
  CHECK(param_check(params, {random_tensor({3, kD}, 55), random_tensor({8, kD}, 56), random_tensor({8, kD}, 57)},
                    [&](auto x) {
                      const Gates g = compute_gates(p, x[0], x[1], x[2]);
                      return readout(fuse(p, g, x[1], x[2], valid).fused);
                    }) <= 1e-4);
}

TEST_CASE("baseline and variants") {
  Rng rng(60);
  SgvfParams p = init_sgvf(kD, 2, 16, rng, SgvfVariant::kSgvfPlusSelfAttention);
  const Tensor pts = random_tensor({5, kD}, 61);
  const Tensor img = random_tensor({5, kD}, 62);
  const Tensor sem_a = random_tensor({3, kD}, 63);
  const Tensor sem_b = random_tensor({3, kD}, 64);
  const Tensor c = concat_baseline(p, pts, img);
  CHECK(c.shape() == Shape{5, kD});
  p.variant = SgvfVariant::kConcatBaseline;
  CHECK(bitwise_equal(run_sgvf(p, sem_a, pts, img), run_sgvf(p, sem_b, pts, img)));
  p.variant = SgvfVariant::kCrossAttentionOnly;
  const Tensor x = run_sgvf(p, sem_a, pts, img);
  CHECK(bitwise_equal(x, run_sgvf(p, sem_b, pts, img)));
  CHECK(x.shape() == Shape{5, kD});
  CHECK(max_abs_diff(x, c) > 1e-6);
  p.variant = SgvfVariant::kSgvfPlusSelfAttention;
  CHECK(run_sgvf(p, sem_a, pts, img).shape() == Shape{5, kD});

  SgvfParams q = p;
  ParamList params;
  q.collect("", params);
  CHECK(param_check(params, {pts, img}, [&](auto in) { return readout(concat_baseline(q, in[0], in[1])); }) <= 1e-4);
}

TEST_CASE("point-only fusion matches fully masked gating") {
  Rng rng(70);
  const SgvfParams p = init_sgvf(kD, 2, 16, rng, SgvfVariant::kPointOnly);
  const Tensor pts = random_tensor({4, kD}, 71);
  const Tensor img = random_tensor({4, kD}, 72);
  const std::vector<std::uint8_t> none(4, 0);
  const Tensor gated = fuse(p, compute_gates(p, random_tensor({3, kD}, 73), pts, img), pts, img, none).fused;
  CHECK(max_abs_diff(gated, point_only_fusion(p, pts)) <= 1e-12);
}
