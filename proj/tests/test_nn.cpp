#include <cmath>

#include "doctest.h"
#include "test_util.hpp"
#include "zsseg/nn.hpp"

using namespace zsseg;
using zsseg::testing::max_abs_diff;
using zsseg::testing::permute_rows;
using zsseg::testing::random_tensor;
using zsseg::testing::readout;

namespace {

LinearParams identity_linear(std::size_t d) {
  LinearParams p{Tensor({d, d}), Tensor({d})};
  for (std::size_t i = 0; i < d; ++i) p.weight.mutable_values()[i * d + i] = 1.0;
  return p;
}

MhaParams identity_mha(std::size_t d) {
  MhaParams p;
  p.query = p.key = p.value = p.output = identity_linear(d);
  p.heads = 1;
  return p;
}

double param_check(ParamList params, std::vector<Tensor> extra, const std::function<Tensor(std::span<const Tensor>)>& f) {
  std::vector<Tensor> inputs = extra;
  for (auto& [n, t] : params) inputs.push_back(*t);
  const std::size_t k = extra.size();
  return grad_check(
      [&](std::span<const Tensor> xs) {
        for (std::size_t i = 0; i < params.size(); ++i) *params[i].second = xs[k + i];
        return f(xs.first(k));
      },
      inputs);
}

}  // namespace

TEST_CASE("linear special cases") {
  const Tensor x = random_tensor({3, 2}, 1);
  const Tensor y = linear(identity_linear(2), x);
  CHECK(max_abs_diff(x, y) == 0.0);
  const LinearParams z{Tensor({2, 2}), Tensor::vector({1, 2})};
  const Tensor b = linear(z, x);
  for (std::size_t r = 0; r < 3; ++r) {
    CHECK(b.at(r, 0) == 1);
    CHECK(b.at(r, 1) == 2);
  }
  CHECK_THROWS_AS(linear(z, Tensor({3, 3})), DimensionError);
}

TEST_CASE("linear gradient") {
  Rng rng(2);
  LinearParams p = init_linear(3, 4, rng);
  p.bias = random_tensor({4}, 3);
  ParamList params;
  p.collect("", params);
  CHECK(param_check(params, {random_tensor({5, 3}, 4)}, [&](auto x) { return readout(linear(p, x[0])); }) <= 1e-6);
}

TEST_CASE("mha with a single key returns the value") {
  const MhaParams p = identity_mha(3);
  const Tensor q = random_tensor({2, 3}, 5);
  const Tensor kv = Tensor::matrix({{0.3, -0.2, 0.9}});
  const MhaOutput o = mha(p, q, kv, kv);
  for (std::size_t r = 0; r < 2; ++r) {
    for (std::size_t c = 0; c < 3; ++c) CHECK(std::abs(o.out.at(r, c) - kv.at(0, c)) < 1e-15);
  }
}

TEST_CASE("mha with orthogonal query averages the values") {
  const MhaParams p = identity_mha(3);
  const Tensor q = Tensor::matrix({{0, 0, 1}});
  const Tensor k = Tensor::matrix({{1, 0, 0}, {0, 1, 0}, {1, 1, 0}});
  const Tensor v = Tensor::matrix({{1, 2, 3}, {4, 5, 6}, {7, 8, 9}});
  const MhaOutput o = mha(p, q, k, v);
  CHECK(std::abs(o.out.at(0, 0) - 4) < 1e-12);
  CHECK(std::abs(o.out.at(0, 2) - 6) < 1e-12);
}

TEST_CASE("mha attention rows sum to one; gradient checks") {
  Rng rng(6);
  MhaParams p = init_mha(8, 4, rng);
  const Tensor q = random_tensor({3, 8}, 7);
  const Tensor kv = random_tensor({5, 8}, 8);
  const MhaOutput o = mha(p, q, kv, kv);
  CHECK(o.attn.shape() == Shape{4, 3, 5});
  for (std::size_t r = 0; r < 12; ++r) {
    double s = 0;
    for (std::size_t c = 0; c < 5; ++c) s += o.attn[r * 5 + c];
    CHECK(std::abs(s - 1) <= 1e-12);
  }
  ParamList params;
  p.collect("", params);
  CHECK(param_check(params, {q, kv, random_tensor({5, 8}, 9)},
                    [&](auto x) { return readout(mha(p, x[0], x[1], x[2]).out); }) <= 1e-4);
  CHECK_THROWS(mha(p, q, Tensor({0, 8}), Tensor({0, 8})));
  CHECK_THROWS_AS(mha(p, q, Tensor({5, 6}), Tensor({5, 6})), DimensionError);
}

TEST_CASE("mha permutation laws") {
  Rng rng(10);
  const MhaParams p = init_mha(8, 2, rng);
  const Tensor q = random_tensor({5, 8}, 11);
  const Tensor k = random_tensor({6, 8}, 12);
  const Tensor v = random_tensor({6, 8}, 13);
  const Tensor base = mha(p, q, k, v).out;
  const std::vector<std::size_t> qp = {3, 0, 4, 1, 2};
  const Tensor moved = mha(p, permute_rows(q, qp), k, v).out;
  CHECK(max_abs_diff(moved, permute_rows(base, qp)) <= 1e-12);
  const std::vector<std::size_t> kp = {5, 2, 0, 3, 1, 4};
  const Tensor same = mha(p, q, permute_rows(k, kp), permute_rows(v, kp)).out;
  CHECK(max_abs_diff(same, base) <= 1e-12);
}

TEST_CASE("td reduces to linear of double layer norm when attention and mlp output are zero") {
  Rng rng(14);
  TdParams p = init_td(6, 2, 12, rng);
  p.attention.value.weight = Tensor({6, 6});
  p.mlp.layers.back().weight = Tensor(p.mlp.layers.back().weight.shape());
  const Tensor q = random_tensor({4, 6}, 15);
  const Tensor kv = random_tensor({7, 6}, 16);
  const Tensor expected = linear(p.output, layer_norm(p.norm2, layer_norm(p.norm1, q)));
  CHECK(max_abs_diff(td(p, q, kv, kv), expected) <= 1e-12);
}

TEST_CASE("td shapes and gradient") {
  Rng rng(17);
  TdParams p = init_td(8, 2, 16, rng);
  const Tensor q = random_tensor({5, 8}, 18);
  for (std::size_t nk : {1u, 3u, 11u}) {
    const Tensor kv = random_tensor({nk, 8}, 19 + nk);
    CHECK(td(p, q, kv, kv).shape() == Shape{5, 8});
  }
  ParamList params;
  p.collect("", params);
  const Tensor kv = random_tensor({8, 8}, 30);
  CHECK(param_check(params, {q, kv, kv}, [&](auto x) { return readout(td(p, x[0], x[1], x[2])); }) <= 1e-4);
}

TEST_CASE("self attention block") {
  Rng rng(31);
  const TdParams p = init_td(8, 2, 16, rng);
  const Tensor x = random_tensor({6, 8}, 32);
  CHECK(zsseg::testing::bitwise_equal(self_attention_block(p, x), td(p, x, x, x)));
  const Tensor one = random_tensor({1, 8}, 33);
  const MhaOutput o = mha(p.attention, one, one, one);
  for (double a : o.attn.values()) CHECK(a == 1.0);
  CHECK(self_attention_block(p, one).shape() == Shape{1, 8});
}

TEST_CASE("initialization") {
  Rng a(40), b(40);
  const LinearParams p = init_linear(30, 20, a);
  const LinearParams q = init_linear(30, 20, b);
  CHECK(zsseg::testing::bitwise_equal(p.weight, q.weight));
  for (double v : p.bias.values()) CHECK(v == 0.0);
  Rng big(41);
  const LinearParams w = init_linear(100, 100, big);
  double m = 0, s = 0;
  for (double v : w.weight.values()) m += v;
  m /= 1e4;
  for (double v : w.weight.values()) s += (v - m) * (v - m);
  s /= 1e4;
  CHECK(s == doctest::Approx(2.0 / 200.0).epsilon(0.2));
  const LayerNormParams ln = init_layer_norm(5);
  for (double v : ln.gamma.values()) CHECK(v == 1.0);
}
