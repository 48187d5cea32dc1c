#include <cmath>
#include <numbers>

#include "doctest.h"
#include "test_util.hpp"
#include "zsseg/tensor.hpp"

using namespace zsseg;
using zsseg::testing::random_tensor;
using zsseg::testing::readout;

TEST_CASE("shape and storage agree") {
  const Tensor t({2, 3, 4});
  CHECK(t.numel() == 24);
  CHECK(shape_numel(t.shape()) == t.numel());
  CHECK_THROWS_AS(Tensor({2, 2}, std::vector<double>{1, 2, 3}), DimensionError);
}

TEST_CASE("copies do not alias") {
  Tensor a = Tensor::vector({1, 2, 3});
  Tensor b = a;
  b.mutable_values()[0] = 9;
  CHECK(a[0] == 1);
  CHECK(b[0] == 9);
}

TEST_CASE("matmul small cases") {
  const Tensor eye = Tensor::matrix({{1, 0}, {0, 1}});
  const Tensor m = Tensor::matrix({{1, 2}, {3, 4}});
  const Tensor r = matmul(eye, m);
  CHECK(r.shape() == Shape{2, 2});
  for (std::size_t i = 0; i < 4; ++i) CHECK(r[i] == m[i]);
  const Tensor p = matmul(Tensor::matrix({{1, 0}, {0, 0}}), Tensor::matrix({{5}, {7}}));
  CHECK(p[0] == 5);
  CHECK(p[1] == 0);
}

TEST_CASE("matmul shape mismatch names both shapes") {
  try {
    matmul(Tensor({2, 3}), Tensor({2, 3}));
    FAIL("expected DimensionError");
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("[2,3] x [2,3]") != std::string::npos);
  }
}

TEST_CASE("matmul gradient matches finite differences") {
  const Tensor a = random_tensor({3, 4}, 1);
  const Tensor b = random_tensor({4, 2}, 2);
  const Tensor in[] = {a, b};
  CHECK(grad_check([](std::span<const Tensor> x) { return sum(matmul(x[0], x[1])); }, in) <= 1e-6);
}

TEST_CASE("softmax values") {
  const Tensor s = softmax(Tensor::vector({0, 0}), 0);
  CHECK(s[0] == doctest::Approx(0.5).epsilon(1e-15));
  const Tensor t = softmax(Tensor::vector({0, std::log(3.0)}), 0);
  CHECK(std::abs(t[0] - 0.25) < 1e-15);
  CHECK(std::abs(t[1] - 0.75) < 1e-15);
}

TEST_CASE("softmax rows sum to one and Jacobian checks") {
  const Tensor x = random_tensor({4, 5}, 3, -3, 3);
  const Tensor s = softmax(x, 1);
  for (std::size_t r = 0; r < 4; ++r) {
    double total = 0;
    for (std::size_t c = 0; c < 5; ++c) total += s.at(r, c);
    CHECK(std::abs(total - 1.0) <= 1e-12);
  }
  CHECK(grad_check([](const Tensor& v) { return readout(softmax(v, 1)); }, x) <= 1e-6);
}

TEST_CASE("softmax rejects non-finite input") {
  CHECK_THROWS_AS(softmax(Tensor::vector({0, std::nan("")}), 0), NumericInputError);
  CHECK_THROWS_AS(softmax(Tensor::vector({0, INFINITY}), 0), NumericInputError);
}

TEST_CASE("layer norm") {
  const Tensor gamma = Tensor::vector({1, 1, 1, 1});
  const Tensor beta = Tensor::vector({0, 0, 0, 0});
  const Tensor z = layer_norm(Tensor::matrix({{5, 5, 5, 5}}), gamma, beta);
  for (double v : z.values()) CHECK(v == 0.0);
  const Tensor y = layer_norm(Tensor::matrix({{1, 3}}), Tensor::vector({1, 1}), Tensor::vector({0, 0}), 1e-14);
  CHECK(std::abs(y[0] + 1) < 1e-12);
  CHECK(std::abs(y[1] - 1) < 1e-12);
  CHECK_THROWS(layer_norm(Tensor::matrix({{1, 3}}), Tensor::vector({1, 1}), Tensor::vector({0, 0}), 0.0));

  const Tensor row = random_tensor({1, 6}, 4, -2, 2);
  const Tensor g = random_tensor({6}, 5);
  const Tensor b = random_tensor({6}, 6);
  const Tensor n = layer_norm(row, Tensor({6}, 1.0), Tensor({6}, 0.0));
  double mean_v = 0;
  for (double v : n.values()) mean_v += v / 6.0;
  CHECK(std::abs(mean_v) <= 1e-10);
  const Tensor in[] = {row, g, b};
  CHECK(grad_check([](std::span<const Tensor> x) { return readout(layer_norm(x[0], x[1], x[2])); }, in) <= 1e-6);
}

TEST_CASE("elementwise ops") {
  const Tensor m = mul(Tensor::vector({1, 2, 3}), Tensor::vector({0, 1, 2}));
  CHECK(m[0] == 0);
  CHECK(m[1] == 2);
  CHECK(m[2] == 6);
  for (double x = -10; x <= 10; x += 0.37) CHECK(std::abs(log(exp(Tensor::scalar(x))).item() - x) <= 1e-12);
  CHECK_THROWS_AS(add(Tensor({2}), Tensor({3})), DimensionError);
}

TEST_CASE("relu gradient at zero is zero") {
  Tape tape;
  const Tensor x = tape.leaf(Tensor::vector({0.0, 1.0, -1.0}));
  const Gradients g = tape.backward(sum(relu(x)));
  const Tensor dx = g.of(x);
  CHECK(dx[0] == 0.0);
  CHECK(dx[1] == 1.0);
  CHECK(dx[2] == 0.0);
}

TEST_CASE("structural ops") {
  const Tensor a = Tensor::matrix({{1, 2}});
  const Tensor b = Tensor::matrix({{3, 4}});
  const Tensor parts[] = {a, b};
  CHECK(stack(parts, 0).shape() == Shape{2, 1, 2});
  const Tensor eye = Tensor::matrix({{1, 0, 0}, {0, 1, 0}, {0, 0, 1}});
  const std::size_t rows[] = {2, 0};
  const Tensor g = gather_rows(eye, rows);
  CHECK(g.at(0, 2) == 1);
  CHECK(g.at(1, 0) == 1);
  const std::size_t bad[] = {3};
  try {
    gather_rows(eye, bad);
    FAIL("expected IndexError");
  } catch (const IndexError& e) {
    CHECK(std::string(e.what()).find('3') != std::string::npos);
  }
  const Tensor x = random_tensor({3, 4}, 7);
  CHECK(grad_check([](const Tensor& v) { return readout(reduce_sum(v, 0)); }, x) <= 1e-6);
}

TEST_CASE("grad_check on known functions") {
  const Tensor x = Tensor::vector({1, 2});
  Tape tape;
  const Tensor lx = tape.leaf(x);
  const Tensor dx = tape.backward(sum(mul(lx, lx))).of(lx);
  CHECK(dx[0] == 2);
  CHECK(dx[1] == 4);
  CHECK(grad_check([](const Tensor& v) { return sum(mul(v, v)); }, x) <= 1e-8);
  CHECK(grad_check([](const Tensor&) { return Tensor::scalar(3.0); }, x) == 0.0);
  CHECK_THROWS(grad_check([](const Tensor& v) { return mul(v, v); }, x));
  CHECK_THROWS(grad_check([](const Tensor& v) { return sum(v); }, x, 0.0));
}

TEST_CASE("multi-consumer gradients accumulate") {
  Tape tape;
  const Tensor x = tape.leaf(Tensor::vector({3.0}));
  const Tensor y = add(mul(x, x), scale(x, 2.0));
  const Tensor dx = tape.backward(sum(y)).of(x);
  CHECK(dx[0] == 8.0);
}

TEST_CASE("detached tensors receive no gradient") {
  Tape tape;
  const Tensor x = tape.leaf(Tensor::vector({1.0, 2.0}));
  const Tensor d = x.detach();
  CHECK_FALSE(d.on_tape());
  const Gradients g = tape.backward(sum(mul(x, d)));
  CHECK_FALSE(g.reached(d));
  CHECK(g.of(x)[1] == 2.0);
}

TEST_CASE("normalize_rows") {
  const Tensor y = normalize_rows(Tensor::matrix({{3, 4}, {0, 2}}));
  CHECK(std::abs(y.at(0, 0) - 0.6) < 1e-12);
  CHECK(std::abs(y.at(1, 1) - 1.0) < 1e-12);
  const Tensor x = random_tensor({3, 5}, 8);
  CHECK(grad_check([](const Tensor& v) { return readout(normalize_rows(v)); }, x) <= 1e-6);
}

TEST_CASE("mix_rows gradient") {
  const RowMix mix = {{{0, 0.5}, {1, 0.5}}, {}, {{2, 2.0}}};
  const Tensor x = random_tensor({3, 2}, 9);
  CHECK(grad_check([&](const Tensor& v) { return readout(mix_rows(v, mix)); }, x) <= 1e-6);
}

TEST_CASE("backward fault hook perturbs gradients") {
  const Tensor x = random_tensor({2, 3}, 10);
  set_backward_fault("softmax");
  const double bad = grad_check([](const Tensor& v) { return readout(softmax(v, 1)); }, x);
  set_backward_fault("");
  CHECK(bad > 1e-4);
}
