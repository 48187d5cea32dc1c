#include <cmath>

#include "doctest.h"
#include "test_util.hpp"
#include "zsseg/alignment.hpp"

using namespace zsseg;
using zsseg::testing::random_tensor;

namespace {

std::vector<bool> seen_first(std::size_t c, std::size_t s) {
  std::vector<bool> m(c, false);
  for (std::size_t i = 0; i < s; ++i) m[i] = true;
  return m;
}

}  // namespace

TEST_CASE("similarity matrix") {
  const Tensor e = Tensor::matrix({{1, 0, 0}, {0, 1, 0}, {0, 0, 1}});
  const Tensor s = similarity_matrix(e, e);
  for (std::size_t r = 0; r < 3; ++r) {
    for (std::size_t c = 0; c < 3; ++c) CHECK(s.at(r, c) == (r == c ? 1.0 : 0.0));
  }
  const Tensor f = random_tensor({4, 3}, 1);
  const Tensor g = random_tensor({2, 3}, 2);
  const Tensor a = similarity_matrix(f, g);
  const Tensor b = similarity_matrix(scale(f, 2.0), g);
  for (std::size_t i = 0; i < a.numel(); ++i) CHECK(b[i] == 2.0 * a[i]);
  const Tensor in[] = {f, g};
  CHECK(grad_check([](std::span<const Tensor> x) { return zsseg::testing::readout(similarity_matrix(x[0], x[1])); },
                   in) <= 1e-6);
  CHECK_THROWS_AS(similarity_matrix(f, Tensor({2, 4})), DimensionError);
}

TEST_CASE("seen loss analytic values") {
  const std::vector<std::int32_t> y = {0, 3, 18, kUnlabeled};
  const double l = loss_seen(Tensor({4, 19}, 0.4), y, 0.1).item();
  CHECK(std::abs(l - std::log(19.0)) <= 1e-10);
  Tensor s({2, 5}, 0.0);
  s.mutable_values()[1] = 50.0;
  s.mutable_values()[5 + 4] = 50.0;
  const std::vector<std::int32_t> z = {1, 4};
  CHECK(loss_seen(s, z, 0.1).item() <= 1e-10);
  CHECK_THROWS(loss_seen(s, std::vector<std::int32_t>{kUnlabeled, kUnlabeled}, 0.1));
  CHECK_THROWS_AS(loss_seen(s, std::vector<std::int32_t>{0, 5}, 0.1), IndexError);
}

TEST_CASE("seen loss saturates monotonically") {
  double prev = INFINITY;
  for (double m : {0.0, 1.0, 3.0, 10.0}) {
    Tensor s({1, 4}, 0.0);
    s.mutable_values()[2] = m;
    const double l = loss_seen(s, std::vector<std::int32_t>{2}, 0.1).item();
    CHECK(l < prev);
    prev = l;
  }
}

TEST_CASE("seen loss equals naive cross-entropy") {
  const Tensor s = random_tensor({6, 5}, 3, -0.5, 0.5);
  const std::vector<std::int32_t> y = {0, 2, kUnlabeled, 4, 1, 2};
  const double tau = 0.1;
  double total = 0;
  int n = 0;
  for (std::size_t t = 0; t < 6; ++t) {
    if (y[t] == kUnlabeled) continue;
    double z = 0;
    for (std::size_t c = 0; c < 5; ++c) z += std::exp(s.at(t, c) / tau);
    total += -std::log(std::exp(s.at(t, static_cast<std::size_t>(y[t])) / tau) / z);
    ++n;
  }
  const double expected = total / n;
  CHECK(std::abs(loss_seen(s, y, tau).item() - expected) / std::abs(expected) <= 1e-10);
}

TEST_CASE("unseen loss analytic values") {
  const std::vector<std::int32_t> y = {kUnlabeled, 0, kUnlabeled};
  for (auto [c, k] : {std::pair{19, 15}, std::pair{17, 13}, std::pair{5, 3}}) {
    const double l = loss_unseen(Tensor({3, static_cast<std::size_t>(c)}, -0.2), y, seen_first(c, k), 0.1).item();
    CHECK(std::abs(l - std::log(static_cast<double>(k) / c)) <= 1e-10);
  }
  CHECK(loss_unseen(Tensor({2, 5}), std::vector<std::int32_t>{0, 1}, seen_first(5, 3), 0.1).item() == 0.0);
}

TEST_CASE("unseen loss decreases as seen similarities fall") {
  const std::vector<bool> seen = seen_first(19, 15);
  double prev = 1.0;
  for (double m : {0.0, -1.0, -2.0, -5.0}) {
    Tensor s({1, 19}, 0.0);
    for (std::size_t c = 0; c < 15; ++c) s.mutable_values()[c] = m;
    const double l = loss_unseen(s, std::vector<std::int32_t>{kUnlabeled}, seen, 0.1).item();
    CHECK(l < prev);
    prev = l;
  }
  const double bound = std::log(15 * std::exp(-50.0) / (15 * std::exp(-50.0) + 4));
  CHECK(prev <= bound + 1e-12);
}

TEST_CASE("unseen loss equals naive ratio") {
  const Tensor s = random_tensor({7, 6}, 4, -0.4, 0.4);
  const std::vector<std::int32_t> y = {kUnlabeled, 1, kUnlabeled, kUnlabeled, 0, 2, kUnlabeled};
  const std::vector<bool> seen = {true, true, false, true, false, true};
  double total = 0;
  int n = 0;
  for (std::size_t t = 0; t < 7; ++t) {
    if (y[t] != kUnlabeled) continue;
    double num = 0, den = 0;
    for (std::size_t c = 0; c < 6; ++c) {
      const double e = std::exp(s.at(t, c) / 0.1);
      den += e;
      if (seen[c]) num += e;
    }
    total += std::log(num / den);
    ++n;
  }
  const double expected = total / n;
  CHECK(std::abs(loss_unseen(s, y, seen, 0.1).item() - expected) / std::abs(expected) <= 1e-10);
  const Tensor in[] = {s};
  CHECK(grad_check([&](std::span<const Tensor> x) { return loss_unseen(x[0], y, seen, 0.1); }, in) <= 1e-6);
  CHECK(grad_check([&](std::span<const Tensor> x) { return loss_seen(x[0], std::vector<std::int32_t>{0, 1, 2, 3, 4, 5, 0}, 0.1); },
                   in) <= 1e-6);
}

TEST_CASE("total loss is the plain sum") {
  CHECK(loss_total(Tensor::scalar(1.5), Tensor::scalar(-0.25)).item() == 1.25);
}

TEST_CASE("prediction") {
  CHECK(predict(Tensor::matrix({{2.0, 5.0, 3.0}}))[0] == 1);
  CHECK(predict(Tensor::matrix({{1.0, 1.0}}))[0] == 0);
  const Tensor s = random_tensor({100, 7}, 5, -3, 3);
  const auto p = predict(s);
  CHECK(p == predict(scale(s, 1.0 / 0.07)));
  const Tensor sm = softmax(s, 1);
  for (std::size_t t = 0; t < 100; ++t) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < 7; ++c) {
      if (sm.at(t, c) > sm.at(t, best)) best = c;
    }
    CHECK(p[t] == static_cast<std::int32_t>(best));
  }
}

TEST_CASE("predictions are invariant to increasing row transforms") {
  const Tensor s = random_tensor({50, 6}, 6, -2, 2);
  Tensor t = s;
  auto v = t.mutable_values();
  for (std::size_t r = 0; r < 50; ++r) {
    const double a = 0.5 + r * 0.1;
    for (std::size_t c = 0; c < 6; ++c) v[r * 6 + c] = std::exp(a * v[r * 6 + c]) + std::cbrt(v[r * 6 + c]) - r;
  }
  CHECK(predict(s) == predict(t));
}
