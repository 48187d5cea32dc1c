// Shared helpers for the unit tests.
#pragma once

#include <cmath>
#include <bit>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "zsseg/rng.hpp"
#include "zsseg/tensor.hpp"

namespace zsseg::testing {

inline Tensor random_tensor(Shape shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  Rng rng(seed);
  Tensor t(std::move(shape));
  for (double& v : t.mutable_values()) v = rng.uniform(lo, hi);
  return t;
}

// sum(y * w) with w fixed by seed: a scalar readout touching every entry.
inline Tensor readout(const Tensor& y, std::uint64_t seed = 99) { return sum(mul(y, random_tensor(y.shape(), seed))); }

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

inline bool bitwise_equal(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) return false;
  for (std::size_t i = 0; i < a.numel(); ++i) {
    if (std::bit_cast<std::uint64_t>(a[i]) != std::bit_cast<std::uint64_t>(b[i])) return false;
  }
  return true;
}

inline Tensor permute_rows(const Tensor& x, const std::vector<std::size_t>& perm) {
  return gather_rows(x.detach(), perm);
}

}  // namespace zsseg::testing
