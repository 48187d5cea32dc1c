// SPDX-License-Identifier: Apache-2.0
//
// Finite-difference verification of every differentiable block at small
// dimensions: tensor ops, MHA, the decoder block, SVFE, SGVF, both losses
// and the assembled model.

#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace zsseg {

struct GradcheckBlock {
  std::string name;
  double max_rel_error = 0.0;
  double seconds = 0.0;
};

struct GradcheckOptions {
  std::uint64_t seed = 0;
  double h = 1e-5;
  // Coordinates sampled per input tensor; 0 checks all of them.
  std::size_t max_coords = 48;
};

inline constexpr double kGradcheckTolerance = 1e-4;

std::vector<GradcheckBlock> run_gradcheck_suite(const GradcheckOptions& options = {});

}  // namespace zsseg
