// SPDX-License-Identifier: Apache-2.0
//
// Run configuration: scene generator settings, model dimensions, training
// and alignment options, and paths. Serialized as JSON; unknown keys are
// rejected and dotted `key=value` overrides are applied on top.

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "zsseg/svfe.hpp"
#include "zsseg/synthscene.hpp"

namespace zsseg {

enum class Ablation {
  kFull,
  kNoSgvf,
  kNoSvfe,
  kNoImage,
  kSvfeSelfAttn,
  kSgvfCrossAttn,
  kSgvfPlusSelfAttn,
};

std::string_view ablation_name(Ablation a);
/// Throws std::invalid_argument listing the valid names.
Ablation parse_ablation(std::string_view name);
std::vector<std::string> ablation_names();

std::string_view svfe_order_name(SvfeOrder o);
SvfeOrder parse_svfe_order(std::string_view name);

struct ModelConfig {
  std::size_t dim = 128;
  std::size_t heads = 4;
  std::size_t td_hidden = 512;  // 4 * dim
  std::size_t semantic_hidden = 96;
  Ablation ablation = Ablation::kFull;
  SvfeOrder svfe_order = SvfeOrder::kPointsFirst;
  // Unit-normalize point and class features before the dot product.
  bool normalize_features = true;
};

struct TrainConfig {
  std::size_t epochs = 30;
  std::size_t batch_size = 4;
  std::size_t points_per_step = 128;  // per scene; 0 uses every point
  double lr_backbone = 1e-3;
  double lr_svfe_sgvf = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  std::uint64_t seed = 0;
  std::size_t checkpoint_every = 0;  // steps; 0 disables
  bool shuffle_labels = false;       // chance-level control
  double divergence_factor = 10.0;
  void validate() const;
};

struct RunConfig {
  SceneSettings scene;
  ModelConfig model;
  TrainConfig train;
  double tau = 0.1;
  std::size_t train_scenes = 32;
  std::size_t eval_scenes = 8;
  std::uint64_t data_seed = 2024;
  std::string data_dir;
  std::string out_dir;

  void validate() const;
};

std::string config_to_json(const RunConfig& config);
/// Throws std::invalid_argument on unknown keys or ill-typed values.
RunConfig config_from_json(std::string_view text);
RunConfig load_config(const std::filesystem::path& path);
/// `overrides` are "section.key=value"; value is JSON when it parses as JSON
/// and a plain string otherwise.
RunConfig apply_overrides(const RunConfig& base, const std::vector<std::string>& overrides);
/// Hash of everything except the paths.
std::string config_hash(const RunConfig& config);

}  // namespace zsseg
