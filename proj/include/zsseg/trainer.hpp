// SPDX-License-Identifier: Apache-2.0
//
// Model assembly (backbones -> SVFE -> SGVF -> alignment), Adam with two
// learning-rate groups, the training loop, checkpoints and evaluation.

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "zsseg/backbones.hpp"
#include "zsseg/config.hpp"
#include "zsseg/metrics.hpp"
#include "zsseg/semantic.hpp"
#include "zsseg/sgvf.hpp"
#include "zsseg/svfe.hpp"
#include "zsseg/synthscene.hpp"

namespace zsseg {

enum class ParamGroup { kBackbone, kSvfeSgvf };

struct ModelState {
  ModelConfig config;
  PointEncoder point_encoder;
  ImageEncoder image_encoder;
  SemanticHead semantic;
  SvfeParams svfe;
  SgvfParams sgvf;

  /// Parameters in a fixed order with dotted names.
  ParamList collect();
  std::vector<std::pair<std::string, const Tensor*>> collect() const;
  /// Encoders form the backbone group; G, SVFE and SGVF the other.
  static ParamGroup group_of(const std::string& name);
};

/// Each component draws from its own seed stream, so ablations that share a
/// component start from identical values for it.
ModelState init_model(const ModelConfig& config, std::size_t attr_channels, std::size_t image_channels,
                      std::size_t embedding_dim, std::uint64_t seed);
ModelState init_model(const RunConfig& config);

/// FNV-1a over every parameter's bytes.
std::string parameter_hash(const ModelState& model);

/// Per-scene constants reused across steps.
struct PreparedScene {
  const Scene* scene = nullptr;
  Tensor coords;         // normalized over the whole scene, [T, 3]
  Tensor encoder_input;  // image_encoder_input(scene.image), [H*W, 2c]
};
PreparedScene prepare_scene(const Scene& scene);

struct ForwardResult {
  Tensor fused;     // [T, d]
  Tensor semantic;  // class features used for alignment, [C, d]
  std::vector<std::uint8_t> valid;
  // Stage features for inspection.
  Tensor points_raw;    // F_l
  Tensor image_raw;     // per-point F_i (zeros without the image branch)
  Tensor semantic_raw;  // F_s
  Tensor points_enh;    // F_el
  Tensor image_enh;     // F_ei
};

/// rows selects a subset of points (empty = all points).
ForwardResult forward_scene(const ModelState& model, const PreparedScene& scene, const Tensor& embeddings,
                            std::span<const std::size_t> rows = {});

/// Point-by-class similarities, on unit-normalized features when the model
/// config asks for it.
Tensor scene_similarity(const ModelState& model, const ForwardResult& result);

struct AdamState {
  std::uint64_t step = 0;
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
};

class NonFiniteGradient : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// One bias-corrected Adam update. Throws NonFiniteGradient naming the first
/// offending parameter before touching any state.
void adam_step(ParamList& params, std::span<const std::vector<double>> grads, std::span<const double> lrs,
               AdamState& state, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

struct EpochLog {
  std::size_t epoch = 0;
  std::size_t steps = 0;
  double loss_seen = 0.0;
  double loss_unseen = 0.0;
  double loss = 0.0;
  std::string to_line() const;
};

class TrainingDiverged : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TrainingState {
  ModelState model;
  AdamState adam;
  std::uint64_t step = 0;
  std::string rng_state;  // point subsampling stream
  double initial_loss = 0.0;
  std::vector<EpochLog> log;
  // Partial sums of the epoch in progress.
  std::size_t epoch_steps = 0;
  double epoch_seen = 0.0;
  double epoch_unseen = 0.0;
};

struct TrainOptions {
  /// Stop after this many steps in total (0 = run every epoch). Used to
  /// interrupt a run for the resume check.
  std::uint64_t stop_after = 0;
  std::filesystem::path checkpoint_dir;  // empty disables checkpoint files
};

struct Losses {
  double seen = 0.0;
  double unseen = 0.0;
};

/// Mean loss over scenes and the matching mean gradients, parameter order as
/// ModelState::collect().
Losses batch_gradients(const ModelState& model, std::span<const PreparedScene> scenes,
                       std::span<const std::vector<std::size_t>> rows,
                       std::span<const std::vector<std::int32_t>> labels, const ClassVocabulary& vocab, double tau,
                       std::vector<std::vector<double>>& grads);

TrainingState start_training(const RunConfig& config);
/// Continues `state` until every epoch is done or options.stop_after steps.
void train(const RunConfig& config, std::span<const Scene> scenes, const ClassVocabulary& vocab, TrainingState& state,
           const TrainOptions& options = {});
TrainingState train(const RunConfig& config, std::span<const Scene> scenes, const ClassVocabulary& vocab);

inline constexpr std::uint16_t kCheckpointFormatVersion = 1;

std::vector<std::uint8_t> serialize_checkpoint(const RunConfig& config, const TrainingState& state);
/// Rebuilds the model from the embedded config and restores every field.
std::pair<RunConfig, TrainingState> deserialize_checkpoint(std::span<const std::uint8_t> bytes);
void save_checkpoint(const std::filesystem::path& path, const RunConfig& config, const TrainingState& state);
std::pair<RunConfig, TrainingState> load_checkpoint(const std::filesystem::path& path);

/// Predictions over every point of every scene, confusion over ground truth.
EvalReport evaluate(const ModelState& model, std::span<const Scene> scenes, const ClassVocabulary& vocab,
                    std::uint64_t seed, const std::string& config_hash);
/// Ground truth passed through as predictions.
EvalReport evaluate_oracle(std::span<const Scene> scenes, const ClassVocabulary& vocab, std::uint64_t seed,
                           const std::string& config_hash);

}  // namespace zsseg
