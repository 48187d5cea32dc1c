// SPDX-License-Identifier: Apache-2.0
//
// Synthetic paired LiDAR/camera scenes. Each class is one object whose
// attribute signature, spread and appearance are linear images of the class
// word embedding (through the coupling matrix). Classes listed together in
// image_only_pairs share attributes and geometry and differ only in how they
// look to the camera.

#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "zsseg/geometry.hpp"
#include "zsseg/semantic.hpp"
#include "zsseg/tensor.hpp"

namespace zsseg {

/// Scalar knobs of the generator; everything else in SceneSpec is derived
/// from them.
struct SceneSettings {
  std::vector<std::string> class_names{"car", "person", "pole", "vegetation", "building", "fence", "truck", "bicyclist"};
  std::vector<std::size_t> unseen{6, 7};
  std::vector<std::pair<std::size_t, std::size_t>> image_only_pairs{{0, 6}, {1, 7}};
  std::size_t points_min = 200;
  std::size_t points_max = 312;
  std::size_t attr_channels = 4;
  std::size_t image_height = 48;
  std::size_t image_width = 64;
  std::size_t image_channels = 4;
  double focal = 40.0;
  std::size_t embedding_dim = 600;
  std::size_t latent_rank = 4;
  double pair_mix = 0.6;  // how far a pair's second member leans toward the first
  double sigma_geometry = 0.05;
  double sigma_image = 0.08;
  double object_extent = 0.4;
  double range_min = 6.0;
  double range_max = 12.0;
  double azimuth_extent_deg = 44.0;
  double attr_scale = 1.0;
  double appearance_scale = 1.0;
  std::uint64_t world_seed = 1234;
};

struct SceneSpec {
  std::vector<std::string> class_names;
  std::vector<bool> seen;
  std::vector<std::pair<std::size_t, std::size_t>> image_only_pairs;
  std::size_t points_min = 0;
  std::size_t points_max = 0;
  std::size_t attr_channels = 0;
  std::size_t image_height = 0;
  std::size_t image_width = 0;
  std::size_t image_channels = 0;
  CameraModel camera;
  double sigma_geometry = 0.0;
  double sigma_image = 0.0;
  double object_extent = 0.0;
  double range_min = 0.0;
  double range_max = 0.0;
  double azimuth_extent_deg = 0.0;
  Tensor embeddings;  // [C, d_w]
  // Rows: attr_channels attribute rows, image_channels appearance rows, then
  // 3 spread rows. Prototype = coupling * embedding.
  Tensor coupling;

  std::size_t num_classes() const { return class_names.size(); }
  /// Class whose geometry and attributes class c borrows (itself unless it is
  /// the second member of an image-only pair).
  std::size_t geometry_source(std::size_t c) const;
  std::vector<double> attribute_signature(std::size_t c) const;
  std::vector<double> appearance_signature(std::size_t c) const;
  std::array<double, 3> spread(std::size_t c) const;
  ClassVocabulary vocabulary() const;
  void validate() const;
};

SceneSpec make_scene_spec(const SceneSettings& settings);

class Scene {
 public:
  Tensor points;  // [T, 3]
  Tensor attrs;   // [T, k]
  Tensor image;   // [H, W, c]
  CameraModel camera;
  std::vector<std::int32_t> train_labels;  // unseen classes replaced by kUnlabeled

  std::size_t size() const { return points.dim(0); }

  /// Ground truth including unseen classes. Every call is counted by the
  /// label-taint audit.
  const std::vector<std::int32_t>& ground_truth() const;
  void set_ground_truth(std::vector<std::int32_t> labels);

  friend bool operator==(const Scene& a, const Scene& b);
  friend std::vector<std::uint8_t> serialize_scene(const Scene& scene);

 private:
  std::vector<std::int32_t> labels_;
};

/// Number of ground_truth() reads since the last reset, across all scenes.
std::uint64_t ground_truth_reads();
void reset_ground_truth_reads();

/// Builds train_labels from ground truth and the seen mask.
std::vector<std::int32_t> mask_unseen(std::span<const std::int32_t> labels, const std::vector<bool>& seen);

/// Retries with a widened field of view (focal lengths scaled by 0.8) when
/// the camera sees no point; throws std::runtime_error after 8 attempts.
Scene generate_scene(const SceneSpec& spec, std::uint64_t seed);

/// Scene i uses seed ^ i.
std::vector<Scene> dataset(const SceneSpec& spec, std::size_t n_scenes, std::uint64_t seed);

inline constexpr std::uint16_t kSceneFormatVersion = 1;

std::vector<std::uint8_t> serialize_scene(const Scene& scene);
Scene deserialize_scene(std::span<const std::uint8_t> bytes);
void save_scene(const Scene& scene, const std::filesystem::path& path);
Scene load_scene(const std::filesystem::path& path);

}  // namespace zsseg
