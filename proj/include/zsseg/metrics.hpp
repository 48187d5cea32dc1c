// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace zsseg {

/// Rows are ground truth, columns predictions. Points labeled kUnlabeled are
/// skipped.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(std::size_t num_classes = 0);

  void accumulate(std::span<const std::int32_t> truth, std::span<const std::int32_t> predicted);
  void merge(const ConfusionMatrix& other);

  std::size_t num_classes() const { return classes_; }
  std::uint64_t count(std::size_t truth, std::size_t predicted) const { return counts_[truth * classes_ + predicted]; }
  std::uint64_t total() const;
  void set(std::size_t truth, std::size_t predicted, std::uint64_t n) { counts_[truth * classes_ + predicted] = n; }

  bool operator==(const ConfusionMatrix&) const = default;

 private:
  std::size_t classes_;
  std::vector<std::uint64_t> counts_;
};

/// TP / (TP + FP + FN) per class; nullopt when the denominator is zero.
std::vector<std::optional<double>> iou_per_class(const ConfusionMatrix& cm);

/// Mean IoU over `classes` in percent, excluding classes with no
/// denominator. Throws std::domain_error if nothing remains.
double miou(const ConfusionMatrix& cm, std::span<const std::size_t> classes);

/// Harmonic mean of two percentages; 0 (with a notice) when both are 0.
double hiou(double miou_seen, double miou_unseen);

/// One decimal, half away from zero.
double round_report(double percent);

struct EvalReport {
  std::vector<std::string> class_names;
  std::vector<bool> seen;
  ConfusionMatrix confusion;
  std::vector<std::optional<double>> iou;  // fractions
  std::optional<double> seen_miou;         // percent, full precision
  std::optional<double> unseen_miou;
  std::optional<double> overall_miou;
  std::optional<double> hiou;
  std::uint64_t seed = 0;
  std::string config_hash;

  /// Key/value header with the four headline metrics, a per-class table and
  /// the confusion counts. Headline values are rounded to one decimal.
  std::string to_text() const;
  static EvalReport parse(std::string_view text);
};

EvalReport make_report(std::vector<std::string> names, std::vector<bool> seen, ConfusionMatrix cm, std::uint64_t seed,
                       std::string config_hash);

}  // namespace zsseg
