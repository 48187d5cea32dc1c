// SPDX-License-Identifier: Apache-2.0
//
// Feature-relationship export: per-class mean visual features and class
// (semantic) features at one stage of the model, projected to 2D by PCA.

#pragma once

#include <array>
#include <cstddef>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

#include "zsseg/trainer.hpp"

namespace zsseg {

enum class PlotStage { kPreSvfe, kPostSvfe, kPostSgvf };

std::string_view plot_stage_name(PlotStage s);
/// Throws std::invalid_argument listing the valid stages.
PlotStage parse_plot_stage(std::string_view name);
std::vector<PlotStage> plot_stages();

/// Projection of centered rows onto the top-k principal axes. Each axis is
/// signed so that its largest-magnitude component is positive.
std::vector<std::vector<double>> pca_project(const std::vector<std::vector<double>>& rows, std::size_t k = 2);

struct PlotRow {
  std::string class_name;
  std::string kind;   // "semantic" or "visual"
  std::string split;  // "seen" or "unseen"
  double x = 0.0;
  double y = 0.0;
};

struct PlotTable {
  std::string stage;
  std::string config_hash;
  std::vector<PlotRow> rows;  // semantic row then visual row per class
};

/// Classes without any point in the scenes get no visual row and are left
/// out entirely. Features are unit-normalized before averaging.
PlotTable plot_table(const ModelState& model, std::span<const Scene> scenes, const ClassVocabulary& vocab,
                     PlotStage stage, const std::string& config_hash);

/// Mean over classes of the 2D distance between a class's semantic and
/// visual rows.
double mean_semantic_visual_distance(const PlotTable& table);

inline constexpr std::string_view kPlotColumns = "class\tkind\tsplit\tx\ty";

void write_plot_tsv(std::ostream& out, const PlotTable& table);
void write_plot_svg(std::ostream& out, const PlotTable& table);

}  // namespace zsseg
