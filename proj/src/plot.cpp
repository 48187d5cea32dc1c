// SPDX-License-Identifier: Apache-2.0
#include "zsseg/plot.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <map>
#include <ostream>
#include <stdexcept>

#include "zsseg/format.hpp"

namespace zsseg {

namespace {

constexpr std::pair<PlotStage, std::string_view> kStages[] = {
    {PlotStage::kPreSvfe, "pre_svfe"},
    {PlotStage::kPostSvfe, "post_svfe"},
    {PlotStage::kPostSgvf, "post_sgvf"},
};

std::vector<double> unit(std::span<const double> row) {
  double n2 = 0.0;
  for (double v : row) n2 += v * v;
  const double inv = n2 > 0.0 ? 1.0 / std::sqrt(n2) : 0.0;
  std::vector<double> out(row.begin(), row.end());
  for (double& v : out) v *= inv;
  return out;
}

}  // namespace

std::string_view plot_stage_name(PlotStage s) {
  for (const auto& [v, n] : kStages) {
    if (v == s) return n;
  }
  throw std::logic_error("unknown plot stage value");
}

PlotStage parse_plot_stage(std::string_view name) {
  for (const auto& [v, n] : kStages) {
    if (n == name) return v;
  }
  throw std::invalid_argument("unknown stage '" + std::string(name) + "'; valid: pre_svfe, post_svfe, post_sgvf");
}

std::vector<PlotStage> plot_stages() { return {PlotStage::kPreSvfe, PlotStage::kPostSvfe, PlotStage::kPostSgvf}; }

std::vector<std::vector<double>> pca_project(const std::vector<std::vector<double>>& rows, std::size_t k) {
  if (rows.empty()) return {};
  const auto n = static_cast<Eigen::Index>(rows.size());
  const auto d = static_cast<Eigen::Index>(rows.front().size());
  if (k > static_cast<std::size_t>(d)) throw std::invalid_argument("pca_project: k exceeds the feature dimension");
  Eigen::MatrixXd x(n, d);
  for (Eigen::Index i = 0; i < n; ++i) {
    if (static_cast<Eigen::Index>(rows[i].size()) != d) throw std::invalid_argument("pca_project: ragged rows");
    for (Eigen::Index j = 0; j < d; ++j) x(i, j) = rows[i][j];
  }
  x.rowwise() -= x.colwise().mean();
  const Eigen::MatrixXd cov = x.transpose() * x / static_cast<double>(std::max<Eigen::Index>(n - 1, 1));
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
  // Eigenvalues come out ascending.
  Eigen::MatrixXd axes(d, static_cast<Eigen::Index>(k));
  for (std::size_t a = 0; a < k; ++a) {
    Eigen::VectorXd v = eig.eigenvectors().col(d - 1 - static_cast<Eigen::Index>(a));
    Eigen::Index arg = 0;
    v.cwiseAbs().maxCoeff(&arg);
    if (v(arg) < 0) v = -v;
    axes.col(static_cast<Eigen::Index>(a)) = v;
  }
  const Eigen::MatrixXd y = x * axes;
  std::vector<std::vector<double>> out(rows.size(), std::vector<double>(k));
  for (Eigen::Index i = 0; i < n; ++i) {
    for (std::size_t a = 0; a < k; ++a) out[i][a] = y(i, static_cast<Eigen::Index>(a));
  }
  return out;
}

PlotTable plot_table(const ModelState& model, std::span<const Scene> scenes, const ClassVocabulary& vocab,
                     PlotStage stage, const std::string& config_hash) {
  if (scenes.empty()) throw std::invalid_argument("plot: no scenes");
  const std::size_t c = vocab.size();
  const std::size_t d = model.config.dim;
  std::vector<std::vector<double>> visual(c, std::vector<double>(d, 0.0));
  std::vector<std::size_t> counts(c, 0);
  Tensor semantic;
  for (const Scene& s : scenes) {
    const PreparedScene prep = prepare_scene(s);
    const ForwardResult fr = forward_scene(model, prep, vocab.embeddings());
    const Tensor* vis = &fr.fused;
    semantic = fr.semantic;
    if (stage == PlotStage::kPreSvfe) {
      vis = &fr.points_raw;
      semantic = fr.semantic_raw;
    } else if (stage == PlotStage::kPostSvfe) {
      vis = &fr.points_enh;
    }
    const auto& gt = s.ground_truth();
    for (std::size_t t = 0; t < gt.size(); ++t) {
      const auto cls = static_cast<std::size_t>(gt[t]);
      const auto u = unit(vis->values().subspan(t * d, d));
      for (std::size_t j = 0; j < d; ++j) visual[cls][j] += u[j];
      ++counts[cls];
    }
  }
  std::vector<std::vector<double>> pooled;
  std::vector<std::size_t> classes;
  for (std::size_t k = 0; k < c; ++k) {
    if (counts[k] == 0) continue;
    classes.push_back(k);
    pooled.push_back(unit(semantic.values().subspan(k * d, d)));
    for (double& v : visual[k]) v /= static_cast<double>(counts[k]);
    pooled.push_back(visual[k]);
  }
  const auto xy = pca_project(pooled, 2);
  PlotTable table;
  table.stage = std::string(plot_stage_name(stage));
  table.config_hash = config_hash;
  for (std::size_t i = 0; i < classes.size(); ++i) {
    const std::size_t k = classes[i];
    const std::string split = vocab.is_seen(k) ? "seen" : "unseen";
    table.rows.push_back({vocab.names()[k], "semantic", split, xy[2 * i][0], xy[2 * i][1]});
    table.rows.push_back({vocab.names()[k], "visual", split, xy[2 * i + 1][0], xy[2 * i + 1][1]});
  }
  return table;
}

double mean_semantic_visual_distance(const PlotTable& table) {
  std::map<std::string, std::pair<const PlotRow*, const PlotRow*>> by_class;
  for (const PlotRow& r : table.rows) {
    auto& slot = by_class[r.class_name];
    (r.kind == "semantic" ? slot.first : slot.second) = &r;
  }
  double total = 0.0;
  std::size_t n = 0;
  for (const auto& [name, p] : by_class) {
    if (p.first == nullptr || p.second == nullptr) continue;
    total += std::hypot(p.first->x - p.second->x, p.first->y - p.second->y);
    ++n;
  }
  if (n == 0) throw std::invalid_argument("plot: table has no class with both rows");
  return total / static_cast<double>(n);
}

void write_plot_tsv(std::ostream& out, const PlotTable& table) {
  out << "# stage " << table.stage << " config_hash " << table.config_hash << "\n";
  out << kPlotColumns << "\n";
  for (const PlotRow& r : table.rows) {
    out << r.class_name << '\t' << r.kind << '\t' << r.split << '\t' << format_double(r.x) << '\t'
        << format_double(r.y) << "\n";
  }
}

void write_plot_svg(std::ostream& out, const PlotTable& table) {
  constexpr double kSize = 480.0;
  constexpr double kMargin = 40.0;
  double lo_x = 0, hi_x = 0, lo_y = 0, hi_y = 0;
  for (std::size_t i = 0; i < table.rows.size(); ++i) {
    const PlotRow& r = table.rows[i];
    lo_x = i == 0 ? r.x : std::min(lo_x, r.x);
    hi_x = i == 0 ? r.x : std::max(hi_x, r.x);
    lo_y = i == 0 ? r.y : std::min(lo_y, r.y);
    hi_y = i == 0 ? r.y : std::max(hi_y, r.y);
  }
  const double span = std::max({hi_x - lo_x, hi_y - lo_y, 1e-12});
  auto px = [&](double x) { return kMargin + (x - lo_x) / span * (kSize - 2 * kMargin); };
  auto py = [&](double y) { return kSize - kMargin - (y - lo_y) / span * (kSize - 2 * kMargin); };

  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kSize << "\" height=\"" << kSize << "\">\n";
  out << "<!-- stage " << table.stage << " config_hash " << table.config_hash << " -->\n";
  out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  out << "<text x=\"8\" y=\"18\" font-size=\"13\">" << table.stage
      << " (circle: visual, square: semantic, red: unseen)</text>\n";
  for (const PlotRow& r : table.rows) {
    const std::string color = r.split == "unseen" ? "#c0392b" : "#2c6fbb";
    const double x = px(r.x);
    const double y = py(r.y);
    if (r.kind == "semantic") {
      out << "<rect x=\"" << x - 5 << "\" y=\"" << y - 5 << "\" width=\"10\" height=\"10\" fill=\"" << color
          << "\"/>\n";
    } else {
      out << "<circle cx=\"" << x << "\" cy=\"" << y << "\" r=\"5\" fill=\"none\" stroke=\"" << color
          << "\" stroke-width=\"2\"/>\n";
    }
    out << "<text x=\"" << x + 7 << "\" y=\"" << y - 7 << "\" font-size=\"10\">" << r.class_name << "</text>\n";
  }
  out << "</svg>\n";
}

}  // namespace zsseg
