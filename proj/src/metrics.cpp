// SPDX-License-Identifier: Apache-2.0
#include "zsseg/metrics.hpp"

#include <spdlog/spdlog.h>

#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "zsseg/alignment.hpp"
#include "zsseg/format.hpp"

namespace zsseg {

ConfusionMatrix::ConfusionMatrix(std::size_t num_classes)
    : classes_(num_classes), counts_(num_classes * num_classes, 0) {}

void ConfusionMatrix::accumulate(std::span<const std::int32_t> truth, std::span<const std::int32_t> predicted) {
  if (truth.size() != predicted.size()) {
    throw std::invalid_argument("confusion: " + std::to_string(truth.size()) + " labels vs " +
                                std::to_string(predicted.size()) + " predictions");
  }
  const auto c = static_cast<std::int32_t>(classes_);
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (truth[i] == kUnlabeled) continue;
    if (truth[i] < 0 || truth[i] >= c || predicted[i] < 0 || predicted[i] >= c) {
      throw std::out_of_range("confusion: label out of range at index " + std::to_string(i));
    }
    ++counts_[static_cast<std::size_t>(truth[i]) * classes_ + static_cast<std::size_t>(predicted[i])];
  }
}

void ConfusionMatrix::merge(const ConfusionMatrix& other) {
  if (other.classes_ != classes_) throw std::invalid_argument("confusion: class count mismatch in merge");
  for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
}

std::uint64_t ConfusionMatrix::total() const {
  return std::accumulate(counts_.begin(), counts_.end(), std::uint64_t{0});
}

std::vector<std::optional<double>> iou_per_class(const ConfusionMatrix& cm) {
  const std::size_t c = cm.num_classes();
  std::vector<std::optional<double>> out(c);
  for (std::size_t k = 0; k < c; ++k) {
    const std::uint64_t tp = cm.count(k, k);
    std::uint64_t fp = 0;
    std::uint64_t fn = 0;
    for (std::size_t j = 0; j < c; ++j) {
      if (j == k) continue;
      fp += cm.count(j, k);
      fn += cm.count(k, j);
    }
    const std::uint64_t denom = tp + fp + fn;
    if (denom > 0) out[k] = static_cast<double>(tp) / static_cast<double>(denom);
  }
  return out;
}

double miou(const ConfusionMatrix& cm, std::span<const std::size_t> classes) {
  const auto iou = iou_per_class(cm);
  double s = 0.0;
  std::size_t n = 0;
  for (std::size_t k : classes) {
    if (!iou.at(k)) continue;
    s += *iou[k];
    ++n;
  }
  if (n == 0) throw std::domain_error("miou: no class in the subset has ground truth or predictions");
  return 100.0 * s / static_cast<double>(n);
}

double hiou(double miou_seen, double miou_unseen) {
  if (miou_seen < 0.0 || miou_unseen < 0.0) throw std::invalid_argument("hiou: negative mIoU");
  if (miou_seen + miou_unseen == 0.0) {
    spdlog::info("hiou: seen and unseen mIoU are both 0; reporting 0");
    return 0.0;
  }
  return 2.0 * miou_seen * miou_unseen / (miou_seen + miou_unseen);
}

double round_report(double percent) {
  return std::copysign(std::floor(std::abs(percent) * 10.0 + 0.5) / 10.0, percent);
}

EvalReport make_report(std::vector<std::string> names, std::vector<bool> seen, ConfusionMatrix cm, std::uint64_t seed,
                       std::string config_hash) {
  EvalReport r;
  r.class_names = std::move(names);
  r.seen = std::move(seen);
  r.confusion = std::move(cm);
  r.iou = iou_per_class(r.confusion);
  r.seed = seed;
  r.config_hash = std::move(config_hash);
  std::vector<std::size_t> seen_ids;
  std::vector<std::size_t> unseen_ids;
  std::vector<std::size_t> all_ids;
  for (std::size_t c = 0; c < r.seen.size(); ++c) {
    (r.seen[c] ? seen_ids : unseen_ids).push_back(c);
    all_ids.push_back(c);
  }
  auto safe = [&](const std::vector<std::size_t>& ids) -> std::optional<double> {
    try {
      return miou(r.confusion, ids);
    } catch (const std::domain_error&) {
      return std::nullopt;
    }
  };
  r.seen_miou = safe(seen_ids);
  r.unseen_miou = safe(unseen_ids);
  r.overall_miou = safe(all_ids);
  if (r.seen_miou && r.unseen_miou) r.hiou = hiou(*r.seen_miou, *r.unseen_miou);
  return r;
}

namespace {

std::string percent_text(const std::optional<double>& v) {
  if (!v) return "n/a";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.1f", round_report(*v));
  return buf;
}

}  // namespace

std::string EvalReport::to_text() const {
  std::ostringstream os;
  os << "# zsseg evaluation report\n";
  os << "seed = " << seed << '\n';
  os << "config_hash = " << config_hash << '\n';
  os << "classes = " << class_names.size() << '\n';
  os << "seen_miou = " << percent_text(seen_miou) << '\n';
  os << "unseen_miou = " << percent_text(unseen_miou) << '\n';
  os << "overall_miou = " << percent_text(overall_miou) << '\n';
  os << "hiou = " << percent_text(hiou) << '\n';
  os << "\n[per_class]\n# class split iou_percent\n";
  for (std::size_t c = 0; c < class_names.size(); ++c) {
    const std::optional<double> pct = iou[c] ? std::optional<double>(100.0 * *iou[c]) : std::nullopt;
    os << class_names[c] << ' ' << (seen[c] ? "seen" : "unseen") << ' ' << percent_text(pct) << '\n';
  }
  os << "\n[confusion]\n# rows: ground truth, columns: prediction\n";
  for (std::size_t i = 0; i < confusion.num_classes(); ++i) {
    for (std::size_t j = 0; j < confusion.num_classes(); ++j) os << (j ? " " : "") << confusion.count(i, j);
    os << '\n';
  }
  return os.str();
}

EvalReport EvalReport::parse(std::string_view text) {
  std::istringstream in{std::string(text)};
  std::string line;
  std::string section;
  std::uint64_t seed = 0;
  std::string hash;
  std::size_t classes = 0;
  std::vector<std::string> names;
  std::vector<bool> seen;
  std::vector<std::vector<std::uint64_t>> rows;
  std::vector<std::pair<std::string, std::string>> headline;
  while (std::getline(in, line)) {
    const std::string_view l = trim(line);
    if (l.empty() || l.front() == '#') continue;
    if (l.front() == '[') {
      section = std::string(l);
      continue;
    }
    if (section.empty()) {
      const auto eq = l.find('=');
      if (eq == std::string_view::npos) throw FormatError("report: expected key = value, got '" + std::string(l) + "'");
      const std::string key(trim(l.substr(0, eq)));
      const std::string value(trim(l.substr(eq + 1)));
      if (key == "seed") {
        seed = std::stoull(value);
      } else if (key == "config_hash") {
        hash = value;
      } else if (key == "classes") {
        classes = std::stoull(value);
      } else {
        headline.emplace_back(key, value);
      }
    } else if (section == "[per_class]") {
      const auto f = split_ws(l);
      if (f.size() != 3) throw FormatError("report: malformed per-class row '" + std::string(l) + "'");
      names.emplace_back(f[0]);
      seen.push_back(f[1] == "seen");
    } else if (section == "[confusion]") {
      std::vector<std::uint64_t> row;
      for (auto f : split_ws(l)) row.push_back(std::stoull(std::string(f)));
      rows.push_back(std::move(row));
    }
  }
  if (names.size() != classes || rows.size() != classes) throw FormatError("report: class count mismatch");
  ConfusionMatrix cm(classes);
  for (std::size_t i = 0; i < classes; ++i) {
    if (rows[i].size() != classes) throw FormatError("report: confusion row " + std::to_string(i) + " has wrong width");
    for (std::size_t j = 0; j < classes; ++j) cm.set(i, j, rows[i][j]);
  }
  EvalReport r = make_report(std::move(names), std::move(seen), std::move(cm), seed, std::move(hash));
  for (const auto& [key, value] : headline) {
    const std::optional<double>* field = key == "seen_miou"      ? &r.seen_miou
                                         : key == "unseen_miou"  ? &r.unseen_miou
                                         : key == "overall_miou" ? &r.overall_miou
                                         : key == "hiou"         ? &r.hiou
                                                                 : nullptr;
    if (field == nullptr) throw FormatError("report: unknown key '" + key + "'");
    if (percent_text(*field) != value) {
      throw FormatError("report: " + key + " = " + value + " disagrees with the confusion counts");
    }
  }
  return r;
}

}  // namespace zsseg
