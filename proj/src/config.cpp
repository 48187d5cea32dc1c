// SPDX-License-Identifier: Apache-2.0
#include "zsseg/config.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

#include "json.hpp"
#include "zsseg/format.hpp"

namespace zsseg {

using nlohmann::json;

namespace {

constexpr std::pair<Ablation, std::string_view> kAblations[] = {
    {Ablation::kFull, "full"},
    {Ablation::kNoSgvf, "no_sgvf"},
    {Ablation::kNoSvfe, "no_svfe"},
    {Ablation::kNoImage, "no_image"},
    {Ablation::kSvfeSelfAttn, "svfe_self_attn"},
    {Ablation::kSgvfCrossAttn, "sgvf_cross_attn"},
    {Ablation::kSgvfPlusSelfAttn, "sgvf_plus_self_attn"},
};

}  // namespace

std::string_view ablation_name(Ablation a) {
  for (const auto& [value, name] : kAblations) {
    if (value == a) return name;
  }
  throw std::logic_error("unknown ablation value");
}

std::vector<std::string> ablation_names() {
  std::vector<std::string> out;
  for (const auto& [value, name] : kAblations) out.emplace_back(name);
  return out;
}

Ablation parse_ablation(std::string_view name) {
  for (const auto& [value, n] : kAblations) {
    if (n == name) return value;
  }
  std::string valid;
  for (const auto& n : ablation_names()) valid += (valid.empty() ? "" : ", ") + n;
  throw std::invalid_argument("unknown ablation '" + std::string(name) + "'; valid: " + valid);
}

std::string_view svfe_order_name(SvfeOrder o) { return o == SvfeOrder::kPointsFirst ? "points_first" : "image_first"; }

SvfeOrder parse_svfe_order(std::string_view name) {
  if (name == "points_first") return SvfeOrder::kPointsFirst;
  if (name == "image_first") return SvfeOrder::kImageFirst;
  throw std::invalid_argument("unknown svfe order '" + std::string(name) + "'; valid: points_first, image_first");
}

void TrainConfig::validate() const {
  if (!(lr_backbone > 0.0) || !(lr_svfe_sgvf > 0.0)) throw std::invalid_argument("train: learning rates must be > 0");
  if (batch_size == 0) throw std::invalid_argument("train: batch_size must be >= 1");
  if (!(divergence_factor > 1.0)) throw std::invalid_argument("train: divergence_factor must exceed 1");
}

void RunConfig::validate() const {
  train.validate();
  if (!(tau > 0.0)) throw std::invalid_argument("alignment: tau must be positive");
  if (model.heads == 0 || model.dim % model.heads != 0) {
    throw std::invalid_argument("model: dim must be a positive multiple of heads");
  }
}

namespace {

json to_json(const RunConfig& c) {
  const SceneSettings& s = c.scene;
  json pairs = json::array();
  for (const auto& [a, b] : s.image_only_pairs) pairs.push_back({a, b});
  return json{
      {"scene",
       {{"class_names", s.class_names},
        {"unseen", s.unseen},
        {"image_only_pairs", pairs},
        {"points_min", s.points_min},
        {"points_max", s.points_max},
        {"attr_channels", s.attr_channels},
        {"image_height", s.image_height},
        {"image_width", s.image_width},
        {"image_channels", s.image_channels},
        {"focal", s.focal},
        {"embedding_dim", s.embedding_dim},
        {"latent_rank", s.latent_rank},
        {"pair_mix", s.pair_mix},
        {"sigma_geometry", s.sigma_geometry},
        {"sigma_image", s.sigma_image},
        {"object_extent", s.object_extent},
        {"range_min", s.range_min},
        {"range_max", s.range_max},
        {"azimuth_extent_deg", s.azimuth_extent_deg},
        {"attr_scale", s.attr_scale},
        {"appearance_scale", s.appearance_scale},
        {"world_seed", s.world_seed}}},
      {"model",
       {{"dim", c.model.dim},
        {"heads", c.model.heads},
        {"td_hidden", c.model.td_hidden},
        {"semantic_hidden", c.model.semantic_hidden},
        {"ablation", ablation_name(c.model.ablation)},
        {"svfe_order", svfe_order_name(c.model.svfe_order)},
        {"normalize_features", c.model.normalize_features}}},
      {"train",
       {{"epochs", c.train.epochs},
        {"batch_size", c.train.batch_size},
        {"points_per_step", c.train.points_per_step},
        {"lr_backbone", c.train.lr_backbone},
        {"lr_svfe_sgvf", c.train.lr_svfe_sgvf},
        {"beta1", c.train.beta1},
        {"beta2", c.train.beta2},
        {"adam_eps", c.train.adam_eps},
        {"seed", c.train.seed},
        {"checkpoint_every", c.train.checkpoint_every},
        {"shuffle_labels", c.train.shuffle_labels},
        {"divergence_factor", c.train.divergence_factor}}},
      {"alignment", {{"tau", c.tau}}},
      {"data", {{"train_scenes", c.train_scenes}, {"eval_scenes", c.eval_scenes}, {"seed", c.data_seed}}},
      {"paths", {{"data", c.data_dir}, {"out", c.out_dir}}},
  };
}

// Recursively overlays `patch` onto `base`, rejecting keys `base` lacks.
void merge_strict(json& base, const json& patch, const std::string& where) {
  if (!patch.is_object()) throw std::invalid_argument("config: '" + where + "' must be an object");
  for (auto it = patch.begin(); it != patch.end(); ++it) {
    const std::string path = where.empty() ? it.key() : where + "." + it.key();
    if (!base.contains(it.key())) throw std::invalid_argument("config: unknown key '" + path + "'");
    json& slot = base[it.key()];
    if (slot.is_object()) {
      merge_strict(slot, it.value(), path);
    } else {
      slot = it.value();
    }
  }
}

template <typename T>
T get(const json& j, const char* section, const char* key) {
  try {
    return j.at(section).at(key).get<T>();
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("config: bad value for '") + section + "." + key + "': " + e.what());
  }
}

RunConfig from_json(const json& j) {
  RunConfig c;
  SceneSettings& s = c.scene;
  s.class_names = get<std::vector<std::string>>(j, "scene", "class_names");
  s.unseen = get<std::vector<std::size_t>>(j, "scene", "unseen");
  s.image_only_pairs.clear();
  for (const auto& p : get<std::vector<std::vector<std::size_t>>>(j, "scene", "image_only_pairs")) {
    if (p.size() != 2) throw std::invalid_argument("config: image_only_pairs entries must have two classes");
    s.image_only_pairs.emplace_back(p[0], p[1]);
  }
  s.points_min = get<std::size_t>(j, "scene", "points_min");
  s.points_max = get<std::size_t>(j, "scene", "points_max");
  s.attr_channels = get<std::size_t>(j, "scene", "attr_channels");
  s.image_height = get<std::size_t>(j, "scene", "image_height");
  s.image_width = get<std::size_t>(j, "scene", "image_width");
  s.image_channels = get<std::size_t>(j, "scene", "image_channels");
  s.focal = get<double>(j, "scene", "focal");
  s.embedding_dim = get<std::size_t>(j, "scene", "embedding_dim");
  s.latent_rank = get<std::size_t>(j, "scene", "latent_rank");
  s.pair_mix = get<double>(j, "scene", "pair_mix");
  s.sigma_geometry = get<double>(j, "scene", "sigma_geometry");
  s.sigma_image = get<double>(j, "scene", "sigma_image");
  s.object_extent = get<double>(j, "scene", "object_extent");
  s.range_min = get<double>(j, "scene", "range_min");
  s.range_max = get<double>(j, "scene", "range_max");
  s.azimuth_extent_deg = get<double>(j, "scene", "azimuth_extent_deg");
  s.attr_scale = get<double>(j, "scene", "attr_scale");
  s.appearance_scale = get<double>(j, "scene", "appearance_scale");
  s.world_seed = get<std::uint64_t>(j, "scene", "world_seed");

  c.model.dim = get<std::size_t>(j, "model", "dim");
  c.model.heads = get<std::size_t>(j, "model", "heads");
  c.model.td_hidden = get<std::size_t>(j, "model", "td_hidden");
  c.model.semantic_hidden = get<std::size_t>(j, "model", "semantic_hidden");
  c.model.ablation = parse_ablation(get<std::string>(j, "model", "ablation"));
  c.model.svfe_order = parse_svfe_order(get<std::string>(j, "model", "svfe_order"));
  c.model.normalize_features = get<bool>(j, "model", "normalize_features");

  c.train.epochs = get<std::size_t>(j, "train", "epochs");
  c.train.batch_size = get<std::size_t>(j, "train", "batch_size");
  c.train.points_per_step = get<std::size_t>(j, "train", "points_per_step");
  c.train.lr_backbone = get<double>(j, "train", "lr_backbone");
  c.train.lr_svfe_sgvf = get<double>(j, "train", "lr_svfe_sgvf");
  c.train.beta1 = get<double>(j, "train", "beta1");
  c.train.beta2 = get<double>(j, "train", "beta2");
  c.train.adam_eps = get<double>(j, "train", "adam_eps");
  c.train.seed = get<std::uint64_t>(j, "train", "seed");
  c.train.checkpoint_every = get<std::size_t>(j, "train", "checkpoint_every");
  c.train.shuffle_labels = get<bool>(j, "train", "shuffle_labels");
  c.train.divergence_factor = get<double>(j, "train", "divergence_factor");

  c.tau = get<double>(j, "alignment", "tau");
  c.train_scenes = get<std::size_t>(j, "data", "train_scenes");
  c.eval_scenes = get<std::size_t>(j, "data", "eval_scenes");
  c.data_seed = get<std::uint64_t>(j, "data", "seed");
  c.data_dir = get<std::string>(j, "paths", "data");
  c.out_dir = get<std::string>(j, "paths", "out");
  c.validate();
  return c;
}

}  // namespace

std::string config_to_json(const RunConfig& config) { return to_json(config).dump(2) + "\n"; }

RunConfig config_from_json(std::string_view text) {
  json patch;
  try {
    patch = json::parse(text);
  } catch (const json::parse_error& e) {
    throw std::invalid_argument(std::string("config: ") + e.what());
  }
  json merged = to_json(RunConfig{});
  merge_strict(merged, patch, "");
  return from_json(merged);
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config '" + path.string() + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return config_from_json(ss.str());
}

RunConfig apply_overrides(const RunConfig& base, const std::vector<std::string>& overrides) {
  json merged = to_json(base);
  for (const auto& item : overrides) {
    const auto eq = item.find('=');
    if (eq == std::string::npos) throw std::invalid_argument("override '" + item + "' is not key=value");
    const std::string key = item.substr(0, eq);
    const std::string text = item.substr(eq + 1);
    json value = json::parse(text, nullptr, false);
    if (value.is_discarded()) value = text;
    json patch = value;
    std::string rest = key;
    std::vector<std::string> parts;
    for (std::size_t dot; (dot = rest.find('.')) != std::string::npos; rest = rest.substr(dot + 1)) {
      parts.push_back(rest.substr(0, dot));
    }
    parts.push_back(rest);
    for (auto it = parts.rbegin(); it != parts.rend(); ++it) patch = json{{*it, patch}};
    merge_strict(merged, patch, "");
  }
  return from_json(merged);
}

std::string config_hash(const RunConfig& config) {
  json j = to_json(config);
  j.erase("paths");
  return hex64(fnv1a(j.dump()));
}

}  // namespace zsseg
