// SPDX-License-Identifier: Apache-2.0
#include "zsseg/cli.hpp"

#include <spdlog/spdlog.h>

#include <CLI11.hpp>
#include <algorithm>
#include <chrono>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>

#include "zsseg/binio.hpp"
#include "zsseg/format.hpp"
#include "zsseg/gradcheck_suite.hpp"
#include "zsseg/plot.hpp"
#include "zsseg/tensor.hpp"
#include "zsseg/trainer.hpp"

namespace zsseg {

namespace fs = std::filesystem;

namespace {

// Usage and I/O problems map to exit code 2.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

constexpr const char* kManifest = "manifest.txt";
constexpr const char* kVocabFile = "vocabulary.csv";
constexpr const char* kEmbeddingFile = "embeddings.txt";
constexpr const char* kConfigFile = "config.json";

// Whole-file fingerprint. (A CRC over a file that ends in its own CRC is a
// constant, so the embedded checksum cannot double as this one.)
std::string file_digest(std::span<const std::uint8_t> bytes) {
  return hex64(fnv1a(std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size())));
}

std::string format_metric(const std::optional<double>& v) {
  if (!v) return "n/a";
  std::ostringstream s;
  s << std::fixed << std::setprecision(1) << round_report(*v);
  return s.str();
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw UsageError("cannot write '" + path.string() + "'");
  f << text;
  if (!f) throw UsageError("failed writing '" + path.string() + "'");
}

RunConfig base_config(const std::string& config_path, const std::vector<std::string>& overrides,
                      const RunConfig& fallback = {}) {
  RunConfig c = fallback;
  try {
    if (!config_path.empty()) c = load_config(config_path);
    return apply_overrides(c, overrides);
  } catch (const std::exception& e) {
    throw UsageError(e.what());
  }
}

std::vector<Scene> load_scene_args(const std::vector<std::string>& paths) {
  std::vector<Scene> scenes;
  for (const auto& p : paths) {
    if (fs::is_directory(p)) {
      auto d = load_dataset_dir(p);
      for (auto& s : d.scenes) scenes.push_back(std::move(s));
    } else {
      scenes.push_back(load_scene(p));
    }
  }
  return scenes;
}

void check_compatible(const RunConfig& config, const DatasetDir& data) {
  if (data.vocab.embedding_dim() != config.scene.embedding_dim) {
    throw UsageError("data embeddings have dimension " + std::to_string(data.vocab.embedding_dim()) +
                     " but the config expects " + std::to_string(config.scene.embedding_dim));
  }
  for (const Scene& s : data.scenes) {
    if (s.attrs.dim(1) != config.scene.attr_channels || s.image.dim(2) != config.scene.image_channels) {
      throw UsageError("data scenes do not match the configured attribute/image channels");
    }
  }
}

struct Common {
  std::string config;
  std::vector<std::string> overrides;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config, "JSON config file (defaults apply when omitted)");
  cmd->add_option("--set", c.overrides, "Override a config field, e.g. --set train.epochs=5");
}

int cmd_generate(const Common& common, const std::string& out_dir, std::optional<std::size_t> n,
                 std::optional<std::uint64_t> seed, std::ostream& out) {
  RunConfig c = base_config(common.config, common.overrides);
  const std::size_t n_scenes = n.value_or(c.train_scenes);
  const std::uint64_t s = seed.value_or(c.data_seed);
  c.data_seed = s;
  c.data_dir = out_dir;
  write_dataset_dir(out_dir, c, n_scenes, s);
  out << "wrote " << n_scenes << " scenes to " << out_dir << " (config_hash " << config_hash(c) << ")\n";
  return kExitOk;
}

int cmd_train(const Common& common, const std::string& data_dir, const std::string& out_dir,
              const std::string& ablation, std::optional<std::uint64_t> seed, std::ostream& out) {
  if (!fs::is_directory(data_dir)) throw UsageError("data directory '" + data_dir + "' does not exist");
  DatasetDir data = load_dataset_dir(data_dir);
  std::vector<std::string> overrides = common.overrides;
  if (!ablation.empty()) {
    try {
      parse_ablation(ablation);
    } catch (const std::invalid_argument& e) {
      throw UsageError(e.what());
    }
    overrides.push_back("model.ablation=\"" + ablation + "\"");
  }
  if (seed) overrides.push_back("train.seed=" + std::to_string(*seed));
  RunConfig c = base_config(common.config, overrides, data.config);
  c.data_dir = data_dir;
  c.out_dir = out_dir;
  check_compatible(c, data);
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec || !fs::is_directory(out_dir)) throw UsageError("cannot create output directory '" + out_dir + "'");
  const std::string hash = config_hash(c);
  write_text(fs::path(out_dir) / kConfigFile, config_to_json(c));

  TrainingState st = start_training(c);
  TrainOptions opts;
  opts.checkpoint_dir = out_dir;
  try {
    train(c, data.scenes, data.vocab, st, opts);
  } catch (const TrainingDiverged& e) {
    spdlog::error("{}", e.what());
    return kExitVerification;
  } catch (const NonFiniteGradient& e) {
    spdlog::error("{}", e.what());
    return kExitVerification;
  }
  std::ostringstream log;
  log << "# config_hash " << hash << " ablation " << ablation_name(c.model.ablation) << " seed " << c.train.seed
      << "\n";
  for (const EpochLog& e : st.log) log << e.to_line() << "\n";
  write_text(fs::path(out_dir) / "train_log.txt", log.str());
  save_checkpoint(fs::path(out_dir) / "checkpoint.bin", c, st);
  out << "trained " << st.step << " steps; checkpoint " << (fs::path(out_dir) / "checkpoint.bin").string()
      << " (config_hash " << hash << ")\n";
  return kExitOk;
}

int cmd_eval(const std::string& checkpoint, const std::string& data_dir, const std::string& report_path,
             bool oracle, std::ostream& out) {
  if (!fs::is_regular_file(checkpoint)) throw UsageError("checkpoint '" + checkpoint + "' does not exist");
  if (!fs::is_directory(data_dir)) throw UsageError("data directory '" + data_dir + "' does not exist");
  const auto [c, st] = load_checkpoint(checkpoint);
  const DatasetDir data = load_dataset_dir(data_dir);
  check_compatible(c, data);
  const std::string hash = config_hash(c);
  const EvalReport report = oracle ? evaluate_oracle(data.scenes, data.vocab, c.train.seed, hash)
                                   : evaluate(st.model, data.scenes, data.vocab, c.train.seed, hash);
  const std::string text = report.to_text();
  if (report_path.empty()) {
    out << text;
  } else {
    write_text(report_path, text);
    out << "seen_miou " << format_metric(report.seen_miou) << " unseen_miou " << format_metric(report.unseen_miou)
        << " hiou " << format_metric(report.hiou) << "\n";
  }
  return kExitOk;
}

int cmd_gradcheck(const Common& common, std::optional<std::uint64_t> seed, const std::string& fault,
                  std::ostream& out, std::ostream& err) {
  const RunConfig c = base_config(common.config, common.overrides);
  GradcheckOptions opts;
  opts.seed = seed.value_or(c.train.seed);
  set_backward_fault(fault);
  std::vector<GradcheckBlock> blocks;
  try {
    blocks = run_gradcheck_suite(opts);
  } catch (...) {
    set_backward_fault("");
    throw;
  }
  set_backward_fault("");
  out << "# gradcheck seed " << opts.seed << " h " << format_double(opts.h) << " tolerance "
      << format_double(kGradcheckTolerance) << " config_hash " << config_hash(c) << "\n";
  std::vector<std::string> failed;
  double total = 0.0;
  for (const auto& b : blocks) {
    const bool ok = b.max_rel_error <= kGradcheckTolerance;
    if (!ok) failed.push_back(b.name);
    total += b.seconds;
    out << std::left << std::setw(12) << b.name << " max_rel_error " << std::scientific << std::setprecision(3)
        << b.max_rel_error << std::defaultfloat << "  " << (ok ? "ok" : "FAIL") << "\n";
  }
  out << "total_seconds " << std::fixed << std::setprecision(2) << total << std::defaultfloat << "\n";
  if (failed.empty()) return kExitOk;
  std::string names;
  for (const auto& n : failed) names += (names.empty() ? "" : ", ") + n;
  err << "gradcheck failed in: " << names << "\n";
  return kExitVerification;
}

int cmd_plot(const std::string& checkpoint, const std::vector<std::string>& scene_paths, const std::string& stage,
             const std::string& out_path, const std::string& svg_path, std::ostream& out) {
  PlotStage s;
  try {
    s = parse_plot_stage(stage);
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  if (!fs::is_regular_file(checkpoint)) throw UsageError("checkpoint '" + checkpoint + "' does not exist");
  const auto [c, st] = load_checkpoint(checkpoint);
  const std::vector<Scene> scenes = load_scene_args(scene_paths);
  const ClassVocabulary vocab = make_scene_spec(c.scene).vocabulary();
  const PlotTable table = plot_table(st.model, scenes, vocab, s, config_hash(c));
  std::ostringstream tsv;
  write_plot_tsv(tsv, table);
  if (out_path.empty()) {
    out << tsv.str();
  } else {
    write_text(out_path, tsv.str());
  }
  if (!svg_path.empty()) {
    std::ostringstream svg;
    write_plot_svg(svg, table);
    write_text(svg_path, svg.str());
  }
  if (!out_path.empty()) {
    out << "stage " << table.stage << " mean_semantic_visual_distance "
        << format_double(mean_semantic_visual_distance(table)) << "\n";
  }
  return kExitOk;
}

}  // namespace

void write_dataset_dir(const fs::path& dir, const RunConfig& config, std::size_t n_scenes, std::uint64_t seed) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw UsageError("cannot create output directory '" + dir.string() + "'");
  const SceneSpec spec = make_scene_spec(config.scene);
  write_text(dir / kConfigFile, config_to_json(config));
  try {
    save_vocabulary(spec.vocabulary(), dir / kVocabFile, dir / kEmbeddingFile);
  } catch (const std::exception& e) {
    throw UsageError(e.what());
  }
  std::ostringstream manifest;
  manifest << "# zsseg scene manifest\n"
           << "config_hash " << config_hash(config) << "\n"
           << "seed " << seed << "\n"
           << "scenes " << n_scenes << "\n";
  const std::vector<Scene> scenes = dataset(spec, n_scenes, seed);
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    std::ostringstream name;
    name << "scene_" << std::setw(5) << std::setfill('0') << i << ".zs3s";
    const auto bytes = serialize_scene(scenes[i]);
    try {
      write_file(dir / name.str(), bytes);
    } catch (const std::exception& e) {
      throw UsageError(e.what());
    }
    manifest << name.str() << " " << file_digest(bytes) << " " << bytes.size() << "\n";
  }
  write_text(dir / kManifest, manifest.str());
}

DatasetDir load_dataset_dir(const fs::path& dir) {
  std::ifstream in(dir / kManifest);
  if (!in) throw UsageError("no manifest in '" + dir.string() + "'");
  DatasetDir d;
  try {
    d.config = load_config(dir / kConfigFile);
    d.vocab = load_vocabulary(dir / kVocabFile, dir / kEmbeddingFile);
  } catch (const std::exception& e) {
    throw UsageError(e.what());
  }
  std::string line;
  std::size_t expected = 0;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    const auto f = split_ws(line);
    if (f.size() == 2 && f[0] == "scenes") {
      expected = static_cast<std::size_t>(std::stoull(std::string(f[1])));
      continue;
    }
    if (f.size() == 2) continue;  // config_hash, seed
    if (f.size() != 3) throw UsageError("malformed manifest line '" + line + "'");
    const auto bytes = read_file(dir / std::string(f[0]));
    if (file_digest(bytes) != f[1] || std::to_string(bytes.size()) != f[2]) {
      throw UsageError("scene '" + std::string(f[0]) + "' does not match its manifest checksum");
    }
    d.scenes.push_back(deserialize_scene(bytes));
  }
  if (d.scenes.size() != expected) throw UsageError("manifest lists a different number of scenes than it declares");
  return d;
}

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Zero-shot LiDAR-camera point segmentation toolkit", "zsseg"};
  app.require_subcommand(1);

  Common gen_common, train_common, grad_common;
  std::string gen_out;
  std::optional<std::size_t> gen_n;
  std::optional<std::uint64_t> gen_seed;
  auto* gen = app.add_subcommand("generate", "Write synthetic scenes, vocabulary and a manifest");
  add_common(gen, gen_common);
  gen->add_option("--out", gen_out, "Output directory")->required();
  gen->add_option("--scenes", gen_n, "Number of scenes (default data.train_scenes)");
  gen->add_option("--seed", gen_seed, "Dataset seed (default data.seed)");

  std::string train_data, train_out, train_ablation;
  std::optional<std::uint64_t> train_seed;
  auto* tr = app.add_subcommand("train", "Train a model on a generated dataset");
  add_common(tr, train_common);
  tr->add_option("--data", train_data, "Dataset directory")->required();
  tr->add_option("--out", train_out, "Output directory for checkpoint and log")->required();
  tr->add_option("--ablation", train_ablation, "One of: " + [] {
    std::string s;
    for (const auto& n : ablation_names()) s += (s.empty() ? "" : ", ") + n;
    return s;
  }());
  tr->add_option("--seed", train_seed, "Training seed (default train.seed)");

  std::string ev_ckpt, ev_data, ev_report;
  bool ev_oracle = false;
  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint");
  ev->add_option("--checkpoint", ev_ckpt, "Checkpoint file")->required();
  ev->add_option("--data", ev_data, "Dataset directory")->required();
  ev->add_option("--report", ev_report, "Write the report here instead of stdout");
  ev->add_flag("--oracle", ev_oracle, "Pass ground truth through as predictions");

  std::optional<std::uint64_t> gc_seed;
  std::string gc_fault;
  auto* gc = app.add_subcommand("gradcheck", "Finite-difference check of every differentiable block");
  add_common(gc, grad_common);
  gc->add_option("--seed", gc_seed, "Seed for inputs and sampled coordinates");
  gc->add_option("--inject-fault", gc_fault)->group("");

  std::string pl_ckpt, pl_stage, pl_out, pl_svg;
  std::vector<std::string> pl_scenes;
  auto* pl = app.add_subcommand("plot", "Export 2D PCA of per-class semantic and visual features");
  pl->add_option("--checkpoint", pl_ckpt, "Checkpoint file")->required();
  pl->add_option("--scene", pl_scenes, "Scene file or dataset directory (repeatable)")->required();
  pl->add_option("--stage", pl_stage, "pre_svfe, post_svfe or post_sgvf")->required();
  pl->add_option("--out", pl_out, "Tab-separated point table (stdout when omitted)");
  pl->add_option("--svg", pl_svg, "Optional scatter plot");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*gen) return cmd_generate(gen_common, gen_out, gen_n, gen_seed, out);
    if (*tr) return cmd_train(train_common, train_data, train_out, train_ablation, train_seed, out);
    if (*ev) return cmd_eval(ev_ckpt, ev_data, ev_report, ev_oracle, out);
    if (*gc) return cmd_gradcheck(grad_common, gc_seed, gc_fault, out, err);
    if (*pl) return cmd_plot(pl_ckpt, pl_scenes, pl_stage, pl_out, pl_svg, out);
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const FormatError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  }
  return kExitUsage;
}

}  // namespace zsseg
