// SPDX-License-Identifier: Apache-2.0
#include "zsseg/trainer.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <map>

#include "zsseg/alignment.hpp"
#include "zsseg/binio.hpp"
#include "zsseg/format.hpp"
#include "zsseg/geometry.hpp"
#include "zsseg/rng.hpp"

namespace zsseg {

ParamList ModelState::collect() {
  ParamList out;
  point_encoder.collect("point_encoder.", out);
  image_encoder.collect("image_encoder.", out);
  semantic.collect("semantic.", out);
  svfe.collect("svfe.", out);
  sgvf.collect("sgvf.", out);
  return out;
}

std::vector<std::pair<std::string, const Tensor*>> ModelState::collect() const {
  std::vector<std::pair<std::string, const Tensor*>> out;
  for (auto& [name, t] : const_cast<ModelState*>(this)->collect()) out.emplace_back(name, t);
  return out;
}

ParamGroup ModelState::group_of(const std::string& name) {
  const bool backbone = name.starts_with("point_encoder.") || name.starts_with("image_encoder.");
  return backbone ? ParamGroup::kBackbone : ParamGroup::kSvfeSgvf;
}

ModelState init_model(const ModelConfig& config, std::size_t attr_channels, std::size_t image_channels,
                      std::size_t embedding_dim, std::uint64_t seed) {
  if (config.heads == 0 || config.dim % config.heads != 0) {
    throw std::invalid_argument("init_model: dim must be a positive multiple of heads");
  }
  const std::size_t d = config.dim;
  ModelState m;
  m.config = config;
  Rng r_points(mix_seed(seed, 1));
  Rng r_image(mix_seed(seed, 2));
  Rng r_sem(mix_seed(seed, 3));
  Rng r_svfe(mix_seed(seed, 4));
  Rng r_sgvf(mix_seed(seed, 5));
  m.point_encoder = init_point_encoder(attr_channels, r_points, d);
  m.image_encoder = init_image_encoder(image_channels, r_image, d);
  m.semantic = init_semantic_head(embedding_dim, r_sem, config.semantic_hidden, d);
  const SvfeVariant sv =
      config.ablation == Ablation::kSvfeSelfAttn ? SvfeVariant::kSelfAttentionOnly : SvfeVariant::kCrossAttention;
  m.svfe = init_svfe(d, config.heads, config.td_hidden, r_svfe, config.svfe_order, sv);
  SgvfVariant gv = SgvfVariant::kSgvf;
  switch (config.ablation) {
    case Ablation::kNoSgvf:
      gv = SgvfVariant::kConcatBaseline;
      break;
    case Ablation::kSgvfCrossAttn:
      gv = SgvfVariant::kCrossAttentionOnly;
      break;
    case Ablation::kSgvfPlusSelfAttn:
      gv = SgvfVariant::kSgvfPlusSelfAttention;
      break;
    case Ablation::kNoImage:
      gv = SgvfVariant::kPointOnly;
      break;
    default:
      break;
  }
  m.sgvf = init_sgvf(d, config.heads, config.td_hidden, r_sgvf, gv);
  return m;
}

ModelState init_model(const RunConfig& config) {
  return init_model(config.model, config.scene.attr_channels, config.scene.image_channels,
                    config.scene.embedding_dim, config.train.seed);
}

std::string parameter_hash(const ModelState& model) {
  std::uint64_t h = fnv1a("");
  for (const auto& [name, t] : model.collect()) {
    h = fnv1a(name, h);
    const auto v = t->values();
    h = fnv1a(std::string_view(reinterpret_cast<const char*>(v.data()), v.size() * sizeof(double)), h);
  }
  return hex64(h);
}

PreparedScene prepare_scene(const Scene& scene) {
  return PreparedScene{&scene, normalize_coordinates(scene.points), image_encoder_input(scene.image)};
}

ForwardResult forward_scene(const ModelState& model, const PreparedScene& prep, const Tensor& embeddings,
                            std::span<const std::size_t> rows) {
  const Scene& scene = *prep.scene;
  const bool subset = !rows.empty();
  const Tensor coords = subset ? gather_rows(prep.coords, rows) : prep.coords;
  const Tensor attrs = subset ? gather_rows(scene.attrs, rows) : scene.attrs;
  const Tensor points = subset ? gather_rows(scene.points, rows) : scene.points;
  const std::size_t t = points.dim(0);
  const std::size_t d = model.config.dim;
  const Ablation ablation = model.config.ablation;

  ForwardResult r;
  r.points_raw = encode_normalized_points(model.point_encoder, coords, attrs);
  r.semantic_raw = semantic_forward(model.semantic, embeddings);
  r.image_raw = Tensor({t, d});
  r.valid.assign(t, 0);

  if (ablation != Ablation::kNoImage) {
    // Encode only the pixels the bilinear taps touch; the encoder is per-pixel
    // so this equals encoding the whole image and sampling it.
    const ProjectionResult proj = project_points(points, scene.camera);
    RowMix mix = image_sample_mix(proj, scene.image.dim(0), scene.image.dim(1), SampleMode::kBilinear);
    std::vector<std::ptrdiff_t> local(scene.image.dim(0) * scene.image.dim(1), -1);
    std::vector<std::size_t> used;
    for (auto& taps : mix) {
      for (auto& tap : taps) {
        if (local[tap.row] < 0) {
          local[tap.row] = static_cast<std::ptrdiff_t>(used.size());
          used.push_back(tap.row);
        }
        tap.row = static_cast<std::size_t>(local[tap.row]);
      }
    }
    if (!used.empty()) {
      const Tensor pixels = mlp(model.image_encoder.mlp, gather_rows(prep.encoder_input, used));
      r.image_raw = mix_rows(pixels, mix);
    }
    r.valid = proj.valid;
  }

  switch (ablation) {
    case Ablation::kNoSvfe:
      r.semantic = r.semantic_raw;
      r.points_enh = r.points_raw;
      r.image_enh = r.image_raw;
      break;
    case Ablation::kNoImage:
      r.semantic = enhance_semantic_points_only(model.svfe, r.semantic_raw, r.points_raw);
      r.points_enh = enhance_points(model.svfe, r.points_raw, r.semantic_raw);
      r.image_enh = r.image_raw;
      break;
    default: {
      SvfeOutput o = run_svfe(model.svfe, r.semantic_raw, r.points_raw, r.image_raw, r.valid);
      r.semantic = std::move(o.semantic);
      r.points_enh = std::move(o.points);
      r.image_enh = std::move(o.image);
    }
  }
  r.fused = ablation == Ablation::kNoImage ? point_only_fusion(model.sgvf, r.points_enh)
                                           : run_sgvf(model.sgvf, r.semantic, r.points_enh, r.image_enh, r.valid);
  return r;
}

Tensor scene_similarity(const ModelState& model, const ForwardResult& r) {
  if (!model.config.normalize_features) return similarity_matrix(r.fused, r.semantic);
  return similarity_matrix(normalize_rows(r.fused), normalize_rows(r.semantic));
}

void adam_step(ParamList& params, std::span<const std::vector<double>> grads, std::span<const double> lrs,
               AdamState& state, double beta1, double beta2, double eps) {
  if (grads.size() != params.size() || lrs.size() != params.size()) {
    throw std::invalid_argument("adam_step: gradients or learning rates do not match the parameter list");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (grads[i].size() != params[i].second->numel()) {
      throw DimensionError("adam_step: gradient size mismatch for '" + params[i].first + "'");
    }
    for (double g : grads[i]) {
      if (!std::isfinite(g)) throw NonFiniteGradient("adam_step: non-finite gradient for '" + params[i].first + "'");
    }
  }
  if (state.m.empty()) {
    for (const auto& [name, t] : params) {
      state.m.emplace_back(t->numel(), 0.0);
      state.v.emplace_back(t->numel(), 0.0);
    }
  }
  ++state.step;
  const double c1 = 1.0 - std::pow(beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto w = params[i].second->mutable_values();
    auto& m = state.m[i];
    auto& v = state.v[i];
    const auto& g = grads[i];
    for (std::size_t j = 0; j < w.size(); ++j) {
      m[j] = beta1 * m[j] + (1.0 - beta1) * g[j];
      v[j] = beta2 * v[j] + (1.0 - beta2) * g[j] * g[j];
      w[j] -= lrs[i] * (m[j] / c1) / (std::sqrt(v[j] / c2) + eps);
    }
  }
}

std::string EpochLog::to_line() const {
  char buf[160];
  std::snprintf(buf, sizeof buf, "epoch %zu steps %zu loss_seen %.6f loss_unseen %.6f loss %.6f", epoch, steps,
                loss_seen, loss_unseen, loss);
  return buf;
}

Losses batch_gradients(const ModelState& model, std::span<const PreparedScene> scenes,
                       std::span<const std::vector<std::size_t>> rows,
                       std::span<const std::vector<std::int32_t>> labels, const ClassVocabulary& vocab, double tau,
                       std::vector<std::vector<double>>& grads) {
  if (scenes.empty()) throw std::invalid_argument("batch_gradients: empty batch");
  const auto names = model.collect();
  grads.assign(names.size(), {});
  for (std::size_t i = 0; i < names.size(); ++i) grads[i].assign(names[i].second->numel(), 0.0);
  Losses total;
  const double w = 1.0 / static_cast<double>(scenes.size());
  for (std::size_t s = 0; s < scenes.size(); ++s) {
    Tape tape;
    ModelState bound = model;
    ParamList params = bound.collect();
    for (auto& [name, t] : params) *t = tape.leaf(*t);
    const ForwardResult fr = forward_scene(bound, scenes[s], vocab.embeddings(), rows[s]);
    const Tensor sim = scene_similarity(bound, fr);
    const auto& y = labels[s];
    const bool any_labeled = std::ranges::any_of(y, [](std::int32_t v) { return v != kUnlabeled; });
    const Tensor ls = any_labeled ? loss_seen(sim, y, tau) : Tensor::scalar(0.0);
    const Tensor lu = loss_unseen(sim, y, vocab.seen_mask(), tau);
    const Tensor loss = loss_total(ls, lu);
    total.seen += w * ls.item();
    total.unseen += w * lu.item();
    if (!loss.on_tape()) continue;
    const Gradients g = tape.backward(loss);
    for (std::size_t i = 0; i < params.size(); ++i) {
      if (!g.reached(*params[i].second)) continue;
      const Tensor gi = g.of(*params[i].second);
      auto v = gi.values();
      for (std::size_t j = 0; j < v.size(); ++j) grads[i][j] += w * v[j];
    }
  }
  return total;
}

TrainingState start_training(const RunConfig& config) {
  config.validate();
  TrainingState st;
  st.model = init_model(config);
  st.rng_state = Rng(mix_seed(config.train.seed, 0x5b)).state();
  return st;
}

namespace {

std::vector<std::int32_t> training_labels(const Scene& scene, const TrainConfig& tc, std::size_t index) {
  std::vector<std::int32_t> y = scene.train_labels;
  if (tc.shuffle_labels) {
    Rng rng(mix_seed(tc.seed, 0x5f00 + index));
    const auto perm = rng.permutation(y.size());
    std::vector<std::int32_t> shuffled(y.size());
    for (std::size_t i = 0; i < y.size(); ++i) shuffled[i] = y[perm[i]];
    y = std::move(shuffled);
  }
  return y;
}

}  // namespace

void train(const RunConfig& config, std::span<const Scene> scenes, const ClassVocabulary& vocab, TrainingState& state,
           const TrainOptions& options) {
  config.validate();
  const TrainConfig& tc = config.train;
  if (scenes.empty()) throw std::invalid_argument("train: empty dataset");
  const std::size_t n = scenes.size();
  std::vector<PreparedScene> prepared;
  std::vector<std::vector<std::int32_t>> labels;
  for (std::size_t i = 0; i < n; ++i) {
    prepared.push_back(prepare_scene(scenes[i]));
    labels.push_back(training_labels(scenes[i], tc, i));
  }
  const std::size_t per_epoch = (n + tc.batch_size - 1) / tc.batch_size;
  const std::uint64_t total = static_cast<std::uint64_t>(tc.epochs) * per_epoch;

  ParamList params = state.model.collect();
  std::vector<double> lrs;
  for (const auto& [name, t] : params) {
    lrs.push_back(ModelState::group_of(name) == ParamGroup::kBackbone ? tc.lr_backbone : tc.lr_svfe_sgvf);
  }
  Rng sub_rng;
  sub_rng.set_state(state.rng_state);
  std::vector<std::vector<double>> grads;

  while (state.step < total && (options.stop_after == 0 || state.step < options.stop_after)) {
    const std::size_t epoch = state.step / per_epoch;
    const std::size_t b = state.step % per_epoch;
    const auto perm = Rng(mix_seed(tc.seed, 0xe90c0000ULL + epoch)).permutation(n);
    std::vector<PreparedScene> batch;
    std::vector<std::vector<std::size_t>> rows;
    std::vector<std::vector<std::int32_t>> ys;
    for (std::size_t k = b * tc.batch_size; k < std::min(n, (b + 1) * tc.batch_size); ++k) {
      const std::size_t i = perm[k];
      const std::size_t t = scenes[i].size();
      std::vector<std::size_t> r;
      std::vector<std::int32_t> y;
      if (tc.points_per_step == 0 || tc.points_per_step >= t) {
        y = labels[i];
      } else {
        r = sub_rng.sample(t, tc.points_per_step);
        for (std::size_t row : r) y.push_back(labels[i][row]);
      }
      batch.push_back(prepared[i]);
      rows.push_back(std::move(r));
      ys.push_back(std::move(y));
    }
    const Losses l = batch_gradients(state.model, batch, rows, ys, vocab, config.tau, grads);
    const double loss = l.seen + l.unseen;
    if (state.step == 0) {
      state.initial_loss = loss;
    } else if (!std::isfinite(loss) || loss > tc.divergence_factor * std::abs(state.initial_loss)) {
      throw TrainingDiverged("train: loss " + format_double(loss) + " at step " + std::to_string(state.step) +
                             " exceeds " + format_double(tc.divergence_factor) + "x the initial loss " +
                             format_double(state.initial_loss) + " (L_s " + format_double(l.seen) + ", L_u " +
                             format_double(l.unseen) + ")");
    }
    adam_step(params, grads, lrs, state.adam, tc.beta1, tc.beta2, tc.adam_eps);
    ++state.step;
    ++state.epoch_steps;
    state.epoch_seen += l.seen;
    state.epoch_unseen += l.unseen;
    if (state.step % per_epoch == 0) {
      EpochLog e;
      e.epoch = epoch + 1;
      e.steps = state.epoch_steps;
      e.loss_seen = state.epoch_seen / static_cast<double>(state.epoch_steps);
      e.loss_unseen = state.epoch_unseen / static_cast<double>(state.epoch_steps);
      e.loss = e.loss_seen + e.loss_unseen;
      spdlog::info("{}", e.to_line());
      state.log.push_back(e);
      state.epoch_steps = 0;
      state.epoch_seen = 0.0;
      state.epoch_unseen = 0.0;
    }
    state.rng_state = sub_rng.state();
    if (tc.checkpoint_every > 0 && !options.checkpoint_dir.empty() && state.step % tc.checkpoint_every == 0) {
      save_checkpoint(options.checkpoint_dir / "checkpoint.bin", config, state);
    }
  }
}

TrainingState train(const RunConfig& config, std::span<const Scene> scenes, const ClassVocabulary& vocab) {
  TrainingState st = start_training(config);
  train(config, scenes, vocab, st);
  return st;
}

std::vector<std::uint8_t> serialize_checkpoint(const RunConfig& config, const TrainingState& state) {
  BinaryWriter w;
  w.raw("ZS3C");
  w.u16(kCheckpointFormatVersion);
  w.tag("CONFIG");
  w.str(config_to_json(config));
  w.str(config_hash(config));
  w.tag("STATE");
  w.u64(state.step);
  w.str(state.rng_state);
  w.f64(state.initial_loss);
  w.u64(state.epoch_steps);
  w.f64(state.epoch_seen);
  w.f64(state.epoch_unseen);
  w.u64(state.adam.step);
  w.tag("LOG");
  w.u32(static_cast<std::uint32_t>(state.log.size()));
  for (const auto& e : state.log) {
    w.u64(e.epoch);
    w.u64(e.steps);
    w.f64(e.loss_seen);
    w.f64(e.loss_unseen);
    w.f64(e.loss);
  }
  w.tag("PARAMS");
  const auto params = state.model.collect();
  const bool moments = !state.adam.m.empty();
  w.u32(static_cast<std::uint32_t>(params.size()));
  w.u32(moments ? 1 : 0);
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Tensor& t = *params[i].second;
    w.str(params[i].first);
    w.u32(static_cast<std::uint32_t>(t.rank()));
    for (std::size_t a = 0; a < t.rank(); ++a) w.u32(static_cast<std::uint32_t>(t.dim(a)));
    w.f64s(t.values());
    if (moments) {
      w.f64s(state.adam.m[i]);
      w.f64s(state.adam.v[i]);
    }
  }
  return w.finish();
}

std::pair<RunConfig, TrainingState> deserialize_checkpoint(std::span<const std::uint8_t> bytes) {
  BinaryReader r(bytes, "checkpoint");
  if (r.raw(4) != "ZS3C") throw FormatError("checkpoint: bad magic at byte offset 0");
  const auto version = r.u16();
  if (version != kCheckpointFormatVersion) r.fail("unsupported format version " + std::to_string(version));
  r.expect_tag("CONFIG");
  const RunConfig config = config_from_json(r.str());
  const std::string hash = r.str();
  if (hash != config_hash(config)) r.fail("config hash mismatch");
  TrainingState st;
  st.model = init_model(config);
  r.expect_tag("STATE");
  st.step = r.u64();
  st.rng_state = r.str();
  st.initial_loss = r.f64();
  st.epoch_steps = r.u64();
  st.epoch_seen = r.f64();
  st.epoch_unseen = r.f64();
  st.adam.step = r.u64();
  r.expect_tag("LOG");
  const std::size_t entries = r.u32();
  for (std::size_t i = 0; i < entries; ++i) {
    EpochLog e;
    e.epoch = r.u64();
    e.steps = r.u64();
    e.loss_seen = r.f64();
    e.loss_unseen = r.f64();
    e.loss = r.f64();
    st.log.push_back(e);
  }
  r.expect_tag("PARAMS");
  ParamList params = st.model.collect();
  const std::size_t count = r.u32();
  const bool moments = r.u32() != 0;
  if (count != params.size()) {
    r.fail("parameter count " + std::to_string(count) + " differs from the model's " + std::to_string(params.size()));
  }
  for (auto& [name, t] : params) {
    const std::string got = r.str();
    if (got != name) r.fail("expected parameter '" + name + "', found '" + got + "'");
    Shape shape(r.u32());
    for (auto& e : shape) e = r.u32();
    if (shape != t->shape()) r.fail("shape mismatch for '" + name + "'");
    *t = Tensor(shape, r.f64s(shape_numel(shape)));
    if (moments) {
      st.adam.m.push_back(r.f64s(t->numel()));
      st.adam.v.push_back(r.f64s(t->numel()));
    }
  }
  r.expect_end();
  return {config, std::move(st)};
}

void save_checkpoint(const std::filesystem::path& path, const RunConfig& config, const TrainingState& state) {
  write_file(path, serialize_checkpoint(config, state));
}

std::pair<RunConfig, TrainingState> load_checkpoint(const std::filesystem::path& path) {
  return deserialize_checkpoint(read_file(path));
}

EvalReport evaluate(const ModelState& model, std::span<const Scene> scenes, const ClassVocabulary& vocab,
                    std::uint64_t seed, const std::string& config_hash) {
  if (scenes.empty()) throw std::invalid_argument("evaluate: empty dataset");
  ConfusionMatrix cm(vocab.size());
  for (const Scene& s : scenes) {
    const PreparedScene prep = prepare_scene(s);
    const ForwardResult fr = forward_scene(model, prep, vocab.embeddings());
    const auto pred = predict(scene_similarity(model, fr));
    cm.accumulate(s.ground_truth(), pred);
  }
  return make_report(vocab.names(), vocab.seen_mask(), std::move(cm), seed, config_hash);
}

EvalReport evaluate_oracle(std::span<const Scene> scenes, const ClassVocabulary& vocab, std::uint64_t seed,
                           const std::string& config_hash) {
  if (scenes.empty()) throw std::invalid_argument("evaluate: empty dataset");
  ConfusionMatrix cm(vocab.size());
  for (const Scene& s : scenes) {
    const auto& y = s.ground_truth();
    cm.accumulate(y, y);
  }
  return make_report(vocab.names(), vocab.seen_mask(), std::move(cm), seed, config_hash);
}

}  // namespace zsseg
