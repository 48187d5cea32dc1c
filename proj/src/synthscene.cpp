// SPDX-License-Identifier: Apache-2.0
#include "zsseg/synthscene.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <numbers>
#include <stdexcept>

#include "zsseg/alignment.hpp"
#include "zsseg/binio.hpp"
#include "zsseg/format.hpp"
#include "zsseg/rng.hpp"

namespace zsseg {

namespace {

using Vec = std::vector<double>;

double dot(const Vec& a, const Vec& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

void normalize(Vec& v) {
  const double n = std::sqrt(dot(v, v));
  if (n == 0.0) throw std::runtime_error("synthscene: degenerate zero vector");
  for (double& x : v) x /= n;
}

Vec gaussian(Rng& rng, std::size_t n) {
  Vec v(n);
  for (double& x : v) x = rng.normal();
  return v;
}

// Gram-Schmidt; rows beyond the dimension are left as scaled Gaussians.
std::vector<Vec> orthonormal_rows(Rng& rng, std::size_t rows, std::size_t dim) {
  std::vector<Vec> out;
  while (out.size() < rows) {
    Vec v = gaussian(rng, dim);
    if (out.size() < dim) {
      for (const auto& b : out) {
        const double p = dot(v, b);
        for (std::size_t i = 0; i < dim; ++i) v[i] -= p * b[i];
      }
      normalize(v);
    } else {
      for (double& x : v) x /= std::sqrt(static_cast<double>(dim));
    }
    out.push_back(std::move(v));
  }
  return out;
}

std::atomic<std::uint64_t> g_truth_reads{0};

}  // namespace

std::size_t SceneSpec::geometry_source(std::size_t c) const {
  for (const auto& [a, b] : image_only_pairs) {
    if (b == c) return a;
  }
  return c;
}

std::vector<double> SceneSpec::attribute_signature(std::size_t c) const {
  const std::size_t src = geometry_source(c);
  const std::size_t dw = embeddings.dim(1);
  Vec out(attr_channels, 0.0);
  for (std::size_t j = 0; j < attr_channels; ++j) {
    for (std::size_t i = 0; i < dw; ++i) out[j] += coupling.at(j, i) * embeddings.at(src, i);
  }
  return out;
}

std::vector<double> SceneSpec::appearance_signature(std::size_t c) const {
  const std::size_t dw = embeddings.dim(1);
  Vec out(image_channels, 0.0);
  for (std::size_t j = 0; j < image_channels; ++j) {
    for (std::size_t i = 0; i < dw; ++i) out[j] += coupling.at(attr_channels + j, i) * embeddings.at(c, i);
  }
  return out;
}

std::array<double, 3> SceneSpec::spread(std::size_t c) const {
  const std::size_t src = geometry_source(c);
  const std::size_t dw = embeddings.dim(1);
  std::array<double, 3> out{};
  for (std::size_t j = 0; j < 3; ++j) {
    double logit = 0.0;
    for (std::size_t i = 0; i < dw; ++i) logit += coupling.at(attr_channels + image_channels + j, i) * embeddings.at(src, i);
    out[j] = object_extent * (0.5 + 1.0 / (1.0 + std::exp(-logit)));
  }
  return out;
}

ClassVocabulary SceneSpec::vocabulary() const { return ClassVocabulary(class_names, seen, embeddings); }

void SceneSpec::validate() const {
  const std::size_t c = class_names.size();
  if (c == 0) throw std::invalid_argument("scene spec: no classes");
  if (seen.size() != c) throw std::invalid_argument("scene spec: seen mask size does not match class count");
  if (image_height == 0 || image_width == 0 || image_channels == 0) {
    throw std::invalid_argument("scene spec: image extents must be positive");
  }
  if (points_min == 0 || points_min > points_max) throw std::invalid_argument("scene spec: bad points-per-class range");
  if (!(range_min > 0.0) || range_min > range_max) throw std::invalid_argument("scene spec: bad range interval");
  if (sigma_geometry < 0.0 || sigma_image < 0.0 || object_extent < 0.0) {
    throw std::invalid_argument("scene spec: noise scales and extent must be non-negative");
  }
  if (embeddings.rank() != 2 || embeddings.dim(0) != c) throw std::invalid_argument("scene spec: embeddings shape");
  if (coupling.rank() != 2 || coupling.dim(0) != attr_channels + image_channels + 3 ||
      coupling.dim(1) != embeddings.dim(1)) {
    throw std::invalid_argument("scene spec: coupling shape " + shape_str(coupling.shape()));
  }
  for (const auto& [a, b] : image_only_pairs) {
    if (a >= c || b >= c || a == b) throw std::invalid_argument("scene spec: bad image-only pair");
  }
  camera.validate();
  if (camera.width != image_width || camera.height != image_height) {
    throw std::invalid_argument("scene spec: camera size differs from image size");
  }
}

SceneSpec make_scene_spec(const SceneSettings& s) {
  const std::size_t c = s.class_names.size();
  const std::size_t dw = s.embedding_dim;
  const std::size_t r = s.latent_rank == 0 ? dw : std::min(s.latent_rank, dw);
  if (c == 0 || dw == 0) throw std::invalid_argument("scene settings: need classes and an embedding dimension");

  SceneSpec spec;
  spec.class_names = s.class_names;
  spec.seen.assign(c, true);
  for (std::size_t u : s.unseen) {
    if (u >= c) throw std::invalid_argument("scene settings: unseen class index " + std::to_string(u) + " out of range");
    spec.seen[u] = false;
  }
  spec.image_only_pairs = s.image_only_pairs;
  spec.points_min = s.points_min;
  spec.points_max = s.points_max;
  spec.attr_channels = s.attr_channels;
  spec.image_height = s.image_height;
  spec.image_width = s.image_width;
  spec.image_channels = s.image_channels;
  spec.sigma_geometry = s.sigma_geometry;
  spec.sigma_image = s.sigma_image;
  spec.object_extent = s.object_extent;
  spec.range_min = s.range_min;
  spec.range_max = s.range_max;
  spec.azimuth_extent_deg = s.azimuth_extent_deg;

  CameraModel& cam = spec.camera;
  cam.fx = cam.fy = s.focal;
  cam.width = s.image_width;
  cam.height = s.image_height;
  cam.cx = static_cast<double>(s.image_width) / 2.0;
  cam.cy = static_cast<double>(s.image_height) / 2.0;
  // LiDAR x forward, y left, z up; camera x right, y down, z forward.
  cam.extrinsics = {0, -1, 0, 0, 0, 0, -1, 0, 1, 0, 0, 0, 0, 0, 0, 1};

  Rng rng(mix_seed(s.world_seed, 0x11));
  const std::vector<Vec> basis = orthonormal_rows(rng, r, dw);

  // Latent class codes; the second member of a pair leans toward the first.
  constexpr double kMaxCosine = 0.9;
  constexpr double kMaxPairCosine = 0.95;
  std::vector<Vec> z;
  for (int attempt = 0;; ++attempt) {
    if (attempt == 10000) throw std::runtime_error("scene settings: cannot separate class codes; raise latent_rank");
    z.assign(c, Vec{});
    for (std::size_t k = 0; k < c; ++k) {
      z[k] = gaussian(rng, r);
      normalize(z[k]);
    }
    for (const auto& [a, b] : s.image_only_pairs) {
      if (a >= c || b >= c) throw std::invalid_argument("scene settings: image-only pair out of range");
      for (std::size_t i = 0; i < r; ++i) z[b][i] = s.pair_mix * z[a][i] + (1.0 - s.pair_mix) * z[b][i];
      normalize(z[b]);
    }
    bool ok = true;
    for (std::size_t i = 0; i < c && ok; ++i) {
      for (std::size_t j = i + 1; j < c && ok; ++j) {
        const bool paired = std::ranges::any_of(s.image_only_pairs, [&](const auto& p) {
          return (p.first == i && p.second == j) || (p.first == j && p.second == i);
        });
        ok = dot(z[i], z[j]) < (paired ? kMaxPairCosine : kMaxCosine);
      }
    }
    if (ok) break;
  }
  Vec emb(c * dw, 0.0);
  for (std::size_t k = 0; k < c; ++k) {
    for (std::size_t l = 0; l < r; ++l) {
      for (std::size_t i = 0; i < dw; ++i) emb[k * dw + i] += z[k][l] * basis[l][i];
    }
  }
  spec.embeddings = Tensor({c, dw}, std::move(emb));

  // Coupling = M * basis, with M orthonormal rows (scaled) where possible so
  // distances between class codes survive into attribute/appearance space.
  const std::size_t rows = s.attr_channels + s.image_channels + 3;
  Vec coupling(rows * dw, 0.0);
  auto add_block = [&](std::size_t first, std::size_t count, double scale) {
    const auto m = orthonormal_rows(rng, count, r);
    for (std::size_t j = 0; j < count; ++j) {
      for (std::size_t l = 0; l < r; ++l) {
        for (std::size_t i = 0; i < dw; ++i) coupling[(first + j) * dw + i] += scale * m[j][l] * basis[l][i];
      }
    }
  };
  add_block(0, s.attr_channels, s.attr_scale);
  add_block(s.attr_channels, s.image_channels, s.appearance_scale);
  add_block(s.attr_channels + s.image_channels, 3, 1.0);
  spec.coupling = Tensor({rows, dw}, std::move(coupling));
  spec.validate();
  return spec;
}

const std::vector<std::int32_t>& Scene::ground_truth() const {
  g_truth_reads.fetch_add(1, std::memory_order_relaxed);
  return labels_;
}

void Scene::set_ground_truth(std::vector<std::int32_t> labels) { labels_ = std::move(labels); }

std::uint64_t ground_truth_reads() { return g_truth_reads.load(); }
void reset_ground_truth_reads() { g_truth_reads.store(0); }

bool operator==(const Scene& a, const Scene& b) {
  auto same = [](const Tensor& x, const Tensor& y) {
    return x.shape() == y.shape() && std::ranges::equal(x.values(), y.values());
  };
  const CameraModel& p = a.camera;
  const CameraModel& q = b.camera;
  return same(a.points, b.points) && same(a.attrs, b.attrs) && same(a.image, b.image) && p.fx == q.fx &&
         p.fy == q.fy && p.cx == q.cx && p.cy == q.cy && p.extrinsics == q.extrinsics && p.width == q.width &&
         p.height == q.height && a.train_labels == b.train_labels && a.labels_ == b.labels_;
}

std::vector<std::int32_t> mask_unseen(std::span<const std::int32_t> labels, const std::vector<bool>& seen) {
  std::vector<std::int32_t> out(labels.begin(), labels.end());
  for (auto& y : out) {
    if (y >= 0 && !seen.at(static_cast<std::size_t>(y))) y = kUnlabeled;
  }
  return out;
}

namespace {

Scene attempt_scene(const SceneSpec& spec, const CameraModel& cam, Rng& rng) {
  const std::size_t c = spec.num_classes();
  const std::size_t k = spec.attr_channels;
  const double ext = spec.azimuth_extent_deg * std::numbers::pi / 180.0;
  const auto slots = rng.permutation(c);

  Vec pts;
  Vec attrs;
  std::vector<std::int32_t> labels;
  for (std::size_t cls = 0; cls < c; ++cls) {
    const double theta =
        c == 1 ? 0.0 : -ext + 2.0 * ext * static_cast<double>(slots[cls]) / static_cast<double>(c - 1);
    const double range = rng.uniform(spec.range_min, spec.range_max);
    const double center[3] = {range * std::cos(theta), range * std::sin(theta),
                              spec.object_extent * rng.uniform(-0.5, 0.5)};
    const auto spread = spec.spread(cls);
    const auto sig = spec.attribute_signature(cls);
    const std::size_t n = spec.points_min + rng.below(spec.points_max - spec.points_min + 1);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t a = 0; a < 3; ++a) {
        const double shape = spread[a] * rng.normal();
        pts.push_back(center[a] + shape + spec.sigma_geometry * rng.normal());
      }
      for (std::size_t j = 0; j < k; ++j) attrs.push_back(sig[j] + spec.sigma_geometry * rng.normal());
      labels.push_back(static_cast<std::int32_t>(cls));
    }
  }

  const std::size_t t = labels.size();
  const auto order = rng.permutation(t);
  Scene scene;
  Vec p2(t * 3);
  Vec a2(t * k);
  std::vector<std::int32_t> l2(t);
  for (std::size_t i = 0; i < t; ++i) {
    std::copy_n(pts.begin() + static_cast<std::ptrdiff_t>(order[i] * 3), 3, p2.begin() + static_cast<std::ptrdiff_t>(i * 3));
    std::copy_n(attrs.begin() + static_cast<std::ptrdiff_t>(order[i] * k), k, a2.begin() + static_cast<std::ptrdiff_t>(i * k));
    l2[i] = labels[order[i]];
  }
  scene.points = Tensor({t, 3}, std::move(p2));
  scene.attrs = Tensor({t, k}, std::move(a2));
  scene.camera = cam;

  // Splat each visible point's appearance over its 3x3 pixel neighbourhood,
  // average overlapping contributions, then add background noise everywhere.
  const std::size_t h = spec.image_height;
  const std::size_t w = spec.image_width;
  const std::size_t ch = spec.image_channels;
  std::vector<Vec> appearance(c);
  for (std::size_t cls = 0; cls < c; ++cls) appearance[cls] = spec.appearance_signature(cls);
  Vec img(h * w * ch, 0.0);
  std::vector<std::size_t> hits(h * w, 0);
  const ProjectionResult proj = project_points(scene.points, cam);
  for (std::size_t i = 0; i < t; ++i) {
    if (!proj.valid[i]) continue;
    const auto col = static_cast<std::ptrdiff_t>(std::lround(proj.u[i]));
    const auto row = static_cast<std::ptrdiff_t>(std::lround(proj.v[i]));
    for (std::ptrdiff_t dr = -1; dr <= 1; ++dr) {
      for (std::ptrdiff_t dc = -1; dc <= 1; ++dc) {
        const std::ptrdiff_t rr = row + dr;
        const std::ptrdiff_t cc = col + dc;
        if (rr < 0 || cc < 0 || rr >= static_cast<std::ptrdiff_t>(h) || cc >= static_cast<std::ptrdiff_t>(w)) continue;
        const auto px = static_cast<std::size_t>(rr) * w + static_cast<std::size_t>(cc);
        ++hits[px];
        for (std::size_t j = 0; j < ch; ++j) img[px * ch + j] += appearance[static_cast<std::size_t>(l2[i])][j];
      }
    }
  }
  for (std::size_t px = 0; px < h * w; ++px) {
    for (std::size_t j = 0; j < ch; ++j) {
      double& v = img[px * ch + j];
      if (hits[px] > 0) v /= static_cast<double>(hits[px]);
      v += spec.sigma_image * rng.normal();
    }
  }
  scene.image = Tensor({h, w, ch}, std::move(img));
  scene.train_labels = mask_unseen(l2, spec.seen);
  scene.set_ground_truth(std::move(l2));
  return scene;
}

}  // namespace

Scene generate_scene(const SceneSpec& spec, std::uint64_t seed) {
  spec.validate();
  Rng rng(mix_seed(seed, 0x5c3e));
  CameraModel cam = spec.camera;
  constexpr int kAttempts = 8;
  for (int attempt = 0; attempt < kAttempts; ++attempt) {
    Scene scene = attempt_scene(spec, cam, rng);
    if (project_points(scene.points, cam).valid_count() > 0) return scene;
    cam.fx *= 0.8;
    cam.fy *= 0.8;
  }
  throw std::runtime_error("generate_scene: camera sees no point after " + std::to_string(kAttempts) +
                           " attempts with widened field of view");
}

std::vector<Scene> dataset(const SceneSpec& spec, std::size_t n_scenes, std::uint64_t seed) {
  std::vector<Scene> out;
  out.reserve(n_scenes);
  for (std::size_t i = 0; i < n_scenes; ++i) out.push_back(generate_scene(spec, seed ^ i));
  return out;
}

std::vector<std::uint8_t> serialize_scene(const Scene& scene) {
  const std::size_t t = scene.points.dim(0);
  BinaryWriter w;
  w.raw("ZS3S");
  w.u16(kSceneFormatVersion);
  w.tag("POINTS");
  w.u32(static_cast<std::uint32_t>(t));
  w.f64s(scene.points.values());
  w.tag("ATTRS");
  w.u32(static_cast<std::uint32_t>(scene.attrs.dim(0)));
  w.u32(static_cast<std::uint32_t>(scene.attrs.dim(1)));
  w.f64s(scene.attrs.values());
  w.tag("IMAGE");
  for (std::size_t a = 0; a < 3; ++a) w.u32(static_cast<std::uint32_t>(scene.image.dim(a)));
  w.f64s(scene.image.values());
  w.tag("CAM");
  const CameraModel& cam = scene.camera;
  w.f64(cam.fx);
  w.f64(cam.fy);
  w.f64(cam.cx);
  w.f64(cam.cy);
  w.f64s(cam.extrinsics);
  w.u32(static_cast<std::uint32_t>(cam.width));
  w.u32(static_cast<std::uint32_t>(cam.height));
  w.tag("LABELS");
  w.u32(static_cast<std::uint32_t>(scene.labels_.size()));
  for (auto y : scene.labels_) w.i32(y);
  w.tag("TRAINLBL");
  w.u32(static_cast<std::uint32_t>(scene.train_labels.size()));
  for (auto y : scene.train_labels) w.i32(y);
  return w.finish();
}

Scene deserialize_scene(std::span<const std::uint8_t> bytes) {
  BinaryReader r(bytes, "scene");
  if (r.raw(4) != "ZS3S") {
    throw FormatError("scene: bad magic at byte offset 0");
  }
  const auto version = r.u16();
  if (version != kSceneFormatVersion) r.fail("unsupported format version " + std::to_string(version));
  Scene s;
  r.expect_tag("POINTS");
  const std::size_t t = r.u32();
  s.points = Tensor({t, 3}, r.f64s(t * 3));
  r.expect_tag("ATTRS");
  const std::size_t ta = r.u32();
  const std::size_t k = r.u32();
  if (ta != t) r.fail("attribute rows " + std::to_string(ta) + " differ from point count " + std::to_string(t));
  s.attrs = Tensor({t, k}, r.f64s(t * k));
  r.expect_tag("IMAGE");
  const std::size_t h = r.u32();
  const std::size_t w = r.u32();
  const std::size_t c = r.u32();
  s.image = Tensor({h, w, c}, r.f64s(h * w * c));
  r.expect_tag("CAM");
  s.camera.fx = r.f64();
  s.camera.fy = r.f64();
  s.camera.cx = r.f64();
  s.camera.cy = r.f64();
  for (double& e : s.camera.extrinsics) e = r.f64();
  s.camera.width = r.u32();
  s.camera.height = r.u32();
  auto read_labels = [&](const char* tag) {
    r.expect_tag(tag);
    const std::size_t n = r.u32();
    if (n != t) r.fail(std::string(tag) + " count " + std::to_string(n) + " differs from point count");
    std::vector<std::int32_t> out(n);
    for (auto& y : out) y = r.i32();
    return out;
  };
  s.set_ground_truth(read_labels("LABELS"));
  s.train_labels = read_labels("TRAINLBL");
  r.expect_end();
  return s;
}

void save_scene(const Scene& scene, const std::filesystem::path& path) { write_file(path, serialize_scene(scene)); }

Scene load_scene(const std::filesystem::path& path) { return deserialize_scene(read_file(path)); }

}  // namespace zsseg
