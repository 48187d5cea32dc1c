#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <map>
#include <set>

#include "doctest.h"
#include "zsseg/alignment.hpp"
#include "zsseg/binio.hpp"
#include "zsseg/format.hpp"
#include "zsseg/synthscene.hpp"

using namespace zsseg;
namespace fs = std::filesystem;

namespace {

SceneSettings small_settings() {
  SceneSettings s;
  s.class_names = {"car", "pole", "truck"};
  s.unseen = {2};
  s.image_only_pairs = {{0, 2}};
  s.points_min = 4;
  s.points_max = 6;
  s.attr_channels = 2;
  s.image_height = 6;
  s.image_width = 8;
  s.image_channels = 2;
  s.focal = 5.0;
  s.embedding_dim = 16;
  s.latent_rank = 3;
  return s;
}

std::string digest(const Scene& s) {
  const auto b = serialize_scene(s);
  return hex64(fnv1a(std::string_view(reinterpret_cast<const char*>(b.data()), b.size())));
}

}  // namespace

TEST_CASE("noiseless single point on the optical axis") {
  SceneSettings s = small_settings();
  s.class_names = {"car"};
  s.unseen = {};
  s.image_only_pairs = {};
  s.points_min = s.points_max = 1;
  s.sigma_geometry = s.sigma_image = 0.0;
  s.object_extent = 0.0;
  const SceneSpec spec = make_scene_spec(s);
  const Scene scene = generate_scene(spec, 5);
  REQUIRE(scene.size() == 1);
  CHECK(scene.points.at(0, 1) == 0.0);
  CHECK(scene.points.at(0, 2) == 0.0);
  const auto sig = spec.attribute_signature(0);
  for (std::size_t j = 0; j < 2; ++j) CHECK(scene.attrs.at(0, j) == sig[j]);
  const auto app = spec.appearance_signature(0);
  const std::size_t cx = 4, cy = 3;
  for (std::size_t r = 0; r < 6; ++r) {
    for (std::size_t c = 0; c < 8; ++c) {
      const bool near = (r + 1 >= cy && r <= cy + 1) && (c + 1 >= cx && c <= cx + 1);
      for (std::size_t j = 0; j < 2; ++j) CHECK(scene.image[(r * 8 + c) * 2 + j] == (near ? app[j] : 0.0));
    }
  }
}

TEST_CASE("determinism and dataset seeding") {
  const SceneSpec spec = make_scene_spec(small_settings());
  CHECK(serialize_scene(generate_scene(spec, 9)) == serialize_scene(generate_scene(spec, 9)));
  const auto ds = dataset(spec, 4, 100);
  CHECK(ds.size() == 4);
  CHECK(dataset(spec, 0, 100).empty());
  std::set<std::string> hashes;
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(ds[i] == generate_scene(spec, 100 ^ i));
    hashes.insert(digest(ds[i]));
  }
  CHECK(hashes.size() == 4);
  const auto again = dataset(spec, 4, 100);
  for (std::size_t i = 0; i < 4; ++i) CHECK(again[i] == ds[i]);
}

TEST_CASE("labels and counts") {
  const SceneSettings st;
  const SceneSpec spec = make_scene_spec(st);
  for (const Scene& s : dataset(spec, 3, 77)) {
    const auto& gt = s.ground_truth();
    std::map<std::int32_t, std::size_t> counts;
    for (std::size_t i = 0; i < gt.size(); ++i) {
      REQUIRE(gt[i] >= 0);
      REQUIRE(gt[i] < 8);
      ++counts[gt[i]];
      if (spec.seen[static_cast<std::size_t>(gt[i])]) {
        CHECK(s.train_labels[i] == gt[i]);
      } else {
        CHECK(s.train_labels[i] == kUnlabeled);
      }
    }
    CHECK(counts.size() == 8);
    for (auto [c, n] : counts) {
      CHECK(n >= st.points_min);
      CHECK(n <= st.points_max);
    }
  }
}

TEST_CASE("image-only pairs share geometry and attributes") {
  const SceneSpec spec = make_scene_spec(SceneSettings{});
  for (const auto& [a, b] : spec.image_only_pairs) {
    CHECK(spec.attribute_signature(a) == spec.attribute_signature(b));
    CHECK(spec.spread(a) == spec.spread(b));
    CHECK(spec.appearance_signature(a) != spec.appearance_signature(b));
  }
}

TEST_CASE("pair separability with and without the image") {
  // Nearest-prototype oracle. Without the image both members of a pair have
  // the same class-conditional law, so the best rule is a coin flip; with the
  // image the sampled pixel is matched to the two appearance signatures.
  const SceneSpec spec = make_scene_spec(SceneSettings{});
  for (const auto& [a, b] : spec.image_only_pairs) {
    const auto sig_a = spec.appearance_signature(a);
    const auto sig_b = spec.appearance_signature(b);
    const auto attr_a = spec.attribute_signature(a);
    const auto attr_b = spec.attribute_signature(b);
    Rng coin(31);
    std::size_t n = 0, right_geo = 0, right_img = 0;
    for (std::uint64_t seed = 0; n < 2000; ++seed) {
      const Scene s = generate_scene(spec, seed);
      const ProjectionResult proj = project_points(s.points, s.camera);
      const auto& gt = s.ground_truth();
      for (std::size_t i = 0; i < s.size() && n < 2000; ++i) {
        const auto y = static_cast<std::size_t>(gt[i]);
        if ((y != a && y != b) || !proj.valid[i]) continue;
        ++n;
        double da = 0, db = 0;
        for (std::size_t j = 0; j < spec.attr_channels; ++j) {
          da += std::pow(s.attrs.at(i, j) - attr_a[j], 2);
          db += std::pow(s.attrs.at(i, j) - attr_b[j], 2);
        }
        const std::size_t geo = da < db ? a : db < da ? b : (coin.below(2) == 0 ? a : b);
        right_geo += geo == y;
        const auto col = static_cast<std::size_t>(std::lround(proj.u[i]));
        const auto row = static_cast<std::size_t>(std::lround(proj.v[i]));
        double ia = 0, ib = 0;
        for (std::size_t j = 0; j < spec.image_channels; ++j) {
          const double v = s.image[(row * spec.image_width + col) * spec.image_channels + j];
          ia += std::pow(v - sig_a[j], 2);
          ib += std::pow(v - sig_b[j], 2);
        }
        right_img += (ia <= ib ? a : b) == y;
      }
    }
    CAPTURE(a);
    CHECK(static_cast<double>(right_geo) / n <= 0.55);
    CHECK(static_cast<double>(right_img) / n >= 0.95);
  }
}

TEST_CASE("camera retries widen the field of view") {
  SceneSettings s = small_settings();
  s.class_names = {"a", "b"};
  s.unseen = {};
  s.image_only_pairs = {};
  s.azimuth_extent_deg = 60.0;
  s.focal = 60.0;
  s.image_width = 64;
  s.image_height = 48;
  s.object_extent = 0.01;
  s.sigma_geometry = 0.0;
  const SceneSpec spec = make_scene_spec(s);
  const Scene scene = generate_scene(spec, 3);
  CHECK(scene.camera.fx < 60.0);
  CHECK(project_points(scene.points, scene.camera).valid_count() > 0);

  SceneSpec blind = make_scene_spec(small_settings());
  blind.camera.extrinsics = {0, 1, 0, 0, 0, 0, -1, 0, -1, 0, 0, 0, 0, 0, 0, 1};
  CHECK_THROWS_AS(generate_scene(blind, 1), std::runtime_error);
}

TEST_CASE("scene files") {
  const SceneSpec spec = make_scene_spec(small_settings());
  const Scene s = generate_scene(spec, 42);
  const fs::path dir = fs::temp_directory_path() / "zsseg_scene_test";
  fs::create_directories(dir);
  save_scene(s, dir / "a.zs3s");
  const Scene back = load_scene(dir / "a.zs3s");
  CHECK(back == s);
  CHECK(serialize_scene(back) == serialize_scene(s));

  const auto bytes = serialize_scene(s);
  for (std::size_t cut : {std::size_t{0}, std::size_t{3}, std::size_t{40}, bytes.size() / 2, bytes.size() - 1}) {
    const std::vector<std::uint8_t> part(bytes.begin(), bytes.begin() + static_cast<std::ptrdiff_t>(cut));
    try {
      deserialize_scene(part);
      FAIL("expected FormatError");
    } catch (const FormatError& e) {
      CHECK(std::string(e.what()).find("byte offset") != std::string::npos);
    }
  }
  auto flipped = bytes;
  flipped[100] ^= 0x10;
  CHECK_THROWS_AS(deserialize_scene(flipped), FormatError);
  auto magic = bytes;
  magic[0] = 'X';
  try {
    deserialize_scene(magic);
    FAIL("expected FormatError");
  } catch (const FormatError& e) {
    CHECK(std::string(e.what()).find("byte offset") != std::string::npos);
  }
}

TEST_CASE("golden scene file") {
  const SceneSpec spec = make_scene_spec(small_settings());
  const Scene s = generate_scene(spec, 2024);
  const fs::path golden = fs::path(ZSSEG_TEST_DATA) / "golden_scene.zs3s";
  if (std::getenv("ZSSEG_WRITE_GOLDEN") != nullptr) save_scene(s, golden);
  REQUIRE(fs::exists(golden));
  const auto bytes = read_file(golden);
  CHECK(bytes == serialize_scene(s));
  const Scene g = deserialize_scene(bytes);
  CHECK(g == s);
  // Spot values decoded from the file's little-endian layout.
  CHECK(bytes[0] == 'Z');
  CHECK(bytes[4] == 1);
  CHECK(bytes[5] == 0);
}
