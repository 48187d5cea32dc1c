#include <cmath>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "test_util.hpp"
#include "zsseg/semantic.hpp"

using namespace zsseg;
namespace fs = std::filesystem;
using zsseg::testing::random_tensor;
using zsseg::testing::readout;

namespace {

fs::path temp_dir(const std::string& name) {
  const fs::path d = fs::temp_directory_path() / ("zsseg_sem_" + name);
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

}  // namespace

TEST_CASE("embedding file with one class") {
  const fs::path d = temp_dir("one");
  {
    std::ofstream f(d / "emb.txt");
    f << "car";
    for (int i = 0; i < 600; ++i) f << " " << i * 0.001;
    f << "\n";
  }
  const Tensor e = load_embeddings(d / "emb.txt", {"car"});
  CHECK(e.shape() == Shape{1, 600});
  CHECK(e.at(0, 599) == doctest::Approx(0.599));
}

TEST_CASE("missing class names are listed") {
  const fs::path d = temp_dir("missing");
  {
    std::ofstream f(d / "emb.txt");
    f << "car 1 2 3\n";
  }
  try {
    load_embeddings(d / "emb.txt", {"car", "truck"});
    FAIL("expected an error");
  } catch (const std::exception& e) {
    CHECK(std::string(e.what()).find("truck") != std::string::npos);
  }
  {
    std::ofstream f(d / "ragged.txt");
    f << "car 1 2 3\ntruck 1 2\n";
  }
  CHECK_THROWS(load_embeddings(d / "ragged.txt", {"car", "truck"}));
}

TEST_CASE("embedding round trip") {
  const fs::path d = temp_dir("rt");
  const Tensor e = synth_embeddings(5, 600, 3);
  const std::vector<std::string> names = {"a", "b", "c", "d", "e"};
  save_embeddings(d / "emb.txt", names, e);
  CHECK(zsseg::testing::bitwise_equal(load_embeddings(d / "emb.txt", names), e));
}

TEST_CASE("synthetic embeddings") {
  const Tensor e = synth_embeddings(8, 600, 11);
  CHECK(zsseg::testing::bitwise_equal(e, synth_embeddings(8, 600, 11)));
  double max_cos = -1;
  for (std::size_t i = 0; i < 8; ++i) {
    double n = 0;
    for (std::size_t j = 0; j < 600; ++j) n += e.at(i, j) * e.at(i, j);
    CHECK(std::abs(std::sqrt(n) - 1.0) <= 1e-10);
    for (std::size_t k = i + 1; k < 8; ++k) {
      double dot = 0;
      for (std::size_t j = 0; j < 600; ++j) dot += e.at(i, j) * e.at(k, j);
      max_cos = std::max(max_cos, dot);
    }
  }
  CHECK(max_cos < 0.95);
  const Tensor low = synth_embeddings(8, 600, 11, 4);
  CHECK(low.shape() == Shape{8, 600});
}

TEST_CASE("vocabulary partition") {
  const ClassVocabulary v({"car", "truck", "pole"}, {true, false, true}, synth_embeddings(3, 10, 1));
  CHECK(v.seen_classes() == std::vector<std::size_t>{0, 2});
  CHECK(v.unseen_classes() == std::vector<std::size_t>{1});
  CHECK_THROWS(ClassVocabulary({"car", "car"}, {true, false}, synth_embeddings(2, 10, 1)));
  CHECK_THROWS(ClassVocabulary({"car"}, {true, false}, synth_embeddings(1, 10, 1)));
  Tensor bad = synth_embeddings(1, 10, 1);
  bad.mutable_values()[0] = std::nan("");
  CHECK_THROWS(ClassVocabulary({"car"}, {true}, bad));
  const ClassVocabulary p = v.permuted({2, 0, 1});
  CHECK(p.names()[0] == "pole");
  CHECK_FALSE(p.is_seen(2));
  CHECK(normalize_class_name("Traffic Sign") == "traffic-sign");
  CHECK(normalize_class_name("other_ground") == "other-ground");
}

TEST_CASE("vocabulary files round trip") {
  const fs::path d = temp_dir("vocab");
  const ClassVocabulary v({"car", "truck"}, {true, false}, synth_embeddings(2, 16, 5));
  save_vocabulary(v, d / "v.csv", d / "e.txt");
  const ClassVocabulary w = load_vocabulary(d / "v.csv", d / "e.txt");
  CHECK(w.names() == v.names());
  CHECK(w.seen_mask() == v.seen_mask());
  CHECK(zsseg::testing::bitwise_equal(w.embeddings(), v.embeddings()));
}

TEST_CASE("semantic head") {
  Rng rng(7);
  SemanticHead h = init_semantic_head(20, rng);
  for (std::size_t c : {1u, 4u, 9u}) CHECK(semantic_forward(h, random_tensor({c, 20}, c)).shape() == Shape{c, 128});
  for (auto& layer : h.g.layers) layer.weight = Tensor(layer.weight.shape());
  h.g.layers[0].bias = random_tensor({96}, 8);
  h.g.layers[1].bias = random_tensor({128}, 9);
  const Tensor y = semantic_forward(h, random_tensor({3, 20}, 10));
  for (std::size_t r = 0; r < 3; ++r) {
    for (std::size_t c = 0; c < 128; ++c) CHECK(y.at(r, c) == h.g.layers[1].bias[c]);
  }
  CHECK_THROWS_AS(semantic_forward(h, Tensor({2, 19})), DimensionError);

  Rng small(11);
  SemanticHead s = init_semantic_head(6, small, 5, 4);
  ParamList params;
  s.collect("", params);
  std::vector<Tensor> inputs = {random_tensor({3, 6}, 12)};
  for (auto& [n, t] : params) inputs.push_back(*t);
  const double err = grad_check(
      [&](std::span<const Tensor> x) {
        for (std::size_t i = 0; i < params.size(); ++i) *params[i].second = x[1 + i];
        return readout(semantic_forward(s, x[0]));
      },
      inputs);
  CHECK(err <= 1e-4);
}
