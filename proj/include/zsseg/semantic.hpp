// SPDX-License-Identifier: Apache-2.0
//
// Class vocabulary (seen/unseen partition plus one word-embedding row per
// class) and the semantic projection G: d_w -> 96 -> 128.

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "zsseg/nn.hpp"
#include "zsseg/tensor.hpp"

namespace zsseg {

class ClassVocabulary {
 public:
  ClassVocabulary() = default;
  /// Throws std::invalid_argument if names and masks disagree, a name repeats,
  /// or an embedding row is non-finite.
  ClassVocabulary(std::vector<std::string> names, std::vector<bool> seen, Tensor embeddings);

  std::size_t size() const { return names_.size(); }
  std::size_t embedding_dim() const { return embeddings_.dim(1); }
  const std::vector<std::string>& names() const { return names_; }
  const std::vector<bool>& seen_mask() const { return seen_; }
  bool is_seen(std::size_t c) const { return seen_.at(c); }
  std::vector<std::size_t> seen_classes() const;
  std::vector<std::size_t> unseen_classes() const;
  const Tensor& embeddings() const { return embeddings_; }

  /// Same classes in a new order: result class i is this class order[i].
  ClassVocabulary permuted(const std::vector<std::size_t>& order) const;

 private:
  std::vector<std::string> names_;
  std::vector<bool> seen_;
  Tensor embeddings_;  // [C, d_w]
};

/// Lowercase; spaces and underscores become hyphens.
std::string normalize_class_name(std::string_view name);

// Embedding file: one line per class, "name v1 v2 ... v_dw", single spaces.
Tensor load_embeddings(const std::filesystem::path& path, const std::vector<std::string>& names);
void save_embeddings(const std::filesystem::path& path, const std::vector<std::string>& names, const Tensor& embeddings);

// Vocabulary file: one line per class, "name,seen" or "name,unseen".
struct VocabularyEntry {
  std::string name;
  bool seen = true;
};
std::vector<VocabularyEntry> load_vocabulary_file(const std::filesystem::path& path);
void save_vocabulary_file(const std::filesystem::path& path, const ClassVocabulary& vocab);

/// Vocabulary file plus embedding file.
ClassVocabulary load_vocabulary(const std::filesystem::path& vocab_path, const std::filesystem::path& embedding_path);
void save_vocabulary(const ClassVocabulary& vocab, const std::filesystem::path& vocab_path,
                     const std::filesystem::path& embedding_path);

/// Unit-norm rows with pairwise cosine below 0.95, deterministic per seed.
/// latent_rank > 0 confines the rows to a random latent_rank-dimensional
/// subspace, so every class embedding is a linear mix of the others.
Tensor synth_embeddings(std::size_t num_classes, std::size_t dim, std::uint64_t seed, std::size_t latent_rank = 0);

struct SemanticHead {
  MlpParams g;  // d_w -> 96 -> 128
  void collect(const std::string& prefix, ParamList& out) { g.collect(prefix + "g.", out); }
};

SemanticHead init_semantic_head(std::size_t embedding_dim, Rng& rng, std::size_t hidden = 96, std::size_t out = 128);

/// F_s = G(W), one row per class.
Tensor semantic_forward(const SemanticHead& head, const Tensor& embeddings);

}  // namespace zsseg
