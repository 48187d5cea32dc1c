// SPDX-License-Identifier: Apache-2.0
#include "zsseg/semantic.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "zsseg/format.hpp"
#include "zsseg/rng.hpp"

namespace zsseg {

ClassVocabulary::ClassVocabulary(std::vector<std::string> names, std::vector<bool> seen, Tensor embeddings)
    : names_(std::move(names)), seen_(std::move(seen)), embeddings_(std::move(embeddings)) {
  if (names_.size() != seen_.size()) throw std::invalid_argument("vocabulary: names and seen mask differ in length");
  if (embeddings_.rank() != 2 || embeddings_.dim(0) != names_.size()) {
    throw std::invalid_argument("vocabulary: embeddings " + shape_str(embeddings_.shape()) + " do not match " +
                                std::to_string(names_.size()) + " classes");
  }
  std::set<std::string> unique;
  for (const auto& n : names_) {
    if (!unique.insert(normalize_class_name(n)).second) throw std::invalid_argument("vocabulary: duplicate class " + n);
  }
  for (double v : embeddings_.values()) {
    if (!std::isfinite(v)) throw std::invalid_argument("vocabulary: non-finite embedding value");
  }
}

std::vector<std::size_t> ClassVocabulary::seen_classes() const {
  std::vector<std::size_t> out;
  for (std::size_t c = 0; c < seen_.size(); ++c) {
    if (seen_[c]) out.push_back(c);
  }
  return out;
}

std::vector<std::size_t> ClassVocabulary::unseen_classes() const {
  std::vector<std::size_t> out;
  for (std::size_t c = 0; c < seen_.size(); ++c) {
    if (!seen_[c]) out.push_back(c);
  }
  return out;
}

ClassVocabulary ClassVocabulary::permuted(const std::vector<std::size_t>& order) const {
  std::vector<std::string> names;
  std::vector<bool> seen;
  for (std::size_t c : order) {
    names.push_back(names_.at(c));
    seen.push_back(seen_.at(c));
  }
  return ClassVocabulary(std::move(names), std::move(seen), take(embeddings_, 0, order));
}

std::string normalize_class_name(std::string_view name) {
  std::string out;
  out.reserve(name.size());
  for (char ch : trim(name)) {
    if (ch == ' ' || ch == '_') {
      out.push_back('-');
    } else {
      out.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
    }
  }
  return out;
}

Tensor load_embeddings(const std::filesystem::path& path, const std::vector<std::string>& names) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open embedding file " + path.string());
  std::map<std::string, std::vector<double>> rows;
  std::size_t dim = 0;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto fields = split_ws(line);
    if (fields.empty()) continue;
    if (fields.size() < 2) {
      throw FormatError(path.string() + ":" + std::to_string(lineno) + ": record has no values");
    }
    std::vector<double> v;
    v.reserve(fields.size() - 1);
    for (std::size_t i = 1; i < fields.size(); ++i) v.push_back(parse_double(fields[i]));
    if (dim == 0) dim = v.size();
    if (v.size() != dim) {
      throw FormatError(path.string() + ":" + std::to_string(lineno) + ": expected " + std::to_string(dim) +
                        " values, found " + std::to_string(v.size()));
    }
    rows[normalize_class_name(fields[0])] = std::move(v);
  }
  std::vector<std::string> missing;
  for (const auto& n : names) {
    if (!rows.count(normalize_class_name(n))) missing.push_back(n);
  }
  if (!missing.empty()) {
    std::string msg = "embedding file " + path.string() + " lacks classes:";
    for (const auto& m : missing) msg += " " + m;
    throw std::runtime_error(msg);
  }
  std::vector<double> data;
  data.reserve(names.size() * dim);
  for (const auto& n : names) {
    const auto& r = rows[normalize_class_name(n)];
    data.insert(data.end(), r.begin(), r.end());
  }
  return Tensor({names.size(), dim}, std::move(data));
}

void save_embeddings(const std::filesystem::path& path, const std::vector<std::string>& names, const Tensor& embeddings) {
  if (embeddings.rank() != 2 || embeddings.dim(0) != names.size()) {
    throw DimensionError("save_embeddings: shape " + shape_str(embeddings.shape()) + " for " +
                         std::to_string(names.size()) + " names");
  }
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write embedding file " + path.string());
  const std::size_t d = embeddings.dim(1);
  for (std::size_t c = 0; c < names.size(); ++c) {
    out << normalize_class_name(names[c]);
    for (std::size_t j = 0; j < d; ++j) out << ' ' << format_double(embeddings.values()[c * d + j]);
    out << '\n';
  }
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

std::vector<VocabularyEntry> load_vocabulary_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open vocabulary file " + path.string());
  std::vector<VocabularyEntry> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string_view l = trim(line);
    if (l.empty()) continue;
    const auto comma = l.rfind(',');
    if (comma == std::string_view::npos) {
      throw FormatError(path.string() + ":" + std::to_string(lineno) + ": expected name,seen|unseen");
    }
    const std::string_view tag = trim(l.substr(comma + 1));
    VocabularyEntry e{std::string(trim(l.substr(0, comma))), true};
    if (tag == "seen") {
      e.seen = true;
    } else if (tag == "unseen") {
      e.seen = false;
    } else {
      throw FormatError(path.string() + ":" + std::to_string(lineno) + ": unknown split '" + std::string(tag) + "'");
    }
    out.push_back(std::move(e));
  }
  return out;
}

void save_vocabulary_file(const std::filesystem::path& path, const ClassVocabulary& vocab) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write vocabulary file " + path.string());
  for (std::size_t c = 0; c < vocab.size(); ++c) {
    out << vocab.names()[c] << ',' << (vocab.is_seen(c) ? "seen" : "unseen") << '\n';
  }
}

ClassVocabulary load_vocabulary(const std::filesystem::path& vocab_path, const std::filesystem::path& embedding_path) {
  const auto entries = load_vocabulary_file(vocab_path);
  std::vector<std::string> names;
  std::vector<bool> seen;
  for (const auto& e : entries) {
    names.push_back(e.name);
    seen.push_back(e.seen);
  }
  Tensor emb = load_embeddings(embedding_path, names);
  return ClassVocabulary(std::move(names), std::move(seen), std::move(emb));
}

void save_vocabulary(const ClassVocabulary& vocab, const std::filesystem::path& vocab_path,
                     const std::filesystem::path& embedding_path) {
  save_vocabulary_file(vocab_path, vocab);
  save_embeddings(embedding_path, vocab.names(), vocab.embeddings());
}

namespace {

void normalize_row(std::vector<double>& v) {
  double n = 0.0;
  for (double x : v) n += x * x;
  n = std::sqrt(n);
  for (double& x : v) x /= n;
}

double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

}  // namespace

Tensor synth_embeddings(std::size_t num_classes, std::size_t dim, std::uint64_t seed, std::size_t latent_rank) {
  if (num_classes == 0 || dim == 0) throw std::invalid_argument("synth_embeddings: sizes must be positive");
  Rng rng(mix_seed(seed, 0x5e3a));
  const std::size_t rank = latent_rank == 0 ? dim : std::min(latent_rank, dim);
  if (rank == 1 && num_classes > 2) {
    throw std::invalid_argument("synth_embeddings: rank 1 cannot hold more than two distinct directions");
  }

  // Orthonormal basis of the latent subspace (Gram-Schmidt on Gaussian draws).
  std::vector<std::vector<double>> basis;
  if (rank < dim) {
    while (basis.size() < rank) {
      std::vector<double> v(dim);
      for (double& x : v) x = rng.normal();
      for (const auto& b : basis) {
        const double p = dot(v, b);
        for (std::size_t i = 0; i < dim; ++i) v[i] -= p * b[i];
      }
      normalize_row(v);
      basis.push_back(std::move(v));
    }
  }

  std::vector<std::vector<double>> rows;
  constexpr double kMaxCosine = 0.95;
  std::size_t attempts = 0;
  while (rows.size() < num_classes) {
    if (++attempts > 100000) throw std::runtime_error("synth_embeddings: cannot separate rows; raise the rank");
    std::vector<double> v(dim, 0.0);
    if (rank == dim) {
      for (double& x : v) x = rng.normal();
    } else {
      for (const auto& b : basis) {
        const double z = rng.normal();
        for (std::size_t i = 0; i < dim; ++i) v[i] += z * b[i];
      }
    }
    normalize_row(v);
    bool ok = true;
    for (const auto& r : rows) ok = ok && dot(v, r) < kMaxCosine;
    if (ok) rows.push_back(std::move(v));
  }
  std::vector<double> data;
  data.reserve(num_classes * dim);
  for (const auto& r : rows) data.insert(data.end(), r.begin(), r.end());
  return Tensor({num_classes, dim}, std::move(data));
}

SemanticHead init_semantic_head(std::size_t embedding_dim, Rng& rng, std::size_t hidden, std::size_t out) {
  return SemanticHead{init_mlp({embedding_dim, hidden, out}, rng)};
}

Tensor semantic_forward(const SemanticHead& head, const Tensor& embeddings) {
  if (embeddings.rank() != 2 || embeddings.dim(1) != head.g.in_dim()) {
    throw DimensionError("semantic_forward: embeddings " + shape_str(embeddings.shape()) + " vs head input " +
                         std::to_string(head.g.in_dim()));
  }
  return mlp(head.g, embeddings);
}

}  // namespace zsseg
