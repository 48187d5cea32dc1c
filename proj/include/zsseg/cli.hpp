// SPDX-License-Identifier: Apache-2.0
//
// Command-line front end: generate, train, eval, gradcheck and plot.
// Exit codes: 0 success, 1 verification failure, 2 usage or I/O error.

#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "zsseg/config.hpp"
#include "zsseg/semantic.hpp"
#include "zsseg/synthscene.hpp"

namespace zsseg {

inline constexpr int kExitOk = 0;
inline constexpr int kExitVerification = 1;
inline constexpr int kExitUsage = 2;

/// args excludes the program name.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// A directory written by `generate`.
struct DatasetDir {
  RunConfig config;
  ClassVocabulary vocab;
  std::vector<Scene> scenes;
};

/// Checks every scene against the manifest checksums.
DatasetDir load_dataset_dir(const std::filesystem::path& dir);
/// Writes config.json, the vocabulary and embedding files, the scene files
/// and manifest.txt.
void write_dataset_dir(const std::filesystem::path& dir, const RunConfig& config, std::size_t n_scenes,
                       std::uint64_t seed);

}  // namespace zsseg
