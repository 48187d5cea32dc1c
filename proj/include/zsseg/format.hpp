// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace zsseg {

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Shortest decimal text that parses back to exactly the same double.
std::string format_double(double value);
double parse_double(std::string_view text);
std::vector<std::string_view> split_ws(std::string_view line);
std::string_view trim(std::string_view s);

/// FNV-1a, used for config and parameter fingerprints.
std::uint64_t fnv1a(std::string_view bytes, std::uint64_t h = 0xcbf29ce484222325ULL);
std::string hex64(std::uint64_t v);

}  // namespace zsseg
