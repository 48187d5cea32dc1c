// SPDX-License-Identifier: Apache-2.0
//
// Little-endian binary encoding with 8-byte section tags and a trailing
// CRC32 (zlib polynomial) over everything before it.

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace zsseg {

class BinaryWriter {
 public:
  void u16(std::uint16_t v);
  void u32(std::uint32_t v);
  void i32(std::int32_t v) { u32(static_cast<std::uint32_t>(v)); }
  void u64(std::uint64_t v);
  void f64(double v);
  void f64s(std::span<const double> v);
  void raw(std::string_view bytes);
  /// Exactly 8 bytes, zero padded.
  void tag(std::string_view name);
  void str(std::string_view s);
  /// Appends the CRC32 and returns the finished buffer.
  std::vector<std::uint8_t> finish();

 private:
  std::vector<std::uint8_t> buf_;
};

class BinaryReader {
 public:
  /// Verifies the trailing checksum. `what` prefixes error messages.
  BinaryReader(std::span<const std::uint8_t> bytes, std::string what);

  std::uint16_t u16();
  std::uint32_t u32();
  std::int32_t i32() { return static_cast<std::int32_t>(u32()); }
  std::uint64_t u64();
  double f64();
  std::vector<double> f64s(std::size_t n);
  std::string raw(std::size_t n);
  void expect_tag(std::string_view name);
  std::string str();
  std::size_t offset() const { return pos_; }
  /// Throws unless every payload byte was consumed.
  void expect_end() const;
  [[noreturn]] void fail(const std::string& message) const;

 private:
  void need(std::size_t n) const;
  std::span<const std::uint8_t> data_;  // payload without the checksum
  std::string what_;
  std::size_t pos_ = 0;
};

std::uint32_t crc32_of(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

}  // namespace zsseg
