// SPDX-License-Identifier: Apache-2.0
#include "zsseg/binio.hpp"

#include <zlib.h>

#include <algorithm>
#include <bit>
#include <fstream>
#include <iterator>

#include "zsseg/format.hpp"

namespace zsseg {

namespace {

template <typename T>
void put_le(std::vector<std::uint8_t>& buf, T v) {
  for (std::size_t i = 0; i < sizeof(T); ++i) buf.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

}  // namespace

void BinaryWriter::u16(std::uint16_t v) { put_le(buf_, v); }
void BinaryWriter::u32(std::uint32_t v) { put_le(buf_, v); }
void BinaryWriter::u64(std::uint64_t v) { put_le(buf_, v); }
void BinaryWriter::f64(double v) { put_le(buf_, std::bit_cast<std::uint64_t>(v)); }

void BinaryWriter::f64s(std::span<const double> v) {
  buf_.reserve(buf_.size() + 8 * v.size());
  for (double x : v) f64(x);
}

void BinaryWriter::raw(std::string_view bytes) { buf_.insert(buf_.end(), bytes.begin(), bytes.end()); }

void BinaryWriter::tag(std::string_view name) {
  std::string padded(name.substr(0, 8));
  padded.resize(8, '\0');
  raw(padded);
}

void BinaryWriter::str(std::string_view s) {
  u32(static_cast<std::uint32_t>(s.size()));
  raw(s);
}

std::vector<std::uint8_t> BinaryWriter::finish() {
  const std::uint32_t crc = crc32_of(buf_);
  put_le(buf_, crc);
  return std::move(buf_);
}

std::uint32_t crc32_of(std::span<const std::uint8_t> bytes) {
  uLong crc = crc32(0L, Z_NULL, 0);
  std::size_t done = 0;
  while (done < bytes.size()) {
    const auto chunk = static_cast<uInt>(std::min<std::size_t>(bytes.size() - done, 1u << 30));
    crc = crc32(crc, bytes.data() + done, chunk);
    done += chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

BinaryReader::BinaryReader(std::span<const std::uint8_t> bytes, std::string what) : what_(std::move(what)) {
  if (bytes.size() < 4) throw FormatError(what_ + ": file too short for a checksum at byte offset " + std::to_string(bytes.size()));
  data_ = bytes.first(bytes.size() - 4);
  std::uint32_t stored = 0;
  for (std::size_t i = 0; i < 4; ++i) stored |= static_cast<std::uint32_t>(bytes[data_.size() + i]) << (8 * i);
  if (stored != crc32_of(data_)) {
    throw FormatError(what_ + ": checksum mismatch at byte offset " + std::to_string(data_.size()));
  }
}

void BinaryReader::fail(const std::string& message) const {
  throw FormatError(what_ + ": " + message + " at byte offset " + std::to_string(pos_));
}

void BinaryReader::need(std::size_t n) const {
  if (data_.size() - pos_ < n) fail("truncated, needed " + std::to_string(n) + " more bytes");
}

namespace {

template <typename T>
T get_le(std::span<const std::uint8_t> d, std::size_t pos) {
  T v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(static_cast<T>(d[pos + i]) << (8 * i));
  return v;
}

}  // namespace

std::uint16_t BinaryReader::u16() {
  need(2);
  const auto v = get_le<std::uint16_t>(data_, pos_);
  pos_ += 2;
  return v;
}

std::uint32_t BinaryReader::u32() {
  need(4);
  const auto v = get_le<std::uint32_t>(data_, pos_);
  pos_ += 4;
  return v;
}

std::uint64_t BinaryReader::u64() {
  need(8);
  const auto v = get_le<std::uint64_t>(data_, pos_);
  pos_ += 8;
  return v;
}

double BinaryReader::f64() { return std::bit_cast<double>(u64()); }

std::vector<double> BinaryReader::f64s(std::size_t n) {
  if (n > (data_.size() - pos_) / 8) fail("truncated, array of " + std::to_string(n) + " reals does not fit");
  std::vector<double> out(n);
  for (auto& x : out) x = f64();
  return out;
}

std::string BinaryReader::raw(std::size_t n) {
  need(n);
  std::string s(reinterpret_cast<const char*>(data_.data() + pos_), n);
  pos_ += n;
  return s;
}

void BinaryReader::expect_tag(std::string_view name) {
  std::string want(name.substr(0, 8));
  want.resize(8, '\0');
  const std::size_t at = pos_;
  const std::string got = raw(8);
  if (got != want) {
    pos_ = at;
    fail("expected section '" + std::string(name) + "'");
  }
}

std::string BinaryReader::str() { return raw(u32()); }

void BinaryReader::expect_end() const {
  if (pos_ != data_.size()) fail(std::to_string(data_.size() - pos_) + " unexpected trailing bytes");
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open '" + path.string() + "' for reading");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("write to '" + path.string() + "' failed");
}

}  // namespace zsseg
