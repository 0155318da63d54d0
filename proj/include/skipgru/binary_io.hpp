#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "skipgru/matrix.hpp"

namespace skipgru {

/// 64-bit FNV-1a. Used for checkpoint trailers and manifest digests.
class Fnv1a {
 public:
  void update(std::span<const std::uint8_t> bytes);
  void update(std::string_view text) {
    update({reinterpret_cast<const std::uint8_t*>(text.data()), text.size()});
  }
  std::uint64_t digest() const { return state_; }

 private:
  std::uint64_t state_ = 0xcbf29ce484222325ULL;
};

std::string hex64(std::uint64_t value);
/// Content digest of a file as 16 hex characters.
std::string file_digest(const std::filesystem::path& path);

/// Little-endian serialiser into an in-memory buffer.
class ByteWriter {
 public:
  void u8(std::uint8_t v) { buf_.push_back(v); }
  void u32(std::uint32_t v);
  void u64(std::uint64_t v);
  void f32(float v);
  void f64(double v);
  void bytes(std::string_view raw);
  void str(std::string_view s);  // u64 length prefix
  void matrix(const Matrix& m);  // u64 rows, u64 cols, f64 data

  const std::vector<std::uint8_t>& buffer() const { return buf_; }
  std::vector<std::uint8_t>& buffer() { return buf_; }

 private:
  std::vector<std::uint8_t> buf_;
};

/// Bounds-checked little-endian reader; any overrun throws LoadError.
class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> data) : data_(data) {}

  std::uint8_t u8();
  std::uint32_t u32();
  std::uint64_t u64();
  float f32();
  double f64();
  std::string bytes(std::size_t n);
  std::string str();
  Matrix matrix();

  std::size_t offset() const { return pos_; }
  std::size_t remaining() const { return data_.size() - pos_; }

 private:
  void need(std::size_t n) const;

  std::span<const std::uint8_t> data_;
  std::size_t pos_ = 0;
};

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

/// Dense float32 table: uint32 n, uint32 dim, then n*dim row-major values.
void write_vectors(const std::filesystem::path& path, const Matrix& rows);
Matrix read_vectors(const std::filesystem::path& path);

/// Appends an FNV-1a digest of everything written so far.
void append_checksum(ByteWriter& w);
/// Verifies the trailing digest and returns the body before it; LoadError
/// (prefixed with what) when the file is short or the digest mismatches.
std::span<const std::uint8_t> checked_body(std::span<const std::uint8_t> bytes, std::string_view what);

}  // namespace skipgru
