#include "skipgru/binary_io.hpp"

#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iterator>

#include "skipgru/error.hpp"

namespace skipgru {

static_assert(std::endian::native == std::endian::little,
              "binary formats assume a little-endian host");

void Fnv1a::update(std::span<const std::uint8_t> bytes) {
  for (std::uint8_t b : bytes) {
    state_ ^= b;
    state_ *= 0x100000001b3ULL;
  }
}

std::string hex64(std::uint64_t value) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(value));
  return buf;
}

std::string file_digest(const std::filesystem::path& path) {
  Fnv1a h;
  h.update(read_file_bytes(path));
  return hex64(h.digest());
}

namespace {

template <typename T>
void put(std::vector<std::uint8_t>& buf, T v) {
  std::uint8_t raw[sizeof(T)];
  std::memcpy(raw, &v, sizeof(T));
  buf.insert(buf.end(), raw, raw + sizeof(T));
}

}  // namespace

void ByteWriter::u32(std::uint32_t v) { put(buf_, v); }
void ByteWriter::u64(std::uint64_t v) { put(buf_, v); }
void ByteWriter::f32(float v) { put(buf_, v); }
void ByteWriter::f64(double v) { put(buf_, v); }

void ByteWriter::bytes(std::string_view raw) { buf_.insert(buf_.end(), raw.begin(), raw.end()); }

void ByteWriter::str(std::string_view s) {
  u64(s.size());
  bytes(s);
}

void ByteWriter::matrix(const Matrix& m) {
  u64(m.rows());
  u64(m.cols());
  for (double v : m.data()) f64(v);
}

void ByteReader::need(std::size_t n) const {
  if (n > remaining()) throw LoadError("unexpected end of data");
}

std::uint8_t ByteReader::u8() {
  need(1);
  return data_[pos_++];
}

#define SKIPGRU_READ_POD(T)                          \
  need(sizeof(T));                                   \
  T v;                                               \
  std::memcpy(&v, data_.data() + pos_, sizeof(T));   \
  pos_ += sizeof(T);                                 \
  return v

std::uint32_t ByteReader::u32() { SKIPGRU_READ_POD(std::uint32_t); }
std::uint64_t ByteReader::u64() { SKIPGRU_READ_POD(std::uint64_t); }
float ByteReader::f32() { SKIPGRU_READ_POD(float); }
double ByteReader::f64() { SKIPGRU_READ_POD(double); }

#undef SKIPGRU_READ_POD

std::string ByteReader::bytes(std::size_t n) {
  need(n);
  std::string out(reinterpret_cast<const char*>(data_.data() + pos_), n);
  pos_ += n;
  return out;
}

std::string ByteReader::str() { return bytes(u64()); }

Matrix ByteReader::matrix() {
  const std::uint64_t rows = u64();
  const std::uint64_t cols = u64();
  if (cols != 0 && rows > remaining() / 8 / cols) throw LoadError("matrix larger than file");
  Matrix m(rows, cols);
  for (double& v : m.data()) v = f64();
  return m;
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

void append_checksum(ByteWriter& w) {
  Fnv1a h;
  h.update(w.buffer());
  w.u64(h.digest());
}

std::span<const std::uint8_t> checked_body(std::span<const std::uint8_t> bytes, std::string_view what) {
  if (bytes.size() < 8) throw LoadError(std::string(what) + ": file too short");
  const auto body = bytes.first(bytes.size() - 8);
  Fnv1a h;
  h.update(body);
  ByteReader trailer(bytes.last(8));
  if (trailer.u64() != h.digest()) {
    throw LoadError(std::string(what) + ": checksum mismatch (truncated or corrupted)");
  }
  return body;
}

void write_vectors(const std::filesystem::path& path, const Matrix& rows) {
  if (rows.rows() > UINT32_MAX || rows.cols() > UINT32_MAX) throw RangeError("vectors: table too large");
  ByteWriter w;
  w.u32(static_cast<std::uint32_t>(rows.rows()));
  w.u32(static_cast<std::uint32_t>(rows.cols()));
  for (double v : rows.data()) w.f32(static_cast<float>(v));
  write_file_bytes(path, w.buffer());
}

Matrix read_vectors(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  ByteReader r(bytes);
  const std::size_t n = r.u32(), dim = r.u32();
  if (r.remaining() != n * dim * 4) throw LoadError("vectors: size does not match header in " + path.string());
  Matrix m(n, dim);
  for (double& v : m.data()) v = r.f32();
  return m;
}

}  // namespace skipgru
