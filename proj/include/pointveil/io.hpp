#pragma once

#include <array>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "pointveil/common.hpp"

namespace pointveil {

// CRC-32 (IEEE 802.3), table-driven.
inline std::uint32_t crc32(const unsigned char* data, std::size_t len, std::uint32_t crc = 0) {
  static const std::array<std::uint32_t, 256> table = [] {
    std::array<std::uint32_t, 256> t{};
    for (std::uint32_t i = 0; i < 256; ++i) {
      std::uint32_t c = i;
      for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xedb88320u ^ (c >> 1) : c >> 1;
      t[i] = c;
    }
    return t;
  }();
  crc = ~crc;
  for (std::size_t i = 0; i < len; ++i) crc = table[(crc ^ data[i]) & 0xffu] ^ (crc >> 8);
  return ~crc;
}

// Accumulates a byte buffer with little-endian encodings; finish() appends a
// CRC-32 of everything written so far and flushes to disk.
class ByteWriter {
public:
  void u8(std::uint8_t v) { buf_.push_back(v); }
  void u16(std::uint16_t v) { le(v); }
  void u32(std::uint32_t v) { le(v); }
  void u64(std::uint64_t v) { le(v); }
  void f64(double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, 8);
    le(bits);
  }
  void f32(float v) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    le(bits);
  }
  void bytes(const void* p, std::size_t n) {
    const unsigned char* c = static_cast<const unsigned char*>(p);
    buf_.insert(buf_.end(), c, c + n);
  }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    bytes(s.data(), s.size());
  }
  // 4 raw bytes, no length prefix; pairs with ByteReader::expect_magic
  void magic(const char m[4]) { bytes(m, 4); }

  void finish(const std::string& path) {
    std::uint32_t c = crc32(buf_.data(), buf_.size());
    u32(c);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    require(out.good(), errc::io, "cannot open for writing: " + path);
    out.write(reinterpret_cast<const char*>(buf_.data()), std::streamsize(buf_.size()));
    require(out.good(), errc::io, "write failed: " + path);
  }

  const std::vector<unsigned char>& buffer() const { return buf_; }

private:
  template <typename T>
  void le(T v) {
    for (std::size_t i = 0; i < sizeof(T); ++i) buf_.push_back((v >> (8 * i)) & 0xffu);
  }

  std::vector<unsigned char> buf_;
};

// Reads a whole file, verifies the trailing CRC-32 up front, then decodes
// little-endian fields. Short reads are reported as truncation.
class ByteReader {
public:
  explicit ByteReader(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    require(in.good(), errc::io, "cannot open: " + path);
    buf_.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
    require(buf_.size() >= 4, errc::io, "truncated file: " + path);
    std::size_t body = buf_.size() - 4;
    std::uint32_t stored = 0;
    for (int i = 3; i >= 0; --i) stored = (stored << 8) | buf_[body + std::size_t(i)];
    std::uint32_t actual = crc32(buf_.data(), body);
    require(stored == actual, errc::checksum, "checksum mismatch: " + path);
    end_ = body;
  }

  std::uint8_t u8() { return take(1)[0]; }
  std::uint16_t u16() { return le<std::uint16_t>(); }
  std::uint32_t u32() { return le<std::uint32_t>(); }
  std::uint64_t u64() { return le<std::uint64_t>(); }
  double f64() {
    std::uint64_t bits = le<std::uint64_t>();
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
  }
  float f32() {
    std::uint32_t bits = le<std::uint32_t>();
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
  }
  std::string str() {
    std::uint32_t n = u32();
    const unsigned char* p = take(n);
    return std::string(reinterpret_cast<const char*>(p), n);
  }
  void expect_magic(const char magic[4], const std::string& what = "") {
    const unsigned char* p = take(4);
    std::string kind = what.empty() ? std::string(magic, 4) : what;
    require(std::memcmp(p, magic, 4) == 0, errc::format, "bad magic, not a " + kind + " file");
  }
  bool at_end() const { return pos_ == end_; }

private:
  template <typename T>
  T le() {
    const unsigned char* p = take(sizeof(T));
    T v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) v |= T(p[i]) << (8 * i);
    return v;
  }
  const unsigned char* take(std::size_t n) {
    require(pos_ + n <= end_, errc::io, "truncated file");
    const unsigned char* p = buf_.data() + pos_;
    pos_ += n;
    return p;
  }

  std::vector<unsigned char> buf_;
  std::size_t pos_ = 0;
  std::size_t end_ = 0;
};

}  // namespace pointveil
