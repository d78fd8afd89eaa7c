#pragma once

#include <zlib.h>

#include <algorithm>
#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include "milvid/error.hpp"

namespace milvid::io {

static_assert(std::endian::native == std::endian::little ||
                  std::endian::native == std::endian::big,
              "mixed-endian platforms are not supported");

template <typename T>
inline T to_little(T v) {
  if constexpr (std::endian::native == std::endian::big) {
    auto bytes = std::bit_cast<std::array<unsigned char, sizeof(T)>>(v);
    std::reverse(bytes.begin(), bytes.end());
    return std::bit_cast<T>(bytes);
  } else {
    return v;
  }
}

// Append-only little-endian encoder.
class ByteWriter {
 public:
  void bytes(std::span<const unsigned char> b) { buf_.insert(buf_.end(), b.begin(), b.end()); }
  void tag(const char (&magic)[5]) {
    bytes({reinterpret_cast<const unsigned char*>(magic), 4});
  }
  void u8(std::uint8_t v) { buf_.push_back(v); }
  void u32(std::uint32_t v) { put(v); }
  void u64(std::uint64_t v) { put(v); }
  void f32(float v) { put(std::bit_cast<std::uint32_t>(v)); }
  void f64(double v) { put(std::bit_cast<std::uint64_t>(v)); }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    bytes({reinterpret_cast<const unsigned char*>(s.data()), s.size()});
  }

  const std::vector<unsigned char>& data() const { return buf_; }
  std::vector<unsigned char> release() { return std::move(buf_); }

 private:
  template <typename T>
  void put(T v) {
    v = to_little(v);
    unsigned char raw[sizeof(T)];
    std::memcpy(raw, &v, sizeof(T));
    buf_.insert(buf_.end(), raw, raw + sizeof(T));
  }

  std::vector<unsigned char> buf_;
};

// Bounds-checked little-endian decoder over a borrowed buffer.
class ByteReader {
 public:
  explicit ByteReader(std::span<const unsigned char> buf) : buf_(buf) {}

  std::span<const unsigned char> bytes(std::size_t n) {
    need(n);
    auto out = buf_.subspan(pos_, n);
    pos_ += n;
    return out;
  }
  std::uint8_t u8() { return bytes(1)[0]; }
  std::uint32_t u32() { return get<std::uint32_t>(); }
  std::uint64_t u64() { return get<std::uint64_t>(); }
  float f32() { return std::bit_cast<float>(get<std::uint32_t>()); }
  double f64() { return std::bit_cast<double>(get<std::uint64_t>()); }
  std::string str() {
    auto n = u32();
    auto b = bytes(n);
    return {reinterpret_cast<const char*>(b.data()), b.size()};
  }

  std::size_t position() const { return pos_; }
  std::size_t remaining() const { return buf_.size() - pos_; }

 private:
  void need(std::size_t n) const {
    if (n > remaining()) {
      throw corruption_error("truncated record: need " + std::to_string(n) + " bytes at offset " +
                             std::to_string(pos_) + ", have " + std::to_string(remaining()));
    }
  }
  template <typename T>
  T get() {
    T v;
    std::memcpy(&v, bytes(sizeof(T)).data(), sizeof(T));
    return to_little(v);
  }

  std::span<const unsigned char> buf_;
  std::size_t pos_ = 0;
};

inline std::uint32_t crc32(std::span<const unsigned char> data) {
  uLong crc = ::crc32(0L, Z_NULL, 0);
  // zlib takes uInt lengths; feed in chunks for very large buffers.
  constexpr std::size_t kChunk = 1u << 30;
  for (std::size_t off = 0; off < data.size(); off += kChunk) {
    auto n = std::min(kChunk, data.size() - off);
    crc = ::crc32(crc, data.data() + off, static_cast<uInt>(n));
  }
  return static_cast<std::uint32_t>(crc);
}

inline std::vector<unsigned char> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw io_error("cannot open " + path.string() + " for reading");
  std::vector<unsigned char> buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw io_error("read failed: " + path.string());
  return buf;
}

inline void write_file(const std::filesystem::path& path, std::span<const unsigned char> data) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw io_error("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size()));
  out.flush();
  if (!out) throw io_error("write failed: " + path.string());
}

}  // namespace milvid::io
