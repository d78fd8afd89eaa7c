#pragma once

// Versioned binary container shared by model files and training checkpoints.
//
//   "MILM" | version u32 | kind u32 | payload_len u64 | payload | crc32 u32
//
// The CRC covers every byte before it. It is verified before anything else is
// interpreted, so any flipped byte surfaces as a checksum_error.

#include <cstdint>
#include <cstring>
#include <span>
#include <string>
#include <vector>

#include "milvid/binary_io.hpp"
#include "milvid/error.hpp"

namespace milvid {

inline constexpr std::uint32_t kContainerVersion = 1;
inline constexpr std::size_t kContainerOverhead = 4 + 4 + 4 + 8 + 4;

enum class ContainerKind : std::uint32_t { model = 1, checkpoint = 2 };

inline std::vector<unsigned char> wrap_container(ContainerKind kind, std::span<const unsigned char> payload) {
  io::ByteWriter w;
  w.tag("MILM");
  w.u32(kContainerVersion);
  w.u32(static_cast<std::uint32_t>(kind));
  w.u64(payload.size());
  w.bytes(payload);
  w.u32(io::crc32(w.data()));
  return w.release();
}

inline std::span<const unsigned char> unwrap_container(std::span<const unsigned char> bytes, ContainerKind kind) {
  if (bytes.size() < kContainerOverhead) {
    throw corruption_error("container truncated: " + std::to_string(bytes.size()) + " bytes, need at least " +
                           std::to_string(kContainerOverhead));
  }
  const auto body = bytes.first(bytes.size() - 4);
  io::ByteReader tail(bytes.last(4));
  const auto stored = tail.u32();
  const auto actual = io::crc32(body);
  if (stored != actual) throw checksum_error("container checksum mismatch");

  io::ByteReader r(body);
  const auto magic = r.bytes(4);
  if (std::memcmp(magic.data(), "MILM", 4) != 0) throw format_error("not a milvid model container");
  const auto version = r.u32();
  if (version != kContainerVersion) {
    throw format_error("container version mismatch: file has " + std::to_string(version) + ", expected " +
                       std::to_string(kContainerVersion));
  }
  const auto k = r.u32();
  if (k != static_cast<std::uint32_t>(kind)) {
    throw format_error("container holds kind " + std::to_string(k) + ", expected " +
                       std::to_string(static_cast<std::uint32_t>(kind)));
  }
  const auto len = r.u64();
  if (len != r.remaining()) {
    throw corruption_error("container payload length " + std::to_string(len) + " disagrees with " +
                           std::to_string(r.remaining()) + " stored bytes");
  }
  return r.bytes(len);
}

}  // namespace milvid
