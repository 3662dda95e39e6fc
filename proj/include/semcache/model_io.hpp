#pragma once

#include <filesystem>
#include <memory>
#include <string>

#include "semcache/adapter.hpp"
#include "semcache/binary_io.hpp"
#include "semcache/error.hpp"

namespace semcache {

// Adapter file: "MADP", u16 version=1, u32 in_dim, u32 out_dim, out*in f64
// row-major weights, CRC32 of everything before it. Little-endian.

inline std::vector<std::uint8_t> serialize_adapter(const AdapterModel& m) {
  ByteWriter w;
  w.raw("MADP");
  w.u16(1);
  w.u32(static_cast<std::uint32_t>(m.in_dim()));
  w.u32(static_cast<std::uint32_t>(m.out_dim()));
  for (double x : m.weights()) w.f64(x);
  auto bytes = std::move(w).take();
  ByteWriter tail;
  tail.u32(crc32_of(bytes));
  const auto t = std::move(tail).take();
  bytes.insert(bytes.end(), t.begin(), t.end());
  return bytes;
}

inline AdapterModel deserialize_adapter(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 4 + 2 + 4 + 4 + 4) throw Error(ErrorCode::CorruptFile, "adapter file too short");
  const auto body = bytes.first(bytes.size() - 4);
  ByteReader tail(bytes.last(4));
  if (crc32_of(body) != tail.u32()) throw Error(ErrorCode::CorruptFile, "adapter checksum mismatch");
  ByteReader r(body);
  if (r.raw(4) != "MADP") throw Error(ErrorCode::CorruptFile, "bad adapter magic");
  if (const auto v = r.u16(); v != 1) throw Error(ErrorCode::VersionUnsupported, "adapter version " + std::to_string(v));
  const std::size_t in = r.u32();
  const std::size_t out = r.u32();
  if (in == 0 || out == 0 || r.remaining() != in * out * 8) throw Error(ErrorCode::CorruptFile, "adapter size mismatch");
  std::vector<double> w(in * out);
  for (auto& x : w) x = r.f64();
  return AdapterModel(in, out, std::move(w));
}

inline void save_adapter(const AdapterModel& m, const std::filesystem::path& path) {
  write_file_atomic(path, serialize_adapter(m));
}

inline AdapterModel load_adapter(const std::filesystem::path& path) { return deserialize_adapter(read_file(path)); }

}  // namespace semcache
