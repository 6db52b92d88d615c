// Binary archive of named arrays plus a JSON metadata blob, with a trailing
// CRC-32 so truncated or tampered files fail loudly instead of loading as
// garbage weights. Little-endian, fixed-width fields; doubles may optionally
// be stored as f32 (used for the perceptual encoder weights, where bit-exact
// round-trips are not part of the contract).
#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "hcd/common.hpp"
#include "hcd/tensor.hpp"

namespace hcd {

inline uint32_t crc32_update(uint32_t crc, const void* buf, size_t len) {
  static const auto table = [] {
    std::array<uint32_t, 256> t{};
    for (uint32_t i = 0; i < 256; ++i) {
      uint32_t c = i;
      for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xedb88320u ^ (c >> 1) : c >> 1;
      t[i] = c;
    }
    return t;
  }();
  const auto* p = static_cast<const unsigned char*>(buf);
  crc ^= 0xffffffffu;
  for (size_t i = 0; i < len; ++i) crc = table[(crc ^ p[i]) & 0xffu] ^ (crc >> 8);
  return crc ^ 0xffffffffu;
}

namespace detail {

constexpr char kArchiveMagic[8] = {'H', 'C', 'D', 'A', 'R', 'C', 'H', '1'};
constexpr uint32_t kArchiveVersion = 1;

struct CrcWriter {
  std::ofstream out;
  uint32_t crc = 0;

  explicit CrcWriter(const std::string& path) : out(path, std::ios::binary) {
    if (!out) throw IoError("cannot open for writing: " + path);
  }
  void write(const void* p, size_t n) {
    out.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
    crc = crc32_update(crc, p, n);
  }
  template <typename T>
  void write_pod(T v) {
    write(&v, sizeof(T));
  }
};

struct CrcReader {
  std::ifstream in;
  uint32_t crc = 0;
  std::string path;

  explicit CrcReader(const std::string& p) : in(p, std::ios::binary), path(p) {
    if (!in) throw IoError("cannot open for reading: " + p);
  }
  void read(void* p, size_t n) {
    in.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (static_cast<size_t>(in.gcount()) != n)
      throw IntegrityError("archive truncated: " + path);
    crc = crc32_update(crc, p, n);
  }
  template <typename T>
  T read_pod() {
    T v;
    read(&v, sizeof(T));
    return v;
  }
};

}  // namespace detail

struct ArrayArchive {
  nlohmann::json meta;
  std::vector<std::pair<std::string, Tensor>> arrays;

  const Tensor* find(const std::string& name) const {
    for (const auto& [n, t] : arrays)
      if (n == name) return &t;
    return nullptr;
  }

  const Tensor& at(const std::string& name) const {
    const Tensor* t = find(name);
    if (!t) throw FormatError("archive is missing array: " + name);
    return *t;
  }
};

// pack_f32 stores payloads as float32 (halves file size, loses low bits).
inline void save_archive(const ArrayArchive& a, const std::string& path, bool pack_f32 = false) {
  std::filesystem::path p(path);
  if (p.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(p.parent_path(), ec);
  }
  detail::CrcWriter w(path);
  w.write(detail::kArchiveMagic, sizeof(detail::kArchiveMagic));
  w.write_pod<uint32_t>(detail::kArchiveVersion);
  const std::string meta = a.meta.dump();
  w.write_pod<uint64_t>(meta.size());
  w.write(meta.data(), meta.size());
  w.write_pod<uint32_t>(static_cast<uint32_t>(a.arrays.size()));
  for (const auto& [name, t] : a.arrays) {
    require(name.size() < 65536, "array name too long: " + name);
    w.write_pod<uint16_t>(static_cast<uint16_t>(name.size()));
    w.write(name.data(), name.size());
    w.write_pod<uint8_t>(pack_f32 ? 1 : 0);
    w.write_pod<uint8_t>(static_cast<uint8_t>(t.rank()));
    for (int d : t.shape) w.write_pod<uint32_t>(static_cast<uint32_t>(d));
    if (pack_f32) {
      std::vector<float> buf(t.data.begin(), t.data.end());
      w.write(buf.data(), buf.size() * sizeof(float));
    } else {
      w.write(t.data.data(), t.data.size() * sizeof(double));
    }
  }
  uint32_t crc = w.crc;
  w.out.write(reinterpret_cast<const char*>(&crc), sizeof(crc));
  if (!w.out) throw IoError("write failed: " + path);
}

inline ArrayArchive load_archive(const std::string& path) {
  detail::CrcReader r(path);
  char magic[8];
  r.read(magic, sizeof(magic));
  if (std::memcmp(magic, detail::kArchiveMagic, sizeof(magic)) != 0)
    throw FormatError("not an archive file: " + path);
  uint32_t version = r.read_pod<uint32_t>();
  if (version != detail::kArchiveVersion)
    throw FormatError("unsupported archive version " + std::to_string(version) + ": " + path);

  ArrayArchive a;
  uint64_t meta_len = r.read_pod<uint64_t>();
  if (meta_len > (1ull << 30)) throw IntegrityError("archive metadata length corrupt: " + path);
  std::string meta(meta_len, '\0');
  r.read(meta.data(), meta_len);
  try {
    a.meta = nlohmann::json::parse(meta);
  } catch (const nlohmann::json::exception& e) {
    throw IntegrityError("archive metadata is not valid JSON: " + path + " (" + e.what() + ")");
  }

  uint32_t count = r.read_pod<uint32_t>();
  for (uint32_t i = 0; i < count; ++i) {
    uint16_t name_len = r.read_pod<uint16_t>();
    std::string name(name_len, '\0');
    r.read(name.data(), name_len);
    uint8_t dtype = r.read_pod<uint8_t>();
    if (dtype > 1) throw IntegrityError("archive dtype corrupt: " + path);
    uint8_t rank = r.read_pod<uint8_t>();
    if (rank > 8) throw IntegrityError("archive rank corrupt: " + path);
    std::vector<int> shape(rank);
    long long numel = 1;
    for (auto& d : shape) {
      d = static_cast<int>(r.read_pod<uint32_t>());
      if (d < 0 || (numel > 0 && d > (1ll << 40) / std::max(numel, 1ll)))
        throw IntegrityError("archive shape corrupt: " + path);
      numel *= d;
    }
    Tensor t(shape);
    if (dtype == 0) {
      r.read(t.data.data(), t.data.size() * sizeof(double));
    } else {
      std::vector<float> buf(t.data.size());
      r.read(buf.data(), buf.size() * sizeof(float));
      for (size_t k = 0; k < buf.size(); ++k) t.data[k] = static_cast<double>(buf[k]);
    }
    a.arrays.emplace_back(std::move(name), std::move(t));
  }

  uint32_t expect = r.crc;
  uint32_t stored;
  r.in.read(reinterpret_cast<char*>(&stored), sizeof(stored));
  if (static_cast<size_t>(r.in.gcount()) != sizeof(stored))
    throw IntegrityError("archive truncated: " + path);
  if (stored != expect) throw IntegrityError("archive checksum mismatch: " + path);
  return a;
}

}  // namespace hcd
