#pragma once

// Tensor container shared by checkpoints and demo episodes:
//
//   <magic>\n
//   <single-line JSON header>\n
//   <payload: raw little-endian arrays, concatenated in manifest order>
//
// The header carries {"format_version", "manifest": [{name, shape, dtype,
// offset, bytes}], "meta": {...}}.

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <zlib.h>

#include "json.hpp"

#include "geodp/numerics/tensor.hpp"

namespace geodp {

inline constexpr int kBlobFormatVersion = 1;

namespace detail {

template <class T>
constexpr const char* dtype_name() {
  if constexpr (std::is_same_v<T, float>) return "f32";
  else if constexpr (std::is_same_v<T, double>) return "f64";
  else static_assert(sizeof(T) == 0, "unsupported dtype");
}

inline std::size_t dtype_size(const std::string& dtype) {
  if (dtype == "f32") return 4;
  if (dtype == "f64") return 8;
  fail(ErrorKind::io, "unsupported dtype " + dtype);
}

template <class T>
void to_le_bytes(const T* src, std::size_t n, unsigned char* dst) {
  std::memcpy(dst, src, n * sizeof(T));
  if constexpr (std::endian::native == std::endian::big) {
    for (std::size_t i = 0; i < n; ++i)
      std::reverse(dst + i * sizeof(T), dst + (i + 1) * sizeof(T));
  }
}

template <class T>
void from_le_bytes(const unsigned char* src, std::size_t n, T* dst) {
  std::memcpy(dst, src, n * sizeof(T));
  if constexpr (std::endian::native == std::endian::big) {
    auto* b = reinterpret_cast<unsigned char*>(dst);
    for (std::size_t i = 0; i < n; ++i) std::reverse(b + i * sizeof(T), b + (i + 1) * sizeof(T));
  }
}

}  // namespace detail

inline std::uint32_t crc32_bytes(const std::string& bytes) {
  uLong crc = crc32(0L, Z_NULL, 0);
  crc = crc32(crc, reinterpret_cast<const Bytef*>(bytes.data()), static_cast<uInt>(bytes.size()));
  return static_cast<std::uint32_t>(crc);
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorKind::io, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const std::filesystem::path& path, const std::string& bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(static_cast<bool>(out), ErrorKind::io, "cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  require(static_cast<bool>(out), ErrorKind::io, "short write to " + path.string());
}

class BlobFile {
 public:
  nlohmann::json meta = nlohmann::json::object();

  template <class T>
  void put(const std::string& name, const Tensor<T>& t) {
    require(!entries_.contains(name), ErrorKind::usage, "duplicate blob entry " + name);
    Entry e;
    e.shape = t.shape();
    e.dtype = detail::dtype_name<T>();
    e.bytes.resize(t.size() * sizeof(T));
    detail::to_le_bytes(t.data(), t.size(), e.bytes.data());
    order_.push_back(name);
    entries_.emplace(name, std::move(e));
  }

  bool has(const std::string& name) const { return entries_.contains(name); }
  const std::vector<std::string>& names() const noexcept { return order_; }

  const Shape& shape(const std::string& name) const { return entry(name).shape; }
  const std::string& dtype(const std::string& name) const { return entry(name).dtype; }

  // Reads an entry; f32 <-> f64 conversion is applied when the stored dtype differs.
  template <class T>
  Tensor<T> get(const std::string& name) const {
    const Entry& e = entry(name);
    const std::size_t n = numel(e.shape);
    if (e.dtype == detail::dtype_name<T>()) {
      Tensor<T> out(e.shape);
      detail::from_le_bytes(e.bytes.data(), n, out.data());
      return out;
    }
    if (e.dtype == "f32") return get<float>(name).template cast<T>();
    return get<double>(name).template cast<T>();
  }

  std::string serialize(const std::string& magic) const {
    nlohmann::json manifest = nlohmann::json::array();
    std::size_t offset = 0;
    for (const auto& name : order_) {
      const Entry& e = entries_.at(name);
      manifest.push_back({{"name", name}, {"shape", e.shape}, {"dtype", e.dtype},
                          {"offset", offset}, {"bytes", e.bytes.size()}});
      offset += e.bytes.size();
    }
    std::string payload;
    payload.reserve(offset);
    for (const auto& name : order_) {
      const auto& b = entries_.at(name).bytes;
      payload.append(reinterpret_cast<const char*>(b.data()), b.size());
    }
    nlohmann::json header = {{"format_version", kBlobFormatVersion},
                             {"manifest", manifest},
                             {"meta", meta},
                             {"payload_bytes", offset},
                             {"payload_crc32", crc32_bytes(payload)}};
    return magic + "\n" + header.dump() + "\n" + payload;
  }

  static BlobFile parse(const std::string& bytes, const std::string& magic,
                        const std::string& origin = "<memory>") {
    const auto nl1 = bytes.find('\n');
    require(nl1 != std::string::npos && bytes.compare(0, nl1, magic) == 0, ErrorKind::io,
            origin + ": not a " + magic + " file");
    const auto nl2 = bytes.find('\n', nl1 + 1);
    require(nl2 != std::string::npos, ErrorKind::io, origin + ": truncated header");
    nlohmann::json header;
    try {
      header = nlohmann::json::parse(bytes.substr(nl1 + 1, nl2 - nl1 - 1));
    } catch (const nlohmann::json::exception& ex) {
      fail(ErrorKind::io, origin + ": corrupt header: " + ex.what());
    }
    require(header.value("format_version", -1) == kBlobFormatVersion, ErrorKind::io,
            origin + ": unsupported format version");
    BlobFile out;
    out.meta = header.value("meta", nlohmann::json::object());
    const std::size_t payload = nl2 + 1;
    const std::size_t payload_bytes = header.at("payload_bytes").get<std::size_t>();
    require(bytes.size() == payload + payload_bytes, ErrorKind::io,
            origin + ": payload size mismatch (expected " + std::to_string(payload_bytes) +
                " bytes, found " + std::to_string(bytes.size() - payload) + ")");
    if (header.contains("payload_crc32"))
      require(header.at("payload_crc32").get<std::uint32_t>() == crc32_bytes(bytes.substr(payload)), ErrorKind::io,
              origin + ": payload checksum mismatch");
    for (const auto& m : header.at("manifest")) {
      Entry e;
      e.shape = m.at("shape").get<Shape>();
      e.dtype = m.at("dtype").get<std::string>();
      const std::size_t off = m.at("offset").get<std::size_t>();
      const std::size_t len = m.at("bytes").get<std::size_t>();
      require(len == numel(e.shape) * detail::dtype_size(e.dtype) && off + len <= payload_bytes,
              ErrorKind::io, origin + ": manifest entry " + m.at("name").get<std::string>() +
                                 " is inconsistent");
      e.bytes.assign(bytes.begin() + static_cast<std::ptrdiff_t>(payload + off),
                     bytes.begin() + static_cast<std::ptrdiff_t>(payload + off + len));
      const auto name = m.at("name").get<std::string>();
      out.order_.push_back(name);
      out.entries_.emplace(name, std::move(e));
    }
    return out;
  }

  void save(const std::filesystem::path& path, const std::string& magic) const {
    write_file(path, serialize(magic));
  }

  static BlobFile load(const std::filesystem::path& path, const std::string& magic) {
    return parse(read_file(path), magic, path.string());
  }

 private:
  struct Entry {
    Shape shape;
    std::string dtype;
    std::vector<unsigned char> bytes;
  };

  const Entry& entry(const std::string& name) const {
    auto it = entries_.find(name);
    require(it != entries_.end(), ErrorKind::io, "missing entry " + name);
    return it->second;
  }

  std::vector<std::string> order_;
  std::map<std::string, Entry> entries_;
};

}  // namespace geodp
