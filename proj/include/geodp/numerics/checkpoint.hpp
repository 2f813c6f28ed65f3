#pragma once

#include <filesystem>
#include <string>

#include "geodp/numerics/blob.hpp"
#include "geodp/numerics/params.hpp"

namespace geodp {

inline const std::string kCheckpointMagic = "geodp-checkpoint";

template <class T>
void put_params(BlobFile& blob, const std::string& prefix, const ParamStore<T>& params) {
  for (std::size_t i = 0; i < params.size(); ++i) blob.put(prefix + params.name(i), params.value(i));
}

// Overwrites every parameter of `params` from the blob; names and shapes must match.
template <class T>
void load_params(const BlobFile& blob, const std::string& prefix, ParamStore<T>& params) {
  for (std::size_t i = 0; i < params.size(); ++i) {
    const std::string key = prefix + params.name(i);
    require(blob.has(key), ErrorKind::io, "checkpoint is missing parameter " + key);
    require(blob.shape(key) == params.value(i).shape(), ErrorKind::io,
            "checkpoint shape mismatch for " + key + ": stored " + to_string(blob.shape(key)) +
                ", expected " + to_string(params.value(i).shape()));
    params.value(i) = blob.get<T>(key);
  }
}

template <class T>
void load_tensors(const BlobFile& blob, const std::string& prefix, const ParamStore<T>& names,
                  std::vector<Tensor<T>>& out) {
  out.clear();
  for (std::size_t i = 0; i < names.size(); ++i) {
    const std::string key = prefix + names.name(i);
    require(blob.has(key), ErrorKind::io, "checkpoint is missing " + key);
    out.push_back(blob.get<T>(key));
  }
}

// Write, then re-read and compare byte-for-byte.
inline void save_verified(const BlobFile& blob, const std::filesystem::path& path,
                          const std::string& magic = kCheckpointMagic) {
  const std::string bytes = blob.serialize(magic);
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  write_file(tmp, bytes);
  const std::string back = read_file(tmp);
  require(back == bytes, ErrorKind::io, "checkpoint verification failed for " + path.string());
  BlobFile::parse(back, magic, tmp.string());
  std::filesystem::rename(tmp, path);
}

}  // namespace geodp
