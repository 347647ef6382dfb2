#pragma once

#include <cstdint>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "eit/tensor.hpp"

// Versioned named-tensor container used for both checkpoints and feature
// dumps: a small header (step counter plus a config echo), a table of
// name/dtype/shape entries, then the raw little-endian payload in table
// order. Round trips are bit-exact because values are stored at their native
// width.

namespace eit {

namespace detail {

constexpr char kTensorMagic[8] = {'E', 'I', 'T', 'T', 'N', 'S', 'R', '1'};

template <typename T>
void put_raw(std::ostream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get_raw(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  return v;
}

inline void put_string(std::ostream& os, const std::string& s) {
  put_raw<uint32_t>(os, static_cast<uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string get_string(std::istream& is) {
  const uint32_t n = get_raw<uint32_t>(is);
  if (n > (1u << 20)) throw ConfigError("tensor file: unreasonable string length");
  std::string s(n, '\0');
  is.read(s.data(), n);
  return s;
}

}  // namespace detail

template <typename T>
struct TensorFile {
  uint64_t step = 0;
  std::string config;
  std::vector<std::pair<std::string, Tensor<T>>> entries;

  const Tensor<T>* find(const std::string& name) const {
    for (const auto& e : entries)
      if (e.first == name) return &e.second;
    return nullptr;
  }
};

template <typename T>
void save_tensor_file(const std::string& path, const TensorFile<T>& file) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw ConfigError("save: cannot open " + path);
  os.write(detail::kTensorMagic, 8);
  detail::put_raw<uint32_t>(os, 1);  // format version
  detail::put_raw<uint64_t>(os, file.step);
  detail::put_string(os, file.config);
  detail::put_raw<uint32_t>(os, static_cast<uint32_t>(file.entries.size()));
  for (size_t i = 0; i < file.entries.size(); ++i) {
    for (size_t j = i + 1; j < file.entries.size(); ++j)
      if (file.entries[i].first == file.entries[j].first)
        throw ConfigError("save: duplicate tensor name " + file.entries[i].first);
    detail::put_string(os, file.entries[i].first);
    detail::put_raw<uint8_t>(os, sizeof(T) == 4 ? 0 : 1);
    const auto& shape = file.entries[i].second.shape();
    detail::put_raw<uint32_t>(os, static_cast<uint32_t>(shape.size()));
    for (int d : shape) detail::put_raw<int32_t>(os, d);
  }
  for (const auto& e : file.entries)
    os.write(reinterpret_cast<const char*>(e.second.data()),
             static_cast<std::streamsize>(e.second.numel() * static_cast<int64_t>(sizeof(T))));
  if (!os) throw ConfigError("save: write failed for " + path);
}

// loads into T, casting if the stored width differs
template <typename T>
TensorFile<T> load_tensor_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ConfigError("load: cannot open " + path);
  char magic[8];
  is.read(magic, 8);
  if (!is || std::string(magic, 8) != std::string(detail::kTensorMagic, 8))
    throw ConfigError("load: not a tensor file: " + path);
  const uint32_t version = detail::get_raw<uint32_t>(is);
  if (version != 1) throw ConfigError("load: unsupported version");
  TensorFile<T> file;
  file.step = detail::get_raw<uint64_t>(is);
  file.config = detail::get_string(is);
  const uint32_t count = detail::get_raw<uint32_t>(is);
  std::vector<uint8_t> dtypes(count);
  for (uint32_t i = 0; i < count; ++i) {
    std::string name = detail::get_string(is);
    dtypes[i] = detail::get_raw<uint8_t>(is);
    const uint32_t rank = detail::get_raw<uint32_t>(is);
    if (rank > 8) throw ConfigError("load: unreasonable rank");
    Shape shape(rank);
    for (uint32_t d = 0; d < rank; ++d) shape[d] = detail::get_raw<int32_t>(is);
    file.entries.emplace_back(std::move(name), Tensor<T>(shape));
  }
  for (uint32_t i = 0; i < count; ++i) {
    Tensor<T>& t = file.entries[i].second;
    if ((dtypes[i] == 0) == (sizeof(T) == 4)) {
      is.read(reinterpret_cast<char*>(t.data()),
              static_cast<std::streamsize>(t.numel() * static_cast<int64_t>(sizeof(T))));
    } else if (dtypes[i] == 0) {
      for (int64_t p = 0; p < t.numel(); ++p)
        t.data()[p] = static_cast<T>(detail::get_raw<float>(is));
    } else {
      for (int64_t p = 0; p < t.numel(); ++p)
        t.data()[p] = static_cast<T>(detail::get_raw<double>(is));
    }
  }
  if (!is) throw ConfigError("load: truncated tensor file " + path);
  return file;
}

}  // namespace eit
