#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"
#include "mialab/nn/tensor.hpp"

namespace mialab::nn {

// On-disk checkpoint container:
//   "MIALAB01" magic (8 bytes)
//   u64 array count
//   per array: u32 name length, name bytes (UTF-8), u32 rank, rank x u64 dims,
//              u8 dtype tag (1 = f32), raw little-endian f32 data
//   u64 JSON length, JSON provenance/config blob
struct NamedArray {
  std::vector<int64_t> shape;
  std::vector<float> data;
};

struct Container {
  std::map<std::string, NamedArray> arrays;
  nlohmann::json meta = nlohmann::json::object();

  template <typename T>
  void put(const ParamList<T>& params);
  template <typename T>
  void put(const std::string& name, const std::vector<int64_t>& shape, const T& values);

  // Loads every param by name; missing or mis-shaped arrays are data errors.
  template <typename T>
  void get(const ParamList<T>& params) const;
  const NamedArray& at(const std::string& name) const;
};

inline constexpr char kContainerMagic[8] = {'M', 'I', 'A', 'L', 'A', 'B', '0', '1'};
inline constexpr uint8_t kDtypeF32 = 1;

std::string serialize(const Container& c);
Container deserialize(const std::string& bytes);
void save(const std::filesystem::path& path, const Container& c);
Container load(const std::filesystem::path& path);

template <typename T>
void Container::put(const std::string& name, const std::vector<int64_t>& shape, const T& values) {
  NamedArray a;
  a.shape = shape;
  a.data.assign(values.begin(), values.end());
  arrays[name] = std::move(a);
}

template <typename T>
void Container::put(const ParamList<T>& params) {
  for (const auto* p : params) put(p->name, p->shape, p->value);
}

template <typename T>
void Container::get(const ParamList<T>& params) const {
  for (auto* p : params) {
    const auto& a = at(p->name);
    if (a.shape != p->shape) fail(ErrorKind::kData, "shape mismatch for array " + p->name);
    for (size_t i = 0; i < a.data.size(); ++i) p->value[i] = static_cast<T>(a.data[i]);
  }
}

}  // namespace mialab::nn
