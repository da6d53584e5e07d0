#pragma once

#include <cstring>

#include "mialab/rng.hpp"

namespace mialab::nn {

template <typename T>
uint64_t checksum(const ParamList<T>& params) {
  uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto* p : params) {
    h = fnv1a(p->name, h);
    for (T v : p->value) {
      float f = static_cast<float>(v);
      uint32_t bits;
      std::memcpy(&bits, &f, sizeof bits);
      h = fnv1a_bytes(&bits, sizeof bits, h);
    }
  }
  return h;
}

}  // namespace mialab::nn
