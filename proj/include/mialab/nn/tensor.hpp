#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "mialab/error.hpp"

namespace mialab::nn {

// Eigen picks vectorisation peeling from the runtime address, so storage that
// Eigen maps over must always have the same alignment for results to be
// reproducible from one allocation to the next.
template <typename T>
using Buffer = std::vector<T, Eigen::aligned_allocator<T>>;

// Activations are stored channel-major, [C][N][H][W], so that a convolution
// over a whole batch is a single (Cout x K) * (K x N*H*W) product.
template <typename T>
struct Tensor {
  int c = 0;
  int n = 0;
  int h = 0;
  int w = 0;
  Buffer<T> data;

  Tensor() = default;
  Tensor(int channels, int batch, int height, int width, T fill = T(0))
      : c(channels), n(batch), h(height), w(width), data(size_t(channels) * batch * height * width, fill) {}

  size_t size() const { return data.size(); }
  size_t plane() const { return size_t(n) * h * w; }
  size_t spatial() const { return size_t(h) * w; }

  T& at(int ci, int ni, int y, int x) { return data[((size_t(ci) * n + ni) * h + y) * w + x]; }
  T at(int ci, int ni, int y, int x) const { return data[((size_t(ci) * n + ni) * h + y) * w + x]; }

  bool same_shape(const Tensor& o) const { return c == o.c && n == o.n && h == o.h && w == o.w; }

  std::string shape_str() const {
    return "[" + std::to_string(c) + "," + std::to_string(n) + "," + std::to_string(h) + "," + std::to_string(w) + "]";
  }
};

template <typename T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* what) {
  if (!a.same_shape(b)) fail(ErrorKind::kDimension, std::string(what) + ": " + a.shape_str() + " vs " + b.shape_str());
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "add");
  Tensor<T> out = a;
  for (size_t i = 0; i < out.size(); ++i) out.data[i] += b.data[i];
  return out;
}

template <typename T>
void add_inplace(Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "add");
  for (size_t i = 0; i < a.size(); ++i) a.data[i] += b.data[i];
}

// A learnable array with its gradient accumulator.
template <typename T>
struct Param {
  std::string name;
  std::vector<int64_t> shape;
  Buffer<T> value;
  Buffer<T> grad;

  Param() = default;
  Param(std::string param_name, std::vector<int64_t> dims) : name(std::move(param_name)), shape(std::move(dims)) {
    size_t count = 1;
    for (auto d : shape) count *= static_cast<size_t>(d);
    value.assign(count, T(0));
    grad.assign(count, T(0));
  }

  size_t size() const { return value.size(); }
  void zero_grad() { std::fill(grad.begin(), grad.end(), T(0)); }
};

template <typename T>
using ParamList = std::vector<Param<T>*>;

template <typename T>
size_t count_params(const ParamList<T>& params) {
  size_t total = 0;
  for (auto* p : params) total += p->size();
  return total;
}

template <typename T>
void zero_grads(const ParamList<T>& params) {
  for (auto* p : params) p->zero_grad();
}

// Order-sensitive checksum over parameter values (as float32 bit patterns).
template <typename T>
uint64_t checksum(const ParamList<T>& params);

}  // namespace mialab::nn

#include "mialab/nn/tensor_impl.hpp"
