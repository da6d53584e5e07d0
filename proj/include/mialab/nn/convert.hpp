#pragma once

#include <span>
#include <vector>

#include "mialab/image.hpp"
#include "mialab/nn/tensor.hpp"

namespace mialab::nn {

// Packs images into a [3][N][H][W] tensor, applying v -> v * scale + shift.
template <typename T>
Tensor<T> images_to_tensor(std::span<const ImageBuf> images, T scale = T(1), T shift = T(0)) {
  require(!images.empty(), ErrorKind::kData, "empty image batch");
  const int h = images[0].height(), w = images[0].width();
  Tensor<T> t(ImageBuf::kChannels, static_cast<int>(images.size()), h, w);
  for (int n = 0; n < t.n; ++n) {
    const auto& img = images[n];
    if (img.height() != h || img.width() != w) fail(ErrorKind::kDimension, "mixed image sizes in batch");
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        for (int c = 0; c < 3; ++c) t.at(c, n, y, x) = static_cast<T>(img.at(y, x, c)) * scale + shift;
  }
  return t;
}

template <typename T>
std::vector<ImageBuf> tensor_to_images(const Tensor<T>& t) {
  std::vector<ImageBuf> out;
  out.reserve(t.n);
  for (int n = 0; n < t.n; ++n) {
    ImageBuf img(t.h, t.w);
    for (int y = 0; y < t.h; ++y)
      for (int x = 0; x < t.w; ++x)
        for (int c = 0; c < 3; ++c) img.at(y, x, c) = static_cast<float>(t.at(c, n, y, x));
    img.clamp01();
    out.push_back(std::move(img));
  }
  return out;
}

// Selects a subset of the batch dimension.
template <typename T>
Tensor<T> gather_batch(const Tensor<T>& t, std::span<const int> idx) {
  Tensor<T> out(t.c, static_cast<int>(idx.size()), t.h, t.w);
  const size_t hw = t.spatial();
  for (int c = 0; c < t.c; ++c)
    for (size_t j = 0; j < idx.size(); ++j) {
      const T* src = t.data.data() + (size_t(c) * t.n + idx[j]) * hw;
      std::copy(src, src + hw, out.data.data() + (size_t(c) * out.n + j) * hw);
    }
  return out;
}

template <typename T, typename U>
Tensor<U> cast(const Tensor<T>& t) {
  Tensor<U> out(t.c, t.n, t.h, t.w);
  for (size_t i = 0; i < t.size(); ++i) out.data[i] = static_cast<U>(t.data[i]);
  return out;
}

}  // namespace mialab::nn
