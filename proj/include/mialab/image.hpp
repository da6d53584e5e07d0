#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace mialab {

// H x W x 3 RGB image, row-major interleaved, values in [0,1].
class ImageBuf {
 public:
  static constexpr int kChannels = 3;

  ImageBuf() = default;
  ImageBuf(int height, int width, float fill = 0.0f);

  int height() const { return height_; }
  int width() const { return width_; }
  size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  float& at(int y, int x, int ch) { return data_[(size_t(y) * width_ + x) * kChannels + ch]; }
  float at(int y, int x, int ch) const { return data_[(size_t(y) * width_ + x) * kChannels + ch]; }

  std::span<float> data() { return data_; }
  std::span<const float> data() const { return data_; }

  void clamp01();
  bool operator==(const ImageBuf& other) const = default;

 private:
  int height_ = 0;
  int width_ = 0;
  std::vector<float> data_;
};

// Binary PPM (P6, maxval 255). Quantization to 8 bit happens here and only here.
std::vector<uint8_t> encode_ppm(const ImageBuf& img);
ImageBuf decode_ppm(std::span<const uint8_t> bytes);

void write_ppm(const std::filesystem::path& path, const ImageBuf& img);
ImageBuf read_ppm(const std::filesystem::path& path);

// Round-trips through 8-bit quantization without touching disk.
ImageBuf quantize(const ImageBuf& img);

}  // namespace mialab
