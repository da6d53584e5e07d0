#include "mialab/image.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <sstream>

#include "mialab/error.hpp"
#include "mialab/fsutil.hpp"

namespace mialab {

ImageBuf::ImageBuf(int height, int width, float fill)
    : height_(height), width_(width), data_(size_t(height) * width * kChannels, fill) {
  require(height > 0 && width > 0, ErrorKind::kDimension, "image dimensions must be positive");
}

void ImageBuf::clamp01() {
  for (auto& v : data_) v = std::clamp(v, 0.0f, 1.0f);
}

static uint8_t to_byte(float v) {
  return static_cast<uint8_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
}

std::vector<uint8_t> encode_ppm(const ImageBuf& img) {
  std::string header = "P6\n" + std::to_string(img.width()) + " " + std::to_string(img.height()) + "\n255\n";
  std::vector<uint8_t> out(header.begin(), header.end());
  out.reserve(out.size() + img.size());
  for (float v : img.data()) out.push_back(to_byte(v));
  return out;
}

namespace {

// Reads one whitespace-delimited header token, skipping '#' comments.
std::string next_token(std::span<const uint8_t> bytes, size_t& pos) {
  while (pos < bytes.size()) {
    if (bytes[pos] == '#') {
      while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
    } else if (std::isspace(bytes[pos])) {
      ++pos;
    } else {
      break;
    }
  }
  std::string tok;
  while (pos < bytes.size() && !std::isspace(bytes[pos])) tok.push_back(static_cast<char>(bytes[pos++]));
  return tok;
}

}  // namespace

ImageBuf decode_ppm(std::span<const uint8_t> bytes) {
  size_t pos = 0;
  if (next_token(bytes, pos) != "P6") fail(ErrorKind::kData, "not a binary PPM (P6)");
  int w = 0, h = 0, maxval = 0;
  try {
    w = std::stoi(next_token(bytes, pos));
    h = std::stoi(next_token(bytes, pos));
    maxval = std::stoi(next_token(bytes, pos));
  } catch (const std::exception&) {
    fail(ErrorKind::kData, "malformed PPM header");
  }
  require(maxval == 255, ErrorKind::kData, "only 8-bit PPM supported");
  ++pos;  // single whitespace after maxval
  ImageBuf img(h, w);
  require(bytes.size() >= pos + img.size(), ErrorKind::kData, "truncated PPM payload");
  auto data = img.data();
  for (size_t i = 0; i < img.size(); ++i) data[i] = static_cast<float>(bytes[pos + i]) / 255.0f;
  return img;
}

void write_ppm(const std::filesystem::path& path, const ImageBuf& img) {
  auto bytes = encode_ppm(img);
  write_file_atomic(path, std::string(bytes.begin(), bytes.end()));
}

ImageBuf read_ppm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::kStorage, "cannot open " + path.string());
  std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_ppm(bytes);
}

ImageBuf quantize(const ImageBuf& img) {
  ImageBuf out = img;
  for (auto& v : out.data()) v = static_cast<float>(to_byte(v)) / 255.0f;
  return out;
}

}  // namespace mialab
