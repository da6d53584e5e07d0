#pragma once

#include <array>
#include <filesystem>
#include <string>

#include "mialab/image.hpp"
#include "mialab/synthdata/manifest.hpp"

namespace mialab::synth {

enum class Placement { kCornerTopRight, kFullFrame };

// Fixed binary logo. Set bits render white, clear bits render logo red.
struct Glyph {
  static constexpr int kSize = 8;
  std::array<std::array<bool, kSize>, kSize> bits{};
  std::array<float, 3> on{1.0f, 1.0f, 1.0f};
  std::array<float, 3> off{0.8f, 0.05f, 0.1f};

  float pixel(int gy, int gx, int ch) const { return bits[gy][gx] ? on[ch] : off[ch]; }
};

const Glyph& default_glyph();

struct WatermarkSpec {
  WatermarkKind kind = WatermarkKind::kNone;
  float alpha = 0.0f;
  Placement placement = Placement::kCornerTopRight;
  const Glyph* glyph = &default_glyph();

  // Opaque logo in the top-right 25% x 25% of the frame.
  static WatermarkSpec visible();
  // Full-frame logo blended at 1%.
  static WatermarkSpec hidden();
  static WatermarkSpec none();
  static WatermarkSpec for_kind(WatermarkKind kind);

  // VISIBLE => alpha 1 at the corner, HIDDEN => alpha 0.01 full-frame.
  void validate() const;
};

struct Box {
  int y0, x0, h, w;
};

// Region covered by the glyph; dimension error if the glyph does not fit.
Box glyph_box(int height, int width, const WatermarkSpec& wm);

// out = (1 - alpha) * img + alpha * glyph on covered pixels, clamped to
// [0,1]. Pixels outside the covered box are copied bit-for-bit.
ImageBuf apply_watermark(const ImageBuf& img, const WatermarkSpec& wm);

// Watermarks every image of m into out_dir; ids get suffix "-wm"/"-hwm".
DatasetManifest watermark_corpus(const DatasetManifest& m, const WatermarkSpec& wm, const std::filesystem::path& out_dir);

}  // namespace mialab::synth
