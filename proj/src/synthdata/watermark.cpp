#include "mialab/synthdata/watermark.hpp"

#include <algorithm>

#include "mialab/error.hpp"
#include "mialab/fsutil.hpp"

namespace mialab::synth {

namespace fs = std::filesystem;

const Glyph& default_glyph() {
  static const Glyph g = [] {
    static constexpr const char* kRows[Glyph::kSize] = {
        "########", "#.#..#.#", "#..##..#", "########", "#.####.#", "#.#..#.#", "#.#..#.#", "########",
    };
    Glyph out;
    for (int y = 0; y < Glyph::kSize; ++y)
      for (int x = 0; x < Glyph::kSize; ++x) out.bits[y][x] = kRows[y][x] == '#';
    return out;
  }();
  return g;
}

WatermarkSpec WatermarkSpec::visible() { return {WatermarkKind::kVisible, 1.0f, Placement::kCornerTopRight, &default_glyph()}; }

WatermarkSpec WatermarkSpec::hidden() { return {WatermarkKind::kHidden, 0.01f, Placement::kFullFrame, &default_glyph()}; }

WatermarkSpec WatermarkSpec::none() { return {WatermarkKind::kNone, 0.0f, Placement::kCornerTopRight, &default_glyph()}; }

WatermarkSpec WatermarkSpec::for_kind(WatermarkKind kind) {
  switch (kind) {
    case WatermarkKind::kVisible: return visible();
    case WatermarkKind::kHidden: return hidden();
    case WatermarkKind::kNone: return none();
  }
  return none();
}

void WatermarkSpec::validate() const {
  require(alpha >= 0.0f && alpha <= 1.0f, ErrorKind::kConfig, "watermark alpha must lie in [0,1]");
  require(glyph != nullptr, ErrorKind::kConfig, "watermark needs a glyph");
  if (kind == WatermarkKind::kVisible)
    require(alpha == 1.0f && placement == Placement::kCornerTopRight, ErrorKind::kConfig, "visible watermark must be opaque in the top-right corner");
  if (kind == WatermarkKind::kHidden)
    require(alpha == 0.01f && placement == Placement::kFullFrame, ErrorKind::kConfig, "hidden watermark must be 1% full-frame");
}

Box glyph_box(int height, int width, const WatermarkSpec& wm) {
  Box b{};
  if (wm.placement == Placement::kFullFrame) {
    b = {0, 0, height, width};
  } else {
    b.h = height / 4;
    b.w = width / 4;
    b.y0 = 0;
    b.x0 = width - b.w;
  }
  if (b.h < Glyph::kSize || b.w < Glyph::kSize)
    fail(ErrorKind::kDimension, "glyph (" + std::to_string(Glyph::kSize) + " px) does not fit a " + std::to_string(b.h) + "x" +
                                    std::to_string(b.w) + " placement box");
  return b;
}

ImageBuf apply_watermark(const ImageBuf& img, const WatermarkSpec& wm) {
  if (wm.kind == WatermarkKind::kNone) return img;
  require(wm.alpha >= 0.0f && wm.alpha <= 1.0f, ErrorKind::kConfig, "watermark alpha must lie in [0,1]");
  const Box b = glyph_box(img.height(), img.width(), wm);
  ImageBuf out = img;
  const float a = wm.alpha;
  for (int y = b.y0; y < b.y0 + b.h; ++y) {
    const int gy = (y - b.y0) * Glyph::kSize / b.h;
    for (int x = b.x0; x < b.x0 + b.w; ++x) {
      const int gx = (x - b.x0) * Glyph::kSize / b.w;
      for (int ch = 0; ch < 3; ++ch) {
        const float g = wm.glyph->pixel(gy, gx, ch);
        out.at(y, x, ch) = std::clamp((1.0f - a) * img.at(y, x, ch) + a * g, 0.0f, 1.0f);
      }
    }
  }
  return out;
}

DatasetManifest watermark_corpus(const DatasetManifest& m, const WatermarkSpec& wm, const fs::path& out_dir) {
  wm.validate();
  const std::string suffix = wm.kind == WatermarkKind::kVisible ? "-wm" : wm.kind == WatermarkKind::kHidden ? "-hwm" : "";
  ensure_dir(out_dir / "images");
  DatasetManifest out;
  out.root = out_dir;
  for (const auto& r : m.records) {
    Record w = r;
    w.image_id = r.image_id + suffix;
    w.path = "images/" + w.image_id + ".ppm";
    w.watermark = wm.kind;
    write_ppm(out_dir / w.path, apply_watermark(read_ppm(m.resolve(r)), wm));
    out.records.push_back(std::move(w));
  }
  write_manifest(out_dir / "manifest.jsonl", out);
  return out;
}

}  // namespace mialab::synth
