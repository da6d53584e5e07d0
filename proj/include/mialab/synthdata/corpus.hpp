#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>

#include "mialab/image.hpp"
#include "mialab/synthdata/manifest.hpp"

namespace mialab::synth {

enum class Institution { kA, kB, kWild };

const char* institution_tag(Institution inst);
Institution parse_institution(const std::string& tag);

// Appearance distribution of one institution's photos. The institution signal
// lives in the background hue range and the frame tint; face geometry uses
// the same distribution everywhere except for WILD's wider framing band.
struct CorpusStyle {
  double hue_lo = 0.0;  // degrees
  double hue_hi = 360.0;
  double sat_lo = 0.35, sat_hi = 0.6;
  double val_lo = 0.55, val_hi = 0.85;
  std::array<float, 3> frame_tint{0, 0, 0};
  double frame_mix = 0.0;  // 0 leaves the border untouched
  double frame_prob = 1.0;  // chance that an image gets the frame at all
  bool random_frame_tint = false;  // draw the tint per image instead
  double center_jitter = 0.06;  // fraction of image size
  double scale_jitter = 0.08;   // relative head size spread
  double pixel_noise = 0.015;
};

CorpusStyle default_style(Institution inst);

struct CorpusSpec {
  Institution institution = Institution::kA;
  int count = 1;
  uint64_t seed = 0;
  int size = 32;
  CorpusStyle style = default_style(Institution::kA);

  static CorpusSpec make(Institution inst, int count, uint64_t seed, int size = 32);
};

struct RenderedFace {
  ImageBuf image;
  Attributes attrs;
  double background_hue = 0.0;
};

// Pure function of (spec, index).
RenderedFace render_face(const CorpusSpec& spec, int index);

std::string corpus_image_id(const CorpusSpec& spec, int index);

// Writes count PPMs plus manifest.jsonl into out_dir, captioned with the
// default template.
DatasetManifest gen_corpus(const CorpusSpec& spec, const std::filesystem::path& out_dir);

// HSV (h in degrees, s, v in [0,1]) to RGB.
std::array<float, 3> hsv_to_rgb(double h, double s, double v);

}  // namespace mialab::synth
