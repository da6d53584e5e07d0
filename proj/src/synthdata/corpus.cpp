#include "mialab/synthdata/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <random>

#include "mialab/error.hpp"
#include "mialab/fsutil.hpp"
#include "mialab/rng.hpp"
#include "mialab/synthdata/caption.hpp"

namespace mialab::synth {

namespace fs = std::filesystem;

const char* institution_tag(Institution inst) {
  switch (inst) {
    case Institution::kA: return "A";
    case Institution::kB: return "B";
    case Institution::kWild: return "WILD";
  }
  return "?";
}

Institution parse_institution(const std::string& tag) {
  if (tag == "A") return Institution::kA;
  if (tag == "B") return Institution::kB;
  if (tag == "WILD" || tag == "wild") return Institution::kWild;
  fail(ErrorKind::kConfig, "unknown institution tag '" + tag + "'");
}

CorpusStyle default_style(Institution inst) {
  CorpusStyle s;
  switch (inst) {
    case Institution::kA:
      s.hue_lo = 95.0;
      s.hue_hi = 135.0;
      s.frame_tint = {0.12f, 0.10f, 0.08f};
      s.frame_mix = 1.0;
      break;
    case Institution::kB:
      s.hue_lo = 145.0;
      s.hue_hi = 185.0;
      s.frame_tint = {0.12f, 0.10f, 0.08f};
      s.frame_mix = 1.0;
      break;
    case Institution::kWild:
      s.hue_lo = 0.0;
      s.hue_hi = 360.0;
      s.sat_lo = 0.25;
      s.sat_hi = 0.7;
      s.val_lo = 0.45;
      s.val_hi = 0.9;
      s.frame_mix = 1.0;
      s.frame_prob = 0.5;
      s.random_frame_tint = true;
      s.center_jitter = 0.09;
      s.scale_jitter = 0.12;
      break;
  }
  return s;
}

CorpusSpec CorpusSpec::make(Institution inst, int count, uint64_t seed, int size) {
  CorpusSpec spec;
  spec.institution = inst;
  spec.count = count;
  spec.seed = seed;
  spec.size = size;
  spec.style = default_style(inst);
  return spec;
}

std::array<float, 3> hsv_to_rgb(double h, double s, double v) {
  h = std::fmod(h, 360.0);
  if (h < 0) h += 360.0;
  const double c = v * s;
  const double hp = h / 60.0;
  const double x = c * (1.0 - std::fabs(std::fmod(hp, 2.0) - 1.0));
  double r = 0, g = 0, b = 0;
  switch (static_cast<int>(hp)) {
    case 0: r = c, g = x; break;
    case 1: r = x, g = c; break;
    case 2: g = c, b = x; break;
    case 3: g = x, b = c; break;
    case 4: r = x, b = c; break;
    default: r = c, b = x; break;
  }
  const double m = v - c;
  return {float(r + m), float(g + m), float(b + m)};
}

namespace {

struct HairTone {
  const char* name;
  std::array<float, 3> rgb;
};

constexpr HairTone kHair[] = {
    {"dark", {0.12f, 0.09f, 0.07f}},
    {"blond", {0.86f, 0.74f, 0.44f}},
    {"red", {0.62f, 0.24f, 0.10f}},
    {"gray", {0.62f, 0.62f, 0.64f}},
};

constexpr std::array<float, 3> kSkin[] = {
    {0.96f, 0.80f, 0.69f}, {0.90f, 0.72f, 0.58f}, {0.78f, 0.57f, 0.42f}, {0.58f, 0.40f, 0.28f}, {0.40f, 0.27f, 0.18f},
};

bool in_ellipse(double x, double y, double cx, double cy, double rx, double ry) {
  const double dx = (x - cx) / rx, dy = (y - cy) / ry;
  return dx * dx + dy * dy <= 1.0;
}

void paint(ImageBuf& img, int y, int x, const std::array<float, 3>& c) {
  for (int ch = 0; ch < 3; ++ch) img.at(y, x, ch) = c[ch];
}

}  // namespace

std::string corpus_image_id(const CorpusSpec& spec, int index) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%s-%016llx-%05d", institution_tag(spec.institution),
                static_cast<unsigned long long>(spec.seed), index);
  return buf;
}

RenderedFace render_face(const CorpusSpec& spec, int index) {
  const auto& st = spec.style;
  const int n = spec.size;
  const double u = n / 32.0;  // geometry is authored on a 32 px grid
  Rng rng(derive_seed(spec.seed, static_cast<uint64_t>(index)));
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  auto between = [&](double lo, double hi) { return lo + (hi - lo) * unif(rng); };

  RenderedFace out;
  out.background_hue = std::fmod(between(st.hue_lo, st.hue_hi), 360.0);
  const double sat = between(st.sat_lo, st.sat_hi);
  const double val = between(st.val_lo, st.val_hi);

  const int hair_idx = std::min(3, static_cast<int>(unif(rng) * 4));
  const auto skin = kSkin[std::min(4, static_cast<int>(unif(rng) * 5))];
  const auto clothes = hsv_to_rgb(between(0, 360), between(0.2, 0.7), between(0.2, 0.7));

  const double cx = n / 2.0 + between(-1, 1) * st.center_jitter * n;
  const double cy = n * 0.5 + between(-1, 1) * st.center_jitter * n;
  const double scale = 1.0 + between(-1, 1) * st.scale_jitter;
  const double rx = 7.0 * u * scale, ry = 9.0 * u * scale;
  const double hair_line = cy - ry * between(0.25, 0.55);
  const double eye_y = cy - ry * 0.08, eye_dx = rx * 0.42;
  const double mouth_y = cy + ry * 0.5, mouth_hw = rx * between(0.25, 0.45);

  ImageBuf img(n, n);
  for (int y = 0; y < n; ++y) {
    // mild vertical lighting falloff
    const double shade = 1.0 + 0.08 * (0.5 - (y + 0.5) / n);
    const auto bg = hsv_to_rgb(out.background_hue, sat, std::clamp(val * shade, 0.0, 1.0));
    for (int x = 0; x < n; ++x) {
      const double px = x + 0.5, py = y + 0.5;
      auto color = bg;
      if (in_ellipse(px, py, cx, n + 2.0 * u, 12.0 * u * scale, 9.0 * u)) color = clothes;
      if (in_ellipse(px, py, cx, cy, rx, ry)) color = py < hair_line ? kHair[hair_idx].rgb : skin;
      else if (in_ellipse(px, py, cx, cy - 0.6 * u, rx * 1.12, ry * 1.08) && py < cy) color = kHair[hair_idx].rgb;
      paint(img, y, x, color);
    }
  }

  const std::array<float, 3> dark{0.08f, 0.06f, 0.06f};
  const std::array<float, 3> lips{0.55f, 0.18f, 0.18f};
  for (int side = -1; side <= 1; side += 2) {
    const int ex = static_cast<int>(std::floor(cx + side * eye_dx)), ey = static_cast<int>(std::floor(eye_y));
    for (int dy = 0; dy < std::max(1, int(u)); ++dy)
      for (int dx = 0; dx < std::max(1, int(u)); ++dx)
        if (ey + dy >= 0 && ey + dy < n && ex + dx >= 0 && ex + dx < n) paint(img, ey + dy, ex + dx, dark);
  }
  const int my = static_cast<int>(std::floor(mouth_y));
  if (my >= 0 && my < n)
    for (int x = static_cast<int>(std::floor(cx - mouth_hw)); x <= static_cast<int>(std::floor(cx + mouth_hw)); ++x)
      if (x >= 0 && x < n) paint(img, my, x, lips);

  // drawn unconditionally so the noise stream does not depend on the style
  const bool framed = unif(rng) < st.frame_prob;
  const auto random_tint = hsv_to_rgb(between(0, 360), between(0, 1), between(0.05, 0.95));
  const auto tint = st.random_frame_tint ? random_tint : st.frame_tint;
  if (st.frame_mix > 0 && framed) {
    for (int y = 0; y < n; ++y)
      for (int x = 0; x < n; ++x) {
        if (y != 0 && x != 0 && y != n - 1 && x != n - 1) continue;
        for (int ch = 0; ch < 3; ++ch)
          img.at(y, x, ch) = float((1.0 - st.frame_mix) * img.at(y, x, ch) + st.frame_mix * tint[ch]);
      }
  }

  if (st.pixel_noise > 0) {
    std::normal_distribution<float> noise(0.0f, static_cast<float>(st.pixel_noise));
    for (auto& v : img.data()) v += noise(rng);
  }
  img.clamp01();

  out.image = std::move(img);
  out.attrs.hair = kHair[hair_idx].name;
  out.attrs.hue_bucket = static_cast<int>(out.background_hue / 30.0);
  return out;
}

DatasetManifest gen_corpus(const CorpusSpec& spec, const fs::path& out_dir) {
  require(spec.count >= 1, ErrorKind::kConfig, "corpus count must be >= 1");
  require(spec.size >= 8, ErrorKind::kConfig, "image size must be >= 8");
  ensure_dir(out_dir / "images");
  DatasetManifest m;
  m.root = out_dir;
  const std::string source = institution_tag(spec.institution);
  for (int i = 0; i < spec.count; ++i) {
    auto face = render_face(spec, i);
    Record r;
    r.image_id = corpus_image_id(spec, i);
    r.path = "images/" + r.image_id + ".ppm";
    r.source = source;
    r.role = Role::kUnseen;
    r.attrs = face.attrs;
    r.caption = caption(r);
    write_ppm(out_dir / r.path, face.image);
    m.records.push_back(std::move(r));
  }
  write_manifest(out_dir / "manifest.jsonl", m);
  return m;
}

}  // namespace mialab::synth
