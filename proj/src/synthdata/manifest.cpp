#include "mialab/synthdata/manifest.hpp"

#include <algorithm>
#include <numeric>
#include <set>
#include <sstream>

#include "json.hpp"
#include "mialab/error.hpp"
#include "mialab/fsutil.hpp"
#include "mialab/rng.hpp"

namespace mialab::synth {

namespace fs = std::filesystem;
using nlohmann::json;

const char* role_name(Role r) {
  switch (r) {
    case Role::kSeen: return "seen";
    case Role::kUnseen: return "unseen";
    case Role::kGenerated: return "generated";
  }
  return "?";
}

Role parse_role(const std::string& s) {
  if (s == "seen") return Role::kSeen;
  if (s == "unseen") return Role::kUnseen;
  if (s == "generated") return Role::kGenerated;
  fail(ErrorKind::kData, "unknown role '" + s + "'");
}

const char* watermark_name(WatermarkKind k) {
  switch (k) {
    case WatermarkKind::kNone: return "none";
    case WatermarkKind::kVisible: return "visible";
    case WatermarkKind::kHidden: return "hidden";
  }
  return "?";
}

WatermarkKind parse_watermark(const std::string& s) {
  if (s == "none") return WatermarkKind::kNone;
  if (s == "visible") return WatermarkKind::kVisible;
  if (s == "hidden") return WatermarkKind::kHidden;
  fail(ErrorKind::kData, "unknown watermark kind '" + s + "'");
}

void DatasetManifest::validate() const {
  std::set<std::string> seen_ids;
  for (const auto& r : records) {
    if (!seen_ids.insert(r.image_id).second) fail(ErrorKind::kIntegrity, "duplicate image_id " + r.image_id);
    if (!fs::exists(resolve(r))) fail(ErrorKind::kIntegrity, "missing image for " + r.image_id + ": " + resolve(r).string());
  }
}

std::vector<ImageBuf> DatasetManifest::load_images() const {
  std::vector<ImageBuf> out;
  out.reserve(records.size());
  for (const auto& r : records) out.push_back(read_ppm(resolve(r)));
  return out;
}

std::vector<std::string> DatasetManifest::ids() const {
  std::vector<std::string> out;
  out.reserve(records.size());
  for (const auto& r : records) out.push_back(r.image_id);
  return out;
}

DatasetManifest DatasetManifest::rebased(const fs::path& new_root) const {
  DatasetManifest out;
  out.root = new_root;
  out.records = records;
  for (auto& r : out.records) r.path = fs::relative(resolve(r), new_root).generic_string();
  return out;
}

std::string to_jsonl(const DatasetManifest& m) {
  std::string out;
  for (const auto& r : m.records) {
    json j;
    j["image_id"] = r.image_id;
    j["path"] = r.path;
    j["caption"] = r.caption;
    j["source"] = r.source;
    j["role"] = role_name(r.role);
    j["watermark"] = watermark_name(r.watermark);
    if (r.attrs) j["attrs"] = {{"hair", r.attrs->hair}, {"hue_bucket", r.attrs->hue_bucket}};
    if (r.seed) j["seed"] = *r.seed;
    out += j.dump();
    out += '\n';
  }
  return out;
}

DatasetManifest from_jsonl(const std::string& text, const fs::path& root) {
  DatasetManifest m;
  m.root = root;
  std::istringstream in(text);
  std::string line;
  size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      auto j = json::parse(line);
      Record r;
      r.image_id = j.at("image_id").get<std::string>();
      r.path = j.at("path").get<std::string>();
      r.caption = j.value("caption", "");
      r.source = j.at("source").get<std::string>();
      r.role = parse_role(j.at("role").get<std::string>());
      r.watermark = parse_watermark(j.value("watermark", "none"));
      if (j.contains("attrs")) {
        Attributes a;
        a.hair = j["attrs"].value("hair", "");
        a.hue_bucket = j["attrs"].value("hue_bucket", -1);
        r.attrs = a;
      }
      if (j.contains("seed")) r.seed = j["seed"].get<uint64_t>();
      m.records.push_back(std::move(r));
    } catch (const json::exception& e) {
      fail(ErrorKind::kData, "manifest line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return m;
}

void write_manifest(const fs::path& path, const DatasetManifest& m) {
  auto dir = path.has_parent_path() ? path.parent_path() : fs::path(".");
  write_file_atomic(path, to_jsonl(fs::weakly_canonical(dir) == fs::weakly_canonical(m.root) ? m : m.rebased(dir)));
}

DatasetManifest read_manifest(const fs::path& path) {
  auto dir = path.has_parent_path() ? path.parent_path() : fs::path(".");
  return from_jsonl(read_file(path), dir);
}

void require_disjoint(const DatasetManifest& a, const DatasetManifest& b, const std::string& what) {
  std::set<std::string> ids;
  for (const auto& r : a.records) ids.insert(r.image_id);
  for (const auto& r : b.records)
    if (ids.count(r.image_id)) fail(ErrorKind::kIntegrity, what + ": image_id " + r.image_id + " appears in both sets");
}

std::pair<DatasetManifest, DatasetManifest> partition(const DatasetManifest& m, double seen_fraction, uint64_t seed) {
  if (!(seen_fraction > 0.0 && seen_fraction < 1.0)) fail(ErrorKind::kConfig, "seen fraction must lie in (0,1)");
  const size_t n = m.records.size();
  std::vector<size_t> order(n);
  std::iota(order.begin(), order.end(), size_t{0});
  Rng rng(derive_seed(seed, "partition"));
  std::shuffle(order.begin(), order.end(), rng);
  const auto n_seen = static_cast<size_t>(std::llround(seen_fraction * static_cast<double>(n)));
  std::vector<bool> is_seen(n, false);
  for (size_t i = 0; i < n_seen; ++i) is_seen[order[i]] = true;
  DatasetManifest seen, unseen;
  seen.root = unseen.root = m.root;
  for (size_t i = 0; i < n; ++i) {
    Record r = m.records[i];
    r.role = is_seen[i] ? Role::kSeen : Role::kUnseen;
    (is_seen[i] ? seen : unseen).records.push_back(std::move(r));
  }
  return {std::move(seen), std::move(unseen)};
}

DatasetManifest mix_counts(const DatasetManifest& a, const DatasetManifest& b, size_t count_a, size_t count_b) {
  if (count_a > a.size() || count_b > b.size())
    fail(ErrorKind::kSize, "mix needs " + std::to_string(count_a) + "+" + std::to_string(count_b) + " records, inputs have " +
                                std::to_string(a.size()) + "+" + std::to_string(b.size()));
  DatasetManifest out;
  out.root = a.root;
  auto take = [&](const DatasetManifest& src, size_t count) {
    for (size_t i = 0; i < count; ++i) {
      Record r = src.records[i];
      r.path = fs::relative(src.resolve(src.records[i]), out.root).generic_string();
      out.records.push_back(std::move(r));
    }
  };
  take(a, count_a);
  take(b, count_b);
  return out;
}

DatasetManifest mix(const DatasetManifest& a, const DatasetManifest& b, MixRatio ratio) {
  if (ratio.a < 0 || ratio.b < 0 || (ratio.a == 0 && ratio.b == 0)) fail(ErrorKind::kConfig, "mix ratio must be non-negative and not 0:0");
  size_t k = SIZE_MAX;
  if (ratio.a > 0) k = std::min(k, a.size() / static_cast<size_t>(ratio.a));
  if (ratio.b > 0) k = std::min(k, b.size() / static_cast<size_t>(ratio.b));
  if (k == 0) fail(ErrorKind::kSize, "inputs too small for mix ratio " + std::to_string(ratio.a) + ":" + std::to_string(ratio.b));
  DatasetManifest out = mix_counts(a, b, k * ratio.a, k * ratio.b);
  if (ratio.b == 0) out.root = a.root;
  return out;
}

DatasetManifest import_folder(const fs::path& dir, const std::string& source) {
  if (!fs::is_directory(dir)) fail(ErrorKind::kStorage, "not a directory: " + dir.string());
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".ppm") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  DatasetManifest m;
  m.root = dir;
  for (const auto& f : files) {
    Record r;
    r.image_id = source + "-" + f.stem().string();
    r.path = f.filename().string();
    r.source = source;
    m.records.push_back(std::move(r));
  }
  return m;
}

}  // namespace mialab::synth
