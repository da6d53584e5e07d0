#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "mialab/image.hpp"

namespace mialab::synth {

enum class Role { kSeen, kUnseen, kGenerated };
enum class WatermarkKind { kNone, kVisible, kHidden };

const char* role_name(Role r);
Role parse_role(const std::string& s);
const char* watermark_name(WatermarkKind k);
WatermarkKind parse_watermark(const std::string& s);

// Synthesis attributes carried by procedurally generated records.
struct Attributes {
  std::string hair;      // dark | blond | red | gray
  int hue_bucket = -1;   // background hue / 30 degrees
  bool operator==(const Attributes&) const = default;
};

struct Record {
  std::string image_id;
  std::string path;  // relative to the manifest root
  std::string caption;
  std::string source;  // institution tag: A | B | WILD
  Role role = Role::kUnseen;
  WatermarkKind watermark = WatermarkKind::kNone;
  std::optional<Attributes> attrs;
  std::optional<uint64_t> seed;  // generator seed of the batch that produced a generated image
  bool operator==(const Record&) const = default;
};

// Ordered list of records plus the directory their paths are relative to.
struct DatasetManifest {
  std::vector<Record> records;
  std::filesystem::path root;

  size_t size() const { return records.size(); }
  bool empty() const { return records.empty(); }

  std::filesystem::path resolve(const Record& r) const { return root / r.path; }

  // Unique ids, every path resolves to a file.
  void validate() const;

  std::vector<ImageBuf> load_images() const;
  std::vector<std::string> ids() const;

  // Same records, paths rebased so they resolve against new_root.
  DatasetManifest rebased(const std::filesystem::path& new_root) const;
};

std::string to_jsonl(const DatasetManifest& m);
DatasetManifest from_jsonl(const std::string& text, const std::filesystem::path& root);

// The manifest file lives in its root directory.
void write_manifest(const std::filesystem::path& path, const DatasetManifest& m);
DatasetManifest read_manifest(const std::filesystem::path& path);

// Throws an integrity error if the two manifests share any image_id.
void require_disjoint(const DatasetManifest& a, const DatasetManifest& b, const std::string& what);

// Partitions into (seen, unseen) by a seeded shuffle. Record order inside each
// part follows the input order.
std::pair<DatasetManifest, DatasetManifest> partition(const DatasetManifest& m, double seen_fraction, uint64_t seed);

struct MixRatio {
  int a = 1;
  int b = 1;
};

// Takes k*ratio.a records of a and k*ratio.b of b (leading records), with k as
// large as both inputs allow.
DatasetManifest mix(const DatasetManifest& a, const DatasetManifest& b, MixRatio ratio);
// Exact per-source counts; size error when either input is too small.
DatasetManifest mix_counts(const DatasetManifest& a, const DatasetManifest& b, size_t count_a, size_t count_b);

// Imports every *.ppm under dir (sorted by name) as unseen, uncaptioned records.
DatasetManifest import_folder(const std::filesystem::path& dir, const std::string& source);

}  // namespace mialab::synth
