#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "mialab/attack/attack.hpp"
#include "mialab/ldm/diffusion.hpp"
#include "mialab/metrics/interval.hpp"
#include "mialab/synthdata/manifest.hpp"

namespace mialab::exp {

// Sizes and training budgets of one reproduction. "desk" is the default;
// "smoke" is a minutes-scale variant for tests.
struct Scale {
  std::string name = "desk";
  int corpus_per_institution = 1000;
  double seen_fraction = 0.5;
  int wild_count = 1000;
  int wild_pretrain_count = 600;
  int generated_count = 250;
  int sample_steps = 50;
  double guidance_scale = 7.5;
  int finetune_epochs = 10;
  ldm::DiffusionConfig base;
  ldm::FinetuneOptions finetune;
  attack::AttackConfig attack;

  static Scale desk();
  static Scale smoke();
  static Scale by_name(const std::string& name);  // config error if unknown
  nlohmann::json to_json() const;
};

struct RunConfig {
  std::filesystem::path workspace = "ws";
  uint64_t seed = 1;
  Scale scale = Scale::desk();
  int workers = 1;
  std::ostream* log = nullptr;  // cache and progress lines; stderr when null
};

struct ExperimentSpec {
  std::string id;
  std::string name;
  std::string train_pos, train_neg, test_pos, test_neg;
  // Apply to the training positives only; unset means the scale default.
  std::optional<int> target_epochs;
  std::optional<double> guidance_scale;
  std::optional<std::string> prompt_override;
  synth::MixRatio mix{1, 1};  // used by gen-A+wild
  std::vector<double> sweep;  // non-empty: run as a guidance sweep
  std::vector<uint64_t> seeds{1, 2, 3, 4, 5};

  static ExperimentSpec from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
  static ExperimentSpec load(const std::filesystem::path& path);
};

// A .json file, or every .json file in a directory ordered by numeric id.
std::vector<ExperimentSpec> load_specs(const std::filesystem::path& path);

// Dataset selectors. Real: seen-A, unseen-A, seen-B, unseen-B, real-A,
// real-B, wild, wild-pretrain (base-model corpus), seen-A-wm, seen-A-hwm. Generated: gen-<T>[-fresh] with
// T in {A, B, A-wm, A-hwm, A+wild, NFT-A, NFT-B}; -fresh draws a second,
// disjoint sample from the same model.
struct Selector {
  std::string text;
  bool generated = false;
  std::string target;  // fine-tuning target (A, B, A-wm, A-hwm, A+wild) or NFT
  std::string institution;  // whose prompt is used: A or B
  std::string prompt;
  int epochs = 0;
  double guidance = 7.5;
  synth::MixRatio mix{1, 1};
  bool fresh = false;

  std::string key() const;  // cache key / directory name
};

// Config error for unknown names. Overrides from spec apply when
// with_overrides is set (the training-positive slot).
Selector resolve_selector(const std::string& text, const ExperimentSpec& spec, const Scale& scale, bool with_overrides);

struct SweepPoint {
  double scale = 0.0;
  std::vector<double> aucs;
  metrics::IntervalEstimate interval;
  std::optional<double> fid;
  std::string error;
};

struct ExperimentResult {
  std::string id;
  ExperimentSpec spec;
  std::vector<double> aucs;
  metrics::IntervalEstimate interval;
  std::optional<double> baseline_auc;
  std::optional<double> fid;
  double seconds = 0.0;
  std::string error;  // non-empty when the row failed
  std::vector<SweepPoint> sweep;
  std::optional<double> sweep_spearman;  // Spearman(AUC mean, FID) over the sweep

  bool ok() const { return error.empty(); }
  nlohmann::json to_json() const;
};

// Owns a workspace: corpora, checkpoints, generated sets, scores, reports.
// Every artifact is built at most once per workspace and reloaded from disk
// afterwards; concurrent requests for one artifact wait for a single build.
class Lab {
 public:
  explicit Lab(RunConfig cfg);
  ~Lab();
  Lab(const Lab&) = delete;
  Lab& operator=(const Lab&) = delete;

  const RunConfig& config() const { return cfg_; }
  const std::filesystem::path& workspace() const { return cfg_.workspace; }

  synth::DatasetManifest dataset(const Selector& sel);
  synth::DatasetManifest dataset(const std::string& selector);
  ldm::DiffusionCheckpoint base_model();
  ldm::DiffusionCheckpoint target_model(const std::string& target, int epochs, synth::MixRatio mix = {1, 1});

  ExperimentResult run(const ExperimentSpec& spec);
  ExperimentResult sweep(const ExperimentSpec& spec, const std::vector<double>& scales);

  // Number of builds (not cache hits) per artifact kind: corpus, base,
  // finetune, generate, attack.
  std::map<std::string, int> build_counts() const;

  void log(const std::string& line);

 private:
  struct Impl;
  RunConfig cfg_;
  std::unique_ptr<Impl> impl_;
};

ExperimentResult run_experiment(Lab& lab, const ExperimentSpec& spec);

ExperimentResult guidance_sweep(Lab& lab, const ExperimentSpec& base, const std::vector<double>& scales = {0, 4, 8, 12, 16});

// Row-4 spec with the fine-tuning set replaced by mix(seen-A, wild, ratio);
// ratio a:0 returns row4 unchanged.
ExperimentSpec dilution_spec(const ExperimentSpec& row4, synth::MixRatio ratio);
ExperimentResult dilution_experiment(Lab& lab, const ExperimentSpec& row4, synth::MixRatio ratio);

struct MatrixReport {
  std::vector<ExperimentResult> rows;
  double seconds = 0.0;
};

// Runs all rows (up to cfg.workers in parallel; results do not depend on the
// worker count), recording failures per row, and writes results.csv,
// results.md, results.json, timings.csv and, for sweep rows, sweep.csv into
// out_dir.
MatrixReport run_matrix(Lab& lab, const std::vector<ExperimentSpec>& specs, const std::filesystem::path& out_dir);

std::string results_csv(const std::vector<ExperimentResult>& rows);
std::string results_markdown(const std::vector<ExperimentResult>& rows);
std::string sweep_csv(const ExperimentResult& row);

}  // namespace mialab::exp
