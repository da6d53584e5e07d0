#include "mialab/experiments/experiments.hpp"

#include <algorithm>
#include <any>
#include <atomic>
#include <chrono>
#include <cstdio>
#include <future>
#include <iostream>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>
#include <unistd.h>

#include "mialab/fsutil.hpp"
#include "mialab/metrics/auc.hpp"
#include "mialab/metrics/baseline.hpp"
#include "mialab/metrics/features.hpp"
#include "mialab/rng.hpp"
#include "mialab/synthdata/caption.hpp"
#include "mialab/synthdata/corpus.hpp"
#include "mialab/synthdata/watermark.hpp"

namespace mialab::exp {

namespace fs = std::filesystem;
using nlohmann::json;
using synth::DatasetManifest;

namespace {

std::string fmt_num(double v, const char* f = "%g") {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

std::string hex8(uint64_t v) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%08llx", static_cast<unsigned long long>(v & 0xffffffffULL));
  return buf;
}

std::string ratio_text(synth::MixRatio r) { return std::to_string(r.a) + ":" + std::to_string(r.b); }

synth::MixRatio parse_ratio(const std::string& s) {
  const auto colon = s.find(':');
  if (colon == std::string::npos) fail(ErrorKind::kConfig, "mix ratio must look like a:b, got '" + s + "'");
  try {
    return {std::stoi(s.substr(0, colon)), std::stoi(s.substr(colon + 1))};
  } catch (const std::exception&) {
    fail(ErrorKind::kConfig, "mix ratio must look like a:b, got '" + s + "'");
  }
}

// "4@s12" -> "4-s12"
std::string dir_name(const std::string& id) {
  std::string out = id;
  for (char& c : out)
    if (!std::isalnum(static_cast<unsigned char>(c)) && c != '-' && c != '_' && c != '.' && c != '+') c = '-';
  return out;
}

// Targets built from seen-A share fine-tuning and sampling seeds, so rows that
// compare them differ only in the training data.
std::string seed_family(const std::string& target) { return target.rfind("A", 0) == 0 ? "A" : target; }

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

const std::set<std::string> kRealSelectors = {"seen-A", "unseen-A", "seen-B", "unseen-B", "real-A", "real-B", "wild", "wild-pretrain", "seen-A-wm", "seen-A-hwm"};
const std::set<std::string> kTargets = {"A", "B", "A-wm", "A-hwm", "A+wild"};

}  // namespace

// ---------------------------------------------------------------- scale

Scale Scale::desk() { return Scale{}; }

Scale Scale::smoke() {
  Scale s;
  s.name = "smoke";
  s.corpus_per_institution = 160;
  s.wild_count = 160;
  s.wild_pretrain_count = 120;
  s.generated_count = 100;
  s.sample_steps = 10;
  s.finetune_epochs = 2;
  s.base.ae_epochs = 2;
  s.base.epochs = 4;
  s.attack.epochs = 3;
  s.attack.min_per_class = 20;
  return s;
}

Scale Scale::by_name(const std::string& name) {
  if (name == "desk") return desk();
  if (name == "smoke") return smoke();
  fail(ErrorKind::kConfig, "unknown scale '" + name + "' (expected desk or smoke)");
}

json Scale::to_json() const {
  return {{"name", name},
          {"corpus_per_institution", corpus_per_institution},
          {"seen_fraction", seen_fraction},
          {"wild_count", wild_count},
          {"wild_pretrain_count", wild_pretrain_count},
          {"generated_count", generated_count},
          {"sample_steps", sample_steps},
          {"guidance_scale", guidance_scale},
          {"finetune_epochs", finetune_epochs},
          {"base", base.to_json()},
          {"finetune", {{"lr", finetune.lr}, {"batch_size", finetune.batch_size}, {"caption_dropout", finetune.caption_dropout}}},
          {"attack",
           {{"epochs", attack.epochs},
            {"batch_size", attack.batch_size},
            {"lr", attack.lr},
            {"val_fraction", attack.val_fraction},
            {"min_per_class", attack.min_per_class}}}};
}

// ---------------------------------------------------------------- specs

ExperimentSpec ExperimentSpec::from_json(const json& j) {
  static const std::set<std::string> kKeys = {"id", "name", "train_pos", "train_neg", "test_pos", "test_neg", "target_epochs",
                                              "guidance_scale", "prompt_override", "mix", "sweep", "seeds"};
  if (!j.is_object()) fail(ErrorKind::kConfig, "experiment spec must be a JSON object");
  for (const auto& [k, _] : j.items())
    if (!kKeys.count(k)) fail(ErrorKind::kConfig, "unknown experiment spec key '" + k + "'");
  ExperimentSpec s;
  try {
    s.id = j.at("id").is_string() ? j.at("id").get<std::string>() : std::to_string(j.at("id").get<int>());
    s.name = j.value("name", "");
    s.train_pos = j.at("train_pos");
    s.train_neg = j.at("train_neg");
    s.test_pos = j.at("test_pos");
    s.test_neg = j.at("test_neg");
    if (j.contains("target_epochs")) s.target_epochs = j["target_epochs"].get<int>();
    if (j.contains("guidance_scale")) s.guidance_scale = j["guidance_scale"].get<double>();
    if (j.contains("prompt_override")) s.prompt_override = j["prompt_override"].get<std::string>();
    if (j.contains("mix")) s.mix = parse_ratio(j["mix"].get<std::string>());
    if (j.contains("sweep")) s.sweep = j["sweep"].get<std::vector<double>>();
    if (j.contains("seeds")) s.seeds = j["seeds"].get<std::vector<uint64_t>>();
  } catch (const json::exception& e) {
    fail(ErrorKind::kConfig, std::string("experiment spec: ") + e.what());
  }
  if (s.seeds.empty()) fail(ErrorKind::kConfig, "experiment " + s.id + " has no seeds");
  if (s.target_epochs && *s.target_epochs < 0) fail(ErrorKind::kConfig, "target_epochs must be >= 0");
  if (s.guidance_scale && *s.guidance_scale < 0) fail(ErrorKind::kConfig, "guidance_scale must be >= 0");
  return s;
}

json ExperimentSpec::to_json() const {
  json j;
  j["id"] = id;
  if (!name.empty()) j["name"] = name;
  j["train_pos"] = train_pos;
  j["train_neg"] = train_neg;
  j["test_pos"] = test_pos;
  j["test_neg"] = test_neg;
  if (target_epochs) j["target_epochs"] = *target_epochs;
  if (guidance_scale) j["guidance_scale"] = *guidance_scale;
  if (prompt_override) j["prompt_override"] = *prompt_override;
  if (mix.a != 1 || mix.b != 1) j["mix"] = ratio_text(mix);
  if (!sweep.empty()) j["sweep"] = sweep;
  j["seeds"] = seeds;
  return j;
}

ExperimentSpec ExperimentSpec::load(const fs::path& path) {
  json j;
  try {
    j = json::parse(read_file(path));
  } catch (const json::parse_error& e) {
    fail(ErrorKind::kConfig, path.string() + ": " + e.what());
  }
  return from_json(j);
}

std::vector<ExperimentSpec> load_specs(const fs::path& path) {
  std::vector<ExperimentSpec> out;
  if (fs::is_regular_file(path)) {
    out.push_back(ExperimentSpec::load(path));
    return out;
  }
  if (!fs::is_directory(path)) fail(ErrorKind::kConfig, "no experiment specs at " + path.string());
  for (const auto& e : fs::directory_iterator(path))
    if (e.is_regular_file() && e.path().extension() == ".json") out.push_back(ExperimentSpec::load(e.path()));
  auto order = [](const ExperimentSpec& s) {
    char* end = nullptr;
    const long n = std::strtol(s.id.c_str(), &end, 10);
    return std::make_pair(end == s.id.c_str() ? LONG_MAX : n, s.id);
  };
  std::sort(out.begin(), out.end(), [&](const auto& a, const auto& b) { return order(a) < order(b); });
  return out;
}

// ---------------------------------------------------------------- selectors

std::string Selector::key() const {
  if (!generated) return text;
  std::string k = "gen-";
  if (target == "NFT") {
    k += "NFT-" + institution;
  } else {
    k += target + "-e" + std::to_string(epochs);
    if (target == "A+wild") k += "-m" + std::to_string(mix.a) + "x" + std::to_string(mix.b);
  }
  k += "-s" + fmt_num(guidance);
  if (prompt != synth::default_template().prompt(institution)) k += "-p" + hex8(fnv1a(prompt));
  if (fresh) k += "-fresh";
  return k;
}

Selector resolve_selector(const std::string& text, const ExperimentSpec& spec, const Scale& scale, bool with_overrides) {
  Selector s;
  s.text = text;
  if (kRealSelectors.count(text)) return s;
  std::string rest = text;
  if (rest.rfind("gen-", 0) != 0) fail(ErrorKind::kConfig, "unknown dataset selector '" + text + "'");
  rest = rest.substr(4);
  const std::string kFresh = "-fresh";
  if (rest.size() > kFresh.size() && rest.compare(rest.size() - kFresh.size(), kFresh.size(), kFresh) == 0) {
    s.fresh = true;
    rest.resize(rest.size() - kFresh.size());
  }
  s.generated = true;
  if (rest == "NFT-A" || rest == "NFT-B") {
    s.target = "NFT";
    s.institution = rest.substr(4);
  } else if (kTargets.count(rest)) {
    s.target = rest;
    s.institution = rest.substr(0, 1);
  } else {
    fail(ErrorKind::kConfig, "unknown dataset selector '" + text + "'");
  }
  s.prompt = synth::default_template().prompt(s.institution);
  s.guidance = scale.guidance_scale;
  s.epochs = s.target == "NFT" ? 0 : scale.finetune_epochs;
  if (s.target == "A+wild") s.mix = spec.mix;
  if (with_overrides) {
    if (spec.target_epochs && s.target != "NFT") s.epochs = *spec.target_epochs;
    if (spec.guidance_scale) s.guidance = *spec.guidance_scale;
    if (spec.prompt_override) s.prompt = *spec.prompt_override;
  }
  return s;
}

// ---------------------------------------------------------------- lab

struct Lab::Impl {
  std::mutex mu;
  std::map<std::string, std::shared_future<std::any>> memo;
  std::map<std::string, int> builds;
  std::mutex log_mu;
  metrics::RandomEmbedder embedder;

  explicit Impl(uint64_t embed_seed) : embedder(embed_seed) {}

  // Runs build once per key; concurrent callers share its result or error.
  template <typename T>
  T once(const std::string& key, const std::function<T()>& build) {
    std::promise<std::any> promise;
    std::shared_future<std::any> fut;
    bool owner = false;
    {
      std::lock_guard<std::mutex> lock(mu);
      auto it = memo.find(key);
      if (it == memo.end()) {
        fut = promise.get_future().share();
        memo.emplace(key, fut);
        owner = true;
      } else {
        fut = it->second;
      }
    }
    if (owner) {
      try {
        promise.set_value(std::any(build()));
      } catch (...) {
        promise.set_exception(std::current_exception());
      }
    }
    return std::any_cast<T>(fut.get());
  }

  void count(const std::string& kind) {
    std::lock_guard<std::mutex> lock(mu);
    ++builds[kind];
  }
};

Lab::Lab(RunConfig cfg) : cfg_(std::move(cfg)), impl_(std::make_unique<Impl>(derive_seed(cfg_.seed, "embedder"))) {
  require(cfg_.workers >= 1, ErrorKind::kConfig, "workers must be >= 1");
  for (const char* sub : {"corpora", "checkpoints", "generated", "scores", "reports"}) ensure_dir(cfg_.workspace / sub);
  const json stamp = {{"seed", cfg_.seed}, {"scale", cfg_.scale.to_json()}};
  const auto stamp_path = cfg_.workspace / "workspace.json";
  if (fs::exists(stamp_path)) {
    json prev;
    try {
      prev = json::parse(read_file(stamp_path));
    } catch (const json::parse_error&) {
      fail(ErrorKind::kStorage, "corrupt " + stamp_path.string());
    }
    if (prev != stamp)
      fail(ErrorKind::kConfig, "workspace " + cfg_.workspace.string() + " was created with a different seed or scale; use a fresh workspace");
  } else {
    write_file_atomic(stamp_path, stamp.dump(2) + "\n");
  }
}

Lab::~Lab() = default;

void Lab::log(const std::string& line) {
  std::lock_guard<std::mutex> lock(impl_->log_mu);
  std::ostream& os = cfg_.log ? *cfg_.log : std::cerr;
  os << line << std::endl;
}

std::map<std::string, int> Lab::build_counts() const {
  std::lock_guard<std::mutex> lock(impl_->mu);
  return impl_->builds;
}

namespace {

// Builds a directory artifact under a temporary name and renames it into
// place, so a crash never leaves a half-written artifact behind.
DatasetManifest publish_dir(const fs::path& final_dir, const std::function<void(const fs::path&)>& build) {
  const fs::path tmp = final_dir.string() + ".tmp-" + std::to_string(::getpid());
  std::error_code ec;
  fs::remove_all(tmp, ec);
  build(tmp);
  fs::rename(tmp, final_dir, ec);
  if (ec) fail(ErrorKind::kStorage, "cannot publish " + final_dir.string() + ": " + ec.message());
  return synth::read_manifest(final_dir / "manifest.jsonl");
}

}  // namespace

DatasetManifest Lab::dataset(const std::string& selector) {
  ExperimentSpec none;
  return dataset(resolve_selector(selector, none, cfg_.scale, false));
}

DatasetManifest Lab::dataset(const Selector& sel) {
  const auto& sc = cfg_.scale;
  const uint64_t g = cfg_.seed;
  auto corpus = [&](const std::string& name, synth::Institution inst, int count) {
    return impl_->once<DatasetManifest>("corpus:" + name, [&, name, inst, count] {
      const auto dir = cfg_.workspace / "corpora" / name;
      if (fs::exists(dir / "manifest.jsonl")) {
        log("[cache] hit corpus " + name);
        return synth::read_manifest(dir / "manifest.jsonl");
      }
      log("[build] corpus " + name);
      impl_->count("corpus");
      return publish_dir(dir, [&](const fs::path& tmp) {
        synth::gen_corpus(synth::CorpusSpec::make(inst, count, derive_seed(g, "corpus-" + name), sc.base.image_size), tmp);
      });
    });
  };
  auto split = [&](const std::string& inst_name, synth::Institution inst) {
    auto all = corpus(inst_name, inst, sc.corpus_per_institution);
    return synth::partition(all, sc.seen_fraction, derive_seed(g, "partition-" + inst_name));
  };
  auto watermarked = [&](synth::WatermarkKind kind) {
    const std::string name = kind == synth::WatermarkKind::kVisible ? "seen-A-wm" : "seen-A-hwm";
    return impl_->once<DatasetManifest>("corpus:" + name, [&, name, kind] {
      const auto dir = cfg_.workspace / "corpora" / name;
      if (fs::exists(dir / "manifest.jsonl")) {
        log("[cache] hit corpus " + name);
        return synth::read_manifest(dir / "manifest.jsonl");
      }
      auto seen = split("A", synth::Institution::kA).first;
      log("[build] corpus " + name);
      impl_->count("corpus");
      return publish_dir(dir, [&](const fs::path& tmp) { synth::watermark_corpus(seen, synth::WatermarkSpec::for_kind(kind), tmp); });
    });
  };

  if (!sel.generated) {
    const auto& t = sel.text;
    if (t == "real-A") return corpus("A", synth::Institution::kA, sc.corpus_per_institution);
    if (t == "real-B") return corpus("B", synth::Institution::kB, sc.corpus_per_institution);
    if (t == "seen-A") return split("A", synth::Institution::kA).first;
    if (t == "unseen-A") return split("A", synth::Institution::kA).second;
    if (t == "seen-B") return split("B", synth::Institution::kB).first;
    if (t == "unseen-B") return split("B", synth::Institution::kB).second;
    if (t == "wild") return corpus("wild", synth::Institution::kWild, sc.wild_count);
    if (t == "wild-pretrain") return corpus("wild-pretrain", synth::Institution::kWild, sc.wild_pretrain_count);
    if (t == "seen-A-wm") return watermarked(synth::WatermarkKind::kVisible);
    if (t == "seen-A-hwm") return watermarked(synth::WatermarkKind::kHidden);
    fail(ErrorKind::kConfig, "unknown dataset selector '" + t + "'");
  }

  const std::string key = sel.key();
  return impl_->once<DatasetManifest>("generated:" + key, [&, sel, key] {
    const auto dir = cfg_.workspace / "generated" / key;
    if (fs::exists(dir / "manifest.jsonl")) {
      log("[cache] hit generated " + key);
      return synth::read_manifest(dir / "manifest.jsonl");
    }
    auto model = sel.target == "NFT" ? base_model() : target_model(sel.target, sel.epochs, sel.mix);
    ldm::SampleRequest req;
    req.prompt = sel.prompt;
    req.steps = sc.sample_steps;
    req.guidance_scale = sel.guidance;
    req.count = sc.generated_count;
    // Guidance and epochs stay out of the seed so sweeps differ only in s.
    std::string seed_tag = "sample-" + seed_family(sel.target) + "-" + sel.institution + "-" + sel.prompt + (sel.fresh ? "-fresh" : "");
    req.seed = derive_seed(g, seed_tag) & 0xffffffffffffULL;
    log("[build] generated " + key);
    impl_->count("generate");
    return publish_dir(dir, [&](const fs::path& tmp) { ldm::sample_to_dir(model, req, tmp, key, sel.target); });
  });
}

ldm::DiffusionCheckpoint Lab::base_model() {
  const auto path = cfg_.workspace / "checkpoints" / "base.ckpt";
  impl_->once<bool>("model:base", [&] {
    if (fs::exists(path)) {
      log("[cache] hit model base");
      return true;
    }
    auto corpus = dataset(std::string("wild-pretrain"));
    auto cfg = cfg_.scale.base;
    cfg.seed = derive_seed(cfg_.seed, "base");
    log("[build] model base");
    impl_->count("base");
    auto ck = ldm::train_base(corpus, cfg);
    ck.save(path);
    return true;
  });
  return ldm::DiffusionCheckpoint::load(path);
}

ldm::DiffusionCheckpoint Lab::target_model(const std::string& target, int epochs, synth::MixRatio mix) {
  if (!kTargets.count(target)) fail(ErrorKind::kConfig, "unknown fine-tuning target '" + target + "'");
  std::string key = "ft-" + target + "-e" + std::to_string(epochs);
  if (target == "A+wild") key += "-m" + std::to_string(mix.a) + "x" + std::to_string(mix.b);
  const auto path = cfg_.workspace / "checkpoints" / (key + ".ckpt");
  impl_->once<bool>("model:" + key, [&] {
    if (fs::exists(path)) {
      log("[cache] hit model " + key);
      return true;
    }
    DatasetManifest set;
    if (target == "A+wild") {
      auto wild_as_a = synth::recaption(dataset(std::string("wild")), "A");
      set = synth::mix(dataset(std::string("seen-A")), wild_as_a, mix);
    } else {
      const std::map<std::string, std::string> source = {{"A", "seen-A"}, {"B", "seen-B"}, {"A-wm", "seen-A-wm"}, {"A-hwm", "seen-A-hwm"}};
      set = dataset(source.at(target));
    }
    auto base = base_model();
    auto opt = cfg_.scale.finetune;
    opt.epochs = epochs;
    opt.seed = derive_seed(cfg_.seed, "finetune-" + seed_family(target));
    opt.source_id = target == "A+wild" ? "mix(seen-A,wild," + ratio_text(mix) + ")" : key.substr(3);
    log("[build] model " + key);
    impl_->count("finetune");
    auto ck = ldm::finetune(base, set, opt);
    ck.save(path);
    return true;
  });
  return ldm::DiffusionCheckpoint::load(path);
}

// ---------------------------------------------------------------- experiments

namespace {

struct Resolved {
  Selector train_pos, train_neg, test_pos, test_neg;
};

Resolved resolve_all(const ExperimentSpec& spec, const Scale& sc) {
  return {resolve_selector(spec.train_pos, spec, sc, true), resolve_selector(spec.train_neg, spec, sc, false),
          resolve_selector(spec.test_pos, spec, sc, false), resolve_selector(spec.test_neg, spec, sc, false)};
}

void write_scores(const fs::path& path, const DatasetManifest& pos, const std::vector<double>& ps, const DatasetManifest& neg,
                  const std::vector<double>& ns) {
  std::string out;
  auto emit = [&](const DatasetManifest& m, const std::vector<double>& s, bool member) {
    for (size_t i = 0; i < s.size(); ++i) out += json{{"image_id", m.records[i].image_id}, {"p", s[i]}, {"member", member}}.dump() + "\n";
  };
  emit(pos, ps, true);
  emit(neg, ns, false);
  write_file_atomic(path, out);
}

double auc_of(const std::vector<double>& pos, const std::vector<double>& neg) {
  std::vector<metrics::ScoredLabel> sl;
  sl.reserve(pos.size() + neg.size());
  for (double p : pos) sl.push_back({p, true});
  for (double p : neg) sl.push_back({p, false});
  return metrics::roc_auc(sl);
}

metrics::IntervalEstimate interval_of(const std::vector<double>& aucs) {
  if (aucs.size() >= 2) return metrics::confidence_interval(aucs);
  metrics::IntervalEstimate iv;
  iv.mean = aucs.empty() ? 0.0 : aucs.front();
  iv.n = static_cast<int>(aucs.size());
  return iv;
}

// Exemplars for the prototype baseline: seeded picks from a training set,
// never an image that appears in either test set.
std::vector<ImageBuf> exemplars(const DatasetManifest& m, const std::set<std::string>& excluded, uint64_t seed) {
  std::vector<size_t> idx;
  for (size_t i = 0; i < m.size(); ++i)
    if (!excluded.count(m.records[i].image_id)) idx.push_back(i);
  if (idx.size() < size_t(metrics::kPrototypeExemplars))
    fail(ErrorKind::kData, "not enough baseline exemplars outside the test sets");
  Rng rng(seed);
  std::shuffle(idx.begin(), idx.end(), rng);
  idx.resize(metrics::kPrototypeExemplars);
  std::sort(idx.begin(), idx.end());
  std::vector<ImageBuf> out;
  for (size_t i : idx) out.push_back(read_ppm(m.resolve(m.records[i])));
  return out;
}

}  // namespace

ExperimentResult Lab::run(const ExperimentSpec& spec) {
  if (!spec.sweep.empty()) return sweep(spec, spec.sweep);
  const auto t0 = std::chrono::steady_clock::now();
  ExperimentResult res;
  res.id = spec.id;
  res.spec = spec;
  require(!spec.seeds.empty(), ErrorKind::kConfig, "experiment " + spec.id + " has no seeds");
  // Selectors resolve before anything is built or trained.
  const auto sel = resolve_all(spec, cfg_.scale);

  auto test_pos = dataset(sel.test_pos);
  auto test_neg = dataset(sel.test_neg);
  synth::require_disjoint(test_pos, test_neg, "experiment " + spec.id + " test sets");
  auto train_pos = dataset(sel.train_pos);
  auto train_neg = dataset(sel.train_neg);

  const auto pos_imgs = test_pos.load_images();
  const auto neg_imgs = test_neg.load_images();
  const auto score_dir = cfg_.workspace / "scores" / dir_name(spec.id);
  ensure_dir(score_dir);

  for (uint64_t s : spec.seeds) {
    const std::string key = "attack-" + sel.train_pos.key() + "--" + sel.train_neg.key() + "-seed" + std::to_string(s);
    const auto path = cfg_.workspace / "checkpoints" / "attack" / (key + ".ckpt");
    impl_->once<bool>("attack:" + key, [&] {
      if (fs::exists(path)) {
        log("[cache] hit attack " + key);
        return true;
      }
      log("[build] attack " + key);
      impl_->count("attack");
      auto ck = attack::train_attack({train_pos, train_neg, derive_seed(cfg_.seed, "attack-" + std::to_string(s))}, cfg_.scale.attack);
      ensure_dir(path.parent_path());
      ck.save(path);
      return true;
    });
    auto ck = attack::AttackCheckpoint::load(path);
    auto ps = attack::predict_batch(ck, pos_imgs);
    auto ns = attack::predict_batch(ck, neg_imgs);
    write_scores(score_dir / ("seed-" + std::to_string(s) + ".jsonl"), test_pos, ps, test_neg, ns);
    res.aucs.push_back(auc_of(ps, ns));
  }
  res.interval = interval_of(res.aucs);

  std::set<std::string> excluded;
  for (const auto* m : {&test_pos, &test_neg})
    for (const auto& r : m->records) excluded.insert(r.image_id);
  auto protos = metrics::build_prototypes(impl_->embedder, exemplars(train_pos, excluded, derive_seed(cfg_.seed, "exemplars-pos")),
                                          exemplars(train_neg, excluded, derive_seed(cfg_.seed, "exemplars-neg")));
  auto feats_pos = impl_->embedder.embed(pos_imgs);
  auto feats_neg = impl_->embedder.embed(neg_imgs);
  std::vector<double> bp, bn;
  for (Eigen::Index i = 0; i < feats_pos.rows(); ++i) bp.push_back(metrics::baseline_score(feats_pos.row(i).transpose(), protos));
  for (Eigen::Index i = 0; i < feats_neg.rows(); ++i) bn.push_back(metrics::baseline_score(feats_neg.row(i).transpose(), protos));
  write_scores(score_dir / "baseline.jsonl", test_pos, bp, test_neg, bn);
  res.baseline_auc = auc_of(bp, bn);

  if (sel.train_pos.generated) {
    auto gen_imgs = train_pos.load_images();
    res.fid = metrics::fid(metrics::feature_stats(impl_->embedder.embed(gen_imgs)), metrics::feature_stats(feats_pos));
  }
  res.seconds = seconds_since(t0);
  log("[row " + spec.id + "] auc " + fmt_num(res.interval.mean, "%.4f") + " +/- " + fmt_num(res.interval.half_width, "%.4f") + " baseline " +
      fmt_num(*res.baseline_auc, "%.4f") + " (" + fmt_num(res.seconds, "%.0f") + " s)");
  return res;
}

ExperimentResult Lab::sweep(const ExperimentSpec& spec, const std::vector<double>& scales) {
  const auto t0 = std::chrono::steady_clock::now();
  ExperimentResult res;
  res.id = spec.id;
  res.spec = spec;
  res.spec.sweep = scales;
  for (double s : scales) {
    SweepPoint pt;
    pt.scale = s;
    ExperimentSpec one = spec;
    one.sweep.clear();
    one.guidance_scale = s;
    one.id = spec.id + "@s" + fmt_num(s);
    try {
      auto r = run(one);
      pt.aucs = r.aucs;
      pt.interval = r.interval;
      pt.fid = r.fid;
    } catch (const std::exception& e) {
      pt.error = e.what();
      log("[row " + one.id + "] failed: " + pt.error);
    }
    res.sweep.push_back(std::move(pt));
  }
  std::vector<double> a, f;
  for (const auto& pt : res.sweep)
    if (pt.error.empty() && pt.fid) {
      a.push_back(pt.interval.mean);
      f.push_back(*pt.fid);
    }
  res.sweep_spearman = metrics::spearman(a, f);
  res.seconds = seconds_since(t0);
  return res;
}

ExperimentResult run_experiment(Lab& lab, const ExperimentSpec& spec) { return lab.run(spec); }

ExperimentResult guidance_sweep(Lab& lab, const ExperimentSpec& base, const std::vector<double>& scales) {
  require(!scales.empty(), ErrorKind::kConfig, "guidance sweep needs at least one scale");
  return lab.sweep(base, scales);
}

ExperimentSpec dilution_spec(const ExperimentSpec& row4, synth::MixRatio ratio) {
  if (ratio.a < 0 || ratio.b < 0 || (ratio.a == 0 && ratio.b == 0)) fail(ErrorKind::kConfig, "dilution ratio must be non-negative and not 0:0");
  if (ratio.b == 0) return row4;
  ExperimentSpec s = row4;
  s.id = row4.id + "-mix" + std::to_string(ratio.a) + "x" + std::to_string(ratio.b);
  s.train_pos = "gen-A+wild";
  s.mix = ratio;
  return s;
}

ExperimentResult dilution_experiment(Lab& lab, const ExperimentSpec& row4, synth::MixRatio ratio) { return lab.run(dilution_spec(row4, ratio)); }

// ---------------------------------------------------------------- reports

json ExperimentResult::to_json() const {
  json j;
  j["id"] = id;
  j["spec"] = spec.to_json();
  j["aucs"] = aucs;
  j["auc_mean"] = interval.mean;
  j["auc_ci"] = interval.half_width;
  j["n"] = interval.n;
  j["baseline_auc"] = baseline_auc ? json(*baseline_auc) : json(nullptr);
  j["fid"] = fid ? json(*fid) : json(nullptr);
  j["seconds"] = seconds;
  j["error"] = error.empty() ? json(nullptr) : json(error);
  if (!spec.sweep.empty()) {
    json pts = json::array();
    for (const auto& p : sweep)
      pts.push_back({{"scale", p.scale},
                     {"aucs", p.aucs},
                     {"auc_mean", p.interval.mean},
                     {"auc_ci", p.interval.half_width},
                     {"fid", p.fid ? json(*p.fid) : json(nullptr)},
                     {"error", p.error.empty() ? json(nullptr) : json(p.error)}});
    j["sweep"] = pts;
    j["spearman_auc_fid"] = sweep_spearman ? json(*sweep_spearman) : json(nullptr);
  }
  return j;
}

namespace {

std::string opt_num(const std::optional<double>& v) { return v ? fmt_num(*v, "%.4f") : ""; }

std::string ci_text(const metrics::IntervalEstimate& iv) { return iv.n >= 2 ? fmt_num(iv.half_width, "%.4f") : ""; }

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) out += c == '"' ? std::string("\"\"") : std::string(1, c);
  return out + "\"";
}

template <typename F>
std::string join_points(const ExperimentResult& r, F f) {
  std::string out;
  for (size_t i = 0; i < r.sweep.size(); ++i) {
    if (i) out += ";";
    out += r.sweep[i].error.empty() ? f(r.sweep[i]) : "FAILED";
  }
  return out;
}

}  // namespace

std::string results_csv(const std::vector<ExperimentResult>& rows) {
  std::string out = "id,train_pos,train_neg,test_pos,test_neg,auc_mean,auc_ci,baseline_auc,fid\n";
  for (const auto& r : rows) {
    std::string mean, ci, base, fid;
    if (!r.ok()) {
      mean = "FAILED";
    } else if (!r.spec.sweep.empty()) {
      mean = join_points(r, [](const SweepPoint& p) { return fmt_num(p.interval.mean, "%.4f"); });
      ci = join_points(r, [](const SweepPoint& p) { return ci_text(p.interval); });
      fid = join_points(r, [](const SweepPoint& p) { return opt_num(p.fid); });
    } else {
      mean = fmt_num(r.interval.mean, "%.4f");
      ci = ci_text(r.interval);
      base = opt_num(r.baseline_auc);
      fid = opt_num(r.fid);
    }
    const auto& s = r.spec;
    out += csv_field(r.id) + "," + csv_field(s.train_pos) + "," + csv_field(s.train_neg) + "," + csv_field(s.test_pos) + "," +
           csv_field(s.test_neg) + "," + mean + "," + ci + "," + base + "," + fid + "\n";
  }
  return out;
}

std::string results_markdown(const std::vector<ExperimentResult>& rows) {
  std::string out =
      "| id | experiment | train_pos | train_neg | test_pos | test_neg | auc | baseline_auc | fid | seconds |\n"
      "|---|---|---|---|---|---|---|---|---|---|\n";
  std::vector<std::string> notes;
  for (const auto& r : rows) {
    const auto& s = r.spec;
    std::string auc, base = "-", fid = "-";
    if (!r.ok()) {
      auc = "FAILED";
      notes.push_back("row " + r.id + ": " + r.error);
    } else if (!s.sweep.empty()) {
      for (const auto& p : r.sweep) {
        if (!auc.empty()) auc += ", ";
        auc += "s=" + fmt_num(p.scale) + ": " + (p.error.empty() ? fmt_num(p.interval.mean, "%.2f") : "FAILED");
        if (!p.error.empty()) notes.push_back("row " + r.id + " s=" + fmt_num(p.scale) + ": " + p.error);
      }
      fid = join_points(r, [](const SweepPoint& p) { return p.fid ? fmt_num(*p.fid, "%.2f") : "-"; });
      notes.push_back("row " + r.id + ": Spearman(AUC, FID) = " + (r.sweep_spearman ? fmt_num(*r.sweep_spearman, "%.3f") : "undefined"));
    } else {
      auc = fmt_num(r.interval.mean, "%.2f") + (r.interval.n >= 2 ? " ± " + fmt_num(r.interval.half_width, "%.2f") : "");
      if (r.baseline_auc) base = fmt_num(*r.baseline_auc, "%.2f");
      if (r.fid) fid = fmt_num(*r.fid, "%.2f");
    }
    out += "| " + r.id + " | " + (s.name.empty() ? "-" : s.name) + " | " + s.train_pos + " | " + s.train_neg + " | " + s.test_pos + " | " +
           s.test_neg + " | " + auc + " | " + base + " | " + fid + " | " + fmt_num(r.seconds, "%.0f") + " |\n";
  }
  if (!notes.empty()) {
    out += "\n";
    for (const auto& n : notes) out += "- " + n + "\n";
  }
  return out;
}

std::string sweep_csv(const ExperimentResult& row) {
  std::string out = "scale,auc_mean,auc_ci,fid,status\n";
  for (const auto& p : row.sweep) {
    if (!p.error.empty()) {
      out += fmt_num(p.scale) + ",,,,FAILED\n";
      continue;
    }
    out += fmt_num(p.scale) + "," + fmt_num(p.interval.mean, "%.4f") + "," + ci_text(p.interval) + "," + opt_num(p.fid) + ",ok\n";
  }
  return out;
}

MatrixReport run_matrix(Lab& lab, const std::vector<ExperimentSpec>& specs, const fs::path& out_dir) {
  const auto t0 = std::chrono::steady_clock::now();
  MatrixReport report;
  report.rows.resize(specs.size());
  // Resolve every selector up front so a typo fails before hours of training.
  for (const auto& s : specs) resolve_all(s, lab.config().scale);

  std::atomic<size_t> next{0};
  auto worker = [&] {
    for (size_t i = next++; i < specs.size(); i = next++) {
      auto& out = report.rows[i];
      const auto row_t0 = std::chrono::steady_clock::now();
      try {
        out = lab.run(specs[i]);
      } catch (const std::exception& e) {
        out = ExperimentResult{};
        out.id = specs[i].id;
        out.spec = specs[i];
        out.error = e.what();
        out.seconds = seconds_since(row_t0);
        lab.log("[row " + specs[i].id + "] failed: " + out.error);
      }
    }
  };
  const int n = std::min<int>(lab.config().workers, static_cast<int>(std::max<size_t>(1, specs.size())));
  if (n <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int i = 0; i < n; ++i) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  report.seconds = seconds_since(t0);

  ensure_dir(out_dir);
  write_file_atomic(out_dir / "results.csv", results_csv(report.rows));
  write_file_atomic(out_dir / "results.md", results_markdown(report.rows));
  json all = json::array();
  std::string timings = "id,seconds\n";
  for (const auto& r : report.rows) {
    all.push_back(r.to_json());
    timings += csv_field(r.id) + "," + fmt_num(r.seconds, "%.1f") + "\n";
  }
  timings += "total," + fmt_num(report.seconds, "%.1f") + "\n";
  write_file_atomic(out_dir / "results.json", all.dump(2) + "\n");
  write_file_atomic(out_dir / "timings.csv", timings);
  for (const auto& r : report.rows)
    if (!r.spec.sweep.empty() && r.ok()) write_file_atomic(out_dir / (r.id == "6" ? std::string("sweep.csv") : "sweep-" + dir_name(r.id) + ".csv"), sweep_csv(r));
  return report;
}

}  // namespace mialab::exp
