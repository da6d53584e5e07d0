#include <gtest/gtest.h>

#include <sstream>

#include "mialab/error.hpp"
#include "mialab/experiments/experiments.hpp"
#include "mialab/fsutil.hpp"
#include "mialab/metrics/interval.hpp"
#include "test_util.hpp"

using namespace mialab;
using namespace mialab::exp;
using nlohmann::json;

namespace {

// Minute-scale budgets; enough to exercise every code path.
Scale tiny_scale() {
  Scale s = Scale::smoke();
  s.name = "tiny";
  s.corpus_per_institution = 80;
  s.wild_count = 60;
  s.wild_pretrain_count = 48;
  s.generated_count = 50;
  s.sample_steps = 3;
  s.finetune_epochs = 1;
  s.base.ae_width = 8;
  s.base.ae_epochs = 1;
  s.base.epochs = 1;
  s.base.unet.ch1 = s.base.unet.ch2 = s.base.unet.ch3 = 8;
  s.base.unet.time_dim = s.base.unet.emb_dim = 8;
  s.attack.epochs = 1;
  s.attack.min_per_class = 20;
  return s;
}

RunConfig tiny_config(const std::filesystem::path& ws, std::ostream* log) {
  RunConfig rc;
  rc.workspace = ws;
  rc.seed = 3;
  rc.scale = tiny_scale();
  rc.log = log;
  return rc;
}

ExperimentSpec spec(const std::string& id, const std::string& tp, const std::string& tn, const std::string& sp, const std::string& sn,
                    std::vector<uint64_t> seeds = {1, 2}) {
  ExperimentSpec s;
  s.id = id;
  s.train_pos = tp;
  s.train_neg = tn;
  s.test_pos = sp;
  s.test_neg = sn;
  s.seeds = std::move(seeds);
  return s;
}

json numbers_only(const ExperimentResult& r) {
  auto j = r.to_json();
  j.erase("seconds");
  return j;
}

ErrorKind kind_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  ADD_FAILURE() << "no error thrown";
  return ErrorKind::kTraining;
}

}  // namespace

TEST(Spec, JsonRoundTripAndValidation) {
  auto s = spec("13", "gen-A+wild", "gen-B", "seen-A", "unseen-B");
  s.name = "diluted";
  s.mix = {1, 2};
  s.guidance_scale = 4.0;
  s.prompt_override = "a profile picture";
  s.target_epochs = 20;
  auto back = ExperimentSpec::from_json(s.to_json());
  EXPECT_EQ(back.to_json(), s.to_json());
  EXPECT_EQ(back.mix.b, 2);
  auto j = s.to_json();
  j["colour"] = "red";
  EXPECT_EQ(kind_of([&] { ExperimentSpec::from_json(j); }), ErrorKind::kConfig);
  j = s.to_json();
  j["seeds"] = json::array();
  EXPECT_EQ(kind_of([&] { ExperimentSpec::from_json(j); }), ErrorKind::kConfig);
  j = s.to_json();
  j.erase("seeds");
  EXPECT_EQ(ExperimentSpec::from_json(j).seeds.size(), 5u);
}

TEST(Spec, CheckedInMatrixHasThirteenRowsInOrder) {
  auto specs = load_specs(MIALAB_SOURCE_DIR "/experiments/table3");
  ASSERT_EQ(specs.size(), 13u);
  for (size_t i = 0; i < specs.size(); ++i) {
    EXPECT_EQ(specs[i].id, std::to_string(i + 1));
    EXPECT_EQ(specs[i].seeds.size(), 5u);
    for (const auto* sel : {&specs[i].train_pos, &specs[i].train_neg, &specs[i].test_pos, &specs[i].test_neg})
      EXPECT_NO_THROW(resolve_selector(*sel, specs[i], Scale::desk(), true)) << *sel;
  }
  EXPECT_EQ(specs[4].prompt_override.value(), "a profile picture");
  EXPECT_EQ(specs[5].sweep, (std::vector<double>{0, 4, 8, 12, 16}));
  EXPECT_EQ(load_specs(MIALAB_SOURCE_DIR "/experiments/epochs").size(), 2u);
}

TEST(Selector, KeysAndOverrides) {
  auto s = spec("x", "gen-A", "gen-B", "seen-A", "unseen-B");
  s.guidance_scale = 4.0;
  s.target_epochs = 20;
  const auto desk = Scale::desk();
  auto pos = resolve_selector("gen-A", s, desk, true);
  EXPECT_EQ(pos.key(), "gen-A-e20-s4");
  auto neg = resolve_selector("gen-B", s, desk, false);
  EXPECT_EQ(neg.key(), "gen-B-e10-s7.5");
  EXPECT_EQ(resolve_selector("gen-B-fresh", s, desk, false).key(), "gen-B-e10-s7.5-fresh");
  auto nft = resolve_selector("gen-NFT-B", s, desk, true);
  EXPECT_EQ(nft.target, "NFT");
  EXPECT_EQ(nft.prompt, "a instB headshot");
  EXPECT_EQ(nft.key(), "gen-NFT-B-s4");
  s.prompt_override = "a profile picture";
  EXPECT_NE(resolve_selector("gen-A", s, desk, true).key().find("-p"), std::string::npos);
  EXPECT_FALSE(resolve_selector("seen-A", s, desk, true).generated);
  for (const char* bad : {"gen-C", "seen-C", "gen-", "gen-A-stale", ""})
    EXPECT_EQ(kind_of([&] { resolve_selector(bad, s, desk, true); }), ErrorKind::kConfig) << bad;
}

TEST(Dilution, RatioEdgeCases) {
  auto row4 = spec("4", "gen-A", "gen-B", "seen-A", "unseen-B");
  EXPECT_EQ(dilution_spec(row4, {1, 0}).to_json(), row4.to_json());
  auto d = dilution_spec(row4, {1, 1});
  EXPECT_EQ(d.train_pos, "gen-A+wild");
  EXPECT_EQ(d.test_pos, "seen-A");
  EXPECT_EQ(d.test_neg, "unseen-B");
  EXPECT_EQ(kind_of([&] { dilution_spec(row4, {0, 0}); }), ErrorKind::kConfig);
}

TEST(Reports, CsvLayout) {
  ExperimentResult r;
  r.id = "2";
  r.spec = spec("2", "gen-A", "real-B", "seen-A", "wild");
  r.aucs = {0.5, 0.7};
  r.interval = metrics::confidence_interval(r.aucs);
  r.baseline_auc = 0.55;
  r.fid = 1.25;
  r.seconds = 12;
  ExperimentResult failed;
  failed.id = "3";
  failed.spec = spec("3", "gen-A", "gen-B", "seen-A", "seen-B");
  failed.error = "training error: boom";
  auto csv = results_csv({r, failed});
  EXPECT_EQ(csv,
            "id,train_pos,train_neg,test_pos,test_neg,auc_mean,auc_ci,baseline_auc,fid\n"
            "2,gen-A,real-B,seen-A,wild,0.6000,1.2706,0.5500,1.2500\n"
            "3,gen-A,gen-B,seen-A,seen-B,FAILED,,,\n");
  auto md = results_markdown({r, failed});
  EXPECT_NE(md.find("| seconds |"), std::string::npos);
  EXPECT_NE(md.find("training error: boom"), std::string::npos);
}

class LabTest : public ::testing::Test {
 protected:
  testutil::TempDir dir;
  std::ostringstream log;
};

TEST_F(LabTest, RowIsDeterministicAndCached) {
  auto s = spec("8", "gen-A", "gen-B", "seen-A", "unseen-A", {7});
  ExperimentResult first, second, fresh_ws;
  {
    Lab lab(tiny_config(dir.path() / "ws", &log));
    first = lab.run(s);
    EXPECT_EQ(lab.build_counts().at("finetune"), 2);
    EXPECT_EQ(lab.build_counts().at("attack"), 1);
  }
  {
    std::ostringstream again_log;
    Lab lab(tiny_config(dir.path() / "ws", &again_log));
    second = lab.run(s);
    EXPECT_TRUE(lab.build_counts().empty());
    EXPECT_NE(again_log.str().find("[cache] hit"), std::string::npos);
  }
  {
    Lab lab(tiny_config(dir.path() / "other", &log));
    fresh_ws = lab.run(s);
  }
  EXPECT_EQ(numbers_only(first), numbers_only(second));
  EXPECT_EQ(numbers_only(first), numbers_only(fresh_ws));
  ASSERT_EQ(first.aucs.size(), 1u);
  EXPECT_TRUE(first.baseline_auc.has_value());
  EXPECT_TRUE(first.fid.has_value());
  EXPECT_TRUE(std::filesystem::exists(dir.path() / "ws" / "scores" / "8" / "seed-7.jsonl"));
}

TEST_F(LabTest, IntervalRecomputesFromSeeds) {
  Lab lab(tiny_config(dir.path() / "ws", &log));
  auto r = lab.run(spec("3", "gen-A", "gen-B", "seen-A", "seen-B", {1, 2, 3}));
  ASSERT_EQ(r.aucs.size(), 3u);
  auto iv = metrics::confidence_interval(r.aucs);
  EXPECT_EQ(r.interval.mean, iv.mean);
  EXPECT_EQ(r.interval.half_width, iv.half_width);
}

TEST_F(LabTest, OverlappingTestSetsFailBeforeTraining) {
  Lab lab(tiny_config(dir.path() / "ws", &log));
  EXPECT_EQ(kind_of([&] { lab.run(spec("x", "gen-A", "gen-B", "seen-A", "real-A")); }), ErrorKind::kIntegrity);
  EXPECT_FALSE(lab.build_counts().count("attack"));
  EXPECT_FALSE(lab.build_counts().count("finetune"));
}

TEST_F(LabTest, UnknownSelectorFailsBeforeAnyBuild) {
  Lab lab(tiny_config(dir.path() / "ws", &log));
  EXPECT_EQ(kind_of([&] { lab.run(spec("x", "gen-A", "gen-Q", "seen-A", "unseen-B")); }), ErrorKind::kConfig);
  EXPECT_TRUE(lab.build_counts().empty());
}

TEST_F(LabTest, WorkspaceRemembersSeedAndScale) {
  { Lab lab(tiny_config(dir.path() / "ws", &log)); }
  auto other = tiny_config(dir.path() / "ws", &log);
  other.seed = 4;
  EXPECT_EQ(kind_of([&] { Lab lab(other); }), ErrorKind::kConfig);
}

TEST_F(LabTest, EmptyMatrixWritesEmptyReport) {
  Lab lab(tiny_config(dir.path() / "ws", &log));
  auto rep = run_matrix(lab, {}, dir.path() / "out");
  EXPECT_TRUE(rep.rows.empty());
  EXPECT_EQ(read_file(dir.path() / "out" / "results.csv"), "id,train_pos,train_neg,test_pos,test_neg,auc_mean,auc_ci,baseline_auc,fid\n");
}

TEST_F(LabTest, MatrixRecordsFailuresAndMatchesIsolatedRuns) {
  std::vector<ExperimentSpec> specs = {spec("1", "gen-A", "gen-B", "gen-A-fresh", "gen-B-fresh"),
                                       spec("2", "gen-A", "gen-B", "seen-A", "seen-A"),
                                       spec("3", "gen-NFT-A", "gen-B", "seen-A", "unseen-B")};
  ExperimentResult alone;
  {
    Lab lab(tiny_config(dir.path() / "alone", &log));
    alone = lab.run(specs[2]);
  }
  auto cfg = tiny_config(dir.path() / "ws", &log);
  cfg.workers = 2;
  Lab lab(cfg);
  auto rep = run_matrix(lab, specs, dir.path() / "out");
  ASSERT_EQ(rep.rows.size(), 3u);
  EXPECT_TRUE(rep.rows[0].ok());
  EXPECT_FALSE(rep.rows[1].ok());
  EXPECT_NE(rep.rows[1].error.find("integrity"), std::string::npos);
  EXPECT_TRUE(rep.rows[2].ok());
  EXPECT_EQ(numbers_only(rep.rows[2]), numbers_only(alone));
  // gen-A and gen-B are shared by rows 1 and 3: each target fine-tuned once.
  EXPECT_EQ(lab.build_counts().at("finetune"), 2);
  EXPECT_EQ(lab.build_counts().at("base"), 1);

  auto serial_cfg = tiny_config(dir.path() / "serial", &log);
  Lab serial(serial_cfg);
  run_matrix(serial, specs, dir.path() / "serial-out");
  EXPECT_EQ(read_file(dir.path() / "out" / "results.csv"), read_file(dir.path() / "serial-out" / "results.csv"));
}

TEST_F(LabTest, SingleScaleSweepHasNoCorrelation) {
  Lab lab(tiny_config(dir.path() / "ws", &log));
  auto r = guidance_sweep(lab, spec("6", "gen-A", "gen-B", "seen-A", "unseen-B", {1, 2}), {4.0});
  ASSERT_EQ(r.sweep.size(), 1u);
  EXPECT_TRUE(r.sweep[0].error.empty());
  EXPECT_FALSE(r.sweep_spearman.has_value());
  EXPECT_TRUE(r.to_json()["spearman_auc_fid"].is_null());
  EXPECT_NE(sweep_csv(r).find("4,"), std::string::npos);
}
