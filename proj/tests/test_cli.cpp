#include <gtest/gtest.h>

#include <array>
#include <cstdio>
#include <sys/wait.h>

#include "mialab/fsutil.hpp"
#include "test_util.hpp"

namespace fs = std::filesystem;

namespace {

struct Run {
  int code = -1;
  std::string out;  // stdout and stderr interleaved
};

Run run(const std::string& args, const fs::path& cwd, const std::string& env = "") {
  const std::string cmd = "cd '" + cwd.string() + "' && " + env + " '" MIALAB_BIN "' " + args + " 2>&1";
  Run r;
  FILE* p = popen(cmd.c_str(), "r");
  if (!p) return r;
  std::array<char, 4096> buf;
  size_t n;
  while ((n = fread(buf.data(), 1, buf.size(), p)) > 0) r.out.append(buf.data(), n);
  const int status = pclose(p);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

}  // namespace

TEST(Cli, GenDataIsDeterministic) {
  testutil::TempDir d;
  ASSERT_EQ(run("gen-data --inst A --count 4 --seed 7 --out ws1/", d.path()).code, 0);
  ASSERT_EQ(run("gen-data --inst A --count 4 --seed 7 --out ws2/", d.path()).code, 0);
  EXPECT_EQ(mialab::read_file(d.path() / "ws1" / "manifest.jsonl"), mialab::read_file(d.path() / "ws2" / "manifest.jsonl"));
  int images = 0;
  for (const auto& e : fs::directory_iterator(d.path() / "ws1" / "images")) {
    EXPECT_EQ(mialab::read_file(e.path()), mialab::read_file(d.path() / "ws2" / "images" / e.path().filename()));
    ++images;
  }
  EXPECT_EQ(images, 4);
}

TEST(Cli, EvalAucSingleClassIsValidationError) {
  testutil::TempDir d;
  mialab::write_file_atomic(d.path() / "scores.jsonl", "{\"image_id\":\"a\",\"p\":0.9,\"member\":true}\n{\"image_id\":\"b\",\"p\":0.1,\"member\":true}\n");
  auto r = run("eval-auc scores.jsonl", d.path());
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.out.find("data error"), std::string::npos);
}

TEST(Cli, EvalAucJson) {
  testutil::TempDir d;
  mialab::write_file_atomic(d.path() / "scores.jsonl",
                            "{\"p\":0.7,\"member\":true}\n{\"p\":0.4,\"member\":true}\n{\"p\":0.6,\"member\":false}\n{\"p\":0.1,\"member\":false}\n");
  auto r = run("--json eval-auc scores.jsonl", d.path());
  EXPECT_EQ(r.code, 0);
  EXPECT_NE(r.out.find("\"auc\":0.75"), std::string::npos) << r.out;
  EXPECT_NE(r.out.find("\"n_pos\":2"), std::string::npos) << r.out;
}

TEST(Cli, UnknownFlagPrintsUsageAndExitsOne) {
  testutil::TempDir d;
  auto r = run("gen-data --bogus", d.path());
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.out.find("Usage"), std::string::npos);
  EXPECT_EQ(run("no-such-command", d.path()).code, 1);
}

TEST(Cli, EveryCommandHasHelp) {
  testutil::TempDir d;
  for (const char* cmd : {"gen-data", "train-base", "finetune", "sample", "train-attack", "score", "eval-auc", "fid", "run-experiment",
                          "run-matrix", "sweep", "report"}) {
    auto r = run(std::string(cmd) + " --help", d.path());
    EXPECT_EQ(r.code, 0) << cmd;
    EXPECT_NE(r.out.find("--"), std::string::npos) << cmd;
  }
  auto r = run("run-matrix --help", d.path());
  EXPECT_NE(r.out.find("experiments/table3"), std::string::npos);
}

TEST(Cli, EmptyMatrixSucceeds) {
  testutil::TempDir d;
  fs::create_directories(d.path() / "none");
  auto r = run("--scale smoke run-matrix --specs none", d.path());
  EXPECT_EQ(r.code, 0) << r.out;
  EXPECT_TRUE(fs::exists(d.path() / "ws" / "reports" / "results.csv"));
}

TEST(Cli, WorkspaceFromEnvironment) {
  testutil::TempDir d;
  fs::create_directories(d.path() / "none");
  auto r = run("--scale smoke run-matrix --specs none", d.path(), "MIALAB_WORKSPACE=envws");
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_FALSE(fs::exists(d.path() / "ws"));
  EXPECT_TRUE(fs::exists(d.path() / "envws" / "workspace.json")) << r.out;
}

TEST(Cli, BadSpecIsValidationError) {
  testutil::TempDir d;
  mialab::write_file_atomic(d.path() / "bad.json", R"({"id": "1", "train_pos": "gen-Z", "train_neg": "gen-B", "test_pos": "seen-A", "test_neg": "unseen-B"})");
  auto r = run("--scale smoke run-experiment bad.json", d.path());
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.out.find("config error"), std::string::npos);
}
