#include <gtest/gtest.h>

#include <set>

#include "mialab/attack/attack.hpp"
#include "mialab/attack/classifier.hpp"
#include "mialab/error.hpp"
#include "mialab/metrics/auc.hpp"
#include "mialab/synthdata/corpus.hpp"
#include "test_util.hpp"

using namespace mialab;
using namespace mialab::attack;

namespace {

struct Sets {
  testutil::TempDir dir;
  synth::DatasetManifest a, b, a_test, b_test;
  Sets() {
    a = synth::gen_corpus(synth::CorpusSpec::make(synth::Institution::kA, 100, 11), dir.path() / "a");
    b = synth::gen_corpus(synth::CorpusSpec::make(synth::Institution::kB, 100, 12), dir.path() / "b");
    a_test = synth::gen_corpus(synth::CorpusSpec::make(synth::Institution::kA, 40, 13), dir.path() / "at");
    b_test = synth::gen_corpus(synth::CorpusSpec::make(synth::Institution::kB, 40, 14), dir.path() / "bt");
  }
};

const Sets& sets() {
  static Sets s;
  return s;
}

AttackConfig quick() {
  AttackConfig c;
  c.epochs = 3;
  return c;
}

const AttackCheckpoint& trained() {
  static AttackCheckpoint ck = train_attack({sets().a, sets().b, 5}, quick());
  return ck;
}

double test_auc(const std::vector<double>& pos, const std::vector<double>& neg) {
  std::vector<metrics::ScoredLabel> sl;
  for (double p : pos) sl.push_back({p, true});
  for (double p : neg) sl.push_back({p, false});
  return metrics::roc_auc(sl);
}

}  // namespace

TEST(Attack, SeparatesInstitutions) {
  auto& ck = trained();
  auto pos = predict_batch(ck, sets().a_test.load_images());
  auto neg = predict_batch(ck, sets().b_test.load_images());
  EXPECT_GE(test_auc(pos, neg), 0.95);
  for (double p : pos) {
    EXPECT_GE(p, 0.0);
    EXPECT_LE(p, 1.0);
  }
}

TEST(Attack, SameSeedSameChecksum) {
  auto again = train_attack({sets().a, sets().b, 5}, quick());
  auto first = trained();
  EXPECT_EQ(again.checksum(), first.checksum());
  auto other = train_attack({sets().a, sets().b, 6}, quick());
  EXPECT_NE(other.checksum(), first.checksum());
}

TEST(Attack, ValidationSplitNeverTrains) {
  auto& ck = trained();
  std::set<std::string> train(ck.train_ids.begin(), ck.train_ids.end());
  for (const auto& id : ck.val_ids) EXPECT_FALSE(train.count(id)) << id;
  EXPECT_EQ(ck.train_ids.size() + ck.val_ids.size(), 200u);
  EXPECT_EQ(ck.val_ids.size(), 30u);
  EXPECT_EQ(ck.train_losses.size(), 3u);
  EXPECT_EQ(ck.val_losses.size(), 3u);
}

TEST(Attack, IdenticalClassesLookLikeChance) {
  auto ck = train_attack({sets().a, sets().a, 9}, quick());
  EXPECT_NEAR(ck.val_accuracy, 0.5, 0.1);
}

TEST(Attack, ClassStarvationIsDataError) {
  auto few = sets().a;
  few.records.resize(49);
  try {
    train_attack({few, sets().b, 1}, quick());
    FAIL() << "expected data error";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kData);
  }
}

TEST(Attack, UnbalancedClassesAreDownsampled) {
  auto big = synth::mix(sets().a, sets().a_test, {5, 2});
  auto ck = train_attack({big, sets().b, 3}, quick());
  EXPECT_EQ(ck.train_ids.size() + ck.val_ids.size(), 200u);
}

TEST(Attack, LabelFlipSymmetry) {
  auto flipped_cfg = quick();
  flipped_cfg.flip_labels = true;
  auto flipped = train_attack({sets().a, sets().b, 5}, flipped_cfg);
  auto& plain = trained();
  auto pos = sets().a_test.load_images(), neg = sets().b_test.load_images();
  auto fp = predict_batch(flipped, pos), fn = predict_batch(flipped, neg);
  for (auto& p : fp) p = 1.0 - p;
  for (auto& p : fn) p = 1.0 - p;
  EXPECT_EQ(test_auc(fp, fn), test_auc(predict_batch(plain, pos), predict_batch(plain, neg)));
}

TEST(Predict, ZeroCheckpointGivesHalf) {
  auto ck = AttackCheckpoint::zeros();
  for (const auto& img : sets().a_test.load_images()) EXPECT_EQ(predict(ck, img), 0.5);
}

TEST(Predict, PureAndBatchConsistent) {
  auto& ck = trained();
  auto imgs = sets().b_test.load_images();
  auto batch = predict_batch(ck, imgs);
  for (size_t i = 0; i < imgs.size(); ++i) {
    EXPECT_EQ(predict(ck, imgs[i]), batch[i]);
    EXPECT_EQ(predict(ck, imgs[i]), predict(ck, imgs[i]));
  }
}

TEST(Predict, DimensionMismatch) {
  try {
    predict(trained(), ImageBuf(16, 16));
    FAIL() << "expected dimension error";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kDimension);
  }
}

TEST(Checkpoint, SaveLoadKeepsPredictions) {
  testutil::TempDir d;
  auto ck = trained();
  ck.save(d.path() / "a.ckpt");
  auto back = AttackCheckpoint::load(d.path() / "a.ckpt");
  EXPECT_EQ(back.checksum(), ck.checksum());
  EXPECT_EQ(back.best_epoch, ck.best_epoch);
  EXPECT_EQ(back.val_ids, ck.val_ids);
  auto imgs = sets().a_test.load_images();
  EXPECT_EQ(predict_batch(back, imgs), predict_batch(ck, imgs));
}

TEST(Classifier, HeadHasTwoLogits) {
  Classifier<float> net;
  Rng rng(1);
  net.init(rng);
  nn::Tensor<float> x(3, 2, 32, 32, 0.3f);
  auto logits = net.apply(x);
  EXPECT_EQ(logits.c, 2);
  EXPECT_EQ(logits.n, 2);
}
