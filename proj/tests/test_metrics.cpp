#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "mialab/error.hpp"
#include "mialab/metrics/auc.hpp"
#include "mialab/metrics/baseline.hpp"
#include "mialab/metrics/features.hpp"
#include "mialab/metrics/interval.hpp"
#include "mialab/synthdata/corpus.hpp"

using namespace mialab;
using namespace mialab::metrics;

namespace {

// O(n^2) pair counting with rational bookkeeping in integers.
double brute_auc(const std::vector<ScoredLabel>& sl) {
  long long twice_num = 0, pairs = 0;
  for (const auto& m : sl)
    if (m.member)
      for (const auto& n : sl)
        if (!n.member) {
          ++pairs;
          twice_num += m.score > n.score ? 2 : m.score == n.score ? 1 : 0;
        }
  return static_cast<double>(twice_num) / (2.0 * pairs);
}

std::vector<ScoredLabel> random_scores(std::mt19937_64& rng, int n, bool coarse) {
  std::uniform_real_distribution<double> u(0, 1);
  std::uniform_int_distribution<int> bucket(0, 9);
  std::vector<ScoredLabel> sl(n);
  for (int i = 0; i < n; ++i) sl[i] = {coarse ? bucket(rng) / 10.0 : u(rng), i % 2 == 0 || u(rng) < 0.3};
  sl[0].member = true;
  sl[1].member = false;
  return sl;
}

FeatureStats stats(Eigen::VectorXd mu, Eigen::MatrixXd cov) {
  FeatureStats s;
  s.mean = std::move(mu);
  s.cov = std::move(cov);
  s.n = 100;
  return s;
}

std::vector<ImageBuf> faces(synth::Institution inst, int n, uint64_t seed, int offset = 0) {
  auto spec = synth::CorpusSpec::make(inst, n + offset, seed);
  std::vector<ImageBuf> out;
  for (int i = 0; i < n; ++i) out.push_back(synth::render_face(spec, offset + i).image);
  return out;
}

}  // namespace

TEST(Auc, PerfectSeparation) {
  std::vector<ScoredLabel> sl{{0.9, true}, {0.8, true}, {0.3, false}, {0.2, false}};
  EXPECT_EQ(roc_auc(sl), 1.0);
}

TEST(Auc, AllTiesIsHalf) {
  std::vector<ScoredLabel> sl{{0.4, true}, {0.4, false}, {0.4, true}, {0.4, false}, {0.4, false}};
  EXPECT_EQ(roc_auc(sl), 0.5);
}

TEST(Auc, ThreeOfFourPairs) {
  std::vector<ScoredLabel> sl{{0.7, true}, {0.4, true}, {0.6, false}, {0.1, false}};
  EXPECT_EQ(roc_auc(sl), 0.75);
  EXPECT_EQ(brute_auc(sl), 0.75);
}

TEST(Auc, SingleClassIsDataError) {
  std::vector<ScoredLabel> sl{{0.7, true}, {0.4, true}};
  try {
    roc_auc(sl);
    FAIL() << "expected data error";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kData);
  }
}

TEST(Auc, NonFiniteScoreRejected) {
  std::vector<ScoredLabel> sl{{NAN, true}, {0.4, false}};
  EXPECT_THROW(roc_auc(sl), Error);
}

TEST(Auc, MatchesBruteForceOnRandomSets) {
  std::mt19937_64 rng(2024);
  std::uniform_int_distribution<int> size(2, 2000);
  for (int trial = 0; trial < 100; ++trial) {
    auto sl = random_scores(rng, size(rng), trial % 2 == 1);
    ASSERT_EQ(roc_auc(sl), brute_auc(sl)) << "trial " << trial;
  }
}

TEST(Auc, InvariantUnderMonotoneTransform) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    auto sl = random_scores(rng, 300, trial % 2 == 0);
    auto tr = sl;
    for (auto& s : tr) s.score = std::exp(3.0 * s.score) - 7.0;
    EXPECT_EQ(roc_auc(sl), roc_auc(tr));
  }
}

TEST(Auc, Midranks) {
  std::vector<double> v{3.0, 1.0, 3.0, 2.0};
  EXPECT_EQ(midranks(v), (std::vector<double>{3.5, 1.0, 3.5, 2.0}));
}

TEST(Spearman, PerfectAndDegenerate) {
  std::vector<double> x{1, 2, 3, 4}, y{10, 20, 30, 40}, z{4, 3, 2, 1};
  EXPECT_NEAR(*spearman(x, y), 1.0, 1e-12);
  EXPECT_NEAR(*spearman(x, z), -1.0, 1e-12);
  std::vector<double> one{1.0};
  EXPECT_FALSE(spearman(one, one).has_value());
  std::vector<double> flat{2, 2, 2, 2};
  EXPECT_FALSE(spearman(x, flat).has_value());
}

TEST(Interval, ZeroVariance) {
  std::vector<double> v(5, 0.8);
  auto iv = confidence_interval(v);
  EXPECT_DOUBLE_EQ(iv.mean, 0.8);
  EXPECT_EQ(iv.half_width, 0.0);
  EXPECT_EQ(iv.n, 5);
}

TEST(Interval, TwoValues) {
  std::vector<double> v{0.0, 1.0};
  auto iv = confidence_interval(v);
  EXPECT_DOUBLE_EQ(iv.mean, 0.5);
  EXPECT_NEAR(iv.half_width, 12.706 * (std::sqrt(0.5) / std::sqrt(2.0)), 1e-3);
  EXPECT_NEAR(iv.half_width, 6.353, 1e-3);
}

TEST(Interval, FiveValuesWithSdOneHundredth) {
  // Sample sd of {-2,-1,0,1,2} * k is k * sqrt(2.5).
  const double k = 0.01 / std::sqrt(2.5);
  std::vector<double> v;
  for (int i = -2; i <= 2; ++i) v.push_back(0.86 + i * k);
  auto iv = confidence_interval(v);
  EXPECT_NEAR(iv.half_width, 2.776 * 0.01 / std::sqrt(5.0), 1e-4);
  EXPECT_NEAR(iv.half_width, 0.0124, 1e-4);
}

TEST(Interval, TooFewValuesIsDataError) {
  std::vector<double> v{0.3};
  try {
    confidence_interval(v);
    FAIL() << "expected data error";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kData);
  }
}

TEST(Interval, PermutationInvariantMean) {
  std::vector<double> v{0.61, 0.93, 0.72, 0.55, 0.88};
  auto a = confidence_interval(v);
  std::reverse(v.begin(), v.end());
  auto b = confidence_interval(v);
  EXPECT_EQ(a.mean, b.mean);
  EXPECT_EQ(a.half_width, b.half_width);
}

TEST(Interval, TQuantileTableAndTail) {
  EXPECT_NEAR(t_quantile(0.95, 4), 2.776, 5e-4);
  EXPECT_NEAR(t_quantile(0.95, 1), 12.706, 5e-4);
  EXPECT_NEAR(t_quantile(0.95, 29), 2.045, 5e-4);
  EXPECT_NEAR(t_quantile(0.95, 100), 1.984, 5e-4);
  EXPECT_NEAR(t_quantile(0.90, 10), 1.812, 5e-4);
}

TEST(Fid, IdenticalIsZero) {
  auto a = extract_features(faces(synth::Institution::kA, 40, 1), 9);
  EXPECT_LE(fid(a, a), 1e-6);
}

TEST(Fid, ShiftedMeansClosedForm) {
  auto a = stats(Eigen::Vector2d(0, 0), Eigen::Matrix2d::Identity());
  auto b = stats(Eigen::Vector2d(1, 1), Eigen::Matrix2d::Identity());
  EXPECT_NEAR(fid(a, b), 2.0, 1e-6);
}

TEST(Fid, ScaledCovarianceClosedForm) {
  auto a = stats(Eigen::Vector2d(0.3, -1), 4.0 * Eigen::Matrix2d::Identity());
  auto b = stats(Eigen::Vector2d(0.3, -1), Eigen::Matrix2d::Identity());
  EXPECT_NEAR(fid(a, b), 2.0, 1e-6);
}

TEST(Fid, SymmetricOnRealFeatures) {
  auto a = extract_features(faces(synth::Institution::kA, 40, 1), 9);
  auto b = extract_features(faces(synth::Institution::kB, 40, 2), 9);
  EXPECT_NEAR(fid(a, b), fid(b, a), 1e-8);
  EXPECT_GT(fid(a, b), 0.0);
}

TEST(Fid, DimensionMismatch) {
  auto a = stats(Eigen::Vector2d(0, 0), Eigen::Matrix2d::Identity());
  auto b = stats(Eigen::Vector3d(0, 0, 0), Eigen::Matrix3d::Identity());
  try {
    fid(a, b);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kDimension);
  }
}

TEST(Features, RepeatedImageHasZeroCovariance) {
  std::vector<ImageBuf> same(5, faces(synth::Institution::kA, 1, 3)[0]);
  auto s = extract_features(same, 4);
  EXPECT_EQ(s.mean.size(), 64);
  EXPECT_LE(s.cov.cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Features, DeterministicAndSymmetric) {
  auto imgs = faces(synth::Institution::kWild, 30, 8);
  auto a = extract_features(imgs, 4);
  auto b = extract_features(imgs, 4);
  EXPECT_EQ(a.mean, b.mean);
  EXPECT_EQ(a.cov, b.cov);
  EXPECT_LE((a.cov - a.cov.transpose()).cwiseAbs().maxCoeff(), 1e-10);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(a.cov);
  EXPECT_GE(es.eigenvalues().minCoeff(), -1e-8);
}

TEST(Features, FewerThanTwoImagesIsDataError) {
  auto one = faces(synth::Institution::kA, 1, 3);
  try {
    extract_features(one, 1);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kData);
  }
}

TEST(Features, DisjointHalvesHaveCloseMeans) {
  auto first = faces(synth::Institution::kA, 150, 12);
  auto second = faces(synth::Institution::kA, 150, 12, 150);
  auto a = extract_features(first, 6);
  auto b = extract_features(second, 6);
  const double within_sd = std::sqrt(a.cov.trace() / a.cov.rows());
  EXPECT_LT((a.mean - b.mean).norm() / std::sqrt(double(a.mean.size())), 0.5 * within_sd);
}

TEST(Baseline, SelfSimilarityAndAntisymmetry) {
  RandomEmbedder phi(21);
  auto a = faces(synth::Institution::kA, 1, 1);
  auto b = faces(synth::Institution::kB, 1, 2);
  auto protos = build_prototypes(phi, a, b);
  EXPECT_GT(baseline_score(phi, a[0], protos), 0.0);
  auto probe = faces(synth::Institution::kWild, 5, 3);
  for (const auto& img : probe) EXPECT_EQ(baseline_score(phi, img, protos.swapped()), -baseline_score(phi, img, protos));
}

TEST(Baseline, DimensionMismatch) {
  RandomEmbedder phi(21);
  auto protos = build_prototypes(phi, faces(synth::Institution::kA, 2, 1), faces(synth::Institution::kB, 2, 2));
  try {
    baseline_score(Eigen::VectorXd::Zero(3), protos);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kDimension);
  }
}
