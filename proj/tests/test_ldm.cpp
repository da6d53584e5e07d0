#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <set>

#include "mialab/error.hpp"
#include "mialab/fsutil.hpp"
#include "mialab/ldm/diffusion.hpp"
#include "mialab/metrics/features.hpp"
#include "mialab/rng.hpp"
#include "mialab/synthdata/corpus.hpp"
#include "test_util.hpp"

using namespace mialab;
using namespace mialab::ldm;
namespace fs = std::filesystem;

namespace {

DiffusionConfig tiny_config() {
  DiffusionConfig c;
  c.ae_width = 8;
  c.ae_epochs = 2;
  c.epochs = 3;
  c.batch_size = 8;
  c.unet.ch1 = 8;
  c.unet.ch2 = 8;
  c.unet.ch3 = 8;
  c.unet.time_dim = 8;
  c.unet.emb_dim = 8;
  c.seed = 5;
  return c;
}

// Small corpora shared by the tests in this file.
struct Corpora {
  testutil::TempDir dir;
  synth::DatasetManifest wild, a, b;
  Corpora() {
    wild = synth::gen_corpus(synth::CorpusSpec::make(synth::Institution::kWild, 48, 1), dir.path() / "wild");
    a = synth::gen_corpus(synth::CorpusSpec::make(synth::Institution::kA, 24, 2), dir.path() / "a");
    b = synth::gen_corpus(synth::CorpusSpec::make(synth::Institution::kB, 24, 3), dir.path() / "b");
  }
};

const Corpora& corpora() {
  static Corpora c;
  return c;
}

const DiffusionCheckpoint& tiny_base() {
  static DiffusionCheckpoint ck = train_base(corpora().wild, tiny_config());
  return ck;
}

template <typename E>
ErrorKind kind_of(E&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  ADD_FAILURE() << "no error thrown";
  return ErrorKind::kTraining;
}

}  // namespace

TEST(Schedule, DefaultSatisfiesInvariants) {
  auto s = tiny_config().schedule();
  EXPECT_EQ(s.timesteps(), 200);
  EXPECT_NO_THROW(s.validate());
  for (int t = 1; t <= s.timesteps(); ++t) {
    EXPECT_GT(s.betas[t - 1], 0.0);
    EXPECT_LT(s.betas[t - 1], 1.0);
    EXPECT_DOUBLE_EQ(s.alphas[t - 1], 1.0 - s.betas[t - 1]);
    if (t > 1) {
      EXPECT_GE(s.betas[t - 1], s.betas[t - 2]);
      EXPECT_LT(s.alpha_bar(t), s.alpha_bar(t - 1));
    }
  }
  EXPECT_LT(s.alpha_bar(200), 0.01);
  double prod = 1.0;
  for (double b : s.betas) prod *= 1.0 - b;
  EXPECT_NEAR(s.alpha_bar(200), prod, 1e-15);
}

TEST(Schedule, UnscaledDdpmRangeLeavesTooMuchSignal) {
  // The literal 1e-4..0.02 range over 200 steps leaves abar_T far above 0.01.
  auto s = NoiseSchedule::linear(200, 1e-4, 0.02);
  EXPECT_GT(s.alpha_bar(200), 0.01);
  EXPECT_THROW(s.validate(), Error);
}

TEST(Schedule, InvalidBetasRejected) {
  EXPECT_THROW(NoiseSchedule::from_betas({0.1, 0.05}).validate(), Error);
  EXPECT_THROW(NoiseSchedule::from_betas({0.0, 0.5}).validate(), Error);
}

TEST(Schedule, InferenceTimesteps) {
  EXPECT_EQ(inference_timesteps(200, 4), (std::vector<int>{50, 100, 150, 200}));
  EXPECT_EQ(inference_timesteps(200, 200).size(), 200u);
  EXPECT_EQ(kind_of([] { inference_timesteps(200, 201); }), ErrorKind::kConfig);
}

TEST(ForwardDiffuse, Identities) {
  std::vector<float> x0{0.3f, -1.0f, 2.0f}, eps{1.0f, 0.5f, -0.25f};
  EXPECT_EQ(forward_diffuse(x0, 1.0, eps), x0);
  EXPECT_EQ(forward_diffuse(x0, 0.0, eps), eps);
  std::vector<float> one{1.0f}, minus{-1.0f};
  EXPECT_NEAR(forward_diffuse(one, 0.25, minus)[0], 0.5 - std::sqrt(0.75), 1e-6);
  EXPECT_NEAR(forward_diffuse(one, 0.25, minus)[0], -0.3660, 1e-4);
  std::vector<float> short_eps{1.0f};
  EXPECT_EQ(kind_of([&] { forward_diffuse(x0, 0.5, short_eps); }), ErrorKind::kDimension);
}

TEST(ForwardDiffuse, MonteCarloMomentsWithinThreeSigma) {
  const auto sched = tiny_config().schedule();
  const int n = 10000;
  const double x0v = 0.7;
  std::mt19937_64 rng(99);
  std::normal_distribution<double> nd;
  for (int t : {1, sched.timesteps() / 2, sched.timesteps()}) {
    std::vector<float> x0(n, static_cast<float>(x0v)), eps(n);
    for (auto& e : eps) e = static_cast<float>(nd(rng));
    auto xt = forward_diffuse(x0, t, eps, sched);
    double m = 0;
    for (float v : xt) m += v;
    m /= n;
    double var = 0;
    for (float v : xt) var += (v - m) * (v - m);
    var /= n - 1;
    const double ab = sched.alpha_bar(t), sigma2 = 1.0 - ab;
    EXPECT_LE(std::abs(m - std::sqrt(ab) * x0v), 3.0 * std::sqrt(sigma2 / n)) << "t=" << t;
    EXPECT_LE(std::abs(var - sigma2), 3.0 * sigma2 * std::sqrt(2.0 / (n - 1))) << "t=" << t;
  }
}

TEST(Cfg, Identities) {
  std::vector<float> u{0.1f, -2.5f, 3.3f, 1e-3f}, c{0.3f, 0.7f, -1.1f, 4.0f};
  EXPECT_EQ(cfg_noise(u, c, 0.0), u);
  EXPECT_EQ(cfg_noise(u, c, 1.0), c);
  EXPECT_NEAR(cfg_noise(0.2, 0.4, 7.5), 1.7, 1e-12);
  for (double s : {0.0, 1.0, 7.5, 16.0}) EXPECT_EQ(cfg_noise(u, u, s), u);
  std::vector<float> shorter{0.0f};
  EXPECT_EQ(kind_of([&] { cfg_noise(u, shorter, 1.0); }), ErrorKind::kDimension);
}

TEST(Prompt, EmbeddingProperties) {
  auto v = Vocab::default_vocab(32, 3);
  auto null = embed_prompt("", v);
  EXPECT_EQ(null, PromptEmbedding(32, 0.0f));
  EXPECT_EQ(null, null_embedding(v));
  EXPECT_EQ(embed_prompt("a instA headshot", v), embed_prompt("a instA headshot", v));
  EXPECT_NE(embed_prompt("a instA headshot", v), embed_prompt("a instB headshot", v));
  EXPECT_EQ(embed_prompt("zebra", v), embed_prompt("giraffe", v));
  EXPECT_EQ(v.index_of("zebra"), v.index_of(Vocab::kUnk));
}

TEST(Prompt, RandomDirectionsWhenVocabExceedsDim) {
  auto v = Vocab::default_vocab(4, 3);
  for (size_t i = 0; i < v.tokens.size(); ++i) {
    double norm = 0;
    for (int d = 0; d < v.dim; ++d) norm += double(v.table[i * v.dim + d]) * v.table[i * v.dim + d];
    EXPECT_NEAR(norm, 1.0, 1e-5);
  }
  EXPECT_NE(embed_prompt("a instA headshot", v), embed_prompt("a instB headshot", v));
}

TEST(GradientCheck, MicroDenoiserMatchesFiniteDifferences) {
  DenoiserConfig mc;
  mc.latent_channels = 1;
  mc.ch1 = mc.ch2 = mc.ch3 = 2;
  mc.time_dim = 4;
  mc.prompt_dim = 3;
  mc.emb_dim = 4;
  Denoiser<double> net(mc);
  Rng rng(17);
  net.init(rng);
  auto params = net.params();
  ASSERT_LE(nn::count_params(params), 1000u);
  // Perturb everything, including the zero-initialised prompt projection.
  std::normal_distribution<double> nd(0.0, 0.3);
  for (auto* p : params)
    for (auto& v : p->value) v += nd(rng);

  const int n = 2;
  nn::Tensor<double> x0(1, n, 4, 4), eps(1, n, 4, 4), prompt(3, n, 1, 1);
  for (auto& v : x0.data) v = nd(rng) * 3;
  for (auto& v : eps.data) v = nd(rng) * 3;
  for (auto& v : prompt.data) v = nd(rng) * 3;
  const std::vector<int> t{40, 170};
  const auto sched = tiny_config().schedule();

  for (auto* p : params) std::fill(p->grad.begin(), p->grad.end(), 0.0);
  denoiser_loss(net, x0, t, eps, prompt, sched, true);

  const double h = 1e-6;
  double worst = 0.0;
  std::string worst_name;
  for (auto* p : params)
    for (size_t i = 0; i < p->value.size(); ++i) {
      const double keep = p->value[i];
      p->value[i] = keep + h;
      const double up = denoiser_loss(net, x0, t, eps, prompt, sched, false);
      p->value[i] = keep - h;
      const double down = denoiser_loss(net, x0, t, eps, prompt, sched, false);
      p->value[i] = keep;
      const double numeric = (up - down) / (2 * h), analytic = p->grad[i];
      const double rel = std::abs(numeric - analytic) / std::max({std::abs(numeric), std::abs(analytic), 1e-6});
      if (rel > worst) {
        worst = rel;
        worst_name = p->name + "[" + std::to_string(i) + "]";
      }
    }
  EXPECT_LT(worst, 1e-4) << "worst parameter " << worst_name;
}

TEST(Config, JsonRoundTripAndUnknownKeys) {
  auto c = tiny_config();
  auto back = DiffusionConfig::from_json(c.to_json());
  EXPECT_EQ(back.to_json(), c.to_json());
  EXPECT_EQ(kind_of([] { DiffusionConfig::from_json({{"timesteps", 200}, {"bogus", 1}}); }), ErrorKind::kConfig);
  auto explicit_betas = DiffusionConfig::from_json({{"timesteps", 3}, {"betas", {0.1, 0.5, 0.99}}});
  EXPECT_EQ(explicit_betas.schedule().betas, (std::vector<double>{0.1, 0.5, 0.99}));
}

TEST(Checkpoint, SaveLoadRoundTrip) {
  testutil::TempDir d;
  auto ck = tiny_base();
  ck.save(d.path() / "m.ckpt");
  const std::string bytes = read_file(d.path() / "m.ckpt");
  EXPECT_EQ(bytes.substr(0, 8), "MIALAB01");
  auto back = DiffusionCheckpoint::load(d.path() / "m.ckpt");
  EXPECT_EQ(back.checksum(), ck.checksum());
  EXPECT_EQ(back.latent_scale, ck.latent_scale);
  EXPECT_EQ(back.schedule.betas, ck.schedule.betas);
  EXPECT_EQ(back.vocab.table, ck.vocab.table);
  EXPECT_EQ(back.provenance.size(), ck.provenance.size());
  back.save(d.path() / "again.ckpt");
  EXPECT_EQ(read_file(d.path() / "again.ckpt"), bytes);
}

TEST(Checkpoint, TruncatedFileIsRejected) {
  testutil::TempDir d;
  auto ck = tiny_base();
  ck.save(d.path() / "m.ckpt");
  auto bytes = read_file(d.path() / "m.ckpt");
  write_file_atomic(d.path() / "cut.ckpt", bytes.substr(0, bytes.size() / 2));
  EXPECT_THROW(DiffusionCheckpoint::load(d.path() / "cut.ckpt"), Error);
}

TEST(TrainBase, LossDecreasesAndProvenanceRecorded) {
  TrainLog log;
  auto cfg = tiny_config();
  cfg.epochs = 4;
  auto ck = train_base(corpora().wild, cfg, &log);
  ASSERT_EQ(log.losses.size(), 4u);
  EXPECT_LT(log.losses.back(), log.losses.front());
  ASSERT_EQ(ck.provenance.size(), 1u);
  EXPECT_EQ(ck.provenance[0].stage, "base");
  EXPECT_EQ(ck.provenance[0].epochs, 4);
}

TEST(TrainBase, SameSeedSameChecksum) {
  auto a = train_base(corpora().wild, tiny_config());
  auto b = tiny_base();
  EXPECT_EQ(a.checksum(), b.checksum());
}

TEST(TrainBase, ZeroEpochsEqualsInitialization) {
  auto cfg = tiny_config();
  cfg.epochs = 0;
  cfg.ae_epochs = 0;
  auto ck = train_base(corpora().wild, cfg);
  EXPECT_EQ(ck.checksum(), DiffusionCheckpoint::initialize(cfg).checksum());
  EXPECT_EQ(ck.provenance.at(0).epochs, 0);
}

TEST(TrainBase, EmptyCorpusIsDataError) {
  EXPECT_EQ(kind_of([] { train_base(synth::DatasetManifest{}, tiny_config()); }), ErrorKind::kData);
}

TEST(TrainBase, DivergenceIsTrainingError) {
  auto cfg = tiny_config();
  cfg.ae_epochs = 0;
  cfg.lr = 1e30;
  try {
    train_base(corpora().wild, cfg);
    FAIL() << "expected training error";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kTraining);
    EXPECT_NE(std::string(e.what()).find("epoch"), std::string::npos);
  }
}

TEST(Finetune, ZeroEpochsIsNoOpAndAppendsProvenance) {
  FinetuneOptions opt;
  opt.epochs = 0;
  auto base = tiny_base();
  auto ft = finetune(base, corpora().a, opt);
  EXPECT_EQ(ft.checksum(), base.checksum());
  ASSERT_EQ(ft.provenance.size(), base.provenance.size() + 1);
  EXPECT_EQ(ft.provenance.back().stage, "finetuned");
}

TEST(Finetune, AutoencoderStaysFrozen) {
  FinetuneOptions opt;
  opt.epochs = 1;
  opt.batch_size = 8;
  auto base = tiny_base();
  auto ft = finetune(base, corpora().a, opt);
  EXPECT_EQ(nn::checksum(ft.ae.params()), nn::checksum(base.ae.params()));
  EXPECT_NE(ft.checksum(), base.checksum());
}

TEST(Finetune, MixedPrefixesRejectedUnlessLenient) {
  auto mixed = synth::mix(corpora().a, corpora().b, {1, 1});
  FinetuneOptions opt;
  opt.epochs = 1;
  EXPECT_EQ(kind_of([&] { finetune(tiny_base(), mixed, opt); }), ErrorKind::kConfig);
  opt.strict_prefix = false;
  EXPECT_NO_THROW(finetune(tiny_base(), mixed, opt));
}

TEST(Sample, DeterministicBatchesAndSeeds) {
  testutil::TempDir d;
  SampleRequest req;
  req.prompt = "a instA headshot";
  req.steps = 5;
  req.count = 30;
  req.seed = 100;
  auto m1 = sample_to_dir(tiny_base(), req, d.path() / "one", "g", "A");
  auto m2 = sample_to_dir(tiny_base(), req, d.path() / "two", "g", "A");
  ASSERT_EQ(m1.size(), 30u);
  std::set<uint64_t> seeds;
  for (size_t i = 0; i < m1.size(); ++i) {
    EXPECT_EQ(read_file(m1.resolve(m1.records[i])), read_file(m2.resolve(m2.records[i])));
    EXPECT_EQ(m1.records[i].role, synth::Role::kGenerated);
    seeds.insert(m1.records[i].seed.value());
  }
  EXPECT_EQ(seeds, (std::set<uint64_t>{100, 101}));
  for (const auto& img : m1.load_images())
    for (float v : img.data()) ASSERT_TRUE(v >= 0.0f && v <= 1.0f);
}

TEST(Sample, TwoHundredFiftyImagesUseTenSeeds) {
  SampleRequest req;
  req.prompt = "a instB headshot";
  req.steps = 1;
  req.count = 250;
  req.seed = 7;
  auto batches = sample(tiny_base(), req);
  ASSERT_EQ(batches.size(), 10u);
  for (size_t b = 0; b < batches.size(); ++b) {
    EXPECT_EQ(batches[b].seed, 7 + b);
    EXPECT_EQ(batches[b].images.size(), size_t(kImagesPerSeed));
  }
}

TEST(Sample, InvalidRequests) {
  SampleRequest req;
  req.prompt = "a instA headshot";
  req.steps = 201;
  EXPECT_EQ(kind_of([&] { sample(tiny_base(), req); }), ErrorKind::kConfig);
  req.steps = 0;
  EXPECT_EQ(kind_of([&] { sample(tiny_base(), req); }), ErrorKind::kConfig);
  req.steps = 10;
  req.count = 0;
  EXPECT_EQ(kind_of([&] { sample(tiny_base(), req); }), ErrorKind::kConfig);
  req.count = 1;
  req.guidance_scale = -1;
  EXPECT_EQ(kind_of([&] { sample(tiny_base(), req); }), ErrorKind::kConfig);
}

TEST(Autoencoder, EncodeDecodeShapes) {
  auto imgs = corpora().a.load_images();
  auto z = tiny_base().encode(imgs);
  EXPECT_EQ(z.c, 4);
  EXPECT_EQ(z.n, static_cast<int>(imgs.size()));
  EXPECT_EQ(z.h, 8);
  EXPECT_EQ(z.w, 8);
  auto back = tiny_base().decode(z);
  ASSERT_EQ(back.size(), imgs.size());
  EXPECT_EQ(back[0].height(), 32);
}
