#include "mialab/ldm/diffusion.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <iostream>
#include <numeric>
#include <random>

#include "mialab/fsutil.hpp"
#include "mialab/nn/adam.hpp"
#include "mialab/nn/convert.hpp"
#include "mialab/synthdata/caption.hpp"

namespace mialab::ldm {

namespace fs = std::filesystem;
using nlohmann::json;
using nn::Tensor;

// ---------------------------------------------------------------- config

DiffusionConfig DiffusionConfig::from_json(const json& j) {
  DiffusionConfig c;
  try {
    c.image_size = j.value("image_size", c.image_size);
    c.timesteps = j.value("timesteps", c.timesteps);
    c.beta_start = default_beta_start(c.timesteps);
    c.beta_end = default_beta_end(c.timesteps);
    if (j.contains("betas")) {
      const auto& b = j["betas"];
      if (b.is_array()) {
        c.explicit_betas = b.get<std::vector<double>>();
      } else {
        c.beta_start = b.value("start", c.beta_start);
        c.beta_end = b.value("end", c.beta_end);
      }
    }
    c.latent_channels = j.value("latent_channels", c.latent_channels);
    c.pixel_space = j.value("pixel_space", c.pixel_space);
    c.ae_width = j.value("ae_width", c.ae_width);
    c.ae_epochs = j.value("ae_epochs", c.ae_epochs);
    c.ae_lr = j.value("ae_lr", c.ae_lr);
    c.epochs = j.value("epochs", c.epochs);
    c.lr = j.value("lr", c.lr);
    c.caption_dropout = j.value("caption_dropout", c.caption_dropout);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.seed = j.value("seed", c.seed);
    c.prompt_dim = j.value("prompt_dim", c.prompt_dim);
    if (j.contains("unet")) {
      const auto& u = j["unet"];
      c.unet.ch1 = u.value("ch1", c.unet.ch1);
      c.unet.ch2 = u.value("ch2", c.unet.ch2);
      c.unet.ch3 = u.value("ch3", c.unet.ch3);
      c.unet.time_dim = u.value("time_dim", c.unet.time_dim);
      c.unet.emb_dim = u.value("emb_dim", c.unet.emb_dim);
    }
    for (const auto& [key, _] : j.items()) {
      static const char* kKnown[] = {"image_size", "timesteps", "betas", "latent_channels", "pixel_space", "ae_width", "ae_epochs", "ae_lr",
                                     "epochs", "lr", "caption_dropout", "batch_size", "seed", "prompt_dim", "unet"};
      if (std::find(std::begin(kKnown), std::end(kKnown), key) == std::end(kKnown))
        fail(ErrorKind::kConfig, "unknown diffusion config key '" + key + "'");
    }
  } catch (const json::exception& e) {
    fail(ErrorKind::kConfig, std::string("diffusion config: ") + e.what());
  }
  c.validate();
  return c;
}

json DiffusionConfig::to_json() const {
  json j;
  j["image_size"] = image_size;
  j["timesteps"] = timesteps;
  if (explicit_betas.empty())
    j["betas"] = {{"start", beta_start}, {"end", beta_end}};
  else
    j["betas"] = explicit_betas;
  j["latent_channels"] = latent_channels;
  j["pixel_space"] = pixel_space;
  j["ae_width"] = ae_width;
  j["ae_epochs"] = ae_epochs;
  j["ae_lr"] = ae_lr;
  j["epochs"] = epochs;
  j["lr"] = lr;
  j["caption_dropout"] = caption_dropout;
  j["batch_size"] = batch_size;
  j["seed"] = seed;
  j["prompt_dim"] = prompt_dim;
  j["unet"] = {{"ch1", unet.ch1}, {"ch2", unet.ch2}, {"ch3", unet.ch3}, {"time_dim", unet.time_dim}, {"emb_dim", unet.emb_dim}};
  return j;
}

NoiseSchedule DiffusionConfig::schedule() const {
  if (!explicit_betas.empty()) return NoiseSchedule::from_betas(explicit_betas);
  return NoiseSchedule::linear(timesteps, beta_start, beta_end);
}

void DiffusionConfig::validate() const {
  require(image_size >= 8 && image_size % 4 == 0, ErrorKind::kConfig, "image_size must be a multiple of 4, >= 8");
  require(pixel_space || image_size % 16 == 0, ErrorKind::kConfig, "latent mode needs image_size divisible by 16");
  require(latent_channels >= 1, ErrorKind::kConfig, "latent_channels must be >= 1");
  require(epochs >= 0 && ae_epochs >= 0, ErrorKind::kConfig, "epochs must be >= 0");
  require(lr > 0 && ae_lr > 0, ErrorKind::kConfig, "learning rates must be positive");
  require(caption_dropout >= 0 && caption_dropout <= 1, ErrorKind::kConfig, "caption_dropout must lie in [0,1]");
  require(batch_size >= 1, ErrorKind::kConfig, "batch_size must be >= 1");
  if (!explicit_betas.empty())
    require(static_cast<int>(explicit_betas.size()) == timesteps, ErrorKind::kConfig, "betas list length must equal timesteps");
  schedule().validate();
}

// ---------------------------------------------------------------- checkpoint

DiffusionCheckpoint DiffusionCheckpoint::initialize(const DiffusionConfig& cfg) {
  cfg.validate();
  DiffusionCheckpoint ck;
  ck.config = cfg;
  ck.schedule = cfg.schedule();
  ck.vocab = Vocab::default_vocab(cfg.prompt_dim, derive_seed(cfg.seed, "vocab"));
  ck.ae = Autoencoder<float>({cfg.latent_channels, cfg.ae_width, cfg.pixel_space});
  DenoiserConfig u = cfg.unet;
  u.latent_channels = ck.ae.latent_channels();
  u.prompt_dim = cfg.prompt_dim;
  ck.unet = Denoiser<float>(u);
  Rng rng(derive_seed(cfg.seed, "init"));
  ck.ae.init(rng);
  ck.unet.init(rng);
  return ck;
}

uint64_t DiffusionCheckpoint::checksum() {
  auto p = ae.params();
  auto u = unet.params();
  p.insert(p.end(), u.begin(), u.end());
  return nn::checksum(p);
}

nn::Container DiffusionCheckpoint::to_container() {
  nn::Container c;
  c.put(ae.params());
  c.put(unet.params());
  c.put("ae.latent_scale", {1}, std::vector<float>{latent_scale});
  c.put("schedule.betas", {static_cast<int64_t>(schedule.betas.size())}, schedule.betas);
  c.put("vocab.table", {static_cast<int64_t>(vocab.tokens.size()), vocab.dim}, vocab.table);
  c.meta["kind"] = "diffusion";
  c.meta["config"] = config.to_json();
  c.meta["schedule_betas"] = schedule.betas;
  c.meta["vocab_tokens"] = vocab.tokens;
  json prov = json::array();
  for (const auto& p : provenance)
    prov.push_back({{"stage", p.stage}, {"source_manifest", p.source_manifest}, {"epochs", p.epochs}, {"seed", p.seed}, {"losses", p.losses}});
  c.meta["provenance"] = prov;
  return c;
}

DiffusionCheckpoint DiffusionCheckpoint::from_container(const nn::Container& c) {
  if (c.meta.value("kind", "") != "diffusion") fail(ErrorKind::kData, "not a diffusion checkpoint");
  DiffusionCheckpoint ck = initialize(DiffusionConfig::from_json(c.meta.at("config")));
  ck.schedule = NoiseSchedule::from_betas(c.meta.at("schedule_betas").get<std::vector<double>>());
  c.get(ck.ae.params());
  c.get(ck.unet.params());
  ck.latent_scale = c.at("ae.latent_scale").data.at(0);
  ck.vocab.tokens = c.meta.at("vocab_tokens").get<std::vector<std::string>>();
  ck.vocab.table = c.at("vocab.table").data;
  for (const auto& p : c.meta.at("provenance")) {
    ProvenanceEntry e;
    e.stage = p.at("stage");
    e.source_manifest = p.at("source_manifest");
    e.epochs = p.at("epochs");
    e.seed = p.at("seed");
    e.losses = p.at("losses").get<std::vector<double>>();
    ck.provenance.push_back(std::move(e));
  }
  return ck;
}

void DiffusionCheckpoint::save(const fs::path& path) { nn::save(path, to_container()); }

DiffusionCheckpoint DiffusionCheckpoint::load(const fs::path& path) { return from_container(nn::load(path)); }

Tensor<float> DiffusionCheckpoint::encode(std::span<const ImageBuf> images) const {
  Tensor<float> out;
  constexpr size_t kChunk = 64;
  std::vector<Tensor<float>> parts;
  for (size_t s = 0; s < images.size(); s += kChunk) {
    auto z = ae.encode(nn::images_to_tensor<float>(images.subspan(s, std::min(kChunk, images.size() - s))));
    for (auto& v : z.data) v *= latent_scale;
    parts.push_back(std::move(z));
  }
  // concatenate along the batch axis
  const auto& f = parts.front();
  out = Tensor<float>(f.c, static_cast<int>(images.size()), f.h, f.w);
  const size_t hw = f.spatial();
  int offset = 0;
  for (const auto& p : parts) {
    for (int c = 0; c < p.c; ++c)
      std::copy_n(p.data.data() + size_t(c) * p.plane(), p.plane(), out.data.data() + (size_t(c) * out.n + offset) * hw);
    offset += p.n;
  }
  return out;
}

std::vector<ImageBuf> DiffusionCheckpoint::decode(const Tensor<float>& latents) const {
  Tensor<float> z = latents;
  for (auto& v : z.data) v /= latent_scale;
  return nn::tensor_to_images(ae.decode(z));
}

// ---------------------------------------------------------------- training

namespace {

std::string manifest_id(const synth::DatasetManifest& m) {
  uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& r : m.records) {
    h = fnv1a(r.image_id, h);
    h = fnv1a(r.caption, h);
  }
  char buf[32];
  std::snprintf(buf, sizeof buf, "m%016llx", static_cast<unsigned long long>(h));
  return buf;
}

void check_finite(double loss, const char* stage, int epoch) {
  if (!std::isfinite(loss)) fail(ErrorKind::kTraining, std::string(stage) + " loss diverged (non-finite) at epoch " + std::to_string(epoch));
}

std::vector<int> permutation(int n, Rng& rng) {
  std::vector<int> order(static_cast<size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  return order;
}

struct DenoiserTrainSpec {
  int epochs = 0;
  double lr = 1e-3;
  int batch_size = 32;
  double caption_dropout = 0.1;
  uint64_t seed = 0;
};

std::vector<double> train_denoiser(DiffusionCheckpoint& ck, const Tensor<float>& latents, const std::vector<PromptEmbedding>& prompts,
                                   const DenoiserTrainSpec& spec, const EpochHook& hook) {
  std::vector<double> losses;
  if (spec.epochs == 0) return losses;
  nn::Adam<float> opt(ck.unet.params(), {spec.lr, 0.9, 0.999, 1e-8, 1.0});
  Rng rng(spec.seed);
  std::normal_distribution<float> normal(0.0f, 1.0f);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::uniform_int_distribution<int> tdist(1, ck.schedule.timesteps());
  const int n = latents.n;
  const int pdim = ck.vocab.dim;
  for (int epoch = 1; epoch <= spec.epochs; ++epoch) {
    auto order = permutation(n, rng);
    double total = 0;
    int batches = 0;
    for (int start = 0; start < n; start += spec.batch_size) {
      const int m = std::min(spec.batch_size, n - start);
      std::span<const int> idx(order.data() + start, static_cast<size_t>(m));
      auto x0 = nn::gather_batch(latents, idx);
      std::vector<int> t(static_cast<size_t>(m));
      for (auto& v : t) v = tdist(rng);
      Tensor<float> eps(x0.c, m, x0.h, x0.w);
      for (auto& v : eps.data) v = normal(rng);
      Tensor<float> prompt(pdim, m, 1, 1);
      for (int j = 0; j < m; ++j) {
        if (unif(rng) < spec.caption_dropout) continue;  // NULL embedding
        const auto& e = prompts[static_cast<size_t>(idx[j])];
        for (int d = 0; d < pdim; ++d) prompt.data[size_t(d) * m + j] = e[d];
      }
      total += denoiser_loss(ck.unet, x0, t, eps, prompt, ck.schedule, true);
      ++batches;
      opt.step();
    }
    const double loss = total / batches;
    check_finite(loss, "denoiser", epoch);
    losses.push_back(loss);
    if (hook) hook(epoch, loss, ck);
  }
  return losses;
}

std::vector<PromptEmbedding> caption_embeddings(const synth::DatasetManifest& m, const Vocab& vocab) {
  std::vector<PromptEmbedding> out;
  out.reserve(m.size());
  for (const auto& r : m.records) out.push_back(embed_prompt(r.caption, vocab));
  return out;
}

void train_autoencoder(DiffusionCheckpoint& ck, std::span<const ImageBuf> images, TrainLog* log) {
  const auto& cfg = ck.config;
  if (cfg.pixel_space || cfg.ae_epochs == 0) return;
  auto data = nn::images_to_tensor<float>(images);
  nn::Adam<float> opt(ck.ae.params(), {cfg.ae_lr, 0.9, 0.999, 1e-8, 0.0});
  Rng rng(derive_seed(cfg.seed, "autoencoder"));
  const int n = data.n;
  for (int epoch = 1; epoch <= cfg.ae_epochs; ++epoch) {
    auto order = permutation(n, rng);
    double total = 0;
    int batches = 0;
    for (int start = 0; start < n; start += cfg.batch_size) {
      const int m = std::min(cfg.batch_size, n - start);
      auto x = nn::gather_batch(data, std::span<const int>(order.data() + start, static_cast<size_t>(m)));
      auto y = ck.ae.forward_reconstruct(x);
      Tensor<float> grad;
      total += nn::mse_loss(y, x, &grad);
      ++batches;
      ck.ae.backward_reconstruct(grad);
      opt.step();
    }
    check_finite(total / batches, "autoencoder", epoch);
    if (log) log->ae_losses.push_back(total / batches);
  }
}

float latent_scale_for(const DiffusionCheckpoint& ck, std::span<const ImageBuf> images) {
  if (ck.config.pixel_space) return 1.0f;
  DiffusionCheckpoint probe = ck;
  probe.latent_scale = 1.0f;
  auto z = probe.encode(images);
  double sum = 0, sq = 0;
  for (float v : z.data) {
    sum += v;
    sq += double(v) * v;
  }
  const double n = static_cast<double>(z.size());
  const double var = sq / n - (sum / n) * (sum / n);
  return var > 1e-12 ? static_cast<float>(1.0 / std::sqrt(var)) : 1.0f;
}

}  // namespace

DiffusionCheckpoint train_base(const synth::DatasetManifest& corpus, const DiffusionConfig& cfg, TrainLog* log) {
  if (corpus.empty()) fail(ErrorKind::kData, "base training corpus is empty");
  for (const auto& r : corpus.records)
    if (r.caption.empty()) fail(ErrorKind::kData, "record " + r.image_id + " has no caption");
  auto images = corpus.load_images();
  for (const auto& img : images)
    if (img.height() != cfg.image_size || img.width() != cfg.image_size)
      fail(ErrorKind::kDimension, "corpus image size differs from config image_size " + std::to_string(cfg.image_size));

  DiffusionCheckpoint ck = DiffusionCheckpoint::initialize(cfg);
  train_autoencoder(ck, images, log);
  ck.latent_scale = latent_scale_for(ck, images);

  DenoiserTrainSpec spec{cfg.epochs, cfg.lr, cfg.batch_size, cfg.caption_dropout, derive_seed(cfg.seed, "denoiser")};
  auto losses = train_denoiser(ck, ck.encode(images), caption_embeddings(corpus, ck.vocab), spec, {});
  if (log) log->losses = losses;
  ck.provenance.push_back({"base", manifest_id(corpus), cfg.epochs, cfg.seed, losses});
  return ck;
}

double reconstruction_mae(const DiffusionCheckpoint& ck, std::span<const ImageBuf> images) {
  auto rec = ck.decode(ck.encode(images));
  double total = 0;
  size_t count = 0;
  for (size_t i = 0; i < images.size(); ++i) {
    auto a = images[i].data();
    auto b = rec[i].data();
    for (size_t k = 0; k < a.size(); ++k) total += std::fabs(double(a[k]) - double(b[k]));
    count += a.size();
  }
  return total / static_cast<double>(count);
}

DiffusionCheckpoint finetune(const DiffusionCheckpoint& base, const synth::DatasetManifest& target, const FinetuneOptions& opt,
                             const EpochHook& hook) {
  require(opt.epochs >= 0, ErrorKind::kConfig, "fine-tune epochs must be >= 0");
  if (target.empty()) fail(ErrorKind::kData, "fine-tuning target set is empty");
  if (!synth::common_prefix(target)) {
    if (opt.strict_prefix) fail(ErrorKind::kConfig, "fine-tuning captions do not share a common institution prefix");
    std::cerr << "warning: fine-tuning captions do not share a common institution prefix; continuing\n";
  }
  DiffusionCheckpoint ck = base;
  std::vector<double> losses;
  if (opt.epochs > 0) {
    auto images = target.load_images();
    DenoiserTrainSpec spec{opt.epochs, opt.lr, opt.batch_size, opt.caption_dropout, opt.seed};
    losses = train_denoiser(ck, ck.encode(images), caption_embeddings(target, ck.vocab), spec, hook);
  }
  ck.provenance.push_back({"finetuned", opt.source_id.empty() ? manifest_id(target) : opt.source_id, opt.epochs, opt.seed, losses});
  return ck;
}

// ---------------------------------------------------------------- sampling

void SampleRequest::validate(const NoiseSchedule& sched) const {
  require(count >= 1, ErrorKind::kConfig, "sample count must be >= 1");
  require(guidance_scale >= 0.0, ErrorKind::kConfig, "guidance scale must be non-negative");
  if (steps < 1 || steps > sched.timesteps())
    fail(ErrorKind::kConfig, "steps must lie in 1.." + std::to_string(sched.timesteps()) + ", got " + std::to_string(steps));
}

std::vector<SampleBatch> sample(const DiffusionCheckpoint& ck, const SampleRequest& req) {
  req.validate(ck.schedule);
  const auto ts = inference_timesteps(ck.schedule.timesteps(), req.steps);
  const auto cond = embed_prompt(req.prompt, ck.vocab);
  const int lc = ck.ae.latent_channels();
  const int ls = ck.config.image_size / ck.ae.downsample();
  const int pdim = ck.vocab.dim;
  const size_t hw = size_t(ls) * ls;

  std::vector<SampleBatch> batches;
  for (int b = 0; b * kImagesPerSeed < req.count; ++b) {
    const int m = std::min(kImagesPerSeed, req.count - b * kImagesPerSeed);
    SampleBatch batch;
    batch.seed = req.seed + static_cast<uint64_t>(b);
    Rng rng(batch.seed);
    std::normal_distribution<float> normal(0.0f, 1.0f);
    Tensor<float> x(lc, m, ls, ls);
    for (auto& v : x.data) v = normal(rng);

    // first m columns conditional, last m unconditional (NULL embedding)
    Tensor<float> prompts(pdim, 2 * m, 1, 1);
    for (int d = 0; d < pdim; ++d)
      for (int j = 0; j < m; ++j) prompts.data[size_t(d) * 2 * m + j] = cond[d];

    Tensor<float> both(lc, 2 * m, ls, ls);
    std::vector<float> eps(x.size());
    for (int i = static_cast<int>(ts.size()) - 1; i >= 0; --i) {
      const double ab = ck.schedule.alpha_bar(ts[i]);
      const double ab_prev = i > 0 ? ck.schedule.alpha_bar(ts[i - 1]) : 1.0;
      for (int c = 0; c < lc; ++c) {
        const float* src = x.data.data() + size_t(c) * m * hw;
        std::copy_n(src, m * hw, both.data.data() + size_t(c) * 2 * m * hw);
        std::copy_n(src, m * hw, both.data.data() + (size_t(c) * 2 * m + m) * hw);
      }
      auto out = ck.unet.apply(both, std::vector<int>(size_t(2 * m), ts[i]), prompts);
      for (int c = 0; c < lc; ++c) {
        std::span<const float> ec(out.data.data() + size_t(c) * 2 * m * hw, m * hw);
        std::span<const float> eu(out.data.data() + (size_t(c) * 2 * m + m) * hw, m * hw);
        cfg_noise_into(eu, ec, req.guidance_scale, std::span<float>(eps.data() + size_t(c) * m * hw, m * hw));
      }
      const double sa = std::sqrt(ab), sb = std::sqrt(1.0 - ab);
      const double sa_prev = std::sqrt(ab_prev), sb_prev = std::sqrt(1.0 - ab_prev);
      for (size_t k = 0; k < x.size(); ++k) {
        const double x0 = (x.data[k] - sb * eps[k]) / sa;
        x.data[k] = static_cast<float>(sa_prev * x0 + sb_prev * eps[k]);
      }
    }
    batch.images = ck.decode(x);
    batches.push_back(std::move(batch));
  }
  return batches;
}

synth::DatasetManifest sample_to_dir(const DiffusionCheckpoint& ck, const SampleRequest& req, const fs::path& out_dir,
                                     const std::string& id_prefix, const std::string& source) {
  auto batches = sample(ck, req);
  ensure_dir(out_dir / "images");
  synth::DatasetManifest m;
  m.root = out_dir;
  int k = 0;
  for (const auto& b : batches) {
    for (const auto& img : b.images) {
      synth::Record r;
      char buf[64];
      std::snprintf(buf, sizeof buf, "-%05d", k++);
      r.image_id = id_prefix + buf;
      r.path = "images/" + r.image_id + ".ppm";
      r.caption = req.prompt;
      r.source = source;
      r.role = synth::Role::kGenerated;
      r.seed = b.seed;
      write_ppm(out_dir / r.path, img);
      m.records.push_back(std::move(r));
    }
  }
  write_manifest(out_dir / "manifest.jsonl", m);
  return m;
}

}  // namespace mialab::ldm
