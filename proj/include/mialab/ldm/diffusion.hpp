#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "json.hpp"
#include "mialab/image.hpp"
#include "mialab/ldm/networks.hpp"
#include "mialab/ldm/prompt.hpp"
#include "mialab/ldm/schedule.hpp"
#include "mialab/nn/adam.hpp"
#include "mialab/nn/container.hpp"
#include "mialab/synthdata/manifest.hpp"

namespace mialab::ldm {

struct DiffusionConfig {
  int image_size = 32;
  int timesteps = 200;
  double beta_start = default_beta_start(200);
  double beta_end = default_beta_end(200);
  int latent_channels = 4;
  bool pixel_space = false;
  int ae_width = 32;
  int ae_epochs = 12;
  double ae_lr = 2e-3;
  int epochs = 200;  // denoiser epochs for base training
  double lr = 1e-3;
  double caption_dropout = 0.1;
  int batch_size = 32;
  uint64_t seed = 0;
  DenoiserConfig unet;
  int prompt_dim = 32;

  // Accepts keys: timesteps, betas ({start,end} or explicit list),
  // latent_channels, pixel_space, ae_epochs, ae_lr, epochs, lr,
  // caption_dropout, batch_size, seed, unet {ch1,ch2,ch3,time_dim,emb_dim},
  // prompt_dim.
  static DiffusionConfig from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
  void validate() const;

  std::vector<double> explicit_betas;  // overrides the linear schedule when non-empty
  NoiseSchedule schedule() const;
};

struct ProvenanceEntry {
  std::string stage;  // base | finetuned
  std::string source_manifest;
  int epochs = 0;
  uint64_t seed = 0;
  std::vector<double> losses;  // per-epoch mean training loss
};

// The target model: autoencoder + denoiser + schedule + prompt vocabulary.
struct DiffusionCheckpoint {
  DiffusionConfig config;
  NoiseSchedule schedule;
  Vocab vocab;
  float latent_scale = 1.0f;
  Autoencoder<float> ae;
  Denoiser<float> unet;
  std::vector<ProvenanceEntry> provenance;

  // Randomly initialised model, nothing trained.
  static DiffusionCheckpoint initialize(const DiffusionConfig& cfg);

  uint64_t checksum();
  nn::Container to_container();
  static DiffusionCheckpoint from_container(const nn::Container& c);
  void save(const std::filesystem::path& path);
  static DiffusionCheckpoint load(const std::filesystem::path& path);

  // Images -> scaled latents and back.
  nn::Tensor<float> encode(std::span<const ImageBuf> images) const;
  std::vector<ImageBuf> decode(const nn::Tensor<float>& latents) const;
};

// Called after every epoch with (epoch, 1-based; mean loss). Returning
// normally continues training.
using EpochHook = std::function<void(int epoch, double loss, DiffusionCheckpoint& ckpt)>;

struct TrainLog {
  std::vector<double> ae_losses;
  std::vector<double> losses;
};

// Autoencoder first (reconstruction MSE), then the denoiser on epsilon MSE
// with caption dropout to the NULL embedding.
DiffusionCheckpoint train_base(const synth::DatasetManifest& corpus, const DiffusionConfig& cfg, TrainLog* log = nullptr);

// Per-pixel mean absolute reconstruction error.
double reconstruction_mae(const DiffusionCheckpoint& ckpt, std::span<const ImageBuf> images);

struct FinetuneOptions {
  int epochs = 10;
  double lr = 1e-4;
  int batch_size = 32;
  double caption_dropout = 0.1;
  uint64_t seed = 0;
  bool strict_prefix = true;  // false: warn and continue on mixed prefixes
  std::string source_id;      // recorded in provenance
};

// Denoiser-only training on the target set; the autoencoder stays frozen.
DiffusionCheckpoint finetune(const DiffusionCheckpoint& base, const synth::DatasetManifest& target, const FinetuneOptions& opt,
                             const EpochHook& hook = {});

struct SampleRequest {
  std::string prompt;
  int steps = 50;
  double guidance_scale = 7.5;
  uint64_t seed = 0;
  int count = 25;

  void validate(const NoiseSchedule& sched) const;
};

inline constexpr int kImagesPerSeed = 25;

struct SampleBatch {
  uint64_t seed = 0;
  std::vector<ImageBuf> images;
};

// Deterministic (eta = 0) strided sampler with classifier-free guidance.
// Batch b uses seed req.seed + b and holds up to 25 images.
std::vector<SampleBatch> sample(const DiffusionCheckpoint& ckpt, const SampleRequest& req);

// Runs sample() and writes PPMs + manifest.jsonl (role=generated) to out_dir.
synth::DatasetManifest sample_to_dir(const DiffusionCheckpoint& ckpt, const SampleRequest& req, const std::filesystem::path& out_dir,
                                     const std::string& id_prefix, const std::string& source);

// Mean epsilon-prediction loss on a fixed probe (used by tests and the
// gradient check): MSE(eps_hat(x_t, t, prompt), eps).
template <typename T>
T denoiser_loss(Denoiser<T>& net, const Tensor<T>& x0, const std::vector<int>& t, const Tensor<T>& eps, const Tensor<T>& prompt,
                const NoiseSchedule& sched, bool backward) {
  Tensor<T> xt = x0;
  const size_t hw = x0.spatial();
  for (int c = 0; c < x0.c; ++c)
    for (int n = 0; n < x0.n; ++n) {
      const double ab = sched.alpha_bar(t[n]);
      const T a = static_cast<T>(std::sqrt(ab)), b = static_cast<T>(std::sqrt(1.0 - ab));
      const size_t off = (size_t(c) * x0.n + n) * hw;
      for (size_t i = 0; i < hw; ++i) xt.data[off + i] = a * x0.data[off + i] + b * eps.data[off + i];
    }
  auto pred = backward ? net.forward(xt, t, prompt) : net.apply(xt, t, prompt);
  Tensor<T> grad;
  T loss = nn::mse_loss(pred, eps, backward ? &grad : nullptr);
  if (backward) net.backward(grad);
  return loss;
}

}  // namespace mialab::ldm
