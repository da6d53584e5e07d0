#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "mialab/attack/classifier.hpp"
#include "mialab/image.hpp"
#include "mialab/nn/container.hpp"
#include "mialab/synthdata/manifest.hpp"

namespace mialab::attack {

struct AttackConfig {
  int epochs = 20;
  int batch_size = 32;
  double lr = 1e-3;
  double val_fraction = 0.15;
  int min_per_class = 50;
  // Trains with labels swapped (positives as class 0); for symmetry checks.
  bool flip_labels = false;
};

struct AttackTrainSet {
  synth::DatasetManifest positives;
  synth::DatasetManifest negatives;
  uint64_t seed = 0;
};

struct AttackCheckpoint {
  Classifier<float> net;
  int image_size = 32;
  int epochs_run = 0;
  int best_epoch = 0;
  double val_loss = 0.0;
  double val_accuracy = 0.0;
  uint64_t seed = 0;
  bool flipped = false;
  std::vector<std::string> train_ids;
  std::vector<std::string> val_ids;
  std::vector<double> train_losses;
  std::vector<double> val_losses;

  // All-zero parameters: both logits equal, p = 0.5 everywhere.
  static AttackCheckpoint zeros(int image_size = 32);

  uint64_t checksum();
  void save(const std::filesystem::path& path);
  static AttackCheckpoint load(const std::filesystem::path& path);
};

// Balances classes by downsampling the larger one, holds out a stratified
// validation split and keeps the epoch with the lowest validation loss
// (epoch 0, the untrained net, included).
AttackCheckpoint train_attack(const AttackTrainSet& ts, const AttackConfig& cfg = {});

// Softmax probability of logit 1, the member class (the negatives' class
// for a checkpoint trained with flip_labels).
double predict(const AttackCheckpoint& ckpt, const ImageBuf& img);
std::vector<double> predict_batch(const AttackCheckpoint& ckpt, std::span<const ImageBuf> images);

}  // namespace mialab::attack
