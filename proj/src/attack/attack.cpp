#include "mialab/attack/attack.hpp"

#include <algorithm>
#include <numeric>

#include "mialab/nn/adam.hpp"
#include "mialab/nn/convert.hpp"
#include "mialab/rng.hpp"

namespace mialab::attack {

namespace fs = std::filesystem;

AttackCheckpoint AttackCheckpoint::zeros(int image_size) {
  AttackCheckpoint ck;
  ck.image_size = image_size;
  for (auto* p : ck.net.params()) std::fill(p->value.begin(), p->value.end(), 0.0f);
  return ck;
}

uint64_t AttackCheckpoint::checksum() { return nn::checksum(net.params()); }

void AttackCheckpoint::save(const fs::path& path) {
  nn::Container c;
  c.put(net.params());
  c.meta = {{"kind", "attack"},
            {"image_size", image_size},
            {"epochs_run", epochs_run},
            {"best_epoch", best_epoch},
            {"val_loss", val_loss},
            {"val_accuracy", val_accuracy},
            {"seed", seed},
            {"flipped", flipped},
            {"train_ids", train_ids},
            {"val_ids", val_ids},
            {"train_losses", train_losses},
            {"val_losses", val_losses}};
  nn::save(path, c);
}

AttackCheckpoint AttackCheckpoint::load(const fs::path& path) {
  auto c = nn::load(path);
  if (c.meta.value("kind", "") != "attack") fail(ErrorKind::kData, path.string() + " is not an attack checkpoint");
  AttackCheckpoint ck;
  c.get(ck.net.params());
  const auto& m = c.meta;
  ck.image_size = m.at("image_size");
  ck.epochs_run = m.at("epochs_run");
  ck.best_epoch = m.at("best_epoch");
  ck.val_loss = m.at("val_loss");
  ck.val_accuracy = m.at("val_accuracy");
  ck.seed = m.at("seed");
  ck.flipped = m.at("flipped");
  ck.train_ids = m.at("train_ids").get<std::vector<std::string>>();
  ck.val_ids = m.at("val_ids").get<std::vector<std::string>>();
  ck.train_losses = m.at("train_losses").get<std::vector<double>>();
  ck.val_losses = m.at("val_losses").get<std::vector<double>>();
  return ck;
}

namespace {

struct Example {
  size_t slot;   // 0 = positives, 1 = negatives
  size_t index;  // record index within its manifest
};

// Seeded subset of [0, n) of size k, in ascending order.
std::vector<size_t> subsample(size_t n, size_t k, uint64_t seed) {
  std::vector<size_t> idx(n);
  std::iota(idx.begin(), idx.end(), size_t{0});
  if (k < n) {
    Rng rng(seed);
    std::shuffle(idx.begin(), idx.end(), rng);
    idx.resize(k);
    std::sort(idx.begin(), idx.end());
  }
  return idx;
}

struct Evaluation {
  double loss = 0;
  double accuracy = 0;
};

Evaluation evaluate(const Classifier<float>& net, const nn::Tensor<float>& x, const std::vector<int>& labels, int batch) {
  double loss = 0;
  int correct = 0;
  const int n = x.n;
  for (int s = 0; s < n; s += batch) {
    const int m = std::min(batch, n - s);
    std::vector<int> idx(static_cast<size_t>(m));
    std::iota(idx.begin(), idx.end(), s);
    auto logits = net.apply(nn::gather_batch(x, std::span<const int>(idx)));
    std::vector<int> y(labels.begin() + s, labels.begin() + s + m);
    loss += cross_entropy<float>(logits, y, nullptr) * m;
    for (int j = 0; j < m; ++j) {
      const int pred = logits.data[size_t(m) + j] > logits.data[j] ? 1 : 0;
      correct += pred == y[j];
    }
  }
  return {loss / n, static_cast<double>(correct) / n};
}

}  // namespace

AttackCheckpoint train_attack(const AttackTrainSet& ts, const AttackConfig& cfg) {
  require(cfg.epochs >= 1, ErrorKind::kConfig, "attack epochs must be >= 1");
  require(cfg.batch_size >= 1, ErrorKind::kConfig, "attack batch size must be >= 1");
  require(cfg.val_fraction > 0 && cfg.val_fraction < 1, ErrorKind::kConfig, "validation fraction must lie in (0,1)");
  const size_t np = ts.positives.size(), nn_ = ts.negatives.size();
  if (np < size_t(cfg.min_per_class) || nn_ < size_t(cfg.min_per_class))
    fail(ErrorKind::kData, "attack training needs >= " + std::to_string(cfg.min_per_class) + " images per class, got " + std::to_string(np) +
                               " positives and " + std::to_string(nn_) + " negatives");

  const size_t k = std::min(np, nn_);
  const synth::DatasetManifest* sets[2] = {&ts.positives, &ts.negatives};
  std::vector<Example> train, val;
  for (size_t slot = 0; slot < 2; ++slot) {
    auto keep = subsample(sets[slot]->size(), k, derive_seed(ts.seed, "balance-" + std::to_string(slot)));
    Rng rng(derive_seed(ts.seed, "split-" + std::to_string(slot)));
    std::shuffle(keep.begin(), keep.end(), rng);
    const size_t nval = std::max<size_t>(1, static_cast<size_t>(std::llround(cfg.val_fraction * double(k))));
    for (size_t i = 0; i < keep.size(); ++i) (i < nval ? val : train).push_back({slot, keep[i]});
  }

  std::vector<ImageBuf> imgs[2] = {ts.positives.load_images(), ts.negatives.load_images()};
  const int size = imgs[0].front().height();
  for (const auto& set : imgs)
    for (const auto& im : set)
      if (im.height() != size || im.width() != size) fail(ErrorKind::kDimension, "attack training images must share one square size");

  auto pack = [&](const std::vector<Example>& ex, std::vector<int>& labels, std::vector<std::string>& ids) {
    std::vector<ImageBuf> batch;
    for (const auto& e : ex) {
      batch.push_back(imgs[e.slot][e.index]);
      const int member = e.slot == 0 ? 1 : 0;
      labels.push_back(cfg.flip_labels ? 1 - member : member);
      ids.push_back(sets[e.slot]->records[e.index].image_id);
    }
    return nn::images_to_tensor<float>(batch);
  };

  AttackCheckpoint ck;
  ck.image_size = size;
  ck.seed = ts.seed;
  ck.flipped = cfg.flip_labels;
  std::vector<int> train_y, val_y;
  auto x_train = pack(train, train_y, ck.train_ids);
  auto x_val = pack(val, val_y, ck.val_ids);

  Rng init_rng(derive_seed(ts.seed, "attack-init"));
  ck.net.init(init_rng);
  nn::Adam<float> opt(ck.net.params(), {cfg.lr, 0.9, 0.999, 1e-8, 0.0});
  Rng order_rng(derive_seed(ts.seed, "attack-order"));

  // The untrained net (equal logits, p = 0.5) is the epoch-0 candidate, so a
  // run that never beats chance on validation returns an uninformative model.
  Classifier<float> best = ck.net;
  auto initial = evaluate(ck.net, x_val, val_y, 128);
  double best_loss = initial.loss;
  ck.val_accuracy = initial.accuracy;
  const int n = x_train.n;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::vector<int> order(static_cast<size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), order_rng);
    double total = 0;
    for (int s = 0; s < n; s += cfg.batch_size) {
      const int m = std::min(cfg.batch_size, n - s);
      std::span<const int> idx(order.data() + s, static_cast<size_t>(m));
      std::vector<int> y;
      for (int i : idx) y.push_back(train_y[static_cast<size_t>(i)]);
      nn::Tensor<float> grad;
      auto logits = ck.net.forward(nn::gather_batch(x_train, idx));
      total += cross_entropy(logits, y, &grad) * m;
      ck.net.backward(grad);
      opt.step();
    }
    const double train_loss = total / n;
    auto ev = evaluate(ck.net, x_val, val_y, 128);
    if (!std::isfinite(train_loss) || !std::isfinite(ev.loss))
      fail(ErrorKind::kTraining, "attack loss is not finite at epoch " + std::to_string(epoch));
    ck.train_losses.push_back(train_loss);
    ck.val_losses.push_back(ev.loss);
    if (ev.loss < best_loss) {
      best_loss = ev.loss;
      best = ck.net;
      ck.best_epoch = epoch;
      ck.val_accuracy = ev.accuracy;
    }
  }
  ck.net = best;
  ck.val_loss = best_loss;
  ck.epochs_run = cfg.epochs;
  return ck;
}

double predict(const AttackCheckpoint& ckpt, const ImageBuf& img) {
  if (img.height() != ckpt.image_size || img.width() != ckpt.image_size)
    fail(ErrorKind::kDimension, "attack model expects " + std::to_string(ckpt.image_size) + "x" + std::to_string(ckpt.image_size) + " images, got " +
                                    std::to_string(img.height()) + "x" + std::to_string(img.width()));
  auto logits = ckpt.net.apply(nn::images_to_tensor<float>(std::span<const ImageBuf>(&img, 1)));
  return member_probability(logits.data[0], logits.data[1]);
}

std::vector<double> predict_batch(const AttackCheckpoint& ckpt, std::span<const ImageBuf> images) {
  std::vector<double> out;
  out.reserve(images.size());
  for (const auto& img : images) out.push_back(predict(ckpt, img));
  return out;
}

}  // namespace mialab::attack
