#pragma once

#include <cmath>
#include <string>

#include "mialab/nn/layers.hpp"
#include "mialab/rng.hpp"

namespace mialab::attack {

using nn::Conv2d;
using nn::ParamList;
using nn::ReLU;
using nn::Tensor;

// Basic residual block: relu(x' + conv2(relu(conv1(x)))) where x' is the
// input, or its 1x1 strided projection when the shape changes.
template <typename T>
class BasicBlock {
 public:
  BasicBlock() = default;
  BasicBlock(const std::string& name, int in, int out, int stride)
      : conv1_(name + ".conv1", in, out, 3, stride), conv2_(name + ".conv2", out, out, 3), project_(in != out || stride != 1) {
    if (project_) shortcut_ = Conv2d<T>(name + ".shortcut", in, out, 1, stride);
  }

  void init(Rng& rng) {
    conv1_.init(rng);
    conv2_.init(rng, 0.5);
    if (project_) shortcut_.init(rng);
  }

  void collect(ParamList<T>& out) {
    conv1_.collect(out);
    conv2_.collect(out);
    if (project_) shortcut_.collect(out);
  }

  Tensor<T> apply(const Tensor<T>& x) const {
    auto h = conv2_.apply(mid_.apply(conv1_.apply(x)));
    nn::add_inplace(h, project_ ? shortcut_.apply(x) : x);
    return out_.apply(h);
  }

  Tensor<T> forward(const Tensor<T>& x) {
    auto h = conv2_.forward(mid_.forward(conv1_.forward(x)));
    nn::add_inplace(h, project_ ? shortcut_.forward(x) : x);
    return out_.forward(h);
  }

  Tensor<T> backward(const Tensor<T>& dy) {
    auto dh = out_.backward(dy);
    auto dx = conv1_.backward(mid_.backward(conv2_.backward(dh)));
    nn::add_inplace(dx, project_ ? shortcut_.backward(dh) : dh);
    return dx;
  }

 private:
  Conv2d<T> conv1_, conv2_, shortcut_;
  ReLU<T> mid_, out_;
  bool project_ = false;
};

// Stem conv (stride 2), three residual blocks 16 -> 32 -> 64, global
// average pooling and a two-logit head. Logit 1 is the member class.
template <typename T>
class Classifier {
 public:
  static constexpr int kLogits = 2;

  Classifier()
      : stem_("stem", 3, 16, 3, 2),
        b1_("block1", 16, 16, 1),
        b2_("block2", 16, 32, 2),
        b3_("block3", 32, 64, 2),
        head_w_("head.weight", {kLogits, 64}),
        head_b_("head.bias", {kLogits}) {}

  // The head starts at zero so both logits are equal until trained.
  void init(Rng& rng) {
    stem_.init(rng);
    b1_.init(rng);
    b2_.init(rng);
    b3_.init(rng);
    std::fill(head_w_.value.begin(), head_w_.value.end(), T(0));
    std::fill(head_b_.value.begin(), head_b_.value.end(), T(0));
  }

  ParamList<T> params() {
    ParamList<T> out;
    stem_.collect(out);
    b1_.collect(out);
    b2_.collect(out);
    b3_.collect(out);
    out.push_back(&head_w_);
    out.push_back(&head_b_);
    return out;
  }

  // Input is [3][N][H][W] with values in [0,1]; returns logits [2][N][1][1].
  Tensor<T> apply(const Tensor<T>& x) const {
    auto h = stem_act_.apply(stem_.apply(normalize(x)));
    h = b3_.apply(b2_.apply(b1_.apply(h)));
    return head(nn::global_avg_pool(h));
  }

  Tensor<T> forward(const Tensor<T>& x) {
    auto h = stem_act_.forward(stem_.forward(normalize(x)));
    h = b3_.forward(b2_.forward(b1_.forward(h)));
    feat_h_ = h.h;
    feat_w_ = h.w;
    pooled_ = nn::global_avg_pool(h);
    return head(pooled_);
  }

  void backward(const Tensor<T>& dlogits) {
    const int n = dlogits.n, f = pooled_.c;
    Tensor<T> dpooled(f, n, 1, 1);
    for (int k = 0; k < kLogits; ++k)
      for (int j = 0; j < n; ++j) {
        const T g = dlogits.data[size_t(k) * n + j];
        head_b_.grad[k] += g;
        for (int i = 0; i < f; ++i) {
          head_w_.grad[size_t(k) * f + i] += g * pooled_.data[size_t(i) * n + j];
        }
      }
    for (int i = 0; i < f; ++i)
      for (int j = 0; j < n; ++j) {
        T s = 0;
        for (int k = 0; k < kLogits; ++k) s += head_w_.value[size_t(k) * f + i] * dlogits.data[size_t(k) * n + j];
        dpooled.data[size_t(i) * n + j] = s;
      }
    auto dh = nn::global_avg_pool_backward(dpooled, feat_h_, feat_w_);
    dh = b1_.backward(b2_.backward(b3_.backward(dh)));
    stem_.backward(stem_act_.backward(dh));
  }

 private:
  static Tensor<T> normalize(const Tensor<T>& x) {
    Tensor<T> y = x;
    for (auto& v : y.data) v = v * T(2) - T(1);
    return y;
  }

  Tensor<T> head(const Tensor<T>& pooled) const {
    const int n = pooled.n, f = pooled.c;
    Tensor<T> logits(kLogits, n, 1, 1);
    for (int k = 0; k < kLogits; ++k)
      for (int j = 0; j < n; ++j) {
        T s = head_b_.value[k];
        for (int i = 0; i < f; ++i) s += head_w_.value[size_t(k) * f + i] * pooled.data[size_t(i) * n + j];
        logits.data[size_t(k) * n + j] = s;
      }
    return logits;
  }

  Conv2d<T> stem_;
  ReLU<T> stem_act_;
  BasicBlock<T> b1_, b2_, b3_;
  nn::Param<T> head_w_, head_b_;
  Tensor<T> pooled_;
  int feat_h_ = 0, feat_w_ = 0;
};

// Two-class softmax cross-entropy, mean over the batch. labels[j] is 0 or 1.
// Writes dL/dlogits when grad is non-null.
template <typename T>
double cross_entropy(const Tensor<T>& logits, const std::vector<int>& labels, Tensor<T>* grad) {
  const int n = logits.n;
  if (grad) *grad = Tensor<T>(2, n, 1, 1);
  double loss = 0;
  for (int j = 0; j < n; ++j) {
    const double z0 = logits.data[j], z1 = logits.data[size_t(n) + j];
    const double m = std::max(z0, z1);
    const double e0 = std::exp(z0 - m), e1 = std::exp(z1 - m);
    const double sum = e0 + e1;
    const double p[2] = {e0 / sum, e1 / sum};
    const int y = labels[j];
    loss -= std::log(p[y]);
    if (grad) {
      for (int k = 0; k < 2; ++k) grad->data[size_t(k) * n + j] = static_cast<T>((p[k] - (k == y ? 1.0 : 0.0)) / n);
    }
  }
  return loss / n;
}

// Softmax probability of logit 1.
inline double member_probability(double z0, double z1) {
  const double m = std::max(z0, z1);
  const double e0 = std::exp(z0 - m), e1 = std::exp(z1 - m);
  return e1 / (e0 + e1);
}

}  // namespace mialab::attack
