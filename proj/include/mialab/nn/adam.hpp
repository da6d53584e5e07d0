#pragma once

#include <cmath>
#include <vector>

#include "mialab/nn/tensor.hpp"

namespace mialab::nn {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double clip_norm = 0.0;  // 0 disables global-norm clipping
};

template <typename T>
class Adam {
 public:
  Adam(ParamList<T> params, AdamConfig cfg = {}) : params_(std::move(params)), cfg_(cfg) {
    for (auto* p : params_) {
      m_.emplace_back(p->size(), 0.0);
      v_.emplace_back(p->size(), 0.0);
    }
  }

  void step() {
    ++t_;
    double scale = 1.0;
    if (cfg_.clip_norm > 0) {
      double sq = 0;
      for (auto* p : params_)
        for (T g : p->grad) sq += double(g) * double(g);
      double norm = std::sqrt(sq);
      if (norm > cfg_.clip_norm) scale = cfg_.clip_norm / norm;
    }
    const double bc1 = 1.0 - std::pow(cfg_.beta1, double(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, double(t_));
    for (size_t k = 0; k < params_.size(); ++k) {
      auto& p = *params_[k];
      auto& m = m_[k];
      auto& v = v_[k];
      for (size_t i = 0; i < p.size(); ++i) {
        double g = double(p.grad[i]) * scale;
        m[i] = cfg_.beta1 * m[i] + (1 - cfg_.beta1) * g;
        v[i] = cfg_.beta2 * v[i] + (1 - cfg_.beta2) * g * g;
        double upd = cfg_.lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + cfg_.eps);
        p.value[i] = static_cast<T>(double(p.value[i]) - upd);
      }
      p.zero_grad();
    }
  }

  long steps() const { return t_; }

 private:
  ParamList<T> params_;
  AdamConfig cfg_;
  std::vector<std::vector<double>> m_, v_;
  long t_ = 0;
};

// Mean squared error over all elements; writes dL/dpred into grad.
template <typename T>
T mse_loss(const Tensor<T>& pred, const Tensor<T>& target, Tensor<T>* grad) {
  require_same_shape(pred, target, "mse");
  T loss = 0;
  const T inv = T(1) / static_cast<T>(pred.size());
  if (grad) *grad = Tensor<T>(pred.c, pred.n, pred.h, pred.w);
  for (size_t i = 0; i < pred.size(); ++i) {
    T d = pred.data[i] - target.data[i];
    loss += d * d;
    if (grad) grad->data[i] = T(2) * d * inv;
  }
  return loss * inv;
}

}  // namespace mialab::nn
