#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <random>
#include <string>

#include "mialab/nn/tensor.hpp"
#include "mialab/rng.hpp"

// Layers follow one pattern: forward() caches what backward() needs,
// apply() is the const, cache-free inference path, and backward() takes the
// upstream gradient, accumulates parameter gradients and returns the
// gradient with respect to the input.

namespace mialab::nn {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;

template <typename T>
void init_normal(Param<T>& p, Rng& rng, double stddev) {
  std::normal_distribution<double> dist(0.0, stddev);
  for (auto& v : p.value) v = static_cast<T>(dist(rng));
}

// 2-D convolution with square kernel, "same"-style padding (k/2) and stride.
template <typename T>
class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(const std::string& name, int in_channels, int out_channels, int kernel, int stride = 1)
      : weight(name + ".weight", {out_channels, in_channels, kernel, kernel}),
        bias(name + ".bias", {out_channels}),
        in_(in_channels),
        out_(out_channels),
        k_(kernel),
        stride_(stride),
        pad_(kernel / 2) {}

  // He-normal scaled by gain.
  void init(Rng& rng, double gain = 1.0) {
    init_normal(weight, rng, gain * std::sqrt(2.0 / (in_ * k_ * k_)));
    std::fill(bias.value.begin(), bias.value.end(), T(0));
  }

  int out_size(int in) const { return (in + 2 * pad_ - k_) / stride_ + 1; }

  Tensor<T> forward(const Tensor<T>& x) {
    check_input(x);
    in_n_ = x.n;
    in_h_ = x.h;
    in_w_ = x.w;
    cols_ = im2col(x);
    return gemm(cols_, x.n, out_size(x.h), out_size(x.w));
  }

  Tensor<T> apply(const Tensor<T>& x) const {
    check_input(x);
    return gemm(im2col(x), x.n, out_size(x.h), out_size(x.w));
  }

  Tensor<T> backward(const Tensor<T>& dy) {
    const int ho = out_size(in_h_), wo = out_size(in_w_);
    if (dy.c != out_ || dy.n != in_n_ || dy.h != ho || dy.w != wo) fail(ErrorKind::kDimension, "conv backward shape");
    const Eigen::Index kk = Eigen::Index(in_) * k_ * k_;
    const Eigen::Index cols = Eigen::Index(in_n_) * ho * wo;
    ConstMatMap<T> g(dy.data.data(), out_, cols);
    MatMap<T> dw(weight.grad.data(), out_, kk);
    ConstMatMap<T> w(weight.value.data(), out_, kk);
    dw.noalias() += g * cols_.transpose();
    for (int o = 0; o < out_; ++o) {
      T s = 0;
      const T* row = dy.data.data() + size_t(o) * cols;
      for (Eigen::Index j = 0; j < cols; ++j) s += row[j];
      bias.grad[o] += s;
    }
    RowMat<T> dcols = w.transpose() * g;
    return col2im(dcols);
  }

  void collect(ParamList<T>& out) {
    out.push_back(&weight);
    out.push_back(&bias);
  }

  Param<T> weight;
  Param<T> bias;

 private:
  void check_input(const Tensor<T>& x) const {
    if (x.c != in_) fail(ErrorKind::kDimension, weight.name + ": expected " + std::to_string(in_) + " channels, got " + std::to_string(x.c));
  }

  RowMat<T> im2col(const Tensor<T>& x) const {
    const int ho = out_size(x.h), wo = out_size(x.w);
    RowMat<T> cols(Eigen::Index(in_) * k_ * k_, Eigen::Index(x.n) * ho * wo);
    for (int ci = 0; ci < in_; ++ci) {
      for (int ky = 0; ky < k_; ++ky) {
        for (int kx = 0; kx < k_; ++kx) {
          T* dst = cols.data() + ((Eigen::Index(ci) * k_ + ky) * k_ + kx) * cols.cols();
          for (int ni = 0; ni < x.n; ++ni) {
            const T* src = x.data.data() + (size_t(ci) * x.n + ni) * x.spatial();
            for (int oy = 0; oy < ho; ++oy) {
              const int iy = oy * stride_ + ky - pad_;
              T* drow = dst + (size_t(ni) * ho + oy) * wo;
              if (iy < 0 || iy >= x.h) {
                std::fill(drow, drow + wo, T(0));
                continue;
              }
              const T* srow = src + size_t(iy) * x.w;
              for (int ox = 0; ox < wo; ++ox) {
                const int ix = ox * stride_ + kx - pad_;
                drow[ox] = (ix < 0 || ix >= x.w) ? T(0) : srow[ix];
              }
            }
          }
        }
      }
    }
    return cols;
  }

  Tensor<T> col2im(const RowMat<T>& dcols) const {
    Tensor<T> dx(in_, in_n_, in_h_, in_w_);
    const int ho = out_size(in_h_), wo = out_size(in_w_);
    for (int ci = 0; ci < in_; ++ci) {
      for (int ky = 0; ky < k_; ++ky) {
        for (int kx = 0; kx < k_; ++kx) {
          const T* src = dcols.data() + ((Eigen::Index(ci) * k_ + ky) * k_ + kx) * dcols.cols();
          for (int ni = 0; ni < in_n_; ++ni) {
            T* dst = dx.data.data() + (size_t(ci) * in_n_ + ni) * dx.spatial();
            for (int oy = 0; oy < ho; ++oy) {
              const int iy = oy * stride_ + ky - pad_;
              if (iy < 0 || iy >= in_h_) continue;
              const T* srow = src + (size_t(ni) * ho + oy) * wo;
              T* drow = dst + size_t(iy) * in_w_;
              for (int ox = 0; ox < wo; ++ox) {
                const int ix = ox * stride_ + kx - pad_;
                if (ix >= 0 && ix < in_w_) drow[ix] += srow[ox];
              }
            }
          }
        }
      }
    }
    return dx;
  }

  Tensor<T> gemm(const RowMat<T>& cols, int n, int ho, int wo) const {
    Tensor<T> y(out_, n, ho, wo);
    const Eigen::Index kk = Eigen::Index(in_) * k_ * k_;
    ConstMatMap<T> w(weight.value.data(), out_, kk);
    MatMap<T> ym(y.data.data(), out_, cols.cols());
    ym.noalias() = w * cols;
    for (int o = 0; o < out_; ++o) ym.row(o).array() += bias.value[o];
    return y;
  }

  int in_ = 0, out_ = 0, k_ = 1, stride_ = 1, pad_ = 0;
  int in_n_ = 0, in_h_ = 0, in_w_ = 0;
  RowMat<T> cols_;
};

// Fully connected layer on [features][N] tensors (h = w = 1).
template <typename T>
class Linear {
 public:
  Linear() = default;
  Linear(const std::string& name, int in_features, int out_features)
      : weight(name + ".weight", {out_features, in_features}), bias(name + ".bias", {out_features}), in_(in_features), out_(out_features) {}

  void init(Rng& rng, double gain = 1.0) {
    init_normal(weight, rng, gain * std::sqrt(1.0 / in_));
    std::fill(bias.value.begin(), bias.value.end(), T(0));
  }

  Tensor<T> forward(const Tensor<T>& x) {
    x_ = x;
    return apply(x);
  }

  Tensor<T> apply(const Tensor<T>& x) const {
    if (x.c != in_ || x.h != 1 || x.w != 1) fail(ErrorKind::kDimension, weight.name + ": bad input " + x.shape_str());
    Tensor<T> y(out_, x.n, 1, 1);
    ConstMatMap<T> w(weight.value.data(), out_, in_);
    ConstMatMap<T> xm(x.data.data(), in_, x.n);
    MatMap<T> ym(y.data.data(), out_, x.n);
    ym.noalias() = w * xm;
    for (int o = 0; o < out_; ++o) ym.row(o).array() += bias.value[o];
    return y;
  }

  Tensor<T> backward(const Tensor<T>& dy) {
    ConstMatMap<T> g(dy.data.data(), out_, dy.n);
    ConstMatMap<T> xm(x_.data.data(), in_, x_.n);
    MatMap<T> dw(weight.grad.data(), out_, in_);
    ConstMatMap<T> w(weight.value.data(), out_, in_);
    dw.noalias() += g * xm.transpose();
    for (int o = 0; o < out_; ++o) bias.grad[o] += g.row(o).sum();
    Tensor<T> dx(in_, dy.n, 1, 1);
    MatMap<T> dxm(dx.data.data(), in_, dy.n);
    dxm.noalias() = w.transpose() * g;
    return dx;
  }

  void collect(ParamList<T>& out) {
    out.push_back(&weight);
    out.push_back(&bias);
  }

  Param<T> weight;
  Param<T> bias;

 private:
  int in_ = 0, out_ = 0;
  Tensor<T> x_;
};

template <typename T>
struct SiLUFn {
  static T f(T x) { return x / (T(1) + std::exp(-x)); }
  static T df(T x) {
    T s = T(1) / (T(1) + std::exp(-x));
    return s * (T(1) + x * (T(1) - s));
  }
};

template <typename T>
struct ReLUFn {
  static T f(T x) { return x > T(0) ? x : T(0); }
  static T df(T x) { return x > T(0) ? T(1) : T(0); }
};

template <typename T>
struct SigmoidFn {
  static T f(T x) { return T(1) / (T(1) + std::exp(-x)); }
  static T df(T x) {
    T s = f(x);
    return s * (T(1) - s);
  }
};

template <typename T, template <typename> class Fn>
class Activation {
 public:
  Tensor<T> forward(const Tensor<T>& x) {
    x_ = x;
    return apply(x);
  }
  Tensor<T> apply(const Tensor<T>& x) const {
    Tensor<T> y = x;
    for (auto& v : y.data) v = Fn<T>::f(v);
    return y;
  }
  Tensor<T> backward(const Tensor<T>& dy) const {
    Tensor<T> dx = dy;
    for (size_t i = 0; i < dx.size(); ++i) dx.data[i] *= Fn<T>::df(x_.data[i]);
    return dx;
  }

 private:
  Tensor<T> x_;
};

template <typename T>
using SiLU = Activation<T, SiLUFn>;
template <typename T>
using ReLU = Activation<T, ReLUFn>;
template <typename T>
using Sigmoid = Activation<T, SigmoidFn>;

// Nearest-neighbour 2x upsampling.
template <typename T>
Tensor<T> upsample2x(const Tensor<T>& x) {
  Tensor<T> y(x.c, x.n, x.h * 2, x.w * 2);
  for (int c = 0; c < x.c; ++c)
    for (int n = 0; n < x.n; ++n)
      for (int yy = 0; yy < y.h; ++yy)
        for (int xx = 0; xx < y.w; ++xx) y.at(c, n, yy, xx) = x.at(c, n, yy / 2, xx / 2);
  return y;
}

template <typename T>
Tensor<T> upsample2x_backward(const Tensor<T>& dy) {
  Tensor<T> dx(dy.c, dy.n, dy.h / 2, dy.w / 2);
  for (int c = 0; c < dy.c; ++c)
    for (int n = 0; n < dy.n; ++n)
      for (int yy = 0; yy < dy.h; ++yy)
        for (int xx = 0; xx < dy.w; ++xx) dx.at(c, n, yy / 2, xx / 2) += dy.at(c, n, yy, xx);
  return dx;
}

// [C][N][H][W] -> [C][N][1][1]
template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& x) {
  Tensor<T> y(x.c, x.n, 1, 1);
  const size_t hw = x.spatial();
  for (int c = 0; c < x.c; ++c)
    for (int n = 0; n < x.n; ++n) {
      const T* p = x.data.data() + (size_t(c) * x.n + n) * hw;
      T s = 0;
      for (size_t i = 0; i < hw; ++i) s += p[i];
      y.data[size_t(c) * x.n + n] = s / static_cast<T>(hw);
    }
  return y;
}

template <typename T>
Tensor<T> global_avg_pool_backward(const Tensor<T>& dy, int h, int w) {
  Tensor<T> dx(dy.c, dy.n, h, w);
  const size_t hw = dx.spatial();
  for (int c = 0; c < dy.c; ++c)
    for (int n = 0; n < dy.n; ++n) {
      T g = dy.data[size_t(c) * dy.n + n] / static_cast<T>(hw);
      T* p = dx.data.data() + (size_t(c) * dy.n + n) * hw;
      std::fill(p, p + hw, g);
    }
  return dx;
}

// x[C][N][H][W] += e[C][N] broadcast over space.
template <typename T>
void add_channel_bias(Tensor<T>& x, const Tensor<T>& e) {
  if (e.c != x.c || e.n != x.n) fail(ErrorKind::kDimension, "channel bias shape");
  const size_t hw = x.spatial();
  for (int c = 0; c < x.c; ++c)
    for (int n = 0; n < x.n; ++n) {
      T b = e.data[size_t(c) * x.n + n];
      T* p = x.data.data() + (size_t(c) * x.n + n) * hw;
      for (size_t i = 0; i < hw; ++i) p[i] += b;
    }
}

template <typename T>
Tensor<T> channel_bias_backward(const Tensor<T>& dx) {
  Tensor<T> de(dx.c, dx.n, 1, 1);
  const size_t hw = dx.spatial();
  for (int c = 0; c < dx.c; ++c)
    for (int n = 0; n < dx.n; ++n) {
      const T* p = dx.data.data() + (size_t(c) * dx.n + n) * hw;
      T s = 0;
      for (size_t i = 0; i < hw; ++i) s += p[i];
      de.data[size_t(c) * dx.n + n] = s;
    }
  return de;
}

}  // namespace mialab::nn
