#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "mialab/nn/layers.hpp"

namespace mialab::ldm {

using nn::Conv2d;
using nn::Linear;
using nn::ParamList;
using nn::SiLU;
using nn::Tensor;

// Convolutional autoencoder, 4x spatial downsampling:
// [3][N][H][W] in [0,1]  <->  [latent][N][H/4][W/4].
// In pixel-space mode both directions are the identity.
struct AutoencoderConfig {
  int latent_channels = 4;
  int width = 32;
  bool pixel_space = false;
};

template <typename T>
class Autoencoder {
 public:
  Autoencoder() = default;
  explicit Autoencoder(const AutoencoderConfig& cfg)
      : cfg_(cfg),
        e1_("ae.enc1", 3, cfg.width / 2, 3, 1),
        e2_("ae.enc2", cfg.width / 2, cfg.width, 3, 2),
        e3_("ae.enc3", cfg.width, cfg.width, 3, 2),
        e4_("ae.enc4", cfg.width, cfg.latent_channels, 3, 1),
        d1_("ae.dec1", cfg.latent_channels, cfg.width, 3, 1),
        d2_("ae.dec2", cfg.width, cfg.width, 3, 1),
        d3_("ae.dec3", cfg.width, cfg.width / 2, 3, 1),
        d4_("ae.dec4", cfg.width / 2, 3, 3, 1) {}

  const AutoencoderConfig& config() const { return cfg_; }
  int latent_channels() const { return cfg_.pixel_space ? 3 : cfg_.latent_channels; }
  int downsample() const { return cfg_.pixel_space ? 1 : 4; }

  void init(Rng& rng) {
    for (auto* c : convs()) c->init(rng);
  }

  ParamList<T> params() {
    ParamList<T> out;
    if (cfg_.pixel_space) return out;
    for (auto* c : convs()) c->collect(out);
    return out;
  }

  Tensor<T> encode(const Tensor<T>& x) const {
    if (cfg_.pixel_space) return shift(x, T(2), T(-1));
    auto h = act.apply(e1_.apply(shift(x, T(2), T(-1))));
    h = act.apply(e2_.apply(h));
    h = act.apply(e3_.apply(h));
    return e4_.apply(h);
  }

  Tensor<T> decode(const Tensor<T>& z) const {
    if (cfg_.pixel_space) {
      auto y = shift(z, T(0.5), T(0.5));
      for (auto& v : y.data) v = std::clamp(v, T(0), T(1));
      return y;
    }
    auto h = act.apply(d1_.apply(z));
    h = act.apply(d2_.apply(nn::upsample2x(h)));
    h = act.apply(d3_.apply(nn::upsample2x(h)));
    return sig.apply(d4_.apply(h));
  }

  // Training pass: reconstruction of x; caches for backward_reconstruct.
  Tensor<T> forward_reconstruct(const Tensor<T>& x) {
    auto h = a1_.forward(e1_.forward(shift(x, T(2), T(-1))));
    h = a2_.forward(e2_.forward(h));
    h = a3_.forward(e3_.forward(h));
    auto z = e4_.forward(h);
    h = a4_.forward(d1_.forward(z));
    h = a5_.forward(d2_.forward(nn::upsample2x(h)));
    h = a6_.forward(d3_.forward(nn::upsample2x(h)));
    return sig_.forward(d4_.forward(h));
  }

  void backward_reconstruct(const Tensor<T>& dy) {
    auto g = d4_.backward(sig_.backward(dy));
    g = nn::upsample2x_backward(d3_.backward(a6_.backward(g)));
    g = nn::upsample2x_backward(d2_.backward(a5_.backward(g)));
    g = d1_.backward(a4_.backward(g));
    g = e4_.backward(g);
    g = e3_.backward(a3_.backward(g));
    g = e2_.backward(a2_.backward(g));
    e1_.backward(a1_.backward(g));
  }

 private:
  static Tensor<T> shift(const Tensor<T>& x, T scale, T offset) {
    Tensor<T> y = x;
    for (auto& v : y.data) v = v * scale + offset;
    return y;
  }

  std::vector<Conv2d<T>*> convs() { return {&e1_, &e2_, &e3_, &e4_, &d1_, &d2_, &d3_, &d4_}; }

  AutoencoderConfig cfg_;
  Conv2d<T> e1_, e2_, e3_, e4_, d1_, d2_, d3_, d4_;
  SiLU<T> act, a1_, a2_, a3_, a4_, a5_, a6_;
  nn::Sigmoid<T> sig, sig_;
};

struct DenoiserConfig {
  int latent_channels = 4;
  int ch1 = 32;  // full resolution
  int ch2 = 64;  // 1/2
  int ch3 = 64;  // 1/4
  int time_dim = 32;
  int prompt_dim = 32;
  int emb_dim = 64;
};

// Pre-activation residual block; a projected conditioning vector is added
// to the feature map between the two convolutions.
template <typename T>
class ResBlock {
 public:
  ResBlock() = default;
  ResBlock(const std::string& name, int channels, int emb_dim)
      : conv1_(name + ".conv1", channels, channels, 3), conv2_(name + ".conv2", channels, channels, 3), proj_(name + ".proj", emb_dim, channels) {}

  void init(Rng& rng) {
    conv1_.init(rng);
    conv2_.init(rng, 0.5);
    proj_.init(rng);
  }

  void collect(ParamList<T>& out) {
    conv1_.collect(out);
    conv2_.collect(out);
    proj_.collect(out);
  }

  Tensor<T> apply(const Tensor<T>& x, const Tensor<T>& cond) const {
    auto h = conv1_.apply(act1_.apply(x));
    nn::add_channel_bias(h, proj_.apply(cond));
    h = conv2_.apply(act2_.apply(h));
    nn::add_inplace(h, x);
    return h;
  }

  Tensor<T> forward(const Tensor<T>& x, const Tensor<T>& cond) {
    auto h = conv1_.forward(act1_.forward(x));
    nn::add_channel_bias(h, proj_.forward(cond));
    h = conv2_.forward(act2_.forward(h));
    nn::add_inplace(h, x);
    return h;
  }

  // Returns dL/dx; adds dL/dcond into dcond.
  Tensor<T> backward(const Tensor<T>& dy, Tensor<T>& dcond) {
    auto dh = act2_.backward(conv2_.backward(dy));
    nn::add_inplace(dcond, proj_.backward(nn::channel_bias_backward(dh)));
    auto dx = act1_.backward(conv1_.backward(dh));
    nn::add_inplace(dx, dy);
    return dx;
  }

 private:
  Conv2d<T> conv1_, conv2_;
  Linear<T> proj_;
  SiLU<T> act1_, act2_;
};

template <typename T>
Tensor<T> timestep_embedding(const std::vector<int>& t, int dim) {
  Tensor<T> e(dim, static_cast<int>(t.size()), 1, 1);
  const int half = dim / 2;
  for (size_t n = 0; n < t.size(); ++n)
    for (int i = 0; i < half; ++i) {
      const double freq = std::exp(-std::log(10000.0) * i / half);
      e.data[size_t(i) * t.size() + n] = static_cast<T>(std::sin(t[n] * freq));
      e.data[size_t(i + half) * t.size() + n] = static_cast<T>(std::cos(t[n] * freq));
    }
  return e;
}

// U-shaped epsilon predictor: two stride-2 downsampling stages, two
// nearest-upsampling stages, additive skips, timestep + prompt conditioning
// injected into every residual block.
template <typename T>
class Denoiser {
 public:
  Denoiser() = default;
  explicit Denoiser(const DenoiserConfig& c)
      : cfg_(c),
        t1_("unet.time1", c.time_dim, c.emb_dim),
        t2_("unet.time2", c.emb_dim, c.emb_dim),
        p1_("unet.prompt", c.prompt_dim, c.emb_dim),
        in_("unet.in", c.latent_channels, c.ch1, 3),
        rb1_("unet.rb1", c.ch1, c.emb_dim),
        down1_("unet.down1", c.ch1, c.ch2, 3, 2),
        rb2_("unet.rb2", c.ch2, c.emb_dim),
        down2_("unet.down2", c.ch2, c.ch3, 3, 2),
        rb3_("unet.rb3", c.ch3, c.emb_dim),
        up1_("unet.up1", c.ch3, c.ch2, 3),
        rb4_("unet.rb4", c.ch2, c.emb_dim),
        up2_("unet.up2", c.ch2, c.ch1, 3),
        rb5_("unet.rb5", c.ch1, c.emb_dim),
        out_("unet.out", c.ch1, c.latent_channels, 3) {}

  const DenoiserConfig& config() const { return cfg_; }

  void init(Rng& rng) {
    t1_.init(rng);
    t2_.init(rng);
    // Prompt directions start silent and only respond once trained on.
    std::fill(p1_.weight.value.begin(), p1_.weight.value.end(), T(0));
    in_.init(rng);
    rb1_.init(rng);
    down1_.init(rng);
    rb2_.init(rng);
    down2_.init(rng);
    rb3_.init(rng);
    up1_.init(rng);
    rb4_.init(rng);
    up2_.init(rng);
    rb5_.init(rng);
    out_.init(rng, 0.1);
  }

  ParamList<T> params() {
    ParamList<T> out;
    t1_.collect(out);
    t2_.collect(out);
    p1_.collect(out);
    in_.collect(out);
    rb1_.collect(out);
    down1_.collect(out);
    rb2_.collect(out);
    down2_.collect(out);
    rb3_.collect(out);
    up1_.collect(out);
    rb4_.collect(out);
    up2_.collect(out);
    rb5_.collect(out);
    out_.collect(out);
    return out;
  }

  // x: [latent][N][H][W]; prompt: [prompt_dim][N]. H, W divisible by 4.
  Tensor<T> apply(const Tensor<T>& x, const std::vector<int>& t, const Tensor<T>& prompt) const {
    check(x, t, prompt);
    auto tm = t2_.apply(act_t_.apply(t1_.apply(timestep_embedding<T>(t, cfg_.time_dim))));
    auto cond = act_c_.apply(nn::add(tm, p1_.apply(prompt)));
    auto h1 = rb1_.apply(in_.apply(x), cond);
    auto h3 = rb2_.apply(down1_.apply(h1), cond);
    auto h5 = rb3_.apply(down2_.apply(h3), cond);
    auto h7 = rb4_.apply(nn::add(up1_.apply(nn::upsample2x(h5)), h3), cond);
    auto h9 = rb5_.apply(nn::add(up2_.apply(nn::upsample2x(h7)), h1), cond);
    return out_.apply(act_o_.apply(h9));
  }

  Tensor<T> forward(const Tensor<T>& x, const std::vector<int>& t, const Tensor<T>& prompt) {
    check(x, t, prompt);
    auto tm = t2_.forward(act_t_.forward(t1_.forward(timestep_embedding<T>(t, cfg_.time_dim))));
    cond_ = act_c_.forward(nn::add(tm, p1_.forward(prompt)));
    auto h1 = rb1_.forward(in_.forward(x), cond_);
    auto h3 = rb2_.forward(down1_.forward(h1), cond_);
    auto h5 = rb3_.forward(down2_.forward(h3), cond_);
    auto h7 = rb4_.forward(nn::add(up1_.forward(nn::upsample2x(h5)), h3), cond_);
    auto h9 = rb5_.forward(nn::add(up2_.forward(nn::upsample2x(h7)), h1), cond_);
    return out_.forward(act_o_.forward(h9));
  }

  void backward(const Tensor<T>& dy) {
    Tensor<T> dcond(cond_.c, cond_.n, 1, 1);
    auto d9 = act_o_.backward(out_.backward(dy));
    auto d8 = rb5_.backward(d9, dcond);  // also the h1 skip gradient
    auto d7 = nn::upsample2x_backward(up2_.backward(d8));
    auto d6 = rb4_.backward(d7, dcond);  // also the h3 skip gradient
    auto d5 = nn::upsample2x_backward(up1_.backward(d6));
    auto d4 = rb3_.backward(d5, dcond);
    auto d3 = down2_.backward(d4);
    nn::add_inplace(d3, d6);
    auto d2 = rb2_.backward(d3, dcond);
    auto d1 = down1_.backward(d2);
    nn::add_inplace(d1, d8);
    in_.backward(rb1_.backward(d1, dcond));
    auto dpre = act_c_.backward(dcond);
    p1_.backward(dpre);
    t1_.backward(act_t_.backward(t2_.backward(dpre)));
  }

 private:
  void check(const Tensor<T>& x, const std::vector<int>& t, const Tensor<T>& prompt) const {
    if (x.c != cfg_.latent_channels || x.h % 4 != 0 || x.w % 4 != 0) fail(ErrorKind::kDimension, "denoiser input " + x.shape_str());
    if (static_cast<int>(t.size()) != x.n || prompt.n != x.n || prompt.c != cfg_.prompt_dim)
      fail(ErrorKind::kDimension, "denoiser conditioning batch mismatch");
  }

  DenoiserConfig cfg_;
  Linear<T> t1_, t2_, p1_;
  Conv2d<T> in_;
  ResBlock<T> rb1_;
  Conv2d<T> down1_;
  ResBlock<T> rb2_;
  Conv2d<T> down2_;
  ResBlock<T> rb3_;
  Conv2d<T> up1_;
  ResBlock<T> rb4_;
  Conv2d<T> up2_;
  ResBlock<T> rb5_;
  Conv2d<T> out_;
  SiLU<T> act_t_, act_c_, act_o_;
  Tensor<T> cond_;
};

}  // namespace mialab::ldm
