#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "infgen/graph.hpp"
#include "infgen/nn.hpp"
#include "infgen/image.hpp"
#include "infgen/param.hpp"
#include "infgen/rng.hpp"

namespace infgen {

// Per-position Gaussian over the latent map.
template <typename T>
struct GaussianLatentT {
  TensorT<T> mu;      // {C, h_l, w_l}
  TensorT<T> logvar;  // same shape, clamped to [-30, 20]
};
using GaussianLatent = GaussianLatentT<float>;

// Encoder: stem + three (residual, stride-2) stages, 8x spatial reduction,
// final head emits 2C channels split into mean / log-variance.
template <typename T>
struct VaeEncoderT {
  Conv2dT<T> stem;
  ResBlockT<T> res0, res1, res2, res3;
  Conv2dT<T> down0, down1, down2;
  Conv2dT<T> head;
  int latent_channels = 4;

  VaeEncoderT() = default;
  VaeEncoderT(int latent_channels_, int width, Rng& rng) {
    latent_channels = latent_channels_;
    int c0 = width, c1 = 2 * width, c2 = 3 * width, c3 = 4 * width;
    stem = Conv2dT<T>("enc.stem", 3, c0, 3, 1, 1, rng);
    res0 = ResBlockT<T>("enc.res0", c0, rng);
    down0 = Conv2dT<T>("enc.down0", c0, c1, 3, 2, 1, rng);
    res1 = ResBlockT<T>("enc.res1", c1, rng);
    down1 = Conv2dT<T>("enc.down1", c1, c2, 3, 2, 1, rng);
    res2 = ResBlockT<T>("enc.res2", c2, rng);
    down2 = Conv2dT<T>("enc.down2", c2, c3, 3, 2, 1, rng);
    res3 = ResBlockT<T>("enc.res3", c3, rng);
    head = Conv2dT<T>("enc.head", c3, 2 * latent_channels, 3, 1, 1, rng);
  }

  // returns (mu, logvar) node ids
  std::pair<int, int> forward(GraphT<T>& g, int img) {
    int x = stem.forward(g, img);
    x = res0.forward(g, x);
    x = down0.forward(g, x);
    x = res1.forward(g, x);
    x = down1.forward(g, x);
    x = res2.forward(g, x);
    x = down2.forward(g, x);
    x = res3.forward(g, x);
    x = head.forward(g, g.gelu(x));
    int mu = g.slice_chan(x, 0, latent_channels);
    int lv = g.clamp(g.slice_chan(x, latent_channels, 2 * latent_channels), T(-30), T(20));
    return {mu, lv};
  }

  void collect(ParamRefs<T>& out) {
    stem.collect(out);
    res0.collect(out);
    down0.collect(out);
    res1.collect(out);
    down1.collect(out);
    res2.collect(out);
    down2.collect(out);
    res3.collect(out);
    head.collect(out);
  }

  void set_frozen(bool f) {
    ParamRefs<T> ps;
    collect(ps);
    for (auto* p : ps) p->frozen = f;
  }

  bool frozen() const {
    ParamRefs<T> ps;
    const_cast<VaeEncoderT*>(this)->collect(ps);
    for (auto* p : ps)
      if (!p->frozen) return false;
    return true;
  }
};

// Reconstruction decoder used only while pretraining the encoder. The
// arbitrary-resolution generator replaces it afterwards.
template <typename T>
struct VaeDecoderT {
  Conv2dT<T> stem;
  ResBlockT<T> res0;
  Conv2dT<T> up0, up1, up2;
  Conv2dT<T> to_rgb;

  VaeDecoderT() = default;
  VaeDecoderT(int latent_channels, int width, Rng& rng) {
    int c0 = width, c1 = 2 * width, c3 = 4 * width;
    stem = Conv2dT<T>("vaedec.stem", latent_channels, c3, 3, 1, 1, rng);
    res0 = ResBlockT<T>("vaedec.res0", c3, rng);
    up0 = Conv2dT<T>("vaedec.up0", c3, c1, 3, 1, 1, rng);
    up1 = Conv2dT<T>("vaedec.up1", c1, c0, 3, 1, 1, rng);
    up2 = Conv2dT<T>("vaedec.up2", c0, c0, 3, 1, 1, rng);
    to_rgb = Conv2dT<T>("vaedec.to_rgb", c0, 3, 3, 1, 1, rng);
  }

  int forward(GraphT<T>& g, int z) {
    int x = stem.forward(g, z);
    x = res0.forward(g, x);
    x = g.gelu(up0.forward(g, g.upsample_nearest2x(x)));
    x = g.gelu(up1.forward(g, g.upsample_nearest2x(x)));
    x = g.gelu(up2.forward(g, g.upsample_nearest2x(x)));
    return g.tanh_(to_rgb.forward(g, x));
  }

  void collect(ParamRefs<T>& out) {
    stem.collect(out);
    res0.collect(out);
    up0.collect(out);
    up1.collect(out);
    up2.collect(out);
    to_rgb.collect(out);
  }
};

template <typename T>
struct VaeLossBreakdown {
  double l1 = 0.0;
  double kl = 0.0;
  double total = 0.0;
};

template <typename T>
struct VaeT {
  VaeEncoderT<T> encoder;
  VaeDecoderT<T> decoder;

  VaeT() = default;
  VaeT(int latent_channels, int width, Rng& rng)
      : encoder(latent_channels, width, rng), decoder(latent_channels, width, rng) {}

  static void check_encodable(int h, int w) {
    if (h < 8 || w < 8) throw std::invalid_argument("encode: image dims must be >= 8");
    if (h % 8 != 0 || w % 8 != 0)
      throw std::invalid_argument("encode: image dims must be divisible by 8");
  }

  GaussianLatentT<T> encode(const TensorT<T>& pixels) const {
    if (pixels.rank() != 3 || pixels.dim(0) != 3)
      throw std::invalid_argument("encode: expected (3,H,W)");
    check_encodable(pixels.dim(1), pixels.dim(2));
    if (!all_finite(pixels)) throw std::invalid_argument("encode: non-finite pixels");
    auto* self = const_cast<VaeT*>(this);
    GraphT<T> g;
    auto [mu, lv] = self->encoder.forward(g, g.constant(pixels));
    return {g.val(mu), g.val(lv)};
  }

  static TensorT<T> reparameterize(const GaussianLatentT<T>& lat, uint64_t seed) {
    Rng rng(seed);
    TensorT<T> z = lat.mu;
    for (size_t i = 0; i < z.v.size(); ++i)
      z.v[i] += std::exp(lat.logvar.v[i] * T(0.5)) * static_cast<T>(rng.normal());
    return z;
  }

  static double kl_divergence(const GaussianLatentT<T>& lat) {
    if (!lat.mu.same_shape(lat.logvar))
      throw std::invalid_argument("kl_divergence: mu/logvar shape mismatch");
    double acc = 0.0;
    for (size_t i = 0; i < lat.mu.v.size(); ++i) {
      double mu = lat.mu.v[i], lv = lat.logvar.v[i];
      acc += 0.5 * (mu * mu + std::exp(lv) - 1.0 - lv);
    }
    return acc / static_cast<double>(lat.mu.numel());
  }

  // One optimizer step of L1 reconstruction + beta * KL on a batch.
  VaeLossBreakdown<T> pretrain_step(const std::vector<TensorT<T>>& batch, AdamWT<T>& opt,
                                    double lr, double beta, Rng& noise_rng) {
    if (batch.empty()) throw std::invalid_argument("pretrain_step: empty batch");
    GraphT<T> g;
    std::vector<int> l1_terms, kl_terms;
    for (const auto& pixels : batch) {
      check_encodable(pixels.dim(1), pixels.dim(2));
      int img = g.constant(pixels);
      auto [mu, lv] = encoder.forward(g, img);
      TensorT<T> eps(g.val(mu).shape);
      for (auto& e : eps.v) e = static_cast<T>(noise_rng.normal());
      int z = g.add(mu, g.mul(g.exp_(g.scale(lv, T(0.5))), g.constant(std::move(eps))));
      int recon = decoder.forward(g, z);
      l1_terms.push_back(g.mean_abs_diff(recon, img));
      int kl_elem = g.add(g.add(g.mul(mu, mu), g.exp_(lv)), g.affine(lv, T(-1), T(-1)));
      kl_terms.push_back(g.mean_all(kl_elem));
    }
    T inv_b = T(1) / T(batch.size());
    int l1 = g.lincomb(l1_terms, std::vector<T>(l1_terms.size(), inv_b));
    int kl = g.lincomb(kl_terms, std::vector<T>(kl_terms.size(), T(0.5) * inv_b));
    int total = g.lincomb({l1, kl}, {T(1), static_cast<T>(beta)});

    VaeLossBreakdown<T> out;
    out.l1 = static_cast<double>(g.scalar(l1));
    out.kl = static_cast<double>(g.scalar(kl));
    out.total = static_cast<double>(g.scalar(total));
    if (!std::isfinite(out.total))
      throw std::runtime_error("pretrain_step: non-finite loss, training diverged");

    ParamRefs<T> ps = params();
    zero_grads(ps);
    g.backward(total);
    opt.step(ps, lr);
    return out;
  }

  ParamRefs<T> params() {
    ParamRefs<T> ps;
    encoder.collect(ps);
    decoder.collect(ps);
    return ps;
  }
};

using Vae = VaeT<float>;

}  // namespace infgen
