#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include "infgen/arr_decoder.hpp"
#include "infgen/graph.hpp"
#include "infgen/image.hpp"
#include "infgen/latent_codec.hpp"
#include "infgen/param.hpp"
#include "infgen/rng.hpp"

namespace infgen {

struct LossWeights {
  double lambda_p = 0.1;
  double lambda_g = 0.1;
};

struct LossBreakdown {
  double l1 = 0.0;
  double perceptual = 0.0;
  double adversarial_g = 0.0;
  double total = 0.0;
  double discriminator = 0.0;

  // total must equal l1 + lambda_p*perceptual + lambda_g*adversarial_g
  double identity_residual(const LossWeights& w) const {
    return std::abs(total - (l1 + w.lambda_p * perceptual + w.lambda_g * adversarial_g));
  }
};

// Frozen random three-stage conv pyramid. Stage activations are normalized
// to unit channel vectors before comparison, LPIPS-style but without
// pretrained weights; stage 3 doubles as the feature extractor for the
// Frechet metric (global average pool, 64 channels).
template <typename T>
struct PerceptualNetT {
  Conv2dT<T> s1, s2, s3;
  static constexpr int kFeatureDim = 64;

  PerceptualNetT() = default;
  explicit PerceptualNetT(Rng& rng)
      : s1("percep.s1", 3, 16, 3, 2, 1, rng),
        s2("percep.s2", 16, 32, 3, 2, 1, rng),
        s3("percep.s3", 32, 64, 3, 2, 1, rng) {
    for (auto* p : {&s1.w, &s1.b, &s2.w, &s2.b, &s3.w, &s3.b}) p->frozen = true;
  }

  std::vector<int> stages(GraphT<T>& g, int img) {
    int a = g.gelu(s1.forward(g, img));
    int b = g.gelu(s2.forward(g, a));
    int c = g.gelu(s3.forward(g, b));
    return {a, b, c};
  }

  // mean over stages of the MSE between unit-normalized activations
  int distance_node(GraphT<T>& g, int x, int x_hat) {
    if (!g.val(x).same_shape(g.val(x_hat)))
      throw std::invalid_argument("perceptual_loss: dimension mismatch");
    auto sx = stages(g, x);
    auto sy = stages(g, x_hat);
    std::vector<int> terms;
    for (size_t i = 0; i < sx.size(); ++i)
      terms.push_back(g.mean_sq_diff(g.channel_unit_norm(sx[i], T(1e-10)),
                                     g.channel_unit_norm(sy[i], T(1e-10))));
    return g.lincomb(terms, std::vector<T>(terms.size(), T(1) / T(terms.size())));
  }

  double distance(const TensorT<T>& x, const TensorT<T>& x_hat) {
    GraphT<T> g;
    return static_cast<double>(g.scalar(distance_node(g, g.constant(x), g.constant(x_hat))));
  }

  // pooled stage-3 feature vector (no gradients needed)
  std::vector<double> features(const TensorT<T>& img) {
    GraphT<T> g;
    auto st = stages(g, g.constant(img));
    const auto& f = g.val(st.back());
    int c = f.dim(0), hw = f.dim(1) * f.dim(2);
    std::vector<double> out(static_cast<size_t>(c));
    for (int ch = 0; ch < c; ++ch) {
      double s = 0.0;
      for (int p = 0; p < hw; ++p) s += f.v[static_cast<size_t>(ch) * hw + p];
      out[static_cast<size_t>(ch)] = s / hw;
    }
    return out;
  }

  void collect(ParamRefs<T>& out) {
    s1.collect(out);
    s2.collect(out);
    s3.collect(out);
  }
};

// Fully convolutional patch discriminator: three stride-2 stages then a 1-
// channel logit head, so a HxW input scores roughly H/8 x W/8 patches.
template <typename T>
struct PatchGanT {
  Conv2dT<T> c1, c2, c3, head;
  static constexpr int kMinInput = 16;
  static constexpr T kSlope = T(0.2);

  PatchGanT() = default;
  PatchGanT(int width, Rng& rng)
      : c1("disc.c1", 3, width, 4, 2, 1, rng),
        c2("disc.c2", width, 2 * width, 4, 2, 1, rng),
        c3("disc.c3", 2 * width, 4 * width, 4, 2, 1, rng),
        head("disc.head", 4 * width, 1, 3, 1, 1, rng) {}

  int forward(GraphT<T>& g, int img) {
    const auto& s = g.val(img);
    if (s.dim(1) < kMinInput || s.dim(2) < kMinInput)
      throw std::invalid_argument("discriminator: image smaller than receptive field");
    int x = g.leaky_relu(c1.forward(g, img), kSlope);
    x = g.leaky_relu(c2.forward(g, x), kSlope);
    x = g.leaky_relu(c3.forward(g, x), kSlope);
    return head.forward(g, x);
  }

  TensorT<T> logits(const TensorT<T>& img) {
    GraphT<T> g;
    return g.val(forward(g, g.constant(img)));
  }

  ParamRefs<T> params() {
    ParamRefs<T> ps;
    c1.collect(ps);
    c2.collect(ps);
    c3.collect(ps);
    head.collect(ps);
    return ps;
  }
};

// Hinge losses: d = mean relu(1 - D(real)) + mean relu(1 + D(fake)),
// g = -mean D(fake).
template <typename T>
std::pair<double, double> adversarial_losses(const TensorT<T>& real_logits,
                                             const TensorT<T>& fake_logits) {
  double d = 0.0;
  for (T v : real_logits.v) d += std::max(0.0, 1.0 - static_cast<double>(v));
  d /= static_cast<double>(real_logits.numel());
  double df = 0.0, gsum = 0.0;
  for (T v : fake_logits.v) {
    df += std::max(0.0, 1.0 + static_cast<double>(v));
    gsum += static_cast<double>(v);
  }
  df /= static_cast<double>(fake_logits.numel());
  double g = -gsum / static_cast<double>(fake_logits.numel());
  return {g, d + df};
}

// ---- training data protocol ----

struct StageConfig {
  int min_res = 64;
  int max_res = 128;
  int steps = 5000;
  int batch = 4;
};

template <typename T>
struct TrainingPairT {
  TensorT<T> input;   // fixed encoder size, resized copy of the crop
  TensorT<T> target;  // keeps the cropped shape
  TargetResolution target_res;
};
using TrainingPair = TrainingPairT<float>;

// Random crop with height and width drawn independently, then the crop is
// resized to the fixed encoder input size.
inline TrainingPair sample_training_pair(const Image& source, const StageConfig& stage,
                                         int input_size, Rng& rng) {
  if (source.height() < stage.min_res || source.width() < stage.min_res)
    throw std::invalid_argument("sample_training_pair: source smaller than stage minimum");
  int th = static_cast<int>(rng.uniform_int(stage.min_res, std::min(stage.max_res, source.height())));
  int tw = static_cast<int>(rng.uniform_int(stage.min_res, std::min(stage.max_res, source.width())));
  int y0 = static_cast<int>(rng.uniform_int(0, source.height() - th));
  int x0 = static_cast<int>(rng.uniform_int(0, source.width() - tw));
  Image target = crop(source, y0, x0, th, tw);
  Image input = (th == input_size && tw == input_size)
                    ? target
                    : resize_bilinear(target, input_size, input_size);
  TrainingPair pair;
  pair.input = std::move(input.pixels);
  pair.target = std::move(target.pixels);
  pair.target_res = {th, tw};
  return pair;
}

// ---- generator objective ----

template <typename T>
struct GeneratorLossNodes {
  int l1 = -1;
  int perceptual = -1;
  int adversarial_g = -1;  // -1 when the adversarial term is inactive
  int total = -1;
};

// Assembles l1 + lambda_p * perceptual (+ lambda_g * adversarial) inside an
// existing graph so gradients reach the generator through x_hat.
template <typename T>
GeneratorLossNodes<T> total_generator_loss_node(GraphT<T>& g, int x, int x_hat,
                                                const LossWeights& w,
                                                PerceptualNetT<T>& percep,
                                                PatchGanT<T>* disc) {
  if (!g.val(x).same_shape(g.val(x_hat)))
    throw std::invalid_argument("generator loss: dimension mismatch");
  GeneratorLossNodes<T> nodes;
  nodes.l1 = g.mean_abs_diff(x_hat, x);
  nodes.perceptual = percep.distance_node(g, x, x_hat);
  std::vector<int> terms = {nodes.l1, nodes.perceptual};
  std::vector<T> coefs = {T(1), static_cast<T>(w.lambda_p)};
  if (disc != nullptr) {
    nodes.adversarial_g = g.scale(g.mean_all(disc->forward(g, x_hat)), T(-1));
    terms.push_back(nodes.adversarial_g);
    coefs.push_back(static_cast<T>(w.lambda_g));
  }
  nodes.total = g.lincomb(terms, coefs);
  return nodes;
}

template <typename T>
LossBreakdown total_generator_loss(const TensorT<T>& x, const TensorT<T>& x_hat,
                                   const LossWeights& w, PerceptualNetT<T>& percep,
                                   PatchGanT<T>* disc) {
  GraphT<T> g;
  auto nodes = total_generator_loss_node(g, g.constant(x), g.constant(x_hat), w, percep, disc);
  LossBreakdown out;
  out.l1 = static_cast<double>(g.scalar(nodes.l1));
  out.perceptual = static_cast<double>(g.scalar(nodes.perceptual));
  out.adversarial_g = disc ? static_cast<double>(g.scalar(nodes.adversarial_g)) : 0.0;
  out.total = out.l1 + w.lambda_p * out.perceptual + w.lambda_g * out.adversarial_g;
  return out;
}

// ---- train step ----

struct TrainSchedule {
  double lr_start = 2e-4;
  double lr_end = 1e-5;
  int64_t total_steps = 6000;
  int64_t gan_warmup_steps = 200;
  bool sample_latent = true;  // reparameterize vs. feed the encoder mean
};

template <typename T>
class TrainerT {
 public:
  TrainerT(VaeT<T>& vae, ArrDecoderT<T>& gen, PatchGanT<T>& disc, PerceptualNetT<T>& percep,
           LossWeights weights, TrainSchedule sched)
      : vae_(vae), gen_(gen), disc_(disc), percep_(percep), weights_(weights), sched_(sched) {
    opt_g_.weight_decay = 1e-4;
    opt_d_.weight_decay = 1e-4;
  }

  AdamWT<T>& opt_g() { return opt_g_; }
  AdamWT<T>& opt_d() { return opt_d_; }

  double lr_at(int64_t step) const {
    return cosine_lr(sched_.lr_start, sched_.lr_end, step, sched_.total_steps);
  }

  // Discriminator update then generator update on one mini-batch. The
  // encoder runs forward only; its parameters stay frozen.
  LossBreakdown train_step(const std::vector<TrainingPairT<T>>& batch, int64_t step,
                           Rng& latent_rng) {
    if (batch.empty()) throw std::invalid_argument("train_step: empty batch");
    if (!vae_.encoder.frozen())
      throw std::logic_error("train_step: encoder must be frozen before generator training");
    double lr = lr_at(step);
    bool adv_on = step >= sched_.gan_warmup_steps;

    // generated images, detached for the discriminator pass
    std::vector<TensorT<T>> fakes;
    fakes.reserve(batch.size());
    for (const auto& pair : batch) {
      auto lat = vae_.encode(pair.input);
      TensorT<T> z = sched_.sample_latent
                         ? VaeT<T>::reparameterize(lat, latent_rng.next_u64())
                         : lat.mu;
      fakes.push_back(gen_.decode(z, pair.target_res));
    }

    LossBreakdown out;

    {  // discriminator step on (target, detached fake)
      GraphT<T> g;
      std::vector<int> terms;
      for (size_t i = 0; i < batch.size(); ++i) {
        int real_logits = disc_.forward(g, g.constant(batch[i].target));
        int fake_logits = disc_.forward(g, g.constant(fakes[i]));
        int d_real = g.mean_all(g.relu(g.affine(real_logits, T(-1), T(1))));
        int d_fake = g.mean_all(g.relu(g.affine(fake_logits, T(1), T(1))));
        terms.push_back(g.lincomb({d_real, d_fake}, {T(1), T(1)}));
      }
      int d_loss = g.lincomb(terms, std::vector<T>(terms.size(), T(1) / T(terms.size())));
      out.discriminator = static_cast<double>(g.scalar(d_loss));
      if (!std::isfinite(out.discriminator))
        throw std::runtime_error("train_step: non-finite discriminator loss");
      auto dps = disc_.params();
      zero_grads(dps);
      g.backward(d_loss);
      opt_d_.step(dps, lr);
    }

    {  // generator step through decode
      GraphT<T> g;
      std::vector<int> l1s, percs, advs;
      for (const auto& pair : batch) {
        auto lat = vae_.encode(pair.input);
        TensorT<T> z = sched_.sample_latent
                           ? VaeT<T>::reparameterize(lat, latent_rng.next_u64())
                           : lat.mu;
        int x_hat = gen_.decode_node(g, z, pair.target_res);
        int x = g.constant(pair.target);
        l1s.push_back(g.mean_abs_diff(x_hat, x));
        percs.push_back(percep_.distance_node(g, x, x_hat));
        if (adv_on) advs.push_back(g.scale(g.mean_all(disc_.forward(g, x_hat)), T(-1)));
      }
      T inv_b = T(1) / T(batch.size());
      int l1 = g.lincomb(l1s, std::vector<T>(l1s.size(), inv_b));
      int perc = g.lincomb(percs, std::vector<T>(percs.size(), inv_b));
      out.l1 = static_cast<double>(g.scalar(l1));
      out.perceptual = static_cast<double>(g.scalar(perc));
      std::vector<int> terms = {l1, perc};
      std::vector<T> coefs = {T(1), static_cast<T>(weights_.lambda_p)};
      if (adv_on) {
        int adv = g.lincomb(advs, std::vector<T>(advs.size(), inv_b));
        out.adversarial_g = static_cast<double>(g.scalar(adv));
        terms.push_back(adv);
        coefs.push_back(static_cast<T>(weights_.lambda_g));
      }
      int total = g.lincomb(terms, coefs);
      out.total = out.l1 + weights_.lambda_p * out.perceptual +
                  weights_.lambda_g * out.adversarial_g;
      if (!std::isfinite(out.total))
        throw std::runtime_error("train_step: non-finite generator loss");
      auto gps = gen_.params();
      zero_grads(gps);
      g.backward(total);
      opt_g_.step(gps, lr);
    }
    return out;
  }

 private:
  VaeT<T>& vae_;
  ArrDecoderT<T>& gen_;
  PatchGanT<T>& disc_;
  PerceptualNetT<T>& percep_;
  LossWeights weights_;
  TrainSchedule sched_;
  AdamWT<T> opt_g_;
  AdamWT<T> opt_d_;
};

using Trainer = TrainerT<float>;

}  // namespace infgen
