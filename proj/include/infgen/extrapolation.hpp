#pragma once

#include <cmath>
#include <functional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "infgen/arr_decoder.hpp"
#include "infgen/latent_codec.hpp"

namespace infgen {

// Ordered per-step scale factors from a base resolution, with the exact
// pixel resolutions each step lands on. Every resolution except the last is
// a multiple of 8 so the image can be re-encoded.
struct ExtrapolationPlan {
  int base_h = 0;
  int base_w = 0;
  double cap = 2.0;
  std::vector<std::pair<double, double>> steps;        // (s_h, s_w)
  std::vector<std::pair<int, int>> resolutions;        // landing dims per step

  bool empty() const { return steps.empty(); }

  std::string describe() const {
    std::ostringstream os;
    if (steps.empty()) {
      os << "plan: identity (stay at " << base_h << "x" << base_w << ")\n";
      return os.str();
    }
    int h = base_h, w = base_w;
    for (size_t i = 0; i < steps.size(); ++i) {
      os << "step " << (i + 1) << ": " << h << "x" << w << " -> " << resolutions[i].first << "x"
         << resolutions[i].second << "  (s_h=" << steps[i].first << ", s_w=" << steps[i].second
         << ")\n";
      h = resolutions[i].first;
      w = resolutions[i].second;
    }
    return os.str();
  }
};

struct ScaleLimits {
  int latent_h = 8, latent_w = 8;
  int training_min = 64, training_max = 256;
  int reliable_min = 64, reliable_max = 512;
  double max_total_scale = 16.0;  // cumulative s_h * s_w area factor
};

namespace detail {

inline int floor8(double v) { return 8 * static_cast<int>(std::floor(v / 8.0)); }

}  // namespace detail

// Greedy per-axis factorization: each step advances every axis by
// min(cap, remaining ratio); all landings except the last are snapped down
// to multiples of 8 so intermediates stay encodable.
inline ExtrapolationPlan plan_schedule(std::pair<int, int> base, std::pair<int, int> target,
                                       double cap) {
  auto [bh, bw] = base;
  auto [th, tw] = target;
  if (bh < 8 || bw < 8) throw std::invalid_argument("plan_schedule: base below 8 px");
  if (th < bh || tw < bw) throw std::invalid_argument("plan_schedule: target below base");
  if (cap <= 1.0) throw std::invalid_argument("plan_schedule: cap must exceed 1");

  ExtrapolationPlan plan;
  plan.base_h = bh;
  plan.base_w = bw;
  plan.cap = cap;
  if (th == bh && tw == bw) return plan;

  int cur_h = bh, cur_w = bw;
  while (cur_h != th || cur_w != tw) {
    double want_h = std::min(static_cast<double>(th), cur_h * cap);
    double want_w = std::min(static_cast<double>(tw), cur_w * cap);
    bool final_step = want_h >= static_cast<double>(th) && want_w >= static_cast<double>(tw);
    int next_h, next_w;
    if (final_step) {
      next_h = th;
      next_w = tw;
    } else {
      auto land = [&](int cur, int tgt, double want) {
        if (cur == tgt) return cur;
        int n = detail::floor8(want);
        // an axis whose whole remainder fits within the cap may wait for
        // the final step; otherwise it must make 8-px progress now
        if (n <= cur) {
          if (want >= static_cast<double>(tgt)) return cur;
          throw std::invalid_argument(
              "plan_schedule: cap too small to advance in 8-px latent steps");
        }
        return n;
      };
      next_h = land(cur_h, th, want_h);
      next_w = land(cur_w, tw, want_w);
      if (next_h == cur_h && next_w == cur_w)
        throw std::invalid_argument("plan_schedule: no progress possible under cap");
    }
    plan.steps.emplace_back(static_cast<double>(next_h) / cur_h,
                            static_cast<double>(next_w) / cur_w);
    plan.resolutions.emplace_back(next_h, next_w);
    cur_h = next_h;
    cur_w = next_w;
  }
  return plan;
}

// Emits a warning per step whose cumulative state leaves the recommended
// envelope. Never blocks execution.
inline std::vector<std::string> validate_against_limits(const ExtrapolationPlan& plan,
                                                        const ScaleLimits& limits) {
  std::vector<std::string> warnings;
  double area_scale = 1.0;
  for (size_t i = 0; i < plan.steps.size(); ++i) {
    area_scale *= plan.steps[i].first * plan.steps[i].second;
    auto [h, w] = plan.resolutions[i];
    int longest = std::max(h, w);
    if (longest < limits.reliable_min || longest > limits.reliable_max) {
      std::ostringstream os;
      os << "step " << (i + 1) << ": resolution " << h << "x" << w
         << " leaves the reliable range [" << limits.reliable_min << ", " << limits.reliable_max
         << "]";
      warnings.push_back(os.str());
    }
    if (area_scale > limits.max_total_scale + 1e-9) {
      std::ostringstream os;
      os << "step " << (i + 1) << ": cumulative scale " << area_scale
         << "x exceeds the recommended maximum " << limits.max_total_scale << "x";
      warnings.push_back(os.str());
    }
  }
  return warnings;
}

// Iterative generation: decode, re-encode the mean latent, decode larger.
// The first step consumes z0 directly; re-encoding never samples so a plan
// replays identically.
template <typename T>
TensorT<T> run_extrapolation(const TensorT<T>& z0, const ExtrapolationPlan& plan,
                             const VaeT<T>& vae, const ArrDecoderT<T>& gen,
                             const std::function<void(int, const TensorT<T>&)>& on_step = {}) {
  if (plan.empty()) return gen.decode(z0, {plan.base_h, plan.base_w});
  TensorT<T> img;
  for (size_t n = 0; n < plan.steps.size(); ++n) {
    auto [h, w] = plan.resolutions[n];
    TensorT<T> z;
    if (n == 0) {
      z = z0;
    } else {
      if (img.dim(1) % 8 != 0 || img.dim(2) % 8 != 0)
        throw std::logic_error("run_extrapolation: intermediate not divisible by 8");
      z = vae.encode(img).mu;
    }
    img = gen.decode(z, {h, w});
    if (!all_finite(img)) throw std::runtime_error("run_extrapolation: non-finite pixels");
    if (on_step) on_step(static_cast<int>(n + 1), img);
  }
  return img;
}

}  // namespace infgen
