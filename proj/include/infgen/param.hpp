#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "infgen/tensor.hpp"

namespace infgen {

// A learnable (or frozen) tensor. Gradients accumulate across backward passes
// until zero_grad() is called.
template <typename T>
struct ParamT {
  std::string name;
  TensorT<T> value;
  TensorT<T> grad;
  bool frozen = false;

  ParamT() = default;
  ParamT(std::string n, TensorT<T> v) : name(std::move(n)), value(std::move(v)) {
    grad = TensorT<T>::zeros(value.shape);
  }

  void zero_grad() { grad.fill(T(0)); }
};

template <typename T>
using ParamRefs = std::vector<ParamT<T>*>;

template <typename T>
inline void zero_grads(const ParamRefs<T>& ps) {
  for (auto* p : ps) p->zero_grad();
}

// Cosine decay from lr_start to lr_end over total_steps.
inline double cosine_lr(double lr_start, double lr_end, int64_t step, int64_t total_steps) {
  if (total_steps <= 1) return lr_end;
  double t = static_cast<double>(step) / static_cast<double>(total_steps - 1);
  if (t > 1.0) t = 1.0;
  return lr_end + 0.5 * (lr_start - lr_end) * (1.0 + std::cos(3.14159265358979323846 * t));
}

// Adam with decoupled weight decay. Moment buffers are keyed by parameter
// name so they survive checkpoint round trips.
template <typename T>
class AdamWT {
 public:
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;

  void step(const ParamRefs<T>& params, double lr) {
    ++t_;
    double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t_));
    double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t_));
    for (auto* p : params) {
      if (p->frozen) continue;
      auto& st = state_[p->name];
      if (st.m.v.empty()) {
        st.m = TensorT<T>::zeros(p->value.shape);
        st.v = TensorT<T>::zeros(p->value.shape);
      }
      for (size_t i = 0; i < p->value.v.size(); ++i) {
        double g = static_cast<double>(p->grad.v[i]);
        double m = beta1 * static_cast<double>(st.m.v[i]) + (1.0 - beta1) * g;
        double v = beta2 * static_cast<double>(st.v.v[i]) + (1.0 - beta2) * g * g;
        st.m.v[i] = static_cast<T>(m);
        st.v.v[i] = static_cast<T>(v);
        double mhat = m / bc1;
        double vhat = v / bc2;
        double upd = mhat / (std::sqrt(vhat) + eps) + weight_decay * static_cast<double>(p->value.v[i]);
        p->value.v[i] = static_cast<T>(static_cast<double>(p->value.v[i]) - lr * upd);
      }
    }
  }

  int64_t steps_taken() const { return t_; }
  void set_steps_taken(int64_t t) { t_ = t; }

  struct Slot {
    TensorT<T> m;
    TensorT<T> v;
  };
  std::unordered_map<std::string, Slot>& state() { return state_; }
  const std::unordered_map<std::string, Slot>& state() const { return state_; }

 private:
  std::unordered_map<std::string, Slot> state_;
  int64_t t_ = 0;
};

using AdamW = AdamWT<float>;

}  // namespace infgen
