#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "infgen/arr_decoder.hpp"
#include "infgen/param.hpp"
#include "infgen/rng.hpp"
#include "infgen/tensor.hpp"

namespace testutil {

inline double rel_err(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-8});
}

// Central finite difference of a scalar objective with respect to one
// parameter slot. The objective must rebuild its graph on every call.
inline double central_diff(double* slot, double h, const std::function<double()>& objective) {
  double saved = *slot;
  *slot = saved + h;
  double f_plus = objective();
  *slot = saved - h;
  double f_minus = objective();
  *slot = saved;
  return (f_plus - f_minus) / (2.0 * h);
}

struct SampledSlot {
  infgen::ParamT<double>* param;
  size_t index;
};

inline std::vector<SampledSlot> sample_slots(const infgen::ParamRefs<double>& params, int count,
                                             infgen::Rng& rng) {
  std::vector<SampledSlot> slots;
  for (int i = 0; i < count; ++i) {
    auto* p = params[static_cast<size_t>(rng.uniform_int(0, static_cast<int64_t>(params.size()) - 1))];
    size_t idx = static_cast<size_t>(rng.uniform_int(0, static_cast<int64_t>(p->value.v.size()) - 1));
    slots.push_back({p, idx});
  }
  return slots;
}

// Checks analytic gradients against central differences on sampled slots.
// `loss` must run a fresh forward pass; `grads` must run forward + backward
// and leave gradients in the params. Returns the worst relative error.
inline double check_gradients(const infgen::ParamRefs<double>& params,
                              const std::vector<SampledSlot>& slots,
                              const std::function<double()>& loss,
                              const std::function<void()>& grads, double fd_h = 1e-5) {
  for (auto* p : params) p->zero_grad();
  grads();
  double worst = 0.0;
  for (const auto& s : slots) {
    double analytic = s.param->grad.v[s.index];
    double numeric = central_diff(&s.param->value.v[s.index], fd_h, loss);
    worst = std::max(worst, rel_err(analytic, numeric));
  }
  return worst;
}

// ---- scalar double-loop reference for the cross-attention block ----
// Independent of the graph implementation: plain vectors, explicit loops.

using Rows = std::vector<std::vector<double>>;

inline Rows to_rows(const infgen::TensorT<double>& t) {
  Rows out(static_cast<size_t>(t.dim(0)), std::vector<double>(static_cast<size_t>(t.dim(1))));
  for (int i = 0; i < t.dim(0); ++i)
    for (int j = 0; j < t.dim(1); ++j) out[static_cast<size_t>(i)][static_cast<size_t>(j)] = t.at(i, j);
  return out;
}

inline std::vector<double> vec_of(const infgen::TensorT<double>& t) {
  return std::vector<double>(t.v.begin(), t.v.end());
}

inline Rows naive_layer_norm(const Rows& x, const std::vector<double>& g,
                             const std::vector<double>& b, double eps) {
  Rows out = x;
  for (auto& row : out) {
    double mean = 0.0;
    for (double v : row) mean += v;
    mean /= static_cast<double>(row.size());
    double var = 0.0;
    for (double v : row) var += (v - mean) * (v - mean);
    var /= static_cast<double>(row.size());
    double inv = 1.0 / std::sqrt(var + eps);
    for (size_t j = 0; j < row.size(); ++j) row[j] = (row[j] - mean) * inv * g[j] + b[j];
  }
  return out;
}

inline Rows naive_linear(const Rows& x, const Rows& w, const std::vector<double>& b) {
  size_t n = x.size(), k = w.size(), m = w[0].size();
  Rows out(n, std::vector<double>(m, 0.0));
  for (size_t i = 0; i < n; ++i)
    for (size_t j = 0; j < m; ++j) {
      double s = b[j];
      for (size_t c = 0; c < k; ++c) s += x[i][c] * w[c][j];
      out[i][j] = s;
    }
  return out;
}

inline double naive_gelu(double v) { return 0.5 * v * (1.0 + std::erf(v / std::sqrt(2.0))); }

// Multi-head attention with per-token, per-head scalar loops.
inline Rows naive_attention(const Rows& q_in, const Rows& k_in, const Rows& v_in,
                            infgen::AttnParamsT<double>& p, int heads) {
  Rows q = naive_linear(q_in, to_rows(p.wq.value), vec_of(p.bq.value));
  Rows k = naive_linear(k_in, to_rows(p.wk.value), vec_of(p.bk.value));
  Rows v = naive_linear(v_in, to_rows(p.wv.value), vec_of(p.bv.value));
  size_t nq = q.size(), nk = k.size(), d = q[0].size();
  size_t dh = d / static_cast<size_t>(heads);
  double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  Rows mixed(nq, std::vector<double>(d, 0.0));
  for (int h = 0; h < heads; ++h) {
    size_t off = static_cast<size_t>(h) * dh;
    for (size_t i = 0; i < nq; ++i) {
      std::vector<double> logits(nk);
      double mx = -1e300;
      for (size_t j = 0; j < nk; ++j) {
        double s = 0.0;
        for (size_t c = 0; c < dh; ++c) s += q[i][off + c] * k[j][off + c];
        logits[j] = s * scale;
        mx = std::max(mx, logits[j]);
      }
      double z = 0.0;
      for (size_t j = 0; j < nk; ++j) {
        logits[j] = std::exp(logits[j] - mx);
        z += logits[j];
      }
      for (size_t j = 0; j < nk; ++j) {
        double a = logits[j] / z;
        for (size_t c = 0; c < dh; ++c) mixed[i][off + c] += a * v[j][off + c];
      }
    }
  }
  return naive_linear(mixed, to_rows(p.wo.value), vec_of(p.bo.value));
}

// Full block: pre-norm, positional codes into Q/K, residual, MLP, residual.
inline Rows naive_block(const Rows& x, const Rows& pe_mask, const Rows& latent,
                        const Rows& pe_latent, infgen::DecoderBlockT<double>& blk) {
  double eps = 1e-5;
  Rows xn = naive_layer_norm(x, vec_of(blk.ln1_g.value), vec_of(blk.ln1_b.value), eps);
  Rows ln = naive_layer_norm(latent, vec_of(blk.lnl_g.value), vec_of(blk.lnl_b.value), eps);
  Rows q = xn, kk = ln;
  for (size_t i = 0; i < q.size(); ++i)
    for (size_t j = 0; j < q[i].size(); ++j) q[i][j] += pe_mask[i][j];
  for (size_t i = 0; i < kk.size(); ++i)
    for (size_t j = 0; j < kk[i].size(); ++j) kk[i][j] += pe_latent[i][j];
  Rows attn = naive_attention(q, kk, ln, blk.attn, blk.heads);
  Rows res = x;
  for (size_t i = 0; i < res.size(); ++i)
    for (size_t j = 0; j < res[i].size(); ++j) res[i][j] += attn[i][j];
  Rows h = naive_layer_norm(res, vec_of(blk.ln2_g.value), vec_of(blk.ln2_b.value), eps);
  h = naive_linear(h, to_rows(blk.mlp_w1.value), vec_of(blk.mlp_b1.value));
  for (auto& row : h)
    for (auto& v : row) v = naive_gelu(v);
  h = naive_linear(h, to_rows(blk.mlp_w2.value), vec_of(blk.mlp_b2.value));
  Rows out = res;
  for (size_t i = 0; i < out.size(); ++i)
    for (size_t j = 0; j < out[i].size(); ++j) out[i][j] += h[i][j];
  return out;
}

inline infgen::TensorT<double> random_tensor(std::vector<int> shape, infgen::Rng& rng,
                                             double scale = 1.0) {
  infgen::TensorT<double> t(std::move(shape));
  for (auto& v : t.v) v = rng.normal(0.0, scale);
  return t;
}

inline infgen::Tensor random_tensor_f(std::vector<int> shape, infgen::Rng& rng,
                                      double scale = 1.0) {
  infgen::Tensor t(std::move(shape));
  for (auto& v : t.v) v = static_cast<float>(rng.normal(0.0, scale));
  return t;
}

}  // namespace testutil
