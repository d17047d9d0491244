#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "infgen/graph.hpp"
#include "infgen/image.hpp"
#include "infgen/inpe.hpp"
#include "infgen/nn.hpp"
#include "infgen/param.hpp"

namespace infgen {

struct TargetResolution {
  int h = 0;
  int w = 0;
};

inline void check_target(const TargetResolution& t, int max_res) {
  if (t.h < 1 || t.w < 1) throw std::invalid_argument("target resolution must be positive");
  if (t.h > max_res || t.w > max_res)
    throw std::invalid_argument("target resolution exceeds max_res=" + std::to_string(max_res));
}

inline int ceil_div8(int v) { return (v + 7) / 8; }

// One token per 8x8 output cell.
inline std::pair<int, int> mask_grid_dims(const TargetResolution& t) {
  if (t.h < 1 || t.w < 1) throw std::invalid_argument("mask grid: non-positive target");
  return {ceil_div8(t.h), ceil_div8(t.w)};
}

template <typename T>
struct TokenGridT {
  TensorT<T> tokens;  // {grid_h * grid_w, d_model}, scanline order
  int grid_h = 0;
  int grid_w = 0;
};
using TokenGrid = TokenGridT<float>;

template <typename T>
struct AttnParamsT {
  ParamT<T> wq, bq, wk, bk, wv, bv, wo, bo;

  AttnParamsT() = default;
  AttnParamsT(const std::string& prefix, int d, Rng& rng) {
    auto mk = [&](ParamT<T>& w, ParamT<T>& b, const std::string& n) {
      w = ParamT<T>(prefix + "." + n + ".w", TensorT<T>({d, d}));
      b = ParamT<T>(prefix + "." + n + ".b", TensorT<T>({d}));
      for (auto& v : w.value.v) v = static_cast<T>(rng.normal(0.0, 0.02));
    };
    mk(wq, bq, "q");
    mk(wk, bk, "k");
    mk(wv, bv, "v");
    mk(wo, bo, "o");
  }

  void collect(ParamRefs<T>& out) {
    for (auto* p : {&wq, &bq, &wk, &bk, &wv, &bv, &wo, &bo}) out.push_back(p);
  }
};

// Scaled dot-product attention over projected tokens: queries attend to the
// key/value set, heads on column slices, concatenated then output-projected.
template <typename T>
int multihead_cross_attention(GraphT<T>& g, int q_tokens, int kv_key_tokens, int kv_val_tokens,
                              AttnParamsT<T>& p, int heads) {
  int d = g.val(q_tokens).dim(1);
  if (d % heads != 0) throw std::invalid_argument("attention: heads must divide d_model");
  int dh = d / heads;
  T scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh)));
  int q = g.linear(q_tokens, g.param(p.wq), g.param(p.bq));
  int k = g.linear(kv_key_tokens, g.param(p.wk), g.param(p.bk));
  int v = g.linear(kv_val_tokens, g.param(p.wv), g.param(p.bv));
  std::vector<int> head_outs;
  head_outs.reserve(static_cast<size_t>(heads));
  for (int h = 0; h < heads; ++h) {
    int qh = g.slice_cols(q, h * dh, (h + 1) * dh);
    int kh = g.slice_cols(k, h * dh, (h + 1) * dh);
    int vh = g.slice_cols(v, h * dh, (h + 1) * dh);
    int attn = g.softmax_rows(g.scale(g.matmul_nt(qh, kh), scale));
    head_outs.push_back(g.matmul(attn, vh));
  }
  int cat = heads == 1 ? head_outs[0] : g.concat_cols(head_outs);
  return g.linear(cat, g.param(p.wo), g.param(p.bo));
}

// Pre-norm block: positional codes are added to the normalized mask and
// latent tokens before the Q/K projections; values carry no positional term.
template <typename T>
struct DecoderBlockT {
  ParamT<T> ln1_g, ln1_b, lnl_g, lnl_b, ln2_g, ln2_b;
  AttnParamsT<T> attn;
  ParamT<T> mlp_w1, mlp_b1, mlp_w2, mlp_b2;
  int heads = 1;
  static constexpr T kLnEps = T(1e-5);

  DecoderBlockT() = default;
  DecoderBlockT(const std::string& prefix, int d, int heads_, Rng& rng) : heads(heads_) {
    auto ln = [&](ParamT<T>& gm, ParamT<T>& bt, const std::string& n) {
      gm = ParamT<T>(prefix + "." + n + ".g", TensorT<T>::full({d}, T(1)));
      bt = ParamT<T>(prefix + "." + n + ".b", TensorT<T>({d}));
    };
    ln(ln1_g, ln1_b, "ln1");
    ln(lnl_g, lnl_b, "lnl");
    ln(ln2_g, ln2_b, "ln2");
    attn = AttnParamsT<T>(prefix + ".attn", d, rng);
    int hidden = 4 * d;
    mlp_w1 = ParamT<T>(prefix + ".mlp.fc1.w", TensorT<T>({d, hidden}));
    mlp_b1 = ParamT<T>(prefix + ".mlp.fc1.b", TensorT<T>({hidden}));
    mlp_w2 = ParamT<T>(prefix + ".mlp.fc2.w", TensorT<T>({hidden, d}));
    mlp_b2 = ParamT<T>(prefix + ".mlp.fc2.b", TensorT<T>({d}));
    for (auto& v : mlp_w1.value.v) v = static_cast<T>(rng.normal(0.0, 0.02));
    for (auto& v : mlp_w2.value.v) v = static_cast<T>(rng.normal(0.0, 0.02));
  }

  int forward(GraphT<T>& g, int x, int pe_mask, int latent, int pe_latent) {
    int xn = g.layer_norm_rows(x, g.param(ln1_g), g.param(ln1_b), kLnEps);
    int latn = g.layer_norm_rows(latent, g.param(lnl_g), g.param(lnl_b), kLnEps);
    int out = multihead_cross_attention(g, g.add(xn, pe_mask), g.add(latn, pe_latent), latn,
                                        attn, heads);
    x = g.add(x, out);
    int h = g.layer_norm_rows(x, g.param(ln2_g), g.param(ln2_b), kLnEps);
    h = g.linear(h, g.param(mlp_w1), g.param(mlp_b1));
    h = g.gelu(h);
    h = g.linear(h, g.param(mlp_w2), g.param(mlp_b2));
    return g.add(x, h);
  }

  void collect(ParamRefs<T>& out) {
    for (auto* p : {&ln1_g, &ln1_b, &lnl_g, &lnl_b, &ln2_g, &ln2_b}) out.push_back(p);
    attn.collect(out);
    for (auto* p : {&mlp_w1, &mlp_b1, &mlp_w2, &mlp_b2}) out.push_back(p);
  }
};

// Conv head: three nearest-neighbor 2x stages take the token map to
// 8*ceil(h/8) x 8*ceil(w/8) pixels; a center crop removes the ceiling
// overshoot and tanh bounds the output to [-1, 1].
template <typename T>
struct UpsampleHeadT {
  Conv2dT<T> proj, up0, up1, up2, to_rgb;

  UpsampleHeadT() = default;
  UpsampleHeadT(int d_model, Rng& rng) {
    proj = Conv2dT<T>("head.proj", d_model, 96, 3, 1, 1, rng);
    up0 = Conv2dT<T>("head.up0", 96, 64, 3, 1, 1, rng);
    up1 = Conv2dT<T>("head.up1", 64, 48, 3, 1, 1, rng);
    up2 = Conv2dT<T>("head.up2", 48, 32, 3, 1, 1, rng);
    to_rgb = Conv2dT<T>("head.to_rgb", 32, 3, 3, 1, 1, rng);
  }

  int forward(GraphT<T>& g, int token_map, const TargetResolution& t) {
    int x = g.gelu(proj.forward(g, token_map));
    x = g.gelu(up0.forward(g, g.upsample_nearest2x(x)));
    x = g.gelu(up1.forward(g, g.upsample_nearest2x(x)));
    x = g.gelu(up2.forward(g, g.upsample_nearest2x(x)));
    x = g.tanh_(to_rgb.forward(g, x));
    return g.crop_center(x, t.h, t.w);
  }

  void collect(ParamRefs<T>& out) {
    proj.collect(out);
    up0.collect(out);
    up1.collect(out);
    up2.collect(out);
    to_rgb.collect(out);
  }
};

template <typename T>
struct ArrDecoderT {
  int d_model = 0;
  int heads = 1;
  int latent_channels = 4;
  int max_res = 256;
  ParamT<T> in_w, in_b;    // latent channel -> token projection
  ParamT<T> mask_seed;     // single learned token replicated over the grid
  InpeT<T> inpe;
  std::vector<DecoderBlockT<T>> blocks;
  UpsampleHeadT<T> head;

  ArrDecoderT() = default;
  ArrDecoderT(int d_model_, int n_blocks, int heads_, int latent_channels_, int fourier_m,
              T fourier_sigma, int max_res_, Rng& init_rng, Rng& fourier_rng) {
    d_model = d_model_;
    heads = heads_;
    latent_channels = latent_channels_;
    max_res = max_res_;
    if (n_blocks < 1) throw std::invalid_argument("decoder: need at least one block");
    if (d_model % heads != 0) throw std::invalid_argument("decoder: heads must divide d_model");
    in_w = ParamT<T>("dec.in.w", TensorT<T>({latent_channels, d_model}));
    in_b = ParamT<T>("dec.in.b", TensorT<T>({d_model}));
    mask_seed = ParamT<T>("dec.mask_seed", TensorT<T>({d_model}));
    for (auto& v : in_w.value.v) v = static_cast<T>(init_rng.normal(0.0, 0.02));
    for (auto& v : mask_seed.value.v) v = static_cast<T>(init_rng.normal(0.0, 0.02));
    inpe = InpeT<T>(d_model, fourier_m, fourier_sigma, init_rng, fourier_rng);
    blocks.reserve(static_cast<size_t>(n_blocks));
    for (int i = 0; i < n_blocks; ++i)
      blocks.emplace_back("dec.block" + std::to_string(i), d_model, heads, init_rng);
    head = UpsampleHeadT<T>(d_model, init_rng);
  }

  TokenGridT<T> make_mask_token_grid(const TargetResolution& t) const {
    auto [gh, gw] = mask_grid_dims(t);
    TokenGridT<T> grid;
    grid.grid_h = gh;
    grid.grid_w = gw;
    grid.tokens = TensorT<T>({gh * gw, d_model});
    for (int r = 0; r < gh * gw; ++r)
      for (int c = 0; c < d_model; ++c) grid.tokens.at(r, c) = mask_seed.value.v[static_cast<size_t>(c)];
    return grid;
  }

  // latent map (C, h_l, w_l) -> token rows (h_l*w_l, C), scanline order
  static TensorT<T> latent_to_rows(const TensorT<T>& z) {
    int c = z.dim(0), h = z.dim(1), w = z.dim(2);
    TensorT<T> rows({h * w, c});
    for (int ch = 0; ch < c; ++ch)
      for (int p = 0; p < h * w; ++p) rows.at(p, ch) = z.v[static_cast<size_t>(ch) * h * w + p];
    return rows;
  }

  int decode_node(GraphT<T>& g, const TensorT<T>& z, const TargetResolution& t) {
    if (z.rank() != 3 || z.dim(0) != latent_channels)
      throw std::invalid_argument("decode: latent shape mismatch, got " + z.shape_str());
    check_target(t, max_res);
    int hl = z.dim(1), wl = z.dim(2);
    int latent = g.linear(g.constant(latent_to_rows(z)), g.param(in_w), g.param(in_b));
    int pe_latent = inpe.embed_grid_node(g, hl, wl);

    auto [gh, gw] = mask_grid_dims(t);
    int x = g.broadcast_row(g.param(mask_seed), gh * gw);
    int pe_mask = inpe.embed_grid_node(g, gh, gw);

    for (auto& blk : blocks) x = blk.forward(g, x, pe_mask, latent, pe_latent);
    return head.forward(g, g.tokens_to_chw(x, gh, gw), t);
  }

  // Single forward pass; no sampling, deterministic for fixed parameters.
  TensorT<T> decode(const TensorT<T>& z, const TargetResolution& t) const {
    auto* self = const_cast<ArrDecoderT*>(this);
    GraphT<T> g;
    int out = self->decode_node(g, z, t);
    return g.val(out);
  }

  // Everything the generator optimizer updates (the Fourier matrix stays
  // a frozen buffer and is persisted separately).
  ParamRefs<T> params() {
    ParamRefs<T> ps;
    ps.push_back(&in_w);
    ps.push_back(&in_b);
    ps.push_back(&mask_seed);
    inpe.collect(ps);
    for (auto& b : blocks) b.collect(ps);
    head.collect(ps);
    return ps;
  }
};

using ArrDecoder = ArrDecoderT<float>;

}  // namespace infgen
