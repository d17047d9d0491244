#pragma once

#include <Eigen/Core>

#include <cmath>
#include <functional>
#include <stdexcept>
#include <utility>
#include <vector>

#include "infgen/param.hpp"
#include "infgen/tensor.hpp"

namespace infgen {

// Reverse-mode autodiff over a Wengert tape. Nodes are appended in execution
// order, so reverse iteration is a valid topological order for the backward
// sweep. Values are dense TensorT buffers; matmul and conv inner loops map
// onto Eigen for speed. Gradients are allocated lazily by backward(), so a
// forward-only graph costs no extra memory.
template <typename T>
class GraphT {
 public:
  using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using MapM = Eigen::Map<Mat>;
  using CMapM = Eigen::Map<const Mat>;

  int constant(TensorT<T> value) { return push(std::move(value)); }

  int param(ParamT<T>& p) {
    int id = push(p.value);
    param_nodes_.emplace_back(&p, id);
    return id;
  }

  const TensorT<T>& val(int id) const { return nodes_[static_cast<size_t>(id)].val; }
  const TensorT<T>& grad_of(int id) const { return nodes_[static_cast<size_t>(id)].grad; }

  T scalar(int id) const {
    const auto& t = val(id);
    if (t.numel() != 1) throw std::logic_error("scalar() on non-scalar node");
    return t.v[0];
  }

  // multiply-accumulate count of the matmuls and convolutions executed so far
  int64_t flops() const { return flops_; }

  size_t size() const { return nodes_.size(); }

  // ---- elementwise ----

  int add(int a, int b) {
    check_same(a, b, "add");
    TensorT<T> out = val(a);
    const auto& bv = val(b).v;
    for (size_t i = 0; i < out.v.size(); ++i) out.v[i] += bv[i];
    int id = push(std::move(out));
    nodes_[id].back = [this, id, a, b] {
      axpy(a, grad(id).v, T(1));
      axpy(b, grad(id).v, T(1));
    };
    return id;
  }

  int sub(int a, int b) {
    check_same(a, b, "sub");
    TensorT<T> out = val(a);
    const auto& bv = val(b).v;
    for (size_t i = 0; i < out.v.size(); ++i) out.v[i] -= bv[i];
    int id = push(std::move(out));
    nodes_[id].back = [this, id, a, b] {
      axpy(a, grad(id).v, T(1));
      axpy(b, grad(id).v, T(-1));
    };
    return id;
  }

  int mul(int a, int b) {
    check_same(a, b, "mul");
    TensorT<T> out = val(a);
    const auto& bv = val(b).v;
    for (size_t i = 0; i < out.v.size(); ++i) out.v[i] *= bv[i];
    int id = push(std::move(out));
    nodes_[id].back = [this, id, a, b] {
      auto& ga = grad(a).v;
      auto& gb = grad(b).v;
      const auto& av = val(a).v;
      const auto& bv2 = val(b).v;
      const auto& gy = grad(id).v;
      for (size_t i = 0; i < gy.size(); ++i) {
        ga[i] += gy[i] * bv2[i];
        gb[i] += gy[i] * av[i];
      }
    };
    return id;
  }

  // k * a + c, elementwise
  int affine(int a, T k, T c) {
    TensorT<T> out = val(a);
    for (auto& x : out.v) x = k * x + c;
    int id = push(std::move(out));
    nodes_[id].back = [this, id, a, k] { axpy(a, grad(id).v, k); };
    return id;
  }

  int scale(int a, T k) { return affine(a, k, T(0)); }

  int exp_(int a) {
    TensorT<T> out = val(a);
    for (auto& x : out.v) x = std::exp(x);
    int id = push(std::move(out));
    nodes_[id].back = [this, id, a] {
      auto& ga = grad(a).v;
      const auto& yv = val(id).v;
      const auto& gy = grad(id).v;
      for (size_t i = 0; i < gy.size(); ++i) ga[i] += gy[i] * yv[i];
    };
    return id;
  }

  int tanh_(int a) {
    TensorT<T> out = val(a);
    for (auto& x : out.v) x = std::tanh(x);
    int id = push(std::move(out));
    nodes_[id].back = [this, id, a] {
      auto& ga = grad(a).v;
      const auto& yv = val(id).v;
      const auto& gy = grad(id).v;
      for (size_t i = 0; i < gy.size(); ++i) ga[i] += gy[i] * (T(1) - yv[i] * yv[i]);
    };
    return id;
  }

  int relu(int a) {
    TensorT<T> out = val(a);
    for (auto& x : out.v) x = x > T(0) ? x : T(0);
    int id = push(std::move(out));
    nodes_[id].back = [this, id, a] {
      auto& ga = grad(a).v;
      const auto& av = val(a).v;
      const auto& gy = grad(id).v;
      for (size_t i = 0; i < gy.size(); ++i)
        if (av[i] > T(0)) ga[i] += gy[i];
    };
    return id;
  }

  int leaky_relu(int a, T slope) {
    TensorT<T> out = val(a);
    for (auto& x : out.v) x = x > T(0) ? x : slope * x;
    int id = push(std::move(out));
    nodes_[id].back = [this, id, a, slope] {
      auto& ga = grad(a).v;
      const auto& av = val(a).v;
      const auto& gy = grad(id).v;
      for (size_t i = 0; i < gy.size(); ++i) ga[i] += gy[i] * (av[i] > T(0) ? T(1) : slope);
    };
    return id;
  }

  int gelu(int a) {
    static const T inv_sqrt2 = T(0.70710678118654752440);
    static const T inv_sqrt2pi = T(0.39894228040143267794);
    TensorT<T> out = val(a);
    for (auto& x : out.v) x = T(0.5) * x * (T(1) + std::erf(x * inv_sqrt2));
    int id = push(std::move(out));
    nodes_[id].back = [this, id, a] {
      auto& ga = grad(a).v;
      const auto& av = val(a).v;
      const auto& gy = grad(id).v;
      for (size_t i = 0; i < gy.size(); ++i) {
        T x = av[i];
        T cdf = T(0.5) * (T(1) + std::erf(x * inv_sqrt2));
        T pdf = inv_sqrt2pi * std::exp(T(-0.5) * x * x);
        ga[i] += gy[i] * (cdf + x * pdf);
      }
    };
    return id;
  }

  // gradient passes only strictly inside the interval
  int clamp(int a, T lo, T hi) {
    TensorT<T> out = val(a);
    for (auto& x : out.v) x = x < lo ? lo : (x > hi ? hi : x);
    int id = push(std::move(out));
    nodes_[id].back = [this, id, a, lo, hi] {
      auto& ga = grad(a).v;
      const auto& av = val(a).v;
      const auto& gy = grad(id).v;
      for (size_t i = 0; i < gy.size(); ++i)
        if (av[i] > lo && av[i] < hi) ga[i] += gy[i];
    };
    return id;
  }

  // ---- shape ----

  int reshape(int a, std::vector<int> shape) {
    TensorT<T> out;
    out.shape = std::move(shape);
    out.v = val(a).v;
    if (TensorT<T>::checked_numel(out.shape) != static_cast<int64_t>(out.v.size()))
      throw std::invalid_argument("reshape: numel mismatch");
    int id = push(std::move(out));
    nodes_[id].back = [this, id, a] { axpy(a, grad(id).v, T(1)); };
    return id;
  }

  // tokens [n, d] (row-major scanline order, n = gh*gw) -> feature map [d, gh, gw]
  int tokens_to_chw(int a, int gh, int gw) {
    const auto& x = val(a);
    if (x.rank() != 2 || x.dim(0) != gh * gw)
      throw std::invalid_argument("tokens_to_chw: bad token count");
    int d = x.dim(1);
    TensorT<T> out({d, gh, gw});
    for (int r = 0; r < gh * gw; ++r)
      for (int c = 0; c < d; ++c) out.v[static_cast<size_t>(c) * gh * gw + r] = x.at(r, c);
    int id = push(std::move(out));
    nodes_[id].back = [this, id, a, gh, gw, d] {
      auto& ga = grad(a);
      const auto& gy = grad(id);
      for (int r = 0; r < gh * gw; ++r)
        for (int c = 0; c < d; ++c) ga.at(r, c) += gy.v[static_cast<size_t>(c) * gh * gw + r];
    };
    return id;
  }

  int slice_cols(int a, int c0, int c1) {
    const auto& x = val(a);
    if (x.rank() != 2 || c0 < 0 || c1 > x.dim(1) || c0 >= c1)
      throw std::invalid_argument("slice_cols: bad range");
    int n = x.dim(0), m = c1 - c0;
    TensorT<T> out({n, m});
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < m; ++j) out.at(i, j) = x.at(i, c0 + j);
    int id = push(std::move(out));
    nodes_[id].back = [this, id, a, c0, n, m] {
      auto& ga = grad(a);
      const auto& gy = grad(id);
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < m; ++j) ga.at(i, c0 + j) += gy.at(i, j);
    };
    return id;
  }

  int concat_cols(const std::vector<int>& ids) {
    if (ids.empty()) throw std::invalid_argument("concat_cols: empty");
    int n = val(ids[0]).dim(0), m = 0;
    for (int a : ids) {
      if (val(a).rank() != 2 || val(a).dim(0) != n)
        throw std::invalid_argument("concat_cols: row mismatch");
      m += val(a).dim(1);
    }
    TensorT<T> out({n, m});
    int off = 0;
    for (int a : ids) {
      int w = val(a).dim(1);
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < w; ++j) out.at(i, off + j) = val(a).at(i, j);
      off += w;
    }
    int id = push(std::move(out));
    std::vector<int> parts = ids;
    nodes_[id].back = [this, id, parts, n] {
      const auto& gy = grad(id);
      int off2 = 0;
      for (int a : parts) {
        auto& ga = grad(a);
        int w = ga.shape[1];
        for (int i = 0; i < n; ++i)
          for (int j = 0; j < w; ++j) ga.at(i, j) += gy.at(i, off2 + j);
        off2 += w;
      }
    };
    return id;
  }

  // channel range [c0, c1) of a (C,H,W) map
  int slice_chan(int a, int c0, int c1) {
    const auto& x = val(a);
    if (x.rank() != 3 || c0 < 0 || c1 > x.dim(0) || c0 >= c1)
      throw std::invalid_argument("slice_chan: bad range");
    int h = x.dim(1), w = x.dim(2);
    TensorT<T> out({c1 - c0, h, w});
    std::copy(x.v.begin() + static_cast<size_t>(c0) * h * w,
              x.v.begin() + static_cast<size_t>(c1) * h * w, out.v.begin());
    int id = push(std::move(out));
    nodes_[id].back = [this, id, a, c0, h, w] {
      auto& ga = grad(a);
      const auto& gy = grad(id).v;
      T* dst = ga.data() + static_cast<size_t>(c0) * h * w;
      for (size_t i = 0; i < gy.size(); ++i) dst[i] += gy[i];
    };
    return id;
  }

  // replicate a length-m vector into n rows
  int broadcast_row(int a, int n) {
    const auto& x = val(a);
    if (x.rank() != 1 && !(x.rank() == 2 && x.dim(0) == 1))
      throw std::invalid_argument("broadcast_row: expects a vector");
    int m = static_cast<int>(x.numel());
    TensorT<T> out({n, m});
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < m; ++j) out.at(i, j) = x.v[static_cast<size_t>(j)];
    int id = push(std::move(out));
    nodes_[id].back = [this, id, a, n, m] {
      auto& ga = grad(a);
      const auto& gy = grad(id);
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < m; ++j) ga.v[static_cast<size_t>(j)] += gy.at(i, j);
    };
    return id;
  }

  int add_rowvec(int a, int b) {
    const auto& x = val(a);
    const auto& r = val(b);
    if (x.rank() != 2 || static_cast<int>(r.numel()) != x.dim(1))
      throw std::invalid_argument("add_rowvec: shape mismatch");
    int n = x.dim(0), m = x.dim(1);
    TensorT<T> out = x;
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < m; ++j) out.at(i, j) += r.v[static_cast<size_t>(j)];
    int id = push(std::move(out));
    nodes_[id].back = [this, id, a, b, n, m] {
      axpy(a, grad(id).v, T(1));
      auto& gb = grad(b);
      const auto& gy = grad(id);
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < m; ++j) gb.v[static_cast<size_t>(j)] += gy.at(i, j);
    };
    return id;
  }

  // ---- linear algebra ----

  int matmul(int a, int b) {
    const auto& x = val(a);
    const auto& w = val(b);
    if (x.rank() != 2 || w.rank() != 2 || x.dim(1) != w.dim(0))
      throw std::invalid_argument("matmul: shape mismatch " + x.shape_str() + " x " + w.shape_str());
    int n = x.dim(0), k = x.dim(1), m = w.dim(1);
    flops_ += 2ll * n * k * m;
    TensorT<T> out({n, m});
    MapM(out.data(), n, m).noalias() = CMapM(x.data(), n, k) * CMapM(w.data(), k, m);
    int id = push(std::move(out));
    nodes_[id].back = [this, id, a, b, n, k, m] {
      CMapM gy(grad(id).data(), n, m);
      CMapM xv(val(a).data(), n, k);
      CMapM wv(val(b).data(), k, m);
      MapM(grad(a).data(), n, k).noalias() += gy * wv.transpose();
      MapM(grad(b).data(), k, m).noalias() += xv.transpose() * gy;
    };
    return id;
  }

  // a [n,k] times b [m,k] transposed -> [n,m]
  int matmul_nt(int a, int b) {
    const auto& x = val(a);
    const auto& w = val(b);
    if (x.rank() != 2 || w.rank() != 2 || x.dim(1) != w.dim(1))
      throw std::invalid_argument("matmul_nt: shape mismatch");
    int n = x.dim(0), k = x.dim(1), m = w.dim(0);
    flops_ += 2ll * n * k * m;
    TensorT<T> out({n, m});
    MapM(out.data(), n, m).noalias() = CMapM(x.data(), n, k) * CMapM(w.data(), m, k).transpose();
    int id = push(std::move(out));
    nodes_[id].back = [this, id, a, b, n, k, m] {
      CMapM gy(grad(id).data(), n, m);
      CMapM xv(val(a).data(), n, k);
      CMapM wv(val(b).data(), m, k);
      MapM(grad(a).data(), n, k).noalias() += gy * wv;
      MapM(grad(b).data(), m, k).noalias() += gy.transpose() * xv;
    };
    return id;
  }

  int linear(int x, int w, int b) { return add_rowvec(matmul(x, w), b); }

  int softmax_rows(int a) {
    const auto& x = val(a);
    if (x.rank() != 2) throw std::invalid_argument("softmax_rows: rank-2 expected");
    int n = x.dim(0), m = x.dim(1);
    TensorT<T> out({n, m});
    for (int i = 0; i < n; ++i) {
      T mx = x.at(i, 0);
      for (int j = 1; j < m; ++j) mx = std::max(mx, x.at(i, j));
      T sum = T(0);
      for (int j = 0; j < m; ++j) {
        T e = std::exp(x.at(i, j) - mx);
        out.at(i, j) = e;
        sum += e;
      }
      for (int j = 0; j < m; ++j) out.at(i, j) /= sum;
    }
    int id = push(std::move(out));
    nodes_[id].back = [this, id, a, n, m] {
      auto& ga = grad(a);
      const auto& yv = val(id);
      const auto& gy = grad(id);
      for (int i = 0; i < n; ++i) {
        T dot = T(0);
        for (int j = 0; j < m; ++j) dot += gy.at(i, j) * yv.at(i, j);
        for (int j = 0; j < m; ++j) ga.at(i, j) += yv.at(i, j) * (gy.at(i, j) - dot);
      }
    };
    return id;
  }

  int layer_norm_rows(int x, int gamma, int beta, T eps) {
    const auto& xv = val(x);
    if (xv.rank() != 2) throw std::invalid_argument("layer_norm_rows: rank-2 expected");
    int n = xv.dim(0), m = xv.dim(1);
    if (static_cast<int>(val(gamma).numel()) != m || static_cast<int>(val(beta).numel()) != m)
      throw std::invalid_argument("layer_norm_rows: bad affine params");
    TensorT<T> out({n, m});
    const auto& g = val(gamma).v;
    const auto& be = val(beta).v;
    for (int i = 0; i < n; ++i) {
      T mean = T(0);
      for (int j = 0; j < m; ++j) mean += xv.at(i, j);
      mean /= T(m);
      T var = T(0);
      for (int j = 0; j < m; ++j) {
        T d = xv.at(i, j) - mean;
        var += d * d;
      }
      var /= T(m);
      T inv = T(1) / std::sqrt(var + eps);
      for (int j = 0; j < m; ++j)
        out.at(i, j) = (xv.at(i, j) - mean) * inv * g[static_cast<size_t>(j)] + be[static_cast<size_t>(j)];
    }
    int id = push(std::move(out));
    nodes_[id].back = [this, id, x, gamma, beta, eps, n, m] {
      const auto& xv2 = val(x);
      const auto& g = val(gamma).v;
      auto& gx = grad(x);
      auto& gg = grad(gamma).v;
      auto& gb = grad(beta).v;
      const auto& gy = grad(id);
      for (int i = 0; i < n; ++i) {
        T mean = T(0);
        for (int j = 0; j < m; ++j) mean += xv2.at(i, j);
        mean /= T(m);
        T var = T(0);
        for (int j = 0; j < m; ++j) {
          T d = xv2.at(i, j) - mean;
          var += d * d;
        }
        var /= T(m);
        T inv = T(1) / std::sqrt(var + eps);
        T sum_dxh = T(0), sum_dxh_xh = T(0);
        for (int j = 0; j < m; ++j) {
          T xh = (xv2.at(i, j) - mean) * inv;
          T dxh = gy.at(i, j) * g[static_cast<size_t>(j)];
          gg[static_cast<size_t>(j)] += gy.at(i, j) * xh;
          gb[static_cast<size_t>(j)] += gy.at(i, j);
          sum_dxh += dxh;
          sum_dxh_xh += dxh * xh;
        }
        for (int j = 0; j < m; ++j) {
          T xh = (xv2.at(i, j) - mean) * inv;
          T dxh = gy.at(i, j) * g[static_cast<size_t>(j)];
          gx.at(i, j) += (dxh - sum_dxh / T(m) - xh * sum_dxh_xh / T(m)) * inv;
        }
      }
    };
    return id;
  }

  // ---- convolution and spatial ops ----

  static int conv_out_dim(int in, int k, int stride, int pad) {
    return (in + 2 * pad - k) / stride + 1;
  }

  // x [IC,H,W], w [OC,IC,kh,kw], b [OC]
  int conv2d(int x, int w, int b, int stride, int pad) {
    const auto& xv = val(x);
    const auto& wv = val(w);
    if (xv.rank() != 3 || wv.rank() != 4 || xv.dim(0) != wv.dim(1))
      throw std::invalid_argument("conv2d: shape mismatch");
    int ic = xv.dim(0), h = xv.dim(1), wd = xv.dim(2);
    int oc = wv.dim(0), kh = wv.dim(2), kw = wv.dim(3);
    int oh = conv_out_dim(h, kh, stride, pad), ow = conv_out_dim(wd, kw, stride, pad);
    if (oh <= 0 || ow <= 0) throw std::invalid_argument("conv2d: output would be empty");
    if (static_cast<int>(val(b).numel()) != oc) throw std::invalid_argument("conv2d: bad bias");

    flops_ += 2ll * oc * ic * kh * kw * oh * ow;
    TensorT<T> col = im2col(xv, kh, kw, stride, pad, oh, ow);
    TensorT<T> out({oc, oh, ow});
    int kdim = ic * kh * kw;
    MapM(out.data(), oc, oh * ow).noalias() =
        CMapM(wv.data(), oc, kdim) * CMapM(col.data(), kdim, oh * ow);
    const auto& bv = val(b).v;
    for (int o = 0; o < oc; ++o) {
      T* row = out.data() + static_cast<size_t>(o) * oh * ow;
      for (int i = 0; i < oh * ow; ++i) row[i] += bv[static_cast<size_t>(o)];
    }
    int id = push(std::move(out));
    nodes_[id].back = [this, id, x, w, b, stride, pad, ic, h, wd, oc, kh, kw, oh, ow] {
      int kdim = ic * kh * kw;
      // recompute im2col instead of retaining it across the step
      TensorT<T> col2 = im2col(val(x), kh, kw, stride, pad, oh, ow);
      CMapM gy(grad(id).data(), oc, oh * ow);
      MapM(grad(w).data(), oc, kdim).noalias() += gy * CMapM(col2.data(), kdim, oh * ow).transpose();
      auto& gb = grad(b).v;
      for (int o = 0; o < oc; ++o) {
        const T* row = grad(id).data() + static_cast<size_t>(o) * oh * ow;
        T s = T(0);
        for (int i = 0; i < oh * ow; ++i) s += row[i];
        gb[static_cast<size_t>(o)] += s;
      }
      TensorT<T> dcol({kdim, oh * ow});
      MapM(dcol.data(), kdim, oh * ow).noalias() =
          CMapM(val(w).data(), oc, kdim).transpose() * gy;
      col2im_add(dcol, grad(x), kh, kw, stride, pad, oh, ow);
    };
    return id;
  }

  int upsample_nearest2x(int x) {
    const auto& xv = val(x);
    if (xv.rank() != 3) throw std::invalid_argument("upsample_nearest2x: rank-3 expected");
    int c = xv.dim(0), h = xv.dim(1), w = xv.dim(2);
    TensorT<T> out({c, 2 * h, 2 * w});
    for (int ch = 0; ch < c; ++ch)
      for (int i = 0; i < h; ++i)
        for (int j = 0; j < w; ++j) {
          T v = xv.at(ch, i, j);
          out.at(ch, 2 * i, 2 * j) = v;
          out.at(ch, 2 * i, 2 * j + 1) = v;
          out.at(ch, 2 * i + 1, 2 * j) = v;
          out.at(ch, 2 * i + 1, 2 * j + 1) = v;
        }
    int id = push(std::move(out));
    nodes_[id].back = [this, id, x, c, h, w] {
      auto& gx = grad(x);
      const auto& gy = grad(id);
      for (int ch = 0; ch < c; ++ch)
        for (int i = 0; i < h; ++i)
          for (int j = 0; j < w; ++j)
            gx.at(ch, i, j) += gy.at(ch, 2 * i, 2 * j) + gy.at(ch, 2 * i, 2 * j + 1) +
                               gy.at(ch, 2 * i + 1, 2 * j) + gy.at(ch, 2 * i + 1, 2 * j + 1);
    };
    return id;
  }

  int crop_center(int x, int oh, int ow) {
    const auto& xv = val(x);
    if (xv.rank() != 3) throw std::invalid_argument("crop_center: rank-3 expected");
    int c = xv.dim(0), h = xv.dim(1), w = xv.dim(2);
    if (oh > h || ow > w) throw std::invalid_argument("crop_center: target larger than input");
    int oy = (h - oh) / 2, ox = (w - ow) / 2;
    TensorT<T> out({c, oh, ow});
    for (int ch = 0; ch < c; ++ch)
      for (int i = 0; i < oh; ++i)
        for (int j = 0; j < ow; ++j) out.at(ch, i, j) = xv.at(ch, oy + i, ox + j);
    int id = push(std::move(out));
    nodes_[id].back = [this, id, x, c, oh, ow, oy, ox] {
      auto& gx = grad(x);
      const auto& gy = grad(id);
      for (int ch = 0; ch < c; ++ch)
        for (int i = 0; i < oh; ++i)
          for (int j = 0; j < ow; ++j) gx.at(ch, oy + i, ox + j) += gy.at(ch, i, j);
    };
    return id;
  }

  // normalize the channel vector at every spatial position to unit length
  int channel_unit_norm(int x, T eps) {
    const auto& xv = val(x);
    if (xv.rank() != 3) throw std::invalid_argument("channel_unit_norm: rank-3 expected");
    int c = xv.dim(0), h = xv.dim(1), w = xv.dim(2);
    int hw = h * w;
    TensorT<T> out({c, h, w});
    for (int p = 0; p < hw; ++p) {
      T ss = eps;
      for (int ch = 0; ch < c; ++ch) {
        T v = xv.v[static_cast<size_t>(ch) * hw + p];
        ss += v * v;
      }
      T inv = T(1) / std::sqrt(ss);
      for (int ch = 0; ch < c; ++ch)
        out.v[static_cast<size_t>(ch) * hw + p] = xv.v[static_cast<size_t>(ch) * hw + p] * inv;
    }
    int id = push(std::move(out));
    nodes_[id].back = [this, id, x, c, hw, eps] {
      auto& gx = grad(x);
      const auto& xv2 = val(x);
      const auto& gy = grad(id);
      for (int p = 0; p < hw; ++p) {
        T ss = eps, dot = T(0);
        for (int ch = 0; ch < c; ++ch) {
          T v = xv2.v[static_cast<size_t>(ch) * hw + p];
          ss += v * v;
          dot += gy.v[static_cast<size_t>(ch) * hw + p] * v;
        }
        T inv = T(1) / std::sqrt(ss);
        T inv3 = inv * inv * inv;
        for (int ch = 0; ch < c; ++ch) {
          size_t idx = static_cast<size_t>(ch) * hw + p;
          gx.v[idx] += gy.v[idx] * inv - xv2.v[idx] * dot * inv3;
        }
      }
    };
    return id;
  }

  // ---- reductions ----

  int mean_all(int a) {
    const auto& x = val(a);
    T s = T(0);
    for (T v : x.v) s += v;
    int64_t n = x.numel();
    int id = push(TensorT<T>({1}, s / T(n)));
    nodes_[id].back = [this, id, a, n] { axpy(a, grad(id).v[0], T(1) / T(n)); };
    return id;
  }

  int sum_squares(int a) {
    const auto& x = val(a);
    T s = T(0);
    for (T v : x.v) s += v * v;
    int id = push(TensorT<T>({1}, s));
    nodes_[id].back = [this, id, a] {
      auto& ga = grad(a).v;
      const auto& av = val(a).v;
      T g = grad(id).v[0];
      for (size_t i = 0; i < ga.size(); ++i) ga[i] += g * T(2) * av[i];
    };
    return id;
  }

  int mean_abs_diff(int a, int b) {
    check_same(a, b, "mean_abs_diff");
    const auto& av = val(a).v;
    const auto& bv = val(b).v;
    T s = T(0);
    for (size_t i = 0; i < av.size(); ++i) s += std::abs(av[i] - bv[i]);
    int64_t n = val(a).numel();
    int id = push(TensorT<T>({1}, s / T(n)));
    nodes_[id].back = [this, id, a, b, n] {
      auto& ga = grad(a).v;
      auto& gb = grad(b).v;
      const auto& av2 = val(a).v;
      const auto& bv2 = val(b).v;
      T g = grad(id).v[0] / T(n);
      for (size_t i = 0; i < ga.size(); ++i) {
        T d = av2[i] - bv2[i];
        T sgn = d > T(0) ? T(1) : (d < T(0) ? T(-1) : T(0));
        ga[i] += g * sgn;
        gb[i] -= g * sgn;
      }
    };
    return id;
  }

  int mean_sq_diff(int a, int b) {
    check_same(a, b, "mean_sq_diff");
    const auto& av = val(a).v;
    const auto& bv = val(b).v;
    T s = T(0);
    for (size_t i = 0; i < av.size(); ++i) {
      T d = av[i] - bv[i];
      s += d * d;
    }
    int64_t n = val(a).numel();
    int id = push(TensorT<T>({1}, s / T(n)));
    nodes_[id].back = [this, id, a, b, n] {
      auto& ga = grad(a).v;
      auto& gb = grad(b).v;
      const auto& av2 = val(a).v;
      const auto& bv2 = val(b).v;
      T g = grad(id).v[0] * T(2) / T(n);
      for (size_t i = 0; i < ga.size(); ++i) {
        T d = av2[i] - bv2[i];
        ga[i] += g * d;
        gb[i] -= g * d;
      }
    };
    return id;
  }

  // c0*s0 + c1*s1 + ... over scalar nodes
  int lincomb(const std::vector<int>& ids, const std::vector<T>& coefs) {
    if (ids.size() != coefs.size() || ids.empty())
      throw std::invalid_argument("lincomb: bad arity");
    T s = T(0);
    for (size_t i = 0; i < ids.size(); ++i) s += coefs[i] * scalar(ids[i]);
    int id = push(TensorT<T>({1}, s));
    std::vector<int> terms = ids;
    std::vector<T> cs = coefs;
    nodes_[id].back = [this, id, terms, cs] {
      T g = grad(id).v[0];
      for (size_t i = 0; i < terms.size(); ++i) grad(terms[i]).v[0] += g * cs[i];
    };
    return id;
  }

  // ---- backward ----

  void backward(int root) {
    if (val(root).numel() != 1) throw std::logic_error("backward: root must be scalar");
    if (ran_backward_) throw std::logic_error("backward: tape already consumed");
    ran_backward_ = true;
    for (auto& n : nodes_) {
      n.grad.shape = n.val.shape;
      n.grad.v.assign(n.val.v.size(), T(0));
    }
    nodes_[static_cast<size_t>(root)].grad.v[0] = T(1);
    for (int i = root; i >= 0; --i)
      if (nodes_[static_cast<size_t>(i)].back) nodes_[static_cast<size_t>(i)].back();
    for (auto& [p, id] : param_nodes_) {
      if (p->frozen) continue;
      const auto& g = nodes_[static_cast<size_t>(id)].grad.v;
      for (size_t i = 0; i < g.size(); ++i) p->grad.v[i] += g[i];
    }
  }

 private:
  struct Node {
    TensorT<T> val;
    TensorT<T> grad;
    std::function<void()> back;
  };

  std::vector<Node> nodes_;
  std::vector<std::pair<ParamT<T>*, int>> param_nodes_;
  bool ran_backward_ = false;
  int64_t flops_ = 0;

  int push(TensorT<T> v) {
    nodes_.push_back(Node{std::move(v), {}, nullptr});
    return static_cast<int>(nodes_.size()) - 1;
  }

  TensorT<T>& grad(int id) { return nodes_[static_cast<size_t>(id)].grad; }

  void check_same(int a, int b, const char* op) {
    if (!val(a).same_shape(val(b)))
      throw std::invalid_argument(std::string(op) + ": shape mismatch " + val(a).shape_str() +
                                  " vs " + val(b).shape_str());
  }

  void axpy(int dst, const std::vector<T>& src, T k) {
    auto& g = grad(dst).v;
    for (size_t i = 0; i < g.size(); ++i) g[i] += k * src[i];
  }

  void axpy(int dst, T scalar_grad, T k) {
    auto& g = grad(dst).v;
    for (size_t i = 0; i < g.size(); ++i) g[i] += k * scalar_grad;
  }

  static TensorT<T> im2col(const TensorT<T>& x, int kh, int kw, int stride, int pad, int oh,
                           int ow) {
    int ic = x.dim(0), h = x.dim(1), w = x.dim(2);
    TensorT<T> col({ic * kh * kw, oh * ow});
    for (int c = 0; c < ic; ++c)
      for (int ki = 0; ki < kh; ++ki)
        for (int kj = 0; kj < kw; ++kj) {
          T* dst = col.data() + (static_cast<size_t>(c) * kh * kw + ki * kw + kj) *
                                    static_cast<size_t>(oh) * ow;
          for (int oy = 0; oy < oh; ++oy) {
            int iy = oy * stride - pad + ki;
            if (iy < 0 || iy >= h) {
              for (int ox = 0; ox < ow; ++ox) dst[oy * ow + ox] = T(0);
              continue;
            }
            const T* src = x.data() + (static_cast<size_t>(c) * h + iy) * w;
            for (int ox = 0; ox < ow; ++ox) {
              int ix = ox * stride - pad + kj;
              dst[oy * ow + ox] = (ix >= 0 && ix < w) ? src[ix] : T(0);
            }
          }
        }
    return col;
  }

  static void col2im_add(const TensorT<T>& col, TensorT<T>& gx, int kh, int kw, int stride,
                         int pad, int oh, int ow) {
    int ic = gx.dim(0), h = gx.dim(1), w = gx.dim(2);
    for (int c = 0; c < ic; ++c)
      for (int ki = 0; ki < kh; ++ki)
        for (int kj = 0; kj < kw; ++kj) {
          const T* src = col.data() + (static_cast<size_t>(c) * kh * kw + ki * kw + kj) *
                                          static_cast<size_t>(oh) * ow;
          for (int oy = 0; oy < oh; ++oy) {
            int iy = oy * stride - pad + ki;
            if (iy < 0 || iy >= h) continue;
            T* dst = gx.data() + (static_cast<size_t>(c) * h + iy) * w;
            for (int ox = 0; ox < ow; ++ox) {
              int ix = ox * stride - pad + kj;
              if (ix >= 0 && ix < w) dst[ix] += src[oy * ow + ox];
            }
          }
        }
  }
};

using Graph = GraphT<float>;

}  // namespace infgen
