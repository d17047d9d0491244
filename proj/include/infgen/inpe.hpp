#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include "infgen/graph.hpp"
#include "infgen/param.hpp"
#include "infgen/rng.hpp"
#include "infgen/tensor.hpp"

namespace infgen {

// Integer position inside a token grid.
struct GridCoord {
  int x = 0;
  int y = 0;
  int grid_w = 1;
  int grid_h = 1;
};

struct NormalizedCoord {
  double x_hat = 0.0;  // in [0, 1)
  double y_hat = 0.0;
};

struct SpherePoint {
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;
};

// If half_pixel, coordinates sample cell centers ((x+0.5)/W) instead of x/W.
inline NormalizedCoord standardize_coords(const GridCoord& c, bool half_pixel = false) {
  if (c.grid_w <= 0 || c.grid_h <= 0)
    throw std::invalid_argument("standardize_coords: degenerate grid");
  if (c.x < 0 || c.x >= c.grid_w || c.y < 0 || c.y >= c.grid_h)
    throw std::invalid_argument("standardize_coords: coordinate outside grid");
  double off = half_pixel ? 0.5 : 0.0;
  return {(c.x + off) / c.grid_w, (c.y + off) / c.grid_h};
}

// Unit-sphere embedding of the normalized plane. Longitude from x_hat, a
// half-turn latitude from y_hat; every y_hat = 0.5 collapses to the pole.
inline SpherePoint sphere_map(const NormalizedCoord& n) {
  constexpr double pi = 3.14159265358979323846;
  double lat = pi * n.y_hat;
  double lon = 2.0 * pi * n.x_hat;
  return {std::cos(lat) * std::cos(lon), std::cos(lat) * std::sin(lon), std::sin(lat)};
}

// Frozen random frequency matrix for the Fourier lift, sampled once at model
// construction and persisted with the checkpoint.
template <typename T>
struct FourierConfigT {
  TensorT<T> b_matrix;  // shape {m, 3}
  int m = 0;
  T sigma_b = T(0);

  static FourierConfigT sample(int m, T sigma_b, Rng& rng) {
    if (m < 1) throw std::invalid_argument("FourierConfig: m must be >= 1");
    FourierConfigT f;
    f.m = m;
    f.sigma_b = sigma_b;
    f.b_matrix = TensorT<T>({m, 3});
    for (auto& v : f.b_matrix.v) v = static_cast<T>(rng.normal(0.0, static_cast<double>(sigma_b)));
    return f;
  }
};

// [cos(B p), sin(B p)], length 2m, every entry in [-1, 1].
template <typename T>
std::vector<T> fourier_features(const SpherePoint& p, const FourierConfigT<T>& f) {
  if (f.b_matrix.rank() != 2 || f.b_matrix.dim(1) != 3)
    throw std::invalid_argument("fourier_features: B must be m x 3");
  int m = f.b_matrix.dim(0);
  std::vector<T> out(static_cast<size_t>(2 * m));
  for (int i = 0; i < m; ++i) {
    double dot = static_cast<double>(f.b_matrix.at(i, 0)) * p.x +
                 static_cast<double>(f.b_matrix.at(i, 1)) * p.y +
                 static_cast<double>(f.b_matrix.at(i, 2)) * p.z;
    out[static_cast<size_t>(i)] = static_cast<T>(std::cos(dot));
    out[static_cast<size_t>(m + i)] = static_cast<T>(std::sin(dot));
  }
  return out;
}

// Positional embedding network: Fourier features -> two hidden layers of
// width d_model (GELU) -> linear output of width d_model. One shared network
// serves both the mask grid and the latent grid.
template <typename T>
struct InpeT {
  FourierConfigT<T> fourier;
  ParamT<T> w1, b1, w2, b2, w3, b3;
  int d_model = 0;
  bool half_pixel = false;

  InpeT() = default;

  InpeT(int d_model_, int m, T sigma_b, Rng& init_rng, Rng& fourier_rng,
        const std::string& prefix = "inpe") {
    d_model = d_model_;
    fourier = FourierConfigT<T>::sample(m, sigma_b, fourier_rng);
    auto init_linear = [&](ParamT<T>& w, ParamT<T>& b, int fan_in, int fan_out,
                           const std::string& name) {
      w = ParamT<T>(prefix + "." + name + ".w", TensorT<T>({fan_in, fan_out}));
      b = ParamT<T>(prefix + "." + name + ".b", TensorT<T>({fan_out}));
      double std = std::sqrt(2.0 / fan_in);
      for (auto& v : w.value.v) v = static_cast<T>(init_rng.normal(0.0, std));
    };
    init_linear(w1, b1, 2 * m, d_model, "fc1");
    init_linear(w2, b2, d_model, d_model, "fc2");
    init_linear(w3, b3, d_model, d_model, "fc3");
  }

  void collect(ParamRefs<T>& out) {
    out.push_back(&w1);
    out.push_back(&b1);
    out.push_back(&w2);
    out.push_back(&b2);
    out.push_back(&w3);
    out.push_back(&b3);
  }

  // Fourier feature rows for every cell of a grid, scanline order (y*W + x).
  TensorT<T> feature_matrix(int grid_h, int grid_w) const {
    TensorT<T> feats({grid_h * grid_w, 2 * fourier.m});
    for (int y = 0; y < grid_h; ++y)
      for (int x = 0; x < grid_w; ++x) {
        auto row = fourier_features(
            sphere_map(standardize_coords({x, y, grid_w, grid_h}, half_pixel)), fourier);
        std::copy(row.begin(), row.end(),
                  feats.v.begin() + static_cast<size_t>(y * grid_w + x) * row.size());
      }
    return feats;
  }

  // Embeddings for a whole grid as a graph node, [grid_h*grid_w, d_model].
  int embed_grid_node(GraphT<T>& g, int grid_h, int grid_w) {
    int x = g.constant(feature_matrix(grid_h, grid_w));
    x = g.gelu(g.linear(x, g.param(w1), g.param(b1)));
    x = g.gelu(g.linear(x, g.param(w2), g.param(b2)));
    return g.linear(x, g.param(w3), g.param(b3));
  }

  // Single-coordinate convenience evaluation.
  TensorT<T> embed(const GridCoord& c) const {
    auto* self = const_cast<InpeT*>(this);
    GraphT<T> g;
    TensorT<T> feats({1, 2 * fourier.m});
    auto row = fourier_features(sphere_map(standardize_coords(c, half_pixel)), fourier);
    std::copy(row.begin(), row.end(), feats.v.begin());
    int x = g.constant(std::move(feats));
    x = g.gelu(g.linear(x, g.param(self->w1), g.param(self->b1)));
    x = g.gelu(g.linear(x, g.param(self->w2), g.param(self->b2)));
    x = g.linear(x, g.param(self->w3), g.param(self->b3));
    TensorT<T> out = g.val(x);
    out.shape = {d_model};
    return out;
  }
};

using Inpe = InpeT<float>;

}  // namespace infgen
