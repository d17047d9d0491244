#pragma once

#include <cmath>
#include <string>

#include "infgen/graph.hpp"
#include "infgen/param.hpp"
#include "infgen/rng.hpp"

namespace infgen {

template <typename T>
struct Conv2dT {
  ParamT<T> w, b;
  int stride = 1, pad = 1;

  Conv2dT() = default;
  Conv2dT(const std::string& name, int in_ch, int out_ch, int k, int stride_, int pad_,
          Rng& rng, double gain = 2.0) {
    stride = stride_;
    pad = pad_;
    w = ParamT<T>(name + ".w", TensorT<T>({out_ch, in_ch, k, k}));
    b = ParamT<T>(name + ".b", TensorT<T>({out_ch}));
    double std = std::sqrt(gain / (in_ch * k * k));
    for (auto& v : w.value.v) v = static_cast<T>(rng.normal(0.0, std));
  }

  int forward(GraphT<T>& g, int x) { return g.conv2d(x, g.param(w), g.param(b), stride, pad); }

  void collect(ParamRefs<T>& out) {
    out.push_back(&w);
    out.push_back(&b);
  }
};

template <typename T>
struct ResBlockT {
  Conv2dT<T> conv1, conv2;

  ResBlockT() = default;
  ResBlockT(const std::string& name, int ch, Rng& rng)
      : conv1(name + ".conv1", ch, ch, 3, 1, 1, rng),
        conv2(name + ".conv2", ch, ch, 3, 1, 1, rng) {}

  int forward(GraphT<T>& g, int x) {
    int h = conv1.forward(g, g.gelu(x));
    h = conv2.forward(g, g.gelu(h));
    return g.add(x, h);
  }

  void collect(ParamRefs<T>& out) {
    conv1.collect(out);
    conv2.collect(out);
  }
};

}  // namespace infgen
