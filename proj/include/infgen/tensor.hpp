#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace infgen {

// Dense row-major tensor over a flat buffer. Rank-2 tensors are (rows, cols)
// matrices, rank-3 tensors are (channels, height, width) feature maps.
template <typename T>
struct TensorT {
  std::vector<int> shape;
  std::vector<T> v;

  TensorT() = default;
  explicit TensorT(std::vector<int> s) : shape(std::move(s)), v(checked_numel(shape)) {}
  TensorT(std::vector<int> s, T fill) : shape(std::move(s)), v(checked_numel(shape), fill) {}

  static TensorT zeros(std::vector<int> s) { return TensorT(std::move(s)); }
  static TensorT full(std::vector<int> s, T value) { return TensorT(std::move(s), value); }

  static int64_t checked_numel(const std::vector<int>& s) {
    int64_t n = 1;
    for (int d : s) {
      if (d <= 0) throw std::invalid_argument("tensor dims must be positive");
      n *= d;
    }
    return n;
  }

  int64_t numel() const { return static_cast<int64_t>(v.size()); }
  int rank() const { return static_cast<int>(shape.size()); }
  int dim(int i) const { return shape[static_cast<size_t>(i)]; }

  T* data() { return v.data(); }
  const T* data() const { return v.data(); }

  T& operator[](size_t i) { return v[i]; }
  const T& operator[](size_t i) const { return v[i]; }

  // rank-2 access
  T& at(int r, int c) { return v[static_cast<size_t>(r) * shape[1] + c]; }
  const T& at(int r, int c) const { return v[static_cast<size_t>(r) * shape[1] + c]; }

  // rank-3 access (c, y, x)
  T& at(int ch, int y, int x) {
    return v[(static_cast<size_t>(ch) * shape[1] + y) * shape[2] + x];
  }
  const T& at(int ch, int y, int x) const {
    return v[(static_cast<size_t>(ch) * shape[1] + y) * shape[2] + x];
  }

  bool same_shape(const TensorT& o) const { return shape == o.shape; }

  void fill(T value) { std::fill(v.begin(), v.end(), value); }

  std::string shape_str() const {
    std::ostringstream os;
    os << '[';
    for (size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
    os << ']';
    return os.str();
  }

  template <typename U>
  TensorT<U> cast() const {
    TensorT<U> out;
    out.shape = shape;
    out.v.resize(v.size());
    for (size_t i = 0; i < v.size(); ++i) out.v[i] = static_cast<U>(v[i]);
    return out;
  }
};

using Tensor = TensorT<float>;

template <typename T>
inline bool all_finite(const TensorT<T>& t) {
  for (T x : t.v)
    if (!std::isfinite(static_cast<double>(x))) return false;
  return true;
}

}  // namespace infgen
