#pragma once

#include <vector>

#include "infgen/image.hpp"
#include "infgen/tensor.hpp"

namespace infgen {

// Peak signal-to-noise ratio in dB over the [0, 1] remap of pixel values;
// capped at 100 dB when the MSE vanishes.
double psnr(const Image& x, const Image& y);

// Mean local structural similarity on channel-mean grayscale with an 11x11
// Gaussian window (sigma 1.5) and the standard stabilizers, range [0, 1].
double ssim(const Image& x, const Image& y);

// Non-overlapping patch tiling anchored top-left; optional stride enables
// overlap. Errors when the image is smaller than the patch.
std::vector<Image> crop_patches(const Image& x, int patch, int stride = 0);

// Streaming Gaussian statistics over feature vectors; partials merge
// order-independently.
struct FeatureStats {
  int d = 0;
  int64_t n = 0;
  std::vector<double> sum;        // length d
  std::vector<double> sum_outer;  // d*d, row-major

  explicit FeatureStats(int dim = 0);
  void add(const std::vector<double>& feature);
  void merge(const FeatureStats& other);
  std::vector<double> mean() const;
  std::vector<double> covariance() const;  // sample covariance, symmetric
};

// Frechet distance between the Gaussians summarized by two FeatureStats:
// |mu_a - mu_b|^2 + tr(Sa + Sb - 2 (Sa Sb)^(1/2)). Eigenvalue noise below
// 1e-6 is clamped; larger negative eigenvalues abort.
double frechet_distance(const FeatureStats& a, const FeatureStats& b);

}  // namespace infgen
