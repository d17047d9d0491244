#include "infgen/metrics.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <stdexcept>

namespace infgen {

namespace {

void check_same_dims(const Image& x, const Image& y, const char* op) {
  if (x.height() != y.height() || x.width() != y.width())
    throw std::invalid_argument(std::string(op) + ": dimension mismatch");
}

// [-1, 1] -> [0, 1]
inline double unit(float v) { return (static_cast<double>(v) + 1.0) * 0.5; }

}  // namespace

double psnr(const Image& x, const Image& y) {
  check_same_dims(x, y, "psnr");
  double mse = 0.0;
  for (size_t i = 0; i < x.pixels.v.size(); ++i) {
    double d = unit(x.pixels.v[i]) - unit(y.pixels.v[i]);
    mse += d * d;
  }
  mse /= static_cast<double>(x.pixels.numel());
  if (mse < 1e-10) return 100.0;
  return 10.0 * std::log10(1.0 / mse);
}

double ssim(const Image& x, const Image& y) {
  check_same_dims(x, y, "ssim");
  constexpr int kWin = 11;
  constexpr double kSigma = 1.5;
  constexpr double kC1 = 0.01 * 0.01;
  constexpr double kC2 = 0.03 * 0.03;
  int h = x.height(), w = x.width();
  if (h < kWin || w < kWin) throw std::invalid_argument("ssim: image smaller than the window");

  double kernel[kWin];
  double ksum = 0.0;
  for (int i = 0; i < kWin; ++i) {
    double d = i - (kWin - 1) / 2.0;
    kernel[i] = std::exp(-d * d / (2.0 * kSigma * kSigma));
    ksum += kernel[i];
  }
  for (auto& k : kernel) k /= ksum;

  auto gray = [](const Image& img, std::vector<double>& out) {
    int hh = img.height(), ww = img.width();
    out.resize(static_cast<size_t>(hh) * ww);
    for (int i = 0; i < hh; ++i)
      for (int j = 0; j < ww; ++j)
        out[static_cast<size_t>(i) * ww + j] =
            (unit(img.at(0, i, j)) + unit(img.at(1, i, j)) + unit(img.at(2, i, j))) / 3.0;
  };
  std::vector<double> gx, gy;
  gray(x, gx);
  gray(y, gy);

  // separable Gaussian filtering of the five moment maps, valid region only
  auto blur = [&](const std::vector<double>& src) {
    std::vector<double> tmp(static_cast<size_t>(h) * w, 0.0);
    int vw = w - kWin + 1, vh = h - kWin + 1;
    for (int i = 0; i < h; ++i)
      for (int j = 0; j < vw; ++j) {
        double s = 0.0;
        for (int k = 0; k < kWin; ++k) s += kernel[k] * src[static_cast<size_t>(i) * w + j + k];
        tmp[static_cast<size_t>(i) * w + j] = s;
      }
    std::vector<double> out(static_cast<size_t>(vh) * vw, 0.0);
    for (int i = 0; i < vh; ++i)
      for (int j = 0; j < vw; ++j) {
        double s = 0.0;
        for (int k = 0; k < kWin; ++k) s += kernel[k] * tmp[static_cast<size_t>(i + k) * w + j];
        out[static_cast<size_t>(i) * vw + j] = s;
      }
    return out;
  };

  size_t npix = gx.size();
  std::vector<double> xx(npix), yy(npix), xy(npix);
  for (size_t i = 0; i < npix; ++i) {
    xx[i] = gx[i] * gx[i];
    yy[i] = gy[i] * gy[i];
    xy[i] = gx[i] * gy[i];
  }
  auto mu_x = blur(gx), mu_y = blur(gy);
  auto m_xx = blur(xx), m_yy = blur(yy), m_xy = blur(xy);

  double acc = 0.0;
  for (size_t i = 0; i < mu_x.size(); ++i) {
    double ux = mu_x[i], uy = mu_y[i];
    double vx = m_xx[i] - ux * ux;
    double vy = m_yy[i] - uy * uy;
    double cxy = m_xy[i] - ux * uy;
    double num = (2.0 * ux * uy + kC1) * (2.0 * cxy + kC2);
    double den = (ux * ux + uy * uy + kC1) * (vx + vy + kC2);
    acc += num / den;
  }
  return acc / static_cast<double>(mu_x.size());
}

std::vector<Image> crop_patches(const Image& x, int patch, int stride) {
  if (patch <= 0) throw std::invalid_argument("crop_patches: patch must be positive");
  if (x.height() < patch || x.width() < patch)
    throw std::invalid_argument("crop_patches: image smaller than patch");
  if (stride <= 0) stride = patch;
  std::vector<Image> out;
  for (int y = 0; y + patch <= x.height(); y += stride)
    for (int xx = 0; xx + patch <= x.width(); xx += stride)
      out.push_back(crop(x, y, xx, patch, patch));
  return out;
}

FeatureStats::FeatureStats(int dim) : d(dim) {
  sum.assign(static_cast<size_t>(dim), 0.0);
  sum_outer.assign(static_cast<size_t>(dim) * dim, 0.0);
}

void FeatureStats::add(const std::vector<double>& feature) {
  if (static_cast<int>(feature.size()) != d)
    throw std::invalid_argument("FeatureStats::add: dimension mismatch");
  ++n;
  for (int i = 0; i < d; ++i) {
    sum[static_cast<size_t>(i)] += feature[static_cast<size_t>(i)];
    for (int j = 0; j < d; ++j)
      sum_outer[static_cast<size_t>(i) * d + j] +=
          feature[static_cast<size_t>(i)] * feature[static_cast<size_t>(j)];
  }
}

void FeatureStats::merge(const FeatureStats& other) {
  if (other.d != d) throw std::invalid_argument("FeatureStats::merge: dimension mismatch");
  n += other.n;
  for (size_t i = 0; i < sum.size(); ++i) sum[i] += other.sum[i];
  for (size_t i = 0; i < sum_outer.size(); ++i) sum_outer[i] += other.sum_outer[i];
}

std::vector<double> FeatureStats::mean() const {
  if (n < 1) throw std::logic_error("FeatureStats: no samples");
  std::vector<double> m(sum);
  for (auto& v : m) v /= static_cast<double>(n);
  return m;
}

std::vector<double> FeatureStats::covariance() const {
  if (n < 2) throw std::logic_error("FeatureStats: need n >= 2 for covariance");
  auto m = mean();
  std::vector<double> cov(static_cast<size_t>(d) * d);
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j)
      cov[static_cast<size_t>(i) * d + j] =
          (sum_outer[static_cast<size_t>(i) * d + j] -
           static_cast<double>(n) * m[static_cast<size_t>(i)] * m[static_cast<size_t>(j)]) /
          static_cast<double>(n - 1);
  // enforce symmetry against accumulation round-off
  for (int i = 0; i < d; ++i)
    for (int j = i + 1; j < d; ++j) {
      double s = 0.5 * (cov[static_cast<size_t>(i) * d + j] + cov[static_cast<size_t>(j) * d + i]);
      cov[static_cast<size_t>(i) * d + j] = s;
      cov[static_cast<size_t>(j) * d + i] = s;
    }
  return cov;
}

double frechet_distance(const FeatureStats& a, const FeatureStats& b) {
  if (a.d != b.d) throw std::invalid_argument("frechet_distance: dimension mismatch");
  const int d = a.d;
  auto mu_a = a.mean();
  auto mu_b = b.mean();
  double mean_term = 0.0;
  for (int i = 0; i < d; ++i) {
    double diff = mu_a[static_cast<size_t>(i)] - mu_b[static_cast<size_t>(i)];
    mean_term += diff * diff;
  }

  using Mat = Eigen::MatrixXd;
  auto to_mat = [d](const std::vector<double>& v) {
    Mat m(d, d);
    for (int i = 0; i < d; ++i)
      for (int j = 0; j < d; ++j) m(i, j) = v[static_cast<size_t>(i) * d + j];
    return m;
  };
  Mat sa = to_mat(a.covariance());
  Mat sb = to_mat(b.covariance());

  constexpr double kNoise = 1e-6;
  auto psd_sqrt = [&](const Mat& m, const char* what) {
    Eigen::SelfAdjointEigenSolver<Mat> es(m);
    if (es.info() != Eigen::Success)
      throw std::runtime_error(std::string("frechet_distance: eigensolve failed for ") + what);
    Eigen::VectorXd ev = es.eigenvalues();
    for (int i = 0; i < ev.size(); ++i) {
      if (ev(i) < -kNoise)
        throw std::runtime_error(std::string("frechet_distance: ") + what +
                                 " is not positive semi-definite");
      ev(i) = std::sqrt(std::max(ev(i), 0.0));
    }
    return Mat(es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose());
  };

  // tr((Sa Sb)^(1/2)) = tr((Sa^(1/2) Sb Sa^(1/2))^(1/2)) with a symmetric inner matrix
  Mat root_a = psd_sqrt(sa, "covariance A");
  Mat inner = root_a * sb * root_a;
  inner = 0.5 * (inner + inner.transpose());
  Eigen::SelfAdjointEigenSolver<Mat> es(inner);
  if (es.info() != Eigen::Success)
    throw std::runtime_error("frechet_distance: matrix square root failed");
  double tr_sqrt = 0.0;
  for (int i = 0; i < es.eigenvalues().size(); ++i) {
    double ev = es.eigenvalues()(i);
    if (ev < -kNoise) throw std::runtime_error("frechet_distance: matrix square root failed");
    tr_sqrt += std::sqrt(std::max(ev, 0.0));
  }

  double dist = mean_term + sa.trace() + sb.trace() - 2.0 * tr_sqrt;
  return std::max(dist, 0.0);
}

}  // namespace infgen
