#include "noisylab/analysis/statistics.hpp"

#include <algorithm>
#include <cmath>

#include <Eigen/Dense>

#include "noisylab/common.hpp"

namespace noisylab::analysis {

Tensor dominant_component_image(const Tensor& cube) {
  if (cube.rank() != 3 || cube.dim(0) < 1) throw MismatchError("expected a [C,H,W] cube, got " + shape_string(cube.shape()));
  if (!all_finite(cube.values())) throw NumericalError("non-finite value in feature cube");
  const int c = cube.dim(0);
  const int h = cube.dim(1);
  const int w = cube.dim(2);
  const Eigen::Index n = static_cast<Eigen::Index>(h) * w;

  Eigen::MatrixXd x(n, c);
  for (int ch = 0; ch < c; ++ch) {
    for (Eigen::Index i = 0; i < n; ++i) x(i, ch) = cube[static_cast<std::size_t>(ch) * n + i];
  }
  x.rowwise() -= x.colwise().mean();
  const Eigen::MatrixXd cov = (x.transpose() * x) / static_cast<double>(n);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(cov);
  Eigen::VectorXd v = solver.eigenvectors().col(c - 1);
  Eigen::VectorXd z = x * v;

  Tensor out({h, w}, 0.5f);
  const double lo = z.minCoeff();
  const double hi = z.maxCoeff();
  const double scale = std::max(std::abs(lo), std::abs(hi));
  if (!(hi - lo > 1e-12 * std::max(1.0, scale)) || solver.eigenvalues()(c - 1) <= 0.0) return out;

  const double m2 = z.array().square().mean();
  const double m3 = z.array().cube().mean();
  bool flip = m3 < -1e-9 * std::pow(m2, 1.5);
  if (std::abs(m3) <= 1e-9 * std::pow(m2, 1.5)) {
    for (Eigen::Index i = 0; i < v.size(); ++i) {
      if (std::abs(v(i)) > 1e-12) {
        flip = v(i) < 0.0;
        break;
      }
    }
  }
  if (flip) z = -z;
  const double zmin = z.minCoeff();
  const double range = z.maxCoeff() - zmin;
  for (Eigen::Index i = 0; i < n; ++i) out[static_cast<std::size_t>(i)] = static_cast<float>((z(i) - zmin) / range);
  return out;
}

data::LabelMask resample_nearest(const data::LabelMask& mask, int height, int width) {
  if (mask.height == height && mask.width == width) return mask;
  if (mask.height < 1 || mask.width < 1 || height < 1 || width < 1) throw MismatchError("empty mask in resampling");
  data::LabelMask out(height, width);
  for (int y = 0; y < height; ++y) {
    const int sy = std::min(mask.height - 1, static_cast<int>((y + 0.5) * mask.height / height));
    for (int x = 0; x < width; ++x) {
      const int sx = std::min(mask.width - 1, static_cast<int>((x + 0.5) * mask.width / width));
      out.at(y, x) = mask.at(sy, sx);
    }
  }
  return out;
}

double fisher_ratio(const Tensor& cube, const data::LabelMask& labels, int num_classes, const FisherOptions& options) {
  if (cube.rank() != 3) throw MismatchError("expected a [C,H,W] cube, got " + shape_string(cube.shape()));
  if (num_classes < 2) throw ConfigError("num_classes", "must be >= 2");
  const int c = cube.dim(0);
  const auto mask = resample_nearest(labels, cube.dim(1), cube.dim(2));
  const std::size_t n = mask.size();

  std::vector<std::size_t> count(static_cast<std::size_t>(num_classes), 0);
  for (auto v : mask.values) {
    if (v >= num_classes) throw MismatchError("label " + std::to_string(v) + " outside the class set");
    ++count[v];
  }
  std::vector<int> valid;
  for (int k = 0; k < num_classes; ++k) {
    if (options.exclude_class && *options.exclude_class == k) continue;
    if (count[static_cast<std::size_t>(k)] >= static_cast<std::size_t>(options.min_pixels)) valid.push_back(k);
  }
  if (valid.size() < 2) throw UndefinedRatioError("fewer than two classes with enough pixels");

  const auto kn = static_cast<std::size_t>(num_classes);
  std::vector<double> mean(kn);
  std::vector<double> var(kn);
  double total = 0.0;
  for (int ch = 0; ch < c; ++ch) {
    const float* plane = cube.data() + static_cast<std::size_t>(ch) * n;
    std::fill(mean.begin(), mean.end(), 0.0);
    std::fill(var.begin(), var.end(), 0.0);
    for (std::size_t i = 0; i < n; ++i) mean[mask.values[i]] += plane[i];
    for (std::size_t k = 0; k < kn; ++k) {
      if (count[k] > 0) mean[k] /= static_cast<double>(count[k]);
    }
    for (std::size_t i = 0; i < n; ++i) {
      const double d = plane[i] - mean[mask.values[i]];
      var[mask.values[i]] += d * d;
    }
    for (std::size_t k = 0; k < kn; ++k) {
      if (count[k] > 0) var[k] /= static_cast<double>(count[k]);
    }
    double channel = 0.0;
    int pairs = 0;
    for (std::size_t a = 0; a < valid.size(); ++a) {
      for (std::size_t b = a + 1; b < valid.size(); ++b) {
        const auto k = static_cast<std::size_t>(valid[a]);
        const auto l = static_cast<std::size_t>(valid[b]);
        const double diff = mean[k] - mean[l];
        channel += diff * diff / (var[k] + var[l] + options.eps);
        ++pairs;
      }
    }
    total += channel / pairs;
  }
  return total / c;
}

double gaussian_kl(double mu_p, double var_p, double mu_q, double var_q) {
  if (!(var_p > 0.0) || !(var_q > 0.0)) throw std::domain_error("gaussian_kl: variances must be positive");
  const double d = mu_p - mu_q;
  const double kl = 0.5 * std::log(var_q / var_p) + (var_p + d * d) / (2.0 * var_q) - 0.5;
  return std::max(0.0, kl);
}

std::vector<double> savgol_smooth(std::span<const double> series, int window, int polyorder) {
  const auto n = static_cast<int>(series.size());
  if (window < 1 || window % 2 == 0) throw std::invalid_argument("savgol_smooth: window must be odd and positive");
  if (polyorder < 0 || polyorder >= window) throw std::invalid_argument("savgol_smooth: need 0 <= polyorder < window");
  if (window > n) throw std::invalid_argument("savgol_smooth: window exceeds series length");
  const int half = window / 2;
  std::vector<double> out(series.size());
  for (int i = 0; i < n; ++i) {
    const int lo = std::max(0, i - half);
    const int hi = std::min(n - 1, i + half);
    const int m = hi - lo + 1;
    const int order = std::min(polyorder, m - 1);
    Eigen::MatrixXd a(m, order + 1);
    Eigen::VectorXd y(m);
    for (int r = 0; r < m; ++r) {
      const double t = lo + r - i;
      double p = 1.0;
      for (int k = 0; k <= order; ++k, p *= t) a(r, k) = p;
      y(r) = series[static_cast<std::size_t>(lo + r)];
    }
    out[static_cast<std::size_t>(i)] = a.colPivHouseholderQr().solve(y)(0);
  }
  return out;
}

}  // namespace noisylab::analysis
