#pragma once

#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

#include "noisylab/data/patch.hpp"
#include "noisylab/tensor.hpp"

namespace noisylab::analysis {

/// First principal component of a [C,H,W] cube, treated as H*W samples of
/// C-vectors, returned as an [H,W] map in [0,1]. The sign makes the
/// projection's skewness non-negative (ties: first nonzero loading
/// positive). A cube with no variance maps to 0.5 everywhere.
Tensor dominant_component_image(const Tensor& cube);

/// Raised when fewer than two classes have enough pixels.
class UndefinedRatioError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

struct FisherOptions {
  double eps = 1e-8;
  int min_pixels = 10;
  std::optional<int> exclude_class;  ///< e.g. background
};

/// Nearest-neighbour resampling to (height, width).
data::LabelMask resample_nearest(const data::LabelMask& mask, int height, int width);

/// Mean over channels of the mean over valid class pairs (k,l) of
/// (mu_k - mu_l)^2 / (var_k + var_l + eps), with population variances.
/// Labels are resampled to the cube's spatial size when they differ.
double fisher_ratio(const Tensor& cube, const data::LabelMask& labels, int num_classes,
                    const FisherOptions& options = {});

/// KL(N(mu_p, var_p) || N(mu_q, var_q)); arguments are variances.
/// Throws std::domain_error unless both variances are positive.
double gaussian_kl(double mu_p, double var_p, double mu_q, double var_q);

/// Savitzky-Golay smoothing: each point is the value at that point of the
/// least-squares polynomial over the centred window, truncated at the
/// boundaries (order lowered only if the truncated window is too short).
std::vector<double> savgol_smooth(std::span<const double> series, int window = 5, int polyorder = 2);

}  // namespace noisylab::analysis
