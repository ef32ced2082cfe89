#pragma once

#include <cstdint>
#include <vector>

#include "noisylab/common.hpp"
#include "noisylab/data/patch.hpp"
#include "noisylab/data/scene.hpp"

namespace noisylab::data {

/// Four-knob corruption model applied to a relabeled exact mask.
struct NoiseConfig {
  double object_drop_prob = 0.0;  ///< object relabeled as background
  int boundary_radius = 0;        ///< max erosion/dilation radius in pixels
  double blob_fp_rate = 0.0;      ///< expected false-positive blobs per patch
  double class_swap_prob = 0.0;   ///< object gets another foreground class
  std::uint64_t rng_seed = 0;

  void validate() const;
  bool is_zero() const {
    return object_drop_prob == 0.0 && boundary_radius == 0 && blob_fp_rate == 0.0 && class_swap_prob == 0.0;
  }
  friend bool operator==(const NoiseConfig&, const NoiseConfig&) = default;
};

/// Maps `exact_mask` through `class_map`, then corrupts each 4-connected
/// foreground object independently: drop, class swap, and erosion or
/// dilation by a radius drawn from [0, boundary_radius]. Dilation only
/// grows into reference background. Finally paints Poisson(blob_fp_rate)
/// random foreground discs. Every object consumes the same number of draws
/// whatever the knob values, so changing one knob never reshuffles the
/// others.
LabelMask corrupt_mask(const LabelMask& exact_mask, const std::vector<int>& class_map, const NoiseConfig& noise);

/// Per-patch noise seed used by corpus generation and calibration.
inline std::uint64_t patch_noise_seed(std::uint64_t noise_seed, std::uint64_t patch_seed) {
  return derive_seed(noise_seed, patch_seed);
}

struct CalibrationOptions {
  NoiseConfig lower{};                       ///< severity 0
  NoiseConfig upper{0.6, 4, 6.0, 0.4, 0};    ///< severity 1
  double tolerance = 0.05;
  int grid_points = 11;
  int refine_steps = 12;
  std::uint64_t seed = 0;  ///< scene seeds and the returned rng_seed
};

/// Raised when no severity reaches the target within tolerance.
class CalibrationError : public NumericalError {
 public:
  CalibrationError(double target, double best_achieved, NoiseConfig best);
  double target() const noexcept { return target_; }
  double best_achieved() const noexcept { return best_achieved_; }
  const NoiseConfig& best() const noexcept { return best_; }

 private:
  double target_;
  double best_achieved_;
  NoiseConfig best_;
};

/// Linear interpolation between the bounds; the radius is rounded.
NoiseConfig noise_at_severity(const CalibrationOptions& options, double severity);

/// Pooled mean IoU of corrupted against relabeled exact masks over
/// `scenes`, on the pretraining class set of `config`.
double measure_mean_iou(const std::vector<Scene>& scenes, const std::vector<std::uint64_t>& scene_seeds,
                        const SceneConfig& config, const NoiseConfig& noise);

/// Grid search over severity in [0,1] followed by bisection on the
/// bracketing interval (mean IoU falls as severity rises). The corpus is
/// `corpus_size` scenes seeded from `options.seed`.
NoiseConfig calibrate_noise(double target_mean_iou, int corpus_size, const SceneConfig& config,
                            const CalibrationOptions& options = {});

}  // namespace noisylab::data
