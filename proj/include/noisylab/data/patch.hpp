#pragma once

#include <cstdint>
#include <vector>

#include "noisylab/tensor.hpp"

namespace noisylab::data {

/// Row-major class-index raster.
struct LabelMask {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> values;

  LabelMask() = default;
  LabelMask(int h, int w, std::uint8_t fill = 0)
      : height(h), width(w), values(static_cast<std::size_t>(h) * static_cast<std::size_t>(w), fill) {}

  std::uint8_t& at(int y, int x) { return values[static_cast<std::size_t>(y) * width + x]; }
  std::uint8_t at(int y, int x) const { return values[static_cast<std::size_t>(y) * width + x]; }
  std::size_t size() const noexcept { return values.size(); }

  friend bool operator==(const LabelMask&, const LabelMask&) = default;
};

/// Applies `class_map` pixel-wise.
LabelMask relabel(const LabelMask& mask, const std::vector<int>& class_map);

/// One training sample: image [C,H,W] in [0,1], exact and noisy masks.
struct PatchTriple {
  Tensor image;
  LabelMask exact_mask;
  LabelMask noisy_mask;
  int num_exact_classes = 0;
  int num_noisy_classes = 0;
  std::uint16_t variant_id = 0;
  std::uint64_t seed = 0;

  int channels() const { return image.dim(0); }
  int height() const { return image.dim(1); }
  int width() const { return image.dim(2); }

  /// Throws MismatchError / ConfigError when an invariant is broken.
  void validate() const;

  friend bool operator==(const PatchTriple&, const PatchTriple&) = default;
};

}  // namespace noisylab::data
