#pragma once

#include <cstdint>
#include <optional>
#include <span>

#include "noisylab/data/patch.hpp"

namespace noisylab::data {

/// The random choices behind one augmentation draw.
struct AugmentPlan {
  std::optional<std::size_t> variant;  ///< index into the variant list
  bool hflip = false;
  bool vflip = false;
};

/// Variant pick (uniform, only when variants exist), then independent
/// horizontal and vertical flips with p = 0.5 each.
AugmentPlan plan_augment(std::uint64_t seed, std::size_t num_variants);

PatchTriple apply_augment(const PatchTriple& triple, std::span<const PatchTriple> variants, const AugmentPlan& plan);

/// Season-analog variant selection and random flips, applied identically to
/// the image and both masks.
PatchTriple augment(const PatchTriple& triple, std::span<const PatchTriple> variants, std::uint64_t seed);

/// Uniformly placed square crop of side `size`.
PatchTriple random_crop(const PatchTriple& triple, int size, std::uint64_t seed);

}  // namespace noisylab::data
