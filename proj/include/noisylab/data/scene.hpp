#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "noisylab/data/patch.hpp"

namespace noisylab::data {

/// Geometry family used to draw instances of a class.
enum class ShapeKind {
  fill,       ///< the background canvas
  clumps,     ///< clusters of discs (tree crowns)
  region,     ///< irregular star-shaped areas
  rectangle,  ///< rotated rectangles with a dark outline
  band,       ///< straight strips crossing the patch
  rail,       ///< thin strips with periodic cross ties
};

/// Appearance and geometry of one exact class.
struct ClassSpec {
  std::string name;
  ShapeKind shape = ShapeKind::region;
  std::vector<float> signature;  ///< mean reflectance per channel
  float texture = 0.05f;         ///< amplitude of the interior texture
  float jitter = 0.1f;           ///< per-instance brightness spread (relative)
  int texture_cell = 4;          ///< texture grain in pixels (1 = per-pixel)
  float presence = 0.5f;         ///< probability the class occurs in a patch
  int min_count = 1;
  int max_count = 2;
  float min_size = 4.0f;  ///< pixels; radius, half-extent or half-width depending on shape
  float max_size = 8.0f;
  int z_order = 0;  ///< paint order, ascending
};

struct SceneConfig {
  int patch_size = 64;
  int channels = 4;
  std::vector<ClassSpec> classes;          ///< exact label set; index = class id
  std::vector<int> pretrain_class_map;     ///< exact id -> pretraining id
  std::vector<std::string> pretrain_class_names;

  /// Eight exact classes mirroring an urban land-cover legend, mapped onto
  /// background / trees / buildings / roads for pretraining.
  static SceneConfig defaults();

  int num_exact_classes() const { return static_cast<int>(classes.size()); }
  int num_pretrain_classes() const { return static_cast<int>(pretrain_class_names.size()); }
  std::vector<std::string> exact_class_names() const;

  /// Throws ConfigError naming the offending field.
  void validate() const;
};

struct Scene {
  Tensor image;  ///< [C,H,W]
  LabelMask mask;
};

/// Deterministic in (config, seed).
Scene generate_scene(const SceneConfig& config, std::uint64_t seed);

/// Re-renders the radiometry of a scene as a different acquisition of the
/// same location; masks are unchanged. Variant 0 is the scene itself.
Tensor seasonal_variant(const Scene& scene, int variant_id, std::uint64_t seed);

/// Smooth random field in [-1,1] built by bilinear interpolation of a
/// random lattice with spacing `cell` pixels.
std::vector<float> value_noise(int height, int width, int cell, std::uint64_t seed);

}  // namespace noisylab::data
