#include "noisylab/data/scene.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "noisylab/common.hpp"

namespace noisylab::data {

LabelMask relabel(const LabelMask& mask, const std::vector<int>& class_map) {
  LabelMask out(mask.height, mask.width);
  for (std::size_t i = 0; i < mask.size(); ++i) {
    const auto v = mask.values[i];
    if (v >= class_map.size()) throw MismatchError("relabel: class " + std::to_string(v) + " outside class map");
    out.values[i] = static_cast<std::uint8_t>(class_map[v]);
  }
  return out;
}

void PatchTriple::validate() const {
  if (image.rank() != 3) throw MismatchError("image must be [C,H,W], got " + shape_string(image.shape()));
  const int h = image.dim(1);
  const int w = image.dim(2);
  if (exact_mask.height != h || exact_mask.width != w || noisy_mask.height != h || noisy_mask.width != w) {
    throw MismatchError("image and masks disagree on H/W");
  }
  if (exact_mask.size() != static_cast<std::size_t>(h) * w || noisy_mask.size() != static_cast<std::size_t>(h) * w) {
    throw MismatchError("mask payload does not match H*W");
  }
  for (auto v : exact_mask.values) {
    if (v >= num_exact_classes) throw MismatchError("exact mask value " + std::to_string(v) + " >= class count");
  }
  for (auto v : noisy_mask.values) {
    if (v >= num_noisy_classes) throw MismatchError("noisy mask value " + std::to_string(v) + " >= class count");
  }
  for (float v : image.values()) {
    if (!std::isfinite(v) || v < 0.0f || v > 1.0f) throw MismatchError("image value outside [0,1]");
  }
}

SceneConfig SceneConfig::defaults() {
  SceneConfig c;
  auto add = [&](std::string name, ShapeKind shape, std::vector<float> sig, float texture, int cell, float jitter,
                 float presence, int min_count, int max_count, float min_size, float max_size, int z) {
    ClassSpec s;
    s.name = std::move(name);
    s.shape = shape;
    s.signature = std::move(sig);
    s.texture = texture;
    s.texture_cell = cell;
    s.jitter = jitter;
    s.presence = presence;
    s.min_count = min_count;
    s.max_count = max_count;
    s.min_size = min_size;
    s.max_size = max_size;
    s.z_order = z;
    c.classes.push_back(std::move(s));
  };
  //   name          shape                 NIR    R      G      B     tex   cell jit  pres  n     size        z
  add("background", ShapeKind::fill, {0.30f, 0.33f, 0.31f, 0.29f}, 0.06f, 3, 0.10f, 1.0f, 0, 0, 0, 0, 0);
  add("trees", ShapeKind::clumps, {0.55f, 0.10f, 0.18f, 0.09f}, 0.08f, 1, 0.10f, 0.8f, 1, 4, 2.5f, 5.0f, 6);
  add("grass_shrubs", ShapeKind::region, {0.48f, 0.16f, 0.26f, 0.13f}, 0.03f, 6, 0.10f, 0.7f, 1, 2, 8, 18, 1);
  add("bareland", ShapeKind::region, {0.36f, 0.40f, 0.35f, 0.28f}, 0.10f, 1, 0.10f, 0.5f, 1, 2, 6, 14, 2);
  add("water", ShapeKind::region, {0.06f, 0.09f, 0.14f, 0.22f}, 0.015f, 12, 0.15f, 0.35f, 1, 1, 8, 20, 0);
  add("buildings", ShapeKind::rectangle, {0.38f, 0.42f, 0.41f, 0.43f}, 0.04f, 4, 0.25f, 0.8f, 1, 4, 3, 8, 5);
  add("roads", ShapeKind::band, {0.20f, 0.23f, 0.23f, 0.24f}, 0.03f, 2, 0.10f, 0.7f, 1, 2, 2, 3.5f, 3);
  add("railroads", ShapeKind::rail, {0.27f, 0.26f, 0.23f, 0.20f}, 0.05f, 1, 0.10f, 0.3f, 1, 1, 1.2f, 2, 4);
  c.pretrain_class_map = {0, 1, 0, 0, 0, 2, 3, 0};
  c.pretrain_class_names = {"background", "trees", "buildings", "roads"};
  return c;
}

std::vector<std::string> SceneConfig::exact_class_names() const {
  std::vector<std::string> names;
  names.reserve(classes.size());
  for (const auto& c : classes) names.push_back(c.name);
  return names;
}

void SceneConfig::validate() const {
  if (patch_size < 8 || patch_size > 4096) throw ConfigError("patch_size", "must be in [8, 4096]");
  if (channels < 1 || channels > 64) throw ConfigError("channels", "must be in [1, 64]");
  if (classes.empty()) throw ConfigError("class_spec", "at least one class required");
  if (classes.size() > 255) throw ConfigError("class_spec", "at most 255 classes");
  if (classes[0].name != "background") throw ConfigError("class_spec[0].name", "class 0 must be background");
  for (std::size_t i = 0; i < classes.size(); ++i) {
    const auto& s = classes[i];
    const std::string f = "class_spec[" + std::to_string(i) + "]";
    if (s.name.empty()) throw ConfigError(f + ".name", "empty class name");
    if (static_cast<int>(s.signature.size()) != channels) {
      throw ConfigError(f + ".signature", "needs one value per channel");
    }
    for (float v : s.signature) {
      if (!(v >= 0.0f && v <= 1.0f)) throw ConfigError(f + ".signature", "values must be in [0,1]");
    }
    if (!(s.presence >= 0.0f && s.presence <= 1.0f)) throw ConfigError(f + ".presence", "must be in [0,1]");
    if (!(s.texture >= 0.0f) || !(s.jitter >= 0.0f && s.jitter < 1.0f)) {
      throw ConfigError(f + ".texture", "texture must be >= 0 and jitter in [0,1)");
    }
    if (s.texture_cell < 1) throw ConfigError(f + ".texture_cell", "must be >= 1");
    if (i > 0) {
      if (s.shape == ShapeKind::fill) throw ConfigError(f + ".shape", "only class 0 may use the fill shape");
      if (s.min_count < 0 || s.max_count < s.min_count) throw ConfigError(f + ".count", "need 0 <= min <= max");
      if (!(s.min_size > 0.0f) || s.max_size < s.min_size) throw ConfigError(f + ".size", "need 0 < min <= max");
    }
  }
  if (pretrain_class_map.size() != classes.size()) {
    throw ConfigError("pretrain_class_map", "must map every exact class exactly once");
  }
  if (pretrain_class_names.empty() || pretrain_class_names.size() > 255) {
    throw ConfigError("pretrain_class_names", "need 1..255 names");
  }
  if (pretrain_class_names[0] != "background") throw ConfigError("pretrain_class_names", "class 0 must be background");
  if (pretrain_class_map[0] != 0) throw ConfigError("pretrain_class_map", "background must map to background");
  std::vector<bool> hit(pretrain_class_names.size(), false);
  for (int target : pretrain_class_map) {
    if (target < 0 || target >= static_cast<int>(pretrain_class_names.size())) {
      throw ConfigError("pretrain_class_map", "target class out of range");
    }
    hit[static_cast<std::size_t>(target)] = true;
  }
  if (!std::all_of(hit.begin(), hit.end(), [](bool b) { return b; })) {
    throw ConfigError("pretrain_class_map", "must be a surjection onto the pretraining classes");
  }
}

std::vector<float> value_noise(int height, int width, int cell, std::uint64_t seed) {
  Rng rng(mix_seed(seed));
  std::vector<float> out(static_cast<std::size_t>(height) * width);
  if (cell <= 1) {
    for (auto& v : out) v = static_cast<float>(2.0 * uniform01(rng) - 1.0);
    return out;
  }
  const int gh = height / cell + 2;
  const int gw = width / cell + 2;
  std::vector<float> grid(static_cast<std::size_t>(gh) * gw);
  for (auto& v : grid) v = static_cast<float>(2.0 * uniform01(rng) - 1.0);
  // Random sub-cell phase so lattice points do not align across patches.
  const float oy = static_cast<float>(uniform01(rng) * cell);
  const float ox = static_cast<float>(uniform01(rng) * cell);
  for (int y = 0; y < height; ++y) {
    const float fy = (static_cast<float>(y) + oy) / static_cast<float>(cell);
    const int y0 = std::min(static_cast<int>(fy), gh - 2);
    const float ty = fy - static_cast<float>(y0);
    for (int x = 0; x < width; ++x) {
      const float fx = (static_cast<float>(x) + ox) / static_cast<float>(cell);
      const int x0 = std::min(static_cast<int>(fx), gw - 2);
      const float tx = fx - static_cast<float>(x0);
      const auto g = [&](int yy, int xx) { return grid[static_cast<std::size_t>(yy) * gw + xx]; };
      const float top = g(y0, x0) * (1 - tx) + g(y0, x0 + 1) * tx;
      const float bot = g(y0 + 1, x0) * (1 - tx) + g(y0 + 1, x0 + 1) * tx;
      out[static_cast<std::size_t>(y) * width + x] = top * (1 - ty) + bot * ty;
    }
  }
  return out;
}

namespace {

struct Instance {
  int cls = 0;
  float brightness = 1.0f;
};

// Per-pixel shading factor written by the rasterizers; 1 = neutral.
struct Canvas {
  int size;
  LabelMask& mask;
  std::vector<int>& instance;
  std::vector<float>& shade;

  void paint(int y, int x, int cls, int id, float s) {
    const std::size_t i = static_cast<std::size_t>(y) * size + x;
    mask.values[i] = static_cast<std::uint8_t>(cls);
    instance[i] = id;
    shade[i] = s;
  }
};

void draw_clumps(Canvas& cv, const ClassSpec& s, int cls, int id, Rng& rng) {
  const double cx = uniform01(rng) * cv.size;
  const double cy = uniform01(rng) * cv.size;
  const int n = 3 + static_cast<int>(uniform_index(rng, 5));
  struct Disc {
    double x, y, r;
  };
  std::vector<Disc> discs;
  for (int k = 0; k < n; ++k) {
    const double r = s.min_size + uniform01(rng) * (s.max_size - s.min_size);
    discs.push_back({cx + normal(rng, 0.0, s.max_size), cy + normal(rng, 0.0, s.max_size), r});
  }
  for (int y = 0; y < cv.size; ++y) {
    for (int x = 0; x < cv.size; ++x) {
      const double px = x + 0.5;
      const double py = y + 0.5;
      double best = -1.0;
      for (const auto& d : discs) {
        const double dist = std::hypot(px - d.x, py - d.y);
        if (dist <= d.r) best = std::max(best, 1.0 - dist / d.r);
      }
      if (best >= 0.0) cv.paint(y, x, cls, id, static_cast<float>(0.7 + 0.45 * best));
    }
  }
}

void draw_region(Canvas& cv, const ClassSpec& s, int cls, int id, Rng& rng) {
  const double cx = uniform01(rng) * cv.size;
  const double cy = uniform01(rng) * cv.size;
  const double r0 = s.min_size + uniform01(rng) * (s.max_size - s.min_size);
  std::array<double, 3> amp{}, phase{};
  for (int k = 0; k < 3; ++k) {
    amp[static_cast<std::size_t>(k)] = uniform01(rng) * 0.3 / (k + 1);
    phase[static_cast<std::size_t>(k)] = uniform01(rng) * 2.0 * M_PI;
  }
  for (int y = 0; y < cv.size; ++y) {
    for (int x = 0; x < cv.size; ++x) {
      const double dx = x + 0.5 - cx;
      const double dy = y + 0.5 - cy;
      const double theta = std::atan2(dy, dx);
      double r = r0;
      for (int k = 0; k < 3; ++k) {
        r += r0 * amp[static_cast<std::size_t>(k)] * std::sin((k + 2) * theta + phase[static_cast<std::size_t>(k)]);
      }
      if (std::hypot(dx, dy) <= r) cv.paint(y, x, cls, id, 1.0f);
    }
  }
}

void draw_rectangle(Canvas& cv, const ClassSpec& s, int cls, int id, Rng& rng) {
  const double cx = uniform01(rng) * cv.size;
  const double cy = uniform01(rng) * cv.size;
  const double a = s.min_size + uniform01(rng) * (s.max_size - s.min_size);
  const double b = s.min_size + uniform01(rng) * (s.max_size - s.min_size);
  const double angle = bernoulli(rng, 0.5) ? 0.0 : uniform01(rng) * M_PI / 2.0;
  const double ca = std::cos(angle);
  const double sa = std::sin(angle);
  for (int y = 0; y < cv.size; ++y) {
    for (int x = 0; x < cv.size; ++x) {
      const double dx = x + 0.5 - cx;
      const double dy = y + 0.5 - cy;
      const double u = std::abs(ca * dx + sa * dy);
      const double v = std::abs(-sa * dx + ca * dy);
      if (u <= a && v <= b) {
        const bool edge = std::min(a - u, b - v) < 1.2;
        cv.paint(y, x, cls, id, edge ? 0.6f : 1.0f);
      }
    }
  }
}

void draw_strip(Canvas& cv, const ClassSpec& s, int cls, int id, Rng& rng, bool rail) {
  const double cx = uniform01(rng) * cv.size;
  const double cy = uniform01(rng) * cv.size;
  const double half = s.min_size + uniform01(rng) * (s.max_size - s.min_size);
  const int quadrant = static_cast<int>(uniform_index(rng, 3));
  const double angle = quadrant == 0 ? 0.0 : quadrant == 1 ? M_PI / 2.0 : uniform01(rng) * M_PI;
  const double ca = std::cos(angle);
  const double sa = std::sin(angle);
  for (int y = 0; y < cv.size; ++y) {
    for (int x = 0; x < cv.size; ++x) {
      const double dx = x + 0.5 - cx;
      const double dy = y + 0.5 - cy;
      const double along = ca * dx + sa * dy;
      const double across = -sa * dx + ca * dy;
      if (std::abs(across) > half) continue;
      float shade = 1.0f;
      const double phase = std::fmod(std::abs(along), rail ? 4.0 : 8.0);
      if (rail) {
        if (phase < 1.5) shade = 0.65f;                       // ties
        else if (std::abs(std::abs(across) - half * 0.6) < 0.5) shade = 1.5f;  // rails
      } else if (std::abs(across) < 0.6 && phase < 4.0) {
        shade = 1.8f;  // dashed centre line
      }
      cv.paint(y, x, cls, id, shade);
    }
  }
}

}  // namespace

Scene generate_scene(const SceneConfig& config, std::uint64_t seed) {
  config.validate();
  const int n = config.patch_size;
  const int channels = config.channels;
  const std::size_t pixels = static_cast<std::size_t>(n) * n;
  Rng rng(mix_seed(seed));

  Scene scene{Tensor({channels, n, n}), LabelMask(n, n, 0)};
  std::vector<int> instance(pixels, -1);
  std::vector<float> shade(pixels, 1.0f);
  std::vector<Instance> instances;
  Canvas canvas{n, scene.mask, instance, shade};

  std::vector<int> order(config.classes.size() - 1);
  std::iota(order.begin(), order.end(), 1);
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return config.classes[a].z_order < config.classes[b].z_order; });

  for (int cls : order) {
    const auto& spec = config.classes[static_cast<std::size_t>(cls)];
    if (!bernoulli(rng, spec.presence)) continue;
    const int count = spec.min_count + static_cast<int>(uniform_index(rng, spec.max_count - spec.min_count + 1));
    for (int k = 0; k < count; ++k) {
      const int id = static_cast<int>(instances.size());
      const float brightness = static_cast<float>(1.0 + spec.jitter * (2.0 * uniform01(rng) - 1.0));
      instances.push_back({cls, brightness});
      switch (spec.shape) {
        case ShapeKind::clumps: draw_clumps(canvas, spec, cls, id, rng); break;
        case ShapeKind::region: draw_region(canvas, spec, cls, id, rng); break;
        case ShapeKind::rectangle: draw_rectangle(canvas, spec, cls, id, rng); break;
        case ShapeKind::band: draw_strip(canvas, spec, cls, id, rng, false); break;
        case ShapeKind::rail: draw_strip(canvas, spec, cls, id, rng, true); break;
        case ShapeKind::fill: break;
      }
    }
  }

  // Radiometry: class signature x instance brightness x shading, plus a
  // class texture, a smooth illumination field and sensor noise.
  std::vector<std::vector<float>> textures;
  for (std::size_t c = 0; c < config.classes.size(); ++c) {
    textures.push_back(value_noise(n, n, config.classes[c].texture_cell, derive_seed(seed, 100 + c)));
  }
  const auto illumination = value_noise(n, n, 32, derive_seed(seed, 1));
  const double gain = 0.85 + 0.3 * uniform01(rng);
  std::vector<double> offset(static_cast<std::size_t>(channels));
  for (auto& o : offset) o = normal(rng, 0.0, 0.02);
  Rng sensor(derive_seed(seed, 2));

  for (std::size_t i = 0; i < pixels; ++i) {
    const int cls = scene.mask.values[i];
    const auto& spec = config.classes[static_cast<std::size_t>(cls)];
    const float brightness = instance[i] >= 0 ? instances[static_cast<std::size_t>(instance[i])].brightness : 1.0f;
    const float tex = spec.texture * textures[static_cast<std::size_t>(cls)][i];
    const double light = gain * (1.0 + 0.1 * illumination[i]);
    for (int c = 0; c < channels; ++c) {
      const double base = spec.signature[static_cast<std::size_t>(c)] * brightness * shade[i] + tex;
      const double value = base * light + offset[static_cast<std::size_t>(c)] + normal(sensor, 0.0, 0.01);
      scene.image[static_cast<std::size_t>(c) * pixels + i] = static_cast<float>(std::clamp(value, 0.0, 1.0));
    }
  }
  return scene;
}

Tensor seasonal_variant(const Scene& scene, int variant_id, std::uint64_t seed) {
  if (variant_id == 0) return scene.image;
  Rng rng(derive_seed(seed, 0x5ea5000ULL + static_cast<std::uint64_t>(variant_id)));
  const int channels = scene.image.dim(0);
  const std::size_t pixels = static_cast<std::size_t>(scene.image.dim(1)) * scene.image.dim(2);
  std::vector<double> gain(static_cast<std::size_t>(channels));
  for (auto& g : gain) g = 0.85 + 0.3 * uniform01(rng);
  // Vegetation (NIR above red) loses NIR response off-season.
  const double vegetation = 0.6 + 0.4 * uniform01(rng);
  Tensor out = scene.image;
  for (std::size_t i = 0; i < pixels; ++i) {
    const bool green = channels >= 2 && scene.image[i] > scene.image[pixels + i];
    for (int c = 0; c < channels; ++c) {
      double v = scene.image[static_cast<std::size_t>(c) * pixels + i] * gain[static_cast<std::size_t>(c)];
      if (c == 0 && green) v *= vegetation;
      v += normal(rng, 0.0, 0.01);
      out[static_cast<std::size_t>(c) * pixels + i] = static_cast<float>(std::clamp(v, 0.0, 1.0));
    }
  }
  return out;
}

}  // namespace noisylab::data
