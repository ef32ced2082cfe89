#include "noisylab/data/noise.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "noisylab/data/quality.hpp"

namespace noisylab::data {

void NoiseConfig::validate() const {
  if (!(object_drop_prob >= 0.0 && object_drop_prob <= 1.0)) throw ConfigError("object_drop_prob", "must be in [0,1]");
  if (!(class_swap_prob >= 0.0 && class_swap_prob <= 1.0)) throw ConfigError("class_swap_prob", "must be in [0,1]");
  if (boundary_radius < 0) throw ConfigError("boundary_radius", "must be >= 0");
  if (!(blob_fp_rate >= 0.0) || !std::isfinite(blob_fp_rate)) throw ConfigError("blob_fp_rate", "must be >= 0");
}

namespace {

struct Component {
  int cls;
  std::vector<int> pixels;  // linear indices
};

std::vector<Component> connected_components(const LabelMask& mask) {
  const int h = mask.height;
  const int w = mask.width;
  std::vector<int> seen(mask.size(), 0);
  std::vector<Component> out;
  std::vector<int> stack;
  for (int start = 0; start < h * w; ++start) {
    if (seen[static_cast<std::size_t>(start)] || mask.values[static_cast<std::size_t>(start)] == 0) continue;
    Component comp{mask.values[static_cast<std::size_t>(start)], {}};
    seen[static_cast<std::size_t>(start)] = 1;
    stack.push_back(start);
    while (!stack.empty()) {
      const int p = stack.back();
      stack.pop_back();
      comp.pixels.push_back(p);
      const int y = p / w;
      const int x = p % w;
      const int nbr[4][2] = {{y - 1, x}, {y + 1, x}, {y, x - 1}, {y, x + 1}};
      for (const auto& q : nbr) {
        if (q[0] < 0 || q[0] >= h || q[1] < 0 || q[1] >= w) continue;
        const int qi = q[0] * w + q[1];
        if (!seen[static_cast<std::size_t>(qi)] && mask.values[static_cast<std::size_t>(qi)] == comp.cls) {
          seen[static_cast<std::size_t>(qi)] = 1;
          stack.push_back(qi);
        }
      }
    }
    out.push_back(std::move(comp));
  }
  return out;
}

std::vector<std::pair<int, int>> disk_offsets(int radius) {
  std::vector<std::pair<int, int>> out;
  for (int dy = -radius; dy <= radius; ++dy) {
    for (int dx = -radius; dx <= radius; ++dx) {
      if (dy * dy + dx * dx <= radius * radius) out.emplace_back(dy, dx);
    }
  }
  return out;
}

// Poisson draw by inversion on our own uniform stream.
int poisson(Rng& rng, double rate) {
  if (rate <= 0.0) return 0;
  const double u = uniform01(rng);
  double p = std::exp(-rate);
  double cdf = p;
  int k = 0;
  while (u > cdf && k < 1000) {
    ++k;
    p *= rate / k;
    cdf += p;
  }
  return k;
}

}  // namespace

LabelMask corrupt_mask(const LabelMask& exact_mask, const std::vector<int>& class_map, const NoiseConfig& noise) {
  noise.validate();
  const LabelMask reference = relabel(exact_mask, class_map);
  const int num_classes = class_map.empty() ? 1 : *std::max_element(class_map.begin(), class_map.end()) + 1;
  const int h = reference.height;
  const int w = reference.width;

  LabelMask out(h, w, 0);
  Rng rng(mix_seed(noise.rng_seed));
  std::vector<std::uint8_t> member(reference.size(), 0);

  for (const auto& comp : connected_components(reference)) {
    // Fixed draw budget per object.
    const double u_drop = uniform01(rng);
    const double u_swap = uniform01(rng);
    const auto swap_pick = rng();
    const double u_radius = uniform01(rng);
    const bool dilate = bernoulli(rng, 0.5);

    if (u_drop < noise.object_drop_prob) continue;
    int cls = comp.cls;
    if (num_classes > 2 && u_swap < noise.class_swap_prob) {
      // Uniform over the other foreground classes.
      const int pick = static_cast<int>(swap_pick % static_cast<std::uint64_t>(num_classes - 2));
      cls = 1 + pick + (1 + pick >= comp.cls ? 1 : 0);
    }
    const int radius = std::min(noise.boundary_radius,
                                static_cast<int>(u_radius * (noise.boundary_radius + 1)));

    if (radius == 0) {
      for (int p : comp.pixels) out.values[static_cast<std::size_t>(p)] = static_cast<std::uint8_t>(cls);
      continue;
    }
    for (int p : comp.pixels) member[static_cast<std::size_t>(p)] = 1;
    const auto offsets = disk_offsets(radius);
    if (dilate) {
      for (int p : comp.pixels) {
        out.values[static_cast<std::size_t>(p)] = static_cast<std::uint8_t>(cls);
        const int y = p / w;
        const int x = p % w;
        for (const auto& [dy, dx] : offsets) {
          const int yy = y + dy;
          const int xx = x + dx;
          if (yy < 0 || yy >= h || xx < 0 || xx >= w) continue;
          const std::size_t q = static_cast<std::size_t>(yy) * w + xx;
          if (reference.values[q] == 0) out.values[q] = static_cast<std::uint8_t>(cls);
        }
      }
    } else {
      // Erode; the image border counts as inside the object.
      for (int p : comp.pixels) {
        const int y = p / w;
        const int x = p % w;
        bool keep = true;
        for (const auto& [dy, dx] : offsets) {
          const int yy = y + dy;
          const int xx = x + dx;
          if (yy < 0 || yy >= h || xx < 0 || xx >= w) continue;
          if (!member[static_cast<std::size_t>(yy) * w + xx]) {
            keep = false;
            break;
          }
        }
        if (keep) out.values[static_cast<std::size_t>(p)] = static_cast<std::uint8_t>(cls);
      }
    }
    for (int p : comp.pixels) member[static_cast<std::size_t>(p)] = 0;
  }

  if (num_classes > 1) {
    Rng blob_rng(derive_seed(noise.rng_seed, 0xb10bULL));
    const int blobs = poisson(blob_rng, noise.blob_fp_rate);
    for (int b = 0; b < blobs; ++b) {
      const double cy = uniform01(blob_rng) * h;
      const double cx = uniform01(blob_rng) * w;
      const double r = 2.0 + 4.0 * uniform01(blob_rng);
      const int cls = 1 + static_cast<int>(uniform_index(blob_rng, static_cast<std::uint64_t>(num_classes - 1)));
      for (int y = std::max(0, static_cast<int>(cy - r)); y < std::min(h, static_cast<int>(cy + r) + 1); ++y) {
        for (int x = std::max(0, static_cast<int>(cx - r)); x < std::min(w, static_cast<int>(cx + r) + 1); ++x) {
          if (std::hypot(y + 0.5 - cy, x + 0.5 - cx) <= r) out.at(y, x) = static_cast<std::uint8_t>(cls);
        }
      }
    }
  }
  return out;
}

CalibrationError::CalibrationError(double target, double best_achieved, NoiseConfig best)
    : NumericalError([&] {
        std::ostringstream os;
        os << "noise calibration failed: target mean IoU " << target << ", best achieved " << best_achieved;
        return os.str();
      }()),
      target_(target),
      best_achieved_(best_achieved),
      best_(best) {}

NoiseConfig noise_at_severity(const CalibrationOptions& options, double severity) {
  const auto lerp = [severity](double a, double b) { return a + severity * (b - a); };
  NoiseConfig n;
  n.object_drop_prob = lerp(options.lower.object_drop_prob, options.upper.object_drop_prob);
  n.boundary_radius = static_cast<int>(
      std::lround(lerp(options.lower.boundary_radius, options.upper.boundary_radius)));
  n.blob_fp_rate = lerp(options.lower.blob_fp_rate, options.upper.blob_fp_rate);
  n.class_swap_prob = lerp(options.lower.class_swap_prob, options.upper.class_swap_prob);
  n.rng_seed = options.seed;
  return n;
}

double measure_mean_iou(const std::vector<Scene>& scenes, const std::vector<std::uint64_t>& scene_seeds,
                        const SceneConfig& config, const NoiseConfig& noise) {
  std::vector<LabelMask> reference;
  std::vector<LabelMask> noisy;
  reference.reserve(scenes.size());
  noisy.reserve(scenes.size());
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    NoiseConfig patch_noise = noise;
    patch_noise.rng_seed = patch_noise_seed(noise.rng_seed, scene_seeds[i]);
    reference.push_back(relabel(scenes[i].mask, config.pretrain_class_map));
    noisy.push_back(corrupt_mask(scenes[i].mask, config.pretrain_class_map, patch_noise));
  }
  return assess_label_quality(reference, noisy, config.pretrain_class_names).mean_iou;
}

NoiseConfig calibrate_noise(double target_mean_iou, int corpus_size, const SceneConfig& config,
                            const CalibrationOptions& options) {
  if (!(target_mean_iou > 0.0 && target_mean_iou <= 1.0)) throw ConfigError("target_mean_iou", "must be in (0,1]");
  if (corpus_size < 1) throw ConfigError("corpus_size", "must be >= 1");
  if (options.grid_points < 2) throw ConfigError("grid_points", "must be >= 2");
  options.lower.validate();
  options.upper.validate();
  config.validate();

  std::vector<Scene> scenes;
  std::vector<std::uint64_t> seeds;
  for (int i = 0; i < corpus_size; ++i) {
    seeds.push_back(derive_seed(options.seed, 0xca1ULL) ^ static_cast<std::uint64_t>(i));
    scenes.push_back(generate_scene(config, seeds.back()));
  }

  double best_t = 0.0;
  double best_iou = 0.0;
  double best_err = std::numeric_limits<double>::infinity();
  auto probe = [&](double t) {
    const double iou = measure_mean_iou(scenes, seeds, config, noise_at_severity(options, t));
    const double err = std::abs(iou - target_mean_iou);
    if (err < best_err) {
      best_err = err;
      best_t = t;
      best_iou = iou;
    }
    return iou;
  };

  std::vector<double> grid_iou;
  const int g = options.grid_points;
  for (int i = 0; i < g; ++i) {
    grid_iou.push_back(probe(static_cast<double>(i) / (g - 1)));
    if (best_err == 0.0) return noise_at_severity(options, best_t);
  }
  for (int i = 0; i + 1 < g; ++i) {
    if (grid_iou[static_cast<std::size_t>(i)] >= target_mean_iou &&
        grid_iou[static_cast<std::size_t>(i) + 1] <= target_mean_iou) {
      double lo = static_cast<double>(i) / (g - 1);
      double hi = static_cast<double>(i + 1) / (g - 1);
      for (int step = 0; step < options.refine_steps; ++step) {
        const double mid = 0.5 * (lo + hi);
        (probe(mid) >= target_mean_iou ? lo : hi) = mid;
      }
      break;
    }
  }
  const NoiseConfig best = noise_at_severity(options, best_t);
  if (best_err > options.tolerance) throw CalibrationError(target_mean_iou, best_iou, best);
  return best;
}

}  // namespace noisylab::data
