#include "noisylab/data/augment.hpp"

#include "noisylab/common.hpp"

namespace noisylab::data {

AugmentPlan plan_augment(std::uint64_t seed, std::size_t num_variants) {
  Rng rng(mix_seed(seed));
  AugmentPlan plan;
  if (num_variants > 0) plan.variant = static_cast<std::size_t>(uniform_index(rng, num_variants));
  plan.hflip = bernoulli(rng, 0.5);
  plan.vflip = bernoulli(rng, 0.5);
  return plan;
}

namespace {

void flip_mask(LabelMask& m, bool h, bool v) {
  LabelMask out(m.height, m.width);
  for (int y = 0; y < m.height; ++y) {
    for (int x = 0; x < m.width; ++x) {
      out.at(y, x) = m.at(v ? m.height - 1 - y : y, h ? m.width - 1 - x : x);
    }
  }
  m = std::move(out);
}

}  // namespace

PatchTriple apply_augment(const PatchTriple& triple, std::span<const PatchTriple> variants, const AugmentPlan& plan) {
  for (const auto& v : variants) {
    if (v.image.shape() != triple.image.shape() || v.exact_mask.height != triple.exact_mask.height ||
        v.exact_mask.width != triple.exact_mask.width) {
      throw MismatchError("variant shape " + shape_string(v.image.shape()) + " differs from " +
                          shape_string(triple.image.shape()));
    }
  }
  PatchTriple out = plan.variant ? variants[*plan.variant] : triple;
  if (!plan.hflip && !plan.vflip) return out;

  const int c = out.channels();
  const int h = out.height();
  const int w = out.width();
  Tensor image({c, h, w});
  for (int ch = 0; ch < c; ++ch) {
    for (int y = 0; y < h; ++y) {
      const int sy = plan.vflip ? h - 1 - y : y;
      for (int x = 0; x < w; ++x) {
        const int sx = plan.hflip ? w - 1 - x : x;
        image[(static_cast<std::size_t>(ch) * h + y) * w + x] = out.image[(static_cast<std::size_t>(ch) * h + sy) * w + sx];
      }
    }
  }
  out.image = std::move(image);
  flip_mask(out.exact_mask, plan.hflip, plan.vflip);
  flip_mask(out.noisy_mask, plan.hflip, plan.vflip);
  return out;
}

PatchTriple augment(const PatchTriple& triple, std::span<const PatchTriple> variants, std::uint64_t seed) {
  return apply_augment(triple, variants, plan_augment(seed, variants.size()));
}

PatchTriple random_crop(const PatchTriple& triple, int size, std::uint64_t seed) {
  const int c = triple.channels();
  const int h = triple.height();
  const int w = triple.width();
  if (size <= 0 || size > h || size > w) throw ConfigError("crop_size", "must be in [1, patch size]");
  if (size == h && size == w) return triple;
  Rng rng(mix_seed(seed ^ 0xc809ULL));
  const int oy = static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(h - size + 1)));
  const int ox = static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(w - size + 1)));
  PatchTriple out = triple;
  out.image = Tensor({c, size, size});
  out.exact_mask = LabelMask(size, size);
  out.noisy_mask = LabelMask(size, size);
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      for (int ch = 0; ch < c; ++ch) {
        out.image[(static_cast<std::size_t>(ch) * size + y) * size + x] =
            triple.image[(static_cast<std::size_t>(ch) * h + y + oy) * w + x + ox];
      }
      out.exact_mask.at(y, x) = triple.exact_mask.at(y + oy, x + ox);
      out.noisy_mask.at(y, x) = triple.noisy_mask.at(y + oy, x + ox);
    }
  }
  return out;
}

}  // namespace noisylab::data
