#include <catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "noisylab/analysis/metrics.hpp"
#include "noisylab/analysis/statistics.hpp"
#include "noisylab/common.hpp"
#include "noisylab/data/noise.hpp"
#include "noisylab/data/patch_io.hpp"
#include "noisylab/data/quality.hpp"
#include "noisylab/data/scene.hpp"
#include "noisylab/models/checkpoint.hpp"
#include "noisylab/models/model.hpp"
#include "noisylab/training/loss.hpp"

using namespace noisylab;
using Catch::Matchers::WithinAbs;

namespace {

data::LabelMask random_mask(Rng& rng, int h, int w, int k) {
  data::LabelMask m(h, w);
  for (auto& v : m.values) v = static_cast<std::uint8_t>(uniform_index(rng, static_cast<std::uint64_t>(k)));
  return m;
}

}  // namespace

TEST_CASE("gaussian_kl is non-negative and vanishes only for equal parameters", "[property][kl]") {
  Rng rng(1);
  for (int i = 0; i < 2000; ++i) {
    const double mp = normal(rng, 0.0, 2.0);
    const double vp = 0.01 + 3.0 * uniform01(rng);
    const double mq = normal(rng, 0.0, 2.0);
    const double vq = 0.01 + 3.0 * uniform01(rng);
    REQUIRE(analysis::gaussian_kl(mp, vp, mq, vq) > 1e-12);
    REQUIRE(std::abs(analysis::gaussian_kl(mp, vp, mp, vp)) <= 1e-12);
  }
}

TEST_CASE("IoU equals pr / (p + r - pr) for every class of a pooled confusion", "[property][quality]") {
  Rng rng(2);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<data::LabelMask> a;
    std::vector<data::LabelMask> b;
    for (int i = 0; i < 4; ++i) {
      a.push_back(random_mask(rng, 8, 8, 5));
      b.push_back(random_mask(rng, 8, 8, 5));
    }
    const auto r = data::assess_label_quality(a, b, {"a", "b", "c", "d", "e"});
    for (const auto& c : r.per_class) {
      if (!c.iou || !c.precision || !c.recall) continue;
      const double p = *c.precision;
      const double q = *c.recall;
      if (p == 0.0 && q == 0.0) {
        REQUIRE(*c.iou == 0.0);
      } else {
        REQUIRE_THAT(*c.iou, WithinAbs(p * q / (p + q - p * q), 1e-12));
      }
      REQUIRE(*c.iou <= std::min(p, q) + 1e-15);
    }
  }
}

TEST_CASE("quality is invariant to patch order and shared with evaluate_segmentation", "[property][quality]") {
  Rng rng(3);
  std::vector<data::LabelMask> a;
  std::vector<data::LabelMask> b;
  for (int i = 0; i < 6; ++i) {
    a.push_back(random_mask(rng, 6, 7, 4));
    b.push_back(random_mask(rng, 6, 7, 4));
  }
  const std::vector<std::string> names{"w", "x", "y", "z"};
  const auto r1 = data::assess_label_quality(a, b, names);
  std::vector<std::size_t> order(a.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<data::LabelMask> a2;
  std::vector<data::LabelMask> b2;
  for (auto i : order) {
    a2.push_back(a[i]);
    b2.push_back(b[i]);
  }
  const auto r2 = data::assess_label_quality(a2, b2, names);
  CHECK(r1.overall_accuracy == r2.overall_accuracy);
  const auto m = analysis::evaluate_segmentation(b, a, names);
  for (std::size_t k = 0; k < names.size(); ++k) {
    CHECK(r1.per_class[k].iou == r2.per_class[k].iou);
    CHECK(r1.per_class[k].iou == m.per_class[k].iou);
  }
  CHECK(m.mean_iou == r1.mean_iou);
}

TEST_CASE("raising the drop probability never raises foreground recall", "[property][noise]") {
  const auto cfg = data::SceneConfig::defaults();
  std::vector<data::LabelMask> exact;
  std::vector<data::Scene> scenes;
  for (std::uint64_t s = 0; s < 100; ++s) {
    scenes.push_back(data::generate_scene(cfg, s));
    exact.push_back(data::relabel(scenes.back().mask, cfg.pretrain_class_map));
  }
  std::vector<double> previous(4, 2.0);
  for (double drop : {0.0, 0.2, 0.4, 0.6, 0.8, 1.0}) {
    std::vector<data::LabelMask> noisy;
    for (std::uint64_t s = 0; s < scenes.size(); ++s) {
      noisy.push_back(data::corrupt_mask(scenes[s].mask, cfg.pretrain_class_map, data::NoiseConfig{drop, 2, 1.0, 0.2, s}));
    }
    const auto r = data::assess_label_quality(exact, noisy, cfg.pretrain_class_names);
    for (std::size_t k = 1; k < 4; ++k) {
      INFO("drop " << drop << " class " << k);
      REQUIRE(*r.per_class[k].recall <= previous[k] + 1e-12);
      previous[k] = *r.per_class[k].recall;
    }
  }
}

TEST_CASE("patch encoding is a byte-level bijection on random triples", "[property][patch_io]") {
  Rng rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    const int c = 1 + static_cast<int>(uniform_index(rng, 5));
    const int h = 1 + static_cast<int>(uniform_index(rng, 20));
    const int w = 1 + static_cast<int>(uniform_index(rng, 20));
    data::PatchTriple t;
    t.image = Tensor({c, h, w});
    for (auto& v : t.image.values()) v = static_cast<float>(uniform01(rng));
    t.num_exact_classes = 8;
    t.num_noisy_classes = 4;
    t.exact_mask = random_mask(rng, h, w, 8);
    t.noisy_mask = random_mask(rng, h, w, 4);
    t.variant_id = static_cast<std::uint16_t>(uniform_index(rng, 65536));
    t.seed = rng();
    const auto bytes = data::encode_patch(t);
    const auto back = data::decode_patch(bytes);
    REQUIRE(back == t);
    REQUIRE(data::encode_patch(back) == bytes);
  }
}

TEST_CASE("dominant component is invariant under channel permutation", "[property][pca]") {
  Rng rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    const int c = 2 + static_cast<int>(uniform_index(rng, 6));
    Tensor cube({c, 9, 11});
    // Distinct channel scales keep the leading eigenvalue simple.
    for (int ch = 0; ch < c; ++ch) {
      for (int i = 0; i < 99; ++i) {
        cube[static_cast<std::size_t>(ch) * 99 + static_cast<std::size_t>(i)] =
            static_cast<float>(normal(rng, 0.0, 1.0 + ch) + (i % 7) * 0.3);
      }
    }
    std::vector<int> perm(static_cast<std::size_t>(c));
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    Tensor permuted({c, 9, 11});
    for (int ch = 0; ch < c; ++ch) {
      std::copy_n(cube.data() + static_cast<std::size_t>(perm[static_cast<std::size_t>(ch)]) * 99, 99,
                  permuted.data() + static_cast<std::size_t>(ch) * 99);
    }
    const auto a = analysis::dominant_component_image(cube);
    const auto b = analysis::dominant_component_image(permuted);
    for (std::size_t i = 0; i < a.size(); ++i) REQUIRE_THAT(a[i], WithinAbs(b[i], 1e-6));
  }
}

TEST_CASE("shuffled labels do not beat the true labels' fisher ratio", "[property][fisher]") {
  Rng rng(6);
  const int h = 16;
  const int w = 16;
  data::LabelMask labels(h, w);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) labels.at(y, x) = static_cast<std::uint8_t>((x / 6) % 3);
  }
  Tensor cube({3, h, w});
  for (int c = 0; c < 3; ++c) {
    for (int i = 0; i < h * w; ++i) {
      cube[static_cast<std::size_t>(c * h * w + i)] =
          static_cast<float>(0.5 * labels.values[static_cast<std::size_t>(i)] * (c + 1) + normal(rng));
    }
  }
  const double original = analysis::fisher_ratio(cube, labels, 3);
  int exceed = 0;
  for (int trial = 0; trial < 100; ++trial) {
    auto shuffled = labels;
    std::shuffle(shuffled.values.begin(), shuffled.values.end(), rng);
    if (analysis::fisher_ratio(cube, shuffled, 3) >= original) ++exceed;
  }
  CHECK(exceed <= 5);
}

TEST_CASE("savgol smoothing is linear", "[property][savgol]") {
  Rng rng(7);
  std::vector<double> a(15);
  std::vector<double> b(15);
  std::vector<double> sum(15);
  for (std::size_t i = 0; i < a.size(); ++i) {
    a[i] = normal(rng);
    b[i] = normal(rng);
    sum[i] = 2.0 * a[i] - 3.0 * b[i];
  }
  const auto sa = analysis::savgol_smooth(a);
  const auto sb = analysis::savgol_smooth(b);
  const auto ss = analysis::savgol_smooth(sum);
  for (std::size_t i = 0; i < a.size(); ++i) REQUIRE_THAT(ss[i], WithinAbs(2.0 * sa[i] - 3.0 * sb[i], 1e-10));
}

TEST_CASE("loss gradients sum to zero over classes at every pixel", "[property][loss]") {
  Rng rng(8);
  for (int trial = 0; trial < 10; ++trial) {
    Tensor logits({2, 4, 3, 5});
    for (auto& v : logits.values()) v = static_cast<float>(normal(rng, 0.0, 3.0));
    std::vector<std::uint8_t> t(30);
    for (auto& v : t) v = static_cast<std::uint8_t>(uniform_index(rng, 4));
    const auto r = training::combined_loss(logits, t, {uniform01(rng), uniform01(rng) + 0.1});
    REQUIRE(r.value >= 0.0);
    for (int n = 0; n < 2; ++n) {
      for (int y = 0; y < 3; ++y) {
        for (int x = 0; x < 5; ++x) {
          double s = 0.0;
          for (int c = 0; c < 4; ++c) s += r.grad.at(n, c, y, x);
          REQUIRE(std::abs(s) < 1e-6);
        }
      }
    }
  }
}

TEST_CASE("output resolution equals input resolution for random valid sizes", "[property][models]") {
  Rng rng(9);
  models::EncoderSpec spec;
  spec.stage_widths = {4, 8, 8};
  spec.blocks_per_stage = 1;
  for (auto kind : {models::FrameworkKind::unet, models::FrameworkKind::aspp, models::FrameworkKind::pyramid}) {
    models::SegmentationModel m(spec, kind, 3, 1);
    for (int trial = 0; trial < 4; ++trial) {
      const int h = 8 * (1 + static_cast<int>(uniform_index(rng, 6)));
      const int w = 8 * (1 + static_cast<int>(uniform_index(rng, 6)));
      const auto y = m.forward(Tensor({1, 4, h, w}, 0.3f), trial % 2 == 0);
      REQUIRE(y.shape() == Shape{1, 3, h, w});
    }
  }
}

TEST_CASE("encoder transplant commutes across all three frameworks", "[property][checkpoint]") {
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    models::SegmentationModel unet(models::EncoderSpec{}, models::FrameworkKind::unet, 4, seed);
    const auto source = models::export_checkpoint(unet);
    models::SegmentationModel aspp(models::EncoderSpec{}, models::FrameworkKind::aspp, 8, seed + 10);
    models::import_checkpoint(source, aspp, models::ImportScope::encoder_only);
    models::SegmentationModel pyramid(models::EncoderSpec{}, models::FrameworkKind::pyramid, 6, seed + 20);
    models::import_checkpoint(models::export_checkpoint(aspp), pyramid, models::ImportScope::encoder_only);
    const auto bytes = models::encoder_bytes(source);
    CHECK(models::encoder_bytes(models::export_checkpoint(aspp)) == bytes);
    CHECK(models::encoder_bytes(models::export_checkpoint(pyramid)) == bytes);
  }
}
