#include <catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "noisylab/analysis/activations.hpp"
#include "noisylab/analysis/metrics.hpp"
#include "noisylab/analysis/profile.hpp"
#include "noisylab/analysis/statistics.hpp"
#include "noisylab/common.hpp"

using namespace noisylab;
using namespace noisylab::analysis;
using Catch::Matchers::WithinAbs;

namespace {

data::LabelMask mask_from_rows(std::initializer_list<std::initializer_list<int>> rows) {
  data::LabelMask m(static_cast<int>(rows.size()), static_cast<int>(rows.begin()->size()));
  std::size_t i = 0;
  for (const auto& r : rows) {
    for (int v : r) m.values[i++] = static_cast<std::uint8_t>(v);
  }
  return m;
}

double correlation(std::span<const float> a, std::span<const double> b) {
  const double n = static_cast<double>(a.size());
  double ma = 0.0;
  double mb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= n;
  mb /= n;
  double sab = 0.0;
  double saa = 0.0;
  double sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  return sab / std::sqrt(saa * sbb);
}

Tensor input_image(std::uint64_t seed) {
  Tensor t({4, 64, 64});
  Rng rng(seed);
  for (auto& v : t.values()) v = static_cast<float>(uniform01(rng));
  return t;
}

}  // namespace

TEST_CASE("evaluate_segmentation reproduces the 4x4 toy confusion", "[metrics]") {
  const std::vector<data::LabelMask> gt{mask_from_rows({{0, 0, 1, 1}, {0, 0, 1, 1}, {0, 0, 1, 1}, {0, 0, 1, 1}})};
  const std::vector<data::LabelMask> pred{mask_from_rows({{0, 1, 1, 1}, {0, 1, 1, 1}, {0, 1, 1, 1}, {0, 1, 1, 1}})};
  const auto m = evaluate_segmentation(pred, gt, {"a", "b"});
  CHECK(m.overall_accuracy == 0.75);
  CHECK(*m.per_class[0].iou == 0.5);
  CHECK_THAT(*m.per_class[1].iou, WithinAbs(2.0 / 3.0, 1e-15));
  CHECK_THAT(m.mean_iou, WithinAbs(0.5833333333333333, 1e-9));
  CHECK_THAT(m.average_accuracy, WithinAbs(0.75, 1e-15));
}

TEST_CASE("perfect predictions score one", "[metrics]") {
  const std::vector<data::LabelMask> gt{mask_from_rows({{0, 1, 2}, {2, 1, 0}})};
  const auto m = evaluate_segmentation(gt, gt, {"a", "b", "c"});
  CHECK(m.overall_accuracy == 1.0);
  CHECK(m.mean_iou == 1.0);
  CHECK(m.average_accuracy == 1.0);
}

TEST_CASE("average accuracy only covers classes present in the ground truth", "[metrics]") {
  const std::vector<data::LabelMask> gt{mask_from_rows({{0, 0}, {0, 0}})};
  const std::vector<data::LabelMask> pred{mask_from_rows({{0, 1}, {2, 0}})};
  const auto m = evaluate_segmentation(pred, gt, {"a", "b", "c"});
  CHECK(m.average_accuracy == 0.5);
  CHECK(m.overall_accuracy == 0.5);
  CHECK_FALSE(m.per_class[1].recall.has_value());
  CHECK_THROWS_AS(evaluate_segmentation(pred, gt, {"a", "b"}), MismatchError);
}

TEST_CASE("gaussian_kl closed forms", "[kl]") {
  CHECK_THAT(gaussian_kl(0.3, 2.0, 0.3, 2.0), WithinAbs(0.0, 1e-12));
  CHECK_THAT(gaussian_kl(0, 1, 1, 1), WithinAbs(0.5, 1e-12));
  CHECK_THAT(gaussian_kl(0, 1, 0, 4), WithinAbs(std::log(2.0) - 0.375, 1e-12));
  CHECK_THROWS_AS(gaussian_kl(0, 0, 0, 1), std::domain_error);
  CHECK_THROWS_AS(gaussian_kl(0, 1, 0, -1), std::domain_error);
}

TEST_CASE("savgol reproduces quadratics and constants", "[savgol]") {
  std::vector<double> q;
  for (int i = 0; i < 12; ++i) q.push_back(0.5 * i * i - 3.0 * i + 7.0);
  const auto sq = savgol_smooth(q);
  for (std::size_t i = 0; i < q.size(); ++i) CHECK_THAT(sq[i], WithinAbs(q[i], 1e-10));
  const std::vector<double> c(9, 4.25);
  const auto sc = savgol_smooth(c, 7, 3);
  for (double v : sc) CHECK_THAT(v, WithinAbs(4.25, 1e-12));
}

TEST_CASE("savgol matches the per-window least-squares oracle", "[savgol]") {
  // Independent normal-equation solve per truncated window.
  const std::vector<double> series{1, 2, 1, 3, 1, 4, 1};
  const std::vector<double> expected{1.0, 1.25, 2.0285714285714285, 1.6285714285714286, 2.7142857142857144, 2.35, 1.0};
  const auto out = savgol_smooth(series, 5, 2);
  REQUIRE(out.size() == expected.size());
  for (std::size_t i = 0; i < out.size(); ++i) CHECK_THAT(out[i], WithinAbs(expected[i], 1e-12));
}

TEST_CASE("savgol preconditions", "[savgol]") {
  const std::vector<double> s{1, 2, 3, 4};
  CHECK_THROWS(savgol_smooth(s, 4, 2));
  CHECK_THROWS(savgol_smooth(s, 5, 2));
  CHECK_THROWS(savgol_smooth(s, 3, 3));
}

TEST_CASE("dominant component of a single channel is the normalised channel", "[pca]") {
  Tensor cube({1, 3, 3}, std::vector<float>{1, 5, 2, 9, 3, 3, 2, 1, 7});
  const auto map = dominant_component_image(cube);
  REQUIRE(map.shape() == Shape{3, 3});
  // Skewness of the raw channel is positive, so no sign flip.
  for (std::size_t i = 0; i < 9; ++i) CHECK_THAT(map[i], WithinAbs((cube[i] - 1.0) / 8.0, 1e-6));
}

TEST_CASE("dominant component recovers a rank-1 pattern", "[pca]") {
  Rng rng(21);
  const int c = 6;
  const int h = 10;
  const int w = 12;
  std::vector<double> v(c);
  double norm = 0.0;
  for (auto& x : v) {
    x = normal(rng);
    norm += x * x;
  }
  for (auto& x : v) x /= std::sqrt(norm);
  std::vector<double> pattern(static_cast<std::size_t>(h) * w);
  for (auto& p : pattern) p = normal(rng);
  Tensor cube({c, h, w});
  for (int ch = 0; ch < c; ++ch) {
    for (std::size_t i = 0; i < pattern.size(); ++i) {
      cube[static_cast<std::size_t>(ch) * pattern.size() + i] = static_cast<float>(v[static_cast<std::size_t>(ch)] * pattern[i]);
    }
  }
  const auto map = dominant_component_image(cube);
  CHECK(std::abs(correlation(map.values(), pattern)) >= 1.0 - 1e-6);
  CHECK(*std::min_element(map.values().begin(), map.values().end()) == 0.0f);
  CHECK(*std::max_element(map.values().begin(), map.values().end()) == 1.0f);
}

TEST_CASE("constant cube maps to one half", "[pca]") {
  const auto map = dominant_component_image(Tensor({3, 4, 4}, 2.5f));
  for (float v : map.values()) CHECK(v == 0.5f);
  Tensor bad({1, 2, 2});
  bad[0] = std::nanf("");
  CHECK_THROWS_AS(dominant_component_image(bad), NumericalError);
}

TEST_CASE("fisher ratio of separable constant classes is huge", "[fisher]") {
  Tensor cube({1, 4, 8});
  data::LabelMask labels(4, 8);
  for (int i = 0; i < 32; ++i) {
    const bool one = i >= 16;
    labels.values[static_cast<std::size_t>(i)] = one ? 1 : 0;
    cube[static_cast<std::size_t>(i)] = one ? 3.0f : 1.0f;
  }
  const double r = fisher_ratio(cube, labels, 2);
  CHECK(r > 1e6);
  CHECK_THAT(r, WithinAbs(4.0 / 1e-8, 1.0));
}

TEST_CASE("fisher ratio of two unit gaussians two apart is about two", "[fisher]") {
  Rng rng(33);
  const int n = 20000;
  Tensor cube({1, 1, n});
  data::LabelMask labels(1, n);
  for (int i = 0; i < n; ++i) {
    const int k = i % 2;
    labels.values[static_cast<std::size_t>(i)] = static_cast<std::uint8_t>(k);
    cube[static_cast<std::size_t>(i)] = static_cast<float>(normal(rng, 2.0 * k, 1.0));
  }
  CHECK_THAT(fisher_ratio(cube, labels, 2), WithinAbs(2.0, 0.1));
}

TEST_CASE("fisher ratio needs two classes with enough pixels", "[fisher]") {
  Tensor cube({2, 4, 4}, 1.0f);
  data::LabelMask labels(4, 4);
  for (int i = 0; i < 5; ++i) labels.values[static_cast<std::size_t>(i)] = 1;
  CHECK_THROWS_AS(fisher_ratio(cube, labels, 2), UndefinedRatioError);
  FisherOptions opts;
  opts.min_pixels = 5;
  CHECK_NOTHROW(fisher_ratio(cube, labels, 2, opts));
  opts.exclude_class = 0;
  CHECK_THROWS_AS(fisher_ratio(cube, labels, 2, opts), UndefinedRatioError);
}

TEST_CASE("labels are nearest-neighbour resampled to the feature size", "[fisher]") {
  const auto big = mask_from_rows({{0, 0, 1, 1}, {0, 0, 1, 1}, {2, 2, 3, 3}, {2, 2, 3, 3}});
  CHECK(resample_nearest(big, 2, 2) == mask_from_rows({{0, 1}, {2, 3}}));
  CHECK(resample_nearest(mask_from_rows({{0, 1}, {2, 3}}), 4, 4) == big);
}

TEST_CASE("activation capture follows module paths and does not disturb the model", "[activations]") {
  models::SegmentationModel m(models::EncoderSpec{}, models::FrameworkKind::unet, 4, 2);
  const auto img = input_image(1);
  Tensor batch = img;
  batch.reshape({1, 4, 64, 64});
  const auto before = m.forward(batch, false);
  const auto a = capture_activations(m, img);
  const auto b = capture_activations(m, img);
  CHECK(a == b);
  CHECK(m.forward(batch, false) == before);
  REQUIRE(a.size() == m.module_paths().size());
  CHECK(a.modules == m.module_paths());
  CHECK(a.cubes.front().shape() == Shape{16, 64, 64});
  CHECK(a.cubes[1].shape()[1] == 32);  // first block of stage 1 halves the resolution
  CHECK(a.cubes.back().shape() == Shape{4, 64, 64});
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (m.module_paths()[i].path.find("downsample") == std::string::npos &&
        m.module_paths()[i].path != "head") {
      for (float v : a.cubes[i].values()) REQUIRE(v >= 0.0f);  // post-ReLU
    }
  }
}

TEST_CASE("activation traces export with the activation role", "[activations]") {
  models::SegmentationModel m(models::EncoderSpec{}, models::FrameworkKind::pyramid, 4, 2);
  const auto trace = capture_activations(m, input_image(2));
  const auto bundle = export_trace(trace, m);
  CHECK(bundle.entries.size() == trace.size() + 1);
  for (const auto& e : bundle.entries) CHECK(e.role == models::Role::activation);
  CHECK(models::CheckpointBundle::deserialize(bundle.serialize()) == bundle);
}

TEST_CASE("weight KL profile of a bundle against itself is zero", "[kl]") {
  models::SegmentationModel a(models::EncoderSpec{}, models::FrameworkKind::unet, 4, 3);
  models::SegmentationModel b(models::EncoderSpec{}, models::FrameworkKind::unet, 4, 3);
  const auto p = weight_kl_profile(models::export_checkpoint(a), models::export_checkpoint(b));
  REQUIRE(p.entries.size() == a.module_paths().size());
  for (const auto& e : p.entries) {
    CHECK(*e.value == 0.0);
    CHECK_FALSE(e.std.has_value());
  }
  models::SegmentationModel c(models::EncoderSpec{}, models::FrameworkKind::unet, 4, 4);
  const auto q = weight_kl_profile(models::export_checkpoint(a), models::export_checkpoint(c));
  for (const auto& e : q.entries) CHECK(*e.value >= 0.0);
  models::SegmentationModel d(models::EncoderSpec{}, models::FrameworkKind::aspp, 4, 4);
  CHECK_THROWS_AS(weight_kl_profile(models::export_checkpoint(a), models::export_checkpoint(d)), MismatchError);
}

TEST_CASE("fisher profile covers every module", "[fisher]") {
  // Deepest maps are 8x8, so each half-plane class keeps 32 pixels.
  models::SegmentationModel m(models::EncoderSpec{4, {8, 16, 32}, 1}, models::FrameworkKind::unet, 2, 3);
  std::vector<FisherSample> samples;
  for (int s = 0; s < 3; ++s) {
    data::LabelMask labels(64, 64);
    for (int y = 0; y < 64; ++y) {
      for (int x = 32; x < 64; ++x) labels.at(y, x) = 1;
    }
    samples.push_back({input_image(static_cast<std::uint64_t>(s)), labels});
  }
  const auto p = fisher_profile(m, samples);
  REQUIRE(p.entries.size() == m.module_paths().size());
  for (const auto& e : p.entries) {
    REQUIRE(e.value.has_value());
    CHECK(*e.value >= 0.0);
    REQUIRE(e.std.has_value());
    CHECK(*e.std >= 0.0);
  }
  CHECK(std::isfinite(p.role_mean(models::Role::encoder)));
  CHECK(std::isfinite(p.role_mean(models::Role::decoder)));
}

TEST_CASE("fisher profile leaves maps with too few pixels per class undefined", "[fisher]") {
  // 4x4 deepest maps hold 8 pixels per class, below min_pixels.
  models::SegmentationModel m(models::EncoderSpec{4, {8, 16, 32, 64}, 1}, models::FrameworkKind::unet, 2, 3);
  data::LabelMask labels(64, 64);
  for (int y = 0; y < 64; ++y) {
    for (int x = 32; x < 64; ++x) labels.at(y, x) = 1;
  }
  const auto p = fisher_profile(m, {{input_image(0), labels}});
  for (const auto& e : p.entries) {
    const bool deepest = e.path.rfind("encoder.stage4", 0) == 0;
    CHECK(e.value.has_value() != deepest);
    CHECK_FALSE(e.std.has_value());
  }
}

TEST_CASE("profiles aggregate, smooth and round-trip through CSV", "[profile]") {
  AnalysisProfile a;
  a.kind = ProfileKind::kl;
  AnalysisProfile b = a;
  const char* paths[] = {"encoder.stem", "encoder.s1", "decoder.x", "decoder.y", "head"};
  for (int i = 0; i < 5; ++i) {
    const auto role = i < 2 ? models::Role::encoder : models::Role::decoder;
    a.entries.push_back({paths[i], role, 1.0 * i, std::nullopt});
    b.entries.push_back({paths[i], role, 1.0 * i + 2.0, std::nullopt});
  }
  b.entries[3].value.reset();
  const auto agg = aggregate_profiles({a, b});
  CHECK(*agg.entries[0].value == 1.0);
  CHECK(*agg.entries[0].std == 1.0);
  CHECK(*agg.entries[3].value == 3.0);
  CHECK(*agg.entries[3].std == 0.0);
  CHECK(agg.role_mean(models::Role::encoder) == 1.5);

  const auto smooth = smooth_profile(a);
  REQUIRE(smooth.smoothing.has_value());
  for (int i = 0; i < 5; ++i) CHECK_THAT(*smooth.entries[static_cast<std::size_t>(i)].value, WithinAbs(i, 1e-10));

  for (const auto& p : {a, agg, smooth, b}) {
    const auto csv = profile_to_csv(p);
    CHECK(csv.find("path,role,value,std\n") != std::string::npos);
    const auto back = profile_from_csv(csv);
    CHECK(back == p);
  }
  auto c = a;
  c.entries.pop_back();
  CHECK_THROWS_AS(aggregate_profiles({a, c}), MismatchError);
}

TEST_CASE("chart and image grid renderers produce well-formed output", "[profile]") {
  AnalysisProfile p;
  p.entries = {{"encoder.a", models::Role::encoder, 1.0, 0.5}, {"decoder.b", models::Role::decoder, 3.0, 0.1}};
  const auto svg = render_profile_svg({{"exact", p}, {"noisy", p}}, "Fisher ratio");
  CHECK(svg.rfind("<svg", 0) == 0);
  CHECK(svg.find("</svg>") != std::string::npos);
  CHECK(svg.find("polygon") != std::string::npos);
  const auto pgm = render_map_grid({{Tensor({4, 4}, 1.0f), Tensor({2, 2}, 0.0f)}}, 8, 2);
  const std::string header = "P5\n22 12\n255\n";
  CHECK(pgm.substr(0, header.size()) == header);
  CHECK(pgm.size() == header.size() + 22 * 12);
}
