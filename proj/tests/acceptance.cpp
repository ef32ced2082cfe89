// Acceptance suite: one PASS/FAIL line per criterion. The experiment
// criteria (3-7) run the fixture pipeline through the same command layer as
// the CLI and read back only the persisted report and analysis files.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "commands.hpp"
#include "experiment.hpp"
#include "noisylab/analysis/metrics.hpp"
#include "noisylab/analysis/profile.hpp"
#include "noisylab/analysis/statistics.hpp"
#include "noisylab/common.hpp"
#include "noisylab/data/noise.hpp"
#include "noisylab/data/quality.hpp"
#include "noisylab/data/scene.hpp"
#include "noisylab/models/checkpoint.hpp"
#include "noisylab/training/loss.hpp"
#include "noisylab/training/optim.hpp"
#include "noisylab/training/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace noisylab;

namespace {

struct Verdict {
  bool pass = false;
  std::string detail;
};

class Stopwatch {
 public:
  double seconds() const { return std::chrono::duration<double>(Clock::now() - start_).count(); }

 private:
  using Clock = std::chrono::steady_clock;
  Clock::time_point start_ = Clock::now();
};

std::string fmt(const char* format, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, format, args...);
  return buf;
}

int failures = 0;

void emit(int id, const Verdict& v, double seconds, double budget) {
  const bool in_budget = seconds <= budget;
  const bool pass = v.pass && in_budget;
  if (!pass) ++failures;
  const std::string timing = std::isinf(budget) ? std::string("no runtime bound")
                                                : fmt("%.1fs, budget %.0fs%s", seconds, budget, in_budget ? "" : ", OVER BUDGET");
  std::printf("criterion %2d: %s  %s  [%s]\n", id, pass ? "PASS" : "FAIL", v.detail.c_str(), timing.c_str());
  std::fflush(stdout);
}

void progress(const std::string& message) {
  std::printf("# %s\n", message.c_str());
  std::fflush(stdout);
}

/// Runs `body`, turning an escaped exception into a failed verdict.
Verdict guarded(const std::function<Verdict()>& body) {
  try {
    return body();
  } catch (const std::exception& e) {
    return {false, std::string("exception: ") + e.what()};
  }
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

data::LabelMask rows_mask(std::initializer_list<std::initializer_list<int>> rows) {
  data::LabelMask m(static_cast<int>(rows.size()), static_cast<int>(rows.begin()->size()));
  std::size_t i = 0;
  for (const auto& r : rows) {
    for (int v : r) m.values[i++] = static_cast<std::uint8_t>(v);
  }
  return m;
}

bool close(double a, double b, double tol) { return std::abs(a - b) <= tol; }

// ---------------------------------------------------------------- 1

Verdict metric_oracle() {
  const std::vector<data::LabelMask> gt{rows_mask({{0, 0, 1, 1}, {0, 0, 1, 1}, {0, 0, 1, 1}, {0, 0, 1, 1}})};
  const std::vector<data::LabelMask> pred{rows_mask({{0, 1, 1, 1}, {0, 1, 1, 1}, {0, 1, 1, 1}, {0, 1, 1, 1}})};
  const std::vector<std::string> names{"c0", "c1"};
  const auto q = data::assess_label_quality(gt, pred, names);
  const auto m = analysis::evaluate_segmentation(pred, gt, names);
  const bool quality_ok = close(q.overall_accuracy, 0.75, 1e-12) && close(*q.per_class[0].iou, 0.5, 1e-12) &&
                          close(*q.per_class[1].iou, 2.0 / 3.0, 1e-12) && close(q.mean_iou, 0.5833333333, 1e-9);
  const bool metrics_ok = close(m.overall_accuracy, 0.75, 1e-12) && close(*m.per_class[0].iou, 0.5, 1e-12) &&
                          close(*m.per_class[1].iou, 2.0 / 3.0, 1e-12) && close(m.mean_iou, 0.5833333333, 1e-9) &&
                          close(m.average_accuracy, 0.75, 1e-12);
  return {quality_ok && metrics_ok, fmt("OA %.4f IoU0 %.4f IoU1 %.4f mIoU %.10f AA %.4f", m.overall_accuracy,
                                        *m.per_class[0].iou, *m.per_class[1].iou, m.mean_iou, m.average_accuracy)};
}

// ---------------------------------------------------------------- 2

Verdict noise_calibration() {
  const auto scene = data::SceneConfig::defaults();
  const double target = 0.5017;
  const auto noise = data::calibrate_noise(target, 200, scene);
  // Fresh scenes: a seed stream disjoint from the calibration corpus.
  std::vector<data::LabelMask> exact;
  std::vector<data::LabelMask> noisy;
  for (std::uint64_t i = 0; i < 1000; ++i) {
    const std::uint64_t seed = derive_seed(0xacce55, i);
    const auto s = data::generate_scene(scene, seed);
    data::NoiseConfig n = noise;
    n.rng_seed = data::patch_noise_seed(noise.rng_seed, seed);
    noisy.push_back(data::corrupt_mask(s.mask, scene.pretrain_class_map, n));
    exact.push_back(data::relabel(s.mask, scene.pretrain_class_map));
  }
  const auto report = data::assess_label_quality(exact, noisy, scene.pretrain_class_names);
  return {std::abs(report.mean_iou - target) <= 0.05,
          fmt("target %.4f, re-assessed mean IoU %.4f on 1000 fresh patches (drop %.3f, radius %d, blobs %.2f, swap %.3f)",
              target, report.mean_iou, noise.object_drop_prob, noise.boundary_radius, noise.blob_fp_rate,
              noise.class_swap_prob)};
}

// ---------------------------------------------------------------- 8

Verdict closed_forms() {
  std::vector<std::string> bad;
  const auto expect = [&](bool ok, const std::string& what) {
    if (!ok) bad.push_back(what);
  };
  expect(analysis::gaussian_kl(0.3, 1.7, 0.3, 1.7) == 0.0, "kl identity");
  expect(close(analysis::gaussian_kl(0, 1, 1, 1), 0.5, 1e-12), "kl (0,1,1,1)");
  expect(close(analysis::gaussian_kl(0, 1, 0, 4), std::log(2.0) - 3.0 / 8.0, 1e-12), "kl (0,1,0,4)");

  const double base = 5e-4;
  expect(close(training::cosine_lr(0, 100, base), base, 1e-12), "cosine start");
  expect(close(training::cosine_lr(50, 100, base), base / 2, 1e-12), "cosine midpoint");
  expect(close(training::cosine_lr(100, 100, base), 0.0, 1e-12), "cosine end");

  for (int k : {2, 4, 8}) {
    Tensor logits({1, k, 3, 3}, 0.25f);
    std::vector<std::uint8_t> targets(9);
    for (std::size_t i = 0; i < targets.size(); ++i) targets[i] = static_cast<std::uint8_t>(i % k);
    const auto loss = training::combined_loss(logits, targets, {1.0, 0.0});
    expect(close(loss.cross_entropy, std::log(static_cast<double>(k)), 1e-9), fmt("uniform CE K=%d", k));
  }

  std::vector<double> quad(40);
  for (std::size_t i = 0; i < quad.size(); ++i) {
    const double x = static_cast<double>(i);
    quad[i] = 0.3 * x * x - 2.0 * x + 7.0;
  }
  const auto smooth = analysis::savgol_smooth(quad, 5, 2);
  double worst = 0.0;
  for (std::size_t i = 0; i < quad.size(); ++i) worst = std::max(worst, std::abs(smooth[i] - quad[i]));
  expect(worst <= 1e-10, fmt("savgol quadratic error %.3g", worst));

  Rng rng(5);
  const int c = 5, h = 9, w = 11;
  std::vector<double> loading(c), pattern(static_cast<std::size_t>(h) * w);
  for (auto& v : loading) v = normal(rng);
  for (auto& v : pattern) v = normal(rng);
  Tensor cube({c, h, w});
  for (int ch = 0; ch < c; ++ch) {
    for (std::size_t i = 0; i < pattern.size(); ++i) {
      cube[static_cast<std::size_t>(ch) * pattern.size() + i] = static_cast<float>(loading[ch] * pattern[i]);
    }
  }
  const auto map = analysis::dominant_component_image(cube);
  double ma = 0, mb = 0;
  for (std::size_t i = 0; i < pattern.size(); ++i) {
    ma += map[i];
    mb += pattern[i];
  }
  ma /= static_cast<double>(pattern.size());
  mb /= static_cast<double>(pattern.size());
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < pattern.size(); ++i) {
    sab += (map[i] - ma) * (pattern[i] - mb);
    saa += (map[i] - ma) * (map[i] - ma);
    sbb += (pattern[i] - mb) * (pattern[i] - mb);
  }
  const double corr = std::abs(sab / std::sqrt(saa * sbb));
  expect(corr >= 1.0 - 1e-6, fmt("rank-1 correlation %.9f", corr));

  std::string detail = fmt("KL, cosine, CE, savgol (max err %.2g), PCA (|r| %.9f)", worst, corr);
  for (const auto& b : bad) detail += "; failed: " + b;
  return {bad.empty(), detail};
}

// ---------------------------------------------------------------- 9

Verdict transplant_and_freeze() {
  models::EncoderSpec spec;
  const models::SegmentationModel unet(spec, models::FrameworkKind::unet, 4, 1);
  const auto source = models::export_checkpoint(unet);
  models::SegmentationModel aspp(spec, models::FrameworkKind::aspp, 8, 2);
  models::import_checkpoint(source, aspp, models::ImportScope::encoder_only);
  const auto via_aspp = models::export_checkpoint(aspp);
  models::SegmentationModel pyramid(spec, models::FrameworkKind::pyramid, 3, 3);
  models::import_checkpoint(via_aspp, pyramid, models::ImportScope::encoder_only);
  const auto via_pyramid = models::export_checkpoint(pyramid);
  const auto reference = models::encoder_bytes(source);
  const bool chain_ok = models::encoder_bytes(via_aspp) == reference && models::encoder_bytes(via_pyramid) == reference;

  // Saved to disk and reloaded as well.
  const fs::path tmp = fs::temp_directory_path() / "noisylab_acceptance_transplant.nlckpt";
  via_pyramid.save(tmp);
  const bool disk_ok = models::encoder_bytes(models::CheckpointBundle::load(tmp)) == reference;
  fs::remove(tmp);

  data::CorpusSpec cs;
  cs.pretrain_count = 24;
  cs.finetune_count = 16;
  cs.test_count = 8;
  cs.seed = 4;
  const auto corpus = data::generate_corpus(cs);
  const auto train = training::downstream_set(corpus, data::Split::finetune);
  const auto test = training::downstream_set(corpus, data::Split::test);
  models::SegmentationModel frozen(spec, models::FrameworkKind::unet, train.num_classes(), 9);
  auto cfg = training::TrainConfig::finetune_defaults();
  cfg.epochs = 3;
  cfg.batch_size = 8;
  cfg.encoder_mode = training::EncoderMode::fixed;
  const auto result = training::finetune(train, test, frozen, &source, cfg);
  const bool frozen_ok = models::encoder_bytes(result.checkpoint) == reference;
  const auto initial =
      models::export_checkpoint(models::SegmentationModel(spec, models::FrameworkKind::unet, train.num_classes(), 9));
  bool decoder_moved = false;
  for (const auto& e : result.checkpoint.entries) {
    if (e.role == models::Role::encoder) continue;
    const auto* before = initial.find(e.path);
    if (before && before->data != e.data) decoder_moved = true;
  }
  return {chain_ok && disk_ok && frozen_ok && decoder_moved,
          fmt("unet->aspp->pyramid encoder bytes %s (%zu bytes), disk round trip %s, frozen encoder after %d-epoch "
              "fine-tune %s, decoder updated %s",
              chain_ok ? "identical" : "DIFFER", reference.size(), disk_ok ? "identical" : "DIFFERS", cfg.epochs,
              frozen_ok ? "unchanged" : "CHANGED", decoder_moved ? "yes" : "NO")};
}

// ---------------------------------------------------------------- 10

Verdict gradient_check() {
  models::SegmentationModel m(models::EncoderSpec{3, {4, 8}, 1}, models::FrameworkKind::unet, 5, 17);
  Rng rng(18);
  Tensor x({2, 3, 8, 8});
  for (auto& v : x.values()) v = static_cast<float>(normal(rng));
  std::vector<std::uint8_t> t(2 * 64);
  for (auto& v : t) v = static_cast<std::uint8_t>(rng() % 5);
  const training::LossWeights weights{1.0, 1.0};
  m.zero_grad();
  const auto loss = training::combined_loss(m.forward(x, true), t, weights);
  m.backward(loss.grad);
  auto* bias = m.find_parameter("head.bias");
  if (!bias) return {false, "no head.bias parameter"};
  const float eps = 1e-3f;
  double worst = 0.0;
  for (std::size_t i = 0; i < bias->value.size(); ++i) {
    const float saved = bias->value[i];
    bias->value[i] = saved + eps;
    const double up = training::combined_loss(m.forward(x, true), t, weights).value;
    bias->value[i] = saved - eps;
    const double down = training::combined_loss(m.forward(x, true), t, weights).value;
    bias->value[i] = saved;
    const double numeric = (up - down) / (2.0 * eps);
    const double analytic = bias->grad[i];
    worst = std::max(worst, std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-12}));
  }
  return {worst <= 1e-2, fmt("max relative error %.2e over %zu head-bias entries (CE + dice)", worst, bias->value.size())};
}

// ---------------------------------------------------------------- 3-7

struct Pipeline {
  cli::Context base;
  double generate_s = 0;
  double pretrain_noisy_s = 0;  // seeds of the fine-tune matrix
  double unet_fixed_s = 0;
  double aspp_finetuned_s = 0;
  double total_s = 0;
  std::string error;
};

cli::Context with(const cli::Context& base, const std::function<void(cli::ExperimentConfig&)>& edit,
                  std::optional<std::uint64_t> seed = std::nullopt) {
  cli::Context ctx = base;
  edit(ctx.config);
  ctx.seed = seed;
  return ctx;
}

Pipeline run_pipeline(const fs::path& out, const std::vector<std::uint64_t>& analysis_seeds) {
  Pipeline p;
  Stopwatch total;
  p.base.config = cli::ExperimentConfig::load(fs::path(NOISYLAB_CONFIG_DIR) / "fixture.json");
  p.base.out = out;
  const auto finetune_seeds = p.base.config.seeds;
  const auto regime = [](training::LabelSource r) {
    return [r](cli::ExperimentConfig& c) { c.pretrain.regimes = {r}; };
  };
  try {
    fs::remove_all(out);
    Stopwatch t;
    cli::cmd_generate(p.base);
    cli::cmd_assess(p.base);
    p.generate_s = t.seconds();
    progress(fmt("generate + assess %.1fs", p.generate_s));

    t = Stopwatch();
    for (auto s : finetune_seeds) {
      cli::cmd_pretrain(with(p.base, regime(training::LabelSource::noisy), s));
      progress(fmt("pretrain noisy seed %llu done (%.0fs)", static_cast<unsigned long long>(s), t.seconds()));
    }
    p.pretrain_noisy_s = t.seconds();

    const auto matrix = [&](models::FrameworkKind f, training::EncoderMode m) {
      Stopwatch w;
      cli::cmd_finetune(with(p.base, [&](cli::ExperimentConfig& c) {
        c.model.frameworks = {f};
        c.finetune.encoder_modes = {m};
      }));
      progress(fmt("finetune %s/%s, both inits, %zu seeds (%.0fs)", std::string(models::framework_name(f)).c_str(),
                   std::string(training::encoder_mode_name(m)).c_str(), finetune_seeds.size(), w.seconds()));
      return w.seconds();
    };
    p.unet_fixed_s = matrix(models::FrameworkKind::unet, training::EncoderMode::fixed);
    p.aspp_finetuned_s = matrix(models::FrameworkKind::aspp, training::EncoderMode::finetuned);
    matrix(models::FrameworkKind::unet, training::EncoderMode::finetuned);
    matrix(models::FrameworkKind::aspp, training::EncoderMode::fixed);

    t = Stopwatch();
    for (auto s : analysis_seeds) {
      cli::cmd_pretrain(with(p.base, regime(training::LabelSource::exact), s));
      if (std::find(finetune_seeds.begin(), finetune_seeds.end(), s) == finetune_seeds.end()) {
        cli::cmd_pretrain(with(p.base, regime(training::LabelSource::noisy), s));
      }
      progress(fmt("analysis pretraining seed %llu done (%.0fs)", static_cast<unsigned long long>(s), t.seconds()));
    }
    cli::cmd_analyze(with(p.base, [&](cli::ExperimentConfig& c) { c.seeds = analysis_seeds; }));
    cli::cmd_report(p.base);
  } catch (const std::exception& e) {
    p.error = e.what();
  }
  p.total_s = total.seconds();
  progress(fmt("fixture pipeline total %.0fs%s", p.total_s, p.error.empty() ? "" : (" (error: " + p.error + ")").c_str()));
  return p;
}

const cli::ReportRow* find_row(const std::vector<cli::ReportRow>& rows, cli::Init init, models::FrameworkKind f,
                               training::EncoderMode m) {
  for (const auto& r : rows) {
    if (r.init == init && r.framework == f && r.mode == m) return &r;
  }
  return nullptr;
}

Verdict ordering(const std::vector<cli::ReportRow>& rows, models::FrameworkKind f, training::EncoderMode m) {
  const auto* noisy = find_row(rows, cli::Init::noisy, f, m);
  const auto* random = find_row(rows, cli::Init::random, f, m);
  if (!noisy || !random) return {false, "report row missing"};
  const double margin = noisy->median - random->median;
  return {rows.size() == 8 && noisy->seeds == 3 && random->seeds == 3 && margin >= 2.0,
          fmt("%s/%s median mIoU over %d seeds: noisy-pretrained %.2f vs random %.2f (margin %+.2f, need >= 2.00); "
              "report rows %zu",
              std::string(models::framework_name(f)).c_str(), std::string(training::encoder_mode_name(m)).c_str(),
              noisy->seeds, noisy->median, random->median, margin, rows.size())};
}

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw MissingInputError("missing " + path.string());
  return json::parse(in);
}

double number(const json& j) { return j.is_number() ? j.get<double>() : std::nan(""); }

}  // namespace

int main(int argc, char** argv) {
  const fs::path out = argc > 1 ? fs::path(argv[1]) : fs::path("acceptance_runs");
  std::printf("# noisylab acceptance, threads=%d, output %s\n", worker_threads(), out.string().c_str());

  {
    Stopwatch t;
    const auto v = guarded(metric_oracle);
    emit(1, v, t.seconds(), 1.0);
  }
  {
    Stopwatch t;
    const auto v = guarded(noise_calibration);
    emit(2, v, t.seconds(), 120.0);
  }

  const std::vector<std::uint64_t> analysis_seeds{0, 1, 2, 3, 4};
  const auto pipeline = run_pipeline(out, analysis_seeds);
  std::vector<cli::ReportRow> rows;
  std::string report_error = pipeline.error;
  if (report_error.empty()) {
    try {
      rows = cli::read_report_table(out / "report" / "finetune_table.csv");
    } catch (const std::exception& e) {
      report_error = e.what();
    }
  }
  const auto fail_pipeline = [&]() -> Verdict { return {false, "pipeline failed: " + report_error}; };
  {
    const double cost = pipeline.generate_s + pipeline.pretrain_noisy_s + pipeline.unet_fixed_s;
    const auto v = report_error.empty() ? ordering(rows, models::FrameworkKind::unet, training::EncoderMode::fixed)
                                        : fail_pipeline();
    emit(3, v, cost, 1800.0);
  }
  {
    const double cost = pipeline.generate_s + pipeline.pretrain_noisy_s + pipeline.aspp_finetuned_s;
    const auto v = report_error.empty()
                       ? ordering(rows, models::FrameworkKind::aspp, training::EncoderMode::finetuned)
                       : fail_pipeline();
    emit(4, v, cost, 1800.0);
  }

  json summary;
  std::string analysis_error = pipeline.error;
  if (analysis_error.empty()) {
    try {
      summary = read_json(out / "analysis" / "summary.json");
    } catch (const std::exception& e) {
      analysis_error = e.what();
    }
  }
  const double no_budget = std::numeric_limits<double>::infinity();
  if (!analysis_error.empty()) {
    for (int id : {5, 6, 7}) emit(id, {false, "analysis failed: " + analysis_error}, 0.0, no_budget);
  } else {
    std::vector<double> fe_enc, fe_dec, fn_enc, fn_dec, kl_enc, kl_dec;
    for (const auto& s : summary.at("seeds")) {
      fe_enc.push_back(number(s.at("fisher_exact").at("encoder")));
      fe_dec.push_back(number(s.at("fisher_exact").at("decoder")));
      fn_enc.push_back(number(s.at("fisher_noisy").at("encoder")));
      fn_dec.push_back(number(s.at("fisher_noisy").at("decoder")));
      kl_enc.push_back(number(s.at("kl").at("encoder")));
      kl_dec.push_back(number(s.at("kl").at("decoder")));
    }
    const std::size_t n = fe_enc.size();
    int both = 0;
    std::string per_seed;
    for (std::size_t i = 0; i < n; ++i) {
      const bool ok = fe_dec[i] > fe_enc[i] && fn_dec[i] > fn_enc[i];
      both += ok ? 1 : 0;
      per_seed += fmt(" [exact %.3f>%.3f, noisy %.3f>%.3f]%s", fe_dec[i], fe_enc[i], fn_dec[i], fn_enc[i], ok ? "" : "x");
    }
    emit(5, {n == 5 && both >= 4, fmt("decoder > encoder mean Fisher for both regimes in %d of %zu seeds:", both, n) + per_seed},
         0.0, no_budget);

    const double med_exact = median(fe_dec);
    const double med_noisy = median(fn_dec);
    emit(6, {n == 5 && med_exact > med_noisy,
             fmt("median decoder-mean Fisher over %zu seeds: exact-trained %.4f vs noisy-trained %.4f", n, med_exact,
                 med_noisy)},
         0.0, no_budget);

    bool encoder_kl_ok = true;
    std::size_t encoder_entries = 0;
    for (auto seed : analysis_seeds) {
      std::ifstream in(out / "analysis" / ("seed" + std::to_string(seed)) / "kl.csv");
      std::stringstream text;
      text << in.rdbuf();
      const auto profile = analysis::profile_from_csv(text.str());
      for (const auto& e : profile.entries) {
        if (e.role != models::Role::encoder) continue;
        ++encoder_entries;
        if (!e.value || !std::isfinite(*e.value) || *e.value < 0.0) encoder_kl_ok = false;
      }
    }
    const double med_kl_dec = median(kl_dec);
    const double med_kl_enc = median(kl_enc);
    emit(7, {n == 5 && med_kl_dec > med_kl_enc && encoder_kl_ok && encoder_entries > 0,
             fmt("median mean KL over %zu seed pairs: decoder %.5f vs encoder %.5f; %zu encoder-path KL values %s", n,
                 med_kl_dec, med_kl_enc, encoder_entries, encoder_kl_ok ? "all finite and >= 0" : "NOT all finite/>= 0")},
         0.0, no_budget);
  }

  {
    Stopwatch t;
    const auto v = guarded(closed_forms);
    emit(8, v, t.seconds(), 5.0);
  }
  {
    Stopwatch t;
    const auto v = guarded(transplant_and_freeze);
    emit(9, v, t.seconds(), 120.0);
  }
  {
    Stopwatch t;
    const auto v = guarded(gradient_check);
    emit(10, v, t.seconds(), 10.0);
  }

  std::printf("# %d of 10 criteria failed; fixture pipeline %.0fs\n", failures, pipeline.total_s);
  return failures == 0 ? 0 : 1;
}
