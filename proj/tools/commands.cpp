#include "commands.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <map>
#include <sstream>

#include "noisylab/analysis/activations.hpp"
#include "noisylab/analysis/metrics.hpp"
#include "noisylab/analysis/profile.hpp"
#include "noisylab/analysis/statistics.hpp"
#include "noisylab/common.hpp"
#include "noisylab/data/quality.hpp"
#include "noisylab/models/checkpoint.hpp"

namespace noisylab::cli {

namespace fs = std::filesystem;
using nlohmann::json;
using training::LabelSource;

namespace {

constexpr std::uint64_t kPretrainInitStream = 0x7072652d696e6974;  // "pre-init"
constexpr std::uint64_t kFinetuneInitStream = 0x66696e2d696e6974;  // "fin-init"

std::string regime_name(LabelSource s) { return s == LabelSource::noisy ? "noisy" : "exact"; }

void write_text(const fs::path& path, std::string_view text) {
  fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingInputError("missing input " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void require(const fs::path& path, const char* produced_by) {
  if (!fs::exists(path)) {
    throw MissingInputError("missing input " + path.string() + " (run '" + produced_by + "' first)");
  }
}

std::string fixed2(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

std::string percent(std::optional<double> v) { return v ? fixed2(100.0 * *v) : std::string(); }

double median(std::vector<double> v) {
  if (v.empty()) return std::nan("");
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

std::pair<double, double> mean_std(const std::vector<double>& v) {
  double m = 0.0;
  for (double x : v) m += x;
  m /= static_cast<double>(v.size());
  double var = 0.0;
  for (double x : v) var += (x - m) * (x - m);
  return {m, std::sqrt(var / static_cast<double>(v.size()))};
}

/// Records the resolved run configuration and its hash next to the run's
/// artifacts. The output root is left out so the hash names the science only.
void write_run_config(const fs::path& dir, const ExperimentConfig& config, const json& run) {
  json resolved = {{"experiment", config.to_json()}, {"run", run}};
  resolved["experiment"].erase("output_dir");
  write_text(dir / "config.json", resolved.dump(2) + "\n");
  write_text(dir / "config.hash", json_hash(resolved) + "\n");
}

void write_run(const fs::path& dir, training::TrainResult& result) {
  result.log.checkpoint = "checkpoint.nlckpt";
  result.checkpoint.save(dir / "checkpoint.nlckpt");
  write_text(dir / "runlog.jsonl", result.log.to_jsonl());
  std::ostringstream timing;
  for (const auto& e : result.log.epochs) {
    timing << json{{"epoch", e.epoch}, {"wall_seconds", e.wall_seconds}}.dump() << '\n';
  }
  write_text(dir / "timing.jsonl", timing.str());
}

training::CheckpointCallback periodic_saver(const fs::path& dir) {
  return [dir](int epoch, const models::CheckpointBundle& bundle) {
    bundle.save(dir / ("checkpoint_epoch" + std::to_string(epoch) + ".nlckpt"));
  };
}

data::Corpus load_generated_corpus(const fs::path& out) {
  const fs::path dir = corpus_dir(out);
  require(dir / "manifest.json", "generate");
  return data::load_corpus(dir);
}

/// Pretraining-class-set view of `split` with labels from `source`.
training::LabeledSet pretrain_class_set(const data::Corpus& corpus, const ExperimentConfig& config, data::Split split,
                                        LabelSource source) {
  training::LabeledSet set;
  set.locations = corpus.locations(split);
  set.labels = source;
  if (source == LabelSource::exact) set.class_map = config.corpus.scene.pretrain_class_map;
  set.class_names = corpus.noisy_class_names;
  return set;
}

models::CheckpointBundle load_bundle(const fs::path& path, const char* produced_by) {
  require(path, produced_by);
  return models::CheckpointBundle::load(path);
}

models::SegmentationModel model_from_bundle(const models::CheckpointBundle& bundle) {
  const auto& meta = bundle.metadata;
  models::SegmentationModel model(meta.encoder, meta.framework, meta.num_classes);
  models::import_checkpoint(bundle, model, models::ImportScope::full, true);
  return model;
}

json role_means(const analysis::AnalysisProfile& profile) {
  return {{"encoder", profile.role_mean(models::Role::encoder)}, {"decoder", profile.role_mean(models::Role::decoder)}};
}

}  // namespace

std::vector<std::uint64_t> Context::seeds() const {
  if (seed) return {*seed};
  return config.seeds;
}

fs::path corpus_dir(const fs::path& out) { return out / "corpus"; }

fs::path pretrain_dir(const fs::path& out, LabelSource regime, std::uint64_t seed) {
  return out / "pretrain" / regime_name(regime) / ("seed" + std::to_string(seed));
}

fs::path finetune_dir(const fs::path& out, Init init, models::FrameworkKind framework, training::EncoderMode mode,
                      std::uint64_t seed) {
  std::string name = std::string(init_name(init)) + "_" + std::string(models::framework_name(framework)) + "_" +
                     std::string(training::encoder_mode_name(mode));
  return out / "finetune" / name / ("seed" + std::to_string(seed));
}

void cmd_generate(const Context& ctx) {
  const auto& config = ctx.config;
  data::CorpusSpec spec = config.corpus;
  json noise_json;
  if (config.noise.fixed) {
    spec.noise = *config.noise.fixed;
    noise_json["mode"] = "fixed";
  } else {
    data::CalibrationOptions options;
    options.tolerance = config.noise.tolerance;
    options.seed = spec.seed;
    spec.noise = data::calibrate_noise(config.noise.target_mean_iou, config.noise.calibration_patches, spec.scene,
                                       options);
    noise_json["mode"] = "calibrated";
    noise_json["target_mean_iou"] = config.noise.target_mean_iou;
  }
  noise_json["object_drop_prob"] = spec.noise.object_drop_prob;
  noise_json["boundary_radius"] = spec.noise.boundary_radius;
  noise_json["blob_fp_rate"] = spec.noise.blob_fp_rate;
  noise_json["class_swap_prob"] = spec.noise.class_swap_prob;
  noise_json["rng_seed"] = spec.noise.rng_seed;

  const fs::path dir = corpus_dir(ctx.out);
  if (fs::exists(dir)) fs::remove_all(dir);
  const auto corpus = data::generate_corpus(spec, worker_threads());
  data::save_corpus(corpus, dir);
  write_text(dir / "noise.json", noise_json.dump(2) + "\n");
  write_run_config(dir, config, {{"command", "generate"}, {"noise", noise_json}});
}

void cmd_assess(const Context& ctx) {
  const auto corpus = load_generated_corpus(ctx.out);
  const auto& map = ctx.config.corpus.scene.pretrain_class_map;
  std::vector<data::LabelMask> exact;
  std::vector<data::LabelMask> noisy;
  for (const auto& entry : corpus.entries) {
    if (entry.split != data::Split::pretrain) continue;
    exact.push_back(data::relabel(entry.triple.exact_mask, map));
    noisy.push_back(entry.triple.noisy_mask);
  }
  if (exact.empty()) throw MissingInputError("corpus has no pretraining patches to assess");
  const auto report = data::assess_label_quality(exact, noisy, corpus.noisy_class_names);
  const fs::path dir = ctx.out / "assess";
  write_text(dir / "quality_table.csv", data::format_quality_table(report));
  write_text(dir / "quality.json", json{{"overall_accuracy", report.overall_accuracy},
                                        {"mean_precision", report.mean_precision},
                                        {"mean_recall", report.mean_recall},
                                        {"mean_iou", report.mean_iou},
                                        {"patches", exact.size()}}
                                           .dump(2) +
                                       "\n");
  write_run_config(dir, ctx.config, {{"command", "assess"}});
}

void cmd_pretrain(const Context& ctx) {
  const auto& config = ctx.config;
  const auto corpus = load_generated_corpus(ctx.out);
  const auto eval = pretrain_class_set(corpus, config, data::Split::test, LabelSource::exact);
  for (auto seed : ctx.seeds()) {
    for (auto regime : config.pretrain.regimes) {
      const auto train = pretrain_class_set(corpus, config, data::Split::pretrain, regime);
      training::TrainConfig tc = config.pretrain.train;
      tc.seed = derive_seed(config.pretrain.train.seed, seed);
      const std::uint64_t init_seed = derive_seed(seed, kPretrainInitStream);
      models::SegmentationModel model(config.model.encoder, config.model.pretrain_framework, train.num_classes(),
                                      init_seed);
      const fs::path dir = pretrain_dir(ctx.out, regime, seed);
      if (fs::exists(dir)) fs::remove_all(dir);
      fs::create_directories(dir);
      write_run_config(dir, config,
                       {{"command", "pretrain"},
                        {"regime", regime_name(regime)},
                        {"seed", seed},
                        {"init_seed", init_seed},
                        {"framework", models::framework_name(config.model.pretrain_framework)},
                        {"train", training::to_json(tc)}});
      auto result = training::pretrain(train, model, tc, &eval,
                                       tc.checkpoint_interval > 0 ? periodic_saver(dir) : training::CheckpointCallback{});
      write_run(dir, result);
    }
  }
}

void cmd_finetune(const Context& ctx) {
  const auto& config = ctx.config;
  const auto corpus = load_generated_corpus(ctx.out);
  const auto train = training::downstream_set(corpus, data::Split::finetune);
  const auto test = training::downstream_set(corpus, data::Split::test);
  for (auto seed : ctx.seeds()) {
    for (auto init : config.finetune.inits) {
      std::optional<models::CheckpointBundle> source;
      if (init != Init::random) {
        const auto regime = init == Init::noisy ? LabelSource::noisy : LabelSource::exact;
        source = load_bundle(pretrain_dir(ctx.out, regime, seed) / "checkpoint.nlckpt", "pretrain");
      }
      for (auto framework : config.model.frameworks) {
        for (auto mode : config.finetune.encoder_modes) {
          training::TrainConfig tc = config.finetune.train;
          tc.seed = derive_seed(config.finetune.train.seed, seed);
          tc.encoder_mode = mode;
          // The decoder init depends on the seed only, so inits differ in the encoder alone.
          const std::uint64_t init_seed = derive_seed(seed, kFinetuneInitStream);
          models::SegmentationModel model(config.model.encoder, framework, train.num_classes(), init_seed);
          const fs::path dir = finetune_dir(ctx.out, init, framework, mode, seed);
          if (fs::exists(dir)) fs::remove_all(dir);
          fs::create_directories(dir);
          write_run_config(dir, config,
                           {{"command", "finetune"},
                            {"init", init_name(init)},
                            {"framework", models::framework_name(framework)},
                            {"encoder_mode", training::encoder_mode_name(mode)},
                            {"seed", seed},
                            {"init_seed", init_seed},
                            {"train", training::to_json(tc)}});
          auto result = training::finetune(train, test, model, source ? &*source : nullptr, tc,
                                           tc.checkpoint_interval > 0 ? periodic_saver(dir)
                                                                      : training::CheckpointCallback{});
          write_run(dir, result);
        }
      }
    }
  }
}

void cmd_analyze(const Context& ctx) {
  const auto& config = ctx.config;
  const auto corpus = load_generated_corpus(ctx.out);
  const auto test = pretrain_class_set(corpus, config, data::Split::test, LabelSource::exact);
  if (test.size() == 0) throw MissingInputError("corpus has no test patches");
  const std::size_t count = std::min<std::size_t>(static_cast<std::size_t>(config.analysis.samples), test.size());
  std::vector<analysis::FisherSample> samples;
  for (std::size_t i = 0; i < count; ++i) {
    const auto& triple = test.locations[i].front();
    samples.push_back({triple.image, test.target(triple)});
  }
  analysis::FisherOptions fisher = config.analysis.fisher;
  if (config.analysis.exclude_background) fisher.exclude_class = 0;
  const analysis::Smoothing smoothing{config.analysis.savgol_window, config.analysis.savgol_polyorder};

  const fs::path dir = ctx.out / "analysis";
  if (fs::exists(dir)) fs::remove_all(dir);
  std::vector<analysis::AnalysisProfile> fisher_exact;
  std::vector<analysis::AnalysisProfile> fisher_noisy;
  std::vector<analysis::AnalysisProfile> kl;
  std::vector<std::vector<Tensor>> grid;
  json per_seed = json::array();
  for (auto seed : ctx.seeds()) {
    const auto exact_bundle =
        load_bundle(pretrain_dir(ctx.out, LabelSource::exact, seed) / "checkpoint.nlckpt", "pretrain");
    const auto noisy_bundle =
        load_bundle(pretrain_dir(ctx.out, LabelSource::noisy, seed) / "checkpoint.nlckpt", "pretrain");
    auto exact_model = model_from_bundle(exact_bundle);
    auto noisy_model = model_from_bundle(noisy_bundle);
    fisher_exact.push_back(analysis::fisher_profile(exact_model, samples, fisher));
    fisher_noisy.push_back(analysis::fisher_profile(noisy_model, samples, fisher));
    kl.push_back(analysis::weight_kl_profile(exact_bundle, noisy_bundle));

    const fs::path seed_dir = dir / ("seed" + std::to_string(seed));
    write_text(seed_dir / "fisher_exact.csv", analysis::profile_to_csv(fisher_exact.back()));
    write_text(seed_dir / "fisher_noisy.csv", analysis::profile_to_csv(fisher_noisy.back()));
    write_text(seed_dir / "kl.csv", analysis::profile_to_csv(kl.back()));
    per_seed.push_back({{"seed", seed},
                        {"fisher_exact", role_means(fisher_exact.back())},
                        {"fisher_noisy", role_means(fisher_noisy.back())},
                        {"kl", role_means(kl.back())}});

    if (grid.empty()) {
      // Input column, then one column per module; rows: exact- then noisy-trained.
      for (auto* model : {&exact_model, &noisy_model}) {
        const auto trace = analysis::capture_activations(*model, samples.front().image);
        std::vector<Tensor> row{analysis::dominant_component_image(trace.input)};
        for (const auto& cube : trace.cubes) row.push_back(analysis::dominant_component_image(cube));
        grid.push_back(std::move(row));
      }
    }
  }

  const auto agg_exact = analysis::aggregate_profiles(fisher_exact);
  const auto agg_noisy = analysis::aggregate_profiles(fisher_noisy);
  const auto agg_kl = analysis::aggregate_profiles(kl);
  const auto kl_smoothed = analysis::smooth_profile(agg_kl, smoothing);
  write_text(dir / "fisher_exact.csv", analysis::profile_to_csv(agg_exact));
  write_text(dir / "fisher_noisy.csv", analysis::profile_to_csv(agg_noisy));
  write_text(dir / "fisher_exact_smoothed.csv", analysis::profile_to_csv(analysis::smooth_profile(agg_exact, smoothing)));
  write_text(dir / "fisher_noisy_smoothed.csv", analysis::profile_to_csv(analysis::smooth_profile(agg_noisy, smoothing)));
  write_text(dir / "kl.csv", analysis::profile_to_csv(agg_kl));
  write_text(dir / "kl_smoothed.csv", analysis::profile_to_csv(kl_smoothed));
  write_text(dir / "fisher.svg",
             analysis::render_profile_svg({{"exact labels", agg_exact}, {"noisy labels", agg_noisy}},
                                          "Fisher ratio per module"));
  write_text(dir / "kl.svg",
             analysis::render_profile_svg({{"KL", agg_kl}, {"KL smoothed", kl_smoothed}},
                                          "Weight KL, exact vs noisy"));
  write_text(dir / "dominant_pc.pgm", analysis::render_map_grid(grid, config.analysis.grid_cell));

  json summary = {{"samples", count},
                  {"seeds", per_seed},
                  {"fisher_exact", role_means(agg_exact)},
                  {"fisher_noisy", role_means(agg_noisy)},
                  {"kl", role_means(agg_kl)}};
  write_text(dir / "summary.json", summary.dump(2) + "\n");
  write_run_config(dir, config, {{"command", "analyze"}});
}

void cmd_report(const Context& ctx) {
  const auto& config = ctx.config;
  const auto seeds = ctx.seeds();
  std::vector<std::string> class_names;
  std::ostringstream runs;
  std::ostringstream table;
  json rows = json::array();
  bool header_done = false;

  for (auto framework : config.model.frameworks) {
    for (auto mode : config.finetune.encoder_modes) {
      for (auto init : config.finetune.inits) {
        std::vector<double> miou;
        std::vector<std::vector<double>> class_iou;
        for (auto seed : seeds) {
          const fs::path dir = finetune_dir(ctx.out, init, framework, mode, seed);
          const auto log = training::RunLog::from_jsonl(read_text(dir / "runlog.jsonl"));
          if (log.evals.empty()) throw MissingInputError("no evaluation record in " + (dir / "runlog.jsonl").string());
          const auto& m = log.evals.back().metrics;
          if (!header_done) {
            for (const auto& c : m.per_class) class_names.push_back(c.name);
            runs << "init,framework,encoder_mode,seed";
            table << "framework,encoder_mode,init,seeds";
            for (const auto& name : class_names) {
              runs << ',' << name;
              table << ',' << name;
            }
            runs << ",mIoU,OA,AA\n";
            table << ",mIoU,mIoU_mean,mIoU_std\n";
            class_iou.resize(class_names.size());
            header_done = true;
          }
          if (m.per_class.size() != class_names.size()) throw MismatchError("class set differs between runs");
          class_iou.resize(class_names.size());
          runs << init_name(init) << ',' << models::framework_name(framework) << ','
               << training::encoder_mode_name(mode) << ',' << seed;
          for (std::size_t k = 0; k < m.per_class.size(); ++k) {
            runs << ',' << percent(m.per_class[k].iou);
            if (m.per_class[k].iou) class_iou[k].push_back(100.0 * *m.per_class[k].iou);
          }
          runs << ',' << fixed2(100.0 * m.mean_iou) << ',' << fixed2(100.0 * m.overall_accuracy) << ','
               << fixed2(100.0 * m.average_accuracy) << '\n';
          miou.push_back(100.0 * m.mean_iou);
        }
        const auto [mean, std] = mean_std(miou);
        const double med = median(miou);
        table << models::framework_name(framework) << ',' << training::encoder_mode_name(mode) << ','
              << init_name(init) << ',' << miou.size();
        for (const auto& values : class_iou) table << ',' << (values.empty() ? std::string() : fixed2(median(values)));
        table << ',' << fixed2(med) << ',' << fixed2(mean) << ',' << fixed2(std) << '\n';
        rows.push_back({{"framework", models::framework_name(framework)},
                        {"encoder_mode", training::encoder_mode_name(mode)},
                        {"init", init_name(init)},
                        {"seeds", miou.size()},
                        {"miou_median", med},
                        {"miou_mean", mean},
                        {"miou_std", std}});
      }
    }
  }

  const fs::path dir = ctx.out / "report";
  write_text(dir / "finetune_runs.csv", runs.str());
  write_text(dir / "finetune_table.csv", table.str());
  json summary = {{"finetune", rows}};
  if (fs::exists(ctx.out / "assess" / "quality.json")) {
    summary["label_quality"] = json::parse(read_text(ctx.out / "assess" / "quality.json"));
  }
  if (fs::exists(ctx.out / "analysis" / "summary.json")) {
    summary["analysis"] = json::parse(read_text(ctx.out / "analysis" / "summary.json"));
  }
  write_text(dir / "summary.json", summary.dump(2) + "\n");
  write_run_config(dir, config, {{"command", "report"}});
}

void run_command(const std::string& name, const Context& ctx) {
  if (name == "generate") return cmd_generate(ctx);
  if (name == "assess") return cmd_assess(ctx);
  if (name == "pretrain") return cmd_pretrain(ctx);
  if (name == "finetune") return cmd_finetune(ctx);
  if (name == "analyze") return cmd_analyze(ctx);
  if (name == "report") return cmd_report(ctx);
  throw ConfigError("command", "unknown command '" + name + "'");
}

std::vector<ReportRow> read_report_table(const fs::path& path) {
  std::istringstream in(read_text(path));
  std::string line;
  if (!std::getline(in, line)) throw MissingInputError("empty report " + path.string());
  const auto split = [](const std::string& text) {
    std::vector<std::string> cells;
    std::string cell;
    std::istringstream s(text);
    while (std::getline(s, cell, ',')) cells.push_back(cell);
    if (!text.empty() && text.back() == ',') cells.emplace_back();
    return cells;
  };
  const auto header = split(line);
  std::map<std::string, std::size_t> col;
  for (std::size_t i = 0; i < header.size(); ++i) col[header[i]] = i;
  for (const char* key : {"framework", "encoder_mode", "init", "seeds", "mIoU", "mIoU_mean", "mIoU_std"}) {
    if (!col.count(key)) throw MismatchError(std::string("report lacks column ") + key);
  }
  std::vector<ReportRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto cells = split(line);
    if (cells.size() != header.size()) throw MismatchError("ragged report row: " + line);
    ReportRow row;
    row.framework = models::parse_framework(cells[col["framework"]]);
    row.mode = training::parse_encoder_mode(cells[col["encoder_mode"]]);
    row.init = parse_init(cells[col["init"]]);
    row.seeds = std::stoi(cells[col["seeds"]]);
    row.median = std::stod(cells[col["mIoU"]]);
    row.mean = std::stod(cells[col["mIoU_mean"]]);
    row.std = std::stod(cells[col["mIoU_std"]]);
    rows.push_back(row);
  }
  return rows;
}

}  // namespace noisylab::cli
