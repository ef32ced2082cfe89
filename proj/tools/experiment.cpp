#include "experiment.hpp"

#include <fstream>
#include <functional>
#include <map>

#include "noisylab/common.hpp"

namespace noisylab::cli {

using nlohmann::json;

std::string_view init_name(Init init) {
  switch (init) {
    case Init::random: return "random";
    case Init::noisy: return "noisy";
    case Init::exact: return "exact";
  }
  return "?";
}

Init parse_init(std::string_view name) {
  if (name == "random") return Init::random;
  if (name == "noisy") return Init::noisy;
  if (name == "exact") return Init::exact;
  throw ConfigError("init", "unknown init '" + std::string(name) + "' (expected random, noisy or exact)");
}

namespace {

std::string_view regime_name(training::LabelSource s) { return s == training::LabelSource::noisy ? "noisy" : "exact"; }

training::LabelSource parse_regime(std::string_view name) {
  if (name == "noisy") return training::LabelSource::noisy;
  if (name == "exact") return training::LabelSource::exact;
  throw ConfigError("regimes", "unknown label regime '" + std::string(name) + "'");
}

using Handler = std::function<void(const json&)>;

/// Dispatches every key of `j` to its handler; unknown keys and type
/// errors become ConfigError("section.key").
void visit(const json& j, const std::string& section, const std::map<std::string, Handler>& handlers) {
  if (!j.is_object()) throw ConfigError(section, "expected an object");
  for (const auto& [key, value] : j.items()) {
    const std::string field = section.empty() ? key : section + "." + key;
    const auto it = handlers.find(key);
    if (it == handlers.end()) throw ConfigError(field, "unknown key");
    try {
      it->second(value);
    } catch (const ConfigError& e) {
      if (section.empty() || e.field().rfind(section + ".", 0) == 0) throw;
      throw ConfigError(field, e.message());
    } catch (const json::exception& e) {
      throw ConfigError(field, e.what());
    }
  }
}

template <typename T>
Handler set(T& target) {
  return [&target](const json& v) { target = v.get<T>(); };
}

training::TrainConfig train_section(const json& j, const training::TrainConfig& base, const char* section,
                                    const std::map<std::string, Handler>& extra) {
  json core = json::object();
  json rest = json::object();
  for (const auto& [key, value] : j.items()) {
    (extra.count(key) ? rest : core)[key] = value;
  }
  visit(rest, section, extra);
  try {
    return training::train_config_from_json(core, base);
  } catch (const ConfigError& e) {
    throw ConfigError(std::string(section) + "." + e.field(), e.message());
  }
}

}  // namespace

ExperimentConfig ExperimentConfig::from_json(const json& j) {
  ExperimentConfig c;
  auto& corpus = c.corpus;
  std::string output;
  visit(j, "",
        {{"output_dir", [&](const json& v) { output = v.get<std::string>(); c.output_dir = output; }},
         {"seeds", set(c.seeds)},
         {"scene",
          [&](const json& s) {
            visit(s, "scene",
                  {{"patch_size", set(corpus.scene.patch_size)},
                   {"pretrain_count", set(corpus.pretrain_count)},
                   {"finetune_count", set(corpus.finetune_count)},
                   {"test_count", set(corpus.test_count)},
                   {"variants_per_location", set(corpus.variants_per_location)},
                   {"finetune_from_pretrain", set(corpus.finetune_from_pretrain)},
                   {"seed", set(corpus.seed)}});
          }},
         {"noise",
          [&](const json& s) {
            data::NoiseConfig fixed;
            bool any_fixed = false;
            const auto knob = [&](auto& field) {
              return [&field, &any_fixed](const json& v) {
                field = v.get<std::remove_reference_t<decltype(field)>>();
                any_fixed = true;
              };
            };
            visit(s, "noise",
                  {{"object_drop_prob", knob(fixed.object_drop_prob)},
                   {"boundary_radius", knob(fixed.boundary_radius)},
                   {"blob_fp_rate", knob(fixed.blob_fp_rate)},
                   {"class_swap_prob", knob(fixed.class_swap_prob)},
                   {"rng_seed", set(fixed.rng_seed)},
                   {"target_mean_iou", set(c.noise.target_mean_iou)},
                   {"calibration_patches", set(c.noise.calibration_patches)},
                   {"tolerance", set(c.noise.tolerance)}});
            if (any_fixed) c.noise.fixed = fixed;
          }},
         {"model",
          [&](const json& s) {
            visit(s, "model",
                  {{"in_channels", set(c.model.encoder.in_channels)},
                   {"stage_widths", set(c.model.encoder.stage_widths)},
                   {"blocks_per_stage", set(c.model.encoder.blocks_per_stage)},
                   {"pretrain_framework",
                    [&](const json& v) { c.model.pretrain_framework = models::parse_framework(v.get<std::string>()); }},
                   {"frameworks", [&](const json& v) {
                      c.model.frameworks.clear();
                      for (const auto& f : v) c.model.frameworks.push_back(models::parse_framework(f.get<std::string>()));
                    }}});
          }},
         {"pretrain",
          [&](const json& s) {
            c.pretrain.train = train_section(s, c.pretrain.train, "pretrain",
                                             {{"regimes", [&](const json& v) {
                                                 c.pretrain.regimes.clear();
                                                 for (const auto& r : v) c.pretrain.regimes.push_back(parse_regime(r.get<std::string>()));
                                               }}});
          }},
         {"finetune",
          [&](const json& s) {
            c.finetune.train = train_section(
                s, c.finetune.train, "finetune",
                {{"encoder_mode",
                  [](const json&) -> void { throw ConfigError("encoder_mode", "set encoder_modes (a list) instead"); }},
                 {"inits",
                  [&](const json& v) {
                    c.finetune.inits.clear();
                    for (const auto& i : v) c.finetune.inits.push_back(parse_init(i.get<std::string>()));
                  }},
                 {"encoder_modes", [&](const json& v) {
                    c.finetune.encoder_modes.clear();
                    for (const auto& m : v) c.finetune.encoder_modes.push_back(training::parse_encoder_mode(m.get<std::string>()));
                  }}});
          }},
         {"analysis", [&](const json& s) {
            visit(s, "analysis",
                  {{"samples", set(c.analysis.samples)},
                   {"exclude_background", set(c.analysis.exclude_background)},
                   {"min_pixels", set(c.analysis.fisher.min_pixels)},
                   {"eps", set(c.analysis.fisher.eps)},
                   {"savgol_window", set(c.analysis.savgol_window)},
                   {"savgol_polyorder", set(c.analysis.savgol_polyorder)},
                   {"grid_cell", set(c.analysis.grid_cell)}});
          }}});
  c.corpus.scene.channels = c.model.encoder.in_channels;
  c.validate();
  return c;
}

ExperimentConfig ExperimentConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw MissingInputError("cannot open config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError("config", std::string("invalid JSON: ") + e.what());
  }
  return from_json(j);
}

json ExperimentConfig::to_json() const {
  json noise;
  if (this->noise.fixed) {
    const auto& n = *this->noise.fixed;
    noise = {{"object_drop_prob", n.object_drop_prob},
             {"boundary_radius", n.boundary_radius},
             {"blob_fp_rate", n.blob_fp_rate},
             {"class_swap_prob", n.class_swap_prob},
             {"rng_seed", n.rng_seed}};
  } else {
    noise = {{"target_mean_iou", this->noise.target_mean_iou},
             {"calibration_patches", this->noise.calibration_patches},
             {"tolerance", this->noise.tolerance}};
  }
  json frameworks = json::array();
  for (auto f : model.frameworks) frameworks.push_back(models::framework_name(f));
  json regimes = json::array();
  for (auto r : pretrain.regimes) regimes.push_back(regime_name(r));
  json inits = json::array();
  for (auto i : finetune.inits) inits.push_back(init_name(i));
  json modes = json::array();
  for (auto m : finetune.encoder_modes) modes.push_back(training::encoder_mode_name(m));
  json pre = training::to_json(pretrain.train);
  pre.erase("encoder_mode");
  pre["regimes"] = regimes;
  json fine = training::to_json(finetune.train);
  fine.erase("encoder_mode");
  fine["inits"] = inits;
  fine["encoder_modes"] = modes;
  return {{"output_dir", output_dir.string()},
          {"seeds", seeds},
          {"scene",
           {{"patch_size", corpus.scene.patch_size},
            {"pretrain_count", corpus.pretrain_count},
            {"finetune_count", corpus.finetune_count},
            {"test_count", corpus.test_count},
            {"variants_per_location", corpus.variants_per_location},
            {"finetune_from_pretrain", corpus.finetune_from_pretrain},
            {"seed", corpus.seed}}},
          {"noise", noise},
          {"model",
           {{"in_channels", model.encoder.in_channels},
            {"stage_widths", model.encoder.stage_widths},
            {"blocks_per_stage", model.encoder.blocks_per_stage},
            {"pretrain_framework", models::framework_name(model.pretrain_framework)},
            {"frameworks", frameworks}}},
          {"pretrain", pre},
          {"finetune", fine},
          {"analysis",
           {{"samples", analysis.samples},
            {"exclude_background", analysis.exclude_background},
            {"min_pixels", analysis.fisher.min_pixels},
            {"eps", analysis.fisher.eps},
            {"savgol_window", analysis.savgol_window},
            {"savgol_polyorder", analysis.savgol_polyorder},
            {"grid_cell", analysis.grid_cell}}}};
}

void ExperimentConfig::validate() const {
  const auto prefixed = [](const char* section, const auto& fn) {
    try {
      fn();
    } catch (const ConfigError& e) {
      throw ConfigError(std::string(section) + "." + e.field(), e.message());
    }
  };
  prefixed("scene", [&] { corpus.validate(); });
  if (noise.fixed) prefixed("noise", [&] { noise.fixed->validate(); });
  if (!(noise.target_mean_iou >= 0.0 && noise.target_mean_iou <= 1.0)) {
    throw ConfigError("noise.target_mean_iou", "must be in [0, 1]");
  }
  if (noise.calibration_patches < 1) throw ConfigError("noise.calibration_patches", "must be >= 1");
  if (!(noise.tolerance > 0.0)) throw ConfigError("noise.tolerance", "must be > 0");
  prefixed("model", [&] { model.encoder.validate(); });
  if (corpus.scene.patch_size % model.encoder.output_stride() != 0) {
    throw ConfigError("model.stage_widths", "output stride must divide scene.patch_size");
  }
  if (model.frameworks.empty()) throw ConfigError("model.frameworks", "at least one framework required");
  prefixed("pretrain", [&] { pretrain.train.validate(); });
  prefixed("finetune", [&] { finetune.train.validate(); });
  if (pretrain.train.phase != training::Phase::pretrain) throw ConfigError("pretrain.phase", "must be pretrain");
  if (finetune.train.phase != training::Phase::finetune) throw ConfigError("finetune.phase", "must be finetune");
  if (pretrain.regimes.empty()) throw ConfigError("pretrain.regimes", "at least one regime required");
  if (finetune.inits.empty()) throw ConfigError("finetune.inits", "at least one init required");
  if (finetune.encoder_modes.empty()) throw ConfigError("finetune.encoder_modes", "at least one mode required");
  const auto crop_ok = [&](const training::TrainConfig& t) {
    return !t.crop_size || (*t.crop_size <= corpus.scene.patch_size && *t.crop_size % model.encoder.output_stride() == 0);
  };
  if (!crop_ok(pretrain.train)) throw ConfigError("pretrain.crop_size", "must be <= patch_size and divisible by the output stride");
  if (!crop_ok(finetune.train)) throw ConfigError("finetune.crop_size", "must be <= patch_size and divisible by the output stride");
  if (analysis.samples < 1) throw ConfigError("analysis.samples", "must be >= 1");
  if (analysis.fisher.min_pixels < 1) throw ConfigError("analysis.min_pixels", "must be >= 1");
  if (!(analysis.fisher.eps > 0.0)) throw ConfigError("analysis.eps", "must be > 0");
  if (analysis.savgol_window < 1 || analysis.savgol_window % 2 == 0) {
    throw ConfigError("analysis.savgol_window", "must be odd and positive");
  }
  if (analysis.savgol_polyorder < 0 || analysis.savgol_polyorder >= analysis.savgol_window) {
    throw ConfigError("analysis.savgol_polyorder", "must be in [0, savgol_window)");
  }
  if (analysis.grid_cell < 4) throw ConfigError("analysis.grid_cell", "must be >= 4");
  if (seeds.empty()) throw ConfigError("seeds", "at least one seed required");
}

std::string json_hash(const json& j) { return hex64(fnv1a(j.dump())); }

}  // namespace noisylab::cli
