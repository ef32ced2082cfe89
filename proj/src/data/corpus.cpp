#include "noisylab/data/corpus.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>

#include <nlohmann/json.hpp>

#include "noisylab/data/patch_io.hpp"

namespace noisylab::data {

std::string_view split_name(Split split) {
  switch (split) {
    case Split::pretrain: return "pretrain";
    case Split::finetune: return "finetune";
    case Split::test: return "test";
  }
  return "pretrain";
}

Split parse_split(std::string_view name) {
  if (name == "pretrain") return Split::pretrain;
  if (name == "finetune") return Split::finetune;
  if (name == "test") return Split::test;
  throw ConfigError("split", "unknown split '" + std::string(name) + "'");
}

void CorpusSpec::validate() const {
  scene.validate();
  noise.validate();
  if (pretrain_count < 0 || finetune_count < 0 || test_count < 0) throw ConfigError("counts", "must be >= 0");
  if (variants_per_location < 1 || variants_per_location > 64) {
    throw ConfigError("variants_per_location", "must be in [1, 64]");
  }
  if (finetune_from_pretrain && finetune_count > pretrain_count) {
    throw ConfigError("finetune_count", "cannot exceed pretrain_count when drawn from the pretraining pool");
  }
}

std::uint64_t location_seed(std::uint64_t corpus_seed, Split split, int index) {
  return derive_seed(corpus_seed, 0x5917ULL + static_cast<std::uint64_t>(split)) ^ static_cast<std::uint64_t>(index);
}

std::vector<Location> Corpus::locations(Split split) const {
  std::map<int, Location> grouped;
  for (const auto& e : entries) {
    if (e.split == split) grouped[e.location].push_back(e.triple);
  }
  std::vector<Location> out;
  out.reserve(grouped.size());
  for (auto& [loc, variants] : grouped) {
    std::sort(variants.begin(), variants.end(),
              [](const PatchTriple& a, const PatchTriple& b) { return a.variant_id < b.variant_id; });
    out.push_back(std::move(variants));
  }
  return out;
}

Corpus generate_corpus(const CorpusSpec& spec, int threads) {
  spec.validate();
  Corpus corpus;
  corpus.exact_class_names = spec.scene.exact_class_names();
  corpus.noisy_class_names = spec.scene.pretrain_class_names;

  struct Job {
    Split split;
    int location;
    std::uint64_t seed;
  };
  std::vector<Job> jobs;
  for (int i = 0; i < spec.pretrain_count; ++i) jobs.push_back({Split::pretrain, i, location_seed(spec.seed, Split::pretrain, i)});
  if (spec.finetune_from_pretrain) {
    std::vector<int> pool(static_cast<std::size_t>(spec.pretrain_count));
    std::iota(pool.begin(), pool.end(), 0);
    Rng rng(derive_seed(spec.seed, 0xf1ae7ULL));
    std::shuffle(pool.begin(), pool.end(), rng);
    for (int i = 0; i < spec.finetune_count; ++i) {
      jobs.push_back({Split::finetune, i, location_seed(spec.seed, Split::pretrain, pool[static_cast<std::size_t>(i)])});
    }
  } else {
    for (int i = 0; i < spec.finetune_count; ++i) jobs.push_back({Split::finetune, i, location_seed(spec.seed, Split::finetune, i)});
  }
  for (int i = 0; i < spec.test_count; ++i) jobs.push_back({Split::test, i, location_seed(spec.seed, Split::test, i)});

  const auto v = static_cast<std::size_t>(spec.variants_per_location);
  corpus.entries.resize(jobs.size() * v);
  parallel_for(jobs.size(), threads, [&](std::size_t j) {
    const auto& job = jobs[j];
    const Scene scene = generate_scene(spec.scene, job.seed);
    NoiseConfig noise = spec.noise;
    noise.rng_seed = patch_noise_seed(spec.noise.rng_seed, job.seed);
    const LabelMask noisy = corrupt_mask(scene.mask, spec.scene.pretrain_class_map, noise);
    for (std::size_t k = 0; k < v; ++k) {
      auto& e = corpus.entries[j * v + k];
      e.split = job.split;
      e.location = job.location;
      char name[64];
      std::snprintf(name, sizeof name, "%s_%05d_v%zu.nlp", std::string(split_name(job.split)).c_str(), job.location, k);
      e.file = name;
      e.triple.image = seasonal_variant(scene, static_cast<int>(k), job.seed);
      e.triple.exact_mask = scene.mask;
      e.triple.noisy_mask = noisy;
      e.triple.num_exact_classes = spec.scene.num_exact_classes();
      e.triple.num_noisy_classes = spec.scene.num_pretrain_classes();
      e.triple.variant_id = static_cast<std::uint16_t>(k);
      e.triple.seed = job.seed;
    }
  });
  return corpus;
}

void save_corpus(const Corpus& corpus, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  nlohmann::json files = nlohmann::json::array();
  for (const auto& e : corpus.entries) {
    write_patch(e.triple, dir / e.file);
    files.push_back({{"name", e.file},
                     {"split", split_name(e.split)},
                     {"location", e.location},
                     {"variant", e.triple.variant_id}});
  }
  const nlohmann::json manifest = {{"format", "noisylab-corpus"},
                                   {"version", 1},
                                   {"exact_classes", corpus.exact_class_names},
                                   {"noisy_classes", corpus.noisy_class_names},
                                   {"files", files}};
  std::ofstream out(dir / "manifest.json", std::ios::trunc);
  out << manifest.dump(2) << '\n';
  if (!out) throw std::runtime_error("cannot write manifest in " + dir.string());
}

Corpus load_corpus(const std::filesystem::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw MissingInputError("no manifest.json in " + dir.string());
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("manifest.json: ") + e.what());
  }
  Corpus corpus;
  try {
    corpus.exact_class_names = manifest.at("exact_classes").get<std::vector<std::string>>();
    corpus.noisy_class_names = manifest.at("noisy_classes").get<std::vector<std::string>>();
    for (const auto& f : manifest.at("files")) {
      CorpusEntry e;
      e.file = f.at("name").get<std::string>();
      e.split = parse_split(f.at("split").get<std::string>());
      e.location = f.at("location").get<int>();
      corpus.entries.push_back(std::move(e));
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("manifest.json: ") + e.what());
  }
  for (auto& e : corpus.entries) {
    e.triple = read_patch(dir / e.file);
    if (e.triple.num_exact_classes != static_cast<int>(corpus.exact_class_names.size()) ||
        e.triple.num_noisy_classes != static_cast<int>(corpus.noisy_class_names.size())) {
      throw MismatchError(e.file + ": class counts disagree with the manifest");
    }
  }
  return corpus;
}

}  // namespace noisylab::data
