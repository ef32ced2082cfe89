#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "noisylab/data/noise.hpp"
#include "noisylab/data/patch.hpp"
#include "noisylab/data/scene.hpp"

namespace noisylab::data {

enum class Split { pretrain, finetune, test };

std::string_view split_name(Split split);
Split parse_split(std::string_view name);

struct CorpusEntry {
  std::string file;
  Split split = Split::pretrain;
  int location = 0;
  PatchTriple triple;
};

struct CorpusSpec {
  SceneConfig scene = SceneConfig::defaults();
  NoiseConfig noise;
  int pretrain_count = 2000;
  int finetune_count = 100;
  int test_count = 400;
  int variants_per_location = 1;
  /// Draw the fine-tune locations from the pretraining pool instead of
  /// generating fresh ones.
  bool finetune_from_pretrain = true;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Co-registered acquisitions of one location; element 0 is variant 0.
using Location = std::vector<PatchTriple>;

struct Corpus {
  std::vector<std::string> exact_class_names;
  std::vector<std::string> noisy_class_names;
  std::vector<CorpusEntry> entries;

  /// Entries of `split` grouped by location, in location order.
  std::vector<Location> locations(Split split) const;
};

/// Seed of location `index` in `split`: a split-specific base seed XOR the
/// location index.
std::uint64_t location_seed(std::uint64_t corpus_seed, Split split, int index);

Corpus generate_corpus(const CorpusSpec& spec, int threads = 1);

/// Writes one .nlp file per entry plus manifest.json.
void save_corpus(const Corpus& corpus, const std::filesystem::path& dir);
Corpus load_corpus(const std::filesystem::path& dir);

}  // namespace noisylab::data
