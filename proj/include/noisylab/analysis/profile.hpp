#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "noisylab/analysis/statistics.hpp"
#include "noisylab/models/checkpoint.hpp"
#include "noisylab/models/model.hpp"

namespace noisylab::analysis {

enum class ProfileKind { fisher, kl };
std::string_view profile_kind_name(ProfileKind kind);
ProfileKind parse_profile_kind(std::string_view name);

struct ProfileEntry {
  std::string path;
  models::Role role = models::Role::encoder;  ///< encoder or decoder
  std::optional<double> value;                ///< empty marks a gap
  std::optional<double> std;                  ///< present iff aggregated

  friend bool operator==(const ProfileEntry&, const ProfileEntry&) = default;
};

struct Smoothing {
  int window = 5;
  int polyorder = 2;
  friend bool operator==(const Smoothing&, const Smoothing&) = default;
};

/// One value per module, in module_paths order.
struct AnalysisProfile {
  ProfileKind kind = ProfileKind::fisher;
  std::vector<ProfileEntry> entries;
  std::optional<Smoothing> smoothing;

  /// Mean of the defined values of `role`; NaN when there are none.
  double role_mean(models::Role role) const;

  friend bool operator==(const AnalysisProfile&, const AnalysisProfile&) = default;
};

/// One labelled sample for the Fisher diagnostic.
struct FisherSample {
  Tensor image;           ///< [C,H,W]
  data::LabelMask labels;
};

/// Per module, mean and population std of fisher_ratio over the samples
/// that define it; modules defined by no sample are gaps.
AnalysisProfile fisher_profile(models::SegmentationModel& model, const std::vector<FisherSample>& samples,
                               const FisherOptions& options = {});

/// Per module, gaussian_kl between Gaussians fitted (mean, population
/// variance) to the flattened convolution weights, exact as P and noisy as
/// Q. Biases and normalisation parameters are excluded.
AnalysisProfile weight_kl_profile(const models::CheckpointBundle& exact, const models::CheckpointBundle& noisy);

/// Per-path mean and population std across profiles with identical paths.
AnalysisProfile aggregate_profiles(const std::vector<AnalysisProfile>& profiles);

/// Savitzky-Golay over the defined values in path order; gaps stay gaps
/// and the std column is kept as is.
AnalysisProfile smooth_profile(const AnalysisProfile& profile, Smoothing smoothing = {});

/// "path,role,value,std" with a leading "# kind=..." comment line that
/// also carries the smoothing parameters. Empty cells mark absent values.
std::string profile_to_csv(const AnalysisProfile& profile);
AnalysisProfile profile_from_csv(std::string_view text);

struct ChartSeries {
  std::string label;
  AnalysisProfile profile;
};

/// Line chart over module index with a std band per series and a marker
/// at the encoder/decoder boundary.
std::string render_profile_svg(const std::vector<ChartSeries>& series, const std::string& title);

/// Binary PGM grid: one row per model, one column per module, each map
/// nearest-resampled to `cell` pixels with a `gap`-pixel white border.
std::string render_map_grid(const std::vector<std::vector<Tensor>>& rows, int cell = 48, int gap = 2);

}  // namespace noisylab::analysis
