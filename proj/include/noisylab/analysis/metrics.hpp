#pragma once

#include <span>
#include <string>
#include <vector>

#include "noisylab/data/quality.hpp"

namespace noisylab::analysis {

/// Pooled-confusion segmentation scores. `average_accuracy` is the mean
/// recall over classes present in the ground truth; `mean_iou` averages
/// the classes present in either ground truth or prediction.
struct SegmentationMetrics {
  double overall_accuracy = 0.0;
  double mean_iou = 0.0;
  double average_accuracy = 0.0;
  std::vector<data::ClassQuality> per_class;
};

SegmentationMetrics metrics_from_report(const data::QualityReport& report);

/// Throws MismatchError on count or size mismatch and on labels outside
/// the class set.
SegmentationMetrics evaluate_segmentation(std::span<const data::LabelMask> predicted,
                                          std::span<const data::LabelMask> ground_truth,
                                          const std::vector<std::string>& class_names);

}  // namespace noisylab::analysis
