#include "noisylab/analysis/metrics.hpp"

namespace noisylab::analysis {

SegmentationMetrics metrics_from_report(const data::QualityReport& report) {
  return {report.overall_accuracy, report.mean_iou, report.mean_recall, report.per_class};
}

SegmentationMetrics evaluate_segmentation(std::span<const data::LabelMask> predicted,
                                          std::span<const data::LabelMask> ground_truth,
                                          const std::vector<std::string>& class_names) {
  return metrics_from_report(data::assess_label_quality(ground_truth, predicted, class_names));
}

}  // namespace noisylab::analysis
