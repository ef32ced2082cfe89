#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "noisylab/data/patch.hpp"

namespace noisylab::data {

/// Pooled confusion counts; rows are reference classes, columns predicted.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(int num_classes);

  /// Throws MismatchError when sizes differ or a value is outside the class set.
  void add(const LabelMask& reference, const LabelMask& predicted);
  void merge(const ConfusionMatrix& other);

  int num_classes() const noexcept { return num_classes_; }
  std::uint64_t count(int reference, int predicted) const {
    return counts_[static_cast<std::size_t>(reference) * num_classes_ + predicted];
  }
  std::uint64_t total() const noexcept { return total_; }
  std::uint64_t true_positives(int k) const { return count(k, k); }
  std::uint64_t false_positives(int k) const;
  std::uint64_t false_negatives(int k) const;

 private:
  int num_classes_;
  std::vector<std::uint64_t> counts_;
  std::uint64_t total_ = 0;
};

/// Per-class scores. An entry is empty when its denominator is zero:
/// precision when the class is never predicted, recall when it never
/// occurs in the reference, IoU when it is absent from both.
struct ClassQuality {
  std::string name;
  std::optional<double> precision;
  std::optional<double> recall;
  std::optional<double> iou;
};

struct QualityReport {
  double overall_accuracy = 0.0;
  std::vector<ClassQuality> per_class;
  // Unweighted means over the defined per-class entries.
  double mean_precision = 0.0;
  double mean_recall = 0.0;
  double mean_iou = 0.0;
};

QualityReport quality_from_confusion(const ConfusionMatrix& confusion, const std::vector<std::string>& class_names);

/// Pooled-confusion quality of `noisy_masks` against `exact_masks`.
QualityReport assess_label_quality(std::span<const LabelMask> exact_masks, std::span<const LabelMask> noisy_masks,
                                   const std::vector<std::string>& class_names);

/// CSV in the layout of a label-quality table: a CLASS header followed by
/// OA, precision, recall and IoU rows with a trailing MEAN column; values in
/// percent with two decimals, empty cells for undefined entries.
std::string format_quality_table(const QualityReport& report);

}  // namespace noisylab::data
