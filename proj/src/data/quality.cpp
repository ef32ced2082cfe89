#include "noisylab/data/quality.hpp"

#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "noisylab/common.hpp"

namespace noisylab::data {

ConfusionMatrix::ConfusionMatrix(int num_classes) : num_classes_(num_classes) {
  if (num_classes < 1) throw std::invalid_argument("confusion matrix needs at least one class");
  counts_.assign(static_cast<std::size_t>(num_classes) * num_classes, 0);
}

void ConfusionMatrix::add(const LabelMask& reference, const LabelMask& predicted) {
  if (reference.height != predicted.height || reference.width != predicted.width ||
      reference.size() != predicted.size()) {
    throw MismatchError("reference and predicted masks differ in size");
  }
  for (std::size_t i = 0; i < reference.size(); ++i) {
    const int r = reference.values[i];
    const int p = predicted.values[i];
    if (r >= num_classes_ || p >= num_classes_) {
      throw MismatchError("mask value " + std::to_string(std::max(r, p)) + " outside the " +
                          std::to_string(num_classes_) + "-class set");
    }
    ++counts_[static_cast<std::size_t>(r) * num_classes_ + p];
  }
  total_ += reference.size();
}

void ConfusionMatrix::merge(const ConfusionMatrix& other) {
  if (other.num_classes_ != num_classes_) throw MismatchError("confusion matrices over different class sets");
  for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
  total_ += other.total_;
}

std::uint64_t ConfusionMatrix::false_positives(int k) const {
  std::uint64_t s = 0;
  for (int r = 0; r < num_classes_; ++r) {
    if (r != k) s += count(r, k);
  }
  return s;
}

std::uint64_t ConfusionMatrix::false_negatives(int k) const {
  std::uint64_t s = 0;
  for (int p = 0; p < num_classes_; ++p) {
    if (p != k) s += count(k, p);
  }
  return s;
}

namespace {

std::optional<double> ratio(std::uint64_t num, std::uint64_t den) {
  if (den == 0) return std::nullopt;
  return static_cast<double>(num) / static_cast<double>(den);
}

double mean_defined(const std::vector<ClassQuality>& rows, std::optional<double> ClassQuality::*field) {
  double sum = 0.0;
  int n = 0;
  for (const auto& row : rows) {
    if (const auto& v = row.*field) {
      sum += *v;
      ++n;
    }
  }
  return n ? sum / n : std::numeric_limits<double>::quiet_NaN();
}

}  // namespace

QualityReport quality_from_confusion(const ConfusionMatrix& confusion, const std::vector<std::string>& class_names) {
  if (static_cast<int>(class_names.size()) != confusion.num_classes()) {
    throw MismatchError("class name count does not match the confusion matrix");
  }
  if (confusion.total() == 0) throw std::invalid_argument("quality assessment over zero pixels");
  QualityReport report;
  std::uint64_t diagonal = 0;
  for (int k = 0; k < confusion.num_classes(); ++k) {
    const auto tp = confusion.true_positives(k);
    const auto fp = confusion.false_positives(k);
    const auto fn = confusion.false_negatives(k);
    diagonal += tp;
    report.per_class.push_back({class_names[static_cast<std::size_t>(k)], ratio(tp, tp + fp), ratio(tp, tp + fn),
                                ratio(tp, tp + fp + fn)});
  }
  report.overall_accuracy = static_cast<double>(diagonal) / static_cast<double>(confusion.total());
  report.mean_precision = mean_defined(report.per_class, &ClassQuality::precision);
  report.mean_recall = mean_defined(report.per_class, &ClassQuality::recall);
  report.mean_iou = mean_defined(report.per_class, &ClassQuality::iou);
  return report;
}

QualityReport assess_label_quality(std::span<const LabelMask> exact_masks, std::span<const LabelMask> noisy_masks,
                                   const std::vector<std::string>& class_names) {
  if (exact_masks.empty()) throw std::invalid_argument("quality assessment needs at least one mask pair");
  if (exact_masks.size() != noisy_masks.size()) throw MismatchError("exact and noisy mask counts differ");
  ConfusionMatrix confusion(static_cast<int>(class_names.size()));
  for (std::size_t i = 0; i < exact_masks.size(); ++i) confusion.add(exact_masks[i], noisy_masks[i]);
  return quality_from_confusion(confusion, class_names);
}

std::string format_quality_table(const QualityReport& report) {
  auto pct = [](std::optional<double> v) -> std::string {
    if (!v || std::isnan(*v)) return "";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", *v * 100.0);
    return buf;
  };
  std::ostringstream os;
  os << "CLASS";
  for (const auto& c : report.per_class) os << ',' << c.name;
  os << ",MEAN\n";
  os << "OA";
  for (std::size_t i = 0; i < report.per_class.size(); ++i) os << ',';
  os << ',' << pct(report.overall_accuracy) << '\n';
  const auto row = [&](const char* label, std::optional<double> ClassQuality::*field, double mean) {
    os << label;
    for (const auto& c : report.per_class) os << ',' << pct(c.*field);
    os << ',' << pct(mean) << '\n';
  };
  row("precision", &ClassQuality::precision, report.mean_precision);
  row("recall", &ClassQuality::recall, report.mean_recall);
  row("IoU", &ClassQuality::iou, report.mean_iou);
  return os.str();
}

}  // namespace noisylab::data
