#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "rmf/dataset.hpp"
#include "rmf/model.hpp"

namespace rmf {

/// Rows are true classes, columns predicted classes.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(std::size_t class_count);

  std::size_t class_count() const noexcept { return classes_; }
  std::uint64_t at(std::size_t truth, std::size_t predicted) const { return counts_.at(truth * classes_ + predicted); }
  void add(std::size_t truth, std::size_t predicted);

  std::uint64_t total() const noexcept;
  std::uint64_t trace() const noexcept;
  std::uint64_t row_sum(std::size_t truth) const;
  std::uint64_t column_sum(std::size_t predicted) const;

  bool operator==(const ConfusionMatrix&) const = default;

 private:
  std::size_t classes_;
  std::vector<std::uint64_t> counts_;
};

struct MetricsBundle {
  double accuracy = 0.0;
  double avg_precision = 0.0;
  double avg_recall = 0.0;
  double f1 = 0.0;

  bool operator==(const MetricsBundle&) const = default;
};

ConfusionMatrix confusion(std::span<const int> truth, std::span<const int> predicted, std::size_t class_count);

/// Accuracy plus macro precision/recall over the classes that occur in the
/// true labels (an empty denominator contributes 0). F1 is the harmonic mean
/// of the two macro averages.
MetricsBundle compute_metrics(const ConfusionMatrix& cm);

struct ClassMetrics {
  std::size_t support = 0;
  double precision = 0.0;
  double recall = 0.0;
};
std::vector<ClassMetrics> per_class_metrics(const ConfusionMatrix& cm);

struct Evaluation {
  MetricsBundle clean;
  MetricsBundle attacked;
};

/// Metrics of one model on the clean test set and on its triggered copy
/// (same true labels, trigger stamped on every image).
Evaluation evaluate_model(const Model& model, const LabeledDataset& clean_test, const LabeledDataset& triggered_test);

MetricsBundle evaluate(const Model& model, const LabeledDataset& data);

}  // namespace rmf
