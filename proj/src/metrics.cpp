#include "rmf/metrics.hpp"

#include <stdexcept>

#include <fmt/format.h>

namespace rmf {

ConfusionMatrix::ConfusionMatrix(std::size_t class_count)
    : classes_(class_count), counts_(class_count * class_count, 0) {
  if (class_count == 0) throw std::invalid_argument("confusion matrix needs at least one class");
}

void ConfusionMatrix::add(std::size_t truth, std::size_t predicted) {
  if (truth >= classes_ || predicted >= classes_) throw std::out_of_range("class index out of range");
  ++counts_[truth * classes_ + predicted];
}

std::uint64_t ConfusionMatrix::total() const noexcept {
  std::uint64_t n = 0;
  for (auto c : counts_) n += c;
  return n;
}

std::uint64_t ConfusionMatrix::trace() const noexcept {
  std::uint64_t n = 0;
  for (std::size_t i = 0; i < classes_; ++i) n += counts_[i * classes_ + i];
  return n;
}

std::uint64_t ConfusionMatrix::row_sum(std::size_t truth) const {
  std::uint64_t n = 0;
  for (std::size_t p = 0; p < classes_; ++p) n += at(truth, p);
  return n;
}

std::uint64_t ConfusionMatrix::column_sum(std::size_t predicted) const {
  std::uint64_t n = 0;
  for (std::size_t t = 0; t < classes_; ++t) n += at(t, predicted);
  return n;
}

ConfusionMatrix confusion(std::span<const int> truth, std::span<const int> predicted, std::size_t class_count) {
  if (truth.size() != predicted.size()) {
    throw std::invalid_argument(fmt::format("{} true labels but {} predictions", truth.size(), predicted.size()));
  }
  if (truth.empty()) throw std::invalid_argument("confusion needs at least one sample");
  ConfusionMatrix cm(class_count);
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (truth[i] < 0 || predicted[i] < 0 || static_cast<std::size_t>(truth[i]) >= class_count ||
        static_cast<std::size_t>(predicted[i]) >= class_count) {
      throw std::invalid_argument(fmt::format("label pair ({}, {}) out of range [0,{})", truth[i], predicted[i], class_count));
    }
    cm.add(static_cast<std::size_t>(truth[i]), static_cast<std::size_t>(predicted[i]));
  }
  return cm;
}

std::vector<ClassMetrics> per_class_metrics(const ConfusionMatrix& cm) {
  std::vector<ClassMetrics> out(cm.class_count());
  for (std::size_t c = 0; c < cm.class_count(); ++c) {
    const auto hit = static_cast<double>(cm.at(c, c));
    const auto row = cm.row_sum(c), col = cm.column_sum(c);
    out[c].support = row;
    out[c].precision = col ? hit / static_cast<double>(col) : 0.0;
    out[c].recall = row ? hit / static_cast<double>(row) : 0.0;
  }
  return out;
}

MetricsBundle compute_metrics(const ConfusionMatrix& cm) {
  const auto total = cm.total();
  if (total == 0) throw std::invalid_argument("cannot compute metrics of an empty confusion matrix");

  MetricsBundle m;
  m.accuracy = static_cast<double>(cm.trace()) / static_cast<double>(total);
  double p = 0.0, r = 0.0;
  std::size_t present = 0;
  for (const auto& c : per_class_metrics(cm)) {
    if (c.support == 0) continue;
    p += c.precision;
    r += c.recall;
    ++present;
  }
  m.avg_precision = p / static_cast<double>(present);
  m.avg_recall = r / static_cast<double>(present);
  const double sum = m.avg_precision + m.avg_recall;
  m.f1 = sum > 0.0 ? 2.0 * m.avg_precision * m.avg_recall / sum : 0.0;
  return m;
}

MetricsBundle evaluate(const Model& model, const LabeledDataset& data) {
  const auto predicted = predict_labels(model, data);
  return compute_metrics(confusion(data.labels, predicted, model.num_classes()));
}

Evaluation evaluate_model(const Model& model, const LabeledDataset& clean_test, const LabeledDataset& triggered_test) {
  if (clean_test.labels != triggered_test.labels) {
    throw std::invalid_argument("triggered test set must carry the clean test labels");
  }
  return {evaluate(model, clean_test), evaluate(model, triggered_test)};
}

}  // namespace rmf
