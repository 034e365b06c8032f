#include "rmf/selftest.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include <fmt/format.h>

#include "rmf/metrics.hpp"
#include "rmf/pipeline.hpp"
#include "rmf/rng.hpp"

namespace rmf {

std::vector<GradientCheck> check_gradients(const Model& model, const Tensor& batch, std::span<const int> labels,
                                           double epsilon, std::size_t stride, DropoutKey key) {
  const auto analytic = backward(model, batch, labels, key);
  Model probe = model;
  std::vector<GradientCheck> out;
  for (std::size_t t = 0; t < probe.weights().size(); ++t) {
    GradientCheck check{t, 0.0, 0};
    auto& w = probe.weights()[t];
    for (std::size_t i = 0; i < w.size(); i += std::max<std::size_t>(stride, 1)) {
      const double saved = w[i];
      w[i] = saved + epsilon;
      const double up = loss(probe, batch, labels, true, key);
      w[i] = saved - epsilon;
      const double down = loss(probe, batch, labels, true, key);
      w[i] = saved;
      const double numeric = (up - down) / (2.0 * epsilon);
      const double a = analytic.weights[t][i];
      const double scale = std::max({std::fabs(a), std::fabs(numeric), 1e-8});
      check.max_rel_error = std::max(check.max_rel_error, std::fabs(a - numeric) / scale);
      ++check.checked;
    }
    out.push_back(check);
  }
  return out;
}

namespace {

SelftestLine gradient_line() {
  // Every layer kind with dropout active, small enough to check each weight.
  const Model model({LayerSpec::conv2d(3, 3, Activation::relu), LayerSpec::conv2d(4, 3, Activation::relu),
                     LayerSpec::maxpool2d(2), LayerSpec::dropout(0.25), LayerSpec::flatten(),
                     LayerSpec::dense(6, Activation::relu), LayerSpec::dropout(0.5),
                     LayerSpec::dense(3, Activation::softmax)},
                    {8, 8, 2}, 11);
  Tensor batch({4, 8, 8, 2});
  Engine rng(5);
  for (auto& v : batch.values()) v = unit_double(rng());
  const std::vector<int> labels{0, 1, 2, 1};
  double worst = 0.0;
  for (const auto& c : check_gradients(model, batch, labels, 1e-5, 1, {3, 1, 2})) worst = std::max(worst, c.max_rel_error);
  return {"gradient_check", worst < 1e-4, fmt::format("max relative error {:.3e} (threshold 1e-4)", worst)};
}

SelftestLine metrics_line() {
  Engine rng(17);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t classes = 2 + rng() % 7, n = 1 + rng() % 200;
    std::vector<int> truth(n), predicted(n);
    for (std::size_t i = 0; i < n; ++i) {
      truth[i] = static_cast<int>(rng() % classes);
      predicted[i] = static_cast<int>(rng() % classes);
    }
    const auto m = compute_metrics(confusion(truth, predicted, classes));
    // Per-sample tally, independent of the confusion matrix.
    double hits = 0, p_sum = 0, r_sum = 0, present = 0;
    for (std::size_t i = 0; i < n; ++i) hits += truth[i] == predicted[i];
    for (std::size_t c = 0; c < classes; ++c) {
      double tp = 0, pred_c = 0, true_c = 0;
      for (std::size_t i = 0; i < n; ++i) {
        const bool t = truth[i] == static_cast<int>(c), p = predicted[i] == static_cast<int>(c);
        tp += t && p;
        pred_c += p;
        true_c += t;
      }
      if (true_c == 0) continue;
      ++present;
      p_sum += pred_c > 0 ? tp / pred_c : 0.0;
      r_sum += tp / true_c;
    }
    const double p = p_sum / present, r = r_sum / present;
    const double f1 = p + r > 0 ? 2 * p * r / (p + r) : 0.0;
    worst = std::max({worst, std::fabs(m.accuracy - hits / static_cast<double>(n)), std::fabs(m.avg_precision - p),
                      std::fabs(m.avg_recall - r), std::fabs(m.f1 - f1)});
  }
  return {"metric_oracle", worst <= 1e-12, fmt::format("max abs difference {:.3e} over 100 matrices", worst)};
}

SelftestLine pipeline_line() {
  const double poisoned = extent_of_damage({0.06, 0.02, 0.02, 0.01});
  const double original = extent_of_damage({0.94, 0.96, 0.94, 0.94});
  const auto steps = ledger_total({10, 6, 5});
  const bool ok = std::fabs(poisoned - 3.89) <= 1e-9 && std::fabs(original - 0.22) <= 1e-9 && steps == 21;
  return {"pipeline_arithmetic", ok,
          fmt::format("damage {:.10f} / {:.10f}, steps {}", poisoned, original, steps)};
}

}  // namespace

std::vector<SelftestLine> run_selftest() { return {gradient_line(), metrics_line(), pipeline_line()}; }

}  // namespace rmf
