#pragma once

#include <string>
#include <vector>

#include "rmf/model.hpp"

namespace rmf {

struct GradientCheck {
  std::size_t tensor = 0;      ///< index into Model::weights()
  double max_rel_error = 0.0;  ///< worst |analytic - numeric| / max(|analytic|, |numeric|, 1e-8)
  std::size_t checked = 0;
};

/// Central finite differences of the training-mode loss (fixed dropout key)
/// against backward(). `stride` > 1 checks every stride-th weight only.
std::vector<GradientCheck> check_gradients(const Model& model, const Tensor& batch, std::span<const int> labels,
                                           double epsilon = 1e-5, std::size_t stride = 1, DropoutKey key = {});

struct SelftestLine {
  std::string name;
  bool passed = false;
  std::string detail;
};

/// Gradient checks for every layer kind plus metric and pipeline oracles.
std::vector<SelftestLine> run_selftest();

}  // namespace rmf
