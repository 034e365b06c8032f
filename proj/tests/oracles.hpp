#pragma once

// Reference implementations written independently of the library: direct
// loops instead of im2col and GEMM, per-sample tallies instead of the
// confusion matrix. Only the Model accessors are shared.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <vector>

#include "rmf/model.hpp"

namespace oracle {

struct Bundle {
  double accuracy, precision, recall, f1;
};

/// Macro precision/recall over classes present in `truth`, F1 from the macro averages.
inline Bundle metrics(const std::vector<int>& truth, const std::vector<int>& pred, int classes) {
  const std::size_t n = truth.size();
  double correct = 0;
  for (std::size_t i = 0; i < n; ++i) correct += truth[i] == pred[i] ? 1 : 0;
  double p_sum = 0, r_sum = 0;
  int present = 0;
  for (int c = 0; c < classes; ++c) {
    int tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < n; ++i) {
      if (truth[i] == c && pred[i] == c) ++tp;
      if (truth[i] != c && pred[i] == c) ++fp;
      if (truth[i] == c && pred[i] != c) ++fn;
    }
    if (tp + fn == 0) continue;
    ++present;
    p_sum += tp + fp == 0 ? 0.0 : static_cast<double>(tp) / (tp + fp);
    r_sum += static_cast<double>(tp) / (tp + fn);
  }
  const double p = present ? p_sum / present : 0.0;
  const double r = present ? r_sum / present : 0.0;
  return {correct / static_cast<double>(n), p, r, p + r > 0 ? 2 * p * r / (p + r) : 0.0};
}

/// Inference-mode forward pass of one (H, W, C) sample with plain loops.
inline std::vector<double> forward_sample(const rmf::Model& model, const double* x) {
  std::vector<double> act(x, x + model.input_shape().size());
  std::size_t h = model.input_shape().height, w = model.input_shape().width, c = model.input_shape().channels;
  for (std::size_t li = 0; li < model.layers().size(); ++li) {
    const auto& L = model.layers()[li];
    const auto off = model.weight_offset(li);
    std::vector<double> next;
    switch (L.kind) {
      case rmf::LayerKind::conv2d: {
        const auto& K = model.weights()[off];
        const auto& B = model.weights()[off + 1];
        const std::size_t k = L.kernel, f = L.filters, oh = h - k + 1, ow = w - k + 1;
        next.assign(oh * ow * f, 0.0);
        for (std::size_t y = 0; y < oh; ++y)
          for (std::size_t xx = 0; xx < ow; ++xx)
            for (std::size_t o = 0; o < f; ++o) {
              double s = B[o];
              for (std::size_t dy = 0; dy < k; ++dy)
                for (std::size_t dx = 0; dx < k; ++dx)
                  for (std::size_t ci = 0; ci < c; ++ci)
                    s += act[((y + dy) * w + xx + dx) * c + ci] * K[((dy * k + dx) * c + ci) * f + o];
              if (L.activation == rmf::Activation::relu) s = std::max(s, 0.0);
              next[(y * ow + xx) * f + o] = s;
            }
        h = oh, w = ow, c = f;
        break;
      }
      case rmf::LayerKind::maxpool2d: {
        const std::size_t p = L.pool, oh = h / p, ow = w / p;
        next.assign(oh * ow * c, -std::numeric_limits<double>::infinity());
        for (std::size_t y = 0; y < oh * p; ++y)
          for (std::size_t xx = 0; xx < ow * p; ++xx)
            for (std::size_t ci = 0; ci < c; ++ci) {
              double& m = next[((y / p) * ow + xx / p) * c + ci];
              m = std::max(m, act[(y * w + xx) * c + ci]);
            }
        h = oh, w = ow;
        break;
      }
      case rmf::LayerKind::dropout:
      case rmf::LayerKind::flatten:
        next = act;
        break;
      case rmf::LayerKind::dense: {
        const auto& K = model.weights()[off];
        const auto& B = model.weights()[off + 1];
        const std::size_t in = act.size(), units = L.units;
        next.assign(units, 0.0);
        for (std::size_t u = 0; u < units; ++u) {
          double s = B[u];
          for (std::size_t i = 0; i < in; ++i) s += act[i] * K[i * units + u];
          next[u] = s;
        }
        if (L.activation == rmf::Activation::relu) {
          for (auto& v : next) v = std::max(v, 0.0);
        } else if (L.activation == rmf::Activation::softmax) {
          const double m = *std::max_element(next.begin(), next.end());
          double z = 0;
          for (auto& v : next) z += (v = std::exp(v - m));
          for (auto& v : next) v /= z;
        }
        break;
      }
    }
    act = std::move(next);
  }
  return act;
}

inline double extent(double a, double p, double r, double f) { return (1 - a) + (1 - p) + (1 - r) + (1 - f); }

}  // namespace oracle
