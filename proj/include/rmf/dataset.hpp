#pragma once

#include <cstdint>
#include <filesystem>
#include <utility>
#include <vector>

#include "rmf/model.hpp"
#include "rmf/tensor.hpp"

namespace rmf {

/// Images (N, H, W, C) in [0, 1] with one label and one poison flag per sample.
struct LabeledDataset {
  Tensor images;
  std::vector<int> labels;
  std::vector<bool> poisoned;
  std::size_t class_count = 0;

  std::size_t size() const noexcept { return labels.size(); }
  bool empty() const noexcept { return labels.empty(); }
  ImageShape image_shape() const;

  /// Throws DataError if any invariant is broken.
  void validate() const;

  LabeledDataset subset(std::span<const std::size_t> indices) const;
  std::size_t poisoned_count() const;

  bool operator==(const LabeledDataset&) const = default;
};

struct SyntheticSpec {
  std::size_t class_count = 10;
  std::size_t per_class_train = 60;
  std::size_t per_class_test = 20;
  ImageShape image_size{30, 30, 3};
  double noise_std = 0.05;
  std::uint64_t seed = 0;

  void validate() const;
};

struct TrainTestSplit {
  LabeledDataset train;
  LabeledDataset test;
};

/// Procedural sign-like glyphs: a class-coloured circle, triangle or octagon
/// on a class-specific background, with the class numeral in a 5x7 font.
/// Every sample is shifted by up to two pixels and receives clamped Gaussian
/// noise. Train and test draw from separate noise streams.
TrainTestSplit generate_synthetic(const SyntheticSpec& spec);

/// Noise-free rendering of class `label` shifted by (dx, dy).
Tensor render_glyph(std::size_t label, std::size_t class_count, ImageShape shape, int dx, int dy);

struct ManifestOptions {
  ImageShape shape{30, 30, 3};
  std::size_t class_count = 43;
};

/// Reads a `path,label` CSV manifest of PNG files (paths relative to the
/// manifest). Images are bilinearly resized to `opts.shape`.
LabeledDataset load_directory(const std::filesystem::path& manifest, const ManifestOptions& opts);

/// floor(fraction * N) samples, stratified per class, in seeded order.
LabeledDataset subsample(const LabeledDataset& data, double fraction, std::uint64_t seed);

/// Stratified split; `test_fraction` of every class goes to the test side.
TrainTestSplit split_stratified(const LabeledDataset& data, double test_fraction, std::uint64_t seed);

/// Bilinear resize with half-pixel centres of one (H, W, C) image.
Tensor resize_bilinear(const Tensor& image, std::size_t height, std::size_t width);

/// floor(fraction * population), tolerant of binary rounding just below an integer.
std::size_t fraction_count(double fraction, std::size_t population);

}  // namespace rmf
