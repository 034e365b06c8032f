#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace rmf {

/// Dense row-major array of doubles. Image batches use NHWC layout.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> shape, double fill = 0.0);
  Tensor(std::vector<std::size_t> shape, std::vector<double> data);

  const std::vector<std::size_t>& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::span<double> values() noexcept { return data_; }
  std::span<const double> values() const noexcept { return data_; }
  double* data() noexcept { return data_.data(); }
  const double* data() const noexcept { return data_.data(); }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  /// Number of elements in one slice along axis 0.
  std::size_t stride0() const noexcept;

  /// Same data viewed with a different shape of equal element count.
  Tensor reshaped(std::vector<std::size_t> shape) const;

  bool all_finite() const noexcept;

  bool operator==(const Tensor&) const = default;

 private:
  std::vector<std::size_t> shape_;
  std::vector<double> data_;
};

std::size_t shape_product(std::span<const std::size_t> shape) noexcept;
std::string shape_string(std::span<const std::size_t> shape);

/// Copies the axis-0 slices named by `rows`, in order.
Tensor gather_rows(const Tensor& source, std::span<const std::size_t> rows);

}  // namespace rmf
