#include "rmf/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <functional>
#include <numeric>
#include <stdexcept>

#include <fmt/format.h>
#include <fmt/ranges.h>

namespace rmf {

std::size_t shape_product(std::span<const std::size_t> shape) noexcept {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

std::string shape_string(std::span<const std::size_t> shape) {
  return fmt::format("({})", fmt::join(shape, ","));
}

Tensor::Tensor(std::vector<std::size_t> shape, double fill)
    : shape_(std::move(shape)), data_(shape_product(shape_), fill) {}

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  if (shape_product(shape_) != data_.size()) {
    throw std::invalid_argument(fmt::format("tensor shape {} does not hold {} values",
                                            shape_string(shape_), data_.size()));
  }
}

std::size_t Tensor::stride0() const noexcept {
  if (shape_.empty()) return 1;
  return shape_product(std::span(shape_).subspan(1));
}

Tensor Tensor::reshaped(std::vector<std::size_t> shape) const {
  return Tensor(std::move(shape), data_);
}

bool Tensor::all_finite() const noexcept {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

Tensor gather_rows(const Tensor& source, std::span<const std::size_t> rows) {
  if (source.rank() == 0) throw std::invalid_argument("gather_rows on a scalar tensor");
  auto shape = source.shape();
  const std::size_t stride = source.stride0();
  shape[0] = rows.size();
  Tensor out(shape);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= source.dim(0)) throw std::out_of_range("gather_rows index out of range");
    std::memcpy(out.data() + i * stride, source.data() + rows[i] * stride, stride * sizeof(double));
  }
  return out;
}

}  // namespace rmf
