#include "fedreg/tensor.hpp"

#include <cmath>
#include <functional>
#include <numeric>

#include "fedreg/errors.hpp"

namespace fedreg {

Tensor::Tensor(std::vector<std::size_t> dims, double fill)
    : shape(std::move(dims)), data(volume(shape), fill) {}

std::size_t Tensor::volume(std::span<const std::size_t> dims) {
  return std::accumulate(dims.begin(), dims.end(), std::size_t{1}, std::multiplies<>());
}

std::size_t Tensor::row_size() const {
  if (shape.empty()) throw ConfigError("row_size on rank-0 tensor");
  return volume(std::span(shape).subspan(1));
}

std::span<double> Tensor::row(std::size_t i) {
  const std::size_t n = row_size();
  return std::span(data).subspan(i * n, n);
}

std::span<const double> Tensor::row(std::size_t i) const {
  const std::size_t n = row_size();
  return std::span(data).subspan(i * n, n);
}

bool Tensor::all_finite() const noexcept {
  for (double v : data)
    if (!std::isfinite(v)) return false;
  return true;
}

}  // namespace fedreg
