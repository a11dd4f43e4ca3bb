#include "fsim/tensor.hpp"

#include <algorithm>
#include <functional>
#include <numeric>

#include "fsim/common.hpp"

namespace fsim {

namespace {
std::size_t element_count(const std::vector<std::size_t>& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}
}  // namespace

Tensor::Tensor(std::vector<std::size_t> shape, double fill)
    : shape_(std::move(shape)), data_(element_count(shape_), fill) {}

void Tensor::fill(double value) { std::fill(data_.begin(), data_.end(), value); }

void Tensor::assign(std::span<const double> values) {
  require(values.size() == data_.size(), "assign: size mismatch for " + shape_string(shape_));
  std::copy(values.begin(), values.end(), data_.begin());
}

void Tensor::reshape(std::vector<std::size_t> shape) {
  require(element_count(shape) == data_.size(),
          "reshape: " + shape_string(shape_) + " -> " + shape_string(shape));
  shape_ = std::move(shape);
}

std::string shape_string(const std::vector<std::size_t>& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += ", ";
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

}  // namespace fsim
