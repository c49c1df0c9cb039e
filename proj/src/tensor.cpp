#include "dirgnn/tensor.hpp"

#include <algorithm>
#include <cmath>

#include "dirgnn/errors.hpp"

namespace dirgnn {

Tensor::Tensor(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows_ * cols_) {
    throw DimensionError("tensor " + shape_str() + " given " + std::to_string(data_.size()) +
                         " values");
  }
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

double Tensor::item() const {
  if (data_.size() != 1) {
    throw DimensionError("item() on non-scalar tensor " + shape_str());
  }
  return data_[0];
}

std::string Tensor::shape_str() const {
  return "[" + std::to_string(rows_) + "x" + std::to_string(cols_) + "]";
}

}  // namespace dirgnn
