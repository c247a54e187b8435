#include "dgreid/tensor.hpp"

#include <algorithm>
#include <cstring>
#include <functional>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace dgreid {

std::size_t shape_volume(const std::vector<std::size_t>& shape) {
  if (shape.empty()) return 0;
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

Tensor::Tensor(std::vector<std::size_t> shape, double fill)
    : shape_(std::move(shape)), values_(shape_volume(shape_), fill) {}

Tensor Tensor::from_values(std::vector<std::size_t> shape,
                           std::vector<double> values) {
  if (shape_volume(shape) != values.size()) {
    throw std::invalid_argument("tensor: value count does not match shape");
  }
  Tensor t;
  t.shape_ = std::move(shape);
  t.values_ = std::move(values);
  return t;
}

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= shape_.size()) {
    throw std::out_of_range("tensor: axis " + std::to_string(axis) +
                            " out of range for shape " + shape_string());
  }
  return shape_[axis];
}

std::size_t Tensor::row_size() const {
  if (shape_.empty() || shape_[0] == 0) return 0;
  return values_.size() / shape_[0];
}

std::span<double> Tensor::row(std::size_t r) {
  const std::size_t n = row_size();
  return {values_.data() + r * n, n};
}

std::span<const double> Tensor::row(std::size_t r) const {
  const std::size_t n = row_size();
  return {values_.data() + r * n, n};
}

void Tensor::fill(double v) { std::fill(values_.begin(), values_.end(), v); }

void Tensor::reshape(std::vector<std::size_t> shape) {
  if (shape_volume(shape) != values_.size()) {
    throw std::invalid_argument("tensor: cannot reshape " + shape_string());
  }
  shape_ = std::move(shape);
}

Tensor& Tensor::operator+=(const Tensor& other) {
  if (values_.size() != other.values_.size()) {
    throw std::invalid_argument("tensor: size mismatch in +=");
  }
  for (std::size_t i = 0; i < values_.size(); ++i) values_[i] += other.values_[i];
  return *this;
}

std::string Tensor::shape_string() const {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape_.size(); ++i) {
    if (i) os << ", ";
    os << shape_[i];
  }
  os << ')';
  return os.str();
}

Tensor gather_rows(const Tensor& source, std::span<const std::size_t> rows) {
  std::vector<std::size_t> shape = source.shape();
  if (shape.empty()) throw std::invalid_argument("gather_rows: rank-0 tensor");
  shape[0] = rows.size();
  Tensor out(shape);
  const std::size_t n = source.row_size();
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= source.dim(0)) throw std::out_of_range("gather_rows: index");
    std::memcpy(out.data() + i * n, source.data() + rows[i] * n,
                n * sizeof(double));
  }
  return out;
}

}  // namespace dgreid
