#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace dgreid {

// Dense row-major tensor of doubles. Image batches use NCHW, feature
// batches use (rows, dim).
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> shape, double fill = 0.0);
  Tensor(std::initializer_list<std::size_t> shape, double fill = 0.0)
      : Tensor(std::vector<std::size_t>(shape), fill) {}

  static Tensor from_values(std::vector<std::size_t> shape,
                            std::vector<double> values);

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t size() const { return values_.size(); }
  bool empty() const { return values_.empty(); }

  double* data() { return values_.data(); }
  const double* data() const { return values_.data(); }
  std::span<double> values() { return values_; }
  std::span<const double> values() const { return values_; }

  double& operator[](std::size_t i) { return values_[i]; }
  double operator[](std::size_t i) const { return values_[i]; }

  // Element (r, c) of a rank-2 tensor.
  double& at(std::size_t r, std::size_t c) { return values_[r * shape_[1] + c]; }
  double at(std::size_t r, std::size_t c) const {
    return values_[r * shape_[1] + c];
  }

  // Contiguous row r of the leading axis.
  std::span<double> row(std::size_t r);
  std::span<const double> row(std::size_t r) const;
  std::size_t row_size() const;

  void fill(double v);
  void reshape(std::vector<std::size_t> shape);
  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

  Tensor& operator+=(const Tensor& other);

  std::string shape_string() const;

 private:
  std::vector<std::size_t> shape_;
  std::vector<double> values_;
};

std::size_t shape_volume(const std::vector<std::size_t>& shape);

// Stacks equally-shaped rows (first axis) from `source` selected by `rows`.
Tensor gather_rows(const Tensor& source, std::span<const std::size_t> rows);

}  // namespace dgreid
