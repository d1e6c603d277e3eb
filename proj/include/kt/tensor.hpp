#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace kt::num {

class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// Dense row-major tensor of doubles.
class Tensor {
 public:
  using Shape = std::vector<std::size_t>;

  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> values);

  static Tensor matrix(std::size_t rows, std::size_t cols, double fill = 0.0) {
    return Tensor({rows, cols}, fill);
  }
  // Nested initializer, e.g. Tensor::from_rows({{1, 2}, {3, 4}}).
  static Tensor from_rows(std::initializer_list<std::initializer_list<double>> rows);
  static Tensor scalar(double v) { return Tensor({1}, v); }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return values_.size(); }
  bool empty() const { return values_.empty(); }

  // Rank-2 helpers; a rank-1 tensor is treated as a single row.
  std::size_t rows() const { return shape_.size() == 2 ? shape_[0] : rows_other_rank(); }
  std::size_t cols() const { return shape_.size() == 2 ? shape_[1] : cols_other_rank(); }

  double& operator[](std::size_t i) { return values_[i]; }
  double operator[](std::size_t i) const { return values_[i]; }
  double& operator()(std::size_t r, std::size_t c) { return values_[r * cols() + c]; }
  double operator()(std::size_t r, std::size_t c) const { return values_[r * cols() + c]; }

  std::span<double> values() { return values_; }
  std::span<const double> values() const { return values_; }
  double* data() { return values_.data(); }
  const double* data() const { return values_.data(); }

  void fill(double v);
  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
  bool all_finite() const;
  double item() const;

  bool operator==(const Tensor& other) const = default;

 private:
  std::size_t rows_other_rank() const;
  std::size_t cols_other_rank() const;

  Shape shape_;
  std::vector<double> values_;
};

std::string shape_string(const Tensor::Shape& shape);

// Plain (non-differentiable) kernels shared by the tape.
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
// Softmax along `axis` (0 = down columns, 1 = along rows) of a rank-1 or rank-2 tensor.
Tensor softmax(const Tensor& x, std::size_t axis = 1);

}  // namespace kt::num
