#include "kt/tensor.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <sstream>

namespace kt::num {

namespace {

std::size_t product(const Tensor::Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMatrix>;
using MutMap = Eigen::Map<RowMatrix>;

}  // namespace

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)), values_(product(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> values)
    : shape_(std::move(shape)), values_(std::move(values)) {
  if (product(shape_) != values_.size())
    throw DimensionError("tensor shape " + shape_string(shape_) + " does not match " +
                         std::to_string(values_.size()) + " values");
}

Tensor Tensor::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
  const std::size_t r = rows.size();
  const std::size_t c = r ? rows.begin()->size() : 0;
  std::vector<double> values;
  values.reserve(r * c);
  for (const auto& row : rows) {
    if (row.size() != c) throw DimensionError("ragged rows");
    values.insert(values.end(), row.begin(), row.end());
  }
  return Tensor({r, c}, std::move(values));
}

std::size_t Tensor::rows_other_rank() const {
  if (shape_.size() == 1) return 1;
  throw DimensionError("rows() needs rank 1 or 2, got " + shape_string(shape_));
}

std::size_t Tensor::cols_other_rank() const {
  if (shape_.size() == 1) return shape_[0];
  throw DimensionError("cols() needs rank 1 or 2, got " + shape_string(shape_));
}

void Tensor::fill(double v) { std::fill(values_.begin(), values_.end(), v); }

bool Tensor::all_finite() const {
  return std::all_of(values_.begin(), values_.end(), [](double v) { return std::isfinite(v); });
}

double Tensor::item() const {
  if (values_.size() != 1) throw ContractError("item() on non-scalar tensor " + shape_string(shape_));
  return values_[0];
}

std::string shape_string(const Tensor::Shape& shape) {
  std::ostringstream out;
  out << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) out << (i ? "," : "") << shape[i];
  out << ')';
  return out.str();
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.cols() != b.rows())
    throw DimensionError("matmul " + shape_string(a.shape()) + " x " + shape_string(b.shape()));
  Tensor out = Tensor::matrix(a.rows(), b.cols());
  MutMap(out.data(), out.rows(), out.cols()).noalias() =
      ConstMap(a.data(), a.rows(), a.cols()) * ConstMap(b.data(), b.rows(), b.cols());
  return out;
}

Tensor transpose(const Tensor& a) {
  if (a.rank() != 2) throw DimensionError("transpose needs rank 2");
  Tensor out = Tensor::matrix(a.cols(), a.rows());
  MutMap(out.data(), out.rows(), out.cols()) = ConstMap(a.data(), a.rows(), a.cols()).transpose();
  return out;
}

Tensor softmax(const Tensor& x, std::size_t axis) {
  if (x.rank() > 2 || axis > 1) throw DimensionError("softmax supports rank <= 2 and axis 0 or 1");
  const std::size_t rows = x.rows(), cols = x.cols();
  Tensor out = x;
  const std::size_t lines = axis == 1 ? rows : cols;
  const std::size_t length = axis == 1 ? cols : rows;
  const std::size_t stride = axis == 1 ? 1 : cols;
  for (std::size_t line = 0; line < lines; ++line) {
    double* base = out.data() + (axis == 1 ? line * cols : line);
    double peak = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < length; ++j) peak = std::max(peak, base[j * stride]);
    double total = 0.0;
    for (std::size_t j = 0; j < length; ++j) {
      base[j * stride] = std::exp(base[j * stride] - peak);
      total += base[j * stride];
    }
    for (std::size_t j = 0; j < length; ++j) base[j * stride] /= total;
  }
  return out;
}

}  // namespace kt::num
