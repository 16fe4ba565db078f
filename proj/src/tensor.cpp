#include "v2m/tensor.hpp"

#include <cmath>

#include "v2m/error.hpp"
#include "v2m/simd/kernels.hpp"

namespace v2m::nn {

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows * cols)
    throw SchemaError("matrix data has " + std::to_string(data_.size()) + " values, shape needs " +
                      std::to_string(rows * cols));
}

Matrix Matrix::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
  const std::size_t r = rows.size();
  const std::size_t c = r ? rows.begin()->size() : 0;
  Matrix m(r, c);
  std::size_t i = 0;
  for (const auto& row : rows) {
    if (row.size() != c) throw SchemaError("ragged matrix literal");
    std::size_t j = 0;
    for (double v : row) m(i, j++) = v;
    ++i;
  }
  return m;
}

void Matrix::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

std::string Matrix::shape_string() const {
  return std::to_string(rows_) + "x" + std::to_string(cols_);
}

void matmul_acc(const Matrix& a, const Matrix& b, Matrix& out) {
  if (a.cols() != b.rows() || out.rows() != a.rows() || out.cols() != b.cols())
    throw SchemaError("matmul shape mismatch " + a.shape_string() + " * " + b.shape_string() + " -> " +
                      out.shape_string());
  simd::active().gemm_nn(a.rows(), b.cols(), a.cols(), a.data(), b.data(), out.data());
}

void matmul_nt_acc(const Matrix& a, const Matrix& b, Matrix& out) {
  if (a.cols() != b.cols() || out.rows() != a.rows() || out.cols() != b.rows())
    throw SchemaError("matmul_nt shape mismatch " + a.shape_string() + " * " + b.shape_string() + "^T -> " +
                      out.shape_string());
  simd::active().gemm_nt(a.rows(), b.rows(), a.cols(), a.data(), b.data(), out.data());
}

void matmul_tn_acc(const Matrix& a, const Matrix& b, Matrix& out) {
  if (a.rows() != b.rows() || out.rows() != a.cols() || out.cols() != b.cols())
    throw SchemaError("matmul_tn shape mismatch " + a.shape_string() + "^T * " + b.shape_string() + " -> " +
                      out.shape_string());
  simd::active().gemm_tn(a.cols(), b.cols(), a.rows(), a.data(), b.data(), out.data());
}

Matrix matmul(const Matrix& a, const Matrix& b) {
  Matrix out(a.rows(), b.cols());
  matmul_acc(a, b, out);
  return out;
}

double max_abs_diff(const Matrix& a, const Matrix& b) {
  if (!a.same_shape(b)) return INFINITY;
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
  return m;
}

bool all_finite(const Matrix& m) {
  for (double v : m.storage())
    if (!std::isfinite(v)) return false;
  return true;
}

Matrix sinusoidal_encoding(std::size_t length, std::size_t dim) {
  Matrix pe(length, dim);
  for (std::size_t pos = 0; pos < length; ++pos)
    for (std::size_t i = 0; i < dim; ++i) {
      const double freq = std::pow(10000.0, -static_cast<double>(2 * (i / 2)) / static_cast<double>(dim));
      const double angle = static_cast<double>(pos) * freq;
      pe(pos, i) = (i % 2 == 0) ? std::sin(angle) : std::cos(angle);
    }
  return pe;
}

}  // namespace v2m::nn
