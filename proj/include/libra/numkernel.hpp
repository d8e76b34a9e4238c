#pragma once

// Dense row-major f64 matrices and the handful of reductions the pipeline
// needs. Summation order is fixed (ascending index) so results are
// bit-stable across runs.

#include <cstddef>
#include <initializer_list>
#include <span>
#include <vector>

namespace libra {

class Vector {
 public:
  Vector() = default;
  explicit Vector(std::size_t len, double fill = 0.0) : data_(len, fill) {}
  explicit Vector(std::vector<double> data) : data_(std::move(data)) {}
  Vector(std::initializer_list<double> init) : data_(init) {}

  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  std::span<double> span() { return data_; }
  std::span<const double> span() const { return data_; }
  const std::vector<double>& values() const { return data_; }
  auto begin() { return data_.begin(); }
  auto end() { return data_.end(); }
  auto begin() const { return data_.begin(); }
  auto end() const { return data_.end(); }

  bool operator==(const Vector&) const = default;

 private:
  std::vector<double> data_;
};

class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0);
  // Throws InvalidArgument unless data.size() == rows * cols.
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);
  Matrix(std::initializer_list<std::initializer_list<double>> rows);

  static Matrix identity(std::size_t n);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }
  std::span<double> span() { return data_; }
  std::span<const double> span() const { return data_; }
  const std::vector<double>& values() const { return data_; }

  bool same_shape(const Matrix& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }
  bool operator==(const Matrix&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

// Norms below this are treated as zero (cosine of a dead vector is 0).
inline constexpr double kNormFloor = 1e-12;

bool all_finite(std::span<const double> v);

double dot(std::span<const double> a, std::span<const double> b);
double l2_norm(std::span<const double> v);

// Max-subtracted softmax. Throws InvalidArgument on empty input.
Vector softmax(std::span<const double> v);
// Vector-Jacobian product of softmax given its output y and upstream dy.
Vector softmax_backward(std::span<const double> y, std::span<const double> dy);

// Returns 0 when either norm is below kNormFloor.
double cosine(std::span<const double> a, std::span<const double> b);

Matrix matmul(const Matrix& a, const Matrix& b);
// a^T * b without materialising the transpose.
Matrix matmul_tn(const Matrix& a, const Matrix& b);
// a * b^T without materialising the transpose.
Matrix matmul_nt(const Matrix& a, const Matrix& b);
Matrix transpose(const Matrix& a);

Vector column_mean(const Matrix& a);
Vector row_sums(const Matrix& a);
Vector column_sums(const Matrix& a);

// Elementwise accumulate: dst += scale * src (shapes must agree).
void axpy(double scale, std::span<const double> src, std::span<double> dst);

}  // namespace libra
