#include "libra/numkernel.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "libra/error.hpp"

namespace libra {

namespace {

std::string shape(const Matrix& m) {
  return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

}  // namespace

Matrix::Matrix(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows * cols) {
    throw InvalidArgument("matrix data length " + std::to_string(data_.size()) +
                          " does not match " + std::to_string(rows) + "x" + std::to_string(cols));
  }
}

Matrix::Matrix(std::initializer_list<std::initializer_list<double>> rows) {
  rows_ = rows.size();
  cols_ = rows_ == 0 ? 0 : rows.begin()->size();
  data_.reserve(rows_ * cols_);
  for (const auto& r : rows) {
    if (r.size() != cols_) throw InvalidArgument("ragged matrix initializer");
    data_.insert(data_.end(), r.begin(), r.end());
  }
}

Matrix Matrix::identity(std::size_t n) {
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

bool all_finite(std::span<const double> v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

double dot(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw InvalidArgument("dot: length mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double l2_norm(std::span<const double> v) { return std::sqrt(dot(v, v)); }

Vector softmax(std::span<const double> v) {
  if (v.empty()) throw InvalidArgument("softmax: empty vector");
  const double m = *std::max_element(v.begin(), v.end());
  Vector out(v.size());
  double z = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    out[i] = std::exp(v[i] - m);
    z += out[i];
  }
  for (auto& x : out) x /= z;
  return out;
}

Vector softmax_backward(std::span<const double> y, std::span<const double> dy) {
  if (y.size() != dy.size()) throw InvalidArgument("softmax_backward: length mismatch");
  const double inner = dot(y, dy);
  Vector dx(y.size());
  for (std::size_t i = 0; i < y.size(); ++i) dx[i] = y[i] * (dy[i] - inner);
  return dx;
}

double cosine(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) {
    throw InvalidArgument("cosine: length mismatch (" + std::to_string(a.size()) + " vs " +
                          std::to_string(b.size()) + ")");
  }
  const double na = l2_norm(a);
  const double nb = l2_norm(b);
  if (na < kNormFloor || nb < kNormFloor) return 0.0;
  return std::clamp(dot(a, b) / (na * nb), -1.0, 1.0);
}

// Rows of the result are produced four at a time so each row of the right
// operand is read once per block. Every entry still accumulates in k order.
Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) {
    throw InvalidArgument("matmul: " + shape(a) + " * " + shape(b));
  }
  Matrix out(a.rows(), b.cols());
  const std::size_t m = b.cols();
  for (std::size_t i0 = 0; i0 < a.rows(); i0 += 4) {
    const std::size_t rows = std::min<std::size_t>(4, a.rows() - i0);
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double* src = b.row(k).data();
      for (std::size_t r = 0; r < rows; ++r) {
        const double aik = a(i0 + r, k);
        double* dst = out.row(i0 + r).data();
        for (std::size_t j = 0; j < m; ++j) dst[j] += aik * src[j];
      }
    }
  }
  return out;
}

Matrix matmul_tn(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows()) {
    throw InvalidArgument("matmul_tn: " + shape(a) + "^T * " + shape(b));
  }
  Matrix out(a.cols(), b.cols());
  const std::size_t m = b.cols();
  for (std::size_t i = 0; i < a.cols(); ++i) {
    double* dst = out.row(i).data();
    for (std::size_t k = 0; k < a.rows(); ++k) {
      const double aki = a(k, i);
      const double* src = b.row(k).data();
      for (std::size_t j = 0; j < m; ++j) dst[j] += aki * src[j];
    }
  }
  return out;
}

Matrix matmul_nt(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.cols()) {
    throw InvalidArgument("matmul_nt: " + shape(a) + " * " + shape(b) + "^T");
  }
  Matrix out(a.rows(), b.rows());
  const std::size_t len = a.cols();
  for (std::size_t i0 = 0; i0 < a.rows(); i0 += 4) {
    const std::size_t rows = std::min<std::size_t>(4, a.rows() - i0);
    if (rows < 4) {
      for (std::size_t i = i0; i < a.rows(); ++i) {
        for (std::size_t j = 0; j < b.rows(); ++j) out(i, j) = dot(a.row(i), b.row(j));
      }
      break;
    }
    const double* a0 = a.row(i0).data();
    const double* a1 = a.row(i0 + 1).data();
    const double* a2 = a.row(i0 + 2).data();
    const double* a3 = a.row(i0 + 3).data();
    for (std::size_t j = 0; j < b.rows(); ++j) {
      const double* bj = b.row(j).data();
      double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
      for (std::size_t k = 0; k < len; ++k) {
        s0 += a0[k] * bj[k];
        s1 += a1[k] * bj[k];
        s2 += a2[k] * bj[k];
        s3 += a3[k] * bj[k];
      }
      out(i0, j) = s0;
      out(i0 + 1, j) = s1;
      out(i0 + 2, j) = s2;
      out(i0 + 3, j) = s3;
    }
  }
  return out;
}

Matrix transpose(const Matrix& a) {
  Matrix out(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t j = 0; j < a.cols(); ++j) out(j, i) = a(i, j);
  }
  return out;
}

Vector column_mean(const Matrix& a) {
  if (a.rows() == 0) throw InvalidArgument("column_mean: no rows");
  Vector out = column_sums(a);
  for (auto& x : out) x /= static_cast<double>(a.rows());
  return out;
}

Vector row_sums(const Matrix& a) {
  Vector out(a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    double s = 0.0;
    for (double x : a.row(i)) s += x;
    out[i] = s;
  }
  return out;
}

Vector column_sums(const Matrix& a) {
  Vector out(a.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    const auto r = a.row(i);
    for (std::size_t j = 0; j < a.cols(); ++j) out[j] += r[j];
  }
  return out;
}

void axpy(double scale, std::span<const double> src, std::span<double> dst) {
  if (src.size() != dst.size()) throw InvalidArgument("axpy: length mismatch");
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] += scale * src[i];
}

}  // namespace libra
