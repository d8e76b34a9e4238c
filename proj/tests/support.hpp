#pragma once

#include <unistd.h>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <filesystem>
#include <random>
#include <string>

#include "libra/bag.hpp"
#include "libra/numkernel.hpp"

namespace libra::test {

inline Matrix random_matrix(std::size_t rows, std::size_t cols, std::mt19937_64& rng,
                            double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Matrix m(rows, cols);
  for (auto& x : m.span()) x = u(rng);
  return m;
}

inline Vector random_vector(std::size_t n, std::mt19937_64& rng, double lo = -1.0,
                            double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Vector v(n);
  for (auto& x : v) x = u(rng);
  return v;
}

// Strictly positive, normalised.
inline Vector random_simplex(std::size_t n, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.05, 1.0);
  Vector v(n);
  double s = 0.0;
  for (auto& x : v) s += (x = u(rng));
  for (auto& x : v) x /= s;
  return v;
}

inline Matrix random_unit_rows(std::size_t rows, std::size_t cols, std::mt19937_64& rng) {
  std::normal_distribution<double> g(0.0, 1.0);
  Matrix m(rows, cols);
  for (std::size_t r = 0; r < rows; ++r) {
    double s = 0.0;
    for (auto& x : m.row(r)) s += (x = g(rng)) * x;
    for (auto& x : m.row(r)) x /= std::sqrt(s);
  }
  return m;
}

inline Bag random_bag(std::size_t n, std::size_t d, std::size_t label, std::mt19937_64& rng) {
  return Bag{"bag", label, random_matrix(n, d, rng)};
}

inline double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
  return worst;
}

// |a - b| / max(|a|, |b|, floor)
inline double rel_err(double a, double b, double floor) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

inline Matrix permute_rows(const Matrix& x, std::mt19937_64& rng) {
  std::vector<std::size_t> p(x.rows());
  for (std::size_t i = 0; i < p.size(); ++i) p[i] = i;
  std::shuffle(p.begin(), p.end(), rng);
  Matrix out(x.rows(), x.cols());
  for (std::size_t i = 0; i < p.size(); ++i) {
    std::copy(x.row(p[i]).begin(), x.row(p[i]).end(), out.row(i).begin());
  }
  return out;
}

}  // namespace libra::test

namespace libra::test {

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("libra_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& leaf) const { return path_ / leaf; }

 private:
  std::filesystem::path path_;
};

}  // namespace libra::test
