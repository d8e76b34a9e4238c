#pragma once

#include <cstddef>
#include <random>

#include "libra/numkernel.hpp"

namespace libra {

// Uniform in +-sqrt(6 / (fan_in + fan_out)).
Matrix glorot_uniform(std::size_t fan_in, std::size_t fan_out, std::mt19937_64& rng);

// Affine map from a pooled bag representation to class logits.
struct LinearHead {
  Matrix weight;  // in x classes
  Vector bias;    // classes

  static LinearHead zeros(std::size_t in, std::size_t classes);
  static LinearHead glorot(std::size_t in, std::size_t classes, std::mt19937_64& rng);

  std::size_t in() const { return weight.rows(); }
  std::size_t classes() const { return weight.cols(); }

  Vector logits(std::span<const double> x) const;
  // Accumulates weight/bias gradients into `grad` and returns d loss / d x.
  Vector backward(std::span<const double> x, const Vector& grad_logits, LinearHead& grad) const;
};

}  // namespace libra
