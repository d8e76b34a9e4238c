#include "libra/layers.hpp"

#include <cmath>
#include <string>

#include "libra/error.hpp"

namespace libra {

Matrix glorot_uniform(std::size_t fan_in, std::size_t fan_out, std::mt19937_64& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> unif(-limit, limit);
  Matrix w(fan_in, fan_out);
  for (auto& x : w.span()) x = unif(rng);
  return w;
}

LinearHead LinearHead::zeros(std::size_t in, std::size_t classes) {
  return {Matrix(in, classes), Vector(classes)};
}

LinearHead LinearHead::glorot(std::size_t in, std::size_t classes, std::mt19937_64& rng) {
  return {glorot_uniform(in, classes, rng), Vector(classes)};
}

Vector LinearHead::logits(std::span<const double> x) const {
  if (x.size() != in()) {
    throw InvalidArgument("classifier head expects width " + std::to_string(in()) + ", got " +
                          std::to_string(x.size()));
  }
  Vector out = bias;
  for (std::size_t i = 0; i < x.size(); ++i) axpy(x[i], weight.row(i), out.span());
  return out;
}

Vector LinearHead::backward(std::span<const double> x, const Vector& grad_logits,
                            LinearHead& grad) const {
  Vector gx(in());
  for (std::size_t i = 0; i < in(); ++i) {
    axpy(x[i], grad_logits.span(), grad.weight.row(i));
    gx[i] = dot(weight.row(i), grad_logits.span());
  }
  axpy(1.0, grad_logits.span(), grad.bias.span());
  return gx;
}

}  // namespace libra
