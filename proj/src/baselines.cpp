#include "libra/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <string>

#include "libra/error.hpp"

namespace libra {

MaxPoolParams MaxPoolParams::init(std::size_t d, std::size_t classes, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return {LinearHead::glorot(d, classes, rng)};
}

MaxPoolParams MaxPoolParams::zeros_like(const MaxPoolParams& p) {
  return {LinearHead::zeros(p.head.in(), p.head.classes())};
}

AbmilParams AbmilParams::init(std::size_t d, std::size_t hidden, std::size_t classes,
                              std::uint64_t seed) {
  if (d == 0 || hidden == 0 || classes == 0) throw InvalidArgument("abmil params: zero dimension");
  std::mt19937_64 rng(seed);
  AbmilParams p;
  p.v = glorot_uniform(hidden, d, rng);
  const Matrix w = glorot_uniform(hidden, 1, rng);
  p.w = Vector(w.values());
  p.head = LinearHead::glorot(d, classes, rng);
  return p;
}

AbmilParams AbmilParams::zeros_like(const AbmilParams& p) {
  return {Matrix(p.v.rows(), p.v.cols()), Vector(p.w.size()),
          LinearHead::zeros(p.head.in(), p.head.classes())};
}

Vector max_pool(const Matrix& x) {
  if (x.rows() == 0) throw InvalidArgument("max_pool: empty bag");
  Vector out(std::vector<double>(x.row(0).begin(), x.row(0).end()));
  for (std::size_t j = 1; j < x.rows(); ++j) {
    const auto r = x.row(j);
    for (std::size_t t = 0; t < x.cols(); ++t) out[t] = std::max(out[t], r[t]);
  }
  return out;
}

AbmilOutput abmil_aggregate(const Matrix& x, const AbmilParams& params) {
  if (x.rows() == 0) throw InvalidArgument("abmil_aggregate: empty bag");
  if (x.cols() != params.v.cols() || params.w.size() != params.v.rows()) {
    throw InvalidArgument("abmil_aggregate: instance width " + std::to_string(x.cols()) +
                          " incompatible with V " + std::to_string(params.v.rows()) + "x" +
                          std::to_string(params.v.cols()));
  }
  AbmilOutput out;
  out.hidden = matmul_nt(x, params.v);
  std::vector<double> scores(x.rows());
  for (std::size_t j = 0; j < x.rows(); ++j) {
    for (auto& t : out.hidden.row(j)) t = std::tanh(t);
    scores[j] = dot(params.w.span(), out.hidden.row(j));
  }
  out.weights = softmax(scores);
  out.z = Vector(x.cols());
  for (std::size_t j = 0; j < x.rows(); ++j) axpy(out.weights[j], x.row(j), out.z.span());
  return out;
}

void abmil_backward(const Matrix& x, const AbmilParams& params, const AbmilOutput& out,
                    const Vector& grad_z, AbmilParams& grad) {
  if (grad_z.size() != x.cols()) throw InvalidArgument("abmil_backward: gradient length");
  std::vector<double> grad_a(x.rows());
  for (std::size_t j = 0; j < x.rows(); ++j) grad_a[j] = dot(grad_z.span(), x.row(j));
  const Vector grad_s = softmax_backward(out.weights.span(), grad_a);
  std::vector<double> pre(params.w.size());
  for (std::size_t j = 0; j < x.rows(); ++j) {
    const auto t = out.hidden.row(j);
    axpy(grad_s[j], t, grad.w.span());
    for (std::size_t k = 0; k < pre.size(); ++k) {
      pre[k] = grad_s[j] * params.w[k] * (1.0 - t[k] * t[k]);
    }
    for (std::size_t k = 0; k < pre.size(); ++k) axpy(pre[k], x.row(j), grad.v.row(k));
  }
}

}  // namespace libra
