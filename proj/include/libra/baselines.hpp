#pragma once

// Reference MIL aggregators: element-wise max pooling and attention-based
// pooling (ABMIL). Both feed a LinearHead with the same role as the main
// model's classifier.

#include <cstddef>
#include <cstdint>

#include "libra/layers.hpp"
#include "libra/numkernel.hpp"

namespace libra {

struct MaxPoolParams {
  LinearHead head;  // d x c

  static MaxPoolParams init(std::size_t d, std::size_t classes, std::uint64_t seed);
  static MaxPoolParams zeros_like(const MaxPoolParams& p);
};

struct AbmilParams {
  Matrix v;         // h x d
  Vector w;         // h
  LinearHead head;  // d x c

  static AbmilParams init(std::size_t d, std::size_t hidden, std::size_t classes,
                          std::uint64_t seed);
  static AbmilParams zeros_like(const AbmilParams& p);
};

// out[t] = max_j x(j, t). Throws InvalidArgument on an empty bag.
Vector max_pool(const Matrix& x);

struct AbmilOutput {
  Vector weights;  // softmax over instances, length n
  Vector z;        // sum_j weights_j x_j, length d
  Matrix hidden;   // tanh(V x_j^T) per instance, n x h
};

// a_j = softmax_j(w^T tanh(V x_j^T)), z = sum_j a_j x_j.
AbmilOutput abmil_aggregate(const Matrix& x, const AbmilParams& params);

// Accumulates V and w gradients given d loss / d z.
void abmil_backward(const Matrix& x, const AbmilParams& params, const AbmilOutput& out,
                    const Vector& grad_z, AbmilParams& grad);

}  // namespace libra
