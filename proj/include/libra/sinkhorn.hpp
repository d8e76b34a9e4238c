#pragma once

// Entropy-regularised optimal transport between two prototype spaces.
//
//   min_T <T, C> - eps * H(T)   s.t.  T 1 = mu,  T^T 1 = nu
//
// solved by alternating Sinkhorn scalings u <- mu / (K v), v <- nu / (K^T u)
// with K = exp(-C / eps). The solver records every scaling it computes so
// the unrolled loop can be differentiated in reverse.

#include <cstddef>
#include <vector>

#include "libra/numkernel.hpp"

namespace libra {

// Floor for Gibbs kernel entries and for the K v / K^T u denominators.
inline constexpr double kKernelFloor = 1e-300;
// Simplex membership tolerance for marginals.
inline constexpr double kSimplexTol = 1e-10;

struct Marginals {
  Vector mu;  // over visual prototypes
  Vector nu;  // over textual prototypes
};

// Throws InvalidArgument unless every entry is > 0 and the sum is 1 +- kSimplexTol.
void check_simplex(const Vector& p, const char* name);

struct SinkhornOptions {
  double epsilon = 0.05;
  std::size_t max_iters = 20;
  // Early exit once the marginal violation drops to tol. 0 disables it.
  double tol = 1e-9;
  // Run the iterations on log-potentials instead of scalings.
  bool log_domain = false;
};

struct TransportPlan {
  Matrix plan;
  std::size_t iterations_run = 0;
  // max |row_sum - mu| and |col_sum - nu| over all rows/cols.
  double marginal_violation = 0.0;
};

// Everything needed to replay the loop backwards. In the standard domain
// `first`/`second` hold u and v; in the log domain they hold the potentials
// f and g. Index 0 is the initial state, index l the state after iteration l.
struct SinkhornTape {
  bool log_domain = false;
  double epsilon = 0.0;
  Matrix cost;
  Matrix kernel;
  Marginals marginals;
  std::vector<Vector> first;
  std::vector<Vector> second;

  std::size_t iterations() const { return first.empty() ? 0 : first.size() - 1; }
};

struct SinkhornResult {
  TransportPlan plan;
  SinkhornTape tape;
};

struct SinkhornGrads {
  Matrix cost;
  Vector mu;
  Vector nu;
};

struct TransportCost {
  double linear = 0.0;   // <T, C>
  double entropy = 0.0;  // -sum T log T (0 log 0 = 0)
};

// K = max(exp(-C / eps), kKernelFloor). Throws InvalidArgument if eps <= 0.
Matrix gibbs_kernel(const Matrix& cost, double epsilon);

// Throws InvalidArgument on shape mismatch, non-simplex marginals or
// max_iters == 0, and NumericFailure naming the iteration if a NaN shows up.
SinkhornResult sinkhorn(const Matrix& cost, const Marginals& m, const SinkhornOptions& opts);

TransportCost transport_cost(const TransportPlan& t, const Matrix& cost);

// Gradient of sum_ab upstream(a,b) * T(a,b) w.r.t. C, mu and nu through the
// iterations recorded on the tape.
SinkhornGrads sinkhorn_vjp(const SinkhornTape& tape, const Matrix& upstream);

// max over rows/cols of |plan marginal - target|.
double marginal_violation(const Matrix& plan, const Marginals& m);

}  // namespace libra
