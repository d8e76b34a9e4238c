#pragma once

// Visual/textual prototype banks and the similarity, cost and marginal
// computations built on top of them, with their reverse-mode counterparts.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "libra/bag.hpp"
#include "libra/numkernel.hpp"
#include "libra/sinkhorn.hpp"

namespace libra {

struct PrototypeBank {
  Matrix visual;   // K_v x d, trainable
  Matrix textual;  // K_t x d, initialised from instance priors
  bool freeze_textual = false;

  std::size_t kv() const { return visual.rows(); }
  std::size_t kt() const { return textual.rows(); }
  std::size_t dim() const { return visual.cols(); }

  // K_v, K_t >= 1, equal widths, no prototype row with norm < kNormFloor.
  void validate() const;
};

enum class InitStrategy { kKMeans, kRandom };

struct VisualInit {
  Matrix prototypes;
  InitStrategy used = InitStrategy::kKMeans;
  std::vector<std::string> warnings;
};

inline constexpr std::size_t kKMeansIterations = 50;

// k-means (k-means++ seeding, kKMeansIterations Lloyd steps) over every
// support instance, centroids L2-normalised. Falls back to seeded unit
// Gaussian rows when there are fewer pooled instances than k_v or when the
// random strategy is requested. Deterministic in (support, k_v, d, seed).
VisualInit init_visual_prototypes(std::span<const Bag> support, std::size_t k_v, std::size_t d,
                                  std::uint64_t seed,
                                  InitStrategy strategy = InitStrategy::kKMeans);

// Sets bank.textual to a copy of the priors. Throws on width mismatch or an
// all-zero prior row.
void load_textual_prototypes(PrototypeBank& bank, const Matrix& priors);

struct SimilarityPair {
  Matrix visual;   // n x K_v
  Matrix textual;  // n x K_t
};

// out(j, k) = cosine(a_j, b_k).
Matrix cosine_matrix(const Matrix& a, const Matrix& b);

struct CosineGrads {
  Matrix a;
  Matrix b;
};

// Gradients of sum_jk upstream(j,k) * cosine(a_j, b_k). Rows whose norm is
// below kNormFloor receive zero gradient (the cosine is constant 0 there).
CosineGrads cosine_matrix_backward(const Matrix& a, const Matrix& b, const Matrix& upstream);

SimilarityPair similarity_pair(const Matrix& x, const PrototypeBank& bank);

// C(k_v, k_t) = 1 - cosine(p_v, p_t).
Matrix cost_matrix(const PrototypeBank& bank);

// mu = softmax(column-mean S_v), nu = softmax(column-mean S_t).
Marginals estimate_marginals(const SimilarityPair& sp);

// Gradients of the marginals w.r.t. the similarity matrices.
SimilarityPair estimate_marginals_backward(const SimilarityPair& sp, const Marginals& m,
                                           const Vector& grad_mu, const Vector& grad_nu);

}  // namespace libra
