#include "libra/prototype.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <string>

#include "libra/error.hpp"

namespace libra {

namespace {

double squared_distance(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

Matrix random_unit_rows(std::size_t k, std::size_t d, std::mt19937_64& rng) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  Matrix out(k, d);
  for (std::size_t r = 0; r < k; ++r) {
    auto row = out.row(r);
    double norm = 0.0;
    while (norm < kNormFloor) {
      for (auto& x : row) x = gauss(rng);
      norm = l2_norm(row);
    }
    for (auto& x : row) x /= norm;
  }
  return out;
}

// Row-normalised copy; zero rows stay zero.
Matrix unit_rows(const Matrix& m, Vector* norms) {
  Matrix out = m;
  if (norms) *norms = Vector(m.rows());
  for (std::size_t r = 0; r < m.rows(); ++r) {
    const double n = l2_norm(m.row(r));
    if (norms) (*norms)[r] = n;
    auto row = out.row(r);
    if (n < kNormFloor) {
      for (auto& x : row) x = 0.0;
    } else {
      for (auto& x : row) x /= n;
    }
  }
  return out;
}

Matrix kmeans_centroids(const Matrix& points, std::size_t k, std::mt19937_64& rng) {
  const std::size_t n = points.rows();
  const std::size_t d = points.cols();
  Matrix centers(k, d);

  // k-means++ seeding.
  std::uniform_int_distribution<std::size_t> pick(0, n - 1);
  std::size_t first = pick(rng);
  std::copy(points.row(first).begin(), points.row(first).end(), centers.row(0).begin());
  std::vector<double> d2(n);
  for (std::size_t i = 0; i < n; ++i) d2[i] = squared_distance(points.row(i), centers.row(0));
  for (std::size_t c = 1; c < k; ++c) {
    double total = 0.0;
    for (double x : d2) total += x;
    std::size_t chosen = 0;
    if (total <= 0.0) {
      chosen = pick(rng);
    } else {
      std::uniform_real_distribution<double> unif(0.0, total);
      const double target = unif(rng);
      double acc = 0.0;
      chosen = n - 1;
      for (std::size_t i = 0; i < n; ++i) {
        acc += d2[i];
        if (acc > target && d2[i] > 0.0) {
          chosen = i;
          break;
        }
      }
    }
    std::copy(points.row(chosen).begin(), points.row(chosen).end(), centers.row(c).begin());
    for (std::size_t i = 0; i < n; ++i) {
      d2[i] = std::min(d2[i], squared_distance(points.row(i), centers.row(c)));
    }
  }

  // Lloyd iterations. Empty clusters keep their previous centre.
  std::vector<std::size_t> assign(n, k);
  for (std::size_t iter = 0; iter < kKMeansIterations; ++iter) {
    bool changed = false;
    for (std::size_t i = 0; i < n; ++i) {
      std::size_t best = 0;
      double best_d = std::numeric_limits<double>::infinity();
      for (std::size_t c = 0; c < k; ++c) {
        const double dist = squared_distance(points.row(i), centers.row(c));
        if (dist < best_d) {
          best_d = dist;
          best = c;
        }
      }
      if (assign[i] != best) {
        assign[i] = best;
        changed = true;
      }
    }
    if (!changed) break;
    Matrix sums(k, d);
    std::vector<std::size_t> counts(k, 0);
    for (std::size_t i = 0; i < n; ++i) {
      axpy(1.0, points.row(i), sums.row(assign[i]));
      ++counts[assign[i]];
    }
    for (std::size_t c = 0; c < k; ++c) {
      if (counts[c] == 0) continue;
      auto dst = centers.row(c);
      const auto src = sums.row(c);
      for (std::size_t t = 0; t < d; ++t) dst[t] = src[t] / static_cast<double>(counts[c]);
    }
  }
  return centers;
}

}  // namespace

void PrototypeBank::validate() const {
  if (visual.rows() == 0 || textual.rows() == 0) {
    throw InvalidArgument("prototype bank: K_v and K_t must be >= 1");
  }
  if (visual.cols() != textual.cols()) {
    throw InvalidArgument("prototype bank: visual width " + std::to_string(visual.cols()) +
                          " != textual width " + std::to_string(textual.cols()));
  }
  for (std::size_t r = 0; r < visual.rows(); ++r) {
    if (l2_norm(visual.row(r)) < kNormFloor) {
      throw InvalidArgument("prototype bank: visual prototype " + std::to_string(r) + " is zero");
    }
  }
  for (std::size_t r = 0; r < textual.rows(); ++r) {
    if (l2_norm(textual.row(r)) < kNormFloor) {
      throw InvalidArgument("prototype bank: textual prototype " + std::to_string(r) + " is zero");
    }
  }
}

VisualInit init_visual_prototypes(std::span<const Bag> support, std::size_t k_v, std::size_t d,
                                  std::uint64_t seed, InitStrategy strategy) {
  if (k_v == 0 || d == 0) throw InvalidArgument("init_visual_prototypes: k_v and d must be >= 1");
  std::mt19937_64 rng(seed);
  VisualInit out;

  std::size_t pooled = 0;
  for (const Bag& b : support) {
    if (b.dim() != d) {
      throw InvalidArgument("init_visual_prototypes: bag '" + b.id + "' has width " +
                            std::to_string(b.dim()) + ", expected " + std::to_string(d));
    }
    pooled += b.instances();
  }

  if (strategy == InitStrategy::kKMeans && pooled < k_v) {
    out.warnings.push_back("k-means needs at least " + std::to_string(k_v) +
                           " support instances, got " + std::to_string(pooled) +
                           "; using random initialisation");
    strategy = InitStrategy::kRandom;
  }
  out.used = strategy;
  if (strategy == InitStrategy::kRandom) {
    out.prototypes = random_unit_rows(k_v, d, rng);
    return out;
  }

  Matrix points(pooled, d);
  std::size_t r = 0;
  for (const Bag& b : support) {
    for (std::size_t i = 0; i < b.instances(); ++i, ++r) {
      std::copy(b.features.row(i).begin(), b.features.row(i).end(), points.row(r).begin());
    }
  }
  Matrix centers = kmeans_centroids(points, k_v, rng);
  for (std::size_t c = 0; c < k_v; ++c) {
    auto row = centers.row(c);
    const double n = l2_norm(row);
    if (n < kNormFloor) {
      out.warnings.push_back("centroid " + std::to_string(c) + " collapsed to zero; reseeded");
      const Matrix repl = random_unit_rows(1, d, rng);
      std::copy(repl.row(0).begin(), repl.row(0).end(), row.begin());
    } else {
      for (auto& x : row) x /= n;
    }
  }
  out.prototypes = std::move(centers);
  return out;
}

void load_textual_prototypes(PrototypeBank& bank, const Matrix& priors) {
  if (priors.rows() == 0) throw InvalidArgument("load_textual_prototypes: no prior rows");
  if (!bank.visual.empty() && priors.cols() != bank.visual.cols()) {
    throw InvalidArgument("load_textual_prototypes: prior width " + std::to_string(priors.cols()) +
                          " != bank width " + std::to_string(bank.visual.cols()));
  }
  for (std::size_t r = 0; r < priors.rows(); ++r) {
    if (l2_norm(priors.row(r)) < kNormFloor) {
      throw InvalidArgument("load_textual_prototypes: prior row " + std::to_string(r) + " is zero");
    }
  }
  bank.textual = priors;
}

Matrix cosine_matrix(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.cols()) {
    throw InvalidArgument("cosine_matrix: width " + std::to_string(a.cols()) + " vs " +
                          std::to_string(b.cols()));
  }
  Matrix out = matmul_nt(unit_rows(a, nullptr), unit_rows(b, nullptr));
  for (auto& x : out.span()) x = std::clamp(x, -1.0, 1.0);
  return out;
}

CosineGrads cosine_matrix_backward(const Matrix& a, const Matrix& b, const Matrix& upstream) {
  if (upstream.rows() != a.rows() || upstream.cols() != b.rows() || a.cols() != b.cols()) {
    throw InvalidArgument("cosine_matrix_backward: shape mismatch");
  }
  Vector na;
  Vector nb;
  const Matrix ua = unit_rows(a, &na);
  const Matrix ub = unit_rows(b, &nb);
  const Matrix s = matmul_nt(ua, ub);
  const std::size_t d = a.cols();

  CosineGrads g{Matrix(a.rows(), d), Matrix(b.rows(), d)};
  // d cos(a_j, b_k) / d a_j = (b^_k - s_jk a^_j) / |a_j|, symmetric for b_k.
  for (std::size_t j = 0; j < a.rows(); ++j) {
    if (na[j] < kNormFloor) continue;
    auto ga = g.a.row(j);
    double coef = 0.0;
    for (std::size_t k = 0; k < b.rows(); ++k) {
      if (nb[k] < kNormFloor) continue;
      const double w = upstream(j, k);
      if (w == 0.0) continue;
      axpy(w / na[j], ub.row(k), ga);
      coef += w * s(j, k);
      axpy(w / nb[k], ua.row(j), g.b.row(k));
    }
    axpy(-coef / na[j], ua.row(j), ga);
  }
  for (std::size_t k = 0; k < b.rows(); ++k) {
    if (nb[k] < kNormFloor) continue;
    double coef = 0.0;
    for (std::size_t j = 0; j < a.rows(); ++j) {
      if (na[j] < kNormFloor) continue;
      coef += upstream(j, k) * s(j, k);
    }
    axpy(-coef / nb[k], ub.row(k), g.b.row(k));
  }
  return g;
}

SimilarityPair similarity_pair(const Matrix& x, const PrototypeBank& bank) {
  if (x.cols() != bank.dim()) {
    throw InvalidArgument("similarity_pair: instance width " + std::to_string(x.cols()) +
                          " != prototype width " + std::to_string(bank.dim()));
  }
  return {cosine_matrix(x, bank.visual), cosine_matrix(x, bank.textual)};
}

Matrix cost_matrix(const PrototypeBank& bank) {
  Matrix c = cosine_matrix(bank.visual, bank.textual);
  for (auto& x : c.span()) x = 1.0 - x;
  return c;
}

Marginals estimate_marginals(const SimilarityPair& sp) {
  if (sp.visual.rows() == 0 || sp.textual.rows() == 0) {
    throw InvalidArgument("estimate_marginals: empty bag");
  }
  const Vector mv = column_mean(sp.visual);
  const Vector mt = column_mean(sp.textual);
  return {softmax(mv.span()), softmax(mt.span())};
}

SimilarityPair estimate_marginals_backward(const SimilarityPair& sp, const Marginals& m,
                                           const Vector& grad_mu, const Vector& grad_nu) {
  const Vector dv = softmax_backward(m.mu.span(), grad_mu.span());
  const Vector dt = softmax_backward(m.nu.span(), grad_nu.span());
  SimilarityPair g{Matrix(sp.visual.rows(), sp.visual.cols()),
                   Matrix(sp.textual.rows(), sp.textual.cols())};
  const double inv_n = 1.0 / static_cast<double>(sp.visual.rows());
  for (std::size_t j = 0; j < sp.visual.rows(); ++j) {
    axpy(inv_n, dv.span(), g.visual.row(j));
    axpy(inv_n, dt.span(), g.textual.row(j));
  }
  return g;
}

}  // namespace libra
