#include "libra/sinkhorn.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "libra/error.hpp"

namespace libra {

namespace {

Vector kernel_times(const Matrix& k, const Vector& v) {
  Vector out(k.rows());
  for (std::size_t a = 0; a < k.rows(); ++a) out[a] = dot(k.row(a), v.span());
  return out;
}

Vector kernel_t_times(const Matrix& k, const Vector& u) {
  Vector out(k.cols());
  for (std::size_t a = 0; a < k.rows(); ++a) {
    const auto r = k.row(a);
    for (std::size_t b = 0; b < k.cols(); ++b) out[b] += r[b] * u[a];
  }
  return out;
}

Matrix scaled_plan(const Matrix& k, const Vector& u, const Vector& v) {
  Matrix plan(k.rows(), k.cols());
  for (std::size_t a = 0; a < k.rows(); ++a) {
    for (std::size_t b = 0; b < k.cols(); ++b) plan(a, b) = u[a] * k(a, b) * v[b];
  }
  return plan;
}

Matrix log_plan(const Matrix& cost, const Vector& f, const Vector& g, double eps) {
  Matrix plan(cost.rows(), cost.cols());
  for (std::size_t a = 0; a < cost.rows(); ++a) {
    for (std::size_t b = 0; b < cost.cols(); ++b) {
      plan(a, b) = std::exp((f[a] + g[b] - cost(a, b)) / eps);
    }
  }
  return plan;
}

// Softmax of (g_b - C_ab) / eps over b, one row per a.
Matrix row_gibbs(const Matrix& cost, const Vector& g, double eps) {
  Matrix p(cost.rows(), cost.cols());
  std::vector<double> z(cost.cols());
  for (std::size_t a = 0; a < cost.rows(); ++a) {
    for (std::size_t b = 0; b < cost.cols(); ++b) z[b] = (g[b] - cost(a, b)) / eps;
    const Vector s = softmax(z);
    std::copy(s.begin(), s.end(), p.row(a).begin());
  }
  return p;
}

// Softmax of (f_a - C_ab) / eps over a, stored at (a, b).
Matrix col_gibbs(const Matrix& cost, const Vector& f, double eps) {
  Matrix q(cost.rows(), cost.cols());
  std::vector<double> z(cost.rows());
  for (std::size_t b = 0; b < cost.cols(); ++b) {
    for (std::size_t a = 0; a < cost.rows(); ++a) z[a] = (f[a] - cost(a, b)) / eps;
    const Vector s = softmax(z);
    for (std::size_t a = 0; a < cost.rows(); ++a) q(a, b) = s[a];
  }
  return q;
}

double log_sum_exp(std::span<const double> z) {
  const double m = *std::max_element(z.begin(), z.end());
  double s = 0.0;
  for (double x : z) s += std::exp(x - m);
  return m + std::log(s);
}

void check_finite_iter(const Vector& v, std::size_t iter) {
  if (!all_finite(v.span())) {
    throw NumericFailure("sinkhorn: non-finite scaling at iteration " + std::to_string(iter));
  }
}

}  // namespace

void check_simplex(const Vector& p, const char* name) {
  if (p.empty()) throw InvalidArgument(std::string(name) + ": empty marginal");
  double s = 0.0;
  for (double x : p) {
    if (!(x > 0.0) || !std::isfinite(x)) {
      throw InvalidArgument(std::string(name) + ": marginal entries must be strictly positive");
    }
    s += x;
  }
  if (std::abs(s - 1.0) > kSimplexTol) {
    throw InvalidArgument(std::string(name) + ": marginal sums to " + std::to_string(s));
  }
}

Matrix gibbs_kernel(const Matrix& cost, double epsilon) {
  if (!(epsilon > 0.0)) throw InvalidArgument("gibbs_kernel: epsilon must be > 0");
  if (!all_finite(cost.span())) throw InvalidArgument("gibbs_kernel: non-finite cost");
  Matrix k(cost.rows(), cost.cols());
  for (std::size_t i = 0; i < cost.size(); ++i) {
    k.span()[i] = std::max(std::exp(-cost.span()[i] / epsilon), kKernelFloor);
  }
  return k;
}

double marginal_violation(const Matrix& plan, const Marginals& m) {
  const Vector rs = row_sums(plan);
  const Vector cs = column_sums(plan);
  double worst = 0.0;
  for (std::size_t a = 0; a < rs.size(); ++a) worst = std::max(worst, std::abs(rs[a] - m.mu[a]));
  for (std::size_t b = 0; b < cs.size(); ++b) worst = std::max(worst, std::abs(cs[b] - m.nu[b]));
  return worst;
}

SinkhornResult sinkhorn(const Matrix& cost, const Marginals& m, const SinkhornOptions& opts) {
  if (cost.rows() != m.mu.size() || cost.cols() != m.nu.size()) {
    throw InvalidArgument("sinkhorn: cost is " + std::to_string(cost.rows()) + "x" +
                          std::to_string(cost.cols()) + " but marginals are " +
                          std::to_string(m.mu.size()) + "/" + std::to_string(m.nu.size()));
  }
  if (opts.max_iters == 0) throw InvalidArgument("sinkhorn: max_iters must be >= 1");
  check_simplex(m.mu, "mu");
  check_simplex(m.nu, "nu");

  SinkhornResult res;
  SinkhornTape& tape = res.tape;
  tape.log_domain = opts.log_domain;
  tape.epsilon = opts.epsilon;
  tape.cost = cost;
  tape.kernel = gibbs_kernel(cost, opts.epsilon);
  tape.marginals = m;
  const double eps = opts.epsilon;
  const std::size_t kv = cost.rows();
  const std::size_t kt = cost.cols();

  if (!opts.log_domain) {
    const Matrix& k = tape.kernel;
    tape.first.emplace_back(kv, 1.0);
    tape.second.emplace_back(kt, 1.0);
    for (std::size_t it = 1; it <= opts.max_iters; ++it) {
      const Vector kvv = kernel_times(k, tape.second.back());
      Vector u(kv);
      for (std::size_t a = 0; a < kv; ++a) u[a] = m.mu[a] / std::max(kvv[a], kKernelFloor);
      const Vector ktu = kernel_t_times(k, u);
      Vector v(kt);
      for (std::size_t b = 0; b < kt; ++b) v[b] = m.nu[b] / std::max(ktu[b], kKernelFloor);
      check_finite_iter(u, it);
      check_finite_iter(v, it);
      tape.first.push_back(std::move(u));
      tape.second.push_back(std::move(v));
      if (opts.tol > 0.0 && it < opts.max_iters) {
        const Matrix plan = scaled_plan(k, tape.first.back(), tape.second.back());
        if (marginal_violation(plan, m) <= opts.tol) break;
      }
    }
    res.plan.plan = scaled_plan(k, tape.first.back(), tape.second.back());
  } else {
    tape.first.emplace_back(kv, 0.0);
    tape.second.emplace_back(kt, 0.0);
    std::vector<double> z;
    for (std::size_t it = 1; it <= opts.max_iters; ++it) {
      const Vector& g_prev = tape.second.back();
      Vector f(kv);
      z.resize(kt);
      for (std::size_t a = 0; a < kv; ++a) {
        for (std::size_t b = 0; b < kt; ++b) z[b] = (g_prev[b] - cost(a, b)) / eps;
        f[a] = eps * std::log(m.mu[a]) - eps * log_sum_exp(z);
      }
      Vector g(kt);
      z.resize(kv);
      for (std::size_t b = 0; b < kt; ++b) {
        for (std::size_t a = 0; a < kv; ++a) z[a] = (f[a] - cost(a, b)) / eps;
        g[b] = eps * std::log(m.nu[b]) - eps * log_sum_exp(z);
      }
      check_finite_iter(f, it);
      check_finite_iter(g, it);
      tape.first.push_back(std::move(f));
      tape.second.push_back(std::move(g));
      if (opts.tol > 0.0 && it < opts.max_iters) {
        const Matrix plan = log_plan(cost, tape.first.back(), tape.second.back(), eps);
        if (marginal_violation(plan, m) <= opts.tol) break;
      }
    }
    res.plan.plan = log_plan(cost, tape.first.back(), tape.second.back(), eps);
  }
  if (!all_finite(res.plan.plan.span())) {
    throw NumericFailure("sinkhorn: non-finite plan after iteration " +
                         std::to_string(tape.iterations()));
  }
  res.plan.iterations_run = tape.iterations();
  res.plan.marginal_violation = marginal_violation(res.plan.plan, m);
  return res;
}

TransportCost transport_cost(const TransportPlan& t, const Matrix& cost) {
  if (!t.plan.same_shape(cost)) throw InvalidArgument("transport_cost: shape mismatch");
  TransportCost out;
  for (std::size_t i = 0; i < cost.size(); ++i) {
    const double p = t.plan.span()[i];
    out.linear += p * cost.span()[i];
    if (p > 0.0) out.entropy -= p * std::log(p);
  }
  return out;
}

namespace {

SinkhornGrads vjp_standard(const SinkhornTape& tape, const Matrix& g) {
  const Matrix& k = tape.kernel;
  const std::size_t kv = k.rows();
  const std::size_t kt = k.cols();
  const std::size_t iters = tape.iterations();

  Matrix grad_k(kv, kt);
  Vector gu(kv);
  Vector gv(kt);
  {
    const Vector& u = tape.first[iters];
    const Vector& v = tape.second[iters];
    for (std::size_t a = 0; a < kv; ++a) {
      for (std::size_t b = 0; b < kt; ++b) {
        const double gab = g(a, b);
        grad_k(a, b) += gab * u[a] * v[b];
        gu[a] += gab * k(a, b) * v[b];
        gv[b] += gab * k(a, b) * u[a];
      }
    }
  }

  SinkhornGrads out{Matrix(kv, kt), Vector(kv), Vector(kt)};
  for (std::size_t it = iters; it >= 1; --it) {
    const Vector& u = tape.first[it];
    const Vector& v = tape.second[it];
    const Vector& v_prev = tape.second[it - 1];

    // v = nu / (K^T u)
    const Vector ktu = kernel_t_times(k, u);
    Vector gb(kt);
    for (std::size_t b = 0; b < kt; ++b) {
      const double den = std::max(ktu[b], kKernelFloor);
      out.nu[b] += gv[b] / den;
      gb[b] = ktu[b] > kKernelFloor ? -gv[b] * v[b] / den : 0.0;
    }
    for (std::size_t a = 0; a < kv; ++a) {
      for (std::size_t b = 0; b < kt; ++b) {
        grad_k(a, b) += u[a] * gb[b];
        gu[a] += k(a, b) * gb[b];
      }
    }

    // u = mu / (K v_prev)
    const Vector kvp = kernel_times(k, v_prev);
    Vector ga(kv);
    for (std::size_t a = 0; a < kv; ++a) {
      const double den = std::max(kvp[a], kKernelFloor);
      out.mu[a] += gu[a] / den;
      ga[a] = kvp[a] > kKernelFloor ? -gu[a] * u[a] / den : 0.0;
    }
    Vector gv_prev(kt);
    for (std::size_t a = 0; a < kv; ++a) {
      for (std::size_t b = 0; b < kt; ++b) {
        grad_k(a, b) += ga[a] * v_prev[b];
        gv_prev[b] += k(a, b) * ga[a];
      }
    }
    gv = std::move(gv_prev);
    gu = Vector(kv);
  }

  // K = exp(-C / eps); clamped entries are constant.
  for (std::size_t i = 0; i < k.size(); ++i) {
    const double kij = k.span()[i];
    const bool clamped = std::exp(-tape.cost.span()[i] / tape.epsilon) < kKernelFloor;
    out.cost.span()[i] = clamped ? 0.0 : -grad_k.span()[i] * kij / tape.epsilon;
  }
  return out;
}

SinkhornGrads vjp_log(const SinkhornTape& tape, const Matrix& g) {
  const Matrix& cost = tape.cost;
  const double eps = tape.epsilon;
  const std::size_t kv = cost.rows();
  const std::size_t kt = cost.cols();
  const std::size_t iters = tape.iterations();
  const Vector& mu = tape.marginals.mu;
  const Vector& nu = tape.marginals.nu;

  SinkhornGrads out{Matrix(kv, kt), Vector(kv), Vector(kt)};
  Vector gf(kv);
  Vector gg(kt);
  {
    const Matrix plan = log_plan(cost, tape.first[iters], tape.second[iters], eps);
    for (std::size_t a = 0; a < kv; ++a) {
      for (std::size_t b = 0; b < kt; ++b) {
        const double w = g(a, b) * plan(a, b) / eps;
        gf[a] += w;
        gg[b] += w;
        out.cost(a, b) -= w;
      }
    }
  }
  for (std::size_t it = iters; it >= 1; --it) {
    // g = eps log nu - eps LSE_a((f - C_ab) / eps)
    const Matrix q = col_gibbs(cost, tape.first[it], eps);
    for (std::size_t b = 0; b < kt; ++b) out.nu[b] += eps * gg[b] / nu[b];
    for (std::size_t a = 0; a < kv; ++a) {
      for (std::size_t b = 0; b < kt; ++b) {
        gf[a] -= gg[b] * q(a, b);
        out.cost(a, b) += gg[b] * q(a, b);
      }
    }
    // f = eps log mu - eps LSE_b((g_prev - C_ab) / eps)
    const Matrix p = row_gibbs(cost, tape.second[it - 1], eps);
    Vector gg_prev(kt);
    for (std::size_t a = 0; a < kv; ++a) {
      out.mu[a] += eps * gf[a] / mu[a];
      for (std::size_t b = 0; b < kt; ++b) {
        gg_prev[b] -= gf[a] * p(a, b);
        out.cost(a, b) += gf[a] * p(a, b);
      }
    }
    gg = std::move(gg_prev);
    gf = Vector(kv);
  }
  return out;
}

}  // namespace

SinkhornGrads sinkhorn_vjp(const SinkhornTape& tape, const Matrix& upstream) {
  if (tape.iterations() == 0 || tape.first.size() != tape.second.size()) {
    throw InvalidArgument("sinkhorn_vjp: empty or inconsistent tape");
  }
  if (upstream.rows() != tape.cost.rows() || upstream.cols() != tape.cost.cols()) {
    throw InvalidArgument("sinkhorn_vjp: upstream shape does not match the plan");
  }
  return tape.log_domain ? vjp_log(tape, upstream) : vjp_standard(tape, upstream);
}

}  // namespace libra
