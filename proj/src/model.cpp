#include "libra/model.hpp"

#include <cmath>
#include <string>
#include <type_traits>

#include "libra/error.hpp"

namespace libra {

std::string_view to_string(ModelKind kind) {
  switch (kind) {
    case ModelKind::kLibra: return "libra";
    case ModelKind::kMaxPool: return "maxpool";
    case ModelKind::kAbmil: return "abmil";
  }
  return "unknown";
}

ModelKind parse_model_kind(std::string_view name) {
  if (name == "libra") return ModelKind::kLibra;
  if (name == "maxpool") return ModelKind::kMaxPool;
  if (name == "abmil") return ModelKind::kAbmil;
  throw InvalidArgument("unknown model kind '" + std::string(name) +
                        "' (expected libra, maxpool or abmil)");
}

ModelKind kind_of(const ParamSet& p) {
  return std::visit(
      [](const auto& inner) {
        using T = std::decay_t<decltype(inner)>;
        if constexpr (std::is_same_v<T, LibraParams>) return ModelKind::kLibra;
        else if constexpr (std::is_same_v<T, MaxPoolParams>) return ModelKind::kMaxPool;
        else return ModelKind::kAbmil;
      },
      p);
}

ParamSet zeros_like(const ParamSet& p) {
  return std::visit(
      [](const auto& inner) -> ParamSet {
        using T = std::decay_t<decltype(inner)>;
        if constexpr (std::is_same_v<T, LibraParams>) {
          LibraParams z;
          z.bank.visual = Matrix(inner.bank.visual.rows(), inner.bank.visual.cols());
          z.bank.textual = Matrix(inner.bank.textual.rows(), inner.bank.textual.cols());
          z.bank.freeze_textual = inner.bank.freeze_textual;
          z.attn = AttentionParams::zeros_like(inner.attn);
          return z;
        } else {
          return T::zeros_like(inner);
        }
      },
      p);
}

LibraTrace libra_forward(const Matrix& x, const BagPriors& priors, const LibraParams& params,
                         const ForwardOptions& opts) {
  if (x.rows() == 0) throw InvalidArgument("forward: empty bag");
  LibraTrace t;
  t.sim = similarity_pair(x, params.bank);
  t.cost = cost_matrix(params.bank);
  t.marginals = estimate_marginals(t.sim);
  t.ot = sinkhorn(t.cost, t.marginals, opts.ot);
  t.fused = fuse_scores(t.sim, t.ot.plan.plan);
  t.alpha = instance_weights(t.fused);
  t.x_fused = reweight_instances(x, t.fused);
  t.attn = cross_attention_trace(priors, t.x_fused, params.attn);
  t.logits = classify_logits(t.attn.out, params.attn);
  t.probs = softmax(t.logits.span());
  return t;
}

LibraParams libra_backward(const Matrix& x, const BagPriors& priors, const LibraParams& params,
                           const LibraTrace& t, const Vector& grad_logits,
                           const ForwardOptions& opts) {
  LibraParams g = std::get<LibraParams>(zeros_like(ParamSet{params}));

  const Matrix d_h = classify_backward(t.attn.out, params.attn, grad_logits, g.attn);
  const Matrix d_fused =
      cross_attention_backward(t.attn, priors, t.x_fused, params.attn, d_h, g.attn);
  const Vector d_scores = reweight_backward(x, t.alpha, d_fused);
  FuseGrads fg = fuse_scores_backward(t.sim, t.ot.plan.plan, d_scores);
  const SinkhornGrads og = sinkhorn_vjp(t.ot.tape, fg.plan);

  if (!opts.detach_marginals) {
    const SimilarityPair mg = estimate_marginals_backward(t.sim, t.marginals, og.mu, og.nu);
    axpy(1.0, mg.visual.span(), fg.sim.visual.span());
    axpy(1.0, mg.textual.span(), fg.sim.textual.span());
  }

  // Similarity path.
  const CosineGrads cv = cosine_matrix_backward(x, params.bank.visual, fg.sim.visual);
  const CosineGrads ct = cosine_matrix_backward(x, params.bank.textual, fg.sim.textual);
  axpy(1.0, cv.b.span(), g.bank.visual.span());
  axpy(1.0, ct.b.span(), g.bank.textual.span());

  // Cost path: C = 1 - cos(P_v, P_t).
  Matrix neg = og.cost;
  for (auto& v : neg.span()) v = -v;
  const CosineGrads cc = cosine_matrix_backward(params.bank.visual, params.bank.textual, neg);
  axpy(1.0, cc.a.span(), g.bank.visual.span());
  axpy(1.0, cc.b.span(), g.bank.textual.span());

  if (params.bank.freeze_textual) {
    for (auto& v : g.bank.textual.span()) v = 0.0;
  }
  return g;
}

Vector forward_logits(const Matrix& x, const BagPriors& priors, const ParamSet& params,
                      const ForwardOptions& opts) {
  return std::visit(
      [&](const auto& p) -> Vector {
        using T = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<T, LibraParams>) {
          return libra_forward(x, priors, p, opts).logits;
        } else if constexpr (std::is_same_v<T, MaxPoolParams>) {
          const Vector pooled = max_pool(x);
          return p.head.logits(pooled.span());
        } else {
          const AbmilOutput out = abmil_aggregate(x, p);
          return p.head.logits(out.z.span());
        }
      },
      params);
}

Vector forward(const Bag& bag, const BagPriors& priors, const ParamSet& params,
               const ForwardOptions& opts) {
  const Vector logits = forward_logits(bag.features, priors, params, opts);
  return softmax(logits.span());
}

double ce_loss(const Vector& probs, std::size_t y) {
  if (y >= probs.size()) {
    throw InvalidArgument("ce_loss: label " + std::to_string(y) + " out of range for " +
                          std::to_string(probs.size()) + " classes");
  }
  return -std::log(std::max(probs[y], kProbFloor));
}

Vector ce_loss_grad_logits(const Vector& probs, std::size_t y) {
  if (y >= probs.size()) throw InvalidArgument("ce_loss_grad_logits: label out of range");
  Vector g(probs.size());
  if (probs[y] < kProbFloor) return g;  // loss is flat under the floor
  for (std::size_t k = 0; k < probs.size(); ++k) g[k] = probs[k];
  g[y] -= 1.0;
  return g;
}

ParamSet backward_from_logits(const Matrix& x, const BagPriors& priors, const ParamSet& params,
                              const Vector& grad_logits, const ForwardOptions& opts) {
  return std::visit(
      [&](const auto& p) -> ParamSet {
        using T = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<T, LibraParams>) {
          const LibraTrace t = libra_forward(x, priors, p, opts);
          return libra_backward(x, priors, p, t, grad_logits, opts);
        } else if constexpr (std::is_same_v<T, MaxPoolParams>) {
          MaxPoolParams g = MaxPoolParams::zeros_like(p);
          const Vector pooled = max_pool(x);
          p.head.backward(pooled.span(), grad_logits, g.head);
          return g;
        } else {
          AbmilParams g = AbmilParams::zeros_like(p);
          const AbmilOutput out = abmil_aggregate(x, p);
          const Vector gz = p.head.backward(out.z.span(), grad_logits, g.head);
          abmil_backward(x, p, out, gz, g);
          return g;
        }
      },
      params);
}

namespace {

void check_grads_finite(const ParamSet& grads) {
  visit_tensors(grads, [](std::string_view name, std::span<const double> v, std::size_t,
                          std::size_t, bool) {
    if (!all_finite(v)) throw NumericFailure("non-finite gradient in " + std::string(name));
  });
}

}  // namespace

LossAndGrad backward(const Bag& bag, const BagPriors& priors, const ParamSet& params,
                     const ForwardOptions& opts) {
  LossAndGrad out;
  std::visit(
      [&](const auto& p) {
        using T = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<T, LibraParams>) {
          const LibraTrace t = libra_forward(bag.features, priors, p, opts);
          out.probs = t.probs;
          out.loss = ce_loss(out.probs, bag.label);
          out.grads = libra_backward(bag.features, priors, p, t,
                                     ce_loss_grad_logits(out.probs, bag.label), opts);
        } else {
          const Vector logits = forward_logits(bag.features, priors, params, opts);
          out.probs = softmax(logits.span());
          out.loss = ce_loss(out.probs, bag.label);
          out.grads = backward_from_logits(bag.features, priors, params,
                                           ce_loss_grad_logits(out.probs, bag.label), opts);
        }
      },
      params);
  check_grads_finite(out.grads);
  return out;
}

}  // namespace libra
