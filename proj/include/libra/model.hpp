#pragma once

// Whole-model forward and backward passes for the three aggregators.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <type_traits>
#include <variant>

#include "libra/bag.hpp"
#include "libra/baselines.hpp"
#include "libra/fusion.hpp"
#include "libra/prototype.hpp"
#include "libra/sinkhorn.hpp"

namespace libra {

enum class ModelKind { kLibra, kMaxPool, kAbmil };

std::string_view to_string(ModelKind kind);
// Accepts "libra", "maxpool", "abmil".
ModelKind parse_model_kind(std::string_view name);

struct LibraParams {
  PrototypeBank bank;
  AttentionParams attn;
};

using ParamSet = std::variant<LibraParams, MaxPoolParams, AbmilParams>;

ModelKind kind_of(const ParamSet& p);
// Same shapes, all zeros.
ParamSet zeros_like(const ParamSet& p);

// Calls f(name, values, rows, cols, trainable) for every tensor in a fixed
// order. Frozen textual prototypes are reported with trainable == false.
template <class P, class F>
void visit_tensors(P& params, F&& f);

struct ForwardOptions {
  SinkhornOptions ot;
  // Treat mu and nu as constants in the backward pass.
  bool detach_marginals = false;
};

// Every intermediate of one Libra forward pass.
struct LibraTrace {
  SimilarityPair sim;
  Matrix cost;
  Marginals marginals;
  SinkhornResult ot;
  FusedScores fused;
  Vector alpha;
  Matrix x_fused;
  AttentionTrace attn;
  Vector logits;
  Vector probs;
};

LibraTrace libra_forward(const Matrix& x, const BagPriors& priors, const LibraParams& params,
                         const ForwardOptions& opts);

// Gradients of sum_k grad_logits[k] * logits[k] w.r.t. every Libra tensor.
LibraParams libra_backward(const Matrix& x, const BagPriors& priors, const LibraParams& params,
                           const LibraTrace& trace, const Vector& grad_logits,
                           const ForwardOptions& opts);

Vector forward_logits(const Matrix& x, const BagPriors& priors, const ParamSet& params,
                      const ForwardOptions& opts);
// Class probabilities (softmax of the logits).
Vector forward(const Bag& bag, const BagPriors& priors, const ParamSet& params,
               const ForwardOptions& opts);

inline constexpr double kProbFloor = 1e-12;

// -log(max(probs[y], kProbFloor)). Throws InvalidArgument if y >= probs.size().
double ce_loss(const Vector& probs, std::size_t y);
// d ce_loss / d logits, accounting for the floor.
Vector ce_loss_grad_logits(const Vector& probs, std::size_t y);

struct LossAndGrad {
  double loss = 0.0;
  Vector probs;
  ParamSet grads;
};

// Throws NumericFailure naming the tensor if any gradient is non-finite.
LossAndGrad backward(const Bag& bag, const BagPriors& priors, const ParamSet& params,
                     const ForwardOptions& opts);

// Gradients w.r.t. every tensor of sum_k grad_logits[k] * logits[k].
ParamSet backward_from_logits(const Matrix& x, const BagPriors& priors, const ParamSet& params,
                              const Vector& grad_logits, const ForwardOptions& opts);

// ---------------------------------------------------------------------------

namespace detail {

template <class M, class F>
void visit_matrix(std::string_view name, M& m, bool trainable, F& f) {
  f(name, m.span(), m.rows(), m.cols(), trainable);
}

template <class V, class F>
void visit_vector(std::string_view name, V& v, bool trainable, F& f) {
  f(name, v.span(), std::size_t{1}, v.size(), trainable);
}

template <class H, class F>
void visit_head(H& head, F& f) {
  visit_matrix("head.weight", head.weight, true, f);
  visit_vector("head.bias", head.bias, true, f);
}

}  // namespace detail

template <class P, class F>
void visit_tensors(P& params, F&& f) {
  using T = std::remove_const_t<P>;
  if constexpr (std::is_same_v<T, LibraParams>) {
    detail::visit_matrix("prototypes.visual", params.bank.visual, true, f);
    detail::visit_matrix("prototypes.textual", params.bank.textual, !params.bank.freeze_textual,
                         f);
    detail::visit_matrix("attn.query", params.attn.query, true, f);
    detail::visit_matrix("attn.key", params.attn.key, true, f);
    detail::visit_matrix("attn.value", params.attn.value, true, f);
    detail::visit_matrix("attn.output", params.attn.output, true, f);
    detail::visit_head(params.attn.head, f);
  } else if constexpr (std::is_same_v<T, MaxPoolParams>) {
    detail::visit_head(params.head, f);
  } else if constexpr (std::is_same_v<T, AbmilParams>) {
    detail::visit_matrix("abmil.v", params.v, true, f);
    detail::visit_vector("abmil.w", params.w, true, f);
    detail::visit_head(params.head, f);
  } else {
    std::visit([&](auto& inner) { visit_tensors(inner, f); }, params);
  }
}

}  // namespace libra
