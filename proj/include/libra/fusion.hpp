#pragma once

// Stereoscopic infusion and semantic aggregation.
//
// Each instance gets one scalar relevance score by pushing its two
// similarity rows through the transport plan, s_j = S_v(j,:) T S_t(j,:)^T.
// Scores are softmaxed over instances and used to rescale the instance
// tokens, which are then attended to by the per-class bag-prior queries.
// The c query outputs are mean-pooled and fed to a linear head.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <vector>

#include "libra/layers.hpp"
#include "libra/numkernel.hpp"
#include "libra/prototype.hpp"
#include "libra/sinkhorn.hpp"

namespace libra {

struct FusedScores {
  Vector scores;  // one per instance, |s_j| <= 1
};

// Bag-level prior embeddings, one row per class (c x d). Ingested, not learned.
struct BagPriors {
  Matrix z_bag;

  std::size_t classes() const { return z_bag.rows(); }
};

struct AttentionParams {
  Matrix query;   // d x h
  Matrix key;     // d x h
  Matrix value;   // d x h
  Matrix output;  // h x h
  LinearHead head;  // h x c
  std::size_t heads = 1;

  // Glorot-initialised projections and head. Throws InvalidArgument when
  // hidden is not divisible by heads.
  static AttentionParams init(std::size_t d, std::size_t hidden, std::size_t heads,
                              std::size_t classes, std::uint64_t seed);
  // Same shapes, all zeros (gradient accumulator).
  static AttentionParams zeros_like(const AttentionParams& p);

  std::size_t hidden() const { return query.cols(); }
  std::size_t head_dim() const { return hidden() / heads; }
  void validate() const;
};

FusedScores fuse_scores(const SimilarityPair& sp, const Matrix& plan);
inline FusedScores fuse_scores(const SimilarityPair& sp, const TransportPlan& t) {
  return fuse_scores(sp, t.plan);
}

struct FuseGrads {
  SimilarityPair sim;
  Matrix plan;
};
FuseGrads fuse_scores_backward(const SimilarityPair& sp, const Matrix& plan,
                               const Vector& grad_scores);

// alpha = softmax over instances of the fused scores.
Vector instance_weights(const FusedScores& fs);
// Row j of x scaled by alpha_j.
Matrix reweight_instances(const Matrix& x, const FusedScores& fs);
// d loss / d scores given d loss / d X_fused.
Vector reweight_backward(const Matrix& x, const Vector& alpha, const Matrix& grad_fused);

// Intermediates kept for the backward pass and for inspection dumps.
struct AttentionTrace {
  Matrix q;                    // c x h
  Matrix k;                    // n x h
  Matrix v;                    // n x h
  std::vector<Matrix> attn;    // per head, c x n, rows on the simplex
  Matrix mixed;                // c x h, concatenated head outputs
  Matrix out;                  // c x h, after the output projection
};

AttentionTrace cross_attention_trace(const BagPriors& priors, const Matrix& x_fused,
                                     const AttentionParams& params);
inline Matrix cross_attention(const BagPriors& priors, const Matrix& x_fused,
                              const AttentionParams& params) {
  return cross_attention_trace(priors, x_fused, params).out;
}

// Accumulates projection gradients into `grad` and returns d loss / d x_fused.
Matrix cross_attention_backward(const AttentionTrace& trace, const BagPriors& priors,
                                const Matrix& x_fused, const AttentionParams& params,
                                const Matrix& grad_out, AttentionParams& grad);

// Logits of the head applied to the row-mean of h.
Vector classify_logits(const Matrix& h, const AttentionParams& params);
// softmax(classify_logits(h)).
Vector classify(const Matrix& h, const AttentionParams& params);
// Accumulates head gradients and returns d loss / d h.
Matrix classify_backward(const Matrix& h, const AttentionParams& params,
                         const Vector& grad_logits, AttentionParams& grad);

struct PrototypeGradients {
  Matrix visual;   // K_v x d
  Matrix textual;  // K_t x d
};

struct AttributionSummary {
  Vector visual;   // mean |grad| per visual prototype row
  Vector textual;  // mean |grad| per textual prototype row
  double visual_mean = 0.0;
  double textual_mean = 0.0;
};

// Throws StateError when no gradients have been recorded yet.
AttributionSummary prototype_attribution(const std::optional<PrototypeGradients>& grads);

}  // namespace libra
