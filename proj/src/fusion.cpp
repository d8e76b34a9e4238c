#include "libra/fusion.hpp"

#include <cmath>
#include <string>

#include "libra/error.hpp"

namespace libra {

namespace {

void require(bool ok, const std::string& msg) {
  if (!ok) throw InvalidArgument(msg);
}

}  // namespace

AttentionParams AttentionParams::init(std::size_t d, std::size_t hidden, std::size_t heads,
                                      std::size_t classes, std::uint64_t seed) {
  require(d > 0 && hidden > 0 && classes > 0, "attention params: zero dimension");
  require(heads > 0 && hidden % heads == 0,
          "attention params: hidden " + std::to_string(hidden) + " not divisible by heads " +
              std::to_string(heads));
  std::mt19937_64 rng(seed);
  AttentionParams p;
  p.query = glorot_uniform(d, hidden, rng);
  p.key = glorot_uniform(d, hidden, rng);
  p.value = glorot_uniform(d, hidden, rng);
  p.output = glorot_uniform(hidden, hidden, rng);
  p.head = LinearHead::glorot(hidden, classes, rng);
  p.heads = heads;
  return p;
}

AttentionParams AttentionParams::zeros_like(const AttentionParams& p) {
  AttentionParams z;
  z.query = Matrix(p.query.rows(), p.query.cols());
  z.key = Matrix(p.key.rows(), p.key.cols());
  z.value = Matrix(p.value.rows(), p.value.cols());
  z.output = Matrix(p.output.rows(), p.output.cols());
  z.head = LinearHead::zeros(p.head.in(), p.head.classes());
  z.heads = p.heads;
  return z;
}

void AttentionParams::validate() const {
  const std::size_t h = hidden();
  require(heads > 0 && h > 0 && h % heads == 0,
          "attention params: hidden " + std::to_string(h) + " not divisible by heads " +
              std::to_string(heads));
  require(key.cols() == h && value.cols() == h, "attention params: projection widths differ");
  require(query.rows() == key.rows() && key.rows() == value.rows(),
          "attention params: projection input widths differ");
  require(output.rows() == h && output.cols() == h, "attention params: output projection shape");
  require(head.in() == h && head.bias.size() == head.classes(), "attention params: head shape");
}

FusedScores fuse_scores(const SimilarityPair& sp, const Matrix& plan) {
  const std::size_t n = sp.visual.rows();
  require(sp.textual.rows() == n, "fuse_scores: similarity row counts differ");
  require(plan.rows() == sp.visual.cols() && plan.cols() == sp.textual.cols(),
          "fuse_scores: plan is " + std::to_string(plan.rows()) + "x" +
              std::to_string(plan.cols()) + ", similarities are n x " +
              std::to_string(sp.visual.cols()) + " / n x " + std::to_string(sp.textual.cols()));
  const Matrix carried = matmul(sp.visual, plan);
  FusedScores out{Vector(n)};
  for (std::size_t j = 0; j < n; ++j) out.scores[j] = dot(carried.row(j), sp.textual.row(j));
  return out;
}

FuseGrads fuse_scores_backward(const SimilarityPair& sp, const Matrix& plan,
                               const Vector& grad_scores) {
  const std::size_t n = sp.visual.rows();
  require(grad_scores.size() == n, "fuse_scores_backward: gradient length");
  const Matrix carried = matmul(sp.visual, plan);           // n x K_t
  const Matrix back = matmul_nt(sp.textual, plan);          // n x K_v
  FuseGrads g{{Matrix(n, sp.visual.cols()), Matrix(n, sp.textual.cols())},
              Matrix(plan.rows(), plan.cols())};
  for (std::size_t j = 0; j < n; ++j) {
    const double w = grad_scores[j];
    axpy(w, back.row(j), g.sim.visual.row(j));
    axpy(w, carried.row(j), g.sim.textual.row(j));
    for (std::size_t a = 0; a < plan.rows(); ++a) {
      axpy(w * sp.visual(j, a), sp.textual.row(j), g.plan.row(a));
    }
  }
  return g;
}

Vector instance_weights(const FusedScores& fs) { return softmax(fs.scores.span()); }

Matrix reweight_instances(const Matrix& x, const FusedScores& fs) {
  require(x.rows() == fs.scores.size(), "reweight_instances: " + std::to_string(x.rows()) +
                                            " instances but " +
                                            std::to_string(fs.scores.size()) + " scores");
  const Vector alpha = instance_weights(fs);
  Matrix out = x;
  for (std::size_t j = 0; j < x.rows(); ++j) {
    for (auto& v : out.row(j)) v *= alpha[j];
  }
  return out;
}

Vector reweight_backward(const Matrix& x, const Vector& alpha, const Matrix& grad_fused) {
  require(grad_fused.same_shape(x) && alpha.size() == x.rows(), "reweight_backward: shapes");
  Vector grad_alpha(x.rows());
  for (std::size_t j = 0; j < x.rows(); ++j) grad_alpha[j] = dot(grad_fused.row(j), x.row(j));
  return softmax_backward(alpha.span(), grad_alpha.span());
}

AttentionTrace cross_attention_trace(const BagPriors& priors, const Matrix& x_fused,
                                     const AttentionParams& params) {
  params.validate();
  require(priors.z_bag.cols() == params.query.rows(),
          "cross_attention: bag prior width " + std::to_string(priors.z_bag.cols()) +
              " != projection input " + std::to_string(params.query.rows()));
  require(x_fused.cols() == params.key.rows(),
          "cross_attention: token width " + std::to_string(x_fused.cols()) +
              " != projection input " + std::to_string(params.key.rows()));
  require(x_fused.rows() >= 1, "cross_attention: no tokens");

  AttentionTrace t;
  t.q = matmul(priors.z_bag, params.query);
  t.k = matmul(x_fused, params.key);
  t.v = matmul(x_fused, params.value);
  const std::size_t c = t.q.rows();
  const std::size_t n = t.k.rows();
  const std::size_t dh = params.head_dim();
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  t.mixed = Matrix(c, params.hidden());
  std::vector<double> logits(n);
  for (std::size_t hd = 0; hd < params.heads; ++hd) {
    const std::size_t off = hd * dh;
    Matrix attn(c, n);
    for (std::size_t i = 0; i < c; ++i) {
      const auto qi = t.q.row(i).subspan(off, dh);
      for (std::size_t j = 0; j < n; ++j) logits[j] = dot(qi, t.k.row(j).subspan(off, dh)) * scale;
      const Vector a = softmax(logits);
      auto dst = t.mixed.row(i).subspan(off, dh);
      for (std::size_t j = 0; j < n; ++j) {
        attn(i, j) = a[j];
        axpy(a[j], t.v.row(j).subspan(off, dh), dst);
      }
    }
    t.attn.push_back(std::move(attn));
  }
  t.out = matmul(t.mixed, params.output);
  return t;
}

Matrix cross_attention_backward(const AttentionTrace& t, const BagPriors& priors,
                                const Matrix& x_fused, const AttentionParams& params,
                                const Matrix& grad_out, AttentionParams& grad) {
  require(grad_out.same_shape(t.out), "cross_attention_backward: gradient shape");
  const std::size_t c = t.q.rows();
  const std::size_t n = t.k.rows();
  const std::size_t dh = params.head_dim();
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  const Matrix g_out_proj = matmul_tn(t.mixed, grad_out);
  axpy(1.0, g_out_proj.span(), grad.output.span());
  const Matrix d_mixed = matmul_nt(grad_out, params.output);

  Matrix dq(c, params.hidden());
  Matrix dk(n, params.hidden());
  Matrix dv(n, params.hidden());
  std::vector<double> da(n);
  for (std::size_t hd = 0; hd < params.heads; ++hd) {
    const std::size_t off = hd * dh;
    const Matrix& attn = t.attn[hd];
    for (std::size_t i = 0; i < c; ++i) {
      const auto dmi = d_mixed.row(i).subspan(off, dh);
      for (std::size_t j = 0; j < n; ++j) {
        da[j] = dot(dmi, t.v.row(j).subspan(off, dh));
        axpy(attn(i, j), dmi, dv.row(j).subspan(off, dh));
      }
      const Vector ds = softmax_backward(attn.row(i), da);
      const auto qi = t.q.row(i).subspan(off, dh);
      auto dqi = dq.row(i).subspan(off, dh);
      for (std::size_t j = 0; j < n; ++j) {
        const double w = ds[j] * scale;
        axpy(w, t.k.row(j).subspan(off, dh), dqi);
        axpy(w, qi, dk.row(j).subspan(off, dh));
      }
    }
  }
  axpy(1.0, matmul_tn(priors.z_bag, dq).span(), grad.query.span());
  axpy(1.0, matmul_tn(x_fused, dk).span(), grad.key.span());
  axpy(1.0, matmul_tn(x_fused, dv).span(), grad.value.span());

  Matrix d_x = matmul_nt(dk, params.key);
  axpy(1.0, matmul_nt(dv, params.value).span(), d_x.span());
  return d_x;
}

Vector classify_logits(const Matrix& h, const AttentionParams& params) {
  require(h.rows() >= 1, "classify: empty representation");
  const Vector pooled = column_mean(h);
  return params.head.logits(pooled.span());
}

Vector classify(const Matrix& h, const AttentionParams& params) {
  const Vector logits = classify_logits(h, params);
  return softmax(logits.span());
}

Matrix classify_backward(const Matrix& h, const AttentionParams& params,
                         const Vector& grad_logits, AttentionParams& grad) {
  const Vector pooled = column_mean(h);
  const Vector g_pooled = params.head.backward(pooled.span(), grad_logits, grad.head);
  Matrix dh(h.rows(), h.cols());
  const double inv = 1.0 / static_cast<double>(h.rows());
  for (std::size_t i = 0; i < h.rows(); ++i) axpy(inv, g_pooled.span(), dh.row(i));
  return dh;
}

namespace {

Vector mean_abs_rows(const Matrix& g) {
  Vector out(g.rows());
  for (std::size_t r = 0; r < g.rows(); ++r) {
    double s = 0.0;
    for (double x : g.row(r)) s += std::abs(x);
    out[r] = g.cols() == 0 ? 0.0 : s / static_cast<double>(g.cols());
  }
  return out;
}

double mean_of(const Vector& v) {
  if (v.empty()) return 0.0;
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

}  // namespace

AttributionSummary prototype_attribution(const std::optional<PrototypeGradients>& grads) {
  if (!grads) throw StateError("prototype_attribution: no backward pass has been recorded");
  AttributionSummary s;
  s.visual = mean_abs_rows(grads->visual);
  s.textual = mean_abs_rows(grads->textual);
  s.visual_mean = mean_of(s.visual);
  s.textual_mean = mean_of(s.textual);
  return s;
}

}  // namespace libra
