#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include "doctest.h"
#include "gradcheck.hpp"
#include "libra/checkpoint.hpp"
#include "libra/data_io.hpp"
#include "libra/error.hpp"
#include "libra/training.hpp"
#include "support.hpp"

using namespace libra;

namespace {

using LD = long double;
using Grid = std::vector<std::vector<LD>>;

Grid to_grid(const Matrix& m) {
  Grid g(m.rows(), std::vector<LD>(m.cols()));
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = 0; j < m.cols(); ++j) g[i][j] = m(i, j);
  return g;
}

LD cos_ld(const std::vector<LD>& a, const std::vector<LD>& b) {
  LD ab = 0, aa = 0, bb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  return ab / std::sqrt(aa * bb);
}

std::vector<LD> softmax_ld(const std::vector<LD>& z) {
  LD m = z[0];
  for (LD v : z) m = std::max(m, v);
  std::vector<LD> e(z.size());
  LD s = 0;
  for (std::size_t i = 0; i < z.size(); ++i) s += (e[i] = std::exp(z[i] - m));
  for (auto& v : e) v /= s;
  return e;
}

Grid project(const Grid& x, const Grid& w) {
  Grid out(x.size(), std::vector<LD>(w[0].size(), 0));
  for (std::size_t i = 0; i < x.size(); ++i)
    for (std::size_t k = 0; k < w.size(); ++k)
      for (std::size_t j = 0; j < w[0].size(); ++j) out[i][j] += x[i][k] * w[k][j];
  return out;
}

// The whole Libra forward pass in one function: similarities, cost,
// marginals, fixed-depth Sinkhorn, fused scores, reweighting, multi-head
// attention, pooling, head, softmax.
std::vector<LD> monolithic_forward(const Matrix& xm, const Matrix& zm, const LibraParams& p,
                                   double eps, std::size_t iters) {
  const Grid x = to_grid(xm), z = to_grid(zm);
  const Grid pv = to_grid(p.bank.visual), pt = to_grid(p.bank.textual);
  const std::size_t n = x.size(), kv = pv.size(), kt = pt.size();

  Grid sv(n, std::vector<LD>(kv)), st(n, std::vector<LD>(kt)), c(kv, std::vector<LD>(kt));
  for (std::size_t j = 0; j < n; ++j) {
    for (std::size_t a = 0; a < kv; ++a) sv[j][a] = cos_ld(x[j], pv[a]);
    for (std::size_t b = 0; b < kt; ++b) st[j][b] = cos_ld(x[j], pt[b]);
  }
  for (std::size_t a = 0; a < kv; ++a)
    for (std::size_t b = 0; b < kt; ++b) c[a][b] = 1 - cos_ld(pv[a], pt[b]);

  std::vector<LD> mv(kv, 0), mt(kt, 0);
  for (std::size_t j = 0; j < n; ++j) {
    for (std::size_t a = 0; a < kv; ++a) mv[a] += sv[j][a] / n;
    for (std::size_t b = 0; b < kt; ++b) mt[b] += st[j][b] / n;
  }
  const std::vector<LD> mu = softmax_ld(mv), nu = softmax_ld(mt);

  Grid k(kv, std::vector<LD>(kt));
  for (std::size_t a = 0; a < kv; ++a)
    for (std::size_t b = 0; b < kt; ++b) k[a][b] = std::exp(-c[a][b] / eps);
  std::vector<LD> u(kv, 1), v(kt, 1);
  for (std::size_t it = 0; it < iters; ++it) {
    for (std::size_t a = 0; a < kv; ++a) {
      LD s = 0;
      for (std::size_t b = 0; b < kt; ++b) s += k[a][b] * v[b];
      u[a] = mu[a] / s;
    }
    for (std::size_t b = 0; b < kt; ++b) {
      LD s = 0;
      for (std::size_t a = 0; a < kv; ++a) s += k[a][b] * u[a];
      v[b] = nu[b] / s;
    }
  }

  std::vector<LD> score(n, 0);
  for (std::size_t j = 0; j < n; ++j)
    for (std::size_t a = 0; a < kv; ++a)
      for (std::size_t b = 0; b < kt; ++b) score[j] += sv[j][a] * u[a] * k[a][b] * v[b] * st[j][b];
  const std::vector<LD> alpha = softmax_ld(score);
  Grid xf = x;
  for (std::size_t j = 0; j < n; ++j)
    for (auto& e : xf[j]) e *= alpha[j];

  const Grid q = project(z, to_grid(p.attn.query));
  const Grid kk = project(xf, to_grid(p.attn.key));
  const Grid vv = project(xf, to_grid(p.attn.value));
  const std::size_t h = p.attn.hidden(), heads = p.attn.heads, dh = h / heads;
  Grid mixed(z.size(), std::vector<LD>(h, 0));
  for (std::size_t hd = 0; hd < heads; ++hd) {
    for (std::size_t i = 0; i < z.size(); ++i) {
      std::vector<LD> logits(n, 0);
      for (std::size_t j = 0; j < n; ++j) {
        for (std::size_t t = hd * dh; t < (hd + 1) * dh; ++t) logits[j] += q[i][t] * kk[j][t];
        logits[j] /= std::sqrt((LD)dh);
      }
      const std::vector<LD> w = softmax_ld(logits);
      for (std::size_t j = 0; j < n; ++j)
        for (std::size_t t = hd * dh; t < (hd + 1) * dh; ++t) mixed[i][t] += w[j] * vv[j][t];
    }
  }
  const Grid out = project(mixed, to_grid(p.attn.output));
  std::vector<LD> pooled(h, 0);
  for (const auto& row : out)
    for (std::size_t t = 0; t < h; ++t) pooled[t] += row[t] / out.size();
  std::vector<LD> logits(p.attn.head.classes());
  for (std::size_t cl = 0; cl < logits.size(); ++cl) {
    logits[cl] = p.attn.head.bias[cl];
    for (std::size_t t = 0; t < h; ++t) logits[cl] += pooled[t] * p.attn.head.weight(t, cl);
  }
  return softmax_ld(logits);
}

TaskPriors random_priors(std::size_t classes, std::size_t kt, std::size_t d, std::mt19937_64& rng) {
  return TaskPriors{test::random_unit_rows(kt, d, rng), BagPriors{test::random_matrix(classes, d, rng)}};
}

std::vector<Bag> random_bags(std::size_t count, std::size_t d, std::size_t classes,
                             std::mt19937_64& rng) {
  std::vector<Bag> out;
  for (std::size_t i = 0; i < count; ++i) out.push_back(test::random_bag(3 + i % 5, d, i % classes, rng));
  return out;
}

TrainConfig small_config(ModelKind kind) {
  TrainConfig cfg;
  cfg.model_kind = kind;
  cfg.kv = 4;
  cfg.hidden = 16;
  cfg.heads = 2;
  cfg.max_epochs = 6;
  cfg.patience = 3;
  cfg.learning_rate = 1e-3;
  return cfg;
}

}  // namespace

TEST_CASE("a zero classifier head gives uniform probabilities") {
  std::mt19937_64 rng(1);
  const TaskPriors priors = random_priors(3, 4, 6, rng);
  const std::vector<Bag> bags = random_bags(4, 6, 3, rng);
  for (ModelKind kind : {ModelKind::kLibra, ModelKind::kMaxPool, ModelKind::kAbmil}) {
    ModelParams mp = init_model(bags, priors, small_config(kind));
    std::visit(
        [](auto& p) {
          if constexpr (requires { p.attn; }) p.attn.head = LinearHead::zeros(p.attn.head.in(), 3);
          else p.head = LinearHead::zeros(p.head.in(), 3);
        },
        mp.params);
    for (const Bag& b : bags) {
      const Vector y = forward(b, priors.bag, mp.params, ForwardOptions{});
      for (double v : y) CHECK(std::abs(v - 1.0 / 3.0) < 1e-15);
    }
  }
}

TEST_CASE("bag predictions ignore instance order") {
  std::mt19937_64 rng(2);
  const TaskPriors priors = random_priors(3, 5, 8, rng);
  const std::vector<Bag> bags = random_bags(6, 8, 3, rng);
  for (ModelKind kind : {ModelKind::kLibra, ModelKind::kMaxPool, ModelKind::kAbmil}) {
    const ModelParams mp = init_model(bags, priors, small_config(kind));
    for (const Bag& b : bags) {
      Bag shuffled = b;
      shuffled.features = test::permute_rows(b.features, rng);
      const Vector a = forward(b, priors.bag, mp.params, ForwardOptions{});
      const Vector p = forward(shuffled, priors.bag, mp.params, ForwardOptions{});
      CHECK(test::max_abs_diff(a.span(), p.span()) <= 1e-10);
    }
  }
}

TEST_CASE("Libra forward matches a monolithic oracle") {
  for (std::uint64_t seed : {3u, 4u, 5u}) {
    std::mt19937_64 rng(seed);
    const Matrix x = test::random_matrix(8, 16, rng);
    const Matrix z = test::random_matrix(3, 16, rng);
    LibraParams p;
    p.bank.visual = test::random_matrix(4, 16, rng);
    p.bank.textual = test::random_matrix(5, 16, rng);
    p.attn = AttentionParams::init(16, 8, 2, 3, seed);
    p.attn.head.bias = test::random_vector(3, rng);
    ForwardOptions opts;
    opts.ot.tol = 0.0;
    const Vector y = forward(Bag{"b", 0, x}, BagPriors{z}, p, opts);
    const std::vector<LD> oracle = monolithic_forward(x, z, p, opts.ot.epsilon, opts.ot.max_iters);
    for (std::size_t c = 0; c < 3; ++c) CHECK(std::abs(y[c] - (double)oracle[c]) <= 1e-10);
  }
}

TEST_CASE("cross-entropy examples") {
  CHECK(ce_loss(Vector{0.0, 1.0, 0.0}, 1) == 0.0);
  CHECK(std::abs(ce_loss(Vector{1.0 / 3, 1.0 / 3, 1.0 / 3}, 2) - 1.098612) < 1e-6);
  CHECK(std::abs(ce_loss(Vector{0.25, 0.75}, 0) - 1.386294) < 1e-6);
  CHECK(ce_loss(Vector{0.0, 1.0}, 0) == doctest::Approx(-std::log(1e-12)));
  CHECK_THROWS_AS(ce_loss(Vector{0.5, 0.5}, 2), InvalidArgument);
}

TEST_CASE("saturated logits are stationary for the head bias") {
  test::GradToy toy = test::make_grad_toy(6);
  auto& p = std::get<LibraParams>(toy.params);
  p.attn.head.bias = Vector(3, 0.0);
  p.attn.head.bias[toy.bag.label] = 60.0;
  const LossAndGrad lg = backward(toy.bag, toy.priors, toy.params, ForwardOptions{});
  CHECK(lg.loss <= 1e-20);
  for (double g : std::get<LibraParams>(lg.grads).attn.head.bias) CHECK(std::abs(g) <= 1e-8);
}

TEST_CASE("every Libra gradient matches central differences") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const test::GradToy toy = test::make_grad_toy(seed);
    const test::FdReport r =
        test::finite_difference_check(toy.bag, toy.priors, toy.params, test::fixed_depth_options());
    INFO("seed " << seed << " worst tensor " << r.worst_tensor);
    CHECK(r.checked == 3 * 8 * 2 + 4 * 64 + 8 * 3 + 3);
    CHECK(r.worst_rel <= 1e-4);
  }
}

TEST_CASE("detaching the marginals only changes gradients upstream of the plan") {
  const test::GradToy toy = test::make_grad_toy(11);
  ForwardOptions full = test::fixed_depth_options();
  ForwardOptions detached = full;
  detached.detach_marginals = true;
  const auto gf = std::get<LibraParams>(backward(toy.bag, toy.priors, toy.params, full).grads);
  const auto gd = std::get<LibraParams>(backward(toy.bag, toy.priors, toy.params, detached).grads);
  CHECK(gf.attn.head.weight == gd.attn.head.weight);
  CHECK(test::max_abs_diff(gf.bank.visual.span(), gd.bank.visual.span()) > 0.0);
}

TEST_CASE("baseline gradients match central differences") {
  std::mt19937_64 rng(12);
  const TaskPriors priors = random_priors(3, 3, 6, rng);
  const std::vector<Bag> bags = random_bags(3, 6, 3, rng);
  for (ModelKind kind : {ModelKind::kMaxPool, ModelKind::kAbmil}) {
    const ModelParams mp = init_model(bags, priors, small_config(kind));
    for (const Bag& b : bags) {
      const test::FdReport r = test::finite_difference_check(b, priors.bag, mp.params, {});
      INFO(to_string(kind) << " " << r.worst_tensor);
      CHECK(r.worst_rel <= 1e-4);
    }
  }
}

TEST_CASE("frozen textual prototypes receive zero gradient") {
  test::GradToy toy = test::make_grad_toy(7);
  std::get<LibraParams>(toy.params).bank.freeze_textual = true;
  const LossAndGrad lg = backward(toy.bag, toy.priors, toy.params, ForwardOptions{});
  for (double g : std::get<LibraParams>(lg.grads).bank.textual.span()) CHECK(g == 0.0);
  CHECK(test::max_abs_diff(std::get<LibraParams>(lg.grads).bank.visual.span(),
                           Matrix(3, 8).span()) > 0.0);

  ModelParams mp{toy.params, {}};
  const Matrix before = std::get<LibraParams>(mp.params).bank.textual;
  adam_step(mp, lg.grads, 1e-2);
  CHECK(std::get<LibraParams>(mp.params).bank.textual == before);
}

TEST_CASE("non-finite gradients are reported by tensor") {
  test::GradToy toy = test::make_grad_toy(8);
  std::get<LibraParams>(toy.params).attn.output(0, 0) = std::numeric_limits<double>::quiet_NaN();
  try {
    backward(toy.bag, toy.priors, toy.params, ForwardOptions{});
    FAIL("expected NumericFailure");
  } catch (const NumericFailure& e) {
    // The NaN reaches every upstream tensor; the first one visited is named.
    CHECK(std::string(e.what()).find("prototypes.visual") != std::string::npos);
  }
}

TEST_CASE("a rejected Adam step leaves parameters untouched") {
  const test::GradToy toy = test::make_grad_toy(9);
  ModelParams mp{toy.params, {}};
  ParamSet bad = zeros_like(toy.params);
  std::get<LibraParams>(bad).attn.key(1, 1) = std::numeric_limits<double>::infinity();
  const std::string before = encode_checkpoint(mp.params);
  CHECK_THROWS_AS(adam_step(mp, bad, 1e-3), NumericFailure);
  CHECK(encode_checkpoint(mp.params) == before);
  CHECK(mp.adam.step == 0);
}

TEST_CASE("one small Adam step descends") {
  std::size_t descents = 0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const test::GradToy toy = test::make_grad_toy(1000 + seed);
    ModelParams mp{toy.params, {}};
    const LossAndGrad lg = backward(toy.bag, toy.priors, mp.params, ForwardOptions{});
    adam_step(mp, lg.grads, 1e-6);
    const double after = ce_loss(forward(toy.bag, toy.priors, mp.params, ForwardOptions{}), toy.bag.label);
    if (after < lg.loss) ++descents;
  }
  CHECK(descents >= 95);
}

TEST_CASE("training is deterministic under a seed") {
  std::mt19937_64 rng(13);
  const TaskPriors priors = random_priors(2, 3, 6, rng);
  const std::vector<Bag> train_set = random_bags(6, 6, 2, rng);
  const std::vector<Bag> val_set = random_bags(4, 6, 2, rng);
  for (ModelKind kind : {ModelKind::kLibra, ModelKind::kMaxPool, ModelKind::kAbmil}) {
    TrainConfig cfg = small_config(kind);
    cfg.batch_size = 2;
    const TrainResult a = train(train_set, val_set, priors, cfg);
    const TrainResult b = train(train_set, val_set, priors, cfg);
    CHECK(encode_checkpoint(a.best.params) == encode_checkpoint(b.best.params));
    REQUIRE(a.history.size() == b.history.size());
    for (std::size_t e = 0; e < a.history.size(); ++e) CHECK(a.history[e].val_loss == b.history[e].val_loss);
    cfg.seed = 1;
    const TrainResult c = train(train_set, val_set, priors, cfg);
    CHECK(encode_checkpoint(c.best.params) != encode_checkpoint(a.best.params));
  }
}

TEST_CASE("validation loss that only worsens stops training at epoch two") {
  std::mt19937_64 rng(14);
  const TaskPriors priors = random_priors(2, 3, 6, rng);
  std::vector<Bag> train_set;
  for (std::size_t i = 0; i < 6; ++i) {
    Bag b = test::random_bag(4, 6, i % 2, rng);
    for (std::size_t j = 0; j < 4; ++j) b.features(j, 0) += b.label == 0 ? 2.0 : -2.0;
    train_set.push_back(b);
  }
  // Validation bags are the training bags with flipped labels, so any
  // progress on the training split raises the validation loss.
  std::vector<Bag> val_set = train_set;
  for (Bag& b : val_set) b.label = 1 - b.label;
  TrainConfig cfg = small_config(ModelKind::kMaxPool);
  cfg.max_epochs = 20;
  cfg.patience = 1;
  cfg.learning_rate = 1e-2;
  const TrainResult r = train(train_set, val_set, priors, cfg);
  CHECK(r.history.size() == 2);
  CHECK(r.history[1].val_loss > r.history[0].val_loss);
  CHECK(r.early_stopped);
  CHECK(r.best_epoch == 1);
  CHECK(r.history[1].early_stop_counter == 1);
}

TEST_CASE("the best checkpoint has the lowest validation loss") {
  std::mt19937_64 rng(15);
  const TaskPriors priors = random_priors(2, 3, 6, rng);
  const std::vector<Bag> train_set = random_bags(6, 6, 2, rng);
  const std::vector<Bag> val_set = random_bags(4, 6, 2, rng);
  TrainConfig cfg = small_config(ModelKind::kAbmil);
  cfg.max_epochs = 10;
  cfg.patience = 9;
  const TrainResult r = train(train_set, val_set, priors, cfg);
  double best = 1e300;
  std::size_t arg = 0;
  for (const EpochRecord& e : r.history) {
    if (e.val_loss < best) {
      best = e.val_loss;
      arg = e.epoch;
    }
  }
  CHECK(r.best_epoch == arg);
  CHECK(mean_loss(val_set, priors, r.best.params, cfg.forward_options()) == best);
}

TEST_CASE("training rejects empty splits") {
  std::mt19937_64 rng(16);
  const TaskPriors priors = random_priors(2, 3, 6, rng);
  const std::vector<Bag> bags = random_bags(4, 6, 2, rng);
  const TrainConfig cfg = small_config(ModelKind::kMaxPool);
  CHECK_THROWS_AS(train({}, bags, priors, cfg), InvalidArgument);
  CHECK_THROWS_AS(train(bags, {}, priors, cfg), InvalidArgument);
  TrainConfig bad = cfg;
  bad.patience = bad.max_epochs;
  CHECK_THROWS_AS(train(bags, bags, priors, bad), InvalidArgument);
  bad = cfg;
  bad.learning_rate = 0.0;
  CHECK_THROWS_AS(train(bags, bags, priors, bad), InvalidArgument);
}

TEST_CASE("Libra fits a separable two-class task") {
  SynthSpec spec;
  spec.classes = 2;
  spec.bags_per_class = 18;
  spec.dim = 32;
  spec.noise = 0.05;
  spec.witness_rate = 0.3;
  const Dataset ds = synth_generate(spec, 21);
  std::vector<Bag> train_set, val_set;
  std::size_t seen[2] = {0, 0};
  for (const Bag& b : ds.bags) (seen[b.label]++ < 16 ? train_set : val_set).push_back(b);

  // Nearest centroid over bag means first, to confirm the task is separable.
  std::vector<Vector> centroid(2, Vector(spec.dim));
  for (const Bag& b : train_set) axpy(1.0 / 16.0, column_mean(b.features).span(), centroid[b.label].span());
  std::size_t nc_correct = 0;
  for (const Bag& b : train_set) {
    const Vector m = column_mean(b.features);
    double dist[2];
    for (std::size_t c = 0; c < 2; ++c) {
      dist[c] = 0.0;
      for (std::size_t t = 0; t < spec.dim; ++t) dist[c] += (m[t] - centroid[c][t]) * (m[t] - centroid[c][t]);
    }
    nc_correct += (dist[1] < dist[0] ? 1u : 0u) == b.label;
  }
  REQUIRE(nc_correct == train_set.size());

  TrainConfig cfg;
  cfg.kv = 6;
  cfg.hidden = 32;
  cfg.heads = 4;
  cfg.learning_rate = 1e-3;
  cfg.max_epochs = 80;
  cfg.patience = 79;
  const TrainResult r = train(train_set, val_set, ds.priors(), cfg);
  const Evaluation ev = evaluate(train_set, ds.priors(), r.best.params, cfg.forward_options());
  CHECK(ev.metrics.accuracy >= 0.95);
}

TEST_CASE("evaluation ignores test-set order") {
  std::mt19937_64 rng(17);
  const TaskPriors priors = random_priors(3, 4, 6, rng);
  std::vector<Bag> bags = random_bags(12, 6, 3, rng);
  const ModelParams mp = init_model(bags, priors, small_config(ModelKind::kLibra));
  const Evaluation a = evaluate(bags, priors, mp.params, ForwardOptions{});
  std::shuffle(bags.begin(), bags.end(), rng);
  const Evaluation b = evaluate(bags, priors, mp.params, ForwardOptions{});
  CHECK(a.metrics.accuracy == b.metrics.accuracy);
  CHECK(a.metrics.macro_f1 == b.metrics.macro_f1);
  CHECK(a.metrics.macro_auc == b.metrics.macro_auc);
  CHECK_THROWS_AS(evaluate({}, priors, mp.params, ForwardOptions{}), InvalidArgument);
}
