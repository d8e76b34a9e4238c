#include "libra/training.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <string>

#include "libra/error.hpp"

namespace libra {

namespace {

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  // splitmix64 finaliser over (seed, stream).
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

std::vector<std::span<double>> mutable_tensors(ParamSet& p) {
  std::vector<std::span<double>> out;
  visit_tensors(p, [&](std::string_view, std::span<double> v, std::size_t, std::size_t, bool) {
    out.push_back(v);
  });
  return out;
}

struct TensorView {
  std::string name;
  std::span<const double> values;
  bool trainable;
};

std::vector<TensorView> const_tensors(const ParamSet& p) {
  std::vector<TensorView> out;
  visit_tensors(p, [&](std::string_view name, std::span<const double> v, std::size_t,
                       std::size_t, bool trainable) {
    out.push_back({std::string(name), v, trainable});
  });
  return out;
}

}  // namespace

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw InvalidArgument("config: learning_rate must be > 0");
  if (max_epochs == 0) throw InvalidArgument("config: max_epochs must be >= 1");
  if (patience >= max_epochs) throw InvalidArgument("config: patience must be < max_epochs");
  if (batch_size == 0) throw InvalidArgument("config: batch_size must be >= 1");
  if (!(epsilon > 0.0)) throw InvalidArgument("config: epsilon must be > 0");
  if (ot_iters == 0) throw InvalidArgument("config: ot_iters must be >= 1");
  if (kv == 0) throw InvalidArgument("config: kv must be >= 1");
  if (hidden == 0 || heads == 0 || hidden % heads != 0) {
    throw InvalidArgument("config: hidden " + std::to_string(hidden) +
                          " must be a positive multiple of heads " + std::to_string(heads));
  }
}

ForwardOptions TrainConfig::forward_options() const {
  ForwardOptions o;
  o.ot.epsilon = epsilon;
  o.ot.max_iters = ot_iters;
  o.ot.tol = ot_tol;
  o.ot.log_domain = log_domain_sinkhorn;
  o.detach_marginals = detach_marginals;
  return o;
}

ModelParams init_model(std::span<const Bag> train_set, const TaskPriors& priors,
                       const TrainConfig& cfg, InitReport* report) {
  cfg.validate();
  if (train_set.empty()) throw InvalidArgument("init_model: empty training set");
  const std::size_t d = train_set.front().dim();
  const std::size_t c = priors.classes();
  if (priors.bag.z_bag.cols() != d) {
    throw InvalidArgument("init_model: bag prior width " +
                          std::to_string(priors.bag.z_bag.cols()) + " != feature width " +
                          std::to_string(d));
  }
  ModelParams mp;
  switch (cfg.model_kind) {
    case ModelKind::kLibra: {
      LibraParams p;
      VisualInit vi =
          init_visual_prototypes(train_set, cfg.kv, d, derive_seed(cfg.seed, 1), cfg.init_strategy);
      if (report) report->warnings = vi.warnings;
      p.bank.visual = std::move(vi.prototypes);
      load_textual_prototypes(p.bank, priors.instance);
      p.bank.freeze_textual = cfg.freeze_textual;
      p.bank.validate();
      p.attn = AttentionParams::init(d, cfg.hidden, cfg.heads, c, derive_seed(cfg.seed, 2));
      mp.params = std::move(p);
      break;
    }
    case ModelKind::kMaxPool:
      mp.params = MaxPoolParams::init(d, c, derive_seed(cfg.seed, 3));
      break;
    case ModelKind::kAbmil:
      mp.params = AbmilParams::init(d, cfg.hidden, c, derive_seed(cfg.seed, 4));
      break;
  }
  return mp;
}

void adam_step(ModelParams& mp, const ParamSet& grads, double lr, const AdamOptions& opts) {
  if (kind_of(grads) != kind_of(mp.params)) throw InvalidArgument("adam_step: model kind mismatch");
  std::vector<std::span<double>> params = mutable_tensors(mp.params);
  const std::vector<TensorView> gs = const_tensors(grads);
  if (gs.size() != params.size()) throw InvalidArgument("adam_step: tensor count mismatch");

  AdamState next = mp.adam;
  if (next.m.size() != params.size()) {
    next.m.assign(params.size(), {});
    next.v.assign(params.size(), {});
    for (std::size_t i = 0; i < params.size(); ++i) {
      next.m[i].assign(params[i].size(), 0.0);
      next.v[i].assign(params[i].size(), 0.0);
    }
  }
  next.step += 1;
  const double t = static_cast<double>(next.step);
  const double bc1 = 1.0 - std::pow(opts.beta1, t);
  const double bc2 = 1.0 - std::pow(opts.beta2, t);

  std::vector<std::vector<double>> updated(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto g = gs[i].values;
    if (g.size() != params[i].size()) {
      throw InvalidArgument("adam_step: shape mismatch in " + gs[i].name);
    }
    updated[i].assign(params[i].begin(), params[i].end());
    if (!gs[i].trainable) continue;
    auto& m = next.m[i];
    auto& v = next.v[i];
    for (std::size_t k = 0; k < g.size(); ++k) {
      m[k] = opts.beta1 * m[k] + (1.0 - opts.beta1) * g[k];
      v[k] = opts.beta2 * v[k] + (1.0 - opts.beta2) * g[k] * g[k];
      const double mhat = m[k] / bc1;
      const double vhat = v[k] / bc2;
      updated[i][k] -= lr * mhat / (std::sqrt(vhat) + opts.eps);
    }
    if (!all_finite(updated[i])) {
      throw NumericFailure("adam_step: non-finite update in " + gs[i].name);
    }
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    std::copy(updated[i].begin(), updated[i].end(), params[i].begin());
  }
  mp.adam = std::move(next);
}

double mean_loss(std::span<const Bag> bags, const TaskPriors& priors, const ParamSet& params,
                 const ForwardOptions& opts) {
  if (bags.empty()) throw InvalidArgument("mean_loss: empty set");
  double total = 0.0;
  for (const Bag& b : bags) total += ce_loss(forward(b, priors.bag, params, opts), b.label);
  return total / static_cast<double>(bags.size());
}

TrainResult train(std::span<const Bag> train_set, std::span<const Bag> val_set,
                  const TaskPriors& priors, const TrainConfig& cfg,
                  const std::function<void(const EpochRecord&)>& on_epoch) {
  cfg.validate();
  if (train_set.empty()) throw InvalidArgument("train: empty training split");
  if (val_set.empty()) throw InvalidArgument("train: empty validation split");
  const ForwardOptions opts = cfg.forward_options();

  InitReport init_report;
  ModelParams current = init_model(train_set, priors, cfg, &init_report);
  TrainResult res;
  res.warnings = init_report.warnings;
  res.best = current;

  std::mt19937_64 rng(derive_seed(cfg.seed, 5));
  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), 0);
  double best_val = std::numeric_limits<double>::infinity();
  std::size_t counter = 0;

  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t stop = std::min(order.size(), start + cfg.batch_size);
      const double inv = 1.0 / static_cast<double>(stop - start);
      ParamSet acc = zeros_like(current.params);
      std::vector<std::span<double>> acc_t = mutable_tensors(acc);
      for (std::size_t i = start; i < stop; ++i) {
        const LossAndGrad lg = backward(train_set[order[i]], priors.bag, current.params, opts);
        epoch_loss += lg.loss;
        const std::vector<TensorView> g = const_tensors(lg.grads);
        for (std::size_t k = 0; k < acc_t.size(); ++k) axpy(inv, g[k].values, acc_t[k]);
      }
      adam_step(current, acc, cfg.learning_rate);
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = epoch_loss / static_cast<double>(order.size());
    rec.val_loss = mean_loss(val_set, priors, current.params, opts);
    rec.lr = cfg.learning_rate;
    if (rec.val_loss < best_val) {
      best_val = rec.val_loss;
      res.best = current;
      res.best_epoch = epoch;
      counter = 0;
    } else {
      ++counter;
    }
    rec.early_stop_counter = counter;
    res.history.push_back(rec);
    if (on_epoch) on_epoch(rec);
    if (counter > 0 && counter >= cfg.patience) {
      res.early_stopped = epoch < cfg.max_epochs;
      break;
    }
  }
  return res;
}

Evaluation evaluate(std::span<const Bag> test_set, const TaskPriors& priors,
                    const ParamSet& params, const ForwardOptions& opts) {
  if (test_set.empty()) throw InvalidArgument("evaluate: empty test set");
  Evaluation ev;
  ev.probs = Matrix(test_set.size(), priors.classes());
  ev.labels.reserve(test_set.size());
  for (std::size_t i = 0; i < test_set.size(); ++i) {
    const Vector p = forward(test_set[i], priors.bag, params, opts);
    std::copy(p.begin(), p.end(), ev.probs.row(i).begin());
    ev.labels.push_back(test_set[i].label);
  }
  ev.metrics = compute_metrics(ev.probs, ev.labels);
  return ev;
}

}  // namespace libra
