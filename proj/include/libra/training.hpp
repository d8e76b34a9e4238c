#pragma once

// Few-shot training harness: parameter initialisation, Adam, the epoch
// loop with validation-loss early stopping, and evaluation.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "libra/bag.hpp"
#include "libra/metrics.hpp"
#include "libra/model.hpp"
#include "libra/prototype.hpp"

namespace libra {

struct TrainConfig {
  double learning_rate = 1e-4;
  std::size_t max_epochs = 80;
  std::size_t patience = 15;
  // Bags per gradient-accumulation group; the loss is averaged over a group.
  std::size_t batch_size = 1;
  std::uint64_t seed = 0;
  double epsilon = 0.05;
  std::size_t ot_iters = 20;
  double ot_tol = 1e-9;
  std::size_t k_shot = 4;
  ModelKind model_kind = ModelKind::kLibra;
  std::size_t kv = 10;
  std::size_t hidden = 512;
  std::size_t heads = 8;
  InitStrategy init_strategy = InitStrategy::kKMeans;
  bool freeze_textual = false;
  bool detach_marginals = false;
  bool log_domain_sinkhorn = false;

  // learning_rate > 0, patience < max_epochs, nonzero sizes, hidden % heads == 0.
  void validate() const;
  ForwardOptions forward_options() const;
};

struct AdamOptions {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
  std::uint64_t step = 0;
};

struct ModelParams {
  ParamSet params;
  AdamState adam;
};

// Data shared by every bag of a task: textual instance priors (K_t x d) and
// per-class bag priors (c x d).
struct TaskPriors {
  Matrix instance;
  BagPriors bag;

  std::size_t classes() const { return bag.classes(); }
};

struct InitReport {
  std::vector<std::string> warnings;
};

// Fresh parameters for cfg.model_kind. Visual prototypes are fitted on the
// training bags' instances; textual prototypes copy the instance priors.
ModelParams init_model(std::span<const Bag> train_set, const TaskPriors& priors,
                       const TrainConfig& cfg, InitReport* report = nullptr);

// One Adam update with the averaged gradients. The update is computed in
// full before anything is written; a non-finite result throws
// NumericFailure naming the tensor and leaves params untouched.
void adam_step(ModelParams& params, const ParamSet& grads, double lr,
               const AdamOptions& opts = {});

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0.0;
  double val_loss = 0.0;
  double lr = 0.0;
  std::size_t early_stop_counter = 0;
};

struct TrainResult {
  ModelParams best;
  std::vector<EpochRecord> history;
  std::size_t best_epoch = 0;
  bool early_stopped = false;
  std::vector<std::string> warnings;
};

// Mean cross-entropy over a set of bags.
double mean_loss(std::span<const Bag> bags, const TaskPriors& priors, const ParamSet& params,
                 const ForwardOptions& opts);

// Adam training with early stopping on validation loss; returns the
// checkpoint with the lowest validation loss. Deterministic under cfg.seed.
TrainResult train(std::span<const Bag> train_set, std::span<const Bag> val_set,
                  const TaskPriors& priors, const TrainConfig& cfg,
                  const std::function<void(const EpochRecord&)>& on_epoch = {});

struct Evaluation {
  MetricsReport metrics;
  Matrix probs;  // one row per test bag
  std::vector<std::size_t> labels;
};

Evaluation evaluate(std::span<const Bag> test_set, const TaskPriors& priors,
                    const ParamSet& params, const ForwardOptions& opts);

}  // namespace libra
