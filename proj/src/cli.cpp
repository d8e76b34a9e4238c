#include "libra/cli.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <future>
#include <ostream>
#include <sstream>

#include "CLI11.hpp"
#include "byte_io.hpp"
#include "libra/checkpoint.hpp"
#include "libra/error.hpp"

namespace libra {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kConfigFile = "config.json";
constexpr const char* kHistoryFile = "history.jsonl";

std::string checkpoint_name(std::size_t fold) { return "fold_" + std::to_string(fold) + ".ckpt"; }

std::string_view to_string(InitStrategy s) { return s == InitStrategy::kKMeans ? "kmeans" : "random"; }

InitStrategy parse_init(const std::string& s) {
  if (s == "kmeans") return InitStrategy::kKMeans;
  if (s == "random") return InitStrategy::kRandom;
  throw InvalidArgument("config: unknown init strategy '" + s + "'");
}

std::string pct(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", 100.0 * x);
  return buf;
}

std::string one_line(std::string s) {
  std::replace(s.begin(), s.end(), '\n', ' ');
  return s;
}

json load_json(const fs::path& path) {
  if (!fs::exists(path)) throw IoError("file not found: " + path.string());
  try {
    return json::parse(bytes::read_file(path));
  } catch (const json::parse_error& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

void write_json(const fs::path& path, const json& j) { bytes::write_file(path, j.dump(2) + "\n"); }

RunConfig load_run(const fs::path& run_dir) {
  return config_from_json(load_json(run_dir / kConfigFile));
}

void check_compatible(const ParamSet& p, const RunConfig& cfg, const Dataset& ds) {
  auto fail = [](const std::string& what) {
    throw ConsistencyError("checkpoint does not match config: " + what);
  };
  if (kind_of(p) != cfg.train.model_kind) {
    fail("model is " + std::string(to_string(kind_of(p))) + ", config says " +
         std::string(to_string(cfg.train.model_kind)));
  }
  const std::size_t d = ds.dim;
  const std::size_t c = ds.classes();
  if (const auto* lp = std::get_if<LibraParams>(&p)) {
    if (lp->bank.kv() != cfg.train.kv) fail("K_v " + std::to_string(lp->bank.kv()));
    if (lp->bank.kt() != ds.instance_priors.rows()) fail("K_t " + std::to_string(lp->bank.kt()));
    if (lp->bank.dim() != d) fail("feature width " + std::to_string(lp->bank.dim()));
    if (lp->attn.hidden() != cfg.train.hidden) fail("hidden " + std::to_string(lp->attn.hidden()));
    if (lp->attn.heads != cfg.train.heads) fail("heads " + std::to_string(lp->attn.heads));
    if (lp->attn.head.classes() != c) fail("class count");
  } else if (const auto* mp = std::get_if<MaxPoolParams>(&p)) {
    if (mp->head.in() != d || mp->head.classes() != c) fail("head shape");
  } else if (const auto* ap = std::get_if<AbmilParams>(&p)) {
    if (ap->v.cols() != d || ap->v.rows() != cfg.train.hidden) fail("attention shape");
    if (ap->head.in() != d || ap->head.classes() != c) fail("head shape");
  }
}

Dataset load_dataset(const RunConfig& cfg) {
  if (cfg.data.empty()) throw InvalidArgument("no dataset manifest given (--data)");
  return read_dataset(cfg.data, cfg.priors);
}

std::vector<std::size_t> fold_list(const std::optional<std::size_t>& fold) {
  if (fold) {
    if (*fold >= kFolds) {
      throw InvalidArgument("fold " + std::to_string(*fold) + " out of range [0, " +
                            std::to_string(kFolds) + ")");
    }
    return {*fold};
  }
  std::vector<std::size_t> all(kFolds);
  for (std::size_t f = 0; f < kFolds; ++f) all[f] = f;
  return all;
}

void write_matrix_csv(const fs::path& path, const std::string& prefix, const Matrix& m) {
  std::vector<std::string> header;
  for (std::size_t c = 0; c < m.cols(); ++c) header.push_back(prefix + std::to_string(c));
  std::vector<std::vector<double>> rows;
  for (std::size_t r = 0; r < m.rows(); ++r) rows.emplace_back(m.row(r).begin(), m.row(r).end());
  write_csv(path, header, rows);
}

struct FoldRun {
  TrainResult result;
  std::vector<EpochRecord> history;
};

}  // namespace

json config_to_json(const RunConfig& cfg) {
  const TrainConfig& t = cfg.train;
  json j = {
      {"data", cfg.data.string()},
      {"priors", cfg.priors ? json(cfg.priors->string()) : json(nullptr)},
      {"out", cfg.out.string()},
      {"model", std::string(to_string(t.model_kind))},
      {"k_shot", t.k_shot},
      {"seed", t.seed},
      {"epsilon", t.epsilon},
      {"ot_iters", t.ot_iters},
      {"ot_tol", t.ot_tol},
      {"kv", cfg.kv ? json(*cfg.kv) : json(nullptr)},
      {"hidden", t.hidden},
      {"heads", t.heads},
      {"lr", t.learning_rate},
      {"epochs", t.max_epochs},
      {"patience", t.patience},
      {"batch_size", t.batch_size},
      {"init", std::string(to_string(t.init_strategy))},
      {"freeze_textual", t.freeze_textual},
      {"detach_marginals", t.detach_marginals},
      {"log_domain", t.log_domain_sinkhorn},
      {"fold", cfg.fold ? json(*cfg.fold) : json(nullptr)},
      {"parallel_folds", cfg.parallel_folds},
  };
  return j;
}

RunConfig config_from_json(const json& j, RunConfig cfg) {
  if (!j.is_object()) throw InvalidArgument("config: expected a JSON object");
  TrainConfig& t = cfg.train;
  for (const auto& [key, v] : j.items()) {
    try {
      if (key == "data") cfg.data = v.get<std::string>();
      else if (key == "priors") cfg.priors = v.is_null() ? std::nullopt : std::optional<fs::path>(v.get<std::string>());
      else if (key == "out") cfg.out = v.get<std::string>();
      else if (key == "model") t.model_kind = parse_model_kind(v.get<std::string>());
      else if (key == "k_shot") t.k_shot = v.get<std::size_t>();
      else if (key == "seed") t.seed = v.get<std::uint64_t>();
      else if (key == "epsilon") t.epsilon = v.get<double>();
      else if (key == "ot_iters") t.ot_iters = v.get<std::size_t>();
      else if (key == "ot_tol") t.ot_tol = v.get<double>();
      else if (key == "kv") cfg.kv = v.is_null() ? std::nullopt : std::optional<std::size_t>(v.get<std::size_t>());
      else if (key == "hidden") t.hidden = v.get<std::size_t>();
      else if (key == "heads") t.heads = v.get<std::size_t>();
      else if (key == "lr") t.learning_rate = v.get<double>();
      else if (key == "epochs") t.max_epochs = v.get<std::size_t>();
      else if (key == "patience") t.patience = v.get<std::size_t>();
      else if (key == "batch_size") t.batch_size = v.get<std::size_t>();
      else if (key == "init") t.init_strategy = parse_init(v.get<std::string>());
      else if (key == "freeze_textual") t.freeze_textual = v.get<bool>();
      else if (key == "detach_marginals") t.detach_marginals = v.get<bool>();
      else if (key == "log_domain") t.log_domain_sinkhorn = v.get<bool>();
      else if (key == "fold") cfg.fold = v.is_null() ? std::nullopt : std::optional<std::size_t>(v.get<std::size_t>());
      else if (key == "parallel_folds") cfg.parallel_folds = v.get<bool>();
      else throw InvalidArgument("config: unknown key '" + key + "'");
    } catch (const json::exception& e) {
      throw InvalidArgument("config: bad value for '" + key + "': " + e.what());
    }
  }
  if (cfg.kv) t.kv = *cfg.kv;
  return cfg;
}

std::size_t default_kv(const Dataset& ds) {
  return ds.classes() == 2 && ds.instance_priors.rows() == 33 ? 6 : 10;
}

int cmd_train(const RunConfig& cfg_in, std::ostream& out, std::ostream& err) {
  try {
    RunConfig cfg = cfg_in;
    if (cfg.out.empty()) throw InvalidArgument("no output directory given (--out)");
    const Dataset ds = load_dataset(cfg);
    cfg.data = fs::absolute(cfg.data);
    if (cfg.priors) cfg.priors = fs::absolute(*cfg.priors);
    cfg.kv = cfg.kv.value_or(default_kv(ds));
    cfg.train.kv = *cfg.kv;
    cfg.train.validate();
    const std::vector<std::size_t> folds = fold_list(cfg.fold);
    const SplitPlan plan = kshot_split(ds, cfg.train.k_shot, cfg.train.seed);
    for (const auto& w : plan.warnings) err << "warning: " << w << "\n";

    fs::create_directories(cfg.out);
    write_json(cfg.out / kConfigFile, config_to_json(cfg));

    const TaskPriors priors = ds.priors();
    auto run_fold = [&](std::size_t f) {
      const std::vector<Bag> tr = select(ds, plan.folds[f].train);
      const std::vector<Bag> va = select(ds, plan.folds[f].val);
      FoldRun run;
      run.result = train(tr, va, priors, cfg.train,
                         [&](const EpochRecord& r) { run.history.push_back(r); });
      return run;
    };

    std::vector<FoldRun> runs;
    if (cfg.parallel_folds && folds.size() > 1) {
      std::vector<std::future<FoldRun>> pending;
      for (std::size_t f : folds) pending.push_back(std::async(std::launch::async, run_fold, f));
      for (auto& p : pending) runs.push_back(p.get());
    } else {
      for (std::size_t f : folds) runs.push_back(run_fold(f));
    }

    std::ostringstream history;
    json summary = json::array();
    for (std::size_t i = 0; i < folds.size(); ++i) {
      const std::size_t f = folds[i];
      const FoldRun& run = runs[i];
      save_checkpoint(cfg.out / checkpoint_name(f), run.result.best.params);
      for (const EpochRecord& r : run.history) {
        history << json{{"fold", f},
                        {"epoch", r.epoch},
                        {"train_loss", r.train_loss},
                        {"val_loss", r.val_loss},
                        {"lr", r.lr},
                        {"early_stop_counter", r.early_stop_counter}}
                       .dump()
                << "\n";
      }
      for (const auto& w : run.result.warnings) err << "warning: fold " << f << ": " << w << "\n";
      summary.push_back({{"fold", f},
                         {"best_epoch", run.result.best_epoch},
                         {"epochs_run", run.history.size()},
                         {"early_stopped", run.result.early_stopped},
                         {"checkpoint", checkpoint_name(f)}});
      out << "fold " << f << ": best epoch " << run.result.best_epoch << " of "
          << run.history.size() << "\n";
    }
    bytes::write_file(cfg.out / kHistoryFile, history.str());
    write_json(cfg.out / "train_summary.json", summary);
    return 0;
  } catch (const std::exception& e) {
    err << "error: " << one_line(e.what()) << "\n";
    return 1;
  }
}

int cmd_eval(const fs::path& run_dir, std::optional<std::size_t> fold, bool as_json,
             std::ostream& out, std::ostream& err) {
  try {
    const RunConfig cfg = load_run(run_dir);
    const Dataset ds = load_dataset(cfg);
    const SplitPlan plan = kshot_split(ds, cfg.train.k_shot, cfg.train.seed);
    std::vector<std::size_t> folds;
    if (fold) {
      folds = fold_list(fold);
    } else {
      for (std::size_t f = 0; f < kFolds; ++f) {
        if (fs::exists(run_dir / checkpoint_name(f))) folds.push_back(f);
      }
      if (folds.empty()) throw IoError("no fold checkpoints in " + run_dir.string());
    }

    const TaskPriors priors = ds.priors();
    std::vector<std::future<MetricsReport>> pending;
    for (std::size_t f : folds) {
      const ParamSet params = load_checkpoint(run_dir / checkpoint_name(f));
      check_compatible(params, cfg, ds);
      pending.push_back(std::async(std::launch::async, [&, f, params] {
        const std::vector<Bag> te = select(ds, plan.folds[f].test);
        return evaluate(te, priors, params, cfg.train.forward_options()).metrics;
      }));
    }
    std::vector<MetricsReport> reports;
    for (auto& p : pending) reports.push_back(p.get());
    const FoldSummary s = summarize_folds(reports);

    auto entry = [](const MetricsReport& r) {
      return json{{"ACC", 100.0 * r.accuracy}, {"F1", 100.0 * r.macro_f1},
                  {"AUC", 100.0 * r.macro_auc}, {"count", r.count}};
    };
    json report = {{"folds", json::array()}};
    for (std::size_t i = 0; i < folds.size(); ++i) {
      json e = entry(reports[i]);
      e["fold"] = folds[i];
      report["folds"].push_back(e);
    }
    report["mean"] = {{"ACC", 100.0 * s.accuracy.mean},
                      {"F1", 100.0 * s.macro_f1.mean},
                      {"AUC", 100.0 * s.macro_auc.mean}};
    report["std"] = {{"ACC", 100.0 * s.accuracy.std},
                     {"F1", 100.0 * s.macro_f1.std},
                     {"AUC", 100.0 * s.macro_auc.std}};
    write_json(run_dir / "eval.json", report);

    if (as_json) {
      out << report.dump(2) << "\n";
      return 0;
    }
    for (std::size_t i = 0; i < folds.size() && folds.size() > 1; ++i) {
      out << "fold " << folds[i] << "  ACC: " << pct(reports[i].accuracy)
          << "  F1: " << pct(reports[i].macro_f1) << "  AUC: " << pct(reports[i].macro_auc) << "\n";
    }
    auto line = [&](const char* name, const MeanStd& m) {
      out << name << ": " << pct(m.mean);
      if (folds.size() > 1) out << " ± " << pct(m.std);
      out << "\n";
    };
    line("ACC", s.accuracy);
    line("F1", s.macro_f1);
    line("AUC", s.macro_auc);
    return 0;
  } catch (const std::exception& e) {
    err << "error: " << one_line(e.what()) << "\n";
    return 1;
  }
}

int cmd_synth(const SynthSpec& spec, std::uint64_t seed, const fs::path& out_dir,
              std::ostream& out, std::ostream& err) {
  try {
    if (out_dir.empty()) throw InvalidArgument("no output directory given (--out)");
    const Dataset ds = synth_generate(spec, seed);
    const fs::path manifest = write_dataset(out_dir, ds);
    write_json(out_dir / "synth_spec.json", {{"seed", seed},
                                             {"classes", spec.classes},
                                             {"bags_per_class", spec.bags_per_class},
                                             {"n_min", spec.n_min},
                                             {"n_max", spec.n_max},
                                             {"dim", spec.dim},
                                             {"prototypes_per_class", spec.prototypes_per_class},
                                             {"noise", spec.noise},
                                             {"witness_rate", spec.witness_rate},
                                             {"prior_bias", spec.prior_bias}});
    out << manifest.string() << "\n";
    return 0;
  } catch (const std::exception& e) {
    err << "error: " << one_line(e.what()) << "\n";
    return 1;
  }
}

int cmd_inspect(const fs::path& run_dir, const std::string& bag_id, std::size_t fold,
                const fs::path& out_dir_in, std::ostream& out, std::ostream& err) {
  try {
    const RunConfig cfg = load_run(run_dir);
    const Dataset ds = load_dataset(cfg);
    const auto it = std::find_if(ds.bags.begin(), ds.bags.end(),
                                 [&](const Bag& b) { return b.id == bag_id; });
    if (it == ds.bags.end()) throw InvalidArgument("unknown bag id '" + bag_id + "'");
    fold_list(fold);
    const ParamSet params = load_checkpoint(run_dir / checkpoint_name(fold));
    check_compatible(params, cfg, ds);
    const auto* lp = std::get_if<LibraParams>(&params);
    if (!lp) throw InvalidArgument("inspect needs a libra checkpoint");

    const fs::path out_dir = out_dir_in.empty() ? run_dir / "inspect" / bag_id : out_dir_in;
    fs::create_directories(out_dir);
    const ForwardOptions opts = cfg.train.forward_options();
    const BagPriors bag_priors{ds.bag_priors};
    const LibraTrace t = libra_forward(it->features, bag_priors, *lp, opts);

    write_matrix_csv(out_dir / "sv.csv", "visual_", t.sim.visual);
    write_matrix_csv(out_dir / "st.csv", "textual_", t.sim.textual);
    write_matrix_csv(out_dir / "plan.csv", "textual_", t.ot.plan.plan);

    std::vector<std::vector<double>> rows;
    for (std::size_t a = 0; a < t.marginals.mu.size(); ++a) rows.push_back({0.0, double(a), t.marginals.mu[a]});
    for (std::size_t b = 0; b < t.marginals.nu.size(); ++b) rows.push_back({1.0, double(b), t.marginals.nu[b]});
    write_csv(out_dir / "marginals.csv", {"side", "index", "mass"}, rows);

    rows.clear();
    for (std::size_t j = 0; j < t.alpha.size(); ++j) {
      rows.push_back({double(j), t.fused.scores[j], t.alpha[j]});
    }
    write_csv(out_dir / "fused_scores.csv", {"instance", "score", "alpha"}, rows);

    std::vector<std::string> header = {"instance"};
    const std::size_t c = ds.classes();
    for (std::size_t h = 0; h < t.attn.attn.size(); ++h) {
      for (std::size_t q = 0; q < c; ++q) {
        header.push_back("head" + std::to_string(h) + "_class" + std::to_string(q));
      }
    }
    rows.clear();
    for (std::size_t j = 0; j < t.alpha.size(); ++j) {
      std::vector<double> r = {double(j)};
      for (const Matrix& a : t.attn.attn) {
        for (std::size_t q = 0; q < c; ++q) r.push_back(a(q, j));
      }
      rows.push_back(std::move(r));
    }
    write_csv(out_dir / "attention.csv", header, rows);

    // Attribution targets the predicted class logit.
    const std::size_t pred = argmax(t.probs.span());
    Vector seed(t.logits.size());
    seed[pred] = 1.0;
    const LibraParams g = libra_backward(it->features, bag_priors, *lp, t, seed, opts);
    const std::optional<PrototypeGradients> pg = PrototypeGradients{g.bank.visual, g.bank.textual};
    const AttributionSummary attr = prototype_attribution(pg);
    write_matrix_csv(out_dir / "grad_visual.csv", "dim_", g.bank.visual);
    write_matrix_csv(out_dir / "grad_textual.csv", "dim_", g.bank.textual);
    rows.clear();
    for (std::size_t k = 0; k < attr.visual.size(); ++k) rows.push_back({0.0, double(k), attr.visual[k]});
    for (std::size_t k = 0; k < attr.textual.size(); ++k) rows.push_back({1.0, double(k), attr.textual[k]});
    write_csv(out_dir / "attribution.csv", {"modality", "prototype", "score"}, rows);

    write_json(out_dir / "summary.json",
               {{"bag", bag_id},
                {"label", it->label},
                {"fold", fold},
                {"predicted", pred},
                {"probs", std::vector<double>(t.probs.begin(), t.probs.end())},
                {"sinkhorn_iterations", t.ot.plan.iterations_run},
                {"marginal_violation", t.ot.plan.marginal_violation},
                {"attribution_visual_mean", attr.visual_mean},
                {"attribution_textual_mean", attr.textual_mean}});
    out << out_dir.string() << "\n";
    return 0;
  } catch (const std::exception& e) {
    err << "error: " << one_line(e.what()) << "\n";
    return 1;
  }
}

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Libra-MIL: dual-prototype multiple-instance learning with optimal transport"};
  app.require_subcommand(1);

  // train
  auto* train_cmd = app.add_subcommand("train", "Train one or all folds");
  std::optional<std::string> config_path, data, priors, out_dir, model, init;
  std::optional<std::size_t> k_shot, ot_iters, kv, hidden, heads, epochs, patience, batch, fold;
  std::optional<std::uint64_t> seed;
  std::optional<double> epsilon, lr, ot_tol;
  bool parallel = false, freeze = false, detach = false, log_domain = false;
  train_cmd->add_option("--config", config_path, "Flat JSON config; flags override it");
  train_cmd->add_option("--data", data, "Dataset manifest");
  train_cmd->add_option("--priors", priors, "Priors container overriding the manifest's");
  train_cmd->add_option("--out", out_dir, "Output directory");
  train_cmd->add_option("--model", model, "libra | maxpool | abmil")
      ->check(CLI::IsMember({"libra", "maxpool", "abmil"}));
  train_cmd->add_option("--k-shot", k_shot, "Training bags per class")->check(CLI::IsMember({1, 4, 16}));
  train_cmd->add_option("--seed", seed);
  train_cmd->add_option("--epsilon", epsilon, "Entropic regularisation (0.05)");
  train_cmd->add_option("--ot-iters", ot_iters, "Sinkhorn iterations (20)");
  train_cmd->add_option("--ot-tol", ot_tol, "Sinkhorn early-exit tolerance (1e-9)");
  train_cmd->add_option("--kv", kv, "Visual prototypes");
  train_cmd->add_option("--hidden", hidden, "Attention width (512)");
  train_cmd->add_option("--heads", heads, "Attention heads (8)");
  train_cmd->add_option("--lr", lr, "Adam learning rate (1e-4)");
  train_cmd->add_option("--epochs", epochs, "Maximum epochs (80)");
  train_cmd->add_option("--patience", patience, "Early-stopping patience (15)");
  train_cmd->add_option("--batch-size", batch, "Bags per gradient step (1)");
  train_cmd->add_option("--fold", fold, "Train only this fold");
  train_cmd->add_option("--init", init, "kmeans | random")->check(CLI::IsMember({"kmeans", "random"}));
  train_cmd->add_flag("--parallel-folds", parallel);
  train_cmd->add_flag("--freeze-textual", freeze);
  train_cmd->add_flag("--detach-marginals", detach);
  train_cmd->add_flag("--log-domain", log_domain);

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "Score fold checkpoints on their test splits");
  std::string eval_run;
  std::optional<std::size_t> eval_fold;
  bool eval_json = false;
  eval_cmd->add_option("--run", eval_run, "Training output directory")->required();
  eval_cmd->add_option("--fold", eval_fold);
  eval_cmd->add_flag("--json", eval_json, "Print the report as JSON");

  // synth
  auto* synth_cmd = app.add_subcommand("synth", "Generate a planted-prototype dataset");
  SynthSpec spec;
  std::uint64_t synth_seed = 0;
  std::string synth_out;
  synth_cmd->add_option("--out", synth_out)->required();
  synth_cmd->add_option("--seed", synth_seed)->capture_default_str();
  synth_cmd->add_option("--classes", spec.classes)->capture_default_str();
  synth_cmd->add_option("--bags-per-class", spec.bags_per_class)->capture_default_str();
  synth_cmd->add_option("--n-min", spec.n_min)->capture_default_str();
  synth_cmd->add_option("--n-max", spec.n_max)->capture_default_str();
  synth_cmd->add_option("--dim", spec.dim)->capture_default_str();
  synth_cmd->add_option("--prototypes", spec.prototypes_per_class)->capture_default_str();
  synth_cmd->add_option("--noise", spec.noise)->capture_default_str();
  synth_cmd->add_option("--witness-rate", spec.witness_rate)->capture_default_str();
  synth_cmd->add_option("--prior-bias", spec.prior_bias)->capture_default_str();

  // inspect
  auto* inspect_cmd = app.add_subcommand("inspect", "Dump one bag's intermediates as CSV");
  std::string inspect_run, inspect_bag, inspect_out;
  std::size_t inspect_fold = 0;
  inspect_cmd->add_option("--run", inspect_run, "Training output directory")->required();
  inspect_cmd->add_option("--bag", inspect_bag, "Bag id")->required();
  inspect_cmd->add_option("--fold", inspect_fold)->capture_default_str();
  inspect_cmd->add_option("--out", inspect_out, "Dump directory (<run>/inspect/<bag>)");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << one_line(e.what()) << "\n";
    return 1;
  }

  if (*train_cmd) {
    RunConfig cfg;
    try {
      if (config_path) cfg = config_from_json(load_json(*config_path));
    } catch (const std::exception& e) {
      err << "error: " << one_line(e.what()) << "\n";
      return 1;
    }
    TrainConfig& t = cfg.train;
    if (data) cfg.data = *data;
    if (priors) cfg.priors = fs::path(*priors);
    if (out_dir) cfg.out = *out_dir;
    try {
      if (model) t.model_kind = parse_model_kind(*model);
      if (init) t.init_strategy = parse_init(*init);
    } catch (const std::exception& e) {
      err << "error: " << one_line(e.what()) << "\n";
      return 1;
    }
    if (k_shot) t.k_shot = *k_shot;
    if (seed) t.seed = *seed;
    if (epsilon) t.epsilon = *epsilon;
    if (ot_iters) t.ot_iters = *ot_iters;
    if (ot_tol) t.ot_tol = *ot_tol;
    if (kv) cfg.kv = *kv;
    if (hidden) t.hidden = *hidden;
    if (heads) t.heads = *heads;
    if (lr) t.learning_rate = *lr;
    if (epochs) t.max_epochs = *epochs;
    if (patience) t.patience = *patience;
    if (batch) t.batch_size = *batch;
    if (fold) cfg.fold = *fold;
    if (parallel) cfg.parallel_folds = true;
    if (freeze) t.freeze_textual = true;
    if (detach) t.detach_marginals = true;
    if (log_domain) t.log_domain_sinkhorn = true;
    return cmd_train(cfg, out, err);
  }
  if (*eval_cmd) return cmd_eval(eval_run, eval_fold, eval_json, out, err);
  if (*synth_cmd) return cmd_synth(spec, synth_seed, synth_out, out, err);
  if (*inspect_cmd) return cmd_inspect(inspect_run, inspect_bag, inspect_fold, inspect_out, out, err);
  return 1;
}

}  // namespace libra
