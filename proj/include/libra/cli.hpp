#pragma once

// Command implementations behind the `libra` executable. Each command
// returns a process exit status and reports failures as one line on `err`.

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "libra/data_io.hpp"
#include "libra/training.hpp"

namespace libra {

struct RunConfig {
  TrainConfig train;
  // Unset means: 6 for NSCLC-shaped tasks (2 classes, 33 instance priors), 10 otherwise.
  std::optional<std::size_t> kv;
  std::filesystem::path data;
  std::optional<std::filesystem::path> priors;
  std::filesystem::path out;
  std::optional<std::size_t> fold;  // train a single fold
  bool parallel_folds = false;
};

// Flat JSON. Unknown keys and bad enum values throw InvalidArgument.
nlohmann::json config_to_json(const RunConfig& cfg);
RunConfig config_from_json(const nlohmann::json& j, RunConfig base = {});

std::size_t default_kv(const Dataset& ds);

// Writes config.json (fully resolved), history.jsonl and fold_<f>.ckpt under cfg.out.
int cmd_train(const RunConfig& cfg, std::ostream& out, std::ostream& err);

// Re-derives the splits from <run>/config.json and scores every fold
// checkpoint (or one) on its test split. Writes <run>/eval.json.
int cmd_eval(const std::filesystem::path& run_dir, std::optional<std::size_t> fold, bool json,
             std::ostream& out, std::ostream& err);

// Generates a dataset into out_dir plus synth_spec.json.
int cmd_synth(const SynthSpec& spec, std::uint64_t seed, const std::filesystem::path& out_dir,
              std::ostream& out, std::ostream& err);

// CSV dumps of one bag's pass through a trained Libra fold checkpoint.
int cmd_inspect(const std::filesystem::path& run_dir, const std::string& bag_id,
                std::size_t fold, const std::filesystem::path& out_dir, std::ostream& out,
                std::ostream& err);

// Parses argv (subcommand first) and dispatches.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace libra
