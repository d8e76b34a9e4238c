#pragma once

// Feature containers, dataset manifests, the planted-prototype generator
// and k-shot cross-validation splits.
//
// FEA1 container (little-endian):
//   "FEA1" | u32 version = 1 | u32 entry_count
//   per entry: u16 name_len | name (UTF-8) | u32 rows | u32 cols | rows*cols f32, row-major
//
// Features are stored as f32 and promoted to f64 on load.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "libra/bag.hpp"
#include "libra/numkernel.hpp"
#include "libra/training.hpp"

namespace libra {

inline constexpr char kContainerMagic[4] = {'F', 'E', 'A', '1'};
inline constexpr std::uint32_t kContainerVersion = 1;

struct NamedMatrix {
  std::string name;
  Matrix matrix;
};

std::string encode_container(std::span<const NamedMatrix> entries);
// Throws FormatError on bad magic, unsupported version, truncation or
// trailing bytes.
std::vector<NamedMatrix> decode_container(std::string_view bytes);

// Throws IoError (with the path) when the file cannot be written/read.
void write_container(const std::filesystem::path& path, std::span<const NamedMatrix> entries);
std::vector<NamedMatrix> read_container(const std::filesystem::path& path);

// Header row followed by one comma-separated instance per line.
Matrix read_csv_matrix(const std::filesystem::path& path);
void write_csv(const std::filesystem::path& path, const std::vector<std::string>& header,
               const std::vector<std::vector<double>>& rows);

struct Dataset {
  std::vector<Bag> bags;
  std::vector<std::string> class_names;
  std::size_t dim = 0;
  Matrix instance_priors;  // K_t x d
  Matrix bag_priors;       // c x d

  std::size_t classes() const { return class_names.size(); }
  TaskPriors priors() const { return {instance_priors, BagPriors{bag_priors}}; }
  // Shared width, finite features, labels < c, prior shapes. Throws ConsistencyError.
  void validate() const;
};

// Writes <dir>/features.fea, <dir>/priors.fea and <dir>/manifest.json and
// returns the manifest path.
std::filesystem::path write_dataset(const std::filesystem::path& dir, const Dataset& ds);

// Loads and validates a dataset. `priors_override` replaces the manifest's
// priors container path.
Dataset read_dataset(const std::filesystem::path& manifest_path,
                     const std::optional<std::filesystem::path>& priors_override = std::nullopt);

struct SynthSpec {
  std::size_t classes = 3;
  std::size_t bags_per_class = 40;
  std::size_t n_min = 16;
  std::size_t n_max = 32;
  std::size_t dim = 32;
  std::size_t prototypes_per_class = 2;
  double noise = 0.1;
  double witness_rate = 0.3;
  // Std of the Gaussian perturbation applied to the textual priors before
  // renormalising. 0 gives the perfect-text condition.
  double prior_bias = 0.0;

  void validate() const;
};

// Each class owns prototypes_per_class random unit directions. A bag holds
// round(witness_rate * n) witnesses (a class prototype plus N(0, noise^2)
// per coordinate, at least one when witness_rate > 0) and random unit
// background vectors, in shuffled order. Instance priors are the
// prototypes (class-major rows), bag priors the normalised class means.
Dataset synth_generate(const SynthSpec& spec, std::uint64_t seed);

struct FoldSplit {
  std::vector<std::size_t> train;
  std::vector<std::size_t> val;
  std::vector<std::size_t> test;
};

struct SplitPlan {
  std::uint64_t seed = 0;
  std::size_t k_shot = 0;
  std::vector<std::size_t> fold_of;  // test fold of each bag
  std::vector<FoldSplit> folds;
  std::vector<std::string> warnings;
};

inline constexpr std::size_t kFolds = 5;

// Stratified 5-fold test partition; k training bags per class drawn from
// the remaining bags, everything else is validation. Throws InvalidArgument
// naming the class when it has fewer than k + 2 bags.
SplitPlan kshot_split(const Dataset& ds, std::size_t k, std::uint64_t seed);

std::vector<Bag> select(const Dataset& ds, std::span<const std::size_t> idx);

}  // namespace libra
