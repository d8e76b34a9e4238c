#include "libra/data_io.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <sstream>

#include "byte_io.hpp"
#include "json.hpp"
#include "libra/error.hpp"

namespace libra {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

static_assert(sizeof(float) == 4 && std::numeric_limits<float>::is_iec559);

Matrix random_unit_rows(std::size_t k, std::size_t d, std::mt19937_64& rng) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  Matrix out(k, d);
  for (std::size_t r = 0; r < k; ++r) {
    auto row = out.row(r);
    double norm = 0.0;
    while (norm < kNormFloor) {
      for (auto& x : row) x = gauss(rng);
      norm = l2_norm(row);
    }
    for (auto& x : row) x /= norm;
  }
  return out;
}

const NamedMatrix& find_entry(const std::vector<NamedMatrix>& entries, const std::string& name,
                              const std::string& context) {
  for (const auto& e : entries) {
    if (e.name == name) return e;
  }
  throw ConsistencyError(context + ": container has no entry '" + name + "'");
}

}  // namespace

namespace bytes {

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  if (in.bad()) throw IoError("read failed for " + path.string());
  return ss.str();
}

void write_file(const fs::path& path, std::string_view bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  out.flush();
  if (!out) throw IoError("write failed for " + path.string());
}

}  // namespace bytes

std::string encode_container(std::span<const NamedMatrix> entries) {
  std::string out(kContainerMagic, 4);
  bytes::put<std::uint32_t>(out, kContainerVersion);
  bytes::put<std::uint32_t>(out, static_cast<std::uint32_t>(entries.size()));
  for (const auto& e : entries) {
    if (e.name.size() > 0xffff) throw InvalidArgument("container entry name too long");
    bytes::put<std::uint16_t>(out, static_cast<std::uint16_t>(e.name.size()));
    out += e.name;
    bytes::put<std::uint32_t>(out, static_cast<std::uint32_t>(e.matrix.rows()));
    bytes::put<std::uint32_t>(out, static_cast<std::uint32_t>(e.matrix.cols()));
    for (double v : e.matrix.span()) {
      bytes::put(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
    }
  }
  return out;
}

std::vector<NamedMatrix> decode_container(std::string_view bytes) {
  bytes::Reader r(bytes);
  const std::string_view magic = r.take(4, "magic");
  if (std::memcmp(magic.data(), kContainerMagic, 4) != 0) throw FormatError("bad container magic");
  const std::uint32_t version = r.get<std::uint32_t>("version");
  if (version != kContainerVersion) {
    throw FormatError("unsupported container version " + std::to_string(version));
  }
  const std::uint32_t count = r.get<std::uint32_t>("entry count");
  std::vector<NamedMatrix> out;
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedMatrix e;
    const std::uint16_t len = r.get<std::uint16_t>("name length");
    e.name = std::string(r.take(len, "entry name"));
    const std::uint32_t rows = r.get<std::uint32_t>("rows");
    const std::uint32_t cols = r.get<std::uint32_t>("cols");
    const std::uint64_t n = static_cast<std::uint64_t>(rows) * cols;
    if (n * 4 > r.remaining()) {
      throw FormatError("container truncated in payload of '" + e.name + "'");
    }
    std::vector<double> data(n);
    for (std::uint64_t k = 0; k < n; ++k) {
      data[k] = static_cast<double>(std::bit_cast<float>(r.get<std::uint32_t>("payload")));
    }
    e.matrix = Matrix(rows, cols, std::move(data));
    out.push_back(std::move(e));
  }
  if (r.remaining() != 0) throw FormatError("trailing bytes after last container entry");
  return out;
}

void write_container(const fs::path& path, std::span<const NamedMatrix> entries) {
  bytes::write_file(path, encode_container(entries));
}

std::vector<NamedMatrix> read_container(const fs::path& path) {
  try {
    return decode_container(bytes::read_file(path));
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

Matrix read_csv_matrix(const fs::path& path) {
  std::istringstream in(bytes::read_file(path));
  std::string line;
  if (!std::getline(in, line)) throw FormatError(path.string() + ": missing CSV header");
  std::vector<double> data;
  std::size_t cols = 0;
  std::size_t rows = 0;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::stringstream ls(line);
    std::string cell;
    std::size_t c = 0;
    while (std::getline(ls, cell, ',')) {
      try {
        std::size_t used = 0;
        data.push_back(std::stod(cell, &used));
      } catch (const std::exception&) {
        throw FormatError(path.string() + ": bad number '" + cell + "' on data line " +
                          std::to_string(rows + 1));
      }
      ++c;
    }
    if (rows == 0) cols = c;
    if (c != cols) {
      throw FormatError(path.string() + ": ragged CSV on data line " + std::to_string(rows + 1));
    }
    ++rows;
  }
  return Matrix(rows, cols, std::move(data));
}

void write_csv(const fs::path& path, const std::vector<std::string>& header,
               const std::vector<std::vector<double>>& rows) {
  std::ostringstream out;
  out.precision(17);
  for (std::size_t i = 0; i < header.size(); ++i) out << (i ? "," : "") << header[i];
  out << '\n';
  for (const auto& r : rows) {
    for (std::size_t i = 0; i < r.size(); ++i) out << (i ? "," : "") << r[i];
    out << '\n';
  }
  bytes::write_file(path, out.str());
}

void Dataset::validate() const {
  if (class_names.empty()) throw ConsistencyError("dataset: no classes");
  if (bag_priors.rows() != classes()) {
    throw ConsistencyError("dataset: " + std::to_string(bag_priors.rows()) +
                           " bag priors for " + std::to_string(classes()) + " classes");
  }
  if (bag_priors.cols() != dim || instance_priors.cols() != dim) {
    throw ConsistencyError("dataset: prior width does not match feature width " +
                           std::to_string(dim));
  }
  if (instance_priors.rows() == 0) throw ConsistencyError("dataset: no instance priors");
  for (const Bag& b : bags) {
    if (b.instances() == 0) throw ConsistencyError("dataset: bag '" + b.id + "' is empty");
    if (b.dim() != dim) {
      throw ConsistencyError("dataset: bag '" + b.id + "' has width " + std::to_string(b.dim()) +
                             ", expected " + std::to_string(dim));
    }
    if (b.label >= classes()) {
      throw ConsistencyError("dataset: bag '" + b.id + "' has label " + std::to_string(b.label) +
                             " but there are " + std::to_string(classes()) + " classes");
    }
    if (!all_finite(b.features.span())) {
      throw ConsistencyError("dataset: bag '" + b.id + "' has non-finite features");
    }
  }
}

fs::path write_dataset(const fs::path& dir, const Dataset& ds) {
  ds.validate();
  fs::create_directories(dir);
  std::vector<NamedMatrix> feats;
  json bags = json::array();
  for (const Bag& b : ds.bags) {
    feats.push_back({b.id, b.features});
    bags.push_back({{"id", b.id}, {"entry", b.id}, {"label", b.label}});
  }
  write_container(dir / "features.fea", feats);
  const std::vector<NamedMatrix> priors = {{"instance_priors", ds.instance_priors},
                                           {"bag_priors", ds.bag_priors}};
  write_container(dir / "priors.fea", priors);
  const json manifest = {
      {"format", "libra-manifest"},
      {"version", 1},
      {"class_names", ds.class_names},
      {"dim", ds.dim},
      {"container", "features.fea"},
      {"priors", {{"container", "priors.fea"}, {"instance", "instance_priors"}, {"bag", "bag_priors"}}},
      {"bags", bags},
  };
  const fs::path path = dir / "manifest.json";
  bytes::write_file(path, manifest.dump(2) + "\n");
  return path;
}

Dataset read_dataset(const fs::path& manifest_path, const std::optional<fs::path>& priors_override) {
  if (!fs::exists(manifest_path)) throw IoError("manifest not found: " + manifest_path.string());
  json m;
  try {
    m = json::parse(bytes::read_file(manifest_path));
  } catch (const json::parse_error& e) {
    throw FormatError(manifest_path.string() + ": " + e.what());
  }
  const fs::path base = manifest_path.parent_path();
  Dataset ds;
  try {
    if (m.value("version", 0) != 1) throw FormatError("unsupported manifest version");
    ds.class_names = m.at("class_names").get<std::vector<std::string>>();
    ds.dim = m.at("dim").get<std::size_t>();

    std::vector<NamedMatrix> feats;
    if (m.contains("container")) feats = read_container(base / m.at("container").get<std::string>());

    const json& pj = m.at("priors");
    const fs::path priors_path =
        priors_override ? *priors_override : base / pj.at("container").get<std::string>();
    const std::vector<NamedMatrix> priors = read_container(priors_path);
    ds.instance_priors =
        find_entry(priors, pj.value("instance", "instance_priors"), priors_path.string()).matrix;
    ds.bag_priors = find_entry(priors, pj.value("bag", "bag_priors"), priors_path.string()).matrix;

    for (const json& bj : m.at("bags")) {
      Bag b;
      b.id = bj.at("id").get<std::string>();
      const long long label = bj.at("label").get<long long>();
      if (label < 0) throw ConsistencyError("bag '" + b.id + "' has a negative label");
      b.label = static_cast<std::size_t>(label);
      if (bj.contains("csv")) {
        b.features = read_csv_matrix(base / bj.at("csv").get<std::string>());
      } else {
        const std::string entry = bj.value("entry", b.id);
        const auto it = std::find_if(feats.begin(), feats.end(),
                                     [&](const NamedMatrix& e) { return e.name == entry; });
        if (it == feats.end()) {
          throw ConsistencyError("bag '" + b.id + "' references missing container entry '" +
                                 entry + "'");
        }
        b.features = it->matrix;
      }
      ds.bags.push_back(std::move(b));
    }
  } catch (const json::exception& e) {
    throw FormatError(manifest_path.string() + ": " + e.what());
  }
  ds.validate();
  return ds;
}

void SynthSpec::validate() const {
  if (classes < 2) throw InvalidArgument("synth: need at least 2 classes");
  if (bags_per_class == 0) throw InvalidArgument("synth: bags_per_class must be >= 1");
  if (n_min == 0 || n_max < n_min) throw InvalidArgument("synth: bad instance count range");
  if (dim == 0 || prototypes_per_class == 0) throw InvalidArgument("synth: zero dim/prototypes");
  if (!(noise >= 0.0) || !(prior_bias >= 0.0)) throw InvalidArgument("synth: negative noise");
  if (!(witness_rate >= 0.0 && witness_rate <= 1.0)) {
    throw InvalidArgument("synth: witness_rate must lie in [0, 1]");
  }
}

Dataset synth_generate(const SynthSpec& spec, std::uint64_t seed) {
  spec.validate();
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  const std::size_t m = spec.prototypes_per_class;
  const Matrix protos = random_unit_rows(spec.classes * m, spec.dim, rng);

  Dataset ds;
  ds.dim = spec.dim;
  for (std::size_t c = 0; c < spec.classes; ++c) ds.class_names.push_back("class_" + std::to_string(c));

  std::uniform_int_distribution<std::size_t> size_dist(spec.n_min, spec.n_max);
  std::uniform_int_distribution<std::size_t> proto_dist(0, m - 1);
  for (std::size_t c = 0; c < spec.classes; ++c) {
    for (std::size_t i = 0; i < spec.bags_per_class; ++i) {
      const std::size_t n = size_dist(rng);
      std::size_t witnesses = static_cast<std::size_t>(std::lround(spec.witness_rate * n));
      if (spec.witness_rate > 0.0) witnesses = std::max<std::size_t>(witnesses, 1);
      witnesses = std::min(witnesses, n);
      Matrix x(n, spec.dim);
      for (std::size_t j = 0; j < witnesses; ++j) {
        const auto p = protos.row(c * m + proto_dist(rng));
        auto row = x.row(j);
        for (std::size_t t = 0; t < spec.dim; ++t) {
          row[t] = p[t] + (spec.noise > 0.0 ? spec.noise * gauss(rng) : 0.0);
        }
      }
      if (witnesses < n) {
        const Matrix bg = random_unit_rows(n - witnesses, spec.dim, rng);
        for (std::size_t j = witnesses; j < n; ++j) {
          std::copy(bg.row(j - witnesses).begin(), bg.row(j - witnesses).end(), x.row(j).begin());
        }
      }
      std::vector<std::size_t> perm(n);
      std::iota(perm.begin(), perm.end(), 0);
      std::shuffle(perm.begin(), perm.end(), rng);
      Matrix shuffled(n, spec.dim);
      for (std::size_t j = 0; j < n; ++j) {
        std::copy(x.row(perm[j]).begin(), x.row(perm[j]).end(), shuffled.row(j).begin());
      }
      char id[32];
      std::snprintf(id, sizeof id, "c%zu_b%03zu", c, i);
      ds.bags.push_back({id, c, std::move(shuffled)});
    }
  }

  ds.instance_priors = protos;
  if (spec.prior_bias > 0.0) {
    for (std::size_t r = 0; r < ds.instance_priors.rows(); ++r) {
      auto row = ds.instance_priors.row(r);
      for (auto& v : row) v += spec.prior_bias * gauss(rng);
      const double nrm = l2_norm(row);
      for (auto& v : row) v /= nrm;
    }
  }
  ds.bag_priors = Matrix(spec.classes, spec.dim);
  for (std::size_t c = 0; c < spec.classes; ++c) {
    auto row = ds.bag_priors.row(c);
    for (std::size_t k = 0; k < m; ++k) axpy(1.0, protos.row(c * m + k), row);
    const double nrm = l2_norm(row);
    if (nrm >= kNormFloor) {
      for (auto& v : row) v /= nrm;
    }
  }
  ds.validate();
  return ds;
}

SplitPlan kshot_split(const Dataset& ds, std::size_t k, std::uint64_t seed) {
  if (k == 0) throw InvalidArgument("kshot_split: k must be >= 1");
  const std::size_t c = ds.classes();
  std::vector<std::vector<std::size_t>> by_class(c);
  for (std::size_t i = 0; i < ds.bags.size(); ++i) by_class[ds.bags[i].label].push_back(i);
  for (std::size_t cls = 0; cls < c; ++cls) {
    if (by_class[cls].size() < k + 2) {
      throw InvalidArgument("kshot_split: class '" + ds.class_names[cls] + "' has " +
                            std::to_string(by_class[cls].size()) + " bags, needs at least " +
                            std::to_string(k + 2) + " for " + std::to_string(k) + "-shot");
    }
  }

  SplitPlan plan;
  plan.seed = seed;
  plan.k_shot = k;
  plan.fold_of.assign(ds.bags.size(), 0);
  std::mt19937_64 rng(seed);
  for (std::size_t cls = 0; cls < c; ++cls) {
    std::vector<std::size_t> idx = by_class[cls];
    std::shuffle(idx.begin(), idx.end(), rng);
    for (std::size_t i = 0; i < idx.size(); ++i) plan.fold_of[idx[i]] = i % kFolds;
  }

  plan.folds.resize(kFolds);
  for (std::size_t f = 0; f < kFolds; ++f) {
    FoldSplit& fold = plan.folds[f];
    for (std::size_t cls = 0; cls < c; ++cls) {
      std::vector<std::size_t> rest;
      for (std::size_t i : by_class[cls]) {
        if (plan.fold_of[i] == f) {
          fold.test.push_back(i);
        } else {
          rest.push_back(i);
        }
      }
      std::shuffle(rest.begin(), rest.end(), rng);
      const std::size_t take = std::min(k, rest.size());
      if (take < k) {
        plan.warnings.push_back("fold " + std::to_string(f) + ": class '" + ds.class_names[cls] +
                                "' has only " + std::to_string(take) + " training bags");
      }
      fold.train.insert(fold.train.end(), rest.begin(), rest.begin() + take);
      fold.val.insert(fold.val.end(), rest.begin() + take, rest.end());
    }
    std::sort(fold.test.begin(), fold.test.end());
    std::sort(fold.val.begin(), fold.val.end());
  }
  return plan;
}

std::vector<Bag> select(const Dataset& ds, std::span<const std::size_t> idx) {
  std::vector<Bag> out;
  out.reserve(idx.size());
  for (std::size_t i : idx) {
    if (i >= ds.bags.size()) throw InvalidArgument("select: bag index out of range");
    out.push_back(ds.bags[i]);
  }
  return out;
}

}  // namespace libra
