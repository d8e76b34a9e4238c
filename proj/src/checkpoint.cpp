#include "libra/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <map>

#include "byte_io.hpp"
#include "libra/error.hpp"

namespace libra {

namespace {

struct Header {
  ModelKind kind = ModelKind::kLibra;
  std::uint32_t heads = 1;
  bool freeze_textual = false;
};

Header header_of(const ParamSet& p) {
  Header h;
  h.kind = kind_of(p);
  if (const auto* lp = std::get_if<LibraParams>(&p)) {
    h.heads = static_cast<std::uint32_t>(lp->attn.heads);
    h.freeze_textual = lp->bank.freeze_textual;
  }
  return h;
}

// Shapes only; values are filled in afterwards through visit_tensors.
ParamSet skeleton(const Header& h, const std::map<std::string, std::pair<std::size_t, std::size_t>>&
                                       shapes) {
  auto shape = [&](const std::string& name) {
    const auto it = shapes.find(name);
    if (it == shapes.end()) throw FormatError("checkpoint: missing tensor '" + name + "'");
    return it->second;
  };
  auto matrix = [&](const std::string& name) {
    const auto [r, c] = shape(name);
    return Matrix(r, c);
  };
  auto vector = [&](const std::string& name) {
    const auto [r, c] = shape(name);
    if (r != 1) throw FormatError("checkpoint: tensor '" + name + "' is not a vector");
    return Vector(c);
  };
  auto head = [&] { return LinearHead{matrix("head.weight"), vector("head.bias")}; };

  switch (h.kind) {
    case ModelKind::kLibra: {
      LibraParams p;
      p.bank.visual = matrix("prototypes.visual");
      p.bank.textual = matrix("prototypes.textual");
      p.bank.freeze_textual = h.freeze_textual;
      p.attn.query = matrix("attn.query");
      p.attn.key = matrix("attn.key");
      p.attn.value = matrix("attn.value");
      p.attn.output = matrix("attn.output");
      p.attn.head = head();
      p.attn.heads = h.heads;
      return p;
    }
    case ModelKind::kMaxPool:
      return MaxPoolParams{head()};
    case ModelKind::kAbmil:
      return AbmilParams{matrix("abmil.v"), vector("abmil.w"), head()};
  }
  throw FormatError("checkpoint: unknown model kind");
}

}  // namespace

std::string encode_checkpoint(const ParamSet& params) {
  const Header h = header_of(params);
  std::string out(kCheckpointMagic, 4);
  bytes::put<std::uint32_t>(out, kCheckpointVersion);
  bytes::put<std::uint32_t>(out, static_cast<std::uint32_t>(h.kind));
  bytes::put<std::uint32_t>(out, h.heads);
  bytes::put<std::uint32_t>(out, h.freeze_textual ? 1 : 0);
  std::uint32_t count = 0;
  visit_tensors(params, [&](std::string_view, auto, std::size_t, std::size_t, bool) { ++count; });
  bytes::put<std::uint32_t>(out, count);
  visit_tensors(params, [&](std::string_view name, std::span<const double> v, std::size_t rows,
                            std::size_t cols, bool) {
    bytes::put<std::uint16_t>(out, static_cast<std::uint16_t>(name.size()));
    out += name;
    bytes::put<std::uint32_t>(out, static_cast<std::uint32_t>(rows));
    bytes::put<std::uint32_t>(out, static_cast<std::uint32_t>(cols));
    for (double x : v) bytes::put(out, std::bit_cast<std::uint64_t>(x));
  });
  return out;
}

ParamSet decode_checkpoint(std::string_view data) {
  bytes::Reader r(data);
  if (std::memcmp(r.take(4, "magic").data(), kCheckpointMagic, 4) != 0) {
    throw FormatError("checkpoint: bad magic");
  }
  const auto version = r.get<std::uint32_t>("version");
  if (version != kCheckpointVersion) {
    throw FormatError("checkpoint: unsupported version " + std::to_string(version));
  }
  Header h;
  const auto kind = r.get<std::uint32_t>("model kind");
  if (kind > static_cast<std::uint32_t>(ModelKind::kAbmil)) {
    throw FormatError("checkpoint: unknown model kind " + std::to_string(kind));
  }
  h.kind = static_cast<ModelKind>(kind);
  h.heads = r.get<std::uint32_t>("heads");
  h.freeze_textual = r.get<std::uint32_t>("freeze flag") != 0;
  const auto count = r.get<std::uint32_t>("tensor count");

  std::map<std::string, std::pair<std::size_t, std::size_t>> shapes;
  std::map<std::string, std::vector<double>> values;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto len = r.get<std::uint16_t>("name length");
    std::string name(r.take(len, "tensor name"));
    const auto rows = r.get<std::uint32_t>("rows");
    const auto cols = r.get<std::uint32_t>("cols");
    const std::uint64_t n = static_cast<std::uint64_t>(rows) * cols;
    if (n * 8 > r.remaining()) throw FormatError("checkpoint: truncated payload of '" + name + "'");
    std::vector<double> v(n);
    for (auto& x : v) x = std::bit_cast<double>(r.get<std::uint64_t>("payload"));
    shapes[name] = {rows, cols};
    values[name] = std::move(v);
  }
  if (r.remaining() != 0) throw FormatError("checkpoint: trailing bytes");

  ParamSet p = skeleton(h, shapes);
  std::size_t seen = 0;
  visit_tensors(p, [&](std::string_view name, std::span<double> dst, std::size_t, std::size_t,
                       bool) {
    const std::vector<double>& src = values.at(std::string(name));
    std::copy(src.begin(), src.end(), dst.begin());
    ++seen;
  });
  if (seen != count) throw FormatError("checkpoint: unexpected extra tensors");
  if (const auto* lp = std::get_if<LibraParams>(&p)) {
    try {
      lp->bank.validate();
      lp->attn.validate();
    } catch (const InvalidArgument& e) {
      throw FormatError(std::string("checkpoint: ") + e.what());
    }
  }
  return p;
}

void save_checkpoint(const std::filesystem::path& path, const ParamSet& params) {
  bytes::write_file(path, encode_checkpoint(params));
}

ParamSet load_checkpoint(const std::filesystem::path& path) {
  try {
    return decode_checkpoint(bytes::read_file(path));
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

}  // namespace libra
