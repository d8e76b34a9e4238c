#pragma once

// Parameter checkpoints. Layout (little-endian):
//   "LCK1" | u32 version = 1 | u32 model kind | u32 heads | u32 freeze_textual
//   | u32 tensor_count, then per tensor: u16 name_len | name | u32 rows
//   | u32 cols | rows*cols f64
// Tensors appear in visit_tensors order. Values are stored as f64 so a
// reloaded model reproduces the in-memory forward pass bit for bit.

#include <filesystem>
#include <string>
#include <string_view>

#include "libra/model.hpp"

namespace libra {

inline constexpr char kCheckpointMagic[4] = {'L', 'C', 'K', '1'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

std::string encode_checkpoint(const ParamSet& params);
// Throws FormatError on bad magic, unknown kind, missing or misshapen tensors.
ParamSet decode_checkpoint(std::string_view bytes);

void save_checkpoint(const std::filesystem::path& path, const ParamSet& params);
ParamSet load_checkpoint(const std::filesystem::path& path);

}  // namespace libra
