#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "sp/tensor.hpp"

namespace sp {

// Multi-record container: magic "SPCKPT01", u32 version, u32 record count,
// then per record a u16 name length, the name bytes, and a full tensor
// container blob. Little-endian, byte-stable for identical inputs.
inline constexpr char kCheckpointMagic[8] = {'S', 'P', 'C', 'K', 'P', 'T', '0', '1'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

using NamedTensors = std::vector<std::pair<std::string, Tensor>>;

void save_records(const std::filesystem::path& path, const NamedTensors& records);
NamedTensors load_records(const std::filesystem::path& path);

}  // namespace sp
