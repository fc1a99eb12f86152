#pragma once

#include <filesystem>
#include <iosfwd>

#include "sp/errors.hpp"
#include "sp/tensor.hpp"

namespace sp {

// Binary tensor container, little-endian throughout:
//
//   bytes 0..7   magic "SPTENSR1"
//   u32          version (currently 1)
//   u8           element type code (0 = float32, 1 = float64)
//   u8           rank
//   u64[rank]    dims
//   payload      rank-major (row-major) raw values
//
// write(read(t)) is byte-identical; float32 payloads are widened to double in
// memory and narrowed back on write.
inline constexpr char kTensorMagic[8] = {'S', 'P', 'T', 'E', 'N', 'S', 'R', '1'};
inline constexpr std::uint32_t kTensorVersion = 1;

void write_tensor(const std::filesystem::path& path, const Tensor& t);
Tensor read_tensor(const std::filesystem::path& path);

// Stream variants; the checkpoint format embeds tensor records with these.
void write_tensor(std::ostream& out, const Tensor& t);
Tensor read_tensor(std::istream& in);

}  // namespace sp
