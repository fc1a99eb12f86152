#pragma once

#include <filesystem>

#include "sp/tensor.hpp"

namespace sp {

// 8-bit binary netpbm I/O, the only image formats this project touches.
// Grayscale values map linearly between [0,1] doubles and [0,255] bytes.

// Writes an H×W map as PGM (P5). Values are clamped to [0,1] first.
void write_pgm(const std::filesystem::path& path, const Tensor& gray);

// Writes a 3×H×W tensor as PPM (P6), same value convention.
void write_ppm(const std::filesystem::path& path, const Tensor& rgb);

// Reads P5 into H×W or P6 into 3×H×W, values scaled to [0,1].
Tensor read_pgm(const std::filesystem::path& path);
Tensor read_ppm(const std::filesystem::path& path);

}  // namespace sp
