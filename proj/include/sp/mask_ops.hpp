#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "sp/tensor.hpp"

namespace sp {

// Tightest box around the nonzero pixels of an H×W mask; nullopt for an
// all-zero mask.
std::optional<Box> mask_to_box(const Tensor& mask);

// Jaccard overlap of two inclusive pixel rects (cell counts). Invalid boxes
// have zero area.
double box_iou(const Box& a, const Box& b);

// Jaccard overlap of two same-shape binary masks (pixels counted as nonzero).
double mask_iou(const Tensor& a, const Tensor& b);
double mask_iou(std::span<const double> a, std::span<const double> b);

// Number of nonzero pixels.
std::size_t mask_area(const Tensor& mask);

// Run-length encoding of a binary mask: row-major scan, alternating run
// counts that always start with a 0-run (which may be empty). The run counts
// sum to H*W.
std::vector<std::uint32_t> rle_encode(const Tensor& mask);
Tensor rle_decode(const std::vector<std::uint32_t>& runs, std::size_t h, std::size_t w);

// Bilinear resample of an H×W map to out_h×out_w. Half-pixel-center sampling
// with clamped borders; output values are convex combinations of inputs, so a
// [0,1] map stays in [0,1].
Tensor resize_bilinear(const Tensor& src, std::size_t out_h, std::size_t out_w);

}  // namespace sp
