#pragma once

#include <cstdint>
#include <vector>

#include "sp/tensor.hpp"

namespace sp {

// Uniform seed grid over a D×H×W feature map. Seeds pool over non-overlapping
// rects; when H or W is not divisible by the grid, the last row/column of
// rects absorbs the remainder. Seed features are stored seed-major, so
// features.row(i * grid_w + j) is the D-vector of seed (i,j).
struct SeedGrid {
  int grid_h = 0;
  int grid_w = 0;
  Tensor features;         // (grid_h*grid_w) × D
  std::vector<Box> boxes;  // pooling rect per seed, raster order
};

// One pseudo-label: a binary mask with its mean in-mask saliency, tightest
// box, and the raster index of the seed that produced it.
struct MaskProposal {
  Tensor mask;         // H×W, values 0/1
  double score = 0.0;  // mean normalized saliency inside the mask, in [0,1]
  Box box;
  int seed_index = -1;
};

struct ProposalConfig {
  int grid_h = 10;
  int grid_w = 10;
  double binarize_threshold = 0.5;
  double nms_iou_threshold = 0.5;
  double min_area_fraction = 0.005;
};

// Pools every grid rect of a D×H×W map. Rejects grids larger than the map.
SeedGrid sample_seeds(const Tensor& feat_dhw, int grid_h, int grid_w);

// Per-location dot product of the seed vector with the feature columns,
// linearly normalized onto [0,1].
Tensor dense_saliency(std::span<const double> seed, const Tensor& feat_dhw);

// Pixelwise threshold: 1 iff value >= threshold. Input expected in [0,1].
Tensor binarize(const Tensor& saliency, double threshold);

// Greedy mask NMS. Candidates ranked by score desc, then area desc, then
// seed_index asc; a candidate survives iff its mask IoU with every kept mask
// is strictly below iou_threshold. Output in rank order.
std::vector<MaskProposal> mask_nms(const std::vector<MaskProposal>& proposals,
                                   double iou_threshold);

// Full pipeline over a D×H×W map: seeds → per-seed dense saliency → binarize
// → drop masks smaller than min_area (null masks included) → score → NMS.
std::vector<MaskProposal> propose_masks(const Tensor& feat_dhw,
                                        const ProposalConfig& cfg);

// Baseline pseudo-label source: axis-aligned random rectangles. Corners are
// drawn uniformly (x0,x1,y0,y1 order, swapped into order) and redrawn until
// the rect area reaches min_area; the score is 1 - next_double(), i.e.
// uniform in (0,1]. Fully determined by the splitmix64 seed.
std::vector<MaskProposal> random_proposals(int h, int w, int count,
                                           std::uint64_t rng_seed,
                                           double min_area_fraction = 0.005);

// min_area used by both generators: ceil(fraction * H * W), at least 1 pixel.
std::size_t min_mask_area(std::size_t h, std::size_t w, double fraction);

}  // namespace sp
