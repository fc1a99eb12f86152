#include "sp/proposal.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "sp/mask_ops.hpp"
#include "sp/rng.hpp"

namespace sp {

namespace {

void check_config(const ProposalConfig& cfg) {
  if (cfg.grid_h < 1 || cfg.grid_w < 1)
    throw std::invalid_argument("proposal config: grid must be positive");
  if (cfg.binarize_threshold <= 0.0 || cfg.binarize_threshold >= 1.0)
    throw std::invalid_argument("proposal config: binarize_threshold must be in (0,1)");
  if (cfg.nms_iou_threshold <= 0.0 || cfg.nms_iou_threshold >= 1.0)
    throw std::invalid_argument("proposal config: nms_iou_threshold must be in (0,1)");
  if (cfg.min_area_fraction < 0.0 || cfg.min_area_fraction >= 1.0)
    throw std::invalid_argument("proposal config: min_area_fraction must be in [0,1)");
}

bool ranks_before(const MaskProposal& a, const MaskProposal& b) {
  if (a.score != b.score) return a.score > b.score;
  const auto area_a = a.box.area(), area_b = b.box.area();
  if (area_a != area_b) return area_a > area_b;
  return a.seed_index < b.seed_index;
}

}  // namespace

std::size_t min_mask_area(std::size_t h, std::size_t w, double fraction) {
  const double raw = fraction * static_cast<double>(h) * static_cast<double>(w);
  return std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(raw)));
}

SeedGrid sample_seeds(const Tensor& feat_dhw, int grid_h, int grid_w) {
  if (feat_dhw.rank() != 3) throw std::invalid_argument("sample_seeds: expected D×H×W");
  const int h = static_cast<int>(feat_dhw.dim(1));
  const int w = static_cast<int>(feat_dhw.dim(2));
  if (grid_h < 1 || grid_w < 1 || grid_h > h || grid_w > w)
    throw std::invalid_argument("sample_seeds: grid larger than feature map");

  const std::size_t depth = feat_dhw.dim(0);
  SeedGrid grid;
  grid.grid_h = grid_h;
  grid.grid_w = grid_w;
  grid.features = Tensor({static_cast<std::size_t>(grid_h) * grid_w, depth});
  grid.boxes.reserve(static_cast<std::size_t>(grid_h) * grid_w);

  const int base_h = h / grid_h;
  const int base_w = w / grid_w;
  for (int i = 0; i < grid_h; ++i) {
    const int y0 = i * base_h;
    const int y1 = (i == grid_h - 1) ? h - 1 : (i + 1) * base_h - 1;
    for (int j = 0; j < grid_w; ++j) {
      const int x0 = j * base_w;
      const int x1 = (j == grid_w - 1) ? w - 1 : (j + 1) * base_w - 1;
      const Box rect{x0, y0, x1, y1};
      const auto pooled = avg_pool_region(feat_dhw, rect);
      const std::size_t s = static_cast<std::size_t>(i) * grid_w + j;
      std::copy(pooled.begin(), pooled.end(), grid.features.row(s).begin());
      grid.boxes.push_back(rect);
    }
  }
  return grid;
}

Tensor dense_saliency(std::span<const double> seed, const Tensor& feat_dhw) {
  return linear_normalize(dot_conv(seed, feat_dhw));
}

Tensor binarize(const Tensor& saliency, double threshold) {
  Tensor mask = saliency;
  for (double& v : mask.values()) v = (v >= threshold) ? 1.0 : 0.0;
  return mask;
}

std::vector<MaskProposal> mask_nms(const std::vector<MaskProposal>& proposals,
                                   double iou_threshold) {
  std::vector<const MaskProposal*> ranked;
  ranked.reserve(proposals.size());
  for (const auto& p : proposals) ranked.push_back(&p);
  std::sort(ranked.begin(), ranked.end(),
            [](const MaskProposal* a, const MaskProposal* b) {
              return ranks_before(*a, *b);
            });

  std::vector<MaskProposal> kept;
  for (const MaskProposal* cand : ranked) {
    bool suppressed = false;
    for (const auto& k : kept)
      if (mask_iou(cand->mask, k.mask) >= iou_threshold) {
        suppressed = true;
        break;
      }
    if (!suppressed) kept.push_back(*cand);
  }
  return kept;
}

std::vector<MaskProposal> propose_masks(const Tensor& feat_dhw,
                                        const ProposalConfig& cfg) {
  check_config(cfg);
  if (feat_dhw.rank() != 3)
    throw std::invalid_argument("propose_masks: expected D×H×W");
  const std::size_t h = feat_dhw.dim(1), w = feat_dhw.dim(2);
  const std::size_t min_area = min_mask_area(h, w, cfg.min_area_fraction);

  const SeedGrid grid = sample_seeds(feat_dhw, cfg.grid_h, cfg.grid_w);
  std::vector<MaskProposal> candidates;
  for (std::size_t s = 0; s < grid.boxes.size(); ++s) {
    const Tensor saliency = dense_saliency(grid.features.row(s), feat_dhw);
    Tensor mask = binarize(saliency, cfg.binarize_threshold);
    const std::size_t area = mask_area(mask);
    if (area < min_area) continue;  // null or too-small masks carry no object

    double inside = 0.0;
    for (std::size_t i = 0; i < mask.size(); ++i)
      if (mask.values()[i] != 0.0) inside += saliency.values()[i];

    MaskProposal p;
    p.box = *mask_to_box(mask);
    p.mask = std::move(mask);
    p.score = inside / static_cast<double>(area);
    p.seed_index = static_cast<int>(s);
    candidates.push_back(std::move(p));
  }
  return mask_nms(candidates, cfg.nms_iou_threshold);
}

std::vector<MaskProposal> random_proposals(int h, int w, int count,
                                           std::uint64_t rng_seed,
                                           double min_area_fraction) {
  if (count < 1) throw std::invalid_argument("random_proposals: count must be >= 1");
  if (h < 1 || w < 1) throw std::invalid_argument("random_proposals: empty canvas");
  const std::size_t min_area = min_mask_area(h, w, min_area_fraction);

  SplitMix64 rng(rng_seed);
  std::vector<MaskProposal> out;
  out.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) {
    Box box;
    while (true) {
      int x0 = static_cast<int>(rng.next_below(static_cast<std::uint64_t>(w)));
      int x1 = static_cast<int>(rng.next_below(static_cast<std::uint64_t>(w)));
      if (x0 > x1) std::swap(x0, x1);
      int y0 = static_cast<int>(rng.next_below(static_cast<std::uint64_t>(h)));
      int y1 = static_cast<int>(rng.next_below(static_cast<std::uint64_t>(h)));
      if (y0 > y1) std::swap(y0, y1);
      box = Box{x0, y0, x1, y1};
      if (static_cast<std::size_t>(box.area()) >= min_area) break;
    }
    MaskProposal p;
    p.mask = Tensor({static_cast<std::size_t>(h), static_cast<std::size_t>(w)});
    for (int y = box.y0; y <= box.y1; ++y)
      for (int x = box.x0; x <= box.x1; ++x) p.mask(y, x) = 1.0;
    p.box = box;
    p.score = 1.0 - rng.next_double();  // (0,1]
    p.seed_index = i;
    out.push_back(std::move(p));
  }
  return out;
}

}  // namespace sp
