#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "sp/mask_ops.hpp"
#include "sp/tensor.hpp"

namespace sp {

struct Detection {
  Box box;
  double score = 0.0;
};

// Per-image predictions and ground truth for class-agnostic detection.
struct DetectionRecord {
  std::int64_t image_id = 0;
  std::vector<Detection> detections;
  std::vector<Box> gt_boxes;
};

// AP over the 0.50:0.05:0.95 threshold ladder plus the two fixed points.
// All values are null when no ground truth exists anywhere.
struct ApResult {
  std::optional<double> ap;
  std::optional<double> ap50;
  std::optional<double> ap75;
};

// COCO-style class-agnostic AP: predictions sorted by score (ties: earlier
// record, then larger best-IoU), greedily matched one-to-one to ground truth
// at each threshold, 101-point interpolated PR area.
ApResult average_precision(const std::vector<DetectionRecord>& records);

// AP at a single IoU threshold; exposed for tests.
std::optional<double> average_precision_at(
    const std::vector<DetectionRecord>& records, double iou_threshold);

// Per-kernel average of final-stage mask activations over an image set, each
// mask bilinearly resized to out_size×out_size. A positive
// activation_threshold binarizes masks before resizing; otherwise soft
// activations are averaged. Result is N×out_size×out_size with values in
// [0,1].
Tensor kernel_heatmap(const std::vector<Tensor>& per_image_masks,
                      double activation_threshold = 0.0,
                      std::size_t out_size = 200);

}  // namespace sp
