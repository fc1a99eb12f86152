#include "sp/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace sp {

namespace {

struct FlatPrediction {
  std::size_t record_index;
  double score;
  double best_static_iou;  // max IoU against any GT of its image (sort key)
  const Box* box;
};

}  // namespace

std::optional<double> average_precision_at(
    const std::vector<DetectionRecord>& records, double iou_threshold) {
  std::size_t total_gt = 0;
  for (const auto& r : records) total_gt += r.gt_boxes.size();
  if (total_gt == 0) return std::nullopt;

  std::vector<FlatPrediction> preds;
  for (std::size_t ri = 0; ri < records.size(); ++ri) {
    for (const auto& det : records[ri].detections) {
      double best = 0.0;
      for (const auto& gt : records[ri].gt_boxes)
        best = std::max(best, box_iou(det.box, gt));
      preds.push_back({ri, det.score, best, &det.box});
    }
  }
  std::sort(preds.begin(), preds.end(),
            [](const FlatPrediction& a, const FlatPrediction& b) {
              if (a.score != b.score) return a.score > b.score;
              if (a.record_index != b.record_index)
                return a.record_index < b.record_index;
              return a.best_static_iou > b.best_static_iou;
            });

  std::vector<std::vector<char>> gt_used(records.size());
  for (std::size_t ri = 0; ri < records.size(); ++ri)
    gt_used[ri].assign(records[ri].gt_boxes.size(), 0);

  std::vector<char> is_tp(preds.size(), 0);
  for (std::size_t k = 0; k < preds.size(); ++k) {
    const auto& p = preds[k];
    const auto& gts = records[p.record_index].gt_boxes;
    double best_iou = 0.0;
    std::size_t best_gt = gts.size();
    for (std::size_t g = 0; g < gts.size(); ++g) {
      if (gt_used[p.record_index][g]) continue;
      const double iou = box_iou(*p.box, gts[g]);
      if (iou > best_iou) {
        best_iou = iou;
        best_gt = g;
      }
    }
    if (best_gt < gts.size() && best_iou >= iou_threshold) {
      is_tp[k] = 1;
      gt_used[p.record_index][best_gt] = 1;
    }
  }

  // Precision at each recall point along the ranked list.
  std::vector<double> precision(preds.size()), recall(preds.size());
  std::size_t tp = 0;
  for (std::size_t k = 0; k < preds.size(); ++k) {
    tp += is_tp[k];
    precision[k] = static_cast<double>(tp) / static_cast<double>(k + 1);
    recall[k] = static_cast<double>(tp) / static_cast<double>(total_gt);
  }

  // 101-point interpolation with the monotone precision envelope.
  for (std::size_t k = precision.size(); k-- > 1;)
    precision[k - 1] = std::max(precision[k - 1], precision[k]);

  double ap_sum = 0.0;
  std::size_t cursor = 0;
  for (int r = 0; r <= 100; ++r) {
    const double want = static_cast<double>(r) / 100.0;
    while (cursor < recall.size() && recall[cursor] < want) ++cursor;
    if (cursor < recall.size()) ap_sum += precision[cursor];
  }
  return ap_sum / 101.0;
}

ApResult average_precision(const std::vector<DetectionRecord>& records) {
  ApResult out;
  out.ap50 = average_precision_at(records, 0.50);
  if (!out.ap50.has_value()) return out;  // no GT anywhere
  out.ap75 = average_precision_at(records, 0.75);
  double sum = 0.0;
  for (int t = 0; t < 10; ++t)
    sum += *average_precision_at(records, 0.50 + 0.05 * t);
  out.ap = sum / 10.0;
  return out;
}

Tensor kernel_heatmap(const std::vector<Tensor>& per_image_masks,
                      double activation_threshold, std::size_t out_size) {
  if (per_image_masks.empty())
    throw std::invalid_argument("kernel_heatmap: no images");
  const std::size_t n = per_image_masks.front().dim(0);
  Tensor heat({n, out_size, out_size});

  for (const auto& masks : per_image_masks) {
    if (masks.rank() != 3 || masks.dim(0) != n)
      throw std::invalid_argument("kernel_heatmap: inconsistent mask stacks");
    for (std::size_t kn = 0; kn < n; ++kn) {
      Tensor mask({masks.dim(1), masks.dim(2)});
      const auto src = masks.plane(kn);
      for (std::size_t i = 0; i < src.size(); ++i)
        mask.values()[i] = activation_threshold > 0.0
                               ? (src[i] >= activation_threshold ? 1.0 : 0.0)
                               : src[i];
      const Tensor resized = resize_bilinear(mask, out_size, out_size);
      auto dst = heat.plane(kn);
      for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += resized.values()[i];
    }
  }
  const double inv = 1.0 / static_cast<double>(per_image_masks.size());
  for (double& v : heat.values()) v *= inv;
  return heat;
}

}  // namespace sp
