#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "cparr/geometry.hpp"

namespace cparr {

struct MetricsConfig {
  int heatmap_size = 14;
  double recall_iou_threshold = 0.5;
  std::vector<int> recall_ranks{1, 5, 50};
};

struct HeatMask {
  int size = 0;
  std::vector<std::uint8_t> grid;  // row-major size x size, entries in {0,1}

  static HeatMask empty(int l) {
    HeatMask m;
    m.size = l;
    m.grid.assign(static_cast<std::size_t>(l) * l, 0);
    return m;
  }

  std::uint8_t& at(int row, int col) { return grid[static_cast<std::size_t>(row) * size + col]; }
  std::uint8_t at(int row, int col) const { return grid[static_cast<std::size_t>(row) * size + col]; }
};

// Rasterizes a box onto an L x L grid; a cell is set when the scaled box
// overlaps it at all: columns [floor(x_min*L/w), ceil(x_max*L/w)) and rows
// [floor(y_min*L/h), ceil(y_max*L/h)).
inline HeatMask box_to_mask(const Box& box, double image_w, double image_h, int l) {
  HeatMask m = HeatMask::empty(l);
  const int c0 = std::clamp(static_cast<int>(std::floor(box.x_min * l / image_w)), 0, l);
  const int c1 = std::clamp(static_cast<int>(std::ceil(box.x_max * l / image_w)), 0, l);
  const int r0 = std::clamp(static_cast<int>(std::floor(box.y_min * l / image_h)), 0, l);
  const int r1 = std::clamp(static_cast<int>(std::ceil(box.y_max * l / image_h)), 0, l);
  for (int r = r0; r < r1; ++r) {
    for (int c = c0; c < c1; ++c) m.at(r, c) = 1;
  }
  return m;
}

inline void mask_union_inplace(HeatMask& dst, const HeatMask& src) {
  if (dst.size != src.size) throw std::invalid_argument("mask_union: size mismatch");
  for (std::size_t i = 0; i < dst.grid.size(); ++i) dst.grid[i] |= src.grid[i];
}

// Cellwise binary IoU. Two empty masks count as a perfect (vacuous) match.
inline double heatmap_iou(const HeatMask& pred, const HeatMask& gt) {
  if (pred.size != gt.size) throw std::invalid_argument("heatmap_iou: size mismatch");
  std::size_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < pred.grid.size(); ++i) {
    inter += static_cast<std::size_t>(pred.grid[i] & gt.grid[i]);
    uni += static_cast<std::size_t>(pred.grid[i] | gt.grid[i]);
  }
  if (uni == 0) return 1.0;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

// Fraction of queries whose top-k ranked boxes contain one with IoU strictly
// above iou_threshold against any ground-truth box of that query.
inline double recall_at_k(const std::vector<std::vector<Box>>& ranked_predictions,
                          const std::vector<std::vector<Box>>& ground_truths, int k,
                          double iou_threshold) {
  if (ranked_predictions.size() != ground_truths.size()) {
    throw std::invalid_argument("recall_at_k: query count mismatch");
  }
  if (k < 1) throw std::invalid_argument("recall_at_k: k must be >= 1");
  if (ranked_predictions.empty()) return 0.0;
  std::size_t hits = 0;
  for (std::size_t q = 0; q < ranked_predictions.size(); ++q) {
    const auto& preds = ranked_predictions[q];
    const std::size_t depth = std::min<std::size_t>(preds.size(), static_cast<std::size_t>(k));
    bool hit = false;
    for (std::size_t i = 0; i < depth && !hit; ++i) {
      for (const Box& gt : ground_truths[q]) {
        if (box_iou(preds[i], gt) > iou_threshold) {
          hit = true;
          break;
        }
      }
    }
    if (hit) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(ranked_predictions.size());
}

// Mean over queries of heatmap IoU between the top-1 predicted box's mask and
// the union mask of all ground-truth instances.
inline double mean_heatmap_iou(const std::vector<Box>& top1_predictions,
                               const std::vector<std::vector<Box>>& ground_truths,
                               double image_w, double image_h, int l) {
  if (top1_predictions.size() != ground_truths.size()) {
    throw std::invalid_argument("mean_heatmap_iou: query count mismatch");
  }
  if (top1_predictions.empty()) return 0.0;
  double total = 0.0;
  for (std::size_t q = 0; q < top1_predictions.size(); ++q) {
    HeatMask gt_mask = HeatMask::empty(l);
    for (const Box& gt : ground_truths[q]) {
      mask_union_inplace(gt_mask, box_to_mask(gt, image_w, image_h, l));
    }
    total += heatmap_iou(box_to_mask(top1_predictions[q], image_w, image_h, l), gt_mask);
  }
  return total / static_cast<double>(top1_predictions.size());
}

}  // namespace cparr
