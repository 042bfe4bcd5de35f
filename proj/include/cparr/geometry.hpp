#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <stdexcept>
#include <vector>

namespace cparr {

// Axis-aligned box in continuous pixel coordinates.
struct Box {
  double x_min = 0.0;
  double y_min = 0.0;
  double x_max = 0.0;
  double y_max = 0.0;

  double width() const { return x_max - x_min; }
  double height() const { return y_max - y_min; }
  double area() const { return width() * height(); }
  double center_x() const { return 0.5 * (x_min + x_max); }
  double center_y() const { return 0.5 * (y_min + y_max); }

  bool valid() const { return x_min < x_max && y_min < y_max; }
};

inline double box_iou(const Box& a, const Box& b) {
  const double ix = std::min(a.x_max, b.x_max) - std::max(a.x_min, b.x_min);
  const double iy = std::min(a.y_max, b.y_max) - std::max(a.y_min, b.y_min);
  if (ix <= 0.0 || iy <= 0.0) return 0.0;
  const double inter = ix * iy;
  return inter / (a.area() + b.area() - inter);
}

// Clamps a box to the image, keeping at least kBoxMinSide of extent per axis
// so downstream region featurization never sees a degenerate box.
inline constexpr double kBoxMinSide = 1.0;

inline Box clip_box(const Box& b, double image_w, double image_h) {
  Box out;
  out.x_min = std::clamp(b.x_min, 0.0, image_w - kBoxMinSide);
  out.y_min = std::clamp(b.y_min, 0.0, image_h - kBoxMinSide);
  out.x_max = std::clamp(b.x_max, out.x_min + kBoxMinSide, image_w);
  out.y_max = std::clamp(b.y_max, out.y_min + kBoxMinSide, image_h);
  return out;
}

// [x_min/w, y_min/h, x_max/w, y_max/h, area_box/area_image]
inline std::array<double, 5> spatial_feature_of(const Box& b, double image_w, double image_h) {
  return {b.x_min / image_w, b.y_min / image_h, b.x_max / image_w, b.y_max / image_h,
          b.area() / (image_w * image_h)};
}

// Center/size offset parametrization between an anchor box and a target box:
// [(x - x_a)/w_a, (y - y_a)/h_a, log(w/w_a), log(h/h_a)].
inline std::array<double, 4> encode_offsets(const Box& anchor, const Box& target) {
  if (anchor.width() <= 0.0 || anchor.height() <= 0.0 || target.width() <= 0.0 ||
      target.height() <= 0.0) {
    throw std::invalid_argument("encode_offsets: non-positive box size");
  }
  return {(target.center_x() - anchor.center_x()) / anchor.width(),
          (target.center_y() - anchor.center_y()) / anchor.height(),
          std::log(target.width() / anchor.width()),
          std::log(target.height() / anchor.height())};
}

// Guard for the exp() in decode; generous enough that encode/decode
// round-trips are untouched for any box pair with side ratios below e^6.
inline constexpr double kOffsetLogClamp = 6.0;

inline Box decode_offsets(const Box& anchor, const std::array<double, 4>& t) {
  const double cx = anchor.center_x() + t[0] * anchor.width();
  const double cy = anchor.center_y() + t[1] * anchor.height();
  const double w = anchor.width() * std::exp(std::clamp(t[2], -kOffsetLogClamp, kOffsetLogClamp));
  const double h = anchor.height() * std::exp(std::clamp(t[3], -kOffsetLogClamp, kOffsetLogClamp));
  return {cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h};
}

inline Box decode_offsets_clipped(const Box& anchor, const std::array<double, 4>& t,
                                  double image_w, double image_h) {
  return clip_box(decode_offsets(anchor, t), image_w, image_h);
}

// Greedy non-maximum suppression. Boxes are visited in order of decreasing
// score (ties broken by lower index); a box is dropped when its IoU with an
// already kept box exceeds iou_threshold. Returns kept indices in rank order.
inline std::vector<std::size_t> greedy_nms(const std::vector<Box>& boxes,
                                           const std::vector<double>& scores,
                                           double iou_threshold) {
  if (boxes.size() != scores.size()) throw std::invalid_argument("greedy_nms: size mismatch");
  std::vector<std::size_t> order(boxes.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return a < b;
  });
  std::vector<std::size_t> kept;
  for (std::size_t cand : order) {
    bool suppressed = false;
    for (std::size_t k : kept) {
      if (box_iou(boxes[cand], boxes[k]) > iou_threshold) {
        suppressed = true;
        break;
      }
    }
    if (!suppressed) kept.push_back(cand);
  }
  return kept;
}

}  // namespace cparr
