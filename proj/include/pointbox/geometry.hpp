// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstddef>
#include <random>
#include <span>
#include <vector>

namespace pointbox {

using Rng = std::mt19937_64;

/// Axis-aligned box in corner form with continuous pixel coordinates.
/// Area is (x2 - x1) * (y2 - y1); there is no +1 pixel convention.
struct Box {
  double x1 = 0.0;
  double y1 = 0.0;
  double x2 = 0.0;
  double y2 = 0.0;
  int class_id = -1;  // -1 means class-agnostic

  double width() const { return x2 - x1; }
  double height() const { return y2 - y1; }
  double area() const { return width() * height(); }
  double center_x() const { return 0.5 * (x1 + x2); }
  double center_y() const { return 0.5 * (y1 + y2); }
  bool valid() const;
  bool degenerate() const { return !(width() > 0.0 && height() > 0.0); }
  bool contains(double x, double y) const { return x >= x1 && x <= x2 && y >= y1 && y <= y2; }
  Box clipped(double image_width, double image_height) const;

  friend bool operator==(const Box&, const Box&) = default;
};

struct PointAnnotation {
  double x = 0.0;
  double y = 0.0;
  int class_id = 0;

  friend bool operator==(const PointAnnotation&, const PointAnnotation&) = default;
};

/// Anchor layout: n = |scales| * |ratios| anchors per feature cell.
/// ratio is width / height.
struct AnchorSpec {
  std::vector<double> scales;
  std::vector<double> ratios;
  std::vector<double> base_size_per_level;

  int anchors_per_cell() const { return static_cast<int>(scales.size() * ratios.size()); }
  void validate() const;

  /// RetinaNet octave scales and ratios, base sizes {32..512} divided by 4 for
  /// 256 px images (which makes the base size equal to the level stride).
  static AnchorSpec retina_default();
};

double iou(const Box& a, const Box& b);

/// Greedy NMS. Returns kept indices ordered by descending score; equal scores
/// are visited in ascending index order.
std::vector<std::size_t> nms(std::span<const Box> boxes, std::span<const double> scores,
                             double iou_threshold);

/// Anchors for one level laid out row-major as [H][W][n].
std::vector<Box> anchor_grid(int level_height, int level_width, double stride, double base_size,
                             const AnchorSpec& spec);

/// Uniform point strictly inside the box; degenerate boxes return (x1, y1).
PointAnnotation sample_point_in_box(const Box& box, Rng& rng);

// Box delta codec: (dx, dy, dw, dh) relative to a reference box, normalized by
// per-coordinate standard deviations, log-space sizes.
using Deltas = std::array<double, 4>;

Deltas encode_deltas(const Box& reference, const Box& target, const Deltas& stds);
Box decode_deltas(const Box& reference, const Deltas& deltas, const Deltas& stds);

}  // namespace pointbox
