// SPDX-License-Identifier: Apache-2.0
#include "pointbox/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace pointbox {

bool Box::valid() const {
  return std::isfinite(x1) && std::isfinite(y1) && std::isfinite(x2) && std::isfinite(y2) &&
         x1 <= x2 && y1 <= y2;
}

Box Box::clipped(double image_width, double image_height) const {
  Box out = *this;
  out.x1 = std::clamp(x1, 0.0, image_width);
  out.x2 = std::clamp(x2, 0.0, image_width);
  out.y1 = std::clamp(y1, 0.0, image_height);
  out.y2 = std::clamp(y2, 0.0, image_height);
  return out;
}

void AnchorSpec::validate() const {
  if (scales.empty() || ratios.empty() || base_size_per_level.empty()) {
    throw std::invalid_argument("anchor spec needs at least one scale, ratio and level");
  }
  auto positive = [](double v) { return v > 0.0 && std::isfinite(v); };
  if (!std::all_of(scales.begin(), scales.end(), positive) ||
      !std::all_of(ratios.begin(), ratios.end(), positive) ||
      !std::all_of(base_size_per_level.begin(), base_size_per_level.end(), positive)) {
    throw std::invalid_argument("anchor scales, ratios and base sizes must be positive");
  }
}

AnchorSpec AnchorSpec::retina_default() {
  AnchorSpec spec;
  spec.scales = {1.0, std::pow(2.0, 1.0 / 3.0), std::pow(2.0, 2.0 / 3.0)};
  spec.ratios = {0.5, 1.0, 2.0};
  spec.base_size_per_level = {32.0 / 4, 64.0 / 4, 128.0 / 4, 256.0 / 4, 512.0 / 4};
  return spec;
}

double iou(const Box& a, const Box& b) {
  if (a.degenerate() || b.degenerate()) return 0.0;
  const double iw = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
  const double ih = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
  if (iw <= 0.0 || ih <= 0.0) return 0.0;
  const double inter = iw * ih;
  const double uni = a.area() + b.area() - inter;
  return std::clamp(inter / uni, 0.0, 1.0);
}

std::vector<std::size_t> nms(std::span<const Box> boxes, std::span<const double> scores,
                             double iou_threshold) {
  if (boxes.size() != scores.size()) {
    throw std::invalid_argument("nms: boxes and scores differ in length");
  }
  if (!(iou_threshold > 0.0 && iou_threshold <= 1.0)) {
    throw std::invalid_argument("nms: threshold must be in (0, 1]");
  }
  std::vector<std::size_t> order(boxes.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

  std::vector<char> suppressed(boxes.size(), 0);
  std::vector<std::size_t> keep;
  for (std::size_t oi = 0; oi < order.size(); ++oi) {
    const std::size_t i = order[oi];
    if (suppressed[i]) continue;
    keep.push_back(i);
    for (std::size_t oj = oi + 1; oj < order.size(); ++oj) {
      const std::size_t j = order[oj];
      if (!suppressed[j] && iou(boxes[i], boxes[j]) > iou_threshold) suppressed[j] = 1;
    }
  }
  return keep;
}

std::vector<Box> anchor_grid(int level_height, int level_width, double stride, double base_size,
                             const AnchorSpec& spec) {
  if (!(stride > 0.0)) throw std::invalid_argument("anchor_grid: stride must be positive");
  const int n = spec.anchors_per_cell();
  std::vector<std::array<double, 2>> shapes;
  shapes.reserve(n);
  for (double ratio : spec.ratios) {
    for (double scale : spec.scales) {
      const double r = std::sqrt(ratio);
      shapes.push_back({base_size * scale * r, base_size * scale / r});
    }
  }
  std::vector<Box> anchors;
  anchors.reserve(static_cast<std::size_t>(level_height) * level_width * n);
  for (int i = 0; i < level_height; ++i) {
    const double cy = (i + 0.5) * stride;
    for (int j = 0; j < level_width; ++j) {
      const double cx = (j + 0.5) * stride;
      for (const auto& [w, h] : shapes) {
        anchors.push_back({cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h, -1});
      }
    }
  }
  return anchors;
}

PointAnnotation sample_point_in_box(const Box& box, Rng& rng) {
  if (box.degenerate()) return {box.x1, box.y1, box.class_id};
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (;;) {
    const double x = box.x1 + unit(rng) * box.width();
    const double y = box.y1 + unit(rng) * box.height();
    if (x > box.x1 && x < box.x2 && y > box.y1 && y < box.y2) return {x, y, box.class_id};
  }
}

namespace {
constexpr double kMaxLogScale = 4.135166556742356;  // log(1000 / 16)
}

Deltas encode_deltas(const Box& reference, const Box& target, const Deltas& stds) {
  const double rw = std::max(reference.width(), 1e-6);
  const double rh = std::max(reference.height(), 1e-6);
  const double tw = std::max(target.width(), 1e-6);
  const double th = std::max(target.height(), 1e-6);
  return {(target.center_x() - reference.center_x()) / rw / stds[0],
          (target.center_y() - reference.center_y()) / rh / stds[1],
          std::log(tw / rw) / stds[2], std::log(th / rh) / stds[3]};
}

Box decode_deltas(const Box& reference, const Deltas& deltas, const Deltas& stds) {
  const double rw = reference.width();
  const double rh = reference.height();
  const double cx = reference.center_x() + deltas[0] * stds[0] * rw;
  const double cy = reference.center_y() + deltas[1] * stds[1] * rh;
  const double w = rw * std::exp(std::clamp(deltas[2] * stds[2], -kMaxLogScale, kMaxLogScale));
  const double h = rh * std::exp(std::clamp(deltas[3] * stds[3], -kMaxLogScale, kMaxLogScale));
  return {cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h, reference.class_id};
}

}  // namespace pointbox
