// SPDX-License-Identifier: Apache-2.0
#include "pointbox/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

namespace pointbox {

const char* to_string(ShapeKind kind) {
  switch (kind) {
    case ShapeKind::rectangle: return "rectangle";
    case ShapeKind::ellipse: return "ellipse";
    case ShapeKind::triangle: return "triangle";
  }
  return "unknown";
}

const char* to_string(Split split) {
  return split == Split::well_labeled ? "well_labeled" : "weakly_labeled";
}

Split split_from_string(const std::string& name) {
  if (name == "well_labeled") return Split::well_labeled;
  if (name == "weakly_labeled") return Split::weakly_labeled;
  throw std::invalid_argument("unknown split '" + name + "'");
}

void SceneConfig::validate() const {
  if (height < 64 || width < 64) throw std::invalid_argument("image size must be at least 64x64");
  if (num_classes < 1) throw std::invalid_argument("num_classes must be >= 1");
  if (min_instances < 0 || max_instances < min_instances) {
    throw std::invalid_argument("instance range must satisfy 0 <= min <= max");
  }
  if (!(crowding_probability >= 0.0 && crowding_probability <= 1.0)) {
    throw std::invalid_argument("crowding_probability must be in [0,1]");
  }
  if (shape_kinds.empty()) throw std::invalid_argument("shape_kinds must not be empty");
  if (!(noise_std >= 0.0)) throw std::invalid_argument("noise_std must be >= 0");
  if (!(min_object_size >= 4.0 && max_object_size >= min_object_size) ||
      max_object_size > std::min(height, width)) {
    throw std::invalid_argument("object size range must fit inside the image");
  }
}

bool is_crowded(const std::vector<Box>& boxes) {
  for (std::size_t i = 0; i < boxes.size(); ++i) {
    for (std::size_t j = i + 1; j < boxes.size(); ++j) {
      if (boxes[i].class_id == boxes[j].class_id && iou(boxes[i], boxes[j]) > kCrowdedIou) {
        return true;
      }
    }
  }
  return false;
}

bool ImageAnnotations::crowded() const { return is_crowded(boxes); }

void ImageAnnotations::validate() const {
  if (!boxes.empty() && !points.empty() && boxes.size() != points.size()) {
    throw std::invalid_argument("image " + image_id + ": points and boxes differ in count");
  }
  if (!scores.empty() && scores.size() != boxes.size()) {
    throw std::invalid_argument("image " + image_id + ": scores and boxes differ in count");
  }
  for (std::size_t i = 0; i < boxes.size(); ++i) {
    if (!boxes[i].valid()) throw std::invalid_argument("image " + image_id + ": invalid box");
  }
  for (std::size_t i = 0; i < points.size() && i < boxes.size(); ++i) {
    if (points[i].class_id != boxes[i].class_id) {
      throw std::invalid_argument("image " + image_id + ": point and box classes differ");
    }
  }
}

// ---------------------------------------------------------------------------

namespace {

double edge(double ax, double ay, double bx, double by, double px, double py) {
  return (bx - ax) * (py - ay) - (by - ay) * (px - ax);
}

struct Rgb {
  double r, g, b;
};

Rgb hsv_to_rgb(double h, double s, double v) {
  h = std::fmod(std::fmod(h, 360.0) + 360.0, 360.0);
  const double c = v * s;
  const double x = c * (1.0 - std::fabs(std::fmod(h / 60.0, 2.0) - 1.0));
  const double m = v - c;
  double r = 0, g = 0, b = 0;
  switch (static_cast<int>(h / 60.0)) {
    case 0: r = c; g = x; break;
    case 1: r = x; g = c; break;
    case 2: g = c; b = x; break;
    case 3: g = x; b = c; break;
    case 4: r = x; b = c; break;
    default: r = c; b = x; break;
  }
  return {r + m, g + m, b + m};
}

ShapeInstance make_shape(ShapeKind kind, double x1, double y1, double x2, double y2, Rng& rng) {
  ShapeInstance s;
  s.kind = kind;
  s.fx1 = x1;
  s.fy1 = y1;
  s.fx2 = x2;
  s.fy2 = y2;
  if (kind == ShapeKind::triangle) {
    std::uniform_int_distribution<int> orient(0, 3);
    std::uniform_real_distribution<double> t(0.2, 0.8);
    const double ax = x1 + t(rng) * (x2 - x1);
    const double ay = y1 + t(rng) * (y2 - y1);
    switch (orient(rng)) {
      case 0: s.vertices = {ax, y1, x1, y2, x2, y2}; break;  // apex up
      case 1: s.vertices = {ax, y2, x1, y1, x2, y1}; break;  // apex down
      case 2: s.vertices = {x1, ay, x2, y1, x2, y2}; break;  // apex left
      default: s.vertices = {x2, ay, x1, y1, x1, y2}; break;
    }
  }
  return s;
}

struct Placed {
  ShapeInstance shape;
  Box box;
  Rgb color;
};

}  // namespace

bool ShapeInstance::covers_pixel(int x, int y) const {
  const double px = x + 0.5;
  const double py = y + 0.5;
  switch (kind) {
    case ShapeKind::rectangle:
      return px >= fx1 && px < fx2 && py >= fy1 && py < fy2;
    case ShapeKind::ellipse: {
      const double cx = 0.5 * (fx1 + fx2);
      const double cy = 0.5 * (fy1 + fy2);
      const double rx = 0.5 * (fx2 - fx1);
      const double ry = 0.5 * (fy2 - fy1);
      const double dx = (px - cx) / rx;
      const double dy = (py - cy) / ry;
      return dx * dx + dy * dy <= 1.0;
    }
    case ShapeKind::triangle: {
      const auto& v = vertices;
      const double d0 = edge(v[0], v[1], v[2], v[3], px, py);
      const double d1 = edge(v[2], v[3], v[4], v[5], px, py);
      const double d2 = edge(v[4], v[5], v[0], v[1], px, py);
      const bool has_neg = d0 < 0 || d1 < 0 || d2 < 0;
      const bool has_pos = d0 > 0 || d1 > 0 || d2 > 0;
      return !(has_neg && has_pos);
    }
  }
  return false;
}

Box ShapeInstance::raster_bounds(int image_width, int image_height) const {
  const int xa = std::max(0, static_cast<int>(std::floor(fx1)) - 1);
  const int ya = std::max(0, static_cast<int>(std::floor(fy1)) - 1);
  const int xb = std::min(image_width - 1, static_cast<int>(std::ceil(fx2)) + 1);
  const int yb = std::min(image_height - 1, static_cast<int>(std::ceil(fy2)) + 1);
  int min_x = image_width, min_y = image_height, max_x = -1, max_y = -1;
  for (int y = ya; y <= yb; ++y) {
    for (int x = xa; x <= xb; ++x) {
      if (covers_pixel(x, y)) {
        min_x = std::min(min_x, x);
        max_x = std::max(max_x, x);
        min_y = std::min(min_y, y);
        max_y = std::max(max_y, y);
      }
    }
  }
  if (max_x < 0) return {fx1, fy1, fx1, fy1, -1};
  return {static_cast<double>(min_x), static_cast<double>(min_y), static_cast<double>(max_x + 1),
          static_cast<double>(max_y + 1), -1};
}

Rng scene_rng(std::uint64_t seed, std::uint64_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32),
                    0x5eedu};
  return Rng(seq);
}

Scene generate_scene(const SceneConfig& config, Rng& rng, const std::string& image_id) {
  config.validate();
  const int H = config.height;
  const int W = config.width;
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_int_distribution<int> count_dist(config.min_instances, config.max_instances);
  std::uniform_int_distribution<int> class_dist(0, config.num_classes - 1);
  std::uniform_int_distribution<std::size_t> kind_dist(0, config.shape_kinds.size() - 1);

  const int requested = count_dist(rng);
  std::vector<Placed> placed;
  placed.reserve(requested);

  for (int t = 0; t < requested; ++t) {
    const int cls = class_dist(rng);
    const ShapeKind kind = config.shape_kinds[kind_dist(rng)];
    std::vector<std::size_t> same_class;
    for (std::size_t i = 0; i < placed.size(); ++i) {
      if (placed[i].box.class_id == cls) same_class.push_back(i);
    }
    const bool crowd = !same_class.empty() && unit(rng) < config.crowding_probability;
    const std::size_t partner =
        crowd ? same_class[std::uniform_int_distribution<std::size_t>(0, same_class.size() - 1)(rng)]
              : 0;

    for (int attempt = 0; attempt < 100; ++attempt) {
      const double span = config.max_object_size - config.min_object_size;
      const double w = config.min_object_size + unit(rng) * span;
      const double h = std::clamp(w * std::exp((unit(rng) - 0.5) * 1.0), config.min_object_size,
                                  config.max_object_size);
      double cx = 0, cy = 0;
      if (crowd) {
        const Box& other = placed[partner].box;
        const double angle = unit(rng) * 2.0 * 3.141592653589793;
        const double reach = 0.25 + 0.4 * unit(rng);
        cx = other.center_x() + std::cos(angle) * reach * 0.5 * (other.width() + w);
        cy = other.center_y() + std::sin(angle) * reach * 0.5 * (other.height() + h);
      } else {
        cx = 0.5 * w + unit(rng) * (W - w);
        cy = 0.5 * h + unit(rng) * (H - h);
      }
      const double x1 = cx - 0.5 * w, y1 = cy - 0.5 * h;
      if (x1 < 0.0 || y1 < 0.0 || x1 + w > W || y1 + h > H) continue;
      ShapeInstance shape = make_shape(kind, x1, y1, x1 + w, y1 + h, rng);
      Box box = shape.raster_bounds(W, H);
      if (box.width() < 4.0 || box.height() < 4.0) continue;
      box.class_id = cls;

      bool ok = true;
      for (std::size_t i = 0; i < placed.size() && ok; ++i) {
        const double overlap = iou(box, placed[i].box);
        if (placed[i].box.class_id == cls) {
          if (crowd && i == partner) ok = overlap > kCrowdedIou && overlap < 0.6;
          else ok = overlap <= kCrowdedIou;
        } else {
          ok = overlap <= 0.3;
        }
      }
      if (!ok) continue;

      const double hue = 360.0 * cls / config.num_classes + (unit(rng) - 0.5) * 16.0;
      const Rgb color = hsv_to_rgb(hue, 0.65 + 0.3 * unit(rng), 0.65 + 0.3 * unit(rng));
      placed.push_back({shape, box, color});
      break;
    }
  }

  Scene scene;
  scene.image.height = H;
  scene.image.width = W;
  std::vector<double> canvas(static_cast<std::size_t>(H) * W * 3);
  const double bg = 0.35 + 0.3 * unit(rng);
  const Rgb tint{bg + 0.05 * (unit(rng) - 0.5), bg + 0.05 * (unit(rng) - 0.5),
                 bg + 0.05 * (unit(rng) - 0.5)};
  for (std::size_t p = 0; p < canvas.size(); p += 3) {
    canvas[p] = tint.r;
    canvas[p + 1] = tint.g;
    canvas[p + 2] = tint.b;
  }

  for (const Placed& inst : placed) {
    const int xa = static_cast<int>(inst.box.x1), xb = static_cast<int>(inst.box.x2);
    const int ya = static_cast<int>(inst.box.y1), yb = static_cast<int>(inst.box.y2);
    for (int y = ya; y < yb; ++y) {
      for (int x = xa; x < xb; ++x) {
        if (!inst.shape.covers_pixel(x, y)) continue;
        const bool border = !inst.shape.covers_pixel(x - 1, y) ||
                            !inst.shape.covers_pixel(x + 1, y) ||
                            !inst.shape.covers_pixel(x, y - 1) || !inst.shape.covers_pixel(x, y + 1);
        const double shade = border ? 0.45 : 1.0;
        double* px = &canvas[(static_cast<std::size_t>(y) * W + x) * 3];
        px[0] = inst.color.r * shade;
        px[1] = inst.color.g * shade;
        px[2] = inst.color.b * shade;
      }
    }
  }

  std::normal_distribution<double> noise(0.0, config.noise_std);
  scene.image.pixels.resize(canvas.size());
  for (std::size_t p = 0; p < canvas.size(); ++p) {
    const double v = config.noise_std > 0.0 ? canvas[p] + noise(rng) : canvas[p];
    scene.image.pixels[p] = static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
  }

  ImageAnnotations& ann = scene.annotations;
  ann.image_id = image_id;
  ann.width = W;
  ann.height = H;
  ann.file = image_id + ".png";
  ann.split = Split::well_labeled;
  for (const Placed& inst : placed) {
    ann.boxes.push_back(inst.box);
    ann.points.push_back(sample_point_in_box(inst.box, rng));
  }
  return scene;
}

std::vector<Scene> generate_dataset(const SceneConfig& config, int count) {
  std::vector<Scene> scenes;
  scenes.reserve(count);
  for (int i = 0; i < count; ++i) {
    Rng rng = scene_rng(config.seed, static_cast<std::uint64_t>(i));
    char id[32];
    std::snprintf(id, sizeof(id), "img_%06d", i);
    scenes.push_back(generate_scene(config, rng, id));
  }
  return scenes;
}

DatasetSplit split_dataset(const std::vector<ImageAnnotations>& scenes, double well_fraction,
                           std::uint64_t seed) {
  if (!(well_fraction > 0.0 && well_fraction < 1.0)) {
    throw std::invalid_argument("well-fraction must be in (0,1)");
  }
  const std::size_t total = scenes.size();
  const auto well_count = static_cast<std::size_t>(std::llround(well_fraction * total));
  if (well_count == 0 || well_count >= total) {
    throw std::invalid_argument("well fraction " + std::to_string(well_fraction) + " over " +
                                std::to_string(total) + " images leaves an empty split");
  }
  std::vector<std::size_t> order(total);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<char> is_well(total, 0);
  for (std::size_t i = 0; i < well_count; ++i) is_well[order[i]] = 1;

  DatasetSplit out;
  for (std::size_t i = 0; i < total; ++i) {
    ImageAnnotations ann = scenes[i];
    ann.scores.clear();
    if (is_well[i]) {
      ann.split = Split::well_labeled;
      out.well.push_back(std::move(ann));
      continue;
    }
    ann.split = Split::weakly_labeled;
    Rng point_rng = scene_rng(seed ^ 0x9e3779b97f4a7c15ULL, i);
    ann.points.clear();
    for (const Box& b : ann.boxes) ann.points.push_back(sample_point_in_box(b, point_rng));
    out.weak_hidden.push_back(ann);
    ann.boxes.clear();
    out.weak.push_back(std::move(ann));
  }
  return out;
}

std::vector<Category> default_categories(int num_classes) {
  std::vector<Category> cats;
  for (int c = 0; c < num_classes; ++c) cats.push_back({c, "class_" + std::to_string(c)});
  return cats;
}

}  // namespace pointbox
