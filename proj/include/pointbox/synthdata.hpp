// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "pointbox/geometry.hpp"

namespace pointbox {

enum class ShapeKind { rectangle, ellipse, triangle };
enum class Split { well_labeled, weakly_labeled };

const char* to_string(ShapeKind kind);
const char* to_string(Split split);
Split split_from_string(const std::string& name);

struct SceneConfig {
  int height = 256;
  int width = 256;
  int min_instances = 1;
  int max_instances = 6;
  int num_classes = 3;
  // Chance that a new instance of an already present class is placed on top
  // of a same-class instance (box IoU > 0.1).
  double crowding_probability = 0.5;
  std::vector<ShapeKind> shape_kinds = {ShapeKind::rectangle, ShapeKind::ellipse,
                                        ShapeKind::triangle};
  double noise_std = 0.03;
  double min_object_size = 16.0;
  double max_object_size = 88.0;
  std::uint64_t seed = 0;

  void validate() const;
};

/// 8-bit RGB image, row-major HWC.
struct Image {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> pixels;

  std::uint8_t at(int y, int x, int c) const {
    return pixels[(static_cast<std::size_t>(y) * width + x) * 3 + c];
  }
  friend bool operator==(const Image&, const Image&) = default;
};

struct ImageAnnotations {
  std::string image_id;
  int width = 0;
  int height = 0;
  std::string file;
  std::vector<Box> boxes;
  // Empty, or one point per box. Weakly-labeled sets carry points and no boxes.
  std::vector<PointAnnotation> points;
  // Optional per-box confidence (predictions only).
  std::vector<double> scores;
  Split split = Split::well_labeled;

  /// Number of instances N.
  std::size_t num_instances() const { return boxes.empty() ? points.size() : boxes.size(); }
  /// At least one same-class box pair with IoU > 0.1.
  bool crowded() const;
  void validate() const;

  friend bool operator==(const ImageAnnotations&, const ImageAnnotations&) = default;
};

inline constexpr double kCrowdedIou = 0.1;

bool is_crowded(const std::vector<Box>& boxes);

struct Scene {
  Image image;
  ImageAnnotations annotations;
};

/// Renders one scene. Instances that cannot be placed after 100 attempts are
/// dropped, so the scene may hold fewer instances than requested.
Scene generate_scene(const SceneConfig& config, Rng& rng, const std::string& image_id);

/// Per-scene RNG stream derived from (seed, index).
Rng scene_rng(std::uint64_t seed, std::uint64_t index);

/// Scenes img_000000 .. img_{count-1}, each from its own RNG stream.
std::vector<Scene> generate_dataset(const SceneConfig& config, int count);

/// Pixel mask of a shape instance, used both for rendering and to verify that
/// boxes are tight.
struct ShapeInstance {
  ShapeKind kind = ShapeKind::rectangle;
  // Shape parameters in pixel coordinates. Rectangle and ellipse use the
  // bounding frame; a triangle uses the three vertices.
  double fx1 = 0, fy1 = 0, fx2 = 0, fy2 = 0;
  std::array<double, 6> vertices{};

  bool covers_pixel(int x, int y) const;
  /// Tight box of the rasterized mask over an image of the given size.
  /// Returns a degenerate box when no pixel is covered.
  Box raster_bounds(int image_width, int image_height) const;
};

struct DatasetSplit {
  std::vector<ImageAnnotations> well;
  // Points only; boxes stripped.
  std::vector<ImageAnnotations> weak;
  // The weak images with their true boxes, for evaluation.
  std::vector<ImageAnnotations> weak_hidden;
};

/// Seed-deterministic partition. Weak images receive one fixed point per
/// instance sampled inside its box.
DatasetSplit split_dataset(const std::vector<ImageAnnotations>& scenes, double well_fraction,
                           std::uint64_t seed);

// ---------------------------------------------------------------------------
// Annotation files (minimal COCO-like JSON) and PNG images.

struct Category {
  int id = 0;
  std::string name;
  friend bool operator==(const Category&, const Category&) = default;
};

struct AnnotationSet {
  std::vector<ImageAnnotations> images;
  std::vector<Category> categories;
  friend bool operator==(const AnnotationSet&, const AnnotationSet&) = default;
};

std::vector<Category> default_categories(int num_classes);

class ParseError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

AnnotationSet read_annotations(const std::filesystem::path& path);
void write_annotations(const std::filesystem::path& path, const AnnotationSet& annotations);
AnnotationSet parse_annotations(const std::string& text);
std::string serialize_annotations(const AnnotationSet& annotations);

void write_png(const std::filesystem::path& path, const Image& image);
Image read_png(const std::filesystem::path& path);

}  // namespace pointbox
