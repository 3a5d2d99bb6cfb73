// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <filesystem>
#include <set>

#include "pointbox/synthdata.hpp"

namespace pointbox {
namespace {

SceneConfig config_with_crowding(double p, std::uint64_t seed = 0) {
  SceneConfig c;
  c.crowding_probability = p;
  c.seed = seed;
  return c;
}

// Same-class overlap computed without is_crowded().
bool has_crowded_pair(const std::vector<Box>& boxes) {
  for (std::size_t i = 0; i < boxes.size(); ++i) {
    for (std::size_t j = i + 1; j < boxes.size(); ++j) {
      if (boxes[i].class_id != boxes[j].class_id) continue;
      const double iw = std::min(boxes[i].x2, boxes[j].x2) - std::max(boxes[i].x1, boxes[j].x1);
      const double ih = std::min(boxes[i].y2, boxes[j].y2) - std::max(boxes[i].y1, boxes[j].y1);
      if (iw <= 0 || ih <= 0) continue;
      const double inter = iw * ih;
      if (inter / (boxes[i].area() + boxes[j].area() - inter) > 0.1) return true;
    }
  }
  return false;
}

TEST(Synthdata, NoCrowdingMeansNoOverlappingSameClassPair) {
  const auto scenes = generate_dataset(config_with_crowding(0.0, 4), 200);
  for (const Scene& s : scenes) {
    EXPECT_FALSE(has_crowded_pair(s.annotations.boxes)) << s.annotations.image_id;
    EXPECT_FALSE(s.annotations.crowded());
  }
}

TEST(Synthdata, HighCrowdingYieldsMajorityCrowdedScenes) {
  const auto scenes = generate_dataset(config_with_crowding(0.8, 1), 500);
  int crowded = 0;
  for (const Scene& s : scenes) {
    const bool c = has_crowded_pair(s.annotations.boxes);
    EXPECT_EQ(c, s.annotations.crowded());
    crowded += c;
  }
  EXPECT_GE(crowded, 250);
}

TEST(Synthdata, FixedSeedIsBitIdentical) {
  const auto a = generate_dataset(config_with_crowding(0.5, 9), 5);
  const auto b = generate_dataset(config_with_crowding(0.5, 9), 5);
  for (int i = 0; i < 5; ++i) {
    EXPECT_EQ(a[i].image, b[i].image);
    EXPECT_EQ(a[i].annotations, b[i].annotations);
  }
  const auto c = generate_dataset(config_with_crowding(0.5, 10), 1);
  EXPECT_NE(a[0].image, c[0].image);
}

TEST(Synthdata, BoxesAreTightAroundRenderedMasks) {
  // Re-render each instance with the shape rasterizer and check that every
  // covered pixel lies inside the box and every box edge touches the mask.
  SceneConfig c = config_with_crowding(0.5, 2);
  Rng rng = scene_rng(2, 0);
  for (int t = 0; t < 200; ++t) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    ShapeInstance s;
    s.kind = static_cast<ShapeKind>(t % 3);
    s.fx1 = 10 + 50 * u(rng);
    s.fy1 = 10 + 50 * u(rng);
    s.fx2 = s.fx1 + 16 + 60 * u(rng);
    s.fy2 = s.fy1 + 16 + 60 * u(rng);
    s.vertices = {s.fx1, s.fy2, 0.5 * (s.fx1 + s.fx2), s.fy1, s.fx2, s.fy2};
    const Box b = s.raster_bounds(c.width, c.height);
    bool left = false, right = false, top = false, bottom = false;
    for (int y = 0; y < c.height; ++y) {
      for (int x = 0; x < c.width; ++x) {
        if (!s.covers_pixel(x, y)) continue;
        EXPECT_TRUE(x >= b.x1 && x + 1 <= b.x2 && y >= b.y1 && y + 1 <= b.y2);
        left |= x == b.x1;
        right |= x + 1 == b.x2;
        top |= y == b.y1;
        bottom |= y + 1 == b.y2;
      }
    }
    EXPECT_TRUE(left && right && top && bottom) << t;
  }
}

TEST(Synthdata, SceneAnnotationsAreValid) {
  for (const Scene& s : generate_dataset(config_with_crowding(0.7, 3), 50)) {
    EXPECT_NO_THROW(s.annotations.validate());
    EXPECT_EQ(s.annotations.points.size(), s.annotations.boxes.size());
    for (std::size_t i = 0; i < s.annotations.boxes.size(); ++i) {
      EXPECT_TRUE(s.annotations.boxes[i].contains(s.annotations.points[i].x, s.annotations.points[i].y));
      EXPECT_EQ(s.annotations.boxes[i].class_id, s.annotations.points[i].class_id);
    }
    EXPECT_LE(s.annotations.boxes.size(), 6u);
  }
}

TEST(Synthdata, InvalidConfigRejected) {
  SceneConfig c;
  c.crowding_probability = 1.5;
  Rng rng(0);
  EXPECT_THROW(generate_scene(c, rng, "x"), std::invalid_argument);
}

std::vector<ImageAnnotations> hundred_scenes() {
  std::vector<ImageAnnotations> out;
  for (Scene& s : generate_dataset(config_with_crowding(0.5, 5), 100)) out.push_back(s.annotations);
  return out;
}

TEST(Split, CountsAndPartition) {
  const auto scenes = hundred_scenes();
  const DatasetSplit split = split_dataset(scenes, 0.10, 42);
  EXPECT_EQ(split.well.size(), 10u);
  EXPECT_EQ(split.weak.size(), 90u);
  EXPECT_EQ(split.weak_hidden.size(), 90u);
  std::set<std::string> seen;
  for (const auto& a : split.well) EXPECT_TRUE(seen.insert(a.image_id).second);
  for (const auto& a : split.weak) EXPECT_TRUE(seen.insert(a.image_id).second);
  std::set<std::string> all;
  for (const auto& a : scenes) all.insert(a.image_id);
  EXPECT_EQ(seen, all);
  for (std::size_t i = 0; i < split.weak.size(); ++i) {
    EXPECT_TRUE(split.weak[i].boxes.empty());
    EXPECT_EQ(split.weak[i].split, Split::weakly_labeled);
    EXPECT_EQ(split.weak[i].points.size(), split.weak_hidden[i].boxes.size());
    for (std::size_t j = 0; j < split.weak[i].points.size(); ++j) {
      EXPECT_TRUE(split.weak_hidden[i].boxes[j].contains(split.weak[i].points[j].x, split.weak[i].points[j].y));
    }
  }
}

TEST(Split, SameSeedSameSplit) {
  const auto scenes = hundred_scenes();
  const auto a = split_dataset(scenes, 0.3, 1);
  const auto b = split_dataset(scenes, 0.3, 1);
  EXPECT_EQ(a.well, b.well);
  EXPECT_EQ(a.weak, b.weak);
}

TEST(Split, RejectsBadFractions) {
  const auto scenes = hundred_scenes();
  try {
    split_dataset(scenes, 1.5, 0);
    FAIL() << "expected an error";
  } catch (const std::invalid_argument& e) {
    EXPECT_STREQ(e.what(), "well-fraction must be in (0,1)");
  }
  EXPECT_THROW(split_dataset(scenes, 0.001, 0), std::invalid_argument);
}

TEST(AnnotationIo, RoundTrip) {
  AnnotationSet set;
  set.categories = default_categories(3);
  for (Scene& s : generate_dataset(config_with_crowding(0.5, 6), 4)) set.images.push_back(s.annotations);
  set.images[1].scores.assign(set.images[1].boxes.size(), 0.25);
  const auto dir = std::filesystem::temp_directory_path() / "pointbox_io_test";
  std::filesystem::create_directories(dir);
  write_annotations(dir / "a.json", set);
  EXPECT_EQ(read_annotations(dir / "a.json"), set);
  std::filesystem::remove_all(dir);
}

TEST(AnnotationIo, XywhConvertsToCorners) {
  const std::string text = R"({"images":[{"id":"a","width":100,"height":80,"file":"a.png"}],
    "annotations":[{"image_id":"a","category_id":1,"bbox":[10.5,20.25,30.125,40.0]}],
    "categories":[]})";
  const AnnotationSet set = parse_annotations(text);
  ASSERT_EQ(set.images.size(), 1u);
  ASSERT_EQ(set.images[0].boxes.size(), 1u);
  EXPECT_EQ(set.images[0].boxes[0], (Box{10.5, 20.25, 40.625, 60.25, 1}));
  const AnnotationSet again = parse_annotations(serialize_annotations(set));
  EXPECT_EQ(again, set);
}

TEST(AnnotationIo, MissingBboxNamesRecord) {
  const std::string text = R"({"images":[{"id":"a","width":100,"height":80,"file":"a.png"}],
    "annotations":[{"image_id":"a","category_id":1,"bbox":[1,1,2,2]},{"image_id":"a","category_id":0}],
    "categories":[]})";
  try {
    parse_annotations(text);
    FAIL() << "expected a parse error";
  } catch (const ParseError& e) {
    EXPECT_STREQ(e.what(), "missing field 'bbox' in annotation 1");
  }
}

TEST(AnnotationIo, MalformedJsonIsParseError) {
  EXPECT_THROW(parse_annotations("{not json"), ParseError);
  EXPECT_THROW(parse_annotations(R"({"images": 3, "annotations": []})"), ParseError);
}

TEST(Png, RoundTrip) {
  const Scene s = generate_dataset(config_with_crowding(0.5, 8), 1)[0];
  const auto path = std::filesystem::temp_directory_path() / "pointbox_png_test.png";
  write_png(path, s.image);
  EXPECT_EQ(read_png(path), s.image);
  std::filesystem::remove(path);
}

}  // namespace
}  // namespace pointbox
