// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include "oracles.hpp"
#include "pointbox/geometry.hpp"

namespace pointbox {
namespace {

Box random_int_box(Rng& rng, int extent) {
  std::uniform_int_distribution<int> coord(0, extent);
  int x1 = coord(rng), x2 = coord(rng), y1 = coord(rng), y2 = coord(rng);
  if (x1 > x2) std::swap(x1, x2);
  if (y1 > y2) std::swap(y1, y2);
  return {double(x1), double(y1), double(x2), double(y2), -1};
}

TEST(Iou, Identity) { EXPECT_DOUBLE_EQ(iou({0, 0, 2, 2}, {0, 0, 2, 2}), 1.0); }

TEST(Iou, Disjoint) { EXPECT_DOUBLE_EQ(iou({0, 0, 1, 1}, {5, 5, 6, 6}), 0.0); }

TEST(Iou, OneSeventhMatchesRasterCount) {
  const Box a{0, 0, 2, 2}, b{1, 1, 3, 3};
  EXPECT_NEAR(iou(a, b), 1.0 / 7.0, 1e-15);
  EXPECT_NEAR(oracle::raster_iou(a, b, 0.01), 1.0 / 7.0, 1e-9);
}

TEST(Iou, DegenerateBoxesGiveZero) {
  EXPECT_DOUBLE_EQ(iou({1, 1, 1, 1}, {1, 1, 1, 1}), 0.0);
  EXPECT_DOUBLE_EQ(iou({0, 0, 0, 5}, {0, 0, 2, 2}), 0.0);
}

TEST(Iou, RandomIntegerBoxesMatchCellCount) {
  Rng rng(7);
  for (int t = 0; t < 1000; ++t) {
    const Box a = random_int_box(rng, 40), b = random_int_box(rng, 40);
    EXPECT_DOUBLE_EQ(iou(a, b), oracle::integer_iou(a, b)) << t;
    EXPECT_DOUBLE_EQ(iou(a, b), iou(b, a));
  }
}

TEST(Nms, EmptyAndSingle) {
  EXPECT_TRUE(nms({}, {}, 0.5).empty());
  const std::vector<Box> one{{0, 0, 3, 3}};
  const std::vector<double> s{0.2};
  EXPECT_EQ(nms(one, s, 0.5), std::vector<std::size_t>{0});
}

TEST(Nms, IdenticalBoxesKeepHigherScore) {
  const std::vector<Box> boxes{{0, 0, 4, 4}, {0, 0, 4, 4}};
  const std::vector<double> scores{0.8, 0.9};
  EXPECT_EQ(nms(boxes, scores, 0.7), std::vector<std::size_t>{1});
}

TEST(Nms, DisjointBoxesBothKept) {
  const std::vector<Box> boxes{{0, 0, 1, 1}, {5, 5, 6, 6}};
  const std::vector<double> scores{0.1, 0.9};
  EXPECT_EQ(nms(boxes, scores, 0.5), (std::vector<std::size_t>{1, 0}));
}

TEST(Nms, RejectsBadInput) {
  const std::vector<Box> boxes{{0, 0, 1, 1}};
  const std::vector<double> scores{0.1, 0.2};
  EXPECT_THROW(nms(boxes, scores, 0.5), std::invalid_argument);
  EXPECT_THROW(nms(boxes, std::vector<double>{0.1}, 0.0), std::invalid_argument);
}

TEST(Nms, RandomCasesMatchReference) {
  Rng rng(11);
  std::uniform_int_distribution<int> count(0, 30);
  std::uniform_int_distribution<int> score_bucket(0, 9);  // forces ties
  std::uniform_real_distribution<double> thr(0.1, 0.9);
  for (int t = 0; t < 1000; ++t) {
    const int n = count(rng);
    std::vector<Box> boxes;
    std::vector<double> scores;
    for (int i = 0; i < n; ++i) {
      boxes.push_back(random_int_box(rng, 30));
      scores.push_back(score_bucket(rng) / 10.0);
    }
    const double threshold = thr(rng);
    EXPECT_EQ(nms(boxes, scores, threshold),
              oracle::reference_nms(boxes, scores, threshold, oracle::integer_iou))
        << "case " << t;
  }
}

TEST(Anchors, CellZeroStrideEight) {
  AnchorSpec spec{{1.0}, {1.0}, {8.0}};
  const auto a = anchor_grid(2, 3, 8.0, 8.0, spec);
  ASSERT_EQ(a.size(), 6u);
  EXPECT_EQ(a[0], (Box{0, 0, 8, 8, -1}));
  EXPECT_DOUBLE_EQ(a[0].center_x(), 4.0);
  EXPECT_DOUBLE_EQ(a[5].center_x(), 20.0);
  EXPECT_DOUBLE_EQ(a[5].center_y(), 12.0);
}

TEST(Anchors, RatioOneIsSquareAndCountsMatch) {
  const AnchorSpec spec = AnchorSpec::retina_default();
  EXPECT_EQ(spec.anchors_per_cell(), 9);
  const auto a = anchor_grid(4, 5, 16.0, 16.0, spec);
  EXPECT_EQ(a.size(), 4u * 5u * 9u);
  for (std::size_t i = 0; i < a.size(); ++i) {
    const int ratio_index = static_cast<int>(i % 9) / 3;
    if (ratio_index == 1) {
      EXPECT_NEAR(a[i].width(), a[i].height(), 1e-12);
    }
    EXPECT_NEAR(a[i].width() / a[i].height(), spec.ratios[ratio_index], 1e-12);
  }
}

TEST(SamplePoint, InsideAndDeterministic) {
  Rng a(3), b(3);
  for (int i = 0; i < 100; ++i) {
    const auto p = sample_point_in_box({0, 0, 10, 10, 2}, a);
    const auto q = sample_point_in_box({0, 0, 10, 10, 2}, b);
    EXPECT_EQ(p, q);
    EXPECT_GE(p.x, 0.0);
    EXPECT_LE(p.x, 10.0);
    EXPECT_GE(p.y, 0.0);
    EXPECT_LE(p.y, 10.0);
    EXPECT_EQ(p.class_id, 2);
  }
}

TEST(SamplePoint, DegenerateReturnsCorner) {
  Rng rng(0);
  const auto p = sample_point_in_box({3, 4, 3, 9, 1}, rng);
  EXPECT_DOUBLE_EQ(p.x, 3.0);
  EXPECT_DOUBLE_EQ(p.y, 4.0);
}

TEST(SamplePoint, EmpiricalMeanNearCenter) {
  Rng rng(5);
  double sx = 0, sy = 0;
  const int n = 10000;
  for (int i = 0; i < n; ++i) {
    const auto p = sample_point_in_box({0, 0, 1, 1}, rng);
    sx += p.x;
    sy += p.y;
  }
  EXPECT_NEAR(sx / n, 0.5, 0.05);
  EXPECT_NEAR(sy / n, 0.5, 0.05);
}

TEST(Deltas, RoundTrip) {
  const Deltas stds{0.1, 0.1, 0.2, 0.2};
  const Box ref{10, 20, 50, 40, 1};
  const Box target{12, 18, 60, 45, 1};
  const Box back = decode_deltas(ref, encode_deltas(ref, target, stds), stds);
  EXPECT_NEAR(back.x1, target.x1, 1e-9);
  EXPECT_NEAR(back.y1, target.y1, 1e-9);
  EXPECT_NEAR(back.x2, target.x2, 1e-9);
  EXPECT_NEAR(back.y2, target.y2, 1e-9);
  const Deltas zero = encode_deltas(ref, ref, stds);
  for (double d : zero) EXPECT_NEAR(d, 0.0, 1e-12);
}

}  // namespace
}  // namespace pointbox
