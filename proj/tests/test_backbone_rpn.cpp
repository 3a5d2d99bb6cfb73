// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>

#include "oracles.hpp"
#include "pointbox/grouped_rpn.hpp"

namespace pointbox {
namespace {

Image gray_image(int h, int w, std::uint8_t v = 128) {
  Image img;
  img.height = h;
  img.width = w;
  img.pixels.assign(static_cast<std::size_t>(h) * w * 3, v);
  return img;
}

Image noise_image(int h, int w, std::uint64_t seed) {
  Image img = gray_image(h, w);
  Rng rng(seed);
  std::uniform_int_distribution<int> u(0, 255);
  for (auto& p : img.pixels) p = static_cast<std::uint8_t>(u(rng));
  return img;
}

TEST(Backbone, LevelShapesFor256) {
  Rng rng(0);
  BackboneFpn<float> net(BackboneConfig{}, rng);
  Tape<float> tape(false);
  const FeaturePyramid p = forward_backbone(tape, net, noise_image(256, 256, 1));
  ASSERT_EQ(p.num_levels(), 5);
  const int expected[] = {32, 16, 8, 4, 2};
  for (int l = 0; l < 5; ++l) {
    EXPECT_EQ(tape.shape(p.levels[l]), (std::vector<int>{64, expected[l], expected[l]}));
    EXPECT_EQ(p.strides[l], 8 << l);
  }
}

TEST(Backbone, DoublingInputDoublesLevels) {
  Rng rng(0);
  BackboneFpn<float> net(BackboneConfig{}, rng);
  Tape<float> t1(false), t2(false);
  const auto a = forward_backbone(t1, net, noise_image(128, 256, 1));
  const auto b = forward_backbone(t2, net, noise_image(256, 512, 1));
  for (int l = 0; l < 5; ++l) {
    EXPECT_EQ(t2.shape(b.levels[l])[1], 2 * t1.shape(a.levels[l])[1]);
    EXPECT_EQ(t2.shape(b.levels[l])[2], 2 * t1.shape(a.levels[l])[2]);
  }
}

TEST(Backbone, PadsToMultipleOf128AndRejectsSmallImages) {
  const auto t = image_to_tensor<float>(gray_image(200, 130));
  EXPECT_EQ(t.shape, (std::vector<int>{3, 256, 256}));
  EXPECT_THROW(image_to_tensor<float>(gray_image(100, 256)), std::invalid_argument);
}

TEST(Backbone, ZeroInputGivesFiniteOutput) {
  Rng rng(3);
  BackboneFpn<float> net(BackboneConfig{}, rng);
  Tape<float> tape(false);
  const auto p = forward_backbone(tape, net, gray_image(128, 128, 0));
  for (Var v : p.levels) {
    for (float x : tape.value(v).data) ASSERT_TRUE(std::isfinite(x));
  }
}

TEST(Projection, ZeroLayersIsIdentity) {
  Rng rng(0);
  BackboneFpn<float> net(BackboneConfig{}, rng);
  RoiProjection<float> proj(64, 0, rng);
  Tape<float> tape(false);
  const auto p = forward_backbone(tape, net, noise_image(128, 128, 2));
  const auto q = project_for_roi(tape, proj, p, true);
  ASSERT_EQ(q.levels.size(), static_cast<std::size_t>(kNumRoiLevels));
  for (int l = 0; l < kNumRoiLevels; ++l) {
    EXPECT_EQ(tape.value(q.levels[l]).data, tape.value(p.levels[l]).data);
    EXPECT_EQ(q.strides[l], p.strides[l]);
  }
}

double backbone_grad_norm(bool detach) {
  Rng rng(0);
  BackboneFpn<double> net(BackboneConfig{}, rng);
  RoiProjection<double> proj(64, 1, rng);
  nn::ParameterList<double> backbone_params, proj_params;
  net.collect(backbone_params);
  proj.collect(proj_params);
  for (auto* p : backbone_params) p->zero_grad();
  for (auto* p : proj_params) p->zero_grad();
  Tape<double> tape(true);
  const auto p = forward_backbone(tape, net, noise_image(128, 128, 4));
  const auto q = project_for_roi(tape, proj, p, detach);
  Var loss;
  for (Var v : q.levels) {
    Var s = nn::sum(tape, v);
    loss = loss.valid() ? nn::add(tape, loss, s) : s;
  }
  tape.backward(loss);
  double proj_norm = 0;
  for (auto* prm : proj_params) {
    for (double g : prm->grad.data) proj_norm += g * g;
  }
  EXPECT_GT(proj_norm, 0.0);
  double norm = 0;
  for (auto* prm : backbone_params) {
    for (double g : prm->grad.data) norm += g * g;
  }
  return norm;
}

TEST(Projection, DetachStopsBackboneGradient) {
  EXPECT_EQ(backbone_grad_norm(true), 0.0);
  EXPECT_GT(backbone_grad_norm(false), 0.0);
}

TEST(Rpn, ProjectPoint) {
  const auto [x, y] = project_point({33.2, 17.9, 0}, 8.0);
  EXPECT_NEAR(x, 4.15, 1e-12);
  EXPECT_NEAR(y, 2.2375, 1e-12);
  const auto [zx, zy] = project_point({0, 0, 1}, 32.0);
  EXPECT_EQ(zx, 0.0);
  EXPECT_EQ(zy, 0.0);
}

std::vector<Cell> brute_force_cells(double px, double py, int k, int h, int w) {
  std::vector<std::tuple<double, int, int>> all;
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      all.emplace_back(std::pow(c + 0.5 - px, 2) + std::pow(r + 0.5 - py, 2), r, c);
    }
  }
  std::sort(all.begin(), all.end());
  std::vector<Cell> out;
  for (int i = 0; i < std::min<int>(k, static_cast<int>(all.size())); ++i) {
    out.push_back({std::get<1>(all[i]), std::get<2>(all[i])});
  }
  return out;
}

TEST(Rpn, SelectCellsMatchesBruteForce) {
  Rng rng(8);
  std::uniform_int_distribution<int> dim(1, 12), kd(1, 20);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int t = 0; t < 2000; ++t) {
    const int h = dim(rng), w = dim(rng), k = kd(rng);
    // Quarter-cell grid so that exact distance ties occur often.
    const double px = std::round(u(rng) * w * 4) / 4, py = std::round(u(rng) * h * 4) / 4;
    EXPECT_EQ(select_k_cells({px, py}, k, h, w), brute_force_cells(px, py, k, h, w))
        << "case " << t << " k=" << k << " grid " << h << "x" << w << " at " << px << "," << py;
  }
}

TEST(Rpn, SelectCellsSpecialCases) {
  EXPECT_EQ(select_k_cells({4.15, 2.2375}, 1, 32, 32), (std::vector<Cell>{{2, 4}}));
  // At a cell center: the cell, then the up and left neighbours (row-major
  // among the four equidistant ones).
  EXPECT_EQ(select_k_cells({5.5, 5.5}, 3, 16, 16), (std::vector<Cell>{{5, 5}, {4, 5}, {5, 4}}));
  EXPECT_EQ(select_k_cells({0.5, 0.5}, 10, 2, 2).size(), 4u);
  EXPECT_THROW(select_k_cells({0, 0}, 0, 2, 2), std::invalid_argument);
}

// Random dense head values for a 256 px image.
DenseHeadValues random_head(std::uint64_t seed, int num_classes = 3) {
  DenseHeadValues head;
  head.num_anchors = 9;
  head.num_classes = num_classes;
  head.levels = pyramid_shapes(256, 256);
  Rng rng(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  for (const auto& s : head.levels) {
    const std::size_t cells = static_cast<std::size_t>(s.height) * s.width;
    std::vector<double> logits(cells * 9 * num_classes), deltas(cells * 9 * 4);
    for (auto& v : logits) v = n(rng);
    for (auto& v : deltas) v = 0.5 * n(rng);
    head.class_logits.push_back(std::move(logits));
    head.box_deltas.push_back(std::move(deltas));
  }
  return head;
}

TEST(Rpn, PyramidShapes) {
  const auto s = pyramid_shapes(256, 256);
  ASSERT_EQ(s.size(), 5u);
  EXPECT_EQ(s[0].height, 32);
  EXPECT_EQ(s[4].height, 2);
  EXPECT_EQ(s[4].stride, 128);
}

TEST(Rpn, GroupCardinality) {
  const auto head = random_head(1);
  const auto anchors = make_anchors(head.levels, AnchorSpec::retina_default());
  EXPECT_EQ(anchors.total(), (32 * 32 + 16 * 16 + 8 * 8 + 4 * 4 + 2 * 2) * 9u);
  const std::vector<PointAnnotation> pts{{40.5, 99.0, 0}, {40.5, 99.0, 0}, {250.0, 3.0, 2}};
  const auto groups = build_groups(pts, head, anchors, 3, 256, 256, {0.1, 0.1, 0.2, 0.2});
  ASSERT_EQ(groups.size(), 3u);
  for (const auto& g : groups) {
    EXPECT_EQ(g.group_size_raw, 9 * 3 * 5);
    for (const auto& p : g.proposals) {
      EXPECT_EQ(p.box.class_id, g.point.class_id);
      EXPECT_TRUE(p.box.valid());
      EXPECT_DOUBLE_EQ(p.score, head.score(p.level, p.row, p.col, p.anchor, g.point.class_id));
    }
  }
  // Identical points give identical membership.
  ASSERT_EQ(groups[0].proposals.size(), groups[1].proposals.size());
  for (std::size_t i = 0; i < groups[0].proposals.size(); ++i) {
    EXPECT_EQ(groups[0].proposals[i].box, groups[1].proposals[i].box);
  }
  EXPECT_TRUE(build_groups({}, head, anchors, 3, 256, 256, {0.1, 0.1, 0.2, 0.2}).empty());
}

TEST(Rpn, GroupNmsKeepsDisjointUpToLimit) {
  ProposalGroup g;
  g.point = {0, 0, 1};
  for (int i = 0; i < 80; ++i) {
    Proposal p;
    p.box = {double(10 * i), 0, double(10 * i + 5), 5, 1};
    p.score = 0.01 * i;
    g.proposals.push_back(p);
  }
  g.group_size_raw = 80;
  const auto out = group_nms({g}, 0.7, 50);
  ASSERT_EQ(out[0].size(), 50);
  EXPECT_DOUBLE_EQ(out[0].proposals[0].score, 0.79);
  g.proposals.resize(20);
  EXPECT_EQ(group_nms({g}, 0.7, 50)[0].size(), 20);
}

TEST(Rpn, GroupNmsSharedDuplicateGoesToOrigin) {
  ProposalGroup a, b;
  a.point = {1, 1, 0};
  b.point = {2, 2, 0};
  Proposal dup;
  dup.box = {0, 0, 10, 10, 0};
  dup.score = 0.9;
  Proposal dup_low = dup;
  dup_low.score = 0.5;
  Proposal other;
  other.box = {50, 50, 60, 60, 0};
  other.score = 0.4;
  a.proposals = {dup};
  b.proposals = {dup_low, other};
  const auto out = group_nms({a, b}, 0.7, 50);
  ASSERT_EQ(out[0].size(), 1);
  EXPECT_DOUBLE_EQ(out[0].proposals[0].score, 0.9);
  ASSERT_EQ(out[1].size(), 1);
  EXPECT_EQ(out[1].proposals[0].box, other.box);

  // A group whose only proposal is suppressed gets it back.
  b.proposals = {dup_low};
  const auto refilled = group_nms({a, b}, 0.7, 50);
  ASSERT_EQ(refilled[1].size(), 1);
  EXPECT_DOUBLE_EQ(refilled[1].proposals[0].score, 0.5);
}

TEST(Rpn, GroupNmsMatchesPooledReference) {
  const auto head = random_head(5);
  const auto anchors = make_anchors(head.levels, AnchorSpec::retina_default());
  const std::vector<PointAnnotation> pts{{60, 60, 1}, {70, 66, 1}, {200, 180, 0}};
  const auto raw = build_groups(pts, head, anchors, 3, 256, 256, {0.1, 0.1, 0.2, 0.2});
  const auto out = group_nms(raw, 0.7, 50);
  // Reference: pool same-class proposals, run the reference NMS, route back.
  for (int cls : {0, 1}) {
    std::vector<Box> boxes;
    std::vector<double> scores;
    std::vector<int> owner;
    for (std::size_t g = 0; g < raw.size(); ++g) {
      if (raw[g].point.class_id != cls) continue;
      for (const auto& p : raw[g].proposals) {
        boxes.push_back(p.box);
        scores.push_back(p.score);
        owner.push_back(static_cast<int>(g));
      }
    }
    std::vector<std::vector<double>> expected(raw.size());
    for (std::size_t i : oracle::reference_nms(boxes, scores, 0.7, [](const Box& a, const Box& b) { return iou(a, b); })) {
      expected[owner[i]].push_back(scores[i]);
    }
    for (std::size_t g = 0; g < raw.size(); ++g) {
      if (raw[g].point.class_id != cls) continue;
      auto& e = expected[g];
      std::sort(e.rbegin(), e.rend());
      if (e.size() > 50) e.resize(50);
      std::vector<double> got;
      for (const auto& p : out[g].proposals) got.push_back(p.score);
      if (e.empty()) {
        EXPECT_EQ(got.size(), 1u);
      } else {
        EXPECT_EQ(got, e);
      }
      EXPECT_GE(out[g].size(), 1);
      EXPECT_LE(out[g].size(), 50);
    }
  }
}

TEST(Rpn, UngroupedPoolIsBoundedAndSorted) {
  const auto head = random_head(6);
  const auto anchors = make_anchors(head.levels, AnchorSpec::retina_default());
  const auto props = ungrouped_proposals(head, anchors, 256, 256, {0.1, 0.1, 0.2, 0.2}, 0.7, 1000, 1000);
  EXPECT_LE(props.size(), 1000u);
  EXPECT_GT(props.size(), 100u);
  for (std::size_t i = 1; i < props.size(); ++i) EXPECT_GE(props[i - 1].score, props[i].score);
}

TEST(Rpn, AssignAnchors) {
  const std::vector<Box> anchors{{0, 0, 10, 10}, {0, 0, 10, 7}, {0, 0, 10, 4.5}, {50, 50, 60, 60}};
  const std::vector<Box> gts{{0, 0, 10, 10, 2}};
  EXPECT_EQ(assign_anchors(anchors, gts, 0.5, 0.4), (std::vector<int>{0, 0, kIgnore, kBackground}));
  EXPECT_EQ(assign_anchors(anchors, {}, 0.5, 0.4), std::vector<int>(4, kBackground));
}

// Two anchors on a 1x2 grid, one class.
struct MicroRpn {
  RpnConfig config;
  AnchorSet anchors;
  std::vector<LevelShape> levels{{1, 2, 8}};
  MicroRpn() {
    config.anchors = AnchorSpec{{1.0}, {1.0}, {8.0}};
    config.num_classes = 1;
    anchors = make_anchors(levels, config.anchors);
  }
  double loss(Tape<double>& tape, nn::Parameter<double>& logits, nn::Parameter<double>& deltas,
              const std::vector<Box>& gts) {
    DenseHeadOutput out;
    out.levels = levels;
    out.class_logits = {tape.parameter(logits)};
    out.box_deltas = {tape.parameter(deltas)};
    Var l = rpn_loss(tape, out, anchors, gts, config);
    if (tape.grad_enabled()) tape.backward(l);
    return tape.value(l).data[0];
  }
};

TEST(Rpn, LossGradientMatchesFiniteDifferences) {
  MicroRpn m;
  nn::Parameter<double> logits("logits", Tensor<double>({1, 1, 2}, std::vector<double>{0.3, -1.2}));
  nn::Parameter<double> deltas("deltas", Tensor<double>({4, 1, 2}, std::vector<double>{0.2, -0.1, 0.5, 0.05, -0.3, 0.1, 0.02, -0.4}));
  const std::vector<Box> gts{{1, 0.5, 9, 8.5, 0}};
  {
    Tape<double> tape(true);
    m.loss(tape, logits, deltas, gts);
  }
  auto f = [&] {
    Tape<double> tape(false);
    return m.loss(tape, logits, deltas, gts);
  };
  for (auto* p : {&logits, &deltas}) {
    for (std::size_t i = 0; i < p->value.numel(); ++i) {
      const double numeric = oracle::central_difference(f, p->value.data[i], 1e-6);
      EXPECT_LT(oracle::relative_error(p->grad.data[i], numeric, 1e-7), 1e-4) << p->name << i;
    }
  }
}

TEST(Rpn, LossNearZeroForPerfectPredictionsAndFiniteWithoutGt) {
  MicroRpn m;
  const std::vector<Box> gts{m.anchors.per_level[0][0]};
  Box gt = gts[0];
  gt.class_id = 0;
  nn::Parameter<double> logits("logits", Tensor<double>({1, 1, 2}, std::vector<double>{20.0, -20.0}));
  nn::Parameter<double> deltas("deltas", Tensor<double>({4, 1, 2}));
  Tape<double> tape(false);
  EXPECT_LT(m.loss(tape, logits, deltas, {gt}), 1e-6);
  Tape<double> tape2(false);
  const double no_gt = m.loss(tape2, logits, deltas, {});
  EXPECT_TRUE(std::isfinite(no_gt));
  EXPECT_GT(no_gt, 1.0);  // the confident positive logit is now a false positive
}

TEST(Rpn, LossFiniteAtInitialization) {
  Rng rng(0);
  BackboneFpn<float> net(BackboneConfig{}, rng);
  RpnConfig cfg;
  DenseHead<float> head(cfg, 64, rng);
  Tape<float> tape(false);
  const auto p = forward_backbone(tape, net, noise_image(256, 256, 9));
  const auto out = head.forward(tape, p);
  const auto anchors = make_anchors(out.levels, cfg.anchors);
  Var l = rpn_loss(tape, out, anchors, {{20, 30, 80, 90, 1}, {100, 100, 140, 150, 2}}, cfg);
  EXPECT_TRUE(std::isfinite(tape.value(l).data[0]));
}

}  // namespace
}  // namespace pointbox
