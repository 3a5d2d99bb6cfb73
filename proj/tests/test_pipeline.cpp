// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "pointbox/pipeline.hpp"

namespace pointbox {
namespace {

namespace fs = std::filesystem;

ImageAnnotations gt_image(const std::string& id, std::vector<Box> boxes) {
  ImageAnnotations a;
  a.image_id = id;
  a.width = 200;
  a.height = 200;
  a.boxes = std::move(boxes);
  return a;
}

TEST(Evaluate, TwoOfThreeFound) {
  const auto gt = gt_image("a", {{0, 0, 20, 20, 0}, {50, 50, 80, 90, 1}, {100, 100, 150, 120, 0}});
  auto pred = gt;
  pred.boxes[1] = {52, 50, 80, 92, 1};      // IoU > 0.5
  pred.boxes[2] = {150, 150, 190, 190, 0};  // misses
  const EvalReport r = evaluate({pred}, {gt});
  EXPECT_NEAR(r.overall.ar50, 200.0 / 3.0, 1e-9);
  EXPECT_EQ(r.overall.num_gt, 3);
  EXPECT_EQ(r.overall.num_images, 1);
}

TEST(Evaluate, IdentityIsPerfectAndEmptyIsZero) {
  const std::vector<ImageAnnotations> gt{gt_image("a", {{0, 0, 20, 20, 0}, {30, 30, 90, 60, 2}}),
                                         gt_image("b", {{10, 10, 60, 70, 1}})};
  const EvalReport perfect = evaluate(gt, gt);
  EXPECT_DOUBLE_EQ(perfect.overall.ar50, 100.0);
  EXPECT_DOUBLE_EQ(perfect.overall.map, 100.0);
  EXPECT_DOUBLE_EQ(perfect.overall.ap75, 100.0);

  auto empty = gt;
  for (auto& a : empty) a.boxes.clear();
  const EvalReport none = evaluate(empty, gt);
  EXPECT_DOUBLE_EQ(none.overall.ar50, 0.0);
  EXPECT_DOUBLE_EQ(none.overall.map, 0.0);
}

TEST(Evaluate, WrongClassDoesNotMatch) {
  const auto gt = gt_image("a", {{0, 0, 20, 20, 0}});
  auto pred = gt;
  pred.boxes[0].class_id = 1;
  EXPECT_DOUBLE_EQ(evaluate({pred}, {gt}).overall.ar50, 0.0);
}

TEST(Evaluate, CrowdedAndPlainSubsetsPartitionImages) {
  const auto crowded = gt_image("c", {{0, 0, 40, 40, 0}, {10, 0, 50, 40, 0}});
  const auto plain = gt_image("p", {{0, 0, 40, 40, 0}, {100, 100, 150, 150, 0}});
  ASSERT_TRUE(crowded.crowded());
  ASSERT_FALSE(plain.crowded());
  const EvalReport r = evaluate({crowded, plain}, {crowded, plain});
  EXPECT_EQ(r.crowded.num_images, 1);
  EXPECT_EQ(r.non_crowded.num_images, 1);
  EXPECT_EQ(r.overall.num_gt, 4);
  EXPECT_LE(r.area_terciles[0], r.area_terciles[1]);
}

TEST(Evaluate, MismatchedIdsAreListed) {
  const std::vector<ImageAnnotations> gt{gt_image("a", {}), gt_image("b", {})};
  try {
    evaluate({gt_image("a", {}), gt_image("z", {})}, gt);
    FAIL() << "expected an error";
  } catch (const std::invalid_argument& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("missing from predictions: b"), std::string::npos) << msg;
    EXPECT_NE(msg.find("missing from ground truth: z"), std::string::npos) << msg;
  }
}

TEST(Config, DefaultsAndSchedule) {
  TrainConfig c;
  EXPECT_EQ(c.model.num_projection_layers, 1);
  EXPECT_EQ(c.model.k, 3);
  EXPECT_EQ(c.model.assignment, AssignMode::instance);
  c.epochs = 20;
  c.warmup_iters = 0;
  EXPECT_EQ(c.resolved_decay_epochs(), (std::vector<int>{12, 16}));
  EXPECT_DOUBLE_EQ(c.learning_rate(11, 5000), c.base_lr);
  EXPECT_NEAR(c.learning_rate(12, 5000), c.base_lr * 0.1, 1e-15);
  EXPECT_NEAR(c.learning_rate(16, 5000), c.base_lr * 0.01, 1e-15);
  c.warmup_iters = 100;
  EXPECT_LT(c.learning_rate(0, 0), 0.01 * c.base_lr);
  EXPECT_NEAR(c.learning_rate(0, 100), c.base_lr, 1e-15);
}

TEST(Config, FlatJsonRoundTripAndUnknownKey) {
  TrainConfig c;
  apply_flat_json(c, Json{{"model.k", 1}, {"model.dynamic_conv", "roi_only"}, {"train.epochs", 7}});
  EXPECT_EQ(c.model.k, 1);
  EXPECT_EQ(c.model.head.dynamic_conv, DynamicConvMode::roi_only);
  TrainConfig d;
  apply_flat_json(d, to_flat_json(c));
  EXPECT_EQ(to_flat_json(d), to_flat_json(c));
  try {
    apply_flat_json(c, Json{{"model.kk", 2}});
    FAIL() << "expected an error";
  } catch (const std::invalid_argument& e) {
    EXPECT_STREQ(e.what(), "unknown config key 'model.kk'");
  }
  EXPECT_THROW(apply_flat_json(c, Json{{"model.dynamic_conv", "sometimes"}}), std::invalid_argument);
}

// Small model and dataset so training runs in seconds.
TrainConfig tiny_train_config() {
  TrainConfig c;
  apply_flat_json(c, Json{{"model.backbone_widths", {4, 8, 8, 16}},
                          {"model.fpn_channels", 8},
                          {"model.norm_groups", 2},
                          {"model.rpn_head_channels", 8},
                          {"model.hidden", 16},
                          {"model.group_keep", 10}});
  c.epochs = 2;
  c.warmup_iters = 2;
  c.log_every = 0;
  return c;
}

Dataset tiny_dataset(int n, std::uint64_t seed) {
  SceneConfig s;
  s.width = 128;
  s.height = 128;
  s.max_instances = 3;
  s.max_object_size = 48;
  s.seed = seed;
  Dataset d = make_dataset(generate_dataset(s, n));
  attach_points(d.annotations, seed);
  return d;
}

std::vector<std::vector<float>> values(GroupRcnn<float>& m) {
  std::vector<std::vector<float>> out;
  for (auto* p : m.parameters()) out.push_back(p->value.values());
  return out;
}

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

TEST(Checkpoint, RoundTripRestoresParameters) {
  TempDir dir("pointbox_ckpt_test");
  const TrainConfig c = tiny_train_config();
  GroupRcnn<float> a(c.model, 1), b(c.model, 2);
  ASSERT_NE(values(a), values(b));
  save_checkpoint(dir.path / "m.ckpt", Checkpoint{c, 3, 42}, a.parameters(), nullptr);
  const Checkpoint meta = load_checkpoint(dir.path / "m.ckpt", b.parameters());
  EXPECT_EQ(values(a), values(b));
  EXPECT_EQ(meta.epoch, 3);
  EXPECT_EQ(meta.iteration, 42);
  EXPECT_EQ(to_flat_json(meta.config), to_flat_json(c));
  EXPECT_EQ(read_checkpoint_header(dir.path / "m.ckpt").iteration, 42);

  TrainConfig other = c;
  other.model.head.hidden = 8;
  GroupRcnn<float> mismatched(other.model, 1);
  EXPECT_THROW(load_checkpoint(dir.path / "m.ckpt", mismatched.parameters()), std::exception);
  std::ofstream(dir.path / "junk.ckpt") << "not a checkpoint";
  EXPECT_THROW(read_checkpoint_header(dir.path / "junk.ckpt"), std::exception);
}

TEST(Training, ResumeIsBitExact) {
  TempDir dir("pointbox_resume_test");
  const Dataset data = tiny_dataset(3, 1);
  const TrainConfig c = tiny_train_config();

  GroupRcnn<float> straight(c.model, c.seed);
  const TrainResult full = train_regressor(straight, data, c);

  GroupRcnn<float> interrupted(c.model, c.seed);
  TrainOptions first;
  first.out_dir = dir.path;
  first.stop_after_epochs = 1;
  const TrainResult half = train_regressor(interrupted, data, c, first);
  EXPECT_EQ(half.epochs_completed, 1);
  GroupRcnn<float> resumed(c.model, 99);
  TrainOptions second;
  second.resume_from = dir.path / "latest.ckpt";
  const TrainResult rest = train_regressor(resumed, data, c, second);
  EXPECT_EQ(rest.iterations, full.iterations);
  EXPECT_EQ(values(resumed), values(straight));
}

TEST(Training, SameSeedIsBitIdentical) {
  const Dataset data = tiny_dataset(3, 1);
  const TrainConfig c = tiny_train_config();
  GroupRcnn<float> a(c.model, c.seed), b(c.model, c.seed);
  const TrainResult ra = train_regressor(a, data, c);
  const TrainResult rb = train_regressor(b, data, c);
  EXPECT_EQ(ra.losses, rb.losses);
  EXPECT_EQ(values(a), values(b));
}

TEST(Training, LossDecreasesOnSmallSet) {
  const Dataset data = tiny_dataset(3, 2);
  TrainConfig c = tiny_train_config();
  c.epochs = 12;
  c.decay_epochs = {100};
  GroupRcnn<float> model(c.model, 0);
  const TrainResult r = train_regressor(model, data, c);
  ASSERT_EQ(r.losses.size(), 36u);
  double head = 0, tail = 0;
  for (int i = 0; i < 6; ++i) {
    head += r.losses[i];
    tail += r.losses[r.losses.size() - 1 - i];
  }
  EXPECT_LT(tail, 0.8 * head);
}

TEST(Training, PointsWithoutBoxesRejected) {
  Dataset data = tiny_dataset(1, 3);
  data.annotations[0].boxes.clear();
  const TrainConfig c = tiny_train_config();
  GroupRcnn<float> model(c.model, 0);
  EXPECT_THROW(train_regressor(model, data, c), std::invalid_argument);
}

TEST(Inference, OneBoxPerPointWithClassKept) {
  const Dataset data = tiny_dataset(4, 4);
  const TrainConfig c = tiny_train_config();
  GroupRcnn<float> model(c.model, 0);
  for (std::size_t i = 0; i < data.size(); ++i) {
    std::vector<double> scores;
    const auto& pts = data.annotations[i].points;
    const auto boxes = infer_points(model, data.images[i], pts, &scores);
    ASSERT_EQ(boxes.size(), pts.size());
    ASSERT_EQ(scores.size(), pts.size());
    for (std::size_t j = 0; j < boxes.size(); ++j) {
      EXPECT_EQ(boxes[j].class_id, pts[j].class_id);
      EXPECT_TRUE(std::isfinite(boxes[j].x1) && std::isfinite(boxes[j].y2));
      EXPECT_GE(boxes[j].x1, 0.0);
      EXPECT_LE(boxes[j].x2, 128.0);
      EXPECT_GT(scores[j], 0.0);
      EXPECT_LT(scores[j], 1.0);
    }
  }
  EXPECT_TRUE(infer_points(model, data.images[0], {}).empty());
  EXPECT_THROW(infer_points(model, data.images[0], {{128.0, 5.0, 0}}), std::invalid_argument);
  EXPECT_THROW(infer_points(model, data.images[0], {{-0.5, 5.0, 0}}), std::invalid_argument);
  EXPECT_THROW(infer_points(model, data.images[0], {{5.0, 5.0, 7}}), std::invalid_argument);
}

TEST(Inference, PseudoLabelsRoundTripThroughJson) {
  TempDir dir("pointbox_pseudo_test");
  const Dataset data = tiny_dataset(3, 5);
  const TrainConfig c = tiny_train_config();
  GroupRcnn<float> model(c.model, 0);
  const AnnotationSet written = pseudo_label(model, data, dir.path / "pseudo.json", 3);
  ASSERT_EQ(written.images.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(written.images[i].boxes.size(), data.annotations[i].points.size());
    EXPECT_EQ(written.images[i].points, data.annotations[i].points);
  }
  EXPECT_EQ(read_annotations(dir.path / "pseudo.json"), written);
}

TEST(Inference, OracleRecallIsAPercentage) {
  const Dataset data = tiny_dataset(2, 6);
  const TrainConfig c = tiny_train_config();
  GroupRcnn<float> model(c.model, 0);
  const RecallReport r = oracle_recall(model, data, 3, true, 100);
  int n = 0;
  for (const auto& a : data.annotations) n += static_cast<int>(a.boxes.size());
  EXPECT_EQ(r.num_gt, n);
  EXPECT_GE(r.grouped, 0.0);
  EXPECT_LE(r.grouped, 100.0);
  EXPECT_GE(r.ungrouped, 0.0);
  EXPECT_LE(r.ungrouped, 100.0);
}

TEST(Points, AttachIsDeterministicAndInsideBoxes) {
  std::vector<ImageAnnotations> a = tiny_dataset(5, 7).annotations;
  for (auto& x : a) x.points.clear();
  std::vector<ImageAnnotations> b = a;
  attach_points(a, 7);
  attach_points(b, 7);
  for (std::size_t i = 0; i < b.size(); ++i) {
    ASSERT_EQ(b[i].points.size(), b[i].boxes.size());
    EXPECT_EQ(b[i].points, a[i].points);
    for (std::size_t j = 0; j < b[i].boxes.size(); ++j) {
      EXPECT_TRUE(b[i].boxes[j].contains(b[i].points[j].x, b[i].points[j].y));
    }
  }
}

TEST(Ablation, FailingCellIsRecordedAndMatrixContinues) {
  TempDir dir("pointbox_ablation_test");
  const Dataset data = tiny_dataset(2, 8);
  TrainConfig good = tiny_train_config();
  good.epochs = 1;
  TrainConfig bad = good;
  bad.epochs = 0;
  const auto results = run_ablation({{"broken", bad}, {"ok", good}}, data, data, dir.path / "results.jsonl");
  ASSERT_EQ(results.size(), 2u);
  EXPECT_FALSE(results[0].report.has_value());
  EXPECT_NE(results[0].error.find("train.epochs"), std::string::npos);
  EXPECT_TRUE(results[1].report.has_value());
  std::ifstream in(dir.path / "results.jsonl");
  std::string line;
  int lines = 0;
  while (std::getline(in, line)) {
    EXPECT_NO_THROW((void)Json::parse(line));
    ++lines;
  }
  EXPECT_EQ(lines, 2);
  EXPECT_NE(ablation_summary(results).find("broken"), std::string::npos);
  EXPECT_GE(standard_ablation_matrix(good).size(), 8u);
}

}  // namespace
}  // namespace pointbox
