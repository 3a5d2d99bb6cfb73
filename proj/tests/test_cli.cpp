// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>

#include "pointbox/cli.hpp"
#include "pointbox/pipeline.hpp"

namespace pointbox {
namespace {

namespace fs = std::filesystem;

int run(std::vector<std::string> args) { return parse_and_dispatch(args); }

Json read_json(const fs::path& p) {
  std::ifstream in(p);
  return Json::parse(in);
}

class CliTest : public ::testing::Test {
 protected:
  fs::path dir = fs::temp_directory_path() / "pointbox_cli_test";
  void SetUp() override {
    fs::remove_all(dir);
    fs::create_directories(dir);
    // 128 px scenes and a narrow model keep the end-to-end run short.
    std::ofstream(dir / "small.json") << R"({"scene.width": 128, "scene.height": 128,
      "scene.max_instances": 3, "scene.max_object_size": 48,
      "model.backbone_widths": [4, 8, 8, 16], "model.fpn_channels": 8, "model.norm_groups": 2,
      "model.rpn_head_channels": 8, "model.hidden": 16, "model.group_keep": 10,
      "train.warmup_iters": 2, "train.log_every": 0})";
  }
  void TearDown() override { fs::remove_all(dir); }
};

TEST_F(CliTest, UsageErrorsExitWithOne) {
  testing::internal::CaptureStderr();
  EXPECT_EQ(run({"train", "--data", dir.string(), "--well-fraction", "1.5"}), kExitUsage);
  const std::string err = testing::internal::GetCapturedStderr();
  EXPECT_NE(err.find("well-fraction must be in (0,1)"), std::string::npos) << err;
  testing::internal::CaptureStderr();
  EXPECT_EQ(run({"gen-data", "--bogus"}), kExitUsage);
  EXPECT_EQ(run({}), kExitUsage);
  EXPECT_EQ(run({"fly"}), kExitUsage);
  testing::internal::GetCapturedStderr();
}

TEST_F(CliTest, UnknownConfigKeyIsUsageError) {
  std::ofstream(dir / "bad.json") << R"({"model.kk": 3})";
  testing::internal::CaptureStderr();
  EXPECT_EQ(run({"gen-data", "--out", (dir / "d").string(), "--config", (dir / "bad.json").string()}), kExitUsage);
  const std::string err = testing::internal::GetCapturedStderr();
  EXPECT_NE(err.find("model.kk"), std::string::npos) << err;
}

TEST_F(CliTest, RuntimeErrorsExitWithTwo) {
  std::ofstream(dir / "broken.json") << "{not json";
  testing::internal::CaptureStderr();
  EXPECT_EQ(run({"eval", "--pred", (dir / "broken.json").string(), "--gt", (dir / "broken.json").string()}),
            kExitRuntime);
  testing::internal::GetCapturedStderr();
}

TEST_F(CliTest, GenDataWritesImagesAnnotationsAndSnapshot) {
  const fs::path out = dir / "data";
  ASSERT_EQ(run({"gen-data", "--out", out.string(), "--images", "3", "--seed", "5", "--config",
                 (dir / "small.json").string()}),
            kExitOk);
  const AnnotationSet set = read_annotations(out / "annotations.json");
  ASSERT_EQ(set.images.size(), 3u);
  for (const auto& img : set.images) {
    EXPECT_TRUE(fs::exists(out / img.file)) << img.file;
    EXPECT_EQ(img.width, 128);
  }
  const Json snap = read_json(out / "resolved_config.json");
  EXPECT_EQ(snap.at("command"), "gen-data");
  EXPECT_EQ(snap.at("seed"), 5);
  EXPECT_EQ(snap.at("config").at("scene.width"), 128);
  EXPECT_EQ(snap.at("config").at("data.images"), 3);
}

TEST_F(CliTest, SeedFallsBackToEnvironment) {
  const fs::path a = dir / "a", b = dir / "b";
  setenv("POINTBOX_SEED", "17", 1);
  ASSERT_EQ(run({"gen-data", "--out", a.string(), "--images", "2", "--config", (dir / "small.json").string()}),
            kExitOk);
  unsetenv("POINTBOX_SEED");
  ASSERT_EQ(run({"gen-data", "--out", b.string(), "--images", "2", "--seed", "17", "--config",
                 (dir / "small.json").string()}),
            kExitOk);
  EXPECT_EQ(read_json(a / "resolved_config.json").at("seed"), 17);
  EXPECT_EQ(read_annotations(a / "annotations.json"), read_annotations(b / "annotations.json"));
}

TEST_F(CliTest, TrainLabelEvalEndToEnd) {
  const fs::path data = dir / "data", run_dir = dir / "run";
  const std::string cfg = (dir / "small.json").string();
  ASSERT_EQ(run({"gen-data", "--out", data.string(), "--images", "6", "--config", cfg}), kExitOk);
  ASSERT_EQ(run({"train", "--data", data.string(), "--well-fraction", "0.5", "--epochs", "1", "--out",
                 run_dir.string(), "--config", cfg}),
            kExitOk);
  EXPECT_TRUE(fs::exists(run_dir / "model.ckpt"));
  EXPECT_TRUE(fs::exists(run_dir / "train.log"));
  EXPECT_EQ(read_json(run_dir / "resolved_config.json").at("config").at("train.epochs"), 1);
  const AnnotationSet weak = read_annotations(run_dir / "weak.json");
  EXPECT_EQ(weak.images.size(), 3u);

  const fs::path pred = run_dir / "pred.json";
  ASSERT_EQ(run({"label", "--data", data.string(), "--points", (run_dir / "weak.json").string(), "--checkpoint",
                 (run_dir / "model.ckpt").string(), "--out", pred.string()}),
            kExitOk);
  const AnnotationSet labeled = read_annotations(pred);
  ASSERT_EQ(labeled.images.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(labeled.images[i].boxes.size(), weak.images[i].points.size());
  EXPECT_TRUE(fs::exists(pred.string() + ".config.json"));

  testing::internal::CaptureStdout();
  ASSERT_EQ(run({"eval", "--pred", pred.string(), "--gt", (run_dir / "weak_hidden.json").string()}), kExitOk);
  const Json printed = Json::parse(testing::internal::GetCapturedStdout());
  const Json report = read_json(run_dir / "eval_report.json");
  EXPECT_EQ(printed, report);
  EXPECT_TRUE(report.at("overall").contains("ar50"));
}

}  // namespace
}  // namespace pointbox
