// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "pointbox/group_head.hpp"

namespace pointbox {

using Json = nlohmann::json;

inline constexpr const char* kCheckpointVersion = "pointbox-lab.ckpt.v1";

struct ModelConfig {
  BackboneConfig backbone;
  RpnConfig rpn;
  HeadConfig head;
  int k = 3;
  int num_projection_layers = 1;
  bool detach = true;
  AssignMode assignment = AssignMode::instance;
  double group_nms_iou = 0.7;
  int group_keep = 50;
  double final_nms_iou = 0.5;

  void validate() const;
};

enum class OptimizerKind { adam, sgd };

struct SelfTrainConfig {
  bool enabled = false;
  double weak_loss_weight = 0.5;
  int well_per_step = 1;  // well:weak ratio
  int weak_per_step = 1;
};

struct TrainConfig {
  ModelConfig model;
  int epochs = 20;
  double base_lr = 1e-3;
  // Empty means 60% and 80% of `epochs`.
  std::vector<int> decay_epochs;
  double decay_factor = 0.1;
  int warmup_iters = 200;
  int batch_size = 1;
  OptimizerKind optimizer = OptimizerKind::adam;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  double grad_clip = 10.0;
  std::uint64_t seed = 0;
  int log_every = 100;
  SelfTrainConfig self_train;

  void validate() const;
  std::vector<int> resolved_decay_epochs() const;
  double learning_rate(int epoch, long iteration) const;
};

/// Flat dotted-key view ("model.k", "train.epochs", ...). Unknown keys throw.
Json to_flat_json(const TrainConfig& config);
void apply_flat_json(TrainConfig& config, const Json& flat);
std::vector<std::string> known_config_keys();

/// Scenes in memory: decoded images and their annotations.
struct Dataset {
  std::vector<Image> images;
  std::vector<ImageAnnotations> annotations;

  std::size_t size() const { return images.size(); }
};

Dataset make_dataset(std::vector<Scene> scenes);
/// Loads PNGs referenced by `annotations` relative to `image_dir`.
Dataset load_dataset(const AnnotationSet& annotations, const std::filesystem::path& image_dir);
/// Restricts a dataset to the given image ids (in order) with replaced annotations.
Dataset with_annotations(const Dataset& source, const std::vector<ImageAnnotations>& annotations);

template <typename T>
class GroupRcnn {
 public:
  explicit GroupRcnn(const ModelConfig& config, std::uint64_t seed = 0);

  struct Losses {
    Var total;
    double rpn = 0.0;
    double rcnn = 0.0;
  };

  /// Training losses for one image. `points[i]` queries `gts[i]`.
  Losses loss(Tape<T>& tape, const Image& image, const std::vector<Box>& gts,
              const std::vector<PointAnnotation>& points, CascadeRouting* routing = nullptr);

  /// One box per point, class preserved, scored by the last stage.
  std::vector<Box> infer(const Image& image, const std::vector<PointAnnotation>& points,
                         std::vector<double>* scores = nullptr);

  /// Groups after pooled per-class NMS, for a given k.
  std::vector<ProposalGroup> proposal_groups(const Image& image,
                                             const std::vector<PointAnnotation>& points, int k);
  /// Proposals without grouping (class-wise NMS 0.7, top 1000).
  std::vector<Proposal> ungrouped(const Image& image, int top_n = 1000);

  const ModelConfig& config() const { return config_; }
  nn::ParameterList<T>& parameters() { return params_; }

 private:
  ModelConfig config_;
  BackboneFpn<T> backbone_;
  DenseHead<T> rpn_;
  RoiProjection<T> projection_;
  CascadeHead<T> head_;
  nn::ParameterList<T> params_;
  std::map<std::pair<int, int>, AnchorSet> anchor_cache_;

  const AnchorSet& anchors_for(int padded_h, int padded_w);
};

/// Optimizer state plus parameter values, stored in one checkpoint file.
struct OptimizerState {
  OptimizerKind kind = OptimizerKind::adam;
  long step = 0;
  std::vector<Tensor<float>> first;   // Adam m or SGD momentum buffer
  std::vector<Tensor<float>> second;  // Adam v
};

class Optimizer {
 public:
  Optimizer(const TrainConfig& config, nn::ParameterList<float>& params);
  /// Clips by global norm, then applies one update at learning rate `lr`.
  /// Returns the pre-clip gradient norm.
  double step(double lr);
  OptimizerState& state() { return state_; }

 private:
  TrainConfig config_;
  nn::ParameterList<float>& params_;
  OptimizerState state_;
};

struct Checkpoint {
  TrainConfig config;
  int epoch = 0;  // epochs completed
  long iteration = 0;
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& meta,
                     nn::ParameterList<float>& params, const OptimizerState* optimizer);
/// Loads parameters (and optimizer state when `optimizer` is non-null). The
/// parameter names and shapes must match.
Checkpoint load_checkpoint(const std::filesystem::path& path, nn::ParameterList<float>& params,
                           OptimizerState* optimizer = nullptr);
/// Reads only the header.
Checkpoint read_checkpoint_header(const std::filesystem::path& path);

class TrainingDiverged : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TrainOptions {
  std::filesystem::path out_dir;  // checkpoints and diagnostics; empty = none
  std::optional<std::filesystem::path> resume_from;
  std::optional<std::filesystem::path> init_from;  // parameters only
  int stop_after_epochs = -1;                       // for interrupted-run tests
  std::function<void(int epoch, long iteration, double loss)> on_log;
};

struct TrainResult {
  int epochs_completed = 0;
  long iterations = 0;
  std::vector<double> losses;  // one per iteration
  std::filesystem::path checkpoint;
};

/// Supervised training on boxed images with a fresh point sampled inside
/// every gt box on every iteration.
TrainResult train_regressor(GroupRcnn<float>& model, const Dataset& well, const TrainConfig& config,
                            const TrainOptions& options = {});

/// Well and weak images drawn at the configured ratio; weak images get
/// pseudo boxes from the current model, pseudo points inside them, and a
/// down-weighted loss.
TrainResult self_train(GroupRcnn<float>& model, const Dataset& well, const Dataset& weak,
                       const TrainConfig& config, const TrainOptions& options = {});

/// Boxes for every point of an image; throws for points outside the image.
std::vector<Box> infer_points(GroupRcnn<float>& model, const Image& image,
                              const std::vector<PointAnnotation>& points,
                              std::vector<double>* scores = nullptr);

/// Predictions for every image of `weak` (boxes with scores, points kept).
std::vector<ImageAnnotations> predict(GroupRcnn<float>& model, const Dataset& weak);

/// Writes pseudo boxes for a weak set and returns them.
AnnotationSet pseudo_label(GroupRcnn<float>& model, const Dataset& weak,
                           const std::filesystem::path& out_path, int num_classes);

/// Retrains a fresh model on well + pseudo-labeled data, standing in for the
/// downstream detector.
TrainResult train_downstream(GroupRcnn<float>& fresh_model, const Dataset& well,
                             const Dataset& pseudo, const TrainConfig& config,
                             const TrainOptions& options = {});

struct Metrics {
  double ar50 = 0.0;
  double ar_small = 0.0;
  double ar_medium = 0.0;
  double ar_large = 0.0;
  double map = 0.0;
  double ap50 = 0.0;
  double ap75 = 0.0;
  int num_images = 0;
  int num_gt = 0;

  friend bool operator==(const Metrics&, const Metrics&) = default;
};

struct EvalReport {
  Metrics overall;
  Metrics crowded;
  Metrics non_crowded;
  std::array<double, 2> area_terciles{};
  std::string provenance;

  friend bool operator==(const EvalReport&, const EvalReport&) = default;
};

Json to_json(const EvalReport& report);
Json to_json(const Metrics& metrics);

/// Greedy one-to-one class-aware matching per image. Predictions without
/// scores count as score 1. Throws when image ids differ, listing them.
EvalReport evaluate(const std::vector<ImageAnnotations>& predictions,
                    const std::vector<ImageAnnotations>& ground_truth);

struct RecallReport {
  double grouped = 0.0;    // best proposal of each gt's own group
  double ungrouped = 0.0;  // any proposal of the top-N pool
  int num_gt = 0;
};

/// Oracle recall at IoU 0.5 for a grouping size k (k <= 0 skips the grouped
/// pass) and for the ungrouped pool.
RecallReport oracle_recall(GroupRcnn<float>& model, const Dataset& eval, int k,
                           bool with_ungrouped, int top_n = 1000);

struct AblationCell {
  std::string name;
  TrainConfig config;
};

struct AblationResult {
  std::string name;
  TrainConfig config;
  std::optional<EvalReport> report;
  std::string error;
  double wall_time_s = 0.0;
};

/// Rows of the standard ablation matrix (group size, relative coordinates,
/// projection layers, dynamic conv inputs, assignment).
std::vector<AblationCell> standard_ablation_matrix(const TrainConfig& base);

/// Trains and evaluates every cell; failures are recorded and the matrix
/// continues. Appends one JSON line per cell to `results_path` when set.
std::vector<AblationResult> run_ablation(const std::vector<AblationCell>& cells, const Dataset& well,
                                         const Dataset& eval,
                                         const std::filesystem::path& results_path = {});

std::string ablation_summary(const std::vector<AblationResult>& results);

/// Fixed in-box points for every annotation that lacks them.
void attach_points(std::vector<ImageAnnotations>& annotations, std::uint64_t seed);

}  // namespace pointbox
