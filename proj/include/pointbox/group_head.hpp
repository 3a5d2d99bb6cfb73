// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <string>
#include <vector>

#include "pointbox/backbone_fpn.hpp"
#include "pointbox/grouped_rpn.hpp"

namespace pointbox {

using nn::Parameter;

inline constexpr int kRoiSize = 7;
inline constexpr int kRoiSamples = 2;  // per bin and axis
inline constexpr int kEmbeddingDim = 256;
inline constexpr int kNumStages = 3;

/// FPN level (3..6) for a RoI: clamp(floor(4 + log2(sqrt(area) / 56)), 3, 6).
int map_roi_to_level(const Box& box);

/// Bilinear sampling weights of one RoI on one [H,W] map: for each of the
/// 7x7 bins, 4 samples with 4 taps each, already divided by the sample count.
struct RoiAlignPlan {
  int height = 0;
  int width = 0;
  std::vector<int> offsets;    // 49 * 16, into an H*W plane
  std::vector<double> weights;  // same layout
};

/// Aligned RoI sampling (half-pixel offset) of `box` on a map at `stride`.
/// Samples further than one cell outside the map contribute zero.
RoiAlignPlan plan_roi_align(const Box& box, int stride, int height, int width);

/// Pools a [C,H,W] map into [C,7,7].
template <typename T>
Tensor<T> roi_align(const Tensor<T>& feature, const Box& box, int stride);

/// Pools every RoI from its own level of `levels` (each [C,H,W]);
/// `level_index[r]` indexes into `levels`. Output is [R,C,7,7].
template <typename T>
Var roi_align_levels(Tape<T>& tape, const std::vector<Var>& levels, const std::vector<int>& strides,
                     const std::vector<Box>& boxes, const std::vector<int>& level_index);

/// Per-level [2,H,W] offsets of every cell center to the point, divided by
/// the image size and clamped to [-1,1]. Channel 0 is x, channel 1 is y.
template <typename T>
std::vector<Tensor<T>> build_relative_coords(const PointAnnotation& point,
                                             const std::vector<LevelShape>& levels,
                                             double image_width, double image_height);

struct AssignResult {
  std::vector<bool> positive;
  std::vector<int> matched_gt;  // -1 when negative
};

/// Positive iff the max IoU over same-class gts (`cls`) reaches the threshold;
/// matched to the argmax, lower index on ties.
AssignResult vanilla_assign(const std::vector<Box>& proposals, const std::vector<Box>& gts, int cls,
                            double iou_threshold);

/// Positive iff IoU with the group's own gt reaches the threshold.
AssignResult instance_assign(const std::vector<Box>& proposals, const Box& own_gt, int own_index,
                             double iou_threshold);

enum class DynamicConvMode { off, roi_only, embed_only, both };
enum class DynamicConvScope { both_branches, classification_only };
enum class AssignMode { vanilla, instance };

const char* to_string(DynamicConvMode mode);
DynamicConvMode dynamic_conv_mode_from_string(const std::string& s);
const char* to_string(AssignMode mode);
AssignMode assign_mode_from_string(const std::string& s);

/// Input width of the kernel generator F for a given mode.
int generator_input_dim(DynamicConvMode mode, int roi_channels);

/// P_i for every group as a [N, C*C] tensor (row-major [C_out, C_in]).
/// `offsets` delimits the groups' rows in `roi_features` [R,C,7,7].
template <typename T>
Var generate_dynamic_kernel(Tape<T>& tape, Var roi_features, const std::vector<int>& offsets,
                            const std::vector<int>& class_ids, Var embedding,
                            nn::Linear<T>& generator, DynamicConvMode mode);

/// Per-group 1x1 convolution: rows of group i in `features` [R,C_in,7,7] are
/// multiplied by kernel i from `kernels` [N, C_out*C_in].
template <typename T>
Var dynamic_group_conv(Tape<T>& tape, Var features, Var kernels, const std::vector<int>& offsets,
                       int out_channels);

struct HeadConfig {
  int num_classes = 3;
  int feature_channels = 64;
  int hidden = 128;
  bool relative_coords = true;
  DynamicConvMode dynamic_conv = DynamicConvMode::both;
  DynamicConvScope dynamic_conv_scope = DynamicConvScope::both_branches;
  std::array<double, kNumStages> iou_thresholds = {0.5, 0.6, 0.7};
  std::array<Deltas, kNumStages> stage_stds = {Deltas{0.1, 0.1, 0.2, 0.2},
                                               Deltas{0.05, 0.05, 0.1, 0.1},
                                               Deltas{0.033, 0.033, 0.067, 0.067}};
  std::array<double, kNumStages> stage_weights = {1.0, 1.0, 1.0};
  double smooth_l1_beta = 1.0;

  int roi_channels() const { return feature_channels + (relative_coords ? 2 : 0); }
};

template <typename T>
struct CascadeStage {
  nn::Linear<T> generator;
  nn::Linear<T> fc1;
  nn::Linear<T> fc2;
  nn::Linear<T> cls;
  nn::Linear<T> reg;
};

/// Boxes fed to each stage. Recording them on one pass and replaying them on
/// another freezes every discrete choice downstream of the RPN.
struct CascadeRouting {
  std::vector<ProposalGroup> groups;
  std::array<std::vector<Box>, kNumStages> stage_inputs;
  bool recorded = false;
};

struct StageOutput {
  Var cls_logits;  // [R,1]
  Var deltas;      // [R,4]
  std::vector<Box> input_boxes;
  std::vector<Box> refined_boxes;  // decoded and clipped, detached
};

struct CascadeOutput {
  std::vector<StageOutput> stages;
  std::vector<int> offsets;  // group g owns rows [offsets[g], offsets[g+1])
  std::vector<int> group_class;
};

template <typename T>
class CascadeHead {
 public:
  CascadeHead() = default;
  CascadeHead(const HeadConfig& config, std::mt19937_64& rng);

  /// Runs all stages over the groups. Stage s pools from the boxes refined by
  /// stage s-1. With `routing` already recorded the stored boxes are used.
  CascadeOutput forward(Tape<T>& tape, const ProjectedPyramid& pyramid,
                        const std::vector<LevelShape>& levels,
                        const std::vector<ProposalGroup>& groups, double image_width,
                        double image_height, CascadeRouting* routing = nullptr);

  const HeadConfig& config() const { return config_; }
  void collect(nn::ParameterList<T>& out);

 private:
  HeadConfig config_;
  Parameter<T> embedding_;
  std::array<CascadeStage<T>, kNumStages> stages_;

  Var pool(Tape<T>& tape, const ProjectedPyramid& pyramid, const std::vector<LevelShape>& levels,
           const std::vector<ProposalGroup>& groups, const std::vector<Box>& boxes,
           const std::vector<int>& offsets, double image_width, double image_height);
  Var tower(Tape<T>& tape, CascadeStage<T>& stage, Var x);
};

/// Stage targets for a group set: own gt per group (instance) or all gts.
/// `own_gt[g]` is the gt index of group g.
template <typename T>
Var rcnn_loss(Tape<T>& tape, const CascadeOutput& out, const std::vector<Box>& gts,
              const std::vector<int>& own_gt, AssignMode mode, const HeadConfig& config);

/// Per-stage assignment for one stage's input boxes.
std::vector<AssignResult> assign_stage(const CascadeOutput& out, int stage,
                                       const std::vector<Box>& gts, const std::vector<int>& own_gt,
                                       AssignMode mode, double iou_threshold);

}  // namespace pointbox
