// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <utility>
#include <vector>

#include "pointbox/backbone_fpn.hpp"
#include "pointbox/geometry.hpp"

namespace pointbox {

struct RpnConfig {
  AnchorSpec anchors = AnchorSpec::retina_default();
  int num_classes = 3;
  int head_channels = 64;
  double focal_alpha = 0.25;
  double focal_gamma = 2.0;
  double positive_iou = 0.5;
  double negative_iou = 0.4;
  double smooth_l1_beta = 1.0 / 9.0;
  Deltas delta_stds = {0.1, 0.1, 0.2, 0.2};
  double prior_probability = 0.01;
};

struct LevelShape {
  int height = 0;
  int width = 0;
  int stride = 0;
};

/// Raw dense head outputs on the tape: per level, class logits
/// [n*C, H, W] (channel a*C + c) and box deltas [n*4, H, W] (channel a*4 + d).
struct DenseHeadOutput {
  std::vector<Var> class_logits;
  std::vector<Var> box_deltas;
  std::vector<LevelShape> levels;
};

/// Detached copy of a DenseHeadOutput indexed as [level][H][W][n][C].
struct DenseHeadValues {
  int num_anchors = 0;
  int num_classes = 0;
  std::vector<LevelShape> levels;
  std::vector<std::vector<double>> class_logits;
  std::vector<std::vector<double>> box_deltas;

  double logit(int level, int row, int col, int anchor, int cls) const;
  double score(int level, int row, int col, int anchor, int cls) const;
  Deltas deltas(int level, int row, int col, int anchor) const;
};

template <typename T>
DenseHeadValues snapshot(const Tape<T>& tape, const DenseHeadOutput& out, int num_anchors,
                         int num_classes);

/// RetinaNet-style class-aware head shared across levels: one 3x3 conv tower
/// then separate 3x3 classification and regression convs.
template <typename T>
class DenseHead {
 public:
  DenseHead() = default;
  DenseHead(const RpnConfig& config, int in_channels, std::mt19937_64& rng);

  DenseHeadOutput forward(Tape<T>& tape, const FeaturePyramid& pyramid);
  void collect(nn::ParameterList<T>& out);

 private:
  nn::Conv2d<T> tower_;
  nn::Conv2d<T> cls_;
  nn::Conv2d<T> reg_;
};

/// Anchors for every level, each laid out [H][W][n].
struct AnchorSet {
  std::vector<LevelShape> levels;
  std::vector<std::vector<Box>> per_level;
  int anchors_per_cell = 0;

  const Box& at(int level, int row, int col, int anchor) const;
  std::size_t total() const;
};

AnchorSet make_anchors(const std::vector<LevelShape>& levels, const AnchorSpec& spec);
std::vector<LevelShape> pyramid_shapes(int padded_height, int padded_width);

struct Cell {
  int row = 0;
  int col = 0;
  friend bool operator==(const Cell&, const Cell&) = default;
};

struct Proposal {
  Box box;  // class_id is the group's class
  double score = 0.0;
  int level = 0;  // index into the pyramid (0 = P3)
  int row = 0;
  int col = 0;
  int anchor = 0;
};

/// One instance's proposals: n*k*m raw proposals, pruned to at most 50 by
/// group_nms. `proposals` always holds the current (raw or pruned) set.
struct ProposalGroup {
  int instance_index = 0;
  PointAnnotation point;
  std::vector<Proposal> proposals;
  int group_size_raw = 0;

  /// G, the current group size.
  int size() const { return static_cast<int>(proposals.size()); }
};

/// Continuous projection of a point onto a level: (x / stride, y / stride).
std::pair<double, double> project_point(const PointAnnotation& point, double stride);

/// The k cells whose centers are nearest to the projected location; ties are
/// broken row-major. Returns all cells when k >= H*W.
std::vector<Cell> select_k_cells(std::pair<double, double> projected, int k, int height, int width);

/// One group per point with exactly n*k*m raw proposals (fewer only when a
/// level has fewer than k cells). Scores are read at the point's class.
std::vector<ProposalGroup> build_groups(const std::vector<PointAnnotation>& points,
                                        const DenseHeadValues& head, const AnchorSet& anchors,
                                        int k, double image_width, double image_height,
                                        const Deltas& delta_stds);

/// Pooled NMS over all same-class groups, survivors returned to their origin
/// group, then each group truncated to its top `keep`. A group emptied by NMS
/// gets its best raw proposal back.
std::vector<ProposalGroup> group_nms(std::vector<ProposalGroup> groups, double iou_threshold = 0.7,
                                     int keep = 50);

/// Proposals without grouping: per-level top `pre_nms` candidates over all
/// (anchor, class) pairs, class-wise NMS, then the global top `top_n`.
std::vector<Proposal> ungrouped_proposals(const DenseHeadValues& head, const AnchorSet& anchors,
                                          double image_width, double image_height,
                                          const Deltas& delta_stds, double iou_threshold = 0.7,
                                          int top_n = 1000, int pre_nms = 1000);

/// Max-IoU anchor assignment: >= positive_iou -> index of the matched gt,
/// < negative_iou -> -1 (background), otherwise -2 (ignored).
std::vector<int> assign_anchors(const std::vector<Box>& anchors, const std::vector<Box>& gts,
                                double positive_iou, double negative_iou);

inline constexpr int kBackground = -1;
inline constexpr int kIgnore = -2;

/// Focal classification loss over all anchors plus smooth-L1 on positive
/// anchor deltas, both normalized by max(1, #positives).
template <typename T>
Var rpn_loss(Tape<T>& tape, const DenseHeadOutput& head, const AnchorSet& anchors,
             const std::vector<Box>& ground_truth, const RpnConfig& config);

}  // namespace pointbox
