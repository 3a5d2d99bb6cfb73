// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <vector>

#include "pointbox/nn/layers.hpp"
#include "pointbox/synthdata.hpp"

namespace pointbox {

using nn::Tape;
using nn::Tensor;
using nn::Var;

inline constexpr int kFirstLevel = 3;
inline constexpr int kNumLevels = 5;       // P3..P7
inline constexpr int kNumRoiLevels = 4;    // P3..P6
inline constexpr int kSizeMultiple = 128;  // stride of P7

inline constexpr int level_stride(int level) { return 1 << level; }

struct BackboneConfig {
  std::array<int, 4> widths = {16, 32, 64, 128};
  int fpn_channels = 64;
  int norm_groups = 8;

  void validate() const;
};

/// Per-level feature maps P3..P7, each [C_feat, ceil(H/stride), ceil(W/stride)].
struct FeaturePyramid {
  std::vector<Var> levels;
  std::vector<int> strides;

  /// Number of levels m used by proposal grouping.
  int num_levels() const { return static_cast<int>(levels.size()); }
};

/// Levels P3..P6 as seen by the RoI branch.
struct ProjectedPyramid {
  std::vector<Var> levels;
  std::vector<int> strides;
};

/// Converts an 8-bit image to a normalized [3,H,W] tensor, zero-padded on the
/// bottom/right to a multiple of 128. Throws if either side is under 128 px.
template <typename T>
Tensor<T> image_to_tensor(const Image& image);

/// Four conv stages (conv3x3, group norm, ReLU, 2x2 max-pool; the first conv
/// has stride 2) followed by a top-down FPN. P6 and P7 come from stride-2
/// convolutions on P5 and relu(P6).
template <typename T>
class BackboneFpn {
 public:
  BackboneFpn() = default;
  BackboneFpn(const BackboneConfig& config, std::mt19937_64& rng);

  FeaturePyramid forward(Tape<T>& tape, Var image);
  void collect(nn::ParameterList<T>& out);
  const BackboneConfig& config() const { return config_; }

 private:
  BackboneConfig config_;
  std::array<nn::Conv2d<T>, 4> stage_conv_;
  std::array<nn::GroupNorm<T>, 4> stage_norm_;
  std::array<nn::Conv2d<T>, 3> lateral_;
  std::array<nn::Conv2d<T>, 3> output_;
  nn::Conv2d<T> p6_;
  nn::Conv2d<T> p7_;
};

/// 3x3 conv + ReLU layers applied to P3..P6 with weights shared across levels.
/// With detach on, the pyramid is cut from the graph before projection.
template <typename T>
class RoiProjection {
 public:
  RoiProjection() = default;
  RoiProjection(int channels, int num_layers, std::mt19937_64& rng);

  ProjectedPyramid forward(Tape<T>& tape, const FeaturePyramid& pyramid, bool detach);
  int num_layers() const { return static_cast<int>(layers_.size()); }
  void collect(nn::ParameterList<T>& out);

 private:
  std::vector<nn::Conv2d<T>> layers_;
};

/// Convenience wrappers matching the module's operation names.
template <typename T>
FeaturePyramid forward_backbone(Tape<T>& tape, BackboneFpn<T>& net, const Image& image);
template <typename T>
ProjectedPyramid project_for_roi(Tape<T>& tape, RoiProjection<T>& projection,
                                 const FeaturePyramid& pyramid, bool detach = true);

}  // namespace pointbox
