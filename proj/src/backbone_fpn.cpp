// SPDX-License-Identifier: Apache-2.0
#include "pointbox/backbone_fpn.hpp"

#include <stdexcept>

namespace pointbox {

void BackboneConfig::validate() const {
  for (int w : widths) {
    if (w <= 0 || w % norm_groups != 0) {
      throw std::invalid_argument("backbone widths must be positive multiples of norm_groups");
    }
  }
  if (fpn_channels <= 0) throw std::invalid_argument("fpn_channels must be positive");
}

template <typename T>
Tensor<T> image_to_tensor(const Image& image) {
  if (image.height < kSizeMultiple || image.width < kSizeMultiple) {
    throw std::invalid_argument("image must be at least 128x128 pixels, got " +
                                std::to_string(image.width) + "x" + std::to_string(image.height));
  }
  const int H = (image.height + kSizeMultiple - 1) / kSizeMultiple * kSizeMultiple;
  const int W = (image.width + kSizeMultiple - 1) / kSizeMultiple * kSizeMultiple;
  Tensor<T> t({3, H, W});
  for (int c = 0; c < 3; ++c) {
    for (int y = 0; y < image.height; ++y) {
      for (int x = 0; x < image.width; ++x) {
        const T v = static_cast<T>(image.at(y, x, c)) / T(255);
        t.data[(static_cast<std::size_t>(c) * H + y) * W + x] = (v - T(0.5)) / T(0.25);
      }
    }
  }
  return t;
}

template <typename T>
BackboneFpn<T>::BackboneFpn(const BackboneConfig& config, std::mt19937_64& rng) : config_(config) {
  config_.validate();
  int in = 3;
  for (int s = 0; s < 4; ++s) {
    const std::string name = "backbone.stage" + std::to_string(s + 1);
    stage_conv_[s] = nn::Conv2d<T>(name + ".conv", in, config_.widths[s], 3, s == 0 ? 2 : 1, rng);
    stage_norm_[s] = nn::GroupNorm<T>(name + ".norm", config_.widths[s], config_.norm_groups);
    in = config_.widths[s];
  }
  const int C = config_.fpn_channels;
  for (int l = 0; l < 3; ++l) {
    const std::string name = "fpn.p" + std::to_string(l + 3);
    lateral_[l] = nn::Conv2d<T>(name + ".lateral", config_.widths[l + 1], C, 1, 1, rng,
                                nn::Init::unit_fan_in);
    output_[l] = nn::Conv2d<T>(name + ".output", C, C, 3, 1, rng, nn::Init::unit_fan_in);
  }
  p6_ = nn::Conv2d<T>("fpn.p6", C, C, 3, 2, rng, nn::Init::unit_fan_in);
  p7_ = nn::Conv2d<T>("fpn.p7", C, C, 3, 2, rng, nn::Init::unit_fan_in);
}

template <typename T>
FeaturePyramid BackboneFpn<T>::forward(Tape<T>& tape, Var image) {
  const auto& shape = tape.shape(image);
  if (shape.size() != 3 || shape[1] % kSizeMultiple != 0 || shape[2] % kSizeMultiple != 0) {
    throw std::invalid_argument("backbone input must be [3,H,W] with H,W multiples of 128");
  }
  std::array<Var, 4> c;
  Var x = image;
  for (int s = 0; s < 4; ++s) {
    x = stage_conv_[s](tape, x);
    x = stage_norm_[s](tape, x);
    x = nn::relu(tape, x);
    x = nn::max_pool2x2(tape, x);
    c[s] = x;
  }
  // c[1], c[2], c[3] are at strides 8, 16, 32.
  Var top = lateral_[2](tape, c[3]);
  std::array<Var, 3> merged;
  merged[2] = top;
  for (int l = 1; l >= 0; --l) {
    Var lat = lateral_[l](tape, c[l + 1]);
    const auto& ls = tape.shape(lat);
    merged[l] = nn::add(tape, lat, nn::upsample_nearest(tape, merged[l + 1], ls[1], ls[2]));
  }
  FeaturePyramid out;
  for (int l = 0; l < 3; ++l) out.levels.push_back(output_[l](tape, merged[l]));
  Var p6 = p6_(tape, out.levels[2]);
  out.levels.push_back(p6);
  out.levels.push_back(p7_(tape, nn::relu(tape, p6)));
  for (int l = 0; l < kNumLevels; ++l) out.strides.push_back(level_stride(kFirstLevel + l));
  return out;
}

template <typename T>
void BackboneFpn<T>::collect(nn::ParameterList<T>& out) {
  for (int s = 0; s < 4; ++s) {
    stage_conv_[s].collect(out);
    stage_norm_[s].collect(out);
  }
  for (int l = 0; l < 3; ++l) {
    lateral_[l].collect(out);
    output_[l].collect(out);
  }
  p6_.collect(out);
  p7_.collect(out);
}

template <typename T>
RoiProjection<T>::RoiProjection(int channels, int num_layers, std::mt19937_64& rng) {
  if (num_layers < 0 || num_layers > 3) {
    throw std::invalid_argument("num_projection_layers must be in {0,1,2,3}");
  }
  for (int i = 0; i < num_layers; ++i) {
    layers_.emplace_back("roi_projection." + std::to_string(i), channels, channels, 3, 1, rng);
  }
}

template <typename T>
ProjectedPyramid RoiProjection<T>::forward(Tape<T>& tape, const FeaturePyramid& pyramid,
                                           bool detach) {
  ProjectedPyramid out;
  for (int l = 0; l < kNumRoiLevels && l < pyramid.num_levels(); ++l) {
    Var x = detach ? nn::detach(tape, pyramid.levels[l]) : pyramid.levels[l];
    for (auto& layer : layers_) x = nn::relu(tape, layer(tape, x));
    out.levels.push_back(x);
    out.strides.push_back(pyramid.strides[l]);
  }
  return out;
}

template <typename T>
void RoiProjection<T>::collect(nn::ParameterList<T>& out) {
  for (auto& layer : layers_) layer.collect(out);
}

template <typename T>
FeaturePyramid forward_backbone(Tape<T>& tape, BackboneFpn<T>& net, const Image& image) {
  return net.forward(tape, tape.constant(image_to_tensor<T>(image)));
}

template <typename T>
ProjectedPyramid project_for_roi(Tape<T>& tape, RoiProjection<T>& projection,
                                 const FeaturePyramid& pyramid, bool detach) {
  return projection.forward(tape, pyramid, detach);
}

#define POINTBOX_INSTANTIATE_BACKBONE(T)                                                   \
  template Tensor<T> image_to_tensor<T>(const Image&);                                     \
  template class BackboneFpn<T>;                                                           \
  template class RoiProjection<T>;                                                         \
  template FeaturePyramid forward_backbone<T>(Tape<T>&, BackboneFpn<T>&, const Image&);    \
  template ProjectedPyramid project_for_roi<T>(Tape<T>&, RoiProjection<T>&,                \
                                               const FeaturePyramid&, bool);

POINTBOX_INSTANTIATE_BACKBONE(float)
POINTBOX_INSTANTIATE_BACKBONE(double)

}  // namespace pointbox
