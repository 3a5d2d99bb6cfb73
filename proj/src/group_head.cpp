// SPDX-License-Identifier: Apache-2.0
#include "pointbox/group_head.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace pointbox {

namespace {

constexpr int kBins = kRoiSize * kRoiSize;
constexpr int kTaps = kRoiSamples * kRoiSamples * 4;

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

void require(bool ok, const char* what) {
  if (!ok) throw std::invalid_argument(what);
}

}  // namespace

int map_roi_to_level(const Box& box) {
  const double area = box.area();
  if (!(area > 0.0)) return 3;
  const int level = static_cast<int>(std::floor(4.0 + std::log2(std::sqrt(area) / 56.0)));
  return std::clamp(level, 3, 6);
}

RoiAlignPlan plan_roi_align(const Box& box, int stride, int height, int width) {
  RoiAlignPlan plan;
  plan.height = height;
  plan.width = width;
  plan.offsets.assign(kBins * kTaps, 0);
  plan.weights.assign(kBins * kTaps, 0.0);
  const double s = stride;
  const double x0 = box.x1 / s - 0.5;
  const double y0 = box.y1 / s - 0.5;
  const double bin_w = (box.x2 - box.x1) / s / kRoiSize;
  const double bin_h = (box.y2 - box.y1) / s / kRoiSize;
  const double norm = 1.0 / (kRoiSamples * kRoiSamples);

  for (int ph = 0; ph < kRoiSize; ++ph) {
    for (int pw = 0; pw < kRoiSize; ++pw) {
      int tap = (ph * kRoiSize + pw) * kTaps;
      for (int iy = 0; iy < kRoiSamples; ++iy) {
        double y = y0 + ph * bin_h + (iy + 0.5) * bin_h / kRoiSamples;
        for (int ix = 0; ix < kRoiSamples; ++ix, tap += 4) {
          double x = x0 + pw * bin_w + (ix + 0.5) * bin_w / kRoiSamples;
          if (y < -1.0 || y > height || x < -1.0 || x > width) continue;
          y = std::max(y, 0.0);
          x = std::max(x, 0.0);
          int yl = static_cast<int>(y), xl = static_cast<int>(x);
          int yh, xh;
          double yy = y, xx = x;
          if (yl >= height - 1) {
            yl = yh = height - 1;
            yy = yl;
          } else {
            yh = yl + 1;
          }
          if (xl >= width - 1) {
            xl = xh = width - 1;
            xx = xl;
          } else {
            xh = xl + 1;
          }
          const double ly = yy - yl, lx = xx - xl, hy = 1.0 - ly, hx = 1.0 - lx;
          plan.offsets[tap + 0] = yl * width + xl;
          plan.offsets[tap + 1] = yl * width + xh;
          plan.offsets[tap + 2] = yh * width + xl;
          plan.offsets[tap + 3] = yh * width + xh;
          plan.weights[tap + 0] = hy * hx * norm;
          plan.weights[tap + 1] = hy * lx * norm;
          plan.weights[tap + 2] = ly * hx * norm;
          plan.weights[tap + 3] = ly * lx * norm;
        }
      }
    }
  }
  return plan;
}

namespace {

// out[c, bin] = sum of weighted taps of plane c.
template <typename T>
void apply_plan(const RoiAlignPlan& plan, const T* feature, int channels, T* out) {
  const std::size_t plane = static_cast<std::size_t>(plan.height) * plan.width;
  for (int c = 0; c < channels; ++c) {
    const T* f = feature + c * plane;
    for (int b = 0; b < kBins; ++b) {
      double acc = 0.0;
      for (int t = b * kTaps; t < (b + 1) * kTaps; ++t) acc += plan.weights[t] * f[plan.offsets[t]];
      out[c * kBins + b] = static_cast<T>(acc);
    }
  }
}

template <typename T>
void scatter_plan(const RoiAlignPlan& plan, const T* grad_out, int channels, T* grad_feature) {
  const std::size_t plane = static_cast<std::size_t>(plan.height) * plan.width;
  for (int c = 0; c < channels; ++c) {
    T* g = grad_feature + c * plane;
    for (int b = 0; b < kBins; ++b) {
      const T go = grad_out[c * kBins + b];
      if (go == T(0)) continue;
      for (int t = b * kTaps; t < (b + 1) * kTaps; ++t) {
        g[plan.offsets[t]] += static_cast<T>(plan.weights[t]) * go;
      }
    }
  }
}

}  // namespace

template <typename T>
Tensor<T> roi_align(const Tensor<T>& feature, const Box& box, int stride) {
  require(feature.rank() == 3, "roi_align: feature must be [C,H,W]");
  const int C = feature.dim(0);
  const RoiAlignPlan plan = plan_roi_align(box, stride, feature.dim(1), feature.dim(2));
  Tensor<T> out({C, kRoiSize, kRoiSize});
  apply_plan(plan, feature.ptr(), C, out.ptr());
  return out;
}

template <typename T>
Var roi_align_levels(Tape<T>& tape, const std::vector<Var>& levels, const std::vector<int>& strides,
                     const std::vector<Box>& boxes, const std::vector<int>& level_index) {
  require(levels.size() == strides.size() && !levels.empty(), "roi_align_levels: level mismatch");
  require(boxes.size() == level_index.size(), "roi_align_levels: one level per box required");
  const int C = tape.value(levels[0]).dim(0);
  const int R = static_cast<int>(boxes.size());
  std::vector<RoiAlignPlan> plans;
  plans.reserve(R);
  Tensor<T> out({R, C, kRoiSize, kRoiSize});
  for (int r = 0; r < R; ++r) {
    const int l = level_index[r];
    require(l >= 0 && l < static_cast<int>(levels.size()), "roi_align_levels: bad level index");
    const Tensor<T>& f = tape.value(levels[l]);
    require(f.dim(0) == C, "roi_align_levels: channel count differs across levels");
    plans.push_back(plan_roi_align(boxes[r], strides[l], f.dim(1), f.dim(2)));
    apply_plan(plans.back(), f.ptr(), C, out.ptr() + static_cast<std::size_t>(r) * C * kBins);
  }
  return tape.record(std::move(out), std::span<const Var>(levels),
                     [levels, level_index, plans = std::move(plans), C](Tape<T>& t,
                                                                        const Tensor<T>& g) {
                       for (std::size_t r = 0; r < plans.size(); ++r) {
                         const Var src = levels[level_index[r]];
                         if (!t.requires_grad(src)) continue;
                         scatter_plan(plans[r], g.ptr() + r * C * kBins, C, t.grad(src).ptr());
                       }
                     });
}

template <typename T>
std::vector<Tensor<T>> build_relative_coords(const PointAnnotation& point,
                                             const std::vector<LevelShape>& levels,
                                             double image_width, double image_height) {
  std::vector<Tensor<T>> maps;
  for (const LevelShape& s : levels) {
    Tensor<T> m({2, s.height, s.width});
    const std::size_t plane = static_cast<std::size_t>(s.height) * s.width;
    for (int r = 0; r < s.height; ++r) {
      const double dy = std::clamp(((r + 0.5) * s.stride - point.y) / image_height, -1.0, 1.0);
      for (int c = 0; c < s.width; ++c) {
        const double dx = std::clamp(((c + 0.5) * s.stride - point.x) / image_width, -1.0, 1.0);
        m.data[r * s.width + c] = static_cast<T>(dx);
        m.data[plane + r * s.width + c] = static_cast<T>(dy);
      }
    }
    maps.push_back(std::move(m));
  }
  return maps;
}

AssignResult vanilla_assign(const std::vector<Box>& proposals, const std::vector<Box>& gts, int cls,
                            double iou_threshold) {
  require(iou_threshold > 0.0 && iou_threshold < 1.0, "iou_threshold must be in (0,1)");
  AssignResult res{std::vector<bool>(proposals.size(), false),
                   std::vector<int>(proposals.size(), -1)};
  for (std::size_t i = 0; i < proposals.size(); ++i) {
    double best = -1.0;
    int arg = -1;
    for (std::size_t g = 0; g < gts.size(); ++g) {
      if (gts[g].class_id != cls) continue;
      const double v = iou(proposals[i], gts[g]);
      if (v > best) {
        best = v;
        arg = static_cast<int>(g);
      }
    }
    if (arg >= 0 && best >= iou_threshold) {
      res.positive[i] = true;
      res.matched_gt[i] = arg;
    }
  }
  return res;
}

AssignResult instance_assign(const std::vector<Box>& proposals, const Box& own_gt, int own_index,
                             double iou_threshold) {
  require(iou_threshold > 0.0 && iou_threshold <= 1.0, "iou_threshold must be in (0,1]");
  AssignResult res{std::vector<bool>(proposals.size(), false),
                   std::vector<int>(proposals.size(), -1)};
  for (std::size_t i = 0; i < proposals.size(); ++i) {
    if (iou(proposals[i], own_gt) >= iou_threshold) {
      res.positive[i] = true;
      res.matched_gt[i] = own_index;
    }
  }
  return res;
}

const char* to_string(DynamicConvMode mode) {
  switch (mode) {
    case DynamicConvMode::off: return "off";
    case DynamicConvMode::roi_only: return "roi_only";
    case DynamicConvMode::embed_only: return "embed_only";
    case DynamicConvMode::both: return "both";
  }
  return "?";
}

DynamicConvMode dynamic_conv_mode_from_string(const std::string& s) {
  if (s == "off") return DynamicConvMode::off;
  if (s == "roi_only") return DynamicConvMode::roi_only;
  if (s == "embed_only") return DynamicConvMode::embed_only;
  if (s == "both") return DynamicConvMode::both;
  throw std::invalid_argument("dynamic_conv must be one of off|roi_only|embed_only|both, got '" + s +
                              "'");
}

const char* to_string(AssignMode mode) {
  return mode == AssignMode::vanilla ? "vanilla" : "instance";
}

AssignMode assign_mode_from_string(const std::string& s) {
  if (s == "vanilla") return AssignMode::vanilla;
  if (s == "instance") return AssignMode::instance;
  throw std::invalid_argument("assignment must be vanilla or instance, got '" + s + "'");
}

int generator_input_dim(DynamicConvMode mode, int roi_channels) {
  switch (mode) {
    case DynamicConvMode::off: return 0;
    case DynamicConvMode::roi_only: return roi_channels;
    case DynamicConvMode::embed_only: return kEmbeddingDim;
    case DynamicConvMode::both: return roi_channels + kEmbeddingDim;
  }
  return 0;
}

template <typename T>
Var generate_dynamic_kernel(Tape<T>& tape, Var roi_features, const std::vector<int>& offsets,
                            const std::vector<int>& class_ids, Var embedding,
                            nn::Linear<T>& generator, DynamicConvMode mode) {
  require(mode != DynamicConvMode::off, "generate_dynamic_kernel: dynamic conv is off");
  require(offsets.size() == class_ids.size() + 1, "generate_dynamic_kernel: one class per group");
  Var input;
  if (mode != DynamicConvMode::embed_only) {
    Var pooled = nn::mean_trailing(tape, roi_features);
    input = nn::segment_mean(tape, pooled, offsets);
  }
  if (mode != DynamicConvMode::roi_only) {
    Var emb = nn::gather_rows(tape, embedding, class_ids);
    input = input.valid() ? nn::concat(tape, {input, emb}) : emb;
  }
  return generator(tape, input);
}

template <typename T>
Var dynamic_group_conv(Tape<T>& tape, Var features, Var kernels, const std::vector<int>& offsets,
                       int out_channels) {
  const Tensor<T>& x = tape.value(features);
  const Tensor<T>& k = tape.value(kernels);
  require(x.rank() >= 2, "dynamic_group_conv: features must be [R,C,...]");
  const int R = x.dim(0);
  const int Cin = x.dim(1);
  const int S = static_cast<int>(x.numel() / std::max<std::size_t>(1, static_cast<std::size_t>(R) * Cin));
  const int N = static_cast<int>(offsets.size()) - 1;
  require(N >= 0 && offsets.front() == 0 && offsets.back() == R,
          "dynamic_group_conv: offsets do not cover the rows");
  require(k.rank() == 2 && k.dim(0) == N, "dynamic_group_conv: one kernel per group required");
  if (k.dim(1) != out_channels * Cin) {
    throw std::invalid_argument("dynamic_group_conv: kernel expects " +
                                std::to_string(k.dim(1) / std::max(1, out_channels)) +
                                " input channels, features have " + std::to_string(Cin));
  }
  std::vector<int> shape = x.shape;
  shape[1] = out_channels;
  Tensor<T> out(shape);
  using CMap = Eigen::Map<const RowMat<T>>;
  using Map = Eigen::Map<RowMat<T>>;
  for (int g = 0; g < N; ++g) {
    CMap P(k.ptr() + static_cast<std::size_t>(g) * out_channels * Cin, out_channels, Cin);
    for (int r = offsets[g]; r < offsets[g + 1]; ++r) {
      CMap in(x.ptr() + static_cast<std::size_t>(r) * Cin * S, Cin, S);
      Map o(out.ptr() + static_cast<std::size_t>(r) * out_channels * S, out_channels, S);
      o.noalias() = P * in;
    }
  }
  return tape.record(std::move(out), {features, kernels},
                     [=](Tape<T>& t, const Tensor<T>& grad) {
                       const Tensor<T>& xv = t.value(features);
                       const Tensor<T>& kv = t.value(kernels);
                       const bool gx = t.requires_grad(features);
                       const bool gk = t.requires_grad(kernels);
                       for (int g = 0; g < N; ++g) {
                         const std::size_t koff = static_cast<std::size_t>(g) * out_channels * Cin;
                         CMap P(kv.ptr() + koff, out_channels, Cin);
                         for (int r = offsets[g]; r < offsets[g + 1]; ++r) {
                           CMap go(grad.ptr() + static_cast<std::size_t>(r) * out_channels * S,
                                   out_channels, S);
                           if (gx) {
                             Map dx(t.grad(features).ptr() + static_cast<std::size_t>(r) * Cin * S,
                                    Cin, S);
                             dx.noalias() += P.transpose() * go;
                           }
                           if (gk) {
                             CMap in(xv.ptr() + static_cast<std::size_t>(r) * Cin * S, Cin, S);
                             Map dk(t.grad(kernels).ptr() + koff, out_channels, Cin);
                             dk.noalias() += go * in.transpose();
                           }
                         }
                       }
                     });
}

template <typename T>
CascadeHead<T>::CascadeHead(const HeadConfig& config, std::mt19937_64& rng) : config_(config) {
  const int C = config_.roi_channels();
  embedding_ = Parameter<T>("head.class_embedding", Tensor<T>({config_.num_classes, kEmbeddingDim}));
  nn::initialize(embedding_.value, nn::Init::small_normal, kEmbeddingDim, rng, 1.0);
  const int gen_in = generator_input_dim(config_.dynamic_conv, C);
  for (int s = 0; s < kNumStages; ++s) {
    const std::string name = "head.stage" + std::to_string(s + 1);
    CascadeStage<T>& st = stages_[s];
    if (gen_in > 0) {
      // Starts near the identity so the stage begins as a plain FC head.
      st.generator = nn::Linear<T>(name + ".generator", gen_in, C * C, rng, nn::Init::small_normal,
                                   1e-3);
      for (int i = 0; i < C; ++i) st.generator.bias.value.data[i * C + i] = T(1);
    }
    st.fc1 = nn::Linear<T>(name + ".fc1", C * kBins, config_.hidden, rng);
    st.fc2 = nn::Linear<T>(name + ".fc2", config_.hidden, config_.hidden, rng);
    st.cls = nn::Linear<T>(name + ".cls", config_.hidden, 1, rng, nn::Init::small_normal, 0.01);
    st.reg = nn::Linear<T>(name + ".reg", config_.hidden, 4, rng, nn::Init::small_normal, 0.001);
  }
}

template <typename T>
Var CascadeHead<T>::pool(Tape<T>& tape, const ProjectedPyramid& pyramid,
                         const std::vector<LevelShape>& levels,
                         const std::vector<ProposalGroup>& groups, const std::vector<Box>& boxes,
                         const std::vector<int>& offsets, double image_width, double image_height) {
  std::vector<int> level_index(boxes.size());
  for (std::size_t r = 0; r < boxes.size(); ++r) level_index[r] = map_roi_to_level(boxes[r]) - kFirstLevel;
  Var feats = roi_align_levels(tape, pyramid.levels, pyramid.strides, boxes, level_index);
  if (!config_.relative_coords) return feats;

  const int R = static_cast<int>(boxes.size());
  Tensor<T> coords({R, 2, kRoiSize, kRoiSize});
  const std::vector<LevelShape> roi_levels(levels.begin(), levels.begin() + pyramid.levels.size());
  for (std::size_t g = 0; g < groups.size(); ++g) {
    const auto maps = build_relative_coords<T>(groups[g].point, roi_levels, image_width, image_height);
    for (int r = offsets[g]; r < offsets[g + 1]; ++r) {
      const LevelShape& s = roi_levels[level_index[r]];
      const RoiAlignPlan plan = plan_roi_align(boxes[r], s.stride, s.height, s.width);
      apply_plan(plan, maps[level_index[r]].ptr(), 2, coords.ptr() + static_cast<std::size_t>(r) * 2 * kBins);
    }
  }
  return nn::concat(tape, {feats, tape.constant(std::move(coords))});
}

template <typename T>
Var CascadeHead<T>::tower(Tape<T>& tape, CascadeStage<T>& stage, Var x) {
  const auto& s = tape.shape(x);
  Var flat = nn::reshape(tape, x, {s[0], s[1] * kBins});
  Var h = nn::relu(tape, stage.fc1(tape, flat));
  return nn::relu(tape, stage.fc2(tape, h));
}

template <typename T>
CascadeOutput CascadeHead<T>::forward(Tape<T>& tape, const ProjectedPyramid& pyramid,
                                      const std::vector<LevelShape>& levels,
                                      const std::vector<ProposalGroup>& groups, double image_width,
                                      double image_height, CascadeRouting* routing) {
  CascadeOutput out;
  out.offsets.push_back(0);
  std::vector<Box> boxes;
  for (const ProposalGroup& g : groups) {
    require(g.size() > 0, "cascade_forward: empty group");
    for (const Proposal& p : g.proposals) boxes.push_back(p.box);
    out.offsets.push_back(static_cast<int>(boxes.size()));
    out.group_class.push_back(g.point.class_id);
  }
  const bool replay = routing && routing->recorded;
  if (routing && !replay) routing->groups = groups;
  if (groups.empty()) return out;

  Var table = tape.parameter(embedding_);
  for (int s = 0; s < kNumStages; ++s) {
    if (replay) {
      boxes = routing->stage_inputs[s];
    } else if (routing) {
      routing->stage_inputs[s] = boxes;
    }
    CascadeStage<T>& st = stages_[s];
    Var x = pool(tape, pyramid, levels, groups, boxes, out.offsets, image_width, image_height);
    Var cls_feat, reg_feat;
    if (config_.dynamic_conv == DynamicConvMode::off) {
      cls_feat = reg_feat = tower(tape, st, x);
    } else {
      Var kernel = generate_dynamic_kernel(tape, x, out.offsets, out.group_class, table, st.generator,
                                           config_.dynamic_conv);
      Var xd = dynamic_group_conv(tape, x, kernel, out.offsets, config_.roi_channels());
      cls_feat = tower(tape, st, xd);
      reg_feat = config_.dynamic_conv_scope == DynamicConvScope::both_branches ? cls_feat
                                                                               : tower(tape, st, x);
    }
    StageOutput so;
    so.cls_logits = st.cls(tape, cls_feat);
    so.deltas = st.reg(tape, reg_feat);
    so.input_boxes = boxes;
    const Tensor<T>& d = tape.value(so.deltas);
    so.refined_boxes.reserve(boxes.size());
    for (std::size_t r = 0; r < boxes.size(); ++r) {
      Deltas dl;
      for (int k = 0; k < 4; ++k) dl[k] = static_cast<double>(d.data[r * 4 + k]);
      Box b = decode_deltas(boxes[r], dl, config_.stage_stds[s]).clipped(image_width, image_height);
      b.class_id = boxes[r].class_id;
      so.refined_boxes.push_back(b);
    }
    boxes = so.refined_boxes;
    out.stages.push_back(std::move(so));
  }
  if (routing) routing->recorded = true;
  return out;
}

template <typename T>
void CascadeHead<T>::collect(nn::ParameterList<T>& out) {
  out.push_back(&embedding_);
  for (auto& st : stages_) {
    if (config_.dynamic_conv != DynamicConvMode::off) st.generator.collect(out);
    st.fc1.collect(out);
    st.fc2.collect(out);
    st.cls.collect(out);
    st.reg.collect(out);
  }
}

std::vector<AssignResult> assign_stage(const CascadeOutput& out, int stage,
                                       const std::vector<Box>& gts, const std::vector<int>& own_gt,
                                       AssignMode mode, double iou_threshold) {
  const std::vector<Box>& boxes = out.stages.at(stage).input_boxes;
  const std::size_t N = out.offsets.size() - 1;
  require(own_gt.size() == N, "assign_stage: one gt index per group required");
  std::vector<AssignResult> results;
  for (std::size_t g = 0; g < N; ++g) {
    std::vector<Box> props(boxes.begin() + out.offsets[g], boxes.begin() + out.offsets[g + 1]);
    if (mode == AssignMode::instance) {
      require(own_gt[g] >= 0 && own_gt[g] < static_cast<int>(gts.size()),
              "instance assignment needs the group's gt box");
      results.push_back(instance_assign(props, gts[own_gt[g]], own_gt[g], iou_threshold));
    } else {
      results.push_back(vanilla_assign(props, gts, out.group_class[g], iou_threshold));
    }
  }
  return results;
}

template <typename T>
Var rcnn_loss(Tape<T>& tape, const CascadeOutput& out, const std::vector<Box>& gts,
              const std::vector<int>& own_gt, AssignMode mode, const HeadConfig& config) {
  Var total;
  for (int s = 0; s < static_cast<int>(out.stages.size()); ++s) {
    const StageOutput& so = out.stages[s];
    const auto assigned = assign_stage(out, s, gts, own_gt, mode, config.iou_thresholds[s]);
    const std::size_t R = so.input_boxes.size();
    std::vector<T> labels(R, T(0));
    std::vector<T> reg_targets(R * 4, T(0));
    std::vector<T> reg_weights(R * 4, T(0));
    bool any_pos = false;
    for (std::size_t g = 0; g + 1 < out.offsets.size(); ++g) {
      for (int r = out.offsets[g]; r < out.offsets[g + 1]; ++r) {
        const int j = r - out.offsets[g];
        if (!assigned[g].positive[j]) continue;
        any_pos = true;
        labels[r] = T(1);
        const Deltas t = encode_deltas(so.input_boxes[r], gts[assigned[g].matched_gt[j]],
                                       config.stage_stds[s]);
        for (int k = 0; k < 4; ++k) {
          reg_targets[r * 4 + k] = static_cast<T>(t[k]);
          reg_weights[r * 4 + k] = T(1);
        }
      }
    }
    const T norm = static_cast<T>(std::max<std::size_t>(1, R));
    Var stage_loss = nn::bce_with_logits(tape, so.cls_logits, labels, norm);
    if (any_pos) {
      stage_loss = nn::add(tape, stage_loss,
                           nn::smooth_l1_loss(tape, so.deltas, reg_targets, reg_weights,
                                              static_cast<T>(config.smooth_l1_beta), norm));
    }
    if (config.stage_weights[s] != 1.0) {
      stage_loss = nn::scale(tape, stage_loss, static_cast<T>(config.stage_weights[s]));
    }
    total = total.valid() ? nn::add(tape, total, stage_loss) : stage_loss;
  }
  return total;
}

#define POINTBOX_INSTANTIATE_HEAD(T)                                                             \
  template Tensor<T> roi_align<T>(const Tensor<T>&, const Box&, int);                            \
  template Var roi_align_levels<T>(Tape<T>&, const std::vector<Var>&, const std::vector<int>&,   \
                                   const std::vector<Box>&, const std::vector<int>&);            \
  template std::vector<Tensor<T>> build_relative_coords<T>(                                      \
      const PointAnnotation&, const std::vector<LevelShape>&, double, double);                   \
  template Var generate_dynamic_kernel<T>(Tape<T>&, Var, const std::vector<int>&,                \
                                          const std::vector<int>&, Var, nn::Linear<T>&,          \
                                          DynamicConvMode);                                      \
  template Var dynamic_group_conv<T>(Tape<T>&, Var, Var, const std::vector<int>&, int);          \
  template class CascadeHead<T>;                                                                 \
  template Var rcnn_loss<T>(Tape<T>&, const CascadeOutput&, const std::vector<Box>&,             \
                            const std::vector<int>&, AssignMode, const HeadConfig&);

POINTBOX_INSTANTIATE_HEAD(float)
POINTBOX_INSTANTIATE_HEAD(double)

}  // namespace pointbox
