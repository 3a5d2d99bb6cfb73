// SPDX-License-Identifier: Apache-2.0
#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>

#include "pointbox/pipeline.hpp"

namespace pointbox {

void ModelConfig::validate() const {
  backbone.validate();
  rpn.anchors.validate();
  if (k < 1) throw std::invalid_argument("model.k must be >= 1");
  if (num_projection_layers < 0 || num_projection_layers > 3) {
    throw std::invalid_argument("model.num_projection_layers must be in {0,1,2,3}");
  }
  if (rpn.num_classes < 1) throw std::invalid_argument("model.num_classes must be >= 1");
  if (head.hidden < 1) throw std::invalid_argument("model.hidden must be >= 1");
  if (!(group_nms_iou > 0.0 && group_nms_iou <= 1.0) || !(final_nms_iou > 0.0 && final_nms_iou <= 1.0)) {
    throw std::invalid_argument("NMS thresholds must be in (0,1]");
  }
  if (group_keep < 1) throw std::invalid_argument("model.group_keep must be >= 1");
}

namespace {
ModelConfig synced(ModelConfig c) {
  c.head.num_classes = c.rpn.num_classes;
  c.head.feature_channels = c.backbone.fpn_channels;
  return c;
}
}  // namespace

template <typename T>
GroupRcnn<T>::GroupRcnn(const ModelConfig& config, std::uint64_t seed) : config_(synced(config)) {
  config_.validate();
  Rng rng(seed);
  backbone_ = BackboneFpn<T>(config_.backbone, rng);
  rpn_ = DenseHead<T>(config_.rpn, config_.backbone.fpn_channels, rng);
  projection_ = RoiProjection<T>(config_.backbone.fpn_channels, config_.num_projection_layers, rng);
  head_ = CascadeHead<T>(config_.head, rng);
  backbone_.collect(params_);
  rpn_.collect(params_);
  projection_.collect(params_);
  head_.collect(params_);
}

template <typename T>
const AnchorSet& GroupRcnn<T>::anchors_for(int padded_h, int padded_w) {
  auto key = std::make_pair(padded_h, padded_w);
  auto it = anchor_cache_.find(key);
  if (it == anchor_cache_.end()) {
    it = anchor_cache_.emplace(key, make_anchors(pyramid_shapes(padded_h, padded_w), config_.rpn.anchors))
             .first;
  }
  return it->second;
}

template <typename T>
typename GroupRcnn<T>::Losses GroupRcnn<T>::loss(Tape<T>& tape, const Image& image,
                                                 const std::vector<Box>& gts,
                                                 const std::vector<PointAnnotation>& points,
                                                 CascadeRouting* routing) {
  if (points.size() != gts.size()) throw std::invalid_argument("loss: one point per gt box required");
  Tensor<T> input = image_to_tensor<T>(image);
  const AnchorSet& anchors = anchors_for(input.dim(1), input.dim(2));
  const FeaturePyramid pyramid = backbone_.forward(tape, tape.constant(std::move(input)));
  const DenseHeadOutput dense = rpn_.forward(tape, pyramid);

  Losses out;
  Var rpn_l = rpn_loss(tape, dense, anchors, gts, config_.rpn);
  out.rpn = static_cast<double>(tape.value(rpn_l).data[0]);
  out.total = rpn_l;
  if (points.empty()) return out;

  const double W = image.width, H = image.height;
  std::vector<ProposalGroup> groups;
  if (routing && routing->recorded) {
    groups = routing->groups;
  } else {
    const DenseHeadValues values =
        snapshot(tape, dense, anchors.anchors_per_cell, config_.rpn.num_classes);
    groups = group_nms(build_groups(points, values, anchors, config_.k, W, H, config_.rpn.delta_stds),
                       config_.group_nms_iou, config_.group_keep);
  }
  const ProjectedPyramid projected = projection_.forward(tape, pyramid, config_.detach);
  const CascadeOutput cascade = head_.forward(tape, projected, dense.levels, groups, W, H, routing);
  std::vector<int> own(groups.size());
  for (std::size_t g = 0; g < groups.size(); ++g) own[g] = groups[g].instance_index;
  Var rcnn_l = rcnn_loss(tape, cascade, gts, own, config_.assignment, config_.head);
  out.rcnn = static_cast<double>(tape.value(rcnn_l).data[0]);
  out.total = nn::add(tape, rpn_l, rcnn_l);
  return out;
}

template <typename T>
std::vector<Box> GroupRcnn<T>::infer(const Image& image, const std::vector<PointAnnotation>& points,
                                     std::vector<double>* scores) {
  for (const PointAnnotation& p : points) {
    if (!(p.x >= 0.0 && p.x < image.width && p.y >= 0.0 && p.y < image.height)) {
      throw std::invalid_argument("point (" + std::to_string(p.x) + ", " + std::to_string(p.y) +
                                  ") is outside the " + std::to_string(image.width) + "x" +
                                  std::to_string(image.height) + " image");
    }
    if (p.class_id < 0 || p.class_id >= config_.rpn.num_classes) {
      throw std::invalid_argument("point class " + std::to_string(p.class_id) + " out of range");
    }
  }
  if (scores) scores->clear();
  if (points.empty()) return {};

  Tape<T> tape(false);
  Tensor<T> input = image_to_tensor<T>(image);
  const AnchorSet& anchors = anchors_for(input.dim(1), input.dim(2));
  const FeaturePyramid pyramid = backbone_.forward(tape, tape.constant(std::move(input)));
  const DenseHeadOutput dense = rpn_.forward(tape, pyramid);
  const double W = image.width, H = image.height;
  const DenseHeadValues values = snapshot(tape, dense, anchors.anchors_per_cell, config_.rpn.num_classes);
  const std::vector<ProposalGroup> groups =
      group_nms(build_groups(points, values, anchors, config_.k, W, H, config_.rpn.delta_stds),
                config_.group_nms_iou, config_.group_keep);
  const ProjectedPyramid projected = projection_.forward(tape, pyramid, config_.detach);
  const CascadeOutput cascade = head_.forward(tape, projected, dense.levels, groups, W, H);

  const StageOutput& last = cascade.stages.back();
  const Tensor<T>& logits = tape.value(last.cls_logits);
  std::vector<ProposalGroup> final_groups = groups;
  for (std::size_t g = 0; g < groups.size(); ++g) {
    for (int r = cascade.offsets[g], j = 0; r < cascade.offsets[g + 1]; ++r, ++j) {
      Proposal& p = final_groups[g].proposals[j];
      p.box = last.refined_boxes[r];
      p.box.class_id = groups[g].point.class_id;
      p.score = 1.0 / (1.0 + std::exp(-static_cast<double>(logits.data[r])));
    }
  }
  final_groups = group_nms(std::move(final_groups), config_.final_nms_iou, 1);
  std::vector<Box> boxes;
  for (const ProposalGroup& g : final_groups) {
    boxes.push_back(g.proposals.front().box);
    if (scores) scores->push_back(g.proposals.front().score);
  }
  return boxes;
}

template <typename T>
std::vector<ProposalGroup> GroupRcnn<T>::proposal_groups(const Image& image,
                                                         const std::vector<PointAnnotation>& points,
                                                         int k) {
  Tape<T> tape(false);
  Tensor<T> input = image_to_tensor<T>(image);
  const AnchorSet& anchors = anchors_for(input.dim(1), input.dim(2));
  const FeaturePyramid pyramid = backbone_.forward(tape, tape.constant(std::move(input)));
  const DenseHeadOutput dense = rpn_.forward(tape, pyramid);
  const DenseHeadValues values = snapshot(tape, dense, anchors.anchors_per_cell, config_.rpn.num_classes);
  return group_nms(build_groups(points, values, anchors, k, image.width, image.height,
                                config_.rpn.delta_stds),
                   config_.group_nms_iou, config_.group_keep);
}

template <typename T>
std::vector<Proposal> GroupRcnn<T>::ungrouped(const Image& image, int top_n) {
  Tape<T> tape(false);
  Tensor<T> input = image_to_tensor<T>(image);
  const AnchorSet& anchors = anchors_for(input.dim(1), input.dim(2));
  const FeaturePyramid pyramid = backbone_.forward(tape, tape.constant(std::move(input)));
  const DenseHeadOutput dense = rpn_.forward(tape, pyramid);
  const DenseHeadValues values = snapshot(tape, dense, anchors.anchors_per_cell, config_.rpn.num_classes);
  return ungrouped_proposals(values, anchors, image.width, image.height, config_.rpn.delta_stds,
                             config_.group_nms_iou, top_n, 1000);
}

template class GroupRcnn<float>;
template class GroupRcnn<double>;

// ---------------------------------------------------------------------------

Optimizer::Optimizer(const TrainConfig& config, nn::ParameterList<float>& params)
    : config_(config), params_(params) {
  state_.kind = config.optimizer;
  for (auto* p : params_) {
    state_.first.emplace_back(p->value.shape);
    if (config.optimizer == OptimizerKind::adam) state_.second.emplace_back(p->value.shape);
  }
}

double Optimizer::step(double lr) {
  using Array = Eigen::Map<Eigen::ArrayXf>;
  auto map = [](nn::Buffer<float>& d) { return Array(d.data(), static_cast<Eigen::Index>(d.size())); };
  double sq = 0.0;
  for (auto* p : params_) {
    for (float g : p->grad.data) sq += static_cast<double>(g) * g;
  }
  const double norm = std::sqrt(sq);
  const double clip = (config_.grad_clip > 0.0 && norm > config_.grad_clip) ? config_.grad_clip / norm : 1.0;
  ++state_.step;
  const float wd = static_cast<float>(config_.weight_decay);
  const float flr = static_cast<float>(lr);
  const float fclip = static_cast<float>(clip);
  if (state_.kind == OptimizerKind::adam) {
    constexpr float b1 = 0.9f, b2 = 0.999f, eps = 1e-8f;
    const float c1 = static_cast<float>(1.0 - std::pow(0.9, static_cast<double>(state_.step)));
    const float c2 = static_cast<float>(1.0 - std::pow(0.999, static_cast<double>(state_.step)));
    for (std::size_t i = 0; i < params_.size(); ++i) {
      Array v = map(params_[i]->value.data);
      Array g = map(params_[i]->grad.data);
      Array m1 = map(state_.first[i].data);
      Array m2 = map(state_.second[i].data);
      m1 = b1 * m1 + ((1.0f - b1) * fclip) * g;
      m2 = b2 * m2 + ((1.0f - b2) * fclip * fclip) * g.square();
      v -= flr * ((m1 / c1) / ((m2 / c2).sqrt() + eps) + wd * v);
    }
  } else {
    const float mom = static_cast<float>(config_.momentum);
    for (std::size_t i = 0; i < params_.size(); ++i) {
      Array v = map(params_[i]->value.data);
      Array buf = map(state_.first[i].data);
      buf = mom * buf + fclip * map(params_[i]->grad.data) + wd * v;
      v -= flr * buf;
    }
  }
  return norm;
}

// ---------------------------------------------------------------------------
// Checkpoint layout: 8-byte magic, 8-byte little-endian header length, JSON
// header, then the raw float32 arrays at the offsets listed in the header.

namespace {

constexpr char kMagic[8] = {'P', 'B', 'C', 'K', 'P', 'T', '0', '1'};

struct ArrayRef {
  std::string name;
  const Tensor<float>* tensor;
};

Json read_header(std::ifstream& in, const std::filesystem::path& path, std::uint64_t& data_start) {
  char magic[8];
  std::uint64_t len = 0;
  in.read(magic, 8);
  in.read(reinterpret_cast<char*>(&len), sizeof(len));
  if (!in || std::memcmp(magic, kMagic, 8) != 0) {
    throw std::runtime_error("not a pointbox checkpoint: " + path.string());
  }
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  if (!in) throw std::runtime_error("truncated checkpoint header: " + path.string());
  data_start = 16 + len;
  Json header = Json::parse(text);
  if (header.value("version", "") != kCheckpointVersion) {
    throw std::runtime_error("unsupported checkpoint version '" + header.value("version", "") +
                             "' in " + path.string());
  }
  return header;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& meta,
                     nn::ParameterList<float>& params, const OptimizerState* optimizer) {
  std::vector<ArrayRef> arrays;
  for (auto* p : params) arrays.push_back({p->name, &p->value});
  if (optimizer) {
    for (std::size_t i = 0; i < optimizer->first.size(); ++i) {
      arrays.push_back({"optimizer.first." + params[i]->name, &optimizer->first[i]});
    }
    for (std::size_t i = 0; i < optimizer->second.size(); ++i) {
      arrays.push_back({"optimizer.second." + params[i]->name, &optimizer->second[i]});
    }
  }
  Json header;
  header["version"] = kCheckpointVersion;
  header["config"] = to_flat_json(meta.config);
  header["epoch"] = meta.epoch;
  header["iteration"] = meta.iteration;
  if (optimizer) {
    header["optimizer"] = {{"kind", optimizer->kind == OptimizerKind::adam ? "adam" : "sgd"},
                           {"step", optimizer->step}};
  }
  Json entries = Json::array();
  std::uint64_t offset = 0;
  for (const ArrayRef& a : arrays) {
    entries.push_back({{"name", a.name}, {"shape", a.tensor->shape}, {"offset", offset}});
    offset += a.tensor->numel() * sizeof(float);
  }
  header["arrays"] = entries;
  const std::string text = header.dump();

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write checkpoint " + tmp.string());
    const std::uint64_t len = text.size();
    out.write(kMagic, 8);
    out.write(reinterpret_cast<const char*>(&len), sizeof(len));
    out.write(text.data(), static_cast<std::streamsize>(len));
    for (const ArrayRef& a : arrays) {
      out.write(reinterpret_cast<const char*>(a.tensor->ptr()),
                static_cast<std::streamsize>(a.tensor->numel() * sizeof(float)));
    }
    if (!out) throw std::runtime_error("failed writing checkpoint " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint read_checkpoint_header(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint " + path.string());
  std::uint64_t start = 0;
  const Json header = read_header(in, path, start);
  Checkpoint meta;
  apply_flat_json(meta.config, header.at("config"));
  meta.epoch = header.at("epoch").get<int>();
  meta.iteration = header.at("iteration").get<long>();
  return meta;
}

Checkpoint load_checkpoint(const std::filesystem::path& path, nn::ParameterList<float>& params,
                           OptimizerState* optimizer) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint " + path.string());
  std::uint64_t start = 0;
  const Json header = read_header(in, path, start);
  std::map<std::string, Json> entries;
  for (const Json& e : header.at("arrays")) entries[e.at("name").get<std::string>()] = e;

  auto load_into = [&](const std::string& name, Tensor<float>& dst) {
    auto it = entries.find(name);
    if (it == entries.end()) throw std::runtime_error("checkpoint is missing array '" + name + "'");
    const auto shape = it->second.at("shape").get<std::vector<int>>();
    if (shape != dst.shape) {
      throw std::runtime_error("checkpoint array '" + name + "' has shape " + nn::shape_string(shape) +
                               ", model expects " + nn::shape_string(dst.shape));
    }
    in.seekg(static_cast<std::streamoff>(start + it->second.at("offset").get<std::uint64_t>()));
    in.read(reinterpret_cast<char*>(dst.ptr()), static_cast<std::streamsize>(dst.numel() * sizeof(float)));
    if (!in) throw std::runtime_error("truncated checkpoint data for '" + name + "'");
  };
  for (auto* p : params) load_into(p->name, p->value);
  if (optimizer && header.contains("optimizer")) {
    optimizer->step = header["optimizer"].at("step").get<long>();
    for (std::size_t i = 0; i < optimizer->first.size(); ++i) {
      load_into("optimizer.first." + params[i]->name, optimizer->first[i]);
    }
    for (std::size_t i = 0; i < optimizer->second.size(); ++i) {
      load_into("optimizer.second." + params[i]->name, optimizer->second[i]);
    }
  }
  Checkpoint meta;
  apply_flat_json(meta.config, header.at("config"));
  meta.epoch = header.at("epoch").get<int>();
  meta.iteration = header.at("iteration").get<long>();
  return meta;
}

}  // namespace pointbox
