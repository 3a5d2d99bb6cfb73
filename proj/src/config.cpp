// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <cmath>
#include <functional>

#include "pointbox/pipeline.hpp"

namespace pointbox {

void TrainConfig::validate() const {
  model.validate();
  if (epochs < 1) throw std::invalid_argument("train.epochs must be >= 1");
  if (!(base_lr > 0.0)) throw std::invalid_argument("train.base_lr must be positive");
  if (!(decay_factor > 0.0 && decay_factor <= 1.0)) {
    throw std::invalid_argument("train.decay_factor must be in (0,1]");
  }
  if (batch_size < 1) throw std::invalid_argument("train.batch_size must be >= 1");
  if (warmup_iters < 0) throw std::invalid_argument("train.warmup_iters must be >= 0");
  if (self_train.weak_loss_weight < 0.0) {
    throw std::invalid_argument("self_train.weak_loss_weight must be >= 0");
  }
  if (self_train.well_per_step < 1 || self_train.weak_per_step < 0) {
    throw std::invalid_argument("self_train.ratio must be well:weak with well >= 1 and weak >= 0");
  }
}

std::vector<int> TrainConfig::resolved_decay_epochs() const {
  if (!decay_epochs.empty()) return decay_epochs;
  return {static_cast<int>(std::lround(0.6 * epochs)), static_cast<int>(std::lround(0.8 * epochs))};
}

double TrainConfig::learning_rate(int epoch, long iteration) const {
  double lr = base_lr;
  for (int e : resolved_decay_epochs()) {
    if (epoch >= e) lr *= decay_factor;
  }
  if (iteration < warmup_iters) {
    constexpr double start = 0.001;
    lr *= start + (1.0 - start) * static_cast<double>(iteration) / warmup_iters;
  }
  return lr;
}

namespace {

struct Field {
  std::function<Json(const TrainConfig&)> get;
  std::function<void(TrainConfig&, const Json&)> set;
};

template <typename V, typename M>
Field plain(M member) {
  return {[member](const TrainConfig& c) { return Json(member(const_cast<TrainConfig&>(c))); },
          [member](TrainConfig& c, const Json& j) { member(c) = j.get<V>(); }};
}

std::string ratio_string(const SelfTrainConfig& s) {
  return std::to_string(s.well_per_step) + ":" + std::to_string(s.weak_per_step);
}

void parse_ratio(SelfTrainConfig& s, const std::string& text) {
  const auto colon = text.find(':');
  if (colon == std::string::npos) throw std::invalid_argument("ratio must look like '1:1'");
  s.well_per_step = std::stoi(text.substr(0, colon));
  s.weak_per_step = std::stoi(text.substr(colon + 1));
}

const std::map<std::string, Field>& fields() {
  static const std::map<std::string, Field> table = [] {
    std::map<std::string, Field> t;
    t["seed"] = plain<std::uint64_t>([](TrainConfig& c) -> std::uint64_t& { return c.seed; });
    t["train.epochs"] = plain<int>([](TrainConfig& c) -> int& { return c.epochs; });
    t["train.base_lr"] = plain<double>([](TrainConfig& c) -> double& { return c.base_lr; });
    t["train.decay_epochs"] =
        plain<std::vector<int>>([](TrainConfig& c) -> std::vector<int>& { return c.decay_epochs; });
    t["train.decay_factor"] = plain<double>([](TrainConfig& c) -> double& { return c.decay_factor; });
    t["train.warmup_iters"] = plain<int>([](TrainConfig& c) -> int& { return c.warmup_iters; });
    t["train.batch_size"] = plain<int>([](TrainConfig& c) -> int& { return c.batch_size; });
    t["train.momentum"] = plain<double>([](TrainConfig& c) -> double& { return c.momentum; });
    t["train.weight_decay"] = plain<double>([](TrainConfig& c) -> double& { return c.weight_decay; });
    t["train.grad_clip"] = plain<double>([](TrainConfig& c) -> double& { return c.grad_clip; });
    t["train.log_every"] = plain<int>([](TrainConfig& c) -> int& { return c.log_every; });
    t["train.optimizer"] = {
        [](const TrainConfig& c) { return Json(c.optimizer == OptimizerKind::adam ? "adam" : "sgd"); },
        [](TrainConfig& c, const Json& j) {
          const auto s = j.get<std::string>();
          if (s == "adam") c.optimizer = OptimizerKind::adam;
          else if (s == "sgd") c.optimizer = OptimizerKind::sgd;
          else throw std::invalid_argument("train.optimizer must be adam or sgd, got '" + s + "'");
        }};
    t["self_train.enabled"] = plain<bool>([](TrainConfig& c) -> bool& { return c.self_train.enabled; });
    t["self_train.weak_loss_weight"] =
        plain<double>([](TrainConfig& c) -> double& { return c.self_train.weak_loss_weight; });
    t["self_train.ratio"] = {
        [](const TrainConfig& c) { return Json(ratio_string(c.self_train)); },
        [](TrainConfig& c, const Json& j) { parse_ratio(c.self_train, j.get<std::string>()); }};
    t["model.k"] = plain<int>([](TrainConfig& c) -> int& { return c.model.k; });
    t["model.num_projection_layers"] =
        plain<int>([](TrainConfig& c) -> int& { return c.model.num_projection_layers; });
    t["model.detach"] = plain<bool>([](TrainConfig& c) -> bool& { return c.model.detach; });
    t["model.relative_coords"] =
        plain<bool>([](TrainConfig& c) -> bool& { return c.model.head.relative_coords; });
    t["model.num_classes"] = plain<int>([](TrainConfig& c) -> int& { return c.model.rpn.num_classes; });
    t["model.hidden"] = plain<int>([](TrainConfig& c) -> int& { return c.model.head.hidden; });
    t["model.fpn_channels"] = plain<int>([](TrainConfig& c) -> int& { return c.model.backbone.fpn_channels; });
    t["model.norm_groups"] = plain<int>([](TrainConfig& c) -> int& { return c.model.backbone.norm_groups; });
    t["model.rpn_head_channels"] =
        plain<int>([](TrainConfig& c) -> int& { return c.model.rpn.head_channels; });
    t["model.group_nms_iou"] = plain<double>([](TrainConfig& c) -> double& { return c.model.group_nms_iou; });
    t["model.group_keep"] = plain<int>([](TrainConfig& c) -> int& { return c.model.group_keep; });
    t["model.final_nms_iou"] = plain<double>([](TrainConfig& c) -> double& { return c.model.final_nms_iou; });
    t["model.backbone_widths"] = {
        [](const TrainConfig& c) { return Json(c.model.backbone.widths); },
        [](TrainConfig& c, const Json& j) {
          const auto w = j.get<std::vector<int>>();
          if (w.size() != 4) throw std::invalid_argument("model.backbone_widths needs 4 entries");
          std::copy(w.begin(), w.end(), c.model.backbone.widths.begin());
        }};
    t["model.assignment"] = {
        [](const TrainConfig& c) { return Json(to_string(c.model.assignment)); },
        [](TrainConfig& c, const Json& j) { c.model.assignment = assign_mode_from_string(j.get<std::string>()); }};
    t["model.dynamic_conv"] = {
        [](const TrainConfig& c) { return Json(to_string(c.model.head.dynamic_conv)); },
        [](TrainConfig& c, const Json& j) {
          c.model.head.dynamic_conv = dynamic_conv_mode_from_string(j.get<std::string>());
        }};
    t["model.dynamic_conv_scope"] = {
        [](const TrainConfig& c) {
          return Json(c.model.head.dynamic_conv_scope == DynamicConvScope::both_branches ? "both"
                                                                                          : "classification");
        },
        [](TrainConfig& c, const Json& j) {
          const auto s = j.get<std::string>();
          if (s == "both") c.model.head.dynamic_conv_scope = DynamicConvScope::both_branches;
          else if (s == "classification") c.model.head.dynamic_conv_scope = DynamicConvScope::classification_only;
          else throw std::invalid_argument("model.dynamic_conv_scope must be both or classification");
        }};
    return t;
  }();
  return table;
}

}  // namespace

Json to_flat_json(const TrainConfig& config) {
  Json out = Json::object();
  for (const auto& [key, field] : fields()) out[key] = field.get(config);
  return out;
}

void apply_flat_json(TrainConfig& config, const Json& flat) {
  if (!flat.is_object()) throw std::invalid_argument("config must be a JSON object of dotted keys");
  for (const auto& [key, value] : flat.items()) {
    auto it = fields().find(key);
    if (it == fields().end()) throw std::invalid_argument("unknown config key '" + key + "'");
    try {
      it->second.set(config, value);
    } catch (const nlohmann::json::exception& e) {
      throw std::invalid_argument("bad value for config key '" + key + "': " + e.what());
    }
  }
}

std::vector<std::string> known_config_keys() {
  std::vector<std::string> keys;
  for (const auto& [key, field] : fields()) keys.push_back(key);
  return keys;
}

}  // namespace pointbox
