// SPDX-License-Identifier: Apache-2.0
#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "pointbox/pipeline.hpp"

namespace pointbox {

Dataset make_dataset(std::vector<Scene> scenes) {
  Dataset d;
  for (Scene& s : scenes) {
    d.images.push_back(std::move(s.image));
    d.annotations.push_back(std::move(s.annotations));
  }
  return d;
}

Dataset load_dataset(const AnnotationSet& annotations, const std::filesystem::path& image_dir) {
  Dataset d;
  for (const ImageAnnotations& ann : annotations.images) {
    Image img = read_png(image_dir / ann.file);
    if (img.width != ann.width || img.height != ann.height) {
      throw std::runtime_error("image " + ann.file + " is " + std::to_string(img.width) + "x" +
                               std::to_string(img.height) + " but annotated as " +
                               std::to_string(ann.width) + "x" + std::to_string(ann.height));
    }
    d.images.push_back(std::move(img));
    d.annotations.push_back(ann);
  }
  return d;
}

Dataset with_annotations(const Dataset& source, const std::vector<ImageAnnotations>& annotations) {
  std::map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < source.size(); ++i) index[source.annotations[i].image_id] = i;
  Dataset d;
  for (const ImageAnnotations& ann : annotations) {
    auto it = index.find(ann.image_id);
    if (it == index.end()) throw std::invalid_argument("unknown image id '" + ann.image_id + "'");
    d.images.push_back(source.images[it->second]);
    d.annotations.push_back(ann);
  }
  return d;
}

void attach_points(std::vector<ImageAnnotations>& annotations, std::uint64_t seed) {
  for (std::size_t i = 0; i < annotations.size(); ++i) {
    ImageAnnotations& ann = annotations[i];
    if (!ann.points.empty() || ann.boxes.empty()) continue;
    Rng rng = scene_rng(seed ^ 0x243f6a8885a308d3ULL, i);
    for (const Box& b : ann.boxes) ann.points.push_back(sample_point_in_box(b, rng));
  }
}

namespace {

constexpr std::uint64_t kShuffleSalt = 0x5851f42d4c957f2dULL;

bool all_finite(nn::ParameterList<float>& params, std::string* which) {
  for (auto* p : params) {
    for (float v : p->value.data) {
      if (!std::isfinite(v)) {
        *which = p->name;
        return false;
      }
    }
  }
  return true;
}

[[noreturn]] void diverged(const TrainOptions& options, const std::string& reason, int epoch, long iteration,
                           double lr, const ImageAnnotations& ann, const std::vector<Box>& gts,
                           const std::vector<PointAnnotation>& points, double rpn, double rcnn) {
  Json dump;
  dump["reason"] = reason;
  dump["epoch"] = epoch;
  dump["iteration"] = iteration;
  dump["lr"] = lr;
  dump["image_id"] = ann.image_id;
  dump["rpn_loss"] = std::isfinite(rpn) ? Json(rpn) : Json(std::to_string(rpn));
  dump["rcnn_loss"] = std::isfinite(rcnn) ? Json(rcnn) : Json(std::to_string(rcnn));
  Json boxes = Json::array();
  for (const Box& b : gts) boxes.push_back({b.x1, b.y1, b.x2, b.y2, b.class_id});
  dump["gt_boxes"] = boxes;
  Json pts = Json::array();
  for (const PointAnnotation& p : points) pts.push_back({p.x, p.y, p.class_id});
  dump["points"] = pts;
  std::string where;
  if (!options.out_dir.empty()) {
    std::filesystem::create_directories(options.out_dir);
    const auto path = options.out_dir / "divergence_dump.json";
    std::ofstream(path) << dump.dump(2) << '\n';
    where = " (dump written to " + path.string() + ")";
  }
  throw TrainingDiverged("training diverged: " + reason + where + ": " + dump.dump());
}

struct Sample {
  const Image* image;
  const ImageAnnotations* ann;
  std::vector<Box> gts;
  std::vector<PointAnnotation> points;
  double weight;
};

// Shared loop for supervised and self-training.
TrainResult run_training(GroupRcnn<float>& model, const Dataset& well, const Dataset* weak,
                         const TrainConfig& config, const TrainOptions& options) {
  config.validate();
  for (const ImageAnnotations& ann : well.annotations) {
    if (ann.boxes.empty() && !ann.points.empty()) {
      throw std::invalid_argument("training image '" + ann.image_id + "' has points but no boxes");
    }
  }
  auto& params = model.parameters();
  Optimizer optimizer(config, params);
  TrainResult result;
  int start_epoch = 0;
  long iteration = 0;
  if (options.resume_from) {
    const Checkpoint meta = load_checkpoint(*options.resume_from, params, &optimizer.state());
    start_epoch = meta.epoch;
    iteration = meta.iteration;
    spdlog::info("resumed from {} at epoch {} iteration {}", options.resume_from->string(), start_epoch,
                 iteration);
  } else if (options.init_from) {
    load_checkpoint(*options.init_from, params);
    spdlog::info("initialized parameters from {}", options.init_from->string());
  }

  const bool self = weak != nullptr && weak->size() > 0 && config.self_train.weak_per_step > 0;
  const int per_step = self ? config.self_train.well_per_step : config.batch_size;
  double running = 0.0;
  int running_n = 0;

  for (int epoch = start_epoch; epoch < config.epochs; ++epoch) {
    Rng rng = scene_rng(config.seed ^ kShuffleSalt, static_cast<std::uint64_t>(epoch));
    std::vector<std::size_t> order(well.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<std::size_t> weak_order;
    if (self) {
      weak_order.resize(weak->size());
      std::iota(weak_order.begin(), weak_order.end(), std::size_t{0});
      std::shuffle(weak_order.begin(), weak_order.end(), rng);
    }
    std::size_t weak_cursor = 0;

    for (std::size_t start = 0; start < order.size(); start += per_step) {
      const double lr = config.learning_rate(epoch, iteration);
      std::vector<Sample> batch;
      for (std::size_t b = start; b < std::min(order.size(), start + per_step); ++b) {
        const std::size_t i = order[b];
        Sample s{&well.images[i], &well.annotations[i], well.annotations[i].boxes, {}, 1.0};
        for (const Box& box : s.gts) s.points.push_back(sample_point_in_box(box, rng));
        batch.push_back(std::move(s));
      }
      if (self) {
        for (int w = 0; w < config.self_train.weak_per_step; ++w) {
          const std::size_t i = weak_order[weak_cursor++ % weak_order.size()];
          Sample s{&weak->images[i], &weak->annotations[i], {}, {}, config.self_train.weak_loss_weight};
          // Pseudo boxes from the current model, then pseudo points inside them.
          s.gts = model.infer(*s.image, s.ann->points);
          for (const Box& box : s.gts) s.points.push_back(sample_point_in_box(box, rng));
          batch.push_back(std::move(s));
        }
      }

      for (auto* p : params) p->zero_grad();
      double step_loss = 0.0;
      const double scale = 1.0 / static_cast<double>(per_step);
      for (const Sample& s : batch) {
        Tape<float> tape(true);
        const auto losses = model.loss(tape, *s.image, s.gts, s.points);
        const double total = static_cast<double>(tape.value(losses.total).data[0]);
        if (!std::isfinite(total)) {
          diverged(options, "non-finite loss", epoch, iteration, lr, *s.ann, s.gts, s.points, losses.rpn,
                   losses.rcnn);
        }
        if (s.weight > 0.0) tape.backward(losses.total, static_cast<float>(s.weight * scale));
        step_loss += s.weight * total;
      }
      optimizer.step(lr);
      std::string bad;
      if (!all_finite(params, &bad)) {
        const Sample& s = batch.front();
        diverged(options, "non-finite parameter " + bad, epoch, iteration, lr, *s.ann, s.gts, s.points,
                 step_loss, step_loss);
      }
      result.losses.push_back(step_loss);
      running += step_loss;
      ++running_n;
      ++iteration;
      if (config.log_every > 0 && iteration % config.log_every == 0) {
        spdlog::info("epoch {} iter {} loss {:.4f} lr {:.2e}", epoch + 1, iteration, running / running_n, lr);
        if (options.on_log) options.on_log(epoch, iteration, running / running_n);
        running = 0.0;
        running_n = 0;
      }
    }

    result.epochs_completed = epoch + 1;
    if (!options.out_dir.empty()) {
      Checkpoint meta{config, epoch + 1, iteration};
      result.checkpoint = options.out_dir / "latest.ckpt";
      save_checkpoint(result.checkpoint, meta, params, &optimizer.state());
    }
    if (options.stop_after_epochs > 0 && epoch + 1 - start_epoch >= options.stop_after_epochs) break;
  }
  result.iterations = iteration;
  if (!options.out_dir.empty() && result.epochs_completed == config.epochs) {
    Checkpoint meta{config, result.epochs_completed, iteration};
    result.checkpoint = options.out_dir / "model.ckpt";
    save_checkpoint(result.checkpoint, meta, params, &optimizer.state());
  }
  return result;
}

}  // namespace

TrainResult train_regressor(GroupRcnn<float>& model, const Dataset& well, const TrainConfig& config,
                            const TrainOptions& options) {
  return run_training(model, well, nullptr, config, options);
}

TrainResult self_train(GroupRcnn<float>& model, const Dataset& well, const Dataset& weak,
                       const TrainConfig& config, const TrainOptions& options) {
  if (!config.self_train.enabled) throw std::invalid_argument("self_train.enabled is false");
  if (weak.size() == 0) spdlog::warn("weak set is empty; self-training reduces to supervised training");
  return run_training(model, well, &weak, config, options);
}

std::vector<Box> infer_points(GroupRcnn<float>& model, const Image& image,
                              const std::vector<PointAnnotation>& points, std::vector<double>* scores) {
  return model.infer(image, points, scores);
}

std::vector<ImageAnnotations> predict(GroupRcnn<float>& model, const Dataset& weak) {
  std::vector<ImageAnnotations> out;
  out.reserve(weak.size());
  for (std::size_t i = 0; i < weak.size(); ++i) {
    ImageAnnotations pred = weak.annotations[i];
    pred.boxes = model.infer(weak.images[i], pred.points, &pred.scores);
    out.push_back(std::move(pred));
  }
  return out;
}

AnnotationSet pseudo_label(GroupRcnn<float>& model, const Dataset& weak, const std::filesystem::path& out_path,
                           int num_classes) {
  AnnotationSet set;
  set.images = predict(model, weak);
  set.categories = default_categories(num_classes);
  write_annotations(out_path, set);
  return set;
}

TrainResult train_downstream(GroupRcnn<float>& fresh_model, const Dataset& well, const Dataset& pseudo,
                             const TrainConfig& config, const TrainOptions& options) {
  Dataset combined = well;
  for (std::size_t i = 0; i < pseudo.size(); ++i) {
    combined.images.push_back(pseudo.images[i]);
    ImageAnnotations ann = pseudo.annotations[i];
    ann.scores.clear();
    ann.points.clear();
    combined.annotations.push_back(std::move(ann));
  }
  TrainConfig plain = config;
  plain.self_train.enabled = false;
  return train_regressor(fresh_model, combined, plain, options);
}

}  // namespace pointbox
