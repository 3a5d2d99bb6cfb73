// SPDX-License-Identifier: Apache-2.0
#include "pointbox/cli.hpp"

#include <spdlog/sinks/basic_file_sink.h>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <CLI11.hpp>
#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>

#include "pointbox/pipeline.hpp"

namespace pointbox {

namespace {

namespace fs = std::filesystem;

constexpr const char* kLogPattern = "%Y-%m-%dT%H:%M:%S.%e%z [%l] %v";

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

void setup_logging(const fs::path& log_file) {
  std::vector<spdlog::sink_ptr> sinks;
  sinks.push_back(std::make_shared<spdlog::sinks::stderr_color_sink_mt>());
  if (!log_file.empty()) {
    fs::create_directories(log_file.parent_path());
    sinks.push_back(std::make_shared<spdlog::sinks::basic_file_sink_mt>(log_file.string(), true));
  }
  auto logger = std::make_shared<spdlog::logger>("pointbox", sinks.begin(), sinks.end());
  logger->set_pattern(kLogPattern);
  spdlog::set_default_logger(logger);
}

// Values bound to the command-line flags. Only flags that were actually
// given override the config file.
struct Options {
  std::string config_file;
  std::uint64_t seed = 0;
  std::string data, out, checkpoint, pred, gt, points, eval_data, cells;
  double well_fraction = 0.1;
  int images = 200;
  double crowding = 0.5;
  int epochs = 20;
  double lr = 1e-3;
  int k = 3;
  std::string assignment = "instance";
  std::string dynamic_conv = "both";
  bool relative_coords = true;
  int projection_layers = 1;
  bool detach = true;
  double weak_weight = 0.5;
  std::string ratio = "1:1";
  bool resume = false;
};

struct Resolved {
  TrainConfig train;
  SceneConfig scene;
  double well_fraction = 0.1;
  int images = 200;
};

bool given(CLI::App* app, const std::string& name) {
  try {
    return app->get_option(name)->count() > 0;
  } catch (const CLI::OptionNotFound&) {
    return false;
  }
}

void apply_scene_key(Resolved& r, const std::string& key, const Json& v) {
  SceneConfig& s = r.scene;
  if (key == "scene.height") s.height = v.get<int>();
  else if (key == "scene.width") s.width = v.get<int>();
  else if (key == "scene.min_instances") s.min_instances = v.get<int>();
  else if (key == "scene.max_instances") s.max_instances = v.get<int>();
  else if (key == "scene.num_classes") s.num_classes = v.get<int>();
  else if (key == "scene.crowding") s.crowding_probability = v.get<double>();
  else if (key == "scene.noise_std") s.noise_std = v.get<double>();
  else if (key == "scene.min_object_size") s.min_object_size = v.get<double>();
  else if (key == "scene.max_object_size") s.max_object_size = v.get<double>();
  else if (key == "data.well_fraction") r.well_fraction = v.get<double>();
  else if (key == "data.images") r.images = v.get<int>();
  else throw UsageError("unknown config key '" + key + "'");
}

Json scene_json(const Resolved& r) {
  const SceneConfig& s = r.scene;
  return {{"scene.height", s.height},
          {"scene.width", s.width},
          {"scene.min_instances", s.min_instances},
          {"scene.max_instances", s.max_instances},
          {"scene.num_classes", s.num_classes},
          {"scene.crowding", s.crowding_probability},
          {"scene.noise_std", s.noise_std},
          {"scene.min_object_size", s.min_object_size},
          {"scene.max_object_size", s.max_object_size},
          {"data.well_fraction", r.well_fraction},
          {"data.images", r.images}};
}

// Config file first, then flags, with the seed falling back to POINTBOX_SEED.
Resolved resolve(CLI::App* app, const Options& o) {
  Resolved r;
  bool seed_from_file = false;
  if (!o.config_file.empty()) {
    std::ifstream in(o.config_file);
    if (!in) throw UsageError("cannot read config file " + o.config_file);
    Json file;
    try {
      file = Json::parse(in);
    } catch (const Json::exception& e) {
      throw UsageError("config file " + o.config_file + " is not valid JSON: " + e.what());
    }
    if (!file.is_object()) throw UsageError("config file must hold a JSON object of dotted keys");
    Json train_keys = Json::object();
    for (const auto& [key, value] : file.items()) {
      if (key.rfind("scene.", 0) == 0 || key.rfind("data.", 0) == 0) {
        try {
          apply_scene_key(r, key, value);
        } catch (const Json::exception& e) {
          throw UsageError("bad value for config key '" + key + "': " + e.what());
        }
      } else {
        train_keys[key] = value;
      }
    }
    try {
      apply_flat_json(r.train, train_keys);
    } catch (const std::invalid_argument& e) {
      throw UsageError(e.what());
    }
    seed_from_file = train_keys.contains("seed");
  }
  if (given(app, "--seed")) {
    r.train.seed = o.seed;
  } else if (!seed_from_file) {
    if (const char* env = std::getenv("POINTBOX_SEED")) {
      try {
        r.train.seed = std::stoull(env);
      } catch (const std::exception&) {
        throw UsageError(std::string("POINTBOX_SEED must be an unsigned integer, got '") + env + "'");
      }
    }
  }
  r.scene.seed = r.train.seed;
  if (given(app, "--well-fraction")) r.well_fraction = o.well_fraction;
  if (given(app, "--images")) r.images = o.images;
  if (given(app, "--crowding")) r.scene.crowding_probability = o.crowding;
  if (given(app, "--epochs")) r.train.epochs = o.epochs;
  if (given(app, "--lr")) r.train.base_lr = o.lr;
  if (given(app, "--k")) r.train.model.k = o.k;
  if (given(app, "--projection-layers")) r.train.model.num_projection_layers = o.projection_layers;
  if (given(app, "--relative-coords")) r.train.model.head.relative_coords = o.relative_coords;
  if (given(app, "--detach")) r.train.model.detach = o.detach;
  if (given(app, "--weak-weight")) r.train.self_train.weak_loss_weight = o.weak_weight;
  try {
    if (given(app, "--assignment")) r.train.model.assignment = assign_mode_from_string(o.assignment);
    if (given(app, "--dynamic-conv")) {
      r.train.model.head.dynamic_conv = dynamic_conv_mode_from_string(o.dynamic_conv);
    }
    if (given(app, "--ratio")) apply_flat_json(r.train, Json{{"self_train.ratio", o.ratio}});
    r.train.validate();
    r.scene.validate();
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  if (!(r.well_fraction > 0.0 && r.well_fraction < 1.0)) throw UsageError("well-fraction must be in (0,1)");
  if (r.images < 1) throw UsageError("images must be >= 1");
  return r;
}

void write_snapshot(const fs::path& path, const std::string& command, const Options& o, const Resolved& r) {
  Json snap;
  snap["command"] = command;
  snap["paths"] = {{"data", o.data}, {"out", o.out},     {"checkpoint", o.checkpoint},
                   {"pred", o.pred}, {"gt", o.gt},       {"points", o.points},
                   {"eval_data", o.eval_data}};
  Json flat = to_flat_json(r.train);
  const Json scene = scene_json(r);
  for (const auto& [k, v] : scene.items()) flat[k] = v;
  snap["config"] = flat;
  snap["seed"] = r.train.seed;
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream(path) << snap.dump(2) << '\n';
}

void require_path(const std::string& value, const char* flag) {
  if (value.empty()) throw UsageError(std::string(flag) + " is required");
}

void require_exists(const fs::path& p, const char* what) {
  if (!fs::exists(p)) throw UsageError(std::string(what) + " does not exist: " + p.string());
}

Dataset load_data_dir(const fs::path& dir) {
  const fs::path ann = dir / "annotations.json";
  require_exists(ann, "annotation file");
  return load_dataset(read_annotations(ann), dir);
}

int cmd_gen_data(const Options& o, const Resolved& r) {
  require_path(o.out, "--out");
  const fs::path out = o.out;
  fs::create_directories(out);
  write_snapshot(out / "resolved_config.json", "gen-data", o, r);
  AnnotationSet set;
  set.categories = default_categories(r.scene.num_classes);
  for (const Scene& s : generate_dataset(r.scene, r.images)) {
    ImageAnnotations ann = s.annotations;
    ann.file = ann.image_id + ".png";
    write_png(out / ann.file, s.image);
    set.images.push_back(std::move(ann));
  }
  write_annotations(out / "annotations.json", set);
  spdlog::info("wrote {} images and annotations.json to {}", set.images.size(), out.string());
  return kExitOk;
}

struct Splits {
  Dataset well, weak, weak_hidden;
};

Splits split_data(const Dataset& all, const Resolved& r, const fs::path& out, int num_classes) {
  const DatasetSplit split = split_dataset(all.annotations, r.well_fraction, r.train.seed);
  Splits s{with_annotations(all, split.well), with_annotations(all, split.weak),
           with_annotations(all, split.weak_hidden)};
  if (!out.empty()) {
    const auto cats = default_categories(num_classes);
    write_annotations(out / "well.json", {split.well, cats});
    write_annotations(out / "weak.json", {split.weak, cats});
    write_annotations(out / "weak_hidden.json", {split.weak_hidden, cats});
  }
  return s;
}

int cmd_train(const Options& o, const Resolved& r) {
  require_path(o.data, "--data");
  require_path(o.out, "--out");
  require_exists(o.data, "data directory");
  const fs::path out = o.out;
  fs::create_directories(out);
  setup_logging(out / "train.log");
  write_snapshot(out / "resolved_config.json", "train", o, r);
  const Dataset all = load_data_dir(o.data);
  const Splits s = split_data(all, r, out, r.train.model.rpn.num_classes);
  spdlog::info("training on {} well-labeled images ({} weak held out)", s.well.size(), s.weak.size());
  GroupRcnn<float> model(r.train.model, r.train.seed);
  TrainOptions opts;
  opts.out_dir = out;
  if (o.resume) {
    const fs::path latest = out / "latest.ckpt";
    require_exists(latest, "checkpoint to resume");
    opts.resume_from = latest;
  }
  const TrainResult res = train_regressor(model, s.well, r.train, opts);
  spdlog::info("finished {} epochs, checkpoint {}", res.epochs_completed, res.checkpoint.string());
  return kExitOk;
}

GroupRcnn<float> load_model(const fs::path& ckpt, TrainConfig* config) {
  require_exists(ckpt, "checkpoint");
  const Checkpoint meta = read_checkpoint_header(ckpt);
  GroupRcnn<float> model(meta.config.model, meta.config.seed);
  load_checkpoint(ckpt, model.parameters());
  if (config) *config = meta.config;
  return model;
}

int cmd_label(const Options& o, const Resolved& r) {
  require_path(o.data, "--data");
  require_path(o.checkpoint, "--checkpoint");
  require_path(o.out, "--out");
  const fs::path points = o.points.empty() ? fs::path(o.data) / "annotations.json" : fs::path(o.points);
  require_exists(points, "point annotation file");
  write_snapshot(fs::path(o.out).string() + ".config.json", "label", o, r);
  AnnotationSet set = read_annotations(points);
  for (ImageAnnotations& ann : set.images) {
    if (ann.points.empty() && !ann.boxes.empty()) {
      throw UsageError("image '" + ann.image_id + "' has no point annotations");
    }
    ann.boxes.clear();
    ann.scores.clear();
  }
  const Dataset weak = load_dataset(set, o.data);
  TrainConfig cfg;
  GroupRcnn<float> model = load_model(o.checkpoint, &cfg);
  pseudo_label(model, weak, o.out, cfg.model.rpn.num_classes);
  spdlog::info("wrote pseudo boxes for {} images to {}", weak.size(), o.out);
  return kExitOk;
}

int cmd_selftrain(const Options& o, Resolved r) {
  require_path(o.data, "--data");
  require_path(o.out, "--out");
  require_path(o.checkpoint, "--checkpoint");
  const fs::path out = o.out;
  fs::create_directories(out);
  setup_logging(out / "train.log");
  r.train.self_train.enabled = true;
  write_snapshot(out / "resolved_config.json", "selftrain", o, r);
  const Dataset all = load_data_dir(o.data);
  const Splits s = split_data(all, r, out, r.train.model.rpn.num_classes);
  TrainConfig base_cfg;
  GroupRcnn<float> model = load_model(o.checkpoint, &base_cfg);
  r.train.model = base_cfg.model;
  TrainOptions opts;
  opts.out_dir = out;
  const TrainResult res = self_train(model, s.well, s.weak, r.train, opts);
  spdlog::info("self-training finished after {} epochs, checkpoint {}", res.epochs_completed,
               res.checkpoint.string());
  return kExitOk;
}

int cmd_eval(const Options& o, const Resolved& r) {
  require_path(o.pred, "--pred");
  require_path(o.gt, "--gt");
  require_exists(o.pred, "prediction file");
  require_exists(o.gt, "ground-truth file");
  const fs::path out = o.out.empty() ? fs::path(o.pred).parent_path() / "eval_report.json" : fs::path(o.out);
  write_snapshot(out.string() + ".config.json", "eval", o, r);
  EvalReport report = evaluate(read_annotations(o.pred).images, read_annotations(o.gt).images);
  report.provenance = o.pred;
  const std::string text = to_json(report).dump(2);
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  std::ofstream(out) << text << '\n';
  std::cout << text << '\n';
  return kExitOk;
}

int cmd_ablate(const Options& o, const Resolved& r) {
  require_path(o.data, "--data");
  require_path(o.out, "--out");
  const fs::path out = o.out;
  fs::create_directories(out);
  setup_logging(out / "ablation.log");
  write_snapshot(out / "resolved_config.json", "ablate", o, r);
  const Dataset all = load_data_dir(o.data);
  const Splits s = split_data(all, r, out, r.train.model.rpn.num_classes);
  Dataset eval = s.weak_hidden;
  if (!o.eval_data.empty()) {
    eval = load_data_dir(o.eval_data);
    attach_points(eval.annotations, r.train.seed);
  }
  std::vector<AblationCell> cells = standard_ablation_matrix(r.train);
  if (!o.cells.empty()) {
    std::vector<AblationCell> chosen;
    std::stringstream ss(o.cells);
    std::string name;
    while (std::getline(ss, name, ',')) {
      auto it = std::find_if(cells.begin(), cells.end(), [&](const AblationCell& c) { return c.name == name; });
      if (it == cells.end()) {
        std::string valid;
        for (const auto& c : cells) valid += " " + c.name;
        throw UsageError("unknown ablation cell '" + name + "'; valid cells:" + valid);
      }
      chosen.push_back(*it);
    }
    cells = chosen;
  }
  const fs::path results = out / "results.jsonl";
  fs::remove(results);
  const auto rows = run_ablation(cells, s.well, eval, results);
  const std::string summary = ablation_summary(rows);
  std::ofstream(out / "summary.txt") << summary;
  std::cout << summary;
  return kExitOk;
}

}  // namespace

int parse_and_dispatch(const std::vector<std::string>& args) {
  CLI::App app{"pointbox: point-to-box regression on synthetic scenes"};
  app.require_subcommand(1);
  Options o;

  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--config", o.config_file, "JSON file of flat dotted keys; flags take precedence");
    cmd->add_option("--seed", o.seed, "Random seed (falls back to POINTBOX_SEED, then 0)");
  };
  auto add_model = [&](CLI::App* cmd) {
    cmd->add_option("--epochs", o.epochs, "Training epochs");
    cmd->add_option("--lr", o.lr, "Base learning rate");
    cmd->add_option("--k", o.k, "Cells per level in each proposal group");
    cmd->add_option("--assignment", o.assignment, "vanilla | instance");
    cmd->add_option("--dynamic-conv", o.dynamic_conv, "off | roi_only | embed_only | both");
    cmd->add_option("--relative-coords", o.relative_coords, "Relative-coordinate channels (true/false)");
    cmd->add_option("--projection-layers", o.projection_layers, "RoI projection layers (0-3)");
    cmd->add_option("--detach", o.detach, "Detach the pyramid from the RoI branch (true/false)");
  };

  CLI::App* gen = app.add_subcommand("gen-data", "Render a synthetic dataset");
  add_common(gen);
  gen->add_option("--out", o.out, "Output directory");
  gen->add_option("--images", o.images, "Number of images");
  gen->add_option("--crowding", o.crowding, "Probability of same-class overlap placement");

  CLI::App* train = app.add_subcommand("train", "Train the point-to-box regressor");
  add_common(train);
  add_model(train);
  train->add_option("--data", o.data, "Dataset directory");
  train->add_option("--well-fraction", o.well_fraction, "Fraction of images with boxes");
  train->add_option("--out", o.out, "Output directory");
  train->add_flag("--resume", o.resume, "Resume from <out>/latest.ckpt");

  CLI::App* label = app.add_subcommand("label", "Pseudo-label point annotations");
  add_common(label);
  label->add_option("--data", o.data, "Image directory");
  label->add_option("--points", o.points, "Annotation file with points (default <data>/annotations.json)");
  label->add_option("--checkpoint", o.checkpoint, "Trained checkpoint");
  label->add_option("--out", o.out, "Output annotation file");

  CLI::App* self = app.add_subcommand("selftrain", "Fine-tune with pseudo-labeled weak images");
  add_common(self);
  add_model(self);
  self->add_option("--data", o.data, "Dataset directory");
  self->add_option("--well-fraction", o.well_fraction, "Fraction of images with boxes");
  self->add_option("--checkpoint", o.checkpoint, "Base checkpoint");
  self->add_option("--out", o.out, "Output directory");
  self->add_option("--weak-weight", o.weak_weight, "Loss weight of weak images");
  self->add_option("--ratio", o.ratio, "Well:weak images per step, e.g. 1:1");

  CLI::App* eval = app.add_subcommand("eval", "Evaluate predictions against ground truth");
  add_common(eval);
  eval->add_option("--pred", o.pred, "Predicted annotation file");
  eval->add_option("--gt", o.gt, "Ground-truth annotation file");
  eval->add_option("--out", o.out, "Report path (default <pred dir>/eval_report.json)");

  CLI::App* ablate = app.add_subcommand("ablate", "Run the ablation matrix");
  add_common(ablate);
  add_model(ablate);
  ablate->add_option("--data", o.data, "Dataset directory");
  ablate->add_option("--eval-data", o.eval_data, "Separate evaluation dataset directory");
  ablate->add_option("--well-fraction", o.well_fraction, "Fraction of images with boxes");
  ablate->add_option("--out", o.out, "Output directory");
  ablate->add_option("--cells", o.cells, "Comma-separated subset of cells");

  setup_logging({});
  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e) == 0 ? kExitOk : kExitUsage;
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  CLI::App* cmd = app.get_subcommands().front();
  const std::string name = cmd->get_name();
  try {
    const Resolved r = resolve(cmd, o);
    if (name == "gen-data") return cmd_gen_data(o, r);
    if (name == "train") return cmd_train(o, r);
    if (name == "label") return cmd_label(o, r);
    if (name == "selftrain") return cmd_selftrain(o, r);
    if (name == "eval") return cmd_eval(o, r);
    if (name == "ablate") return cmd_ablate(o, r);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    spdlog::error("{} failed: {}", name, e.what());
    return kExitRuntime;
  }
  return kExitUsage;
}

}  // namespace pointbox
