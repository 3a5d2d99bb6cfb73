// SPDX-License-Identifier: Apache-2.0
#include <spdlog/spdlog.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include "pointbox/pipeline.hpp"

namespace pointbox {

namespace {

constexpr double kRecallIou = 0.5;

struct ImagePair {
  const ImageAnnotations* pred;
  const ImageAnnotations* gt;
};

double pred_score(const ImageAnnotations& pred, std::size_t i) {
  return pred.scores.empty() ? 1.0 : pred.scores[i];
}

// Prediction order: descending score, ties by position.
std::vector<std::size_t> score_order(const ImageAnnotations& pred) {
  std::vector<std::size_t> order(pred.boxes.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return pred_score(pred, a) > pred_score(pred, b); });
  return order;
}

// Greedy one-to-one matching; returns, per gt, whether it was matched.
std::vector<bool> match_image(const ImageAnnotations& pred, const ImageAnnotations& gt, double thr,
                              std::vector<bool>* pred_tp = nullptr) {
  std::vector<bool> gt_used(gt.boxes.size(), false);
  if (pred_tp) pred_tp->assign(pred.boxes.size(), false);
  for (std::size_t p : score_order(pred)) {
    const Box& pb = pred.boxes[p];
    double best = thr;
    int arg = -1;
    for (std::size_t g = 0; g < gt.boxes.size(); ++g) {
      if (gt_used[g] || gt.boxes[g].class_id != pb.class_id) continue;
      const double v = iou(pb, gt.boxes[g]);
      if (v >= best && (arg < 0 || v > best)) {
        best = v;
        arg = static_cast<int>(g);
      }
    }
    if (arg >= 0) {
      gt_used[arg] = true;
      if (pred_tp) (*pred_tp)[p] = true;
    }
  }
  return gt_used;
}

double quantile(std::vector<double> v, double q) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const double pos = q * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

// 101-point interpolated AP for one class at one threshold.
double average_precision(const std::vector<ImagePair>& pairs, int cls, double thr, int* num_gt) {
  struct Det {
    double score;
    bool tp;
  };
  std::vector<Det> dets;
  int total_gt = 0;
  for (const ImagePair& ip : pairs) {
    ImageAnnotations p, g;
    for (std::size_t i = 0; i < ip.pred->boxes.size(); ++i) {
      if (ip.pred->boxes[i].class_id != cls) continue;
      p.boxes.push_back(ip.pred->boxes[i]);
      p.scores.push_back(pred_score(*ip.pred, i));
    }
    for (const Box& b : ip.gt->boxes) {
      if (b.class_id == cls) g.boxes.push_back(b);
    }
    total_gt += static_cast<int>(g.boxes.size());
    std::vector<bool> tp;
    match_image(p, g, thr, &tp);
    for (std::size_t i = 0; i < p.boxes.size(); ++i) dets.push_back({p.scores[i], tp[i]});
  }
  *num_gt = total_gt;
  if (total_gt == 0) return -1.0;
  std::stable_sort(dets.begin(), dets.end(), [](const Det& a, const Det& b) { return a.score > b.score; });
  std::vector<double> precision, recall;
  int tp = 0, fp = 0;
  for (const Det& d : dets) {
    (d.tp ? tp : fp)++;
    precision.push_back(static_cast<double>(tp) / (tp + fp));
    recall.push_back(static_cast<double>(tp) / total_gt);
  }
  for (int i = static_cast<int>(precision.size()) - 2; i >= 0; --i) {
    precision[i] = std::max(precision[i], precision[i + 1]);
  }
  double sum = 0.0;
  for (int r = 0; r <= 100; ++r) {
    const double target = r / 100.0;
    const auto it = std::lower_bound(recall.begin(), recall.end(), target - 1e-12);
    if (it != recall.end()) sum += precision[static_cast<std::size_t>(it - recall.begin())];
  }
  return sum / 101.0;
}

Metrics compute_metrics(const std::vector<ImagePair>& pairs, double t1, double t2) {
  Metrics m;
  m.num_images = static_cast<int>(pairs.size());
  std::array<int, 3> bucket_total{}, bucket_hit{};
  int hit = 0;
  std::set<int> classes;
  for (const ImagePair& ip : pairs) {
    const std::vector<bool> matched = match_image(*ip.pred, *ip.gt, kRecallIou);
    for (std::size_t g = 0; g < ip.gt->boxes.size(); ++g) {
      const double a = ip.gt->boxes[g].area();
      const int bucket = a < t1 ? 0 : (a < t2 ? 1 : 2);
      ++bucket_total[bucket];
      ++m.num_gt;
      if (matched[g]) {
        ++bucket_hit[bucket];
        ++hit;
      }
      classes.insert(ip.gt->boxes[g].class_id);
    }
  }
  auto pct = [](int n, int d) { return d > 0 ? 100.0 * n / d : 0.0; };
  m.ar50 = pct(hit, m.num_gt);
  m.ar_small = pct(bucket_hit[0], bucket_total[0]);
  m.ar_medium = pct(bucket_hit[1], bucket_total[1]);
  m.ar_large = pct(bucket_hit[2], bucket_total[2]);

  double map_sum = 0.0, ap50_sum = 0.0, ap75_sum = 0.0;
  int n_cls = 0;
  for (int cls : classes) {
    double cls_sum = 0.0;
    for (int t = 0; t < 10; ++t) {
      const double thr = 0.5 + 0.05 * t;
      int num_gt = 0;
      const double ap = average_precision(pairs, cls, thr, &num_gt);
      cls_sum += ap;
      if (t == 0) ap50_sum += ap;
      if (t == 5) ap75_sum += ap;
    }
    map_sum += cls_sum / 10.0;
    ++n_cls;
  }
  if (n_cls > 0) {
    m.map = 100.0 * map_sum / n_cls;
    m.ap50 = 100.0 * ap50_sum / n_cls;
    m.ap75 = 100.0 * ap75_sum / n_cls;
  }
  return m;
}

}  // namespace

EvalReport evaluate(const std::vector<ImageAnnotations>& predictions,
                    const std::vector<ImageAnnotations>& ground_truth) {
  std::map<std::string, const ImageAnnotations*> preds;
  for (const ImageAnnotations& p : predictions) {
    if (!p.scores.empty() && p.scores.size() != p.boxes.size()) {
      throw std::invalid_argument("prediction '" + p.image_id + "' has scores for only some boxes");
    }
    preds[p.image_id] = &p;
  }
  std::set<std::string> gt_ids;
  std::vector<std::string> missing, extra;
  for (const ImageAnnotations& g : ground_truth) {
    gt_ids.insert(g.image_id);
    if (!preds.count(g.image_id)) missing.push_back(g.image_id);
  }
  for (const auto& [id, p] : preds) {
    if (!gt_ids.count(id)) extra.push_back(id);
  }
  if (!missing.empty() || !extra.empty()) {
    std::ostringstream os;
    os << "image ids differ between predictions and ground truth";
    auto list = [&os](const char* what, const std::vector<std::string>& ids) {
      if (ids.empty()) return;
      os << "; " << what << ":";
      for (const auto& id : ids) os << ' ' << id;
    };
    list("missing from predictions", missing);
    list("missing from ground truth", extra);
    throw std::invalid_argument(os.str());
  }

  std::vector<double> areas;
  for (const ImageAnnotations& g : ground_truth) {
    for (const Box& b : g.boxes) areas.push_back(b.area());
  }
  EvalReport report;
  report.area_terciles = {quantile(areas, 1.0 / 3.0), quantile(areas, 2.0 / 3.0)};
  std::vector<ImagePair> all, crowded, plain;
  for (const ImageAnnotations& g : ground_truth) {
    const ImagePair ip{preds.at(g.image_id), &g};
    all.push_back(ip);
    (g.crowded() ? crowded : plain).push_back(ip);
  }
  const auto [t1, t2] = report.area_terciles;
  report.overall = compute_metrics(all, t1, t2);
  report.crowded = compute_metrics(crowded, t1, t2);
  report.non_crowded = compute_metrics(plain, t1, t2);
  return report;
}

Json to_json(const Metrics& m) {
  return {{"ar50", m.ar50},     {"ar_small", m.ar_small}, {"ar_medium", m.ar_medium},
          {"ar_large", m.ar_large}, {"map", m.map},       {"ap50", m.ap50},
          {"ap75", m.ap75},     {"num_images", m.num_images}, {"num_gt", m.num_gt}};
}

Json to_json(const EvalReport& r) {
  return {{"overall", to_json(r.overall)},
          {"crowded", to_json(r.crowded)},
          {"non_crowded", to_json(r.non_crowded)},
          {"area_terciles", r.area_terciles},
          {"provenance", r.provenance}};
}

RecallReport oracle_recall(GroupRcnn<float>& model, const Dataset& eval, int k, bool with_ungrouped,
                           int top_n) {
  RecallReport rep;
  int grouped_hits = 0, ungrouped_hits = 0;
  for (std::size_t i = 0; i < eval.size(); ++i) {
    const ImageAnnotations& ann = eval.annotations[i];
    if (ann.boxes.empty()) continue;
    if (ann.points.size() != ann.boxes.size()) {
      throw std::invalid_argument("oracle_recall: image '" + ann.image_id + "' needs one point per box");
    }
    rep.num_gt += static_cast<int>(ann.boxes.size());
    if (k > 0) {
      const auto groups = model.proposal_groups(eval.images[i], ann.points, k);
      for (const ProposalGroup& g : groups) {
        const Box& gt = ann.boxes[g.instance_index];
        for (const Proposal& p : g.proposals) {
          if (iou(p.box, gt) >= kRecallIou) {
            ++grouped_hits;
            break;
          }
        }
      }
    }
    if (with_ungrouped) {
      const auto props = model.ungrouped(eval.images[i], top_n);
      for (const Box& gt : ann.boxes) {
        for (const Proposal& p : props) {
          if (p.box.class_id == gt.class_id && iou(p.box, gt) >= kRecallIou) {
            ++ungrouped_hits;
            break;
          }
        }
      }
    }
  }
  if (rep.num_gt > 0) {
    rep.grouped = 100.0 * grouped_hits / rep.num_gt;
    rep.ungrouped = 100.0 * ungrouped_hits / rep.num_gt;
  }
  return rep;
}

std::vector<AblationCell> standard_ablation_matrix(const TrainConfig& base) {
  std::vector<AblationCell> cells;
  auto add = [&](const std::string& name, auto&& edit) {
    TrainConfig c = base;
    edit(c);
    cells.push_back({name, c});
  };
  add("group_rcnn", [](TrainConfig&) {});
  add("k=1", [](TrainConfig& c) { c.model.k = 1; });
  add("no_relative_coords", [](TrainConfig& c) { c.model.head.relative_coords = false; });
  add("projection_0", [](TrainConfig& c) { c.model.num_projection_layers = 0; });
  add("projection_2", [](TrainConfig& c) { c.model.num_projection_layers = 2; });
  add("no_detach", [](TrainConfig& c) { c.model.detach = false; });
  add("dynamic_conv_off", [](TrainConfig& c) { c.model.head.dynamic_conv = DynamicConvMode::off; });
  add("dynamic_conv_roi_only", [](TrainConfig& c) { c.model.head.dynamic_conv = DynamicConvMode::roi_only; });
  add("dynamic_conv_embed_only",
      [](TrainConfig& c) { c.model.head.dynamic_conv = DynamicConvMode::embed_only; });
  auto baseline = [](TrainConfig& c) {
    c.model.assignment = AssignMode::vanilla;
    c.model.head.relative_coords = false;
    c.model.head.dynamic_conv = DynamicConvMode::off;
    c.model.detach = false;
    c.model.num_projection_layers = 0;
  };
  add("vanilla_baseline", baseline);
  add("naive_instance", [&](TrainConfig& c) {
    baseline(c);
    c.model.assignment = AssignMode::instance;
  });
  add("group_rcnn_vanilla_assign", [](TrainConfig& c) {
    c.model.assignment = AssignMode::vanilla;
    c.model.detach = false;
  });
  return cells;
}

std::vector<AblationResult> run_ablation(const std::vector<AblationCell>& cells, const Dataset& well,
                                         const Dataset& eval, const std::filesystem::path& results_path) {
  std::vector<AblationResult> results;
  for (const AblationCell& cell : cells) {
    AblationResult res{cell.name, cell.config, std::nullopt, "", 0.0};
    const auto t0 = std::chrono::steady_clock::now();
    try {
      spdlog::info("ablation cell '{}' starting", cell.name);
      GroupRcnn<float> model(cell.config.model, cell.config.seed);
      train_regressor(model, well, cell.config);
      EvalReport report = evaluate(predict(model, eval), eval.annotations);
      report.provenance = cell.name;
      res.report = report;
    } catch (const std::exception& e) {
      res.error = e.what();
      spdlog::error("ablation cell '{}' failed: {}", cell.name, e.what());
    }
    res.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (!results_path.empty()) {
      Json line;
      line["name"] = res.name;
      line["config"] = to_flat_json(res.config);
      line["metrics"] = res.report ? to_json(*res.report) : Json(nullptr);
      if (!res.error.empty()) line["error"] = res.error;
      line["wall_time_s"] = res.wall_time_s;
      line["seed"] = res.config.seed;
      std::ofstream(results_path, std::ios::app) << line.dump() << '\n';
    }
    results.push_back(std::move(res));
  }
  return results;
}

std::string ablation_summary(const std::vector<AblationResult>& results) {
  std::ostringstream os;
  char buf[256];
  std::snprintf(buf, sizeof(buf), "%-28s %7s %7s %7s %7s %9s %9s %8s\n", "config", "AR50", "mAP", "AP50",
                "AP75", "mAP-crwd", "mAP-nonc", "time_s");
  os << buf;
  for (const AblationResult& r : results) {
    if (!r.report) {
      os << r.name << "  FAILED: " << r.error << '\n';
      continue;
    }
    const EvalReport& e = *r.report;
    std::snprintf(buf, sizeof(buf), "%-28s %7.1f %7.1f %7.1f %7.1f %9.1f %9.1f %8.0f\n", r.name.c_str(),
                  e.overall.ar50, e.overall.map, e.overall.ap50, e.overall.ap75, e.crowded.map,
                  e.non_crowded.map, r.wall_time_s);
    os << buf;
  }
  return os.str();
}

}  // namespace pointbox
