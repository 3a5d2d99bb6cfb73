// SPDX-License-Identifier: Apache-2.0
#include "pointbox/grouped_rpn.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <stdexcept>

namespace pointbox {

namespace {
double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}
}  // namespace

double DenseHeadValues::logit(int level, int row, int col, int anchor, int cls) const {
  const LevelShape& s = levels[level];
  const std::size_t plane = static_cast<std::size_t>(s.height) * s.width;
  return class_logits[level][(anchor * num_classes + cls) * plane + row * s.width + col];
}

double DenseHeadValues::score(int level, int row, int col, int anchor, int cls) const {
  return sigmoid(logit(level, row, col, anchor, cls));
}

Deltas DenseHeadValues::deltas(int level, int row, int col, int anchor) const {
  const LevelShape& s = levels[level];
  const std::size_t plane = static_cast<std::size_t>(s.height) * s.width;
  const std::size_t pos = static_cast<std::size_t>(row) * s.width + col;
  Deltas d;
  for (int k = 0; k < 4; ++k) d[k] = box_deltas[level][(anchor * 4 + k) * plane + pos];
  return d;
}

template <typename T>
DenseHeadValues snapshot(const Tape<T>& tape, const DenseHeadOutput& out, int num_anchors,
                         int num_classes) {
  DenseHeadValues v;
  v.num_anchors = num_anchors;
  v.num_classes = num_classes;
  v.levels = out.levels;
  for (std::size_t l = 0; l < out.levels.size(); ++l) {
    const auto& c = tape.value(out.class_logits[l]).data;
    const auto& d = tape.value(out.box_deltas[l]).data;
    v.class_logits.emplace_back(c.begin(), c.end());
    v.box_deltas.emplace_back(d.begin(), d.end());
  }
  return v;
}

template <typename T>
DenseHead<T>::DenseHead(const RpnConfig& config, int in_channels, std::mt19937_64& rng) {
  const int n = config.anchors.anchors_per_cell();
  tower_ = nn::Conv2d<T>("rpn.tower", in_channels, config.head_channels, 3, 1, rng);
  cls_ = nn::Conv2d<T>("rpn.cls", config.head_channels, n * config.num_classes, 3, 1, rng,
                       nn::Init::small_normal);
  reg_ = nn::Conv2d<T>("rpn.reg", config.head_channels, n * 4, 3, 1, rng, nn::Init::small_normal);
  const T prior = static_cast<T>(-std::log((1.0 - config.prior_probability) / config.prior_probability));
  std::fill(cls_.bias.value.data.begin(), cls_.bias.value.data.end(), prior);
}

template <typename T>
DenseHeadOutput DenseHead<T>::forward(Tape<T>& tape, const FeaturePyramid& pyramid) {
  DenseHeadOutput out;
  for (int l = 0; l < pyramid.num_levels(); ++l) {
    Var f = nn::relu(tape, tower_(tape, pyramid.levels[l]));
    out.class_logits.push_back(cls_(tape, f));
    out.box_deltas.push_back(reg_(tape, f));
    const auto& s = tape.shape(pyramid.levels[l]);
    out.levels.push_back({s[1], s[2], pyramid.strides[l]});
  }
  return out;
}

template <typename T>
void DenseHead<T>::collect(nn::ParameterList<T>& out) {
  tower_.collect(out);
  cls_.collect(out);
  reg_.collect(out);
}

const Box& AnchorSet::at(int level, int row, int col, int anchor) const {
  const LevelShape& s = levels[level];
  return per_level[level][(static_cast<std::size_t>(row) * s.width + col) * anchors_per_cell + anchor];
}

std::size_t AnchorSet::total() const {
  std::size_t n = 0;
  for (const auto& l : per_level) n += l.size();
  return n;
}

AnchorSet make_anchors(const std::vector<LevelShape>& levels, const AnchorSpec& spec) {
  spec.validate();
  if (spec.base_size_per_level.size() < levels.size()) {
    throw std::invalid_argument("anchor spec has fewer base sizes than pyramid levels");
  }
  AnchorSet set;
  set.levels = levels;
  set.anchors_per_cell = spec.anchors_per_cell();
  for (std::size_t l = 0; l < levels.size(); ++l) {
    set.per_level.push_back(anchor_grid(levels[l].height, levels[l].width, levels[l].stride,
                                        spec.base_size_per_level[l], spec));
  }
  return set;
}

std::vector<LevelShape> pyramid_shapes(int padded_height, int padded_width) {
  std::vector<LevelShape> shapes;
  for (int l = 0; l < kNumLevels; ++l) {
    const int stride = level_stride(kFirstLevel + l);
    shapes.push_back({(padded_height + stride - 1) / stride, (padded_width + stride - 1) / stride,
                      stride});
  }
  return shapes;
}

std::pair<double, double> project_point(const PointAnnotation& point, double stride) {
  return {point.x / stride, point.y / stride};
}

std::vector<Cell> select_k_cells(std::pair<double, double> projected, int k, int height, int width) {
  if (k < 1) throw std::invalid_argument("select_k_cells: k must be >= 1");
  const auto [px, py] = projected;
  struct Candidate {
    double dist;
    int row, col;
  };
  // Levels hold at most a few thousand cells, so an exact scan is cheap.
  std::vector<Candidate> cands;
  cands.reserve(static_cast<std::size_t>(height) * width);
  for (int r = 0; r < height; ++r) {
    for (int c = 0; c < width; ++c) {
      const double dx = (c + 0.5) - px;
      const double dy = (r + 0.5) - py;
      cands.push_back({dx * dx + dy * dy, r, c});
    }
  }
  const std::size_t take = std::min<std::size_t>(k, cands.size());
  std::partial_sort(cands.begin(), cands.begin() + take, cands.end(),
                    [](const Candidate& a, const Candidate& b) {
                      if (a.dist != b.dist) return a.dist < b.dist;
                      if (a.row != b.row) return a.row < b.row;
                      return a.col < b.col;
                    });
  std::vector<Cell> cells;
  for (std::size_t i = 0; i < take; ++i) cells.push_back({cands[i].row, cands[i].col});
  return cells;
}

std::vector<ProposalGroup> build_groups(const std::vector<PointAnnotation>& points,
                                        const DenseHeadValues& head, const AnchorSet& anchors,
                                        int k, double image_width, double image_height,
                                        const Deltas& delta_stds) {
  std::vector<ProposalGroup> groups;
  groups.reserve(points.size());
  for (std::size_t i = 0; i < points.size(); ++i) {
    const PointAnnotation& p = points[i];
    if (p.class_id < 0 || p.class_id >= head.num_classes) {
      throw std::invalid_argument("build_groups: point class out of range");
    }
    ProposalGroup g;
    g.instance_index = static_cast<int>(i);
    g.point = p;
    for (int l = 0; l < static_cast<int>(head.levels.size()); ++l) {
      const LevelShape& s = head.levels[l];
      for (const Cell& cell : select_k_cells(project_point(p, s.stride), k, s.height, s.width)) {
        for (int a = 0; a < head.num_anchors; ++a) {
          Proposal prop;
          prop.box = decode_deltas(anchors.at(l, cell.row, cell.col, a),
                                   head.deltas(l, cell.row, cell.col, a), delta_stds)
                         .clipped(image_width, image_height);
          prop.box.class_id = p.class_id;
          prop.score = head.score(l, cell.row, cell.col, a, p.class_id);
          prop.level = l;
          prop.row = cell.row;
          prop.col = cell.col;
          prop.anchor = a;
          g.proposals.push_back(prop);
        }
      }
    }
    g.group_size_raw = static_cast<int>(g.proposals.size());
    groups.push_back(std::move(g));
  }
  return groups;
}

namespace {
// Descending score, ties to the earlier entry.
void sort_by_score(std::vector<Proposal>& props) {
  std::stable_sort(props.begin(), props.end(),
                   [](const Proposal& a, const Proposal& b) { return a.score > b.score; });
}
}  // namespace

std::vector<ProposalGroup> group_nms(std::vector<ProposalGroup> groups, double iou_threshold,
                                     int keep) {
  std::map<int, std::vector<std::size_t>> by_class;
  for (std::size_t g = 0; g < groups.size(); ++g) by_class[groups[g].point.class_id].push_back(g);

  std::vector<std::vector<Proposal>> survivors(groups.size());
  for (const auto& [cls, members] : by_class) {
    std::vector<Box> boxes;
    std::vector<double> scores;
    std::vector<std::pair<std::size_t, std::size_t>> origin;
    for (std::size_t g : members) {
      for (std::size_t j = 0; j < groups[g].proposals.size(); ++j) {
        boxes.push_back(groups[g].proposals[j].box);
        scores.push_back(groups[g].proposals[j].score);
        origin.emplace_back(g, j);
      }
    }
    for (std::size_t idx : nms(boxes, scores, iou_threshold)) {
      const auto [g, j] = origin[idx];
      survivors[g].push_back(groups[g].proposals[j]);
    }
  }

  for (std::size_t g = 0; g < groups.size(); ++g) {
    std::vector<Proposal>& kept = survivors[g];
    if (kept.empty() && !groups[g].proposals.empty()) {
      std::vector<Proposal> raw = groups[g].proposals;
      sort_by_score(raw);
      kept.push_back(raw.front());
    }
    sort_by_score(kept);
    if (static_cast<int>(kept.size()) > keep) kept.resize(keep);
    groups[g].proposals = std::move(kept);
  }
  return groups;
}

std::vector<Proposal> ungrouped_proposals(const DenseHeadValues& head, const AnchorSet& anchors,
                                          double image_width, double image_height,
                                          const Deltas& delta_stds, double iou_threshold,
                                          int top_n, int pre_nms) {
  std::map<int, std::vector<Proposal>> by_class;
  for (int l = 0; l < static_cast<int>(head.levels.size()); ++l) {
    const LevelShape& s = head.levels[l];
    struct Cand {
      double logit;
      int row, col, anchor, cls;
    };
    std::vector<Cand> cands;
    for (int r = 0; r < s.height; ++r) {
      for (int c = 0; c < s.width; ++c) {
        for (int a = 0; a < head.num_anchors; ++a) {
          for (int cl = 0; cl < head.num_classes; ++cl) {
            cands.push_back({head.logit(l, r, c, a, cl), r, c, a, cl});
          }
        }
      }
    }
    const std::size_t take = std::min<std::size_t>(pre_nms, cands.size());
    std::partial_sort(cands.begin(), cands.begin() + take, cands.end(),
                      [](const Cand& a, const Cand& b) { return a.logit > b.logit; });
    for (std::size_t i = 0; i < take; ++i) {
      const Cand& c = cands[i];
      Proposal p;
      p.box = decode_deltas(anchors.at(l, c.row, c.col, c.anchor),
                            head.deltas(l, c.row, c.col, c.anchor), delta_stds)
                  .clipped(image_width, image_height);
      p.box.class_id = c.cls;
      p.score = sigmoid(c.logit);
      p.level = l;
      p.row = c.row;
      p.col = c.col;
      p.anchor = c.anchor;
      by_class[c.cls].push_back(p);
    }
  }
  std::vector<Proposal> kept;
  for (auto& [cls, props] : by_class) {
    std::vector<Box> boxes;
    std::vector<double> scores;
    for (const Proposal& p : props) {
      boxes.push_back(p.box);
      scores.push_back(p.score);
    }
    for (std::size_t idx : nms(boxes, scores, iou_threshold)) kept.push_back(props[idx]);
  }
  sort_by_score(kept);
  if (static_cast<int>(kept.size()) > top_n) kept.resize(top_n);
  return kept;
}

std::vector<int> assign_anchors(const std::vector<Box>& anchors, const std::vector<Box>& gts,
                                double positive_iou, double negative_iou) {
  std::vector<int> result(anchors.size(), kBackground);
  if (gts.empty()) return result;
  for (std::size_t i = 0; i < anchors.size(); ++i) {
    double best = -1.0;
    int arg = -1;
    for (std::size_t g = 0; g < gts.size(); ++g) {
      const double v = iou(anchors[i], gts[g]);
      if (v > best) {
        best = v;
        arg = static_cast<int>(g);
      }
    }
    if (best >= positive_iou) result[i] = arg;
    else if (best >= negative_iou) result[i] = kIgnore;
  }
  return result;
}

template <typename T>
Var rpn_loss(Tape<T>& tape, const DenseHeadOutput& head, const AnchorSet& anchors,
             const std::vector<Box>& ground_truth, const RpnConfig& config) {
  const int n = anchors.anchors_per_cell;
  const int C = config.num_classes;
  std::vector<std::vector<int>> assigned;
  std::size_t num_pos = 0;
  for (std::size_t l = 0; l < head.levels.size(); ++l) {
    assigned.push_back(
        assign_anchors(anchors.per_level[l], ground_truth, config.positive_iou, config.negative_iou));
    for (int a : assigned.back()) num_pos += a >= 0 ? 1 : 0;
  }
  const T normalizer = static_cast<T>(std::max<std::size_t>(1, num_pos));

  Var total;
  for (std::size_t l = 0; l < head.levels.size(); ++l) {
    const LevelShape& s = head.levels[l];
    const std::size_t plane = static_cast<std::size_t>(s.height) * s.width;
    std::vector<std::int8_t> cls_targets(plane * n * C, 0);
    std::vector<T> reg_targets(plane * n * 4, T(0));
    std::vector<T> reg_weights(plane * n * 4, T(0));
    bool any_pos = false;
    for (std::size_t pos = 0; pos < plane; ++pos) {
      for (int a = 0; a < n; ++a) {
        const int match = assigned[l][pos * n + a];
        if (match == kIgnore) {
          for (int c = 0; c < C; ++c) cls_targets[(a * C + c) * plane + pos] = -1;
          continue;
        }
        if (match < 0) continue;
        any_pos = true;
        const Box& gt = ground_truth[match];
        cls_targets[(a * C + gt.class_id) * plane + pos] = 1;
        const Deltas t = encode_deltas(anchors.per_level[l][pos * n + a], gt, config.delta_stds);
        for (int d = 0; d < 4; ++d) {
          reg_targets[(a * 4 + d) * plane + pos] = static_cast<T>(t[d]);
          reg_weights[(a * 4 + d) * plane + pos] = T(1);
        }
      }
    }
    Var cls = nn::sigmoid_focal_loss(tape, head.class_logits[l], cls_targets,
                                     static_cast<T>(config.focal_alpha),
                                     static_cast<T>(config.focal_gamma), normalizer);
    total = total.valid() ? nn::add(tape, total, cls) : cls;
    if (any_pos) {
      Var reg = nn::smooth_l1_loss(tape, head.box_deltas[l], reg_targets, reg_weights,
                                   static_cast<T>(config.smooth_l1_beta), normalizer);
      total = nn::add(tape, total, reg);
    }
  }
  return total;
}

#define POINTBOX_INSTANTIATE_RPN(T)                                                           \
  template DenseHeadValues snapshot<T>(const Tape<T>&, const DenseHeadOutput&, int, int);     \
  template class DenseHead<T>;                                                                \
  template Var rpn_loss<T>(Tape<T>&, const DenseHeadOutput&, const AnchorSet&,                \
                           const std::vector<Box>&, const RpnConfig&);

POINTBOX_INSTANTIATE_RPN(float)
POINTBOX_INSTANTIATE_RPN(double)

}  // namespace pointbox
