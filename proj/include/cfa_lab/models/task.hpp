#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "cfa_lab/models/agent.hpp"

namespace cfa_lab {

inline constexpr double kClsWeight = 1.0;
inline constexpr double kRegWeight = 2.0;
inline constexpr double kDirWeight = 0.2;
// Object-center cells are rare; each counts this many times in the
// objectness average.
inline constexpr double kPositiveCellWeight = 20.0;

// The 2-way direction head separates a heading from its reverse; together
// with the long axis of the box it recovers the cardinal code.
inline int direction_bin(int heading) { return heading >= 2 ? 1 : 0; }

inline int heading_from(int bin, double width, double height) {
  return width >= height ? (bin ? 2 : 0) : (bin ? 3 : 1);
}

// Per-cell detection targets over a res x res grid spanning
// [-half_extent, half_extent) in both ego axes.
struct DetectionTargets {
  Grid cls;     // [1,1,R,R] 1 at object-center cells
  Grid reg;     // [1,4,R,R] (dx, dy, log w, log h)
  Grid dir;     // [1,1,R,R] direction bin as a real
  Grid mask;    // [1,1,R,R] same as cls
};

inline DetectionTargets detection_targets(const std::vector<Box>& boxes, int res, double half_extent) {
  const double s = 2 * half_extent / res;
  const std::size_t plane = static_cast<std::size_t>(res) * res;
  std::vector<float> cls(plane, 0.0f), reg(4 * plane, 0.0f), dir(plane, 0.0f);
  for (const auto& b : boxes) {
    const int c = static_cast<int>(std::floor((b.cx + half_extent) / s));
    const int r = static_cast<int>(std::floor((b.cy + half_extent) / s));
    if (c < 0 || r < 0 || c >= res || r >= res) continue;
    const std::size_t i = static_cast<std::size_t>(r) * res + c;
    if (cls[i] > 0) continue;  // first box claims a shared center cell
    cls[i] = 1.0f;
    reg[i] = static_cast<float>((b.cx + half_extent) / s - (c + 0.5));
    reg[plane + i] = static_cast<float>((b.cy + half_extent) / s - (r + 0.5));
    reg[2 * plane + i] = static_cast<float>(std::log(b.width));
    reg[3 * plane + i] = static_cast<float>(std::log(b.height));
    dir[i] = static_cast<float>(direction_bin(b.direction));
  }
  DetectionTargets t;
  t.cls = Grid::from({1, 1, res, res}, cls);
  t.reg = Grid::from({1, 4, res, res}, std::move(reg));
  t.dir = Grid::from({1, 1, res, res}, std::move(dir));
  t.mask = Grid::from({1, 1, res, res}, std::move(cls));
  return t;
}

// Weighted detection loss (objectness BCE over all cells with positive
// cells up-weighted, smooth-L1
// regression and direction cross-entropy at positive cells) or pixelwise
// BCE for segmentation.
template <typename T>
BasicGrid<T> task_loss(const ModelOutputT<T>& out, const GroundTruth& gt, double half_extent = 24.0) {
  if (out.task != gt.task)
    throw ConfigError(std::string("task_loss: output task ") + to_string(out.task) + " does not match ground truth " +
                      to_string(gt.task));
  if (gt.task != Task::detection) {
    if (out.seg.shape() != gt.mask.shape())
      throw DimensionError("task_loss: segmentation logits " + shape_str(out.seg.shape()) + " vs mask " +
                           shape_str(gt.mask.shape()));
    return ops::bce_with_logits(out.seg, gt.mask.template cast<T>());
  }
  const int res = out.det.cls.dim(2);
  const auto t = detection_targets(gt.boxes, res, half_extent);
  const auto mask = t.mask.template cast<T>();
  std::vector<T> w(t.cls.size());
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = t.cls[i] > 0 ? T(kPositiveCellWeight) : T(1);
  const auto cls = ops::bce_with_logits(out.det.cls, t.cls.template cast<T>(), BasicGrid<T>::from(t.cls.shape(), std::move(w)));
  const auto reg = ops::masked_smooth_l1(out.det.reg, t.reg.template cast<T>(), mask);
  const auto dir = ops::masked_softmax_ce(out.det.dir, t.dir.template cast<T>(), mask);
  return ops::add(ops::add(ops::scale(cls, T(kClsWeight)), ops::scale(reg, T(kRegWeight))),
                  ops::scale(dir, T(kDirWeight)));
}

// Greedy non-maximum suppression. Candidates are visited by descending
// score, ties broken by their position in `boxes`.
inline std::vector<Box> nms(std::vector<Box> boxes, double iou_threshold) {
  std::vector<std::size_t> order(boxes.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return boxes[a].score > boxes[b].score; });
  std::vector<Box> kept;
  for (auto i : order) {
    bool keep = true;
    for (const auto& k : kept)
      if (box_iou(k, boxes[i]) > iou_threshold) {
        keep = false;
        break;
      }
    if (keep) kept.push_back(boxes[i]);
  }
  return kept;
}

// Cells whose sigmoid score exceeds the threshold become boxes (row-major
// order), followed by NMS.
inline std::vector<Box> decode_boxes(const DetectionOutput& det, double score_threshold = 0.3, double nms_iou = 0.5,
                                     double half_extent = 24.0) {
  const int H = det.cls.dim(2), W = det.cls.dim(3);
  const double s = 2 * half_extent / W;
  const std::size_t plane = static_cast<std::size_t>(H) * W;
  std::vector<Box> cands;
  for (int r = 0; r < H; ++r)
    for (int c = 0; c < W; ++c) {
      const std::size_t i = static_cast<std::size_t>(r) * W + c;
      const float score = ops::sigmoid_scalar(det.cls[i]);
      if (score <= score_threshold) continue;
      Box b;
      b.cx = (c + 0.5 + det.reg[i]) * s - half_extent;
      b.cy = (r + 0.5 + det.reg[plane + i]) * s - half_extent;
      b.width = std::exp(std::clamp(static_cast<double>(det.reg[2 * plane + i]), -4.0, 4.0));
      b.height = std::exp(std::clamp(static_cast<double>(det.reg[3 * plane + i]), -4.0, 4.0));
      b.score = score;
      b.direction = heading_from(det.dir[plane + i] > det.dir[i] ? 1 : 0, b.width, b.height);
      cands.push_back(b);
    }
  return nms(std::move(cands), nms_iou);
}

// One scene's predictions and ground truth for pooled AP.
struct DetectionSample {
  std::vector<Box> preds, gts;
};

// All-point interpolated AP pooled over samples. Within a sample,
// predictions are matched by descending score to the unmatched ground-truth
// box of highest IoU (at least iou_threshold).
inline double average_precision(const std::vector<DetectionSample>& samples, double iou_threshold) {
  struct Hit {
    float score;
    std::size_t sample, index;
    bool tp;
  };
  std::vector<Hit> hits;
  std::size_t n_gt = 0;
  for (std::size_t si = 0; si < samples.size(); ++si) {
    const auto& sm = samples[si];
    n_gt += sm.gts.size();
    std::vector<std::size_t> order(sm.preds.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](auto a, auto b) { return sm.preds[a].score > sm.preds[b].score; });
    std::vector<bool> used(sm.gts.size(), false);
    for (auto pi : order) {
      double best = -1;
      std::size_t arg = 0;
      for (std::size_t g = 0; g < sm.gts.size(); ++g) {
        if (used[g]) continue;
        const double iou = box_iou(sm.preds[pi], sm.gts[g]);
        if (iou > best) best = iou, arg = g;
      }
      const bool tp = best >= iou_threshold;
      if (tp) used[arg] = true;
      hits.push_back({sm.preds[pi].score, si, pi, tp});
    }
  }
  if (n_gt == 0) return hits.empty() ? 1.0 : 0.0;
  std::stable_sort(hits.begin(), hits.end(), [](const Hit& a, const Hit& b) { return a.score > b.score; });
  std::vector<double> prec, rec;
  std::size_t tp = 0;
  for (std::size_t k = 0; k < hits.size(); ++k) {
    tp += hits[k].tp;
    prec.push_back(static_cast<double>(tp) / static_cast<double>(k + 1));
    rec.push_back(static_cast<double>(tp) / static_cast<double>(n_gt));
  }
  for (std::size_t k = prec.size(); k-- > 1;) prec[k - 1] = std::max(prec[k - 1], prec[k]);
  double ap = 0, prev_r = 0;
  for (std::size_t k = 0; k < prec.size(); ++k) {
    ap += (rec[k] - prev_r) * prec[k];
    prev_r = rec[k];
  }
  return ap;
}

inline double average_precision(const std::vector<Box>& preds, const std::vector<Box>& gts, double iou_threshold) {
  return average_precision(std::vector<DetectionSample>{{preds, gts}}, iou_threshold);
}

// Foreground/background confusion counts, accumulated over scenes.
struct SegCounts {
  double tp = 0, fp = 0, fn = 0, tn = 0;

  void add(const SegCounts& o) {
    tp += o.tp;
    fp += o.fp;
    fn += o.fn;
    tn += o.tn;
  }

  // Mean of foreground and background IoU; a class absent from both masks
  // scores 1.
  double miou() const {
    const double fg_u = tp + fp + fn, bg_u = tn + fp + fn;
    const double fg = fg_u > 0 ? tp / fg_u : 1.0, bg = bg_u > 0 ? tn / bg_u : 1.0;
    return (fg + bg) / 2;
  }
};

// Counts over cells where `region` is non-zero (all cells when empty).
// Predictions are foreground when pred > threshold.
inline SegCounts seg_counts(const Grid& pred, const Grid& gt, double threshold,
                            const std::vector<std::uint8_t>& region = {}) {
  if (pred.shape() != gt.shape())
    throw DimensionError("mean_iou: " + shape_str(pred.shape()) + " vs " + shape_str(gt.shape()));
  if (!region.empty() && region.size() != pred.size()) throw DimensionError("mean_iou: region size mismatch");
  SegCounts c;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (!region.empty() && !region[i]) continue;
    const bool p = pred[i] > threshold, g = gt[i] > 0.5f;
    if (p && g) ++c.tp;
    else if (p) ++c.fp;
    else if (g) ++c.fn;
    else ++c.tn;
  }
  return c;
}

// mIoU of two binary masks (values > 0.5 are foreground).
inline double mean_iou(const Grid& pred_mask, const Grid& gt_mask) {
  return seg_counts(pred_mask, gt_mask, 0.5).miou();
}

}  // namespace cfa_lab
