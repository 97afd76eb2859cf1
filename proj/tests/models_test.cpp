#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "cfa_lab/models.hpp"

using namespace cfa_lab;

namespace {

AgentSpec tiny_spec(Task task = Task::dynamic_seg, Fusion fusion = Fusion::max_gate) {
  AgentSpec s;
  s.task = task;
  s.fusion = fusion;
  s.channels = 4;
  s.resolution = 4;
  s.depth = 2;
  s.stage_widths = {4, 6};
  s.head_width = 5;
  s.sensor_res = 8;
  s.out_res = 8;
  return s;
}

GridD random_d(Shape shape, std::uint64_t seed, double scale = 1.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, scale);
  std::vector<double> v(shape_size(shape));
  for (auto& x : v) x = n(rng);
  return GridD::from(std::move(shape), std::move(v));
}

Grid random_f(Shape shape, std::uint64_t seed, double scale = 1.0) { return random_d(std::move(shape), seed, scale).cast<float>(); }

Box box(double cx, double cy, double w, double h, float score = 1.0f) {
  Box b;
  b.cx = cx;
  b.cy = cy;
  b.width = w;
  b.height = h;
  b.score = score;
  return b;
}

}  // namespace

TEST(Encode, ZeroFinalLayerGivesZeroFeatures) {
  AgentSpec spec;
  auto model = AgentModel::create(spec, 7);
  for (auto& [name, g] : model.params.mutable_entries())
    if (name.rfind("encoder.final", 0) == 0) std::fill(g.mutable_values().begin(), g.mutable_values().end(), 0.0f);
  SensorFrame frame{Modality::lidar_like, Grid::zeros({1, 2, 48, 48}), 0};
  const auto f = encode(spec, model.params, frame);
  EXPECT_EQ(f.shape(), spec.feature_shape());
  for (float v : f.values()) EXPECT_EQ(v, 0.0f);
}

TEST(Encode, DifferentChannelCountsGiveIncompatibleShapes) {
  AgentSpec a, b;
  b.agent_id = 1;
  b.channels = 32;
  b.resolution = 12;
  const auto scene = generate_scene(11);
  const auto frame = render_lidar_like(scene.world, scene.agents[0]);
  const auto fa = encode(a, AgentModel::create(a, 1).params, frame);
  const auto fb = encode(b, AgentModel::create(b, 1).params, frame);
  EXPECT_NE(fa.shape(), fb.shape());
  EXPECT_THROW(fuse(a, AgentModel::create(a, 1).params, std::vector<Grid>{fb}), DimensionError);
}

TEST(Encode, ModalityMismatchIsConfigError) {
  AgentSpec spec;
  auto model = AgentModel::create(spec, 1);
  SensorFrame frame{Modality::camera_like, Grid::zeros({1, 3, 48, 48}), 0};
  EXPECT_THROW(encode(spec, model.params, frame), ConfigError);
}

TEST(Encode, WeightGradientMatchesFiniteDifferences) {
  const auto spec = tiny_spec();
  auto params = build_agent_params(spec, 3).clone<double>();
  const auto x = random_d({1, 2, 8, 8}, 5);
  const auto target = random_d(spec.feature_shape(), 6);
  auto fn = [&] { return ops::l2_distance(encode(spec, params, x), target); };
  const auto r = grad_check_params<double>(fn, params, 1e-6, 3);
  EXPECT_GT(r.checked, 100u);
  EXPECT_LT(r.max_rel_error, 1e-3);
}

TEST(Encode, SpecValidationRejectsNonDividingResolution) {
  AgentSpec s;
  s.resolution = 20;
  EXPECT_THROW(s.validate(), ConfigError);
}

TEST(Fuse, SingleFeatureWithIdentityGateIsUnchanged) {
  AgentSpec spec;
  auto model = AgentModel::create(spec, 2);
  const auto f = random_f(spec.feature_shape(), 9);
  const auto out = fuse(spec, model.params, std::vector<Grid>{f});
  for (std::size_t i = 0; i < f.size(); ++i) EXPECT_FLOAT_EQ(out[i], f[i]);
}

TEST(Fuse, MaxIsIdempotent) {
  AgentSpec spec;
  auto model = AgentModel::create(spec, 2);
  const auto f = random_f(spec.feature_shape(), 10);
  const auto one = fuse(spec, model.params, std::vector<Grid>{f});
  const auto two = fuse(spec, model.params, std::vector<Grid>{f, f});
  for (std::size_t i = 0; i < f.size(); ++i) EXPECT_EQ(one[i], two[i]);
}

TEST(Fuse, AttentionWeightsSumToOne) {
  AgentSpec spec;
  spec.fusion = Fusion::attention;
  auto model = AgentModel::create(spec, 4);
  std::vector<Grid> fs;
  for (int j = 0; j < 3; ++j) fs.push_back(random_f(spec.feature_shape(), 20 + j, 2.0));
  const auto a = attention_weights(spec, model.params, fs, 0);
  ASSERT_EQ(a.dim(1), 3);
  const int plane = spec.resolution * spec.resolution;
  for (int p = 0; p < plane; ++p) {
    double s = 0;
    for (int j = 0; j < 3; ++j) {
      EXPECT_GE(a[j * plane + p], 0.0f);
      s += a[j * plane + p];
    }
    EXPECT_NEAR(s, 1.0, 1e-5);
  }
}

TEST(Fuse, PermutationInvariance) {
  for (auto fusion : {Fusion::max_gate, Fusion::attention}) {
    AgentSpec spec;
    spec.fusion = fusion;
    auto model = AgentModel::create(spec, 5);
    const auto e = random_f(spec.feature_shape(), 30), a = random_f(spec.feature_shape(), 31),
               b = random_f(spec.feature_shape(), 32);
    const auto x = fuse(spec, model.params, std::vector<Grid>{e, a, b}, 0);
    const auto y = fuse(spec, model.params, std::vector<Grid>{b, a, e}, 2);
    for (std::size_t i = 0; i < x.size(); ++i) EXPECT_NEAR(x[i], y[i], 1e-5) << to_string(fusion);
  }
}

TEST(Fuse, Preconditions) {
  AgentSpec spec;
  auto model = AgentModel::create(spec, 5);
  EXPECT_THROW(fuse(spec, model.params, std::vector<Grid>{}), PreconditionError);
  EXPECT_THROW(fuse(spec, model.params, std::vector<Grid>{Grid::zeros({1, 8, 24, 24})}), DimensionError);
}

TEST(Fuse, AttentionGradientMatchesFiniteDifferences) {
  auto spec = tiny_spec(Task::dynamic_seg, Fusion::attention);
  auto params = build_agent_params(spec, 8).clone<double>();
  const auto f1 = random_d(spec.feature_shape(), 40), f2 = random_d(spec.feature_shape(), 41);
  const auto w = random_d(spec.feature_shape(), 42);
  auto fn = [&](const GridD& x) { return ops::sum(ops::mul(fuse(spec, params, std::vector<GridD>{x, f1, f2}), w)); };
  EXPECT_LT(grad_check<double>(fn, random_d(spec.feature_shape(), 43), 1e-6), 1e-3);
}

TEST(Decode, ZeroFeaturesGiveZeroLogits) {
  for (auto task : {Task::detection, Task::static_seg}) {
    AgentSpec spec;
    spec.task = task;
    auto model = AgentModel::create(spec, 6);
    const auto out = decode(spec, model.params, Grid::zeros(spec.feature_shape()));
    if (task == Task::detection) {
      EXPECT_EQ(out.det.cls.shape(), (Shape{1, 1, 24, 24}));
      EXPECT_EQ(out.det.reg.shape(), (Shape{1, 4, 24, 24}));
      EXPECT_EQ(out.det.dir.shape(), (Shape{1, 2, 24, 24}));
      for (float v : out.det.reg.values()) EXPECT_EQ(v, 0.0f);
    } else {
      EXPECT_EQ(out.seg.shape(), (Shape{1, 1, 48, 48}));
      for (float v : out.seg.values()) EXPECT_EQ(v, 0.0f);
    }
  }
}

TEST(Decode, ShapeMismatchIsDimensionError) {
  AgentSpec spec;
  auto model = AgentModel::create(spec, 6);
  EXPECT_THROW(decode(spec, model.params, Grid::zeros({1, 16, 12, 12})), DimensionError);
}

TEST(Decode, GradientMatchesFiniteDifferences) {
  for (auto task : {Task::detection, Task::static_seg}) {
    const auto spec = tiny_spec(task);
    auto params = build_agent_params(spec, 12).clone<double>();
    const auto w1 = random_d({1, 1, 8, 8}, 50), w4 = random_d({1, 4, 4, 4}, 51);
    auto fn = [&](const GridD& x) {
      const auto o = decode(spec, params, x);
      if (task != Task::detection) return ops::sum(ops::mul(o.seg, w1));
      return ops::add(ops::sum(ops::mul(o.det.reg, w4)), ops::sum(ops::square(o.det.cls)));
    };
    EXPECT_LT(grad_check<double>(fn, random_d(spec.feature_shape(), 52), 1e-6), 1e-3) << to_string(task);
  }
}

TEST(TaskLoss, PerfectLogitsGiveNearZeroLoss) {
  GroundTruth gt;
  gt.task = Task::detection;
  Box b = box(3.5, -2.5, 4.0, 2.0);
  b.direction = 2;
  gt.boxes = {b};
  const auto t = detection_targets(gt.boxes, 24, 24.0);
  ModelOutput out;
  out.task = Task::detection;
  std::vector<float> cls(576), dir(2 * 576);
  for (int i = 0; i < 576; ++i) {
    cls[i] = t.cls[i] > 0 ? 30.0f : -30.0f;
    dir[i] = t.dir[i] > 0 ? -30.0f : 30.0f;
    dir[576 + i] = -dir[i];
  }
  out.det = {Grid::from({1, 1, 24, 24}, cls), t.reg, Grid::from({1, 2, 24, 24}, dir)};
  EXPECT_LT(task_loss(out, gt).item(), 1e-3);

  GroundTruth seg;
  seg.task = Task::static_seg;
  seg.mask = Grid::from({1, 1, 2, 2}, {1, 0, 0, 1});
  ModelOutput so;
  so.task = Task::static_seg;
  so.seg = Grid::from({1, 1, 2, 2}, {30, -30, -30, 30});
  EXPECT_LT(task_loss(so, seg).item(), 1e-3);
}

TEST(TaskLoss, ZeroLogitsOnBackgroundGiveLn2) {
  GroundTruth gt;
  gt.task = Task::detection;
  ModelOutput out;
  out.task = Task::detection;
  out.det = {Grid::zeros({1, 1, 24, 24}), Grid::zeros({1, 4, 24, 24}), Grid::zeros({1, 2, 24, 24})};
  EXPECT_NEAR(task_loss(out, gt).item(), std::log(2.0), 1e-6);
}

TEST(TaskLoss, TaskMismatchIsConfigError) {
  GroundTruth gt;
  gt.task = Task::static_seg;
  ModelOutput out;
  out.task = Task::detection;
  EXPECT_THROW(task_loss(out, gt), ConfigError);
}

TEST(TaskLoss, DetectionGradientMatchesFiniteDifferences) {
  GroundTruth gt;
  gt.task = Task::detection;
  Box b1 = box(-10.3, 4.2, 4.0, 2.0), b2 = box(6.7, -3.1, 2.0, 4.0);
  b1.direction = 2;
  b2.direction = 1;
  gt.boxes = {b1, b2};
  const int R = 6;
  auto reg = random_d({1, 4, R, R}, 61), dir = random_d({1, 2, R, R}, 62);
  auto cls = random_d({1, 1, R, R}, 60);
  auto f_cls = [&](const GridD& x) {
    ModelOutputT<double> o{Task::detection, {x, reg, dir}, {}};
    return task_loss(o, gt);
  };
  auto f_reg = [&](const GridD& x) {
    ModelOutputT<double> o{Task::detection, {cls, x, dir}, {}};
    return task_loss(o, gt);
  };
  auto f_dir = [&](const GridD& x) {
    ModelOutputT<double> o{Task::detection, {cls, reg, x}, {}};
    return task_loss(o, gt);
  };
  EXPECT_LT(grad_check<double>(f_cls, cls, 1e-6), 1e-3);
  EXPECT_LT(grad_check<double>(f_reg, reg, 1e-6), 1e-3);
  EXPECT_LT(grad_check<double>(f_dir, dir, 1e-6), 1e-3);
}

TEST(TaskLoss, NonNegativeAndZeroOnlyAtTargets) {
  GroundTruth gt;
  gt.task = Task::dynamic_seg;
  gt.mask = Grid::from({1, 1, 1, 3}, {1, 0, 1});
  for (std::uint64_t s = 0; s < 10; ++s) {
    ModelOutput o;
    o.task = Task::dynamic_seg;
    o.seg = random_f({1, 1, 1, 3}, s, 3.0);
    EXPECT_GT(task_loss(o, gt).item(), 0.0f);
  }
}

TEST(BoxIou, AnalyticCases) {
  EXPECT_DOUBLE_EQ(box_iou(box(0, 0, 2, 2), box(0, 0, 2, 2)), 1.0);
  EXPECT_DOUBLE_EQ(box_iou(box(0, 0, 2, 2), box(5, 5, 2, 2)), 0.0);
  EXPECT_NEAR(box_iou(box(0, 0, 2, 2), box(1, 1, 2, 2)), 1.0 / 7.0, 1e-12);
}

namespace {

DetectionOutput det_from_cells(int R, const std::vector<std::pair<int, float>>& cells) {
  std::vector<float> cls(R * R, -20.0f), reg(4 * R * R, 0.0f), dir(2 * R * R, 0.0f);
  for (auto [i, logit] : cells) {
    cls[i] = logit;
    reg[2 * R * R + i] = std::log(4.0f);
    reg[3 * R * R + i] = std::log(2.0f);
  }
  return {Grid::from({1, 1, R, R}, cls), Grid::from({1, 4, R, R}, reg), Grid::from({1, 2, R, R}, dir)};
}

float logit(double p) { return static_cast<float>(std::log(p / (1 - p))); }

// Exhaustive NMS: a box survives iff no higher-ranked surviving box
// overlaps it above the threshold. Resolved by fixpoint over all boxes.
std::vector<Box> oracle_nms(const std::vector<Box>& boxes, double thr) {
  const std::size_t n = boxes.size();
  auto ranks_before = [&](std::size_t a, std::size_t b) {
    return boxes[a].score > boxes[b].score || (boxes[a].score == boxes[b].score && a < b);
  };
  std::vector<int> state(n, -1);  // -1 unknown, 0 suppressed, 1 kept
  bool changed = true;
  while (changed) {
    changed = false;
    for (std::size_t i = 0; i < n; ++i) {
      if (state[i] != -1) continue;
      bool undecided = false, suppressed = false;
      for (std::size_t j = 0; j < n; ++j) {
        if (j == i || !ranks_before(j, i) || box_iou(boxes[i], boxes[j]) <= thr) continue;
        if (state[j] == 1) suppressed = true;
        if (state[j] == -1) undecided = true;
      }
      if (suppressed) state[i] = 0, changed = true;
      else if (!undecided) state[i] = 1, changed = true;
    }
  }
  std::vector<Box> out;
  for (std::size_t i = 0; i < n; ++i)
    if (state[i] == 1) out.push_back(boxes[i]);
  return out;
}

bool same_set(std::vector<Box> a, std::vector<Box> b) {
  auto key = [](const Box& x, const Box& y) { return std::tie(x.cx, x.cy) < std::tie(y.cx, y.cy); };
  std::sort(a.begin(), a.end(), key);
  std::sort(b.begin(), b.end(), key);
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (a[i].cx != b[i].cx || a[i].cy != b[i].cy || a[i].score != b[i].score) return false;
  return true;
}

}  // namespace

TEST(DecodeBoxes, BelowThresholdIsEmpty) {
  EXPECT_TRUE(decode_boxes(det_from_cells(8, {{3, logit(0.2)}, {10, logit(0.29)}})).empty());
}

TEST(DecodeBoxes, IdenticalBoxesAreSuppressed) {
  const auto kept = nms({box(1, 1, 4, 2, 0.8f), box(1, 1, 4, 2, 0.9f)}, 0.5);
  ASSERT_EQ(kept.size(), 1u);
  EXPECT_FLOAT_EQ(kept[0].score, 0.9f);
}

TEST(DecodeBoxes, CellGeometryAndDirection) {
  auto det = det_from_cells(24, {{5 * 24 + 7, 3.0f}});
  const auto boxes = decode_boxes(det);
  ASSERT_EQ(boxes.size(), 1u);
  EXPECT_NEAR(boxes[0].cx, (7 + 0.5) * 2 - 24, 1e-5);
  EXPECT_NEAR(boxes[0].cy, (5 + 0.5) * 2 - 24, 1e-5);
  EXPECT_NEAR(boxes[0].width, 4.0, 1e-5);
  EXPECT_NEAR(boxes[0].height, 2.0, 1e-5);
  EXPECT_EQ(boxes[0].direction, 0);
}

TEST(DecodeBoxes, MatchesExhaustiveNmsOracle) {
  std::mt19937_64 rng(99);
  std::uniform_real_distribution<double> pos(-3, 3), size(1, 4), sc(0.05, 0.99);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<Box> boxes;
    for (int k = 0; k < 5; ++k) boxes.push_back(box(pos(rng), pos(rng), size(rng), size(rng), static_cast<float>(sc(rng))));
    EXPECT_TRUE(same_set(nms(boxes, 0.5), oracle_nms(boxes, 0.5))) << "trial " << trial;
  }
}

TEST(DecodeBoxes, DuplicatingSuppressedCompetitorChangesNothing) {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> pos(-2, 2), size(1, 4), sc(0.05, 0.99);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<Box> boxes;
    for (int k = 0; k < 6; ++k) boxes.push_back(box(pos(rng), pos(rng), size(rng), size(rng), static_cast<float>(sc(rng))));
    const auto base = nms(boxes, 0.5);
    for (const auto& b : boxes) {
      const bool suppressed = std::none_of(base.begin(), base.end(), [&](const Box& k) { return k.cx == b.cx && k.cy == b.cy; });
      if (!suppressed) continue;
      auto dup = boxes;
      dup.push_back(b);
      EXPECT_TRUE(same_set(nms(dup, 0.5), base));
    }
  }
}

namespace {

// Brute-force AP: builds the PR curve by thresholding at every score
// prefix, then numerically integrates the interpolated precision
// (max precision at recall >= r) on a fine recall grid.
double oracle_ap(const std::vector<std::pair<float, bool>>& ranked_hits, std::size_t n_gt) {
  std::vector<std::pair<double, double>> pr;  // (recall, precision)
  for (std::size_t k = 1; k <= ranked_hits.size(); ++k) {
    std::size_t tp = 0;
    for (std::size_t j = 0; j < k; ++j) tp += ranked_hits[j].second;
    pr.push_back({static_cast<double>(tp) / n_gt, static_cast<double>(tp) / k});
  }
  const int N = 200000;
  double area = 0;
  for (int i = 0; i < N; ++i) {
    const double r = (i + 0.5) / N;
    double best = 0;
    for (auto [rec, prec] : pr)
      if (rec >= r) best = std::max(best, prec);
    area += best / N;
  }
  return area;
}

}  // namespace

TEST(AveragePrecision, TrivialCases) {
  EXPECT_DOUBLE_EQ(average_precision({box(0, 0, 4, 2, 0.9f)}, {box(0, 0, 4, 2)}, 0.5), 1.0);
  EXPECT_DOUBLE_EQ(average_precision({}, {box(0, 0, 4, 2)}, 0.5), 0.0);
  EXPECT_DOUBLE_EQ(average_precision({}, {}, 0.5), 1.0);
  EXPECT_DOUBLE_EQ(average_precision({box(0, 0, 4, 2, 0.9f)}, {}, 0.5), 0.0);
}

TEST(AveragePrecision, MixedCaseMatchesBruteForceCurve) {
  // Three well separated GT; predictions: a hit, a miss, a duplicate of a
  // matched GT, and a hit, in descending score.
  const std::vector<Box> gts = {box(-10, 0, 4, 2), box(0, 0, 4, 2), box(10, 0, 4, 2)};
  const std::vector<Box> preds = {box(-10, 0.1, 4, 2, 0.9f), box(0, 10, 4, 2, 0.8f), box(-10, 0, 4, 2, 0.7f),
                                  box(10.2, 0, 4, 2, 0.6f)};
  // Matching by hand: TP, FP (no overlap), FP (its GT is taken), TP.
  const double expected = oracle_ap({{0.9f, true}, {0.8f, false}, {0.7f, false}, {0.6f, true}}, 3);
  EXPECT_NEAR(expected, 1.0 / 3.0 + 1.0 / 3.0 * 0.5, 1e-4);
  EXPECT_NEAR(average_precision(preds, gts, 0.5), expected, 1e-4);
}

TEST(AveragePrecision, RandomCasesMatchBruteForceCurve) {
  std::mt19937_64 rng(2024);
  std::uniform_real_distribution<double> u(0, 1);
  for (int trial = 0; trial < 30; ++trial) {
    std::vector<Box> gts, preds;
    for (int g = 0; g < 4; ++g) gts.push_back(box(g * 10.0, 0, 4, 2));
    std::vector<std::pair<float, bool>> hits;
    std::vector<bool> taken(4, false);
    for (int k = 0; k < 6; ++k) {
      const int g = static_cast<int>(u(rng) * 4);
      const bool hit = u(rng) < 0.6;
      preds.push_back(box(g * 10.0 + (hit ? 0.1 : 0.0), hit ? 0 : 8, 4, 2, static_cast<float>(0.95 - 0.1 * k)));
      const bool tp = hit && !taken[g];
      if (tp) taken[g] = true;
      hits.push_back({preds.back().score, tp});
    }
    EXPECT_NEAR(average_precision(preds, gts, 0.5), oracle_ap(hits, 4), 1e-4) << "trial " << trial;
  }
}

TEST(AveragePrecision, InvariantUnderMonotoneScoreTransform) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> pos(-6, 6), sc(0.01, 0.99);
  std::vector<DetectionSample> samples(3);
  for (auto& s : samples) {
    for (int g = 0; g < 3; ++g) s.gts.push_back(box(pos(rng), pos(rng), 4, 2));
    for (int k = 0; k < 5; ++k) s.preds.push_back(box(pos(rng), pos(rng), 4, 2, static_cast<float>(sc(rng))));
    s.preds.push_back(s.gts[0]);
    s.preds.back().score = 0.5f;
  }
  auto moved = samples;
  for (auto& s : moved)
    for (auto& p : s.preds) p.score = static_cast<float>(std::pow(p.score, 3.0) * 0.5);
  for (double thr : {0.3, 0.5}) EXPECT_DOUBLE_EQ(average_precision(samples, thr), average_precision(moved, thr));
}

TEST(MeanIou, TrivialCases) {
  const auto a = Grid::from({1, 1, 2, 2}, {1, 0, 0, 1});
  const auto b = Grid::from({1, 1, 2, 2}, {0, 1, 1, 0});
  EXPECT_DOUBLE_EQ(mean_iou(a, a), 1.0);
  EXPECT_DOUBLE_EQ(mean_iou(a, b), 0.0);
  EXPECT_THROW(mean_iou(a, Grid::zeros({1, 1, 2, 3})), DimensionError);
}

TEST(MeanIou, HalfOverlappingStripesMatchPixelCount) {
  const int H = 8, W = 16;
  std::vector<float> p(H * W, 0.0f), g(H * W, 0.0f);
  for (int r = 0; r < H; ++r)
    for (int c = 0; c < W; ++c) {
      if (c >= 4 && c < 8) p[r * W + c] = 1;  // pred stripe columns 4..7
      if (c >= 6 && c < 10) g[r * W + c] = 1;  // gt stripe columns 6..9
    }
  double inter_fg = 0, union_fg = 0, inter_bg = 0, union_bg = 0;
  for (int i = 0; i < H * W; ++i) {
    inter_fg += p[i] && g[i];
    union_fg += p[i] || g[i];
    inter_bg += !p[i] && !g[i];
    union_bg += !p[i] || !g[i];
  }
  const double expected = (inter_fg / union_fg + inter_bg / union_bg) / 2;
  EXPECT_NEAR(expected, (16.0 / 48.0 + 80.0 / 112.0) / 2, 1e-12);
  EXPECT_DOUBLE_EQ(mean_iou(Grid::from({1, 1, H, W}, p), Grid::from({1, 1, H, W}, g)), expected);
}
