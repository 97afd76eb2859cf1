#include <gtest/gtest.h>

#include <random>

#include "cfa_lab/numeric.hpp"

using namespace cfa_lab;

namespace {

GridD random_grid(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> d(lo, hi);
  std::vector<double> v(shape_size(shape));
  for (auto& x : v) x = d(rng);
  return GridD::from(std::move(shape), std::move(v));
}

// Weighted sum so every output element gets a distinct upstream gradient.
GridD probe_loss(const GridD& y, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return ops::sum(ops::mul(y, random_grid(y.shape(), rng)));
}

const std::vector<Shape> kShapes = {{1, 2, 3, 3}, {1, 4, 2, 5}, {2, 3, 4, 4}};

}  // namespace

TEST(Conv2d, IdentityKernelOnScalar) {
  auto y = ops::conv2d(Grid::from({1, 1, 1, 1}, {5}), Grid::from({1, 1, 1, 1}, {1}), Grid::from({1}, {0}));
  EXPECT_EQ(y.shape(), (Shape{1, 1, 1, 1}));
  EXPECT_FLOAT_EQ(y[0], 5.0f);
}

TEST(Conv2d, SumKernel) {
  auto y = ops::conv2d(Grid::from({1, 1, 2, 2}, {1, 2, 3, 4}), Grid::from({1, 1, 2, 2}, {1, 1, 1, 1}),
                       Grid::from({1}, {0}));
  ASSERT_EQ(y.size(), 1u);
  EXPECT_FLOAT_EQ(y[0], 10.0f);
}

TEST(Conv2d, GradientOfSumMatchesFiniteDifferences) {
  std::mt19937_64 rng(7);
  auto x = random_grid({1, 2, 5, 5}, rng);
  auto w = random_grid({3, 2, 3, 3}, rng);
  auto b = random_grid({3}, rng);
  auto wrt_x = [&](const GridD& v) { return ops::sum(ops::conv2d(v, w, b)); };
  auto wrt_w = [&](const GridD& v) { return ops::sum(ops::conv2d(x, v, b)); };
  auto wrt_b = [&](const GridD& v) { return ops::sum(ops::conv2d(x, w, v)); };
  EXPECT_LT(grad_check<double>(wrt_x, x), 1e-3);
  EXPECT_LT(grad_check<double>(wrt_w, w), 1e-3);
  EXPECT_LT(grad_check<double>(wrt_b, b), 1e-3);
}

TEST(Conv2d, StridedPaddedGroupedGradients) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    std::mt19937_64 rng(seed);
    auto x = random_grid({1, 4, 7, 7}, rng);
    auto w = random_grid({4, 2, 3, 3}, rng);
    auto b = random_grid({4}, rng);
    auto f = [&](const GridD& v) { return probe_loss(ops::conv2d(v, w, b, 2, 1, 2), seed); };
    auto g = [&](const GridD& v) { return probe_loss(ops::conv2d(x, v, b, 2, 1, 2), seed); };
    EXPECT_LT(grad_check<double>(f, x), 1e-3);
    EXPECT_LT(grad_check<double>(g, w), 1e-3);
  }
}

TEST(Conv2d, ShapeErrors) {
  auto x = Grid::zeros({1, 2, 5, 5});
  EXPECT_THROW(ops::conv2d(x, Grid::zeros({1, 3, 3, 3}), Grid::zeros({1})), DimensionError);
  EXPECT_THROW(ops::conv2d(x, Grid::zeros({1, 2, 7, 7}), Grid::zeros({1})), DimensionError);
  // (5 - 2) / 2 is not exact.
  EXPECT_THROW(ops::conv2d(x, Grid::zeros({1, 2, 2, 2}), Grid::zeros({1}), 2, 0), ConfigError);
  try {
    ops::conv2d(x, Grid::zeros({1, 2, 9, 3}), Grid::zeros({1}));
    FAIL();
  } catch (const DimensionError& e) {
    EXPECT_NE(std::string(e.what()).find("height"), std::string::npos);
  }
}

TEST(Conv2d, SamePaddingPreservesShape) {
  for (int k : {1, 3, 5, 7}) {
    auto x = Grid::full({1, 3, 9, 9}, 0.5f);
    std::vector<float> kv(static_cast<std::size_t>(3 * 3 * k * k), 0.0f);
    for (int c = 0; c < 3; ++c) kv[((c * 3 + c) * k + k / 2) * k + k / 2] = 1.0f;
    auto y = ops::conv2d(x, Grid::from({3, 3, k, k}, kv), Grid::zeros({3}), 1, (k - 1) / 2);
    EXPECT_EQ(y.shape(), x.shape());
    for (std::size_t i = 0; i < y.size(); ++i) EXPECT_FLOAT_EQ(y[i], 0.5f);
  }
}

TEST(ResizeBilinear, SameShapeIsBitwiseCopy) {
  std::mt19937_64 rng(3);
  auto x = random_grid({1, 3, 4, 5}, rng).cast<float>();
  auto y = ops::resize_bilinear(x, 4, 5);
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_EQ(x[i], y[i]);
}

TEST(ResizeBilinear, HalfPixelUpsample) {
  auto y = ops::resize_bilinear(Grid::from({1, 1, 1, 2}, {1, 3}), 1, 4);
  const std::vector<float> expect = {1.0f, 1.5f, 2.5f, 3.0f};
  for (int i = 0; i < 4; ++i) EXPECT_FLOAT_EQ(y[i], expect[i]);
}

TEST(ResizeBilinear, ConstantStaysConstant) {
  auto x = Grid::full({1, 2, 3, 5}, 0.75f);
  for (auto [h, w] : {std::pair{7, 2}, std::pair{1, 1}, std::pair{12, 12}}) {
    auto y = ops::resize_bilinear(x, h, w);
    for (float v : y.values()) EXPECT_FLOAT_EQ(v, 0.75f);
  }
}

TEST(ResizeBilinear, ZeroSizeRejected) {
  EXPECT_THROW(ops::resize_bilinear(Grid::zeros({1, 1, 2, 2}), 0, 3), ConfigError);
}

TEST(LayerNorm, ConstantChannelsBecomeZero) {
  auto y = ops::layer_norm(Grid::from({1, 3, 1, 1}, {2, 2, 2}), 1e-5f);
  for (float v : y.values()) EXPECT_FLOAT_EQ(v, 0.0f);
}

TEST(LayerNorm, AlreadyNormalized) {
  auto y = ops::layer_norm(Grid::from({1, 2, 1, 1}, {1, -1}), 0.0f);
  EXPECT_FLOAT_EQ(y[0], 1.0f);
  EXPECT_FLOAT_EQ(y[1], -1.0f);
}

TEST(Pointwise, FixedPoints) {
  EXPECT_FLOAT_EQ(ops::sigmoid(Grid::scalar(0))[0], 0.5f);
  EXPECT_FLOAT_EQ(ops::gelu(Grid::scalar(0))[0], 0.0f);
}

TEST(Pointwise, AddGradientIsOne) {
  std::mt19937_64 rng(11);
  auto a = random_grid({1, 2, 3, 3}, rng);
  auto b = random_grid({1, 2, 3, 3}, rng);
  auto x = GridD::from(a.shape(), {a.values().begin(), a.values().end()}, true);
  backward(ops::sum(ops::add(x, b)));
  for (double g : x.grad()) EXPECT_DOUBLE_EQ(g, 1.0);
  EXPECT_LT(grad_check<double>([&](const GridD& v) { return ops::sum(ops::add(v, b)); }, a), 1e-6);
}

TEST(Pointwise, ShapeMismatch) {
  EXPECT_THROW(ops::add(Grid::zeros({1, 2}), Grid::zeros({2, 1})), DimensionError);
  EXPECT_THROW(ops::mul(Grid::zeros({3}), Grid::zeros({4})), DimensionError);
}

// Every differentiable op: 5 seeds x 3 shapes.
TEST(GradientSuite, EveryOpPassesFiniteDifferences) {
  for (std::uint64_t seed = 0; seed < 5; ++seed)
    for (const auto& shape : kShapes) {
      std::mt19937_64 rng(seed * 131 + shape[1]);
      auto x = random_grid(shape, rng);
      auto other = random_grid(shape, rng);
      const int C = shape[1];
      auto gamma = random_grid({C}, rng), beta = random_grid({C}, rng);
      std::vector<std::pair<const char*, std::function<GridD(const GridD&)>>> cases = {
          {"gelu", [&](const GridD& v) { return probe_loss(ops::gelu(v), seed); }},
          {"sigmoid", [&](const GridD& v) { return probe_loss(ops::sigmoid(v), seed); }},
          {"add", [&](const GridD& v) { return probe_loss(ops::add(v, other), seed); }},
          {"sub", [&](const GridD& v) { return probe_loss(ops::sub(other, v), seed); }},
          {"mul", [&](const GridD& v) { return probe_loss(ops::mul(v, other), seed); }},
          {"mul_self", [&](const GridD& v) { return probe_loss(ops::mul(v, v), seed); }},
          {"scale", [&](const GridD& v) { return probe_loss(ops::scale(v, 2.5), seed); }},
          {"square", [&](const GridD& v) { return probe_loss(ops::square(v), seed); }},
          {"mean", [&](const GridD& v) { return ops::mean(ops::square(v)); }},
          {"layer_norm",
           [&](const GridD& v) {
             return probe_loss(ops::layer_norm(ops::concat_channels<double>({v, other}), 1e-5), seed);
           }},
          {"channel_affine", [&](const GridD& v) { return probe_loss(ops::channel_affine(v, gamma, beta), seed); }},
          {"resize_up", [&](const GridD& v) { return probe_loss(ops::resize_bilinear(v, 7, 9), seed); }},
          {"resize_down", [&](const GridD& v) { return probe_loss(ops::resize_bilinear(v, 2, 1), seed); }},
          {"softmax_channels", [&](const GridD& v) { return probe_loss(ops::softmax_channels(v), seed); }},
          {"channel_dot", [&](const GridD& v) { return probe_loss(ops::channel_dot(v, other), seed); }},
          {"max", [&](const GridD& v) { return probe_loss(ops::max_elementwise<double>({v, other}), seed); }},
          {"concat", [&](const GridD& v) { return probe_loss(ops::concat_channels<double>({other, v}), seed); }},
          {"slice", [&](const GridD& v) { return probe_loss(ops::slice_channels(v, 1, C - 1), seed); }},
          {"fit_channels", [&](const GridD& v) { return probe_loss(ops::fit_channels(v, C + 2), seed); }},
          {"l2_distance", [&](const GridD& v) { return ops::l2_distance(v, other); }},
          {"bce", [&](const GridD& v) { return ops::bce_with_logits(v, ops::sigmoid(other).detach()); }},
          {"affine_resample",
           [&](const GridD& v) {
             ops::Affine2d m{0.8, -0.6, 0.6, 0.8, 0.37, -0.21};
             return probe_loss(ops::affine_resample(v, m, shape[2], shape[3]), seed);
           }},
      };
      for (auto& [name, fn] : cases) EXPECT_LT(grad_check<double>(fn, x), 1e-3) << name << " seed " << seed;
    }
}

TEST(GradientSuite, MaskedLossesAndAttention) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    std::mt19937_64 rng(seed);
    auto pred = random_grid({1, 4, 3, 3}, rng, -2, 2);
    auto target = random_grid({1, 4, 3, 3}, rng, -2, 2);
    std::vector<double> m(9), lab(9);
    for (int i = 0; i < 9; ++i) {
      m[i] = (i % 3 == 0) ? 1.0 : 0.0;
      lab[i] = static_cast<double>(i % 4);
    }
    auto mask = GridD::from({1, 1, 3, 3}, m), labels = GridD::from({1, 1, 3, 3}, lab);
    EXPECT_LT(grad_check<double>([&](const GridD& v) { return ops::masked_smooth_l1(v, target, mask); }, pred), 1e-3);
    EXPECT_LT(grad_check<double>([&](const GridD& v) { return ops::masked_softmax_ce(v, labels, mask); }, pred), 1e-3);

    auto k = random_grid({1, 3, 2, 3}, rng), vv = random_grid({1, 3, 2, 3}, rng), q = random_grid({1, 3, 2, 3}, rng);
    EXPECT_LT(grad_check<double>([&](const GridD& x) { return probe_loss(ops::spatial_attention(x, k, vv), seed); }, q),
              1e-3);
    EXPECT_LT(grad_check<double>([&](const GridD& x) { return probe_loss(ops::spatial_attention(q, x, vv), seed); }, k),
              1e-3);
    EXPECT_LT(grad_check<double>([&](const GridD& x) { return probe_loss(ops::spatial_attention(q, k, x), seed); }, vv),
              1e-3);
    auto w = random_grid({1, 1, 2, 3}, rng);
    EXPECT_LT(grad_check<double>([&](const GridD& x) { return probe_loss(ops::mul_channel_broadcast(x, vv), seed); }, w),
              1e-3);
  }
}

TEST(ForwardOps, FiniteInputsGiveFiniteOutputs) {
  std::mt19937_64 rng(5);
  auto x = random_grid({1, 3, 6, 6}, rng, -30, 30).cast<float>();
  auto w = random_grid({3, 3, 3, 3}, rng).cast<float>();
  std::vector<Grid> outs = {ops::gelu(x), ops::sigmoid(x), ops::layer_norm(x), ops::softmax_channels(x),
                            ops::conv2d(x, w, Grid::zeros({3}), 1, 1), ops::resize_bilinear(x, 11, 4),
                            ops::spatial_attention(x, x, x)};
  for (const auto& y : outs) EXPECT_TRUE(all_finite(y.values()));
  EXPECT_TRUE(all_finite(ops::bce_with_logits(x, Grid::zeros(x.shape())).values()));
}

TEST(Adam, ZeroGradientLeavesParameters) {
  ParamStore store;
  store.add("w", Grid::from({3}, {1, -2, 3}));
  backward(ops::scale(ops::sum(store["w"]), 0.0f));
  adam_step(store, 0.1f);
  EXPECT_EQ(std::vector<float>(store["w"].values().begin(), store["w"].values().end()),
            (std::vector<float>{1, -2, 3}));
  EXPECT_EQ(store.step_count(), 1u);
}

TEST(Adam, FirstStepMovesByLearningRate) {
  ParamStore store;
  store.add("w", Grid::scalar(0.0f));
  backward(store["w"]);  // d w / d w = 1
  adam_step(store, 0.1f);
  EXPECT_NEAR(store["w"][0], -0.1f, 1e-6f);
}

TEST(Adam, MissingGradientIsNamed) {
  ParamStore store;
  store.add("encoder.conv0.weight", Grid::scalar(1.0f));
  try {
    adam_step(store, 0.1f);
    FAIL();
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("encoder.conv0.weight"), std::string::npos);
  }
}

TEST(Adam, DeterministicAcrossRuns) {
  auto run = [] {
    std::mt19937_64 rng(42);
    ParamStore store;
    store.add("a", init::kaiming_uniform({4, 2, 3, 3}, 18, rng));
    store.add("b", init::zeros({4}));
    auto x = random_grid({1, 2, 5, 5}, rng).cast<float>();
    for (int step = 0; step < 10; ++step) {
      store.zero_grad();
      backward(ops::mean(ops::square(ops::conv2d(x, store["a"], store["b"], 1, 1))));
      adam_step(store, 0.01f);
    }
    return std::vector<float>(store["a"].values().begin(), store["a"].values().end());
  };
  auto r1 = run(), r2 = run();
  ASSERT_EQ(r1.size(), r2.size());
  for (std::size_t i = 0; i < r1.size(); ++i) EXPECT_EQ(r1[i], r2[i]) << i;
}

TEST(GradCheck, SumHasExactGradient) {
  auto x = GridD::from({3}, {1, 2, 3});
  EXPECT_LT(grad_check<double>([](const GridD& v) { return ops::sum(v); }, x), 1e-9);
}

TEST(GradCheck, QuadraticAnalyticValues) {
  auto x = GridD::from({3}, {1, 2, 3}, true);
  backward(ops::sum(ops::square(x)));
  EXPECT_DOUBLE_EQ(x.grad()[0], 2.0);
  EXPECT_DOUBLE_EQ(x.grad()[1], 4.0);
  EXPECT_DOUBLE_EQ(x.grad()[2], 6.0);
  EXPECT_LT(grad_check<double>([](const GridD& v) { return ops::sum(ops::square(v)); }, x), 1e-4);
}

TEST(GradCheck, NonFiniteOutputRejected) {
  auto x = GridD::from({1}, {0.0});
  EXPECT_THROW(
      grad_check<double>([](const GridD& v) { return ops::scale(ops::sum(v), std::numeric_limits<double>::infinity()); }, x),
      NumericError);
}

TEST(Tape, InferenceRecordsNoHistory) {
  auto x = Grid::full({1, 1, 2, 2}, 1.0f);
  auto y = ops::gelu(ops::add(x, x));
  EXPECT_FALSE(y.requires_grad());
  EXPECT_TRUE(y.node()->inputs.empty());
}
