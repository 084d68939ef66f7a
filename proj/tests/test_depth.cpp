#include <gtest/gtest.h>

#include <cmath>

#include "dattn/depth.hpp"
#include "dattn/error.hpp"
#include "test_util.hpp"

using namespace dattn;

namespace {

ModelConfig small_config(std::size_t depth) {
  ModelConfig c;
  c.image_size = 8;
  c.patch_size = 4;
  c.embed_dim = 8;
  c.head_dim = 8;
  c.mlp_ratio = 2;
  c.depth = depth;
  c.num_classes = 3;
  return c;
}

PropagationSummary with_ratios(std::vector<double> ratios) {
  PropagationSummary s;
  s.depth = ratios.size();
  s.layer_ratio = std::move(ratios);
  return s;
}

}  // namespace

TEST(DepthTrace, ProductIdentity) {
  const DepthTrace t = make_depth_trace({0.5, 1.0, 0.5, 0.25, 0.75});
  EXPECT_EQ(t.depth(), 4u);
  EXPECT_EQ(t.xi_norm, 0.5);
  double prod = 1.0;
  for (double r : t.ratios) prod *= r;
  EXPECT_NEAR(prod * t.xi_norm, 0.75, 1e-12);
  EXPECT_NEAR(std::pow(t.geo_mean_ratio(), 4.0) * t.xi_norm, 0.75, 1e-12);
}

TEST(DepthTrace, ZeroIntermediateIsDegenerate) {
  const DepthTrace t = make_depth_trace({1.0, 0.0, 0.0});
  EXPECT_TRUE(t.degenerate);
  EXPECT_EQ(t.ratios[1], 0.0);
}

TEST(DepthTrace, IdentityBlocksGiveUnitRatios) {
  const std::vector<LayerFn> layers(5, [](const Tensor& t) { return t; });
  SeededRng rng(1);
  const DepthTrace t = trace_perturbation(layers, rng.uniform_tensor({2, 3}, 0, 1), rng.normal_tensor({2, 3}, 0.01));
  for (double r : t.ratios) EXPECT_EQ(r, 1.0);
  EXPECT_THROW(trace_perturbation(layers, Tensor({2, 3}), Tensor({2, 3})), ConfigError);
}

TEST(DepthTrace, LinearStackMatchesOracle) {
  const Tensor a = Tensor::matrix({{2, 0}, {0, 3}});
  const std::vector<LayerFn> layers = {[&](const Tensor& t) { return matmul(t, a); },
                                       [](const Tensor& t) { return 0.5 * t; }};
  const DepthTrace t = trace_perturbation(layers, Tensor::matrix({{1, 1}}), Tensor::matrix({{0.1, 0.0}}));
  EXPECT_NEAR(t.ratios[0], 2.0, 1e-12);
  EXPECT_NEAR(t.ratios[1], 0.5, 1e-12);
  EXPECT_NEAR(t.delta_norms[2], 0.1, 1e-12);
}

TEST(DepthTrace, ClassifierTraceIsFiniteAndConsistent) {
  const Classifier m = Classifier::initialize(small_config(4), 2);
  SeededRng rng(2);
  for (int k = 0; k < 5; ++k) {
    const Tensor x = rng.uniform_tensor({3, 8, 8}, 0.1, 0.9);
    const Tensor xi = rng.uniform_tensor({3, 8, 8}, -4.0 / 255.0, 4.0 / 255.0);
    const DepthTrace t = trace_perturbation(m, x, xi);
    ASSERT_EQ(t.delta_norms.size(), 5u);
    EXPECT_NEAR(t.delta_norms[0], norm2(xi), 1e-15);
    EXPECT_NEAR(t.xi_linf, norm_inf(xi), 1e-15);
    const ForwardTrace a = m.trace(x), b = m.trace(x + xi);
    double prod = t.xi_norm;
    for (std::size_t d = 0; d < 4; ++d) {
      EXPECT_GT(t.delta_norms[d + 1], 0.0);
      EXPECT_NEAR(t.delta_norms[d + 1], norm2(b.layers[d].output - a.layers[d].output), 1e-12);
      prod *= t.ratios[d];
    }
    EXPECT_NEAR(prod, t.delta_norms[4], 1e-9);
  }
}

// With xi among the probes, the estimator's max can only exceed r^(1).
TEST(DepthTrace, FirstRatioBoundedByLipschitzWithSharedProbe) {
  const Classifier m = Classifier::initialize(small_config(1), 3);
  const MapBuilder block_one = [&](Graph& g, Var image) {
    return m.build(g, image, m.bind(g, false)).blocks[0].output;
  };
  SeededRng rng(3);
  for (int k = 0; k < 5; ++k) {
    const Tensor x = rng.uniform_tensor({3, 8, 8}, 0.1, 0.9);
    const Tensor xi = rng.uniform_tensor({3, 8, 8}, -8.0 / 255.0, 8.0 / 255.0);
    LipschitzOptions o;
    o.samples = 2;
    o.refine_steps = 1;
    const LipschitzEstimate e = lipschitz_estimate(block_one, x, o, {&xi, 1});
    EXPECT_LE(trace_perturbation(m, x, xi).ratios[0], e.value + 1e-12);
  }
}

TEST(Summary, SingleTraceExample) {
  const std::vector<DepthTrace> traces = {make_depth_trace({1.0, 2.0, 1.0})};
  const PropagationSummary s = summarize_propagation(traces);
  EXPECT_NEAR(s.geo_mean_ratio, 1.0, 1e-15);
  EXPECT_EQ(s.mean_delta_norm.back(), 1.0);
  EXPECT_EQ(s.layer_ratio, (std::vector<double>{2.0, 0.5}));
  EXPECT_TRUE(s.alpha.empty());
}

TEST(Summary, IdentityBlocksGiveUnitAlphaTimesL) {
  const std::vector<DepthTrace> traces = {make_depth_trace({0.3, 0.3, 0.3}), make_depth_trace({0.1, 0.1, 0.1})};
  std::vector<LipschitzEstimate> est(2);
  for (auto& e : est) e.value = 1.0;
  const PropagationSummary s = summarize_propagation(traces, est);
  for (std::size_t d = 0; d < 2; ++d) EXPECT_DOUBLE_EQ(s.alpha[d] * s.layer_lipschitz[d], 1.0);
  EXPECT_NEAR(s.bound_curve.back(), 0.2, 1e-15);
}

TEST(Summary, AlphaIsClippedButRawKept) {
  const std::vector<DepthTrace> traces = {make_depth_trace({1.0, 3.0})};
  std::vector<LipschitzEstimate> est(1);
  est[0].value = 2.0;
  const PropagationSummary s = summarize_propagation(traces, est);
  EXPECT_DOUBLE_EQ(s.alpha_raw[0], 1.5);
  EXPECT_DOUBLE_EQ(s.alpha[0], 1.0);
}

TEST(Summary, BoundDominatesMeanDeviation) {
  SeededRng rng(4);
  std::vector<DepthTrace> traces;
  for (int k = 0; k < 20; ++k) {
    std::vector<double> norms = {0.01 + rng.uniform()};
    for (int d = 0; d < 6; ++d) norms.push_back(norms.back() * (0.3 + 1.5 * rng.uniform()));
    traces.push_back(make_depth_trace(norms));
  }
  const PropagationSummary s = summarize_propagation(traces);
  for (std::size_t d = 0; d <= 6; ++d) EXPECT_LE(s.mean_delta_norm[d], s.ratio_bound[d] * (1 + 1e-12));
}

TEST(Summary, Errors) {
  const std::vector<DepthTrace> mixed = {make_depth_trace({1, 1}), make_depth_trace({1, 1, 1})};
  EXPECT_THROW(summarize_propagation(mixed), ConfigError);
  const std::vector<DepthTrace> dead = {make_depth_trace({1, 0, 0})};
  EXPECT_THROW(summarize_propagation(dead), DegenerateError);
  const std::vector<DepthTrace> ok = {make_depth_trace({1, 2, 1}), make_depth_trace({1, 0, 0})};
  const PropagationSummary s = summarize_propagation(ok);
  EXPECT_EQ(s.excluded, 1u);
  EXPECT_EQ(s.traces, 2u);
  EXPECT_EQ(s.layer_ratio, (std::vector<double>{2.0, 0.5}));
  std::vector<LipschitzEstimate> wrong(3);
  EXPECT_THROW(summarize_propagation(ok, wrong), ConfigError);
}

TEST(Crossover, IdenticalSummariesTie) {
  const std::vector<PropagationSummary> a = {with_ratios({1.2, 0.9, 1.1})};
  const std::vector<double> budgets = {1.0 / 255.0};
  const auto out = empirical_crossover(a, a, budgets);
  ASSERT_EQ(out.size(), 1u);
  EXPECT_TRUE(out[0].tie);
  EXPECT_FALSE(out[0].depth.has_value());
  EXPECT_EQ(out[0].verdict, "tie");
  EXPECT_TRUE(out[0].crossover_expected);
}

TEST(Crossover, MatchesCumulativeProductOracle) {
  const std::vector<double> da_r = {1.5, 0.6, 0.6, 0.6, 0.6};
  const std::vector<double> base_r(5, 1.1);
  const std::vector<PropagationSummary> da = {with_ratios(da_r)}, base = {with_ratios(base_r)};
  const std::vector<double> budgets = {4.0 / 255.0};
  const CrossoverEntry e = empirical_crossover(da, base, budgets)[0];
  std::optional<std::size_t> oracle;
  double pd = 1.0, pb = 1.0;
  for (std::size_t d = 0; d < 5 && !oracle; ++d) {
    pd *= da_r[d];
    pb *= base_r[d];
    if (pd < pb) oracle = d + 1;
  }
  EXPECT_EQ(e.depth, oracle);
  EXPECT_EQ(e.depth, 2u);
  EXPECT_TRUE(e.da_above_at_first);
  EXPECT_FALSE(e.crossover_expected);
}

TEST(Crossover, GridMismatchIsRejected) {
  DepthCurve a{{1, 2}, {1.0, 2.0}}, b{{1, 4}, {1.0, 2.0}};
  EXPECT_THROW(find_crossover(0.1, a, b), ConfigError);
  const std::vector<PropagationSummary> x = {with_ratios({1.0})}, y = {with_ratios({1.0, 1.0})};
  const std::vector<double> budgets = {0.1};
  EXPECT_THROW(empirical_crossover(x, y, budgets), ConfigError);
}

TEST(Crossover, Deterministic) {
  DepthCurve da{{1, 2, 4, 8}, {0.3, 0.25, 0.1, 0.05}}, base{{1, 2, 4, 8}, {0.2, 0.2, 0.2, 0.2}};
  const CrossoverEntry a = find_crossover(1.0 / 255.0, da, base), b = find_crossover(1.0 / 255.0, da, base);
  EXPECT_EQ(a.depth, 4u);
  EXPECT_EQ(a.depth, b.depth);
  EXPECT_EQ(a.verdict, b.verdict);
}
