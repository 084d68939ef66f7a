#pragma once

#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dattn/fragility.hpp"
#include "dattn/model.hpp"
#include "dattn/tensor.hpp"

namespace dattn {

/// ‖Δ^(d)‖ for d = 0..D, with Δ^(0) = (x + ξ) − x and Δ^(d) the change of the output
/// of block d, plus the layer ratios r^(d) = ‖Δ^(d)‖ / ‖Δ^(d-1)‖.
struct DepthTrace {
  std::vector<double> delta_norms;
  std::vector<double> ratios;
  double xi_norm = 0.0;
  double xi_linf = 0.0;
  /// Some intermediate Δ vanished, so later ratios are undefined (set to 0).
  bool degenerate = false;

  std::size_t depth() const { return ratios.size(); }
  /// (∏ r^(d))^(1/D).
  double geo_mean_ratio() const;
};

DepthTrace make_depth_trace(std::vector<double> delta_norms, double xi_linf = 0.0);

/// Block d of a classifier maps the image (d = 1, through the embedding) or
/// the previous block output to its post-residual output. Throws ConfigError
/// for ξ = 0.
DepthTrace trace_perturbation(const Classifier& model, const Tensor& x, const Tensor& xi);

using LayerFn = std::function<Tensor(const Tensor&)>;
/// Same recursion for an arbitrary stack of maps.
DepthTrace trace_perturbation(std::span<const LayerFn> layers, const Tensor& x, const Tensor& xi);

struct PropagationSummary {
  std::size_t depth = 0;
  std::size_t traces = 0;
  /// Degenerate traces left out of every statistic.
  std::size_t excluded = 0;
  /// Geometric mean of r over layers and traces.
  double geo_mean_ratio = 0.0;
  /// Per layer, geometric mean of r^(d) over traces.
  std::vector<double> layer_ratio;
  /// Per d = 0..D, arithmetic mean of ‖Δ^(d)‖ over traces.
  std::vector<double> mean_delta_norm;
  /// Per d = 0..D, (∏_{k<=d} max_traces r^(k)) · max_traces ‖ξ‖.
  std::vector<double> ratio_bound;
  /// Per-layer Lipschitz estimates, when supplied.
  std::vector<double> layer_lipschitz;
  /// layer_ratio / layer_lipschitz, raw and clipped to (0, 1].
  std::vector<double> alpha_raw;
  std::vector<double> alpha;
  /// Per d = 0..D, (ᾱ L̄)^d · mean ‖ξ‖ with geometric means over layers.
  std::vector<double> bound_curve;
};

/// Throws ConfigError when traces disagree on depth or the estimate count is
/// neither 0 nor D, and DegenerateError when every trace is degenerate.
PropagationSummary summarize_propagation(std::span<const DepthTrace> traces,
                                         std::span<const LipschitzEstimate> layer_estimates = {});

/// Metric (ASR, deviation, ...) against depth for one stack.
struct DepthCurve {
  std::vector<std::size_t> depths;
  std::vector<double> values;
};

struct CrossoverEntry {
  double budget = 0.0;
  /// Smallest depth with DA strictly below the baseline.
  std::optional<std::size_t> depth;
  bool da_above_at_first = false;
  bool tie = false;
  /// Small budgets (<= 1/255) are expected to show a crossover, larger ones
  /// not.
  bool crossover_expected = false;
  std::string verdict;
};

/// Throws ConfigError when the depth grids differ.
CrossoverEntry find_crossover(double budget, const DepthCurve& da, const DepthCurve& base);

/// One pair of summaries per budget; the compared curve is the cumulative
/// product of the per-layer ratios at depths 1..D.
std::vector<CrossoverEntry> empirical_crossover(std::span<const PropagationSummary> da,
                                                std::span<const PropagationSummary> base,
                                                std::span<const double> budgets);

}  // namespace dattn
