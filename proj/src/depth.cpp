#include "dattn/depth.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "dattn/error.hpp"

namespace dattn {

double DepthTrace::geo_mean_ratio() const {
  if (ratios.empty()) return 1.0;
  double log_sum = 0.0;
  for (double r : ratios) log_sum += std::log(r);
  return std::exp(log_sum / static_cast<double>(ratios.size()));
}

DepthTrace make_depth_trace(std::vector<double> delta_norms, double xi_linf) {
  if (delta_norms.empty()) throw ConfigError("depth trace: need at least the input norm");
  DepthTrace t;
  t.xi_norm = delta_norms.front();
  t.xi_linf = xi_linf;
  for (std::size_t d = 1; d < delta_norms.size(); ++d) {
    if (delta_norms[d - 1] > 0.0) {
      t.ratios.push_back(delta_norms[d] / delta_norms[d - 1]);
    } else {
      t.ratios.push_back(0.0);
      t.degenerate = true;
    }
  }
  if (!t.ratios.empty() && delta_norms.back() == 0.0) t.degenerate = true;
  t.delta_norms = std::move(delta_norms);
  return t;
}

namespace {

void require_perturbation(const Tensor& x, const Tensor& xi) {
  require_same_shape(x, xi, "trace_perturbation");
  if (norm2(xi) == 0.0) throw ConfigError("trace_perturbation: xi must be nonzero");
}

}  // namespace

DepthTrace trace_perturbation(const Classifier& model, const Tensor& x, const Tensor& xi) {
  require_perturbation(x, xi);
  const ForwardTrace clean = model.trace(x);
  const Tensor moved_input = x + xi;
  const ForwardTrace moved = model.trace(moved_input);
  // The realized input change, so identity blocks give ratios of exactly 1.
  std::vector<double> norms{norm2(moved_input - x)};
  for (std::size_t d = 0; d < model.depth(); ++d) {
    norms.push_back(norm2(moved.layers[d].output - clean.layers[d].output));
  }
  return make_depth_trace(std::move(norms), norm_inf(xi));
}

DepthTrace trace_perturbation(std::span<const LayerFn> layers, const Tensor& x, const Tensor& xi) {
  require_perturbation(x, xi);
  Tensor a = x;
  Tensor b = x + xi;
  std::vector<double> norms{norm2(b - a)};
  for (const LayerFn& layer : layers) {
    a = layer(a);
    b = layer(b);
    norms.push_back(norm2(b - a));
  }
  return make_depth_trace(std::move(norms), norm_inf(xi));
}

PropagationSummary summarize_propagation(std::span<const DepthTrace> traces,
                                         std::span<const LipschitzEstimate> layer_estimates) {
  if (traces.empty()) throw ConfigError("propagation summary: no traces");
  PropagationSummary s;
  s.depth = traces.front().depth();
  s.traces = traces.size();
  for (const DepthTrace& t : traces) {
    if (t.depth() != s.depth) throw ConfigError("propagation summary: traces disagree on depth");
  }
  if (!layer_estimates.empty() && layer_estimates.size() != s.depth) {
    throw ConfigError("propagation summary: need one Lipschitz estimate per layer");
  }

  std::vector<const DepthTrace*> kept;
  for (const DepthTrace& t : traces) {
    if (t.degenerate) {
      ++s.excluded;
    } else {
      kept.push_back(&t);
    }
  }
  if (kept.empty()) throw DegenerateError("propagation summary: every trace is degenerate");
  const double n = static_cast<double>(kept.size());

  s.layer_ratio.assign(s.depth, 0.0);
  std::vector<double> max_ratio(s.depth, 0.0);
  s.mean_delta_norm.assign(s.depth + 1, 0.0);
  double max_xi = 0.0, mean_xi = 0.0, log_total = 0.0;
  for (const DepthTrace* t : kept) {
    max_xi = std::max(max_xi, t->xi_norm);
    mean_xi += t->xi_norm / n;
    for (std::size_t d = 0; d <= s.depth; ++d) s.mean_delta_norm[d] += t->delta_norms[d] / n;
    for (std::size_t d = 0; d < s.depth; ++d) {
      const double lr = std::log(t->ratios[d]);
      s.layer_ratio[d] += lr / n;
      log_total += lr;
      max_ratio[d] = std::max(max_ratio[d], t->ratios[d]);
    }
  }
  for (double& r : s.layer_ratio) r = std::exp(r);
  s.geo_mean_ratio = s.depth > 0 ? std::exp(log_total / (n * static_cast<double>(s.depth))) : 1.0;

  s.ratio_bound.assign(s.depth + 1, max_xi);
  for (std::size_t d = 1; d <= s.depth; ++d) s.ratio_bound[d] = s.ratio_bound[d - 1] * max_ratio[d - 1];

  if (!layer_estimates.empty()) {
    double log_alpha = 0.0, log_l = 0.0;
    for (std::size_t d = 0; d < s.depth; ++d) {
      const double l = layer_estimates[d].value;
      s.layer_lipschitz.push_back(l);
      const double raw = l > 0.0 ? s.layer_ratio[d] / l : std::numeric_limits<double>::infinity();
      s.alpha_raw.push_back(raw);
      s.alpha.push_back(std::clamp(raw, std::numeric_limits<double>::min(), 1.0));
      log_alpha += std::log(s.alpha.back());
      log_l += std::log(std::max(l, std::numeric_limits<double>::min()));
    }
    const double alpha_bar = std::exp(log_alpha / static_cast<double>(s.depth));
    const double l_bar = std::exp(log_l / static_cast<double>(s.depth));
    s.bound_curve.assign(s.depth + 1, mean_xi);
    for (std::size_t d = 1; d <= s.depth; ++d) s.bound_curve[d] = s.bound_curve[d - 1] * alpha_bar * l_bar;
  }
  return s;
}

CrossoverEntry find_crossover(double budget, const DepthCurve& da, const DepthCurve& base) {
  if (da.depths != base.depths || da.values.size() != da.depths.size() || base.values.size() != base.depths.size()) {
    throw ConfigError("crossover: depth grids differ");
  }
  CrossoverEntry e;
  e.budget = budget;
  e.crossover_expected = budget <= 1.0 / 255.0 + 1e-12;
  if (da.depths.empty()) {
    e.tie = true;
    e.verdict = "tie";
    return e;
  }
  e.da_above_at_first = da.values.front() > base.values.front();
  e.tie = da.values == base.values;
  for (std::size_t i = 0; i < da.depths.size(); ++i) {
    if (da.values[i] < base.values[i]) {
      e.depth = da.depths[i];
      break;
    }
  }
  if (e.tie) {
    e.verdict = "tie";
  } else if (e.depth) {
    e.verdict = "DA below baseline from depth " + std::to_string(*e.depth);
  } else {
    e.verdict = "no crossover";
  }
  return e;
}

std::vector<CrossoverEntry> empirical_crossover(std::span<const PropagationSummary> da,
                                                std::span<const PropagationSummary> base,
                                                std::span<const double> budgets) {
  if (da.size() != budgets.size() || base.size() != budgets.size()) {
    throw ConfigError("crossover: need one summary pair per budget");
  }
  std::vector<CrossoverEntry> out;
  for (std::size_t b = 0; b < budgets.size(); ++b) {
    if (da[b].depth != base[b].depth) throw ConfigError("crossover: depth grids differ");
    DepthCurve cd, cb;
    double pd = 1.0, pb = 1.0;
    for (std::size_t d = 0; d < da[b].depth; ++d) {
      pd *= da[b].layer_ratio[d];
      pb *= base[b].layer_ratio[d];
      cd.depths.push_back(d + 1);
      cb.depths.push_back(d + 1);
      cd.values.push_back(pd);
      cb.values.push_back(pb);
    }
    out.push_back(find_crossover(budgets[b], cd, cb));
  }
  return out;
}

}  // namespace dattn
