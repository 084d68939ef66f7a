#include "dattn/fragility.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "dattn/error.hpp"
#include "dattn/hash.hpp"
#include "dattn/parallel.hpp"
#include "dattn/rng.hpp"

namespace dattn {

namespace {

void require_layer(const Classifier& model, std::size_t layer) {
  if (layer >= model.depth()) {
    throw ConfigError("layer " + std::to_string(layer) + " out of range for depth " + std::to_string(model.depth()));
  }
}

// Builds the graph only as far as block `layer`.
BlockNodes build_until(const Classifier& model, Graph& g, Var image, std::size_t layer) {
  std::vector<Var> params = model.bind(g, false);
  Var h = model.embed(g, image, params);
  BlockNodes b;
  for (std::size_t l = 0; l <= layer; ++l) {
    b = model.block(g, l, h, params);
    h = b.output;
  }
  return b;
}

void require_probe(const Classifier& model, const Tensor& probe) {
  const std::size_t n = model.config().tokens();
  if (probe.shape() != Shape{n, n}) {
    throw DimensionError("probe must be " + std::to_string(n) + "x" + std::to_string(n) + ", got " +
                         shape_string(probe.shape()));
  }
}

Tensor evaluate(const MapBuilder& f, const Tensor& x) {
  Graph g;
  return f(g, g.constant(x)).value();
}

}  // namespace

BranchGradients branch_gradients(const Classifier& model, std::size_t layer, const Tensor& x, const Tensor& probe) {
  require_layer(model, layer);
  if (model.config().attention != AttentionKind::differential) {
    throw CapabilityError("branch gradients need a differential attention layer");
  }
  require_probe(model, probe);
  Graph g;
  Var image = g.leaf(x);
  BlockNodes b = build_until(model, g, image, layer);
  Var r = g.constant(probe);
  BranchGradients out;
  out.g1 = g.grad(probe_functional(b.a1, r), image);
  out.g2 = g.grad(probe_functional(b.a2, r), image);
  out.lambda = model.lambdas()[layer];
  return out;
}

BranchGradients branch_gradients(const Classifier& model, std::size_t layer, const Tensor& x, std::uint64_t probe_seed) {
  SeededRng rng(probe_seed);
  return branch_gradients(model, layer, x, draw_probe(model.config().tokens(), rng));
}

Tensor effective_map_gradient(const Classifier& model, std::size_t layer, const Tensor& x, const Tensor& probe) {
  require_layer(model, layer);
  require_probe(model, probe);
  Graph g;
  Var image = g.leaf(x);
  BlockNodes b = build_until(model, g, image, layer);
  return g.grad(probe_functional(b.a_effective, g.constant(probe)), image);
}

double cosine_alignment(const Tensor& g1, const Tensor& g2) {
  require_same_shape(g1, g2, "cosine_alignment");
  const double n1 = norm2(g1), n2 = norm2(g2);
  if (n1 < kDegenerateNorm || n2 < kDegenerateNorm) throw DegenerateError("cosine_alignment: gradient norm below 1e-12");
  return std::clamp(dot(g1, g2) / (n1 * n2), -1.0, 1.0);
}

double lemma1_check(const Tensor& g1, const Tensor& g2, double lambda) {
  require_same_shape(g1, g2, "lemma1_check");
  const double lhs = std::pow(norm2(g1 - lambda * g2), 2);
  const double n1 = norm2(g1), n2 = norm2(g2);
  const double cos_theta = (n1 > 0.0 && n2 > 0.0) ? dot(g1, g2) / (n1 * n2) : 0.0;
  const double rhs = n1 * n1 + lambda * lambda * n2 * n2 - 2.0 * lambda * n1 * n2 * cos_theta;
  return std::abs(lhs - rhs);
}

double lemma1_scale(const Tensor& g1, const Tensor& g2, double lambda) {
  const double n1 = norm2(g1), n2 = norm2(g2);
  return std::max({1.0, n1 * n1, lambda * lambda * n2 * n2});
}

double amplification_factor(double rho, double cos_theta, double lambda) {
  // Written as (1 - λρ)² + 2λρ(1 - cosθ) so that cosθ = ±1 are exact.
  const double lr = lambda * rho;
  return std::sqrt(std::max(0.0, (1.0 - lr) * (1.0 - lr) + 2.0 * lr * (1.0 - cos_theta)));
}

double relative_sensitivity(double gamma, double rho, double cos_theta, double lambda) {
  return gamma * amplification_factor(rho, cos_theta, lambda);
}

double amplifying_condition(double gamma, double rho, double lambda) {
  const double lr = lambda * rho;
  if (lr == 0.0) throw DegenerateError("amplifying_condition: undefined for lambda * rho = 0");
  if (lr < 0.0) throw ConfigError("amplifying_condition: requires lambda * rho > 0");
  if (gamma == 0.0) return -std::numeric_limits<double>::infinity();
  return (1.0 + lr * lr - 1.0 / (gamma * gamma)) / (2.0 * lr);
}

LipschitzEstimate lipschitz_estimate(const MapBuilder& f, const Tensor& x, const LipschitzOptions& options,
                                     std::span<const Tensor> extra_probes) {
  if (options.samples < 1) throw ConfigError("lipschitz: samples must be >= 1");
  if (!(options.epsilon > 0.0)) throw ConfigError("lipschitz: epsilon must be > 0");
  const Tensor fx = evaluate(f, x);

  LipschitzEstimate est;
  est.epsilon = options.epsilon;
  est.best_probe = Tensor(x.shape());
  auto consider = [&](const Tensor& xi, const Tensor& fy) {
    ++est.samples;
    const double n = norm2(xi);
    if (n == 0.0) return;
    const double r = norm2(fy - fx) / n;
    if (r > est.value) {
      est.value = r;
      est.best_probe = xi;
    }
  };

  SeededRng draws(options.seed, 0);
  for (std::size_t i = 0; i < options.samples; ++i) {
    Tensor xi = draws.uniform_tensor(x.shape(), -options.epsilon, options.epsilon);
    consider(xi, evaluate(f, x + xi));
  }
  for (const Tensor& xi : extra_probes) {
    require_same_shape(xi, x, "lipschitz probe");
    consider(xi, evaluate(f, x + xi));
  }

  SeededRng refine(options.seed, 1);
  Tensor xi = refine.uniform_tensor(x.shape(), -options.epsilon, options.epsilon);
  for (std::size_t s = 0; s <= options.refine_steps; ++s) {
    Graph g;
    Var y = g.leaf(x + xi);
    Var fy = f(g, y);
    consider(xi, fy.value());
    Var d = fy - g.constant(fx);
    if (s == options.refine_steps) break;
    Tensor u = g.grad(scale(inner(d, d), 0.5), y);
    const double top = norm_inf(u);
    if (top == 0.0) break;
    xi = (options.epsilon / top) * u;
  }
  return est;
}

MapBuilder image_attention_map(const Classifier& model, std::size_t layer) {
  require_layer(model, layer);
  return [&model, layer](Graph& g, Var image) { return build_until(model, g, image, layer).a_effective; };
}

MapBuilder layer_attention_map(const Classifier& model, std::size_t layer) {
  require_layer(model, layer);
  return [&model, layer](Graph& g, Var h) {
    std::vector<Var> params = model.bind(g, false);
    return model.block(g, layer, h, params).a_effective;
  };
}

LipschitzEstimate layer_lipschitz(const Classifier& model, std::size_t layer, const Tensor& x,
                                  const LipschitzOptions& options) {
  require_layer(model, layer);
  const ForwardTrace trace = model.trace(x);
  LipschitzEstimate est = lipschitz_estimate(layer_attention_map(model, layer), trace.layers[layer].input, options);
  est.layer = layer;
  return est;
}

double mean_layer_lipschitz(const Classifier& model, const Tensor& x, const LipschitzOptions& options) {
  const ForwardTrace trace = model.trace(x);
  double total = 0.0;
  for (std::size_t l = 0; l < model.depth(); ++l) {
    total += lipschitz_estimate(layer_attention_map(model, l), trace.layers[l].input, options).value;
  }
  return total / static_cast<double>(model.depth());
}

Lemma2Report lemma2_bound_check(const LipschitzEstimate& l_da, const LipschitzEstimate& l_base, double gamma, double rho,
                                double cos_theta, double lambda) {
  if (l_base.value < kDegenerateNorm) throw DegenerateError("lemma2: baseline Lipschitz estimate is zero");
  Lemma2Report r;
  r.l_da = l_da.value;
  r.l_base = l_base.value;
  r.ratio = l_da.value / l_base.value;
  r.gamma = gamma;
  r.rho = rho;
  r.cos_theta = cos_theta;
  r.lambda = lambda;
  r.bound = relative_sensitivity(gamma, rho, cos_theta, lambda);
  r.slack = r.bound - r.ratio;
  r.violated = r.slack < 0.0;
  return r;
}

CertifiedRadiusReport certified_radius_ratio(const Classifier& da, const Classifier& base, const Tensor& x,
                                             std::size_t label, const RadiusProtocol& protocol) {
  if (protocol.probes < 1) throw ConfigError("certified radius: probes must be >= 1");
  if (!(protocol.epsilon >= 0.0)) throw ConfigError("certified radius: epsilon must be >= 0");
  if (da.config().tokens() != base.config().tokens()) throw DimensionError("certified radius: token counts differ");

  CertifiedRadiusReport r;
  r.margin_da = margin(da, x, label);
  r.margin_base = margin(base, x, label);

  const std::uint64_t key = derive_seed(protocol.seed, fnv1a64(x));
  double best_da = -1.0;
  for (std::size_t j = 0; j < protocol.probes; ++j) {
    SeededRng rng(key, j);
    Tensor point = x;
    if (protocol.epsilon > 0.0) point = x + rng.uniform_tensor(x.shape(), -protocol.epsilon, protocol.epsilon);
    const Tensor probe = draw_probe(da.config().tokens(), rng);
    const BranchGradients bg = branch_gradients(da, protocol.layer, point, probe);
    const Tensor g_base = effective_map_gradient(base, protocol.layer, point, probe);
    const double n_da = norm2(bg.g1 - bg.lambda * bg.g2);
    const double n_base = norm2(g_base);
    r.lipschitz_base = std::max(r.lipschitz_base, n_base);
    if (n_da > best_da) {
      best_da = n_da;
      const double n1 = norm2(bg.g1);
      r.lambda = bg.lambda;
      r.rho = n1 > 0.0 ? norm2(bg.g2) / n1 : 0.0;
      r.gamma = n_base > 0.0 ? n1 / n_base : 0.0;
      r.cos_theta = cosine_alignment(bg.g1, bg.g2);
    }
  }
  r.lipschitz_da = best_da;
  if (r.lipschitz_da < kDegenerateNorm || r.lipschitz_base < kDegenerateNorm) {
    throw DegenerateError("certified radius: attention-map gradient vanished");
  }

  r.certifiable = r.margin_da > 0.0 && r.margin_base > 0.0;
  if (!r.certifiable) return r;
  r.radius_da = r.margin_da / r.lipschitz_da;
  r.radius_base = r.margin_base / r.lipschitz_base;
  r.delta_m = r.margin_da / r.margin_base;
  r.ratio = r.radius_da / r.radius_base;
  r.bound = r.delta_m / relative_sensitivity(r.gamma, r.rho, r.cos_theta, r.lambda);
  r.slack = r.ratio - r.bound;
  return r;
}

namespace {

struct SampleAlignment {
  std::size_t evaluations = 0;
  std::size_t degenerate = 0;
  std::vector<double> cos;
  std::vector<double> rho;
  std::vector<double> gamma;
};

void summarize(RangeSummary& s, const std::vector<double>& values) {
  s.count = values.size();
  if (values.empty()) return;
  double total = 0.0;
  s.min = values.front();
  s.max = values.front();
  for (double v : values) {
    total += v;
    s.min = std::min(s.min, v);
    s.max = std::max(s.max, v);
  }
  s.mean = total / static_cast<double>(values.size());
}

}  // namespace

AlignmentStats negative_alignment_frequency(const Classifier& model, std::size_t layer, const Dataset& data,
                                            const AlignmentOptions& options, const Classifier* base) {
  require_layer(model, layer);
  if (model.config().attention != AttentionKind::differential) {
    throw CapabilityError("alignment needs a differential attention layer");
  }
  if (data.empty()) throw DataError("alignment: dataset is empty");
  if (options.per_sample < 1) throw ConfigError("alignment: per-sample draws must be >= 1");
  if (!(options.epsilon >= 0.0)) throw ConfigError("alignment: epsilon must be >= 0");

  const std::size_t tokens = model.config().tokens();
  std::vector<SampleAlignment> per(data.size());
  parallel_for(data.size(), options.workers, [&](std::size_t i) {
    const Tensor& x = data.images[i];
    const std::uint64_t key = derive_seed(options.seed, fnv1a64(x));
    SampleAlignment& out = per[i];
    for (std::size_t j = 0; j < options.per_sample; ++j) {
      SeededRng rng(key, j);
      Tensor point = x;
      if (options.epsilon > 0.0) point = x + rng.uniform_tensor(x.shape(), -options.epsilon, options.epsilon);
      const Tensor probe = draw_probe(tokens, rng);
      const BranchGradients bg = branch_gradients(model, layer, point, probe);
      ++out.evaluations;
      const double n1 = norm2(bg.g1), n2 = norm2(bg.g2);
      if (n1 < kDegenerateNorm || n2 < kDegenerateNorm) {
        ++out.degenerate;
        continue;
      }
      out.cos.push_back(cosine_alignment(bg.g1, bg.g2));
      out.rho.push_back(n2 / n1);
      if (base) {
        const double nb = norm2(effective_map_gradient(*base, layer, point, probe));
        if (nb >= kDegenerateNorm) out.gamma.push_back(n1 / nb);
      }
    }
  });

  AlignmentStats stats;
  stats.layer = layer;
  stats.lambda = model.lambdas()[layer];
  std::vector<double> cos, rho, gamma;
  for (const SampleAlignment& s : per) {
    stats.evaluations += s.evaluations;
    stats.degenerate += s.degenerate;
    cos.insert(cos.end(), s.cos.begin(), s.cos.end());
    rho.insert(rho.end(), s.rho.begin(), s.rho.end());
    gamma.insert(gamma.end(), s.gamma.begin(), s.gamma.end());
  }
  if (cos.empty()) throw DegenerateError("alignment: every branch gradient was degenerate");
  double cos_total = 0.0;
  for (double c : cos) {
    if (c < 0.0) ++stats.negative;
    cos_total += c;
    const auto bin = static_cast<std::size_t>(std::floor((c + 1.0) / 2.0 * 20.0));
    ++stats.histogram[std::min<std::size_t>(bin, 19)];
  }
  stats.negative_fraction = static_cast<double>(stats.negative) / static_cast<double>(cos.size());
  stats.mean_cos_theta = cos_total / static_cast<double>(cos.size());
  summarize(stats.rho, rho);
  if (base) {
    stats.gamma.emplace();
    summarize(*stats.gamma, gamma);
  }
  return stats;
}

}  // namespace dattn
