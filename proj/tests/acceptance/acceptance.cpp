// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "dattn/attacks.hpp"
#include "dattn/checkpoint.hpp"
#include "dattn/config.hpp"
#include "dattn/dataset.hpp"
#include "dattn/depth.hpp"
#include "dattn/error.hpp"
#include "dattn/experiments.hpp"
#include "dattn/fragility.hpp"
#include "dattn/parallel.hpp"
#include "dattn/report.hpp"
#include "dattn/rng.hpp"
#include "dattn/train.hpp"

using namespace dattn;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

struct Outcome {
  bool pass = false;
  std::string detail;
};

int failures = 0;

void report(int id, const std::string& name, const Outcome& o, double secs) {
  if (!o.pass) ++failures;
  std::printf("%s criterion %d (%s): %s [%.1f s]\n", o.pass ? "PASS" : "FAIL", id, name.c_str(), o.detail.c_str(), secs);
  std::fflush(stdout);
}

void run_criterion(int id, const std::string& name, const std::function<Outcome()>& body) {
  const auto t0 = Clock::now();
  Outcome o;
  try {
    o = body();
  } catch (const std::exception& e) {
    o = {false, std::string("exception: ") + e.what()};
  }
  report(id, name, o, seconds_since(t0));
}

std::size_t workers() { return std::max(1u, std::thread::hardware_concurrency()); }

// Desk-scale setting shared by the trained-model criteria.
ExperimentConfig base_config(std::uint64_t seed) {
  ExperimentConfig c;
  c.seed = seed;
  c.workers = workers();
  c.model.image_size = 16;
  c.model.patch_size = 4;
  c.model.embed_dim = 32;
  c.model.head_dim = 32;
  c.model.num_classes = 4;
  c.data.classes = 4;
  c.data.train_samples = 2000;
  c.data.test_samples = 500;
  c.data.signal_size = 6;
  c.train.epochs = 20;
  return c;
}

const std::vector<std::uint64_t> kSeeds = {1, 2, 3};

struct Trained {
  Classifier model;
  double train_seconds;
};

// Models are trained once and shared between criteria.
class ModelCache {
 public:
  const DataSplits& data(std::uint64_t seed) {
    auto it = data_.find(seed);
    if (it == data_.end()) {
      const ExperimentConfig c = base_config(seed);
      it = data_.emplace(seed, load_data(c.data, c.model, c.seed)).first;
    }
    return it->second;
  }

  const Trained& get(AttentionKind kind, std::size_t depth, std::uint64_t seed) {
    const auto key = std::make_tuple(kind, depth, seed);
    auto it = models_.find(key);
    if (it == models_.end()) {
      ExperimentConfig c = base_config(seed);
      c.model.attention = kind;
      c.model.depth = depth;
      const auto t0 = Clock::now();
      Classifier m = train_model(c, c.model, data(seed).train);
      const double secs = seconds_since(t0);
      std::printf("  trained %s depth %zu seed %llu: test accuracy %.3f (%.1f s)\n", to_string(kind).c_str(), depth,
                  static_cast<unsigned long long>(seed), accuracy(m, data(seed).test, workers()), secs);
      std::fflush(stdout);
      it = models_.emplace(key, Trained{std::move(m), secs}).first;
    }
    return it->second;
  }

 private:
  std::map<std::uint64_t, DataSplits> data_;
  std::map<std::tuple<AttentionKind, std::size_t, std::uint64_t>, Trained> models_;
};

Dataset head(const Dataset& d, std::size_t n) { return d.slice(0, std::min(n, d.size())); }

// 1. Branch-split identity on random triples.
Outcome lemma1_identity() {
  const auto t0 = Clock::now();
  SeededRng rng(101);
  double worst = 0.0;
  for (int t = 0; t < 1000; ++t) {
    const std::size_t n = 1 + rng.index(256);
    const Tensor g1 = rng.normal_tensor({1, n}, std::exp(3.0 * rng.normal()));
    const Tensor g2 = rng.normal_tensor({1, n}, std::exp(3.0 * rng.normal()));
    const double lambda = 1.2 * rng.uniform();
    worst = std::max(worst, lemma1_check(g1, g2, lambda) / lemma1_scale(g1, g2, lambda));
  }
  const double secs = seconds_since(t0);
  return {worst <= 1e-10 && secs < 1.0, "max residual/scale " + fmt("%.3g", worst) + " (tol 1e-10) over 1000 triples in " +
                                            fmt("%.3f", secs) + " s (limit 1 s)"};
}

// 2. Amplification factor at cos = +/-1 on a 10 x 10 grid.
Outcome theorem1_boundary() {
  double worst = 0.0;
  for (int i = 0; i < 10; ++i)
    for (int j = 0; j < 10; ++j) {
      const double rho = 0.25 * i, lambda = 0.12 * j;
      worst = std::max(worst, std::abs(amplification_factor(rho, 1.0, lambda) - std::abs(1.0 - lambda * rho)));
      worst = std::max(worst, std::abs(amplification_factor(rho, -1.0, lambda) - (1.0 + lambda * rho)));
    }
  return {worst <= 1e-12, "max deviation " + fmt("%.3g", worst) + " over 100 (rho, lambda) points (tol 1e-12)"};
}

// 3. Relative sensitivity on a trained depth-1 pair.
Outcome theorem2_live(ModelCache& cache) {
  const Classifier& da = cache.get(AttentionKind::differential, 1, 1).model;
  const Classifier& base = cache.get(AttentionKind::standard, 1, 1).model;
  const Dataset set = head(cache.data(1).test, 60);
  SeededRng probes(derive_seed(1, 33));
  double worst = 0.0;
  std::size_t used = 0;
  for (std::size_t i = 0; i < set.size(); ++i) {
    const Tensor r = draw_probe(da.config().tokens(), probes);
    const BranchGradients b = branch_gradients(da, 0, set.images[i], r);
    const Tensor g_da = effective_map_gradient(da, 0, set.images[i], r);
    const Tensor g_base = effective_map_gradient(base, 0, set.images[i], r);
    const double n1 = norm2(b.g1), n2 = norm2(b.g2), nb = norm2(g_base);
    if (n1 < kDegenerateNorm || n2 < kDegenerateNorm || nb < kDegenerateNorm) continue;
    const double measured = norm2(g_da) / nb;
    const double predicted = relative_sensitivity(n1 / nb, n2 / n1, cosine_alignment(b.g1, b.g2), b.lambda);
    worst = std::max(worst, std::abs(measured - predicted) / measured);
    ++used;
  }
  return {used >= 50 && worst <= 1e-8,
          "max rel. error " + fmt("%.3g", worst) + " over " + std::to_string(used) + " samples (tol 1e-8, need >= 50)"};
}

// 4. Amplifying condition iff on a 10^4 grid.
Outcome theorem3_iff() {
  std::size_t wrong = 0, checked = 0, boundary = 0;
  for (int a = 0; a < 10; ++a)
    for (int b = 0; b < 10; ++b)
      for (int l = 0; l < 10; ++l)
        for (int t = 0; t < 10; ++t) {
          const double gamma = 0.3 + 0.2 * a, rho = 0.2 + 0.25 * b, lambda = 0.1 + 0.11 * l;
          const double cos_theta = -1.0 + 2.0 * t / 9.0;
          const double s = relative_sensitivity(gamma, rho, cos_theta, lambda);
          const double threshold = amplifying_condition(gamma, rho, lambda);
          if (std::abs(s - 1.0) < 1e-12 || std::abs(cos_theta - threshold) < 1e-12) {
            ++boundary;
            continue;
          }
          ++checked;
          if ((s > 1.0) != (cos_theta < threshold)) ++wrong;
        }
  return {wrong == 0 && checked + boundary == 10000, std::to_string(wrong) + " misclassified of " +
                                                         std::to_string(checked) + " grid points (" +
                                                         std::to_string(boundary) + " in the boundary band)"};
}

// 5. Analysis, loss and attack gradients against central differences.
Outcome gradient_oracle() {
  SeededRng rng(505);
  double worst = 0.0;
  std::size_t instances = 0;
  for (int k = 0; k < 100; ++k) {
    ModelConfig c;
    c.image_size = 8;
    c.patch_size = 4;
    c.embed_dim = 4 + rng.index(5);
    c.head_dim = 4 + rng.index(5);
    c.mlp_ratio = 2;
    c.depth = 1 + rng.index(2);
    c.num_classes = 2 + rng.index(3);
    c.lambda_init = 1.2 * rng.uniform();
    const Classifier m = Classifier::initialize(c, rng.next_u64());
    const Tensor x = rng.uniform_tensor(c.image_shape(), 0.05, 0.95);
    const std::size_t layer = rng.index(c.depth);
    const Tensor r = rng.normal_tensor({c.tokens(), c.tokens()});
    const std::size_t y = rng.index(c.num_classes);

    const BranchGradients b = branch_gradients(m, layer, x, r);
    const auto fd_map = [&](auto pick) {
      return finite_diff_grad([&](const Tensor& t) { return probe_functional(pick(m.trace(t).layers[layer]), r); }, x);
    };
    worst = std::max(worst, relative_error(b.g1, fd_map([](const LayerTrace& l) { return l.a1; })));
    worst = std::max(worst, relative_error(b.g2, fd_map([](const LayerTrace& l) { return *l.a2; })));
    worst = std::max(worst, relative_error(effective_map_gradient(m, layer, x, r),
                                           fd_map([](const LayerTrace& l) { return l.a_effective; })));

    // Loss gradient, which is also the PGD ascent direction.
    Graph g;
    Var v = g.leaf(x);
    const Tensor loss_grad = g.grad(cross_entropy_objective(m.logits(g, v), y), v);
    const Tensor fd_loss = finite_diff_grad(
        [&](const Tensor& t) {
          Graph h;
          return cross_entropy(h.constant(m.logits(t)), y).value().item();
        },
        x);
    worst = std::max(worst, relative_error(loss_grad, fd_loss));

    // CW objective in tanh space.
    const Tensor w = rng.normal_tensor(c.image_shape(), 0.5);
    const auto cw_objective = [&](Graph& h, Var wv) {
      Var adv = scale(shift(dattn::tanh(wv), 1.0), 0.5);
      Var d = adv - h.constant(x);
      Var z = m.logits(h, adv);
      const std::size_t other = y == 0 ? 1 : 0;
      return inner(d, d) + scale(element(z, y) - element(z, other), 0.7);
    };
    Graph h;
    Var wv = h.leaf(w);
    const Tensor cw_grad = h.grad(cw_objective(h, wv), wv);
    const Tensor fd_cw = finite_diff_grad(
        [&](const Tensor& t) {
          Graph q;
          return cw_objective(q, q.constant(t)).value().item();
        },
        w);
    worst = std::max(worst, relative_error(cw_grad, fd_cw));
    ++instances;
  }
  return {worst <= 1e-6, "max rel. error " + fmt("%.3g", worst) + " over " + std::to_string(instances) +
                             " random instances x 5 gradients (tol 1e-6)"};
}

// 6. Lipschitz calibration.
Outcome lipschitz_calibration() {
  const auto t0 = Clock::now();
  const Tensor x = SeededRng(606).uniform_tensor({3, 16, 16}, 0.0, 1.0);
  const double identity = lipschitz_estimate([](Graph&, Var v) { return v; }, x, LipschitzOptions{}).value;
  const Tensor m = Tensor::matrix({{2, 0}, {0, 1}});
  const double diag = lipschitz_estimate([&](Graph& g, Var v) { return matmul(v, g.constant(m)); },
                                         Tensor::matrix({{0.4, 0.7}}), LipschitzOptions{})
                          .value;
  const double secs = seconds_since(t0);
  return {std::abs(identity - 1.0) <= 1e-9 && diag >= 1.99 && secs < 10.0,
          "identity " + fmt("%.12f", identity) + ", diag(2,1) " + fmt("%.6f", diag) + " (need >= 1.99), " +
              fmt("%.2f", secs) + " s (limit 10 s)"};
}

// 7. PGD feasibility and budget nesting on a fixed model.
Outcome attack_nesting(ModelCache& cache) {
  const Classifier& m = cache.get(AttentionKind::differential, 1, 1).model;
  const Dataset& test = cache.data(1).test;
  const std::vector<double> budgets = {0.25 / 255, 0.5 / 255, 1.0 / 255, 2.0 / 255, 4.0 / 255};
  const ExperimentConfig c = base_config(1);
  std::vector<double> asr;
  double worst_ball = 0.0, worst_box = 0.0;
  for (double eps : budgets) {
    std::vector<int> success(test.size(), 0);
    std::vector<double> ball(test.size(), 0.0), box(test.size(), 0.0);
    parallel_for(test.size(), workers(), [&](std::size_t i) {
      SeededRng rng(attack_seed(c), i);
      const Tensor& x = test.images[i];
      const AttackResult r = pgd_linf(m, x, m.predict(x), LinfAttackSpec::pgd(eps), rng);
      success[i] = r.success;
      ball[i] = max_abs_diff(r.adversarial, x) - eps;
      for (double v : r.adversarial.data()) box[i] = std::max({box[i], -v, v - 1.0});
    });
    std::size_t s = 0;
    for (std::size_t i = 0; i < test.size(); ++i) {
      s += success[i];
      worst_ball = std::max(worst_ball, ball[i]);
      worst_box = std::max(worst_box, box[i]);
    }
    asr.push_back(static_cast<double>(s) / static_cast<double>(test.size()));
  }
  bool nested = true;
  std::string curve;
  for (std::size_t i = 0; i < asr.size(); ++i) {
    curve += (i ? ", " : "") + fmt("%.3f", asr[i]);
    for (std::size_t j = 0; j < i; ++j) nested = nested && asr[i] >= asr[j] - 0.02;
  }
  const bool feasible = worst_ball <= 1e-9 && worst_box <= 1e-9;
  return {feasible && nested, "ASR at {0.25,0.5,1,2,4}/255 = [" + curve + "] on " + std::to_string(test.size()) +
                                  " samples; max ball excess " + fmt("%.2g", std::max(0.0, worst_ball)) +
                                  ", max box excess " + fmt("%.2g", std::max(0.0, worst_box)) +
                                  (nested ? ", nested" : ", NOT nested")};
}

// 8. Negative alignment and small-budget ASR, DiffViT vs ViT.
Outcome fragile_trend(ModelCache& cache) {
  const auto t0 = Clock::now();
  double train_secs = 0.0;
  double fraction_sum = 0.0;
  int asr_wins = 0;
  std::string detail;
  for (std::uint64_t seed : kSeeds) {
    const Trained& da = cache.get(AttentionKind::differential, 1, seed);
    const Trained& vit = cache.get(AttentionKind::standard, 1, seed);
    train_secs += da.train_seconds + vit.train_seconds;
    const ExperimentConfig c = base_config(seed);
    const DataSplits& data = cache.data(seed);
    AlignmentOptions ao;
    ao.seed = analysis_seed(c);
    ao.workers = workers();
    const AlignmentStats st = negative_alignment_frequency(da.model, 0, head(data.test, 100), ao);
    fraction_sum += st.negative_fraction;
    const LinfAttackSpec spec = LinfAttackSpec::pgd(0.5 / 255.0);
    const double asr_da = attack_success_rate(da.model, data.test, spec, attack_seed(c), workers()).rate;
    const double asr_vit = attack_success_rate(vit.model, data.test, spec, attack_seed(c), workers()).rate;
    if (asr_da >= asr_vit) ++asr_wins;
    detail += "seed " + std::to_string(seed) + ": neg " + fmt("%.3f", st.negative_fraction) + ", ASR DA " +
              fmt("%.3f", asr_da) + " vs ViT " + fmt("%.3f", asr_vit) + "; ";
  }
  // Training done before this criterion started is still part of its cost.
  const double secs = seconds_since(t0) + train_secs;
  const double mean_fraction = fraction_sum / static_cast<double>(kSeeds.size());
  const bool a = mean_fraction > 0.5, b = asr_wins >= 2;
  return {a && b && secs < 900.0, detail + "(a) mean negative fraction " + fmt("%.3f", mean_fraction) +
                                      (a ? " > 0.5" : " <= 0.5") + "; (b) DA >= ViT in " + std::to_string(asr_wins) +
                                      "/3 seeds; " + fmt("%.0f", secs) + " s incl. training (limit 900 s)"};
}

struct CwMeasure {
  double mean_norm = 0.0;
  std::size_t successes = 0;
  std::size_t trials = 0;
};

CwMeasure cw_mean(const Classifier& m, const Dataset& set) {
  L2AttackSpec spec;
  spec.search_steps = 9;
  std::vector<int> ok(set.size(), 0);
  std::vector<double> norms(set.size(), 0.0);
  parallel_for(set.size(), workers(), [&](std::size_t i) {
    const AttackResult r = cw_l2(m, set.images[i], m.predict(set.images[i]), spec);
    ok[i] = r.success;
    norms[i] = r.perturbation_norm;
  });
  CwMeasure out;
  out.trials = set.size();
  for (std::size_t i = 0; i < set.size(); ++i) {
    out.successes += ok[i];
    if (ok[i]) out.mean_norm += norms[i];
  }
  if (out.successes > 0) out.mean_norm /= static_cast<double>(out.successes);
  return out;
}

// 9. CW l2 grows from depth 1 to depth 4.
Outcome cw_depth_trend(ModelCache& cache) {
  const auto t0 = Clock::now();
  double train_secs = 0.0;
  int wins = 0;
  std::string detail;
  for (std::uint64_t seed : kSeeds) {
    const Trained& shallow = cache.get(AttentionKind::differential, 1, seed);
    const Trained& deep = cache.get(AttentionKind::differential, 4, seed);
    train_secs += shallow.train_seconds + deep.train_seconds;
    const Dataset set = head(cache.data(seed).test, 50);
    const CwMeasure a = cw_mean(shallow.model, set), b = cw_mean(deep.model, set);
    const bool full = a.successes == a.trials && b.successes == b.trials;
    const double ratio = a.mean_norm > 0.0 ? b.mean_norm / a.mean_norm : 0.0;
    if (full && ratio > 1.0) ++wins;
    detail += "seed " + std::to_string(seed) + ": D1 " + fmt("%.4f", a.mean_norm) + " (" + std::to_string(a.successes) +
              "/" + std::to_string(a.trials) + "), D4 " + fmt("%.4f", b.mean_norm) + " (" +
              std::to_string(b.successes) + "/" + std::to_string(b.trials) + "), ratio " + fmt("%.3f", ratio) + "; ";
  }
  const double secs = seconds_since(t0) + train_secs;
  return {wins >= 2 && secs < 1800.0, detail + "ratio > 1 at full success in " + std::to_string(wins) + "/3 seeds; " +
                                          fmt("%.0f", secs) + " s incl. training (limit 1800 s)"};
}

// 10. Mean per-layer Lipschitz grows from depth 1 to depth 4.
Outcome lipschitz_depth_trend(ModelCache& cache) {
  int wins = 0;
  std::string detail;
  for (std::uint64_t seed : kSeeds) {
    const ExperimentConfig c = base_config(seed);
    LipschitzOptions o;
    o.seed = analysis_seed(c);
    const Dataset set = head(cache.data(seed).test, 20);
    double means[2] = {0.0, 0.0};
    const std::size_t depths[2] = {1, 4};
    for (int k = 0; k < 2; ++k) {
      const Classifier& m = cache.get(AttentionKind::differential, depths[k], seed).model;
      std::vector<double> per(set.size(), 0.0);
      parallel_for(set.size(), workers(), [&](std::size_t i) { per[i] = mean_layer_lipschitz(m, set.images[i], o); });
      for (double v : per) means[k] += v / static_cast<double>(set.size());
    }
    if (means[1] > means[0]) ++wins;
    detail += "seed " + std::to_string(seed) + ": D1 " + fmt("%.4f", means[0]) + ", D4 " + fmt("%.4f", means[1]) + "; ";
  }
  return {wins >= 2, detail + "depth 4 larger in " + std::to_string(wins) + "/3 seeds"};
}

// 11. Certified-radius ratio never below its bound.
Outcome certified_radius(ModelCache& cache) {
  const Classifier& da = cache.get(AttentionKind::differential, 1, 1).model;
  const Classifier& base = cache.get(AttentionKind::standard, 1, 1).model;
  const Dataset set = head(cache.data(1).test, 100);
  RadiusProtocol p;
  p.seed = analysis_seed(base_config(1));
  double worst = std::numeric_limits<double>::infinity();
  std::size_t certified = 0;
  for (std::size_t i = 0; i < set.size(); ++i) {
    const CertifiedRadiusReport r = certified_radius_ratio(da, base, set.images[i], set.labels[i], p);
    if (!r.certifiable) continue;
    ++certified;
    worst = std::min(worst, r.ratio - r.bound);
  }
  return {certified > 0 && worst >= -1e-9, "min (ratio - bound) " + fmt("%.3g", worst) + " over " +
                                               std::to_string(certified) + " samples with positive margins"};
}

std::map<std::string, std::string> read_all(const fs::path& dir) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    const std::string ext = e.path().extension().string();
    if (ext != ".csv") continue;
    std::ifstream in(e.path(), std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    out[fs::relative(e.path(), dir).string()] = ss.str();
  }
  return out;
}

void run_all_subcommands(const fs::path& out) {
  ExperimentConfig c = experiment_config_from_json(json::parse(R"({
    "seed": 12,
    "model": {"image_size": 8, "patch_size": 4, "embed_dim": 8, "head_dim": 8, "mlp_ratio": 2},
    "train": {"epochs": 2, "batch_size": 32},
    "data": {"train_samples": 96, "test_samples": 24, "signal_size": 4},
    "attack": {"steps": 5, "epsilons": [0.01, 0.03]},
    "analysis": {"samples": 6, "per_sample": 2, "lipschitz_samples": 4, "refine_steps": 2, "radius_probes": 4,
                 "theory_trials": 100},
    "depth_sweep": {"depths": [1, 2], "samples": 6, "cw_samples": 3, "trace_samples": 4},
    "lambda_sweep": {"lambda_inits": [0.5, 0.8]}
  })"));
  fs::remove_all(out);
  RunOptions o{c, out / "train", std::nullopt, std::nullopt};
  run_train(o);
  o.checkpoint = out / "train" / "model.ckpt";
  o.out = out / "attack";
  run_attack(o);
  o.out = out / "alignment";
  run_analyze_alignment(o);
  o.out = out / "lipschitz";
  run_analyze_lipschitz(o);
  o.checkpoint.reset();
  o.out = out / "theory";
  run_verify_theory(o);
  o.out = out / "sweeps";
  run_lambda_sweep(o);
  run_depth_sweep(o);
  emit_report(out / "sweeps");
}

// 12. Bookkeeping identities.
Outcome bookkeeping(ModelCache& cache) {
  std::vector<std::string> problems;

  const Classifier& deep = cache.get(AttentionKind::differential, 4, 1).model;
  const Dataset set = head(cache.data(1).test, 20);
  SeededRng rng(1212);
  double worst_product = 0.0;
  for (std::size_t i = 0; i < set.size(); ++i) {
    const Tensor xi = rng.uniform_tensor(set.images[i].shape(), -4.0 / 255.0, 4.0 / 255.0);
    const DepthTrace t = trace_perturbation(deep, set.images[i], xi);
    double prod = t.xi_norm;
    for (double r : t.ratios) prod *= r;
    worst_product = std::max(worst_product, std::abs(prod - t.delta_norms.back()));
  }
  if (worst_product > 1e-9) problems.push_back("trace product off by " + fmt("%.3g", worst_product));

  const auto bytes = encode_checkpoint(deep, 1, json{{"note", "acceptance"}});
  const LoadedCheckpoint back = decode_checkpoint(bytes);
  if (!(back.model.parameters() == deep.parameters()) || encode_checkpoint(back.model, 1, json{{"note", "acceptance"}}) != bytes)
    problems.push_back("checkpoint round trip not bitwise");

  SyntheticSpec s;
  s.samples = 20;
  s.classes = 10;
  s.seed = 1212;
  const Dataset synth = make_synthetic(s);
  std::vector<std::uint8_t> cifar;
  for (std::size_t i = 0; i < synth.size(); ++i) {
    const auto rec = encode_cifar10_record(synth.images[i], synth.labels[i]);
    cifar.insert(cifar.end(), rec.begin(), rec.end());
  }
  const Dataset reread = parse_cifar10(cifar);
  std::vector<std::uint8_t> again;
  for (std::size_t i = 0; i < reread.size(); ++i) {
    const auto rec = encode_cifar10_record(reread.images[i], reread.labels[i]);
    again.insert(again.end(), rec.begin(), rec.end());
  }
  if (again != cifar || reread.labels != synth.labels) problems.push_back("CIFAR record round trip differs");

  const fs::path root = fs::temp_directory_path() / "dattn_acceptance";
  run_all_subcommands(root / "first");
  run_all_subcommands(root / "second");
  const auto a = read_all(root / "first"), b = read_all(root / "second");
  std::size_t differing = 0;
  for (const auto& [name, text] : a) {
    const auto it = b.find(name);
    if (it == b.end() || it->second != text) {
      ++differing;
      problems.push_back("rerun differs: " + name);
    }
  }
  if (a.size() != b.size() || a.empty()) problems.push_back("rerun produced different file sets");

  std::string detail = "trace product max abs error " + fmt("%.3g", worst_product) + "; checkpoint and CIFAR round trips; " +
                       std::to_string(a.size()) + " CSVs compared across reruns";
  for (const std::string& p : problems) detail += "; " + p;
  return {problems.empty(), detail};
}

}  // namespace

int main() {
  std::printf("acceptance: %zu worker(s)\n", workers());
  ModelCache cache;
  run_criterion(1, "Lemma 1 identity", lemma1_identity);
  run_criterion(2, "amplification boundary cases", theorem1_boundary);
  run_criterion(3, "relative sensitivity on live layers", [&] { return theorem2_live(cache); });
  run_criterion(4, "amplifying condition iff", theorem3_iff);
  run_criterion(5, "gradient oracle", gradient_oracle);
  run_criterion(6, "Lipschitz calibration", lipschitz_calibration);
  run_criterion(7, "attack feasibility and nesting", [&] { return attack_nesting(cache); });
  run_criterion(8, "negative alignment and small-budget ASR", [&] { return fragile_trend(cache); });
  run_criterion(9, "CW l2 depth trend", [&] { return cw_depth_trend(cache); });
  run_criterion(10, "mean Lipschitz depth trend", [&] { return lipschitz_depth_trend(cache); });
  run_criterion(11, "certified radius self-consistency", [&] { return certified_radius(cache); });
  run_criterion(12, "bookkeeping identities", [&] { return bookkeeping(cache); });
  std::printf("acceptance: %d of 12 criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
