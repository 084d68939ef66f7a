#include "dattn/experiments.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>

#include "dattn/attacks.hpp"
#include "dattn/checkpoint.hpp"
#include "dattn/depth.hpp"
#include "dattn/error.hpp"
#include "dattn/fragility.hpp"
#include "dattn/hash.hpp"
#include "dattn/parallel.hpp"
#include "dattn/rng.hpp"
#include "dattn/train.hpp"

namespace dattn {

namespace fs = std::filesystem;

std::uint64_t model_seed(const ExperimentConfig& c) { return derive_seed(c.seed, 1); }
std::uint64_t train_seed(const ExperimentConfig& c) { return derive_seed(c.seed, 2); }
std::uint64_t attack_seed(const ExperimentConfig& c) { return derive_seed(c.seed, 3); }
std::uint64_t analysis_seed(const ExperimentConfig& c) { return derive_seed(c.seed, 4); }

Classifier train_model(const ExperimentConfig& c, const ModelConfig& model, const Dataset& train_data) {
  Classifier m = Classifier::initialize(model, model_seed(c));
  TrainConfig t = c.train;
  t.seed = train_seed(c);
  t.workers = c.workers;
  train(m, train_data, t);
  return m;
}

std::vector<std::string> provenance_comments(const ExperimentConfig& c) {
  return {"config: " + to_json(c).dump(), "seed: " + std::to_string(c.seed)};
}

std::string hash_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot hash " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(ss.str())));
  return buf;
}

void write_run_manifest(const fs::path& out, const std::string& subcommand, const ExperimentConfig& config,
                        const std::vector<fs::path>& artifacts) {
  json j;
  j["subcommand"] = subcommand;
  j["seed"] = config.seed;
  j["config"] = to_json(config);
  json files = json::array();
  for (const fs::path& p : artifacts) files.push_back({{"file", p.filename().string()}, {"fnv1a64", hash_file(p)}});
  j["artifacts"] = std::move(files);
  std::ofstream os(out / "run-manifest.json");
  if (!os) throw DataError("cannot write " + (out / "run-manifest.json").string());
  os << j.dump(2) << '\n';
}

namespace {

class Run {
 public:
  Run(const RunOptions& o, std::string subcommand) : options(o), subcommand_(std::move(subcommand)) {
    fs::create_directories(o.out);
  }

  fs::path path(const std::string& name) const { return options.out / name; }

  void write(const std::string& name, CsvTable table) {
    table.comments = provenance_comments(options.config);
    write_csv(path(name), table);
    summary.artifacts.push_back(path(name));
  }

  void write(const std::string& name, const json& doc) {
    json wrapped = doc;
    wrapped["config"] = to_json(options.config);
    wrapped["seed"] = options.config.seed;
    std::ofstream os(path(name));
    if (!os) throw DataError("cannot write " + path(name).string());
    os << wrapped.dump(2) << '\n';
    summary.artifacts.push_back(path(name));
  }

  void add_artifact(const fs::path& p) { summary.artifacts.push_back(p); }

  RunSummary finish() {
    write_run_manifest(options.out, subcommand_, options.config, summary.artifacts);
    return summary;
  }

  const RunOptions& options;
  RunSummary summary;

 private:
  std::string subcommand_;
};

Dataset head(const Dataset& d, std::size_t n) { return n == 0 || n >= d.size() ? d : d.slice(0, n); }

struct ModelAndData {
  Classifier model;
  DataSplits data;
};

// The checkpoint, when given, fixes the architecture; the data follows it.
ModelAndData obtain(const RunOptions& o, const ModelConfig& fallback) {
  if (o.checkpoint) {
    LoadedCheckpoint ck = load_checkpoint(*o.checkpoint);
    DataSplits data = load_data(o.config.data, ck.model.config(), o.config.seed);
    return {std::move(ck.model), std::move(data)};
  }
  DataSplits data = load_data(o.config.data, fallback, o.config.seed);
  Classifier m = train_model(o.config, fallback, data.train);
  return {std::move(m), std::move(data)};
}

std::string json_list(const std::vector<double>& v) {
  std::string s = "[";
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + format_number(v[i]);
  return s + "]";
}

std::vector<double> budgets_for(const AttackConfig& a) {
  if (a.kind == "patch") return {a.patch_widths.begin(), a.patch_widths.end()};
  if (a.kind == "cw") return {a.cw_trade_off};
  return a.epsilons;
}

L2AttackSpec cw_spec(const AttackConfig& a) {
  AttackConfig p = a;
  p.kind = "cw";
  return std::get<L2AttackSpec>(make_attack_spec(p, a.cw_trade_off));
}

LinfAttackSpec pgd_spec(const AttackConfig& a, double epsilon) {
  AttackConfig p = a;
  p.kind = "pgd";
  return std::get<LinfAttackSpec>(make_attack_spec(p, epsilon));
}

LipschitzOptions lipschitz_options(const ExperimentConfig& c) {
  LipschitzOptions o;
  o.epsilon = c.analysis.epsilon;
  o.samples = c.analysis.lipschitz_samples;
  o.refine_steps = c.analysis.refine_steps;
  o.seed = analysis_seed(c);
  return o;
}

}  // namespace

RunSummary run_train(const RunOptions& o) {
  Run run(o, "train");
  const ExperimentConfig& c = o.config;
  DataSplits data = load_data(c.data, c.model, c.seed);
  Classifier model = Classifier::initialize(c.model, model_seed(c));
  TrainConfig t = c.train;
  t.seed = train_seed(c);
  t.workers = c.workers;
  const TrainResult result = train(model, data.train, t);
  const double train_acc = accuracy(model, data.train, c.workers);
  const double test_acc = accuracy(model, data.test, c.workers);

  CsvTable metrics;
  metrics.columns = {"epoch", "mean_loss", "train_accuracy"};
  for (const EpochMetrics& m : result.epochs) metrics.add_row({cell(m.epoch), cell(m.mean_loss), cell(m.train_accuracy)});
  run.write("train_metrics.csv", metrics);

  CsvTable lambdas;
  lambdas.columns = {"epoch", "layer", "lambda"};
  for (std::size_t e = 0; e < result.lambda_trajectory.size(); ++e)
    for (std::size_t l = 0; l < result.lambda_trajectory[e].size(); ++l)
      lambdas.add_row({cell(e), cell(l), cell(result.lambda_trajectory[e][l])});
  run.write("lambda_trajectory.csv", lambdas);

  json meta = {{"epochs", c.train.epochs}, {"train_accuracy", train_acc}, {"test_accuracy", test_acc}};
  save_checkpoint(run.path("model.ckpt"), model, c.seed, meta);
  run.add_artifact(run.path("model.ckpt"));
  run.write("train_summary.json", meta);
  run.summary.lines.push_back("train accuracy " + format_number(train_acc) + ", test accuracy " + format_number(test_acc));
  return run.finish();
}

RunSummary run_attack(const RunOptions& o) {
  Run run(o, "attack");
  const ExperimentConfig& c = o.config;
  ModelAndData md = obtain(o, c.model);
  const Dataset test = head(md.data.test, c.attack.samples);
  const double clean = accuracy(md.model, test, c.workers);

  CsvTable rows, summary;
  rows.columns = {"sample_id", "attack_kind", "budget", "success", "norm", "steps_used"};
  summary.columns = {"attention", "attack_kind", "budget", "asr", "mean_norm", "trials", "successes", "clean_accuracy"};
  for (double budget : budgets_for(c.attack)) {
    const AttackSpec spec = make_attack_spec(c.attack, budget);
    const AsrReport r = attack_success_rate(md.model, test, spec, attack_seed(c), c.workers);
    for (const AttackRow& row : r.rows) {
      rows.add_row({cell(row.sample_id), row.attack_kind, cell(row.budget), cell(row.success), cell(row.norm),
                    cell(row.steps_used)});
    }
    summary.add_row({to_string(md.model.config().attention), attack_kind(spec), cell(budget), cell(r.rate),
                     cell(r.mean_norm), cell(r.trials), cell(r.successes), cell(clean)});
    run.summary.lines.push_back(attack_kind(spec) + " budget " + format_number(budget) + ": ASR " + format_number(r.rate));
  }
  run.write("attack_rows.csv", rows);
  run.write("attack_summary.csv", summary);
  return run.finish();
}

RunSummary run_lambda_sweep(const RunOptions& o) {
  Run run(o, "lambda-sweep");
  const ExperimentConfig& c = o.config;
  DataSplits data = load_data(c.data, c.model, c.seed);
  const Dataset test = head(data.test, c.attack.samples);
  CsvTable table;
  table.columns = {"lambda_init", "accuracy", "asr", "final_lambda"};
  for (double lambda_init : c.lambda_sweep.lambda_inits) {
    ModelConfig mc = c.model;
    mc.attention = AttentionKind::differential;
    mc.lambda_init = lambda_init;
    Classifier m = train_model(c, mc, data.train);
    const double acc = accuracy(m, test, c.workers);
    const AsrReport r = attack_success_rate(m, test, pgd_spec(c.attack, c.lambda_sweep.epsilon), attack_seed(c), c.workers);
    table.add_row({cell(lambda_init), cell(acc), cell(r.rate), cell(m.lambdas().front())});
    run.summary.lines.push_back("lambda_init " + format_number(lambda_init) + ": accuracy " + format_number(acc) +
                                ", ASR " + format_number(r.rate));
  }
  run.write("lambda_sweep.csv", table);
  return run.finish();
}

RunSummary run_depth_sweep(const RunOptions& o) {
  Run run(o, "depth-sweep");
  const ExperimentConfig& c = o.config;
  const DepthSweepConfig& s = c.depth_sweep;
  DataSplits data = load_data(c.data, c.model, c.seed);
  const Dataset test = head(data.test, s.samples);
  const Dataset cw_set = head(data.test, s.cw_samples);
  const Dataset trace_set = head(data.test, s.trace_samples);

  CsvTable table;
  table.columns = {"depth",      "attention_kind",  "epsilon",        "asr",
                   "asr_fgsm",   "mean_cw_l2",      "cw_success_rate", "mean_lipschitz",
                   "mean_delta_norm_per_layer", "geo_mean_ratio", "clean_accuracy"};
  // asr[kind][eps] and final deviation[kind][eps] against depth.
  std::vector<std::vector<DepthCurve>> asr_curves(2, std::vector<DepthCurve>(s.epsilons.size()));
  std::vector<std::vector<DepthCurve>> dev_curves(2, std::vector<DepthCurve>(s.epsilons.size()));

  for (std::size_t depth : s.depths) {
    for (AttentionKind kind : {AttentionKind::standard, AttentionKind::differential}) {
      ModelConfig mc = c.model;
      mc.depth = depth;
      mc.attention = kind;
      Classifier m = train_model(c, mc, data.train);
      const double clean = accuracy(m, test, c.workers);
      const AsrReport cw = attack_success_rate(m, cw_set, cw_spec(c.attack), attack_seed(c), c.workers);

      std::vector<double> lips(trace_set.size());
      const LipschitzOptions lo = lipschitz_options(c);
      parallel_for(trace_set.size(), c.workers, [&](std::size_t i) { lips[i] = mean_layer_lipschitz(m, trace_set.images[i], lo); });
      double mean_lip = 0.0;
      for (double l : lips) mean_lip += l / static_cast<double>(lips.size());

      const std::size_t k = kind == AttentionKind::differential ? 1 : 0;
      for (std::size_t e = 0; e < s.epsilons.size(); ++e) {
        const double eps = s.epsilons[e];
        const AsrReport pgd = attack_success_rate(m, test, pgd_spec(c.attack, eps), attack_seed(c), c.workers);
        const AsrReport fg = attack_success_rate(m, test, LinfAttackSpec::fgsm(eps), attack_seed(c), c.workers);

        std::vector<double> per_layer(depth, 0.0);
        double geo = std::numeric_limits<double>::quiet_NaN();
        double final_dev = 0.0;
        if (eps > 0.0) {
          std::vector<DepthTrace> traces(trace_set.size());
          parallel_for(trace_set.size(), c.workers, [&](std::size_t i) {
            SeededRng rng(derive_seed(analysis_seed(c), 7), i);
            const Tensor& x = trace_set.images[i];
            traces[i] = trace_perturbation(m, x, rng.uniform_tensor(x.shape(), -eps, eps));
          });
          const PropagationSummary ps = summarize_propagation(traces);
          for (std::size_t d = 0; d < depth; ++d) per_layer[d] = ps.mean_delta_norm[d + 1];
          geo = ps.geo_mean_ratio;
          final_dev = ps.mean_delta_norm.back();
        }
        asr_curves[k][e].depths.push_back(depth);
        asr_curves[k][e].values.push_back(pgd.rate);
        dev_curves[k][e].depths.push_back(depth);
        dev_curves[k][e].values.push_back(final_dev);
        table.add_row({cell(depth), to_string(kind), cell(eps), cell(pgd.rate), cell(fg.rate), cell(cw.mean_norm),
                       cell(cw.rate), cell(mean_lip), json_list(per_layer), cell(geo), cell(clean)});
      }
      run.summary.lines.push_back("depth " + std::to_string(depth) + " " + to_string(kind) + ": accuracy " +
                                  format_number(clean) + ", mean CW l2 " + format_number(cw.mean_norm));
    }
  }
  run.write("depth_sweep.csv", table);

  json cross = json::array();
  for (std::size_t e = 0; e < s.epsilons.size(); ++e) {
    for (const char* metric : {"asr", "deviation"}) {
      const auto& curves = std::string(metric) == "asr" ? asr_curves : dev_curves;
      const CrossoverEntry ce = find_crossover(s.epsilons[e], curves[1][e], curves[0][e]);
      cross.push_back({{"epsilon", ce.budget},
                       {"metric", metric},
                       {"crossover_depth", ce.depth ? json(*ce.depth) : json(nullptr)},
                       {"da_above_at_first_depth", ce.da_above_at_first},
                       {"tie", ce.tie},
                       {"crossover_expected", ce.crossover_expected},
                       {"verdict", ce.verdict}});
    }
  }
  run.write("crossover.json", json{{"crossover", cross}});
  return run.finish();
}

RunSummary run_analyze_alignment(const RunOptions& o) {
  Run run(o, "analyze-alignment");
  const ExperimentConfig& c = o.config;
  ModelConfig mc = c.model;
  mc.attention = AttentionKind::differential;
  ModelAndData md = obtain(o, mc);
  const Dataset set = head(md.data.test, c.analysis.samples);
  AlignmentOptions ao;
  ao.epsilon = c.analysis.epsilon;
  ao.per_sample = c.analysis.per_sample;
  ao.seed = analysis_seed(c);
  ao.workers = c.workers;

  CsvTable hist;
  hist.columns = {"layer", "bin_low", "bin_high", "count"};
  json layers = json::array();
  for (std::size_t layer = 0; layer < md.model.depth(); ++layer) {
    const AlignmentStats st = negative_alignment_frequency(md.model, layer, set, ao);
    for (std::size_t b = 0; b < st.histogram.size(); ++b) {
      hist.add_row({cell(layer), cell(-1.0 + 0.1 * static_cast<double>(b)), cell(-1.0 + 0.1 * static_cast<double>(b + 1)),
                    cell(st.histogram[b])});
    }
    layers.push_back({{"layer", layer},
                      {"lambda", st.lambda},
                      {"evaluations", st.evaluations},
                      {"degenerate", st.degenerate},
                      {"negative", st.negative},
                      {"negative_fraction", st.negative_fraction},
                      {"mean_cos_theta", st.mean_cos_theta},
                      {"cos_theta_histogram", st.histogram},
                      {"rho", {{"mean", st.rho.mean}, {"min", st.rho.min}, {"max", st.rho.max}}}});
    run.summary.lines.push_back("layer " + std::to_string(layer) + ": negative fraction " +
                                format_number(st.negative_fraction));
  }
  run.write("alignment_hist.csv", hist);
  run.write("alignment.json",
            json{{"probe", "input gradients of <A, R>, R standard normal and shared by both branches"},
                 {"epsilon", ao.epsilon},
                 {"layers", layers}});
  return run.finish();
}

RunSummary run_analyze_lipschitz(const RunOptions& o) {
  Run run(o, "analyze-lipschitz");
  const ExperimentConfig& c = o.config;
  ModelAndData md = obtain(o, c.model);
  const Dataset set = head(md.data.test, c.analysis.samples);
  const LipschitzOptions lo = lipschitz_options(c);
  const std::size_t depth = md.model.depth();
  std::vector<std::vector<double>> est(set.size(), std::vector<double>(depth));
  parallel_for(set.size(), c.workers, [&](std::size_t i) {
    for (std::size_t l = 0; l < depth; ++l) est[i][l] = layer_lipschitz(md.model, l, set.images[i], lo).value;
  });
  CsvTable rows, summary;
  rows.columns = {"sample_id", "layer", "estimate"};
  summary.columns = {"attention", "depth", "layer", "mean_estimate"};
  std::vector<double> mean(depth, 0.0);
  for (std::size_t i = 0; i < set.size(); ++i)
    for (std::size_t l = 0; l < depth; ++l) {
      rows.add_row({cell(i), cell(l), cell(est[i][l])});
      mean[l] += est[i][l] / static_cast<double>(set.size());
    }
  double overall = 0.0;
  for (std::size_t l = 0; l < depth; ++l) {
    summary.add_row({to_string(md.model.config().attention), cell(depth), cell(l), cell(mean[l])});
    overall += mean[l] / static_cast<double>(depth);
  }
  run.write("lipschitz.csv", rows);
  run.write("lipschitz_summary.csv", summary);
  run.summary.lines.push_back("mean layer Lipschitz " + format_number(overall));
  return run.finish();
}

namespace {

struct CheckResult {
  std::string name;
  double worst = 0.0;
  double tolerance = 0.0;
  std::size_t count = 0;
  bool passed = true;
};

json to_json(const CheckResult& r) {
  return {{"check", r.name}, {"worst", r.worst}, {"tolerance", r.tolerance}, {"count", r.count}, {"passed", r.passed}};
}

CheckResult check_lemma1(std::size_t trials, std::uint64_t seed) {
  CheckResult r{"lemma1_identity", 0.0, 1e-10, trials, true};
  SeededRng rng(seed, 11);
  for (std::size_t t = 0; t < trials; ++t) {
    const std::size_t n = 1 + rng.index(64);
    const Tensor g1 = rng.normal_tensor({n, 1}, std::exp(rng.uniform(-3.0, 3.0)));
    const Tensor g2 = rng.normal_tensor({n, 1}, std::exp(rng.uniform(-3.0, 3.0)));
    const double lambda = rng.uniform(0.0, 1.2);
    r.worst = std::max(r.worst, lemma1_check(g1, g2, lambda) / lemma1_scale(g1, g2, lambda));
  }
  r.passed = r.worst <= r.tolerance;
  return r;
}

CheckResult check_theorem1() {
  CheckResult r{"theorem1_boundary", 0.0, 1e-12, 0, true};
  for (int i = 0; i < 10; ++i)
    for (int j = 0; j < 10; ++j) {
      const double rho = 0.3 * i, lambda = 1.2 * j / 9.0;
      r.worst = std::max(r.worst, std::abs(amplification_factor(rho, 1.0, lambda) - std::abs(1.0 - lambda * rho)));
      r.worst = std::max(r.worst, std::abs(amplification_factor(rho, -1.0, lambda) - (1.0 + lambda * rho)));
      ++r.count;
    }
  r.passed = r.worst <= r.tolerance;
  return r;
}

CheckResult check_theorem3() {
  CheckResult r{"theorem3_iff", 0.0, 0.0, 0, true};
  std::size_t wrong = 0;
  for (int a = 0; a < 10; ++a)
    for (int b = 0; b < 10; ++b)
      for (int l = 0; l < 10; ++l)
        for (int t = 0; t < 10; ++t) {
          const double gamma = 0.25 + 0.3 * a, rho = 0.2 + 0.3 * b, lambda = 0.1 + 0.12 * l;
          const double cos_theta = -1.0 + 2.0 * t / 9.0;
          const double threshold = amplifying_condition(gamma, rho, lambda);
          const double rs = relative_sensitivity(gamma, rho, cos_theta, lambda);
          if (std::abs(cos_theta - threshold) < 1e-12 || std::abs(rs - 1.0) < 1e-12) continue;
          ++r.count;
          if ((rs > 1.0) != (cos_theta < threshold)) ++wrong;
        }
  r.worst = static_cast<double>(wrong);
  r.passed = wrong == 0;
  return r;
}

}  // namespace

RunSummary run_verify_theory(const RunOptions& o) {
  Run run(o, "verify-theory");
  const ExperimentConfig& c = o.config;
  std::vector<CheckResult> checks{check_lemma1(c.analysis.theory_trials, analysis_seed(c)), check_theorem1(),
                                  check_theorem3()};

  ModelConfig mc = c.model;
  mc.attention = AttentionKind::differential;
  ModelAndData md = obtain(o, mc);
  const Classifier& da = md.model;
  ModelConfig bc = da.config();
  bc.attention = AttentionKind::standard;
  Classifier base = o.base_checkpoint ? load_checkpoint(*o.base_checkpoint).model : train_model(c, bc, md.data.train);
  const Dataset set = head(md.data.test, c.analysis.samples);
  const std::size_t layer = c.analysis.layer;

  // Relative sensitivity on live layers.
  CheckResult t2{"theorem2_identity", 0.0, 1e-8, 0, true};
  CsvTable t2rows;
  t2rows.columns = {"sample_id", "gamma", "rho", "cos_theta", "lambda", "measured", "predicted", "rel_error"};
  for (std::size_t i = 0; i < set.size(); ++i) {
    SeededRng rng(derive_seed(analysis_seed(c), 21), i);
    const Tensor probe = draw_probe(da.config().tokens(), rng);
    const BranchGradients bg = branch_gradients(da, layer, set.images[i], probe);
    const Tensor gb = effective_map_gradient(base, layer, set.images[i], probe);
    const double n1 = norm2(bg.g1), n2 = norm2(bg.g2), nb = norm2(gb);
    if (n1 < kDegenerateNorm || n2 < kDegenerateNorm || nb < kDegenerateNorm) continue;
    const double gamma = n1 / nb, rho = n2 / n1, cos_theta = cosine_alignment(bg.g1, bg.g2);
    const double measured = norm2(bg.g1 - bg.lambda * bg.g2) / nb;
    const double predicted = relative_sensitivity(gamma, rho, cos_theta, bg.lambda);
    const double rel = std::abs(measured - predicted) / std::max(std::abs(measured), 1e-300);
    t2.worst = std::max(t2.worst, rel);
    ++t2.count;
    t2rows.add_row({cell(i), cell(gamma), cell(rho), cell(cos_theta), cell(bg.lambda), cell(measured), cell(predicted),
                    cell(rel)});
  }
  t2.passed = t2.count > 0 && t2.worst <= t2.tolerance;
  checks.push_back(t2);

  // Lipschitz bound (reported only) and radius ratio from shared measurements.
  RadiusProtocol rp;
  rp.layer = layer;
  rp.epsilon = c.analysis.epsilon;
  rp.probes = c.analysis.radius_probes;
  rp.seed = analysis_seed(c);
  LipschitzOptions lo = lipschitz_options(c);
  CheckResult t5{"theorem5_slack", 0.0, 1e-9, 0, true};
  CsvTable l2rows, t5rows;
  l2rows.columns = {"sample_id", "l_da", "l_base", "ratio", "bound", "slack", "violated"};
  t5rows.columns = {"sample_id", "certifiable", "margin_da", "margin_base", "radius_da", "radius_base", "delta_m",
                    "gamma",     "rho",         "cos_theta", "lambda",      "ratio",       "bound",    "slack"};
  std::size_t lemma2_violations = 0;
  for (std::size_t i = 0; i < set.size(); ++i) {
    const Tensor& x = set.images[i];
    const CertifiedRadiusReport cr = certified_radius_ratio(da, base, x, set.labels[i], rp);
    t5rows.add_row({cell(i), cell(cr.certifiable), cell(cr.margin_da), cell(cr.margin_base), cell(cr.radius_da),
                    cell(cr.radius_base), cell(cr.delta_m), cell(cr.gamma), cell(cr.rho), cell(cr.cos_theta),
                    cell(cr.lambda), cell(cr.ratio), cell(cr.bound), cell(cr.slack)});
    if (cr.certifiable) {
      ++t5.count;
      t5.worst = std::min(t5.worst, cr.slack);
    }
    const LipschitzEstimate ld = lipschitz_estimate(image_attention_map(da, layer), x, lo);
    const LipschitzEstimate lb = lipschitz_estimate(image_attention_map(base, layer), x, lo);
    if (lb.value < kDegenerateNorm) continue;
    const Lemma2Report l2 = lemma2_bound_check(ld, lb, cr.gamma, cr.rho, cr.cos_theta, cr.lambda);
    lemma2_violations += l2.violated ? 1 : 0;
    l2rows.add_row({cell(i), cell(l2.l_da), cell(l2.l_base), cell(l2.ratio), cell(l2.bound), cell(l2.slack),
                    cell(l2.violated)});
  }
  t5.passed = t5.worst >= -t5.tolerance;
  checks.push_back(t5);

  run.write("theorem2.csv", t2rows);
  run.write("lemma2.csv", l2rows);
  run.write("certified_radius.csv", t5rows);
  json results = json::array();
  bool ok = true;
  for (const CheckResult& r : checks) {
    results.push_back(to_json(r));
    ok = ok && r.passed;
    run.summary.lines.push_back(r.name + ": worst " + format_number(r.worst) + " over " + std::to_string(r.count) +
                                (r.passed ? " PASS" : " FAIL"));
  }
  run.summary.lines.push_back("lemma2: " + std::to_string(lemma2_violations) + " reported violations (not asserted)");
  run.write("theory_checks.json", json{{"checks", results}, {"lemma2_violations", lemma2_violations}, {"passed", ok}});
  RunSummary summary = run.finish();
  if (!ok) {
    std::string failed;
    for (const CheckResult& r : checks)
      if (!r.passed) failed += (failed.empty() ? "" : ", ") + r.name;
    throw TheoryCheckError("verify-theory: failed " + failed);
  }
  return summary;
}

}  // namespace dattn
