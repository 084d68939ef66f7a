#include "dattn/config.hpp"

#include <cmath>
#include <fstream>
#include <set>

#include "dattn/error.hpp"

namespace dattn {

namespace {

// Reads fields from one JSON object and rejects keys nobody asked for.
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError("config: " + label() + " must be an object");
  }

  template <typename T>
  void read(const char* key, T& out) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return;
    try {
      out = it->template get<T>();
    } catch (const nlohmann::json::exception&) {
      throw ConfigError("config: " + qualified(key) + " has the wrong type");
    }
  }

  template <typename T>
  void read(const char* key, std::optional<T>& out) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end() || it->is_null()) return;
    try {
      out = it->template get<T>();
    } catch (const nlohmann::json::exception&) {
      throw ConfigError("config: " + qualified(key) + " has the wrong type");
    }
  }

  const json* child(const char* key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  std::string qualified(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!seen_.count(it.key())) throw ConfigError("config: unknown key " + qualified(it.key()));
    }
  }

 private:
  std::string label() const { return path_.empty() ? "document" : path_; }

  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

void require(bool ok, const std::string& message) {
  if (!ok) throw ConfigError("config: " + message);
}

}  // namespace

json to_json(const ModelConfig& c) {
  json j;
  j["image_size"] = c.image_size;
  j["channels"] = c.channels;
  j["patch_size"] = c.patch_size;
  j["embed_dim"] = c.embed_dim;
  j["head_dim"] = c.head_dim;
  j["depth"] = c.depth;
  j["mlp_ratio"] = c.mlp_ratio;
  j["num_classes"] = c.num_classes;
  j["attention"] = to_string(c.attention);
  j["lambda_init"] = c.lambda_init;
  return j;
}

static ModelConfig read_model(const json& j, const std::string& path, ModelConfig m) {
  Section s(j, path);
  s.read("image_size", m.image_size);
  s.read("channels", m.channels);
  s.read("patch_size", m.patch_size);
  s.read("embed_dim", m.embed_dim);
  s.read("head_dim", m.head_dim);
  s.read("depth", m.depth);
  s.read("mlp_ratio", m.mlp_ratio);
  s.read("num_classes", m.num_classes);
  std::string kind = to_string(m.attention);
  s.read("attention", kind);
  m.attention = parse_attention_kind(kind);
  s.read("lambda_init", m.lambda_init);
  s.finish();
  return m;
}

ModelConfig model_config_from_json(const json& j) {
  ModelConfig m = read_model(j, "model", ModelConfig{});
  m.validate();
  return m;
}

json to_json(const TrainConfig& c) {
  json j;
  j["epochs"] = c.epochs;
  j["batch_size"] = c.batch_size;
  j["learning_rate"] = c.learning_rate;
  j["beta1"] = c.beta1;
  j["beta2"] = c.beta2;
  j["adam_eps"] = c.adam_eps;
  j["adv_train_epsilon"] = c.adv_train_epsilon ? json(*c.adv_train_epsilon) : json(nullptr);
  j["adv_steps"] = c.adv_steps;
  return j;
}

json to_json(const ExperimentConfig& c) {
  json j;
  j["seed"] = c.seed;
  j["workers"] = c.workers;
  j["model"] = to_json(c.model);
  j["train"] = to_json(c.train);
  j["data"] = {{"dataset", c.data.dataset},
               {"train_samples", c.data.train_samples},
               {"test_samples", c.data.test_samples},
               {"classes", c.data.classes},
               {"signal_size", c.data.signal_size},
               {"signal_strength", c.data.signal_strength},
               {"noise_sigma", c.data.noise_sigma}};
  const AttackConfig& a = c.attack;
  j["attack"] = {{"kind", a.kind},
                 {"epsilons", a.epsilons},
                 {"steps", a.steps},
                 {"step_size", a.step_size ? json(*a.step_size) : json(nullptr)},
                 {"random_start", a.random_start},
                 {"patch_widths", a.patch_widths},
                 {"patch_step_size", a.patch_step_size},
                 {"location_seed", a.location_seed},
                 {"cw_confidence", a.cw_confidence},
                 {"cw_iterations", a.cw_iterations},
                 {"cw_learning_rate", a.cw_learning_rate},
                 {"cw_trade_off", a.cw_trade_off},
                 {"cw_search_steps", a.cw_search_steps},
                 {"samples", a.samples}};
  const AnalysisConfig& n = c.analysis;
  j["analysis"] = {{"layer", n.layer},
                   {"epsilon", n.epsilon},
                   {"per_sample", n.per_sample},
                   {"samples", n.samples},
                   {"lipschitz_samples", n.lipschitz_samples},
                   {"refine_steps", n.refine_steps},
                   {"radius_probes", n.radius_probes},
                   {"theory_trials", n.theory_trials}};
  j["depth_sweep"] = {{"depths", c.depth_sweep.depths},
                      {"epsilons", c.depth_sweep.epsilons},
                      {"samples", c.depth_sweep.samples},
                      {"cw_samples", c.depth_sweep.cw_samples},
                      {"trace_samples", c.depth_sweep.trace_samples}};
  j["lambda_sweep"] = {{"lambda_inits", c.lambda_sweep.lambda_inits}, {"epsilon", c.lambda_sweep.epsilon}};
  return j;
}

ExperimentConfig experiment_config_from_json(const json& j) {
  ExperimentConfig c;
  Section root(j, "");
  root.read("seed", c.seed);
  root.read("workers", c.workers);
  if (const json* m = root.child("model")) c.model = read_model(*m, "model", c.model);
  if (const json* t = root.child("train")) {
    Section s(*t, "train");
    s.read("epochs", c.train.epochs);
    s.read("batch_size", c.train.batch_size);
    s.read("learning_rate", c.train.learning_rate);
    s.read("beta1", c.train.beta1);
    s.read("beta2", c.train.beta2);
    s.read("adam_eps", c.train.adam_eps);
    s.read("adv_train_epsilon", c.train.adv_train_epsilon);
    s.read("adv_steps", c.train.adv_steps);
    s.finish();
  }
  if (const json* d = root.child("data")) {
    Section s(*d, "data");
    s.read("dataset", c.data.dataset);
    s.read("train_samples", c.data.train_samples);
    s.read("test_samples", c.data.test_samples);
    s.read("classes", c.data.classes);
    s.read("signal_size", c.data.signal_size);
    s.read("signal_strength", c.data.signal_strength);
    s.read("noise_sigma", c.data.noise_sigma);
    s.finish();
  }
  if (const json* a = root.child("attack")) {
    Section s(*a, "attack");
    s.read("kind", c.attack.kind);
    s.read("epsilons", c.attack.epsilons);
    s.read("steps", c.attack.steps);
    s.read("step_size", c.attack.step_size);
    s.read("random_start", c.attack.random_start);
    s.read("patch_widths", c.attack.patch_widths);
    s.read("patch_step_size", c.attack.patch_step_size);
    s.read("location_seed", c.attack.location_seed);
    s.read("cw_confidence", c.attack.cw_confidence);
    s.read("cw_iterations", c.attack.cw_iterations);
    s.read("cw_learning_rate", c.attack.cw_learning_rate);
    s.read("cw_trade_off", c.attack.cw_trade_off);
    s.read("cw_search_steps", c.attack.cw_search_steps);
    s.read("samples", c.attack.samples);
    s.finish();
  }
  if (const json* a = root.child("analysis")) {
    Section s(*a, "analysis");
    s.read("layer", c.analysis.layer);
    s.read("epsilon", c.analysis.epsilon);
    s.read("per_sample", c.analysis.per_sample);
    s.read("samples", c.analysis.samples);
    s.read("lipschitz_samples", c.analysis.lipschitz_samples);
    s.read("refine_steps", c.analysis.refine_steps);
    s.read("radius_probes", c.analysis.radius_probes);
    s.read("theory_trials", c.analysis.theory_trials);
    s.finish();
  }
  if (const json* d = root.child("depth_sweep")) {
    Section s(*d, "depth_sweep");
    s.read("depths", c.depth_sweep.depths);
    s.read("epsilons", c.depth_sweep.epsilons);
    s.read("samples", c.depth_sweep.samples);
    s.read("cw_samples", c.depth_sweep.cw_samples);
    s.read("trace_samples", c.depth_sweep.trace_samples);
    s.finish();
  }
  if (const json* l = root.child("lambda_sweep")) {
    Section s(*l, "lambda_sweep");
    s.read("lambda_inits", c.lambda_sweep.lambda_inits);
    s.read("epsilon", c.lambda_sweep.epsilon);
    s.finish();
  }
  root.finish();
  c.validate();
  return c;
}

ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("config: " + path.string() + " is not valid JSON: " + e.what());
  }
  return experiment_config_from_json(j);
}

void ExperimentConfig::validate() const {
  model.validate();
  train.validate();
  require(workers >= 1, "workers must be >= 1");
  require(data.dataset == "synthetic" || data.dataset.rfind("cifar10:", 0) == 0,
          "data.dataset must be synthetic or cifar10:PATH");
  require(data.train_samples >= 1 && data.test_samples >= 1, "data sample counts must be >= 1");
  require(data.classes >= 1, "data.classes must be >= 1");
  const std::size_t classes = data.dataset == "synthetic" ? data.classes : 10;
  require(model.num_classes >= classes, "model.num_classes is smaller than the dataset's class count");
  require(data.noise_sigma >= 0.0, "data.noise_sigma must be >= 0");
  require(attack.kind == "fgsm" || attack.kind == "pgd" || attack.kind == "patch" || attack.kind == "cw",
          "attack.kind must be one of fgsm, pgd, patch, cw");
  for (double e : attack.epsilons) require(e >= 0.0 && std::isfinite(e), "attack.epsilons must be >= 0");
  for (double e : depth_sweep.epsilons) require(e >= 0.0 && std::isfinite(e), "depth_sweep.epsilons must be >= 0");
  for (std::size_t d : depth_sweep.depths) require(d >= 1, "depth_sweep.depths must be >= 1");
  require(analysis.layer < model.depth, "analysis.layer must be below model.depth");
  require(analysis.epsilon >= 0.0, "analysis.epsilon must be >= 0");
  require(analysis.per_sample >= 1 && analysis.lipschitz_samples >= 1 && analysis.radius_probes >= 1,
          "analysis counts must be >= 1");
  require(!lambda_sweep.lambda_inits.empty(), "lambda_sweep.lambda_inits must not be empty");
  for (double l : lambda_sweep.lambda_inits) require(std::isfinite(l), "lambda_sweep.lambda_inits must be finite");
  for (double e : attack.epsilons) make_attack_spec(attack, e);
}

AttackSpec make_attack_spec(const AttackConfig& c, double budget) {
  if (c.kind == "fgsm") {
    LinfAttackSpec s = LinfAttackSpec::fgsm(budget);
    s.validate();
    return s;
  }
  if (c.kind == "pgd") {
    LinfAttackSpec s = LinfAttackSpec::pgd(budget);
    s.steps = c.steps;
    if (c.step_size) s.step_size = *c.step_size;
    s.random_start = c.random_start;
    s.validate();
    return s;
  }
  if (c.kind == "patch") {
    PatchAttackSpec s;
    if (budget < 0.0 || budget != std::floor(budget)) throw ConfigError("patch: width must be a whole number");
    s.width = static_cast<std::size_t>(budget);
    s.steps = c.steps;
    s.step_size = c.patch_step_size;
    s.location_seed = c.location_seed;
    s.validate();
    return s;
  }
  if (c.kind == "cw") {
    L2AttackSpec s;
    s.confidence = c.cw_confidence;
    s.iterations = c.cw_iterations;
    s.learning_rate = c.cw_learning_rate;
    s.trade_off = budget > 0.0 ? budget : c.cw_trade_off;
    s.search_steps = c.cw_search_steps;
    s.validate();
    return s;
  }
  throw ConfigError("attack: unknown kind " + c.kind);
}

DataSplits load_data(const DataConfig& c, const ModelConfig& model, std::uint64_t seed) {
  DataSplits out;
  if (c.dataset == "synthetic") {
    SyntheticSpec spec;
    spec.classes = c.classes;
    spec.samples = c.train_samples;
    spec.image_size = model.image_size;
    spec.channels = model.channels;
    spec.signal_size = std::min(c.signal_size, model.image_size);
    spec.signal_strength = c.signal_strength;
    spec.noise_sigma = c.noise_sigma;
    spec.seed = seed;
    out.train = make_synthetic(spec);
    spec.first_sample = c.train_samples;
    spec.samples = c.test_samples;
    out.test = make_synthetic(spec);
    return out;
  }
  const std::string path = c.dataset.substr(std::string("cifar10:").size());
  if (model.image_size != kCifarSide || model.channels != kCifarChannels) {
    throw ConfigError("config: CIFAR-10 needs image_size 32 and 3 channels");
  }
  Dataset all = load_cifar10(path, c.train_samples + c.test_samples);
  if (all.size() < c.train_samples + c.test_samples) {
    throw DataError("cifar10: " + path + " holds " + std::to_string(all.size()) + " records, need " +
                    std::to_string(c.train_samples + c.test_samples));
  }
  out.train = all.slice(0, c.train_samples);
  out.test = all.slice(c.train_samples, c.test_samples);
  return out;
}

}  // namespace dattn
