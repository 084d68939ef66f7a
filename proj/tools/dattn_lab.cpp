// Command-line driver: train, attack, sweep, analyze and report.

#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"

#include "dattn/config.hpp"
#include "dattn/error.hpp"
#include "dattn/experiments.hpp"
#include "dattn/report.hpp"

namespace {

struct Flags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out = "results";
  std::optional<std::size_t> workers;
  std::string checkpoint;
  std::string base_checkpoint;
  std::string dataset;
  std::optional<std::size_t> depth;
  std::string attention;
  std::optional<double> lambda_init;
  std::optional<double> epsilon;
  std::string attack;
  std::optional<std::size_t> epochs;
};

void add_common(CLI::App* sub, Flags& f) {
  sub->add_option("--config", f.config, "Experiment config (JSON)");
  sub->add_option("--seed", f.seed, "Run seed");
  sub->add_option("--out", f.out, "Output directory")->capture_default_str();
  sub->add_option("--workers", f.workers, "Sample-level worker threads");
  sub->add_option("--checkpoint", f.checkpoint, "Model checkpoint to use instead of training");
  sub->add_option("--base-checkpoint", f.base_checkpoint, "Standard-attention baseline checkpoint");
  sub->add_option("--dataset", f.dataset, "synthetic or cifar10:PATH");
  sub->add_option("--depth", f.depth, "Number of attention blocks");
  sub->add_option("--attention", f.attention, "standard or differential");
  sub->add_option("--lambda-init", f.lambda_init, "Initial subtraction weight");
  sub->add_option("--epsilon", f.epsilon, "Attack budget (l_inf)");
  sub->add_option("--attack", f.attack, "fgsm, pgd, patch or cw");
  sub->add_option("--epochs", f.epochs, "Training epochs");
}

dattn::ExperimentConfig build_config(const Flags& f) {
  dattn::ExperimentConfig c =
      f.config.empty() ? dattn::experiment_config_from_json(dattn::json::object()) : dattn::load_experiment_config(f.config);
  if (f.seed) c.seed = *f.seed;
  if (f.workers) c.workers = *f.workers;
  if (!f.dataset.empty()) c.data.dataset = f.dataset;
  if (!f.dataset.empty() && f.dataset != "synthetic") c.model.num_classes = std::max<std::size_t>(c.model.num_classes, 10);
  if (f.depth) c.model.depth = *f.depth;
  if (!f.attention.empty()) c.model.attention = dattn::parse_attention_kind(f.attention);
  if (f.lambda_init) c.model.lambda_init = *f.lambda_init;
  if (f.epsilon) {
    c.attack.epsilons = {*f.epsilon};
    c.lambda_sweep.epsilon = *f.epsilon;
  }
  if (!f.attack.empty()) c.attack.kind = f.attack;
  if (f.epochs) c.train.epochs = *f.epochs;
  c.validate();
  return c;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Adversarial robustness lab for differential attention"};
  app.require_subcommand(1);
  Flags flags;
  const char* names[][2] = {
      {"train", "Train a classifier and write a checkpoint"},
      {"attack", "Attack a model and report attack success rates"},
      {"lambda-sweep", "Accuracy and ASR across lambda_init values"},
      {"depth-sweep", "Robustness metrics across depths for both attention kinds"},
      {"analyze-alignment", "Branch gradient alignment statistics"},
      {"analyze-lipschitz", "Per-layer local Lipschitz estimates"},
      {"verify-theory", "Check the sensitivity identities on random and trained inputs"},
      {"report", "Turn a results directory into tables and plot data"},
  };
  for (const auto& n : names) add_common(app.add_subcommand(n[0], n[1]), flags);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    const std::string cmd = app.get_subcommands().front()->get_name();
    if (cmd == "report") {
      for (const auto& p : dattn::emit_report(flags.out)) std::cout << "wrote " << p.string() << '\n';
      return 0;
    }
    dattn::RunOptions options;
    options.config = build_config(flags);
    options.out = flags.out;
    if (!flags.checkpoint.empty()) options.checkpoint = flags.checkpoint;
    if (!flags.base_checkpoint.empty()) options.base_checkpoint = flags.base_checkpoint;

    dattn::RunSummary summary;
    if (cmd == "train") summary = dattn::run_train(options);
    else if (cmd == "attack") summary = dattn::run_attack(options);
    else if (cmd == "lambda-sweep") summary = dattn::run_lambda_sweep(options);
    else if (cmd == "depth-sweep") summary = dattn::run_depth_sweep(options);
    else if (cmd == "analyze-alignment") summary = dattn::run_analyze_alignment(options);
    else if (cmd == "analyze-lipschitz") summary = dattn::run_analyze_lipschitz(options);
    else summary = dattn::run_verify_theory(options);
    for (const auto& line : summary.lines) std::cout << line << '\n';
    return 0;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return dattn::exit_code_for(e);
  }
}
