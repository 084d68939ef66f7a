#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "dattn/attacks.hpp"
#include "dattn/dataset.hpp"
#include "dattn/model.hpp"
#include "dattn/train.hpp"

namespace dattn {

using json = nlohmann::ordered_json;

struct DataConfig {
  /// "synthetic" or "cifar10:PATH". CIFAR splits are consecutive records:
  /// the first train_samples for training, the next test_samples for test.
  std::string dataset = "synthetic";
  std::size_t train_samples = 2000;
  std::size_t test_samples = 500;
  std::size_t classes = 4;
  std::size_t signal_size = 8;
  double signal_strength = 0.25;
  double noise_sigma = 0.1;
};

struct AttackConfig {
  std::string kind = "pgd";
  std::vector<double> epsilons{1.0 / 255.0};
  std::size_t steps = 40;
  /// Defaults to epsilon / 10 per budget.
  std::optional<double> step_size;
  bool random_start = true;
  std::vector<std::size_t> patch_widths{4};
  double patch_step_size = 0.1;
  std::uint64_t location_seed = 0;
  double cw_confidence = 0.0;
  std::size_t cw_iterations = 200;
  double cw_learning_rate = 0.01;
  double cw_trade_off = 1.0;
  std::size_t cw_search_steps = 1;
  /// Test samples attacked; 0 attacks all of them.
  std::size_t samples = 0;
};

struct AnalysisConfig {
  std::size_t layer = 0;
  double epsilon = 8.0 / 255.0;
  std::size_t per_sample = 4;
  std::size_t samples = 100;
  std::size_t lipschitz_samples = 32;
  std::size_t refine_steps = 10;
  std::size_t radius_probes = 16;
  std::size_t theory_trials = 1000;
};

struct DepthSweepConfig {
  std::vector<std::size_t> depths{1, 2, 4, 8, 12};
  std::vector<double> epsilons{1.0 / 255.0, 4.0 / 255.0};
  std::size_t samples = 100;
  std::size_t cw_samples = 50;
  std::size_t trace_samples = 50;
};

struct LambdaSweepConfig {
  std::vector<double> lambda_inits{0.5, 0.7, 0.8, 0.85, 0.9, 0.95};
  double epsilon = 1.0 / 255.0;
};

struct ExperimentConfig {
  std::uint64_t seed = 0;
  std::size_t workers = 1;
  ModelConfig model{.num_classes = 4};
  TrainConfig train;
  DataConfig data;
  AttackConfig attack;
  AnalysisConfig analysis;
  DepthSweepConfig depth_sweep;
  LambdaSweepConfig lambda_sweep;

  void validate() const;
};

json to_json(const ModelConfig& c);
ModelConfig model_config_from_json(const json& j);
json to_json(const TrainConfig& c);
json to_json(const ExperimentConfig& c);

/// Missing keys take defaults; unknown keys throw ConfigError naming the
/// key path.
ExperimentConfig experiment_config_from_json(const json& j);
ExperimentConfig load_experiment_config(const std::filesystem::path& path);

/// Attack spec for one budget (epsilon or patch width) of the config.
AttackSpec make_attack_spec(const AttackConfig& c, double budget);

struct DataSplits {
  Dataset train;
  Dataset test;
};

/// Throws DataError for unreadable or short CIFAR files.
DataSplits load_data(const DataConfig& c, const ModelConfig& model, std::uint64_t seed);

}  // namespace dattn
