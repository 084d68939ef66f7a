#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "dattn/config.hpp"
#include "dattn/csv.hpp"
#include "dattn/model.hpp"

namespace dattn {

struct RunOptions {
  ExperimentConfig config;
  std::filesystem::path out = "results";
  /// Model to analyze; when absent the subcommand trains one from config.
  std::optional<std::filesystem::path> checkpoint;
  /// Baseline (standard attention) model for verify-theory.
  std::optional<std::filesystem::path> base_checkpoint;
};

struct RunSummary {
  std::vector<std::filesystem::path> artifacts;
  std::vector<std::string> lines;
};

// Seeds derived from the run seed, one per concern.
std::uint64_t model_seed(const ExperimentConfig& c);
std::uint64_t train_seed(const ExperimentConfig& c);
std::uint64_t attack_seed(const ExperimentConfig& c);
std::uint64_t analysis_seed(const ExperimentConfig& c);

/// Initializes from model_seed and trains per config.train.
Classifier train_model(const ExperimentConfig& c, const ModelConfig& model, const Dataset& train_data);

/// Comment lines carrying the expanded config and seed.
std::vector<std::string> provenance_comments(const ExperimentConfig& c);

RunSummary run_train(const RunOptions& options);
RunSummary run_attack(const RunOptions& options);
RunSummary run_lambda_sweep(const RunOptions& options);
RunSummary run_depth_sweep(const RunOptions& options);
RunSummary run_analyze_alignment(const RunOptions& options);
RunSummary run_analyze_lipschitz(const RunOptions& options);
/// Writes its artifacts, then throws TheoryCheckError if any identity failed.
RunSummary run_verify_theory(const RunOptions& options);

/// Writes run-manifest.json: subcommand, expanded config and FNV-1a-64
/// hashes of every artifact.
void write_run_manifest(const std::filesystem::path& out, const std::string& subcommand, const ExperimentConfig& config,
                        const std::vector<std::filesystem::path>& artifacts);

std::string hash_file(const std::filesystem::path& path);

}  // namespace dattn
