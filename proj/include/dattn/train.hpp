#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "dattn/dataset.hpp"
#include "dattn/model.hpp"

namespace dattn {

struct TrainConfig {
  /// 0 leaves the model untouched.
  std::size_t epochs = 20;
  std::size_t batch_size = 128;
  double learning_rate = 5e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  std::uint64_t seed = 0;
  /// When set, each batch is replaced by PGD adversarial examples at this
  /// l_inf budget (adv_steps steps of eps/2) before the update.
  std::optional<double> adv_train_epsilon;
  std::size_t adv_steps = 3;
  std::size_t workers = 1;

  void validate() const;
};

struct EpochMetrics {
  std::size_t epoch = 0;
  double mean_loss = 0.0;
  /// Accuracy on the (possibly perturbed) training batches during the epoch.
  double train_accuracy = 0.0;
  std::vector<double> lambdas;
};

struct TrainResult {
  std::vector<EpochMetrics> epochs;
  /// Entry 0 holds the initial values; entry e holds the values after epoch e.
  std::vector<std::vector<double>> lambda_trajectory;
};

/// Minibatch Adam on mean cross-entropy. Per-sample gradients are reduced in
/// index order, so results are bitwise identical for any worker count.
/// Throws NumericError when the loss or a gradient becomes non-finite.
TrainResult train(Classifier& model, const Dataset& data, const TrainConfig& config);

double accuracy(const DifferentiableModel& model, const Dataset& data, std::size_t workers = 1);

}  // namespace dattn
