#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <variant>
#include <vector>

#include "dattn/dataset.hpp"
#include "dattn/graph.hpp"
#include "dattn/model.hpp"
#include "dattn/rng.hpp"
#include "dattn/tensor.hpp"

namespace dattn {

enum class NormKind { linf, l2 };
std::string to_string(NormKind kind);

/// Sign-gradient ascent inside an l_inf ball. `pgd` and `fgsm` give the
/// default schedules.
struct LinfAttackSpec {
  double epsilon = 1.0 / 255.0;
  std::size_t steps = 40;
  double step_size = 0.1 / 255.0;
  bool random_start = true;
  /// Stop at the first iterate whose prediction differs from the clean one.
  bool early_stop = true;

  /// 40 steps of eps/10 from a uniform random start.
  static LinfAttackSpec pgd(double epsilon);
  /// One step of eps from the clean input.
  static LinfAttackSpec fgsm(double epsilon);
  /// Throws ConfigError. A zero step size is accepted only with eps = 0.
  void validate() const;
};

/// PGD restricted to a w x w square (all channels) with eps = 1.
struct PatchAttackSpec {
  std::size_t width = 4;
  std::size_t steps = 40;
  double step_size = 0.1;
  std::uint64_t location_seed = 0;
  bool early_stop = true;

  void validate() const;
};

/// Carlini-Wagner l2 in tanh space, optimized with Adam.
struct L2AttackSpec {
  double confidence = 0.0;
  std::size_t iterations = 200;
  double learning_rate = 0.01;
  /// Weight c on the misclassification term.
  double trade_off = 1.0;
  /// Rounds of search over c. With 1, c stays fixed. Later rounds bisect
  /// after a success and multiply c by 10 while nothing succeeded yet.
  std::size_t search_steps = 1;

  void validate() const;
};

struct AttackResult {
  Tensor adversarial;
  bool success = false;
  double perturbation_norm = 0.0;
  NormKind norm = NormKind::linf;
  std::size_t steps_used = 0;
  std::size_t clean_prediction = 0;
  std::size_t adversarial_prediction = 0;
};

/// Scalar to be maximized by the l_inf and patch attacks.
using AttackObjective = std::function<Var(Var logits, std::size_t label)>;
Var cross_entropy_objective(Var logits, std::size_t label);

/// `label` should be the clean prediction; success always compares against
/// the model's own clean prediction.
AttackResult pgd_linf(const DifferentiableModel& model, const Tensor& x, std::size_t label, const LinfAttackSpec& spec,
                      SeededRng& rng, const AttackObjective& objective = cross_entropy_objective);
AttackResult fgsm(const DifferentiableModel& model, const Tensor& x, std::size_t label, double epsilon);

/// Top-left corner of the patch for image `stream` of a run.
struct PatchLocation {
  std::size_t top = 0;
  std::size_t left = 0;
};
PatchLocation sample_patch_location(const PatchAttackSpec& spec, const Shape& image_shape, std::uint64_t stream);
Tensor patch_mask(const Shape& image_shape, std::size_t width, PatchLocation at);

AttackResult pgd_patch(const DifferentiableModel& model, const Tensor& x, std::size_t label, const PatchAttackSpec& spec,
                       std::uint64_t stream = 0, const AttackObjective& objective = cross_entropy_objective);

AttackResult cw_l2(const DifferentiableModel& model, const Tensor& x, std::size_t label, const L2AttackSpec& spec);

using AttackSpec = std::variant<LinfAttackSpec, PatchAttackSpec, L2AttackSpec>;

/// "fgsm", "pgd", "patch" or "cw".
std::string attack_kind(const AttackSpec& spec);
/// epsilon for l_inf, width for patch, c for CW.
double attack_budget(const AttackSpec& spec);

struct AttackRow {
  std::size_t sample_id = 0;
  std::string attack_kind;
  double budget = 0.0;
  bool success = false;
  double norm = 0.0;
  std::size_t steps_used = 0;
};

struct AsrReport {
  double rate = 0.0;
  std::size_t trials = 0;
  std::size_t successes = 0;
  /// Mean perturbation norm over successful samples; 0 without successes.
  double mean_norm = 0.0;
  std::vector<AttackRow> rows;
};

/// Attacks every sample against its clean prediction. Sample i draws its
/// randomness from stream i of `seed`, so the report does not depend on
/// `workers`.
AsrReport attack_success_rate(const DifferentiableModel& model, const Dataset& data, const AttackSpec& spec,
                              std::uint64_t seed, std::size_t workers = 1);

}  // namespace dattn
