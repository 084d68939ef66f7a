#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "dattn/dataset.hpp"
#include "dattn/graph.hpp"
#include "dattn/model.hpp"
#include "dattn/tensor.hpp"

namespace dattn {

inline constexpr double kDegenerateNorm = 1e-12;
inline constexpr double kAlignmentEpsilon = 8.0 / 255.0;

/// Input gradients of <A1, R> and <A2, R> for one layer, same x and R.
struct BranchGradients {
  Tensor g1;
  Tensor g2;
  double lambda = 0.0;
};

/// Throws CapabilityError when `layer` uses standard attention.
BranchGradients branch_gradients(const Classifier& model, std::size_t layer, const Tensor& x, const Tensor& probe);
BranchGradients branch_gradients(const Classifier& model, std::size_t layer, const Tensor& x, std::uint64_t probe_seed);

/// Input gradient of <A_effective, R>; A_effective is A1 for standard layers.
Tensor effective_map_gradient(const Classifier& model, std::size_t layer, const Tensor& x, const Tensor& probe);

/// Throws DegenerateError when either norm is below 1e-12.
double cosine_alignment(const Tensor& g1, const Tensor& g2);

/// |‖g1 − λg2‖² − (‖g1‖² + λ²‖g2‖² − 2λ‖g1‖‖g2‖cosθ)|. With a zero
/// gradient the cross term is zero.
double lemma1_check(const Tensor& g1, const Tensor& g2, double lambda);
/// max(1, ‖g1‖², λ²‖g2‖²), the scale for lemma1_check residuals.
double lemma1_scale(const Tensor& g1, const Tensor& g2, double lambda);

/// sqrt(1 + λ²ρ² − 2λρ cosθ).
double amplification_factor(double rho, double cos_theta, double lambda);
/// γ · amplification_factor.
double relative_sensitivity(double gamma, double rho, double cos_theta, double lambda);
/// cosθ threshold (1 + λ²ρ² − γ⁻²) / (2λρ) below which relative_sensitivity
/// exceeds 1. Returns -inf for γ = 0; throws DegenerateError for λρ = 0.
double amplifying_condition(double gamma, double rho, double lambda);

/// Maps an input (image or layer input) to a tensor inside a graph.
using MapBuilder = std::function<Var(Graph&, Var)>;

struct LipschitzEstimate {
  double value = 0.0;
  /// Probes evaluated, including refinement iterates and extra probes.
  std::size_t samples = 0;
  double epsilon = 0.0;
  std::optional<std::size_t> layer;
  Tensor best_probe;
};

struct LipschitzOptions {
  double epsilon = kAlignmentEpsilon;
  std::size_t samples = 32;
  std::uint64_t seed = 0;
  std::size_t refine_steps = 10;
};

/// max ‖f(x+ξ) − f(x)‖₂ / ‖ξ‖₂ over `samples` uniform draws from the l_inf
/// ball, the iterates of a refinement started from an independent draw, and
/// `extra_probes`. The refinement repeatedly replaces ξ by J(x+ξ)ᵀ(f(x+ξ) −
/// f(x)) rescaled onto the ball boundary, which is power iteration for linear
/// maps. The refinement contributes refine_steps + 1 probes: its start and
/// every iterate. Probe i always comes from the same draw, so the value can only grow
/// with `samples`.
LipschitzEstimate lipschitz_estimate(const MapBuilder& f, const Tensor& x, const LipschitzOptions& options,
                                     std::span<const Tensor> extra_probes = {});

/// Map from the image to the effective attention map of block `layer`.
MapBuilder image_attention_map(const Classifier& model, std::size_t layer);

/// Map from the input of block `layer` to its effective attention map.
MapBuilder layer_attention_map(const Classifier& model, std::size_t layer);

/// Estimate for block `layer` at the representation image `x` induces there.
LipschitzEstimate layer_lipschitz(const Classifier& model, std::size_t layer, const Tensor& x,
                                  const LipschitzOptions& options);
/// Arithmetic mean of layer_lipschitz over all blocks.
double mean_layer_lipschitz(const Classifier& model, const Tensor& x, const LipschitzOptions& options);

struct Lemma2Report {
  double l_da = 0.0;
  double l_base = 0.0;
  double ratio = 0.0;
  double gamma = 0.0;
  double rho = 0.0;
  double cos_theta = 0.0;
  double lambda = 0.0;
  double bound = 0.0;
  /// bound - ratio. Negative values are reported, not treated as errors.
  double slack = 0.0;
  bool violated = false;
};

/// Throws DegenerateError when l_base is below 1e-12.
Lemma2Report lemma2_bound_check(const LipschitzEstimate& l_da, const LipschitzEstimate& l_base, double gamma, double rho,
                                double cos_theta, double lambda);

struct RadiusProtocol {
  std::size_t layer = 0;
  double epsilon = kAlignmentEpsilon;
  std::size_t probes = 16;
  std::uint64_t seed = 0;
};

struct CertifiedRadiusReport {
  double margin_da = 0.0;
  double margin_base = 0.0;
  double lipschitz_da = 0.0;
  double lipschitz_base = 0.0;
  double radius_da = 0.0;
  double radius_base = 0.0;
  bool certifiable = false;
  double delta_m = 0.0;
  double ratio = 0.0;
  double gamma = 0.0;
  double rho = 0.0;
  double cos_theta = 0.0;
  double lambda = 0.0;
  double bound = 0.0;
  double slack = 0.0;
};

/// Radius proxy margin / L for a differential and a baseline model. L for
/// each model is the largest effective-map gradient norm over a shared set
/// of (ξ, R) probes; γ, ρ and θ are read at the probe with the largest DA
/// gradient. Without two positive margins the report is not certifiable and
/// the radii, ratio, bound and slack are zero.
CertifiedRadiusReport certified_radius_ratio(const Classifier& da, const Classifier& base, const Tensor& x,
                                             std::size_t label, const RadiusProtocol& protocol);

struct RangeSummary {
  double mean = 0.0;
  double min = 0.0;
  double max = 0.0;
  std::size_t count = 0;
};

struct AlignmentStats {
  std::size_t layer = 0;
  double lambda = 0.0;
  std::size_t evaluations = 0;
  std::size_t degenerate = 0;
  std::size_t negative = 0;
  /// negative / (evaluations - degenerate).
  double negative_fraction = 0.0;
  double mean_cos_theta = 0.0;
  /// 20 equal bins over [-1, 1]; cosθ = 1 falls in the last bin.
  std::array<std::size_t, 20> histogram{};
  RangeSummary rho;
  /// Present when a baseline model was supplied.
  std::optional<RangeSummary> gamma;
};

struct AlignmentOptions {
  double epsilon = kAlignmentEpsilon;
  std::size_t per_sample = 4;
  std::uint64_t seed = 0;
  std::size_t workers = 1;
};

/// Branch alignment at x + ξ for `per_sample` draws of (ξ, R) per image.
/// Draws are keyed by the image contents, so the result does not depend on
/// the sample order. Throws DegenerateError when every gradient pair is
/// degenerate.
AlignmentStats negative_alignment_frequency(const Classifier& model, std::size_t layer, const Dataset& data,
                                            const AlignmentOptions& options, const Classifier* base = nullptr);

}  // namespace dattn
