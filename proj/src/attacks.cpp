#include "dattn/attacks.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "dattn/error.hpp"
#include "dattn/optim.hpp"
#include "dattn/parallel.hpp"

namespace dattn {

std::string to_string(NormKind kind) { return kind == NormKind::linf ? "linf" : "l2"; }

LinfAttackSpec LinfAttackSpec::pgd(double epsilon) {
  LinfAttackSpec s;
  s.epsilon = epsilon;
  s.steps = 40;
  s.step_size = epsilon / 10.0;
  s.random_start = true;
  return s;
}

LinfAttackSpec LinfAttackSpec::fgsm(double epsilon) {
  LinfAttackSpec s;
  s.epsilon = epsilon;
  s.steps = 1;
  s.step_size = epsilon;
  s.random_start = false;
  return s;
}

void LinfAttackSpec::validate() const {
  if (!(epsilon >= 0.0) || !std::isfinite(epsilon)) throw ConfigError("pgd: epsilon must be finite and >= 0");
  if (steps < 1) throw ConfigError("pgd: steps must be >= 1");
  if (!std::isfinite(step_size) || step_size < 0.0 || (step_size == 0.0 && epsilon > 0.0)) {
    throw ConfigError("pgd: step size must be > 0");
  }
}

void PatchAttackSpec::validate() const {
  if (steps < 1) throw ConfigError("patch: steps must be >= 1");
  if (!(step_size > 0.0) || !std::isfinite(step_size)) throw ConfigError("patch: step size must be > 0");
}

void L2AttackSpec::validate() const {
  if (!(confidence >= 0.0)) throw ConfigError("cw: confidence must be >= 0");
  if (iterations < 1) throw ConfigError("cw: iterations must be >= 1");
  if (!(learning_rate > 0.0)) throw ConfigError("cw: learning rate must be > 0");
  if (!(trade_off > 0.0) || !std::isfinite(trade_off)) throw ConfigError("cw: trade-off constant must be > 0");
  if (search_steps < 1) throw ConfigError("cw: search steps must be >= 1");
}

Var cross_entropy_objective(Var logits, std::size_t label) { return cross_entropy(logits, label); }

namespace {

void require_input(const DifferentiableModel& model, const Tensor& x, std::size_t label) {
  if (x.shape() != model.input_shape()) {
    throw DimensionError("attack: input shape " + shape_string(x.shape()) + " does not match model input " +
                         shape_string(model.input_shape()));
  }
  if (label >= model.num_classes()) throw ConfigError("attack: label out of range");
}

struct Evaluation {
  std::size_t prediction;
  Tensor gradient;
};

Evaluation evaluate(const DifferentiableModel& model, const Tensor& x, std::size_t label,
                    const AttackObjective& objective) {
  Graph g;
  Var input = g.leaf(x);
  Var z = model.logits(g, input);
  Var loss = objective(z, label);
  return {argmax(z.value()), g.grad(loss, input)};
}

// x + clamp(delta, -eps, eps) * mask, clipped to [0, 1].
Tensor project(const Tensor& x, const Tensor& candidate, double epsilon, const Tensor* mask) {
  Tensor out = candidate;
  for (std::size_t i = 0; i < out.size(); ++i) {
    double delta = std::clamp(candidate[i] - x[i], -epsilon, epsilon);
    if (mask) delta *= (*mask)[i];
    out[i] = std::clamp(x[i] + delta, 0.0, 1.0);
  }
  return out;
}

AttackResult sign_ascent(const DifferentiableModel& model, const Tensor& x, std::size_t label, double epsilon,
                         std::size_t steps, double step_size, bool early_stop, Tensor start, const Tensor* mask,
                         const AttackObjective& objective) {
  AttackResult r;
  r.norm = NormKind::linf;
  r.clean_prediction = model.predict(x);
  Tensor adv = project(x, start, epsilon, mask);
  bool stopped = false;
  std::size_t prediction = r.clean_prediction;
  for (std::size_t s = 0; s < steps; ++s) {
    Evaluation e = evaluate(model, adv, label, objective);
    if (early_stop && e.prediction != r.clean_prediction) {
      prediction = e.prediction;
      stopped = true;
      break;
    }
    Tensor dir = sign(e.gradient);
    if (mask) dir = hadamard(dir, *mask);
    adv = project(x, adv + step_size * dir, epsilon, mask);
    r.steps_used = s + 1;
  }
  if (!stopped) prediction = model.predict(adv);
  r.adversarial = std::move(adv);
  r.adversarial_prediction = prediction;
  r.success = prediction != r.clean_prediction;
  r.perturbation_norm = norm_inf(r.adversarial - x);
  return r;
}

}  // namespace

AttackResult pgd_linf(const DifferentiableModel& model, const Tensor& x, std::size_t label, const LinfAttackSpec& spec,
                      SeededRng& rng, const AttackObjective& objective) {
  spec.validate();
  require_input(model, x, label);
  Tensor start = x;
  if (spec.random_start && spec.epsilon > 0.0) start = x + rng.uniform_tensor(x.shape(), -spec.epsilon, spec.epsilon);
  return sign_ascent(model, x, label, spec.epsilon, spec.steps, spec.step_size, spec.early_stop, std::move(start),
                     nullptr, objective);
}

AttackResult fgsm(const DifferentiableModel& model, const Tensor& x, std::size_t label, double epsilon) {
  SeededRng unused(0);
  return pgd_linf(model, x, label, LinfAttackSpec::fgsm(epsilon), unused);
}

PatchLocation sample_patch_location(const PatchAttackSpec& spec, const Shape& image_shape, std::uint64_t stream) {
  if (image_shape.size() != 3) throw DimensionError("patch: image must be C x H x W");
  if (spec.width > image_shape[1] || spec.width > image_shape[2]) {
    throw ConfigError("patch: width " + std::to_string(spec.width) + " exceeds image " + shape_string(image_shape));
  }
  SeededRng rng(spec.location_seed, stream);
  PatchLocation at;
  at.top = rng.index(image_shape[1] - spec.width + 1);
  at.left = rng.index(image_shape[2] - spec.width + 1);
  return at;
}

Tensor patch_mask(const Shape& image_shape, std::size_t width, PatchLocation at) {
  if (image_shape.size() != 3) throw DimensionError("patch: image must be C x H x W");
  const std::size_t h = image_shape[1], w = image_shape[2];
  if (at.top + width > h || at.left + width > w) throw ConfigError("patch: square does not fit the image");
  Tensor mask(image_shape);
  for (std::size_t c = 0; c < image_shape[0]; ++c)
    for (std::size_t y = at.top; y < at.top + width; ++y)
      for (std::size_t x = at.left; x < at.left + width; ++x) mask[(c * h + y) * w + x] = 1.0;
  return mask;
}

AttackResult pgd_patch(const DifferentiableModel& model, const Tensor& x, std::size_t label, const PatchAttackSpec& spec,
                       std::uint64_t stream, const AttackObjective& objective) {
  spec.validate();
  require_input(model, x, label);
  const PatchLocation at = sample_patch_location(spec, x.shape(), stream);
  if (spec.width == 0) {
    AttackResult r;
    r.adversarial = x;
    r.clean_prediction = r.adversarial_prediction = model.predict(x);
    return r;
  }
  const Tensor mask = patch_mask(x.shape(), spec.width, at);
  return sign_ascent(model, x, label, 1.0, spec.steps, spec.step_size, spec.early_stop, x, &mask, objective);
}

AttackResult cw_l2(const DifferentiableModel& model, const Tensor& x, std::size_t label, const L2AttackSpec& spec) {
  spec.validate();
  require_input(model, x, label);
  AttackResult best;
  best.norm = NormKind::l2;
  best.clean_prediction = model.predict(x);
  best.adversarial = x;
  best.adversarial_prediction = best.clean_prediction;
  if (best.clean_prediction != label) {
    // Nothing to do: the input is already off the attacked label.
    best.success = true;
    return best;
  }

  // Pixels at exactly 0 or 1 map to +-inf, so the box is shrunk slightly.
  constexpr double kShrink = 1.0 - 1e-6;
  Tensor w0(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) w0[i] = std::atanh((2.0 * x[i] - 1.0) * kShrink);

  const Shape shapes[] = {x.shape()};
  double best_norm = std::numeric_limits<double>::infinity();
  double c = spec.trade_off, lo = 0.0, hi = std::numeric_limits<double>::infinity();
  Tensor last = x;
  std::size_t last_prediction = best.clean_prediction;

  for (std::size_t round = 0; round < spec.search_steps; ++round) {
    Tensor w = w0;
    Adam adam(AdamConfig{spec.learning_rate, 0.9, 0.999, 1e-8}, shapes);
    bool found = false;
    for (std::size_t it = 0; it < spec.iterations; ++it) {
      Graph g;
      Var wv = g.leaf(w);
      Var adv = scale(shift(tanh(wv), 1.0), 0.5);
      Var diff = adv - g.constant(x);
      Var z = model.logits(g, adv);
      const Tensor& zv = z.value();
      std::size_t other = label == 0 ? 1 : 0;
      for (std::size_t k = 0; k < zv.size(); ++k)
        if (k != label && zv[k] > zv[other]) other = k;
      Var hinge = clamp_min(shift(element(z, label) - element(z, other), spec.confidence), 0.0);
      Var loss = inner(diff, diff) + scale(hinge, c);
      ++best.steps_used;

      last = adv.value();
      last_prediction = argmax(zv);
      if (last_prediction != best.clean_prediction) {
        found = true;
        const double n = norm2(diff.value());
        if (n < best_norm) {
          best_norm = n;
          best.adversarial = last;
          best.adversarial_prediction = last_prediction;
        }
      }
      Tensor grad = g.grad(loss, wv);
      Tensor* params[] = {&w};
      const Tensor grads[] = {std::move(grad)};
      adam.step(params, grads);
    }
    if (found) {
      hi = std::min(hi, c);
      c = 0.5 * (lo + hi);
    } else {
      lo = std::max(lo, c);
      c = std::isfinite(hi) ? 0.5 * (lo + hi) : c * 10.0;
    }
  }

  if (std::isfinite(best_norm)) {
    best.success = true;
    best.perturbation_norm = best_norm;
  } else {
    best.success = false;
    best.adversarial = last;
    best.adversarial_prediction = last_prediction;
    best.perturbation_norm = norm2(last - x);
  }
  return best;
}

std::string attack_kind(const AttackSpec& spec) {
  if (const auto* s = std::get_if<LinfAttackSpec>(&spec)) {
    return s->steps == 1 && !s->random_start && s->step_size == s->epsilon ? "fgsm" : "pgd";
  }
  if (std::holds_alternative<PatchAttackSpec>(spec)) return "patch";
  return "cw";
}

double attack_budget(const AttackSpec& spec) {
  if (const auto* s = std::get_if<LinfAttackSpec>(&spec)) return s->epsilon;
  if (const auto* s = std::get_if<PatchAttackSpec>(&spec)) return static_cast<double>(s->width);
  return std::get<L2AttackSpec>(spec).trade_off;
}

AsrReport attack_success_rate(const DifferentiableModel& model, const Dataset& data, const AttackSpec& spec,
                              std::uint64_t seed, std::size_t workers) {
  if (data.empty()) throw DataError("attack: dataset is empty");
  const std::string kind = attack_kind(spec);
  const double budget = attack_budget(spec);
  std::vector<AttackRow> rows(data.size());
  parallel_for(data.size(), workers, [&](std::size_t i) {
    const Tensor& x = data.images[i];
    const std::size_t clean = model.predict(x);
    AttackResult r;
    if (const auto* s = std::get_if<LinfAttackSpec>(&spec)) {
      SeededRng rng(seed, i);
      r = pgd_linf(model, x, clean, *s, rng);
    } else if (const auto* s = std::get_if<PatchAttackSpec>(&spec)) {
      r = pgd_patch(model, x, clean, *s, i);
    } else {
      r = cw_l2(model, x, clean, std::get<L2AttackSpec>(spec));
    }
    rows[i] = AttackRow{i, kind, budget, r.success, r.perturbation_norm, r.steps_used};
  });
  AsrReport report;
  report.trials = rows.size();
  double norm_sum = 0.0;
  for (const AttackRow& row : rows) {
    if (!row.success) continue;
    ++report.successes;
    norm_sum += row.norm;
  }
  report.rate = static_cast<double>(report.successes) / static_cast<double>(report.trials);
  report.mean_norm = report.successes > 0 ? norm_sum / static_cast<double>(report.successes) : 0.0;
  report.rows = std::move(rows);
  return report;
}

}  // namespace dattn
