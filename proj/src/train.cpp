#include "dattn/train.hpp"

#include <cmath>
#include <numeric>
#include <sstream>

#include "dattn/attacks.hpp"
#include "dattn/error.hpp"
#include "dattn/optim.hpp"
#include "dattn/parallel.hpp"
#include "dattn/rng.hpp"

namespace dattn {

void TrainConfig::validate() const {
  if (batch_size < 1) throw ConfigError("train: batch size must be >= 1");
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) throw ConfigError("train: learning rate must be > 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("train: betas must lie in [0, 1)");
  if (!(adam_eps > 0.0)) throw ConfigError("train: adam eps must be > 0");
  if (adv_train_epsilon && (!(*adv_train_epsilon >= 0.0) || !std::isfinite(*adv_train_epsilon))) {
    throw ConfigError("train: adversarial epsilon must be >= 0");
  }
  if (adv_train_epsilon && adv_steps < 1) throw ConfigError("train: adversarial steps must be >= 1");
}

namespace {

struct SampleGrad {
  std::vector<Tensor> grads;
  double loss = 0.0;
  bool correct = false;
};

SampleGrad sample_gradient(const Classifier& model, const Tensor& image, std::size_t label) {
  Graph g;
  std::vector<Var> params = model.bind(g, true);
  ForwardNodes nodes = model.build(g, g.constant(image), params);
  Var loss = cross_entropy(nodes.logits, label);
  SampleGrad out;
  out.loss = loss.value().item();
  out.correct = argmax(nodes.logits.value()) == label;
  out.grads = g.gradients(loss, params);
  return out;
}

std::string divergence_report(const TrainConfig& c, std::size_t epoch, std::size_t batch, const std::string& detail) {
  std::ostringstream os;
  os << "train: diverged at epoch " << epoch << " batch " << batch << " (" << detail << "); learning rate "
     << c.learning_rate << ", seed " << c.seed << ". Lower the learning rate or re-initialize.";
  return os.str();
}

}  // namespace

TrainResult train(Classifier& model, const Dataset& data, const TrainConfig& config) {
  config.validate();
  data.validate();
  if (data.empty()) throw DataError("train: dataset is empty");
  if (data.images.front().shape() != model.input_shape()) {
    throw DimensionError("train: images are " + shape_string(data.images.front().shape()) + " but the model expects " +
                         shape_string(model.input_shape()));
  }
  if (data.num_classes > model.num_classes()) throw DataError("train: dataset has more classes than the model");

  std::vector<Shape> shapes;
  for (const NamedTensor& p : model.parameters()) shapes.push_back(p.value.shape());
  Adam adam(AdamConfig{config.learning_rate, config.beta1, config.beta2, config.adam_eps}, shapes);

  TrainResult result;
  result.lambda_trajectory.push_back(model.lambdas());

  std::vector<std::size_t> order(data.size());
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    SeededRng shuffle_rng(config.seed, epoch);
    shuffle_rng.shuffle(order);

    double loss_sum = 0.0;
    std::size_t correct = 0;
    std::size_t batch_index = 0;
    for (std::size_t begin = 0; begin < order.size(); begin += config.batch_size, ++batch_index) {
      const std::size_t count = std::min(config.batch_size, order.size() - begin);
      std::vector<SampleGrad> per_sample(count);
      try {
        parallel_for(count, config.workers, [&](std::size_t j) {
          const std::size_t i = order[begin + j];
          Tensor image = data.images[i];
          if (config.adv_train_epsilon && *config.adv_train_epsilon > 0.0) {
            LinfAttackSpec spec = LinfAttackSpec::pgd(*config.adv_train_epsilon);
            spec.steps = config.adv_steps;
            spec.step_size = *config.adv_train_epsilon / 2.0;
            spec.early_stop = false;
            SeededRng rng(derive_seed(config.seed, epoch), i);
            image = pgd_linf(model, image, data.labels[i], spec, rng).adversarial;
          }
          per_sample[j] = sample_gradient(model, image, data.labels[i]);
        });
      } catch (const NumericError& e) {
        throw NumericError(divergence_report(config, epoch, batch_index, e.what()));
      }

      std::vector<Tensor> grads = per_sample.front().grads;
      for (std::size_t j = 1; j < count; ++j)
        for (std::size_t p = 0; p < grads.size(); ++p) grads[p] = grads[p] + per_sample[j].grads[p];
      const double inv = 1.0 / static_cast<double>(count);
      double batch_loss = 0.0;
      for (std::size_t j = 0; j < count; ++j) {
        batch_loss += per_sample[j].loss;
        correct += per_sample[j].correct ? 1 : 0;
      }
      if (!std::isfinite(batch_loss)) {
        throw NumericError(divergence_report(config, epoch, batch_index, "loss is not finite"));
      }
      loss_sum += batch_loss;
      for (Tensor& gr : grads) gr = inv * gr;

      std::vector<Tensor*> params;
      for (std::size_t p = 0; p < model.parameters().size(); ++p) params.push_back(&model.parameters()[p].value);
      adam.step(params, grads);
      for (Tensor* p : params) {
        if (!p->all_finite()) throw NumericError(divergence_report(config, epoch, batch_index, "parameters not finite"));
      }
    }

    EpochMetrics m;
    m.epoch = epoch;
    m.mean_loss = loss_sum / static_cast<double>(data.size());
    m.train_accuracy = static_cast<double>(correct) / static_cast<double>(data.size());
    m.lambdas = model.lambdas();
    result.lambda_trajectory.push_back(m.lambdas);
    result.epochs.push_back(std::move(m));
  }
  return result;
}

double accuracy(const DifferentiableModel& model, const Dataset& data, std::size_t workers) {
  if (data.empty()) throw DataError("accuracy: dataset is empty");
  std::vector<char> hit(data.size());
  parallel_for(data.size(), workers, [&](std::size_t i) { hit[i] = model.predict(data.images[i]) == data.labels[i]; });
  const auto n = std::count(hit.begin(), hit.end(), 1);
  return static_cast<double>(n) / static_cast<double>(data.size());
}

}  // namespace dattn
