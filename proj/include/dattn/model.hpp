#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dattn/attention.hpp"
#include "dattn/graph.hpp"
#include "dattn/tensor.hpp"

namespace dattn {

enum class AttentionKind { standard, differential };

std::string to_string(AttentionKind kind);
AttentionKind parse_attention_kind(const std::string& text);

struct ModelConfig {
  std::size_t image_size = 32;
  std::size_t channels = 3;
  std::size_t patch_size = 4;
  std::size_t embed_dim = 64;
  std::size_t head_dim = 64;
  std::size_t depth = 1;
  std::size_t mlp_ratio = 4;
  std::size_t num_classes = 10;
  AttentionKind attention = AttentionKind::differential;
  double lambda_init = kDefaultLambdaInit;

  void validate() const;
  std::size_t num_patches() const;
  /// Patches plus the class token.
  std::size_t tokens() const { return num_patches() + 1; }
  Shape image_shape() const { return {channels, image_size, image_size}; }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

struct NamedTensor {
  std::string name;
  Tensor value;

  friend bool operator==(const NamedTensor&, const NamedTensor&) = default;
};

/// Ordered, named parameter tensors. Order is the checkpoint and optimizer
/// order.
class ParameterSet {
 public:
  void add(std::string name, Tensor value);
  std::size_t size() const { return items_.size(); }
  std::size_t index_of(const std::string& name) const;
  bool contains(const std::string& name) const;
  const Tensor& get(const std::string& name) const { return items_[index_of(name)].value; }
  Tensor& get(const std::string& name) { return items_[index_of(name)].value; }
  const NamedTensor& operator[](std::size_t i) const { return items_[i]; }
  NamedTensor& operator[](std::size_t i) { return items_[i]; }
  auto begin() const { return items_.begin(); }
  auto end() const { return items_.end(); }
  std::size_t scalar_count() const;

  friend bool operator==(const ParameterSet&, const ParameterSet&) = default;

 private:
  std::vector<NamedTensor> items_;
};

/// Anything that maps an input tensor to a 1 x K logit row inside a Graph.
/// Attacks and analysis only see this interface.
class DifferentiableModel {
 public:
  virtual ~DifferentiableModel() = default;
  virtual Shape input_shape() const = 0;
  virtual std::size_t num_classes() const = 0;
  /// Parameters enter the graph as constants.
  virtual Var logits(Graph& g, Var input) const = 0;

  Tensor logits(const Tensor& input) const;
  std::size_t predict(const Tensor& input) const;
};

/// F_y(x) - max_{i != y} F_i(x).
double margin(const Tensor& logits, std::size_t label);
double margin(const DifferentiableModel& model, const Tensor& input, std::size_t label);

struct BlockNodes {
  Var input;
  Var a1;
  Var a2;  // invalid for standard attention
  Var a_effective;
  Var output;
};

struct ForwardNodes {
  Var logits;
  std::vector<BlockNodes> blocks;
};

struct LayerTrace {
  Tensor input;
  Tensor a1;
  std::optional<Tensor> a2;
  Tensor a_effective;
  Tensor output;
};

struct ForwardTrace {
  Tensor logits;
  std::vector<LayerTrace> layers;
};

/// Pre-norm ViT: patch embedding, class token, learned positions, D blocks
/// of (attention, GELU MLP), final norm on the class token, linear head.
class Classifier : public DifferentiableModel {
 public:
  Classifier(ModelConfig config, ParameterSet params);

  static Classifier initialize(const ModelConfig& config, std::uint64_t seed);

  const ModelConfig& config() const { return config_; }
  const ParameterSet& parameters() const { return params_; }
  ParameterSet& parameters() { return params_; }

  Shape input_shape() const override { return config_.image_shape(); }
  std::size_t num_classes() const override { return config_.num_classes; }
  Var logits(Graph& g, Var input) const override;
  using DifferentiableModel::logits;

  /// One Var per parameter, in ParameterSet order.
  std::vector<Var> bind(Graph& g, bool trainable) const;
  ForwardNodes build(Graph& g, Var image, std::span<const Var> params) const;

  Var embed(Graph& g, Var image, std::span<const Var> params) const;
  BlockNodes block(Graph& g, std::size_t layer, Var h, std::span<const Var> params) const;
  Var head(Graph& g, Var h, std::span<const Var> params) const;

  /// Logits for each image, stacked as B x K.
  Tensor forward(std::span<const Tensor> batch) const;
  ForwardTrace trace(const Tensor& image) const;

  /// Subtraction weight per layer; empty for standard models.
  std::vector<double> lambdas() const;
  std::size_t depth() const { return config_.depth; }

  DiffAttentionParams diff_params(std::size_t layer) const;
  StdAttentionParams std_params(std::size_t layer) const;

 private:
  struct BlockIndex {
    std::size_t norm1_gain, norm1_bias;
    std::size_t wq, wk, w2q, w2k, wv, lambda;  // wq/wk double as w1q/w1k
    std::size_t wo;
    std::size_t norm2_gain, norm2_bias;
    std::size_t fc1_w, fc1_b, fc2_w, fc2_b;
  };

  void index_parameters();

  ModelConfig config_;
  ParameterSet params_;
  std::size_t patch_w_ = 0, patch_b_ = 0, cls_ = 0, pos_ = 0, norm_gain_ = 0, norm_bias_ = 0, head_w_ = 0, head_b_ = 0;
  std::vector<BlockIndex> blocks_;
};

/// Names and shapes every Classifier with this config must carry.
ParameterSet parameter_layout(const ModelConfig& config);

/// logits = vec(x)^T W + b, W of shape D x K. Used as a closed-form
/// reference model for attacks.
class LinearClassifier : public DifferentiableModel {
 public:
  LinearClassifier(Tensor weights, Tensor bias, Shape input_shape);

  Shape input_shape() const override { return input_shape_; }
  std::size_t num_classes() const override { return weights_.cols(); }
  Var logits(Graph& g, Var input) const override;
  using DifferentiableModel::logits;

  const Tensor& weights() const { return weights_; }
  const Tensor& bias() const { return bias_; }

 private:
  Tensor weights_;
  Tensor bias_;
  Shape input_shape_;
};

}  // namespace dattn
