#include "dattn/model.hpp"

#include <cmath>
#include <limits>

#include "dattn/error.hpp"
#include "dattn/rng.hpp"

namespace dattn {

std::string to_string(AttentionKind kind) {
  return kind == AttentionKind::standard ? "standard" : "differential";
}

AttentionKind parse_attention_kind(const std::string& text) {
  if (text == "standard") return AttentionKind::standard;
  if (text == "differential") return AttentionKind::differential;
  throw ConfigError("unknown attention kind '" + text + "' (expected standard or differential)");
}

void ModelConfig::validate() const {
  if (image_size == 0 || channels == 0 || patch_size == 0) throw ConfigError("model: image dims must be positive");
  if (image_size % patch_size != 0) {
    throw ConfigError("model: image-size " + std::to_string(image_size) + " is not divisible by patch-size " +
                      std::to_string(patch_size));
  }
  if (depth < 1) throw ConfigError("model: depth must be at least 1");
  if (embed_dim == 0 || head_dim == 0 || mlp_ratio == 0) throw ConfigError("model: dims must be positive");
  if (num_classes < 1) throw ConfigError("model: num-classes must be at least 1");
  if (!std::isfinite(lambda_init)) throw ConfigError("model: lambda_init must be finite");
}

std::size_t ModelConfig::num_patches() const {
  const std::size_t g = image_size / patch_size;
  return g * g;
}

void ParameterSet::add(std::string name, Tensor value) {
  if (contains(name)) throw ConfigError("duplicate parameter '" + name + "'");
  items_.push_back(NamedTensor{std::move(name), std::move(value)});
}

std::size_t ParameterSet::index_of(const std::string& name) const {
  for (std::size_t i = 0; i < items_.size(); ++i) {
    if (items_[i].name == name) return i;
  }
  throw ConfigError("missing parameter '" + name + "'");
}

bool ParameterSet::contains(const std::string& name) const {
  for (const auto& item : items_) {
    if (item.name == name) return true;
  }
  return false;
}

std::size_t ParameterSet::scalar_count() const {
  std::size_t n = 0;
  for (const auto& item : items_) n += item.value.size();
  return n;
}

Tensor DifferentiableModel::logits(const Tensor& input) const {
  Graph g;
  return logits(g, g.constant(input)).value();
}

std::size_t DifferentiableModel::predict(const Tensor& input) const { return argmax(logits(input)); }

double margin(const Tensor& logits, std::size_t label) {
  if (label >= logits.size()) throw DimensionError("margin: label out of range");
  // Single-class models have no competitor.
  if (logits.size() == 1) return std::numeric_limits<double>::infinity();
  double other = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < logits.size(); ++i) {
    if (i != label) other = std::max(other, logits[i]);
  }
  return logits[label] - other;
}

double margin(const DifferentiableModel& model, const Tensor& input, std::size_t label) {
  return margin(model.logits(input), label);
}

namespace {

std::string block_name(std::size_t i, const char* leaf) { return "blocks." + std::to_string(i) + "." + leaf; }

}  // namespace

ParameterSet parameter_layout(const ModelConfig& c) {
  c.validate();
  const std::size_t d = c.embed_dim, dk = c.head_dim, hidden = c.embed_dim * c.mlp_ratio;
  const std::size_t patch_dim = c.channels * c.patch_size * c.patch_size;
  ParameterSet p;
  p.add("patch_embed.weight", Tensor({patch_dim, d}));
  p.add("patch_embed.bias", Tensor({1, d}));
  p.add("cls_token", Tensor({1, d}));
  p.add("pos_embed", Tensor({c.tokens(), d}));
  for (std::size_t i = 0; i < c.depth; ++i) {
    p.add(block_name(i, "norm1.gain"), Tensor::filled({1, d}, 1.0));
    p.add(block_name(i, "norm1.bias"), Tensor({1, d}));
    if (c.attention == AttentionKind::standard) {
      p.add(block_name(i, "attn.wq"), Tensor({d, dk}));
      p.add(block_name(i, "attn.wk"), Tensor({d, dk}));
    } else {
      p.add(block_name(i, "attn.w1q"), Tensor({d, dk}));
      p.add(block_name(i, "attn.w1k"), Tensor({d, dk}));
      p.add(block_name(i, "attn.w2q"), Tensor({d, dk}));
      p.add(block_name(i, "attn.w2k"), Tensor({d, dk}));
    }
    p.add(block_name(i, "attn.wv"), Tensor({d, dk}));
    if (c.attention == AttentionKind::differential) {
      p.add(block_name(i, "attn.lambda"), Tensor::scalar(c.lambda_init));
    }
    p.add(block_name(i, "attn.wo"), Tensor({dk, d}));
    p.add(block_name(i, "norm2.gain"), Tensor::filled({1, d}, 1.0));
    p.add(block_name(i, "norm2.bias"), Tensor({1, d}));
    p.add(block_name(i, "mlp.fc1.weight"), Tensor({d, hidden}));
    p.add(block_name(i, "mlp.fc1.bias"), Tensor({1, hidden}));
    p.add(block_name(i, "mlp.fc2.weight"), Tensor({hidden, d}));
    p.add(block_name(i, "mlp.fc2.bias"), Tensor({1, d}));
  }
  p.add("norm.gain", Tensor::filled({1, d}, 1.0));
  p.add("norm.bias", Tensor({1, d}));
  p.add("head.weight", Tensor({d, c.num_classes}));
  p.add("head.bias", Tensor({1, c.num_classes}));
  return p;
}

Classifier::Classifier(ModelConfig config, ParameterSet params) : config_(std::move(config)), params_(std::move(params)) {
  const ParameterSet layout = parameter_layout(config_);
  if (layout.size() != params_.size()) {
    throw ConfigError("classifier: expected " + std::to_string(layout.size()) + " parameters, got " +
                      std::to_string(params_.size()));
  }
  for (std::size_t i = 0; i < layout.size(); ++i) {
    if (layout[i].name != params_[i].name) {
      throw ConfigError("classifier: parameter " + std::to_string(i) + " should be '" + layout[i].name + "', got '" +
                        params_[i].name + "'");
    }
    if (layout[i].value.shape() != params_[i].value.shape()) {
      throw DimensionError("classifier: parameter '" + layout[i].name + "' should be " +
                           shape_string(layout[i].value.shape()) + ", got " +
                           shape_string(params_[i].value.shape()));
    }
  }
  index_parameters();
}

void Classifier::index_parameters() {
  patch_w_ = params_.index_of("patch_embed.weight");
  patch_b_ = params_.index_of("patch_embed.bias");
  cls_ = params_.index_of("cls_token");
  pos_ = params_.index_of("pos_embed");
  norm_gain_ = params_.index_of("norm.gain");
  norm_bias_ = params_.index_of("norm.bias");
  head_w_ = params_.index_of("head.weight");
  head_b_ = params_.index_of("head.bias");
  const bool diff = config_.attention == AttentionKind::differential;
  blocks_.clear();
  for (std::size_t i = 0; i < config_.depth; ++i) {
    BlockIndex b{};
    b.norm1_gain = params_.index_of(block_name(i, "norm1.gain"));
    b.norm1_bias = params_.index_of(block_name(i, "norm1.bias"));
    b.wq = params_.index_of(block_name(i, diff ? "attn.w1q" : "attn.wq"));
    b.wk = params_.index_of(block_name(i, diff ? "attn.w1k" : "attn.wk"));
    if (diff) {
      b.w2q = params_.index_of(block_name(i, "attn.w2q"));
      b.w2k = params_.index_of(block_name(i, "attn.w2k"));
      b.lambda = params_.index_of(block_name(i, "attn.lambda"));
    }
    b.wv = params_.index_of(block_name(i, "attn.wv"));
    b.wo = params_.index_of(block_name(i, "attn.wo"));
    b.norm2_gain = params_.index_of(block_name(i, "norm2.gain"));
    b.norm2_bias = params_.index_of(block_name(i, "norm2.bias"));
    b.fc1_w = params_.index_of(block_name(i, "mlp.fc1.weight"));
    b.fc1_b = params_.index_of(block_name(i, "mlp.fc1.bias"));
    b.fc2_w = params_.index_of(block_name(i, "mlp.fc2.weight"));
    b.fc2_b = params_.index_of(block_name(i, "mlp.fc2.bias"));
    blocks_.push_back(b);
  }
}

Classifier Classifier::initialize(const ModelConfig& config, std::uint64_t seed) {
  ParameterSet p = parameter_layout(config);
  SeededRng rng(seed, 0);
  for (std::size_t i = 0; i < p.size(); ++i) {
    NamedTensor& item = p[i];
    const std::string& name = item.name;
    const bool is_vector_param = name.ends_with("bias") || name.ends_with("gain") || name.ends_with("lambda");
    if (is_vector_param) continue;  // layout already holds zeros, ones, lambda_init
    if (name == "cls_token" || name == "pos_embed") {
      item.value = rng.normal_tensor(item.value.shape(), 0.02);
      continue;
    }
    // Xavier-normal for every projection matrix.
    const double fan_in = static_cast<double>(item.value.rows());
    const double fan_out = static_cast<double>(item.value.cols());
    item.value = rng.normal_tensor(item.value.shape(), std::sqrt(2.0 / (fan_in + fan_out)));
  }
  return Classifier(config, std::move(p));
}

std::vector<Var> Classifier::bind(Graph& g, bool trainable) const {
  std::vector<Var> vars;
  vars.reserve(params_.size());
  for (const auto& item : params_) vars.push_back(trainable ? g.leaf(item.value) : g.constant(item.value));
  return vars;
}

Var Classifier::embed(Graph&, Var image, std::span<const Var> p) const {
  if (image.value().shape() != config_.image_shape()) {
    throw DimensionError("classifier: expected image " + shape_string(config_.image_shape()) + ", got " +
                         shape_string(image.value().shape()));
  }
  Var tokens = add_row(matmul(patchify(image, config_.patch_size), p[patch_w_]), p[patch_b_]);
  return add(concat_rows(p[cls_], tokens), p[pos_]);
}

BlockNodes Classifier::block(Graph&, std::size_t layer, Var h, std::span<const Var> p) const {
  if (layer >= blocks_.size()) throw ConfigError("classifier: layer " + std::to_string(layer) + " out of range");
  const BlockIndex& b = blocks_[layer];
  try {
    BlockNodes out;
    out.input = h;
    Var u = layer_norm_rows(h, p[b.norm1_gain], p[b.norm1_bias]);
    AttentionNodes att;
    if (config_.attention == AttentionKind::differential) {
      att = diff_attention(DiffAttentionVars{p[b.wq], p[b.wk], p[b.w2q], p[b.w2k], p[b.wv], p[b.lambda]}, u);
    } else {
      att = std_attention(StdAttentionVars{p[b.wq], p[b.wk], p[b.wv]}, u);
    }
    out.a1 = att.a1;
    out.a2 = att.a2;
    out.a_effective = att.a_effective;
    Var h1 = add(h, matmul(att.y, p[b.wo]));
    Var v = layer_norm_rows(h1, p[b.norm2_gain], p[b.norm2_bias]);
    Var m = add_row(matmul(gelu(add_row(matmul(v, p[b.fc1_w]), p[b.fc1_b])), p[b.fc2_w]), p[b.fc2_b]);
    out.output = add(h1, m);
    return out;
  } catch (const NumericError& e) {
    throw NumericError("block " + std::to_string(layer) + ": " + e.what());
  }
}

Var Classifier::head(Graph&, Var h, std::span<const Var> p) const {
  Var cls = layer_norm_rows(slice_rows(h, 0, 1), p[norm_gain_], p[norm_bias_]);
  return add_row(matmul(cls, p[head_w_]), p[head_b_]);
}

ForwardNodes Classifier::build(Graph& g, Var image, std::span<const Var> params) const {
  if (params.size() != params_.size()) throw GraphError("classifier: parameter binding has the wrong size");
  ForwardNodes out;
  Var h = embed(g, image, params);
  for (std::size_t i = 0; i < config_.depth; ++i) {
    out.blocks.push_back(block(g, i, h, params));
    h = out.blocks.back().output;
  }
  out.logits = head(g, h, params);
  return out;
}

Var Classifier::logits(Graph& g, Var input) const {
  const std::vector<Var> params = bind(g, false);
  return build(g, input, params).logits;
}

Tensor Classifier::forward(std::span<const Tensor> batch) const {
  if (batch.empty()) throw DimensionError("classifier: empty batch");
  const std::size_t k = config_.num_classes;
  Tensor out({batch.size(), k});
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const Tensor z = logits(batch[b]);
    for (std::size_t j = 0; j < k; ++j) out(b, j) = z[j];
  }
  return out;
}

ForwardTrace Classifier::trace(const Tensor& image) const {
  Graph g;
  const std::vector<Var> params = bind(g, false);
  ForwardNodes nodes = build(g, g.constant(image), params);
  ForwardTrace t;
  t.logits = nodes.logits.value();
  for (const BlockNodes& b : nodes.blocks) {
    LayerTrace lt{b.input.value(), b.a1.value(), std::nullopt, b.a_effective.value(), b.output.value()};
    if (b.a2.valid()) lt.a2 = b.a2.value();
    t.layers.push_back(std::move(lt));
  }
  return t;
}

std::vector<double> Classifier::lambdas() const {
  std::vector<double> out;
  if (config_.attention != AttentionKind::differential) return out;
  for (const BlockIndex& b : blocks_) out.push_back(params_[b.lambda].value.item());
  return out;
}

DiffAttentionParams Classifier::diff_params(std::size_t layer) const {
  if (config_.attention != AttentionKind::differential) throw CapabilityError("layer uses standard attention");
  const BlockIndex& b = blocks_.at(layer);
  return DiffAttentionParams{params_[b.wq].value,  params_[b.wk].value,  params_[b.w2q].value,
                             params_[b.w2k].value, params_[b.wv].value,  params_[b.lambda].value.item(),
                             config_.lambda_init};
}

StdAttentionParams Classifier::std_params(std::size_t layer) const {
  if (config_.attention != AttentionKind::standard) throw CapabilityError("layer uses differential attention");
  const BlockIndex& b = blocks_.at(layer);
  return StdAttentionParams{params_[b.wq].value, params_[b.wk].value, params_[b.wv].value};
}

LinearClassifier::LinearClassifier(Tensor weights, Tensor bias, Shape input_shape)
    : weights_(std::move(weights)), bias_(std::move(bias)), input_shape_(std::move(input_shape)) {
  if (weights_.rank() != 2 || weights_.rows() != shape_size(input_shape_)) {
    throw DimensionError("linear classifier: weights must be D x K with D = input size");
  }
  if (bias_.size() != weights_.cols()) throw DimensionError("linear classifier: bias must have K entries");
  bias_ = bias_.reshaped({1, weights_.cols()});
}

Var LinearClassifier::logits(Graph& g, Var input) const {
  if (input.value().shape() != input_shape_) {
    throw DimensionError("linear classifier: expected input " + shape_string(input_shape_) + ", got " +
                         shape_string(input.value().shape()));
  }
  Var flat = reshape(input, {1, shape_size(input_shape_)});
  return add_row(matmul(flat, g.constant(weights_)), g.constant(bias_));
}

}  // namespace dattn
