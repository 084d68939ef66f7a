#pragma once

#include <cmath>
#include <span>
#include <vector>

#include "dattn/error.hpp"
#include "dattn/tensor.hpp"

namespace dattn {

struct AdamConfig {
  double learning_rate = 5e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Bias-corrected Adam over a fixed list of tensors (descent direction).
class Adam {
 public:
  Adam(AdamConfig config, std::span<const Shape> shapes) : config_(config) {
    for (const Shape& s : shapes) {
      m_.emplace_back(s);
      v_.emplace_back(s);
    }
  }

  std::size_t steps() const { return t_; }

  void step(std::span<Tensor* const> params, std::span<const Tensor> grads) {
    if (params.size() != m_.size() || grads.size() != m_.size()) throw DimensionError("adam: parameter count changed");
    ++t_;
    const double c1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
    for (std::size_t p = 0; p < m_.size(); ++p) {
      Tensor& w = *params[p];
      const Tensor& g = grads[p];
      require_same_shape(w, g, "adam");
      Tensor& m = m_[p];
      Tensor& v = v_[p];
      for (std::size_t i = 0; i < w.size(); ++i) {
        m[i] = config_.beta1 * m[i] + (1.0 - config_.beta1) * g[i];
        v[i] = config_.beta2 * v[i] + (1.0 - config_.beta2) * g[i] * g[i];
        w[i] -= config_.learning_rate * (m[i] / c1) / (std::sqrt(v[i] / c2) + config_.eps);
      }
    }
  }

 private:
  AdamConfig config_;
  std::vector<Tensor> m_;
  std::vector<Tensor> v_;
  std::size_t t_ = 0;
};

}  // namespace dattn
