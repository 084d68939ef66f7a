#pragma once

#include <optional>

#include "dattn/graph.hpp"
#include "dattn/rng.hpp"
#include "dattn/tensor.hpp"

namespace dattn {

inline constexpr double kDefaultLambdaInit = 0.8;

struct StdAttentionParams {
  Tensor wq, wk, wv;  // d x d_k each

  std::size_t input_dim() const { return wq.rows(); }
  std::size_t head_dim() const { return wq.cols(); }
  void validate() const;
};

/// Two query/key projection pairs, one shared value projection and the
/// subtraction weight. `lambda` is the raw trainable scalar.
struct DiffAttentionParams {
  Tensor w1q, w1k, w2q, w2k, wv;
  double lambda = kDefaultLambdaInit;
  double lambda_init = kDefaultLambdaInit;

  std::size_t input_dim() const { return w1q.rows(); }
  std::size_t head_dim() const { return w1q.cols(); }
  void validate() const;
};

struct AttentionOutput {
  Tensor y;                 // N x d_k
  Tensor a1;                // N x N
  std::optional<Tensor> a2;  // differential only
  Tensor a_effective;       // a1 - lambda * a2, or a1
};

// Graph-level variants. Parameters are Vars so callers choose whether they
// are trainable leaves or constants.

struct StdAttentionVars {
  Var wq, wk, wv;
};

struct DiffAttentionVars {
  Var w1q, w1k, w2q, w2k, wv;
  Var lambda;  // 1x1
};

struct AttentionNodes {
  Var y;
  Var a1;
  Var a2;  // invalid for standard attention
  Var a_effective;
};

/// softmax_rows((X Wq)(X Wk)^T / sqrt(d_k))
Var attention_map(Var x, Var wq, Var wk);

AttentionNodes std_attention(const StdAttentionVars& p, Var x);
AttentionNodes diff_attention(const DiffAttentionVars& p, Var x);

AttentionOutput std_attention(const StdAttentionParams& p, const Tensor& x);
AttentionOutput diff_attention(const DiffAttentionParams& p, const Tensor& x);

/// Frobenius inner product <A, R>; scalarizes an attention map so its input
/// gradient is well defined. R must be shared by every map compared.
double probe_functional(const Tensor& a, const Tensor& r);
Var probe_functional(Var a, Var r);

/// N x N standard-normal probe matrix.
Tensor draw_probe(std::size_t tokens, SeededRng& rng);

}  // namespace dattn
