#include "dattn/attention.hpp"

#include <cmath>

#include "dattn/error.hpp"

namespace dattn {

namespace {

void require_projection(const Tensor& w, std::size_t d, std::size_t dk, const char* name) {
  if (w.rank() != 2 || w.rows() != d || w.cols() != dk) {
    throw DimensionError(std::string("attention: ") + name + " must be " + std::to_string(d) + "x" +
                         std::to_string(dk) + ", got " + shape_string(w.shape()));
  }
}

void require_input(const Tensor& x, std::size_t d) {
  if (x.rank() != 2 || x.cols() != d) {
    throw DimensionError("attention: input must be N x " + std::to_string(d) + ", got " + shape_string(x.shape()));
  }
}

}  // namespace

void StdAttentionParams::validate() const {
  if (wq.rank() != 2) throw DimensionError("attention: Wq must be a matrix");
  const std::size_t d = wq.rows(), dk = wq.cols();
  require_projection(wk, d, dk, "Wk");
  require_projection(wv, d, dk, "Wv");
}

void DiffAttentionParams::validate() const {
  if (w1q.rank() != 2) throw DimensionError("attention: W1q must be a matrix");
  const std::size_t d = w1q.rows(), dk = w1q.cols();
  require_projection(w1k, d, dk, "W1k");
  require_projection(w2q, d, dk, "W2q");
  require_projection(w2k, d, dk, "W2k");
  require_projection(wv, d, dk, "Wv");
  if (!std::isfinite(lambda)) throw NumericError("attention: lambda is not finite");
}

Var attention_map(Var x, Var wq, Var wk) {
  const double dk = static_cast<double>(wq.value().cols());
  Var q = matmul(x, wq);
  Var k = matmul(x, wk);
  return softmax_rows(scale(matmul(q, transpose(k)), 1.0 / std::sqrt(dk)));
}

AttentionNodes std_attention(const StdAttentionVars& p, Var x) {
  const Tensor& wq = p.wq.value();
  if (wq.rank() != 2) throw DimensionError("attention: Wq must be a matrix");
  require_projection(p.wk.value(), wq.rows(), wq.cols(), "Wk");
  require_projection(p.wv.value(), wq.rows(), wq.cols(), "Wv");
  require_input(x.value(), wq.rows());
  AttentionNodes out;
  out.a1 = attention_map(x, p.wq, p.wk);
  out.a_effective = out.a1;
  out.y = matmul(out.a1, matmul(x, p.wv));
  return out;
}

AttentionNodes diff_attention(const DiffAttentionVars& p, Var x) {
  const Tensor& w1q = p.w1q.value();
  if (w1q.rank() != 2) throw DimensionError("attention: W1q must be a matrix");
  require_projection(p.w1k.value(), w1q.rows(), w1q.cols(), "W1k");
  require_projection(p.w2q.value(), w1q.rows(), w1q.cols(), "W2q");
  require_projection(p.w2k.value(), w1q.rows(), w1q.cols(), "W2k");
  require_projection(p.wv.value(), w1q.rows(), w1q.cols(), "Wv");
  if (p.lambda.value().size() != 1) throw DimensionError("attention: lambda must be a scalar");
  require_input(x.value(), w1q.rows());

  AttentionNodes out;
  out.a1 = attention_map(x, p.w1q, p.w1k);
  out.a2 = attention_map(x, p.w2q, p.w2k);
  out.a_effective = sub(out.a1, scale(out.a2, p.lambda));
  out.y = matmul(out.a_effective, matmul(x, p.wv));
  return out;
}

AttentionOutput std_attention(const StdAttentionParams& p, const Tensor& x) {
  p.validate();
  Graph g;
  StdAttentionVars v{g.constant(p.wq), g.constant(p.wk), g.constant(p.wv)};
  AttentionNodes n = std_attention(v, g.constant(x));
  return AttentionOutput{n.y.value(), n.a1.value(), std::nullopt, n.a_effective.value()};
}

AttentionOutput diff_attention(const DiffAttentionParams& p, const Tensor& x) {
  p.validate();
  Graph g;
  DiffAttentionVars v{g.constant(p.w1q), g.constant(p.w1k), g.constant(p.w2q),
                      g.constant(p.w2k), g.constant(p.wv),  g.constant(Tensor::scalar(p.lambda))};
  AttentionNodes n = diff_attention(v, g.constant(x));
  return AttentionOutput{n.y.value(), n.a1.value(), n.a2.value(), n.a_effective.value()};
}

double probe_functional(const Tensor& a, const Tensor& r) {
  require_same_shape(a, r, "probe_functional");
  return dot(a, r);
}

Var probe_functional(Var a, Var r) {
  require_same_shape(a.value(), r.value(), "probe_functional");
  return inner(a, r);
}

Tensor draw_probe(std::size_t tokens, SeededRng& rng) { return rng.normal_tensor({tokens, tokens}); }

}  // namespace dattn
