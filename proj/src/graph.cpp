#include "dattn/graph.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "dattn/error.hpp"

namespace dattn {

Graph& Var::graph() const {
  if (!graph_) throw GraphError("use of an unbound Var");
  return *graph_;
}

const Tensor& Var::value() const { return graph().value(id_); }

bool Var::requires_grad() const { return graph().requires_grad(id_); }

Var Graph::leaf(Tensor value) {
  if (!value.all_finite()) throw NumericError("leaf: non-finite value");
  nodes_.push_back(Node{"leaf", std::move(value), {}, {}, true, true});
  return Var(this, nodes_.size() - 1);
}

Var Graph::constant(Tensor value) {
  if (!value.all_finite()) throw NumericError("constant: non-finite value");
  nodes_.push_back(Node{"constant", std::move(value), {}, {}, false, false});
  return Var(this, nodes_.size() - 1);
}

void Graph::check_owned(Var v, const char* op) const {
  if (!v.valid() || &v.graph() != this || v.id() >= nodes_.size()) {
    throw GraphError(std::string(op) + ": operand belongs to a different graph");
  }
}

Var Graph::record(const char* op, Tensor value, std::initializer_list<Var> inputs, BackwardFn backward) {
  if (!value.all_finite()) throw NumericError(std::string(op) + ": non-finite result");
  bool needs = false;
  std::vector<std::size_t> ids;
  ids.reserve(inputs.size());
  for (Var v : inputs) {
    check_owned(v, op);
    ids.push_back(v.id());
    needs = needs || nodes_[v.id()].requires_grad;
  }
  if (!needs) backward = nullptr;
  nodes_.push_back(Node{op, std::move(value), std::move(ids), std::move(backward), needs, false});
  return Var(this, nodes_.size() - 1);
}

std::vector<Tensor> Graph::gradients(Var output, std::span<const Var> wrt) const {
  check_owned(output, "gradients");
  if (nodes_[output.id()].value.size() != 1) {
    throw GraphError("gradients: output must be a scalar, got " + shape_string(nodes_[output.id()].value.shape()));
  }
  for (Var w : wrt) {
    check_owned(w, "gradients");
    if (!nodes_[w.id()].is_leaf) throw GraphError("gradients: wrt is not a differentiable leaf");
  }

  const std::size_t n = output.id() + 1;
  std::vector<Tensor> grads(n);
  std::vector<char> have(n, 0);
  grads[output.id()] = Tensor::filled(nodes_[output.id()].value.shape(), 1.0);
  have[output.id()] = 1;

  std::vector<const Tensor*> in_values;
  std::vector<Tensor*> in_grads;
  for (std::size_t id = n; id-- > 0;) {
    const Node& node = nodes_[id];
    if (!have[id] || !node.backward) continue;
    in_values.clear();
    in_grads.clear();
    for (std::size_t p : node.inputs) {
      in_values.push_back(&nodes_[p].value);
      if (nodes_[p].requires_grad) {
        if (!have[p]) {
          grads[p] = Tensor::zeros(nodes_[p].value.shape());
          have[p] = 1;
        }
        in_grads.push_back(&grads[p]);
      } else {
        in_grads.push_back(nullptr);
      }
    }
    node.backward(BackwardArgs{in_values, node.value, grads[id], in_grads});
    for (Tensor* g : in_grads) {
      if (g && !g->all_finite()) throw NumericError(std::string(node.op) + ": non-finite gradient");
    }
  }

  std::vector<Tensor> out;
  out.reserve(wrt.size());
  for (Var w : wrt) {
    if (w.id() < n && have[w.id()]) {
      out.push_back(grads[w.id()]);
    } else {
      out.push_back(Tensor::zeros(nodes_[w.id()].value.shape()));
    }
  }
  return out;
}

Tensor Graph::grad(Var output, Var wrt) const {
  const Var w[] = {wrt};
  return std::move(gradients(output, w).front());
}

namespace {

Graph& same_graph(Var a, Var b, const char* op) {
  if (!a.valid() || !b.valid() || &a.graph() != &b.graph()) {
    throw GraphError(std::string(op) + ": operands live on different graphs");
  }
  return a.graph();
}

void require_matrix(const Tensor& t, const char* op) {
  if (t.rank() != 2) throw DimensionError(std::string(op) + ": expected a matrix, got " + shape_string(t.shape()));
}

// out(m x k) += g(m x n) * b(k x n)^T
void acc_matmul_nt(const Tensor& g, const Tensor& b, Tensor& out) {
  const std::size_t m = g.rows(), n = g.cols(), k = b.rows();
  const double* pg = g.data().data();
  const double* pb = b.data().data();
  double* po = out.data().data();
  for (std::size_t i = 0; i < m; ++i) {
    const double* grow = pg + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double* brow = pb + p * n;
      double s = 0.0;
      for (std::size_t j = 0; j < n; ++j) s += grow[j] * brow[j];
      po[i * k + p] += s;
    }
  }
}

// out(k x n) += a(m x k)^T * g(m x n)
void acc_matmul_tn(const Tensor& a, const Tensor& g, Tensor& out) {
  const std::size_t m = a.rows(), k = a.cols(), n = g.cols();
  const double* pa = a.data().data();
  const double* pg = g.data().data();
  double* po = out.data().data();
  for (std::size_t i = 0; i < m; ++i) {
    const double* grow = pg + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = pa[i * k + p];
      double* orow = po + p * n;
      for (std::size_t j = 0; j < n; ++j) orow[j] += av * grow[j];
    }
  }
}

void acc(Tensor* dst, const Tensor& src, double s = 1.0) {
  if (!dst) return;
  for (std::size_t i = 0; i < src.size(); ++i) (*dst)[i] += s * src[i];
}

}  // namespace

Var matmul(Var a, Var b) {
  Graph& g = same_graph(a, b, "matmul");
  Tensor out = dattn::matmul(a.value(), b.value());
  return g.record("matmul", std::move(out), {a, b}, [](const BackwardArgs& args) {
    if (args.input_grads[0]) acc_matmul_nt(args.grad_output, *args.inputs[1], *args.input_grads[0]);
    if (args.input_grads[1]) acc_matmul_tn(*args.inputs[0], args.grad_output, *args.input_grads[1]);
  });
}

Var transpose(Var a) {
  require_matrix(a.value(), "transpose");
  return a.graph().record("transpose", dattn::transpose(a.value()), {a}, [](const BackwardArgs& args) {
    Tensor* da = args.input_grads[0];
    const Tensor& go = args.grad_output;
    for (std::size_t i = 0; i < go.rows(); ++i)
      for (std::size_t j = 0; j < go.cols(); ++j) (*da)(j, i) += go(i, j);
  });
}

Var add(Var a, Var b) {
  Graph& g = same_graph(a, b, "add");
  return g.record("add", a.value() + b.value(), {a, b}, [](const BackwardArgs& args) {
    acc(args.input_grads[0], args.grad_output);
    acc(args.input_grads[1], args.grad_output);
  });
}

Var sub(Var a, Var b) {
  Graph& g = same_graph(a, b, "sub");
  return g.record("sub", a.value() - b.value(), {a, b}, [](const BackwardArgs& args) {
    acc(args.input_grads[0], args.grad_output);
    acc(args.input_grads[1], args.grad_output, -1.0);
  });
}

Var add_row(Var a, Var row) {
  Graph& g = same_graph(a, row, "add_row");
  const Tensor& av = a.value();
  const Tensor& rv = row.value();
  require_matrix(av, "add_row");
  if (rv.size() != av.cols()) {
    throw DimensionError("add_row: row of " + shape_string(rv.shape()) + " does not fit " + shape_string(av.shape()));
  }
  Tensor out = av;
  const std::size_t n = av.cols();
  for (std::size_t i = 0; i < av.rows(); ++i)
    for (std::size_t j = 0; j < n; ++j) out(i, j) += rv[j];
  return g.record("add_row", std::move(out), {a, row}, [n](const BackwardArgs& args) {
    acc(args.input_grads[0], args.grad_output);
    if (Tensor* dr = args.input_grads[1]) {
      const Tensor& go = args.grad_output;
      for (std::size_t i = 0; i < go.size(); ++i) (*dr)[i % n] += go[i];
    }
  });
}

Var scale(Var a, double s) {
  return a.graph().record("scale", s * a.value(), {a},
                          [s](const BackwardArgs& args) { acc(args.input_grads[0], args.grad_output, s); });
}

Var scale(Var a, Var s) {
  Graph& g = same_graph(a, s, "scale");
  if (s.value().size() != 1) throw DimensionError("scale: factor must be a scalar");
  return g.record("scale_var", s.value().item() * a.value(), {a, s}, [](const BackwardArgs& args) {
    const double sv = args.inputs[1]->item();
    acc(args.input_grads[0], args.grad_output, sv);
    if (Tensor* ds = args.input_grads[1]) (*ds)[0] += dot(args.grad_output, *args.inputs[0]);
  });
}

Var shift(Var a, double c) {
  Tensor out = a.value();
  for (double& v : out.data()) v += c;
  return a.graph().record("shift", std::move(out), {a},
                          [](const BackwardArgs& args) { acc(args.input_grads[0], args.grad_output); });
}

Var hadamard(Var a, Var b) {
  Graph& g = same_graph(a, b, "hadamard");
  return g.record("hadamard", dattn::hadamard(a.value(), b.value()), {a, b}, [](const BackwardArgs& args) {
    const Tensor& go = args.grad_output;
    if (Tensor* da = args.input_grads[0])
      for (std::size_t i = 0; i < go.size(); ++i) (*da)[i] += go[i] * (*args.inputs[1])[i];
    if (Tensor* db = args.input_grads[1])
      for (std::size_t i = 0; i < go.size(); ++i) (*db)[i] += go[i] * (*args.inputs[0])[i];
  });
}

Var softmax_rows(Var a) {
  const Tensor& av = a.value();
  require_matrix(av, "softmax_rows");
  if (!av.all_finite()) throw NumericError("softmax_rows: non-finite input");
  const std::size_t m = av.rows(), n = av.cols();
  Tensor out({m, n});
  for (std::size_t i = 0; i < m; ++i) {
    double mx = av(i, 0);
    for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, av(i, j));
    double total = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      out(i, j) = std::exp(av(i, j) - mx);
      total += out(i, j);
    }
    for (std::size_t j = 0; j < n; ++j) out(i, j) /= total;
  }
  return a.graph().record("softmax_rows", std::move(out), {a}, [m, n](const BackwardArgs& args) {
    const Tensor& y = args.output;
    const Tensor& go = args.grad_output;
    Tensor& da = *args.input_grads[0];
    for (std::size_t i = 0; i < m; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < n; ++j) s += go(i, j) * y(i, j);
      for (std::size_t j = 0; j < n; ++j) da(i, j) += y(i, j) * (go(i, j) - s);
    }
  });
}

Var layer_norm_rows(Var x, Var gain, Var bias, double eps) {
  Graph& g = same_graph(x, gain, "layer_norm_rows");
  same_graph(x, bias, "layer_norm_rows");
  const Tensor& xv = x.value();
  require_matrix(xv, "layer_norm_rows");
  const std::size_t m = xv.rows(), n = xv.cols();
  if (gain.value().size() != n || bias.value().size() != n) {
    throw DimensionError("layer_norm_rows: gain/bias must have " + std::to_string(n) + " entries");
  }
  Tensor normalized({m, n});
  std::vector<double> rstd(m);
  for (std::size_t i = 0; i < m; ++i) {
    double mean = 0.0;
    for (std::size_t j = 0; j < n; ++j) mean += xv(i, j);
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t j = 0; j < n; ++j) var += (xv(i, j) - mean) * (xv(i, j) - mean);
    var /= static_cast<double>(n);
    rstd[i] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < n; ++j) normalized(i, j) = (xv(i, j) - mean) * rstd[i];
  }
  Tensor out({m, n});
  const Tensor& gv = gain.value();
  const Tensor& bv = bias.value();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out(i, j) = normalized(i, j) * gv[j] + bv[j];

  return g.record("layer_norm_rows", std::move(out), {x, gain, bias},
                  [m, n, normalized = std::move(normalized), rstd = std::move(rstd)](const BackwardArgs& args) {
                    const Tensor& go = args.grad_output;
                    const Tensor& gv = *args.inputs[1];
                    if (Tensor* dg = args.input_grads[1])
                      for (std::size_t i = 0; i < m; ++i)
                        for (std::size_t j = 0; j < n; ++j) (*dg)[j] += go(i, j) * normalized(i, j);
                    if (Tensor* db = args.input_grads[2])
                      for (std::size_t i = 0; i < m; ++i)
                        for (std::size_t j = 0; j < n; ++j) (*db)[j] += go(i, j);
                    if (Tensor* dx = args.input_grads[0]) {
                      const double inv_n = 1.0 / static_cast<double>(n);
                      for (std::size_t i = 0; i < m; ++i) {
                        double mean_d = 0.0, mean_dx = 0.0;
                        for (std::size_t j = 0; j < n; ++j) {
                          const double d = go(i, j) * gv[j];
                          mean_d += d;
                          mean_dx += d * normalized(i, j);
                        }
                        mean_d *= inv_n;
                        mean_dx *= inv_n;
                        for (std::size_t j = 0; j < n; ++j) {
                          const double d = go(i, j) * gv[j];
                          (*dx)(i, j) += rstd[i] * (d - mean_d - normalized(i, j) * mean_dx);
                        }
                      }
                    }
                  });
}

Var gelu(Var a) {
  Tensor out = a.value();
  for (double& v : out.data()) v = 0.5 * v * (1.0 + std::erf(v * std::numbers::sqrt2 / 2.0));
  return a.graph().record("gelu", std::move(out), {a}, [](const BackwardArgs& args) {
    const Tensor& x = *args.inputs[0];
    const Tensor& go = args.grad_output;
    Tensor& dx = *args.input_grads[0];
    const double inv_sqrt_2pi = 1.0 / std::sqrt(2.0 * std::numbers::pi);
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double v = x[i];
      const double cdf = 0.5 * (1.0 + std::erf(v * std::numbers::sqrt2 / 2.0));
      const double pdf = inv_sqrt_2pi * std::exp(-0.5 * v * v);
      dx[i] += go[i] * (cdf + v * pdf);
    }
  });
}

Var relu(Var a) { return clamp_min(a, 0.0); }

Var tanh(Var a) {
  Tensor out = a.value();
  for (double& v : out.data()) v = std::tanh(v);
  return a.graph().record("tanh", std::move(out), {a}, [](const BackwardArgs& args) {
    const Tensor& y = args.output;
    for (std::size_t i = 0; i < y.size(); ++i) (*args.input_grads[0])[i] += args.grad_output[i] * (1.0 - y[i] * y[i]);
  });
}

Var clamp_min(Var a, double floor) {
  Tensor out = a.value();
  for (double& v : out.data()) v = std::max(v, floor);
  return a.graph().record("clamp_min", std::move(out), {a}, [floor](const BackwardArgs& args) {
    const Tensor& x = *args.inputs[0];
    for (std::size_t i = 0; i < x.size(); ++i)
      if (x[i] > floor) (*args.input_grads[0])[i] += args.grad_output[i];
  });
}

Var sum(Var a) {
  double s = 0.0;
  for (double v : a.value().data()) s += v;
  return a.graph().record("sum", Tensor::scalar(s), {a}, [](const BackwardArgs& args) {
    const double go = args.grad_output[0];
    for (double& v : args.input_grads[0]->data()) v += go;
  });
}

Var inner(Var a, Var b) {
  Graph& g = same_graph(a, b, "inner");
  require_same_shape(a.value(), b.value(), "inner");
  return g.record("inner", Tensor::scalar(dot(a.value(), b.value())), {a, b}, [](const BackwardArgs& args) {
    const double go = args.grad_output[0];
    acc(args.input_grads[0], *args.inputs[1], go);
    acc(args.input_grads[1], *args.inputs[0], go);
  });
}

Var concat_rows(Var top, Var bottom) {
  Graph& g = same_graph(top, bottom, "concat_rows");
  const Tensor& t = top.value();
  const Tensor& b = bottom.value();
  require_matrix(t, "concat_rows");
  require_matrix(b, "concat_rows");
  if (t.cols() != b.cols()) throw DimensionError("concat_rows: column counts differ");
  std::vector<double> data(t.values());
  data.insert(data.end(), b.values().begin(), b.values().end());
  const std::size_t split = t.size();
  return g.record("concat_rows", Tensor({t.rows() + b.rows(), t.cols()}, std::move(data)), {top, bottom},
                  [split](const BackwardArgs& args) {
                    const Tensor& go = args.grad_output;
                    if (Tensor* dt = args.input_grads[0])
                      for (std::size_t i = 0; i < split; ++i) (*dt)[i] += go[i];
                    if (Tensor* db = args.input_grads[1])
                      for (std::size_t i = split; i < go.size(); ++i) (*db)[i - split] += go[i];
                  });
}

Var slice_rows(Var a, std::size_t begin, std::size_t count) {
  const Tensor& av = a.value();
  require_matrix(av, "slice_rows");
  if (count == 0 || begin + count > av.rows()) throw DimensionError("slice_rows: range outside matrix");
  const std::size_t n = av.cols();
  std::vector<double> data(av.values().begin() + begin * n, av.values().begin() + (begin + count) * n);
  const std::size_t offset = begin * n;
  return a.graph().record("slice_rows", Tensor({count, n}, std::move(data)), {a}, [offset](const BackwardArgs& args) {
    const Tensor& go = args.grad_output;
    for (std::size_t i = 0; i < go.size(); ++i) (*args.input_grads[0])[offset + i] += go[i];
  });
}

Var reshape(Var a, Shape shape) {
  return a.graph().record("reshape", a.value().reshaped(std::move(shape)), {a},
                          [](const BackwardArgs& args) { acc(args.input_grads[0], args.grad_output); });
}

Var element(Var a, std::size_t flat_index) {
  if (flat_index >= a.value().size()) throw DimensionError("element: index out of range");
  return a.graph().record("element", Tensor::scalar(a.value()[flat_index]), {a}, [flat_index](const BackwardArgs& args) {
    (*args.input_grads[0])[flat_index] += args.grad_output[0];
  });
}

namespace {

struct PatchGeometry {
  std::size_t channels, height, width, patch, grid_h, grid_w;
};

PatchGeometry patch_geometry(const Tensor& image, std::size_t patch) {
  if (image.rank() != 3) throw DimensionError("patchify: expected C x H x W, got " + shape_string(image.shape()));
  const auto& s = image.shape();
  if (patch == 0 || s[1] % patch != 0 || s[2] % patch != 0) {
    throw DimensionError("patchify: patch " + std::to_string(patch) + " does not tile " + shape_string(s));
  }
  return {s[0], s[1], s[2], patch, s[1] / patch, s[2] / patch};
}

// Source offset in the image for (token, feature).
template <typename F>
void for_each_patch_element(const PatchGeometry& g, F&& f) {
  const std::size_t feat = g.channels * g.patch * g.patch;
  for (std::size_t ty = 0; ty < g.grid_h; ++ty)
    for (std::size_t tx = 0; tx < g.grid_w; ++tx) {
      const std::size_t token = ty * g.grid_w + tx;
      for (std::size_t c = 0; c < g.channels; ++c)
        for (std::size_t dy = 0; dy < g.patch; ++dy)
          for (std::size_t dx = 0; dx < g.patch; ++dx) {
            const std::size_t src = (c * g.height + ty * g.patch + dy) * g.width + tx * g.patch + dx;
            const std::size_t dst = token * feat + (c * g.patch + dy) * g.patch + dx;
            f(src, dst);
          }
    }
}

}  // namespace

Tensor patchify(const Tensor& image, std::size_t patch) {
  const PatchGeometry g = patch_geometry(image, patch);
  Tensor out({g.grid_h * g.grid_w, g.channels * patch * patch});
  for_each_patch_element(g, [&](std::size_t src, std::size_t dst) { out[dst] = image[src]; });
  return out;
}

Var patchify(Var image, std::size_t patch) {
  const PatchGeometry geom = patch_geometry(image.value(), patch);
  return image.graph().record("patchify", patchify(image.value(), patch), {image}, [geom](const BackwardArgs& args) {
    Tensor& di = *args.input_grads[0];
    const Tensor& go = args.grad_output;
    for_each_patch_element(geom, [&](std::size_t src, std::size_t dst) { di[src] += go[dst]; });
  });
}

Var cross_entropy(Var logits, std::size_t label) {
  const Tensor& z = logits.value();
  if (label >= z.size()) throw DimensionError("cross_entropy: label " + std::to_string(label) + " out of range");
  double mx = z[0];
  for (double v : z.data()) mx = std::max(mx, v);
  double total = 0.0;
  for (double v : z.data()) total += std::exp(v - mx);
  const double lse = mx + std::log(total);
  return logits.graph().record("cross_entropy", Tensor::scalar(lse - z[label]), {logits},
                               [label, lse](const BackwardArgs& args) {
                                 const Tensor& zv = *args.inputs[0];
                                 const double go = args.grad_output[0];
                                 Tensor& dz = *args.input_grads[0];
                                 for (std::size_t i = 0; i < zv.size(); ++i) dz[i] += go * std::exp(zv[i] - lse);
                                 dz[label] -= go;
                               });
}

Tensor finite_diff_grad(const std::function<double(const Tensor&)>& f, const Tensor& x, double h) {
  if (!(h > 0.0)) throw ConfigError("finite_diff_grad: step must be positive");
  Tensor g(x.shape());
  Tensor probe = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = probe[i];
    probe[i] = orig + h;
    const double up = f(probe);
    probe[i] = orig - h;
    const double down = f(probe);
    probe[i] = orig;
    g[i] = (up - down) / (2.0 * h);
  }
  return g;
}

}  // namespace dattn
