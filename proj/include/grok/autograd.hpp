#pragma once

// Minimal reverse-mode automatic differentiation over dense 2-D tensors.
//
// Every op records its inputs and a backward closure on the output node.
// backward() walks the recorded graph in reverse topological order. Leaf
// tensors created with parameter() accumulate gradients across calls until
// zero_grad(); intermediate gradients are rebuilt on every call. A graph is
// confined to the thread that built it.

#include <algorithm>
#include <cmath>
#include <functional>
#include <iostream>
#include <memory>
#include <numbers>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "grok/filter.hpp"
#include "grok/linalg.hpp"
#include "grok/rng.hpp"

namespace grok::ad {

struct Node {
  Matrix value;
  Matrix grad;  // empty until something flows into it
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward;

  bool is_leaf() const { return inputs.empty(); }

  Matrix& grad_buffer() {
    if (grad.empty() && !value.empty()) grad = Matrix(value.rows(), value.cols());
    return grad;
  }
  void accumulate(const Matrix& g) { grad_buffer() += g; }
};

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  const Matrix& value() const { return node_->value; }
  /// Direct write access for optimizers and checkpoint loading. Does not
  /// invalidate graphs already recorded from this tensor.
  Matrix& mutable_value() { return node_->value; }
  const Matrix& grad() const { return node_->grad; }
  /// Write access for callers that supply gradients without a tape.
  Matrix& mutable_grad() { return node_->grad; }
  bool requires_grad() const { return node_->requires_grad; }
  std::size_t rows() const { return node_->value.rows(); }
  std::size_t cols() const { return node_->value.cols(); }
  double item() const {
    if (node_->value.size() != 1) throw PreconditionError("item(): tensor is not a scalar");
    return node_->value[0];
  }
  void zero_grad() { node_->grad = Matrix(); }
  bool defined() const { return static_cast<bool>(node_); }
  const std::shared_ptr<Node>& node() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

inline Tensor parameter(Matrix value) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->requires_grad = true;
  return Tensor(std::move(n));
}

inline Tensor constant(Matrix value) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  return Tensor(std::move(n));
}

namespace detail {

inline Tensor record(const char* op, Matrix value, std::vector<Tensor> inputs,
                     std::function<void(Node&)> backward) {
  if (!all_finite(value))
    throw NumericalError(std::string("non-finite value produced by op '") + op + "'");
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->op = op;
  for (auto& t : inputs) {
    n->requires_grad = n->requires_grad || t.requires_grad();
    n->inputs.push_back(t.node());
  }
  if (n->requires_grad) n->backward = std::move(backward);
  return Tensor(std::move(n));
}

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (!a.value().same_shape(b.value()))
    throw PreconditionError(std::string(op) + ": shape mismatch (" + std::to_string(a.rows()) +
                            "x" + std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) +
                            "x" + std::to_string(b.cols()) + ")");
}

}  // namespace detail

/// Reverse accumulation from a 1×1 loss. Returns the number of trainable
/// leaves reached; zero means the loss is detached from every parameter.
inline std::size_t backward(const Tensor& loss) {
  if (loss.value().size() != 1) throw PreconditionError("backward: loss must be a scalar");
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack{{loss.node().get(), 0}};
  seen.insert(loss.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node* child = node->inputs[next++].get();
      if (child->requires_grad && seen.insert(child).second) stack.emplace_back(child, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  std::size_t leaves = 0;
  for (Node* n : order) {
    if (!n->is_leaf()) n->grad = Matrix();
    else if (n->requires_grad) ++leaves;
  }
  if (!loss.requires_grad()) {
    std::clog << "warning: backward on a loss with no trainable inputs\n";
    return 0;
  }
  loss.node()->accumulate(Matrix(1, 1, 1.0));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->is_leaf() || !n->backward) continue;
    n->grad_buffer();
    n->backward(*n);
  }
  return leaves;
}

// ---------------------------------------------------------------------------
// Ops. Backward closures read input values through n.inputs[i]->value.

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  return detail::record("matmul", grok::matmul(a.value(), b.value()), {a, b}, [](Node& n) {
    auto& x = *n.inputs[0];
    auto& y = *n.inputs[1];
    if (x.requires_grad) x.accumulate(matmul_nt(n.grad, y.value));
    if (y.requires_grad) y.accumulate(matmul_tn(x.value, n.grad));
  });
}

inline Tensor transpose(const Tensor& a) {
  return detail::record("transpose", a.value().transposed(), {a},
                        [](Node& n) { n.inputs[0]->accumulate(n.grad.transposed()); });
}

inline Tensor add(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "add");
  return detail::record("add", a.value() + b.value(), {a, b}, [](Node& n) {
    for (auto& in : n.inputs)
      if (in->requires_grad) in->accumulate(n.grad);
  });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "sub");
  return detail::record("sub", a.value() - b.value(), {a, b}, [](Node& n) {
    if (n.inputs[0]->requires_grad) n.inputs[0]->accumulate(n.grad);
    if (n.inputs[1]->requires_grad) n.inputs[1]->accumulate(n.grad * -1.0);
  });
}

/// Elementwise product.
inline Tensor mul(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "mul");
  Matrix out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
  return detail::record("mul", std::move(out), {a, b}, [](Node& n) {
    auto& x = *n.inputs[0];
    auto& y = *n.inputs[1];
    if (x.requires_grad) {
      Matrix g = n.grad;
      for (std::size_t i = 0; i < g.size(); ++i) g[i] *= y.value[i];
      x.accumulate(g);
    }
    if (y.requires_grad) {
      Matrix g = n.grad;
      for (std::size_t i = 0; i < g.size(); ++i) g[i] *= x.value[i];
      y.accumulate(g);
    }
  });
}

inline Tensor scale(const Tensor& a, double s) {
  return detail::record("scale", a.value() * s, {a},
                        [s](Node& n) { n.inputs[0]->accumulate(n.grad * s); });
}

/// a (r×c) + bias (1×c) broadcast over rows.
inline Tensor add_row(const Tensor& a, const Tensor& bias) {
  if (bias.rows() != 1 || bias.cols() != a.cols())
    throw PreconditionError("add_row: bias must be 1 x " + std::to_string(a.cols()));
  Matrix out = a.value();
  for (std::size_t i = 0; i < out.rows(); ++i)
    for (std::size_t j = 0; j < out.cols(); ++j) out(i, j) += bias.value()[j];
  return detail::record("add_row", std::move(out), {a, bias}, [](Node& n) {
    if (n.inputs[0]->requires_grad) n.inputs[0]->accumulate(n.grad);
    if (n.inputs[1]->requires_grad) {
      Matrix g(1, n.grad.cols());
      for (std::size_t i = 0; i < n.grad.rows(); ++i)
        for (std::size_t j = 0; j < n.grad.cols(); ++j) g[j] += n.grad(i, j);
      n.inputs[1]->accumulate(g);
    }
  });
}

/// GELU, tanh approximation.
inline Tensor gelu(const Tensor& a) {
  constexpr double c = 0.7978845608028654;  // √(2/π)
  Matrix out = a.value();
  for (double& x : out.values()) x = 0.5 * x * (1.0 + std::tanh(c * (x + 0.044715 * x * x * x)));
  return detail::record("gelu", std::move(out), {a}, [](Node& n) {
    const Matrix& x = n.inputs[0]->value;
    Matrix g = n.grad;
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double v = x[i];
      const double u = c * (v + 0.044715 * v * v * v);
      const double t = std::tanh(u);
      const double du = c * (1.0 + 3.0 * 0.044715 * v * v);
      g[i] *= 0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * du;
    }
    n.inputs[0]->accumulate(g);
  });
}

namespace detail {
// Softmax along rows (by_rows) or columns, max-shifted.
inline Matrix softmax(const Matrix& x, bool by_rows) {
  Matrix out = x;
  const std::size_t outer = by_rows ? x.rows() : x.cols();
  const std::size_t inner = by_rows ? x.cols() : x.rows();
  auto at = [&](std::size_t o, std::size_t i) -> double& {
    return by_rows ? out(o, i) : out(i, o);
  };
  for (std::size_t o = 0; o < outer; ++o) {
    double mx = -INFINITY;
    for (std::size_t i = 0; i < inner; ++i) mx = std::max(mx, at(o, i));
    double sum = 0.0;
    for (std::size_t i = 0; i < inner; ++i) sum += (at(o, i) = std::exp(at(o, i) - mx));
    for (std::size_t i = 0; i < inner; ++i) at(o, i) /= sum;
  }
  return out;
}

inline Tensor softmax_op(const Tensor& a, bool by_rows) {
  Matrix out = softmax(a.value(), by_rows);
  Matrix saved = out;
  return record(by_rows ? "softmax_rows" : "softmax_cols", std::move(out), {a},
                [s = std::move(saved), by_rows](Node& n) {
                  Matrix g(s.rows(), s.cols());
                  const std::size_t outer = by_rows ? s.rows() : s.cols();
                  const std::size_t inner = by_rows ? s.cols() : s.rows();
                  auto idx = [&](std::size_t o, std::size_t i) {
                    return by_rows ? o * s.cols() + i : i * s.cols() + o;
                  };
                  for (std::size_t o = 0; o < outer; ++o) {
                    double dot = 0.0;
                    for (std::size_t i = 0; i < inner; ++i) dot += n.grad[idx(o, i)] * s[idx(o, i)];
                    for (std::size_t i = 0; i < inner; ++i)
                      g[idx(o, i)] = s[idx(o, i)] * (n.grad[idx(o, i)] - dot);
                  }
                  n.inputs[0]->accumulate(g);
                });
}
}  // namespace detail

/// Softmax of each row (normalizes across columns).
inline Tensor softmax_rows(const Tensor& a) { return detail::softmax_op(a, true); }
/// Softmax of each column (normalizes across rows).
inline Tensor softmax_cols(const Tensor& a) { return detail::softmax_op(a, false); }

/// Per-row normalization with biased variance (divide by d) and ε = 1e−5,
/// then γ ⊙ x̂ + β with γ, β of shape 1×d.
inline Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                         double eps = 1e-5) {
  const std::size_t d = x.cols();
  if (gamma.rows() != 1 || gamma.cols() != d || beta.rows() != 1 || beta.cols() != d)
    throw PreconditionError("layer_norm: gamma/beta must be 1 x " + std::to_string(d));
  Matrix xhat(x.rows(), d);
  std::vector<double> inv_std(x.rows());
  Matrix out(x.rows(), d);
  for (std::size_t i = 0; i < x.rows(); ++i) {
    const auto row = x.value().row(i);
    double mean = 0.0;
    for (double v : row) mean += v;
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (double v : row) var += (v - mean) * (v - mean);
    var /= static_cast<double>(d);
    inv_std[i] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < d; ++j) {
      xhat(i, j) = (row[j] - mean) * inv_std[i];
      out(i, j) = gamma.value()[j] * xhat(i, j) + beta.value()[j];
    }
  }
  return detail::record(
      "layer_norm", std::move(out), {x, gamma, beta},
      [xhat = std::move(xhat), inv_std = std::move(inv_std), d](Node& n) {
        auto& xin = *n.inputs[0];
        auto& gin = *n.inputs[1];
        auto& bin = *n.inputs[2];
        if (gin.requires_grad || bin.requires_grad) {
          Matrix dg(1, d), db(1, d);
          for (std::size_t i = 0; i < n.grad.rows(); ++i)
            for (std::size_t j = 0; j < d; ++j) {
              dg[j] += n.grad(i, j) * xhat(i, j);
              db[j] += n.grad(i, j);
            }
          if (gin.requires_grad) gin.accumulate(dg);
          if (bin.requires_grad) bin.accumulate(db);
        }
        if (xin.requires_grad) {
          Matrix dx(n.grad.rows(), d);
          for (std::size_t i = 0; i < n.grad.rows(); ++i) {
            double sum_g = 0.0, sum_gx = 0.0;
            for (std::size_t j = 0; j < d; ++j) {
              const double gh = n.grad(i, j) * gin.value[j];
              sum_g += gh;
              sum_gx += gh * xhat(i, j);
            }
            for (std::size_t j = 0; j < d; ++j) {
              const double gh = n.grad(i, j) * gin.value[j];
              dx(i, j) = inv_std[i] / static_cast<double>(d) *
                         (static_cast<double>(d) * gh - sum_g - xhat(i, j) * sum_gx);
            }
          }
          xin.accumulate(dx);
        }
      });
}

inline Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (double v : a.value().values()) s += v;
  return detail::record("sum", Matrix(1, 1, s), {a}, [](Node& n) {
    const auto& in = n.inputs[0]->value;
    n.inputs[0]->accumulate(Matrix(in.rows(), in.cols(), n.grad[0]));
  });
}

inline Tensor mean(const Tensor& a) {
  return scale(sum(a), 1.0 / static_cast<double>(a.value().size()));
}

inline Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw PreconditionError("concat_cols: nothing to concatenate");
  const std::size_t rows = parts.front().rows();
  std::size_t cols = 0;
  std::vector<std::size_t> offsets;
  for (const auto& p : parts) {
    if (p.rows() != rows) throw PreconditionError("concat_cols: row count mismatch");
    offsets.push_back(cols);
    cols += p.cols();
  }
  Matrix out(rows, cols);
  for (std::size_t k = 0; k < parts.size(); ++k)
    for (std::size_t i = 0; i < rows; ++i)
      for (std::size_t j = 0; j < parts[k].cols(); ++j) out(i, offsets[k] + j) = parts[k].value()(i, j);
  return detail::record("concat_cols", std::move(out), parts, [offsets](Node& n) {
    for (std::size_t k = 0; k < n.inputs.size(); ++k) {
      auto& in = *n.inputs[k];
      if (!in.requires_grad) continue;
      Matrix g(in.value.rows(), in.value.cols());
      for (std::size_t i = 0; i < g.rows(); ++i)
        for (std::size_t j = 0; j < g.cols(); ++j) g(i, j) = n.grad(i, offsets[k] + j);
      in.accumulate(g);
    }
  });
}

/// Columns [begin, begin + count).
inline Tensor slice_cols(const Tensor& a, std::size_t begin, std::size_t count) {
  if (begin + count > a.cols()) throw PreconditionError("slice_cols: range out of bounds");
  Matrix out(a.rows(), count);
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < count; ++j) out(i, j) = a.value()(i, begin + j);
  return detail::record("slice_cols", std::move(out), {a}, [begin, count](Node& n) {
    auto& in = *n.inputs[0];
    Matrix g(in.value.rows(), in.value.cols());
    for (std::size_t i = 0; i < g.rows(); ++i)
      for (std::size_t j = 0; j < count; ++j) g(i, begin + j) = n.grad(i, j);
    in.accumulate(g);
  });
}

/// Inverted dropout; identity when p == 0.
inline Tensor dropout(const Tensor& a, double p, Rng& rng) {
  if (p <= 0.0) return a;
  if (p >= 1.0) throw PreconditionError("dropout: p must be < 1");
  Matrix mask(a.rows(), a.cols());
  for (double& m : mask.values()) m = rng.uniform() < p ? 0.0 : 1.0 / (1.0 - p);
  Matrix out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= mask[i];
  return detail::record("dropout", std::move(out), {a}, [mask = std::move(mask)](Node& n) {
    Matrix g = n.grad;
    for (std::size_t i = 0; i < g.size(); ++i) g[i] *= mask[i];
    n.inputs[0]->accumulate(g);
  });
}

/// Row i of y scaled by h(i, 0).
inline Tensor scale_rows(const Tensor& h, const Tensor& y) {
  if (h.cols() != 1 || h.rows() != y.rows())
    throw PreconditionError("scale_rows: h must be a column with one entry per row");
  Matrix out = y.value();
  for (std::size_t i = 0; i < out.rows(); ++i)
    for (double& v : out.row(i)) v *= h.value()[i];
  return detail::record("scale_rows", std::move(out), {h, y}, [](Node& n) {
    auto& hin = *n.inputs[0];
    auto& yin = *n.inputs[1];
    if (hin.requires_grad) {
      Matrix g(hin.value.rows(), 1);
      for (std::size_t i = 0; i < n.grad.rows(); ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < n.grad.cols(); ++j) s += n.grad(i, j) * yin.value(i, j);
        g[i] = s;
      }
      hin.accumulate(g);
    }
    if (yin.requires_grad) {
      Matrix g = n.grad;
      for (std::size_t i = 0; i < g.rows(); ++i)
        for (double& v : g.row(i)) v *= hin.value[i];
      yin.accumulate(g);
    }
  });
}

/// h(λᵢ) as an n×1 column from coefficient tensors a, b (K×(M+1)) and
/// alpha (K×1). The gradient of b's m = 0 column is held at zero.
inline Tensor fourier_response(std::shared_ptr<const FourierBasisTable> table, const Tensor& a,
                               const Tensor& b, const Tensor& alpha) {
  const std::size_t K = table->K(), M = table->M(), n = table->n();
  if (a.rows() != K || a.cols() != M + 1 || b.rows() != K || b.cols() != M + 1 ||
      alpha.rows() != K || alpha.cols() != 1)
    throw PreconditionError("fourier_response: coefficient shapes do not match the basis table");
  Matrix bases(K, n);  // b_k(λᵢ), kept for the α gradient
  Matrix out(n, 1);
  for (std::size_t k = 0; k < K; ++k) {
    const auto bk = table->basis(k, a.value().row(k), b.value().row(k));
    for (std::size_t i = 0; i < n; ++i) {
      bases(k, i) = bk[i];
      out[i] += alpha.value()[k] * bk[i];
    }
  }
  return detail::record(
      "fourier_response", std::move(out), {a, b, alpha},
      [table = std::move(table), bases = std::move(bases), K, M, n](Node& node) {
        auto& ain = *node.inputs[0];
        auto& bin = *node.inputs[1];
        auto& alin = *node.inputs[2];
        if (alin.requires_grad) {
          Matrix g(K, 1);
          for (std::size_t k = 0; k < K; ++k)
            for (std::size_t i = 0; i < n; ++i) g[k] += node.grad[i] * bases(k, i);
          alin.accumulate(g);
        }
        if (ain.requires_grad || bin.requires_grad) {
          Matrix ga(K, M + 1), gb(K, M + 1);
          for (std::size_t k = 0; k < K; ++k) {
            const double w = alin.value[k];
            for (std::size_t i = 0; i < n; ++i) {
              const double gi = node.grad[i] * w;
              if (gi == 0.0) continue;
              const auto c = table->cos_row(k, i);
              const auto s = table->sin_row(k, i);
              for (std::size_t m = 0; m <= M; ++m) {
                ga(k, m) += gi * c[m];
                gb(k, m) += gi * s[m];
              }
            }
            gb(k, 0) = 0.0;
          }
          if (ain.requires_grad) ain.accumulate(ga);
          if (bin.requires_grad) bin.accumulate(gb);
        }
      });
}

/// Column-wise maximum, 1×d.
inline Tensor max_pool_rows(const Tensor& x) {
  if (x.rows() == 0) throw PreconditionError("max_pool_rows: no rows to pool");
  Matrix out(1, x.cols());
  std::vector<std::size_t> arg(x.cols(), 0);
  for (std::size_t j = 0; j < x.cols(); ++j) {
    for (std::size_t i = 1; i < x.rows(); ++i)
      if (x.value()(i, j) > x.value()(arg[j], j)) arg[j] = i;
    out[j] = x.value()(arg[j], j);
  }
  return detail::record("max_pool_rows", std::move(out), {x}, [arg = std::move(arg)](Node& n) {
    auto& in = *n.inputs[0];
    Matrix g(in.value.rows(), in.value.cols());
    for (std::size_t j = 0; j < arg.size(); ++j) g(arg[j], j) = n.grad[j];
    in.accumulate(g);
  });
}

/// Mean over the masked rows of −log max(p[i, label_i], 1e−12).
inline Tensor cross_entropy_masked(const Tensor& probs, const std::vector<int>& labels,
                                   const std::vector<std::size_t>& mask) {
  if (mask.empty()) throw PreconditionError("cross_entropy_masked: empty mask");
  if (labels.size() != probs.rows()) throw PreconditionError("cross_entropy_masked: label count mismatch");
  constexpr double floor = 1e-12;
  double loss = 0.0;
  for (std::size_t i : mask) {
    if (i >= probs.rows()) throw PreconditionError("cross_entropy_masked: mask index out of range");
    const int c = labels[i];
    if (c < 0 || static_cast<std::size_t>(c) >= probs.cols())
      throw PreconditionError("cross_entropy_masked: label out of range");
    loss -= std::log(std::max(probs.value()(i, c), floor));
  }
  const double inv = 1.0 / static_cast<double>(mask.size());
  return detail::record("cross_entropy", Matrix(1, 1, loss * inv), {probs},
                        [labels, mask, inv](Node& n) {
                          auto& in = *n.inputs[0];
                          Matrix g(in.value.rows(), in.value.cols());
                          for (std::size_t i : mask) {
                            const double p = in.value(i, labels[i]);
                            if (p > floor) g(i, labels[i]) -= n.grad[0] * inv / p;
                          }
                          in.accumulate(g);
                        });
}

}  // namespace grok::ad
