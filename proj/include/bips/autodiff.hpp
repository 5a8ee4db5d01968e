#pragma once

// Minimal reverse-mode automatic differentiation over dense vectors.
//
// A Tape records nodes in creation order; backward() walks them in reverse.
// Every node holds a value vector and, after backward(), its adjoint. The
// op set is exactly what the training objectives need: affine maps,
// tanh/ReLU, (log-)softmax, exp/log, elementwise arithmetic, reductions,
// min-with-constant, clip, pairwise min and stop-gradient.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "bips/errors.hpp"

namespace bips::ad {

class Tape;

// Handle to a node on a specific tape.
struct Var {
  std::size_t index = 0;
  const Tape* tape = nullptr;
};

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Trainable input; its gradient is available after backward().
  Var variable(std::vector<double> value) { return push(std::move(value), true); }

  Var constant(std::vector<double> value) { return push(std::move(value), false); }
  Var constant(double v) { return constant(std::vector<double>{v}); }

  const std::vector<double>& value(Var v) const { return node(v).value; }
  double scalar(Var v) const {
    const auto& n = node(v);
    if (n.value.size() != 1) throw GraphError("node is not a scalar");
    return n.value[0];
  }
  const std::vector<double>& grad(Var v) const { return node(v).grad; }
  std::size_t size(Var v) const { return node(v).value.size(); }

  // y = W x + b, W stored row-major with shape (rows = |b|, cols = |x|).
  Var affine(Var w, Var x, Var b) {
    const std::size_t rows = size(b), cols = size(x);
    if (size(w) != rows * cols) throw GraphError("affine shape mismatch");
    std::vector<double> y(rows);
    const auto& W = value(w);
    const auto& X = value(x);
    const auto& B = value(b);
    for (std::size_t r = 0; r < rows; ++r) {
      double acc = B[r];
      const double* wr = &W[r * cols];
      for (std::size_t c = 0; c < cols; ++c) acc += wr[c] * X[c];
      y[r] = acc;
    }
    return push_op(std::move(y), {w, x, b}, [=](Tape& t, std::size_t self) {
      const auto gy = t.nodes_[self].grad;
      auto& nw = t.nodes_[w.index];
      auto& nx = t.nodes_[x.index];
      auto& nb = t.nodes_[b.index];
      for (std::size_t r = 0; r < rows; ++r) {
        const double g = gy[r];
        if (g == 0.0) continue;
        if (nb.needs_grad) nb.grad[r] += g;
        if (nw.needs_grad) {
          double* gw = &nw.grad[r * cols];
          for (std::size_t c = 0; c < cols; ++c) gw[c] += g * nx.value[c];
        }
        if (nx.needs_grad) {
          const double* wr = &nw.value[r * cols];
          for (std::size_t c = 0; c < cols; ++c) nx.grad[c] += g * wr[c];
        }
      }
    });
  }

  Var tanh(Var a) {
    auto y = value(a);
    for (auto& v : y) v = std::tanh(v);
    return push_op(std::move(y), {a}, [=](Tape& t, std::size_t self) {
      auto& n = t.nodes_[self];
      auto& na = t.nodes_[a.index];
      for (std::size_t i = 0; i < n.grad.size(); ++i)
        na.grad[i] += n.grad[i] * (1.0 - n.value[i] * n.value[i]);
    });
  }

  Var relu(Var a) {
    auto y = value(a);
    for (auto& v : y) v = std::max(v, 0.0);
    return push_op(std::move(y), {a}, [=](Tape& t, std::size_t self) {
      auto& n = t.nodes_[self];
      auto& na = t.nodes_[a.index];
      for (std::size_t i = 0; i < n.grad.size(); ++i)
        if (na.value[i] > 0.0) na.grad[i] += n.grad[i];
    });
  }

  // log(softmax(z / temperature)), computed with the max shift.
  Var log_softmax(Var z, double temperature = 1.0) {
    if (!(temperature > 0.0)) throw GraphError("temperature must be positive");
    const auto& Z = value(z);
    std::vector<double> y(Z.size());
    double m = -INFINITY;
    for (double v : Z) m = std::max(m, v / temperature);
    double s = 0.0;
    for (double v : Z) s += std::exp(v / temperature - m);
    const double lse = m + std::log(s);
    for (std::size_t i = 0; i < Z.size(); ++i) y[i] = Z[i] / temperature - lse;
    return push_op(std::move(y), {z}, [=](Tape& t, std::size_t self) {
      auto& n = t.nodes_[self];
      auto& nz = t.nodes_[z.index];
      double gsum = 0.0;
      for (double g : n.grad) gsum += g;
      for (std::size_t i = 0; i < n.grad.size(); ++i)
        nz.grad[i] += (n.grad[i] - std::exp(n.value[i]) * gsum) / temperature;
    });
  }

  Var softmax(Var z, double temperature = 1.0) { return exp(log_softmax(z, temperature)); }

  Var exp(Var a) {
    auto y = value(a);
    for (auto& v : y) v = std::exp(v);
    return push_op(std::move(y), {a}, [=](Tape& t, std::size_t self) {
      auto& n = t.nodes_[self];
      auto& na = t.nodes_[a.index];
      for (std::size_t i = 0; i < n.grad.size(); ++i)
        na.grad[i] += n.grad[i] * n.value[i];
    });
  }

  Var log(Var a) {
    auto y = value(a);
    for (auto& v : y) {
      if (!(v > 0.0)) throw NonFiniteError("log of a non-positive value");
      v = std::log(v);
    }
    return push_op(std::move(y), {a}, [=](Tape& t, std::size_t self) {
      auto& n = t.nodes_[self];
      auto& na = t.nodes_[a.index];
      for (std::size_t i = 0; i < n.grad.size(); ++i)
        na.grad[i] += n.grad[i] / na.value[i];
    });
  }

  Var add(Var a, Var b) { return binary(a, b, [](double x, double y) { return x + y; }, 1, 1); }
  Var sub(Var a, Var b) { return binary(a, b, [](double x, double y) { return x - y; }, 1, -1); }

  // Elementwise product; a scalar operand broadcasts.
  Var mul(Var a, Var b) {
    const std::size_t na = size(a), nb = size(b);
    if (na != nb && na != 1 && nb != 1) throw GraphError("mul shape mismatch");
    const std::size_t n = std::max(na, nb);
    std::vector<double> y(n);
    for (std::size_t i = 0; i < n; ++i)
      y[i] = value(a)[na == 1 ? 0 : i] * value(b)[nb == 1 ? 0 : i];
    return push_op(std::move(y), {a, b}, [=](Tape& t, std::size_t self) {
      auto& node = t.nodes_[self];
      auto& A = t.nodes_[a.index];
      auto& B = t.nodes_[b.index];
      for (std::size_t i = 0; i < n; ++i) {
        const std::size_t ia = na == 1 ? 0 : i, ib = nb == 1 ? 0 : i;
        A.grad[ia] += node.grad[i] * B.value[ib];
        B.grad[ib] += node.grad[i] * A.value[ia];
      }
    });
  }

  Var scale(Var a, double s) {
    auto y = value(a);
    for (auto& v : y) v *= s;
    return push_op(std::move(y), {a}, [=](Tape& t, std::size_t self) {
      auto& n = t.nodes_[self];
      auto& na = t.nodes_[a.index];
      for (std::size_t i = 0; i < n.grad.size(); ++i) na.grad[i] += s * n.grad[i];
    });
  }

  Var sum(Var a) {
    double s = 0.0;
    for (double v : value(a)) s += v;
    return push_op({s}, {a}, [=](Tape& t, std::size_t self) {
      const double g = t.nodes_[self].grad[0];
      for (auto& ga : t.nodes_[a.index].grad) ga += g;
    });
  }

  Var mean(Var a) { return scale(sum(a), 1.0 / static_cast<double>(size(a))); }

  Var dot(Var a, Var b) { return sum(mul(a, b)); }

  // Component i of a vector, as a scalar node.
  Var pick(Var a, std::size_t i) {
    if (i >= size(a)) throw GraphError("pick index out of range");
    return push_op({value(a)[i]}, {a}, [=](Tape& t, std::size_t self) {
      t.nodes_[a.index].grad[i] += t.nodes_[self].grad[0];
    });
  }

  // Concatenates scalar nodes into a vector.
  Var stack(std::span<const Var> parts) {
    std::vector<double> y;
    for (Var p : parts) {
      const auto& v = value(p);
      y.insert(y.end(), v.begin(), v.end());
    }
    std::vector<Var> inputs(parts.begin(), parts.end());
    return push_op(std::move(y), inputs, [inputs](Tape& t, std::size_t self) {
      std::size_t offset = 0;
      for (Var p : inputs) {
        auto& np = t.nodes_[p.index];
        for (std::size_t i = 0; i < np.value.size(); ++i)
          np.grad[i] += t.nodes_[self].grad[offset + i];
        offset += np.value.size();
      }
    });
  }

  // min(c, a) elementwise. Gradient flows only where a < c; at a == c the
  // subgradient is 0.
  Var min_const(Var a, double c) {
    auto y = value(a);
    for (auto& v : y) v = std::min(v, c);
    return push_op(std::move(y), {a}, [=](Tape& t, std::size_t self) {
      auto& n = t.nodes_[self];
      auto& na = t.nodes_[a.index];
      for (std::size_t i = 0; i < n.grad.size(); ++i)
        if (na.value[i] < c) na.grad[i] += n.grad[i];
    });
  }

  // clamp(a, lo, hi); gradient 1 strictly inside, 0 on or beyond the bounds.
  Var clip(Var a, double lo, double hi) {
    auto y = value(a);
    for (auto& v : y) v = std::clamp(v, lo, hi);
    return push_op(std::move(y), {a}, [=](Tape& t, std::size_t self) {
      auto& n = t.nodes_[self];
      auto& na = t.nodes_[a.index];
      for (std::size_t i = 0; i < n.grad.size(); ++i)
        if (na.value[i] > lo && na.value[i] < hi) na.grad[i] += n.grad[i];
    });
  }

  // Elementwise min(a, b). On ties the gradient goes to `a`.
  Var minimum(Var a, Var b) {
    if (size(a) != size(b)) throw GraphError("minimum shape mismatch");
    std::vector<double> y(size(a));
    for (std::size_t i = 0; i < y.size(); ++i)
      y[i] = std::min(value(a)[i], value(b)[i]);
    return push_op(std::move(y), {a, b}, [=](Tape& t, std::size_t self) {
      auto& n = t.nodes_[self];
      auto& A = t.nodes_[a.index];
      auto& B = t.nodes_[b.index];
      for (std::size_t i = 0; i < n.grad.size(); ++i) {
        if (A.value[i] <= B.value[i])
          A.grad[i] += n.grad[i];
        else
          B.grad[i] += n.grad[i];
      }
    });
  }

  // Same value, no gradient path back to `a`.
  Var stop_gradient(Var a) { return push(value(a), false); }

  // Reverse sweep from a scalar root. Gradients of earlier calls are cleared.
  void backward(Var root) {
    const auto& r = node(root);
    if (r.value.size() != 1) throw GraphError("backward requires a scalar root");
    for (auto& n : nodes_) std::fill(n.grad.begin(), n.grad.end(), 0.0);
    nodes_[root.index].grad[0] = 1.0;
    for (std::size_t i = root.index + 1; i-- > 0;) {
      auto& n = nodes_[i];
      if (n.backprop && n.needs_grad) n.backprop(*this, i);
    }
  }

 private:
  struct Node {
    std::vector<double> value;
    std::vector<double> grad;
    bool needs_grad = false;
    std::function<void(Tape&, std::size_t)> backprop;
  };

  const Node& node(Var v) const {
    if (v.tape != this || v.index >= nodes_.size())
      throw GraphError("variable does not belong to this tape");
    return nodes_[v.index];
  }

  Var push(std::vector<double> value, bool needs_grad) {
    for (double v : value)
      if (!std::isfinite(v)) throw NonFiniteError("non-finite value on tape");
    Node n;
    n.grad.assign(value.size(), 0.0);
    n.value = std::move(value);
    n.needs_grad = needs_grad;
    nodes_.push_back(std::move(n));
    return Var{nodes_.size() - 1, this};
  }

  Var push_op(std::vector<double> value, std::initializer_list<Var> inputs,
              std::function<void(Tape&, std::size_t)> backprop) {
    return push_op(std::move(value), std::vector<Var>(inputs), std::move(backprop));
  }

  Var push_op(std::vector<double> value, const std::vector<Var>& inputs,
              std::function<void(Tape&, std::size_t)> backprop) {
    bool needs = false;
    for (Var in : inputs) needs = needs || node(in).needs_grad;
    Var out = push(std::move(value), needs);
    if (needs) nodes_[out.index].backprop = std::move(backprop);
    return out;
  }

  template <typename F>
  Var binary(Var a, Var b, F f, double da, double db) {
    if (size(a) != size(b)) throw GraphError("elementwise shape mismatch");
    std::vector<double> y(size(a));
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = f(value(a)[i], value(b)[i]);
    return push_op(std::move(y), {a, b}, [=](Tape& t, std::size_t self) {
      auto& n = t.nodes_[self];
      auto& A = t.nodes_[a.index];
      auto& B = t.nodes_[b.index];
      for (std::size_t i = 0; i < n.grad.size(); ++i) {
        A.grad[i] += da * n.grad[i];
        B.grad[i] += db * n.grad[i];
      }
    });
  }

  std::vector<Node> nodes_;
};

}  // namespace bips::ad
