#pragma once

// Reverse-mode automatic differentiation over rank-2 tensors.
//
// Every op records its parents and a closure that pushes the output gradient
// back to them. backward() walks the recorded graph in reverse topological
// order. Parameters own their gradient buffer, so repeated backward() calls
// accumulate until zero_grad().

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numbers>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "kgalign/rng.hpp"
#include "kgalign/tensor.hpp"

namespace kgalign {

template <class T>
class Parameter {
 public:
  Parameter() = default;
  Parameter(std::string name, Tensor<T> value)
      : name_(std::move(name)), value_(std::move(value)), grad_(value_.shape(), T(0)) {}

  const std::string& name() const { return name_; }
  Tensor<T>& value() { return value_; }
  const Tensor<T>& value() const { return value_; }
  Tensor<T>& grad() { return grad_; }
  const Tensor<T>& grad() const { return grad_; }
  void zero_grad() { grad_.fill(T(0)); }

  template <class U>
  Parameter<U> cast() const {
    return Parameter<U>(name_, value_.template cast<U>());
  }

 private:
  std::string name_;
  Tensor<T> value_;
  Tensor<T> grad_;
};

template <class T>
struct Node {
  Tensor<T> value;
  Tensor<T> grad;
  Parameter<T>* param = nullptr;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;
  bool requires_grad = false;

  const Tensor<T>& val() const { return param ? param->value() : value; }

  Tensor<T>& grad_buffer() {
    if (param) return param->grad();
    if (!grad.same_shape(value)) grad = Tensor<T>(value.shape(), T(0));
    return grad;
  }
};

template <class T>
class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node<T>> n) : node_(std::move(n)) {}

  const Tensor<T>& value() const { return node_->val(); }
  // Gradient of the most recent backward() with respect to this value.
  const Tensor<T>& grad() const { return node_->grad_buffer(); }
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  bool defined() const { return static_cast<bool>(node_); }
  const std::shared_ptr<Node<T>>& node() const { return node_; }

 private:
  std::shared_ptr<Node<T>> node_;
};

template <class T>
Var<T> constant(Tensor<T> value) {
  auto n = std::make_shared<Node<T>>();
  n->value = std::move(value);
  return Var<T>(std::move(n));
}

template <class T>
Var<T> leaf(Parameter<T>& p) {
  auto n = std::make_shared<Node<T>>();
  n->param = &p;
  n->requires_grad = true;
  return Var<T>(std::move(n));
}

namespace detail {

template <class T>
Var<T> make_op(Tensor<T> value, std::vector<Var<T>> inputs,
               std::function<void(Node<T>&)> backward) {
  auto n = std::make_shared<Node<T>>();
  n->value = std::move(value);
  for (auto& in : inputs) {
    if (in.requires_grad()) n->requires_grad = true;
  }
  if (n->requires_grad) {
    for (auto& in : inputs) n->parents.push_back(in.node());
    n->backward = std::move(backward);
  }
  return Var<T>(std::move(n));
}

template <class T>
bool wants_grad(const Node<T>& n, std::size_t i) {
  return n.parents[i] && n.parents[i]->requires_grad;
}

inline void require(bool ok, const char* msg) {
  if (!ok) throw ShapeError(msg);
}

}  // namespace detail

// Populates gradients on every Parameter reachable from `loss`.
template <class T>
void backward(const Var<T>& loss) {
  if (!loss.defined() || loss.value().size() != 1) {
    throw ShapeError("backward: loss must be a scalar");
  }
  if (!loss.requires_grad()) return;

  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> seen;
  std::vector<std::pair<Node<T>*, std::size_t>> stack{{loss.node().get(), 0}};
  seen.insert(loss.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node<T>* p = node->parents[next++].get();
      if (p && p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  for (Node<T>* n : order) {
    if (!n->param) n->grad = Tensor<T>(n->value.shape(), T(0));
  }
  loss.node()->grad_buffer()[0] += T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    if ((*it)->backward) (*it)->backward(**it);
  }
}

// ---------------------------------------------------------------------------
// Linear algebra

template <class T>
Var<T> matmul(const Var<T>& a, const Var<T>& b) {
  detail::require(a.cols() == b.rows(), "matmul: inner dimensions differ");
  Tensor<T> out(a.rows(), b.cols());
  as_matrix(out).noalias() = as_matrix(a.value()) * as_matrix(b.value());
  return detail::make_op<T>(std::move(out), {a, b}, [](Node<T>& n) {
    const auto g = as_matrix(static_cast<const Tensor<T>&>(n.grad));
    if (detail::wants_grad(n, 0)) {
      as_matrix(n.parents[0]->grad_buffer()).noalias() +=
          g * as_matrix(n.parents[1]->val()).transpose();
    }
    if (detail::wants_grad(n, 1)) {
      as_matrix(n.parents[1]->grad_buffer()).noalias() +=
          as_matrix(n.parents[0]->val()).transpose() * g;
    }
  });
}

// a * b^T
template <class T>
Var<T> matmul_nt(const Var<T>& a, const Var<T>& b) {
  detail::require(a.cols() == b.cols(), "matmul_nt: column counts differ");
  Tensor<T> out(a.rows(), b.rows());
  as_matrix(out).noalias() = as_matrix(a.value()) * as_matrix(b.value()).transpose();
  return detail::make_op<T>(std::move(out), {a, b}, [](Node<T>& n) {
    const auto g = as_matrix(static_cast<const Tensor<T>&>(n.grad));
    if (detail::wants_grad(n, 0)) {
      as_matrix(n.parents[0]->grad_buffer()).noalias() += g * as_matrix(n.parents[1]->val());
    }
    if (detail::wants_grad(n, 1)) {
      as_matrix(n.parents[1]->grad_buffer()).noalias() +=
          g.transpose() * as_matrix(n.parents[0]->val());
    }
  });
}

template <class T>
Var<T> transpose(const Var<T>& a) {
  Tensor<T> out(a.cols(), a.rows());
  as_matrix(out) = as_matrix(a.value()).transpose();
  return detail::make_op<T>(std::move(out), {a}, [](Node<T>& n) {
    as_matrix(n.parents[0]->grad_buffer()) +=
        as_matrix(static_cast<const Tensor<T>&>(n.grad)).transpose();
  });
}

// ---------------------------------------------------------------------------
// Elementwise

template <class T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  detail::require(a.value().same_shape(b.value()), "add: shape mismatch");
  Tensor<T> out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.value()[i];
  return detail::make_op<T>(std::move(out), {a, b}, [](Node<T>& n) {
    for (std::size_t p = 0; p < 2; ++p) {
      if (!detail::wants_grad(n, p)) continue;
      auto& g = n.parents[p]->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i];
    }
  });
}

template <class T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  detail::require(a.value().same_shape(b.value()), "sub: shape mismatch");
  Tensor<T> out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b.value()[i];
  return detail::make_op<T>(std::move(out), {a, b}, [](Node<T>& n) {
    if (detail::wants_grad(n, 0)) {
      auto& g = n.parents[0]->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i];
    }
    if (detail::wants_grad(n, 1)) {
      auto& g = n.parents[1]->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= n.grad[i];
    }
  });
}

template <class T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  detail::require(a.value().same_shape(b.value()), "mul: shape mismatch");
  Tensor<T> out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
  return detail::make_op<T>(std::move(out), {a, b}, [](Node<T>& n) {
    for (std::size_t p = 0; p < 2; ++p) {
      if (!detail::wants_grad(n, p)) continue;
      const auto& other = n.parents[1 - p]->val();
      auto& g = n.parents[p]->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i] * other[i];
    }
  });
}

// Adds a 1 x c bias to every row.
template <class T>
Var<T> add_row(const Var<T>& a, const Var<T>& bias) {
  detail::require(bias.rows() == 1 && bias.cols() == a.cols(), "add_row: bias must be 1 x cols");
  Tensor<T> out = a.value();
  const std::size_t r = out.rows(), c = out.cols();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out(i, j) += bias.value()[j];
  return detail::make_op<T>(std::move(out), {a, bias}, [](Node<T>& n) {
    const std::size_t r = n.grad.rows(), c = n.grad.cols();
    if (detail::wants_grad(n, 0)) {
      auto& g = n.parents[0]->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i];
    }
    if (detail::wants_grad(n, 1)) {
      auto& g = n.parents[1]->grad_buffer();
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) g[j] += n.grad(i, j);
    }
  });
}

template <class T>
Var<T> scale(const Var<T>& a, T factor) {
  Tensor<T> out = a.value();
  for (auto& v : out.values()) v *= factor;
  return detail::make_op<T>(std::move(out), {a}, [factor](Node<T>& n) {
    auto& g = n.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i] * factor;
  });
}

// Multiplies every entry of `a` by the 1 x 1 value `s`.
template <class T>
Var<T> mul_scalar(const Var<T>& a, const Var<T>& s) {
  detail::require(s.value().size() == 1, "mul_scalar: scale must be 1 x 1");
  const T k = s.value()[0];
  Tensor<T> out = a.value();
  for (auto& v : out.values()) v *= k;
  return detail::make_op<T>(std::move(out), {a, s}, [](Node<T>& n) {
    const T k = n.parents[1]->val()[0];
    if (detail::wants_grad(n, 0)) {
      auto& g = n.parents[0]->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i] * k;
    }
    if (detail::wants_grad(n, 1)) {
      const auto& a = n.parents[0]->val();
      double acc = 0.0;
      for (std::size_t i = 0; i < a.size(); ++i) acc += double(n.grad[i]) * double(a[i]);
      n.parents[1]->grad_buffer()[0] += T(acc);
    }
  });
}

template <class T>
Var<T> exp(const Var<T>& a) {
  Tensor<T> out = a.value();
  for (auto& v : out.values()) v = std::exp(v);
  return detail::make_op<T>(std::move(out), {a}, [](Node<T>& n) {
    auto& g = n.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i] * n.value[i];
  });
}

namespace detail {
constexpr double kGeluC = 0.7978845608028654;  // sqrt(2 / pi)
constexpr double kGeluA = 0.044715;
}  // namespace detail

// GELU, tanh form: 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3))).
template <class T>
Var<T> gelu(const Var<T>& a) {
  Tensor<T> out = a.value();
  for (auto& v : out.values()) {
    const double x = v;
    v = T(0.5 * x * (1.0 + std::tanh(detail::kGeluC * (x + detail::kGeluA * x * x * x))));
  }
  return detail::make_op<T>(std::move(out), {a}, [](Node<T>& n) {
    const auto& in = n.parents[0]->val();
    auto& g = n.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double x = in[i];
      const double u = detail::kGeluC * (x + detail::kGeluA * x * x * x);
      const double th = std::tanh(u);
      const double du = detail::kGeluC * (1.0 + 3.0 * detail::kGeluA * x * x);
      const double d = 0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * du;
      g[i] += T(double(n.grad[i]) * d);
    }
  });
}

template <class T>
Var<T> sum(const Var<T>& a) {
  double acc = 0.0;
  for (T v : a.value().values()) acc += v;
  return detail::make_op<T>(Tensor<T>::scalar(T(acc)), {a}, [](Node<T>& n) {
    auto& g = n.parents[0]->grad_buffer();
    const T s = n.grad[0];
    for (auto& v : g.values()) v += s;
  });
}

// sum(a .* weights) for a constant weight tensor. Used to inject externally
// computed gradients (weights = dL/da) into the recorded graph.
template <class T>
Var<T> dot_const(const Var<T>& a, const Tensor<T>& weights) {
  detail::require(a.value().same_shape(weights), "dot_const: shape mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < weights.size(); ++i) acc += double(a.value()[i]) * weights[i];
  return detail::make_op<T>(Tensor<T>::scalar(T(acc)), {a}, [weights](Node<T>& n) {
    auto& g = n.parents[0]->grad_buffer();
    const T s = n.grad[0];
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += s * weights[i];
  });
}

// ---------------------------------------------------------------------------
// Row-wise reductions and normalizations

template <class T>
Var<T> l2_normalize_rows(const Var<T>& a) {
  const std::size_t r = a.rows(), c = a.cols();
  Tensor<T> out(r, c);
  std::vector<T> norms(r);
  for (std::size_t i = 0; i < r; ++i) {
    double s = 0.0;
    for (T v : a.value().row(i)) s += double(v) * double(v);
    const double nrm = std::sqrt(s);
    if (!(nrm >= 1e-12)) throw std::domain_error("l2_normalize_rows: zero-norm row");
    norms[i] = T(nrm);
    for (std::size_t j = 0; j < c; ++j) out(i, j) = T(a.value()(i, j) / nrm);
  }
  return detail::make_op<T>(std::move(out), {a}, [norms = std::move(norms)](Node<T>& n) {
    auto& g = n.parents[0]->grad_buffer();
    const std::size_t r = n.value.rows(), c = n.value.cols();
    for (std::size_t i = 0; i < r; ++i) {
      double yg = 0.0;
      for (std::size_t j = 0; j < c; ++j) yg += double(n.value(i, j)) * n.grad(i, j);
      for (std::size_t j = 0; j < c; ++j) {
        g(i, j) += T((n.grad(i, j) - n.value(i, j) * yg) / norms[i]);
      }
    }
  });
}

// Column means: r x c -> 1 x c.
template <class T>
Var<T> mean_pool_rows(const Var<T>& a) {
  const std::size_t r = a.rows(), c = a.cols();
  detail::require(r > 0, "mean_pool_rows: no rows");
  Tensor<T> out(1, c);
  for (std::size_t j = 0; j < c; ++j) {
    double s = 0.0;
    for (std::size_t i = 0; i < r; ++i) s += a.value()(i, j);
    out[j] = T(s / double(r));
  }
  return detail::make_op<T>(std::move(out), {a}, [](Node<T>& n) {
    auto& g = n.parents[0]->grad_buffer();
    const std::size_t r = g.rows(), c = g.cols();
    const T inv = T(1.0 / double(r));
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) g(i, j) += n.grad[j] * inv;
  });
}

// Per-segment column means: rows [offsets[s], offsets[s+1]) -> row s.
template <class T>
Var<T> segment_mean_rows(const Var<T>& a, std::span<const std::size_t> offsets) {
  detail::require(offsets.size() >= 2 && offsets.front() == 0 && offsets.back() == a.rows(),
                  "segment_mean_rows: offsets must span all rows");
  const std::size_t segs = offsets.size() - 1, c = a.cols();
  for (std::size_t s = 0; s < segs; ++s) {
    detail::require(offsets[s] < offsets[s + 1], "segment_mean_rows: empty segment");
  }
  Tensor<T> out(segs, c);
  for (std::size_t s = 0; s < segs; ++s) {
    const double inv = 1.0 / double(offsets[s + 1] - offsets[s]);
    for (std::size_t j = 0; j < c; ++j) {
      double acc = 0.0;
      for (std::size_t i = offsets[s]; i < offsets[s + 1]; ++i) acc += a.value()(i, j);
      out(s, j) = T(acc * inv);
    }
  }
  std::vector<std::size_t> off(offsets.begin(), offsets.end());
  return detail::make_op<T>(std::move(out), {a}, [off = std::move(off)](Node<T>& n) {
    auto& g = n.parents[0]->grad_buffer();
    const std::size_t c = g.cols();
    for (std::size_t s = 0; s + 1 < off.size(); ++s) {
      const T inv = T(1.0 / double(off[s + 1] - off[s]));
      for (std::size_t i = off[s]; i < off[s + 1]; ++i)
        for (std::size_t j = 0; j < c; ++j) g(i, j) += n.grad(s, j) * inv;
    }
  });
}

template <class T>
Var<T> layer_norm_rows(const Var<T>& a, const Var<T>& gain, const Var<T>& bias,
                       double eps = 1e-5) {
  const std::size_t r = a.rows(), c = a.cols();
  detail::require(gain.rows() == 1 && gain.cols() == c && bias.rows() == 1 && bias.cols() == c,
                  "layer_norm_rows: gain/bias must be 1 x cols");
  Tensor<T> out(r, c);
  Tensor<T> xhat(r, c);
  std::vector<double> inv_std(r);
  for (std::size_t i = 0; i < r; ++i) {
    double mean = 0.0;
    for (T v : a.value().row(i)) mean += v;
    mean /= double(c);
    double var = 0.0;
    for (T v : a.value().row(i)) var += (v - mean) * (v - mean);
    var /= double(c);
    inv_std[i] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < c; ++j) {
      const double xh = (a.value()(i, j) - mean) * inv_std[i];
      xhat(i, j) = T(xh);
      out(i, j) = T(xh * gain.value()[j] + bias.value()[j]);
    }
  }
  return detail::make_op<T>(
      std::move(out), {a, gain, bias},
      [xhat = std::move(xhat), inv_std = std::move(inv_std)](Node<T>& n) {
        const std::size_t r = xhat.rows(), c = xhat.cols();
        const auto& gain = n.parents[1]->val();
        if (detail::wants_grad(n, 1)) {
          auto& gg = n.parents[1]->grad_buffer();
          for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < c; ++j) gg[j] += n.grad(i, j) * xhat(i, j);
        }
        if (detail::wants_grad(n, 2)) {
          auto& gb = n.parents[2]->grad_buffer();
          for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < c; ++j) gb[j] += n.grad(i, j);
        }
        if (detail::wants_grad(n, 0)) {
          auto& gx = n.parents[0]->grad_buffer();
          for (std::size_t i = 0; i < r; ++i) {
            double m1 = 0.0, m2 = 0.0;
            for (std::size_t j = 0; j < c; ++j) {
              const double dxh = double(n.grad(i, j)) * gain[j];
              m1 += dxh;
              m2 += dxh * xhat(i, j);
            }
            m1 /= double(c);
            m2 /= double(c);
            for (std::size_t j = 0; j < c; ++j) {
              const double dxh = double(n.grad(i, j)) * gain[j];
              gx(i, j) += T(inv_std[i] * (dxh - m1 - xhat(i, j) * m2));
            }
          }
        }
      });
}

// Mean over rows of -log softmax(logits[i])[targets[i]].
template <class T>
Var<T> softmax_ce_rows(const Var<T>& logits, std::span<const std::size_t> targets) {
  const std::size_t r = logits.rows(), c = logits.cols();
  detail::require(targets.size() == r, "softmax_ce_rows: one target per row required");
  detail::require(r > 0 && c > 0, "softmax_ce_rows: empty logits");
  Tensor<T> probs(r, c);
  std::vector<std::size_t> tgt(targets.begin(), targets.end());
  double total = 0.0;
  for (std::size_t i = 0; i < r; ++i) {
    if (tgt[i] >= c) throw std::out_of_range("softmax_ce_rows: target index out of range");
    double mx = -INFINITY;
    for (T v : logits.value().row(i)) mx = std::max(mx, double(v));
    double z = 0.0;
    for (T v : logits.value().row(i)) z += std::exp(double(v) - mx);
    const double logz = mx + std::log(z);
    for (std::size_t j = 0; j < c; ++j) probs(i, j) = T(std::exp(logits.value()(i, j) - logz));
    total += logz - logits.value()(i, tgt[i]);
  }
  return detail::make_op<T>(
      Tensor<T>::scalar(T(total / double(r))), {logits},
      [probs = std::move(probs), tgt = std::move(tgt)](Node<T>& n) {
        auto& g = n.parents[0]->grad_buffer();
        const std::size_t r = probs.rows(), c = probs.cols();
        const double s = double(n.grad[0]) / double(r);
        for (std::size_t i = 0; i < r; ++i) {
          for (std::size_t j = 0; j < c; ++j) {
            const double d = double(probs(i, j)) - (j == tgt[i] ? 1.0 : 0.0);
            g(i, j) += T(s * d);
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Indexing

template <class T>
Var<T> select_rows(const Var<T>& a, std::span<const std::size_t> index) {
  const std::size_t c = a.cols();
  Tensor<T> out(index.size(), c);
  std::vector<std::size_t> idx(index.begin(), index.end());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] >= a.rows()) throw std::out_of_range("select_rows: index out of range");
    auto src = a.value().row(idx[i]);
    std::copy(src.begin(), src.end(), out.row(i).begin());
  }
  return detail::make_op<T>(std::move(out), {a}, [idx = std::move(idx)](Node<T>& n) {
    auto& g = n.parents[0]->grad_buffer();
    const std::size_t c = g.cols();
    for (std::size_t i = 0; i < idx.size(); ++i)
      for (std::size_t j = 0; j < c; ++j) g(idx[i], j) += n.grad(i, j);
  });
}

// Stacks row blocks with equal column counts.
template <class T>
Var<T> concat_rows(const std::vector<Var<T>>& parts) {
  detail::require(!parts.empty(), "concat_rows: no inputs");
  const std::size_t c = parts.front().cols();
  std::size_t r = 0;
  for (const auto& p : parts) {
    detail::require(p.cols() == c, "concat_rows: column mismatch");
    r += p.rows();
  }
  Tensor<T> out(r, c);
  std::size_t at = 0;
  for (const auto& p : parts) {
    std::copy(p.value().values().begin(), p.value().values().end(), out.data() + at * c);
    at += p.rows();
  }
  return detail::make_op<T>(std::move(out), parts, [](Node<T>& n) {
    std::size_t at = 0;
    for (std::size_t k = 0; k < n.parents.size(); ++k) {
      const std::size_t len = n.parents[k]->val().size();
      if (detail::wants_grad(n, k)) {
        auto& g = n.parents[k]->grad_buffer();
        for (std::size_t i = 0; i < len; ++i) g[i] += n.grad[at + i];
      }
      at += len;
    }
  });
}

// Rows of a parameter table. An index of -1 takes the corresponding row of
// `fallback` instead, which is treated as a constant.
template <class T>
Var<T> embed_rows(Parameter<T>& table, std::span<const std::int64_t> index,
                  const Tensor<T>* fallback = nullptr) {
  const std::size_t c = table.value().cols();
  Tensor<T> out(index.size(), c);
  std::vector<std::int64_t> idx(index.begin(), index.end());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    std::span<const T> src;
    if (idx[i] >= 0) {
      if (static_cast<std::size_t>(idx[i]) >= table.value().rows()) {
        throw std::out_of_range("embed_rows: id outside table '" + table.name() + "'");
      }
      src = table.value().row(static_cast<std::size_t>(idx[i]));
    } else {
      if (!fallback || fallback->rows() != idx.size() || fallback->cols() != c) {
        throw ShapeError("embed_rows: fallback rows required for local ids");
      }
      src = fallback->row(i);
    }
    std::copy(src.begin(), src.end(), out.row(i).begin());
  }
  return detail::make_op<T>(std::move(out), {leaf(table)}, [idx = std::move(idx)](Node<T>& n) {
    auto& g = n.parents[0]->grad_buffer();
    const std::size_t c = g.cols();
    for (std::size_t i = 0; i < idx.size(); ++i) {
      if (idx[i] < 0) continue;
      const auto r = static_cast<std::size_t>(idx[i]);
      for (std::size_t j = 0; j < c; ++j) g(r, j) += n.grad(i, j);
    }
  });
}

// ---------------------------------------------------------------------------
// Stochastic

template <class T>
Var<T> dropout(const Var<T>& a, double p, Rng& rng, bool training) {
  if (!training || p <= 0.0) return a;
  if (p >= 1.0) throw std::invalid_argument("dropout: rate must be < 1");
  Tensor<T> mask(a.value().shape(), T(0));
  const T keep = T(1.0 / (1.0 - p));
  for (auto& m : mask.values()) m = rng.uniform() >= p ? keep : T(0);
  Tensor<T> out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= mask[i];
  return detail::make_op<T>(std::move(out), {a}, [mask = std::move(mask)](Node<T>& n) {
    auto& g = n.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i] * mask[i];
  });
}

// ---------------------------------------------------------------------------
// Sparse multi-head attention

// For each query row i, the key rows it attends to, each optionally tagged
// with a row of the relation key/value matrices (-1 for none).
struct AttentionPattern {
  std::vector<std::size_t> offsets{0};
  std::vector<std::size_t> keys;
  std::vector<std::int64_t> relations;

  std::size_t queries() const { return offsets.size() - 1; }
  std::size_t entries() const { return keys.size(); }

  void add(std::size_t key, std::int64_t relation = -1) {
    keys.push_back(key);
    relations.push_back(relation);
  }
  void close_row() { offsets.push_back(keys.size()); }

  static AttentionPattern complete(std::size_t n) {
    AttentionPattern p;
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) p.add(j);
      p.close_row();
    }
    return p;
  }
};

// score(i, e) = <q_i, k_j + rk_e> / sqrt(dh) per head, softmax over the
// entries of row i, output_i = sum_e alpha_e (v_j + rv_e). `rel_k`/`rel_v`
// may be undefined when the pattern carries no relation tags.
template <class T>
Var<T> sparse_attention(const Var<T>& q, const Var<T>& k, const Var<T>& v, const Var<T>& rel_k,
                        const Var<T>& rel_v, const AttentionPattern& pattern, std::size_t heads) {
  const std::size_t n = q.rows(), d = q.cols();
  detail::require(heads > 0 && d % heads == 0, "sparse_attention: dim not divisible by heads");
  detail::require(k.cols() == d && v.cols() == d && k.rows() == v.rows(),
                  "sparse_attention: q/k/v shape mismatch");
  detail::require(pattern.queries() == n, "sparse_attention: pattern row count != queries");
  const bool has_rel = rel_k.defined();
  if (has_rel) {
    detail::require(rel_v.defined() && rel_k.cols() == d && rel_v.cols() == d &&
                        rel_k.rows() == rel_v.rows(),
                    "sparse_attention: relation matrices mismatch");
  }
  const std::size_t dh = d / heads;
  const double inv_sqrt = 1.0 / std::sqrt(double(dh));
  const std::size_t m = pattern.entries();
  for (std::size_t e = 0; e < m; ++e) {
    if (pattern.keys[e] >= k.rows()) throw std::out_of_range("sparse_attention: key out of range");
    const auto r = pattern.relations[e];
    if (r >= 0 && (!has_rel || static_cast<std::size_t>(r) >= rel_k.rows())) {
      throw std::out_of_range("sparse_attention: relation row out of range");
    }
  }

  const auto& Q = q.value();
  const auto& K = k.value();
  const auto& V = v.value();
  const Tensor<T>* RK = has_rel ? &rel_k.value() : nullptr;
  const Tensor<T>* RV = has_rel ? &rel_v.value() : nullptr;

  Tensor<T> out(n, d);
  std::vector<T> alpha(m * heads);
  std::vector<double> scores;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t b = pattern.offsets[i], end = pattern.offsets[i + 1];
    if (b == end) continue;
    scores.resize(end - b);
    for (std::size_t h = 0; h < heads; ++h) {
      const std::size_t c0 = h * dh;
      double mx = -INFINITY;
      for (std::size_t e = b; e < end; ++e) {
        const std::size_t j = pattern.keys[e];
        const auto r = pattern.relations[e];
        double s = 0.0;
        for (std::size_t c = c0; c < c0 + dh; ++c) {
          double key = K(j, c);
          if (r >= 0) key += (*RK)(static_cast<std::size_t>(r), c);
          s += double(Q(i, c)) * key;
        }
        s *= inv_sqrt;
        scores[e - b] = s;
        mx = std::max(mx, s);
      }
      double z = 0.0;
      for (auto& s : scores) {
        s = std::exp(s - mx);
        z += s;
      }
      for (std::size_t e = b; e < end; ++e) {
        const double a = scores[e - b] / z;
        alpha[e * heads + h] = T(a);
        const std::size_t j = pattern.keys[e];
        const auto r = pattern.relations[e];
        for (std::size_t c = c0; c < c0 + dh; ++c) {
          double val = V(j, c);
          if (r >= 0) val += (*RV)(static_cast<std::size_t>(r), c);
          out(i, c) += T(a * val);
        }
      }
    }
  }

  std::vector<Var<T>> inputs{q, k, v};
  if (has_rel) {
    inputs.push_back(rel_k);
    inputs.push_back(rel_v);
  }
  return detail::make_op<T>(
      std::move(out), std::move(inputs),
      [pattern, alpha = std::move(alpha), heads, dh, inv_sqrt, has_rel](Node<T>& node) {
        const auto& Q = node.parents[0]->val();
        const auto& K = node.parents[1]->val();
        const auto& V = node.parents[2]->val();
        const Tensor<T>* RK = has_rel ? &node.parents[3]->val() : nullptr;
        const Tensor<T>* RV = has_rel ? &node.parents[4]->val() : nullptr;
        const bool gq = detail::wants_grad(node, 0), gk = detail::wants_grad(node, 1),
                   gv = detail::wants_grad(node, 2);
        const bool grk = has_rel && detail::wants_grad(node, 3);
        const bool grv = has_rel && detail::wants_grad(node, 4);
        Tensor<T>* dQ = gq ? &node.parents[0]->grad_buffer() : nullptr;
        Tensor<T>* dK = gk ? &node.parents[1]->grad_buffer() : nullptr;
        Tensor<T>* dV = gv ? &node.parents[2]->grad_buffer() : nullptr;
        Tensor<T>* dRK = grk ? &node.parents[3]->grad_buffer() : nullptr;
        Tensor<T>* dRV = grv ? &node.parents[4]->grad_buffer() : nullptr;
        const auto& G = node.grad;
        std::vector<double> dalpha;
        for (std::size_t i = 0; i < pattern.queries(); ++i) {
          const std::size_t b = pattern.offsets[i], end = pattern.offsets[i + 1];
          if (b == end) continue;
          dalpha.resize(end - b);
          for (std::size_t h = 0; h < heads; ++h) {
            const std::size_t c0 = h * dh;
            double weighted = 0.0;
            for (std::size_t e = b; e < end; ++e) {
              const std::size_t j = pattern.keys[e];
              const auto r = pattern.relations[e];
              const double a = alpha[e * heads + h];
              double da = 0.0;
              for (std::size_t c = c0; c < c0 + dh; ++c) {
                double val = V(j, c);
                if (r >= 0) val += (*RV)(static_cast<std::size_t>(r), c);
                da += double(G(i, c)) * val;
                if (dV) (*dV)(j, c) += T(a * G(i, c));
                if (r >= 0 && dRV) (*dRV)(static_cast<std::size_t>(r), c) += T(a * G(i, c));
              }
              dalpha[e - b] = da;
              weighted += a * da;
            }
            for (std::size_t e = b; e < end; ++e) {
              const std::size_t j = pattern.keys[e];
              const auto r = pattern.relations[e];
              const double a = alpha[e * heads + h];
              const double ds = a * (dalpha[e - b] - weighted) * inv_sqrt;
              if (ds == 0.0) continue;
              for (std::size_t c = c0; c < c0 + dh; ++c) {
                double key = K(j, c);
                if (r >= 0) key += (*RK)(static_cast<std::size_t>(r), c);
                if (dQ) (*dQ)(i, c) += T(ds * key);
                if (dK) (*dK)(j, c) += T(ds * Q(i, c));
                if (r >= 0 && dRK) (*dRK)(static_cast<std::size_t>(r), c) += T(ds * Q(i, c));
              }
            }
          }
        }
      });
}

}  // namespace kgalign
