// SPDX-License-Identifier: Apache-2.0
#pragma once

// Reverse-mode automatic differentiation over real tensors.
//
// Every op produces a Tensor whose node records its parents and a backward
// closure; backward() walks the nodes in reverse topological order. Complex
// quantities are carried as (re, im) pairs, see complex_ops.hpp.

#include "otfs/core.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <numeric>
#include <sstream>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

namespace otfs::ad {

using Shape = std::vector<int>;

inline std::size_t numel_of(const Shape& s) {
  std::size_t n = 1;
  for (int d : s) n *= static_cast<std::size_t>(d);
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << "]";
  return os.str();
}

/// Shape errors name the kernel and the offending shapes.
class ShapeError : public ConfigError {
 public:
  ShapeError(const std::string& kernel, const Shape& a, const Shape& b)
      : ConfigError(kernel + ": incompatible shapes " + shape_str(a) + " and " + shape_str(b)) {}
  ShapeError(const std::string& kernel, const std::string& msg) : ConfigError(kernel + ": " + msg) {}
};

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;
  const char* op = "leaf";

  double* ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
    return grad.data();
  }
};

namespace detail {
inline bool& grad_enabled() {
  thread_local bool enabled = true;
  return enabled;
}
}  // namespace detail

/// Disables tape recording in the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard() : prev_(detail::grad_enabled()) { detail::grad_enabled() = false; }
  ~NoGradGuard() { detail::grad_enabled() = prev_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<Node> n) : node_(std::move(n)) {}

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    auto n = std::make_shared<Node>();
    n->value.assign(numel_of(shape), 0.0);
    n->shape = std::move(shape);
    n->requires_grad = requires_grad;
    return Tensor(n);
  }
  static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false) {
    if (values.size() != numel_of(shape)) {
      throw ShapeError("tensor", "value count " + std::to_string(values.size()) + " != shape " + shape_str(shape));
    }
    auto n = std::make_shared<Node>();
    n->shape = std::move(shape);
    n->value = std::move(values);
    n->requires_grad = requires_grad;
    return Tensor(n);
  }
  static Tensor scalar(double v, bool requires_grad = false) { return from({1}, {v}, requires_grad); }
  static Tensor from_matrix(const RMatrix& m, bool requires_grad = false) {
    std::vector<double> v(static_cast<std::size_t>(m.size()));
    for (Eigen::Index i = 0; i < m.rows(); ++i)
      for (Eigen::Index j = 0; j < m.cols(); ++j) v[i * m.cols() + j] = m(i, j);
    return from({static_cast<int>(m.rows()), static_cast<int>(m.cols())}, std::move(v), requires_grad);
  }

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  int dim(std::size_t i) const { return node_->shape.at(i); }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t numel() const { return node_->value.size(); }
  std::vector<double>& data() { return node_->value; }
  const std::vector<double>& data() const { return node_->value; }
  double item() const {
    if (numel() != 1) throw ShapeError("item", "tensor has " + std::to_string(numel()) + " elements");
    return node_->value[0];
  }
  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool v) { node_->requires_grad = v; }
  bool has_grad() const { return node_->grad.size() == node_->value.size() && !node_->value.empty(); }
  const std::vector<double>& grad() const {
    if (!has_grad()) node_->grad.assign(node_->value.size(), 0.0);
    return node_->grad;
  }
  void zero_grad() { node_->grad.clear(); }
  const char* op() const { return node_->op; }

  RMatrix to_matrix() const {
    if (rank() != 2) throw ShapeError("to_matrix", "rank " + std::to_string(rank()) + " tensor");
    RMatrix m(dim(0), dim(1));
    for (int i = 0; i < dim(0); ++i)
      for (int j = 0; j < dim(1); ++j) m(i, j) = node_->value[static_cast<std::size_t>(i) * dim(1) + j];
    return m;
  }

  /// Detached copy (no tape, no grad).
  Tensor detach() const { return from(shape(), data(), false); }

  const std::shared_ptr<Node>& node() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

namespace detail {

/// Creates an op result; the backward closure is kept only if some input needs gradients.
inline Tensor make_result(Shape shape, std::vector<double> value, std::initializer_list<Tensor> inputs,
                          const char* op, std::function<void(Node&)> bw) {
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->value = std::move(value);
  n->op = op;
  if (grad_enabled()) {
    bool any = false;
    for (const auto& t : inputs) any = any || t.requires_grad();
    if (any) {
      n->requires_grad = true;
      for (const auto& t : inputs) n->parents.push_back(t.node());
      n->backward = std::move(bw);
    }
  }
  return Tensor(n);
}

inline Tensor make_result_v(Shape shape, std::vector<double> value, const std::vector<Tensor>& inputs,
                            const char* op, std::function<void(Node&)> bw) {
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->value = std::move(value);
  n->op = op;
  if (grad_enabled()) {
    bool any = false;
    for (const auto& t : inputs) any = any || t.requires_grad();
    if (any) {
      n->requires_grad = true;
      for (const auto& t : inputs) n->parents.push_back(t.node());
      n->backward = std::move(bw);
    }
  }
  return Tensor(n);
}

inline double* pgrad(Node& self, std::size_t i) {
  Node& p = *self.parents[i];
  return p.requires_grad ? p.ensure_grad() : nullptr;
}

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapRM = Eigen::Map<RowMat>;
using CMapRM = Eigen::Map<const RowMat>;

inline void require_same(const char* k, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) throw ShapeError(k, a.shape(), b.shape());
}

}  // namespace detail

enum class TopoOrder { DepthFirst, Kahn };

/**
 * Backpropagates from a scalar. Both orderings are valid topological orders of
 * the same graph; they differ only in the order contributions are summed.
 */
inline void backward(const Tensor& loss, TopoOrder order = TopoOrder::DepthFirst) {
  if (loss.numel() != 1) throw ShapeError("backward", "loss must be a scalar, got " + shape_str(loss.shape()));
  if (!loss.requires_grad()) return;

  std::vector<Node*> topo;  // parents before children
  if (order == TopoOrder::DepthFirst) {
    std::unordered_set<Node*> seen;
    std::vector<std::pair<Node*, std::size_t>> stack{{loss.node().get(), 0}};
    seen.insert(loss.node().get());
    while (!stack.empty()) {
      auto& [n, i] = stack.back();
      if (i < n->parents.size()) {
        Node* p = n->parents[i++].get();
        if (p->requires_grad && !seen.count(p)) {
          seen.insert(p);
          stack.push_back({p, 0});
        }
      } else {
        topo.push_back(n);
        stack.pop_back();
      }
    }
  } else {
    // Kahn: count consumers, release a node once all of its consumers are processed.
    std::unordered_map<Node*, int> consumers;
    std::vector<Node*> all{loss.node().get()};
    std::unordered_set<Node*> seen{loss.node().get()};
    for (std::size_t i = 0; i < all.size(); ++i) {
      for (const auto& p : all[i]->parents) {
        if (!p->requires_grad) continue;
        consumers[p.get()]++;
        if (seen.insert(p.get()).second) all.push_back(p.get());
      }
    }
    std::vector<Node*> ready{loss.node().get()};
    std::vector<Node*> rev;
    while (!ready.empty()) {
      Node* n = ready.back();
      ready.pop_back();
      rev.push_back(n);
      for (auto it = n->parents.rbegin(); it != n->parents.rend(); ++it) {
        Node* p = it->get();
        if (!p->requires_grad) continue;
        if (--consumers[p] == 0) ready.push_back(p);
      }
    }
    topo.assign(rev.rbegin(), rev.rend());
  }

  loss.node()->ensure_grad()[0] += 1.0;
  for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
    Node* n = *it;
    if (n->backward) {
      n->ensure_grad();
      n->backward(*n);
    }
  }
}

// ---------------------------------------------------------------------------
// Elementwise and shape kernels
// ---------------------------------------------------------------------------

inline Tensor add(const Tensor& a, const Tensor& b) {
  detail::require_same("add", a, b);
  std::vector<double> v(a.numel());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.data()[i] + b.data()[i];
  return detail::make_result(a.shape(), std::move(v), {a, b}, "add", [](Node& s) {
    for (std::size_t k = 0; k < 2; ++k)
      if (double* g = detail::pgrad(s, k))
        for (std::size_t i = 0; i < s.grad.size(); ++i) g[i] += s.grad[i];
  });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  detail::require_same("sub", a, b);
  std::vector<double> v(a.numel());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.data()[i] - b.data()[i];
  return detail::make_result(a.shape(), std::move(v), {a, b}, "sub", [](Node& s) {
    if (double* g = detail::pgrad(s, 0))
      for (std::size_t i = 0; i < s.grad.size(); ++i) g[i] += s.grad[i];
    if (double* g = detail::pgrad(s, 1))
      for (std::size_t i = 0; i < s.grad.size(); ++i) g[i] -= s.grad[i];
  });
}

inline Tensor scale(const Tensor& a, double c) {
  std::vector<double> v(a.numel());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = c * a.data()[i];
  return detail::make_result(a.shape(), std::move(v), {a}, "scale", [c](Node& s) {
    if (double* g = detail::pgrad(s, 0))
      for (std::size_t i = 0; i < s.grad.size(); ++i) g[i] += c * s.grad[i];
  });
}

inline Tensor add_const(const Tensor& a, double c) {
  std::vector<double> v(a.numel());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = c + a.data()[i];
  return detail::make_result(a.shape(), std::move(v), {a}, "add_const", [](Node& s) {
    if (double* g = detail::pgrad(s, 0))
      for (std::size_t i = 0; i < s.grad.size(); ++i) g[i] += s.grad[i];
  });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  detail::require_same("mul", a, b);
  std::vector<double> v(a.numel());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.data()[i] * b.data()[i];
  return detail::make_result(a.shape(), std::move(v), {a, b}, "mul", [](Node& s) {
    const auto& av = s.parents[0]->value;
    const auto& bv = s.parents[1]->value;
    if (double* g = detail::pgrad(s, 0))
      for (std::size_t i = 0; i < s.grad.size(); ++i) g[i] += s.grad[i] * bv[i];
    if (double* g = detail::pgrad(s, 1))
      for (std::size_t i = 0; i < s.grad.size(); ++i) g[i] += s.grad[i] * av[i];
  });
}

/// a * s where s holds a single element.
inline Tensor mul_scalar(const Tensor& a, const Tensor& s1) {
  if (s1.numel() != 1) throw ShapeError("mul_scalar", a.shape(), s1.shape());
  const double c = s1.item();
  std::vector<double> v(a.numel());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = c * a.data()[i];
  return detail::make_result(a.shape(), std::move(v), {a, s1}, "mul_scalar", [](Node& s) {
    const auto& av = s.parents[0]->value;
    const double c = s.parents[1]->value[0];
    if (double* g = detail::pgrad(s, 0))
      for (std::size_t i = 0; i < s.grad.size(); ++i) g[i] += c * s.grad[i];
    if (double* g = detail::pgrad(s, 1)) {
      double acc = 0.0;
      for (std::size_t i = 0; i < s.grad.size(); ++i) acc += s.grad[i] * av[i];
      g[0] += acc;
    }
  });
}

/// a[r, c] + b[c] for a 2-D a (row-broadcast bias).
inline Tensor add_rowvec(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.numel() != static_cast<std::size_t>(a.dim(1))) throw ShapeError("add_rowvec", a.shape(), b.shape());
  const int R = a.dim(0), C = a.dim(1);
  std::vector<double> v(a.numel());
  for (int r = 0; r < R; ++r)
    for (int c = 0; c < C; ++c) v[r * C + c] = a.data()[r * C + c] + b.data()[c];
  return detail::make_result(a.shape(), std::move(v), {a, b}, "add_rowvec", [R, C](Node& s) {
    if (double* g = detail::pgrad(s, 0))
      for (std::size_t i = 0; i < s.grad.size(); ++i) g[i] += s.grad[i];
    if (double* g = detail::pgrad(s, 1))
      for (int r = 0; r < R; ++r)
        for (int c = 0; c < C; ++c) g[c] += s.grad[r * C + c];
  });
}

/// a[r, c] * b[c] for a 2-D a.
inline Tensor mul_rowvec(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.numel() != static_cast<std::size_t>(a.dim(1))) throw ShapeError("mul_rowvec", a.shape(), b.shape());
  const int R = a.dim(0), C = a.dim(1);
  std::vector<double> v(a.numel());
  for (int r = 0; r < R; ++r)
    for (int c = 0; c < C; ++c) v[r * C + c] = a.data()[r * C + c] * b.data()[c];
  return detail::make_result(a.shape(), std::move(v), {a, b}, "mul_rowvec", [R, C](Node& s) {
    const auto& av = s.parents[0]->value;
    const auto& bv = s.parents[1]->value;
    if (double* g = detail::pgrad(s, 0))
      for (int r = 0; r < R; ++r)
        for (int c = 0; c < C; ++c) g[r * C + c] += s.grad[r * C + c] * bv[c];
    if (double* g = detail::pgrad(s, 1))
      for (int r = 0; r < R; ++r)
        for (int c = 0; c < C; ++c) g[c] += s.grad[r * C + c] * av[r * C + c];
  });
}

/// x[c, h, w] + b[c].
inline Tensor add_channel_bias(const Tensor& x, const Tensor& b) {
  if (x.rank() != 3 || b.numel() != static_cast<std::size_t>(x.dim(0))) throw ShapeError("add_channel_bias", x.shape(), b.shape());
  const int C = x.dim(0);
  const std::size_t plane = static_cast<std::size_t>(x.dim(1)) * x.dim(2);
  std::vector<double> v(x.data());
  for (int c = 0; c < C; ++c)
    for (std::size_t i = 0; i < plane; ++i) v[c * plane + i] += b.data()[c];
  return detail::make_result(x.shape(), std::move(v), {x, b}, "add_channel_bias", [C, plane](Node& s) {
    if (double* g = detail::pgrad(s, 0))
      for (std::size_t i = 0; i < s.grad.size(); ++i) g[i] += s.grad[i];
    if (double* g = detail::pgrad(s, 1))
      for (int c = 0; c < C; ++c)
        for (std::size_t i = 0; i < plane; ++i) g[c] += s.grad[c * plane + i];
  });
}

inline Tensor reshape(const Tensor& a, Shape shape) {
  if (numel_of(shape) != a.numel()) throw ShapeError("reshape", a.shape(), shape);
  return detail::make_result(std::move(shape), a.data(), {a}, "reshape", [](Node& s) {
    if (double* g = detail::pgrad(s, 0))
      for (std::size_t i = 0; i < s.grad.size(); ++i) g[i] += s.grad[i];
  });
}

inline Tensor transpose(const Tensor& a) {
  if (a.rank() != 2) throw ShapeError("transpose", "expects a 2-D tensor, got " + shape_str(a.shape()));
  const int R = a.dim(0), C = a.dim(1);
  std::vector<double> v(a.numel());
  for (int r = 0; r < R; ++r)
    for (int c = 0; c < C; ++c) v[c * R + r] = a.data()[r * C + c];
  return detail::make_result({C, R}, std::move(v), {a}, "transpose", [R, C](Node& s) {
    if (double* g = detail::pgrad(s, 0))
      for (int r = 0; r < R; ++r)
        for (int c = 0; c < C; ++c) g[r * C + c] += s.grad[c * R + r];
  });
}

namespace detail {
/// Splits a shape around `axis` into (outer, axis extent, inner).
inline std::tuple<std::size_t, int, std::size_t> split_axis(const Shape& s, int axis) {
  std::size_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  return {outer, s[axis], inner};
}
}  // namespace detail

inline Tensor concat(const std::vector<Tensor>& parts, int axis) {
  if (parts.empty()) throw ShapeError("concat", "no inputs");
  const Shape& ref = parts[0].shape();
  if (axis < 0 || axis >= static_cast<int>(ref.size())) throw ShapeError("concat", "axis out of range");
  Shape out = ref;
  out[axis] = 0;
  for (const auto& p : parts) {
    Shape a = p.shape(), b = ref;
    if (a.size() != b.size()) throw ShapeError("concat", a, b);
    a[axis] = b[axis] = 0;
    if (a != b) throw ShapeError("concat", p.shape(), ref);
    out[axis] += p.dim(axis);
  }
  auto [outer, total, inner] = detail::split_axis(out, axis);
  std::vector<double> v(numel_of(out));
  std::vector<int> offsets;
  int off = 0;
  for (const auto& p : parts) {
    offsets.push_back(off);
    const int ext = p.dim(axis);
    for (std::size_t o = 0; o < outer; ++o)
      std::copy_n(p.data().begin() + o * ext * inner, ext * inner, v.begin() + (o * total + off) * inner);
    off += ext;
  }
  std::vector<int> extents;
  for (const auto& p : parts) extents.push_back(p.dim(axis));
  return detail::make_result_v(out, std::move(v), parts, "concat",
                               [outer = outer, total = total, inner = inner, offsets, extents](Node& s) {
                                 for (std::size_t k = 0; k < offsets.size(); ++k) {
                                   double* g = detail::pgrad(s, k);
                                   if (!g) continue;
                                   const int ext = extents[k];
                                   for (std::size_t o = 0; o < outer; ++o)
                                     for (std::size_t i = 0; i < ext * inner; ++i)
                                       g[o * ext * inner + i] += s.grad[(o * total + offsets[k]) * inner + i];
                                 }
                               });
}

inline Tensor slice(const Tensor& a, int axis, int start, int length) {
  if (axis < 0 || axis >= static_cast<int>(a.rank()) || start < 0 || length < 0 || start + length > a.dim(axis)) {
    throw ShapeError("slice", "range [" + std::to_string(start) + "," + std::to_string(start + length) +
                                  ") on axis " + std::to_string(axis) + " of " + shape_str(a.shape()));
  }
  Shape out = a.shape();
  out[axis] = length;
  auto [outer, total, inner] = detail::split_axis(a.shape(), axis);
  std::vector<double> v(numel_of(out));
  for (std::size_t o = 0; o < outer; ++o)
    std::copy_n(a.data().begin() + (o * total + start) * inner, length * inner, v.begin() + o * length * inner);
  return detail::make_result(out, std::move(v), {a}, "slice",
                             [outer = outer, total = total, inner = inner, start, length](Node& s) {
                               if (double* g = detail::pgrad(s, 0))
                                 for (std::size_t o = 0; o < outer; ++o)
                                   for (std::size_t i = 0; i < length * inner; ++i)
                                     g[(o * total + start) * inner + i] += s.grad[o * length * inner + i];
                             });
}

inline Tensor relu(const Tensor& a) {
  std::vector<double> v(a.numel());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.data()[i] > 0.0 ? a.data()[i] : 0.0;
  return detail::make_result(a.shape(), std::move(v), {a}, "relu", [](Node& s) {
    const auto& x = s.parents[0]->value;
    if (double* g = detail::pgrad(s, 0))
      for (std::size_t i = 0; i < s.grad.size(); ++i)
        if (x[i] > 0.0) g[i] += s.grad[i];
  });
}

inline double sigmoid_scalar(double x) {
  return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

inline Tensor sigmoid(const Tensor& a) {
  std::vector<double> v(a.numel());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = sigmoid_scalar(a.data()[i]);
  return detail::make_result(a.shape(), v, {a}, "sigmoid", [y = v](Node& s) {
    if (double* g = detail::pgrad(s, 0))
      for (std::size_t i = 0; i < s.grad.size(); ++i) g[i] += s.grad[i] * y[i] * (1.0 - y[i]);
  });
}

/// Row-wise softmax of a [R, C] tensor.
inline Tensor softmax_rows(const Tensor& a) {
  if (a.rank() != 2) throw ShapeError("softmax_rows", "expects [R, C], got " + shape_str(a.shape()));
  const int R = a.dim(0), C = a.dim(1);
  std::vector<double> v(a.numel());
  for (int r = 0; r < R; ++r) {
    const double* x = a.data().data() + static_cast<std::size_t>(r) * C;
    double* y = v.data() + static_cast<std::size_t>(r) * C;
    const double mx = *std::max_element(x, x + C);
    double z = 0.0;
    for (int c = 0; c < C; ++c) z += (y[c] = std::exp(x[c] - mx));
    for (int c = 0; c < C; ++c) y[c] /= z;
  }
  return detail::make_result(a.shape(), v, {a}, "softmax_rows", [y = v, R, C](Node& s) {
    double* g = detail::pgrad(s, 0);
    if (!g) return;
    for (int r = 0; r < R; ++r) {
      const std::size_t o = static_cast<std::size_t>(r) * C;
      double dot = 0.0;
      for (int c = 0; c < C; ++c) dot += s.grad[o + c] * y[o + c];
      for (int c = 0; c < C; ++c) g[o + c] += y[o + c] * (s.grad[o + c] - dot);
    }
  });
}

inline Tensor log(const Tensor& a) {
  std::vector<double> v(a.numel());
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (!(a.data()[i] > 0.0)) throw NumericalError("log: non-positive argument");
    v[i] = std::log(a.data()[i]);
  }
  return detail::make_result(a.shape(), std::move(v), {a}, "log", [](Node& s) {
    const auto& x = s.parents[0]->value;
    if (double* g = detail::pgrad(s, 0))
      for (std::size_t i = 0; i < s.grad.size(); ++i) g[i] += s.grad[i] / x[i];
  });
}

inline Tensor abs(const Tensor& a) {
  std::vector<double> v(a.numel());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = std::abs(a.data()[i]);
  return detail::make_result(a.shape(), std::move(v), {a}, "abs", [](Node& s) {
    const auto& x = s.parents[0]->value;
    if (double* g = detail::pgrad(s, 0))
      for (std::size_t i = 0; i < s.grad.size(); ++i) g[i] += s.grad[i] * (x[i] > 0 ? 1.0 : (x[i] < 0 ? -1.0 : 0.0));
  });
}

/// Maximum over all elements; the gradient goes to the first maximiser.
inline Tensor max_reduce(const Tensor& a) {
  if (a.numel() == 0) throw ShapeError("max_reduce", "empty tensor");
  const auto it = std::max_element(a.data().begin(), a.data().end());
  const std::size_t idx = static_cast<std::size_t>(it - a.data().begin());
  return detail::make_result({1}, {*it}, {a}, "max_reduce", [idx](Node& s) {
    if (double* g = detail::pgrad(s, 0)) g[idx] += s.grad[0];
  });
}

inline Tensor sum_reduce(const Tensor& a) {
  const double v = std::accumulate(a.data().begin(), a.data().end(), 0.0);
  return detail::make_result({1}, {v}, {a}, "sum_reduce", [](Node& s) {
    if (double* g = detail::pgrad(s, 0))
      for (std::size_t i = 0; i < s.parents[0]->value.size(); ++i) g[i] += s.grad[0];
  });
}

inline Tensor mean_reduce(const Tensor& a) { return scale(sum_reduce(a), 1.0 / static_cast<double>(a.numel())); }

inline Tensor square_sum(const Tensor& a) {
  double v = 0.0;
  for (double x : a.data()) v += x * x;
  return detail::make_result({1}, {v}, {a}, "square_sum", [](Node& s) {
    const auto& x = s.parents[0]->value;
    if (double* g = detail::pgrad(s, 0))
      for (std::size_t i = 0; i < x.size(); ++i) g[i] += 2.0 * x[i] * s.grad[0];
  });
}

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) throw ShapeError("matmul", a.shape(), b.shape());
  const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<double> v(static_cast<std::size_t>(m) * n);
  detail::MapRM(v.data(), m, n).noalias() = detail::CMapRM(a.data().data(), m, k) * detail::CMapRM(b.data().data(), k, n);
  return detail::make_result({m, n}, std::move(v), {a, b}, "matmul", [m, k, n](Node& s) {
    detail::CMapRM G(s.grad.data(), m, n);
    if (double* g = detail::pgrad(s, 0))
      detail::MapRM(g, m, k).noalias() += G * detail::CMapRM(s.parents[1]->value.data(), k, n).transpose();
    if (double* g = detail::pgrad(s, 1))
      detail::MapRM(g, k, n).noalias() += detail::CMapRM(s.parents[0]->value.data(), m, k).transpose() * G;
  });
}

// ---------------------------------------------------------------------------
// Convolutions on single-sample [C, H, W] tensors
// ---------------------------------------------------------------------------

namespace detail {

struct ConvGeom {
  int cin, h, w, k, stride, pad, ho, wo;
};

/// cols[(c*k + i)*k + j, oy*wo + ox] = x[c, oy*s + i - p, ox*s + j - p].
inline void im2col(const double* x, const ConvGeom& g, double* cols) {
  const int plane = g.ho * g.wo;
  for (int c = 0; c < g.cin; ++c)
    for (int i = 0; i < g.k; ++i)
      for (int j = 0; j < g.k; ++j) {
        double* row = cols + static_cast<std::size_t>((c * g.k + i) * g.k + j) * plane;
        for (int oy = 0; oy < g.ho; ++oy) {
          const int iy = oy * g.stride + i - g.pad;
          for (int ox = 0; ox < g.wo; ++ox) {
            const int ix = ox * g.stride + j - g.pad;
            row[oy * g.wo + ox] = (iy >= 0 && iy < g.h && ix >= 0 && ix < g.w) ? x[(c * g.h + iy) * g.w + ix] : 0.0;
          }
        }
      }
}

inline void col2im(const double* cols, const ConvGeom& g, double* x) {
  const int plane = g.ho * g.wo;
  for (int c = 0; c < g.cin; ++c)
    for (int i = 0; i < g.k; ++i)
      for (int j = 0; j < g.k; ++j) {
        const double* row = cols + static_cast<std::size_t>((c * g.k + i) * g.k + j) * plane;
        for (int oy = 0; oy < g.ho; ++oy) {
          const int iy = oy * g.stride + i - g.pad;
          if (iy < 0 || iy >= g.h) continue;
          for (int ox = 0; ox < g.wo; ++ox) {
            const int ix = ox * g.stride + j - g.pad;
            if (ix >= 0 && ix < g.w) x[(c * g.h + iy) * g.w + ix] += row[oy * g.wo + ox];
          }
        }
      }
}

}  // namespace detail

/// x: [Cin, H, W], w: [Cout, Cin, k, k], zero padding `pad`.
inline Tensor conv2d(const Tensor& x, const Tensor& w, int stride = 1, int pad = -1) {
  if (x.rank() != 3 || w.rank() != 4 || w.dim(1) != x.dim(0) || w.dim(2) != w.dim(3)) throw ShapeError("conv2d", x.shape(), w.shape());
  if (stride < 1) throw ShapeError("conv2d", "stride must be >= 1");
  const int k = w.dim(2);
  if (pad < 0) pad = k / 2;
  detail::ConvGeom g{x.dim(0), x.dim(1), x.dim(2), k, stride, pad, 0, 0};
  g.ho = (g.h + 2 * pad - k) / stride + 1;
  g.wo = (g.w + 2 * pad - k) / stride + 1;
  if (g.ho < 1 || g.wo < 1) throw ShapeError("conv2d", x.shape(), w.shape());
  const int cout = w.dim(0);
  const int ck = g.cin * k * k;
  const int plane = g.ho * g.wo;
  std::vector<double> cols(static_cast<std::size_t>(ck) * plane);
  detail::im2col(x.data().data(), g, cols.data());
  std::vector<double> v(static_cast<std::size_t>(cout) * plane);
  detail::MapRM(v.data(), cout, plane).noalias() = detail::CMapRM(w.data().data(), cout, ck) * detail::CMapRM(cols.data(), ck, plane);
  return detail::make_result({cout, g.ho, g.wo}, std::move(v), {x, w}, "conv2d",
                             [g, cout, ck, plane, cols = std::move(cols)](Node& s) {
                               detail::CMapRM G(s.grad.data(), cout, plane);
                               if (double* gw = detail::pgrad(s, 1))
                                 detail::MapRM(gw, cout, ck).noalias() += G * detail::CMapRM(cols.data(), ck, plane).transpose();
                               if (double* gx = detail::pgrad(s, 0)) {
                                 std::vector<double> dcols(static_cast<std::size_t>(ck) * plane);
                                 detail::MapRM(dcols.data(), ck, plane).noalias() =
                                     detail::CMapRM(s.parents[1]->value.data(), cout, ck).transpose() * G;
                                 detail::col2im(dcols.data(), g, gx);
                               }
                             });
}

/**
 * Transposed convolution. x: [Cin, H, W], w: [Cin, Cout, k, k].
 * Output extent (H-1)*stride - 2*pad + k + output_pad.
 */
inline Tensor conv2d_transpose(const Tensor& x, const Tensor& w, int stride = 2, int pad = -1, int output_pad = -1) {
  if (x.rank() != 3 || w.rank() != 4 || w.dim(0) != x.dim(0) || w.dim(2) != w.dim(3)) throw ShapeError("conv2d_transpose", x.shape(), w.shape());
  const int k = w.dim(2);
  if (pad < 0) pad = k / 2;
  if (output_pad < 0) output_pad = stride - 1;
  const int cin = x.dim(0), h = x.dim(1), wd = x.dim(2);
  const int cout = w.dim(1);
  const int ho = (h - 1) * stride - 2 * pad + k + output_pad;
  const int wo = (wd - 1) * stride - 2 * pad + k + output_pad;
  if (ho < 1 || wo < 1) throw ShapeError("conv2d_transpose", x.shape(), w.shape());
  // geometry of the forward convolution this op is the adjoint of
  detail::ConvGeom g{cout, ho, wo, k, stride, pad, h, wd};
  const int ck = cout * k * k;
  const int plane = h * wd;
  std::vector<double> cols(static_cast<std::size_t>(ck) * plane);
  detail::MapRM(cols.data(), ck, plane).noalias() =
      detail::CMapRM(w.data().data(), cin, ck).transpose() * detail::CMapRM(x.data().data(), cin, plane);
  std::vector<double> v(static_cast<std::size_t>(cout) * ho * wo, 0.0);
  detail::col2im(cols.data(), g, v.data());
  return detail::make_result({cout, ho, wo}, std::move(v), {x, w}, "conv2d_transpose", [g, cin, ck, plane](Node& s) {
    std::vector<double> gcols(static_cast<std::size_t>(ck) * plane);
    detail::im2col(s.grad.data(), g, gcols.data());
    detail::CMapRM GC(gcols.data(), ck, plane);
    if (double* gx = detail::pgrad(s, 0))
      detail::MapRM(gx, cin, plane).noalias() += detail::CMapRM(s.parents[1]->value.data(), cin, ck) * GC;
    if (double* gw = detail::pgrad(s, 1))
      detail::MapRM(gw, cin, ck).noalias() += detail::CMapRM(s.parents[0]->value.data(), cin, plane) * GC.transpose();
  });
}

// ---------------------------------------------------------------------------
// Loss
// ---------------------------------------------------------------------------

/// Mean binary cross-entropy with probabilities clamped to [eps, 1 - eps].
inline Tensor bce_loss(const Tensor& prob, const Bits& bits, double eps = 1e-7) {
  if (prob.numel() != bits.size()) {
    throw ShapeError("bce_loss", "probability count " + std::to_string(prob.numel()) + " != bit count " +
                                     std::to_string(bits.size()));
  }
  const double Q = static_cast<double>(bits.size());
  double acc = 0.0;
  for (std::size_t i = 0; i < bits.size(); ++i) {
    const double p = std::clamp(prob.data()[i], eps, 1.0 - eps);
    acc += bits[i] ? std::log(p) : std::log(1.0 - p);
  }
  return detail::make_result({1}, {-acc / Q}, {prob}, "bce_loss", [bits, eps, Q](Node& s) {
    const auto& pv = s.parents[0]->value;
    if (double* g = detail::pgrad(s, 0))
      for (std::size_t i = 0; i < bits.size(); ++i) {
        const double p = pv[i];
        if (p < eps || p > 1.0 - eps) continue;
        g[i] += s.grad[0] * (bits[i] ? -1.0 / p : 1.0 / (1.0 - p)) / Q;
      }
  });
}

// ---------------------------------------------------------------------------
// Optimiser
// ---------------------------------------------------------------------------

struct AdamConfig {
  double lr_start = 1e-3;
  double lr_end = 1e-4;
  int total_epochs = 1;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-4;

  /// Linear schedule from lr_start at epoch 0 to lr_end at the final epoch.
  double lr_at(int epoch) const {
    if (total_epochs <= 1) return lr_start;
    const double t = std::clamp(static_cast<double>(epoch) / (total_epochs - 1), 0.0, 1.0);
    return lr_start + (lr_end - lr_start) * t;
  }
};

/// Adam with decoupled weight decay.
class Adam {
 public:
  Adam(std::vector<Tensor> params, AdamConfig cfg) : params_(std::move(params)), cfg_(cfg) {
    for (const auto& p : params_) {
      m_.emplace_back(p.numel(), 0.0);
      v_.emplace_back(p.numel(), 0.0);
    }
  }

  void step(double lr) {
    ++steps_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(steps_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(steps_));
    for (std::size_t k = 0; k < params_.size(); ++k) {
      Tensor& p = params_[k];
      const auto& g = p.grad();
      auto& x = p.data();
      for (std::size_t i = 0; i < x.size(); ++i) {
        m_[k][i] = cfg_.beta1 * m_[k][i] + (1.0 - cfg_.beta1) * g[i];
        v_[k][i] = cfg_.beta2 * v_[k][i] + (1.0 - cfg_.beta2) * g[i] * g[i];
        const double mh = m_[k][i] / bc1;
        const double vh = v_[k][i] / bc2;
        x[i] -= lr * (mh / (std::sqrt(vh) + cfg_.eps) + cfg_.weight_decay * x[i]);
      }
    }
  }

  void zero_grad() {
    for (auto& p : params_) p.zero_grad();
  }

  long steps() const { return steps_; }
  void set_steps(long s) { steps_ = s; }
  const AdamConfig& config() const { return cfg_; }
  std::vector<std::vector<double>>& first_moments() { return m_; }
  std::vector<std::vector<double>>& second_moments() { return v_; }
  const std::vector<Tensor>& params() const { return params_; }

 private:
  std::vector<Tensor> params_;
  AdamConfig cfg_;
  std::vector<std::vector<double>> m_, v_;
  long steps_ = 0;
};

// ---------------------------------------------------------------------------
// Gradient verification
// ---------------------------------------------------------------------------

struct GradCheckResult {
  double max_error = 0.0;  // max |analytic - numeric| / max(|numeric|, floor)
  std::size_t checked = 0;
};

/**
 * Compares the analytic gradient of `loss_fn()` with respect to `param`
 * against central differences. `loss_fn` must rebuild the graph on each call.
 */
template <class F>
GradCheckResult finite_difference_check(F&& loss_fn, Tensor param, double step = 1e-4, double abs_floor = 1e-2) {
  param.zero_grad();
  Tensor loss = loss_fn();
  backward(loss);
  const std::vector<double> analytic = param.grad();
  GradCheckResult r;
  NoGradGuard ng;
  for (std::size_t i = 0; i < param.numel(); ++i) {
    const double x0 = param.data()[i];
    param.data()[i] = x0 + step;
    const double fp = loss_fn().item();
    param.data()[i] = x0 - step;
    const double fm = loss_fn().item();
    param.data()[i] = x0;
    const double numeric = (fp - fm) / (2.0 * step);
    const double err = std::abs(analytic[i] - numeric) / std::max(std::abs(numeric), abs_floor);
    r.max_error = std::max(r.max_error, err);
    ++r.checked;
  }
  return r;
}

}  // namespace otfs::ad
