#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "relpose/error.hpp"
#include "relpose/tensor.hpp"

namespace relpose::ad {

template <typename T>
struct Node;
template <typename T>
using NodePtr = std::shared_ptr<Node<T>>;

// When grad mode is off, ops do not record parents or backward closures, so
// intermediate values are released as soon as their NodePtr goes out of
// scope. Used for inference over large grids.
inline bool& grad_mode() {
  thread_local bool enabled = true;
  return enabled;
}

struct NoGradGuard {
  bool prev;
  NoGradGuard() : prev(grad_mode()) { grad_mode() = false; }
  ~NoGradGuard() { grad_mode() = prev; }
};

template <typename T>
struct Node {
  Tensor<T> value;
  Tensor<T> grad;  // empty until backward touches this node
  bool needs_grad = false;
  std::vector<NodePtr<T>> parents;
  std::function<void(Node<T>&)> backward_fn;

  void ensure_grad() {
    if (grad.data.empty()) grad = Tensor<T>::zeros(value.shape);
  }
  void zero_grad() { grad = Tensor<T>::zeros(value.shape); }
  bool scalar() const { return value.size() == 1; }
};

// Trainable leaf: participates in backward, grad pre-allocated to zeros.
template <typename T>
NodePtr<T> leaf(Tensor<T> v) {
  auto n = std::make_shared<Node<T>>();
  n->value = std::move(v);
  n->needs_grad = true;
  n->zero_grad();
  return n;
}

// Non-trainable input (images, coordinates, targets).
template <typename T>
NodePtr<T> constant(Tensor<T> v) {
  auto n = std::make_shared<Node<T>>();
  n->value = std::move(v);
  return n;
}

template <typename T>
void check_finite(const Tensor<T>& t, const char* op) {
  if (!t.all_finite())
    throw NonFiniteValue(std::string(op) + " produced NaN/Inf");
}

template <typename T>
NodePtr<T> make_op(Tensor<T> value, std::vector<NodePtr<T>> parents,
                   std::function<void(Node<T>&)> backward, const char* op) {
  check_finite(value, op);
  auto n = std::make_shared<Node<T>>();
  n->value = std::move(value);
  bool parents_need = false;
  for (const auto& p : parents) parents_need |= p->needs_grad;
  if (grad_mode() && parents_need) {
    n->needs_grad = true;
    n->parents = std::move(parents);
    n->backward_fn = std::move(backward);
  }
  return n;
}

// ---------------------------------------------------------------------------
// Elementwise ops
// ---------------------------------------------------------------------------

template <typename T>
NodePtr<T> add(NodePtr<T> a, NodePtr<T> b) {
  require_same_shape(a->value, b->value, "add");
  Tensor<T> out(a->value.shape);
  for (int i = 0; i < out.size(); ++i) out[i] = a->value[i] + b->value[i];
  return make_op<T>(std::move(out), {a, b}, [](Node<T>& self) {
    for (int k = 0; k < 2; ++k) {
      auto& p = *self.parents[k];
      if (!p.needs_grad) continue;
      p.ensure_grad();
      for (int i = 0; i < self.grad.size(); ++i) p.grad[i] += self.grad[i];
    }
  }, "add");
}

template <typename T>
NodePtr<T> sub(NodePtr<T> a, NodePtr<T> b) {
  require_same_shape(a->value, b->value, "sub");
  Tensor<T> out(a->value.shape);
  for (int i = 0; i < out.size(); ++i) out[i] = a->value[i] - b->value[i];
  return make_op<T>(std::move(out), {a, b}, [](Node<T>& self) {
    auto& pa = *self.parents[0];
    if (pa.needs_grad) {
      pa.ensure_grad();
      for (int i = 0; i < self.grad.size(); ++i) pa.grad[i] += self.grad[i];
    }
    auto& pb = *self.parents[1];
    if (pb.needs_grad) {
      pb.ensure_grad();
      for (int i = 0; i < self.grad.size(); ++i) pb.grad[i] -= self.grad[i];
    }
  }, "sub");
}

template <typename T>
NodePtr<T> mul(NodePtr<T> a, NodePtr<T> b) {
  require_same_shape(a->value, b->value, "mul");
  Tensor<T> out(a->value.shape);
  for (int i = 0; i < out.size(); ++i) out[i] = a->value[i] * b->value[i];
  return make_op<T>(std::move(out), {a, b}, [](Node<T>& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    if (pa.needs_grad) {
      pa.ensure_grad();
      for (int i = 0; i < self.grad.size(); ++i)
        pa.grad[i] += self.grad[i] * pb.value[i];
    }
    if (pb.needs_grad) {
      pb.ensure_grad();
      for (int i = 0; i < self.grad.size(); ++i)
        pb.grad[i] += self.grad[i] * pa.value[i];
    }
  }, "mul");
}

template <typename T>
NodePtr<T> scalar_mul(NodePtr<T> a, T c) {
  Tensor<T> out(a->value.shape);
  for (int i = 0; i < out.size(); ++i) out[i] = c * a->value[i];
  return make_op<T>(std::move(out), {a}, [c](Node<T>& self) {
    auto& p = *self.parents[0];
    if (!p.needs_grad) return;
    p.ensure_grad();
    for (int i = 0; i < self.grad.size(); ++i) p.grad[i] += c * self.grad[i];
  }, "scalar_mul");
}

// Multiply a tensor by a 1-element node; the graph-valued counterpart of
// scalar_mul, needed for divisions by computed norms.
template <typename T>
NodePtr<T> scale_by(NodePtr<T> a, NodePtr<T> s) {
  if (s->value.size() != 1)
    throw ShapeMismatch("scale_by: scale must be 1-element, got " +
                        shape_str(s->value.shape));
  const T sv = s->value[0];
  Tensor<T> out(a->value.shape);
  for (int i = 0; i < out.size(); ++i) out[i] = sv * a->value[i];
  return make_op<T>(std::move(out), {a, s}, [](Node<T>& self) {
    auto& pa = *self.parents[0];
    auto& ps = *self.parents[1];
    const T sv = ps.value[0];
    if (pa.needs_grad) {
      pa.ensure_grad();
      for (int i = 0; i < self.grad.size(); ++i)
        pa.grad[i] += sv * self.grad[i];
    }
    if (ps.needs_grad) {
      ps.ensure_grad();
      T acc = 0;
      for (int i = 0; i < self.grad.size(); ++i)
        acc += self.grad[i] * pa.value[i];
      ps.grad[0] += acc;
    }
  }, "scale_by");
}

template <typename T>
NodePtr<T> reciprocal(NodePtr<T> a) {
  Tensor<T> out(a->value.shape);
  for (int i = 0; i < out.size(); ++i) out[i] = T(1) / a->value[i];
  return make_op<T>(std::move(out), {a}, [](Node<T>& self) {
    auto& p = *self.parents[0];
    if (!p.needs_grad) return;
    p.ensure_grad();
    for (int i = 0; i < self.grad.size(); ++i) {
      const T y = self.value[i];
      p.grad[i] -= self.grad[i] * y * y;
    }
  }, "reciprocal");
}

template <typename T>
NodePtr<T> exp(NodePtr<T> a) {
  Tensor<T> out(a->value.shape);
  for (int i = 0; i < out.size(); ++i) out[i] = std::exp(a->value[i]);
  return make_op<T>(std::move(out), {a}, [](Node<T>& self) {
    auto& p = *self.parents[0];
    if (!p.needs_grad) return;
    p.ensure_grad();
    for (int i = 0; i < self.grad.size(); ++i)
      p.grad[i] += self.grad[i] * self.value[i];
  }, "exp");
}

// relu'(0) = 0 by convention.
template <typename T>
NodePtr<T> relu(NodePtr<T> a) {
  Tensor<T> out(a->value.shape);
  for (int i = 0; i < out.size(); ++i)
    out[i] = a->value[i] > T(0) ? a->value[i] : T(0);
  return make_op<T>(std::move(out), {a}, [](Node<T>& self) {
    auto& p = *self.parents[0];
    if (!p.needs_grad) return;
    p.ensure_grad();
    for (int i = 0; i < self.grad.size(); ++i)
      if (p.value[i] > T(0)) p.grad[i] += self.grad[i];
  }, "relu");
}

// ---------------------------------------------------------------------------
// Shape ops
// ---------------------------------------------------------------------------

template <typename T>
NodePtr<T> reshape(NodePtr<T> a, std::vector<int> new_shape) {
  if (Tensor<T>::count(new_shape) != a->value.size())
    throw ShapeMismatch("reshape: " + shape_str(a->value.shape) + " to " +
                        shape_str(new_shape));
  Tensor<T> out(std::move(new_shape), a->value.data);
  return make_op<T>(std::move(out), {a}, [](Node<T>& self) {
    auto& p = *self.parents[0];
    if (!p.needs_grad) return;
    p.ensure_grad();
    for (int i = 0; i < self.grad.size(); ++i) p.grad[i] += self.grad[i];
  }, "reshape");
}

template <typename T>
NodePtr<T> transpose2d(NodePtr<T> a) {
  if (a->value.ndim() != 2)
    throw ShapeMismatch("transpose2d expects 2-d, got " +
                        shape_str(a->value.shape));
  const int r = a->value.dim(0), c = a->value.dim(1);
  Tensor<T> out({c, r});
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) out.at(j, i) = a->value.at(i, j);
  return make_op<T>(std::move(out), {a}, [r, c](Node<T>& self) {
    auto& p = *self.parents[0];
    if (!p.needs_grad) return;
    p.ensure_grad();
    for (int i = 0; i < r; ++i)
      for (int j = 0; j < c; ++j) p.grad.at(i, j) += self.grad.at(j, i);
  }, "transpose2d");
}

template <typename T>
NodePtr<T> concat(const std::vector<NodePtr<T>>& parts, int axis) {
  if (parts.empty()) throw ShapeMismatch("concat: no inputs");
  const auto& s0 = parts[0]->value.shape;
  if (axis < 0 || axis >= static_cast<int>(s0.size()))
    throw ShapeMismatch("concat: bad axis");
  std::vector<int> out_shape = s0;
  int total = 0;
  for (const auto& p : parts) {
    const auto& s = p->value.shape;
    if (s.size() != s0.size())
      throw ShapeMismatch("concat: rank mismatch");
    for (std::size_t d = 0; d < s.size(); ++d)
      if (static_cast<int>(d) != axis && s[d] != s0[d])
        throw ShapeMismatch("concat: " + shape_str(s) + " vs " + shape_str(s0));
    total += s[static_cast<std::size_t>(axis)];
  }
  out_shape[static_cast<std::size_t>(axis)] = total;

  long long outer = 1, inner = 1;
  for (int d = 0; d < axis; ++d) outer *= s0[static_cast<std::size_t>(d)];
  for (std::size_t d = static_cast<std::size_t>(axis) + 1; d < s0.size(); ++d)
    inner *= s0[d];

  Tensor<T> out(out_shape);
  std::vector<int> lens;
  for (const auto& p : parts)
    lens.push_back(p->value.shape[static_cast<std::size_t>(axis)]);
  {
    long long off = 0;
    for (std::size_t k = 0; k < parts.size(); ++k) {
      const auto& v = parts[k]->value;
      const long long blk = static_cast<long long>(lens[k]) * inner;
      for (long long o = 0; o < outer; ++o)
        std::copy_n(v.data.begin() + o * blk, blk,
                    out.data.begin() + o * total * inner + off);
      off += blk;
    }
  }
  std::vector<NodePtr<T>> parents(parts.begin(), parts.end());
  return make_op<T>(std::move(out), std::move(parents),
                    [outer, inner, total, lens](Node<T>& self) {
    long long off = 0;
    for (std::size_t k = 0; k < self.parents.size(); ++k) {
      auto& p = *self.parents[k];
      const long long blk = static_cast<long long>(lens[k]) * inner;
      if (p.needs_grad) {
        p.ensure_grad();
        for (long long o = 0; o < outer; ++o) {
          const T* src = self.grad.data.data() + o * total * inner + off;
          T* dst = p.grad.data.data() + o * blk;
          for (long long i = 0; i < blk; ++i) dst[i] += src[i];
        }
      }
      off += blk;
    }
  }, "concat");
}

// Select rows (first-axis slices) by index; duplicate indices accumulate in
// the backward scatter.
template <typename T>
NodePtr<T> gather(NodePtr<T> a, std::vector<int> idx) {
  if (a->value.ndim() < 1) throw ShapeMismatch("gather: rank-0 input");
  const int rows = a->value.dim(0);
  long long stride = 1;
  for (int d = 1; d < a->value.ndim(); ++d) stride *= a->value.dim(d);
  for (int i : idx)
    if (i < 0 || i >= rows)
      throw IndexOutOfRange("gather: index " + std::to_string(i) +
                            " outside [0, " + std::to_string(rows) + ")");
  std::vector<int> out_shape = a->value.shape;
  out_shape[0] = static_cast<int>(idx.size());
  Tensor<T> out(out_shape);
  for (std::size_t r = 0; r < idx.size(); ++r)
    std::copy_n(a->value.data.begin() + idx[r] * stride, stride,
                out.data.begin() + static_cast<long long>(r) * stride);
  return make_op<T>(std::move(out), {a},
                    [idx = std::move(idx), stride](Node<T>& self) {
    auto& p = *self.parents[0];
    if (!p.needs_grad) return;
    p.ensure_grad();
    for (std::size_t r = 0; r < idx.size(); ++r) {
      const T* src = self.grad.data.data() + static_cast<long long>(r) * stride;
      T* dst = p.grad.data.data() + idx[r] * stride;
      for (long long i = 0; i < stride; ++i) dst[i] += src[i];
    }
  }, "gather");
}

// ---------------------------------------------------------------------------
// Reductions and norms
// ---------------------------------------------------------------------------

template <typename T>
NodePtr<T> sum(NodePtr<T> a) {
  T acc = 0;
  for (int i = 0; i < a->value.size(); ++i) acc += a->value[i];
  return make_op<T>(Tensor<T>::scalar(acc), {a}, [](Node<T>& self) {
    auto& p = *self.parents[0];
    if (!p.needs_grad) return;
    p.ensure_grad();
    for (int i = 0; i < p.grad.size(); ++i) p.grad[i] += self.grad[0];
  }, "sum");
}

template <typename T>
NodePtr<T> mean(NodePtr<T> a) {
  const T inv = T(1) / static_cast<T>(a->value.size());
  T acc = 0;
  for (int i = 0; i < a->value.size(); ++i) acc += a->value[i];
  return make_op<T>(Tensor<T>::scalar(acc * inv), {a}, [inv](Node<T>& self) {
    auto& p = *self.parents[0];
    if (!p.needs_grad) return;
    p.ensure_grad();
    for (int i = 0; i < p.grad.size(); ++i) p.grad[i] += self.grad[0] * inv;
  }, "mean");
}

// sign(0) = 0 convention for the L1 subgradient.
template <typename T>
NodePtr<T> l1_norm(NodePtr<T> a) {
  T acc = 0;
  for (int i = 0; i < a->value.size(); ++i) acc += std::abs(a->value[i]);
  return make_op<T>(Tensor<T>::scalar(acc), {a}, [](Node<T>& self) {
    auto& p = *self.parents[0];
    if (!p.needs_grad) return;
    p.ensure_grad();
    for (int i = 0; i < p.grad.size(); ++i) {
      const T x = p.value[i];
      if (x > T(0)) p.grad[i] += self.grad[0];
      else if (x < T(0)) p.grad[i] -= self.grad[0];
    }
  }, "l1_norm");
}

template <typename T>
NodePtr<T> l2_norm(NodePtr<T> a) {
  T acc = 0;
  for (int i = 0; i < a->value.size(); ++i) acc += a->value[i] * a->value[i];
  const T nrm = std::sqrt(acc);
  return make_op<T>(Tensor<T>::scalar(nrm), {a}, [](Node<T>& self) {
    auto& p = *self.parents[0];
    if (!p.needs_grad) return;
    const T nrm = self.value[0];
    if (nrm == T(0)) return;  // subgradient 0 at the origin
    p.ensure_grad();
    for (int i = 0; i < p.grad.size(); ++i)
      p.grad[i] += self.grad[0] * p.value[i] / nrm;
  }, "l2_norm");
}

// ---------------------------------------------------------------------------
// Linear algebra
// ---------------------------------------------------------------------------

template <typename T>
NodePtr<T> matmul(NodePtr<T> a, NodePtr<T> b) {
  if (a->value.ndim() != 2 || b->value.ndim() != 2 ||
      a->value.dim(1) != b->value.dim(0))
    throw ShapeMismatch("matmul: " + shape_str(a->value.shape) + " x " +
                        shape_str(b->value.shape));
  const int m = a->value.dim(0), k = a->value.dim(1), n = b->value.dim(1);
  Tensor<T> out({m, n});
  for (int i = 0; i < m; ++i) {
    T* orow = &out.at(i, 0);
    for (int p = 0; p < k; ++p) {
      const T av = a->value.at(i, p);
      const T* brow = &b->value.at(p, 0);
      for (int j = 0; j < n; ++j) orow[j] += av * brow[j];
    }
  }
  return make_op<T>(std::move(out), {a, b}, [m, k, n](Node<T>& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    if (pa.needs_grad) {
      pa.ensure_grad();  // dA = G * B^T
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) {
          const T g = self.grad.at(i, j);
          if (g == T(0)) continue;
          const T* brow = &pb.value.at(0, j);
          for (int p = 0; p < k; ++p)
            pa.grad.at(i, p) += g * brow[static_cast<std::size_t>(p) * n];
        }
    }
    if (pb.needs_grad) {
      pb.ensure_grad();  // dB = A^T * G
      for (int i = 0; i < m; ++i)
        for (int p = 0; p < k; ++p) {
          const T av = pa.value.at(i, p);
          if (av == T(0)) continue;
          const T* grow = &self.grad.at(i, 0);
          T* brow = &pb.grad.at(p, 0);
          for (int j = 0; j < n; ++j) brow[j] += av * grow[j];
        }
    }
  }, "matmul");
}

// y = x W^T + b. Accepts a (k) vector or an (n, k) row-batch.
template <typename T>
NodePtr<T> linear(NodePtr<T> x, NodePtr<T> w, NodePtr<T> b) {
  if (w->value.ndim() != 2 || b->value.ndim() != 1 ||
      b->value.dim(0) != w->value.dim(0))
    throw ShapeMismatch("linear: weight " + shape_str(w->value.shape) +
                        " bias " + shape_str(b->value.shape));
  const int m = w->value.dim(0), k = w->value.dim(1);
  const bool batched = x->value.ndim() == 2;
  const int rows = batched ? x->value.dim(0) : 1;
  const int xk = batched ? x->value.dim(1)
                         : (x->value.ndim() == 1 ? x->value.dim(0) : -1);
  if (xk != k)
    throw ShapeMismatch("linear: input " + shape_str(x->value.shape) +
                        " vs weight " + shape_str(w->value.shape));
  Tensor<T> out(batched ? std::vector<int>{rows, m} : std::vector<int>{m});
  for (int r = 0; r < rows; ++r) {
    const T* xr = x->value.data.data() + static_cast<long long>(r) * k;
    T* yr = out.data.data() + static_cast<long long>(r) * m;
    for (int o = 0; o < m; ++o) {
      const T* wrow = &w->value.at(o, 0);
      T acc = b->value[o];
      for (int i = 0; i < k; ++i) acc += wrow[i] * xr[i];
      yr[o] = acc;
    }
  }
  return make_op<T>(std::move(out), {x, w, b}, [rows, m, k](Node<T>& self) {
    auto& px = *self.parents[0];
    auto& pw = *self.parents[1];
    auto& pb = *self.parents[2];
    if (px.needs_grad) px.ensure_grad();
    if (pw.needs_grad) pw.ensure_grad();
    if (pb.needs_grad) pb.ensure_grad();
    for (int r = 0; r < rows; ++r) {
      const T* gr = self.grad.data.data() + static_cast<long long>(r) * m;
      const T* xr = px.value.data.data() + static_cast<long long>(r) * k;
      T* gxr = px.needs_grad
                   ? px.grad.data.data() + static_cast<long long>(r) * k
                   : nullptr;
      for (int o = 0; o < m; ++o) {
        const T g = gr[o];
        if (g == T(0)) continue;
        if (pb.needs_grad) pb.grad[o] += g;
        const T* wrow = &pw.value.at(o, 0);
        if (gxr)
          for (int i = 0; i < k; ++i) gxr[i] += g * wrow[i];
        if (pw.needs_grad) {
          T* gwrow = &pw.grad.at(o, 0);
          for (int i = 0; i < k; ++i) gwrow[i] += g * xr[i];
        }
      }
    }
  }, "linear");
}

// ---------------------------------------------------------------------------
// Softmax / layer norm along an axis
// ---------------------------------------------------------------------------

struct AxisLanes {
  long long outer, len, inner;
};

inline AxisLanes axis_lanes(const std::vector<int>& shape, int axis) {
  if (axis < 0 || axis >= static_cast<int>(shape.size()))
    throw ShapeMismatch("bad axis for shape " + shape_str(shape));
  AxisLanes l{1, shape[static_cast<std::size_t>(axis)], 1};
  for (int d = 0; d < axis; ++d) l.outer *= shape[static_cast<std::size_t>(d)];
  for (std::size_t d = static_cast<std::size_t>(axis) + 1; d < shape.size(); ++d)
    l.inner *= shape[d];
  return l;
}

template <typename T>
NodePtr<T> softmax(NodePtr<T> a, int axis) {
  const AxisLanes L = axis_lanes(a->value.shape, axis);
  Tensor<T> out(a->value.shape);
  for (long long o = 0; o < L.outer; ++o)
    for (long long in = 0; in < L.inner; ++in) {
      const long long base = o * L.len * L.inner + in;
      T mx = a->value[base];
      for (long long i = 1; i < L.len; ++i)
        mx = std::max(mx, a->value[base + i * L.inner]);
      T z = 0;
      for (long long i = 0; i < L.len; ++i) {
        const T e = std::exp(a->value[base + i * L.inner] - mx);
        out[base + i * L.inner] = e;
        z += e;
      }
      for (long long i = 0; i < L.len; ++i) out[base + i * L.inner] /= z;
    }
  return make_op<T>(std::move(out), {a}, [L](Node<T>& self) {
    auto& p = *self.parents[0];
    if (!p.needs_grad) return;
    p.ensure_grad();
    for (long long o = 0; o < L.outer; ++o)
      for (long long in = 0; in < L.inner; ++in) {
        const long long base = o * L.len * L.inner + in;
        T dot = 0;
        for (long long i = 0; i < L.len; ++i) {
          const long long at = base + i * L.inner;
          dot += self.grad[at] * self.value[at];
        }
        for (long long i = 0; i < L.len; ++i) {
          const long long at = base + i * L.inner;
          p.grad[at] += self.value[at] * (self.grad[at] - dot);
        }
      }
  }, "softmax");
}

// Normalizes each lane along `axis`, then applies the per-channel affine
// (gamma, beta), both of length shape[axis]. Biased variance, eps inside
// the square root.
template <typename T>
NodePtr<T> layer_norm(NodePtr<T> x, NodePtr<T> gamma, NodePtr<T> beta,
                      int axis, T eps = T(1e-5)) {
  const AxisLanes L = axis_lanes(x->value.shape, axis);
  if (gamma->value.ndim() != 1 || gamma->value.dim(0) != L.len ||
      beta->value.ndim() != 1 || beta->value.dim(0) != L.len)
    throw ShapeMismatch("layer_norm: affine params must have length " +
                        std::to_string(L.len));
  Tensor<T> out(x->value.shape);
  Tensor<T> xhat(x->value.shape);       // kept for backward
  std::vector<T> invstd(static_cast<std::size_t>(L.outer * L.inner));
  const T invn = T(1) / static_cast<T>(L.len);
  for (long long o = 0; o < L.outer; ++o)
    for (long long in = 0; in < L.inner; ++in) {
      const long long base = o * L.len * L.inner + in;
      T mu = 0;
      for (long long i = 0; i < L.len; ++i) mu += x->value[base + i * L.inner];
      mu *= invn;
      T var = 0;
      for (long long i = 0; i < L.len; ++i) {
        const T d = x->value[base + i * L.inner] - mu;
        var += d * d;
      }
      var *= invn;
      const T is = T(1) / std::sqrt(var + eps);
      invstd[static_cast<std::size_t>(o * L.inner + in)] = is;
      for (long long i = 0; i < L.len; ++i) {
        const long long at = base + i * L.inner;
        const T xh = (x->value[at] - mu) * is;
        xhat[at] = xh;
        out[at] = gamma->value[static_cast<int>(i)] * xh +
                  beta->value[static_cast<int>(i)];
      }
    }
  return make_op<T>(std::move(out), {x, gamma, beta},
                    [L, xhat = std::move(xhat), invstd = std::move(invstd),
                     invn](Node<T>& self) {
    auto& px = *self.parents[0];
    auto& pg = *self.parents[1];
    auto& pb = *self.parents[2];
    if (px.needs_grad) px.ensure_grad();
    if (pg.needs_grad) pg.ensure_grad();
    if (pb.needs_grad) pb.ensure_grad();
    for (long long o = 0; o < L.outer; ++o)
      for (long long in = 0; in < L.inner; ++in) {
        const long long base = o * L.len * L.inner + in;
        const T is = invstd[static_cast<std::size_t>(o * L.inner + in)];
        T mean_dxhat = 0, mean_dxhat_xhat = 0;
        for (long long i = 0; i < L.len; ++i) {
          const long long at = base + i * L.inner;
          const T dxhat = self.grad[at] * pg.value[static_cast<int>(i)];
          mean_dxhat += dxhat;
          mean_dxhat_xhat += dxhat * xhat[at];
        }
        mean_dxhat *= invn;
        mean_dxhat_xhat *= invn;
        for (long long i = 0; i < L.len; ++i) {
          const long long at = base + i * L.inner;
          const T g = self.grad[at];
          if (pg.needs_grad) pg.grad[static_cast<int>(i)] += g * xhat[at];
          if (pb.needs_grad) pb.grad[static_cast<int>(i)] += g;
          if (px.needs_grad) {
            const T dxhat = g * pg.value[static_cast<int>(i)];
            px.grad[at] +=
                is * (dxhat - mean_dxhat - xhat[at] * mean_dxhat_xhat);
          }
        }
      }
  }, "layer_norm");
}

// ---------------------------------------------------------------------------
// Convolution
// ---------------------------------------------------------------------------

// x: (Cin, H, W), w: (Cout, Cin, kh, kw), b: (Cout). Zero padding.
template <typename T>
NodePtr<T> conv2d(NodePtr<T> x, NodePtr<T> w, NodePtr<T> b, int stride,
                  int pad) {
  if (x->value.ndim() != 3 || w->value.ndim() != 4 || b->value.ndim() != 1)
    throw ShapeMismatch("conv2d: expected (C,H,W), (Co,Ci,kh,kw), (Co)");
  const int ci = x->value.dim(0), h = x->value.dim(1), wd = x->value.dim(2);
  const int co = w->value.dim(0), kh = w->value.dim(2), kw = w->value.dim(3);
  if (w->value.dim(1) != ci || b->value.dim(0) != co)
    throw ShapeMismatch("conv2d: channels " + shape_str(x->value.shape) +
                        " vs " + shape_str(w->value.shape));
  if (stride < 1) throw ShapeMismatch("conv2d: stride must be >= 1");
  const int ho = (h + 2 * pad - kh) / stride + 1;
  const int wo = (wd + 2 * pad - kw) / stride + 1;
  if (h + 2 * pad < kh || wd + 2 * pad < kw)
    throw ShapeMismatch("conv2d: kernel larger than padded input");

  Tensor<T> out({co, ho, wo});
  for (int oc = 0; oc < co; ++oc) {
    for (int oy = 0; oy < ho; ++oy)
      for (int ox = 0; ox < wo; ++ox) out.at(oc, oy, ox) = b->value[oc];
    for (int ic = 0; ic < ci; ++ic)
      for (int ky = 0; ky < kh; ++ky)
        for (int kx = 0; kx < kw; ++kx) {
          const T wv = w->value.data[((static_cast<std::size_t>(oc) * ci + ic) * kh + ky) * kw + kx];
          if (wv == T(0)) continue;
          for (int oy = 0; oy < ho; ++oy) {
            const int iy = oy * stride - pad + ky;
            if (iy < 0 || iy >= h) continue;
            const T* xrow = &x->value.at(ic, iy, 0);
            T* orow = &out.at(oc, oy, 0);
            for (int ox = 0; ox < wo; ++ox) {
              const int ix = ox * stride - pad + kx;
              if (ix < 0 || ix >= wd) continue;
              orow[ox] += wv * xrow[ix];
            }
          }
        }
  }
  return make_op<T>(std::move(out), {x, w, b},
                    [ci, h, wd, co, kh, kw, stride, pad, ho, wo](Node<T>& self) {
    auto& px = *self.parents[0];
    auto& pw = *self.parents[1];
    auto& pb = *self.parents[2];
    if (pb.needs_grad) {
      pb.ensure_grad();
      for (int oc = 0; oc < co; ++oc) {
        T acc = 0;
        for (int oy = 0; oy < ho; ++oy)
          for (int ox = 0; ox < wo; ++ox) acc += self.grad.at(oc, oy, ox);
        pb.grad[oc] += acc;
      }
    }
    if (px.needs_grad) px.ensure_grad();
    if (pw.needs_grad) pw.ensure_grad();
    if (!px.needs_grad && !pw.needs_grad) return;
    for (int oc = 0; oc < co; ++oc)
      for (int ic = 0; ic < ci; ++ic)
        for (int ky = 0; ky < kh; ++ky)
          for (int kx = 0; kx < kw; ++kx) {
            const std::size_t wi =
                ((static_cast<std::size_t>(oc) * ci + ic) * kh + ky) * kw + kx;
            const T wv = pw.value.data[wi];
            T wacc = 0;
            for (int oy = 0; oy < ho; ++oy) {
              const int iy = oy * stride - pad + ky;
              if (iy < 0 || iy >= h) continue;
              const T* grow = &self.grad.at(oc, oy, 0);
              const T* xrow = &px.value.at(ic, iy, 0);
              T* gxrow = px.needs_grad ? &px.grad.at(ic, iy, 0) : nullptr;
              for (int ox = 0; ox < wo; ++ox) {
                const int ix = ox * stride - pad + kx;
                if (ix < 0 || ix >= wd) continue;
                const T g = grow[ox];
                if (gxrow) gxrow[ix] += g * wv;
                wacc += g * xrow[ix];
              }
            }
            if (pw.needs_grad) pw.grad.data[wi] += wacc;
          }
  }, "conv2d");
}

// Global max over the spatial grid per channel: (C, h, w) -> (C).
// Gradient routes to the first max position of each channel.
template <typename T>
NodePtr<T> channel_max(NodePtr<T> x) {
  if (x->value.ndim() != 3)
    throw ShapeMismatch("channel_max expects (C,h,w), got " +
                        shape_str(x->value.shape));
  const int c = x->value.dim(0);
  const long long hw =
      static_cast<long long>(x->value.dim(1)) * x->value.dim(2);
  Tensor<T> out({c});
  std::vector<long long> arg(static_cast<std::size_t>(c));
  for (int ch = 0; ch < c; ++ch) {
    const T* base = x->value.data.data() + ch * hw;
    long long best = 0;
    for (long long i = 1; i < hw; ++i)
      if (base[i] > base[best]) best = i;
    out[ch] = base[best];
    arg[static_cast<std::size_t>(ch)] = best;
  }
  return make_op<T>(std::move(out), {x}, [c, hw, arg = std::move(arg)](Node<T>& self) {
    auto& p = *self.parents[0];
    if (!p.needs_grad) return;
    p.ensure_grad();
    for (int ch = 0; ch < c; ++ch)
      p.grad.data[ch * hw + arg[static_cast<std::size_t>(ch)]] += self.grad[ch];
  }, "channel_max");
}

// ---------------------------------------------------------------------------
// Backward
// ---------------------------------------------------------------------------

// Reverse-mode sweep from a scalar root. Every reachable leaf accumulates
// d(root)/d(leaf) into its grad.
template <typename T>
void backward(const NodePtr<T>& root) {
  if (!root->scalar())
    throw NonScalarRoot("backward root has shape " +
                        shape_str(root->value.shape));
  // Iterative post-order DFS for the topological order.
  std::vector<Node<T>*> topo;
  std::unordered_set<Node<T>*> visited;
  std::vector<std::pair<Node<T>*, std::size_t>> stack;
  stack.emplace_back(root.get(), 0);
  visited.insert(root.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node<T>* parent = node->parents[next++].get();
      if (parent->needs_grad && !visited.count(parent)) {
        visited.insert(parent);
        stack.emplace_back(parent, 0);
      }
    } else {
      topo.push_back(node);
      stack.pop_back();
    }
  }
  root->ensure_grad();
  root->grad[0] += T(1);
  for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
    Node<T>* node = *it;
    if (!node->backward_fn) continue;
    node->ensure_grad();
    node->backward_fn(*node);
  }
}

}  // namespace relpose::ad
