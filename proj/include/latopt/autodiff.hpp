#pragma once

// Reverse-mode automatic differentiation on a per-pass tape. Ops append
// nodes; node creation order is a topological order, so backward is a single
// reverse sweep. A graph lives on one thread for the duration of a forward
// and backward pass; parameters enter as inputs and their gradients are read
// back out afterwards.
//
// Templated on the scalar: float for training throughput, double for
// finite-difference gradient checks.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "latopt/gemm.hpp"
#include "latopt/tensor.hpp"

namespace latopt {

template <typename T>
class Graph {
 public:
  struct Node {
    ArrayND<T> val;
    ArrayND<T> grad;
    std::vector<int> parents;
    std::function<void(Graph&)> back;
    bool needs_grad = false;
  };

  int input(ArrayND<T> v, bool needs_grad = false) {
    Node n;
    n.val = std::move(v);
    n.needs_grad = needs_grad;
    nodes_.push_back(std::move(n));
    return static_cast<int>(nodes_.size()) - 1;
  }

  int next_id() const { return static_cast<int>(nodes_.size()); }

  int add_node(ArrayND<T> v, std::vector<int> parents, std::function<void(Graph&)> back) {
    Node n;
    n.val = std::move(v);
    n.parents = std::move(parents);
    for (int p : n.parents) n.needs_grad = n.needs_grad || nodes_[p].needs_grad;
    if (n.needs_grad) n.back = std::move(back);
    nodes_.push_back(std::move(n));
    return static_cast<int>(nodes_.size()) - 1;
  }

  const ArrayND<T>& val(int id) const { return nodes_[id].val; }
  const ArrayND<T>& grad(int id) const { return nodes_[id].grad; }

  // accumulates `g` into the parent's gradient; shape must match exactly
  void accum(int id, const ArrayND<T>& g) {
    Node& n = nodes_[id];
    if (!n.needs_grad) return;
    if (g.shape != n.val.shape)
      throw std::logic_error("gradient shape " + shape_str(g.shape) +
                             " does not match value shape " + shape_str(n.val.shape));
    for (std::int64_t i = 0; i < g.numel(); ++i) n.grad.data[i] += g.data[i];
  }

  // raw accumulation buffer for ops that write gradients in place
  T* accum_buf(int id) {
    Node& n = nodes_[id];
    return n.needs_grad ? n.grad.data.data() : nullptr;
  }

  bool needs_grad(int id) const { return nodes_[id].needs_grad; }

  // seeds d(out)/d(out) = 1 and sweeps the tape in reverse creation order
  void backward(int out) {
    if (nodes_[out].val.numel() != 1)
      throw std::invalid_argument("backward: output must be scalar, got shape " +
                                  shape_str(nodes_[out].val.shape));
    for (int i = 0; i <= out; ++i)
      nodes_[i].grad = ArrayND<T>(nodes_[i].val.shape);
    nodes_[out].grad.data[0] = T(1);
    for (int i = out; i >= 0; --i)
      if (nodes_[i].back && nodes_[i].needs_grad) nodes_[i].back(*this);
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  std::vector<Node> nodes_;
};

template <typename T>
struct Var {
  Graph<T>* g = nullptr;
  int id = -1;

  const ArrayND<T>& val() const { return g->val(id); }
  const ArrayND<T>& grad() const { return g->grad(id); }
};

namespace detail {

template <typename T>
Graph<T>& same_graph(Var<T> a, Var<T> b, const char* op) {
  if (a.g == nullptr || a.g != b.g)
    throw std::invalid_argument(std::string(op) + ": operands from different graphs");
  return *a.g;
}

// generic broadcast binary op; F(a,b) forward, backward contributions are
// computed densely at the output shape then reduced onto each operand
template <typename T, typename FwdF>
ArrayND<T> broadcast_eval(const ArrayND<T>& a, const ArrayND<T>& b, const char* op,
                          FwdF f) {
  ArrayND<T> out(broadcast_shape(a.shape, b.shape, op));
  if (a.shape == b.shape) {
    for (std::int64_t i = 0; i < out.numel(); ++i) out.data[i] = f(a.data[i], b.data[i]);
    return out;
  }
  const auto sa = broadcast_strides(a.shape, out.shape);
  const auto sb = broadcast_strides(b.shape, out.shape);
  const int r = out.rank();
  std::vector<int> idx(r, 0);
  for (std::int64_t i = 0; i < out.numel(); ++i) {
    std::int64_t ia = 0, ib = 0;
    for (int d = 0; d < r; ++d) {
      ia += idx[d] * sa[d];
      ib += idx[d] * sb[d];
    }
    out.data[i] = f(a.data[ia], b.data[ib]);
    for (int d = r - 1; d >= 0; --d) {
      if (++idx[d] < out.shape[d]) break;
      idx[d] = 0;
    }
  }
  return out;
}

// reads operand `x` broadcast up to `out` shape, multiplied elementwise by
// `scale` (typically the upstream gradient); used by mul's backward
template <typename T>
ArrayND<T> broadcast_read_scaled(const ArrayND<T>& x, const ArrayND<T>& scale) {
  ArrayND<T> out(scale.shape);
  if (x.shape == scale.shape) {
    for (std::int64_t i = 0; i < out.numel(); ++i) out.data[i] = x.data[i] * scale.data[i];
    return out;
  }
  const auto sx = broadcast_strides(x.shape, scale.shape);
  const int r = out.rank();
  std::vector<int> idx(r, 0);
  for (std::int64_t i = 0; i < out.numel(); ++i) {
    std::int64_t ix = 0;
    for (int d = 0; d < r; ++d) ix += idx[d] * sx[d];
    out.data[i] = x.data[ix] * scale.data[i];
    for (int d = r - 1; d >= 0; --d) {
      if (++idx[d] < out.shape[d]) break;
      idx[d] = 0;
    }
  }
  return out;
}

}  // namespace detail

// ---- arithmetic -----------------------------------------------------------

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
  Graph<T>& g = detail::same_graph(a, b, "add");
  ArrayND<T> out = detail::broadcast_eval(g.val(a.id), g.val(b.id), "add",
                                          [](T x, T y) { return x + y; });
  const int id = g.next_id();
  return {&g, g.add_node(std::move(out), {a.id, b.id}, [a, b, id](Graph<T>& gg) {
            const auto& go = gg.grad(id);
            if (gg.needs_grad(a.id))
              gg.accum(a.id, reduce_to_shape(go, gg.val(a.id).shape));
            if (gg.needs_grad(b.id))
              gg.accum(b.id, reduce_to_shape(go, gg.val(b.id).shape));
          })};
}

template <typename T>
Var<T> sub(Var<T> a, Var<T> b) {
  Graph<T>& g = detail::same_graph(a, b, "sub");
  ArrayND<T> out = detail::broadcast_eval(g.val(a.id), g.val(b.id), "sub",
                                          [](T x, T y) { return x - y; });
  const int id = g.next_id();
  return {&g, g.add_node(std::move(out), {a.id, b.id}, [a, b, id](Graph<T>& gg) {
            const auto& go = gg.grad(id);
            if (gg.needs_grad(a.id))
              gg.accum(a.id, reduce_to_shape(go, gg.val(a.id).shape));
            if (gg.needs_grad(b.id)) {
              ArrayND<T> neg = go;
              for (auto& x : neg.data) x = -x;
              gg.accum(b.id, reduce_to_shape(neg, gg.val(b.id).shape));
            }
          })};
}

template <typename T>
Var<T> mul(Var<T> a, Var<T> b) {
  Graph<T>& g = detail::same_graph(a, b, "mul");
  ArrayND<T> out = detail::broadcast_eval(g.val(a.id), g.val(b.id), "mul",
                                          [](T x, T y) { return x * y; });
  const int id = g.next_id();
  return {&g, g.add_node(std::move(out), {a.id, b.id}, [a, b, id](Graph<T>& gg) {
            const auto& go = gg.grad(id);
            if (gg.needs_grad(a.id)) {
              auto contrib = detail::broadcast_read_scaled(gg.val(b.id), go);
              gg.accum(a.id, reduce_to_shape(contrib, gg.val(a.id).shape));
            }
            if (gg.needs_grad(b.id)) {
              auto contrib = detail::broadcast_read_scaled(gg.val(a.id), go);
              gg.accum(b.id, reduce_to_shape(contrib, gg.val(b.id).shape));
            }
          })};
}

// y = c1 * x + c0 with compile-time constants folded in at call sites
template <typename T>
Var<T> affine(Var<T> x, double c1, double c0 = 0.0) {
  Graph<T>& g = *x.g;
  ArrayND<T> out = g.val(x.id);
  for (auto& v : out.data) v = static_cast<T>(c1) * v + static_cast<T>(c0);
  const int id = g.next_id();
  return {&g, g.add_node(std::move(out), {x.id}, [x, id, c1](Graph<T>& gg) {
            const auto& go = gg.grad(id);
            ArrayND<T> contrib = go;
            for (auto& v : contrib.data) v *= static_cast<T>(c1);
            gg.accum(x.id, contrib);
          })};
}

template <typename T>
Var<T> neg(Var<T> x) {
  return affine(x, -1.0);
}

// ---- elementwise nonlinearities -------------------------------------------

namespace detail {

template <typename T, typename FwdF, typename BwdF>
Var<T> unary_op(Var<T> x, FwdF fwd, BwdF bwd_factor) {
  // bwd_factor(x_val, y_val) -> dy/dx at that element
  Graph<T>& g = *x.g;
  const auto& xv = g.val(x.id);
  ArrayND<T> out(xv.shape);
  for (std::int64_t i = 0; i < xv.numel(); ++i) out.data[i] = fwd(xv.data[i]);
  const int id = g.next_id();
  return {&g, g.add_node(std::move(out), {x.id}, [x, id, bwd_factor](Graph<T>& gg) {
            const auto& go = gg.grad(id);
            const auto& xv2 = gg.val(x.id);
            const auto& yv = gg.val(id);
            ArrayND<T> contrib(xv2.shape);
            for (std::int64_t i = 0; i < contrib.numel(); ++i)
              contrib.data[i] = go.data[i] * bwd_factor(xv2.data[i], yv.data[i]);
            gg.accum(x.id, contrib);
          })};
}

}  // namespace detail

template <typename T>
Var<T> relu(Var<T> x) {
  return detail::unary_op(
      x, [](T v) { return v > T(0) ? v : T(0); },
      [](T v, T) { return v > T(0) ? T(1) : T(0); });
}

template <typename T>
Var<T> sigmoid(Var<T> x) {
  return detail::unary_op(
      x,
      [](T v) {
        return v >= T(0) ? T(1) / (T(1) + std::exp(-v))
                         : std::exp(v) / (T(1) + std::exp(v));
      },
      [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
Var<T> tanh_op(Var<T> x) {
  return detail::unary_op(x, [](T v) { return std::tanh(v); },
                          [](T, T y) { return T(1) - y * y; });
}

template <typename T>
Var<T> exp_op(Var<T> x) {
  return detail::unary_op(x, [](T v) { return std::exp(v); },
                          [](T, T y) { return y; });
}

template <typename T>
Var<T> log_op(Var<T> x) {
  const auto& xv = x.g->val(x.id);
  for (T v : xv.data)
    if (!(v > T(0)))
      throw std::domain_error("log: non-positive input");
  return detail::unary_op(x, [](T v) { return std::log(v); },
                          [](T v, T) { return T(1) / v; });
}

template <typename T>
Var<T> sqrt_op(Var<T> x) {
  const auto& xv = x.g->val(x.id);
  for (T v : xv.data)
    if (v < T(0))
      throw std::domain_error("sqrt: negative input");
  return detail::unary_op(x, [](T v) { return std::sqrt(v); },
                          [](T, T y) { return T(1) / (T(2) * y); });
}

template <typename T>
Var<T> abs_op(Var<T> x) {
  return detail::unary_op(x, [](T v) { return v < T(0) ? -v : v; },
                          [](T v, T) { return v > T(0) ? T(1) : (v < T(0) ? T(-1) : T(0)); });
}

template <typename T>
Var<T> softplus(Var<T> x) {
  return detail::unary_op(
      x,
      [](T v) {
        if (v > T(30)) return v;
        if (v < T(-30)) return std::exp(v);
        return std::log1p(std::exp(v));
      },
      [](T v, T) {
        return v >= T(0) ? T(1) / (T(1) + std::exp(-v))
                         : std::exp(v) / (T(1) + std::exp(v));
      });
}

// ---- shape ops --------------------------------------------------------------

template <typename T>
Var<T> reshape(Var<T> x, std::vector<int> shape) {
  Graph<T>& g = *x.g;
  const auto& xv = g.val(x.id);
  if (shape_numel(shape) != xv.numel())
    throw std::invalid_argument("reshape: cannot view " + shape_str(xv.shape) +
                                " as " + shape_str(shape));
  ArrayND<T> out;
  out.shape = std::move(shape);
  out.data = xv.data;
  const int id = g.next_id();
  return {&g, g.add_node(std::move(out), {x.id}, [x, id](Graph<T>& gg) {
            ArrayND<T> contrib;
            contrib.shape = gg.val(x.id).shape;
            contrib.data = gg.grad(id).data;
            gg.accum(x.id, contrib);
          })};
}

template <typename T>
Var<T> concat(const std::vector<Var<T>>& parts, int axis) {
  if (parts.empty()) throw std::invalid_argument("concat: no inputs");
  Graph<T>& g = *parts[0].g;
  const int r = g.val(parts[0].id).rank();
  if (axis < 0 || axis >= r) throw std::invalid_argument("concat: axis out of range");
  std::vector<int> out_shape = g.val(parts[0].id).shape;
  out_shape[axis] = 0;
  for (const auto& p : parts) {
    const auto& s = g.val(p.id).shape;
    if (static_cast<int>(s.size()) != r)
      throw std::invalid_argument("concat: rank mismatch between parts");
    for (int d = 0; d < r; ++d)
      if (d != axis && s[d] != out_shape[d])
        throw std::invalid_argument("concat: part shape " + shape_str(s) +
                                    " incompatible off-axis with first part");
    out_shape[axis] += s[axis];
  }

  std::int64_t outer = 1, inner = 1;
  for (int d = 0; d < axis; ++d) outer *= out_shape[d];
  for (int d = axis + 1; d < r; ++d) inner *= out_shape[d];

  ArrayND<T> out(out_shape);
  std::vector<int> ids;
  std::int64_t off = 0;
  for (const auto& p : parts) {
    const auto& pv = g.val(p.id);
    const std::int64_t width = pv.shape[axis] * inner;
    for (std::int64_t o = 0; o < outer; ++o)
      std::copy(pv.data.begin() + o * width, pv.data.begin() + (o + 1) * width,
                out.data.begin() + o * out_shape[axis] * inner + off);
    off += width;
    ids.push_back(p.id);
  }

  const int id = g.next_id();
  const std::int64_t total_width = static_cast<std::int64_t>(out_shape[axis]) * inner;
  return {&g, g.add_node(std::move(out), ids,
                         [ids, id, outer, total_width](Graph<T>& gg) {
                           const auto& go = gg.grad(id);
                           std::int64_t off2 = 0;
                           for (int pid : ids) {
                             const auto& pv = gg.val(pid);
                             const std::int64_t w2 = pv.numel() / outer;
                             if (gg.needs_grad(pid)) {
                               ArrayND<T> contrib(pv.shape);
                               for (std::int64_t o = 0; o < outer; ++o)
                                 std::copy(go.data.begin() + o * total_width + off2,
                                           go.data.begin() + o * total_width + off2 + w2,
                                           contrib.data.begin() + o * w2);
                               gg.accum(pid, contrib);
                             }
                             off2 += w2;
                           }
                         })};
}

template <typename T>
Var<T> slice(Var<T> x, int axis, int start, int len) {
  Graph<T>& g = *x.g;
  const auto& xv = g.val(x.id);
  const int r = xv.rank();
  if (axis < 0 || axis >= r) throw std::invalid_argument("slice: axis out of range");
  if (start < 0 || len <= 0 || start + len > xv.shape[axis])
    throw std::invalid_argument("slice: range [" + std::to_string(start) + "," +
                                std::to_string(start + len) + ") outside dim of size " +
                                std::to_string(xv.shape[axis]));
  std::int64_t outer = 1, inner = 1;
  for (int d = 0; d < axis; ++d) outer *= xv.shape[d];
  for (int d = axis + 1; d < r; ++d) inner *= xv.shape[d];

  std::vector<int> out_shape = xv.shape;
  out_shape[axis] = len;
  ArrayND<T> out(out_shape);
  const std::int64_t src_width = static_cast<std::int64_t>(xv.shape[axis]) * inner;
  const std::int64_t dst_width = static_cast<std::int64_t>(len) * inner;
  for (std::int64_t o = 0; o < outer; ++o)
    std::copy(xv.data.begin() + o * src_width + start * inner,
              xv.data.begin() + o * src_width + start * inner + dst_width,
              out.data.begin() + o * dst_width);

  const int id = g.next_id();
  return {&g, g.add_node(std::move(out), {x.id},
                         [x, id, outer, inner, start, src_width, dst_width](Graph<T>& gg) {
                           const auto& go = gg.grad(id);
                           ArrayND<T> contrib(gg.val(x.id).shape);
                           for (std::int64_t o = 0; o < outer; ++o)
                             for (std::int64_t i = 0; i < dst_width; ++i)
                               contrib.data[o * src_width + start * inner + i] +=
                                   go.data[o * dst_width + i];
                           gg.accum(x.id, contrib);
                         })};
}

// ---- reductions -------------------------------------------------------------

template <typename T>
Var<T> sum_all(Var<T> x) {
  Graph<T>& g = *x.g;
  const auto& xv = g.val(x.id);
  T s = T(0);
  for (T v : xv.data) s += v;
  ArrayND<T> out({1});
  out.data[0] = s;
  const int id = g.next_id();
  return {&g, g.add_node(std::move(out), {x.id}, [x, id](Graph<T>& gg) {
            const T go = gg.grad(id).data[0];
            ArrayND<T> contrib(gg.val(x.id).shape, go);
            gg.accum(x.id, contrib);
          })};
}

template <typename T>
Var<T> mean_all(Var<T> x) {
  const auto n = static_cast<double>(x.g->val(x.id).numel());
  return affine(sum_all(x), 1.0 / n);
}

// mean over the trailing `ndims` axes; shape keeps the leading axes
template <typename T>
Var<T> mean_last(Var<T> x, int ndims) {
  Graph<T>& g = *x.g;
  const auto& xv = g.val(x.id);
  const int r = xv.rank();
  if (ndims <= 0 || ndims > r)
    throw std::invalid_argument("mean_last: cannot reduce " + std::to_string(ndims) +
                                " dims of " + shape_str(xv.shape));
  std::int64_t outer = 1, m = 1;
  for (int d = 0; d < r - ndims; ++d) outer *= xv.shape[d];
  for (int d = r - ndims; d < r; ++d) m *= xv.shape[d];
  std::vector<int> out_shape(xv.shape.begin(), xv.shape.end() - ndims);
  if (out_shape.empty()) out_shape = {1};
  ArrayND<T> out(out_shape);
  for (std::int64_t o = 0; o < outer; ++o) {
    T s = T(0);
    for (std::int64_t i = 0; i < m; ++i) s += xv.data[o * m + i];
    out.data[o] = s / static_cast<T>(m);
  }
  const int id = g.next_id();
  return {&g, g.add_node(std::move(out), {x.id}, [x, id, outer, m](Graph<T>& gg) {
            const auto& go = gg.grad(id);
            ArrayND<T> contrib(gg.val(x.id).shape);
            for (std::int64_t o = 0; o < outer; ++o) {
              const T gv = go.data[o] / static_cast<T>(m);
              for (std::int64_t i = 0; i < m; ++i) contrib.data[o * m + i] = gv;
            }
            gg.accum(x.id, contrib);
          })};
}

// ---- matmul -----------------------------------------------------------------

template <typename T>
Var<T> matmul(Var<T> a, Var<T> b) {
  Graph<T>& g = detail::same_graph(a, b, "matmul");
  const auto& av = g.val(a.id);
  const auto& bv = g.val(b.id);
  if (av.rank() != 2 || bv.rank() != 2 || av.shape[1] != bv.shape[0])
    throw std::invalid_argument("matmul: shapes " + shape_str(av.shape) + " and " +
                                shape_str(bv.shape) + " incompatible");
  const std::int64_t m = av.shape[0], k = av.shape[1], n = bv.shape[1];
  ArrayND<T> out({static_cast<int>(m), static_cast<int>(n)});
  detail::gemm_nn(m, n, k, av.data.data(), bv.data.data(), out.data.data(), false);
  const int id = g.next_id();
  return {&g, g.add_node(std::move(out), {a.id, b.id}, [a, b, id, m, k, n](Graph<T>& gg) {
            const auto& go = gg.grad(id);
            const auto& av2 = gg.val(a.id);
            const auto& bv2 = gg.val(b.id);
            if (gg.needs_grad(a.id)) {
              // da = go . b^T
              detail::gemm_nt(m, k, n, go.data.data(), bv2.data.data(),
                              gg.accum_buf(a.id), true);
            }
            if (gg.needs_grad(b.id)) {
              // db = a^T . go
              detail::gemm_tn(k, n, m, av2.data.data(), go.data.data(),
                              gg.accum_buf(b.id), true);
            }
          })};
}

// ---- conv2d -----------------------------------------------------------------

namespace detail {

// gathers conv patches: x is one sample's channel block [c, h, w]; out is
// [c*kh*kw, oh*ow]
template <typename T>
void im2col(const T* x, int c, int h, int w, int kh, int kw, int stride, int pad,
            int oh, int ow, T* out) {
  for (int ch = 0; ch < c; ++ch)
    for (int ky = 0; ky < kh; ++ky)
      for (int kx = 0; kx < kw; ++kx) {
        T* row = out + ((static_cast<std::int64_t>(ch) * kh + ky) * kw + kx) *
                           (static_cast<std::int64_t>(oh) * ow);
        for (int oy = 0; oy < oh; ++oy) {
          const int iy = oy * stride + ky - pad;
          for (int ox = 0; ox < ow; ++ox) {
            const int ix = ox * stride + kx - pad;
            row[static_cast<std::int64_t>(oy) * ow + ox] =
                (iy >= 0 && iy < h && ix >= 0 && ix < w)
                    ? x[(static_cast<std::int64_t>(ch) * h + iy) * w + ix]
                    : T(0);
          }
        }
      }
}

// scatters patch gradients back; adjoint of im2col
template <typename T>
void col2im(const T* cols, int c, int h, int w, int kh, int kw, int stride, int pad,
            int oh, int ow, T* dx) {
  for (int ch = 0; ch < c; ++ch)
    for (int ky = 0; ky < kh; ++ky)
      for (int kx = 0; kx < kw; ++kx) {
        const T* row = cols + ((static_cast<std::int64_t>(ch) * kh + ky) * kw + kx) *
                                  (static_cast<std::int64_t>(oh) * ow);
        for (int oy = 0; oy < oh; ++oy) {
          const int iy = oy * stride + ky - pad;
          if (iy < 0 || iy >= h) continue;
          for (int ox = 0; ox < ow; ++ox) {
            const int ix = ox * stride + kx - pad;
            if (ix < 0 || ix >= w) continue;
            dx[(static_cast<std::int64_t>(ch) * h + iy) * w + ix] +=
                row[static_cast<std::int64_t>(oy) * ow + ox];
          }
        }
      }
}

}  // namespace detail

// x: [n, c_in, h, w]; weight: [c_out, c_in/groups, kh, kw] -> [n, c_out, oh, ow].
// Bias is applied separately via broadcast add.
template <typename T>
Var<T> conv2d(Var<T> x, Var<T> weight, int stride, int pad, int groups = 1) {
  Graph<T>& g = detail::same_graph(x, weight, "conv2d");
  const auto& xv = g.val(x.id);
  const auto& wv = g.val(weight.id);
  if (xv.rank() != 4 || wv.rank() != 4)
    throw std::invalid_argument("conv2d: need 4-d input and weight, got " +
                                shape_str(xv.shape) + " and " + shape_str(wv.shape));
  const int n = xv.shape[0], cin = xv.shape[1], h = xv.shape[2], w = xv.shape[3];
  const int cout = wv.shape[0], wcin = wv.shape[1], kh = wv.shape[2], kw = wv.shape[3];
  if (stride != 1 && stride != 2)
    throw std::invalid_argument("conv2d: stride must be 1 or 2");
  if (groups < 1 || cin % groups != 0 || cout % groups != 0 || wcin != cin / groups)
    throw std::invalid_argument("conv2d: group mismatch, input " + shape_str(xv.shape) +
                                " weight " + shape_str(wv.shape) + " groups " +
                                std::to_string(groups));
  const int oh = (h + 2 * pad - kh) / stride + 1;
  const int ow = (w + 2 * pad - kw) / stride + 1;
  if (oh < 1 || ow < 1 || h + 2 * pad < kh || w + 2 * pad < kw)
    throw std::invalid_argument("conv2d: kernel larger than padded input");

  const int cing = cin / groups, coutg = cout / groups;
  const std::int64_t krows = static_cast<std::int64_t>(cing) * kh * kw;
  const std::int64_t ohw = static_cast<std::int64_t>(oh) * ow;

  ArrayND<T> out({n, cout, oh, ow});
  std::vector<T> cols(static_cast<std::size_t>(krows * ohw));
  for (int b = 0; b < n; ++b)
    for (int gr = 0; gr < groups; ++gr) {
      const T* xs = xv.data.data() +
                    (static_cast<std::int64_t>(b) * cin + gr * cing) * h * w;
      detail::im2col(xs, cing, h, w, kh, kw, stride, pad, oh, ow, cols.data());
      T* ys = out.data.data() +
              (static_cast<std::int64_t>(b) * cout + gr * coutg) * ohw;
      const T* ws = wv.data.data() + static_cast<std::int64_t>(gr) * coutg * krows;
      detail::gemm_nn(coutg, ohw, krows, ws, cols.data(), ys, false);
    }

  const int id = g.next_id();
  return {&g,
          g.add_node(
              std::move(out), {x.id, weight.id},
              [x, weight, id, n, cin, h, w, cout, kh, kw, stride, pad, groups, cing,
               coutg, krows, ohw, oh, ow](Graph<T>& gg) {
                const auto& go = gg.grad(id);
                const auto& xv2 = gg.val(x.id);
                const auto& wv2 = gg.val(weight.id);
                const bool need_x = gg.needs_grad(x.id);
                const bool need_w = gg.needs_grad(weight.id);
                std::vector<T> cols(static_cast<std::size_t>(krows * ohw));
                std::vector<T> dcols(need_x ? static_cast<std::size_t>(krows * ohw) : 0);
                T* dw = gg.accum_buf(weight.id);
                T* dx = gg.accum_buf(x.id);
                for (int b = 0; b < n; ++b)
                  for (int gr = 0; gr < groups; ++gr) {
                    const T* gys = go.data.data() +
                                   (static_cast<std::int64_t>(b) * cout + gr * coutg) * ohw;
                    if (need_w) {
                      const T* xs = xv2.data.data() +
                                    (static_cast<std::int64_t>(b) * cin + gr * cing) * h * w;
                      detail::im2col(xs, cing, h, w, kh, kw, stride, pad, oh, ow,
                                     cols.data());
                      // dW_g += gy . cols^T
                      detail::gemm_nt(coutg, krows, ohw, gys, cols.data(),
                                      dw + static_cast<std::int64_t>(gr) * coutg * krows,
                                      true);
                    }
                    if (need_x) {
                      // dcols = W_g^T . gy, then scatter back
                      const T* ws = wv2.data.data() +
                                    static_cast<std::int64_t>(gr) * coutg * krows;
                      detail::gemm_tn(krows, ohw, coutg, ws, gys, dcols.data(),
                                      false);
                      detail::col2im(dcols.data(), cing, h, w, kh, kw, stride, pad, oh,
                                     ow,
                                     dx + (static_cast<std::int64_t>(b) * cin + gr * cing) *
                                              h * w);
                    }
                  }
              })};
}

// ---- nearest-neighbor upsampling -------------------------------------------

template <typename T>
Var<T> upsample2x(Var<T> x) {
  Graph<T>& g = *x.g;
  const auto& xv = g.val(x.id);
  if (xv.rank() != 4)
    throw std::invalid_argument("upsample2x: need 4-d input, got " + shape_str(xv.shape));
  const int n = xv.shape[0], c = xv.shape[1], h = xv.shape[2], w = xv.shape[3];
  ArrayND<T> out({n, c, 2 * h, 2 * w});
  for (std::int64_t p = 0; p < static_cast<std::int64_t>(n) * c; ++p) {
    const T* src = xv.data.data() + p * h * w;
    T* dst = out.data.data() + p * 4 * h * w;
    for (int iy = 0; iy < h; ++iy)
      for (int ix = 0; ix < w; ++ix) {
        const T v = src[static_cast<std::int64_t>(iy) * w + ix];
        T* d = dst + (static_cast<std::int64_t>(2 * iy) * 2 * w + 2 * ix);
        d[0] = v;
        d[1] = v;
        d[2 * w] = v;
        d[2 * w + 1] = v;
      }
  }
  const int id = g.next_id();
  return {&g, g.add_node(std::move(out), {x.id}, [x, id, n, c, h, w](Graph<T>& gg) {
            const auto& go = gg.grad(id);
            ArrayND<T> contrib(gg.val(x.id).shape);
            for (std::int64_t p = 0; p < static_cast<std::int64_t>(n) * c; ++p) {
              const T* src = go.data.data() + p * 4 * h * w;
              T* dst = contrib.data.data() + p * h * w;
              for (int iy = 0; iy < h; ++iy)
                for (int ix = 0; ix < w; ++ix) {
                  const T* s = src + (static_cast<std::int64_t>(2 * iy) * 2 * w + 2 * ix);
                  dst[static_cast<std::int64_t>(iy) * w + ix] =
                      s[0] + s[1] + s[2 * w] + s[2 * w + 1];
                }
            }
            gg.accum(x.id, contrib);
          })};
}

// ---- group normalization -----------------------------------------------------

// x: [n, c, h, w]; gamma, beta: [c]; normalizes over each of the `groups`
// channel blocks jointly with the spatial dims.
template <typename T>
Var<T> group_norm(Var<T> x, Var<T> gamma, Var<T> beta, int groups, double eps = 1e-5) {
  Graph<T>& g = *x.g;
  const auto& xv = g.val(x.id);
  const auto& gv = g.val(gamma.id);
  const auto& bv = g.val(beta.id);
  if (xv.rank() != 4)
    throw std::invalid_argument("group_norm: need 4-d input, got " + shape_str(xv.shape));
  const int n = xv.shape[0], c = xv.shape[1], h = xv.shape[2], w = xv.shape[3];
  if (groups < 1 || c % groups != 0)
    throw std::invalid_argument("group_norm: " + std::to_string(c) +
                                " channels not divisible into " + std::to_string(groups) +
                                " groups");
  if (gv.shape != std::vector<int>{c} || bv.shape != std::vector<int>{c})
    throw std::invalid_argument("group_norm: gamma/beta must be [" + std::to_string(c) +
                                "], got " + shape_str(gv.shape) + " and " +
                                shape_str(bv.shape));
  const int cpg = c / groups;
  const std::int64_t m = static_cast<std::int64_t>(cpg) * h * w;
  const std::int64_t hw = static_cast<std::int64_t>(h) * w;

  ArrayND<T> out(xv.shape);
  // saved statistics for the backward pass
  auto mean = std::make_shared<std::vector<T>>(static_cast<std::size_t>(n) * groups);
  auto rstd = std::make_shared<std::vector<T>>(static_cast<std::size_t>(n) * groups);
  for (int b = 0; b < n; ++b)
    for (int gr = 0; gr < groups; ++gr) {
      const T* xs = xv.data.data() + (static_cast<std::int64_t>(b) * c + gr * cpg) * hw;
      T mu = T(0);
      for (std::int64_t i = 0; i < m; ++i) mu += xs[i];
      mu /= static_cast<T>(m);
      T var = T(0);
      for (std::int64_t i = 0; i < m; ++i) {
        const T d = xs[i] - mu;
        var += d * d;
      }
      var /= static_cast<T>(m);
      const T rs = T(1) / std::sqrt(var + static_cast<T>(eps));
      (*mean)[static_cast<std::size_t>(b) * groups + gr] = mu;
      (*rstd)[static_cast<std::size_t>(b) * groups + gr] = rs;
      T* ys = out.data.data() + (static_cast<std::int64_t>(b) * c + gr * cpg) * hw;
      for (int cc = 0; cc < cpg; ++cc) {
        const T ga = gv.data[gr * cpg + cc];
        const T be = bv.data[gr * cpg + cc];
        for (std::int64_t i = 0; i < hw; ++i) {
          const std::int64_t k = static_cast<std::int64_t>(cc) * hw + i;
          ys[k] = (xs[k] - mu) * rs * ga + be;
        }
      }
    }

  const int id = g.next_id();
  return {&g,
          g.add_node(
              std::move(out), {x.id, gamma.id, beta.id},
              [x, gamma, beta, id, n, c, groups, cpg, m, hw, mean, rstd](Graph<T>& gg) {
                const auto& go = gg.grad(id);
                const auto& xv2 = gg.val(x.id);
                const auto& gv2 = gg.val(gamma.id);
                T* dgamma = gg.accum_buf(gamma.id);
                T* dbeta = gg.accum_buf(beta.id);
                T* dx = gg.accum_buf(x.id);
                std::vector<T> xhat(static_cast<std::size_t>(m));
                std::vector<T> gvec(static_cast<std::size_t>(m));
                for (int b = 0; b < n; ++b)
                  for (int gr = 0; gr < groups; ++gr) {
                    const std::int64_t base =
                        (static_cast<std::int64_t>(b) * c + gr * cpg) * hw;
                    const T mu = (*mean)[static_cast<std::size_t>(b) * groups + gr];
                    const T rs = (*rstd)[static_cast<std::size_t>(b) * groups + gr];
                    // per-element normalized value and gamma-scaled upstream grad
                    T gsum = T(0), gxsum = T(0);
                    for (int cc = 0; cc < cpg; ++cc) {
                      const T ga = gv2.data[gr * cpg + cc];
                      for (std::int64_t i = 0; i < hw; ++i) {
                        const std::int64_t k = static_cast<std::int64_t>(cc) * hw + i;
                        const T xh = (xv2.data[base + k] - mu) * rs;
                        const T gs = go.data[base + k] * ga;
                        xhat[k] = xh;
                        gvec[k] = gs;
                        gsum += gs;
                        gxsum += gs * xh;
                      }
                    }
                    if (dgamma != nullptr || dbeta != nullptr)
                      for (int cc = 0; cc < cpg; ++cc) {
                        T sg = T(0), sb = T(0);
                        for (std::int64_t i = 0; i < hw; ++i) {
                          const std::int64_t k = static_cast<std::int64_t>(cc) * hw + i;
                          sg += go.data[base + k] * xhat[k];
                          sb += go.data[base + k];
                        }
                        if (dgamma) dgamma[gr * cpg + cc] += sg;
                        if (dbeta) dbeta[gr * cpg + cc] += sb;
                      }
                    if (dx != nullptr) {
                      const T inv_m = T(1) / static_cast<T>(m);
                      for (std::int64_t k = 0; k < m; ++k)
                        dx[base + k] +=
                            rs * (gvec[k] - inv_m * gsum - xhat[k] * inv_m * gxsum);
                    }
                  }
              })};
}

}  // namespace latopt
