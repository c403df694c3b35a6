#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "dfrec/graph.hpp"

namespace dfrec {

// Differentiable op library. Every op performs shape validation, computes the
// forward value eagerly and registers a closure that pulls the output
// gradient and pushes contributions to parents that require gradients.

namespace detail {

template <typename T>
using MatRM = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapM = Eigen::Map<MatRM<T>>;
template <typename T>
using MapCM = Eigen::Map<const MatRM<T>>;

template <typename T>
inline bool same_shape(const Value<T>& a, const Value<T>& b) {
  return a.shape() == b.shape();
}

template <typename T>
inline void check_same_shape(const Value<T>& a, const Value<T>& b, const char* op) {
  if (!same_shape(a, b))
    throw InputError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise
// ---------------------------------------------------------------------------

template <typename T, typename FwdFn, typename BwdFn>
Value<T> unary_elementwise(const Value<T>& a, FwdFn fwd, BwdFn dfdx) {
  Graph<T>* g = a.graph();
  Node<T>* an = a.node();
  Node<T>* out = g->make(a.shape(), an->requires_grad);
  const T* x = an->vptr;
  for (std::int64_t i = 0; i < out->vlen; ++i) out->owned[static_cast<std::size_t>(i)] = fwd(x[i]);
  if (out->requires_grad) {
    out->backward = [an, out, dfdx]() {
      auto ga = an->ensure_grad();
      const T* x = an->vptr;
      for (std::int64_t i = 0; i < out->vlen; ++i)
        ga[static_cast<std::size_t>(i)] += out->grad[static_cast<std::size_t>(i)] * dfdx(x[i], out->owned[static_cast<std::size_t>(i)]);
    };
  }
  return {g, out};
}

template <typename T>
Value<T> add(const Value<T>& a, const Value<T>& b) {
  detail::check_same_shape(a, b, "add");
  Graph<T>* g = a.graph();
  Node<T>*an = a.node(), *bn = b.node();
  Node<T>* out = g->make(a.shape(), an->requires_grad || bn->requires_grad);
  for (std::int64_t i = 0; i < out->vlen; ++i)
    out->owned[static_cast<std::size_t>(i)] = an->vptr[i] + bn->vptr[i];
  if (out->requires_grad) {
    out->backward = [an, bn, out]() {
      if (an->requires_grad) {
        auto ga = an->ensure_grad();
        for (std::int64_t i = 0; i < out->vlen; ++i) ga[static_cast<std::size_t>(i)] += out->grad[static_cast<std::size_t>(i)];
      }
      if (bn->requires_grad) {
        auto gb = bn->ensure_grad();
        for (std::int64_t i = 0; i < out->vlen; ++i) gb[static_cast<std::size_t>(i)] += out->grad[static_cast<std::size_t>(i)];
      }
    };
  }
  return {g, out};
}

template <typename T>
Value<T> sub(const Value<T>& a, const Value<T>& b) {
  detail::check_same_shape(a, b, "sub");
  Graph<T>* g = a.graph();
  Node<T>*an = a.node(), *bn = b.node();
  Node<T>* out = g->make(a.shape(), an->requires_grad || bn->requires_grad);
  for (std::int64_t i = 0; i < out->vlen; ++i)
    out->owned[static_cast<std::size_t>(i)] = an->vptr[i] - bn->vptr[i];
  if (out->requires_grad) {
    out->backward = [an, bn, out]() {
      if (an->requires_grad) {
        auto ga = an->ensure_grad();
        for (std::int64_t i = 0; i < out->vlen; ++i) ga[static_cast<std::size_t>(i)] += out->grad[static_cast<std::size_t>(i)];
      }
      if (bn->requires_grad) {
        auto gb = bn->ensure_grad();
        for (std::int64_t i = 0; i < out->vlen; ++i) gb[static_cast<std::size_t>(i)] -= out->grad[static_cast<std::size_t>(i)];
      }
    };
  }
  return {g, out};
}

template <typename T>
Value<T> mul(const Value<T>& a, const Value<T>& b) {
  detail::check_same_shape(a, b, "mul");
  Graph<T>* g = a.graph();
  Node<T>*an = a.node(), *bn = b.node();
  Node<T>* out = g->make(a.shape(), an->requires_grad || bn->requires_grad);
  for (std::int64_t i = 0; i < out->vlen; ++i)
    out->owned[static_cast<std::size_t>(i)] = an->vptr[i] * bn->vptr[i];
  if (out->requires_grad) {
    out->backward = [an, bn, out]() {
      if (an->requires_grad) {
        auto ga = an->ensure_grad();
        for (std::int64_t i = 0; i < out->vlen; ++i) ga[static_cast<std::size_t>(i)] += out->grad[static_cast<std::size_t>(i)] * bn->vptr[i];
      }
      if (bn->requires_grad) {
        auto gb = bn->ensure_grad();
        for (std::int64_t i = 0; i < out->vlen; ++i) gb[static_cast<std::size_t>(i)] += out->grad[static_cast<std::size_t>(i)] * an->vptr[i];
      }
    };
  }
  return {g, out};
}

template <typename T>
Value<T> scale(const Value<T>& a, T c) {
  return unary_elementwise(a, [c](T x) { return c * x; }, [c](T, T) { return c; });
}

template <typename T>
Value<T> add_const(const Value<T>& a, T c) {
  return unary_elementwise(a, [c](T x) { return x + c; }, [](T, T) { return T(1); });
}

template <typename T>
Value<T> relu(const Value<T>& a) {
  return unary_elementwise(a, [](T x) { return x > T(0) ? x : T(0); },
                           [](T x, T) { return x > T(0) ? T(1) : T(0); });
}

template <typename T>
Value<T> sigmoid(const Value<T>& a) {
  return unary_elementwise(a, [](T x) { return T(1) / (T(1) + std::exp(-x)); },
                           [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
Value<T> gelu(const Value<T>& a) {
  constexpr double kInvSqrt2 = 0.70710678118654752440;
  constexpr double kInvSqrt2Pi = 0.39894228040143267794;
  return unary_elementwise(
      a,
      [=](T x) { return T(0.5) * x * (T(1) + T(std::erf(double(x) * kInvSqrt2))); },
      [=](T x, T) {
        double cdf = 0.5 * (1.0 + std::erf(double(x) * kInvSqrt2));
        double pdf = kInvSqrt2Pi * std::exp(-0.5 * double(x) * double(x));
        return T(cdf + double(x) * pdf);
      });
}

// Clamp to [0,1]; gradient passes only strictly inside the interval.
template <typename T>
Value<T> clamp01(const Value<T>& a) {
  return unary_elementwise(a, [](T x) { return std::min(T(1), std::max(T(0), x)); },
                           [](T x, T) { return (x > T(0) && x < T(1)) ? T(1) : T(0); });
}

template <typename T>
Value<T> stop_gradient(const Value<T>& a) {
  Graph<T>* g = a.graph();
  Node<T>* out = g->make(a.shape(), false);
  std::copy(a.val().begin(), a.val().end(), out->owned.begin());
  return {g, out};
}

// ---------------------------------------------------------------------------
// Reductions and scalar losses
// ---------------------------------------------------------------------------

template <typename T>
Value<T> sum(const Value<T>& a) {
  Graph<T>* g = a.graph();
  Node<T>* an = a.node();
  Node<T>* out = g->make(Shape{1}, an->requires_grad);
  T acc = T(0);
  for (std::int64_t i = 0; i < an->vlen; ++i) acc += an->vptr[i];
  out->owned[0] = acc;
  if (out->requires_grad) {
    out->backward = [an, out]() {
      auto ga = an->ensure_grad();
      const T go = out->grad[0];
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += go;
    };
  }
  return {g, out};
}

template <typename T>
Value<T> mean(const Value<T>& a) {
  return scale(sum(a), T(1) / T(a.size()));
}

// Euclidean norm of the flattened tensor; subgradient 0 at the origin.
template <typename T>
Value<T> l2_norm(const Value<T>& a) {
  Graph<T>* g = a.graph();
  Node<T>* an = a.node();
  Node<T>* out = g->make(Shape{1}, an->requires_grad);
  T ss = T(0);
  for (std::int64_t i = 0; i < an->vlen; ++i) ss += an->vptr[i] * an->vptr[i];
  const T norm = std::sqrt(ss);
  out->owned[0] = norm;
  if (out->requires_grad) {
    out->backward = [an, out, norm]() {
      if (norm <= T(0)) return;
      auto ga = an->ensure_grad();
      const T go = out->grad[0] / norm;
      for (std::int64_t i = 0; i < an->vlen; ++i) ga[static_cast<std::size_t>(i)] += go * an->vptr[i];
    };
  }
  return {g, out};
}

// Row-wise L2 normalization of x[N,D]; zero rows map to zero.
template <typename T>
Value<T> l2_normalize_rows(const Value<T>& a) {
  const Shape& s = a.shape();
  if (s.size() != 2) throw InputError("l2_normalize_rows expects [N,D]");
  const std::int64_t N = s[0], D = s[1];
  Graph<T>* g = a.graph();
  Node<T>* an = a.node();
  Node<T>* out = g->make(s, an->requires_grad);
  std::vector<T> norms(static_cast<std::size_t>(N));
  for (std::int64_t r = 0; r < N; ++r) {
    T ss = T(0);
    for (std::int64_t c = 0; c < D; ++c) ss += an->vptr[r * D + c] * an->vptr[r * D + c];
    const T n = std::sqrt(ss);
    norms[static_cast<std::size_t>(r)] = n;
    for (std::int64_t c = 0; c < D; ++c)
      out->owned[static_cast<std::size_t>(r * D + c)] = n > T(0) ? an->vptr[r * D + c] / n : T(0);
  }
  if (out->requires_grad) {
    out->backward = [an, out, N, D, norms = std::move(norms)]() {
      auto ga = an->ensure_grad();
      for (std::int64_t r = 0; r < N; ++r) {
        const T n = norms[static_cast<std::size_t>(r)];
        if (n <= T(0)) continue;
        const T* x = an->vptr + r * D;
        const T* go = out->grad.data() + r * D;
        T dot = T(0);
        for (std::int64_t c = 0; c < D; ++c) dot += go[c] * x[c];
        for (std::int64_t c = 0; c < D; ++c)
          ga[static_cast<std::size_t>(r * D + c)] += go[c] / n - x[c] * dot / (n * n * n);
      }
    };
  }
  return {g, out};
}

// Mean elementwise smooth-L1 with knee at |d| = 1.
template <typename T>
Value<T> smooth_l1_mean(const Value<T>& a, const Value<T>& b) {
  detail::check_same_shape(a, b, "smooth_l1_mean");
  Graph<T>* g = a.graph();
  Node<T>*an = a.node(), *bn = b.node();
  Node<T>* out = g->make(Shape{1}, an->requires_grad || bn->requires_grad);
  const std::int64_t n = an->vlen;
  T acc = T(0);
  for (std::int64_t i = 0; i < n; ++i) {
    const T d = an->vptr[i] - bn->vptr[i];
    const T ad = std::abs(d);
    acc += (ad < T(1)) ? T(0.5) * d * d : ad - T(0.5);
  }
  out->owned[0] = acc / T(n);
  if (out->requires_grad) {
    out->backward = [an, bn, out, n]() {
      const T go = out->grad[0] / T(n);
      for (std::int64_t i = 0; i < n; ++i) {
        const T d = an->vptr[i] - bn->vptr[i];
        const T dd = (std::abs(d) < T(1)) ? d : (d > T(0) ? T(1) : T(-1));
        if (an->requires_grad) an->ensure_grad()[static_cast<std::size_t>(i)] += go * dd;
        if (bn->requires_grad) bn->ensure_grad()[static_cast<std::size_t>(i)] -= go * dd;
      }
    };
  }
  return {g, out};
}

// Numerically stable binary cross-entropy on a single logit.
template <typename T>
Value<T> bce_with_logits(const Value<T>& logit, T target) {
  Graph<T>* g = logit.graph();
  Node<T>* zn = logit.node();
  if (zn->vlen != 1) throw InputError("bce_with_logits expects a scalar logit");
  Node<T>* out = g->make(Shape{1}, zn->requires_grad);
  const T z = zn->vptr[0];
  out->owned[0] = std::max(z, T(0)) - z * target + std::log1p(std::exp(-std::abs(z)));
  if (out->requires_grad) {
    out->backward = [zn, out, target]() {
      const T z = zn->vptr[0];
      const T p = T(1) / (T(1) + std::exp(-z));
      zn->ensure_grad()[0] += out->grad[0] * (p - target);
    };
  }
  return {g, out};
}

// Softmax cross-entropy over a logit vector against an integer label.
template <typename T>
Value<T> softmax_cross_entropy(const Value<T>& logits, std::int64_t label) {
  Graph<T>* g = logits.graph();
  Node<T>* zn = logits.node();
  const std::int64_t k = zn->vlen;
  if (label < 0 || label >= k) throw InputError("softmax_cross_entropy: label out of range");
  Node<T>* out = g->make(Shape{1}, zn->requires_grad);
  T mx = zn->vptr[0];
  for (std::int64_t i = 1; i < k; ++i) mx = std::max(mx, zn->vptr[i]);
  T lse = T(0);
  for (std::int64_t i = 0; i < k; ++i) lse += std::exp(zn->vptr[i] - mx);
  lse = std::log(lse) + mx;
  out->owned[0] = lse - zn->vptr[label];
  if (out->requires_grad) {
    out->backward = [zn, out, label, k, lse]() {
      auto gz = zn->ensure_grad();
      const T go = out->grad[0];
      for (std::int64_t i = 0; i < k; ++i) {
        const T p = std::exp(zn->vptr[i] - lse);
        gz[static_cast<std::size_t>(i)] += go * (p - (i == label ? T(1) : T(0)));
      }
    };
  }
  return {g, out};
}

// ---------------------------------------------------------------------------
// Shape manipulation
// ---------------------------------------------------------------------------

template <typename T>
Value<T> reshape(const Value<T>& a, Shape new_shape) {
  if (numel(new_shape) != a.size())
    throw InputError("reshape: element count mismatch " + shape_str(a.shape()) + " -> " + shape_str(new_shape));
  Graph<T>* g = a.graph();
  Node<T>* an = a.node();
  Node<T>* out = g->make_view(std::move(new_shape), an->vptr, an->requires_grad);
  if (out->requires_grad) {
    out->backward = [an, out]() {
      auto ga = an->ensure_grad();
      for (std::int64_t i = 0; i < out->vlen; ++i) ga[static_cast<std::size_t>(i)] += out->grad[static_cast<std::size_t>(i)];
    };
  }
  return {g, out};
}

// Concatenation along axis 0; all trailing dims must agree.
template <typename T>
Value<T> concat0(const std::vector<Value<T>>& parts) {
  if (parts.empty()) throw InputError("concat0: no inputs");
  Graph<T>* g = parts[0].graph();
  Shape inner(parts[0].shape().begin() + 1, parts[0].shape().end());
  std::int64_t lead = 0;
  bool rg = false;
  for (const auto& p : parts) {
    Shape pi(p.shape().begin() + 1, p.shape().end());
    if (pi != inner) throw InputError("concat0: trailing dims mismatch");
    lead += p.shape()[0];
    rg = rg || p.node()->requires_grad;
  }
  Shape os;
  os.push_back(lead);
  os.insert(os.end(), inner.begin(), inner.end());
  Node<T>* out = g->make(std::move(os), rg);
  std::vector<Node<T>*> srcs;
  srcs.reserve(parts.size());
  std::int64_t off = 0;
  for (const auto& p : parts) {
    std::copy(p.val().begin(), p.val().end(), out->owned.begin() + off);
    off += p.size();
    srcs.push_back(p.node());
  }
  if (out->requires_grad) {
    out->backward = [srcs, out]() {
      std::int64_t off = 0;
      for (Node<T>* s : srcs) {
        if (s->requires_grad) {
          auto gs = s->ensure_grad();
          for (std::int64_t i = 0; i < s->vlen; ++i) gs[static_cast<std::size_t>(i)] += out->grad[static_cast<std::size_t>(off + i)];
        }
        off += s->vlen;
      }
    };
  }
  return {g, out};
}

template <typename T>
Value<T> concat0(const Value<T>& a, const Value<T>& b) {
  return concat0(std::vector<Value<T>>{a, b});
}

template <typename T>
Value<T> slice0(const Value<T>& a, std::int64_t from, std::int64_t to) {
  const Shape& s = a.shape();
  if (from < 0 || to > s[0] || from >= to) throw InputError("slice0: bad range");
  std::int64_t inner = 1;
  for (std::size_t i = 1; i < s.size(); ++i) inner *= s[i];
  Shape os = s;
  os[0] = to - from;
  Graph<T>* g = a.graph();
  Node<T>* an = a.node();
  Node<T>* out = g->make_view(std::move(os), an->vptr + from * inner, an->requires_grad);
  if (out->requires_grad) {
    const std::int64_t off = from * inner;
    out->backward = [an, out, off]() {
      auto ga = an->ensure_grad();
      for (std::int64_t i = 0; i < out->vlen; ++i) ga[static_cast<std::size_t>(off + i)] += out->grad[static_cast<std::size_t>(i)];
    };
  }
  return {g, out};
}

// Row gather: out[i, :] = a[idx[i], :]. Backward scatter-adds.
template <typename T>
Value<T> gather_rows(const Value<T>& a, std::vector<std::int64_t> idx) {
  const Shape& s = a.shape();
  if (s.size() != 2) throw InputError("gather_rows expects a rank-2 tensor");
  const std::int64_t rows = s[0], cols = s[1];
  for (auto i : idx)
    if (i < 0 || i >= rows) throw InputError("gather_rows: index out of range");
  Graph<T>* g = a.graph();
  Node<T>* an = a.node();
  Node<T>* out = g->make(Shape{static_cast<std::int64_t>(idx.size()), cols}, an->requires_grad);
  for (std::size_t r = 0; r < idx.size(); ++r)
    std::copy(an->vptr + idx[r] * cols, an->vptr + (idx[r] + 1) * cols,
              out->owned.begin() + static_cast<std::int64_t>(r) * cols);
  if (out->requires_grad) {
    out->backward = [an, out, idx = std::move(idx), cols]() {
      auto ga = an->ensure_grad();
      for (std::size_t r = 0; r < idx.size(); ++r)
        for (std::int64_t c = 0; c < cols; ++c)
          ga[static_cast<std::size_t>(idx[r] * cols + c)] += out->grad[r * static_cast<std::size_t>(cols) + static_cast<std::size_t>(c)];
    };
  }
  return {g, out};
}

// General rank-3 transpose: out[i0,i1,i2] = a[j0,j1,j2] with j[perm[k]] = i[k].
template <typename T>
Value<T> permute3(const Value<T>& a, int p0, int p1, int p2) {
  const Shape& s = a.shape();
  if (s.size() != 3) throw InputError("permute3 expects a rank-3 tensor");
  const int perm[3] = {p0, p1, p2};
  Shape os{s[perm[0]], s[perm[1]], s[perm[2]]};
  Graph<T>* g = a.graph();
  Node<T>* an = a.node();
  Node<T>* out = g->make(os, an->requires_grad);
  const std::int64_t st[3] = {s[1] * s[2], s[2], 1};
  const std::int64_t ost[3] = {os[1] * os[2], os[2], 1};
  std::int64_t map_stride[3];  // stride in `a` for each output axis
  for (int k = 0; k < 3; ++k) map_stride[k] = st[perm[k]];
  for (std::int64_t i = 0; i < os[0]; ++i)
    for (std::int64_t j = 0; j < os[1]; ++j)
      for (std::int64_t k = 0; k < os[2]; ++k)
        out->owned[static_cast<std::size_t>(i * ost[0] + j * ost[1] + k)] =
            an->vptr[i * map_stride[0] + j * map_stride[1] + k * map_stride[2]];
  if (out->requires_grad) {
    Shape osc = os;
    std::int64_t ms[3] = {map_stride[0], map_stride[1], map_stride[2]};
    std::int64_t ostc[3] = {ost[0], ost[1], ost[2]};
    out->backward = [an, out, osc, ms, ostc]() {
      auto ga = an->ensure_grad();
      for (std::int64_t i = 0; i < osc[0]; ++i)
        for (std::int64_t j = 0; j < osc[1]; ++j)
          for (std::int64_t k = 0; k < osc[2]; ++k)
            ga[static_cast<std::size_t>(i * ms[0] + j * ms[1] + k * ms[2])] +=
                out->grad[static_cast<std::size_t>(i * ostc[0] + j * ostc[1] + k)];
    };
  }
  return {g, out};
}

// ---------------------------------------------------------------------------
// Broadcast helpers
// ---------------------------------------------------------------------------

// x[C,H,W] * m[1,H,W] with m broadcast over channels (segment_source core).
template <typename T>
Value<T> broadcast_mul_channel(const Value<T>& x, const Value<T>& m) {
  const Shape& xs = x.shape();
  const Shape& ms = m.shape();
  if (xs.size() != 3 || ms.size() != 3 || ms[0] != 1 || ms[1] != xs[1] || ms[2] != xs[2])
    throw InputError("broadcast_mul_channel: need x[C,H,W], m[1,H,W] with matching spatial size");
  Graph<T>* g = x.graph();
  Node<T>*xn = x.node(), *mn = m.node();
  Node<T>* out = g->make(xs, xn->requires_grad || mn->requires_grad);
  const std::int64_t C = xs[0], HW = xs[1] * xs[2];
  for (std::int64_t c = 0; c < C; ++c)
    for (std::int64_t i = 0; i < HW; ++i)
      out->owned[static_cast<std::size_t>(c * HW + i)] = xn->vptr[c * HW + i] * mn->vptr[i];
  if (out->requires_grad) {
    out->backward = [xn, mn, out, C, HW]() {
      if (xn->requires_grad) {
        auto gx = xn->ensure_grad();
        for (std::int64_t c = 0; c < C; ++c)
          for (std::int64_t i = 0; i < HW; ++i)
            gx[static_cast<std::size_t>(c * HW + i)] += out->grad[static_cast<std::size_t>(c * HW + i)] * mn->vptr[i];
      }
      if (mn->requires_grad) {
        auto gm = mn->ensure_grad();
        for (std::int64_t c = 0; c < C; ++c)
          for (std::int64_t i = 0; i < HW; ++i)
            gm[static_cast<std::size_t>(i)] += out->grad[static_cast<std::size_t>(c * HW + i)] * xn->vptr[c * HW + i];
      }
    };
  }
  return {g, out};
}

// x[N,D] + b[D] row broadcast.
template <typename T>
Value<T> add_row_broadcast(const Value<T>& x, const Value<T>& b) {
  const Shape& xs = x.shape();
  if (xs.size() != 2 || b.shape() != Shape{xs[1]})
    throw InputError("add_row_broadcast: need x[N,D], b[D]");
  Graph<T>* g = x.graph();
  Node<T>*xn = x.node(), *bn = b.node();
  Node<T>* out = g->make(xs, xn->requires_grad || bn->requires_grad);
  const std::int64_t N = xs[0], D = xs[1];
  for (std::int64_t r = 0; r < N; ++r)
    for (std::int64_t c = 0; c < D; ++c)
      out->owned[static_cast<std::size_t>(r * D + c)] = xn->vptr[r * D + c] + bn->vptr[c];
  if (out->requires_grad) {
    out->backward = [xn, bn, out, N, D]() {
      if (xn->requires_grad) {
        auto gx = xn->ensure_grad();
        for (std::int64_t i = 0; i < N * D; ++i) gx[static_cast<std::size_t>(i)] += out->grad[static_cast<std::size_t>(i)];
      }
      if (bn->requires_grad) {
        auto gb = bn->ensure_grad();
        for (std::int64_t r = 0; r < N; ++r)
          for (std::int64_t c = 0; c < D; ++c) gb[static_cast<std::size_t>(c)] += out->grad[static_cast<std::size_t>(r * D + c)];
      }
    };
  }
  return {g, out};
}

// ---------------------------------------------------------------------------
// Matrix products
// ---------------------------------------------------------------------------

template <typename T>
Value<T> matmul(const Value<T>& a, const Value<T>& b) {
  const Shape& as = a.shape();
  const Shape& bs = b.shape();
  if (as.size() != 2 || bs.size() != 2 || as[1] != bs[0])
    throw InputError("matmul: incompatible shapes " + shape_str(as) + " x " + shape_str(bs));
  const std::int64_t M = as[0], K = as[1], N = bs[1];
  Graph<T>* g = a.graph();
  Node<T>*an = a.node(), *bn = b.node();
  Node<T>* out = g->make(Shape{M, N}, an->requires_grad || bn->requires_grad);
  detail::MapCM<T> A(an->vptr, M, K), B(bn->vptr, K, N);
  detail::MapM<T>(out->owned.data(), M, N).noalias() = A * B;
  if (out->requires_grad) {
    out->backward = [an, bn, out, M, K, N]() {
      detail::MapCM<T> A(an->vptr, M, K), B(bn->vptr, K, N), Go(out->grad.data(), M, N);
      if (an->requires_grad) {
        auto ga = an->ensure_grad();
        detail::MapM<T>(ga.data(), M, K).noalias() += Go * B.transpose();
      }
      if (bn->requires_grad) {
        auto gb = bn->ensure_grad();
        detail::MapM<T>(gb.data(), K, N).noalias() += A.transpose() * Go;
      }
    };
  }
  return {g, out};
}

// Batched product over the leading axis with optional transposes:
// out[b] = opA(a[b]) * opB(b[b]).
template <typename T>
Value<T> batched_matmul(const Value<T>& a, const Value<T>& b, bool trans_a, bool trans_b) {
  const Shape& as = a.shape();
  const Shape& bs = b.shape();
  if (as.size() != 3 || bs.size() != 3 || as[0] != bs[0])
    throw InputError("batched_matmul: need matching rank-3 batches");
  const std::int64_t Bt = as[0];
  const std::int64_t M = trans_a ? as[2] : as[1];
  const std::int64_t K = trans_a ? as[1] : as[2];
  const std::int64_t Kb = trans_b ? bs[2] : bs[1];
  const std::int64_t N = trans_b ? bs[1] : bs[2];
  if (K != Kb) throw InputError("batched_matmul: inner dim mismatch");
  Graph<T>* g = a.graph();
  Node<T>*an = a.node(), *bn = b.node();
  Node<T>* out = g->make(Shape{Bt, M, N}, an->requires_grad || bn->requires_grad);
  const std::int64_t sa = as[1] * as[2], sb = bs[1] * bs[2], so = M * N;
  for (std::int64_t t = 0; t < Bt; ++t) {
    detail::MapCM<T> A(an->vptr + t * sa, as[1], as[2]);
    detail::MapCM<T> B(bn->vptr + t * sb, bs[1], bs[2]);
    detail::MapM<T> O(out->owned.data() + t * so, M, N);
    if (!trans_a && !trans_b) O.noalias() = A * B;
    else if (!trans_a && trans_b) O.noalias() = A * B.transpose();
    else if (trans_a && !trans_b) O.noalias() = A.transpose() * B;
    else O.noalias() = A.transpose() * B.transpose();
  }
  if (out->requires_grad) {
    Shape asc = as, bsc = bs;
    out->backward = [an, bn, out, asc, bsc, trans_a, trans_b, Bt, M, N, sa, sb, so]() {
      for (std::int64_t t = 0; t < Bt; ++t) {
        detail::MapCM<T> A(an->vptr + t * sa, asc[1], asc[2]);
        detail::MapCM<T> B(bn->vptr + t * sb, bsc[1], bsc[2]);
        detail::MapCM<T> Go(out->grad.data() + t * so, M, N);
        if (an->requires_grad) {
          detail::MapM<T> Ga(an->ensure_grad().data() + t * sa, asc[1], asc[2]);
          if (!trans_a && !trans_b) Ga.noalias() += Go * B.transpose();
          else if (!trans_a && trans_b) Ga.noalias() += Go * B;
          else if (trans_a && !trans_b) Ga.noalias() += B * Go.transpose();
          else Ga.noalias() += B.transpose() * Go.transpose();
        }
        if (bn->requires_grad) {
          detail::MapM<T> Gb(bn->ensure_grad().data() + t * sb, bsc[1], bsc[2]);
          if (!trans_a && !trans_b) Gb.noalias() += A.transpose() * Go;
          else if (!trans_a && trans_b) Gb.noalias() += Go.transpose() * A;
          else if (trans_a && !trans_b) Gb.noalias() += A * Go;
          else Gb.noalias() += Go.transpose() * A.transpose();
        }
      }
    };
  }
  return {g, out};
}

// Softmax over the last axis of a rank-2 or rank-3 tensor.
template <typename T>
Value<T> softmax_last(const Value<T>& a) {
  const Shape& s = a.shape();
  if (s.empty()) throw InputError("softmax_last: rank-0 input");
  const std::int64_t D = s.back();
  const std::int64_t rows = a.size() / D;
  Graph<T>* g = a.graph();
  Node<T>* an = a.node();
  Node<T>* out = g->make(s, an->requires_grad);
  for (std::int64_t r = 0; r < rows; ++r) {
    const T* x = an->vptr + r * D;
    T* y = out->owned.data() + r * D;
    T mx = x[0];
    for (std::int64_t i = 1; i < D; ++i) mx = std::max(mx, x[i]);
    T z = T(0);
    for (std::int64_t i = 0; i < D; ++i) {
      y[i] = std::exp(x[i] - mx);
      z += y[i];
    }
    for (std::int64_t i = 0; i < D; ++i) y[i] /= z;
  }
  if (out->requires_grad) {
    out->backward = [an, out, rows, D]() {
      auto ga = an->ensure_grad();
      for (std::int64_t r = 0; r < rows; ++r) {
        const T* y = out->owned.data() + r * D;
        const T* go = out->grad.data() + r * D;
        T dot = T(0);
        for (std::int64_t i = 0; i < D; ++i) dot += y[i] * go[i];
        for (std::int64_t i = 0; i < D; ++i) ga[static_cast<std::size_t>(r * D + i)] += y[i] * (go[i] - dot);
      }
    };
  }
  return {g, out};
}

// ---------------------------------------------------------------------------
// Normalization
// ---------------------------------------------------------------------------

namespace detail {

// Shared normalization kernel over `groups` contiguous rows of length `len`.
template <typename T>
inline void norm_backward_row(const T* x, const T* gamma, const T* go, T mu, T istd,
                              std::int64_t len, T* gx_row, T* ggamma, T* gbeta,
                              bool need_gx, bool need_gg, bool need_gb) {
  // Precompute the two reductions of the standard layer-norm backward.
  T sum_gg = T(0), sum_ggx = T(0);
  for (std::int64_t i = 0; i < len; ++i) {
    const T xhat = (x[i] - mu) * istd;
    const T gg = go[i] * gamma[i];
    sum_gg += gg;
    sum_ggx += gg * xhat;
  }
  const T inv_n = T(1) / T(len);
  for (std::int64_t i = 0; i < len; ++i) {
    const T xhat = (x[i] - mu) * istd;
    if (need_gx) {
      const T gg = go[i] * gamma[i];
      gx_row[i] += istd * (gg - inv_n * sum_gg - xhat * inv_n * sum_ggx);
    }
    if (need_gg) ggamma[i] += go[i] * xhat;
    if (need_gb) gbeta[i] += go[i];
  }
}

}  // namespace detail

// Layer norm over the last axis of x[N,D] with affine gamma[D], beta[D].
template <typename T>
Value<T> layer_norm(const Value<T>& x, const Value<T>& gamma, const Value<T>& beta, T eps = T(1e-5)) {
  const Shape& s = x.shape();
  if (s.size() != 2) throw InputError("layer_norm expects x[N,D]");
  const std::int64_t N = s[0], D = s[1];
  if (gamma.shape() != Shape{D} || beta.shape() != Shape{D})
    throw InputError("layer_norm: affine shape mismatch");
  Graph<T>* g = x.graph();
  Node<T>*xn = x.node(), *gn = gamma.node(), *bn = beta.node();
  Node<T>* out = g->make(s, xn->requires_grad || gn->requires_grad || bn->requires_grad);
  std::vector<T> mus(static_cast<std::size_t>(N)), istds(static_cast<std::size_t>(N));
  for (std::int64_t r = 0; r < N; ++r) {
    const T* xr = xn->vptr + r * D;
    T mu = T(0);
    for (std::int64_t i = 0; i < D; ++i) mu += xr[i];
    mu /= T(D);
    T var = T(0);
    for (std::int64_t i = 0; i < D; ++i) var += (xr[i] - mu) * (xr[i] - mu);
    var /= T(D);
    const T istd = T(1) / std::sqrt(var + eps);
    mus[static_cast<std::size_t>(r)] = mu;
    istds[static_cast<std::size_t>(r)] = istd;
    T* yr = out->owned.data() + r * D;
    for (std::int64_t i = 0; i < D; ++i) yr[i] = (xr[i] - mu) * istd * gn->vptr[i] + bn->vptr[i];
  }
  if (out->requires_grad) {
    out->backward = [xn, gn, bn, out, N, D, mus = std::move(mus), istds = std::move(istds)]() {
      T* gx = xn->requires_grad ? xn->ensure_grad().data() : nullptr;
      T* gg = gn->requires_grad ? gn->ensure_grad().data() : nullptr;
      T* gb = bn->requires_grad ? bn->ensure_grad().data() : nullptr;
      for (std::int64_t r = 0; r < N; ++r) {
        detail::norm_backward_row(xn->vptr + r * D, gn->vptr, out->grad.data() + r * D,
                                  mus[static_cast<std::size_t>(r)], istds[static_cast<std::size_t>(r)], D,
                                  gx ? gx + r * D : nullptr, gg, gb,
                                  gx != nullptr, gg != nullptr, gb != nullptr);
      }
    };
  }
  return {g, out};
}

// Instance norm over spatial dims of x[C,H,W] with per-channel affine.
template <typename T>
Value<T> instance_norm(const Value<T>& x, const Value<T>& gamma, const Value<T>& beta, T eps = T(1e-5)) {
  const Shape& s = x.shape();
  if (s.size() != 3) throw InputError("instance_norm expects x[C,H,W]");
  const std::int64_t C = s[0], HW = s[1] * s[2];
  if (gamma.shape() != Shape{C} || beta.shape() != Shape{C})
    throw InputError("instance_norm: affine shape mismatch");
  Graph<T>* g = x.graph();
  Node<T>*xn = x.node(), *gn = gamma.node(), *bn = beta.node();
  Node<T>* out = g->make(s, xn->requires_grad || gn->requires_grad || bn->requires_grad);
  std::vector<T> mus(static_cast<std::size_t>(C)), istds(static_cast<std::size_t>(C));
  for (std::int64_t c = 0; c < C; ++c) {
    const T* xc = xn->vptr + c * HW;
    T mu = T(0);
    for (std::int64_t i = 0; i < HW; ++i) mu += xc[i];
    mu /= T(HW);
    T var = T(0);
    for (std::int64_t i = 0; i < HW; ++i) var += (xc[i] - mu) * (xc[i] - mu);
    var /= T(HW);
    const T istd = T(1) / std::sqrt(var + eps);
    mus[static_cast<std::size_t>(c)] = mu;
    istds[static_cast<std::size_t>(c)] = istd;
    T* yc = out->owned.data() + c * HW;
    for (std::int64_t i = 0; i < HW; ++i) yc[i] = (xc[i] - mu) * istd * gn->vptr[c] + bn->vptr[c];
  }
  if (out->requires_grad) {
    out->backward = [xn, gn, bn, out, C, HW, mus = std::move(mus), istds = std::move(istds)]() {
      for (std::int64_t c = 0; c < C; ++c) {
        const T* xc = xn->vptr + c * HW;
        const T* go = out->grad.data() + c * HW;
        const T mu = mus[static_cast<std::size_t>(c)];
        const T istd = istds[static_cast<std::size_t>(c)];
        const T gam = gn->vptr[c];
        T sum_g = T(0), sum_gx = T(0);
        for (std::int64_t i = 0; i < HW; ++i) {
          sum_g += go[i];
          sum_gx += go[i] * (xc[i] - mu) * istd;
        }
        if (xn->requires_grad) {
          auto gx = xn->ensure_grad();
          const T inv_n = T(1) / T(HW);
          for (std::int64_t i = 0; i < HW; ++i) {
            const T xhat = (xc[i] - mu) * istd;
            gx[static_cast<std::size_t>(c * HW + i)] += gam * istd * (go[i] - inv_n * sum_g - xhat * inv_n * sum_gx);
          }
        }
        if (gn->requires_grad) gn->ensure_grad()[static_cast<std::size_t>(c)] += sum_gx;
        if (bn->requires_grad) bn->ensure_grad()[static_cast<std::size_t>(c)] += sum_g;
      }
    };
  }
  return {g, out};
}

// ---------------------------------------------------------------------------
// Convolution and spatial ops (CHW layout)
// ---------------------------------------------------------------------------

namespace detail {

struct ConvGeom {
  std::int64_t Ci, H, W, Co, kh, kw, stride, pad, dil, Ho, Wo;
};

template <typename T>
inline void im2col(const T* x, const ConvGeom& gm, T* col) {
  // col is [Ci*kh*kw, Ho*Wo]
  const std::int64_t L = gm.Ho * gm.Wo;
  std::int64_t row = 0;
  for (std::int64_t c = 0; c < gm.Ci; ++c) {
    for (std::int64_t ky = 0; ky < gm.kh; ++ky) {
      for (std::int64_t kx = 0; kx < gm.kw; ++kx, ++row) {
        T* dst = col + row * L;
        for (std::int64_t oy = 0; oy < gm.Ho; ++oy) {
          const std::int64_t iy = oy * gm.stride - gm.pad + ky * gm.dil;
          if (iy < 0 || iy >= gm.H) {
            std::fill(dst + oy * gm.Wo, dst + (oy + 1) * gm.Wo, T(0));
            continue;
          }
          const T* src_row = x + c * gm.H * gm.W + iy * gm.W;
          for (std::int64_t ox = 0; ox < gm.Wo; ++ox) {
            const std::int64_t ix = ox * gm.stride - gm.pad + kx * gm.dil;
            dst[oy * gm.Wo + ox] = (ix >= 0 && ix < gm.W) ? src_row[ix] : T(0);
          }
        }
      }
    }
  }
}

template <typename T>
inline void col2im_accum(const T* col, const ConvGeom& gm, T* gx) {
  const std::int64_t L = gm.Ho * gm.Wo;
  std::int64_t row = 0;
  for (std::int64_t c = 0; c < gm.Ci; ++c) {
    for (std::int64_t ky = 0; ky < gm.kh; ++ky) {
      for (std::int64_t kx = 0; kx < gm.kw; ++kx, ++row) {
        const T* src = col + row * L;
        for (std::int64_t oy = 0; oy < gm.Ho; ++oy) {
          const std::int64_t iy = oy * gm.stride - gm.pad + ky * gm.dil;
          if (iy < 0 || iy >= gm.H) continue;
          T* dst_row = gx + c * gm.H * gm.W + iy * gm.W;
          for (std::int64_t ox = 0; ox < gm.Wo; ++ox) {
            const std::int64_t ix = ox * gm.stride - gm.pad + kx * gm.dil;
            if (ix >= 0 && ix < gm.W) dst_row[ix] += src[oy * gm.Wo + ox];
          }
        }
      }
    }
  }
}

}  // namespace detail

// 2-D convolution, x[Ci,H,W] * w[Co,Ci,kh,kw] (+ optional bias[Co]).
template <typename T>
Value<T> conv2d(const Value<T>& x, const Value<T>& w, const Value<T>* bias,
                std::int64_t stride, std::int64_t pad, std::int64_t dil = 1) {
  const Shape& xs = x.shape();
  const Shape& ws = w.shape();
  if (xs.size() != 3 || ws.size() != 4 || ws[1] != xs[0])
    throw InputError("conv2d: need x[Ci,H,W], w[Co,Ci,kh,kw]; got " + shape_str(xs) + ", " + shape_str(ws));
  detail::ConvGeom gm;
  gm.Ci = xs[0]; gm.H = xs[1]; gm.W = xs[2];
  gm.Co = ws[0]; gm.kh = ws[2]; gm.kw = ws[3];
  gm.stride = stride; gm.pad = pad; gm.dil = dil;
  gm.Ho = (gm.H + 2 * pad - dil * (gm.kh - 1) - 1) / stride + 1;
  gm.Wo = (gm.W + 2 * pad - dil * (gm.kw - 1) - 1) / stride + 1;
  if (gm.Ho <= 0 || gm.Wo <= 0) throw ConfigError("conv2d: output would be empty");
  const std::int64_t K = gm.Ci * gm.kh * gm.kw, L = gm.Ho * gm.Wo;

  Graph<T>* g = x.graph();
  Node<T>*xn = x.node(), *wn = w.node();
  Node<T>* bn = bias ? bias->node() : nullptr;
  if (bn && bn->shape != Shape{gm.Co}) throw InputError("conv2d: bias shape mismatch");
  bool rg = xn->requires_grad || wn->requires_grad || (bn && bn->requires_grad);
  Node<T>* out = g->make(Shape{gm.Co, gm.Ho, gm.Wo}, rg);

  std::vector<T> col(static_cast<std::size_t>(K * L));
  detail::im2col(xn->vptr, gm, col.data());
  detail::MapCM<T> W(wn->vptr, gm.Co, K);
  detail::MapCM<T> Col(col.data(), K, L);
  detail::MapM<T> O(out->owned.data(), gm.Co, L);
  O.noalias() = W * Col;
  if (bn)
    for (std::int64_t c = 0; c < gm.Co; ++c)
      for (std::int64_t i = 0; i < L; ++i) out->owned[static_cast<std::size_t>(c * L + i)] += bn->vptr[c];

  if (out->requires_grad) {
    out->backward = [xn, wn, bn, out, gm, K, L]() {
      detail::MapCM<T> Go(out->grad.data(), gm.Co, L);
      std::vector<T> col(static_cast<std::size_t>(K * L));
      detail::im2col(xn->vptr, gm, col.data());
      detail::MapCM<T> Col(col.data(), K, L);
      if (wn->requires_grad) {
        detail::MapM<T> Gw(wn->ensure_grad().data(), gm.Co, K);
        Gw.noalias() += Go * Col.transpose();
      }
      if (bn && bn->requires_grad) {
        auto gb = bn->ensure_grad();
        for (std::int64_t c = 0; c < gm.Co; ++c) {
          T acc = T(0);
          for (std::int64_t i = 0; i < L; ++i) acc += out->grad[static_cast<std::size_t>(c * L + i)];
          gb[static_cast<std::size_t>(c)] += acc;
        }
      }
      if (xn->requires_grad) {
        detail::MapCM<T> W(wn->vptr, gm.Co, K);
        std::vector<T> gcol(static_cast<std::size_t>(K * L));
        detail::MapM<T>(gcol.data(), K, L).noalias() = W.transpose() * Go;
        detail::col2im_accum(gcol.data(), gm, xn->ensure_grad().data());
      }
    };
  }
  return {g, out};
}

template <typename T>
Value<T> conv2d(const Value<T>& x, const Value<T>& w, const Value<T>& bias,
                std::int64_t stride, std::int64_t pad, std::int64_t dil = 1) {
  return conv2d(x, w, &bias, stride, pad, dil);
}

template <typename T>
Value<T> upsample_nearest2x(const Value<T>& x) {
  const Shape& s = x.shape();
  if (s.size() != 3) throw InputError("upsample_nearest2x expects x[C,H,W]");
  const std::int64_t C = s[0], H = s[1], W = s[2];
  Graph<T>* g = x.graph();
  Node<T>* xn = x.node();
  Node<T>* out = g->make(Shape{C, 2 * H, 2 * W}, xn->requires_grad);
  for (std::int64_t c = 0; c < C; ++c)
    for (std::int64_t y = 0; y < 2 * H; ++y)
      for (std::int64_t xw = 0; xw < 2 * W; ++xw)
        out->owned[static_cast<std::size_t>((c * 2 * H + y) * 2 * W + xw)] = xn->vptr[(c * H + y / 2) * W + xw / 2];
  if (out->requires_grad) {
    out->backward = [xn, out, C, H, W]() {
      auto gx = xn->ensure_grad();
      for (std::int64_t c = 0; c < C; ++c)
        for (std::int64_t y = 0; y < 2 * H; ++y)
          for (std::int64_t xw = 0; xw < 2 * W; ++xw)
            gx[static_cast<std::size_t>((c * H + y / 2) * W + xw / 2)] += out->grad[static_cast<std::size_t>((c * 2 * H + y) * 2 * W + xw)];
    };
  }
  return {g, out};
}

// Bilinear upsample to (Ho, Wo), half-pixel centers (align_corners = false).
template <typename T>
Value<T> upsample_bilinear(const Value<T>& x, std::int64_t Ho, std::int64_t Wo) {
  const Shape& s = x.shape();
  if (s.size() != 3) throw InputError("upsample_bilinear expects x[C,H,W]");
  const std::int64_t C = s[0], H = s[1], W = s[2];
  Graph<T>* g = x.graph();
  Node<T>* xn = x.node();
  Node<T>* out = g->make(Shape{C, Ho, Wo}, xn->requires_grad);

  struct Tap { std::int64_t lo, hi; T w_hi; };
  auto make_taps = [](std::int64_t in, std::int64_t outn) {
    std::vector<Tap> taps(static_cast<std::size_t>(outn));
    const double r = static_cast<double>(in) / static_cast<double>(outn);
    for (std::int64_t o = 0; o < outn; ++o) {
      double pos = (o + 0.5) * r - 0.5;
      pos = std::max(0.0, std::min(pos, static_cast<double>(in - 1)));
      const auto lo = static_cast<std::int64_t>(std::floor(pos));
      const std::int64_t hi = std::min(lo + 1, in - 1);
      taps[static_cast<std::size_t>(o)] = {lo, hi, static_cast<T>(pos - static_cast<double>(lo))};
    }
    return taps;
  };
  auto ytaps = make_taps(H, Ho);
  auto xtaps = make_taps(W, Wo);
  for (std::int64_t c = 0; c < C; ++c) {
    const T* xc = xn->vptr + c * H * W;
    T* yc = out->owned.data() + c * Ho * Wo;
    for (std::int64_t oy = 0; oy < Ho; ++oy) {
      const Tap& ty = ytaps[static_cast<std::size_t>(oy)];
      for (std::int64_t ox = 0; ox < Wo; ++ox) {
        const Tap& tx = xtaps[static_cast<std::size_t>(ox)];
        const T v00 = xc[ty.lo * W + tx.lo], v01 = xc[ty.lo * W + tx.hi];
        const T v10 = xc[ty.hi * W + tx.lo], v11 = xc[ty.hi * W + tx.hi];
        const T top = v00 + (v01 - v00) * tx.w_hi;
        const T bot = v10 + (v11 - v10) * tx.w_hi;
        yc[oy * Wo + ox] = top + (bot - top) * ty.w_hi;
      }
    }
  }
  if (out->requires_grad) {
    out->backward = [xn, out, C, H, W, Ho, Wo, ytaps = std::move(ytaps), xtaps = std::move(xtaps)]() {
      auto gx = xn->ensure_grad();
      for (std::int64_t c = 0; c < C; ++c) {
        T* gxc = gx.data() + c * H * W;
        const T* go = out->grad.data() + c * Ho * Wo;
        for (std::int64_t oy = 0; oy < Ho; ++oy) {
          const auto& ty = ytaps[static_cast<std::size_t>(oy)];
          for (std::int64_t ox = 0; ox < Wo; ++ox) {
            const auto& tx = xtaps[static_cast<std::size_t>(ox)];
            const T gv = go[oy * Wo + ox];
            const T wy1 = ty.w_hi, wy0 = T(1) - wy1;
            const T wx1 = tx.w_hi, wx0 = T(1) - wx1;
            gxc[ty.lo * W + tx.lo] += gv * wy0 * wx0;
            gxc[ty.lo * W + tx.hi] += gv * wy0 * wx1;
            gxc[ty.hi * W + tx.lo] += gv * wy1 * wx0;
            gxc[ty.hi * W + tx.hi] += gv * wy1 * wx1;
          }
        }
      }
    };
  }
  return {g, out};
}

template <typename T>
Value<T> global_avg_pool(const Value<T>& x) {
  const Shape& s = x.shape();
  if (s.size() != 3) throw InputError("global_avg_pool expects x[C,H,W]");
  const std::int64_t C = s[0], HW = s[1] * s[2];
  Graph<T>* g = x.graph();
  Node<T>* xn = x.node();
  Node<T>* out = g->make(Shape{C}, xn->requires_grad);
  for (std::int64_t c = 0; c < C; ++c) {
    T acc = T(0);
    for (std::int64_t i = 0; i < HW; ++i) acc += xn->vptr[c * HW + i];
    out->owned[static_cast<std::size_t>(c)] = acc / T(HW);
  }
  if (out->requires_grad) {
    out->backward = [xn, out, C, HW]() {
      auto gx = xn->ensure_grad();
      for (std::int64_t c = 0; c < C; ++c) {
        const T go = out->grad[static_cast<std::size_t>(c)] / T(HW);
        for (std::int64_t i = 0; i < HW; ++i) gx[static_cast<std::size_t>(c * HW + i)] += go;
      }
    };
  }
  return {g, out};
}

// ---------------------------------------------------------------------------
// Patch tokenization (graph side)
// ---------------------------------------------------------------------------

// x[C,H,W] -> tokens[N, rho*rho*C], patches row-major over the grid, entries
// within a token ordered (y, x, c) i.e. pixels row-major with channels last.
template <typename T>
Value<T> patchify_op(const Value<T>& x, std::int64_t rho) {
  const Shape& s = x.shape();
  if (s.size() != 3) throw InputError("patchify expects x[C,H,W]");
  const std::int64_t C = s[0], H = s[1], W = s[2];
  if (rho <= 0 || H % rho != 0 || W % rho != 0)
    throw InputError("patchify: spatial size not divisible by patch size");
  const std::int64_t gr = H / rho, gc = W / rho, N = gr * gc, D = rho * rho * C;
  Graph<T>* g = x.graph();
  Node<T>* xn = x.node();
  Node<T>* out = g->make(Shape{N, D}, xn->requires_grad);
  for (std::int64_t pr = 0; pr < gr; ++pr)
    for (std::int64_t pc = 0; pc < gc; ++pc) {
      T* tok = out->owned.data() + (pr * gc + pc) * D;
      std::int64_t k = 0;
      for (std::int64_t y = 0; y < rho; ++y)
        for (std::int64_t xw = 0; xw < rho; ++xw)
          for (std::int64_t c = 0; c < C; ++c, ++k)
            tok[k] = xn->vptr[(c * H + pr * rho + y) * W + pc * rho + xw];
    }
  if (out->requires_grad) {
    out->backward = [xn, out, C, H, W, rho, gr, gc, D]() {
      auto gx = xn->ensure_grad();
      for (std::int64_t pr = 0; pr < gr; ++pr)
        for (std::int64_t pc = 0; pc < gc; ++pc) {
          const T* gtok = out->grad.data() + (pr * gc + pc) * D;
          std::int64_t k = 0;
          for (std::int64_t y = 0; y < rho; ++y)
            for (std::int64_t xw = 0; xw < rho; ++xw)
              for (std::int64_t c = 0; c < C; ++c, ++k)
                gx[static_cast<std::size_t>((c * H + pr * rho + y) * W + pc * rho + xw)] += gtok[k];
        }
    };
  }
  return {g, out};
}

// Exact inverse of patchify_op.
template <typename T>
Value<T> unpatchify_op(const Value<T>& tokens, std::int64_t C, std::int64_t H, std::int64_t W, std::int64_t rho) {
  const Shape& s = tokens.shape();
  if (s.size() != 2) throw InputError("unpatchify expects tokens[N,D]");
  if (rho <= 0 || H % rho != 0 || W % rho != 0) throw InputError("unpatchify: bad geometry");
  const std::int64_t gr = H / rho, gc = W / rho, N = gr * gc, D = rho * rho * C;
  if (s[0] != N || s[1] != D) throw InputError("unpatchify: token matrix does not match geometry");
  Graph<T>* g = tokens.graph();
  Node<T>* tn = tokens.node();
  Node<T>* out = g->make(Shape{C, H, W}, tn->requires_grad);
  for (std::int64_t pr = 0; pr < gr; ++pr)
    for (std::int64_t pc = 0; pc < gc; ++pc) {
      const T* tok = tn->vptr + (pr * gc + pc) * D;
      std::int64_t k = 0;
      for (std::int64_t y = 0; y < rho; ++y)
        for (std::int64_t xw = 0; xw < rho; ++xw)
          for (std::int64_t c = 0; c < C; ++c, ++k)
            out->owned[static_cast<std::size_t>((c * H + pr * rho + y) * W + pc * rho + xw)] = tok[k];
    }
  if (out->requires_grad) {
    out->backward = [tn, out, C, H, W, rho, gr, gc, D]() {
      auto gt = tn->ensure_grad();
      for (std::int64_t pr = 0; pr < gr; ++pr)
        for (std::int64_t pc = 0; pc < gc; ++pc) {
          std::int64_t k = 0;
          for (std::int64_t y = 0; y < rho; ++y)
            for (std::int64_t xw = 0; xw < rho; ++xw)
              for (std::int64_t c = 0; c < C; ++c, ++k)
                gt[static_cast<std::size_t>((pr * gc + pc) * D + k)] += out->grad[static_cast<std::size_t>((c * H + pr * rho + y) * W + pc * rho + xw)];
        }
    };
  }
  return {g, out};
}

}  // namespace dfrec
