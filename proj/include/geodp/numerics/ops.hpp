#pragma once

// Differentiable primitives. Each op computes its value eagerly and records
// a closure that maps the output gradient back onto its inputs.

#include <cmath>
#include <memory>
#include <numbers>
#include <string>
#include <vector>

#include "geodp/numerics/gemm.hpp"
#include "geodp/numerics/graph.hpp"

namespace geodp::ad {

namespace detail {

inline std::string shape_msg(std::string_view op, const Shape& a, const Shape& b) {
  return std::string(op) + ": incompatible shapes " + to_string(a) + " and " + to_string(b);
}

// Maps each element of `a` onto an element of `b` where b is right-aligned
// against a and every b dimension is either equal to a's or 1.
struct BroadcastPlan {
  enum class Kind { same, row, general } kind = Kind::same;
  std::size_t row = 0;
  std::shared_ptr<std::vector<std::uint32_t>> index;
};

inline BroadcastPlan plan_broadcast(std::string_view op, const Shape& a, const Shape& b) {
  BroadcastPlan plan;
  if (a == b) return plan;
  if (b.size() > a.size()) fail(ErrorKind::shape, shape_msg(op, a, b));
  Shape bb(a.size() - b.size(), 1);
  bb.insert(bb.end(), b.begin(), b.end());
  for (std::size_t i = 0; i < a.size(); ++i)
    if (bb[i] != a[i] && bb[i] != 1) fail(ErrorKind::shape, shape_msg(op, a, b));
  const std::size_t nb = numel(b);
  if (!a.empty() && nb == a.back() && bb.back() == a.back()) {
    plan.kind = BroadcastPlan::Kind::row;
    plan.row = nb;
    return plan;
  }
  plan.kind = BroadcastPlan::Kind::general;
  std::vector<std::size_t> stride(a.size(), 0);
  std::size_t s = 1;
  for (std::size_t i = a.size(); i-- > 0;) {
    stride[i] = bb[i] == 1 ? 0 : s;
    s *= bb[i];
  }
  const std::size_t n = numel(a);
  auto idx = std::make_shared<std::vector<std::uint32_t>>(n);
  std::vector<std::size_t> counter(a.size(), 0);
  std::size_t off = 0;
  for (std::size_t i = 0; i < n; ++i) {
    (*idx)[i] = static_cast<std::uint32_t>(off);
    for (std::size_t d = a.size(); d-- > 0;) {
      ++counter[d];
      off += stride[d];
      if (counter[d] < a[d]) break;
      off -= stride[d] * counter[d];
      counter[d] = 0;
    }
  }
  plan.index = std::move(idx);
  return plan;
}

// Calls f(i, j) for every output element i and its broadcast source j.
template <class F>
void for_broadcast(const BroadcastPlan& p, std::size_t n, F&& f) {
  switch (p.kind) {
    case BroadcastPlan::Kind::same:
      for (std::size_t i = 0; i < n; ++i) f(i, i);
      break;
    case BroadcastPlan::Kind::row:
      for (std::size_t o = 0; o < n; o += p.row)
        for (std::size_t j = 0; j < p.row; ++j) f(o + j, j);
      break;
    default: {
      const auto& idx = *p.index;
      for (std::size_t i = 0; i < n; ++i) f(i, idx[i]);
    }
  }
}

struct Span3 {
  std::size_t outer, axis, inner;
};

inline Span3 split_axis(const Shape& s, std::size_t axis) {
  Span3 r{1, s[axis], 1};
  for (std::size_t i = 0; i < axis; ++i) r.outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) r.inner *= s[i];
  return r;
}

template <class T>
T gelu(T x) {
  return T(0.5) * x * (T(1) + std::erf(x / std::numbers::sqrt2_v<T>));
}

template <class T>
T gelu_grad(T x) {
  const T cdf = T(0.5) * (T(1) + std::erf(x / std::numbers::sqrt2_v<T>));
  const T pdf = std::exp(T(-0.5) * x * x) / std::sqrt(T(2) * std::numbers::pi_v<T>);
  return cdf + x * pdf;
}

template <class T>
T softplus(T x) {
  return x > T(20) ? x : std::log1p(std::exp(x));
}

template <class T>
T mish(T x) {
  return x * std::tanh(softplus(x));
}

template <class T>
T mish_grad(T x) {
  const T t = std::tanh(softplus(x));
  const T sig = T(1) / (T(1) + std::exp(-x));
  return t + x * (T(1) - t * t) * sig;
}

}  // namespace detail

// ---------------------------------------------------------------- elementwise

template <class T>
Var<T> add(Var<T> a, Var<T> b) {
  auto& g = *a.graph;
  const auto& av = a.value();
  const auto& bv = b.value();
  auto plan = detail::plan_broadcast("add", av.shape(), bv.shape());
  Tensor<T> out = av;
  T* o = out.data();
  const T* bp = bv.data();
  detail::for_broadcast(plan, out.size(), [&](std::size_t i, std::size_t j) { o[i] += bp[j]; });
  return g.record("add", std::move(out), {a, b}, [a = a.id, b = b.id, plan](Graph<T>& g, std::uint32_t self) {
    const auto& dy = g.grad_of(self);
    if (g.requires_grad(a)) {
      auto& da = g.grad_acc(a);
      for (std::size_t i = 0; i < dy.size(); ++i) da[i] += dy[i];
    }
    if (g.requires_grad(b)) {
      auto& db = g.grad_acc(b);
      T* d = db.data();
      const T* y = dy.data();
      detail::for_broadcast(plan, dy.size(), [&](std::size_t i, std::size_t j) { d[j] += y[i]; });
    }
  });
}

template <class T>
Var<T> sub(Var<T> a, Var<T> b) {
  auto& g = *a.graph;
  const auto& av = a.value();
  const auto& bv = b.value();
  auto plan = detail::plan_broadcast("sub", av.shape(), bv.shape());
  Tensor<T> out = av;
  T* o = out.data();
  const T* bp = bv.data();
  detail::for_broadcast(plan, out.size(), [&](std::size_t i, std::size_t j) { o[i] -= bp[j]; });
  return g.record("sub", std::move(out), {a, b}, [a = a.id, b = b.id, plan](Graph<T>& g, std::uint32_t self) {
    const auto& dy = g.grad_of(self);
    if (g.requires_grad(a)) {
      auto& da = g.grad_acc(a);
      for (std::size_t i = 0; i < dy.size(); ++i) da[i] += dy[i];
    }
    if (g.requires_grad(b)) {
      auto& db = g.grad_acc(b);
      T* d = db.data();
      const T* y = dy.data();
      detail::for_broadcast(plan, dy.size(), [&](std::size_t i, std::size_t j) { d[j] -= y[i]; });
    }
  });
}

template <class T>
Var<T> mul(Var<T> a, Var<T> b) {
  auto& g = *a.graph;
  const auto& av = a.value();
  const auto& bv = b.value();
  auto plan = detail::plan_broadcast("mul", av.shape(), bv.shape());
  Tensor<T> out = av;
  T* o = out.data();
  const T* bp = bv.data();
  detail::for_broadcast(plan, out.size(), [&](std::size_t i, std::size_t j) { o[i] *= bp[j]; });
  return g.record("mul", std::move(out), {a, b}, [a = a.id, b = b.id, plan](Graph<T>& g, std::uint32_t self) {
    const auto& dy = g.grad_of(self);
    const auto& av = g.value(a);
    const auto& bv = g.value(b);
    if (g.requires_grad(a)) {
      auto& da = g.grad_acc(a);
      T* d = da.data();
      const T *y = dy.data(), *bp = bv.data();
      detail::for_broadcast(plan, dy.size(), [&](std::size_t i, std::size_t j) { d[i] += y[i] * bp[j]; });
    }
    if (g.requires_grad(b)) {
      auto& db = g.grad_acc(b);
      T* d = db.data();
      const T *y = dy.data(), *ap = av.data();
      detail::for_broadcast(plan, dy.size(), [&](std::size_t i, std::size_t j) { d[j] += y[i] * ap[i]; });
    }
  });
}

template <class T>
Var<T> scale(Var<T> a, T s) {
  Tensor<T> out = a.value();
  for (auto& v : out.values()) v *= s;
  return a.graph->record("scale", std::move(out), {a}, [a = a.id, s](Graph<T>& g, std::uint32_t self) {
    const auto& dy = g.grad_of(self);
    auto& da = g.grad_acc(a);
    for (std::size_t i = 0; i < dy.size(); ++i) da[i] += s * dy[i];
  });
}

template <class T>
Var<T> gelu(Var<T> a) {
  Tensor<T> out = a.value();
  for (auto& v : out.values()) v = detail::gelu(v);
  return a.graph->record("gelu", std::move(out), {a}, [a = a.id](Graph<T>& g, std::uint32_t self) {
    const auto& dy = g.grad_of(self);
    const auto& x = g.value(a);
    auto& da = g.grad_acc(a);
    for (std::size_t i = 0; i < dy.size(); ++i) da[i] += dy[i] * detail::gelu_grad(x[i]);
  });
}

template <class T>
Var<T> mish(Var<T> a) {
  Tensor<T> out = a.value();
  for (auto& v : out.values()) v = detail::mish(v);
  return a.graph->record("mish", std::move(out), {a}, [a = a.id](Graph<T>& g, std::uint32_t self) {
    const auto& dy = g.grad_of(self);
    const auto& x = g.value(a);
    auto& da = g.grad_acc(a);
    for (std::size_t i = 0; i < dy.size(); ++i) da[i] += dy[i] * detail::mish_grad(x[i]);
  });
}

template <class T> Var<T> operator+(Var<T> a, Var<T> b) { return add(a, b); }
template <class T> Var<T> operator-(Var<T> a, Var<T> b) { return sub(a, b); }
template <class T> Var<T> operator*(Var<T> a, Var<T> b) { return mul(a, b); }

// ---------------------------------------------------------------- products

// a: [..., K], w: [K, N] -> [..., N]
template <class T>
Var<T> matmul(Var<T> a, Var<T> w) {
  const auto& av = a.value();
  const auto& wv = w.value();
  if (av.rank() < 1 || wv.rank() != 2 || av.shape().back() != wv.dim(0))
    fail(ErrorKind::shape, "node " + std::to_string(a.graph->size()) + " " +
                               detail::shape_msg("matmul", av.shape(), wv.shape()));
  const std::size_t k = wv.dim(0), n = wv.dim(1), m = av.size() / k;
  Shape os = av.shape();
  os.back() = n;
  Tensor<T> out(os);
  kernels::gemm(av.data(), wv.data(), out.data(), m, k, n, false, false, false);
  return a.graph->record("matmul", std::move(out), {a, w}, [a = a.id, w = w.id, m, k, n](Graph<T>& g, std::uint32_t self) {
    const auto& dy = g.grad_of(self);
    if (g.requires_grad(a))
      kernels::gemm(dy.data(), g.value(w).data(), g.grad_acc(a).data(), m, n, k, false, true, true);
    if (g.requires_grad(w))
      kernels::gemm(g.value(a).data(), dy.data(), g.grad_acc(w).data(), k, m, n, true, false, true);
  });
}

// a: [B, M, K]; b: [B, K, N] (or [B, N, K] when trans_b) -> [B, M, N]
template <class T>
Var<T> bmm(Var<T> a, Var<T> b, bool trans_b = false) {
  const auto& av = a.value();
  const auto& bv = b.value();
  if (av.rank() != 3 || bv.rank() != 3 || av.dim(0) != bv.dim(0) ||
      av.dim(2) != (trans_b ? bv.dim(2) : bv.dim(1)))
    fail(ErrorKind::shape, "node " + std::to_string(a.graph->size()) + " " +
                               detail::shape_msg("bmm", av.shape(), bv.shape()));
  const std::size_t batch = av.dim(0), m = av.dim(1), k = av.dim(2);
  const std::size_t n = trans_b ? bv.dim(1) : bv.dim(2);
  Tensor<T> out(Shape{batch, m, n});
  for (std::size_t i = 0; i < batch; ++i)
    kernels::gemm(av.data() + i * m * k, bv.data() + i * k * n, out.data() + i * m * n, m, k, n,
                  false, trans_b, false);
  return a.graph->record("bmm", std::move(out), {a, b},
                         [a = a.id, b = b.id, batch, m, k, n, trans_b](Graph<T>& g, std::uint32_t self) {
    const auto& dy = g.grad_of(self);
    const auto& av = g.value(a);
    const auto& bv = g.value(b);
    if (g.requires_grad(a)) {
      auto& da = g.grad_acc(a);
      // da = dy * op(b)^T
      for (std::size_t i = 0; i < batch; ++i)
        kernels::gemm(dy.data() + i * m * n, bv.data() + i * k * n, da.data() + i * m * k, m, n, k,
                      false, !trans_b, true);
    }
    if (g.requires_grad(b)) {
      auto& db = g.grad_acc(b);
      for (std::size_t i = 0; i < batch; ++i) {
        if (trans_b)  // db[n,k] = dy^T a
          kernels::gemm(dy.data() + i * m * n, av.data() + i * m * k, db.data() + i * k * n, n, m, k,
                        true, false, true);
        else  // db[k,n] = a^T dy
          kernels::gemm(av.data() + i * m * k, dy.data() + i * m * n, db.data() + i * k * n, k, m, n,
                        true, false, true);
      }
    }
  });
}

// Channels-last 1-D convolution without bias.
// x: [B, L, Cin], w: [K, Cin, Cout] -> [B, Lout, Cout], Lout = (L + 2 pad - K) / stride + 1.
template <class T>
Var<T> conv1d(Var<T> x, Var<T> w, std::size_t stride = 1, std::size_t pad = 0) {
  const auto& xv = x.value();
  const auto& wv = w.value();
  if (xv.rank() != 3 || wv.rank() != 3 || xv.dim(2) != wv.dim(1) || stride == 0 ||
      xv.dim(1) + 2 * pad < wv.dim(0))
    fail(ErrorKind::shape, "node " + std::to_string(x.graph->size()) + " " +
                               detail::shape_msg("conv1d", xv.shape(), wv.shape()));
  const std::size_t batch = xv.dim(0), len = xv.dim(1), cin = xv.dim(2);
  const std::size_t ksz = wv.dim(0), cout = wv.dim(2);
  const std::size_t lout = (len + 2 * pad - ksz) / stride + 1;
  const std::size_t row = ksz * cin;
  auto cols = std::make_shared<std::vector<T>>(batch * lout * row, T{});
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t t = 0; t < lout; ++t)
      for (std::size_t k = 0; k < ksz; ++k) {
        const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(t * stride + k) - static_cast<std::ptrdiff_t>(pad);
        if (src < 0 || src >= static_cast<std::ptrdiff_t>(len)) continue;
        std::copy_n(xv.data() + (b * len + src) * cin, cin, cols->data() + (b * lout + t) * row + k * cin);
      }
  Tensor<T> out(Shape{batch, lout, cout});
  kernels::gemm(cols->data(), wv.data(), out.data(), batch * lout, row, cout, false, false, false);
  return x.graph->record("conv1d", std::move(out), {x, w},
                         [x = x.id, w = w.id, cols, batch, len, cin, ksz, cout, lout, row, stride, pad](
                             Graph<T>& g, std::uint32_t self) {
    const auto& dy = g.grad_of(self);
    if (g.requires_grad(w))
      kernels::gemm(cols->data(), dy.data(), g.grad_acc(w).data(), row, batch * lout, cout, true, false, true);
    if (g.requires_grad(x)) {
      std::vector<T> dcols(batch * lout * row);
      kernels::gemm(dy.data(), g.value(w).data(), dcols.data(), batch * lout, cout, row, false, true, false);
      auto& dx = g.grad_acc(x);
      for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t t = 0; t < lout; ++t)
          for (std::size_t k = 0; k < ksz; ++k) {
            const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(t * stride + k) - static_cast<std::ptrdiff_t>(pad);
            if (src < 0 || src >= static_cast<std::ptrdiff_t>(len)) continue;
            const T* s = dcols.data() + (b * lout + t) * row + k * cin;
            T* d = dx.data() + (b * len + src) * cin;
            for (std::size_t c = 0; c < cin; ++c) d[c] += s[c];
          }
    }
  });
}

// ---------------------------------------------------------------- normalization

namespace detail {

// Normalizes independent groups. Element e of group j sits at
// base(j) + (e / width) * stride + e % width.
struct GroupLayout {
  std::size_t groups, count, width, stride;
  std::function<std::size_t(std::size_t)> base;
};

template <class T>
void normalize_groups(const Tensor<T>& x, Tensor<T>& y, std::vector<T>& inv_std, const GroupLayout& l, T eps) {
  inv_std.resize(l.groups);
  const std::size_t rows = l.count / l.width;
  for (std::size_t j = 0; j < l.groups; ++j) {
    const T* xb = x.data() + l.base(j);
    T* yb = y.data() + l.base(j);
    double sum = 0.0;
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < l.width; ++c) sum += xb[r * l.stride + c];
    const double mean = sum / static_cast<double>(l.count);
    double var = 0.0;
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < l.width; ++c) {
        const double d = xb[r * l.stride + c] - mean;
        var += d * d;
      }
    var /= static_cast<double>(l.count);
    const double is = 1.0 / std::sqrt(var + static_cast<double>(eps));
    inv_std[j] = static_cast<T>(is);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < l.width; ++c) {
        const std::size_t i = r * l.stride + c;
        yb[i] = static_cast<T>((xb[i] - mean) * is);
      }
  }
}

template <class T>
void normalize_groups_backward(const Tensor<T>& y, const Tensor<T>& dy, Tensor<T>& dx,
                               const std::vector<T>& inv_std, const GroupLayout& l) {
  const std::size_t rows = l.count / l.width;
  for (std::size_t j = 0; j < l.groups; ++j) {
    const std::size_t base = l.base(j);
    const T *yb = y.data() + base, *db = dy.data() + base;
    T* xb = dx.data() + base;
    double mdy = 0.0, mdyy = 0.0;
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < l.width; ++c) {
        const std::size_t i = r * l.stride + c;
        mdy += db[i];
        mdyy += db[i] * yb[i];
      }
    mdy /= static_cast<double>(l.count);
    mdyy /= static_cast<double>(l.count);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < l.width; ++c) {
        const std::size_t i = r * l.stride + c;
        xb[i] += static_cast<T>(inv_std[j] * (db[i] - mdy - yb[i] * mdyy));
      }
  }
}

}  // namespace detail

// Zero-mean, unit-variance over the last axis (no affine part).
template <class T>
Var<T> layer_norm(Var<T> x, T eps = T(1e-5)) {
  const auto& xv = x.value();
  require(xv.rank() >= 1, ErrorKind::shape, "layer_norm on rank-0 tensor");
  const std::size_t d = xv.shape().back();
  detail::GroupLayout l{xv.size() / d, d, d, 0, [d](std::size_t j) { return j * d; }};
  Tensor<T> y(xv.shape());
  auto inv = std::make_shared<std::vector<T>>();
  detail::normalize_groups(xv, y, *inv, l, eps);
  return x.graph->record("layer_norm", std::move(y), {x}, [x = x.id, l, inv](Graph<T>& g, std::uint32_t self) {
    detail::normalize_groups_backward(g.value(self), g.grad_of(self), g.grad_acc(x), *inv, l);
  });
}

// x: [B, L, C]; statistics over (L, C / groups) per (batch, group).
template <class T>
Var<T> group_norm(Var<T> x, std::size_t groups, T eps = T(1e-5)) {
  const auto& xv = x.value();
  if (xv.rank() != 3 || groups == 0 || xv.dim(2) % groups != 0)
    fail(ErrorKind::shape, "node " + std::to_string(x.graph->size()) + " group_norm: shape " +
                               to_string(xv.shape()) + " with " + std::to_string(groups) + " groups");
  const std::size_t len = xv.dim(1), c = xv.dim(2), width = c / groups;
  detail::GroupLayout l{xv.dim(0) * groups, len * width, width, c,
                        [len, c, groups, width](std::size_t j) { return (j / groups) * len * c + (j % groups) * width; }};
  Tensor<T> y(xv.shape());
  auto inv = std::make_shared<std::vector<T>>();
  detail::normalize_groups(xv, y, *inv, l, eps);
  return x.graph->record("group_norm", std::move(y), {x}, [x = x.id, l, inv](Graph<T>& g, std::uint32_t self) {
    detail::normalize_groups_backward(g.value(self), g.grad_of(self), g.grad_acc(x), *inv, l);
  });
}

// Softmax over the last axis.
template <class T>
Var<T> softmax(Var<T> x) {
  const auto& xv = x.value();
  require(xv.rank() >= 1, ErrorKind::shape, "softmax on rank-0 tensor");
  const std::size_t d = xv.shape().back(), rows = xv.size() / d;
  Tensor<T> y(xv.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const T* in = xv.data() + r * d;
    T* out = y.data() + r * d;
    T mx = in[0];
    for (std::size_t i = 1; i < d; ++i) mx = std::max(mx, in[i]);
    T sum{};
    for (std::size_t i = 0; i < d; ++i) sum += out[i] = std::exp(in[i] - mx);
    for (std::size_t i = 0; i < d; ++i) out[i] /= sum;
  }
  return x.graph->record("softmax", std::move(y), {x}, [x = x.id, d, rows](Graph<T>& g, std::uint32_t self) {
    const auto& y = g.value(self);
    const auto& dy = g.grad_of(self);
    auto& dx = g.grad_acc(x);
    for (std::size_t r = 0; r < rows; ++r) {
      T dot{};
      for (std::size_t i = 0; i < d; ++i) dot += dy[r * d + i] * y[r * d + i];
      for (std::size_t i = 0; i < d; ++i) dx[r * d + i] += y[r * d + i] * (dy[r * d + i] - dot);
    }
  });
}

// ---------------------------------------------------------------- reductions

template <class T>
Var<T> sum_all(Var<T> x) {
  T s{};
  for (T v : x.value().values()) s += v;
  return x.graph->record("sum", Tensor<T>::scalar(s), {x}, [x = x.id](Graph<T>& g, std::uint32_t self) {
    const T d = g.grad_of(self)[0];
    for (auto& v : g.grad_acc(x).values()) v += d;
  });
}

template <class T>
Var<T> mean_all(Var<T> x) {
  const std::size_t n = x.value().size();
  require(n > 0, ErrorKind::shape, "mean of empty tensor");
  T s{};
  for (T v : x.value().values()) s += v;
  return x.graph->record("mean", Tensor<T>::scalar(s / static_cast<T>(n)), {x},
                         [x = x.id, n](Graph<T>& g, std::uint32_t self) {
    const T d = g.grad_of(self)[0] / static_cast<T>(n);
    for (auto& v : g.grad_acc(x).values()) v += d;
  });
}

// Mean over one axis; the axis is removed from the shape.
template <class T>
Var<T> mean(Var<T> x, std::size_t axis) {
  const auto& xv = x.value();
  require(axis < xv.rank(), ErrorKind::shape, "mean axis out of range for " + to_string(xv.shape()));
  const auto sp = detail::split_axis(xv.shape(), axis);
  require(sp.axis > 0, ErrorKind::shape, "mean over empty axis");
  Shape os = xv.shape();
  os.erase(os.begin() + static_cast<std::ptrdiff_t>(axis));
  Tensor<T> out(os);
  const T inv = T(1) / static_cast<T>(sp.axis);
  for (std::size_t o = 0; o < sp.outer; ++o)
    for (std::size_t a = 0; a < sp.axis; ++a) {
      const T* src = xv.data() + (o * sp.axis + a) * sp.inner;
      T* dst = out.data() + o * sp.inner;
      for (std::size_t i = 0; i < sp.inner; ++i) dst[i] += src[i];
    }
  for (auto& v : out.values()) v *= inv;
  return x.graph->record("mean_axis", std::move(out), {x}, [x = x.id, sp, inv](Graph<T>& g, std::uint32_t self) {
    const auto& dy = g.grad_of(self);
    auto& dx = g.grad_acc(x);
    for (std::size_t o = 0; o < sp.outer; ++o)
      for (std::size_t a = 0; a < sp.axis; ++a) {
        const T* src = dy.data() + o * sp.inner;
        T* dst = dx.data() + (o * sp.axis + a) * sp.inner;
        for (std::size_t i = 0; i < sp.inner; ++i) dst[i] += src[i] * inv;
      }
  });
}

// ---------------------------------------------------------------- layout

template <class T>
Var<T> reshape(Var<T> x, Shape shape) {
  Tensor<T> out = x.value().reshaped(std::move(shape));
  return x.graph->record("reshape", std::move(out), {x}, [x = x.id](Graph<T>& g, std::uint32_t self) {
    const auto& dy = g.grad_of(self);
    auto& dx = g.grad_acc(x);
    for (std::size_t i = 0; i < dy.size(); ++i) dx[i] += dy[i];
  });
}

template <class T>
Var<T> permute(Var<T> x, std::vector<std::size_t> axes) {
  const auto& xv = x.value();
  const std::size_t r = xv.rank();
  require(axes.size() == r, ErrorKind::shape, "permute axes do not match rank of " + to_string(xv.shape()));
  std::vector<bool> seen(r, false);
  for (auto a : axes) {
    require(a < r && !seen[a], ErrorKind::shape, "permute axes are not a permutation");
    seen[a] = true;
  }
  Shape os(r);
  for (std::size_t i = 0; i < r; ++i) os[i] = xv.dim(axes[i]);
  std::vector<std::size_t> in_stride(r, 1);
  for (std::size_t i = r; i-- > 1;) in_stride[i - 1] = in_stride[i] * xv.dim(i);
  auto src_index = std::make_shared<std::vector<std::uint32_t>>(xv.size());
  std::vector<std::size_t> counter(r, 0);
  std::size_t off = 0;
  for (std::size_t i = 0; i < xv.size(); ++i) {
    (*src_index)[i] = static_cast<std::uint32_t>(off);
    for (std::size_t d = r; d-- > 0;) {
      ++counter[d];
      off += in_stride[axes[d]];
      if (counter[d] < os[d]) break;
      off -= in_stride[axes[d]] * counter[d];
      counter[d] = 0;
    }
  }
  Tensor<T> out(os);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[(*src_index)[i]];
  return x.graph->record("permute", std::move(out), {x}, [x = x.id, src_index](Graph<T>& g, std::uint32_t self) {
    const auto& dy = g.grad_of(self);
    auto& dx = g.grad_acc(x);
    for (std::size_t i = 0; i < dy.size(); ++i) dx[(*src_index)[i]] += dy[i];
  });
}

// Selects entries along `axis` (repeats allowed; gradients of repeats add up).
template <class T>
Var<T> gather(Var<T> x, std::size_t axis, std::vector<std::size_t> indices) {
  const auto& xv = x.value();
  require(axis < xv.rank(), ErrorKind::shape, "gather axis out of range for " + to_string(xv.shape()));
  const auto sp = detail::split_axis(xv.shape(), axis);
  for (auto i : indices)
    require(i < sp.axis, ErrorKind::shape, "gather index " + std::to_string(i) + " out of range");
  Shape os = xv.shape();
  os[axis] = indices.size();
  Tensor<T> out(os);
  const std::size_t k = indices.size();
  for (std::size_t o = 0; o < sp.outer; ++o)
    for (std::size_t j = 0; j < k; ++j)
      std::copy_n(xv.data() + (o * sp.axis + indices[j]) * sp.inner, sp.inner,
                  out.data() + (o * k + j) * sp.inner);
  auto idx = std::make_shared<std::vector<std::size_t>>(std::move(indices));
  return x.graph->record("gather", std::move(out), {x}, [x = x.id, sp, idx](Graph<T>& g, std::uint32_t self) {
    const auto& dy = g.grad_of(self);
    auto& dx = g.grad_acc(x);
    const std::size_t k = idx->size();
    for (std::size_t o = 0; o < sp.outer; ++o)
      for (std::size_t j = 0; j < k; ++j) {
        const T* s = dy.data() + (o * k + j) * sp.inner;
        T* d = dx.data() + (o * sp.axis + (*idx)[j]) * sp.inner;
        for (std::size_t i = 0; i < sp.inner; ++i) d[i] += s[i];
      }
  });
}

template <class T>
Var<T> slice(Var<T> x, std::size_t axis, std::size_t begin, std::size_t end) {
  require(begin <= end, ErrorKind::shape, "slice with begin > end");
  std::vector<std::size_t> idx(end - begin);
  std::iota(idx.begin(), idx.end(), begin);
  return gather(x, axis, std::move(idx));
}

// Per-row selection: x [N, S, D], rows[n * K + j] picks token rows[n*K+j] of row n -> [N, K, D].
template <class T>
Var<T> gather_rows(Var<T> x, std::vector<std::size_t> rows, std::size_t k) {
  const auto& xv = x.value();
  require(xv.rank() == 3 && rows.size() == xv.dim(0) * k, ErrorKind::shape,
          "gather_rows: index table does not match " + to_string(xv.shape()));
  const std::size_t n = xv.dim(0), s = xv.dim(1), d = xv.dim(2);
  for (auto r : rows) require(r < s, ErrorKind::shape, "gather_rows index out of range");
  Tensor<T> out(Shape{n, k, d});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < k; ++j)
      std::copy_n(xv.data() + (i * s + rows[i * k + j]) * d, d, out.data() + (i * k + j) * d);
  auto idx = std::make_shared<std::vector<std::size_t>>(std::move(rows));
  return x.graph->record("gather_rows", std::move(out), {x}, [x = x.id, idx, n, s, d, k](Graph<T>& g, std::uint32_t self) {
    const auto& dy = g.grad_of(self);
    auto& dx = g.grad_acc(x);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < k; ++j) {
        const T* src = dy.data() + (i * k + j) * d;
        T* dst = dx.data() + (i * s + (*idx)[i * k + j]) * d;
        for (std::size_t c = 0; c < d; ++c) dst[c] += src[c];
      }
  });
}

template <class T>
Var<T> concat(const std::vector<Var<T>>& parts, std::size_t axis) {
  require(!parts.empty(), ErrorKind::shape, "concat of nothing");
  Graph<T>& g = *parts.front().graph;
  const Shape& ref = parts.front().shape();
  require(axis < ref.size(), ErrorKind::shape, "concat axis out of range");
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    bool ok = s.size() == ref.size();
    for (std::size_t i = 0; ok && i < s.size(); ++i) ok = i == axis || s[i] == ref[i];
    if (!ok) fail(ErrorKind::shape, "node " + std::to_string(g.size()) + " " + detail::shape_msg("concat", ref, s));
    widths.push_back(s[axis]);
    total += s[axis];
  }
  const auto sp = detail::split_axis(ref, axis);
  Shape os = ref;
  os[axis] = total;
  Tensor<T> out(os);
  std::size_t at = 0;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    const auto& v = parts[p].value();
    const std::size_t chunk = widths[p] * sp.inner;
    for (std::size_t o = 0; o < sp.outer; ++o)
      std::copy_n(v.data() + o * chunk, chunk, out.data() + (o * total + at) * sp.inner);
    at += widths[p];
  }
  std::vector<std::uint32_t> ids;
  for (const auto& p : parts) ids.push_back(p.id);
  return g.record("concat", std::move(out), std::span<const Var<T>>(parts), [ids, widths, sp, total](Graph<T>& g, std::uint32_t self) {
    const auto& dy = g.grad_of(self);
    std::size_t at = 0;
    for (std::size_t p = 0; p < ids.size(); ++p) {
      const std::size_t chunk = widths[p] * sp.inner;
      if (g.requires_grad(ids[p])) {
        auto& dx = g.grad_acc(ids[p]);
        for (std::size_t o = 0; o < sp.outer; ++o) {
          const T* s = dy.data() + (o * total + at) * sp.inner;
          T* d = dx.data() + o * chunk;
          for (std::size_t i = 0; i < chunk; ++i) d[i] += s[i];
        }
      }
      at += widths[p];
    }
  });
}

// ---------------------------------------------------------------- losses

template <class T>
Var<T> mse(Var<T> pred, Var<T> target) {
  if (pred.shape() != target.shape())
    fail(ErrorKind::shape, detail::shape_msg("mse", pred.shape(), target.shape()));
  auto d = sub(pred, target);
  return mean_all(mul(d, d));
}

}  // namespace geodp::ad
