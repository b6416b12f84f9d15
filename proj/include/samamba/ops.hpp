#pragma once

// Differentiable elementwise, reduction, shape and matmul operations.

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "samamba/gemm.hpp"
#include "samamba/tensor.hpp"

namespace samamba {

namespace detail {

/// Per-output-dimension element strides of `in` when broadcast to `out`.
inline std::vector<std::size_t> broadcast_strides(const Shape& in, const Shape& out) {
  std::vector<std::size_t> s(out.size(), 0);
  std::size_t stride = 1;
  for (std::size_t k = 0; k < in.size(); ++k) {
    const std::size_t d = in.size() - 1 - k;
    const std::size_t o = out.size() - 1 - k;
    s[o] = in[d] == 1 ? 0 : stride;
    stride *= in[d];
  }
  return s;
}

/// Calls f(out_index, a_index, b_index) for every element of `out`.
template <typename F>
void for_each_broadcast(const Shape& out, const std::vector<std::size_t>& sa,
                        const std::vector<std::size_t>& sb, F&& f) {
  const std::size_t r = out.size();
  if (r == 0) {
    f(0, 0, 0);
    return;
  }
  const std::size_t inner = out[r - 1];
  const std::size_t ia = sa[r - 1], ib = sb[r - 1];
  const std::size_t total = numel(out);
  if (total == 0) return;
  std::vector<std::size_t> idx(r, 0);
  std::size_t oa = 0, ob = 0;
  for (std::size_t base = 0; base < total; base += inner) {
    for (std::size_t j = 0; j < inner; ++j) f(base + j, oa + j * ia, ob + j * ib);
    for (std::size_t d = r - 1; d-- > 0;) {
      ++idx[d];
      oa += sa[d];
      ob += sb[d];
      if (idx[d] < out[d]) break;
      oa -= sa[d] * out[d];
      ob -= sb[d] * out[d];
      idx[d] = 0;
    }
  }
}

enum class Binary { kAdd, kSub, kMul, kDiv };

template <typename T>
Tensor<T> binary(Binary kind, const Tensor<T>& a, const Tensor<T>& b) {
  static constexpr OpKind kinds[] = {OpKind::kAdd, OpKind::kSub, OpKind::kMul, OpKind::kDiv};
  const OpKind ok = kinds[static_cast<int>(kind)];
  const Shape out = broadcast_shapes(a.shape(), b.shape());
  const auto sa = broadcast_strides(a.shape(), out);
  const auto sb = broadcast_strides(b.shape(), out);
  std::vector<T> y(numel(out));
  const T* pa = a.ptr();
  const T* pb = b.ptr();
  const bool same = a.shape() == b.shape();
  auto apply = [&](auto op) {
    if (same) {
      for (std::size_t i = 0; i < y.size(); ++i) y[i] = op(pa[i], pb[i]);
    } else {
      for_each_broadcast(out, sa, sb,
                         [&](std::size_t i, std::size_t ja, std::size_t jb) { y[i] = op(pa[ja], pb[jb]); });
    }
  };
  switch (kind) {
    case Binary::kAdd: apply([](T u, T v) { return u + v; }); break;
    case Binary::kSub: apply([](T u, T v) { return u - v; }); break;
    case Binary::kMul: apply([](T u, T v) { return u * v; }); break;
    case Binary::kDiv: apply([](T u, T v) { return u / v; }); break;
  }
  auto ai = a.impl();
  auto bi = b.impl();
  return make_result<T>(ok, out, std::move(y), {&a, &b},
                        [kind, out, sa, sb, ai, bi](const std::vector<T>& g) {
    T* ga = grad_target(ai);
    T* gb = grad_target(bi);
    const T* pa = ai->data.data();
    const T* pb = bi->data.data();
    for_each_broadcast(out, sa, sb, [&](std::size_t i, std::size_t ja, std::size_t jb) {
      const T gi = g[i];
      switch (kind) {
        case Binary::kAdd:
          if (ga) ga[ja] += gi;
          if (gb) gb[jb] += gi;
          break;
        case Binary::kSub:
          if (ga) ga[ja] += gi;
          if (gb) gb[jb] -= gi;
          break;
        case Binary::kMul:
          if (ga) ga[ja] += gi * pb[jb];
          if (gb) gb[jb] += gi * pa[ja];
          break;
        case Binary::kDiv:
          if (ga) ga[ja] += gi / pb[jb];
          if (gb) gb[jb] -= gi * pa[ja] / (pb[jb] * pb[jb]);
          break;
      }
    });
  });
}

}  // namespace detail

// ---------------------------------------------------------------- elementwise

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) { return detail::binary(detail::Binary::kAdd, a, b); }
template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) { return detail::binary(detail::Binary::kSub, a, b); }
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) { return detail::binary(detail::Binary::kMul, a, b); }
template <typename T>
Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b) { return detail::binary(detail::Binary::kDiv, a, b); }

template <typename T>
Tensor<T> operator+(const Tensor<T>& a, const Tensor<T>& b) { return add(a, b); }
template <typename T>
Tensor<T> operator-(const Tensor<T>& a, const Tensor<T>& b) { return sub(a, b); }
template <typename T>
Tensor<T> operator*(const Tensor<T>& a, const Tensor<T>& b) { return mul(a, b); }
template <typename T>
Tensor<T> operator/(const Tensor<T>& a, const Tensor<T>& b) { return div(a, b); }

namespace detail {

/// Shared implementation for pointwise maps whose derivative needs x and y.
template <typename T, typename F, typename DF>
Tensor<T> pointwise(OpKind kind, const Tensor<T>& x, F f, DF df) {
  std::vector<T> y(x.size());
  const T* px = x.ptr();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = f(px[i]);
  auto xi = x.impl();
  return make_result<T>(kind, x.shape(), std::move(y), {&x},
                        [xi, df](const std::vector<T>& g, const std::vector<T>& out) {
    T* gx = grad_target(xi);
    if (!gx) return;
    const T* px = xi->data.data();
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * df(px[i], out[i]);
  });
}

template <typename T>
T stable_sigmoid(T x) {
  if (x >= 0) {
    const T e = std::exp(-x);
    return T(1) / (T(1) + e);
  }
  const T e = std::exp(x);
  return e / (T(1) + e);
}

template <typename T>
T stable_softplus(T x) {
  return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

}  // namespace detail

template <typename T>
Tensor<T> neg(const Tensor<T>& x) {
  return detail::pointwise(OpKind::kNeg, x, [](T v) { return -v; }, [](T, T) { return T(-1); });
}
template <typename T>
Tensor<T> operator-(const Tensor<T>& x) { return neg(x); }

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& x, T c) {
  return detail::pointwise(OpKind::kAddScalar, x, [c](T v) { return v + c; }, [](T, T) { return T(1); });
}
template <typename T>
Tensor<T> mul_scalar(const Tensor<T>& x, T c) {
  return detail::pointwise(OpKind::kMulScalar, x, [c](T v) { return v * c; }, [c](T, T) { return c; });
}
template <typename T>
Tensor<T> operator*(const Tensor<T>& x, T c) { return mul_scalar(x, c); }
template <typename T>
Tensor<T> operator*(T c, const Tensor<T>& x) { return mul_scalar(x, c); }
template <typename T>
Tensor<T> operator+(const Tensor<T>& x, T c) { return add_scalar(x, c); }
template <typename T>
Tensor<T> operator+(T c, const Tensor<T>& x) { return add_scalar(x, c); }
template <typename T>
Tensor<T> operator-(T c, const Tensor<T>& x) { return add_scalar(neg(x), c); }

/// x^p for scalar p; x must be positive unless p is a non-negative integer.
template <typename T>
Tensor<T> pow_scalar(const Tensor<T>& x, T p) {
  return detail::pointwise(
      OpKind::kPowScalar, x, [p](T v) { return std::pow(v, p); },
      [p](T v, T) { return p == T(0) ? T(0) : p * std::pow(v, p - T(1)); });
}

template <typename T>
Tensor<T> exp(const Tensor<T>& x) {
  return detail::pointwise(OpKind::kExp, x, [](T v) { return std::exp(v); }, [](T, T y) { return y; });
}
template <typename T>
Tensor<T> log(const Tensor<T>& x) {
  return detail::pointwise(OpKind::kLog, x, [](T v) { return std::log(v); }, [](T v, T) { return T(1) / v; });
}
template <typename T>
Tensor<T> sqrt(const Tensor<T>& x) {
  return detail::pointwise(OpKind::kSqrt, x, [](T v) { return std::sqrt(v); },
                           [](T, T y) { return T(0.5) / y; });
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  return detail::pointwise(OpKind::kSigmoid, x, [](T v) { return detail::stable_sigmoid(v); },
                           [](T, T y) { return y * (T(1) - y); });
}
template <typename T>
Tensor<T> silu(const Tensor<T>& x) {
  return detail::pointwise(
      OpKind::kSilu, x, [](T v) { return v * detail::stable_sigmoid(v); },
      [](T v, T) {
        const T s = detail::stable_sigmoid(v);
        return s * (T(1) + v * (T(1) - s));
      });
}
template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  return detail::pointwise(OpKind::kRelu, x, [](T v) { return v > 0 ? v : T(0); },
                           [](T v, T) { return v > 0 ? T(1) : T(0); });
}
template <typename T>
Tensor<T> softplus(const Tensor<T>& x) {
  return detail::pointwise(OpKind::kSoftplus, x, [](T v) { return detail::stable_softplus(v); },
                           [](T v, T) { return detail::stable_sigmoid(v); });
}
/// log(sigmoid(x)) = -softplus(-x), stable for large |x|.
template <typename T>
Tensor<T> log_sigmoid(const Tensor<T>& x) {
  return detail::pointwise(OpKind::kLogSigmoid, x, [](T v) { return -detail::stable_softplus(-v); },
                           [](T v, T) { return detail::stable_sigmoid(-v); });
}

/// Softmax over the last axis.
template <typename T>
Tensor<T> softmax(const Tensor<T>& x) {
  const std::size_t n = x.shape().back();
  const std::size_t rows = x.size() / n;
  std::vector<T> y(x.size());
  const T* px = x.ptr();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xr = px + r * n;
    T* yr = y.data() + r * n;
    const T m = *std::max_element(xr, xr + n);
    T s = 0;
    for (std::size_t j = 0; j < n; ++j) s += (yr[j] = std::exp(xr[j] - m));
    for (std::size_t j = 0; j < n; ++j) yr[j] /= s;
  }
  auto xi = x.impl();
  return detail::make_result<T>(OpKind::kSoftmax, x.shape(), std::move(y), {&x},
                                [xi, n, rows](const std::vector<T>& g, const std::vector<T>& ys) {
    T* gx = detail::grad_target(xi);
    if (!gx) return;
    for (std::size_t r = 0; r < rows; ++r) {
      const T* yr = ys.data() + r * n;
      const T* gr = g.data() + r * n;
      T dot = 0;
      for (std::size_t j = 0; j < n; ++j) dot += yr[j] * gr[j];
      for (std::size_t j = 0; j < n; ++j) gx[r * n + j] += yr[j] * (gr[j] - dot);
    }
  });
}

// ----------------------------------------------------------------- reductions

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  T s = 0;
  for (const T v : x.data()) s += v;
  auto xi = x.impl();
  return detail::make_result<T>(OpKind::kSum, Shape{1}, std::vector<T>{s}, {&x},
                                [xi](const std::vector<T>& g) {
    T* gx = detail::grad_target(xi);
    if (!gx) return;
    for (std::size_t i = 0; i < xi->data.size(); ++i) gx[i] += g[0];
  });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
  return mul_scalar(sum(x), T(1) / static_cast<T>(x.size()));
}

namespace detail {
inline Shape reduced_shape(const Shape& s, const std::vector<std::size_t>& axes) {
  Shape out = s;
  for (const auto a : axes) {
    if (a >= s.size()) throw ShapeError("reduction axis out of range for " + to_string(s));
    out[a] = 1;
  }
  return out;
}
}  // namespace detail

/// Sum over `axes`, keeping them as extent-1 dimensions.
template <typename T>
Tensor<T> sum_axes(const Tensor<T>& x, const std::vector<std::size_t>& axes) {
  const Shape out = detail::reduced_shape(x.shape(), axes);
  const auto sx = detail::broadcast_strides(x.shape(), x.shape());
  const auto so = detail::broadcast_strides(out, x.shape());
  std::vector<T> y(numel(out), T(0));
  const T* px = x.ptr();
  detail::for_each_broadcast(x.shape(), sx, so,
                             [&](std::size_t i, std::size_t, std::size_t o) { y[o] += px[i]; });
  auto xi = x.impl();
  return detail::make_result<T>(OpKind::kSumAxes, out, std::move(y), {&x},
                                [xi, sx, so](const std::vector<T>& g) {
    T* gx = detail::grad_target(xi);
    if (!gx) return;
    detail::for_each_broadcast(xi->shape, sx, so,
                               [&](std::size_t i, std::size_t, std::size_t o) { gx[i] += g[o]; });
  });
}

template <typename T>
Tensor<T> mean_axes(const Tensor<T>& x, const std::vector<std::size_t>& axes) {
  std::size_t count = 1;
  for (const auto a : axes) count *= x.dim(a);
  return mul_scalar(sum_axes(x, axes), T(1) / static_cast<T>(count));
}

/// Max over `axes` (keepdim); gradient routes to the first maximal element.
template <typename T>
Tensor<T> max_axes(const Tensor<T>& x, const std::vector<std::size_t>& axes) {
  const Shape out = detail::reduced_shape(x.shape(), axes);
  const auto sx = detail::broadcast_strides(x.shape(), x.shape());
  const auto so = detail::broadcast_strides(out, x.shape());
  std::vector<T> y(numel(out), -std::numeric_limits<T>::infinity());
  auto arg = std::make_shared<std::vector<std::size_t>>(y.size(), 0);
  const T* px = x.ptr();
  detail::for_each_broadcast(x.shape(), sx, so, [&](std::size_t i, std::size_t, std::size_t o) {
    if (px[i] > y[o]) {
      y[o] = px[i];
      (*arg)[o] = i;
    }
  });
  auto xi = x.impl();
  return detail::make_result<T>(OpKind::kMaxAxes, out, std::move(y), {&x},
                                [xi, arg](const std::vector<T>& g) {
    T* gx = detail::grad_target(xi);
    if (!gx) return;
    for (std::size_t o = 0; o < g.size(); ++o) gx[(*arg)[o]] += g[o];
  });
}

// ---------------------------------------------------------------------- shape

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  if (numel(shape) != x.size())
    throw ShapeError("cannot reshape " + to_string(x.shape()) + " to " + to_string(shape));
  auto xi = x.impl();
  return detail::make_result<T>(OpKind::kReshape, std::move(shape),
                                std::vector<T>(x.data().begin(), x.data().end()), {&x},
                                [xi](const std::vector<T>& g) {
    T* gx = detail::grad_target(xi);
    if (!gx) return;
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
  });
}

namespace detail {
/// Maps each output linear index to the source linear index for a permutation.
inline std::vector<std::size_t> permute_index(const Shape& in, const std::vector<std::size_t>& perm,
                                              Shape& out) {
  const std::size_t r = in.size();
  if (perm.size() != r) throw ShapeError("permutation rank mismatch for " + to_string(in));
  std::vector<std::size_t> in_strides(r, 1);
  for (std::size_t d = r; d-- > 1;) in_strides[d - 1] = in_strides[d] * in[d];
  out.assign(r, 0);
  std::vector<std::size_t> src_strides(r);
  for (std::size_t d = 0; d < r; ++d) {
    out[d] = in.at(perm[d]);
    src_strides[d] = in_strides[perm[d]];
  }
  std::vector<std::size_t> zero(r, 0);
  std::vector<std::size_t> map(numel(in));
  for_each_broadcast(out, src_strides, zero,
                     [&](std::size_t i, std::size_t s, std::size_t) { map[i] = s; });
  return map;
}
}  // namespace detail

template <typename T>
Tensor<T> permute(const Tensor<T>& x, const std::vector<std::size_t>& perm) {
  Shape out;
  auto map = std::make_shared<std::vector<std::size_t>>(detail::permute_index(x.shape(), perm, out));
  std::vector<T> y(x.size());
  const T* px = x.ptr();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = px[(*map)[i]];
  auto xi = x.impl();
  return detail::make_result<T>(OpKind::kPermute, out, std::move(y), {&x},
                                [xi, map](const std::vector<T>& g) {
    T* gx = detail::grad_target(xi);
    if (!gx) return;
    for (std::size_t i = 0; i < g.size(); ++i) gx[(*map)[i]] += g[i];
  });
}

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& xs, std::size_t axis) {
  if (xs.empty()) throw ShapeError("concat of empty list");
  Shape out = xs[0].shape();
  if (axis >= out.size()) throw ShapeError("concat axis out of range");
  out[axis] = 0;
  for (const auto& x : xs) {
    Shape s = x.shape();
    if (s.size() != out.size()) throw ShapeError("concat rank mismatch: " + to_string(s));
    for (std::size_t d = 0; d < s.size(); ++d)
      if (d != axis && s[d] != xs[0].dim(d))
        throw ShapeError("concat extent mismatch: " + to_string(s) + " vs " + to_string(xs[0].shape()));
    out[axis] += s[axis];
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < axis; ++d) outer *= out[d];
  for (std::size_t d = axis + 1; d < out.size(); ++d) inner *= out[d];
  std::vector<T> y(numel(out));
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (const auto& x : xs) {
    offsets.push_back(off);
    const std::size_t w = x.dim(axis) * inner;
    const T* px = x.ptr();
    for (std::size_t o = 0; o < outer; ++o)
      std::copy(px + o * w, px + (o + 1) * w, y.begin() + o * out[axis] * inner + off);
    off += w;
  }
  std::vector<std::shared_ptr<detail::TensorImpl<T>>> impls;
  for (const auto& x : xs) impls.push_back(x.impl());
  const std::size_t row = out[axis] * inner;
  return detail::make_result_n<T>(OpKind::kConcat, out, std::move(y), xs,
                                  [impls, offsets, outer, row](const std::vector<T>& g) {
    for (std::size_t n = 0; n < impls.size(); ++n) {
      T* gx = detail::grad_target(impls[n]);
      if (!gx) continue;
      const std::size_t w = impls[n]->shape.size() ? impls[n]->data.size() / outer : 0;
      for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t j = 0; j < w; ++j) gx[o * w + j] += g[o * row + offsets[n] + j];
    }
  });
}

/// x[..., begin:end, ...] along `axis`.
template <typename T>
Tensor<T> slice(const Tensor<T>& x, std::size_t axis, std::size_t begin, std::size_t end) {
  if (axis >= x.rank() || begin >= end || end > x.dim(axis))
    throw ShapeError("invalid slice [" + std::to_string(begin) + "," + std::to_string(end) +
                     ") on axis " + std::to_string(axis) + " of " + to_string(x.shape()));
  Shape out = x.shape();
  out[axis] = end - begin;
  std::size_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < axis; ++d) outer *= out[d];
  for (std::size_t d = axis + 1; d < out.size(); ++d) inner *= out[d];
  const std::size_t src_row = x.dim(axis) * inner;
  const std::size_t dst_row = out[axis] * inner;
  std::vector<T> y(numel(out));
  const T* px = x.ptr();
  for (std::size_t o = 0; o < outer; ++o)
    std::copy(px + o * src_row + begin * inner, px + o * src_row + end * inner, y.begin() + o * dst_row);
  auto xi = x.impl();
  return detail::make_result<T>(OpKind::kSlice, out, std::move(y), {&x},
                                [xi, outer, src_row, dst_row, begin, inner](const std::vector<T>& g) {
    T* gx = detail::grad_target(xi);
    if (!gx) return;
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t j = 0; j < dst_row; ++j) gx[o * src_row + begin * inner + j] += g[o * dst_row + j];
  });
}

/// Splits `x` into `parts` equal chunks along `axis`.
template <typename T>
std::vector<Tensor<T>> split(const Tensor<T>& x, std::size_t axis, std::size_t parts) {
  if (parts == 0 || x.dim(axis) % parts != 0)
    throw ShapeError("cannot split axis " + std::to_string(axis) + " of " + to_string(x.shape()) +
                     " into " + std::to_string(parts) + " parts");
  const std::size_t w = x.dim(axis) / parts;
  std::vector<Tensor<T>> out;
  for (std::size_t p = 0; p < parts; ++p) out.push_back(slice(x, axis, p * w, (p + 1) * w));
  return out;
}

/// out[..., k, ...] = x[..., index[k], ...] along `axis`.
template <typename T>
Tensor<T> index_select(const Tensor<T>& x, std::size_t axis, const std::vector<std::size_t>& index) {
  Shape out = x.shape();
  out.at(axis) = index.size();
  std::size_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < axis; ++d) outer *= out[d];
  for (std::size_t d = axis + 1; d < out.size(); ++d) inner *= out[d];
  const std::size_t n_in = x.dim(axis);
  for (const auto k : index)
    if (k >= n_in) throw ShapeError("index_select index out of range");
  std::vector<T> y(numel(out));
  const T* px = x.ptr();
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t k = 0; k < index.size(); ++k)
      std::copy(px + (o * n_in + index[k]) * inner, px + (o * n_in + index[k] + 1) * inner,
                y.begin() + (o * index.size() + k) * inner);
  auto xi = x.impl();
  return detail::make_result<T>(OpKind::kIndexSelect, out, std::move(y), {&x},
                                [xi, index, outer, inner, n_in](const std::vector<T>& g) {
    T* gx = detail::grad_target(xi);
    if (!gx) return;
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t k = 0; k < index.size(); ++k)
        for (std::size_t j = 0; j < inner; ++j)
          gx[(o * n_in + index[k]) * inner + j] += g[(o * index.size() + k) * inner + j];
  });
}

/// Reverses `x` along `axis`.
template <typename T>
Tensor<T> flip(const Tensor<T>& x, std::size_t axis) {
  std::vector<std::size_t> index(x.dim(axis));
  for (std::size_t k = 0; k < index.size(); ++k) index[k] = index.size() - 1 - k;
  return index_select(x, axis, index);
}

// --------------------------------------------------------------------- matmul

/// a[..., m, k] x b[k, n] -> [..., m, n]
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() < 2 || b.rank() != 2)
    throw ShapeError("matmul expects a[...,m,k] and b[k,n], got " + to_string(a.shape()) + " and " +
                     to_string(b.shape()));
  const std::size_t k = a.shape().back();
  if (k != b.dim(0))
    throw ShapeError("matmul inner extent mismatch: " + to_string(a.shape()) + " x " + to_string(b.shape()));
  const std::size_t n = b.dim(1);
  const std::size_t m = a.size() / k;
  Shape out = a.shape();
  out.back() = n;
  std::vector<T> y(m * n, T(0));
  detail::gemm_nn(m, n, k, a.ptr(), b.ptr(), y.data());
  detail::count_macs(static_cast<std::uint64_t>(m) * n * k);
  auto ai = a.impl();
  auto bi = b.impl();
  return detail::make_result<T>(OpKind::kMatmul, out, std::move(y), {&a, &b},
                                [ai, bi, m, n, k](const std::vector<T>& g) {
    if (T* ga = detail::grad_target(ai)) detail::gemm_nt(m, k, n, g.data(), bi->data.data(), ga);
    if (T* gb = detail::grad_target(bi)) detail::gemm_tn(k, n, m, ai->data.data(), g.data(), gb);
  });
}

}  // namespace samamba
