#pragma once

// Feature selection adapter: rows are reweighted by their clamped cosine
// similarity to a learnable task embedding, mixed by a C x C matrix, mapped
// back to the feature layout through a 1x1 convolution and added to the input.

#include <cmath>
#include <span>
#include <string>

#include "samamba/blocks.hpp"

namespace samamba {

/// max(0, a.b / (|a||b|)); 0 when either vector has zero norm.
template <typename T>
T cosine_sim(std::span<const T> a, std::span<const T> b) {
  if (a.size() != b.size()) throw ShapeError("cosine_sim: vector lengths differ");
  T dot = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == T(0) || nb == T(0)) return T(0);
  return std::max(T(0), dot / (std::sqrt(na) * std::sqrt(nb)));
}

/// y[r,:] = x[r,:] * cosine_sim(x[r,:], v[r,:]) over the last axis.
/// `v` is either one vector [K] shared by all rows or has the shape of `x`.
template <typename T>
Tensor<T> cosine_gate(const Tensor<T>& x, const Tensor<T>& v) {
  const std::size_t K = x.shape().back();
  const bool shared = v.rank() == 1;
  if ((shared && v.dim(0) != K) || (!shared && v.shape() != x.shape()))
    throw ShapeError("cosine_gate: x " + to_string(x.shape()) + " vs embedding " + to_string(v.shape()));
  const std::size_t R = x.size() / K;
  // Per-row (dot, |x|, |v|, sim) for the backward pass.
  auto stats = std::make_shared<std::vector<T>>(R * 4);
  std::vector<T> y(x.size());
  const T *px = x.ptr(), *pv = v.ptr();
  for (std::size_t r = 0; r < R; ++r) {
    const T* xr = px + r * K;
    const T* vr = shared ? pv : pv + r * K;
    T dot = 0, na = 0, nb = 0;
    for (std::size_t k = 0; k < K; ++k) {
      dot += xr[k] * vr[k];
      na += xr[k] * xr[k];
      nb += vr[k] * vr[k];
    }
    na = std::sqrt(na);
    nb = std::sqrt(nb);
    const T s = (na == T(0) || nb == T(0)) ? T(0) : std::max(T(0), dot / (na * nb));
    T* st = stats->data() + r * 4;
    st[0] = dot, st[1] = na, st[2] = nb, st[3] = s;
    for (std::size_t k = 0; k < K; ++k) y[r * K + k] = xr[k] * s;
  }
  auto xi = x.impl(), vi = v.impl();
  return detail::make_result<T>(OpKind::kCosineGate, x.shape(), std::move(y), {&x, &v},
                                [xi, vi, stats, R, K, shared](const std::vector<T>& g) {
    T* gx = detail::grad_target(xi);
    T* gv = detail::grad_target(vi);
    const T *px = xi->data.data(), *pv = vi->data.data();
    for (std::size_t r = 0; r < R; ++r) {
      const T* xr = px + r * K;
      const T* vr = shared ? pv : pv + r * K;
      const T* gr = g.data() + r * K;
      const T* st = stats->data() + r * 4;
      const T na = st[1], nb = st[2], s = st[3];
      T gs = 0;  // d loss / d sim
      for (std::size_t k = 0; k < K; ++k) gs += gr[k] * xr[k];
      if (gx)
        for (std::size_t k = 0; k < K; ++k) gx[r * K + k] += gr[k] * s;
      if (!(s > T(0))) continue;  // clamped or degenerate: sim has no gradient
      const T inv = T(1) / (na * nb);
      if (gx)
        for (std::size_t k = 0; k < K; ++k) gx[r * K + k] += gs * (vr[k] * inv - s * xr[k] / (na * na));
      if (gv) {
        T* gvr = shared ? gv : gv + r * K;
        for (std::size_t k = 0; k < K; ++k) gvr[k] += gs * (xr[k] * inv - s * vr[k] / (nb * nb));
      }
    }
  });
}

enum class FsSelection {
  kToken,    // each spatial token (a C-vector) is compared with xi
  kChannel,  // each channel map (an HW-vector) is compared with xi_c broadcast
};

template <typename T>
struct FsAdapter {
  Tensor<T> xi;  // [C]
  Tensor<T> p;   // [C, C]
  Conv<T> conv;  // 1x1, C -> C
  FsSelection selection = FsSelection::kToken;

  FsAdapter() = default;
  FsAdapter(std::size_t channels, Rng& rng, FsSelection sel = FsSelection::kToken)
      : p(lecun_uniform<T>(rng, {channels, channels}, channels)), conv(channels, channels, 1, rng),
        selection(sel) {
    std::vector<T> v(channels);
    for (auto& e : v) e = normal<T>(rng);
    xi = Tensor<T>({channels}, std::move(v), true);
  }

  std::size_t channels() const { return xi.dim(0); }

  /// Reweighted tokens as a [B, HW, C] sequence (before P).
  Tensor<T> select(const Tensor<T>& x) const {
    const std::size_t B = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
    if (C != channels()) throw ShapeError("FS-Adapter expects " + std::to_string(channels()) + " channels, got " + to_string(x.shape()));
    if (selection == FsSelection::kToken) {
      return cosine_gate(permute(reshape(x, {B, C, HW}), {0, 2, 1}), xi);
    }
    const Tensor<T> maps = reshape(x, {B, C, HW});
    const Tensor<T> target = mul(reshape(xi, {C, 1}), Tensor<T>::full({1, HW}, T(1)));
    const Tensor<T> tiled = add(target, Tensor<T>::zeros({B, C, HW}));
    return permute(cosine_gate(maps, tiled), {0, 2, 1});
  }

  Tensor<T> operator()(const Tensor<T>& x) const {
    const std::size_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    const Tensor<T> mixed = matmul(select(x), p);  // [B, HW, C]
    const Tensor<T> spatial = reshape(permute(mixed, {0, 2, 1}), {B, C, H, W});
    return add(conv(spatial), x);
  }

  void collect(ParamList<T>& out, const std::string& prefix) const {
    out.push_back({prefix + ".xi", xi});
    out.push_back({prefix + ".p", p});
    conv.collect(out, prefix + ".conv");
  }
};

}  // namespace samamba
