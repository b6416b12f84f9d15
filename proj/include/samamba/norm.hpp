#pragma once

// Layer normalization over the last axis and batch normalization over NCHW.

#include <cmath>
#include <memory>

#include "samamba/ops.hpp"

namespace samamba {

inline constexpr double kLayerNormEps = 1e-6;
inline constexpr double kBatchNormEps = 1e-5;
inline constexpr double kBatchNormMomentum = 0.1;

/// (x - mean) / sqrt(var + eps) * gamma + beta over the trailing axis.
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                     T eps = T(kLayerNormEps)) {
  if (!(eps > 0)) throw DomainError("layer_norm eps must be positive");
  const std::size_t n = x.shape().back();
  if (gamma.size() != n || beta.size() != n)
    throw ShapeError("layer_norm affine extent mismatch for " + to_string(x.shape()));
  const std::size_t rows = x.size() / n;
  std::vector<T> y(x.size());
  auto xhat = std::make_shared<std::vector<T>>(x.size());
  auto inv_std = std::make_shared<std::vector<T>>(rows);
  const T* px = x.ptr();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xr = px + r * n;
    T mu = 0;
    for (std::size_t j = 0; j < n; ++j) mu += xr[j];
    mu /= static_cast<T>(n);
    T var = 0;
    for (std::size_t j = 0; j < n; ++j) var += (xr[j] - mu) * (xr[j] - mu);
    var /= static_cast<T>(n);
    const T is = T(1) / std::sqrt(var + eps);
    (*inv_std)[r] = is;
    for (std::size_t j = 0; j < n; ++j) {
      const T h = (xr[j] - mu) * is;
      (*xhat)[r * n + j] = h;
      y[r * n + j] = h * gamma[j] + beta[j];
    }
  }
  auto xi = x.impl(), gi = gamma.impl(), bi = beta.impl();
  return detail::make_result<T>(OpKind::kLayerNorm, x.shape(), std::move(y), {&x, &gamma, &beta},
                                [xi, gi, bi, xhat, inv_std, n, rows](const std::vector<T>& g) {
    T* gx = detail::grad_target(xi);
    T* gg = detail::grad_target(gi);
    T* gb = detail::grad_target(bi);
    const T* gam = gi->data.data();
    for (std::size_t r = 0; r < rows; ++r) {
      const T* gr = g.data() + r * n;
      const T* hr = xhat->data() + r * n;
      if (gg)
        for (std::size_t j = 0; j < n; ++j) gg[j] += gr[j] * hr[j];
      if (gb)
        for (std::size_t j = 0; j < n; ++j) gb[j] += gr[j];
      if (gx) {
        T s1 = 0, s2 = 0;
        for (std::size_t j = 0; j < n; ++j) {
          const T d = gr[j] * gam[j];
          s1 += d;
          s2 += d * hr[j];
        }
        const T inv_n = T(1) / static_cast<T>(n);
        for (std::size_t j = 0; j < n; ++j)
          gx[r * n + j] += (*inv_std)[r] * (gr[j] * gam[j] - inv_n * s1 - hr[j] * inv_n * s2);
      }
    }
  });
}

/// Running statistics of a batch-norm layer.
template <typename T>
struct BatchNormStats {
  Tensor<T> running_mean;
  Tensor<T> running_var;
  T momentum = T(kBatchNormMomentum);
  T eps = T(kBatchNormEps);

  explicit BatchNormStats(std::size_t channels = 0)
      : running_mean(Tensor<T>::zeros({channels})), running_var(Tensor<T>::full({channels}, T(1))) {}
};

/// Per-channel normalization of x[B,C,H,W]. Training mode normalizes with
/// batch statistics and folds them into `stats`; eval mode uses `stats`.
template <typename T>
Tensor<T> batch_norm2d(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                       BatchNormStats<T>& stats, bool training) {
  if (x.rank() != 4) throw ShapeError("batch_norm2d expects NCHW, got " + to_string(x.shape()));
  const std::size_t B = x.dim(0), C = x.dim(1), hw = x.dim(2) * x.dim(3);
  if (gamma.size() != C || beta.size() != C || stats.running_mean.size() != C)
    throw ShapeError("batch_norm2d channel mismatch for " + to_string(x.shape()));
  const std::size_t count = B * hw;
  std::vector<T> mu(C), is(C);
  const T* px = x.ptr();
  if (training) {
    auto rm = stats.running_mean.mutable_data();
    auto rv = stats.running_var.mutable_data();
    for (std::size_t c = 0; c < C; ++c) {
      T s = 0;
      for (std::size_t b = 0; b < B; ++b)
        for (std::size_t p = 0; p < hw; ++p) s += px[(b * C + c) * hw + p];
      const T m = s / static_cast<T>(count);
      T v = 0;
      for (std::size_t b = 0; b < B; ++b)
        for (std::size_t p = 0; p < hw; ++p) {
          const T d = px[(b * C + c) * hw + p] - m;
          v += d * d;
        }
      const T var = v / static_cast<T>(count);
      mu[c] = m;
      is[c] = T(1) / std::sqrt(var + stats.eps);
      const T unbiased = count > 1 ? v / static_cast<T>(count - 1) : var;
      rm[c] = (T(1) - stats.momentum) * rm[c] + stats.momentum * m;
      rv[c] = (T(1) - stats.momentum) * rv[c] + stats.momentum * unbiased;
    }
  } else {
    for (std::size_t c = 0; c < C; ++c) {
      mu[c] = stats.running_mean[c];
      is[c] = T(1) / std::sqrt(stats.running_var[c] + stats.eps);
    }
  }
  std::vector<T> y(x.size());
  auto xhat = std::make_shared<std::vector<T>>(x.size());
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t c = 0; c < C; ++c) {
      const std::size_t base = (b * C + c) * hw;
      for (std::size_t p = 0; p < hw; ++p) {
        const T h = (px[base + p] - mu[c]) * is[c];
        (*xhat)[base + p] = h;
        y[base + p] = h * gamma[c] + beta[c];
      }
    }
  auto xi = x.impl(), gi = gamma.impl(), bi = beta.impl();
  return detail::make_result<T>(OpKind::kBatchNorm, x.shape(), std::move(y), {&x, &gamma, &beta},
                                [xi, gi, bi, xhat, is, training, B, C, hw, count](const std::vector<T>& g) {
    T* gx = detail::grad_target(xi);
    T* gg = detail::grad_target(gi);
    T* gb = detail::grad_target(bi);
    const T* gam = gi->data.data();
    for (std::size_t c = 0; c < C; ++c) {
      T sg = 0, sgh = 0;
      for (std::size_t b = 0; b < B; ++b)
        for (std::size_t p = 0; p < hw; ++p) {
          const std::size_t k = (b * C + c) * hw + p;
          sg += g[k];
          sgh += g[k] * (*xhat)[k];
        }
      if (gg) gg[c] += sgh;
      if (gb) gb[c] += sg;
      if (!gx) continue;
      const T scale = gam[c] * is[c];
      const T inv = T(1) / static_cast<T>(count);
      for (std::size_t b = 0; b < B; ++b)
        for (std::size_t p = 0; p < hw; ++p) {
          const std::size_t k = (b * C + c) * hw + p;
          gx[k] += training ? scale * (g[k] - inv * sg - (*xhat)[k] * inv * sgh) : scale * g[k];
        }
    }
  });
}

}  // namespace samamba
