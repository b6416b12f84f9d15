#pragma once

// 2-D convolution (im2col + GEMM), transposed convolution and bilinear
// upsampling over NCHW tensors.

#include <algorithm>
#include <cmath>
#include <optional>

#include "samamba/gemm.hpp"
#include "samamba/ops.hpp"

namespace samamba {

struct Conv2dGeometry {
  std::size_t in_h, in_w, kh, kw, stride, pad, out_h, out_w;
};

namespace detail {

/// col[(c*kh+i)*kw+j, oy*out_w+ox] = x[c, oy*s-p+i, ox*s-p+j] (0 outside).
template <typename T>
void im2col(const T* x, std::size_t channels, const Conv2dGeometry& g, T* col) {
  const std::size_t hw = g.out_h * g.out_w;
  for (std::size_t c = 0; c < channels; ++c)
    for (std::size_t i = 0; i < g.kh; ++i)
      for (std::size_t j = 0; j < g.kw; ++j) {
        T* row = col + ((c * g.kh + i) * g.kw + j) * hw;
        const T* xc = x + c * g.in_h * g.in_w;
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
          const long iy = static_cast<long>(oy * g.stride + i) - static_cast<long>(g.pad);
          T* r = row + oy * g.out_w;
          if (iy < 0 || iy >= static_cast<long>(g.in_h)) {
            std::fill(r, r + g.out_w, T(0));
            continue;
          }
          const T* xr = xc + iy * g.in_w;
          for (std::size_t ox = 0; ox < g.out_w; ++ox) {
            const long ix = static_cast<long>(ox * g.stride + j) - static_cast<long>(g.pad);
            r[ox] = (ix < 0 || ix >= static_cast<long>(g.in_w)) ? T(0) : xr[ix];
          }
        }
      }
}

/// Adjoint of im2col: scatters col back into x (accumulating).
template <typename T>
void col2im(const T* col, std::size_t channels, const Conv2dGeometry& g, T* x) {
  const std::size_t hw = g.out_h * g.out_w;
  for (std::size_t c = 0; c < channels; ++c)
    for (std::size_t i = 0; i < g.kh; ++i)
      for (std::size_t j = 0; j < g.kw; ++j) {
        const T* row = col + ((c * g.kh + i) * g.kw + j) * hw;
        T* xc = x + c * g.in_h * g.in_w;
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
          const long iy = static_cast<long>(oy * g.stride + i) - static_cast<long>(g.pad);
          if (iy < 0 || iy >= static_cast<long>(g.in_h)) continue;
          const T* r = row + oy * g.out_w;
          T* xr = xc + iy * g.in_w;
          for (std::size_t ox = 0; ox < g.out_w; ++ox) {
            const long ix = static_cast<long>(ox * g.stride + j) - static_cast<long>(g.pad);
            if (ix >= 0 && ix < static_cast<long>(g.in_w)) xr[ix] += r[ox];
          }
        }
      }
}

inline bool is_pointwise(const Conv2dGeometry& g) {
  return g.kh == 1 && g.kw == 1 && g.stride == 1 && g.pad == 0;
}

}  // namespace detail

inline Conv2dGeometry conv_geometry(std::size_t h, std::size_t w, std::size_t kh, std::size_t kw,
                                    std::size_t stride, std::size_t pad) {
  if (stride == 0) throw ShapeError("conv stride must be positive");
  if (kh > h + 2 * pad || kw > w + 2 * pad)
    throw ShapeError("kernel " + std::to_string(kh) + "x" + std::to_string(kw) +
                     " larger than padded input " + std::to_string(h + 2 * pad) + "x" +
                     std::to_string(w + 2 * pad));
  return {h, w, kh, kw, stride, pad, (h + 2 * pad - kh) / stride + 1, (w + 2 * pad - kw) / stride + 1};
}

/// x[B,Cin,H,W] * w[Cout,Cin,kh,kw] (+ bias[Cout]); kernel extents must be odd.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const std::optional<Tensor<T>>& bias,
                 std::size_t stride = 1, std::size_t pad = 0) {
  if (x.rank() != 4 || w.rank() != 4)
    throw ShapeError("conv2d expects x[B,C,H,W] and w[O,C,kh,kw], got " + to_string(x.shape()) +
                     " and " + to_string(w.shape()));
  if (x.dim(1) != w.dim(1))
    throw ShapeError("conv2d channel mismatch: x " + to_string(x.shape()) + " w " + to_string(w.shape()));
  if (w.dim(2) % 2 == 0 || w.dim(3) % 2 == 0)
    throw ShapeError("conv2d kernel extents must be odd, got " + to_string(w.shape()));
  const std::size_t B = x.dim(0), cin = x.dim(1), cout = w.dim(0);
  const auto g = conv_geometry(x.dim(2), x.dim(3), w.dim(2), w.dim(3), stride, pad);
  if (bias && bias->size() != cout) throw ShapeError("conv2d bias extent mismatch");
  const std::size_t kdim = cin * g.kh * g.kw;
  const std::size_t ohw = g.out_h * g.out_w;
  const std::size_t ihw = g.in_h * g.in_w;
  const bool pw = detail::is_pointwise(g);
  std::vector<T> y(B * cout * ohw, T(0));
  std::vector<T> col(pw ? 0 : kdim * ohw);
  for (std::size_t b = 0; b < B; ++b) {
    const T* xb = x.ptr() + b * cin * ihw;
    const T* src = xb;
    if (!pw) {
      detail::im2col(xb, cin, g, col.data());
      src = col.data();
    }
    T* yb = y.data() + b * cout * ohw;
    if (bias)
      for (std::size_t o = 0; o < cout; ++o) std::fill(yb + o * ohw, yb + (o + 1) * ohw, (*bias)[o]);
    detail::gemm_nn(cout, ohw, kdim, w.ptr(), src, yb);
  }
  detail::count_macs(static_cast<std::uint64_t>(B) * cout * kdim * ohw);
  Shape out{B, cout, g.out_h, g.out_w};
  auto xi = x.impl();
  auto wi = w.impl();
  auto bi = bias ? bias->impl() : nullptr;
  return detail::make_result<T>(OpKind::kConv2d, out, std::move(y), {&x, &w, bias ? &*bias : &x},
                                [xi, wi, bi, g, B, cin, cout, kdim, ohw, ihw, pw](const std::vector<T>& gy) {
    T* gx = detail::grad_target(xi);
    T* gw = detail::grad_target(wi);
    T* gb = bi ? detail::grad_target(bi) : nullptr;
    std::vector<T> col(pw ? 0 : kdim * ohw);
    std::vector<T> dcol(pw ? 0 : kdim * ohw);
    for (std::size_t b = 0; b < B; ++b) {
      const T* gyb = gy.data() + b * cout * ohw;
      if (gb)
        for (std::size_t o = 0; o < cout; ++o)
          for (std::size_t p = 0; p < ohw; ++p) gb[o] += gyb[o * ohw + p];
      const T* xb = xi->data.data() + b * cin * ihw;
      if (gw) {
        const T* src = xb;
        if (!pw) {
          detail::im2col(xb, cin, g, col.data());
          src = col.data();
        }
        detail::gemm_nt(cout, kdim, ohw, gyb, src, gw);
      }
      if (gx) {
        T* gxb = gx + b * cin * ihw;
        if (pw) {
          detail::gemm_tn(kdim, ohw, cout, wi->data.data(), gyb, gxb);
        } else {
          std::fill(dcol.begin(), dcol.end(), T(0));
          detail::gemm_tn(kdim, ohw, cout, wi->data.data(), gyb, dcol.data());
          detail::col2im(dcol.data(), cin, g, gxb);
        }
      }
    }
  });
}

/// Transposed convolution: x[B,Cin,H,W], w[Cin,Cout,kh,kw] -> [B,Cout,(H-1)s-2p+kh, ...].
template <typename T>
Tensor<T> conv_transpose2d(const Tensor<T>& x, const Tensor<T>& w, const std::optional<Tensor<T>>& bias,
                           std::size_t stride, std::size_t pad = 0) {
  if (x.rank() != 4 || w.rank() != 4 || x.dim(1) != w.dim(0))
    throw ShapeError("conv_transpose2d expects x[B,C,H,W] and w[C,O,kh,kw], got " + to_string(x.shape()) +
                     " and " + to_string(w.shape()));
  const std::size_t B = x.dim(0), cin = x.dim(1), cout = w.dim(1), kh = w.dim(2), kw = w.dim(3);
  const std::size_t H = x.dim(2), W = x.dim(3);
  if ((H - 1) * stride + kh < 2 * pad + 1 || (W - 1) * stride + kw < 2 * pad + 1)
    throw ShapeError("conv_transpose2d padding too large");
  const std::size_t oh = (H - 1) * stride + kh - 2 * pad;
  const std::size_t ow = (W - 1) * stride + kw - 2 * pad;
  // Geometry of the adjoint forward convolution (output -> input).
  const Conv2dGeometry g{oh, ow, kh, kw, stride, pad, H, W};
  const std::size_t kdim = cout * kh * kw;
  const std::size_t ihw = H * W, ohw = oh * ow;
  if (bias && bias->size() != cout) throw ShapeError("conv_transpose2d bias extent mismatch");
  std::vector<T> y(B * cout * ohw, T(0));
  std::vector<T> col(kdim * ihw);
  for (std::size_t b = 0; b < B; ++b) {
    std::fill(col.begin(), col.end(), T(0));
    detail::gemm_tn(kdim, ihw, cin, w.ptr(), x.ptr() + b * cin * ihw, col.data());
    T* yb = y.data() + b * cout * ohw;
    detail::col2im(col.data(), cout, g, yb);
    if (bias)
      for (std::size_t o = 0; o < cout; ++o)
        for (std::size_t p = 0; p < ohw; ++p) yb[o * ohw + p] += (*bias)[o];
  }
  detail::count_macs(static_cast<std::uint64_t>(B) * cin * kdim * ihw);
  auto xi = x.impl();
  auto wi = w.impl();
  auto bi = bias ? bias->impl() : nullptr;
  return detail::make_result<T>(OpKind::kConvTranspose2d, Shape{B, cout, oh, ow}, std::move(y),
                                {&x, &w, bias ? &*bias : &x},
                                [xi, wi, bi, g, B, cin, cout, kdim, ihw, ohw](const std::vector<T>& gy) {
    T* gx = detail::grad_target(xi);
    T* gw = detail::grad_target(wi);
    T* gb = bi ? detail::grad_target(bi) : nullptr;
    std::vector<T> col(kdim * ihw);
    for (std::size_t b = 0; b < B; ++b) {
      const T* gyb = gy.data() + b * cout * ohw;
      if (gb)
        for (std::size_t o = 0; o < cout; ++o)
          for (std::size_t p = 0; p < ohw; ++p) gb[o] += gyb[o * ohw + p];
      detail::im2col(gyb, cout, g, col.data());
      if (gx) detail::gemm_nn(cin, ihw, kdim, wi->data.data(), col.data(), gx + b * cin * ihw);
      if (gw) detail::gemm_nt(cin, kdim, ihw, xi->data.data() + b * cin * ihw, col.data(), gw);
    }
  });
}

namespace detail {

struct LinearTap {
  std::size_t i0, i1;
  double w1;  // weight of i1; i0 gets 1 - w1
};

/// Half-pixel (align_corners=false) source taps along one axis.
inline std::vector<LinearTap> bilinear_taps(std::size_t in, std::size_t out) {
  std::vector<LinearTap> taps(out);
  const double scale = static_cast<double>(in) / static_cast<double>(out);
  for (std::size_t o = 0; o < out; ++o) {
    double src = (static_cast<double>(o) + 0.5) * scale - 0.5;
    if (src < 0) src = 0;
    auto i0 = static_cast<std::size_t>(std::floor(src));
    if (i0 > in - 1) i0 = in - 1;
    const std::size_t i1 = std::min(i0 + 1, in - 1);
    taps[o] = {i0, i1, src - static_cast<double>(i0)};
  }
  return taps;
}

}  // namespace detail

/// Bilinear resize of x[B,C,H,W] to (out_h,out_w), half-pixel centers.
template <typename T>
Tensor<T> upsample_bilinear(const Tensor<T>& x, std::size_t out_h, std::size_t out_w) {
  if (x.rank() != 4) throw ShapeError("upsample_bilinear expects NCHW, got " + to_string(x.shape()));
  const std::size_t planes = x.dim(0) * x.dim(1), H = x.dim(2), W = x.dim(3);
  if (out_h < H || out_w < W)
    throw ShapeError("upsample_bilinear target " + std::to_string(out_h) + "x" + std::to_string(out_w) +
                     " smaller than input " + to_string(x.shape()));
  const auto ty = detail::bilinear_taps(H, out_h);
  const auto tx = detail::bilinear_taps(W, out_w);
  std::vector<T> y(planes * out_h * out_w);
  const T* px = x.ptr();
  for (std::size_t p = 0; p < planes; ++p) {
    const T* src = px + p * H * W;
    T* dst = y.data() + p * out_h * out_w;
    for (std::size_t oy = 0; oy < out_h; ++oy) {
      const auto& a = ty[oy];
      const T wy1 = static_cast<T>(a.w1), wy0 = T(1) - wy1;
      for (std::size_t ox = 0; ox < out_w; ++ox) {
        const auto& b = tx[ox];
        const T wx1 = static_cast<T>(b.w1), wx0 = T(1) - wx1;
        dst[oy * out_w + ox] = wy0 * (wx0 * src[a.i0 * W + b.i0] + wx1 * src[a.i0 * W + b.i1]) +
                               wy1 * (wx0 * src[a.i1 * W + b.i0] + wx1 * src[a.i1 * W + b.i1]);
      }
    }
  }
  auto xi = x.impl();
  Shape out{x.dim(0), x.dim(1), out_h, out_w};
  return detail::make_result<T>(OpKind::kUpsampleBilinear, out, std::move(y), {&x},
                                [xi, ty, tx, planes, H, W, out_h, out_w](const std::vector<T>& g) {
    T* gx = detail::grad_target(xi);
    if (!gx) return;
    for (std::size_t p = 0; p < planes; ++p) {
      T* dst = gx + p * H * W;
      const T* gp = g.data() + p * out_h * out_w;
      for (std::size_t oy = 0; oy < out_h; ++oy) {
        const auto& a = ty[oy];
        const T wy1 = static_cast<T>(a.w1), wy0 = T(1) - wy1;
        for (std::size_t ox = 0; ox < out_w; ++ox) {
          const auto& b = tx[ox];
          const T wx1 = static_cast<T>(b.w1), wx0 = T(1) - wx1;
          const T v = gp[oy * out_w + ox];
          dst[a.i0 * W + b.i0] += v * wy0 * wx0;
          dst[a.i0 * W + b.i1] += v * wy0 * wx1;
          dst[a.i1 * W + b.i0] += v * wy1 * wx0;
          dst[a.i1 * W + b.i1] += v * wy1 * wx1;
        }
      }
    }
  });
}

}  // namespace samamba
