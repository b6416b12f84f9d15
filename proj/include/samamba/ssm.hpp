#pragma once

// Diagonal state-space sequence models.
//
// LTI form:      h_t = Abar h_{t-1} + Bbar x_t,  y_t = C h_t,  h_0 = 0
// Kernel form:   y = x * K,  K[k] = C Abar^k Bbar  (causal)
// Selective form: Delta_t, B_t, C_t are projections of x_t, so the
// discretized transition varies with position.
//
// A is diagonal and parameterized as A = -exp(a_raw), which keeps every
// discretized transition inside (0, 1) for Delta > 0.

#include <cmath>
#include <memory>
#include <span>
#include <vector>

#include "samamba/ops.hpp"

namespace samamba::ssm {

enum class Mode { kLti, kSelective };
enum class Discretization { kSimplified, kExactZoh };

/// Discretized diagonal LTI system with scalar input/output.
template <typename T>
struct DiscreteSsm {
  std::vector<T> a_bar;
  std::vector<T> b_bar;
  std::vector<T> c;
  bool marginal = false;  // some continuous A >= 0 (|Abar| >= 1)

  std::size_t state_dim() const { return a_bar.size(); }
};

/// Abar = exp(Delta A); Bbar = Delta B (simplified) or (exp(Delta A) - 1)/A * B (exact ZOH).
template <typename T>
DiscreteSsm<T> discretize(std::span<const T> a, std::span<const T> b, std::span<const T> c, T delta,
                          Discretization disc = Discretization::kSimplified) {
  if (!(delta > 0)) throw DomainError("discretization step must be positive, got " + std::to_string(delta));
  if (a.size() != b.size() || a.size() != c.size())
    throw ShapeError("SSM A/B/C state extents differ");
  DiscreteSsm<T> d;
  d.c.assign(c.begin(), c.end());
  for (std::size_t n = 0; n < a.size(); ++n) {
    const T ea = std::exp(delta * a[n]);
    d.a_bar.push_back(ea);
    if (disc == Discretization::kExactZoh && a[n] != T(0))
      d.b_bar.push_back(std::expm1(delta * a[n]) / a[n] * b[n]);
    else
      d.b_bar.push_back(delta * b[n]);
    if (a[n] >= T(0)) d.marginal = true;
  }
  return d;
}

/// Parameters of one SSM. LTI mode uses the fixed vectors; selective mode
/// uses the projection tensors (D channels, N states).
template <typename T>
struct SsmParams {
  Mode mode = Mode::kLti;
  Discretization disc = Discretization::kSimplified;
  std::size_t state_dim = 16;

  // LTI, single channel: A = -exp(a_raw).
  std::vector<T> a_raw;
  std::vector<T> b;
  std::vector<T> c;
  T delta = T(0.1);

  // Selective: x[.., D] -> Delta = softplus(x W_delta + b_delta), B = x W_b, C = x W_c.
  Tensor<T> a_log;        // [D, N], A = -exp(a_log)
  Tensor<T> w_delta;      // [D, D]
  Tensor<T> delta_bias;   // [D]
  Tensor<T> w_b;          // [D, N]
  Tensor<T> w_c;          // [D, N]

  std::vector<T> a() const {
    std::vector<T> out;
    for (const T r : a_raw) out.push_back(-std::exp(r));
    return out;
  }
};

template <typename T>
DiscreteSsm<T> discretize(const SsmParams<T>& p) {
  if (p.mode != Mode::kLti) throw ModeError("fixed discretization requires LTI mode");
  const auto a = p.a();
  return discretize<T>(a, p.b, p.c, p.delta, p.disc);
}

/// y_t = C h_t with h_t = Abar h_{t-1} + Bbar x_t; O(M N).
template <typename T>
std::vector<T> scan_recurrent(std::span<const T> x, const DiscreteSsm<T>& s) {
  const std::size_t N = s.state_dim();
  std::vector<T> h(N, T(0));
  std::vector<T> y(x.size());
  for (std::size_t t = 0; t < x.size(); ++t) {
    T acc = 0;
    for (std::size_t n = 0; n < N; ++n) {
      h[n] = s.a_bar[n] * h[n] + s.b_bar[n] * x[t];
      acc += s.c[n] * h[n];
    }
    y[t] = acc;
  }
  return y;
}

template <typename T>
std::vector<T> scan_recurrent(std::span<const T> x, const SsmParams<T>& p) {
  return scan_recurrent(x, discretize(p));
}

/// K[k] = C Abar^k Bbar for k = 0..M-1.
template <typename T>
std::vector<T> build_kernel(const DiscreteSsm<T>& s, std::size_t M) {
  const std::size_t N = s.state_dim();
  std::vector<T> pw(s.b_bar);  // Abar^k Bbar
  std::vector<T> k(M);
  for (std::size_t t = 0; t < M; ++t) {
    T acc = 0;
    for (std::size_t n = 0; n < N; ++n) acc += s.c[n] * pw[n];
    k[t] = acc;
    for (std::size_t n = 0; n < N; ++n) pw[n] *= s.a_bar[n];
  }
  return k;
}

template <typename T>
std::vector<T> build_kernel(const SsmParams<T>& p, std::size_t M) {
  if (p.mode != Mode::kLti) throw ModeError("structured kernel is only defined for LTI parameters");
  return build_kernel(discretize(p), M);
}

/// Causal convolution y_t = sum_{k<=t} K[k] x_{t-k}.
template <typename T>
std::vector<T> causal_convolve(std::span<const T> x, std::span<const T> kernel) {
  std::vector<T> y(x.size(), T(0));
  for (std::size_t t = 0; t < x.size(); ++t) {
    T acc = 0;
    for (std::size_t k = 0; k <= t && k < kernel.size(); ++k) acc += kernel[k] * x[t - k];
    y[t] = acc;
  }
  return y;
}

template <typename T>
std::vector<T> scan_convolutional(std::span<const T> x, const DiscreteSsm<T>& s) {
  const auto k = build_kernel(s, x.size());
  return causal_convolve<T>(x, k);
}

template <typename T>
std::vector<T> scan_convolutional(std::span<const T> x, const SsmParams<T>& p) {
  if (p.mode != Mode::kLti) throw ModeError("convolutional scan is only defined for LTI parameters");
  return scan_convolutional(x, discretize(p));
}

/// Differentiable selective scan primitive.
///   u, delta: [S, L, D]; a: [D, N] (continuous, negative); b, c: [S, L, N]
///   h_t[d,n] = exp(delta_t[d] a[d,n]) h_{t-1}[d,n] + delta_t[d] b_t[n] u_t[d]
///   y_t[d]   = sum_n c_t[n] h_t[d,n]
template <typename T>
Tensor<T> selective_scan_raw(const Tensor<T>& u, const Tensor<T>& delta, const Tensor<T>& a,
                             const Tensor<T>& b, const Tensor<T>& c) {
  if (u.rank() != 3 || delta.shape() != u.shape() || a.rank() != 2 || a.dim(0) != u.dim(2))
    throw ShapeError("selective_scan: u " + to_string(u.shape()) + " delta " + to_string(delta.shape()) +
                     " a " + to_string(a.shape()));
  const std::size_t S = u.dim(0), L = u.dim(1), D = u.dim(2), N = a.dim(1);
  const Shape bc{S, L, N};
  if (b.shape() != bc || c.shape() != bc)
    throw ShapeError("selective_scan: b/c must be " + to_string(bc) + ", got " + to_string(b.shape()) +
                     " and " + to_string(c.shape()));
  // hs[s,t,d,n] = h_t after the update at step t; inference keeps only two steps.
  const bool keep = detail::will_record<T>({&u, &delta, &a, &b, &c});
  auto hs = std::make_shared<std::vector<T>>(keep ? S * L * D * N : 2 * D * N);
  std::vector<T> y(S * L * D);
  const T *pu = u.ptr(), *pd = delta.ptr(), *pa = a.ptr(), *pb = b.ptr(), *pc = c.ptr();
  for (std::size_t s = 0; s < S; ++s) {
    for (std::size_t t = 0; t < L; ++t) {
      const T* bt = pb + (s * L + t) * N;
      const T* ct = pc + (s * L + t) * N;
      for (std::size_t d = 0; d < D; ++d) {
        const std::size_t i = (s * L + t) * D + d;
        const T dt = pd[i], xt = pu[i];
        const T* ad = pa + d * N;
        T* h = hs->data() + (keep ? i : (t % 2) * D + d) * N;
        const T* hp = t ? hs->data() + (keep ? i - D : ((t - 1) % 2) * D + d) * N : nullptr;
        T acc = 0;
        for (std::size_t n = 0; n < N; ++n) {
          const T prev = hp ? hp[n] : T(0);
          h[n] = std::exp(dt * ad[n]) * prev + dt * bt[n] * xt;
          acc += ct[n] * h[n];
        }
        y[i] = acc;
      }
    }
  }
  detail::count_macs(static_cast<std::uint64_t>(S) * L * D * N);
  auto ui = u.impl(), di = delta.impl(), ai = a.impl(), bi = b.impl(), ci = c.impl();
  return detail::make_result<T>(OpKind::kSelectiveScan, u.shape(), std::move(y), {&u, &delta, &a, &b, &c},
                                [ui, di, ai, bi, ci, hs, S, L, D, N](const std::vector<T>& gy) {
    T* gu = detail::grad_target(ui);
    T* gd = detail::grad_target(di);
    T* ga = detail::grad_target(ai);
    T* gb = detail::grad_target(bi);
    T* gc = detail::grad_target(ci);
    const T *pu = ui->data.data(), *pd = di->data.data(), *pa = ai->data.data();
    const T *pb = bi->data.data(), *pc = ci->data.data();
    std::vector<T> dh(D * N);
    for (std::size_t s = 0; s < S; ++s) {
      std::fill(dh.begin(), dh.end(), T(0));
      for (std::size_t t = L; t-- > 0;) {
        const T* bt = pb + (s * L + t) * N;
        const T* ct = pc + (s * L + t) * N;
        for (std::size_t d = 0; d < D; ++d) {
          const std::size_t i = (s * L + t) * D + d;
          const T g = gy[i], dt = pd[i], xt = pu[i];
          const T* ad = pa + d * N;
          const T* h = hs->data() + i * N;
          const T* hp = t ? h - D * N : nullptr;
          T* dhd = dh.data() + d * N;
          T g_delta = 0, g_u = 0;
          for (std::size_t n = 0; n < N; ++n) {
            if (gc) gc[(s * L + t) * N + n] += g * h[n];
            const T dhn = dhd[n] + g * ct[n];
            const T ea = std::exp(dt * ad[n]);
            const T prev = hp ? hp[n] : T(0);
            const T g_ea = dhn * prev;
            g_delta += g_ea * ea * ad[n] + dhn * bt[n] * xt;
            if (ga) ga[d * N + n] += g_ea * ea * dt;
            if (gb) gb[(s * L + t) * N + n] += dhn * dt * xt;
            g_u += dhn * dt * bt[n];
            dhd[n] = dhn * ea;
          }
          if (gd) gd[i] += g_delta;
          if (gu) gu[i] += g_u;
        }
      }
    }
  });
}

/// Selective scan of x[S, L, D] with input-dependent Delta, B, C.
template <typename T>
Tensor<T> selective_scan(const Tensor<T>& x, const SsmParams<T>& p) {
  if (p.mode != Mode::kSelective) throw ModeError("selective_scan requires selective-mode parameters");
  const Tensor<T> delta = softplus(add(matmul(x, p.w_delta), p.delta_bias));
  const Tensor<T> b = matmul(x, p.w_b);
  const Tensor<T> c = matmul(x, p.w_c);
  const Tensor<T> a = neg(exp(p.a_log));
  return selective_scan_raw(x, delta, a, b, c);
}

/// Forward scan plus the re-reversed scan of the reversed sequence (axis 1).
template <typename T>
Tensor<T> bidirectional_scan(const Tensor<T>& x, const SsmParams<T>& fwd, const SsmParams<T>& bwd) {
  const Tensor<T> yf = selective_scan(x, fwd);
  const Tensor<T> yb = flip(selective_scan(flip(x, 1), bwd), 1);
  return add(yf, yb);
}

}  // namespace samamba::ssm
