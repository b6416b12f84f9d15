#pragma once

// Property suites behind `samamba verify`. Every suite runs at f64 and
// reports its largest observed error against its tolerance.

#include <time.h>

#include <algorithm>
#include <chrono>
#include <functional>
#include <limits>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "samamba/data.hpp"
#include "samamba/gradcheck.hpp"
#include "samamba/losses.hpp"
#include "samamba/metrics.hpp"
#include "samamba/model.hpp"

namespace samamba::verify {

using D = double;

struct SuiteResult {
  std::string name;
  bool passed = true;
  double max_error = 0;
  double tolerance = 0;
  std::string failure;  // first failing check, with its reproduction seed
  double seconds = 0;
};

struct Options {
  std::uint64_t seed = 0;
  std::size_t seeds = 5;        // repetitions for randomized checks
  bool include_model = true;    // full-network gradient battery (slowest suite)
  std::size_t model_seeds = 1;
};

/// Collects max error and the first failure of a suite.
class Recorder {
 public:
  Recorder(std::string name, double tol) { r_.name = std::move(name), r_.tolerance = tol; }

  void check(double err, const std::string& what, std::uint64_t seed) { check(err, r_.tolerance, what, seed); }

  void check(double err, double tol, const std::string& what, std::uint64_t seed) {
    const double scaled = tol == r_.tolerance ? err : err * r_.tolerance / tol;
    if (!(scaled <= r_.max_error)) r_.max_error = std::isnan(scaled) ? INFINITY : std::max(r_.max_error, scaled);
    if (!(err <= tol)) fail(what + " error " + fmt(err) + " > " + fmt(tol), seed);
  }

  /// Replaces the failure text (used when a suite summarizes several failures).
  void summarize(const std::string& text) {
    if (!r_.passed) r_.failure = text;
  }

  void require(bool ok, const std::string& what, std::uint64_t seed) {
    if (!ok) fail(what, seed);
  }

  SuiteResult done(double seconds) {
    r_.seconds = seconds;
    return r_;
  }

  static std::string fmt(double v) {
    std::ostringstream o;
    o.precision(3);
    o << std::scientific << v;
    return o.str();
  }

 private:
  void fail(const std::string& what, std::uint64_t seed) {
    if (r_.passed) r_.failure = what + " (seed " + std::to_string(seed) + ")";
    r_.passed = false;
  }
  SuiteResult r_;
};

inline Tensor<D> random_tensor(Rng& rng, const Shape& s, double lo = -1, double hi = 1, bool grad = true) {
  std::vector<D> v(numel(s));
  for (auto& x : v) x = uniform<D>(rng, lo, hi);
  return Tensor<D>(s, std::move(v), grad);
}

/// Weighted sum so each output element gets a distinct upstream gradient.
inline Tensor<D> probe(const Tensor<D>& y, std::uint64_t seed) {
  Rng rng = make_rng(seed, 0x9e0);
  return sum(mul(y, random_tensor(rng, y.shape(), -1, 1, false)));
}

inline std::vector<D> probe_weights(const std::function<Tensor<D>()>& f, std::uint64_t seed) {
  std::size_t n;
  {
    NoGradScope<D> ng;
    n = f().size();
  }
  Rng rng = make_rng(seed, 0x9e0);
  std::vector<D> w(n);
  for (auto& v : w) v = uniform<D>(rng, -1, 1);
  return w;
}

inline double worst(const std::vector<LeafReport>& reps) {
  double w = 0;
  for (const auto& r : reps) w = std::max({w, r.coords.max_rel_error, r.directional});
  return w;
}

inline GradCheckOptions grad_options(std::uint64_t seed, std::size_t max_coords = 0) {
  GradCheckOptions o;
  o.step = 1e-5;
  o.tolerance = 1e-4;
  o.floor = 1e-6;
  o.max_coords = max_coords;
  o.seed = seed;
  return o;
}

using Leaves = std::vector<std::pair<std::string, Tensor<D>>>;

// ------------------------------------------------------------------- engine

struct OpCase {
  const char* op;
  std::function<std::pair<std::function<Tensor<D>()>, Leaves>(Rng&)> build;
};

inline std::vector<OpCase> op_cases() {
  auto unary = [](const char* op, std::function<Tensor<D>(const Tensor<D>&)> f, double lo = -2, double hi = 2,
                  Shape s = {3, 4}) {
    return OpCase{op, [=](Rng& rng) {
                    auto x = random_tensor(rng, s, lo, hi);
                    return std::pair{std::function<Tensor<D>()>([=] { return f(x); }), Leaves{{"x", x}}};
                  }};
  };
  auto binary = [](const char* op, std::function<Tensor<D>(const Tensor<D>&, const Tensor<D>&)> f, Shape sa,
                   Shape sb, double lo = -2, double hi = 2) {
    return OpCase{op, [=](Rng& rng) {
                    auto a = random_tensor(rng, sa, lo, hi), b = random_tensor(rng, sb, lo, hi);
                    return std::pair{std::function<Tensor<D>()>([=] { return f(a, b); }), Leaves{{"a", a}, {"b", b}}};
                  }};
  };
  std::vector<OpCase> cs;
  cs.push_back(binary("add", [](auto& a, auto& b) { return add(a, b); }, {2, 3, 4}, {3, 1}));
  cs.push_back(binary("sub", [](auto& a, auto& b) { return sub(a, b); }, {2, 3, 4}, {4}));
  cs.push_back(binary("mul", [](auto& a, auto& b) { return mul(a, b); }, {2, 1, 4}, {3, 4}));
  cs.push_back(binary("div", [](auto& a, auto& b) { return div(a, b); }, {2, 3}, {2, 3}, 0.5, 2));
  cs.push_back(unary("neg", [](auto& x) { return neg(x); }));
  cs.push_back(unary("add_scalar", [](auto& x) { return add_scalar(x, 0.7); }));
  cs.push_back(unary("mul_scalar", [](auto& x) { return mul_scalar(x, -1.3); }));
  cs.push_back(unary("pow_scalar", [](auto& x) { return pow_scalar(x, 2.5); }, 0.2, 2));
  cs.push_back(unary("exp", [](auto& x) { return exp(x); }));
  cs.push_back(unary("log", [](auto& x) { return log(x); }, 0.2, 3));
  cs.push_back(unary("sqrt", [](auto& x) { return sqrt(x); }, 0.2, 3));
  cs.push_back(unary("sigmoid", [](auto& x) { return sigmoid(x); }, -4, 4));
  cs.push_back(unary("silu", [](auto& x) { return silu(x); }, -4, 4));
  cs.push_back(unary("relu", [](auto& x) { return relu(x); }));
  cs.push_back(unary("softplus", [](auto& x) { return softplus(x); }, -4, 4));
  cs.push_back(unary("log_sigmoid", [](auto& x) { return log_sigmoid(x); }, -4, 4));
  cs.push_back(unary("softmax", [](auto& x) { return softmax(x); }));
  cs.push_back(unary("sum", [](auto& x) { return mul_scalar(sum(mul(x, x)), 0.5); }));
  cs.push_back(unary("mean", [](auto& x) { return mean(mul(x, x)); }));
  cs.push_back(unary("sum_axes", [](auto& x) { return sum_axes(x, {0, 2}); }, -2, 2, {2, 3, 4}));
  cs.push_back(unary("max_axes", [](auto& x) { return max_axes(x, {1}); }, -2, 2, {2, 5, 3}));
  cs.push_back(unary("reshape", [](auto& x) { return reshape(x, {4, 3}); }));
  cs.push_back(unary("permute", [](auto& x) { return permute(x, {2, 0, 1}); }, -2, 2, {2, 3, 4}));
  cs.push_back(binary("concat", [](auto& a, auto& b) { return concat<D>({a, b}, 1); }, {2, 3, 2}, {2, 1, 2}));
  cs.push_back(unary("slice", [](auto& x) { return slice(x, 1, 1, 3); }, -2, 2, {2, 4}));
  cs.push_back(unary("index_select", [](auto& x) { return index_select(x, 1, {3, 0, 0, 2}); }, -2, 2, {2, 4}));
  cs.push_back(unary("flip", [](auto& x) { return flip(x, 1); }, -2, 2, {2, 4, 3}));
  cs.push_back(binary("matmul", [](auto& a, auto& b) { return matmul(a, b); }, {2, 3, 4}, {4, 5}));
  cs.push_back(OpCase{"conv2d", [](Rng& rng) {
                        auto x = random_tensor(rng, {2, 3, 6, 5}), w = random_tensor(rng, {4, 3, 3, 3}),
                             b = random_tensor(rng, {4});
                        return std::pair{std::function<Tensor<D>()>([=] { return conv2d(x, w, std::optional(b), 2, 1); }),
                                         Leaves{{"x", x}, {"w", w}, {"b", b}}};
                      }});
  cs.push_back(OpCase{"conv_transpose2d", [](Rng& rng) {
                        auto x = random_tensor(rng, {2, 3, 3, 2}), w = random_tensor(rng, {3, 2, 4, 4}),
                             b = random_tensor(rng, {2});
                        return std::pair{std::function<Tensor<D>()>(
                                             [=] { return conv_transpose2d(x, w, std::optional(b), 4, 0); }),
                                         Leaves{{"x", x}, {"w", w}, {"b", b}}};
                      }});
  cs.push_back(unary("upsample_bilinear", [](auto& x) { return upsample_bilinear(x, 7, 8); }, -2, 2, {1, 2, 3, 4}));
  cs.push_back(OpCase{"layer_norm", [](Rng& rng) {
                        auto x = random_tensor(rng, {3, 5}), g = random_tensor(rng, {5}), b = random_tensor(rng, {5});
                        return std::pair{std::function<Tensor<D>()>([=] { return layer_norm(x, g, b, kLayerNormEps); }),
                                         Leaves{{"x", x}, {"gamma", g}, {"beta", b}}};
                      }});
  cs.push_back(OpCase{"batch_norm", [](Rng& rng) {
                        auto x = random_tensor(rng, {2, 3, 2, 3}), g = random_tensor(rng, {3}), b = random_tensor(rng, {3});
                        auto stats = std::make_shared<BatchNormStats<D>>(3);
                        return std::pair{std::function<Tensor<D>()>([=] { return batch_norm2d(x, g, b, *stats, true); }),
                                         Leaves{{"x", x}, {"gamma", g}, {"beta", b}}};
                      }});
  cs.push_back(OpCase{"selective_scan", [](Rng& rng) {
                        auto u = random_tensor(rng, {2, 6, 3}), dt = random_tensor(rng, {2, 6, 3}, 0.05, 0.8),
                             a = random_tensor(rng, {3, 4}, -2, -0.2), b = random_tensor(rng, {2, 6, 4}),
                             c = random_tensor(rng, {2, 6, 4});
                        return std::pair{std::function<Tensor<D>()>([=] { return ssm::selective_scan_raw(u, dt, a, b, c); }),
                                         Leaves{{"u", u}, {"delta", dt}, {"a", a}, {"b", b}, {"c", c}}};
                      }});
  cs.push_back(OpCase{"cosine_gate", [](Rng& rng) {
                        auto x = random_tensor(rng, {2, 5, 4}), v = random_tensor(rng, {4});
                        return std::pair{std::function<Tensor<D>()>([=] { return cosine_gate(x, v); }),
                                         Leaves{{"x", x}, {"v", v}}};
                      }});
  return cs;
}

/// Finite-difference check of every differentiable op over `o.seeds` seeds.
inline SuiteResult op_gradients(const Options& o) {
  const auto t0 = std::chrono::steady_clock::now();
  const double rec_tolerance = 1e-4;
  Recorder rec("op-gradients", rec_tolerance);
  std::vector<std::pair<const char*, std::uint64_t>> failing;
  for (const auto& c : op_cases()) {
    for (std::size_t k = 0; k < o.seeds; ++k) {
      const std::uint64_t seed = mix_seed(o.seed, k);
      Rng rng = make_rng(seed, 0x0b5);
      auto [f, leaves] = c.build(rng);
      const auto reps = check_vjp<D>(f, probe_weights(f, seed), leaves, grad_options(seed));
      const double err = worst(reps);
      rec.check(err, std::string("op=") + c.op, seed);
      if (!(err <= rec_tolerance) && (failing.empty() || failing.back().first != c.op)) failing.push_back({c.op, seed});
    }
  }
  if (!failing.empty()) {
    std::string text = "failing ops:";
    for (const auto& [op, seed] : failing) text += " " + std::string(op) + "(seed " + std::to_string(seed) + ")";
    rec.summarize(text);
  }
  return rec.done(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
}

/// Broadcast gradients equal the gradients of the materialized expansion.
inline SuiteResult broadcasting(const Options& o) {
  const auto t0 = std::chrono::steady_clock::now();
  Recorder rec("broadcasting", 1e-12);
  for (std::size_t k = 0; k < o.seeds; ++k) {
    const std::uint64_t seed = mix_seed(o.seed, k, 1);
    Rng rng = make_rng(seed);
    auto a = random_tensor(rng, {2, 3, 4});
    auto b = random_tensor(rng, {3, 1});
    auto w = random_tensor(rng, {2, 3, 4}, -1, 1, false);
    {
      Tape<D> t;
      TapeScope<D> s(t);
      t.backward(sum(mul(mul(a, b), w)));
    }
    // Explicit expansion of b to [2,3,4] as a leaf.
    std::vector<D> ev(24);
    for (std::size_t i = 0; i < 24; ++i) ev[i] = b[(i / 4) % 3];
    Tensor<D> e({2, 3, 4}, ev, true);
    {
      Tape<D> t;
      TapeScope<D> s(t);
      t.backward(sum(mul(mul(a, e), w)));
    }
    double err = 0;
    for (std::size_t r = 0; r < 3; ++r) {
      double acc = 0;
      for (std::size_t i = 0; i < 24; ++i)
        if ((i / 4) % 3 == r) acc += e.grad()[i];
      err = std::max(err, std::abs(acc - b.grad()[r]));
    }
    rec.check(err, "broadcast reduction", seed);
  }
  return rec.done(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
}

// ---------------------------------------------------------------------- ssm

inline ssm::SsmParams<D> random_lti(Rng& rng, std::size_t N, ssm::Discretization disc) {
  ssm::SsmParams<D> p;
  p.mode = ssm::Mode::kLti;
  p.disc = disc;
  p.state_dim = N;
  for (std::size_t n = 0; n < N; ++n) {
    p.a_raw.push_back(uniform<D>(rng, -2, 1.5));
    p.b.push_back(uniform<D>(rng, -1, 1));
    p.c.push_back(uniform<D>(rng, -1, 1));
  }
  p.delta = std::exp(uniform<D>(rng, std::log(1e-3), std::log(0.5)));
  return p;
}

inline double max_rel_dev(const std::vector<D>& a, const std::vector<D>& b) {
  double scale = 0, dev = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    scale = std::max(scale, std::abs(b[i]));
    dev = std::max(dev, std::abs(a[i] - b[i]));
  }
  return dev / std::max(scale, 1e-300);
}

/// Recurrent and convolutional forms agree; linearity; causality; stability.
inline SuiteResult ssm_duality(const Options& o) {
  const auto t0 = std::chrono::steady_clock::now();
  Recorder rec("ssm-duality", 1e-6);
  std::size_t trial = 0;
  for (const auto disc : {ssm::Discretization::kSimplified, ssm::Discretization::kExactZoh})
    for (const std::size_t N : {1, 4, 16})
      for (const std::size_t M : {8, 64, 256})
        for (std::size_t k = 0; k < 12; ++k, ++trial) {
          const std::uint64_t seed = mix_seed(o.seed, trial, 2);
          Rng rng = make_rng(seed);
          const auto p = random_lti(rng, N, disc);
          std::vector<D> x(M);
          for (auto& v : x) v = uniform<D>(rng, -1, 1);
          const auto yr = ssm::scan_recurrent<D>(x, p);
          const auto yc = ssm::scan_convolutional<D>(x, p);
          rec.check(max_rel_dev(yc, yr), "duality N=" + std::to_string(N) + " M=" + std::to_string(M), seed);
          // Linearity.
          std::vector<D> x2(M), mix(M);
          for (auto& v : x2) v = uniform<D>(rng, -1, 1);
          for (std::size_t t = 0; t < M; ++t) mix[t] = 0.7 * x[t] - 1.9 * x2[t];
          const auto y2 = ssm::scan_recurrent<D>(x2, p);
          const auto ym = ssm::scan_recurrent<D>(mix, p);
          double lin = 0;
          for (std::size_t t = 0; t < M; ++t) lin = std::max(lin, std::abs(ym[t] - (0.7 * yr[t] - 1.9 * y2[t])));
          rec.check(lin, 1e-9, "linearity", seed);
          // Causality: perturb x_t, prefix must be bit-identical.
          const std::size_t t_star = rng() % M;
          auto xp = x;
          xp[t_star] += 1.0;
          const auto yp = ssm::scan_recurrent<D>(xp, p);
          rec.require(std::equal(yr.begin(), yr.begin() + long(t_star), yp.begin()), "causality", seed);
        }
  {
    Rng rng = make_rng(o.seed, 3);
    const auto p = random_lti(rng, 16, ssm::Discretization::kSimplified);
    std::vector<D> x(10000);
    for (auto& v : x) v = uniform<D>(rng, -1, 1);
    const auto y = ssm::scan_recurrent<D>(x, p);
    double peak = 0;
    for (const D v : y) peak = std::max(peak, std::abs(v));
    // |h_n| <= |Bbar| / (1 - Abar) for |x| <= 1.
    const auto d = ssm::discretize(p);
    double bound = 0;
    for (std::size_t n = 0; n < 16; ++n) bound += std::abs(d.c[n] * d.b_bar[n]) / (1 - d.a_bar[n]);
    rec.require(std::isfinite(peak) && peak <= bound * (1 + 1e-9), "stability bound over 1e4 steps", o.seed);
  }
  return rec.done(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
}

/// Naive per-step interpreter of the selective recurrence.
inline std::vector<D> selective_reference(const std::vector<D>& x, std::size_t L, std::size_t Dm, const ssm::SsmParams<D>& p) {
  const std::size_t N = p.a_log.dim(1);
  std::vector<D> y(L * Dm, 0), h(Dm * N, 0);
  for (std::size_t t = 0; t < L; ++t) {
    const D* xt = x.data() + t * Dm;
    std::vector<D> bt(N, 0), ct(N, 0), dt(Dm, 0);
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t j = 0; j < Dm; ++j) {
        bt[n] += xt[j] * p.w_b[j * N + n];
        ct[n] += xt[j] * p.w_c[j * N + n];
      }
    for (std::size_t d = 0; d < Dm; ++d) {
      D z = p.delta_bias[d];
      for (std::size_t j = 0; j < Dm; ++j) z += xt[j] * p.w_delta[j * Dm + d];
      dt[d] = z > 30 ? z : std::log1p(std::exp(z));
    }
    for (std::size_t d = 0; d < Dm; ++d)
      for (std::size_t n = 0; n < N; ++n) {
        const D a = -std::exp(p.a_log[d * N + n]);
        D& hv = h[d * N + n];
        hv = std::exp(dt[d] * a) * hv + dt[d] * bt[n] * xt[d];
        y[t * Dm + d] += ct[n] * hv;
      }
  }
  return y;
}

inline SuiteResult ssm_selective(const Options& o) {
  const auto t0 = std::chrono::steady_clock::now();
  Recorder rec("ssm-selective", 1e-10);
  for (std::size_t k = 0; k < o.seeds; ++k) {
    const std::uint64_t seed = mix_seed(o.seed, k, 4);
    Rng rng = make_rng(seed);
    const std::size_t L = 17, Dm = 3, N = 5;
    const auto p = init_selective<D>(Dm, N, rng);
    auto x = random_tensor(rng, {1, L, Dm}, -1, 1, false);
    const auto y = ssm::selective_scan(x, p);
    const auto ref = selective_reference(std::vector<D>(x.data().begin(), x.data().end()), L, Dm, p);
    rec.check(max_rel_dev(std::vector<D>(y.data().begin(), y.data().end()), ref), "selective vs reference", seed);
    // Bidirectional composition.
    const auto q = init_selective<D>(Dm, N, rng);
    const auto bi = ssm::bidirectional_scan(x, p, q);
    const auto fw = ssm::selective_scan(x, p);
    const auto bw = ssm::selective_scan(flip(x, 1), q);
    double err = 0;
    for (std::size_t t = 0; t < L; ++t)
      for (std::size_t d = 0; d < Dm; ++d)
        err = std::max(err, std::abs(bi[t * Dm + d] - fw[t * Dm + d] - bw[(L - 1 - t) * Dm + d]));
    rec.check(err, 1e-12, "bidirectional composition", seed);
  }
  return rec.done(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
}

struct ScanScaling {
  std::vector<std::size_t> lengths;
  std::vector<double> seconds;  // fastest forward time per length (thread CPU time)
  std::vector<double> ratios;   // seconds[i + 1] / seconds[i]
};

inline double thread_cpu_seconds() {
  timespec ts{};
  clock_gettime(CLOCK_THREAD_CPUTIME_ID, &ts);
  return double(ts.tv_sec) + 1e-9 * double(ts.tv_nsec);
}

/// Times the fused selective scan at doubling sequence lengths, in thread CPU
/// time. Each round measures every length back to back; a ratio is the median
/// over rounds of that round's time(2M)/time(M), so drift on the host cancels
/// within a round.
inline ScanScaling measure_scan_scaling(std::vector<std::size_t> lengths = {2048, 4096, 8192, 16384},
                                        std::size_t Dm = 64, std::size_t N = 16, std::size_t reps = 11) {
  ScanScaling r;
  r.lengths = lengths;
  Rng rng = make_rng(0, 0x5ca1);
  NoGradScope<D> ng;
  const auto a = random_tensor(rng, {Dm, N}, -2, -0.1, false);
  struct Inputs {
    Tensor<D> u, dt, b, c;
  };
  std::vector<Inputs> in;
  for (const std::size_t M : lengths)
    in.push_back({random_tensor(rng, {1, M, Dm}, -1, 1, false), random_tensor(rng, {1, M, Dm}, 0.01, 0.2, false),
                  random_tensor(rng, {1, M, N}, -1, 1, false), random_tensor(rng, {1, M, N}, -1, 1, false)});
  r.seconds.assign(lengths.size(), std::numeric_limits<double>::infinity());
  std::vector<std::vector<double>> round_ratios(lengths.size() - 1);
  std::vector<double> t(lengths.size());
  for (std::size_t k = 0; k <= reps; ++k) {
    for (std::size_t i = 0; i < lengths.size(); ++i) {
      const double t0 = thread_cpu_seconds();
      const auto y = ssm::selective_scan_raw(in[i].u, in[i].dt, a, in[i].b, in[i].c);
      t[i] = thread_cpu_seconds() - t0;
      if (!std::isfinite(y[0])) throw NonFiniteError("scan produced a non-finite value");
    }
    if (k == 0) continue;  // warms caches and the allocator
    for (std::size_t i = 0; i < lengths.size(); ++i) r.seconds[i] = std::min(r.seconds[i], t[i]);
    for (std::size_t i = 0; i + 1 < lengths.size(); ++i) round_ratios[i].push_back(t[i + 1] / t[i]);
  }
  for (auto& q : round_ratios) {
    std::nth_element(q.begin(), q.begin() + long(q.size() / 2), q.end());
    r.ratios.push_back(q[q.size() / 2]);
  }
  return r;
}

/// time(2M)/time(M) must stay within [1.6, 2.6]; error is distance outside.
inline SuiteResult scan_scaling(const Options& o) {
  const auto t0 = std::chrono::steady_clock::now();
  Recorder rec("scan-scaling", 0);
  const auto s = measure_scan_scaling();
  for (std::size_t i = 0; i < s.ratios.size(); ++i) {
    const double q = s.ratios[i];
    rec.check(std::max({0.0, 1.6 - q, q - 2.6}), "ratio M=" + std::to_string(s.lengths[i]) + " -> " + Recorder::fmt(q), o.seed);
  }
  return rec.done(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
}

// ------------------------------------------------------------------- blocks

inline SuiteResult block_gradients(const Options& o) {
  const auto t0 = std::chrono::steady_clock::now();
  Recorder rec("block-gradients", 1e-4);
  for (std::size_t k = 0; k < std::max<std::size_t>(1, o.seeds / 2); ++k) {
    const std::uint64_t seed = mix_seed(o.seed, k, 5);
    Rng rng = make_rng(seed);
    auto run = [&](const std::string& name, auto&& module, const Tensor<D>& x, auto&& fwd) {
      ParamList<D> ps;
      module.collect(ps, name);
      Leaves leaves{{"input", x}};
      for (auto& p : ps)
        if (!p.buffer) leaves.push_back({p.name, p.tensor});
      const auto reps = check_leaves<D>([&] { return probe(fwd(), seed); }, leaves, grad_options(seed, 6));
      rec.check(worst(reps), "block=" + name, seed);
    };
    {
      Mlp<D> m(4, 8, rng);
      auto x = random_tensor(rng, {3, 4});
      run("mlp", m, x, [&] { return m(x); });
    }
    {
      ConvBlock<D> cb(3, 4, 3, rng);
      auto x = random_tensor(rng, {2, 3, 5, 5});
      run("conv_block", cb, x, [&] { return cb(x, true); });
    }
    {
      ChannelAttention<D> ca(8, 4, rng);
      auto x = random_tensor(rng, {2, 8, 3, 3});
      run("channel_attention", ca, x, [&] { return mul(x, ca(x)); });
    }
    {
      SpatialAttention<D> sa(7, rng);
      auto x = random_tensor(rng, {1, 4, 5, 5});
      run("spatial_attention", sa, x, [&] { return mul(x, sa(x)); });
    }
    {
      FsAdapter<D> fa(6, rng);
      auto x = random_tensor(rng, {2, 6, 3, 3});
      run("fs_adapter", fa, x, [&] { return fa(x); });
    }
    {
      CsiOptions co;
      co.width = 8;
      co.state_dim = 4;
      Csi<D> csi(8, co, rng);
      auto x = random_tensor(rng, {1, 8, 4, 4});
      run("csi", csi, x, [&] { return csi(x, true); });
    }
    {
      Dpcf<D> dp(8, 4, 4, Fusion::kAdaptive, rng);
      auto h = random_tensor(rng, {1, 8, 4, 4});
      auto l = random_tensor(rng, {1, 4, 2, 2});
      for (auto& a : dp.alpha.mutable_data()) a = uniform<D>(rng, -1, 1);
      run("dpcf", dp, h, [&] { return dp(h, l, true); });
    }
  }
  return rec.done(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
}

inline SuiteResult fs_adapter_algebra(const Options& o) {
  const auto t0 = std::chrono::steady_clock::now();
  Recorder rec("fs-adapter-algebra", 1e-12);
  for (std::size_t k = 0; k < o.seeds; ++k) {
    const std::uint64_t seed = mix_seed(o.seed, k, 6);
    Rng rng = make_rng(seed);
    for (const auto sel : {FsSelection::kToken, FsSelection::kChannel}) {
      FsAdapter<D> fa(8, rng, sel);
      auto x = random_tensor(rng, {2, 8, 4, 4}, -1, 1, false);
      const auto y0 = fa(x);
      const std::vector<D> xi0(fa.xi.data().begin(), fa.xi.data().end());
      const D scale = uniform<D>(rng, 0.01, 100);
      for (std::size_t i = 0; i < xi0.size(); ++i) fa.xi.mutable_data()[i] = xi0[i] * scale;
      const auto y1 = fa(x);
      double err = 0;
      for (std::size_t i = 0; i < y0.size(); ++i) err = std::max(err, std::abs(y0[i] - y1[i]));
      rec.check(err, "xi scale invariance", seed);
      for (auto& v : fa.p.mutable_data()) v = 0;
      for (auto& v : fa.conv.weight.mutable_data()) v = 0;
      for (auto& v : fa.conv.bias->mutable_data()) v = 0;
      const auto y2 = fa(x);
      rec.require(std::equal(y2.data().begin(), y2.data().end(), x.data().begin()), "zero-branch residual identity", seed);
    }
  }
  return rec.done(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
}

inline SuiteResult dpcf_gating(const Options& o) {
  const auto t0 = std::chrono::steady_clock::now();
  Recorder rec("dpcf-gating", 1e-8);
  for (std::size_t k = 0; k < o.seeds; ++k) {
    const std::uint64_t seed = mix_seed(o.seed, k, 7);
    Rng rng = make_rng(seed);
    Dpcf<D> dp(8, 8, 4, Fusion::kAdaptive, rng);
    auto h = random_tensor(rng, {2, 8, 6, 6}, -1, 1, false);
    auto l = random_tensor(rng, {2, 8, 3, 3}, -1, 1, false);
    const auto lift = dp.lift(h, l);
    for (auto& a : dp.alpha.mutable_data()) a = -20;
    const auto sat = dp.pre_refine(h, l);
    double err = 0;
    for (std::size_t i = 0; i < h.size(); ++i) err = std::max(err, std::abs(sat[i] - h[i]));
    rec.check(err, "alpha=-20 saturation", seed);
    for (auto& a : dp.alpha.mutable_data()) a = 0;
    const auto mid = dp.pre_refine(h, l);
    bool exact = true;
    for (std::size_t i = 0; i < h.size(); ++i) exact = exact && mid[i] == (h[i] + lift[i]) / 2;
    rec.require(exact, "alpha=0 exact mean", seed);
    for (auto& a : dp.alpha.mutable_data()) a = uniform<D>(rng, -4, 4);
    const auto any = dp.pre_refine(h, l);
    bool inside = true;
    for (std::size_t i = 0; i < h.size(); ++i) {
      const D lo = std::min(h[i], lift[i]), hi = std::max(h[i], lift[i]);
      const D slack = 4 * std::numeric_limits<D>::epsilon() * std::max(std::abs(lo), std::abs(hi));
      inside = inside && any[i] >= lo - slack && any[i] <= hi + slack;
    }
    rec.require(inside, "convex envelope", seed);
  }
  return rec.done(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
}

inline SuiteResult csi_recombination(const Options& o) {
  const auto t0 = std::chrono::steady_clock::now();
  Recorder rec("csi-recombination", 0);
  for (const std::size_t heads : {1, 2, 4, 8}) {
    const auto perm = recombination_index(32, heads);
    rec.require(std::set<std::size_t>(perm.begin(), perm.end()).size() == 32, "bijection", heads);
    const auto inv = inverse_index(perm);
    Rng rng = make_rng(o.seed, 8, heads);
    auto x = random_tensor(rng, {2, 5, 32}, -1, 1, false);
    const auto back = index_select(index_select(x, 2, perm), 2, inv);
    rec.require(std::equal(back.data().begin(), back.data().end(), x.data().begin()), "inverse restores input", heads);
  }
  Rng rng = make_rng(o.seed, 9);
  CsiOptions four, one;
  one.heads = 1;
  Csi<D> a(16, four, rng), b(16, one, rng);
  ParamList<D> pa, pb;
  a.collect(pa, "a");
  b.collect(pb, "b");
  rec.require(count_parameters(pa) < count_parameters(pb), "4 heads use fewer parameters than 1 head", o.seed);
  return rec.done(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
}

// --------------------------------------------------------- losses & metrics

inline SuiteResult losses(const Options& o) {
  const auto t0 = std::chrono::steady_clock::now();
  Recorder rec("losses", 1e-4);
  for (std::size_t k = 0; k < o.seeds; ++k) {
    const std::uint64_t seed = mix_seed(o.seed, k, 10);
    Rng rng = make_rng(seed);
    auto z = random_tensor(rng, {2, 1, 4, 4}, -3, 3);
    std::vector<D> t(32);
    for (auto& v : t) v = uniform<D>(rng, 0, 1) < 0.3;
    Tensor<D> target({2, 1, 4, 4}, t);
    const auto reps = check_leaves<D>([&] { return total_loss(z, target); }, {{"logits", z}}, grad_options(seed));
    rec.check(worst(reps), "total_loss gradient", seed);
    NoGradScope<D> ng;
    const D sum3 = soft_iou_loss(z, target).item() + dice_loss(z, target).item() + focal_loss(z, target).item();
    rec.check(std::abs(total_loss(z, target).item() - sum3), 1e-15, "additivity", seed);
    rec.require(total_loss(z, target).item() >= 0, "non-negative", seed);
  }
  return rec.done(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
}

inline SuiteResult metric_oracles(const Options& o) {
  const auto t0 = std::chrono::steady_clock::now();
  Recorder rec("metric-oracles", 0);
  Rng rng = make_rng(o.seed, 11);
  EvalAccumulator acc;
  std::uint64_t tp_sum = 0, uni_sum = 0;
  double niou_sum = 0, f1_sum = 0;
  const std::size_t n = 1000;
  for (std::size_t s = 0; s < n; ++s) {
    const std::size_t len = 1 + rng() % 64;
    const double pp = s % 10 == 0 ? 0 : uniform<double>(rng, 0, 0.5), pt = s % 7 == 0 ? 0 : uniform<double>(rng, 0, 0.5);
    std::vector<std::uint8_t> p(len), t(len);
    for (std::size_t i = 0; i < len; ++i) {
      p[i] = uniform<double>(rng, 0, 1) < pp;
      t[i] = uniform<double>(rng, 0, 1) < pt;
    }
    if (s % 13 == 0) t = p;  // perfect
    if (s % 17 == 0)         // disjoint
      for (std::size_t i = 0; i < len; ++i) t[i] = !p[i] && (i % 2);
    const auto c = count_pixels<std::uint8_t, std::uint8_t>(p, t);
    std::uint64_t tp = 0, tt = 0, pc = 0;
    for (std::size_t i = 0; i < len; ++i) {
      tp += p[i] && t[i];
      tt += t[i];
      pc += p[i];
    }
    rec.require(c.tp == tp && c.t == tt && c.p == pc, "pixel counts", s);
    acc.add(c);
    tp_sum += tp;
    uni_sum += tt + pc - tp;
    niou_sum += (tt + pc - tp) == 0 ? 1.0 : double(tp) / double(tt + pc - tp);
    f1_sum += (tt + pc) == 0 ? 1.0 : 2.0 * double(tp) / double(tt + pc);
  }
  const double iou = uni_sum ? double(tp_sum) / double(uni_sum) : 1.0;
  rec.check(std::abs(acc.iou() - iou), 0, "iou", o.seed);
  rec.check(std::abs(acc.niou() - niou_sum / n), 1e-12, "niou", o.seed);
  rec.check(std::abs(acc.f1() - f1_sum / n), 1e-12, "f1", o.seed);
  return rec.done(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
}

// --------------------------------------------------------------------- data

inline SuiteResult data_integrity(const Options& o) {
  const auto t0 = std::chrono::steady_clock::now();
  Recorder rec("data-integrity", 0);
  SceneConfig cfg;
  cfg.height = cfg.width = 64;
  cfg.seed = o.seed;
  for (std::uint64_t i = 0; i < 50; ++i) {
    const auto s = generate_scene(cfg, i);
    std::size_t total = 0;
    for (const auto& t : s.targets) {
      total += t.area;
      rec.require(t.area <= cfg.area_cap * 64 * 64, "target area cap", i);
    }
    rec.require(total == s.mask_area(), "metadata areas sum to mask area", i);
    const auto again = generate_scene(cfg, i);
    rec.require(again.image == s.image && again.mask == s.mask, "determinism", i);
    const auto g = image_to_gray(s.image, 64, 64);
    rec.require(decode_pgm(encode_pgm(g)).pixels == g.pixels, "pgm round trip", i);
    const auto a = augment(s, mix_seed(o.seed, i));
    rec.require(std::all_of(a.mask.begin(), a.mask.end(), [](auto v) { return v <= 1; }), "augmented mask binary", i);
  }
  return rec.done(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
}

// -------------------------------------------------------------------- model

/// Every trainable tensor of the 64x64 desk model: sampled coordinates plus
/// a random direction, against central differences.
inline SuiteResult model_gradients(const Options& o, std::size_t coords_per_tensor = 3) {
  const auto t0 = std::chrono::steady_clock::now();
  Recorder rec("model-gradients", 1e-4);
  for (std::size_t k = 0; k < o.model_seeds; ++k) {
    const std::uint64_t seed = mix_seed(o.seed, k, 12);
    ModelConfig cfg;
    cfg.seed = seed;
    SamambaNet<D> net(cfg);
    Rng rng = make_rng(seed, 13);
    auto img = random_tensor(rng, {1, 3, 64, 64}, 0, 1, false);
    std::vector<D> t(64 * 64);
    for (auto& v : t) v = uniform<D>(rng, 0, 1) < 0.1;
    Tensor<D> target({1, 1, 64, 64}, t);
    Leaves leaves;
    for (auto& p : net.params())
      if (!p.buffer && p.tensor.requires_grad()) leaves.push_back({p.name, p.tensor});
    const auto reps = check_leaves<D>([&] { return total_loss(net.forward(img, true), target); }, leaves,
                                      grad_options(seed, coords_per_tensor));
    for (const auto& r : reps) rec.check(std::max(r.coords.max_rel_error, r.directional), "param=" + r.name, seed);
  }
  return rec.done(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
}

inline std::vector<std::function<SuiteResult(const Options&)>> suites(const Options& o) {
  std::vector<std::function<SuiteResult(const Options&)>> s{
      op_gradients, broadcasting, ssm_duality, ssm_selective, scan_scaling, block_gradients, fs_adapter_algebra,
      dpcf_gating,  csi_recombination, losses, metric_oracles, data_integrity};
  if (o.include_model) s.push_back([](const Options& opt) { return model_gradients(opt); });
  return s;
}

inline std::string format(const SuiteResult& r) {
  std::ostringstream out;
  out << "suite=" << r.name << " status=" << (r.passed ? "PASS" : "FAIL") << " max_error=" << Recorder::fmt(r.max_error)
      << " tolerance=" << Recorder::fmt(r.tolerance) << " seconds=" << std::fixed << std::setprecision(2) << r.seconds;
  if (!r.passed) out << " failure=\"" << r.failure << "\"";
  return out.str();
}

}  // namespace samamba::verify
