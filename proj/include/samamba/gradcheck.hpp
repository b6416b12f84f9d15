#pragma once

// Central finite-difference verification of reverse-mode gradients.

#include <algorithm>
#include <cmath>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "samamba/rng.hpp"
#include "samamba/tensor.hpp"

namespace samamba {

struct GradCheckOptions {
  double step = 1e-5;
  double tolerance = 1e-4;
  // Relative error is |a - n| / max(|a|, |n|, floor).
  double floor = 1e-6;
  // 0 checks every coordinate; otherwise a seeded random subset of this size.
  std::size_t max_coords = 0;
  std::uint64_t seed = 0;
};

struct GradCheckReport {
  double max_rel_error = 0;
  double max_abs_error = 0;
  std::size_t worst_index = 0;
  double worst_analytic = 0;
  double worst_numeric = 0;
  std::size_t checked = 0;
  bool passed = true;
};

struct NondeterminismError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline double relative_error(double a, double n, double floor) {
  return std::abs(a - n) / std::max({std::abs(a), std::abs(n), floor});
}

/// Checks d loss / d x where `loss()` builds a scalar from leaf `x` (and
/// possibly other leaves). `x` must require grad.
template <typename T>
GradCheckReport finite_diff_check(const std::function<Tensor<T>()>& loss, Tensor<T> x,
                                  const GradCheckOptions& opt = {}) {
  const T base = [&] {
    NoGradScope<T> ng;
    return loss().item();
  }();
  {
    NoGradScope<T> ng;
    if (loss().item() != base) throw NondeterminismError("loss is not deterministic under repeated evaluation");
  }
  x.zero_grad();
  {
    Tape<T> tape;
    TapeScope<T> scope(tape);
    tape.backward(loss());
  }
  const std::vector<T> analytic(x.grad().begin(), x.grad().end());

  std::vector<std::size_t> coords(x.size());
  for (std::size_t i = 0; i < coords.size(); ++i) coords[i] = i;
  if (opt.max_coords && opt.max_coords < coords.size()) {
    Rng rng = make_rng(opt.seed, 0x6ad);
    std::shuffle(coords.begin(), coords.end(), rng);
    coords.resize(opt.max_coords);
    std::sort(coords.begin(), coords.end());
  }

  GradCheckReport r;
  auto data = x.mutable_data();
  NoGradScope<T> ng;
  for (const std::size_t i : coords) {
    const T orig = data[i];
    data[i] = orig + static_cast<T>(opt.step);
    const double fp = loss().item();
    data[i] = orig - static_cast<T>(opt.step);
    const double fm = loss().item();
    data[i] = orig;
    const double numeric = (fp - fm) / (2 * opt.step);
    const double rel = relative_error(analytic[i], numeric, opt.floor);
    if (r.checked++ == 0 || rel > r.max_rel_error) {
      r.max_rel_error = rel;
      r.worst_index = i;
      r.worst_analytic = analytic[i];
      r.worst_numeric = numeric;
    }
    r.max_abs_error = std::max(r.max_abs_error, std::abs(analytic[i] - numeric));
  }
  r.passed = r.max_rel_error <= opt.tolerance;
  return r;
}

/// Convenience overload for a pure function of one input.
template <typename T>
GradCheckReport finite_diff_check(const std::function<Tensor<T>(const Tensor<T>&)>& f, Tensor<T> x,
                                  const GradCheckOptions& opt = {}) {
  x.set_requires_grad(true);
  return finite_diff_check<T>(std::function<Tensor<T>()>([&f, x] { return f(x); }), x, opt);
}

struct LeafReport {
  std::string name;
  GradCheckReport coords;      // sampled coordinates
  double directional = 0;      // relative error along a random direction
};

namespace detail {

template <typename T>
std::vector<LeafReport> check_leaves_impl(const std::function<double()>& value, const std::function<void()>& backward,
                                          std::vector<std::pair<std::string, Tensor<T>>>& leaves,
                                          const GradCheckOptions& opt) {
  {
    NoGradScope<T> ng;
    const double base = value();
    if (value() != base) throw NondeterminismError("loss is not deterministic under repeated evaluation");
  }
  for (auto& [n, x] : leaves) x.zero_grad();
  backward();
  std::vector<LeafReport> out;
  NoGradScope<T> ng;
  Rng rng = make_rng(opt.seed, 0x1eaf);
  for (auto& [name, x] : leaves) {
    LeafReport lr;
    lr.name = name;
    const std::vector<T> analytic = x.has_grad() ? std::vector<T>(x.grad().begin(), x.grad().end())
                                                 : std::vector<T>(x.size(), T(0));
    auto data = x.mutable_data();
    std::vector<std::size_t> coords(x.size());
    for (std::size_t i = 0; i < coords.size(); ++i) coords[i] = i;
    if (opt.max_coords && opt.max_coords < coords.size()) {
      std::shuffle(coords.begin(), coords.end(), rng);
      coords.resize(opt.max_coords);
    }
    auto& r = lr.coords;
    for (const std::size_t i : coords) {
      const T orig = data[i];
      data[i] = orig + static_cast<T>(opt.step);
      const double fp = value();
      data[i] = orig - static_cast<T>(opt.step);
      const double fm = value();
      data[i] = orig;
      const double numeric = (fp - fm) / (2 * opt.step);
      const double rel = relative_error(analytic[i], numeric, opt.floor);
      if (r.checked++ == 0 || rel > r.max_rel_error) {
        r.max_rel_error = rel;
        r.worst_index = i;
        r.worst_analytic = analytic[i];
        r.worst_numeric = numeric;
      }
      r.max_abs_error = std::max(r.max_abs_error, std::abs(analytic[i] - numeric));
    }
    r.passed = r.max_rel_error <= opt.tolerance;
    // Directional derivative along a unit random vector.
    std::vector<T> dir(x.size());
    double norm = 0;
    for (auto& d : dir) {
      d = normal<T>(rng);
      norm += double(d) * double(d);
    }
    norm = std::sqrt(norm);
    double expected = 0;
    for (std::size_t i = 0; i < dir.size(); ++i) {
      dir[i] = static_cast<T>(dir[i] / norm);
      expected += double(analytic[i]) * double(dir[i]);
    }
    const std::vector<T> orig(data.begin(), data.end());
    for (std::size_t i = 0; i < dir.size(); ++i) data[i] = orig[i] + static_cast<T>(opt.step) * dir[i];
    const double fp = value();
    for (std::size_t i = 0; i < dir.size(); ++i) data[i] = orig[i] - static_cast<T>(opt.step) * dir[i];
    const double fm = value();
    std::copy(orig.begin(), orig.end(), data.begin());
    lr.directional = relative_error(expected, (fp - fm) / (2 * opt.step), opt.floor);
    out.push_back(std::move(lr));
  }
  return out;
}

}  // namespace detail

/// One backward pass, then central differences on sampled coordinates of
/// every leaf plus one random-direction derivative per leaf.
template <typename T>
std::vector<LeafReport> check_leaves(const std::function<Tensor<T>()>& loss,
                                     std::vector<std::pair<std::string, Tensor<T>>> leaves,
                                     const GradCheckOptions& opt = {}) {
  return detail::check_leaves_impl<T>(
      [&] { return static_cast<double>(loss().item()); },
      [&] {
        Tape<T> tape;
        TapeScope<T> scope(tape);
        tape.backward(loss());
      },
      leaves, opt);
}

/// Same as check_leaves for a tensor-valued f, projected on fixed weights w:
/// the scalar <w, f> is formed outside the tape, so only f's ops are exercised.
template <typename T>
std::vector<LeafReport> check_vjp(const std::function<Tensor<T>()>& f, const std::vector<T>& w,
                                  std::vector<std::pair<std::string, Tensor<T>>> leaves,
                                  const GradCheckOptions& opt = {}) {
  auto value = [&] {
    const Tensor<T> y = f();
    if (y.size() != w.size()) throw ShapeError("check_vjp: weight count does not match output " + to_string(y.shape()));
    double acc = 0;
    for (std::size_t i = 0; i < w.size(); ++i) acc += double(w[i]) * double(y[i]);
    return acc;
  };
  return detail::check_leaves_impl<T>(
      value,
      [&] {
        Tape<T> tape;
        TapeScope<T> scope(tape);
        const Tensor<T> y = f();
        tape.backward(y, std::span<const T>(w));
      },
      leaves, opt);
}

}  // namespace samamba
