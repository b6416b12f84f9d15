#pragma once

#include <cmath>
#include <vector>

#include "samamba/tensor.hpp"

namespace samamba {

template <typename T>
struct AdamState {
  T lr = T(1e-4);
  T beta1 = T(0.9);
  T beta2 = T(0.999);
  T eps = T(1e-8);
  std::uint64_t step = 0;
  std::vector<std::vector<T>> m, v;
};

/// One bias-corrected Adam update over `params`. Missing grads count as zero.
template <typename T>
void adam_step(std::vector<Tensor<T>>& params, AdamState<T>& s) {
  if (!(s.lr > 0)) throw DomainError("Adam learning rate must be positive");
  if (s.m.empty()) {
    for (const auto& p : params) {
      s.m.emplace_back(p.size(), T(0));
      s.v.emplace_back(p.size(), T(0));
    }
  }
  if (s.m.size() != params.size()) throw ShapeError("Adam state does not match parameter list");
  ++s.step;
  const T bc1 = T(1) - std::pow(s.beta1, static_cast<T>(s.step));
  const T bc2 = T(1) - std::pow(s.beta2, static_cast<T>(s.step));
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto& p = params[k];
    if (s.m[k].size() != p.size()) throw ShapeError("Adam moment buffer shape mismatch");
    if (!p.has_grad()) continue;
    auto w = p.mutable_data();
    const auto g = p.grad();
    auto& m = s.m[k];
    auto& v = s.v[k];
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = s.beta1 * m[i] + (T(1) - s.beta1) * g[i];
      v[i] = s.beta2 * v[i] + (T(1) - s.beta2) * g[i] * g[i];
      w[i] -= s.lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + s.eps);
    }
  }
}

/// Step decay: base * factor^floor(epoch / every).
inline double step_lr(double base, std::size_t epoch, std::size_t every = 100, double factor = 0.1) {
  return base * std::pow(factor, static_cast<double>(epoch / every));
}

}  // namespace samamba
