#pragma once

// Network building blocks: linear/MLP, conv + norm + activation bundles and
// CBAM-style channel and spatial attention gates.

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "samamba/conv.hpp"
#include "samamba/norm.hpp"
#include "samamba/rng.hpp"

namespace samamba {

/// A named tensor owned by a module. Buffers (running statistics) are
/// checkpointed but never optimized.
template <typename T>
struct ParamRef {
  std::string name;
  Tensor<T> tensor;
  bool buffer = false;
};

template <typename T>
using ParamList = std::vector<ParamRef<T>>;

template <typename T>
Tensor<T> uniform_tensor(Rng& rng, const Shape& shape, T bound) {
  std::vector<T> v(numel(shape));
  for (auto& x : v) x = uniform<T>(rng, -bound, bound);
  return Tensor<T>(shape, std::move(v), true);
}

/// LeCun-uniform: variance 1/fan_in.
template <typename T>
Tensor<T> lecun_uniform(Rng& rng, const Shape& shape, std::size_t fan_in) {
  return uniform_tensor<T>(rng, shape, static_cast<T>(std::sqrt(3.0 / static_cast<double>(fan_in))));
}

enum class Activation { kIdentity, kRelu, kSilu, kSigmoid };

template <typename T>
Tensor<T> activate(Activation a, const Tensor<T>& x) {
  switch (a) {
    case Activation::kRelu: return relu(x);
    case Activation::kSilu: return silu(x);
    case Activation::kSigmoid: return sigmoid(x);
    case Activation::kIdentity: break;
  }
  return x;
}

template <typename T>
struct Linear {
  Tensor<T> weight;  // [in, out]
  std::optional<Tensor<T>> bias;

  Linear() = default;
  Linear(std::size_t in, std::size_t out, Rng& rng, bool with_bias = true)
      : weight(lecun_uniform<T>(rng, {in, out}, in)) {
    if (with_bias) bias = Tensor<T>::zeros({out}, true);
  }

  Tensor<T> operator()(const Tensor<T>& x) const {
    Tensor<T> y = matmul(x, weight);
    return bias ? add(y, *bias) : y;
  }

  void collect(ParamList<T>& out, const std::string& prefix) const {
    out.push_back({prefix + ".weight", weight});
    if (bias) out.push_back({prefix + ".bias", *bias});
  }
};

/// Two linear layers with an activation between; preserves the trailing extent.
template <typename T>
struct Mlp {
  Linear<T> fc1, fc2;
  Activation act = Activation::kSilu;

  Mlp() = default;
  Mlp(std::size_t dim, std::size_t hidden, Rng& rng, std::size_t out = 0)
      : fc1(dim, hidden, rng), fc2(hidden, out ? out : dim, rng) {}

  Tensor<T> operator()(const Tensor<T>& x) const { return fc2(activate(act, fc1(x))); }

  void collect(ParamList<T>& out, const std::string& prefix) const {
    fc1.collect(out, prefix + ".fc1");
    fc2.collect(out, prefix + ".fc2");
  }
};

template <typename T>
struct Conv {
  Tensor<T> weight;  // [out, in, k, k]
  std::optional<Tensor<T>> bias;
  std::size_t stride = 1, pad = 0;

  Conv() = default;
  Conv(std::size_t in, std::size_t out, std::size_t k, Rng& rng, std::size_t stride_ = 1,
       bool with_bias = true)
      : weight(lecun_uniform<T>(rng, {out, in, k, k}, in * k * k)), stride(stride_), pad(k / 2) {
    if (with_bias) bias = Tensor<T>::zeros({out}, true);
  }

  std::size_t in_channels() const { return weight.dim(1); }
  std::size_t out_channels() const { return weight.dim(0); }

  Tensor<T> operator()(const Tensor<T>& x) const { return conv2d(x, weight, bias, stride, pad); }

  void collect(ParamList<T>& out, const std::string& prefix) const {
    out.push_back({prefix + ".weight", weight});
    if (bias) out.push_back({prefix + ".bias", *bias});
  }
};

template <typename T>
struct BatchNorm {
  Tensor<T> gamma, beta;
  BatchNormStats<T> stats;

  BatchNorm() = default;
  explicit BatchNorm(std::size_t channels)
      : gamma(Tensor<T>::full({channels}, T(1), true)), beta(Tensor<T>::zeros({channels}, true)),
        stats(channels) {}

  Tensor<T> operator()(const Tensor<T>& x, bool training) {
    return batch_norm2d(x, gamma, beta, stats, training);
  }

  void collect(ParamList<T>& out, const std::string& prefix) const {
    out.push_back({prefix + ".gamma", gamma});
    out.push_back({prefix + ".beta", beta});
    out.push_back({prefix + ".running_mean", stats.running_mean, true});
    out.push_back({prefix + ".running_var", stats.running_var, true});
  }
};

/// conv -> batch norm -> activation; stride 1 with same padding keeps extents.
template <typename T>
struct ConvBlock {
  Conv<T> conv;
  BatchNorm<T> norm;
  Activation act = Activation::kSilu;

  ConvBlock() = default;
  ConvBlock(std::size_t in, std::size_t out, std::size_t k, Rng& rng, std::size_t stride = 1,
            Activation a = Activation::kSilu)
      : conv(in, out, k, rng, stride, false), norm(out), act(a) {}

  Tensor<T> operator()(const Tensor<T>& x, bool training) { return activate(act, norm(conv(x), training)); }

  void collect(ParamList<T>& out, const std::string& prefix) const {
    conv.collect(out, prefix + ".conv");
    norm.collect(out, prefix + ".bn");
  }
};

enum class AttentionPooling { kAvgMax, kAvg };

/// M_c = sigmoid(MLP(avgpool(x)) + MLP(maxpool(x))), shape [B,C,1,1].
template <typename T>
struct ChannelAttention {
  Mlp<T> mlp;
  AttentionPooling pooling = AttentionPooling::kAvgMax;

  ChannelAttention() = default;
  ChannelAttention(std::size_t channels, std::size_t ratio, Rng& rng,
                   AttentionPooling p = AttentionPooling::kAvgMax)
      : mlp(channels, std::max<std::size_t>(1, channels / ratio), rng), pooling(p) {}

  Tensor<T> operator()(const Tensor<T>& x) const {
    const std::size_t B = x.dim(0), C = x.dim(1);
    Tensor<T> logits = mlp(reshape(mean_axes(x, {2, 3}), {B, C}));
    if (pooling == AttentionPooling::kAvgMax)
      logits = add(logits, mlp(reshape(max_axes(x, {2, 3}), {B, C})));
    return reshape(sigmoid(logits), {B, C, 1, 1});
  }

  void collect(ParamList<T>& out, const std::string& prefix) const { mlp.collect(out, prefix + ".mlp"); }
};

/// M_s = sigmoid(conv_k([mean_c(x), max_c(x)])), shape [B,1,H,W].
template <typename T>
struct SpatialAttention {
  Conv<T> conv;
  AttentionPooling pooling = AttentionPooling::kAvgMax;

  SpatialAttention() = default;
  SpatialAttention(std::size_t kernel, Rng& rng, AttentionPooling p = AttentionPooling::kAvgMax)
      : conv(p == AttentionPooling::kAvgMax ? 2 : 1, 1, kernel, rng), pooling(p) {}

  Tensor<T> operator()(const Tensor<T>& x) const {
    Tensor<T> pooled = mean_axes(x, {1});
    if (pooling == AttentionPooling::kAvgMax) pooled = concat<T>({pooled, max_axes(x, {1})}, 1);
    return sigmoid(conv(pooled));
  }

  void collect(ParamList<T>& out, const std::string& prefix) const { conv.collect(out, prefix + ".conv"); }
};

template <typename T>
std::size_t count_parameters(const ParamList<T>& params, bool trainable_only = false) {
  std::size_t n = 0;
  for (const auto& p : params)
    if (!p.buffer && (!trainable_only || p.tensor.requires_grad())) n += p.tensor.size();
  return n;
}

}  // namespace samamba
