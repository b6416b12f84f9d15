#pragma once

// Cross-channel state-space interaction on a skip connection.
//
// align (1x1) -> raster tokens [B, HW, c] -> split into H heads of width d
// -> per head m = MLP(LN(Mamba(m'))) + gamma * m'
// -> recombine channel j of every head into group h_j = [m_1^j .. m_H^j]
// -> 1x1 W_outer -> BN -> SiLU -> channel gate -> spatial gate

#include <cmath>
#include <string>
#include <vector>

#include "samamba/blocks.hpp"
#include "samamba/ssm.hpp"

namespace samamba {

/// Selective-scan parameters for a D-channel sequence, Mamba-style init:
/// A_n = -(n+1), softplus(delta_bias) log-uniform in [1e-3, 1e-1].
template <typename T>
ssm::SsmParams<T> init_selective(std::size_t D, std::size_t N, Rng& rng) {
  ssm::SsmParams<T> p;
  p.mode = ssm::Mode::kSelective;
  p.state_dim = N;
  std::vector<T> a_log(D * N);
  for (std::size_t d = 0; d < D; ++d)
    for (std::size_t n = 0; n < N; ++n) a_log[d * N + n] = static_cast<T>(std::log(static_cast<double>(n + 1)));
  p.a_log = Tensor<T>({D, N}, std::move(a_log), true);
  p.w_delta = lecun_uniform<T>(rng, {D, D}, D);
  std::vector<T> bias(D);
  for (auto& b : bias) {
    const double dt = std::exp(uniform<double>(rng, std::log(1e-3), std::log(1e-1)));
    b = static_cast<T>(std::log(std::expm1(dt)));
  }
  p.delta_bias = Tensor<T>({D}, std::move(bias), true);
  p.w_b = lecun_uniform<T>(rng, {D, N}, D);
  p.w_c = lecun_uniform<T>(rng, {D, N}, D);
  return p;
}

template <typename T>
void collect_ssm(const ssm::SsmParams<T>& p, ParamList<T>& out, const std::string& prefix) {
  out.push_back({prefix + ".a_log", p.a_log});
  out.push_back({prefix + ".w_delta", p.w_delta});
  out.push_back({prefix + ".delta_bias", p.delta_bias});
  out.push_back({prefix + ".w_b", p.w_b});
  out.push_back({prefix + ".w_c", p.w_c});
}

/// One VIM head: m = MLP(LN(scan(m'))) + gamma * m'.
template <typename T>
struct VimBlock {
  ssm::SsmParams<T> fwd, bwd;
  bool bidirectional = true;
  Tensor<T> ln_gamma, ln_beta;
  Mlp<T> mlp;
  Tensor<T> gamma;  // scalar residual scale

  VimBlock() = default;
  VimBlock(std::size_t d, std::size_t state_dim, std::size_t mlp_ratio, bool bidir, Rng& rng)
      : fwd(init_selective<T>(d, state_dim, rng)), bidirectional(bidir),
        ln_gamma(Tensor<T>::full({d}, T(1), true)), ln_beta(Tensor<T>::zeros({d}, true)),
        mlp(d, d * mlp_ratio, rng), gamma(Tensor<T>::full({1}, T(1), true)) {
    if (bidir) bwd = init_selective<T>(d, state_dim, rng);
  }

  Tensor<T> mamba(const Tensor<T>& m) const {
    return bidirectional ? ssm::bidirectional_scan(m, fwd, bwd) : ssm::selective_scan(m, fwd);
  }

  Tensor<T> operator()(const Tensor<T>& m) const {
    const Tensor<T> y = mlp(layer_norm(mamba(m), ln_gamma, ln_beta, T(kLayerNormEps)));
    return add(y, mul(m, gamma));
  }

  void collect(ParamList<T>& out, const std::string& prefix) const {
    collect_ssm(fwd, out, prefix + ".fwd");
    if (bidirectional) collect_ssm(bwd, out, prefix + ".bwd");
    out.push_back({prefix + ".ln.gamma", ln_gamma});
    out.push_back({prefix + ".ln.beta", ln_beta});
    mlp.collect(out, prefix + ".mlp");
    out.push_back({prefix + ".gamma", gamma});
  }
};

/// perm[k] is the source channel of recombined channel k:
/// k = j * heads + i  <-  head i, channel j  =  i * d + j.
inline std::vector<std::size_t> recombination_index(std::size_t channels, std::size_t heads) {
  if (heads == 0 || channels % heads) throw ConfigError("CSI width " + std::to_string(channels) + " is not divisible by " + std::to_string(heads) + " heads");
  const std::size_t d = channels / heads;
  std::vector<std::size_t> perm(channels);
  for (std::size_t k = 0; k < channels; ++k) perm[k] = (k % heads) * d + k / heads;
  return perm;
}

inline std::vector<std::size_t> inverse_index(const std::vector<std::size_t>& perm) {
  std::vector<std::size_t> inv(perm.size());
  for (std::size_t k = 0; k < perm.size(); ++k) inv[perm[k]] = k;
  return inv;
}

struct CsiOptions {
  std::size_t width = 32;
  std::size_t heads = 4;
  std::size_t state_dim = 16;
  std::size_t mlp_ratio = 2;
  bool bidirectional = true;
  std::size_t attn_ratio = 4;
  std::size_t spatial_kernel = 7;
  AttentionPooling pooling = AttentionPooling::kAvgMax;
};

template <typename T>
struct Csi {
  struct Trace {
    Tensor<T> aligned;               // [B, c, H, W]
    std::vector<Tensor<T>> segments;  // m'_i, [B, HW, d]
    std::vector<Tensor<T>> heads;     // m_i,  [B, HW, d]
    Tensor<T> recombined;             // [B, HW, c]
    Tensor<T> fused;                  // F_o
    Tensor<T> output;                 // F_s
  };

  Conv<T> align;
  std::vector<VimBlock<T>> blocks;
  Conv<T> outer;
  BatchNorm<T> norm;
  ChannelAttention<T> channel_gate;
  SpatialAttention<T> spatial_gate;
  std::vector<std::size_t> perm;

  Csi() = default;
  Csi(std::size_t in_channels, const CsiOptions& o, Rng& rng)
      : align(in_channels, o.width, 1, rng), outer(o.width, o.width, 1, rng, 1, false), norm(o.width),
        channel_gate(o.width, o.attn_ratio, rng, o.pooling), spatial_gate(o.spatial_kernel, rng, o.pooling),
        perm(recombination_index(o.width, o.heads)) {
    for (std::size_t i = 0; i < o.heads; ++i)
      blocks.emplace_back(o.width / o.heads, o.state_dim, o.mlp_ratio, o.bidirectional, rng);
  }

  std::size_t width() const { return outer.out_channels(); }
  std::size_t heads() const { return blocks.size(); }

  Trace trace(const Tensor<T>& x, bool training) {
    Trace tr;
    tr.aligned = align(x);
    const std::size_t B = x.dim(0), c = width(), H = x.dim(2), W = x.dim(3);
    const Tensor<T> tokens = permute(reshape(tr.aligned, {B, c, H * W}), {0, 2, 1});
    tr.segments = split(tokens, 2, heads());
    for (std::size_t i = 0; i < heads(); ++i) tr.heads.push_back(blocks[i](tr.segments[i]));
    tr.recombined = index_select(concat(tr.heads, 2), 2, perm);
    const Tensor<T> spatial = reshape(permute(tr.recombined, {0, 2, 1}), {B, c, H, W});
    tr.fused = silu(norm(outer(spatial), training));
    const Tensor<T> fc = mul(tr.fused, channel_gate(tr.fused));
    tr.output = mul(fc, spatial_gate(fc));
    return tr;
  }

  Tensor<T> operator()(const Tensor<T>& x, bool training) { return trace(x, training).output; }

  void collect(ParamList<T>& out, const std::string& prefix) const {
    align.collect(out, prefix + ".align");
    for (std::size_t i = 0; i < blocks.size(); ++i) blocks[i].collect(out, prefix + ".head" + std::to_string(i));
    outer.collect(out, prefix + ".outer");
    norm.collect(out, prefix + ".bn");
    channel_gate.collect(out, prefix + ".channel_gate");
    spatial_gate.collect(out, prefix + ".spatial_gate");
  }
};

}  // namespace samamba
