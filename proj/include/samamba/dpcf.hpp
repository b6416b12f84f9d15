#pragma once

// Decoder fusion of a high-resolution skip feature h with upsampled
// low-resolution context l. Channels are cut into S segments and each
// segment is blended as beta_s * l + (1 - beta_s) * h with
// beta_s = sigmoid(alpha_s), then the result is refined by conv -> BN -> SiLU.

#include <optional>
#include <string>
#include <vector>

#include "samamba/blocks.hpp"

namespace samamba {

enum class Fusion { kAdd, kConcat, kAdaptive };

inline const char* fusion_name(Fusion f) {
  switch (f) {
    case Fusion::kAdd: return "add";
    case Fusion::kConcat: return "concat";
    case Fusion::kAdaptive: return "adaptive";
  }
  return "?";
}

inline Fusion parse_fusion(const std::string& s) {
  if (s == "add") return Fusion::kAdd;
  if (s == "concat") return Fusion::kConcat;
  if (s == "adaptive") return Fusion::kAdaptive;
  throw ConfigError("unknown fusion strategy '" + s + "' (expected add, concat or adaptive)");
}

template <typename T>
struct Dpcf {
  Fusion fusion = Fusion::kAdaptive;
  std::size_t segments = 4;
  std::optional<Conv<T>> align;  // low -> high channel alignment when widths differ
  Tensor<T> alpha;               // [segments], adaptive only
  ConvBlock<T> refine;

  Dpcf() = default;
  Dpcf(std::size_t channels, std::size_t low_channels, std::size_t segments_, Fusion f, Rng& rng)
      : fusion(f), segments(segments_) {
    if (segments == 0 || channels % segments)
      throw ConfigError("DPCF width " + std::to_string(channels) + " is not divisible by " + std::to_string(segments) + " segments");
    if (low_channels != channels) align.emplace(low_channels, channels, 1, rng);
    if (f == Fusion::kAdaptive) alpha = Tensor<T>::zeros({segments}, true);
    refine = ConvBlock<T>(f == Fusion::kConcat ? 2 * channels : channels, channels, 3, rng);
  }

  /// Low-resolution input aligned to the channel count and extents of `high`.
  Tensor<T> lift(const Tensor<T>& high, const Tensor<T>& low) const {
    if (low.dim(2) > high.dim(2) || low.dim(3) > high.dim(3))
      throw ShapeError("DPCF low-resolution input " + to_string(low.shape()) + " is larger than " + to_string(high.shape()));
    const Tensor<T> l = align ? (*align)(low) : low;
    if (l.dim(2) == high.dim(2) && l.dim(3) == high.dim(3)) return l;
    return upsample_bilinear(l, high.dim(2), high.dim(3));
  }

  /// Gated blend before refinement (adaptive only).
  Tensor<T> blend(const Tensor<T>& high, const Tensor<T>& l) const {
    const auto hs = split(high, 1, segments);
    const auto ls = split(l, 1, segments);
    std::vector<Tensor<T>> out;
    for (std::size_t s = 0; s < segments; ++s) {
      const Tensor<T> beta = sigmoid(slice(alpha, 0, s, s + 1));
      out.push_back(add(mul(ls[s], beta), mul(hs[s], sub(Tensor<T>::scalar(T(1)), beta))));
    }
    return concat(out, 1);
  }

  /// Fused features before the refinement block.
  Tensor<T> pre_refine(const Tensor<T>& high, const Tensor<T>& low) const {
    const Tensor<T> l = lift(high, low);
    switch (fusion) {
      case Fusion::kAdd: return add(high, l);
      case Fusion::kConcat: return concat<T>({high, l}, 1);
      case Fusion::kAdaptive: break;
    }
    return blend(high, l);
  }

  Tensor<T> operator()(const Tensor<T>& high, const Tensor<T>& low, bool training) {
    return refine(pre_refine(high, low), training);
  }

  void collect(ParamList<T>& out, const std::string& prefix) const {
    if (align) align->collect(out, prefix + ".align");
    if (fusion == Fusion::kAdaptive) out.push_back({prefix + ".alpha", alpha});
    refine.collect(out, prefix + ".refine");
  }
};

}  // namespace samamba
