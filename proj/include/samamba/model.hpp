#pragma once

// U-shaped segmentation network.
//
// encoder: 4 stages at strides 4, 8, 16, 32; each stage downsamples, runs an
//          FS-Adapter, then residual conv blocks
// skips:   CSI per stage (or a plain 1x1 alignment) to a common width c
// decoder: DPCF fusions 32->16, 16->8, 8->4
// head:    transposed conv x4 -> SiLU -> 3x3 conv block -> 1x1 conv to logits

#include <array>
#include <string>
#include <vector>

#include "samamba/checkpoint.hpp"
#include "samamba/config.hpp"
#include "samamba/csi.hpp"
#include "samamba/dpcf.hpp"
#include "samamba/fs_adapter.hpp"

namespace samamba {

inline constexpr std::size_t kStageCount = 4;
inline constexpr std::size_t kInputChannels = 3;
// Initial classifier bias; sigmoid(-6) ~ 0.25% foreground.
inline constexpr double kHeadPriorBias = -6.0;

template <typename T>
struct EncoderStage {
  ConvBlock<T> down;
  FsAdapter<T> adapter;
  std::vector<ConvBlock<T>> blocks;

  EncoderStage() = default;
  EncoderStage(std::size_t in, std::size_t out, bool stem, const ModelConfig& cfg, Rng& rng)
      : down(in, out, stem ? 7 : 3, rng, stem ? 4 : 2), adapter(out, rng, cfg.fs_selection) {
    for (std::size_t i = 0; i < cfg.blocks_per_stage; ++i) blocks.emplace_back(out, out, 3, rng);
  }

  Tensor<T> operator()(const Tensor<T>& x, bool training) {
    Tensor<T> y = adapter(down(x, training));
    for (auto& b : blocks) y = add(y, b(y, training));
    return y;
  }

  void collect_backbone(ParamList<T>& out, const std::string& prefix) const {
    down.collect(out, prefix + ".down");
    for (std::size_t i = 0; i < blocks.size(); ++i) blocks[i].collect(out, prefix + ".block" + std::to_string(i));
  }
};

using FeaturePyramidShape = std::array<Shape, kStageCount>;

template <typename T>
struct SamambaNet {
  ModelConfig cfg;
  std::array<EncoderStage<T>, kStageCount> encoder;
  std::array<Csi<T>, kStageCount> csi;
  std::array<Conv<T>, kStageCount> skip;  // used when CSI is disabled
  std::array<Dpcf<T>, kStageCount - 1> decoder;
  Tensor<T> deconv_w;  // [c, head, 4, 4]
  Tensor<T> deconv_b;
  ConvBlock<T> head_block;
  Conv<T> classifier;

  explicit SamambaNet(const ModelConfig& config) : cfg(config) {
    cfg.validate();
    Rng rng = make_rng(cfg.seed, 0x5a3a);
    const auto& w = cfg.stage_widths;
    const std::size_t c = cfg.csi_width;
    for (std::size_t i = 0; i < kStageCount; ++i)
      encoder[i] = EncoderStage<T>(i ? w[i - 1] : kInputChannels, w[i], i == 0, cfg, rng);
    CsiOptions o;
    o.width = c;
    o.heads = cfg.csi_heads;
    o.state_dim = cfg.state_dim;
    o.mlp_ratio = cfg.mlp_ratio;
    o.bidirectional = cfg.bidirectional;
    o.attn_ratio = cfg.attn_ratio;
    o.spatial_kernel = cfg.spatial_kernel;
    o.pooling = cfg.attn_pooling;
    for (std::size_t i = 0; i < kStageCount; ++i) {
      if (cfg.use_csi)
        csi[i] = Csi<T>(w[i], o, rng);
      else
        skip[i] = Conv<T>(w[i], c, 1, rng);
    }
    for (std::size_t i = 0; i + 1 < kStageCount; ++i) decoder[i] = Dpcf<T>(c, c, cfg.dpcf_segments, cfg.fusion, rng);
    const std::size_t hc = cfg.head_channels;
    deconv_w = lecun_uniform<T>(rng, {c, hc, 4, 4}, c);
    deconv_b = Tensor<T>::zeros({hc}, true);
    head_block = ConvBlock<T>(hc, hc, 3, rng);
    classifier = Conv<T>(hc, 1, 1, rng);
    // Targets cover a tiny fraction of pixels; start near the background prior.
    classifier.bias->mutable_data()[0] = T(kHeadPriorBias);
    set_frozen(cfg.freeze_encoder);
  }

  static void check_input(const Shape& s) {
    if (s.size() != 4 || s[1] != kInputChannels)
      throw ShapeError("model input must be [B,3,H,W], got " + to_string(s));
    if (s[2] == 0 || s[3] == 0 || s[2] % 32 || s[3] % 32)
      throw ShapeError("input extents must be positive multiples of 32, got " + to_string(s));
  }

  /// Encoder features X_i of shape [B, C_i, H/2^{i+2}, W/2^{i+2}].
  std::array<Tensor<T>, kStageCount> encode(const Tensor<T>& image, bool training) {
    check_input(image.shape());
    std::array<Tensor<T>, kStageCount> f;
    Tensor<T> x = image;
    for (std::size_t i = 0; i < kStageCount; ++i) x = f[i] = encoder[i](x, training);
    return f;
  }

  Tensor<T> skip_path(std::size_t i, const Tensor<T>& f, bool training) {
    return cfg.use_csi ? csi[i](f, training) : skip[i](f);
  }

  Tensor<T> head(const Tensor<T>& d, bool training) {
    const Tensor<T> up = silu(conv_transpose2d(d, deconv_w, std::optional<Tensor<T>>(deconv_b), 4, 0));
    return classifier(head_block(up, training));
  }

  /// Logits [B, 1, H, W].
  Tensor<T> forward(const Tensor<T>& image, bool training) {
    const auto f = encode(image, training);
    Tensor<T> d = skip_path(kStageCount - 1, f[kStageCount - 1], training);
    for (std::size_t i = kStageCount - 1; i-- > 0;) d = decoder[i](skip_path(i, f[i], training), d, training);
    return head(d, training);
  }

  Tensor<T> operator()(const Tensor<T>& image, bool training) { return forward(image, training); }

  void collect(ParamList<T>& out) const {
    for (std::size_t i = 0; i < kStageCount; ++i) {
      const std::string p = "encoder" + std::to_string(i);
      encoder[i].collect_backbone(out, p);
      encoder[i].adapter.collect(out, p + ".adapter");
    }
    for (std::size_t i = 0; i < kStageCount; ++i) {
      if (cfg.use_csi)
        csi[i].collect(out, "csi" + std::to_string(i));
      else
        skip[i].collect(out, "skip" + std::to_string(i));
    }
    for (std::size_t i = 0; i + 1 < kStageCount; ++i) decoder[i].collect(out, "dpcf" + std::to_string(i));
    out.push_back({"head.deconv.weight", deconv_w});
    out.push_back({"head.deconv.bias", deconv_b});
    head_block.collect(out, "head.block");
    classifier.collect(out, "head.classifier");
  }

  ParamList<T> params() const {
    ParamList<T> out;
    collect(out);
    return out;
  }

  /// Backbone weights (everything in the encoder except the adapters).
  ParamList<T> backbone_params() const {
    ParamList<T> out;
    for (std::size_t i = 0; i < kStageCount; ++i) encoder[i].collect_backbone(out, "encoder" + std::to_string(i));
    return out;
  }

  void set_frozen(bool frozen) {
    for (auto& p : backbone_params())
      if (!p.buffer) p.tensor.set_requires_grad(!frozen);
  }

  /// Tensors the optimizer updates.
  std::vector<Tensor<T>> trainable() const {
    std::vector<Tensor<T>> out;
    for (const auto& p : params())
      if (!p.buffer && p.tensor.requires_grad()) out.push_back(p.tensor);
    return out;
  }

  void zero_grad() {
    for (auto& p : params())
      if (!p.buffer) p.tensor.zero_grad();
  }
};

/// Output shapes of the four encoder stages for a [B,3,H,W] input.
inline FeaturePyramidShape pyramid_shape(const ModelConfig& cfg, std::size_t B, std::size_t H, std::size_t W) {
  FeaturePyramidShape s;
  for (std::size_t i = 0; i < kStageCount; ++i) s[i] = {B, cfg.stage_widths[i], H >> (i + 2), W >> (i + 2)};
  return s;
}

struct ModelCost {
  std::size_t params = 0;
  std::size_t trainable = 0;
  std::uint64_t macs = 0;
};

/// Parameter totals and the analytic multiply-accumulate count of one
/// inference forward at [1,3,H,W].
template <typename T>
ModelCost count_params_flops(SamambaNet<T>& net, std::size_t H, std::size_t W) {
  ModelCost c;
  const auto ps = net.params();
  c.params = count_parameters(ps);
  c.trainable = count_parameters(ps, true);
  auto& mc = detail::mac_counter();
  const auto saved = mc;
  mc = {true, 0};
  {
    NoGradScope<T> ng;
    net.forward(Tensor<T>::zeros({1, kInputChannels, H, W}), false);
  }
  c.macs = mc.macs;
  mc = saved;
  return c;
}

inline constexpr const char* kConfigRecord = "__config__";

/// Checkpoint architecture differs from the requested config.
struct ConfigMismatchError : CheckpointError {
  std::vector<std::string> keys;
  ConfigMismatchError(const std::string& msg, std::vector<std::string> k) : CheckpointError(msg), keys(std::move(k)) {}
};

template <typename T>
void save_model(const std::string& path, const SamambaNet<T>& net) {
  auto records = to_records(net.params());
  records.push_back(make_bytes_record(kConfigRecord, serialize(net.cfg)));
  write_checkpoint(path, records);
}

/// Model config embedded in a checkpoint.
inline ModelConfig checkpoint_config(const std::vector<CheckpointRecord>& records) {
  for (const auto& r : records)
    if (r.name == kConfigRecord) return parse_config(std::string(r.payload.begin(), r.payload.end()));
  throw CheckpointError("checkpoint carries no model config");
}

/// Loads weights into `net`; the architecture keys must match the checkpoint.
template <typename T>
void load_model(const std::vector<CheckpointRecord>& records, SamambaNet<T>& net) {
  ModelConfig stored = checkpoint_config(records);
  stored.seed = net.cfg.seed;
  const auto diff = config_diff(net.cfg, stored);
  if (!diff.empty()) {
    std::string msg = "checkpoint/config mismatch:";
    for (const auto& d : diff) msg += "\n  " + d;
    throw ConfigMismatchError(msg, diff);
  }
  auto ps = net.params();
  load_records(ps, records);
}

template <typename T>
SamambaNet<T> load_model(const std::string& path) {
  const auto records = read_checkpoint(path);
  SamambaNet<T> net(checkpoint_config(records));
  load_model(records, net);
  return net;
}

}  // namespace samamba
