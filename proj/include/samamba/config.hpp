#pragma once

// Model configuration and its plain-text key=value form.
//
//   # comment
//   stage_widths = 16,32,64,128
//   csi_heads = 4
//
// Unknown keys are rejected. Serialization emits every key, so a written
// file fully determines the architecture.

#include <algorithm>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "samamba/blocks.hpp"
#include "samamba/dpcf.hpp"
#include "samamba/fs_adapter.hpp"

namespace samamba {

struct ModelConfig {
  std::vector<std::size_t> stage_widths{16, 32, 64, 128};
  std::size_t blocks_per_stage = 1;
  bool freeze_encoder = false;
  FsSelection fs_selection = FsSelection::kToken;
  bool use_csi = true;
  std::size_t csi_width = 32;
  std::size_t csi_heads = 4;
  std::size_t state_dim = 16;
  bool bidirectional = true;
  std::size_t mlp_ratio = 2;
  std::size_t attn_ratio = 4;
  std::size_t spatial_kernel = 7;
  AttentionPooling attn_pooling = AttentionPooling::kAvgMax;
  std::size_t dpcf_segments = 4;
  Fusion fusion = Fusion::kAdaptive;
  std::size_t head_channels = 8;
  std::uint64_t seed = 0;

  static ModelConfig reference_scale() {
    ModelConfig c;
    c.stage_widths = {96, 192, 384, 768};
    c.csi_width = 128;
    return c;
  }

  void validate() const {
    if (stage_widths.size() != 4) throw ConfigError("stage_widths must list exactly 4 widths");
    for (auto w : stage_widths)
      if (w == 0) throw ConfigError("stage widths must be positive");
    if (csi_heads == 0 || csi_width % csi_heads)
      throw ConfigError("csi_width " + std::to_string(csi_width) + " is not divisible by csi_heads " + std::to_string(csi_heads));
    if (dpcf_segments == 0 || csi_width % dpcf_segments)
      throw ConfigError("csi_width " + std::to_string(csi_width) + " is not divisible by dpcf_segments " + std::to_string(dpcf_segments));
    if (spatial_kernel % 2 == 0) throw ConfigError("spatial_kernel must be odd");
    if (state_dim == 0 || mlp_ratio == 0 || attn_ratio == 0 || head_channels == 0 || blocks_per_stage == 0)
      throw ConfigError("state_dim, mlp_ratio, attn_ratio, head_channels and blocks_per_stage must be positive");
  }
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

inline std::size_t parse_size(const std::string& key, const std::string& v) {
  std::size_t pos = 0;
  unsigned long long n = 0;
  try {
    n = std::stoull(v, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos == 0 || pos != v.size() || v[0] == '-') throw ConfigError("key '" + key + "': expected a non-negative integer, got '" + v + "'");
  return static_cast<std::size_t>(n);
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("key '" + key + "': expected true or false, got '" + v + "'");
}

}  // namespace detail

inline std::map<std::string, std::string> to_map(const ModelConfig& c) {
  std::string widths;
  for (std::size_t i = 0; i < c.stage_widths.size(); ++i) widths += (i ? "," : "") + std::to_string(c.stage_widths[i]);
  auto b = [](bool v) { return std::string(v ? "true" : "false"); };
  return {
      {"stage_widths", widths},
      {"blocks_per_stage", std::to_string(c.blocks_per_stage)},
      {"freeze_encoder", b(c.freeze_encoder)},
      {"fs_selection", c.fs_selection == FsSelection::kToken ? "token" : "channel"},
      {"use_csi", b(c.use_csi)},
      {"csi_width", std::to_string(c.csi_width)},
      {"csi_heads", std::to_string(c.csi_heads)},
      {"state_dim", std::to_string(c.state_dim)},
      {"bidirectional", b(c.bidirectional)},
      {"mlp_ratio", std::to_string(c.mlp_ratio)},
      {"attn_ratio", std::to_string(c.attn_ratio)},
      {"spatial_kernel", std::to_string(c.spatial_kernel)},
      {"attn_pooling", c.attn_pooling == AttentionPooling::kAvgMax ? "avgmax" : "avg"},
      {"dpcf_segments", std::to_string(c.dpcf_segments)},
      {"fusion", fusion_name(c.fusion)},
      {"head_channels", std::to_string(c.head_channels)},
      {"seed", std::to_string(c.seed)},
  };
}

inline void set_key(ModelConfig& c, const std::string& key, const std::string& v) {
  using detail::parse_bool;
  using detail::parse_size;
  if (key == "stage_widths") {
    c.stage_widths.clear();
    std::stringstream ss(v);
    for (std::string item; std::getline(ss, item, ',');) c.stage_widths.push_back(parse_size(key, detail::trim(item)));
  } else if (key == "blocks_per_stage") {
    c.blocks_per_stage = parse_size(key, v);
  } else if (key == "freeze_encoder") {
    c.freeze_encoder = parse_bool(key, v);
  } else if (key == "fs_selection") {
    if (v == "token") c.fs_selection = FsSelection::kToken;
    else if (v == "channel") c.fs_selection = FsSelection::kChannel;
    else throw ConfigError("key 'fs_selection': expected token or channel, got '" + v + "'");
  } else if (key == "use_csi") {
    c.use_csi = parse_bool(key, v);
  } else if (key == "csi_width") {
    c.csi_width = parse_size(key, v);
  } else if (key == "csi_heads") {
    c.csi_heads = parse_size(key, v);
  } else if (key == "state_dim") {
    c.state_dim = parse_size(key, v);
  } else if (key == "bidirectional") {
    c.bidirectional = parse_bool(key, v);
  } else if (key == "mlp_ratio") {
    c.mlp_ratio = parse_size(key, v);
  } else if (key == "attn_ratio") {
    c.attn_ratio = parse_size(key, v);
  } else if (key == "spatial_kernel") {
    c.spatial_kernel = parse_size(key, v);
  } else if (key == "attn_pooling") {
    if (v == "avgmax") c.attn_pooling = AttentionPooling::kAvgMax;
    else if (v == "avg") c.attn_pooling = AttentionPooling::kAvg;
    else throw ConfigError("key 'attn_pooling': expected avgmax or avg, got '" + v + "'");
  } else if (key == "dpcf_segments") {
    c.dpcf_segments = parse_size(key, v);
  } else if (key == "fusion") {
    c.fusion = parse_fusion(v);
  } else if (key == "head_channels") {
    c.head_channels = parse_size(key, v);
  } else if (key == "seed") {
    c.seed = parse_size(key, v);
  } else {
    throw ConfigError("unknown config key '" + key + "'");
  }
}

inline std::string serialize(const ModelConfig& c) {
  std::string out;
  for (const auto& [k, v] : to_map(c)) out += k + " = " + v + "\n";
  return out;
}

/// Applies key=value lines on top of `base`.
inline ModelConfig parse_config(const std::string& text, ModelConfig base = {}) {
  std::istringstream in(text);
  std::size_t lineno = 0;
  for (std::string line; std::getline(in, line);) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("line " + std::to_string(lineno) + ": expected key = value");
    set_key(base, detail::trim(line.substr(0, eq)), detail::trim(line.substr(eq + 1)));
  }
  base.validate();
  return base;
}

inline ModelConfig load_config(const std::string& path, ModelConfig base = {}) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open config '" + path + "'");
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_config(ss.str(), std::move(base));
}

/// Keys whose values differ between two configs, formatted "key: a != b".
inline std::vector<std::string> config_diff(const ModelConfig& a, const ModelConfig& b) {
  const auto ma = to_map(a), mb = to_map(b);
  std::vector<std::string> out;
  for (const auto& [k, v] : ma)
    if (mb.at(k) != v) out.push_back(k + ": " + v + " != " + mb.at(k));
  return out;
}

}  // namespace samamba
