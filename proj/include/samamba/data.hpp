#pragma once

// Synthetic infrared scenes, augmentation, PGM I/O and on-disk datasets.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "samamba/rng.hpp"
#include "samamba/tensor.hpp"

namespace samamba {

struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum class Background { kGradient, kBlobClutter, kBandedNoise, kMixed };

inline const char* background_name(Background b) {
  switch (b) {
    case Background::kGradient: return "gradient";
    case Background::kBlobClutter: return "blob-clutter";
    case Background::kBandedNoise: return "banded-noise";
    case Background::kMixed: return "mixed";
  }
  return "?";
}

inline Background parse_background(const std::string& s) {
  for (auto b : {Background::kGradient, Background::kBlobClutter, Background::kBandedNoise, Background::kMixed})
    if (s == background_name(b)) return b;
  throw DataError("unknown background kind '" + s + "'");
}

struct SceneConfig {
  std::size_t height = 256, width = 256;
  std::size_t min_targets = 1, max_targets = 3;
  double area_cap = 0.0015;  // per-target fraction of the image area
  std::size_t min_area = 1, max_area = 30;
  double min_contrast = 0.25, max_contrast = 0.6;
  Background background = Background::kMixed;
  double noise_sigma = 0.02;
  std::uint64_t seed = 0;

  std::size_t area_limit() const {
    const auto cap = static_cast<std::size_t>(std::floor(area_cap * static_cast<double>(height * width)));
    return std::min(max_area, cap);
  }

  void validate() const {
    if (height < 32 || width < 32) throw DataError("scene extents must be at least 32");
    if (min_targets > max_targets) throw DataError("min_targets exceeds max_targets");
    if (min_area == 0 || min_area > max_area) throw DataError("target area range is empty");
    if (max_targets > 0 && area_limit() < min_area)
      throw DataError("area cap allows " + std::to_string(area_limit()) + " px, below min_area " + std::to_string(min_area));
    if (!(min_contrast > 0) || min_contrast > max_contrast) throw DataError("invalid contrast range");
  }
};

struct TargetInfo {
  double cy = 0, cx = 0;  // centroid (pixel units)
  std::size_t area = 0;   // mask pixels
};

struct SampleRecord {
  std::size_t height = 0, width = 0;
  std::vector<float> image;         // [0, 1]
  std::vector<std::uint8_t> mask;   // 0 / 1
  std::vector<TargetInfo> targets;
  std::uint64_t seed = 0;
  std::uint64_t index = 0;

  std::size_t mask_area() const { return static_cast<std::size_t>(std::count(mask.begin(), mask.end(), 1)); }
};

namespace detail {

inline void fill_background(std::vector<float>& img, std::size_t H, std::size_t W, Background kind, Rng& rng) {
  const double base = uniform<double>(rng, 0.15, 0.45);
  switch (kind) {
    case Background::kGradient: {
      const double theta = uniform<double>(rng, 0, 2 * std::numbers::pi);
      const double slope = uniform<double>(rng, 0.05, 0.3);
      const double c = std::cos(theta), s = std::sin(theta);
      for (std::size_t y = 0; y < H; ++y)
        for (std::size_t x = 0; x < W; ++x)
          img[y * W + x] = static_cast<float>(base + slope * ((x / double(W) - 0.5) * c + (y / double(H) - 0.5) * s));
      break;
    }
    case Background::kBlobClutter: {
      std::fill(img.begin(), img.end(), static_cast<float>(base));
      const int blobs = 4 + static_cast<int>(rng() % 8);
      for (int k = 0; k < blobs; ++k) {
        const double by = uniform<double>(rng, 0, H), bx = uniform<double>(rng, 0, W);
        const double sg = uniform<double>(rng, 0.03, 0.12) * static_cast<double>(std::min(H, W));
        const double amp = uniform<double>(rng, -0.15, 0.25);
        for (std::size_t y = 0; y < H; ++y)
          for (std::size_t x = 0; x < W; ++x) {
            const double d2 = (y - by) * (y - by) + (x - bx) * (x - bx);
            img[y * W + x] += static_cast<float>(amp * std::exp(-d2 / (2 * sg * sg)));
          }
      }
      break;
    }
    case Background::kBandedNoise: {
      const double period = uniform<double>(rng, 8, 40);
      const double amp = uniform<double>(rng, 0.03, 0.12);
      const double phase = uniform<double>(rng, 0, 2 * std::numbers::pi);
      const bool horizontal = rng() & 1;
      for (std::size_t y = 0; y < H; ++y) {
        const double row_jitter = normal<double>(rng, 0, 0.02);
        for (std::size_t x = 0; x < W; ++x) {
          const double u = horizontal ? static_cast<double>(y) : static_cast<double>(x);
          img[y * W + x] = static_cast<float>(base + amp * std::sin(2 * std::numbers::pi * u / period + phase) +
                                              (horizontal ? row_jitter : 0.0));
        }
      }
      break;
    }
    case Background::kMixed: throw DataError("mixed background must be resolved per sample");
  }
}

/// Mask pixels of an axis-aligned anisotropic Gaussian centred on (cy, cx):
/// contribution > half peak  <=>  dy^2/sy^2 + dx^2/sx^2 < 2 ln 2.
inline std::vector<std::size_t> blob_pixels(long cy, long cx, double sy, double sx, std::size_t H, std::size_t W) {
  std::vector<std::size_t> px;
  const double lim = 2 * std::numbers::ln2;
  const long ry = static_cast<long>(std::ceil(sy * 1.2)) + 1, rx = static_cast<long>(std::ceil(sx * 1.2)) + 1;
  for (long y = cy - ry; y <= cy + ry; ++y)
    for (long x = cx - rx; x <= cx + rx; ++x) {
      if (y < 0 || x < 0 || y >= static_cast<long>(H) || x >= static_cast<long>(W)) continue;
      const double dy = static_cast<double>(y - cy), dx = static_cast<double>(x - cx);
      if (dy * dy / (sy * sy) + dx * dx / (sx * sx) < lim) px.push_back(static_cast<std::size_t>(y) * W + x);
    }
  return px;
}

}  // namespace detail

/// Deterministic in (cfg.seed, index).
inline SampleRecord generate_scene(const SceneConfig& cfg, std::uint64_t index) {
  cfg.validate();
  const std::size_t H = cfg.height, W = cfg.width;
  Rng rng = make_rng(cfg.seed, index, 0x5ce);
  SampleRecord s{H, W, std::vector<float>(H * W), std::vector<std::uint8_t>(H * W, 0), {}, cfg.seed, index};
  Background kind = cfg.background;
  if (kind == Background::kMixed) kind = static_cast<Background>(rng() % 3);
  detail::fill_background(s.image, H, W, kind, rng);

  const std::size_t n_targets =
      cfg.min_targets + static_cast<std::size_t>(rng() % (cfg.max_targets - cfg.min_targets + 1));
  const std::size_t limit = cfg.area_limit();
  // Occupancy including a 2-pixel guard ring so targets stay separate components.
  std::vector<std::uint8_t> blocked(H * W, 0);
  for (std::size_t k = 0; k < n_targets; ++k) {
    bool placed = false;
    for (int attempt = 0; attempt < 200 && !placed; ++attempt) {
      // Log-uniform desired area gives a long tail of very small targets.
      const double want = std::exp(uniform<double>(rng, std::log(double(cfg.min_area)), std::log(double(limit) + 0.999)));
      const double aspect = uniform<double>(rng, 0.6, 1.6);
      const double sxy = want / (2 * std::numbers::pi * std::numbers::ln2);
      double sy = std::sqrt(sxy * aspect), sx = std::sqrt(sxy / aspect);
      const long cy = 3 + static_cast<long>(rng() % (H - 6)), cx = 3 + static_cast<long>(rng() % (W - 6));
      auto px = detail::blob_pixels(cy, cx, sy, sx, H, W);
      while (px.size() > limit) {
        sy *= 0.9, sx *= 0.9;
        px = detail::blob_pixels(cy, cx, sy, sx, H, W);
      }
      if (px.size() < cfg.min_area) continue;
      if (std::any_of(px.begin(), px.end(), [&](std::size_t i) { return blocked[i]; })) continue;
      const double contrast = uniform<double>(rng, cfg.min_contrast, cfg.max_contrast);
      const long ry = static_cast<long>(std::ceil(3 * sy)) + 1, rx = static_cast<long>(std::ceil(3 * sx)) + 1;
      for (long y = std::max(0L, cy - ry); y <= std::min(long(H) - 1, cy + ry); ++y)
        for (long x = std::max(0L, cx - rx); x <= std::min(long(W) - 1, cx + rx); ++x) {
          const double dy = double(y - cy), dx = double(x - cx);
          s.image[y * W + x] += static_cast<float>(contrast * std::exp(-0.5 * (dy * dy / (sy * sy) + dx * dx / (sx * sx))));
        }
      double my = 0, mx = 0;
      for (const auto i : px) {
        s.mask[i] = 1;
        my += double(i / W), mx += double(i % W);
        const long y = long(i / W), x = long(i % W);
        for (long yy = std::max(0L, y - 2); yy <= std::min(long(H) - 1, y + 2); ++yy)
          for (long xx = std::max(0L, x - 2); xx <= std::min(long(W) - 1, x + 2); ++xx) blocked[yy * W + xx] = 1;
      }
      s.targets.push_back({my / double(px.size()), mx / double(px.size()), px.size()});
      placed = true;
    }
    if (!placed) throw DataError("could not place target " + std::to_string(k) + " in sample " + std::to_string(index));
  }
  for (auto& v : s.image) v = std::clamp(v + static_cast<float>(normal<double>(rng, 0, cfg.noise_sigma)), 0.0f, 1.0f);
  return s;
}

/// 8-connected components of a binary mask.
inline std::vector<TargetInfo> mask_components(const std::vector<std::uint8_t>& mask, std::size_t H, std::size_t W) {
  std::vector<TargetInfo> out;
  std::vector<std::uint8_t> seen(mask.size(), 0);
  std::vector<std::size_t> stack;
  for (std::size_t start = 0; start < mask.size(); ++start) {
    if (!mask[start] || seen[start]) continue;
    TargetInfo t;
    double sy = 0, sx = 0;
    stack.assign(1, start);
    seen[start] = 1;
    while (!stack.empty()) {
      const std::size_t i = stack.back();
      stack.pop_back();
      ++t.area;
      const long y = long(i / W), x = long(i % W);
      sy += double(y), sx += double(x);
      for (long dy = -1; dy <= 1; ++dy)
        for (long dx = -1; dx <= 1; ++dx) {
          const long yy = y + dy, xx = x + dx;
          if (yy < 0 || xx < 0 || yy >= long(H) || xx >= long(W)) continue;
          const std::size_t j = std::size_t(yy) * W + std::size_t(xx);
          if (mask[j] && !seen[j]) {
            seen[j] = 1;
            stack.push_back(j);
          }
        }
    }
    t.cy = sy / double(t.area), t.cx = sx / double(t.area);
    out.push_back(t);
  }
  return out;
}

struct AugmentParams {
  double scale = 1.0;
  // Offset of the output window inside the scaled image; negative values pad.
  long off_y = 0, off_x = 0;
};

/// Scale in [0.75, 1.25] and a random crop (or pad) window back to the
/// original extents.
inline AugmentParams draw_augment(std::size_t H, std::size_t W, std::uint64_t seed) {
  Rng rng = make_rng(seed, 0xa06);
  AugmentParams p;
  p.scale = uniform<double>(rng, 0.75, 1.25);
  auto offset = [&](std::size_t n) {
    const long scaled = std::lround(double(n) * p.scale);
    const long slack = scaled - long(n);
    if (slack == 0) return 0L;
    const long lo = std::min(0L, slack), hi = std::max(0L, slack);
    return lo + static_cast<long>(rng() % static_cast<std::uint64_t>(hi - lo + 1));
  };
  p.off_y = offset(H);
  p.off_x = offset(W);
  return p;
}

/// Same geometric transform on image (bilinear) and mask (nearest).
/// Padded regions take the image mean and mask 0.
inline SampleRecord augment(const SampleRecord& s, const AugmentParams& p) {
  const std::size_t H = s.height, W = s.width;
  SampleRecord out = s;
  double fill = 0;
  for (const float v : s.image) fill += v;
  fill /= double(s.image.size());
  for (std::size_t y = 0; y < H; ++y) {
    for (std::size_t x = 0; x < W; ++x) {
      const double uy = (double(long(y) + p.off_y) + 0.5) / p.scale, ux = (double(long(x) + p.off_x) + 0.5) / p.scale;
      const std::size_t o = y * W + x;
      if (uy < 0 || ux < 0 || uy >= double(H) || ux >= double(W)) {
        out.image[o] = static_cast<float>(fill);
        out.mask[o] = 0;
        continue;
      }
      out.mask[o] = s.mask[std::size_t(uy) * W + std::size_t(ux)];
      const double fy = std::clamp(uy - 0.5, 0.0, double(H - 1)), fx = std::clamp(ux - 0.5, 0.0, double(W - 1));
      const std::size_t y0 = std::size_t(fy), x0 = std::size_t(fx);
      const std::size_t y1 = std::min(y0 + 1, H - 1), x1 = std::min(x0 + 1, W - 1);
      const double wy = fy - double(y0), wx = fx - double(x0);
      const auto at = [&](std::size_t yy, std::size_t xx) { return double(s.image[yy * W + xx]); };
      const double v = (1 - wy) * ((1 - wx) * at(y0, x0) + wx * at(y0, x1)) + wy * ((1 - wx) * at(y1, x0) + wx * at(y1, x1));
      out.image[o] = static_cast<float>(v);
    }
  }
  out.targets = mask_components(out.mask, H, W);
  return out;
}

inline SampleRecord augment(const SampleRecord& s, std::uint64_t seed) {
  return augment(s, draw_augment(s.height, s.width, seed));
}

// --- PGM (binary P5, maxval 255) ------------------------------------------

struct GrayImage {
  std::size_t height = 0, width = 0;
  std::vector<std::uint8_t> pixels;
};

inline std::uint8_t quantize(float v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
}

inline std::vector<std::uint8_t> encode_pgm(const GrayImage& img) {
  const std::string header = "P5\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.insert(out.end(), img.pixels.begin(), img.pixels.end());
  return out;
}

inline GrayImage decode_pgm(const std::vector<std::uint8_t>& b) {
  std::size_t pos = 0;
  auto fail = [&](const std::string& what) -> void {
    throw DataError("PGM parse error at byte " + std::to_string(pos) + ": " + what);
  };
  if (b.size() < 2 || b[0] != 'P' || b[1] != '5') fail("expected magic P5");
  pos = 2;
  auto skip_space = [&] {
    while (pos < b.size()) {
      if (b[pos] == '#') {
        while (pos < b.size() && b[pos] != '\n') ++pos;
      } else if (std::isspace(b[pos])) {
        ++pos;
      } else {
        break;
      }
    }
  };
  auto number = [&](const char* what) {
    skip_space();
    if (pos >= b.size() || !std::isdigit(b[pos])) fail(std::string("expected ") + what);
    std::size_t v = 0;
    while (pos < b.size() && std::isdigit(b[pos])) {
      v = v * 10 + std::size_t(b[pos] - '0');
      if (v > (1u << 24)) fail(std::string(what) + " too large");
      ++pos;
    }
    return v;
  };
  GrayImage img;
  img.width = number("width");
  img.height = number("height");
  const std::size_t maxval = number("maxval");
  if (maxval != 255) fail("only maxval 255 is supported");
  if (pos >= b.size() || !std::isspace(b[pos])) fail("expected whitespace after header");
  ++pos;
  const std::size_t n = img.width * img.height;
  if (b.size() - pos < n) fail("truncated payload: need " + std::to_string(n) + " bytes, have " + std::to_string(b.size() - pos));
  img.pixels.assign(b.begin() + long(pos), b.begin() + long(pos + n));
  return img;
}

inline std::vector<std::uint8_t> read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open '" + path + "'");
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

inline void write_file(const std::string& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open '" + path + "' for writing");
  f.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
  if (!f) throw DataError("write failed for '" + path + "'");
}

inline void save_pgm(const std::string& path, const GrayImage& img) { write_file(path, encode_pgm(img)); }

inline GrayImage load_pgm(const std::string& path) {
  try {
    return decode_pgm(read_file(path));
  } catch (const DataError& e) {
    throw DataError(path + ": " + e.what());
  }
}

inline GrayImage image_to_gray(const std::vector<float>& v, std::size_t H, std::size_t W) {
  GrayImage g{H, W, std::vector<std::uint8_t>(v.size())};
  for (std::size_t i = 0; i < v.size(); ++i) g.pixels[i] = quantize(v[i]);
  return g;
}

inline GrayImage mask_to_gray(const std::vector<std::uint8_t>& m, std::size_t H, std::size_t W) {
  GrayImage g{H, W, std::vector<std::uint8_t>(m.size())};
  for (std::size_t i = 0; i < m.size(); ++i) g.pixels[i] = m[i] ? 255 : 0;
  return g;
}

// --- datasets ---------------------------------------------------------------

struct ManifestEntry {
  std::string split;
  std::string image;  // relative to the dataset root
  std::string mask;
  std::size_t n_targets = 0;
  std::size_t total_area = 0;
};

struct Manifest {
  std::vector<ManifestEntry> entries;
  std::uint64_t hash = 0;  // FNV-1a of the manifest text and every written file

  std::vector<ManifestEntry> split(const std::string& name) const {
    std::vector<ManifestEntry> out;
    for (const auto& e : entries)
      if (e.split == name) out.push_back(e);
    return out;
  }
};

inline std::uint64_t fnv1a(const std::uint8_t* p, std::size_t n, std::uint64_t h = 0xcbf29ce484222325ULL) {
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline constexpr const char* kManifestName = "manifest.tsv";

inline std::string manifest_text(const std::vector<ManifestEntry>& entries) {
  std::string out;
  for (const auto& e : entries)
    out += e.split + "\t" + e.image + "\t" + e.mask + "\t" + std::to_string(e.n_targets) + "\t" + std::to_string(e.total_area) + "\n";
  return out;
}

inline std::string scene_config_text(const SceneConfig& c) {
  std::ostringstream o;
  o.precision(17);
  o << "height = " << c.height << "\nwidth = " << c.width << "\nmin_targets = " << c.min_targets
    << "\nmax_targets = " << c.max_targets << "\narea_cap = " << c.area_cap << "\nmin_area = " << c.min_area
    << "\nmax_area = " << c.max_area << "\nmin_contrast = " << c.min_contrast << "\nmax_contrast = " << c.max_contrast
    << "\nbackground = " << background_name(c.background) << "\nnoise_sigma = " << c.noise_sigma
    << "\nseed = " << c.seed << "\n";
  return o.str();
}

/// Writes images/, masks/, manifest.tsv and scene.cfg under `root`.
/// Splits use disjoint, consecutive generator indices: train, val, test.
inline Manifest build_dataset(const SceneConfig& cfg, std::size_t n_train, std::size_t n_val, std::size_t n_test,
                              const std::string& root, bool force = false) {
  namespace fs = std::filesystem;
  cfg.validate();
  if (fs::exists(root) && !fs::is_empty(root) && !force)
    throw DataError("dataset root '" + root + "' is not empty (use force to overwrite)");
  fs::create_directories(fs::path(root) / "images");
  fs::create_directories(fs::path(root) / "masks");
  Manifest m;
  std::uint64_t h = 0xcbf29ce484222325ULL;
  std::uint64_t index = 0;
  const std::array<std::pair<const char*, std::size_t>, 3> splits{{{"train", n_train}, {"val", n_val}, {"test", n_test}}};
  for (const auto& [name, count] : splits) {
    for (std::size_t k = 0; k < count; ++k, ++index) {
      const SampleRecord s = generate_scene(cfg, index);
      char stem[64];
      std::snprintf(stem, sizeof stem, "%s_%06llu.pgm", name, static_cast<unsigned long long>(index));
      ManifestEntry e{name, std::string("images/") + stem, std::string("masks/") + stem, s.targets.size(), s.mask_area()};
      const auto img = encode_pgm(image_to_gray(s.image, s.height, s.width));
      const auto msk = encode_pgm(mask_to_gray(s.mask, s.height, s.width));
      write_file((fs::path(root) / e.image).string(), img);
      write_file((fs::path(root) / e.mask).string(), msk);
      h = fnv1a(img.data(), img.size(), h);
      h = fnv1a(msk.data(), msk.size(), h);
      m.entries.push_back(std::move(e));
    }
  }
  const std::string text = manifest_text(m.entries);
  m.hash = fnv1a(reinterpret_cast<const std::uint8_t*>(text.data()), text.size(), h);
  const std::string cfg_text = scene_config_text(cfg);
  write_file((fs::path(root) / kManifestName).string(), {text.begin(), text.end()});
  write_file((fs::path(root) / "scene.cfg").string(), {cfg_text.begin(), cfg_text.end()});
  return m;
}

inline Manifest read_manifest(const std::string& root) {
  const auto bytes = read_file((std::filesystem::path(root) / kManifestName).string());
  Manifest m;
  std::istringstream in(std::string(bytes.begin(), bytes.end()));
  std::size_t lineno = 0;
  for (std::string line; std::getline(in, line);) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> cols;
    std::stringstream ss(line);
    for (std::string c; std::getline(ss, c, '\t');) cols.push_back(c);
    if (cols.size() != 5) throw DataError("manifest line " + std::to_string(lineno) + ": expected 5 tab-separated fields");
    m.entries.push_back({cols[0], cols[1], cols[2], std::stoul(cols[3]), std::stoul(cols[4])});
  }
  m.hash = fnv1a(bytes.data(), bytes.size());
  return m;
}

/// Reads one manifest entry back into a sample (image in [0,1], binary mask).
inline SampleRecord load_sample(const std::string& root, const ManifestEntry& e) {
  namespace fs = std::filesystem;
  const GrayImage img = load_pgm((fs::path(root) / e.image).string());
  const GrayImage msk = load_pgm((fs::path(root) / e.mask).string());
  if (img.height != msk.height || img.width != msk.width) throw DataError("image/mask extents differ for " + e.image);
  SampleRecord s;
  s.height = img.height, s.width = img.width;
  s.image.resize(img.pixels.size());
  s.mask.resize(msk.pixels.size());
  for (std::size_t i = 0; i < img.pixels.size(); ++i) s.image[i] = float(img.pixels[i]) / 255.0f;
  for (std::size_t i = 0; i < msk.pixels.size(); ++i) s.mask[i] = msk.pixels[i] > 127;
  s.targets = mask_components(s.mask, s.height, s.width);
  return s;
}

inline std::vector<SampleRecord> load_split(const std::string& root, const Manifest& m, const std::string& split) {
  std::vector<SampleRecord> out;
  for (const auto& e : m.split(split)) out.push_back(load_sample(root, e));
  return out;
}

/// Stacks single-channel images into a [B, 3, H, W] model input (channel replicated).
template <typename T>
Tensor<T> to_input(const std::vector<const std::vector<float>*>& images, std::size_t H, std::size_t W) {
  std::vector<T> v(images.size() * 3 * H * W);
  for (std::size_t b = 0; b < images.size(); ++b)
    for (std::size_t c = 0; c < 3; ++c)
      std::copy(images[b]->begin(), images[b]->end(), v.begin() + long((b * 3 + c) * H * W));
  return Tensor<T>({images.size(), 3, H, W}, std::move(v));
}

template <typename T>
Tensor<T> to_target(const std::vector<const std::vector<std::uint8_t>*>& masks, std::size_t H, std::size_t W) {
  std::vector<T> v(masks.size() * H * W);
  for (std::size_t b = 0; b < masks.size(); ++b)
    std::copy(masks[b]->begin(), masks[b]->end(), v.begin() + long(b * H * W));
  return Tensor<T>({masks.size(), 1, H, W}, std::move(v));
}

}  // namespace samamba
