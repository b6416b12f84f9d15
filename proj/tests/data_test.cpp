#include <algorithm>
#include <filesystem>
#include <set>

#include "test_util.hpp"

using namespace samamba;
using namespace samamba::testing;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const auto p = fs::temp_directory_path() / ("samamba_data_test_" + name);
  fs::remove_all(p);
  return p;
}

SampleRecord disk_sample(std::size_t n, double radius) {
  SampleRecord s{n, n, std::vector<float>(n * n, 0.1f), std::vector<std::uint8_t>(n * n, 0), {}, 0, 0};
  const double c = double(n) / 2;
  for (std::size_t y = 0; y < n; ++y)
    for (std::size_t x = 0; x < n; ++x) {
      const double dy = double(y) + 0.5 - c, dx = double(x) + 0.5 - c;
      if (dy * dy + dx * dx <= radius * radius) {
        s.mask[y * n + x] = 1;
        s.image[y * n + x] = 0.9f;
      }
    }
  return s;
}

AugmentParams centered(std::size_t n, double scale) {
  const long slack = std::lround(double(n) * scale) - long(n);
  return {scale, slack / 2, slack / 2};
}

}  // namespace

TEST(Scene, ZeroTargetsGiveEmptyMask) {
  SceneConfig cfg;
  cfg.height = cfg.width = 64;
  cfg.min_targets = cfg.max_targets = 0;
  for (std::uint64_t i = 0; i < 5; ++i) {
    const auto s = generate_scene(cfg, i);
    EXPECT_EQ(s.mask_area(), 0u);
    EXPECT_TRUE(s.targets.empty());
  }
  cfg.height = 16;
  EXPECT_THROW(generate_scene(cfg, 0), DataError);
}

TEST(Scene, AreaCapAndStatistics) {
  SceneConfig cfg;  // 256 x 256, cap 0.15%
  std::vector<std::size_t> areas;
  const double image_area = double(cfg.height * cfg.width);
  for (std::uint64_t i = 0; i < 500; ++i) {
    const auto s = generate_scene(cfg, i);
    std::size_t sum = 0;
    for (const auto& t : s.targets) {
      ASSERT_LE(double(t.area), cfg.area_cap * image_area) << "sample " << i;
      areas.push_back(t.area);
      sum += t.area;
    }
    ASSERT_EQ(sum, s.mask_area()) << "sample " << i;
    for (const auto m : s.mask) ASSERT_LE(m, 1);
    for (const auto v : s.image) ASSERT_TRUE(v >= 0 && v <= 1);
  }
  ASSERT_GE(areas.size(), 500u);
  std::nth_element(areas.begin(), areas.begin() + long(areas.size() / 2), areas.end());
  EXPECT_LE(double(areas[areas.size() / 2]), 0.0005 * image_area);
}

TEST(Scene, Deterministic) {
  SceneConfig cfg;
  cfg.height = cfg.width = 96;
  cfg.seed = 42;
  const auto a = generate_scene(cfg, 7), b = generate_scene(cfg, 7), c = generate_scene(cfg, 8);
  EXPECT_EQ(a.image, b.image);
  EXPECT_EQ(a.mask, b.mask);
  EXPECT_NE(a.image, c.image);
}

TEST(Scene, IntegritySuite) {
  const auto r = verify::data_integrity({});
  EXPECT_TRUE(r.passed) << r.failure;
}

TEST(Augment, IdentityPathIsExact) {
  SceneConfig cfg;
  cfg.height = cfg.width = 64;
  const auto s = generate_scene(cfg, 3);
  const auto a = augment(s, AugmentParams{});
  EXPECT_EQ(a.image, s.image);
  EXPECT_EQ(a.mask, s.mask);
}

TEST(Augment, MaskStaysBinaryAndParamsInRange) {
  SceneConfig cfg;
  cfg.height = cfg.width = 64;
  const auto s = generate_scene(cfg, 4);
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const auto p = draw_augment(64, 64, seed);
    ASSERT_GE(p.scale, 0.75);
    ASSERT_LE(p.scale, 1.25);
    const auto a = augment(s, p);
    ASSERT_EQ(a.mask.size(), s.mask.size());
    for (const auto m : a.mask) ASSERT_LE(m, 1);
  }
}

TEST(Augment, DiskAreaScalesWithSquareOfScale) {
  const auto s = disk_sample(64, 6);
  const double base = double(s.mask_area());
  for (double scale : {0.75, 0.8, 0.9, 1.0, 1.1, 1.2, 1.25}) {
    const double got = double(augment(s, centered(64, scale)).mask_area());
    EXPECT_GE(got, 0.5 * scale * scale * base) << scale;
    EXPECT_LE(got, 2 * scale * scale * base) << scale;
  }
}

TEST(Pgm, RoundTrips) {
  const GrayImage zero{2, 2, {0, 0, 0, 0}};
  EXPECT_EQ(decode_pgm(encode_pgm(zero)).pixels, zero.pixels);
  const auto full = image_to_gray(std::vector<float>(6, 1.0f), 2, 3);
  const auto back = decode_pgm(encode_pgm(full));
  EXPECT_EQ(back.pixels, std::vector<std::uint8_t>(6, 255));
  EXPECT_EQ(back.width, 3u);
  Rng rng = make_rng(5);
  std::vector<float> v(37 * 29);
  for (auto& e : v) e = uniform<float>(rng, 0, 1);
  const auto g = decode_pgm(encode_pgm(image_to_gray(v, 37, 29)));
  for (std::size_t i = 0; i < v.size(); ++i)
    ASSERT_EQ(g.pixels[i], std::uint8_t(std::lround(double(v[i]) * 255))) << i;
  const auto path = scratch("rt.pgm");
  save_pgm(path.string(), g);
  EXPECT_EQ(load_pgm(path.string()).pixels, g.pixels);
  fs::remove(path);
}

TEST(Pgm, MalformedInputReportsOffset) {
  const auto bytes = encode_pgm(GrayImage{4, 4, std::vector<std::uint8_t>(16, 7)});
  const std::vector<std::uint8_t> truncated(bytes.begin(), bytes.end() - 3);
  try {
    decode_pgm(truncated);
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("at byte 11"), std::string::npos) << e.what();
  }
  const std::string bad = "P2\n1 1\n255\n0";
  EXPECT_THROW(decode_pgm({bad.begin(), bad.end()}), DataError);
  const std::string no_width = "P5\nxx";
  try {
    decode_pgm({no_width.begin(), no_width.end()});
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("at byte 3"), std::string::npos) << e.what();
  }
}

TEST(Dataset, BuildCountsHashAndRefusal) {
  SceneConfig cfg;
  cfg.height = cfg.width = 64;
  cfg.seed = 9;
  const auto root = scratch("ds");
  const auto m = build_dataset(cfg, 8, 2, 2, root.string());
  EXPECT_EQ(m.entries.size(), 12u);
  EXPECT_EQ(m.split("train").size(), 8u);
  EXPECT_EQ(m.split("val").size(), 2u);
  EXPECT_EQ(m.split("test").size(), 2u);
  std::size_t files = 0;
  for (const auto& d : {"images", "masks"})
    for ([[maybe_unused]] const auto& e : fs::directory_iterator(root / d)) ++files;
  EXPECT_EQ(files, 24u);
  EXPECT_THROW(build_dataset(cfg, 8, 2, 2, root.string()), DataError);
  const auto again = build_dataset(cfg, 8, 2, 2, root.string(), true);
  EXPECT_EQ(again.hash, m.hash);
  cfg.seed = 10;
  EXPECT_NE(build_dataset(cfg, 8, 2, 2, root.string(), true).hash, m.hash);

  const auto read = read_manifest(root.string());
  ASSERT_EQ(read.entries.size(), 12u);
  for (const auto& e : read.entries) {
    const auto s = load_sample(root.string(), e);
    std::size_t sum = 0;
    for (const auto& t : s.targets) sum += t.area;
    EXPECT_EQ(sum, e.total_area);
    EXPECT_EQ(s.mask_area(), e.total_area);
  }
  EXPECT_EQ(load_split(root.string(), read, "test").size(), 2u);
  fs::remove_all(root);
}

TEST(Dataset, SplitsDisjointOverThousandNames) {
  SceneConfig cfg;
  cfg.height = cfg.width = 32;
  cfg.max_targets = 1;
  const auto root = scratch("big");
  const auto m = build_dataset(cfg, 800, 100, 100, root.string());
  std::map<std::string, std::set<std::string>> names;
  for (const auto& e : m.entries) names[e.split].insert(fs::path(e.image).stem().string().substr(e.split.size()));
  ASSERT_EQ(names.size(), 3u);
  std::set<std::string> all;
  for (const auto& [split, set] : names) {
    for (const auto& n : set) EXPECT_TRUE(all.insert(n).second) << split << n;
  }
  EXPECT_EQ(all.size(), 1000u);
  fs::remove_all(root);
}

TEST(Dataset, ModelInputReplicatesChannel) {
  SceneConfig cfg;
  cfg.height = cfg.width = 32;
  const auto s = generate_scene(cfg, 1);
  const auto x = to_input<D>({&s.image}, 32, 32);
  ASSERT_EQ(x.shape(), (Shape{1, 3, 32, 32}));
  for (std::size_t i = 0; i < 1024; ++i) {
    ASSERT_EQ(x[i], D(s.image[i]));
    ASSERT_EQ(x[1024 + i], x[i]);
    ASSERT_EQ(x[2048 + i], x[i]);
  }
  const auto t = to_target<D>({&s.mask}, 32, 32);
  EXPECT_EQ(t.shape(), (Shape{1, 1, 32, 32}));
}
