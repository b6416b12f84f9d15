#include <filesystem>

#include "test_util.hpp"

using namespace samamba;
using namespace samamba::testing;

namespace {

Tensor<D> random_image(std::uint64_t seed, std::size_t B, std::size_t H, std::size_t W) {
  Rng rng = make_rng(seed);
  return random_tensor(rng, {B, 3, H, W}, 0, 1, false);
}

Tensor<D> random_mask(std::uint64_t seed, const Shape& s, double rate) {
  Rng rng = make_rng(seed, 7);
  std::vector<D> v(numel(s));
  for (auto& e : v) e = uniform<D>(rng, 0, 1) < rate ? 1 : 0;
  return Tensor<D>(s, std::move(v));
}

std::filesystem::path temp_file(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("samamba_model_test_" + name);
}

}  // namespace

TEST(Encoder, PyramidShapesAt64) {
  SamambaNet<D> net(ModelConfig{});
  const auto f = net.encode(random_image(1, 1, 64, 64), false);
  const std::array<Shape, 4> want{Shape{1, 16, 16, 16}, Shape{1, 32, 8, 8}, Shape{1, 64, 4, 4}, Shape{1, 128, 2, 2}};
  for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(f[i].shape(), want[i]);
}

TEST(Encoder, StrideContractForValidExtents) {
  SamambaNet<D> net(ModelConfig{});
  for (std::size_t H : {32, 96})
    for (std::size_t W : {32, 128}) {
      const auto f = net.encode(random_image(2, 2, H, W), false);
      const auto want = pyramid_shape(net.cfg, 2, H, W);
      for (std::size_t i = 0; i < 4; ++i) {
        EXPECT_EQ(f[i].shape(), want[i]);
        EXPECT_EQ(f[i].dim(2), H >> (i + 2));
        EXPECT_EQ(f[i].dim(3), W >> (i + 2));
      }
    }
  EXPECT_THROW(net.encode(random_image(3, 1, 48, 64), false), ShapeError);
  EXPECT_THROW(net.forward(random_image(3, 1, 64, 40), false), ShapeError);
}

TEST(Encoder, ReferenceScaleChannels) {
  const auto cfg = ModelConfig::reference_scale();
  EXPECT_EQ(cfg.stage_widths, (std::vector<std::size_t>{96, 192, 384, 768}));
  SamambaNet<float> net(cfg);
  const auto f = net.encode(Tensor<float>::zeros({1, 3, 32, 32}), false);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(f[i].dim(1), cfg.stage_widths[i]);
}

TEST(Encoder, FrozenBackboneGetsNoGradient) {
  ModelConfig cfg;
  cfg.freeze_encoder = true;
  SamambaNet<D> net(cfg);
  const auto x = random_image(4, 1, 64, 64);
  const auto t = random_mask(4, {1, 1, 64, 64}, 0.1);
  backprop([&] { return total_loss(net.forward(x, true), t); });
  for (const auto& p : net.backbone_params()) {
    if (p.buffer) continue;
    EXPECT_FALSE(p.tensor.requires_grad()) << p.name;
    for (const D g : p.tensor.grad()) ASSERT_EQ(g, 0) << p.name;
  }
  for (std::size_t i = 0; i < 4; ++i) {
    ParamList<D> ps;
    net.encoder[i].adapter.collect(ps, "adapter");
    for (const auto& p : ps) {
      D m = 0;
      for (const D g : p.tensor.grad()) m = std::max(m, std::abs(g));
      EXPECT_GT(m, 0) << "stage " << i << " " << p.name;
    }
  }
  const auto cost = count_params_flops(net, 64, 64);
  EXPECT_LT(cost.trainable, cost.params);
}

TEST(CosineSim, ClosedForms) {
  const std::vector<D> a{0.3, -1.2, 2.0}, na{-0.3, 1.2, -2.0};
  EXPECT_NEAR(cosine_sim<D>(a, a), 1, 1e-15);
  EXPECT_EQ(cosine_sim<D>(a, na), 0);
  const std::vector<D> e1{1, 0}, e2{0, 1}, d{1, 1};
  EXPECT_EQ(cosine_sim<D>(e1, e2), 0);
  EXPECT_NEAR(cosine_sim<D>(d, e1), 1 / std::sqrt(2.0), 1e-15);
  const std::vector<D> z{0, 0};
  EXPECT_EQ(cosine_sim<D>(z, d), 0);
  Rng rng = make_rng(5);
  for (int k = 0; k < 200; ++k) {
    std::vector<D> u(6), v(6);
    for (auto& e : u) e = uniform<D>(rng, -1, 1);
    for (auto& e : v) e = uniform<D>(rng, -1, 1);
    const D s = cosine_sim<D>(u, v);
    ASSERT_GE(s, 0);
    ASSERT_LE(s, 1);
  }
}

TEST(FsAdapter, ZeroBranchIsIdentityAndShapePreserved) {
  Rng rng = make_rng(6);
  for (const auto sel : {FsSelection::kToken, FsSelection::kChannel}) {
    FsAdapter<D> a(5, rng, sel);
    const auto x = random_tensor(rng, {2, 5, 4, 3}, -1, 1, false);
    EXPECT_EQ(a(x).shape(), x.shape());
    for (auto& v : a.p.mutable_data()) v = 0;
    for (auto& v : a.conv.weight.mutable_data()) v = 0;
    EXPECT_EQ(values(a(x)), values(x));
  }
}

TEST(FsAdapter, AntiAlignedTokensAreDropped) {
  Rng rng = make_rng(7);
  FsAdapter<D> a(3, rng);
  auto xi = a.xi.mutable_data();
  xi[0] = 1, xi[1] = 2, xi[2] = -1;
  // Token 0 is aligned with xi, token 1 anti-aligned; layout [1, C, 1, 2].
  const Tensor<D> x({1, 3, 1, 2}, {2, -0.5, 4, -1, -2, 0.5});
  const auto s = a.select(x);
  ASSERT_EQ(s.shape(), (Shape{1, 2, 3}));
  EXPECT_NEAR(s[0], 2, 1e-15);
  EXPECT_NEAR(s[1], 4, 1e-15);
  EXPECT_NEAR(s[2], -2, 1e-15);
  for (std::size_t c = 3; c < 6; ++c) EXPECT_EQ(s[c], 0);
}

TEST(FsAdapter, AlgebraSuite) {
  const auto r = verify::fs_adapter_algebra({});
  EXPECT_TRUE(r.passed) << r.failure;
}

TEST(FsAdapter, GradientOverEmbeddingAndMixing) {
  Rng rng = make_rng(8);
  for (const auto sel : {FsSelection::kToken, FsSelection::kChannel}) {
    FsAdapter<D> a(4, rng, sel);
    const auto x = random_tensor(rng, {1, 4, 3, 3});
    const std::vector<std::pair<std::string, Tensor<D>>> leaves{{"x", x}, {"xi", a.xi}, {"p", a.p}};
    EXPECT_LE(worst(check_leaves<D>([&] { return verify::probe(a(x), 8); }, leaves, fd_options(8))), 1e-4);
  }
}

TEST(Csi, ResidualPathWithSilencedMamba) {
  Rng rng = make_rng(9);
  CsiOptions o;
  o.width = 8;
  o.heads = 4;
  o.state_dim = 4;
  Csi<D> csi(6, o, rng);
  for (auto& b : csi.blocks) {
    for (auto* p : {&b.fwd, &b.bwd})
      for (auto& v : p->w_c.mutable_data()) v = 0;
    EXPECT_EQ(b.gamma[0], 1);
  }
  const auto tr = csi.trace(random_tensor(rng, {1, 6, 4, 4}, -1, 1, false), false);
  ASSERT_EQ(tr.heads.size(), 4u);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(values(tr.heads[i]), values(tr.segments[i]));
  EXPECT_EQ(tr.output.shape(), (Shape{1, 8, 4, 4}));
}

TEST(Csi, RecombinationIsPermutation) {
  Rng rng = make_rng(10);
  CsiOptions o;
  o.width = 8;
  o.state_dim = 4;
  Csi<D> csi(8, o, rng);
  const auto tr = csi.trace(random_tensor(rng, {1, 8, 3, 3}, -1, 1, false), false);
  auto before = values(concat(tr.heads, 2));
  auto after = values(tr.recombined);
  std::sort(before.begin(), before.end());
  std::sort(after.begin(), after.end());
  EXPECT_EQ(before, after);
  // h_j = [m_1^j, ..., m_4^j]: recombined channel j*4+i is head i channel j.
  for (std::size_t t = 0; t < 9; ++t)
    for (std::size_t j = 0; j < 2; ++j)
      for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(tr.recombined[t * 8 + j * 4 + i], tr.heads[i][t * 2 + j]);
  EXPECT_THROW(recombination_index(10, 4), ConfigError);
  const auto r = verify::csi_recombination({});
  EXPECT_TRUE(r.passed) << r.failure;
}

TEST(Dpcf, GatingSuiteAndContracts) {
  const auto r = verify::dpcf_gating({});
  EXPECT_TRUE(r.passed) << r.failure;
  Rng rng = make_rng(11);
  for (const auto f : {Fusion::kAdd, Fusion::kConcat, Fusion::kAdaptive}) {
    Dpcf<D> d(8, 4, 4, f, rng);
    const auto high = random_tensor(rng, {2, 8, 8, 8}, -1, 1, false);
    const auto low = random_tensor(rng, {2, 4, 4, 4}, -1, 1, false);
    EXPECT_EQ(d(high, low, true).shape(), high.shape());
    EXPECT_THROW(d(low, high, true), ShapeError);
  }
  EXPECT_THROW(Dpcf<D>(6, 6, 4, Fusion::kAdaptive, rng), ConfigError);
  Dpcf<D> d(8, 8, 4, Fusion::kAdaptive, rng);
  for (std::size_t s = 0; s < 4; ++s) EXPECT_EQ(d.alpha[s], 0);
}

TEST(Model, ForwardShapeAndZeroHead) {
  SamambaNet<D> net(ModelConfig{});
  const auto x = random_image(12, 2, 64, 64);
  EXPECT_EQ(net.forward(x, false).shape(), (Shape{2, 1, 64, 64}));
  for (auto& v : net.classifier.weight.mutable_data()) v = 0;
  const auto y = net.forward(x, false);
  for (std::size_t i = 0; i < y.size(); ++i) ASSERT_EQ(y[i], kHeadPriorBias);
}

TEST(Model, NonzeroGradientCensus) {
  SamambaNet<D> net(ModelConfig{});
  const auto x = random_image(13, 2, 64, 64);
  const auto t = random_mask(13, {2, 1, 64, 64}, 0.1);
  backprop([&] { return total_loss(net.forward(x, true), t); });
  std::size_t checked = 0;
  for (const auto& p : net.params()) {
    if (p.buffer || !p.tensor.requires_grad()) continue;
    bool any = false;
    for (const D g : p.tensor.grad()) any = any || (g != 0 && std::isfinite(g));
    EXPECT_TRUE(any) << p.name;
    ++checked;
  }
  EXPECT_GT(checked, 100u);
}

TEST(Model, GradientSuiteOneSeed) {
  verify::Options o;
  o.model_seeds = 1;
  const auto r = verify::model_gradients(o);
  EXPECT_TRUE(r.passed) << r.failure;
  EXPECT_LE(r.max_error, 1e-4);
}

TEST(Cost, ParamCounts) {
  Rng rng = make_rng(14);
  Conv<D> c(4, 8, 1, rng);
  ParamList<D> ps;
  c.collect(ps, "c");
  EXPECT_EQ(count_parameters(ps), 40u);
  std::size_t last = 0;
  for (std::size_t w : {32, 64, 128}) {
    ModelConfig cfg;
    cfg.csi_width = w;
    SamambaNet<D> net(cfg);
    const std::size_t n = count_parameters(net.params());
    EXPECT_GT(n, last) << "csi width " << w;
    last = n;
  }
}

TEST(Cost, MacsMatchHandFormula) {
  // Toy net: 3x3 conv 3->4 at 8x8 (same padding), then a [64,4]x[4,2] matmul.
  Rng rng = make_rng(15);
  Conv<D> conv(3, 4, 3, rng);
  const Tensor<D> w = random_tensor(rng, {4, 2}, -1, 1, false);
  auto& mc = detail::mac_counter();
  mc = {true, 0};
  const auto y = conv(random_tensor(rng, {1, 3, 8, 8}, -1, 1, false));
  matmul(reshape(permute(y, {0, 2, 3, 1}), {64, 4}), w);
  const std::uint64_t got = mc.macs;
  mc = {};
  EXPECT_EQ(got, 1u * 4 * 3 * 3 * 3 * 8 * 8 + 64u * 4 * 2);
}

TEST(Cost, MacsGrowWithResolution) {
  SamambaNet<D> net(ModelConfig{});
  std::uint64_t last = 0;
  for (std::size_t s : {32, 64, 128}) {
    const auto c = count_params_flops(net, s, s);
    EXPECT_GT(c.macs, last);
    last = c.macs;
  }
}

TEST(Checkpoint, RoundTripAndMismatch) {
  ModelConfig cfg;
  cfg.seed = 3;
  SamambaNet<D> net(cfg);
  const auto x = random_image(16, 1, 32, 32);
  net.forward(x, true);  // moves BN running statistics
  const auto path = temp_file("rt.ckpt");
  save_model(path.string(), net);
  auto loaded = load_model<D>(path.string());
  EXPECT_EQ(values(loaded.forward(x, false)), values(net.forward(x, false)));

  ModelConfig other = cfg;
  other.csi_heads = 2;
  other.fusion = Fusion::kAdd;
  SamambaNet<D> wrong(other);
  try {
    load_model(read_checkpoint(path.string()), wrong);
    FAIL() << "mismatch not detected";
  } catch (const ConfigMismatchError& e) {
    ASSERT_EQ(e.keys.size(), 2u);
    EXPECT_NE(e.keys[0].find("csi_heads"), std::string::npos);
    EXPECT_NE(e.keys[1].find("fusion"), std::string::npos);
  }
  std::filesystem::remove(path);
}
