#include "test_util.hpp"

using namespace samamba;
using namespace samamba::testing;

namespace {

D sig(D v) { return 1 / (1 + std::exp(-v)); }

EvalAccumulator acc_of(std::initializer_list<SampleCounts> cs) {
  EvalAccumulator a;
  for (const auto& c : cs) a.add(c);
  return a;
}

Tensor<D> saturated(const Tensor<D>& t, D magnitude) {
  std::vector<D> v(t.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = t[i] > 0 ? magnitude : -magnitude;
  return Tensor<D>(t.shape(), std::move(v), true);
}

}  // namespace

TEST(SoftIou, ClosedForms) {
  const Tensor<D> t({1, 1, 2, 2}, {1, 0, 1, 0});
  EXPECT_NEAR(soft_iou_loss(saturated(t, 40), t).item(), 0, 1e-12);
  EXPECT_NEAR(soft_iou_loss(saturated(t, -40), t).item(), 1 - kLossEps / (4 + kLossEps), 1e-12);
  // Uniform p = 0.5: inter = 1, union = 2 + 2 - 1 = 3.
  const D e = kLossEps;
  EXPECT_NEAR(soft_iou_loss(Tensor<D>::zeros({1, 1, 2, 2}), t).item(), 1 - (1 + e) / (3 + e), 1e-15);
}

TEST(Dice, ClosedForms) {
  Rng rng = make_rng(1);
  const Tensor<D> t({1, 1, 2, 2}, {1, 1, 0, 0});
  EXPECT_NEAR(dice_loss(saturated(t, 40), t).item(), 0, 1e-12);
  const auto empty = Tensor<D>::zeros({1, 1, 2, 2});
  EXPECT_NEAR(dice_loss(Tensor<D>::full({1, 1, 2, 2}, -50), empty).item(), 0, 1e-12);
  const auto logits = random_tensor(rng, {1, 1, 4, 4}, -3, 3, false);
  std::vector<D> tv(16);
  for (auto& v : tv) v = uniform<D>(rng, 0, 1) < 0.4 ? 1 : 0;
  const Tensor<D> t4({1, 1, 4, 4}, tv);
  D pt = 0, ps = 0, ts = 0;
  for (std::size_t i = 0; i < 16; ++i) {
    pt += sig(logits[i]) * tv[i];
    ps += sig(logits[i]);
    ts += tv[i];
  }
  EXPECT_NEAR(dice_loss(logits, t4).item(), 1 - (2 * pt + kLossEps) / (ps + ts + kLossEps), 1e-14);
  EXPECT_NEAR(soft_iou_loss(logits, t4).item(), 1 - (pt + kLossEps) / (ps + ts - pt + kLossEps), 1e-14);
}

TEST(Focal, ClosedForms) {
  Rng rng = make_rng(2);
  const auto logits = random_tensor(rng, {1, 1, 3, 5}, -4, 4, false);
  std::vector<D> tv(15);
  for (auto& v : tv) v = uniform<D>(rng, 0, 1) < 0.5 ? 1 : 0;
  const Tensor<D> t({1, 1, 3, 5}, tv);
  D bce = 0;
  for (std::size_t i = 0; i < 15; ++i) {
    const D p = sig(logits[i]);
    bce -= tv[i] * std::log(p) + (1 - tv[i]) * std::log(1 - p);
  }
  bce /= 15;
  EXPECT_NEAR(focal_loss(logits, t, 0.0, 0.5).item(), 0.5 * bce, 1e-14);
  // Single pixel: -alpha (1 - p)^2 log p for a positive.
  const D z = 0.7, p = sig(z);
  EXPECT_NEAR(focal_loss(Tensor<D>({1}, {z}), Tensor<D>({1}, {1})).item(), -0.25 * (1 - p) * (1 - p) * std::log(p), 1e-15);
  EXPECT_NEAR(focal_loss(Tensor<D>({1}, {z}), Tensor<D>({1}, {0})).item(), -0.75 * p * p * std::log(1 - p), 1e-15);
  // Confident and correct contributes nothing measurable; far logits stay finite.
  EXPECT_LT(focal_loss(Tensor<D>({2}, {30, -30}), Tensor<D>({2}, {1, 0})).item(), 1e-25);
  EXPECT_TRUE(std::isfinite(focal_loss(Tensor<D>({2}, {-800, 800}), Tensor<D>({2}, {1, 0})).item()));
}

TEST(TotalLoss, SuiteAndConsistency) {
  const auto r = verify::losses({});
  EXPECT_TRUE(r.passed) << r.failure;
  Rng rng = make_rng(3);
  std::vector<D> tv(64, 0);
  for (std::size_t i = 10; i < 14; ++i) tv[i] = 1;
  const Tensor<D> t({1, 1, 8, 8}, tv);
  D last = 1e9;
  for (D m : {1.0, 4.0, 10.0, 25.0}) {
    const auto logits = saturated(t, m);
    const D l = total_loss(logits, t).item();
    EXPECT_LT(l, last);
    last = l;
    EXPECT_GE(l, 0);
    EvalAccumulator a;
    a.add(count_pixels<std::uint8_t, D>(binarize_logits<D>(logits.data()), t.data()));
    EXPECT_EQ(a.iou(), 1);
  }
  EXPECT_LT(last, 1e-6);
  LossParts parts;
  const auto logits = random_tensor(rng, {1, 1, 8, 8}, -3, 3, false);
  const D total = total_loss(logits, t, &parts).item();
  EXPECT_EQ(total, parts.total());
  EXPECT_THROW(total_loss(logits, Tensor<D>::zeros({1, 1, 8, 4})), ShapeError);
}

TEST(Metrics, WorkedExamples) {
  const auto two = acc_of({{2, 4, 4}, {0, 2, 2}});
  EXPECT_DOUBLE_EQ(two.iou(), 0.2);
  EXPECT_DOUBLE_EQ(two.niou(), 1.0 / 6);
  EXPECT_NE(two.iou(), two.niou());
  const auto one = acc_of({{2, 4, 4}});
  EXPECT_DOUBLE_EQ(one.f1(), 0.5);
  const auto perfect = acc_of({{5, 5, 5}});
  EXPECT_EQ(perfect.iou(), 1);
  EXPECT_EQ(perfect.niou(), 1);
  EXPECT_EQ(perfect.f1(), 1);
  const auto disjoint = acc_of({{0, 3, 4}});
  EXPECT_EQ(disjoint.iou(), 0);
  EXPECT_EQ(disjoint.f1(), 0);
  const auto empty = acc_of({{0, 0, 0}, {0, 0, 0}});
  EXPECT_EQ(empty.iou(), 1);
  EXPECT_EQ(empty.niou(), 1);
  EXPECT_EQ(empty.f1(), 1);
  EXPECT_THROW(acc_of({{3, 2, 5}}), DomainError);
}

TEST(Metrics, BruteForceOracleSuite) {
  const auto r = verify::metric_oracles({});
  EXPECT_TRUE(r.passed) << r.failure;
}

TEST(Metrics, AddingCorrectPixelNeverDecreasesIou) {
  Rng rng = make_rng(4);
  for (int k = 0; k < 500; ++k) {
    std::vector<SampleCounts> cs(3);
    for (auto& c : cs) {
      c.t = rng() % 20;
      c.p = rng() % 20;
      c.tp = std::min(c.t, c.p) ? rng() % (std::min(c.t, c.p) + 1) : 0;
    }
    EvalAccumulator a;
    for (const auto& c : cs) a.add(c);
    // Turn a false negative into a true positive in sample 0.
    auto d = cs;
    if (d[0].tp == d[0].t) d[0].t += 1;
    d[0].tp += 1;
    d[0].p += 1;
    EvalAccumulator b;
    for (const auto& c : d) b.add(c);
    ASSERT_GE(b.iou(), a.iou());
  }
}

TEST(Metrics, MergeIsOrderIndependent) {
  Rng rng = make_rng(5);
  std::vector<SampleCounts> cs(40);
  for (auto& c : cs) {
    c.t = rng() % 30;
    c.p = rng() % 30;
    c.tp = rng() % (std::min(c.t, c.p) + 1);
  }
  EvalAccumulator whole, left, right;
  for (std::size_t i = 0; i < cs.size(); ++i) {
    whole.add(cs[i]);
    (i % 3 ? left : right).add(cs[i]);
  }
  EvalAccumulator lr = left, rl = right;
  lr.merge(right);
  rl.merge(left);
  EXPECT_EQ(lr.iou(), whole.iou());
  EXPECT_EQ(rl.iou(), whole.iou());
  EXPECT_NEAR(lr.niou(), whole.niou(), 1e-15);
  EXPECT_NEAR(rl.f1(), whole.f1(), 1e-15);
  EXPECT_EQ(lr.size(), whole.size());
}

TEST(Metrics, ReportFormats) {
  const auto r = report(acc_of({{2, 4, 4}, {0, 2, 2}}));
  const auto kv = to_key_value(r);
  for (const char* k : {"iou=0.2", "niou=", "f1=", "n_samples=2"}) EXPECT_NE(kv.find(k), std::string::npos) << k;
  const auto table = to_table(r);
  EXPECT_EQ(table.substr(0, table.find('\n')), "iou\tniou\tf1\tn_samples");
  EXPECT_NE(table.find("0.2000\t0.1667\t0.2500\t2"), std::string::npos) << table;
}
