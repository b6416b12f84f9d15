#include "test_util.hpp"

using namespace samamba;
using namespace samamba::testing;

TEST(Elementwise, AddAndBroadcast) {
  Tensor<D> a({2}, {1, 2}), b({2}, {3, 4});
  EXPECT_EQ(values(add(a, b)), (std::vector<D>{4, 6}));
  Tensor<D> m({2, 3}, {1, 2, 3, 4, 5, 6}), row({3}, {10, 20, 30});
  EXPECT_EQ(values(add(m, row)), (std::vector<D>{11, 22, 33, 14, 25, 36}));
  EXPECT_EQ(add(m, Tensor<D>({2, 1}, {1, 2})).shape(), (Shape{2, 3}));
}

TEST(Elementwise, MulByOnesIsIdentity) {
  Rng rng = make_rng(1);
  auto x = random_tensor(rng, {3, 4}, -1, 1, false);
  EXPECT_EQ(values(mul(x, Tensor<D>::full({3, 4}, 1))), values(x));
}

TEST(Elementwise, IncompatibleShapesNameBoth) {
  Tensor<D> a({2, 3}, std::vector<D>(6)), b({4}, std::vector<D>(4));
  try {
    add(a, b);
    FAIL();
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("[2,3]"), std::string::npos) << msg;
    EXPECT_NE(msg.find("[4]"), std::string::npos) << msg;
  }
}

TEST(Elementwise, DivisionByZeroFlaggedInVerificationMode) {
  Tensor<D> a({2}, {1, 0}), b({2}, {0, 1});
  detail::flags().check_finite = true;
  EXPECT_THROW(div(a, b), NonFiniteError);
  detail::flags().check_finite = false;
  EXPECT_TRUE(std::isinf(div(a, b)[0]));
}

TEST(Matmul, IdentityAndHandExample) {
  Rng rng = make_rng(2);
  auto x = random_tensor(rng, {2, 5}, -1, 1, false);
  EXPECT_EQ(values(matmul(Tensor<D>({2, 2}, {1, 0, 0, 1}), x)), values(x));
  EXPECT_EQ(values(matmul(Tensor<D>({2, 2}, {1, 2, 3, 4}), Tensor<D>({2, 1}, {5, 6}))), (std::vector<D>{17, 39}));
  EXPECT_THROW(matmul(Tensor<D>::zeros({2, 3}), Tensor<D>::zeros({4, 2})), ShapeError);
}

TEST(Matmul, MatchesTripleLoop) {
  Rng rng = make_rng(3);
  auto a = random_tensor(rng, {7, 5}, -1, 1, false), b = random_tensor(rng, {5, 9}, -1, 1, false);
  const auto c = matmul(a, b);
  for (std::size_t i = 0; i < 7; ++i)
    for (std::size_t j = 0; j < 9; ++j) {
      D s = 0;
      for (std::size_t k = 0; k < 5; ++k) s += a[i * 5 + k] * b[k * 9 + j];
      EXPECT_NEAR(c[i * 9 + j], s, 1e-13);
    }
}

TEST(Matmul, SumGradientMatchesFiniteDifferences) {
  Rng rng = make_rng(4);
  auto a = random_tensor(rng, {3, 4}), b = random_tensor(rng, {4, 2}, -1, 1, false);
  const auto rep = finite_diff_check<D>(std::function<Tensor<D>()>([&] { return sum(matmul(a, b)); }), a, fd_options());
  EXPECT_LE(rep.max_rel_error, 1e-6);
  // Closed form: d sum(AB) / dA_ik = sum_j B_kj.
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t k = 0; k < 4; ++k) EXPECT_NEAR(a.grad()[i * 4 + k], b[k * 2] + b[k * 2 + 1], 1e-14);
}

TEST(Activations, FixedPoints) {
  EXPECT_EQ(sigmoid(Tensor<D>::scalar(0))[0], 0.5);
  EXPECT_EQ(silu(Tensor<D>::scalar(0))[0], 0.0);
  const auto s = softmax(Tensor<D>({3}, {2.5, 2.5, 2.5}));
  for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(s[i], 1.0 / 3, 1e-15);
  const auto big = sigmoid(Tensor<D>({2}, {800, -800}));
  EXPECT_EQ(big[0], 1.0);
  EXPECT_EQ(big[1], 0.0);
}

TEST(Activations, RangeProperties) {
  Rng rng = make_rng(5);
  auto x = random_tensor(rng, {6, 7}, -10, 10, false);
  const auto sg = sigmoid(x), sm = softmax(x);
  for (std::size_t i = 0; i < x.size(); ++i) {
    EXPECT_GT(sg[i], 0);
    EXPECT_LT(sg[i], 1);
    EXPECT_GT(sm[i], 0);
    EXPECT_LT(sm[i], 1);
  }
  for (std::size_t r = 0; r < 6; ++r) {
    D s = 0;
    for (std::size_t c = 0; c < 7; ++c) s += sm[r * 7 + c];
    EXPECT_NEAR(s, 1, 1e-6);
  }
}

TEST(Conv2d, IdentityPermutationKernel) {
  Rng rng = make_rng(6);
  auto x = random_tensor(rng, {1, 3, 4, 5}, -1, 1, false);
  const std::vector<std::size_t> perm{2, 0, 1};
  std::vector<D> w(9, 0);
  for (std::size_t o = 0; o < 3; ++o) w[o * 3 + perm[o]] = 1;
  const auto y = conv2d(x, Tensor<D>({3, 3, 1, 1}, w), std::optional<Tensor<D>>(), 1, 0);
  for (std::size_t o = 0; o < 3; ++o)
    for (std::size_t p = 0; p < 20; ++p) EXPECT_EQ(y[o * 20 + p], x[perm[o] * 20 + p]);
}

TEST(Conv2d, AveragingKernelKeepsConstantInterior) {
  const auto x = Tensor<D>::full({1, 1, 6, 6}, 0.7);
  const auto y = conv2d(x, Tensor<D>::full({1, 1, 3, 3}, 1.0 / 9), std::optional<Tensor<D>>(), 1, 1);
  EXPECT_EQ(y.shape(), (Shape{1, 1, 6, 6}));
  for (std::size_t i = 1; i < 5; ++i)
    for (std::size_t j = 1; j < 5; ++j) EXPECT_NEAR(y[i * 6 + j], 0.7, 1e-15);
}

TEST(Conv2d, MatchesDirectLoops) {
  Rng rng = make_rng(7);
  const std::size_t B = 2, Ci = 3, Co = 4, H = 7, W = 6, K = 3, S = 2, P = 1;
  auto x = random_tensor(rng, {B, Ci, H, W}, -1, 1, false), w = random_tensor(rng, {Co, Ci, K, K}, -1, 1, false),
       bias = random_tensor(rng, {Co}, -1, 1, false);
  const auto y = conv2d(x, w, std::optional(bias), S, P);
  const std::size_t Ho = (H + 2 * P - K) / S + 1, Wo = (W + 2 * P - K) / S + 1;
  ASSERT_EQ(y.shape(), (Shape{B, Co, Ho, Wo}));
  double err = 0;
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t o = 0; o < Co; ++o)
      for (std::size_t i = 0; i < Ho; ++i)
        for (std::size_t j = 0; j < Wo; ++j) {
          D s = bias[o];
          for (std::size_t c = 0; c < Ci; ++c)
            for (std::size_t u = 0; u < K; ++u)
              for (std::size_t v = 0; v < K; ++v) {
                const long yy = long(i * S + u) - long(P), xx = long(j * S + v) - long(P);
                if (yy < 0 || xx < 0 || yy >= long(H) || xx >= long(W)) continue;
                s += x[((b * Ci + c) * H + yy) * W + xx] * w[((o * Ci + c) * K + u) * K + v];
              }
          err = std::max(err, std::abs(s - y[((b * Co + o) * Ho + i) * Wo + j]));
        }
  EXPECT_LE(err, 1e-12);
}

TEST(Conv2d, KernelLargerThanPaddedInputRejected) {
  EXPECT_THROW(conv2d(Tensor<D>::zeros({1, 1, 2, 2}), Tensor<D>::zeros({1, 1, 5, 5}), std::optional<Tensor<D>>(), 1, 0),
               ShapeError);
}

TEST(Norm, LayerNormClosedForms) {
  const auto g = Tensor<D>::full({4}, 1), b = Tensor<D>::zeros({4});
  const auto y = layer_norm(Tensor<D>::full({1, 4}, 3.5), g, b);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(y[i], 0);
  const auto y2 = layer_norm(Tensor<D>({2}, {1, -1}), Tensor<D>::full({2}, 1), Tensor<D>::zeros({2}), 1e-12);
  EXPECT_NEAR(y2[0], 1, 1e-9);
  EXPECT_NEAR(y2[1], -1, 1e-9);
  Rng rng = make_rng(8);
  const auto z = layer_norm(random_tensor(rng, {3, 16}, -5, 5, false), Tensor<D>::full({16}, 1), Tensor<D>::zeros({16}));
  for (std::size_t r = 0; r < 3; ++r) {
    D m = 0, v = 0;
    for (std::size_t c = 0; c < 16; ++c) m += z[r * 16 + c] / 16;
    for (std::size_t c = 0; c < 16; ++c) v += (z[r * 16 + c] - m) * (z[r * 16 + c] - m) / 16;
    EXPECT_NEAR(m, 0, 1e-12);
    EXPECT_NEAR(v, 1, 1e-5);
  }
}

TEST(Norm, BatchNormTrainEvalConsistency) {
  Rng rng = make_rng(9);
  auto x = random_tensor(rng, {4, 3, 32, 32}, -2, 3, false);
  BatchNormStats<D> stats(3);
  const auto g = Tensor<D>::full({3}, 1.5), b = Tensor<D>::full({3}, -0.2);
  Tensor<D> train_out;
  for (int i = 0; i < 200; ++i) train_out = batch_norm2d(x, g, b, stats, true);
  const auto eval_out = batch_norm2d(x, g, b, stats, false);
  // Running variance is unbiased; the gap is O(1/count).
  EXPECT_LE(max_abs_diff(train_out.data(), eval_out.data()), 1e-3);
  BatchNormStats<D> s2(3);
  const auto zero_var = batch_norm2d(Tensor<D>::full({2, 3, 2, 2}, 4.0), g, b, s2, true);
  for (std::size_t i = 0; i < zero_var.size(); ++i) EXPECT_TRUE(std::isfinite(zero_var[i]));
}

TEST(Upsample, ConstantsAndMonotone) {
  const auto y = upsample_bilinear(Tensor<D>::full({1, 1, 2, 2}, 0.3), 4, 4);
  for (std::size_t i = 0; i < 16; ++i) EXPECT_NEAR(y[i], 0.3, 1e-15);
  const auto r = upsample_bilinear(Tensor<D>({1, 1, 1, 2}, {0, 1}), 1, 4);
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_GE(r[i], 0);
    EXPECT_LE(r[i], 1);
    if (i) {
      EXPECT_GE(r[i], r[i - 1]);
    }
  }
}

TEST(Upsample, MatchesHalfPixelWeightOracle) {
  Rng rng = make_rng(10);
  const std::size_t H = 3, W = 4, Ho = 7, Wo = 9;
  auto x = random_tensor(rng, {1, 1, H, W}, -1, 1, false);
  const auto y = upsample_bilinear(x, Ho, Wo);
  auto taps = [](std::size_t o, std::size_t in, std::size_t out) {
    double src = (double(o) + 0.5) * double(in) / double(out) - 0.5;
    src = std::clamp(src, 0.0, double(in - 1));
    const auto i0 = std::size_t(std::floor(src));
    const auto i1 = std::min(i0 + 1, in - 1);
    return std::tuple{i0, i1, src - double(i0)};
  };
  double err = 0;
  for (std::size_t i = 0; i < Ho; ++i)
    for (std::size_t j = 0; j < Wo; ++j) {
      const auto [y0, y1, fy] = taps(i, H, Ho);
      const auto [x0, x1, fx] = taps(j, W, Wo);
      const D v = (1 - fy) * ((1 - fx) * x[y0 * W + x0] + fx * x[y0 * W + x1]) + fy * ((1 - fx) * x[y1 * W + x0] + fx * x[y1 * W + x1]);
      err = std::max(err, std::abs(v - y[i * Wo + j]));
    }
  EXPECT_LE(err, 1e-12);
}

TEST(Backward, SumAndSquare) {
  Rng rng = make_rng(11);
  auto x = random_tensor(rng, {5});
  backprop([&] { return sum(x); });
  for (std::size_t i = 0; i < 5; ++i) EXPECT_EQ(x.grad()[i], 1);
  x.zero_grad();
  backprop([&] { return sum(mul(x, x)); });
  for (std::size_t i = 0; i < 5; ++i) EXPECT_EQ(x.grad()[i], 2 * x[i]);
}

TEST(Backward, StaleTapeAndUnreachable) {
  auto x = Tensor<D>::full({3}, 2, true), unused = Tensor<D>::full({3}, 1, true);
  Tape<D> tape;
  TapeScope<D> scope(tape);
  const auto loss = sum(mul(x, x));
  tape.backward(loss);
  EXPECT_THROW(tape.backward(loss), StaleTapeError);
  EXPECT_FALSE(unused.has_grad() && std::any_of(unused.grad().begin(), unused.grad().end(), [](D g) { return g != 0; }));
  Tape<D> empty;
  EXPECT_THROW(empty.backward(Tensor<D>::scalar(1)), StaleTapeError);
}

TEST(Backward, LinearityOverOutputs) {
  Rng rng = make_rng(12);
  auto x = random_tensor(rng, {4});
  backprop([&] { return add(sum(exp(x)), sum(sigmoid(x))); });
  const auto joint = std::vector<D>(x.grad().begin(), x.grad().end());
  x.zero_grad();
  backprop([&] { return sum(exp(x)); });
  backprop([&] { return sum(sigmoid(x)); });
  EXPECT_LE(max_abs_diff(joint, x.grad()), 1e-15);
}

TEST(GradientSuite, EveryOpOverFiveSeeds) {
  verify::Options o;
  o.seeds = 5;
  const auto r = verify::op_gradients(o);
  EXPECT_TRUE(r.passed) << r.failure;
  EXPECT_LE(r.max_error, 1e-4);
}

TEST(GradientSuite, BroadcastSoundness) {
  const auto r = verify::broadcasting({});
  EXPECT_TRUE(r.passed) << r.failure;
}

TEST(GradientSuite, InjectedSignFlipNamesTheOp) {
  for (const char* op : {"silu", "conv2d", "selective_scan", "cosine_gate"}) {
    detail::flags().sign_flip = op_from_name(op);
    verify::Options o;
    o.seeds = 1;
    const auto r = verify::op_gradients(o);
    detail::flags().sign_flip.reset();
    EXPECT_FALSE(r.passed) << op;
    EXPECT_NE(r.failure.find(op), std::string::npos) << r.failure;
  }
}

TEST(FiniteDiff, IdentitySigmoidAndNondeterminism) {
  auto x = Tensor<D>::scalar(0, true);
  auto r = finite_diff_check<D>(std::function<Tensor<D>(const Tensor<D>&)>([](const Tensor<D>& v) { return mul_scalar(v, D(1)); }), x);
  EXPECT_LE(r.max_abs_error, 1e-10);
  x.zero_grad();
  backprop([&] { return sigmoid(x); });
  EXPECT_NEAR(x.grad()[0], 0.25, 1e-8);
  int calls = 0;
  EXPECT_THROW(finite_diff_check<D>(std::function<Tensor<D>()>([&] { return add_scalar(x, D(++calls)); }), x),
               NondeterminismError);
}

TEST(Determinism, IdenticalSeedIdenticalForward) {
  ModelConfig cfg;
  cfg.seed = 3;
  SamambaNet<D> a(cfg), b(cfg);
  Rng rng = make_rng(13);
  auto img = random_tensor(rng, {1, 3, 64, 64}, 0, 1, false);
  EXPECT_EQ(values(a.forward(img, false)), values(b.forward(img, false)));
}

TEST(Adam, ZeroGradClosedFormAndBowl) {
  auto p = Tensor<D>::full({3}, 0.5, true);
  p.zero_grad();
  std::vector<Tensor<D>> ps{p};
  AdamState<D> s;
  s.lr = 1e-3;
  adam_step(ps, s);
  EXPECT_EQ(values(p), (std::vector<D>{0.5, 0.5, 0.5}));
  EXPECT_EQ(s.step, 1u);

  auto q = Tensor<D>::scalar(2.0, true);
  q.mutable_grad()[0] = 1;
  std::vector<Tensor<D>> qs{q};
  AdamState<D> s2;
  s2.lr = 1e-2;
  adam_step(qs, s2);
  EXPECT_NEAR(q[0], 2.0 - 1e-2, 1e-9);

  auto w = Tensor<D>::scalar(1.0, true);
  std::vector<Tensor<D>> ws{w};
  AdamState<D> s3;
  s3.lr = 1e-2;
  for (int i = 0; i < 2000; ++i) {
    w.zero_grad();
    backprop([&] { return mul(w, w); });
    adam_step(ws, s3);
  }
  EXPECT_LT(std::abs(w[0]), 1e-3);
  EXPECT_EQ(s3.step, 2000u);
}

TEST(Checkpoint, BitExactRoundTripAndTruncation) {
  Rng rng = make_rng(14);
  auto a = random_tensor(rng, {2, 3}, -1e10, 1e10, false);
  const Tensor<float> f({4}, {1.5f, -0.f, 3e-38f, 7.f});
  std::vector<CheckpointRecord> recs{make_record("a", a), make_record("f", f), make_bytes_record("cfg", "k = v")};
  const auto bytes = encode_checkpoint(recs);
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "SMBK");
  const auto back = decode_checkpoint(bytes);
  ASSERT_EQ(back.size(), 3u);
  EXPECT_EQ(record_values<D>(back[0]), values(a));
  const auto fv = record_values<float>(back[1]);
  EXPECT_EQ(std::memcmp(fv.data(), f.ptr(), 16), 0);
  EXPECT_EQ(encode_checkpoint(back), bytes);
  auto cut = bytes;
  cut.resize(bytes.size() - 3);
  try {
    decode_checkpoint(cut);
    FAIL();
  } catch (const CheckpointError& e) {
    EXPECT_NE(std::string(e.what()).find("at byte"), std::string::npos) << e.what();
  }
}
