#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>

#include "geodp/numerics/checkpoint.hpp"
#include "geodp/numerics/nn.hpp"
#include "geodp/numerics/optim.hpp"
#include "support/gradcheck.hpp"
#include "support/primitive_cases.hpp"

namespace geodp {
namespace {

using ad::Graph;

TEST(Forward, MatmulIdentity) {
  Rng rng(1);
  Graph<double> g(false);
  Tensor<double> eye({3, 3});
  for (int i = 0; i < 3; ++i) eye.at(i, i) = 1.0;
  auto a = testing::random_tensor({3, 3}, rng);
  auto out = ad::matmul(g.constant(eye), g.constant(a));
  EXPECT_EQ(out.value(), a);
}

TEST(Forward, SoftmaxUniform) {
  Graph<double> g(false);
  auto y = ad::softmax(g.constant(Tensor<double>({3}, 0.0)));
  for (double v : y.value().values()) EXPECT_DOUBLE_EQ(v, 1.0 / 3.0);
}

TEST(Forward, ConvIdentityKernel) {
  Rng rng(2);
  Graph<double> g(false);
  auto x = testing::random_tensor({2, 5, 3}, rng);
  Tensor<double> w({1, 3, 3});
  for (int c = 0; c < 3; ++c) w.at(0, c, c) = 1.0;
  auto y = ad::conv1d(g.constant(x), g.constant(w));
  EXPECT_EQ(y.value(), x);
}

TEST(Forward, ConvOutputLength) {
  Graph<double> g(false);
  auto y = ad::conv1d(g.constant(Tensor<double>({1, 16, 4})), g.constant(Tensor<double>({3, 4, 2})), 2, 1);
  EXPECT_EQ(y.shape(), (Shape{1, 8, 2}));
}

TEST(Forward, Deterministic) {
  auto run = [] {
    Rng rng(3);
    ParamStore<double> ps;
    nn::TransformerBlock<double> block(ps, "b", 8, 2, 2, rng);
    Graph<double> g(false);
    g.attach(ps);
    return block(g, g.constant(testing::random_tensor({2, 5, 8}, rng))).value();
  };
  EXPECT_EQ(run(), run());
}

TEST(Backward, SumGivesOnes) {
  Rng rng(4);
  Graph<double> g;
  auto x = g.leaf(testing::random_tensor({2, 3, 4}, rng));
  g.backward(ad::sum_all(x));
  for (double v : g.grad(x).values()) EXPECT_EQ(v, 1.0);
}

TEST(Backward, BilinearFormGivesTranspose) {
  Rng rng(5);
  Graph<double> g;
  auto a = g.leaf(testing::random_tensor({1, 3}, rng));
  auto b = g.constant(testing::random_tensor({3, 1}, rng));
  g.backward(ad::sum_all(ad::matmul(a, b)));
  for (int i = 0; i < 3; ++i) EXPECT_DOUBLE_EQ(g.grad(a)[i], b.value()[i]);
}

TEST(Backward, FanOutAccumulates) {
  Graph<double> g;
  auto x = g.leaf(Tensor<double>({2}, 3.0));
  auto y = ad::add(ad::scale(x, 2.0), ad::mul(x, x));
  g.backward(ad::sum_all(y));
  EXPECT_DOUBLE_EQ(g.grad(x)[0], 2.0 + 6.0);
}

class PrimitiveGradient : public ::testing::TestWithParam<std::size_t> {};

TEST_P(PrimitiveGradient, MatchesFiniteDifferences) {
  const auto cases = testing::primitive_cases();
  const auto& c = cases.at(GetParam());
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    std::vector<Tensor<double>> inputs;
    for (const auto& s : c.inputs) inputs.push_back(testing::random_tensor(s, rng));
    const auto r = testing::grad_check(c.fn, inputs, rng);
    ASSERT_LE(r.worst_rel_error, 1e-4) << c.name << " seed " << seed << " input " << r.input;
  }
}

INSTANTIATE_TEST_SUITE_P(All, PrimitiveGradient,
                         ::testing::Range<std::size_t>(0, testing::primitive_cases().size()),
                         [](const auto& info) { return testing::primitive_cases()[info.param].name; });

TEST(Errors, ShapeMismatchNamesNode) {
  Graph<double> g(false);
  auto a = g.constant(Tensor<double>({2, 3}));
  auto b = g.constant(Tensor<double>({4, 5}));
  try {
    ad::matmul(a, b);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::shape);
    EXPECT_NE(std::string(e.what()).find("node 2"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("matmul"), std::string::npos);
  }
}

TEST(Errors, NonFiniteOutput) {
  Graph<double> g(false);
  auto a = g.constant(Tensor<double>({2}, 1e300));
  try {
    ad::mul(a, a);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::numeric);
  }
}

TEST(Errors, GradientBeforeBackward) {
  Graph<double> g;
  auto x = g.leaf(Tensor<double>({2}, 1.0));
  auto y = ad::sum_all(x);
  EXPECT_THROW(g.grad(y), Error);
  Graph<double> nograd(false);
  auto z = ad::sum_all(nograd.leaf(Tensor<double>({2}, 1.0)));
  EXPECT_THROW(nograd.backward(z), Error);
}

TEST(Errors, ForeignVariable) {
  Graph<double> g1(false), g2(false);
  auto a = g1.constant(Tensor<double>({2}));
  auto b = g2.constant(Tensor<double>({2}));
  EXPECT_THROW(ad::add(a, b), Error);
}

ParamStore<double> scalar_store(double value) {
  ParamStore<double> ps;
  ps.add("p", Tensor<double>({1}, value));
  return ps;
}

TEST(AdamW, ZeroGradZeroDecayIsIdentity) {
  auto ps = scalar_store(0.37);
  AdamW<double> opt(ps, {.lr = 1e-3, .weight_decay = 0.0});
  std::vector<Tensor<double>> grads{Tensor<double>({1}, 0.0)};
  for (int i = 0; i < 10; ++i) opt.step(ps, grads, 1e-3);
  EXPECT_EQ(ps.value(0)[0], 0.37);
}

TEST(AdamW, SingleStepHandCalculation) {
  auto ps = scalar_store(1.0);
  AdamW<double> opt(ps, {});
  std::vector<Tensor<double>> grads{Tensor<double>({1}, 1.0)};
  opt.step(ps, grads, 1e-4);
  // m = 0.05, v = 0.001; bias corrections 0.05 and 0.001 give m_hat = v_hat = 1.
  const double expected = 1.0 * (1.0 - 1e-4 * 1e-6) - 1e-4 * 1.0 / (1.0 + 1e-8);
  EXPECT_DOUBLE_EQ(ps.value(0)[0], expected);
  EXPECT_EQ(opt.steps(), 1);
}

TEST(AdamW, WeightDecayClosedForm) {
  auto ps = scalar_store(2.0);
  const double lr = 0.1, wd = 0.01;
  AdamW<double> opt(ps, {.lr = lr, .weight_decay = wd});
  std::vector<Tensor<double>> grads{Tensor<double>({1}, 0.0)};
  for (int i = 0; i < 25; ++i) opt.step(ps, grads, lr);
  EXPECT_NEAR(ps.value(0)[0], 2.0 * std::pow(1.0 - lr * wd, 25), 1e-14);
}

TEST(AdamW, RejectsBadGradients) {
  auto ps = scalar_store(1.0);
  AdamW<double> opt(ps, {});
  std::vector<Tensor<double>> nan{Tensor<double>({1}, std::nan(""))};
  EXPECT_THROW(opt.step(ps, nan, 1e-4), Error);
  std::vector<Tensor<double>> wrong{Tensor<double>({2}, 0.0)};
  EXPECT_THROW(opt.step(ps, wrong, 1e-4), Error);
}

TEST(LrSchedule, WarmupAndCosine) {
  LrSchedule s{.base_lr = 1e-4, .warmup_steps = 500, .total_steps = 3000};
  EXPECT_EQ(s.at(0), 0.0);
  EXPECT_DOUBLE_EQ(s.at(500), 1e-4);
  EXPECT_NEAR(s.at(3000), 0.0, 1e-20);
  EXPECT_NEAR(s.at(499), s.at(500), 1e-4 / 500 + 1e-12);
  EXPECT_NEAR(s.at(1750), 0.5e-4, 1e-18);
  EXPECT_THROW(s.at(3001), Error);
  EXPECT_THROW(s.at(-1), Error);
  for (std::int64_t i = 0; i <= 3000; ++i) ASSERT_GE(s.at(i), 0.0);
}

TEST(Ema, DecayFormula) {
  EmaConfig c;
  EXPECT_EQ(ema_decay(c, 0), 0.0);
  EXPECT_NEAR(ema_decay(c, 100), 1.0 - std::pow(101.0, -0.75), 1e-12);
  EXPECT_EQ(ema_decay(c, 1'000'000'000), 0.9999);
  double prev = 0.0;
  for (std::int64_t s = 0; s < 100000; s += 7) {
    const double d = ema_decay(c, s);
    ASSERT_GE(d, prev);
    ASSERT_LE(d, c.max_decay);
    prev = d;
  }
}

TEST(Ema, FirstUpdateCopiesParams) {
  auto ps = scalar_store(1.0);
  Ema<double> ema(ps, {});
  ps.value(0)[0] = 5.0;
  ema.update(ps);
  EXPECT_EQ(ema.shadow().value(0)[0], 5.0);
  ps.value(0)[0] = 7.0;
  ema.update(ps);
  const double d = 1.0 - std::pow(2.0, -0.75);
  EXPECT_DOUBLE_EQ(ema.shadow().value(0)[0], d * 5.0 + (1.0 - d) * 7.0);
}

TEST(Checkpoint, RoundTripIsBitExact) {
  Rng rng(9);
  ParamStore<float> ps;
  ps.add_normal("a.weight", {3, 4}, 1.0, rng);
  ps.add_normal("b", {7}, 1e-20, rng);
  BlobFile blob;
  blob.meta["epoch"] = 12;
  put_params(blob, "param/", ps);
  const auto path = std::filesystem::temp_directory_path() / "geodp_ckpt_test.ckpt";
  save_verified(blob, path);
  const auto back = BlobFile::load(path, kCheckpointMagic);
  EXPECT_EQ(back.serialize(kCheckpointMagic), blob.serialize(kCheckpointMagic));
  ParamStore<float> restored;
  restored.add("a.weight", Tensor<float>({3, 4}));
  restored.add("b", Tensor<float>({7}));
  load_params(back, "param/", restored);
  EXPECT_EQ(restored.value(0), ps.value(0));
  EXPECT_EQ(restored.value(1), ps.value(1));
  EXPECT_EQ(back.meta["epoch"], 12);
  EXPECT_EQ(back.dtype("param/b"), "f32");
  std::filesystem::remove(path);
}

TEST(Checkpoint, DetectsCorruption) {
  BlobFile blob;
  blob.put("x", Tensor<float>({4}, 1.0f));
  auto bytes = blob.serialize(kCheckpointMagic);
  EXPECT_THROW(BlobFile::parse(bytes.substr(0, bytes.size() - 1), kCheckpointMagic), Error);
  EXPECT_THROW(BlobFile::parse("garbage\n{}\n", kCheckpointMagic), Error);
  ParamStore<float> ps;
  ps.add("x", Tensor<float>({5}));
  EXPECT_THROW(load_params(BlobFile::parse(bytes, kCheckpointMagic), "", ps), Error);
}

}  // namespace
}  // namespace geodp
