#include <gtest/gtest.h>

#include <cmath>

#include "geodp/policy/rollout.hpp"
#include "geodp/policy/toy.hpp"
#include "support/gradcheck.hpp"

namespace geodp::policy {
namespace {

TEST(Schedule, SingleStep) {
  const auto s = build_schedule(1, 1);
  ASSERT_EQ(s.inference, std::vector<int>{1});
  const auto steps = s.ddim_steps();
  ASSERT_EQ(steps.size(), 1u);
  EXPECT_EQ(steps[0].k, 1);
  EXPECT_EQ(steps[0].k_prev, 0);
}

TEST(Schedule, MonotoneAndBounded) {
  const auto s = build_schedule(100, 10);
  EXPECT_GT(s.alpha_bar[1], 0.0);
  EXPECT_LT(s.alpha_bar[1], 1.0);
  EXPECT_GT(s.alpha_bar[100], 0.0);
  EXPECT_LT(s.alpha_bar[100], s.alpha_bar[1]);
  for (int k = 1; k <= 100; ++k) {
    EXPECT_GT(s.beta[k], 0.0);
    EXPECT_LT(s.beta[k], 1.0);
    if (k > 1) {
      EXPECT_GE(s.beta[k], s.beta[k - 1]);
      EXPECT_LT(s.alpha_bar[k], s.alpha_bar[k - 1]);
    }
  }
}

TEST(Schedule, InferenceSubsetEvenSpacing) {
  const auto s = build_schedule(100, 10);
  EXPECT_EQ(s.inference, (std::vector<int>{10, 20, 30, 40, 50, 60, 70, 80, 90, 100}));
  const auto steps = s.ddim_steps();
  EXPECT_EQ(steps.front().k, 100);
  EXPECT_EQ(steps.back().k_prev, 0);
  EXPECT_THROW(build_schedule(5, 10), Error);
  EXPECT_THROW(build_schedule(0, 0), Error);
}

TEST(Ddim, ZeroNetIsProductOfAlphas) {
  const auto s = build_schedule(100, 10);
  Rng rng(1);
  const auto x0 = gaussian<double>({4, 16, 4}, rng);
  const auto out = ddim_sample(x0, s, [](const Tensor<double>& x, int) { return Tensor<double>(x.shape()); }, false);
  // Telescoping product of sqrt(abar_prev / abar_k) down to abar_0 = 1.
  const double factor = 1.0 / std::sqrt(s.alpha_bar[100]);
  for (std::size_t i = 0; i < out.size(); ++i) EXPECT_NEAR(out[i], factor * x0[i], 1e-9 * std::abs(factor * x0[i]) + 1e-12);
  double prod = 1.0;
  for (const auto& st : s.ddim_steps()) prod *= st.alpha;
  EXPECT_NEAR(prod, factor, 1e-9 * factor);
}

TEST(Ddim, DeterministicAndReportsNonFinite) {
  const auto s = build_schedule(100, 10);
  auto eps = [](const Tensor<double>& x, int k) {
    Tensor<double> e(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) e[i] = 0.1 * x[i] + 0.001 * k;
    return e;
  };
  Rng a(3), b(3);
  EXPECT_EQ(ddim_sample(gaussian<double>({2, 8, 4}, a), s, eps, true),
            ddim_sample(gaussian<double>({2, 8, 4}, b), s, eps, true));
  try {
    ddim_sample(Tensor<double>({1, 2}), s, [](const Tensor<double>& x, int k) {
      Tensor<double> e(x.shape());
      if (k == 70) e[0] = std::numeric_limits<double>::infinity();
      return e;
    }, false);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::numeric);
    EXPECT_NE(std::string(e.what()).find("k=70"), std::string::npos);
  }
}

TEST(Noising, VarianceMatchesSchedule) {
  const auto s = build_schedule(100, 10);
  Rng rng(5);
  const double a = 0.4;
  for (int k : {5, 50, 95}) {
    double sum = 0.0, sq = 0.0;
    const int n = 10000;
    for (int i = 0; i < n; ++i) {
      const double v = s.sqrt_ab(k) * a + s.sqrt_one_minus_ab(k) * rng.normal();
      sum += v;
      sq += v * v;
    }
    const double var = sq / n - (sum / n) * (sum / n);
    const double want = 1.0 - s.alpha_bar[k];
    EXPECT_NEAR(var, want, 0.1 * want) << "k=" << k;
  }
}

TEST(Loss, OracleNetsAndDeterminism) {
  const auto s = build_schedule(100, 10);
  Rng data(7);
  const auto chunk = testing::random_tensor({64, 16, 4}, data);
  // Recovers the injected noise exactly from the known clean chunk.
  auto exact = [&](ad::Graph<double>& g, ad::Var<double> noisy, const std::vector<int>& steps) {
    Tensor<double> e(noisy.shape());
    const std::size_t per = e.size() / steps.size();
    for (std::size_t i = 0; i < e.size(); ++i) {
      const int k = steps[i / per];
      e[i] = (noisy.value()[i] - s.sqrt_ab(k) * chunk[i]) / s.sqrt_one_minus_ab(k);
    }
    return g.constant(e);
  };
  auto zero = [](ad::Graph<double>& g, ad::Var<double> noisy, const std::vector<int>&) {
    return g.constant(Tensor<double>(noisy.shape()));
  };
  ad::Graph<double> g(false);
  Rng r1(9);
  EXPECT_NEAR(diffusion_loss(g, chunk, s, r1, exact).value().item(), 0.0, 1e-20);
  Rng r2(9);
  EXPECT_NEAR(diffusion_loss(g, chunk, s, r2, zero).value().item(), 1.0, 0.05);
  Rng r3(11), r4(11);
  EXPECT_EQ(diffusion_loss(g, chunk, s, r3, zero).value().item(), diffusion_loss(g, chunk, s, r4, zero).value().item());
  Tensor<double> bad = chunk;
  bad[3] = 2.0;
  try {
    diffusion_loss(g, bad, s, r1, zero);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::range);
  }
}

UnetConfig tiny_unet() {
  UnetConfig c;
  c.action_dim = 2;
  c.cond_dim = 3;
  c.down_dims = {4, 8};
  c.groups = 2;
  c.kernel = 3;
  c.step_embed = 4;
  return c;
}

TEST(Unet, ShapePreservedForHorizons) {
  UnetConfig c;
  c.cond_dim = 10;
  ParamStore<double> ps;
  Rng rng(13);
  ConditionalUnet1D<double> net(ps, c, rng);
  for (std::size_t tp : {8u, 16u, 32u}) {
    ad::Graph<double> g(false);
    g.attach(ps);
    auto x = g.constant(testing::random_tensor({2, tp, 4}, rng));
    auto cond = g.constant(testing::random_tensor({2, 10}, rng));
    EXPECT_EQ(net(g, x, {3, 70}, cond).shape(), (Shape{2, tp, 4}));
  }
  ad::Graph<double> g(false);
  g.attach(ps);
  EXPECT_THROW(net(g, g.constant(Tensor<double>({1, 7, 4})), {1}, g.constant(Tensor<double>({1, 10}))), Error);
  EXPECT_THROW(net(g, g.constant(Tensor<double>({1, 8, 4})), {1}, g.constant(Tensor<double>({1, 9}))), Error);
}

TEST(Unet, ConditionChangesOutput) {
  ParamStore<double> ps;
  Rng rng(15);
  ConditionalUnet1D<double> net(ps, tiny_unet(), rng);
  ad::Graph<double> g(false);
  g.attach(ps);
  auto x = g.constant(testing::random_tensor({1, 4, 2}, rng));
  const auto a = net(g, x, {10}, g.constant(Tensor<double>({1, 3}, 0.0))).value();
  const auto b = net(g, x, {10}, g.constant(Tensor<double>({1, 3}, 1.0))).value();
  const auto c = net(g, x, {90}, g.constant(Tensor<double>({1, 3}, 0.0))).value();
  EXPECT_GT(max_abs_diff(a, b), 1e-6);
  EXPECT_GT(max_abs_diff(a, c), 1e-6);
}

TEST(Loss, GradientMatchesFiniteDifferences) {
  ParamStore<double> ps;
  Rng rng(17);
  ConditionalUnet1D<double> net(ps, tiny_unet(), rng);
  const auto s = build_schedule(100, 10);
  const auto chunk = testing::random_tensor({2, 4, 2}, rng);
  const auto cond = testing::random_tensor({2, 3}, rng);
  auto loss_with = [&](ad::Graph<double>& g) {
    Rng r(19);
    return diffusion_loss(g, chunk, s, r, [&](ad::Graph<double>& gg, ad::Var<double> noisy, const std::vector<int>& k) {
      return net(gg, noisy, k, gg.constant(cond));
    });
  };
  ad::Graph<double> g;
  g.attach(ps);
  g.backward(loss_with(g));
  double worst = 0.0;
  for (std::size_t slot = 0; slot < ps.size(); ++slot) {
    const auto analytic = g.param_grad(slot);
    for (std::size_t i = 0; i < analytic.size(); i += 5) {
      auto eval = [&](double d) {
        ps.value(slot)[i] += d;
        ad::Graph<double> h(false);
        h.attach(ps);
        const double v = loss_with(h).value().item();
        ps.value(slot)[i] -= d;
        return v;
      };
      const double num = (eval(1e-6) - eval(-1e-6)) / 2e-6;
      const double rel = std::abs(num - analytic[i]) / std::max({std::abs(num), std::abs(analytic[i]), 1e-7});
      worst = std::max(worst, rel);
    }
  }
  EXPECT_LE(worst, 1e-4);
}

TEST(Normalizer, Examples) {
  const Tensor<double> data({3, 3}, {0.0, 5.0, 2.0, 1.0, 5.0, 4.0, 0.5, 5.0, 3.0});
  const auto n = Normalizer::fit(data);
  const auto y = n.normalize<double>(data);
  EXPECT_DOUBLE_EQ(y.at(0, 0), -1.0);
  EXPECT_DOUBLE_EQ(y.at(1, 0), 1.0);
  EXPECT_DOUBLE_EQ(y.at(0, 2), -1.0);
  EXPECT_DOUBLE_EQ(y.at(1, 2), 1.0);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_DOUBLE_EQ(y.at(i, 1), 0.0);
  EXPECT_LE(max_abs_diff(n.denormalize(y), data), 1e-12);
  EXPECT_THROW(Normalizer().normalize<double>(data), Error);
  EXPECT_THROW(n.normalize<double>(Tensor<double>({2, 2})), Error);
  // Out-of-range values are clamped on the way back.
  EXPECT_DOUBLE_EQ(n.denormalize(Tensor<double>({1, 3}, {3.0, 0.0, -4.0})).at(0, 0), 1.0);
}

TEST(Normalizer, BlobRoundTrip) {
  const auto n = Normalizer::from_range({-1.0, 0.0}, {3.0, 0.0});
  BlobFile blob;
  n.save(blob, "a.");
  const auto m = Normalizer::load(blob, "a.");
  EXPECT_EQ(m.mid(), n.mid());
  EXPECT_EQ(m.halfspan(), n.halfspan());
}

// Sends the same fixed action every step.
struct ConstantPlanner {
  std::size_t horizon;
  env::Action action{};
  int episodes = 0;
  void begin_episode(std::uint64_t) { ++episodes; }
  std::vector<env::Action> plan(const PlanView&) {
    std::vector<env::Action> out(horizon, action);
    for (std::size_t j = 0; j < horizon; ++j) out[j].delta[0] = -0.001 * static_cast<double>(j);
    return out;
  }
};

TEST(Rollout, PlanCountWithFullHorizon) {
  env::PlanarEnv e;
  ConstantPlanner p{16};
  p.action.gripper = 1.0;
  const auto r = receding_horizon_execute(p, e, env::Task::sweep_into, 3, RolloutOptions{16});
  ASSERT_FALSE(r.success);
  const int max_steps = env::task_spec(env::Task::sweep_into).max_steps;
  EXPECT_EQ(r.steps, static_cast<std::size_t>(max_steps));
  EXPECT_EQ(r.plans.size(), static_cast<std::size_t>((max_steps + 15) / 16));
  EXPECT_EQ(p.episodes, 1);
}

TEST(Rollout, ReplansEveryActionStepsAndExecutesChunkPrefix) {
  env::PlanarEnv e;
  ConstantPlanner p{16};
  const auto r = receding_horizon_execute(p, e, env::Task::reach, 4, RolloutOptions{8});
  ASSERT_FALSE(r.success);
  ASSERT_EQ(r.plans.size(), (r.steps + 7) / 8);
  std::size_t t = 0;
  for (std::size_t i = 0; i < r.plans.size(); ++i) {
    EXPECT_EQ(r.plans[i].step, static_cast<std::int64_t>(8 * i));
    for (std::size_t j = 0; j < r.plans[i].executed; ++j, ++t) {
      const auto want = env::clamp_action(r.plans[i].chunk[j]).to_array();
      for (std::size_t d = 0; d < 4; ++d) EXPECT_EQ(r.record.actions.at(t, d), want[d]);
    }
  }
  EXPECT_EQ(t, r.steps);
}

TEST(Rollout, ExpertPlannerReproducesExpert) {
  env::EnvConfig cfg;
  for (auto task : env::kAllTasks) {
    int loop_wins = 0, expert_wins = 0;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      env::PlanarEnv e(cfg);
      ExpertPlanner p(16);
      const auto r = receding_horizon_execute(p, e, task, seed, RolloutOptions{8});
      const auto ref = env::expert_episode(task, seed, cfg);
      loop_wins += r.success;
      expert_wins += ref.success;
      EXPECT_EQ(r.record.actions, ref.actions) << env::task_name(task) << " seed " << seed;
    }
    EXPECT_EQ(loop_wins, expert_wins);
  }
}

TEST(Rollout, StepErrorsCarryStepIndex) {
  env::PlanarEnv e;
  ConstantPlanner p{16};
  p.action.delta[1] = std::numeric_limits<double>::quiet_NaN();
  try {
    receding_horizon_execute(p, e, env::Task::reach, 1, RolloutOptions{8});
    FAIL();
  } catch (const Error& err) {
    EXPECT_EQ(err.kind(), ErrorKind::numeric);
  }
}

encoder::EncoderConfig small_encoder() {
  encoder::EncoderConfig c;
  c.height = c.width = 16;
  c.dim = 16;
  c.cond_dim = 16;
  c.agg_depth = 2;
  c.proj_depth = 1;
  return c;
}

PolicyConfig small_policy() {
  PolicyConfig p;
  p.horizon = 8;
  p.action_steps = 4;
  p.down_dims = {16, 32};
  p.proprio_hidden = 16;
  p.step_embed = 16;
  return p;
}

std::vector<env::EpisodeRecord> small_demos(std::size_t n) {
  env::EnvConfig ec;
  ec.height = ec.width = 16;
  return env::generate_demos(env::Task::reach, n, 0, ec);
}

TEST(Windows, PaddingAndShapes) {
  const auto demos = small_demos(2);
  DemoWindows w(demos, 2, 8);
  std::size_t total = 0;
  for (const auto& d : demos) total += d.steps();
  EXPECT_EQ(w.size(), total);
  const std::size_t last = demos[0].steps() - 1;
  const std::vector<std::size_t> ids{0, last};
  const auto b = w.batch(ids);
  EXPECT_EQ(b.images.shape(), (Shape{4, 2, 3, 16, 16}));
  const std::size_t frame = 2 * 3 * 16 * 16;
  // Sample 0: both frames are frame 0.
  EXPECT_TRUE(std::equal(b.images.data(), b.images.data() + frame, demos[0].images.data()));
  EXPECT_TRUE(std::equal(b.images.data() + frame, b.images.data() + 2 * frame, demos[0].images.data()));
  // Last step: actions past the end are zero motion with the last gripper command.
  for (std::size_t j = 1; j < 8; ++j) {
    for (std::size_t d = 0; d < 3; ++d) EXPECT_EQ(b.actions.at(1, j, d), 0.0);
    EXPECT_EQ(b.actions.at(1, j, 3), demos[0].actions.at(last, 3));
  }
  const auto an = w.fit_actions();
  const auto norm = an.normalize<double>(b.actions);
  for (double v : norm.values()) EXPECT_LE(std::abs(v), 1.0 + 1e-12);
}

TEST(Policy, LossesAndSampling) {
  const auto demos = small_demos(2);
  DiffusionPolicy<float> policy(small_encoder(), small_policy(), 0);
  DemoWindows w(demos, 2, 8);
  policy.action_norm = w.fit_actions();
  policy.proprio_norm = w.fit_proprio();
  const std::vector<std::size_t> ids{0, 5, 9};
  const auto batch = w.batch(ids);
  ad::Graph<float> g;
  g.attach(policy.params());
  Rng rng(1);
  auto l = policy.losses(g, batch, 0.1, 0.25, rng);
  EXPECT_TRUE(std::isfinite(l.total.value().item()));
  EXPECT_NEAR(l.total.value().item(), l.diffusion.value().item() + 0.1f * l.proprio.value().item(), 1e-5);
  g.backward(l.total);
  bool nonzero = false;
  for (float v : g.param_grad(*policy.params().find("encoder.patch.weight")).values()) nonzero |= v != 0.0f;
  EXPECT_TRUE(nonzero);

  // Planner: deterministic per episode seed, FTR and full recompute agree.
  env::EnvConfig ec;
  ec.height = ec.width = 16;
  ec.max_steps = 12;
  auto run = [&](bool ftr) {
    env::PlanarEnv e(ec);
    PolicyPlanner<float> p(policy, policy.params(), ftr, 5);
    auto r = receding_horizon_execute(p, e, env::Task::reach, 7, RolloutOptions{4});
    return std::make_pair(r, p.stats());
  };
  const auto [a, sa] = run(true);
  const auto [b, sb] = run(false);
  EXPECT_EQ(a.plans.size(), 3u);
  // Windows {0,0}, {3,4}, {7,8}: frame 3 and frame 7 were never seen before.
  EXPECT_EQ(sa.encoder_invocations, 1u + 2u + 2u);
  EXPECT_EQ(sb.encoder_invocations, 2u * 3u);
  for (std::size_t i = 0; i < a.plans.size(); ++i)
    for (std::size_t j = 0; j < 8; ++j) EXPECT_EQ(a.plans[i].chunk[j].to_array(), b.plans[i].chunk[j].to_array());
  const auto [c, sc] = run(true);
  EXPECT_EQ(c.record.actions, a.record.actions);
}

TEST(Policy, LambdaChangesEncoderGradient) {
  const auto demos = small_demos(1);
  DiffusionPolicy<double> policy(small_encoder(), small_policy(), 0);
  DemoWindows w(demos, 2, 8);
  policy.action_norm = w.fit_actions();
  policy.proprio_norm = w.fit_proprio();
  const std::vector<std::size_t> ids{0, 3};
  const auto batch = w.batch(ids);
  const std::size_t slot = *policy.params().find("encoder.patch.weight");
  auto grad = [&](double lambda) {
    ad::Graph<double> g;
    g.attach(policy.params());
    Rng rng(2);
    auto l = policy.losses(g, batch, lambda, 0.0, rng);
    g.backward(l.total);
    return std::make_pair(g.param_grad(slot), l);
  };
  const auto [g0, l0] = grad(0.0);
  const auto [g1, l1] = grad(0.1);
  EXPECT_GT(max_abs_diff(g0, g1), 1e-10);
  EXPECT_EQ(l0.total.id, l0.diffusion.id);
}

TEST(Toy, GaussianSamplerMatchesTarget) {
  GaussianToyConfig c;
  const auto r = run_gaussian_toy(c);
  ASSERT_EQ(r.samples.size(), 1000u);
  EXPECT_NEAR(r.sample_mean, 0.3, 0.05);
  EXPECT_NEAR(r.sample_std, 0.05, 0.1);
}

}  // namespace
}  // namespace geodp::policy
