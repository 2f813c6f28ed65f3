#include <gtest/gtest.h>

#include "geodp/env/planar_env.hpp"
#include "geodp/ftr/cache.hpp"

namespace geodp::ftr {
namespace {

using encoder::Encoder;
using encoder::EncoderConfig;

struct Rig {
  EncoderConfig config;
  ParamStore<float> ps;
  Encoder<float> enc;
  std::size_t calls = 0;

  Rig() {
    Rng rng(21);
    enc = Encoder<float>(ps, config, rng);
  }

  FrameEncoder<float> encoder() {
    return [this](const Tensor<float>& images) {
      ++calls;
      ad::Graph<float> g(false);
      g.attach(ps);
      return enc.encode(g, images).value();
    };
  }
};

// Frames of one rollout with random actions, each [1, V, 3, H, W].
std::vector<Tensor<float>> rollout_frames(env::Task task, std::uint64_t seed, std::size_t steps) {
  env::PlanarEnv e;
  auto obs = e.reset(task, seed);
  Rng rng(seed);
  std::vector<Tensor<float>> frames;
  for (std::size_t t = 0; t < steps; ++t) {
    frames.push_back(obs.images.reshaped({1, 2, 3, 32, 32}));
    if (e.state().done) {
      obs = e.observe();
      continue;
    }
    env::Action a{{rng.uniform(-0.05, 0.05), rng.uniform(-0.05, 0.05), 0.0}, rng.uniform()};
    obs = e.step(a).observation;
  }
  return frames;
}

std::vector<FrameRef> window(const std::vector<Tensor<float>>& frames, std::int64_t t, std::size_t to) {
  std::vector<FrameRef> w;
  for (auto i : window_indices(t, to)) w.push_back({i, &frames[static_cast<std::size_t>(i)]});
  return w;
}

TEST(WindowIndices, PadsWithFrameZero) {
  EXPECT_EQ(window_indices(0, 2), (std::vector<std::int64_t>{0, 0}));
  EXPECT_EQ(window_indices(1, 3), (std::vector<std::int64_t>{0, 0, 1}));
  EXPECT_EQ(window_indices(7, 2), (std::vector<std::int64_t>{6, 7}));
}

TEST(Cache, FreshStatsAreZero) {
  FrameTokenCache<float> c(2);
  EXPECT_EQ(c.stats(), CacheStats{});
  EXPECT_EQ(c.capacity(), 1u);
}

TEST(Cache, ColdPaddedWindowEncodesOnce) {
  Rig rig;
  const auto frames = rollout_frames(env::Task::reach, 1, 1);
  FrameTokenCache<float> c(2);
  auto out = c.window_tokens(0, window(frames, 0, 2), rig.encoder());
  EXPECT_EQ(c.stats().encoder_invocations, 1u);
  EXPECT_EQ(rig.calls, 1u);
  ASSERT_EQ(out.size(), 2u);
  EXPECT_EQ(out[0].tokens, out[1].tokens);
}

TEST(Cache, WarmStepsCountHitsAndInvocations) {
  Rig rig;
  const std::size_t n = 30;
  const auto frames = rollout_frames(env::Task::sweep_into, 2, n + 1);
  FrameTokenCache<float> c(2);
  c.window_tokens(0, window(frames, 0, 2), rig.encoder());
  for (std::size_t t = 1; t <= n; ++t) {
    const auto before = c.stats();
    c.window_tokens(0, window(frames, static_cast<std::int64_t>(t), 2), rig.encoder());
    EXPECT_EQ(c.stats().encoder_invocations - before.encoder_invocations, 1u);
    EXPECT_GE(c.stats().evictions, before.evictions);
  }
  EXPECT_EQ(c.stats().hits, n);
  EXPECT_EQ(c.stats().encoder_invocations, n + 1);
}

TEST(Cache, OneInvocationPerWarmStepForAnyWindow) {
  Rig rig;
  const auto frames = rollout_frames(env::Task::reach, 3, 20);
  for (std::size_t to = 1; to <= 6; ++to) {
    FrameTokenCache<float> c(to);
    FullRecompute<float> full;
    for (std::int64_t t = 0; t < 20; ++t) {
      const auto before = c.stats().encoder_invocations;
      c.window_tokens(0, window(frames, t, to), rig.encoder());
      full.window_tokens(0, window(frames, t, to), rig.encoder());
      EXPECT_EQ(c.stats().encoder_invocations - before, 1u) << "T_o=" << to << " t=" << t;
      EXPECT_LE(c.size(), c.capacity());
    }
    EXPECT_EQ(full.stats().encoder_invocations, 20 * to);
  }
}

TEST(Cache, MatchesFullRecomputeOverRollouts) {
  Rig rig;
  for (env::Task task : env::kAllTasks) {
    const auto frames = rollout_frames(task, 4, 100);
    FrameTokenCache<float> cache(2);
    FullRecompute<float> full;
    double worst = 0.0;
    for (std::int64_t t = 0; t < 100; ++t) {
      const auto w = window(frames, t, 2);
      const auto a = rig.enc.project_window(rig.ps, cache.window_tokens(7, w, rig.encoder()));
      const auto b = rig.enc.project_window(rig.ps, full.window_tokens(7, w, rig.encoder()));
      worst = std::max(worst, static_cast<double>(max_abs_diff(a, b)));
    }
    EXPECT_EQ(worst, 0.0) << env::task_name(task);
    EXPECT_EQ(cache.stats().encoder_invocations, 100u);
    EXPECT_EQ(full.stats().encoder_invocations, 200u);
  }
}

TEST(Cache, InvocationRatioApproachesWindowLength) {
  Rig rig;
  const auto frames = rollout_frames(env::Task::reach, 5, 200);
  for (std::size_t to : {2u, 4u}) {
    FrameTokenCache<float> c(to);
    FullRecompute<float> full;
    for (std::int64_t t = 0; t < 200; ++t) {
      c.window_tokens(0, window(frames, t, to), rig.encoder());
      full.window_tokens(0, window(frames, t, to), rig.encoder());
    }
    const double ratio = double(full.stats().encoder_invocations) / double(c.stats().encoder_invocations);
    EXPECT_NEAR(ratio, double(to), 0.01);
  }
}

TEST(Cache, EpisodeBoundaries) {
  Rig rig;
  const auto frames = rollout_frames(env::Task::reach, 6, 3);
  FrameTokenCache<float> c(2);
  c.invalidate();
  EXPECT_EQ(c.stats(), CacheStats{});
  c.window_tokens(1, window(frames, 0, 2), rig.encoder());
  c.window_tokens(1, window(frames, 1, 2), rig.encoder());
  try {
    c.window_tokens(2, window(frames, 0, 2), rig.encoder());
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::coherence);
  }
  const auto evictions = c.stats().evictions;
  c.invalidate();
  EXPECT_EQ(c.size(), 0u);
  EXPECT_EQ(c.stats().evictions, evictions + 1);
  const auto inv = c.stats().encoder_invocations;
  c.window_tokens(2, window(frames, 0, 2), rig.encoder());
  EXPECT_EQ(c.stats().encoder_invocations, inv + 1);
}

TEST(Cache, RejectsIncoherentWindows) {
  Rig rig;
  const auto frames = rollout_frames(env::Task::reach, 7, 6);
  FrameTokenCache<float> c(3);
  std::vector<FrameRef> gap{{0, &frames[0]}, {2, &frames[2]}, {3, &frames[3]}};
  EXPECT_THROW(c.window_tokens(0, gap, rig.encoder()), Error);
  std::vector<FrameRef> dup{{0, &frames[0]}, {1, &frames[1]}, {1, &frames[1]}};
  EXPECT_THROW(c.window_tokens(0, dup, rig.encoder()), Error);
  c.window_tokens(0, window(frames, 5, 3), rig.encoder());
  EXPECT_THROW(c.window_tokens(0, window(frames, 3, 3), rig.encoder()), Error);
}

}  // namespace
}  // namespace geodp::ftr
