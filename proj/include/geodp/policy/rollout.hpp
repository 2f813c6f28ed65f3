#pragma once

// Receding-horizon execution: plan a T_p chunk from the latest observation
// window, execute its first T_a actions, replan.

#include <deque>
#include <optional>
#include <vector>

#include "geodp/env/dataset.hpp"
#include "geodp/ftr/cache.hpp"
#include "geodp/policy/policy.hpp"

namespace geodp::policy {

// What a planner sees at a replanning point. recent holds the last frames of
// the episode (up to T_o), oldest first, with their frame indices.
struct PlanView {
  std::int64_t step = 0;
  const env::WorldState* state = nullptr;
  const std::deque<std::pair<std::int64_t, env::Observation>>* recent = nullptr;
};

struct PlanEvent {
  std::int64_t step = 0;
  std::vector<env::Action> chunk;
  std::size_t executed = 0;
};

struct RolloutOptions {
  std::size_t action_steps = 8;
  std::size_t history = 2;  // frames kept for the planner
  bool record_images = false;
};

struct RolloutResult {
  env::EpisodeRecord record;
  std::vector<PlanEvent> plans;
  bool success = false;
  std::size_t steps = 0;
};

// Planner: begin_episode(std::uint64_t id) and std::vector<env::Action> plan(const PlanView&).
template <class Planner>
RolloutResult receding_horizon_execute(Planner& planner, env::PlanarEnv& environment, env::Task task,
                                       std::uint64_t seed, const RolloutOptions& opt) {
  require(opt.action_steps >= 1 && opt.history >= 1, ErrorKind::config, "rollout: T_a and history must be >= 1");
  planner.begin_episode(seed);
  std::deque<std::pair<std::int64_t, env::Observation>> recent;
  recent.emplace_back(0, environment.reset(task, seed));
  env::EpisodeRecorder rec(task, seed);
  RolloutResult out;
  std::int64_t t = 0;
  bool done = false;
  while (!done) {
    PlanView view{t, &environment.state(), &recent};
    PlanEvent ev;
    ev.step = t;
    ev.chunk = planner.plan(view);
    require(ev.chunk.size() >= opt.action_steps, ErrorKind::shape,
            "rollout: planner returned " + std::to_string(ev.chunk.size()) + " actions, need at least T_a=" +
                std::to_string(opt.action_steps));
    for (std::size_t j = 0; j < opt.action_steps && !done; ++j) {
      const env::Action a = env::clamp_action(ev.chunk[j]);
      if (opt.record_images) {
        rec.record(recent.back().second, a);
      } else {
        env::Observation light;
        light.images = Tensor<float>({0, 3, 0, 0});
        light.proprio = recent.back().second.proprio;
        rec.record(light, a);
      }
      env::StepResult r;
      try {
        r = environment.step(a);
      } catch (const Error& e) {
        throw Error(e.kind(), "rollout step " + std::to_string(t) + ": " + e.what());
      }
      ++t;
      ++ev.executed;
      done = r.done;
      out.success = r.success;
      recent.emplace_back(t, std::move(r.observation));
      while (recent.size() > opt.history) recent.pop_front();
    }
    out.plans.push_back(std::move(ev));
  }
  out.steps = static_cast<std::size_t>(t);
  out.record = std::move(rec).finish(out.success);
  return out;
}

// Scripted expert simulated forward for a whole chunk.
class ExpertPlanner {
 public:
  explicit ExpertPlanner(std::size_t horizon) : horizon_(horizon) {}

  void begin_episode(std::uint64_t) {}

  std::vector<env::Action> plan(const PlanView& view) const {
    std::vector<env::Action> chunk;
    env::WorldState s = *view.state;
    while (chunk.size() < horizon_) {
      const env::Action a = s.done ? chunk.back() : env::clamp_action(env::expert_action(s));
      chunk.push_back(a);
      if (!s.done) s = env::transition(s, a);
    }
    return chunk;
  }

 private:
  std::size_t horizon_;
};

// Learned policy planner. One instance per worker thread: it owns the token
// cache and the sampling stream.
template <class T>
class PolicyPlanner {
 public:
  PolicyPlanner(const DiffusionPolicy<T>& policy, const ParamStore<T>& weights, bool use_ftr, std::uint64_t seed,
                double prune_rate = 0.0)
      : policy_(&policy), weights_(&weights), use_ftr_(use_ftr), seed_(seed), prune_rate_(prune_rate),
        cache_(policy.config().obs_steps) {}

  void begin_episode(std::uint64_t id) {
    episode_ = id;
    cache_.invalidate();
    rng_ = Rng(derive_seed(derive_seed(seed_, "sample"), id));
  }

  std::vector<env::Action> plan(const PlanView& view) {
    const auto& pc = policy_->config();
    const auto idx = ftr::window_indices(view.step, pc.obs_steps);
    std::vector<Tensor<float>> frames;
    std::vector<ftr::FrameRef> refs;
    Tensor<double> proprio({1, pc.obs_steps, static_cast<std::size_t>(env::kProprioDim)});
    frames.reserve(idx.size());
    for (std::size_t j = 0; j < idx.size(); ++j) {
      const auto& obs = find(*view.recent, idx[j]);
      Shape s{1};
      s.insert(s.end(), obs.images.shape().begin(), obs.images.shape().end());
      frames.push_back(obs.images.reshaped(s));
      std::copy(obs.proprio.begin(), obs.proprio.end(), proprio.data() + j * env::kProprioDim);
    }
    for (std::size_t j = 0; j < idx.size(); ++j) refs.push_back({idx[j], &frames[j]});
    const ftr::FrameEncoder<T> encode = [this](const Tensor<float>& images) {
      ad::Graph<T> g(false);
      g.attach(*weights_);
      return policy_->encoder().encode(g, images).value();
    };
    auto window = use_ftr_ ? cache_.window_tokens(episode_, refs, encode) : full_.window_tokens(episode_, refs, encode);
    if (prune_rate_ > 0.0)
      for (auto& ts : window) ts = encoder::prune_tokens(ts, prune_rate_, rng_);
    const auto cond = policy_->condition(*weights_, window, proprio);
    const auto chunk = policy_->action_norm.denormalize(policy_->sample(*weights_, cond, rng_));
    std::vector<env::Action> out;
    for (std::size_t j = 0; j < pc.horizon; ++j)
      out.push_back(env::Action::from(std::span<const double>(chunk.data() + j * pc.action_dim, pc.action_dim)));
    return out;
  }

  const ftr::CacheStats& stats() const { return use_ftr_ ? cache_.stats() : full_.stats(); }

 private:
  static const env::Observation& find(const std::deque<std::pair<std::int64_t, env::Observation>>& recent,
                                       std::int64_t index) {
    for (const auto& [i, o] : recent)
      if (i == index) return o;
    fail(ErrorKind::coherence, "planner: frame " + std::to_string(index) + " is not in the observation history");
  }

  const DiffusionPolicy<T>* policy_;
  const ParamStore<T>* weights_;
  bool use_ftr_;
  std::uint64_t seed_;
  double prune_rate_;
  std::uint64_t episode_ = 0;
  Rng rng_;
  ftr::FrameTokenCache<T> cache_;
  ftr::FullRecompute<T> full_;
};

}  // namespace geodp::policy
