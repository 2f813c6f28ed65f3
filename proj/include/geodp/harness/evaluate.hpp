#pragma once

// Policy evaluation over seeded episodes. Episode i runs with seed
// base_seed + i; workers each own an env and a planner, results are stored by
// episode index.

#include <atomic>
#include <exception>
#include <mutex>
#include <thread>

#include "geodp/harness/config.hpp"
#include "geodp/harness/report.hpp"
#include "geodp/policy/rollout.hpp"

namespace geodp::harness {

template <class T>
EvalResult evaluate_policy(const policy::DiffusionPolicy<T>& pol, const ParamStore<T>& weights, const RunConfig& cfg,
                           double noise_deg = 0.0) {
  const std::size_t n = cfg.eval_episodes;
  EvalResult result;
  result.episodes.resize(n);
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  auto worker = [&] {
    env::PlanarEnv environment(cfg.env_config(noise_deg));
    policy::PolicyPlanner<T> planner(pol, weights, cfg.ftr, cfg.seed, cfg.inference_prune_rate);
    policy::RolloutOptions opt{pol.config().action_steps, pol.config().obs_steps, false};
    for (std::size_t i = next++; i < n; i = next++) {
      try {
        const std::uint64_t seed = cfg.seed + i;
        const auto r = policy::receding_horizon_execute(planner, environment, cfg.task, seed, opt);
        result.episodes[i] = {seed, r.success, r.steps, r.plans.size()};
      } catch (...) {
        std::lock_guard lock(error_mutex);
        if (!error) error = std::current_exception();
        next = n;
      }
    }
  };
  const std::size_t workers = std::min(cfg.eval_workers, n);
  if (workers <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  if (error) std::rethrow_exception(error);
  return result;
}

}  // namespace geodp::harness
