#pragma once

// Run configuration: JSON file with a fixed schema. Unknown keys are errors.
// Resolution order: built-in defaults, then the file, then --preset, then
// command-line flags.

#include <filesystem>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "geodp/encoder/encoder.hpp"
#include "geodp/env/planar_env.hpp"
#include "geodp/numerics/blob.hpp"
#include "geodp/numerics/optim.hpp"
#include "geodp/policy/policy.hpp"

namespace geodp::harness {

using nlohmann::json;

struct OptimizerSettings {
  double lr = 1e-4;
  double beta1 = 0.95;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-6;
  std::int64_t warmup_steps = 500;

  AdamWConfig adamw() const { return {lr, beta1, beta2, eps, weight_decay}; }
};

struct BenchSettings {
  std::vector<std::size_t> obs_steps{1, 2, 3, 4, 5, 6};
  std::vector<std::size_t> batches{1, 2, 4, 8, 16, 32, 64, 128};
  int warmup = 3;
  int repeats = 20;
};

struct RunConfig {
  env::Task task = env::Task::reach;
  std::uint64_t seed = 0;
  std::int64_t epochs = 3000;
  std::size_t batch_size = 128;
  std::int64_t eval_interval = 200;
  std::size_t eval_episodes = 20;
  std::size_t eval_workers = 1;
  std::size_t keep_checkpoints = 5;
  std::size_t demo_episodes = 10;
  std::string demo_dir;  // empty: <out>/demos
  double lambda = 0.1;
  double prune_rate = 0.25;
  double inference_prune_rate = 0.0;
  bool ftr = true;
  int max_steps = 0;  // 0 keeps the task default
  OptimizerSettings optimizer;
  EmaConfig ema;
  encoder::EncoderConfig encoder;
  policy::PolicyConfig policy;
  BenchSettings bench;
  std::vector<double> perturb_deltas{0, 5, 10, 15};
  std::string preset;

  env::EnvConfig env_config(double noise_deg = 0.0) const {
    env::EnvConfig e;
    e.views = static_cast<int>(encoder.views);
    e.height = static_cast<int>(encoder.height);
    e.width = static_cast<int>(encoder.width);
    e.view_noise_deg = noise_deg;
    e.max_steps = max_steps;
    return e;
  }

  void validate() const {
    require(epochs > 0 && eval_interval > 0, ErrorKind::config, "config: epochs and eval_interval must be positive");
    require(epochs % eval_interval == 0, ErrorKind::config,
            "config: eval_interval (" + std::to_string(eval_interval) + ") must divide epochs (" +
                std::to_string(epochs) + ")");
    require(batch_size > 0 && eval_episodes > 0 && demo_episodes > 0 && eval_workers > 0, ErrorKind::config,
            "config: batch_size, eval_episodes, demo_episodes and eval_workers must be positive");
    require(lambda >= 0.0, ErrorKind::config, "config: lambda must be non-negative");
    require(prune_rate >= 0.0 && prune_rate < 1.0 && inference_prune_rate >= 0.0 && inference_prune_rate < 1.0,
            ErrorKind::config, "config: prune rates must lie in [0, 1)");
    require(optimizer.lr > 0.0 && optimizer.warmup_steps >= 0, ErrorKind::config,
            "config: optimizer lr must be positive and warmup non-negative");
    require(ema.power > 0.0 && ema.max_decay > 0.0 && ema.max_decay < 1.0 && ema.gamma > 0.0, ErrorKind::config,
            "config: invalid ema block");
    require(!perturb_deltas.empty(), ErrorKind::config, "config: perturb deltas must not be empty");
    for (double d : perturb_deltas) require(d >= 0.0, ErrorKind::config, "config: perturb deltas must be >= 0");
    require(bench.warmup >= 0 && bench.repeats >= 1, ErrorKind::config, "config: bench repeats must be >= 1");
    for (auto t : bench.obs_steps) require(t >= 1, ErrorKind::config, "config: bench obs_steps must be >= 1");
    for (auto b : bench.batches) require(b >= 1, ErrorKind::config, "config: bench batches must be >= 1");
    encoder.validate();
    policy.validate();
    require(policy.n_q == 2, ErrorKind::config, "config: the planar environment has n_q = 2");
    require(policy.action_dim == env::kActionDim, ErrorKind::config, "config: action_dim must be 4");
  }
};

namespace detail {

// Reads keys from one JSON object and rejects any key it was not asked about.
class Fields {
 public:
  Fields(const json& j, std::string where) : j_(j), where_(std::move(where)) {
    require(j.is_object(), ErrorKind::config, where_ + ": expected an object");
  }

  template <class V>
  void get(const char* key, V& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<V>();
    } catch (const json::exception& e) {
      fail(ErrorKind::config, where_ + "." + key + ": " + e.what());
    }
  }

  const json* child(const char* key) {
    seen_.insert(key);
    return j_.contains(key) ? &j_.at(key) : nullptr;
  }

  void finish() const {
    for (const auto& [k, v] : j_.items())
      require(seen_.contains(k), ErrorKind::config, where_ + ": unknown key '" + k + "'");
  }

 private:
  const json& j_;
  std::string where_;
  std::set<std::string> seen_;
};

}  // namespace detail

inline void apply_preset(RunConfig& c, const std::string& preset) {
  if (preset.empty()) return;
  if (preset == "full") {
    c.epochs = 3000;
    c.eval_interval = 200;
  } else if (preset == "desk") {
    c.epochs = 300;
    c.eval_interval = 50;
    c.optimizer.lr = 1e-3;
    c.optimizer.warmup_steps = 50;
    c.batch_size = 16;
  } else {
    fail(ErrorKind::config, "unknown preset '" + preset + "' (valid: desk, full)");
  }
  c.preset = preset;
}

inline RunConfig config_from_json(const json& j) {
  RunConfig c;
  detail::Fields f(j, "config");
  std::string task = std::string(env::task_name(c.task));
  f.get("task", task);
  c.task = env::parse_task(task);
  f.get("seed", c.seed);
  f.get("epochs", c.epochs);
  f.get("batch_size", c.batch_size);
  f.get("eval_interval", c.eval_interval);
  f.get("eval_episodes", c.eval_episodes);
  f.get("eval_workers", c.eval_workers);
  f.get("keep_checkpoints", c.keep_checkpoints);
  f.get("demo_episodes", c.demo_episodes);
  f.get("demo_dir", c.demo_dir);
  f.get("lambda", c.lambda);
  f.get("prune_rate", c.prune_rate);
  f.get("inference_prune_rate", c.inference_prune_rate);
  f.get("ftr", c.ftr);
  f.get("max_steps", c.max_steps);
  f.get("perturb_deltas", c.perturb_deltas);
  if (const json* o = f.child("optimizer")) {
    detail::Fields g(*o, "config.optimizer");
    g.get("lr", c.optimizer.lr);
    g.get("beta1", c.optimizer.beta1);
    g.get("beta2", c.optimizer.beta2);
    g.get("eps", c.optimizer.eps);
    g.get("weight_decay", c.optimizer.weight_decay);
    g.get("warmup_steps", c.optimizer.warmup_steps);
    g.finish();
  }
  if (const json* o = f.child("ema")) {
    detail::Fields g(*o, "config.ema");
    g.get("power", c.ema.power);
    g.get("max_decay", c.ema.max_decay);
    g.get("gamma", c.ema.gamma);
    g.finish();
  }
  if (const json* o = f.child("schedule")) {
    detail::Fields g(*o, "config.schedule");
    g.get("train_steps", c.policy.train_steps);
    g.get("inference_steps", c.policy.inference_steps);
    g.get("clip_sample", c.policy.clip_sample);
    g.finish();
  }
  if (const json* o = f.child("encoder")) {
    detail::Fields g(*o, "config.encoder");
    auto& e = c.encoder;
    g.get("views", e.views);
    g.get("height", e.height);
    g.get("width", e.width);
    g.get("patch", e.patch);
    g.get("dim", e.dim);
    g.get("agg_depth", e.agg_depth);
    g.get("agg_heads", e.agg_heads);
    g.get("proj_depth", e.proj_depth);
    g.get("proj_heads", e.proj_heads);
    g.get("mlp_ratio", e.mlp_ratio);
    g.get("cond_dim", e.cond_dim);
    g.get("view_embedding", e.view_embedding);
    g.finish();
  }
  if (const json* o = f.child("policy")) {
    detail::Fields g(*o, "config.policy");
    auto& p = c.policy;
    g.get("obs_steps", p.obs_steps);
    g.get("horizon", p.horizon);
    g.get("action_steps", p.action_steps);
    g.get("down_dims", p.down_dims);
    g.get("kernel", p.kernel);
    g.get("groups", p.groups);
    g.get("step_embed", p.step_embed);
    g.get("proprio_hidden", p.proprio_hidden);
    g.finish();
  }
  if (const json* o = f.child("bench")) {
    detail::Fields g(*o, "config.bench");
    g.get("obs_steps", c.bench.obs_steps);
    g.get("batches", c.bench.batches);
    g.get("warmup", c.bench.warmup);
    g.get("repeats", c.bench.repeats);
    g.finish();
  }
  f.finish();
  return c;
}

inline json config_to_json(const RunConfig& c) {
  const auto& e = c.encoder;
  const auto& p = c.policy;
  return {
      {"task", env::task_name(c.task)},
      {"seed", c.seed},
      {"epochs", c.epochs},
      {"batch_size", c.batch_size},
      {"eval_interval", c.eval_interval},
      {"eval_episodes", c.eval_episodes},
      {"eval_workers", c.eval_workers},
      {"keep_checkpoints", c.keep_checkpoints},
      {"demo_episodes", c.demo_episodes},
      {"demo_dir", c.demo_dir},
      {"lambda", c.lambda},
      {"prune_rate", c.prune_rate},
      {"inference_prune_rate", c.inference_prune_rate},
      {"ftr", c.ftr},
      {"max_steps", c.max_steps},
      {"perturb_deltas", c.perturb_deltas},
      {"optimizer",
       {{"lr", c.optimizer.lr},
        {"beta1", c.optimizer.beta1},
        {"beta2", c.optimizer.beta2},
        {"eps", c.optimizer.eps},
        {"weight_decay", c.optimizer.weight_decay},
        {"warmup_steps", c.optimizer.warmup_steps}}},
      {"ema", {{"power", c.ema.power}, {"max_decay", c.ema.max_decay}, {"gamma", c.ema.gamma}}},
      {"schedule",
       {{"train_steps", p.train_steps}, {"inference_steps", p.inference_steps}, {"clip_sample", p.clip_sample}}},
      {"encoder",
       {{"views", e.views},
        {"height", e.height},
        {"width", e.width},
        {"patch", e.patch},
        {"dim", e.dim},
        {"agg_depth", e.agg_depth},
        {"agg_heads", e.agg_heads},
        {"proj_depth", e.proj_depth},
        {"proj_heads", e.proj_heads},
        {"mlp_ratio", e.mlp_ratio},
        {"cond_dim", e.cond_dim},
        {"view_embedding", e.view_embedding}}},
      {"policy",
       {{"obs_steps", p.obs_steps},
        {"horizon", p.horizon},
        {"action_steps", p.action_steps},
        {"down_dims", p.down_dims},
        {"kernel", p.kernel},
        {"groups", p.groups},
        {"step_embed", p.step_embed},
        {"proprio_hidden", p.proprio_hidden}}},
      {"bench",
       {{"obs_steps", c.bench.obs_steps},
        {"batches", c.bench.batches},
        {"warmup", c.bench.warmup},
        {"repeats", c.bench.repeats}}},
  };
}

inline RunConfig load_config(const std::filesystem::path& path, const std::string& preset = "") {
  json j;
  try {
    j = json::parse(read_file(path));
  } catch (const json::exception& e) {
    fail(ErrorKind::config, path.string() + ": " + e.what());
  }
  RunConfig c = config_from_json(j);
  apply_preset(c, preset);
  return c;
}

}  // namespace geodp::harness
