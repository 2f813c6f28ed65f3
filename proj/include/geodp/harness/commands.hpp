#pragma once

// The five CLI commands as library calls. Each writes its outputs under
// `out` and returns a JSON summary.

#include <filesystem>
#include <optional>

#include "geodp/harness/bench.hpp"
#include "geodp/harness/trainer.hpp"

namespace geodp::harness {

struct CommandContext {
  RunConfig config;
  fs::path out = "out";
  std::optional<fs::path> checkpoint;
  std::optional<fs::path> history;
  std::optional<fs::path> resume;
  std::optional<std::int64_t> stop_after;
  std::function<void(const std::string&)> log = [](const std::string&) {};

  fs::path demo_dir() const { return config.demo_dir.empty() ? out / "demos" : fs::path(config.demo_dir); }
};

inline json cmd_gen_demos(const CommandContext& ctx) {
  const auto& c = ctx.config;
  c.validate();
  const auto demos = env::generate_demos(c.task, c.demo_episodes, c.seed, c.env_config());
  env::save_dataset(ctx.demo_dir(), demos, {{"task", env::task_name(c.task)}, {"seed", c.seed}});
  std::size_t steps = 0;
  for (const auto& d : demos) steps += d.steps();
  ctx.log("wrote " + std::to_string(demos.size()) + " episodes to " + ctx.demo_dir().string());
  return {{"episodes", demos.size()}, {"steps", steps}, {"dir", ctx.demo_dir().string()}};
}

inline json cmd_train(const CommandContext& ctx) {
  ctx.config.validate();
  require(fs::exists(ctx.demo_dir() / "index.json"), ErrorKind::io,
          "no demos at " + ctx.demo_dir().string() + "; run gen-demos first");
  auto demos = env::load_dataset(ctx.demo_dir());
  Trainer trainer(ctx.config, std::move(demos), TrainOptions{ctx.out, ctx.resume, ctx.stop_after, ctx.log});
  const auto summary = trainer.run();
  json hist = json::array();
  std::vector<double> rates;
  for (const auto& h : summary.history) {
    hist.push_back({{"epoch", h.epoch}, {"success_rate", h.success_rate}});
    rates.push_back(h.success_rate);
  }
  json out = {{"epochs", summary.completed_epochs}, {"history", hist}};
  if (rates.size() >= 5) out["top5"] = top_k_json(top_k(rates));
  return out;
}

// Model with EMA weights from a checkpoint; the architecture comes from the
// checkpoint's embedded config.
inline std::unique_ptr<Model> model_from_checkpoint(const fs::path& path) {
  const auto blob = load_checkpoint(path);
  const auto saved = checkpoint_config(blob);
  auto model = std::make_unique<Model>(saved.encoder, saved.policy, saved.seed);
  restore_model(*model, blob, true);
  return model;
}

inline void check_architecture(const RunConfig& run, const Model& model) {
  require(run.encoder.views == model.encoder_config().views && run.encoder.height == model.encoder_config().height &&
              run.encoder.width == model.encoder_config().width,
          ErrorKind::config, "checkpoint camera setup does not match the run config");
}

inline std::vector<double> load_history(const fs::path& path) {
  try {
    return parse_history(json::parse(read_file(path)));
  } catch (const json::exception& e) {
    fail(ErrorKind::config, path.string() + ": " + e.what());
  }
}

inline json cmd_eval(const CommandContext& ctx) {
  const auto& c = ctx.config;
  c.validate();
  require(ctx.checkpoint || ctx.history, ErrorKind::usage, "eval needs --checkpoint and/or --history");
  json report = {{"task", env::task_name(c.task)}, {"seed", c.seed}};
  fs::create_directories(ctx.out);
  if (ctx.checkpoint) {
    const auto model = model_from_checkpoint(*ctx.checkpoint);
    check_architecture(c, *model);
    const auto result = evaluate_policy(*model, model->params(), c);
    report["checkpoint"] = ctx.checkpoint->filename().string();
    report["eval"] = result.to_json();
    write_file(ctx.out / "eval.csv", result.to_csv());
    ctx.log("success " + fmt(result.success_rate()) + "% (" + result.outcome_string() + ")");
  }
  if (ctx.history) {
    const auto rates = load_history(*ctx.history);
    report["history"] = rates;
    report["top5"] = top_k_json(top_k(rates));
  }
  write_file(ctx.out / "eval.json", report.dump(2) + "\n");
  return report;
}

inline json cmd_perturb_eval(const CommandContext& ctx) {
  const auto& c = ctx.config;
  c.validate();
  require(ctx.checkpoint.has_value(), ErrorKind::usage, "perturb-eval needs --checkpoint");
  const auto model = model_from_checkpoint(*ctx.checkpoint);
  check_architecture(c, *model);
  std::string csv = "delta,success_rate,outcomes\n";
  json rows = json::array();
  for (double delta : c.perturb_deltas) {
    const auto result = evaluate_policy(*model, model->params(), c, delta);
    csv += fmt(delta) + "," + fmt(result.success_rate()) + "," + result.outcome_string() + "\n";
    rows.push_back({{"delta", delta}, {"success_rate", result.success_rate()}, {"outcomes", result.outcome_string()}});
    ctx.log("delta " + fmt(delta) + ": " + fmt(result.success_rate()) + "%");
  }
  fs::create_directories(ctx.out);
  write_file(ctx.out / "perturb.csv", csv);
  return {{"rows", rows}};
}

inline json cmd_bench_latency(const CommandContext& ctx) {
  ctx.config.validate();
  const auto rows = bench_latency(ctx.config, [&](const BenchRow& r) {
    ctx.log("T=" + std::to_string(r.obs_steps) + " B=" + std::to_string(r.batch) + (r.ftr ? " ftr" : " full") +
            ": " + fmt(r.median_ms) + " ms");
  });
  fs::create_directories(ctx.out);
  write_file(ctx.out / "bench.csv", bench_csv(rows));
  return {{"rows", rows.size()}};
}

}  // namespace geodp::harness
