#include <iostream>

#include <CLI11.hpp>

#include "geodp/harness/commands.hpp"

using namespace geodp;

namespace {

int exit_code(ErrorKind k) {
  switch (k) {
    case ErrorKind::usage:
    case ErrorKind::config: return 2;
    case ErrorKind::io: return 3;
    default: return 1;
  }
}

void report_error(std::string_view kind, const std::string& message) {
  std::cerr << nlohmann::json{{"error", kind}, {"message", message}}.dump() << std::endl;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"geodp: multi-view diffusion policy toolkit"};
  app.require_subcommand(1);
  std::string config_path, preset, out = "out", checkpoint, history, resume;
  std::optional<std::uint64_t> seed;
  std::optional<std::int64_t> stop_after;
  bool quiet = false;

  const std::vector<std::string> names{"gen-demos", "train", "eval", "bench-latency", "perturb-eval"};
  for (const auto& name : names) {
    auto* sub = app.add_subcommand(name);
    sub->add_option("--config", config_path, "run configuration (JSON)")->required();
    sub->add_option("--preset", preset, "desk or full")->check(CLI::IsMember({"desk", "full"}));
    sub->add_option("--seed", seed, "override the configured seed");
    sub->add_option("--out", out, "output directory");
    sub->add_flag("--quiet", quiet, "no progress lines");
    if (name == "eval" || name == "perturb-eval") sub->add_option("--checkpoint", checkpoint, "checkpoint file");
    if (name == "eval") sub->add_option("--history", history, "success-rate history (JSON)");
    if (name == "train") {
      sub->add_option("--resume", resume, "checkpoint to resume from");
      sub->add_option("--stop-after", stop_after, "stop once this many epochs are complete");
    }
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    report_error("usage_error", e.what());
    return 2;
  }

  try {
    harness::CommandContext ctx;
    ctx.config = harness::load_config(config_path, preset);
    if (seed) ctx.config.seed = *seed;
    ctx.out = out;
    if (!checkpoint.empty()) ctx.checkpoint = checkpoint;
    if (!history.empty()) ctx.history = history;
    if (!resume.empty()) ctx.resume = resume;
    ctx.stop_after = stop_after;
    if (!quiet) ctx.log = [](const std::string& s) { std::cerr << s << std::endl; };

    const std::string cmd = app.get_subcommands().front()->get_name();
    nlohmann::json summary;
    if (cmd == "gen-demos") summary = harness::cmd_gen_demos(ctx);
    else if (cmd == "train") summary = harness::cmd_train(ctx);
    else if (cmd == "eval") summary = harness::cmd_eval(ctx);
    else if (cmd == "bench-latency") summary = harness::cmd_bench_latency(ctx);
    else summary = harness::cmd_perturb_eval(ctx);
    std::cout << summary.dump() << std::endl;
    return 0;
  } catch (const Error& e) {
    report_error(kind_name(e.kind()), e.what());
    return exit_code(e.kind());
  } catch (const std::exception& e) {
    report_error("internal_error", e.what());
    return 1;
  }
}
