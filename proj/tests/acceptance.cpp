// Acceptance checks. Prints one PASS/FAIL line per criterion; exit status is
// non-zero when any selected criterion fails.
//
//   geodp_acceptance [--criterion N] [--work DIR]

#include <chrono>
#include <cmath>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "geodp/harness/commands.hpp"
#include "geodp/policy/toy.hpp"
#include "geodp/proprio/head.hpp"
#include "support/primitive_cases.hpp"

using namespace geodp;
using namespace geodp::harness;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string num(double v) {
  std::ostringstream os;
  os << v;
  return os.str();
}

fs::path fresh_dir(const fs::path& p) {
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

RunConfig small_config() {
  RunConfig c;
  c.epochs = 5;
  c.eval_interval = 1;
  c.eval_episodes = 4;
  c.batch_size = 16;
  c.demo_episodes = 2;
  c.max_steps = 12;
  c.encoder.height = c.encoder.width = 16;
  c.encoder.dim = 16;
  c.encoder.cond_dim = 16;
  c.encoder.proj_depth = 1;
  c.policy.horizon = 8;
  c.policy.action_steps = 4;
  c.policy.down_dims = {16, 32};
  c.policy.step_embed = 16;
  c.policy.proprio_hidden = 16;
  c.policy.train_steps = 20;
  c.policy.inference_steps = 4;
  c.optimizer.lr = 1e-3;
  c.optimizer.warmup_steps = 2;
  c.bench.obs_steps = {1, 3};
  c.bench.batches = {1, 4};
  c.bench.warmup = 1;
  c.bench.repeats = 3;
  return c;
}

CommandContext context(const RunConfig& c, const fs::path& out) {
  CommandContext ctx;
  ctx.config = c;
  ctx.out = out;
  return ctx;
}

// 1 --------------------------------------------------------------- gradients

Outcome gradient_suite() {
  const auto t0 = Clock::now();
  double worst = 0.0;
  std::string where;
  auto track = [&](double e, const std::string& name, std::uint64_t seed) {
    if (e > worst) {
      worst = e;
      where = name + " seed " + std::to_string(seed);
    }
  };
  const auto cases = testing::primitive_cases();
  const auto schedule = policy::build_schedule(100, 10);
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    for (const auto& c : cases) {
      Rng rng(seed);
      std::vector<Tensor<double>> inputs;
      for (const auto& s : c.inputs) inputs.push_back(testing::random_tensor(s, rng));
      track(testing::grad_check(c.fn, inputs, rng).worst_rel_error, c.name, seed);
    }
    // Diffusion head: a linear noise predictor, differentiated through the loss.
    {
      Rng rng(seed);
      const auto chunk = testing::random_tensor({3, 4, 2}, rng);
      const std::vector<Tensor<double>> inputs{testing::random_tensor({2, 2}, rng),
                                               testing::random_tensor({2}, rng)};
      const auto r = testing::grad_check(
          [&](ad::Graph<double>& g, const std::vector<ad::Var<double>>& v) {
            Rng noise(seed + 1000);
            return policy::diffusion_loss(g, chunk, schedule, noise,
                                          [&](ad::Graph<double>&, ad::Var<double> noisy, const std::vector<int>&) {
                                            return ad::add(ad::matmul(noisy, v[0]), v[1]);
                                          });
          },
          inputs, rng);
      track(r.worst_rel_error, "diffusion_loss", seed);
    }
    // Proprioception head: linear decoder into the proprio loss.
    {
      Rng rng(seed);
      const auto target = testing::random_tensor({4, 5}, rng);
      const std::vector<Tensor<double>> inputs{testing::random_tensor({4, 6}, rng),
                                               testing::random_tensor({6, 5}, rng),
                                               testing::random_tensor({5}, rng)};
      const auto r = testing::grad_check(
          [&](ad::Graph<double>& g, const std::vector<ad::Var<double>>& v) {
            return proprio::proprio_loss(ad::add(ad::matmul(v[0], v[1]), v[2]), g.constant(target));
          },
          inputs, rng);
      track(r.worst_rel_error, "proprio_loss", seed);
    }
  }
  const double secs = seconds_since(t0);
  return {worst <= 1e-4 && secs < 120.0,
          "worst rel err " + num(worst) + (where.empty() ? "" : " (" + where + ")") + ", " + num(secs) + " s"};
}

// 2 --------------------------------------------------------------- FTR equivalence

Outcome ftr_equivalence() {
  const auto t0 = Clock::now();
  const RunConfig cfg;
  ParamStore<float> ps;
  Rng init(derive_seed(cfg.seed, "init"));
  encoder::Encoder<float> enc(ps, cfg.encoder, init);
  const ftr::FrameEncoder<float> encode = [&](const Tensor<float>& images) {
    ad::Graph<float> g(false);
    g.attach(ps);
    return enc.encode(g, images).value();
  };
  const std::size_t to = cfg.policy.obs_steps;
  const Shape frame_shape{1, cfg.encoder.views, cfg.encoder.channels, cfg.encoder.height, cfg.encoder.width};
  double worst = 0.0;
  bool counts_ok = true;
  for (env::Task task : env::kAllTasks) {
    env::PlanarEnv e(cfg.env_config());
    auto obs = e.reset(task, 100 + static_cast<std::uint64_t>(task));
    Rng rng(7);
    std::vector<Tensor<float>> frames;
    ftr::FrameTokenCache<float> cache(to);
    ftr::FullRecompute<float> full;
    for (std::int64_t t = 0; t < 100; ++t) {
      frames.push_back(obs.images.reshaped(frame_shape));
      std::vector<ftr::FrameRef> refs;
      for (auto i : ftr::window_indices(t, to)) refs.push_back({i, &frames[static_cast<std::size_t>(i)]});
      const auto before = cache.stats().encoder_invocations;
      const auto a = enc.project_window(ps, cache.window_tokens(0, refs, encode));
      const auto b = enc.project_window(ps, full.window_tokens(0, refs, encode));
      if (t > 0 && cache.stats().encoder_invocations - before != 1) counts_ok = false;
      worst = std::max(worst, static_cast<double>(max_abs_diff(a, b)));
      if (!e.state().done) {
        env::Action act{{rng.uniform(-0.05, 0.05), rng.uniform(-0.05, 0.05), 0.0}, rng.uniform()};
        obs = e.step(act).observation;
      }
    }
  }
  const double secs = seconds_since(t0);
  return {worst <= 1e-6 && counts_ok && secs < 60.0,
          "max |diff| " + num(worst) + ", one invocation per warm step: " + (counts_ok ? "yes" : "no") + ", " +
              num(secs) + " s"};
}

// 3 --------------------------------------------------------------- latency

Outcome latency_protocol() {
  RunConfig cfg;
  cfg.bench.obs_steps = {1, 2, 3, 4, 5, 6};
  cfg.bench.batches = {128};
  cfg.bench.repeats = 5;
  const auto rows = bench_latency(cfg);
  bool ratio_ok = true, trend_ok = true;
  std::string detail;
  for (std::size_t t = 1; t <= 6; ++t) {
    const BenchRow *full = nullptr, *ftr = nullptr;
    for (const auto& r : rows)
      if (r.obs_steps == t) (r.ftr ? ftr : full) = &r;
    if (!full || !ftr) return {false, "missing bench rows for T=" + std::to_string(t)};
    if (full->invocations_per_step / ftr->invocations_per_step != static_cast<double>(t)) ratio_ok = false;
    if (t >= 2 && ftr->median_ms > full->median_ms) trend_ok = false;
    detail += " T" + std::to_string(t) + " " + num(full->median_ms) + "/" + num(ftr->median_ms) + "ms";
  }
  return {ratio_ok && trend_ok,
          std::string("ratio==T: ") + (ratio_ok ? "yes" : "no") + ", FTR faster for T>=2: " +
              (trend_ok ? "yes" : "no") + ";" + detail};
}

// 4 --------------------------------------------------------------- sampler toy

Outcome sampler_oracle() {
  const auto t0 = Clock::now();
  policy::GaussianToyConfig c;
  const auto r = policy::run_gaussian_toy(c);
  const double secs = seconds_since(t0);
  const bool ok = r.samples.size() == 1000 && std::abs(r.sample_mean - 0.3) <= 0.05 &&
                  std::abs(r.sample_std - 0.05) <= 0.1 && secs <= 300.0;
  return {ok, "mean " + num(r.sample_mean) + ", std " + num(r.sample_std) + ", " + num(secs) + " s"};
}

// 5 --------------------------------------------------------------- pruning

Outcome pruning_contract() {
  const encoder::EncoderConfig ec;
  ParamStore<double> ps;
  Rng init(1);
  encoder::Encoder<double> enc(ps, ec, init);
  Rng rng(2);
  Tensor<float> images({2, ec.views, ec.channels, ec.height, ec.width});
  for (auto& v : images.values()) v = static_cast<float>(rng.uniform());
  const auto ts = enc.encode_frame(ps, images, 0);
  const std::size_t np = ec.patches();
  bool counts_ok = true;
  for (std::size_t tenth = 0; tenth <= 9; ++tenth) {
    const double r = 0.1 * static_cast<double>(tenth);
    const std::size_t want = ((10 - tenth) * np + 9) / 10;  // exact ceil((1 - r) * Np)
    const auto p = encoder::prune_tokens(ts, r, rng);
    if (encoder::kept_patch_count(np, r) != want || p.tokens.dim(2) != want + 1) counts_ok = false;
    const auto idx = encoder::sample_prune(4, np, r, rng);
    if (idx.keep != want || idx.rows.size() != 4 * (want + 1)) counts_ok = false;
  }
  const auto plain = enc.project_window(ps, {ts, ts});
  Rng pr(3);
  const auto zero = enc.project_window(ps, {encoder::prune_tokens(ts, 0.0, pr), encoder::prune_tokens(ts, 0.0, pr)});
  ad::Graph<double> g(false);
  g.attach(ps);
  const auto all = encoder::sample_prune(2 * ec.views, np, 0.0, pr);
  const auto a = enc.project(g, g.constant(ts.tokens)).value();
  const auto b = enc.project(g, g.constant(ts.tokens), &all).value();
  const double diff = std::max(max_abs_diff(plain, zero), max_abs_diff(a, b));
  return {counts_ok && diff <= 1e-6,
          std::string("kept counts exact: ") + (counts_ok ? "yes" : "no") + ", r=0 max |diff| " + num(diff)};
}

// 6 --------------------------------------------------------------- end to end

Outcome end_to_end(const fs::path& work) {
  const auto t0 = Clock::now();
  struct Target {
    env::Task task;
    double threshold;
  };
  bool ok = true;
  std::string detail;
  for (const auto& [task, threshold] : {Target{env::Task::reach, 80.0}, Target{env::Task::sweep_into, 50.0}}) {
    RunConfig cfg;
    cfg.task = task;
    cfg.demo_episodes = 10;
    cfg.eval_episodes = 20;
    apply_preset(cfg, "desk");
    auto ctx = context(cfg, fresh_dir(work / env::task_name(task)));
    cmd_gen_demos(ctx);
    const auto summary = cmd_train(ctx);
    const double top5 = summary.contains("top5") ? summary["top5"]["mean"].get<double>() : 0.0;
    if (top5 < threshold) ok = false;
    detail += std::string(env::task_name(task)) + " top-5 " + num(top5) + "% (need " + num(threshold) + "), ";
  }
  const double secs = seconds_since(t0);
  return {ok && secs < 1800.0, detail + num(secs) + " s"};
}

// 7 --------------------------------------------------------------- EMA

Outcome ema_formula() {
  const EmaConfig c;
  const double d100 = ema_decay(c, 100), want = 1.0 - std::pow(101.0, -0.75);
  const bool ok = ema_decay(c, 0) == 0.0 && ema_decay(c, 1'000'000'000) == 0.9999 && std::abs(d100 - want) <= 1e-12;
  return {ok, "decay(0)=" + num(ema_decay(c, 0)) + ", decay(1e9)=" + num(ema_decay(c, 1'000'000'000)) +
                  ", |decay(100)-ref| " + num(std::abs(d100 - want))};
}

// 8 --------------------------------------------------------------- top-5

Outcome top5_reporting() {
  const std::vector<double> h{39, 5, 0, 0, 20, 35, 40, 38, 22, 41, 30, 33, 37, 36, 39};
  // By hand: best five 41, 40, 39, 39, 38; mean 197/5; squared deviations sum to 5.2.
  const double mean = 39.4, stddev = std::sqrt(1.04);
  const auto t = top_k(h);
  const bool ok = std::abs(t.mean - mean) <= 1e-9 && std::abs(t.stddev - stddev) <= 1e-9;
  return {ok, "mean " + num(t.mean) + ", std " + num(t.stddev)};
}

// 9 --------------------------------------------------------------- perturbation

Outcome perturbation_protocol(const fs::path& work) {
  auto cfg = small_config();
  auto ctx = context(cfg, fresh_dir(work / "train"));
  cmd_gen_demos(ctx);
  cmd_train(ctx);
  const auto ckpt = ctx.out / "checkpoints" / "last.ckpt";
  auto pctx = context(cfg, fresh_dir(work / "perturb"));
  pctx.checkpoint = ckpt;
  const auto perturb = cmd_perturb_eval(pctx);
  auto ectx = context(cfg, fresh_dir(work / "eval"));
  ectx.checkpoint = ckpt;
  const auto eval = cmd_eval(ectx);
  std::vector<double> deltas;
  for (const auto& r : perturb["rows"]) deltas.push_back(r["delta"].get<double>());
  const bool grid = deltas == std::vector<double>{0, 5, 10, 15};
  std::string outcomes;
  for (const auto& e : eval["eval"]["episodes"]) outcomes += e["success"].get<bool>() ? '1' : '0';
  const auto& row0 = perturb["rows"][0];
  const auto model = model_from_checkpoint(ckpt);
  const auto direct = evaluate_policy(*model, model->params(), cfg, 0.0);
  const bool same = row0["success_rate"] == eval["eval"]["success_rate"] && row0["outcomes"] == outcomes &&
                    direct.to_csv() == read_file(ectx.out / "eval.csv");
  return {grid && same, std::string("grid {0,5,10,15}: ") + (grid ? "yes" : "no") +
                            ", delta=0 matches eval: " + (same ? "yes" : "no")};
}

// 10 -------------------------------------------------------------- determinism

std::string bytes(const fs::path& p) { return read_file(p); }

std::string without_timing(const std::string& csv) {
  std::istringstream in(csv);
  std::string line, out;
  while (std::getline(in, line)) {
    std::vector<std::string> cols;
    std::stringstream ls(line);
    for (std::string c; std::getline(ls, c, ',');) cols.push_back(c);
    for (std::size_t i = 0; i < std::min<std::size_t>(cols.size(), 4); ++i) out += cols[i] + ",";
    out += cols.empty() ? "\n" : cols.back() + "\n";
  }
  return out;
}

std::vector<std::string> run_everything(const RunConfig& cfg, const fs::path& dir) {
  auto ctx = context(cfg, fresh_dir(dir));
  cmd_gen_demos(ctx);
  cmd_train(ctx);
  std::vector<std::string> out;
  for (const auto& name : {"index.json", "episode_0000.bin", "episode_0001.bin"})
    out.push_back(bytes(ctx.demo_dir() / name));
  out.push_back(bytes(dir / "metrics.csv"));
  out.push_back(bytes(dir / "history.json"));
  out.push_back(bytes(dir / "checkpoints" / "last.ckpt"));
  auto ectx = context(cfg, dir / "eval");
  ectx.checkpoint = dir / "checkpoints" / "last.ckpt";
  ectx.history = dir / "history.json";
  cmd_eval(ectx);
  out.push_back(bytes(dir / "eval" / "eval.json"));
  out.push_back(bytes(dir / "eval" / "eval.csv"));
  auto pctx = context(cfg, dir / "perturb");
  pctx.checkpoint = ectx.checkpoint;
  cmd_perturb_eval(pctx);
  out.push_back(bytes(dir / "perturb" / "perturb.csv"));
  cmd_bench_latency(context(cfg, dir / "bench"));
  out.push_back(without_timing(bytes(dir / "bench" / "bench.csv")));
  return out;
}

Outcome determinism(const fs::path& work) {
  const auto cfg = small_config();
  const auto a = run_everything(cfg, work / "a");
  const auto b = run_everything(cfg, work / "b");
  std::size_t diffs = 0;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (a[i] != b[i]) ++diffs;
  return {diffs == 0, std::to_string(a.size()) + " outputs compared, " + std::to_string(diffs) + " differ"};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"geodp acceptance checks"};
  int only = 0;
  std::string work = (fs::temp_directory_path() / "geodp_acceptance").string();
  app.add_option("--criterion", only, "run a single criterion (1-10)")->check(CLI::Range(1, 10));
  app.add_option("--work", work, "scratch directory");
  CLI11_PARSE(app, argc, argv);

  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"gradient suite", gradient_suite},
      {"FTR equivalence", ftr_equivalence},
      {"latency protocol", latency_protocol},
      {"sampler oracle", sampler_oracle},
      {"pruning contract", pruning_contract},
      {"end-to-end imitation", [&] { return end_to_end(fs::path(work) / "c6"); }},
      {"EMA formula", ema_formula},
      {"top-5 reporting", top5_reporting},
      {"perturbation protocol", [&] { return perturbation_protocol(fs::path(work) / "c9"); }},
      {"determinism", [&] { return determinism(fs::path(work) / "c10"); }},
  };
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    if (only != 0 && static_cast<std::size_t>(only) != i + 1) continue;
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    if (!o.pass) ++failures;
    std::cout << (o.pass ? "PASS" : "FAIL") << " " << i + 1 << " " << criteria[i].first << ": " << o.detail
              << std::endl;
  }
  return failures == 0 ? 0 : 1;
}
