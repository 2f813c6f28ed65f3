#pragma once

// Training loop: AdamW with warmup + cosine decay, EMA shadow weights,
// periodic EMA evaluation, top-k checkpoint retention and exact resume.
//
// Every epoch draws its shuffle and its noise/pruning stream from
// (seed, epoch), so a run resumed from an epoch-boundary checkpoint replays
// the same batches as an uninterrupted one.

#include <cstdio>
#include <filesystem>
#include <functional>
#include <numeric>
#include <optional>
#include <sstream>

#include "geodp/env/dataset.hpp"
#include "geodp/harness/evaluate.hpp"
#include "geodp/numerics/checkpoint.hpp"

namespace geodp::harness {

namespace fs = std::filesystem;

using Model = policy::DiffusionPolicy<float>;

inline const char* kMetricsHeader = "kind,epoch,step,lr,loss,diffusion_loss,proprio_loss,success_rate\n";

inline std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

// Builds the model for a config and restores weights (EMA weights when
// `use_ema`) and normalizers from a checkpoint blob.
inline void restore_model(Model& model, const BlobFile& blob, bool use_ema) {
  load_params(blob, use_ema ? "ema/" : "param/", model.params());
  model.action_norm = policy::Normalizer::load(blob, "norm/action/");
  model.proprio_norm = policy::Normalizer::load(blob, "norm/proprio/");
}

inline BlobFile load_checkpoint(const fs::path& path) { return BlobFile::load(path, kCheckpointMagic); }

inline RunConfig checkpoint_config(const BlobFile& blob) {
  require(blob.meta.contains("config"), ErrorKind::io, "checkpoint has no embedded config");
  return config_from_json(blob.meta.at("config"));
}

inline bool is_eval_epoch(const RunConfig& c, std::int64_t epoch) { return epoch > 0 && epoch % c.eval_interval == 0; }

inline std::vector<std::int64_t> eval_epochs(const RunConfig& c) {
  std::vector<std::int64_t> out;
  for (std::int64_t e = 1; e <= c.epochs; ++e)
    if (is_eval_epoch(c, e)) out.push_back(e);
  return out;
}

struct TrainOptions {
  fs::path out;
  std::optional<fs::path> resume;
  std::optional<std::int64_t> stop_after;  // stop once this many epochs are complete
  std::function<void(const std::string&)> log = [](const std::string&) {};
};

struct EvalPoint {
  std::int64_t epoch = 0;
  double success_rate = 0.0;
  std::string checkpoint;
};

struct TrainSummary {
  std::vector<EvalPoint> history;
  std::int64_t completed_epochs = 0;
};

class Trainer {
 public:
  Trainer(RunConfig cfg, std::vector<env::EpisodeRecord> demos, TrainOptions opt)
      : cfg_(std::move(cfg)), demos_(std::move(demos)), opt_(std::move(opt)),
        model_(cfg_.encoder, cfg_.policy, cfg_.seed), windows_(demos_, cfg_.policy.obs_steps, cfg_.policy.horizon) {
    cfg_.validate();
    for (const auto& d : demos_) {
      require(d.task == cfg_.task, ErrorKind::config,
              "demo task " + std::string(env::task_name(d.task)) + " does not match config task " +
                  std::string(env::task_name(cfg_.task)));
      require(d.images.rank() == 5 && d.images.dim(1) == cfg_.encoder.views &&
                  d.images.dim(3) == cfg_.encoder.height && d.images.dim(4) == cfg_.encoder.width,
              ErrorKind::config, "demo image shape " + to_string(d.images.shape()) + " does not match the encoder");
    }
    model_.action_norm = windows_.fit_actions();
    model_.proprio_norm = windows_.fit_proprio();
    opt_state_ = AdamW<float>(model_.params(), cfg_.optimizer.adamw());
    ema_ = Ema<float>(model_.params(), cfg_.ema);
    steps_per_epoch_ = static_cast<std::int64_t>((windows_.size() + cfg_.batch_size - 1) / cfg_.batch_size);
    lr_ = LrSchedule{cfg_.optimizer.lr, std::min(cfg_.optimizer.warmup_steps, steps_per_epoch_ * cfg_.epochs - 1),
                     steps_per_epoch_ * cfg_.epochs};
    lr_.validate();
  }

  Trainer(const Trainer&) = delete;
  Trainer& operator=(const Trainer&) = delete;

  const Model& model() const noexcept { return model_; }
  const Ema<float>& ema() const noexcept { return ema_; }
  std::int64_t steps_per_epoch() const noexcept { return steps_per_epoch_; }

  TrainSummary run() {
    fs::create_directories(opt_.out / "checkpoints");
    if (opt_.resume) resume(*opt_.resume);
    else metrics_ = kMetricsHeader;
    write_file(opt_.out / "metrics.csv", metrics_);

    while (epoch_ < cfg_.epochs) {
      if (opt_.stop_after && epoch_ >= *opt_.stop_after) break;
      train_epoch();
      ++epoch_;
      if (is_eval_epoch(cfg_, epoch_)) evaluate_and_checkpoint();
      write_file(opt_.out / "metrics.csv", metrics_);
    }
    if (!is_eval_epoch(cfg_, epoch_)) save_state(opt_.out / "checkpoints" / "last.ckpt");
    write_history();
    return {history_, epoch_};
  }

 private:
  void train_epoch() {
    Rng shuffle(derive_seed(derive_seed(cfg_.seed, "shuffle"), static_cast<std::uint64_t>(epoch_)));
    Rng rng(derive_seed(derive_seed(cfg_.seed, "train"), static_cast<std::uint64_t>(epoch_)));
    std::vector<std::size_t> order(windows_.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[shuffle.below(i)]);

    double sum_total = 0.0, sum_diff = 0.0, sum_prop = 0.0, lr = 0.0;
    const std::size_t nb = static_cast<std::size_t>(steps_per_epoch_);
    for (std::size_t b = 0; b < nb; ++b) {
      const std::size_t lo = b * order.size() / nb, hi = (b + 1) * order.size() / nb;
      const auto batch = windows_.batch(std::span<const std::size_t>(order.data() + lo, hi - lo));
      lr = lr_.at(step_);
      try {
        ad::Graph<float> g;
        g.attach(model_.params());
        auto l = model_.losses(g, batch, cfg_.lambda, cfg_.prune_rate, rng);
        g.backward(l.total);
        std::vector<Tensor<float>> grads;
        grads.reserve(model_.params().size());
        for (std::size_t s = 0; s < model_.params().size(); ++s) grads.push_back(g.param_grad(s));
        opt_state_.step(model_.params(), grads, lr);
        sum_total += l.total.value().item();
        sum_diff += l.diffusion.value().item();
        sum_prop += l.proprio.value().item();
      } catch (const Error& e) {
        throw Error(e.kind(), "epoch " + std::to_string(epoch_) + " step " + std::to_string(step_) + ": " + e.what());
      }
      ema_.update(model_.params());
      ++step_;
    }
    const double n = static_cast<double>(nb);
    metrics_ += "train," + std::to_string(epoch_ + 1) + "," + std::to_string(step_) + "," + fmt(lr) + "," +
                fmt(sum_total / n) + "," + fmt(sum_diff / n) + "," + fmt(sum_prop / n) + ",\n";
  }

  void evaluate_and_checkpoint() {
    const auto result = evaluate_policy(model_, ema_.shadow(), cfg_);
    const double rate = result.success_rate();
    metrics_ += "eval," + std::to_string(epoch_) + "," + std::to_string(step_) + ",,,,," + fmt(rate) + "\n";
    char name[32];
    std::snprintf(name, sizeof name, "epoch_%04lld.ckpt", static_cast<long long>(epoch_));
    history_.push_back({epoch_, rate, name});
    opt_.log("epoch " + std::to_string(epoch_) + ": success " + fmt(rate) + "% (" + result.outcome_string() + ")");
    save_state(opt_.out / "checkpoints" / name);
    save_state(opt_.out / "checkpoints" / "last.ckpt");
    prune_checkpoints();
  }

  // Keeps the best `keep_checkpoints` evaluation checkpoints (later epoch wins ties).
  void prune_checkpoints() {
    std::vector<EvalPoint> ranked;
    for (const auto& h : history_)
      if (!h.checkpoint.empty()) ranked.push_back(h);
    std::stable_sort(ranked.begin(), ranked.end(), [](const EvalPoint& a, const EvalPoint& b) {
      return a.success_rate != b.success_rate ? a.success_rate > b.success_rate : a.epoch > b.epoch;
    });
    for (std::size_t i = cfg_.keep_checkpoints; i < ranked.size(); ++i) {
      fs::remove(opt_.out / "checkpoints" / ranked[i].checkpoint);
      for (auto& h : history_)
        if (h.epoch == ranked[i].epoch) h.checkpoint.clear();
    }
  }

  nlohmann::json history_json() const {
    nlohmann::json h = nlohmann::json::array();
    for (const auto& p : history_)
      h.push_back({{"epoch", p.epoch}, {"success_rate", p.success_rate}, {"checkpoint", p.checkpoint}});
    return h;
  }

  void write_history() const {
    nlohmann::json j = {{"task", env::task_name(cfg_.task)}, {"history", history_json()}};
    std::vector<double> rates;
    for (const auto& p : history_) rates.push_back(p.success_rate);
    if (rates.size() >= 5) j["top5"] = top_k_json(top_k(rates, 5));
    write_file(opt_.out / "history.json", j.dump(2) + "\n");
  }

  void save_state(const fs::path& path) const {
    BlobFile blob;
    blob.meta = {{"config", config_to_json(cfg_)},
                 {"epoch", epoch_},
                 {"step", step_},
                 {"adam_steps", opt_state_.steps()},
                 {"ema_updates", ema_.updates()},
                 {"history", history_json()},
                 {"metrics", metrics_}};
    put_params(blob, "param/", model_.params());
    put_params(blob, "ema/", ema_.shadow());
    const auto& names = model_.params();
    for (std::size_t i = 0; i < names.size(); ++i) {
      blob.put("adam_m/" + names.name(i), opt_state_.first_moments()[i]);
      blob.put("adam_v/" + names.name(i), opt_state_.second_moments()[i]);
    }
    model_.action_norm.save(blob, "norm/action/");
    model_.proprio_norm.save(blob, "norm/proprio/");
    save_verified(blob, path);
  }

  void resume(const fs::path& path) {
    const auto blob = load_checkpoint(path);
    const auto saved = checkpoint_config(blob);
    require(config_to_json(saved) == config_to_json(cfg_), ErrorKind::config,
            "resume: checkpoint config differs from the run config");
    load_params(blob, "param/", model_.params());
    load_params(blob, "ema/", ema_.shadow());
    load_tensors(blob, "adam_m/", model_.params(), opt_state_.first_moments());
    load_tensors(blob, "adam_v/", model_.params(), opt_state_.second_moments());
    model_.action_norm = policy::Normalizer::load(blob, "norm/action/");
    model_.proprio_norm = policy::Normalizer::load(blob, "norm/proprio/");
    epoch_ = blob.meta.at("epoch").get<std::int64_t>();
    step_ = blob.meta.at("step").get<std::int64_t>();
    opt_state_.set_steps(blob.meta.at("adam_steps").get<std::int64_t>());
    ema_.set_updates(blob.meta.at("ema_updates").get<std::int64_t>());
    metrics_ = blob.meta.at("metrics").get<std::string>();
    history_.clear();
    for (const auto& h : blob.meta.at("history"))
      history_.push_back({h.at("epoch").get<std::int64_t>(), h.at("success_rate").get<double>(),
                          h.at("checkpoint").get<std::string>()});
    opt_.log("resumed at epoch " + std::to_string(epoch_));
  }

  RunConfig cfg_;
  std::vector<env::EpisodeRecord> demos_;
  TrainOptions opt_;
  Model model_;
  policy::DemoWindows windows_;
  AdamW<float> opt_state_;
  Ema<float> ema_;
  LrSchedule lr_;
  std::int64_t steps_per_epoch_ = 0;
  std::int64_t epoch_ = 0;
  std::int64_t step_ = 0;
  std::string metrics_;
  std::vector<EvalPoint> history_;
};

}  // namespace geodp::harness
