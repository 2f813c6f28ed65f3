#pragma once

// Observation-encoding latency per inference step, with and without frame
// token reuse, over a grid of window lengths and batch sizes. Frames are
// synthetic; each timed step appends one new frame to the stream.

#include <algorithm>
#include <chrono>
#include <sstream>

#include "geodp/ftr/cache.hpp"
#include "geodp/harness/config.hpp"

namespace geodp::harness {

struct BenchRow {
  std::size_t obs_steps = 0;
  std::size_t batch = 0;
  bool ftr = false;
  double invocations_per_step = 0.0;
  double mean_ms = 0.0;
  double median_ms = 0.0;
  double iqr_ms = 0.0;
  int repeats = 0;
};

inline double quantile(std::vector<double> v, double q) {
  std::sort(v.begin(), v.end());
  const double pos = q * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(pos);
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

inline BenchRow bench_cell(const encoder::Encoder<float>& enc, const ParamStore<float>& ps,
                           const encoder::EncoderConfig& ec, std::size_t obs_steps, std::size_t batch, bool ftr,
                           const BenchSettings& bs, std::uint64_t seed) {
  const std::size_t warm = std::max<std::size_t>(static_cast<std::size_t>(bs.warmup), obs_steps);
  const std::size_t total = warm + static_cast<std::size_t>(bs.repeats);
  Rng rng(derive_seed(derive_seed(seed, "bench"), obs_steps * 1000 + batch));
  std::vector<Tensor<float>> frames;
  frames.reserve(total);
  for (std::size_t t = 0; t < total; ++t) {
    Tensor<float> f({batch, ec.views, ec.channels, ec.height, ec.width});
    for (auto& v : f.values()) v = static_cast<float>(rng.uniform());
    frames.push_back(std::move(f));
  }
  const ftr::FrameEncoder<float> encode = [&](const Tensor<float>& images) {
    ad::Graph<float> g(false);
    g.attach(ps);
    return enc.encode(g, images).value();
  };
  ftr::FrameTokenCache<float> cache(obs_steps);
  ftr::FullRecompute<float> full;
  std::vector<double> times;
  std::uint64_t before = 0;
  for (std::size_t t = 0; t < total; ++t) {
    if (t == warm) before = ftr ? cache.stats().encoder_invocations : full.stats().encoder_invocations;
    std::vector<ftr::FrameRef> refs;
    for (auto i : ftr::window_indices(static_cast<std::int64_t>(t), obs_steps))
      refs.push_back({i, &frames[static_cast<std::size_t>(i)]});
    const auto start = std::chrono::steady_clock::now();
    const auto window = ftr ? cache.window_tokens(0, refs, encode) : full.window_tokens(0, refs, encode);
    const auto cond = enc.project_window(ps, window);
    const auto stop = std::chrono::steady_clock::now();
    require(cond.all_finite(), ErrorKind::numeric, "bench: non-finite condition embedding");
    if (t >= warm) times.push_back(std::chrono::duration<double, std::milli>(stop - start).count());
  }
  const std::uint64_t after = ftr ? cache.stats().encoder_invocations : full.stats().encoder_invocations;
  BenchRow row;
  row.obs_steps = obs_steps;
  row.batch = batch;
  row.ftr = ftr;
  row.repeats = bs.repeats;
  row.invocations_per_step = static_cast<double>(after - before) / static_cast<double>(bs.repeats);
  for (double v : times) row.mean_ms += v;
  row.mean_ms /= static_cast<double>(times.size());
  row.median_ms = quantile(times, 0.5);
  row.iqr_ms = quantile(times, 0.75) - quantile(times, 0.25);
  return row;
}

inline std::vector<BenchRow> bench_latency(const RunConfig& cfg,
                                           const std::function<void(const BenchRow&)>& progress = {}) {
  ParamStore<float> ps;
  Rng init(derive_seed(cfg.seed, "init"));
  encoder::Encoder<float> enc(ps, cfg.encoder, init);
  std::vector<BenchRow> rows;
  for (auto t : cfg.bench.obs_steps)
    for (auto b : cfg.bench.batches)
      for (bool ftr : {false, true}) {
        rows.push_back(bench_cell(enc, ps, cfg.encoder, t, b, ftr, cfg.bench, cfg.seed));
        if (progress) progress(rows.back());
      }
  return rows;
}

inline std::string bench_csv(const std::vector<BenchRow>& rows) {
  std::ostringstream os;
  os << "obs_steps,batch,ftr,invocations_per_step,mean_ms,median_ms,iqr_ms,repeats\n";
  char buf[128];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%zu,%zu,%d,%.6g,%.4f,%.4f,%.4f,%d\n", r.obs_steps, r.batch, r.ftr ? 1 : 0,
                  r.invocations_per_step, r.mean_ms, r.median_ms, r.iqr_ms, r.repeats);
    os << buf;
  }
  return os.str();
}

}  // namespace geodp::harness
