#pragma once

// 1-D Gaussian toy: a small MLP denoiser learns scalar "actions" drawn from
// N(mean, std^2) under constant conditioning, then DDIM draws samples.

#include <cmath>
#include <vector>

#include "geodp/numerics/nn.hpp"
#include "geodp/numerics/optim.hpp"
#include "geodp/policy/policy.hpp"

namespace geodp::policy {

struct GaussianToyConfig {
  double mean = 0.3;
  double stddev = 0.05;
  int train_steps = 100;
  int inference_steps = 10;
  std::size_t hidden = 128;
  std::size_t step_embed = 16;
  std::size_t batch = 256;
  std::int64_t iterations = 3000;
  double lr = 2e-3;
  std::size_t samples = 1000;
  bool clip_sample = true;
  std::uint64_t seed = 0;
};

struct GaussianToyResult {
  std::vector<double> samples;
  double sample_mean = 0.0;
  double sample_std = 0.0;
  double final_loss = 0.0;
};

class ToyDenoiser {
 public:
  ToyDenoiser(ParamStore<double>& ps, const GaussianToyConfig& c, Rng& rng)
      : mlp_(ps, "toy.mlp", 1 + c.step_embed, c.hidden, 1, rng, nn::Activation::mish), embed_(c.step_embed) {}

  // x [B, 1] -> predicted noise [B, 1]
  ad::Var<double> operator()(ad::Graph<double>& g, ad::Var<double> x, const std::vector<int>& steps) const {
    auto e = g.constant(step_embedding<double>(steps, embed_));
    return mlp_(g, ad::concat(std::vector<ad::Var<double>>{x, e}, 1));
  }

 private:
  nn::Mlp<double> mlp_;
  std::size_t embed_;
};

inline GaussianToyResult run_gaussian_toy(const GaussianToyConfig& c) {
  Rng init(derive_seed(c.seed, "toy-init")), data(derive_seed(c.seed, "toy-data")),
      noise(derive_seed(c.seed, "toy-noise")), draw(derive_seed(c.seed, "toy-sample"));
  ParamStore<double> ps;
  ToyDenoiser net(ps, c, init);
  const auto schedule = build_schedule(c.train_steps, c.inference_steps);
  AdamW<double> opt(ps, AdamWConfig{c.lr, 0.9, 0.999, 1e-8, 0.0});
  LrSchedule lr{c.lr, c.iterations / 20, c.iterations};
  GaussianToyResult out;
  for (std::int64_t it = 0; it < c.iterations; ++it) {
    Tensor<double> chunk({c.batch, 1});
    for (auto& v : chunk.values()) v = c.mean + c.stddev * data.normal();
    ad::Graph<double> g;
    g.attach(ps);
    auto loss = diffusion_loss(g, chunk, schedule, noise, net);
    g.backward(loss);
    std::vector<Tensor<double>> grads;
    for (std::size_t s = 0; s < ps.size(); ++s) grads.push_back(g.param_grad(s));
    opt.step(ps, grads, lr.at(it));
    out.final_loss = loss.value().item();
  }
  Tensor<double> x = gaussian<double>({c.samples, 1}, draw);
  x = ddim_sample(std::move(x), schedule, [&](const Tensor<double>& xt, int k) {
    ad::Graph<double> g(false);
    g.attach(ps);
    return net(g, g.constant(xt), std::vector<int>(xt.dim(0), k)).value();
  }, c.clip_sample);
  out.samples = x.storage();
  double sum = 0.0, sq = 0.0;
  for (double v : out.samples) sum += v;
  out.sample_mean = sum / static_cast<double>(out.samples.size());
  for (double v : out.samples) sq += (v - out.sample_mean) * (v - out.sample_mean);
  out.sample_std = std::sqrt(sq / static_cast<double>(out.samples.size()));
  return out;
}

}  // namespace geodp::policy
