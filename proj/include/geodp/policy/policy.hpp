#pragma once

// Visuomotor diffusion policy: encoder -> per-frame condition embeddings ->
// FiLM-conditioned U-Net noise predictor, plus the proprioception decoder
// used as an auxiliary training target.

#include <cmath>
#include <span>
#include <vector>

#include "geodp/encoder/encoder.hpp"
#include "geodp/env/dataset.hpp"
#include "geodp/policy/normalizer.hpp"
#include "geodp/policy/schedule.hpp"
#include "geodp/policy/unet.hpp"
#include "geodp/proprio/head.hpp"

namespace geodp::policy {

struct PolicyConfig {
  std::size_t obs_steps = 2;
  std::size_t horizon = 16;
  std::size_t action_steps = 8;
  std::size_t action_dim = env::kActionDim;
  std::size_t n_q = 2;
  std::vector<std::size_t> down_dims{32, 64};
  std::size_t kernel = 5;
  std::size_t groups = 8;
  std::size_t step_embed = 32;
  int train_steps = 100;
  int inference_steps = 10;
  bool clip_sample = true;
  std::size_t proprio_hidden = 64;

  std::size_t proprio_dim() const { return proprio::proprio_dim(n_q); }

  void validate() const {
    require(obs_steps >= 1, ErrorKind::config, "policy: obs_steps must be at least 1");
    require(action_steps >= 1 && action_steps <= horizon, ErrorKind::config,
            "policy: action_steps must lie in [1, horizon]");
    require(!down_dims.empty() && horizon % (std::size_t{1} << (down_dims.size() - 1)) == 0, ErrorKind::config,
            "policy: horizon must be divisible by 2^(levels-1)");
    require(train_steps >= inference_steps && inference_steps >= 1, ErrorKind::config,
            "policy: need 1 <= inference_steps <= train_steps");
  }
};

// Largest magnitude accepted for a normalized training chunk.
inline constexpr double kMaxNormalizedAction = 1.5;

// Epsilon-prediction objective. net(g, noisy, steps) returns the predicted
// noise for the noised chunk; chunk rows are indexed by the leading axis.
template <class T, class Net>
ad::Var<T> diffusion_loss(ad::Graph<T>& g, const Tensor<T>& chunk, const NoiseSchedule& s, Rng& rng, Net&& net) {
  require(chunk.rank() >= 1 && chunk.dim(0) > 0, ErrorKind::shape, "diffusion loss: empty chunk batch");
  for (T v : chunk.values())
    require(std::abs(static_cast<double>(v)) <= kMaxNormalizedAction, ErrorKind::range,
            "diffusion loss: action chunk is not normalized (|value| > 1.5)");
  const std::size_t b = chunk.dim(0), per = chunk.size() / b;
  std::vector<int> steps(b);
  for (auto& k : steps) k = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(s.train_steps)));
  const Tensor<T> eps = gaussian<T>(chunk.shape(), rng);
  Tensor<T> noisy(chunk.shape());
  for (std::size_t i = 0; i < b; ++i) {
    const double a = s.sqrt_ab(steps[i]), c = s.sqrt_one_minus_ab(steps[i]);
    for (std::size_t j = 0; j < per; ++j) {
      const std::size_t e = i * per + j;
      noisy[e] = static_cast<T>(a * chunk[e] + c * eps[e]);
    }
  }
  auto pred = net(g, g.constant(std::move(noisy)), steps);
  return ad::mse(pred, g.constant(eps));
}

// One training minibatch (raw, unnormalized values).
struct TrainBatch {
  Tensor<float> images;    // [B * T_o, V, C, H, W], frames of sample b at rows b*T_o ..
  Tensor<double> proprio;  // [B, T_o, P]
  Tensor<double> actions;  // [B, T_p, d_a]

  std::size_t size() const { return actions.dim(0); }
};

template <class T>
class DiffusionPolicy {
 public:
  DiffusionPolicy(const encoder::EncoderConfig& ec, const PolicyConfig& pc, std::uint64_t seed)
      : enc_config_(ec), config_(pc), schedule_(build_schedule(pc.train_steps, pc.inference_steps)) {
    pc.validate();
    Rng rng(derive_seed(seed, "init"));
    encoder_ = encoder::Encoder<T>(params_, ec, rng);
    UnetConfig uc;
    uc.action_dim = pc.action_dim;
    uc.cond_dim = pc.obs_steps * (ec.cond_dim + pc.proprio_dim());
    uc.down_dims = pc.down_dims;
    uc.kernel = pc.kernel;
    uc.groups = pc.groups;
    uc.step_embed = pc.step_embed;
    unet_ = ConditionalUnet1D<T>(params_, uc, rng);
    decoder_ = proprio::ProprioDecoder<T>(params_, ec.cond_dim, pc.proprio_hidden, pc.n_q, rng);
  }

  ParamStore<T>& params() noexcept { return params_; }
  const ParamStore<T>& params() const noexcept { return params_; }
  const encoder::Encoder<T>& encoder() const noexcept { return encoder_; }
  const ConditionalUnet1D<T>& unet() const noexcept { return unet_; }
  const proprio::ProprioDecoder<T>& decoder() const noexcept { return decoder_; }
  const NoiseSchedule& schedule() const noexcept { return schedule_; }
  const PolicyConfig& config() const noexcept { return config_; }
  const encoder::EncoderConfig& encoder_config() const noexcept { return enc_config_; }

  Normalizer action_norm;
  Normalizer proprio_norm;

  struct Losses {
    ad::Var<T> diffusion, proprio, total;
  };

  // Builds the full training objective on g (which must be attached to the
  // parameter store). Pruning, diffusion steps and noise draw from rng.
  Losses losses(ad::Graph<T>& g, const TrainBatch& batch, double lambda, double r_prune, Rng& rng) const {
    const std::size_t b = batch.size(), to = config_.obs_steps, dc = enc_config_.cond_dim, p = config_.proprio_dim();
    require(batch.images.rank() == 5 && batch.images.dim(0) == b * to, ErrorKind::shape,
            "train batch: expected " + std::to_string(b * to) + " frames");
    require(batch.proprio.shape() == Shape{b, to, p} &&
                batch.actions.shape() == Shape{b, config_.horizon, config_.action_dim},
            ErrorKind::shape, "train batch: proprio/action shapes do not match the policy config");
    auto tokens = encoder_.encode(g, batch.images);
    std::optional<encoder::PruneIndex> idx;
    if (r_prune > 0.0) idx = encoder::sample_prune(b * to * enc_config_.views, enc_config_.patches(), r_prune, rng);
    auto cond = encoder_.project(g, tokens, idx ? &*idx : nullptr);

    const auto pnorm = proprio_norm.template normalize<T>(batch.proprio);
    auto pvar = g.constant(pnorm.reshaped({b * to, p}));
    auto prop = proprio::proprio_loss(decoder_(g, cond), pvar);

    auto gcond = ad::concat(std::vector<ad::Var<T>>{ad::reshape(cond, {b, to * dc}), g.constant(pnorm.reshaped({b, to * p}))}, 1);
    const auto anorm = action_norm.template normalize<T>(batch.actions);
    auto diff = diffusion_loss(g, anorm, schedule_, rng, [&](ad::Graph<T>& gg, ad::Var<T> noisy, const std::vector<int>& steps) {
      return unet_(gg, noisy, steps, gcond);
    });
    return {diff, prop, proprio::combined_loss(diff, prop, lambda)};
  }

  // Global condition [B, G] from a window of T_o TokenSets and raw proprio [B, T_o, P].
  Tensor<T> condition(const ParamStore<T>& weights, const std::vector<encoder::TokenSet<T>>& window,
                      const Tensor<double>& proprio) const {
    require(window.size() == config_.obs_steps, ErrorKind::shape, "policy: window length must equal obs_steps");
    const auto emb = encoder_.project_window(weights, window);  // [B, T_o, d_c]
    const std::size_t b = emb.dim(0), to = config_.obs_steps, dc = enc_config_.cond_dim, p = config_.proprio_dim();
    require(proprio.shape() == Shape{b, to, p}, ErrorKind::shape, "policy: proprio window shape mismatch");
    const auto pn = proprio_norm.template normalize<T>(proprio);
    Tensor<T> out({b, to * (dc + p)});
    for (std::size_t i = 0; i < b; ++i) {
      std::copy_n(emb.data() + i * to * dc, to * dc, out.data() + i * to * (dc + p));
      std::copy_n(pn.data() + i * to * p, to * p, out.data() + i * to * (dc + p) + to * dc);
    }
    return out;
  }

  // Normalized chunk [B, T_p, d_a] from the initial draw and the condition.
  Tensor<T> sample(const ParamStore<T>& weights, const Tensor<T>& gcond, Rng& rng) const {
    const std::size_t b = gcond.dim(0);
    Tensor<T> x = gaussian<T>({b, config_.horizon, config_.action_dim}, rng);
    return ddim_sample(std::move(x), schedule_, [&](const Tensor<T>& xt, int k) {
      ad::Graph<T> g(false);
      g.attach(weights);
      return unet_(g, g.constant(xt), std::vector<int>(b, k), g.constant(gcond)).value();
    }, config_.clip_sample);
  }

 private:
  encoder::EncoderConfig enc_config_;
  PolicyConfig config_;
  NoiseSchedule schedule_;
  ParamStore<T> params_;
  encoder::Encoder<T> encoder_;
  ConditionalUnet1D<T> unet_;
  proprio::ProprioDecoder<T> decoder_;
};

// ---------------------------------------------------------------- demo windows

// Every (episode, t) pair of a demo set as a training sample: frames
// t-T_o+1..t (frame 0 repeated at the start) and actions t..t+T_p-1. Past
// the episode end the chunk is padded with zero motion and the last gripper
// command.
class DemoWindows {
 public:
  DemoWindows(const std::vector<env::EpisodeRecord>& episodes, std::size_t obs_steps, std::size_t horizon)
      : episodes_(&episodes), obs_steps_(obs_steps), horizon_(horizon) {
    require(!episodes.empty(), ErrorKind::usage, "no demo episodes");
    for (std::size_t e = 0; e < episodes.size(); ++e)
      for (std::size_t t = 0; t < episodes[e].steps(); ++t) samples_.push_back({e, t});
    frame_shape_ = episodes.front().images.shape();
    frame_shape_.erase(frame_shape_.begin());
  }

  std::size_t size() const noexcept { return samples_.size(); }

  // Action statistics include the padding rows so padded chunks stay in range.
  Normalizer fit_actions() const {
    std::vector<double> rows;
    for (const auto& ep : *episodes_) {
      rows.insert(rows.end(), ep.actions.values().begin(), ep.actions.values().end());
      const auto pad = padding_row(ep);
      rows.insert(rows.end(), pad.begin(), pad.end());
    }
    const std::size_t n = rows.size() / env::kActionDim;
    return Normalizer::fit(Tensor<double>({n, env::kActionDim}, std::move(rows)));
  }

  Normalizer fit_proprio() const {
    std::vector<double> rows;
    for (const auto& ep : *episodes_) rows.insert(rows.end(), ep.proprio.values().begin(), ep.proprio.values().end());
    const std::size_t n = rows.size() / env::kProprioDim;
    return Normalizer::fit(Tensor<double>({n, env::kProprioDim}, std::move(rows)));
  }

  TrainBatch batch(std::span<const std::size_t> ids) const {
    const std::size_t b = ids.size(), frame = numel(frame_shape_);
    TrainBatch out;
    Shape is{b * obs_steps_};
    is.insert(is.end(), frame_shape_.begin(), frame_shape_.end());
    out.images = Tensor<float>(is);
    out.proprio = Tensor<double>({b, obs_steps_, env::kProprioDim});
    out.actions = Tensor<double>({b, horizon_, env::kActionDim});
    for (std::size_t i = 0; i < b; ++i) {
      const auto [e, t] = samples_.at(ids[i]);
      const auto& ep = (*episodes_)[e];
      for (std::size_t j = 0; j < obs_steps_; ++j) {
        const std::size_t src = t + j >= obs_steps_ - 1 ? t + j - (obs_steps_ - 1) : 0;
        std::copy_n(ep.images.data() + src * frame, frame, out.images.data() + (i * obs_steps_ + j) * frame);
        std::copy_n(ep.proprio.data() + src * env::kProprioDim, env::kProprioDim,
                    out.proprio.data() + (i * obs_steps_ + j) * env::kProprioDim);
      }
      const auto pad = padding_row(ep);
      for (std::size_t j = 0; j < horizon_; ++j) {
        double* dst = out.actions.data() + (i * horizon_ + j) * env::kActionDim;
        if (t + j < ep.steps()) std::copy_n(ep.actions.data() + (t + j) * env::kActionDim, env::kActionDim, dst);
        else std::copy(pad.begin(), pad.end(), dst);
      }
    }
    return out;
  }

 private:
  static std::array<double, env::kActionDim> padding_row(const env::EpisodeRecord& ep) {
    return {0.0, 0.0, 0.0, ep.steps() ? ep.actions.at(ep.steps() - 1, 3) : 0.0};
  }

  struct Sample {
    std::size_t episode, t;
  };
  const std::vector<env::EpisodeRecord>* episodes_;
  std::size_t obs_steps_, horizon_;
  std::vector<Sample> samples_;
  Shape frame_shape_;
};

}  // namespace geodp::policy
