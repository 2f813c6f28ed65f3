#pragma once

// Conditional 1-D temporal U-Net over action chunks [B, T_p, d_a]
// (channels last). Every residual block is FiLM-modulated by a global
// condition made of the diffusion-step embedding and the observation features.

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "geodp/numerics/nn.hpp"

namespace geodp::policy {

using ad::Graph;
using ad::Var;

struct UnetConfig {
  std::size_t action_dim = 4;
  std::size_t cond_dim = 0;  // global condition width (observation part)
  std::vector<std::size_t> down_dims{32, 64};
  std::size_t kernel = 5;
  std::size_t groups = 8;
  std::size_t step_embed = 32;

  void validate() const {
    require(action_dim > 0 && !down_dims.empty(), ErrorKind::config, "unet: empty channel ladder");
    require(kernel % 2 == 1, ErrorKind::config, "unet: kernel size must be odd");
    require(step_embed >= 4 && step_embed % 2 == 0, ErrorKind::config, "unet: step embedding must be even and >= 4");
    for (auto d : down_dims)
      require(groups > 0 && d % groups == 0, ErrorKind::config, "unet: channels must be divisible by groups");
  }
};

// Sinusoidal embedding of integer diffusion steps -> [B, dim].
template <class T>
Tensor<T> step_embedding(const std::vector<int>& steps, std::size_t dim) {
  const std::size_t half = dim / 2;
  Tensor<T> out({steps.size(), dim});
  const double scale = std::log(10000.0) / static_cast<double>(half - 1);
  for (std::size_t b = 0; b < steps.size(); ++b)
    for (std::size_t i = 0; i < half; ++i) {
      const double a = steps[b] * std::exp(-scale * static_cast<double>(i));
      out.at(b, i) = static_cast<T>(std::sin(a));
      out.at(b, half + i) = static_cast<T>(std::cos(a));
    }
  return out;
}

template <class T>
struct Conv1d {
  std::size_t weight = 0, bias = 0, stride = 1, pad = 0;

  Conv1d() = default;
  Conv1d(ParamStore<T>& ps, const std::string& name, std::size_t cin, std::size_t cout, std::size_t k, Rng& rng,
         std::size_t s = 1)
      : stride(s), pad(k / 2) {
    weight = ps.add_uniform(name + ".weight", {k, cin, cout}, k * cin, rng);
    bias = ps.add_uniform(name + ".bias", {cout}, k * cin, rng);
  }

  Var<T> operator()(Graph<T>& g, Var<T> x) const {
    return ad::add(ad::conv1d(x, g.param(weight), stride, pad), g.param(bias));
  }
};

// conv -> GroupNorm (affine) -> Mish
template <class T>
struct ConvBlock {
  Conv1d<T> conv;
  std::size_t gamma = 0, beta = 0, groups = 8;

  ConvBlock() = default;
  ConvBlock(ParamStore<T>& ps, const std::string& name, std::size_t cin, std::size_t cout, std::size_t k,
            std::size_t g, Rng& rng)
      : conv(ps, name + ".conv", cin, cout, k, rng), groups(g) {
    gamma = ps.add_constant(name + ".gn.gamma", {cout}, T(1));
    beta = ps.add_constant(name + ".gn.beta", {cout}, T(0));
  }

  Var<T> operator()(Graph<T>& g, Var<T> x) const {
    auto h = ad::group_norm(conv(g, x), groups);
    return ad::mish(ad::add(ad::mul(h, g.param(gamma)), g.param(beta)));
  }
};

template <class T>
struct ResidualBlock {
  ConvBlock<T> block1, block2;
  nn::Linear<T> film;
  Conv1d<T> skip;
  bool has_skip = false;
  std::size_t out = 0;

  ResidualBlock() = default;
  ResidualBlock(ParamStore<T>& ps, const std::string& name, std::size_t cin, std::size_t cout, std::size_t cond,
                const UnetConfig& c, Rng& rng)
      : block1(ps, name + ".b1", cin, cout, c.kernel, c.groups, rng),
        block2(ps, name + ".b2", cout, cout, c.kernel, c.groups, rng),
        film(ps, name + ".film", cond, 2 * cout, rng),
        has_skip(cin != cout),
        out(cout) {
    if (has_skip) skip = Conv1d<T>(ps, name + ".skip", cin, cout, 1, rng);
  }

  // x [B, L, cin], cond [B, G] (already passed through Mish).
  Var<T> operator()(Graph<T>& g, Var<T> x, Var<T> cond) const {
    const std::size_t b = x.dim(0);
    auto h = block1(g, x);
    auto fs = ad::reshape(film(g, cond), {b, 1, 2 * out});
    auto scale = ad::slice(fs, 2, 0, out);
    auto shift = ad::slice(fs, 2, out, 2 * out);
    h = ad::add(ad::add(h, ad::mul(h, scale)), shift);
    h = block2(g, h);
    return ad::add(h, has_skip ? skip(g, x) : x);
  }
};

template <class T>
class ConditionalUnet1D {
 public:
  ConditionalUnet1D() = default;
  ConditionalUnet1D(ParamStore<T>& ps, const UnetConfig& c, Rng& rng) : config_(c) {
    c.validate();
    const std::size_t se = c.step_embed;
    step_mlp_ = nn::Mlp<T>(ps, "unet.step", se, 4 * se, se, rng, nn::Activation::mish);
    const std::size_t cond = se + c.cond_dim;
    std::vector<std::size_t> dims{c.action_dim};
    dims.insert(dims.end(), c.down_dims.begin(), c.down_dims.end());
    const std::size_t levels = c.down_dims.size();
    for (std::size_t i = 0; i < levels; ++i) {
      const std::string n = "unet.down" + std::to_string(i);
      Level lv;
      lv.res1 = ResidualBlock<T>(ps, n + ".res1", dims[i], dims[i + 1], cond, c, rng);
      lv.res2 = ResidualBlock<T>(ps, n + ".res2", dims[i + 1], dims[i + 1], cond, c, rng);
      if (i + 1 < levels) lv.resample = Conv1d<T>(ps, n + ".down", dims[i + 1], dims[i + 1], 3, rng, 2);
      down_.push_back(std::move(lv));
    }
    const std::size_t mid = dims.back();
    mid1_ = ResidualBlock<T>(ps, "unet.mid1", mid, mid, cond, c, rng);
    mid2_ = ResidualBlock<T>(ps, "unet.mid2", mid, mid, cond, c, rng);
    for (std::size_t i = levels - 1; i-- > 0;) {
      const std::string n = "unet.up" + std::to_string(i);
      Level lv;
      lv.res1 = ResidualBlock<T>(ps, n + ".res1", 2 * dims[i + 2], dims[i + 1], cond, c, rng);
      lv.res2 = ResidualBlock<T>(ps, n + ".res2", dims[i + 1], dims[i + 1], cond, c, rng);
      lv.resample = Conv1d<T>(ps, n + ".up", dims[i + 1], dims[i + 1], 3, rng);
      up_.push_back(std::move(lv));
    }
    final_block_ = ConvBlock<T>(ps, "unet.final", dims[1], dims[1], c.kernel, c.groups, rng);
    final_conv_ = Conv1d<T>(ps, "unet.out", dims[1], c.action_dim, 1, rng);
  }

  const UnetConfig& config() const noexcept { return config_; }

  // Horizon must be divisible by 2^(levels - 1).
  std::size_t horizon_multiple() const { return std::size_t{1} << (config_.down_dims.size() - 1); }

  // x [B, L, d_a], steps (one per batch row), cond [B, cond_dim] -> [B, L, d_a].
  Var<T> operator()(Graph<T>& g, Var<T> x, const std::vector<int>& steps, Var<T> cond) const {
    const Shape xs = x.shape();
    require(xs.size() == 3 && xs[2] == config_.action_dim && steps.size() == xs[0], ErrorKind::shape,
            "unet: input " + to_string(xs) + " does not match action dim / step count");
    require(xs[1] % horizon_multiple() == 0, ErrorKind::shape,
            "unet: horizon " + std::to_string(xs[1]) + " must be divisible by " + std::to_string(horizon_multiple()));
    require(cond.shape() == Shape{xs[0], config_.cond_dim}, ErrorKind::shape,
            "unet: condition " + to_string(cond.shape()) + " expected [" + std::to_string(xs[0]) + ", " +
                std::to_string(config_.cond_dim) + "]");
    auto temb = step_mlp_(g, g.constant(step_embedding<T>(steps, config_.step_embed)));
    auto gcond = ad::mish(config_.cond_dim > 0 ? ad::concat(std::vector<Var<T>>{temb, cond}, 1) : temb);

    std::vector<Var<T>> skips;
    Var<T> h = x;
    for (const auto& lv : down_) {
      h = lv.res2(g, lv.res1(g, h, gcond), gcond);
      skips.push_back(h);
      if (lv.resample) h = lv.resample->operator()(g, h);
    }
    h = mid2_(g, mid1_(g, h, gcond), gcond);
    for (const auto& lv : up_) {
      h = ad::concat(std::vector<Var<T>>{h, skips.back()}, 2);
      skips.pop_back();
      h = lv.res2(g, lv.res1(g, h, gcond), gcond);
      if (lv.resample) {
        const std::size_t len = h.dim(1);
        std::vector<std::size_t> rep(2 * len);
        for (std::size_t i = 0; i < rep.size(); ++i) rep[i] = i / 2;
        h = lv.resample->operator()(g, ad::gather(h, 1, rep));
      }
    }
    return final_conv_(g, final_block_(g, h));
  }

 private:
  struct Level {
    ResidualBlock<T> res1, res2;
    std::optional<Conv1d<T>> resample;
  };

  UnetConfig config_;
  nn::Mlp<T> step_mlp_;
  std::vector<Level> down_, up_;
  ResidualBlock<T> mid1_, mid2_;
  ConvBlock<T> final_block_;
  Conv1d<T> final_conv_;
};

}  // namespace geodp::policy
