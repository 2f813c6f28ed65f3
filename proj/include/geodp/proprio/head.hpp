#pragma once

// Proprioception decoder and the auxiliary reconstruction loss.

#include <string>

#include "geodp/numerics/nn.hpp"

namespace geodp::proprio {

using ad::Graph;
using ad::Var;

// p = [q, x]: n_q drive coordinates followed by a 3-D effector position.
inline std::size_t proprio_dim(std::size_t n_q) { return n_q + 3; }

template <class T>
class ProprioDecoder {
 public:
  ProprioDecoder() = default;
  ProprioDecoder(ParamStore<T>& ps, std::size_t feature_dim, std::size_t hidden, std::size_t n_q, Rng& rng)
      : mlp_(ps, "proprio.decoder", feature_dim, hidden, proprio_dim(n_q), rng), in_(feature_dim),
        out_(proprio_dim(n_q)) {}

  std::size_t output_dim() const noexcept { return out_; }

  // f [N, d_c] -> p_hat [N, n_q + 3]
  Var<T> operator()(Graph<T>& g, Var<T> f) const {
    require(f.shape().size() == 2 && f.dim(1) == in_, ErrorKind::shape,
            "proprio decoder: expected features [N, " + std::to_string(in_) + "], got " + to_string(f.shape()));
    return mlp_(g, f);
  }

  const nn::Mlp<T>& mlp() const noexcept { return mlp_; }

 private:
  nn::Mlp<T> mlp_;
  std::size_t in_ = 0, out_ = 0;
};

// Mean squared error over every dimension and row (targets already normalized).
template <class T>
Var<T> proprio_loss(Var<T> p_hat, Var<T> p) {
  require(p_hat.shape() == p.shape(), ErrorKind::shape,
          "proprio loss: prediction " + to_string(p_hat.shape()) + " vs target " + to_string(p.shape()));
  return ad::mse(p_hat, p);
}

template <class T>
T proprio_loss(const Tensor<T>& p_hat, const Tensor<T>& p) {
  Graph<T> g(false);
  return proprio_loss(g.constant(p_hat), g.constant(p)).value().item();
}

// diff + lambda * proprio. lambda == 0 returns the diffusion term itself.
template <class T>
Var<T> combined_loss(Var<T> diff, Var<T> prop, double lambda) {
  require(lambda >= 0.0, ErrorKind::config, "proprio weight lambda must be non-negative");
  if (lambda == 0.0) return diff;
  return ad::add(diff, ad::scale(prop, static_cast<T>(lambda)));
}

}  // namespace geodp::proprio
