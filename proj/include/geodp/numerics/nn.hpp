#pragma once

// Small layer library on top of the primitive ops. Layers own parameter
// slots in a ParamStore and read them through the graph they run on.

#include <cmath>
#include <string>

#include "geodp/numerics/ops.hpp"

namespace geodp::nn {

using ad::Graph;
using ad::Var;

template <class T>
struct Linear {
  std::size_t weight = 0, bias = 0;
  std::size_t in = 0, out = 0;

  Linear() = default;
  Linear(ParamStore<T>& ps, const std::string& name, std::size_t in_dim, std::size_t out_dim, Rng& rng)
      : in(in_dim), out(out_dim) {
    weight = ps.add_uniform(name + ".weight", {in_dim, out_dim}, in_dim, rng);
    bias = ps.add_uniform(name + ".bias", {out_dim}, in_dim, rng);
  }

  Var<T> operator()(Graph<T>& g, Var<T> x) const {
    return ad::add(ad::matmul(x, g.param(weight)), g.param(bias));
  }
};

template <class T>
struct LayerNorm {
  std::size_t gamma = 0, beta = 0;

  LayerNorm() = default;
  LayerNorm(ParamStore<T>& ps, const std::string& name, std::size_t dim) {
    gamma = ps.add_constant(name + ".gamma", {dim}, T(1));
    beta = ps.add_constant(name + ".beta", {dim}, T(0));
  }

  Var<T> operator()(Graph<T>& g, Var<T> x) const {
    return ad::add(ad::mul(ad::layer_norm(x), g.param(gamma)), g.param(beta));
  }
};

enum class Activation { gelu, mish };

template <class T>
Var<T> activate(Activation a, Var<T> x) {
  return a == Activation::gelu ? ad::gelu(x) : ad::mish(x);
}

// Linear -> act -> Linear.
template <class T>
struct Mlp {
  Linear<T> fc1, fc2;
  Activation act = Activation::gelu;

  Mlp() = default;
  Mlp(ParamStore<T>& ps, const std::string& name, std::size_t in, std::size_t hidden, std::size_t out,
      Rng& rng, Activation a = Activation::gelu)
      : fc1(ps, name + ".fc1", in, hidden, rng), fc2(ps, name + ".fc2", hidden, out, rng), act(a) {}

  Var<T> operator()(Graph<T>& g, Var<T> x) const { return fc2(g, activate(act, fc1(g, x))); }
};

// Multi-head self-attention over x: [N, S, D].
template <class T>
struct SelfAttention {
  Linear<T> q, k, v, o;
  std::size_t heads = 1, dim = 0;

  SelfAttention() = default;
  SelfAttention(ParamStore<T>& ps, const std::string& name, std::size_t d, std::size_t h, Rng& rng)
      : q(ps, name + ".q", d, d, rng),
        k(ps, name + ".k", d, d, rng),
        v(ps, name + ".v", d, d, rng),
        o(ps, name + ".out", d, d, rng),
        heads(h),
        dim(d) {
    require(h > 0 && d % h == 0, ErrorKind::config, name + ": dim must be divisible by heads");
  }

  Var<T> operator()(Graph<T>& g, Var<T> x) const {
    const std::size_t n = x.dim(0), s = x.dim(1), hd = dim / heads;
    auto split = [&](Var<T> t) {
      if (heads == 1) return t;
      t = ad::reshape(t, {n, s, heads, hd});
      t = ad::permute(t, {0, 2, 1, 3});
      return ad::reshape(t, {n * heads, s, hd});
    };
    auto qh = split(q(g, x));
    auto kh = split(k(g, x));
    auto vh = split(v(g, x));
    auto scores = ad::scale(ad::bmm(qh, kh, true), static_cast<T>(1.0 / std::sqrt(static_cast<double>(hd))));
    auto ctx = ad::bmm(ad::softmax(scores), vh);
    if (heads > 1) {
      ctx = ad::reshape(ctx, {n, heads, s, hd});
      ctx = ad::permute(ctx, {0, 2, 1, 3});
      ctx = ad::reshape(ctx, {n, s, dim});
    }
    return o(g, ctx);
  }
};

// Pre-norm transformer encoder block.
template <class T>
struct TransformerBlock {
  LayerNorm<T> ln1, ln2;
  SelfAttention<T> attn;
  Mlp<T> mlp;

  TransformerBlock() = default;
  TransformerBlock(ParamStore<T>& ps, const std::string& name, std::size_t d, std::size_t heads,
                   std::size_t mlp_ratio, Rng& rng)
      : ln1(ps, name + ".ln1", d),
        ln2(ps, name + ".ln2", d),
        attn(ps, name + ".attn", d, heads, rng),
        mlp(ps, name + ".mlp", d, d * mlp_ratio, d, rng) {}

  Var<T> operator()(Graph<T>& g, Var<T> x) const {
    x = ad::add(x, attn(g, ln1(g, x)));
    return ad::add(x, mlp(g, ln2(g, x)));
  }
};

}  // namespace geodp::nn
