#pragma once

// Multi-view token encoder: patch tokenization with a camera token per view,
// an alternating per-view / global attention aggregator, random patch-token
// pruning and the transformer -> mean-pool -> MLP condition projector.
//
// Token tensors are laid out [N, V, S, D] with S = N_p + 1 and the camera
// token at index 0 of every view.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "geodp/numerics/nn.hpp"

namespace geodp::encoder {

using ad::Graph;
using ad::Var;

struct EncoderConfig {
  std::size_t views = 2;
  std::size_t height = 32;
  std::size_t width = 32;
  std::size_t channels = 3;
  std::size_t patch = 8;
  std::size_t dim = 32;
  std::size_t agg_depth = 2;
  std::size_t agg_heads = 2;
  std::size_t proj_depth = 2;
  std::size_t proj_heads = 2;
  std::size_t mlp_ratio = 2;
  std::size_t cond_dim = 64;
  bool view_embedding = true;

  std::size_t patches() const { return (height / patch) * (width / patch); }
  std::size_t tokens_per_view() const { return patches() + 1; }
  std::size_t patch_features() const { return patch * patch * channels; }

  void validate() const {
    require(views > 0 && channels > 0 && patch > 0 && dim > 0, ErrorKind::config,
            "encoder: views, channels, patch and dim must be positive");
    require(height % patch == 0 && width % patch == 0, ErrorKind::config,
            "encoder: image size must be divisible by the patch size");
    require(cond_dim > 0, ErrorKind::config, "encoder: cond_dim must be positive");
    require(agg_heads > 0 && dim % agg_heads == 0 && proj_heads > 0 && dim % proj_heads == 0,
            ErrorKind::config, "encoder: dim must be divisible by the head counts");
    require(mlp_ratio > 0, ErrorKind::config, "encoder: mlp_ratio must be positive");
  }
};

// Aggregated tokens of one frame for a batch of B independent streams.
template <class T>
struct TokenSet {
  Tensor<T> tokens;  // [B, V, S, D]
  std::int64_t frame_index = 0;
  // kept[b * V + v] lists the retained token rows (0 = camera token), sorted.
  // Empty means every token is present.
  std::vector<std::vector<std::size_t>> kept;

  std::size_t batch() const { return tokens.dim(0); }
  std::size_t views() const { return tokens.dim(1); }
  std::size_t tokens_per_view() const { return tokens.dim(2); }
  std::size_t dim() const { return tokens.dim(3); }

  // Token-presence mask over the original S rows for stream b, view v.
  std::vector<bool> mask(std::size_t b, std::size_t v, std::size_t full_tokens) const {
    std::vector<bool> m(full_tokens, kept.empty());
    if (!kept.empty())
      for (auto r : kept.at(b * views() + v)) m.at(r) = true;
    return m;
  }
};

// ---------------------------------------------------------------- pruning

inline std::size_t kept_patch_count(std::size_t patches, double r_prune) {
  require(r_prune >= 0.0 && r_prune < 1.0, ErrorKind::range, "r_prune must lie in [0, 1)");
  const double x = (1.0 - r_prune) * static_cast<double>(patches);
  return static_cast<std::size_t>(std::ceil(x - 1e-9));
}

// Row table for gather_rows over [N*V, S, D]: each (n, v) keeps the camera
// token plus `keep` patch rows sampled without replacement, in ascending order.
struct PruneIndex {
  std::size_t keep = 0;  // patch tokens kept per view
  std::vector<std::size_t> rows;

  std::size_t row_width() const { return keep + 1; }
};

inline PruneIndex sample_prune(std::size_t groups, std::size_t patches, double r_prune, Rng& rng) {
  PruneIndex idx;
  idx.keep = kept_patch_count(patches, r_prune);
  idx.rows.reserve(groups * idx.row_width());
  std::vector<std::size_t> perm(patches);
  for (std::size_t gidx = 0; gidx < groups; ++gidx) {
    std::iota(perm.begin(), perm.end(), std::size_t{1});
    for (std::size_t i = 0; i < idx.keep && idx.keep < patches; ++i) {
      const std::size_t j = i + static_cast<std::size_t>(rng.below(patches - i));
      std::swap(perm[i], perm[j]);
    }
    std::sort(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(idx.keep));
    idx.rows.push_back(0);
    idx.rows.insert(idx.rows.end(), perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(idx.keep));
  }
  return idx;
}

inline PruneIndex full_index(std::size_t groups, std::size_t patches) {
  PruneIndex idx;
  idx.keep = patches;
  for (std::size_t gidx = 0; gidx < groups; ++gidx)
    for (std::size_t r = 0; r <= patches; ++r) idx.rows.push_back(r);
  return idx;
}

// Value-level pruning of a full TokenSet; r_prune = 0 returns the input unchanged.
template <class T>
TokenSet<T> prune_tokens(const TokenSet<T>& in, double r_prune, Rng& rng) {
  require(in.kept.empty(), ErrorKind::usage, "prune_tokens expects an unpruned TokenSet");
  const std::size_t patches = in.tokens_per_view() - 1;
  if (kept_patch_count(patches, r_prune) == patches) return in;
  const std::size_t groups = in.batch() * in.views(), d = in.dim(), s = in.tokens_per_view();
  const auto idx = sample_prune(groups, patches, r_prune, rng);
  TokenSet<T> out;
  out.frame_index = in.frame_index;
  out.tokens = Tensor<T>({in.batch(), in.views(), idx.row_width(), d});
  for (std::size_t gi = 0; gi < groups; ++gi) {
    std::vector<std::size_t> rows(idx.rows.begin() + gi * idx.row_width(),
                                  idx.rows.begin() + (gi + 1) * idx.row_width());
    for (std::size_t j = 0; j < rows.size(); ++j)
      std::copy_n(in.tokens.data() + (gi * s + rows[j]) * d, d, out.tokens.data() + (gi * idx.row_width() + j) * d);
    out.kept.push_back(std::move(rows));
  }
  return out;
}

// ---------------------------------------------------------------- encoder

// Fixed 2-D sine/cosine table [rows*cols, d]: the first half of each row
// encodes the grid row, the second half the column.
template <class T>
Tensor<T> sincos_2d(std::size_t rows, std::size_t cols, std::size_t d, double amplitude = 1.0) {
  Tensor<T> out({rows * cols, d});
  const std::size_t half = d / 2, q = half / 2;
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) {
      T* row = out.data() + (r * cols + c) * d;
      for (std::size_t axis = 0; axis < 2; ++axis) {
        const double pos = static_cast<double>(axis == 0 ? r : c);
        for (std::size_t k = 0; k < q; ++k) {
          const double w = std::pow(10000.0, -static_cast<double>(k) / static_cast<double>(q));
          row[axis * half + k] = static_cast<T>(amplitude * std::sin(pos * w));
          row[axis * half + q + k] = static_cast<T>(amplitude * std::cos(pos * w));
        }
      }
    }
  return out;
}

template <class T>
class Encoder {
 public:
  Encoder() = default;
  Encoder(ParamStore<T>& ps, const EncoderConfig& config, Rng& rng) : config_(config) {
    config.validate();
    const std::size_t d = config.dim;
    patch_embed_ = nn::Linear<T>(ps, "encoder.patch", config.patch_features(), d, rng);
    patch_pos_ = ps.add("encoder.patch_pos", sincos_2d<T>(config.height / config.patch, config.width / config.patch, d, 0.1));
    camera_ = ps.add_normal("encoder.camera", {1, d}, 0.02, rng);
    view_pos_ = ps.add_normal("encoder.view_pos", {config.views, 1, d}, 0.02, rng);
    for (std::size_t i = 0; i < config.agg_depth; ++i)
      aggregator_.emplace_back(ps, "encoder.agg" + std::to_string(i), d, config.agg_heads, config.mlp_ratio, rng);
    for (std::size_t i = 0; i < config.proj_depth; ++i)
      projector_.emplace_back(ps, "encoder.proj" + std::to_string(i), d, config.proj_heads, config.mlp_ratio, rng);
    head_ = nn::Mlp<T>(ps, "encoder.head", d, config.cond_dim, config.cond_dim, rng);
  }

  const EncoderConfig& config() const noexcept { return config_; }

  // [N, V, C, H, W] images in [0, 1] -> [N, V, N_p, patch*patch*C] patch vectors.
  Tensor<T> patchify(const Tensor<float>& images) const {
    const auto& c = config_;
    const Shape want{images.rank() == 5 ? images.dim(0) : 0, c.views, c.channels, c.height, c.width};
    require(images.rank() == 5 && images.shape() == want, ErrorKind::shape,
            "encoder: expected images " + to_string(want) + ", got " + to_string(images.shape()));
    for (float v : images.values())
      require(v >= 0.0f && v <= 1.0f, ErrorKind::range, "encoder: pixel values must lie in [0, 1]");
    const std::size_t n = images.dim(0), p = c.patch, gw = c.width / p, np = c.patches();
    Tensor<T> out({n, c.views, np, c.patch_features()});
    T* o = out.data();
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t v = 0; v < c.views; ++v)
        for (std::size_t q = 0; q < np; ++q) {
          const std::size_t r0 = (q / gw) * p, c0 = (q % gw) * p;
          for (std::size_t ch = 0; ch < c.channels; ++ch)
            for (std::size_t y = 0; y < p; ++y)
              for (std::size_t x = 0; x < p; ++x)
                *o++ = static_cast<T>(images.at(i, v, ch, r0 + y, c0 + x));
        }
    return out;
  }

  Var<T> tokenize(Graph<T>& g, const Tensor<float>& images) const {
    const std::size_t n = images.rank() == 5 ? images.dim(0) : 0;
    auto patches = patch_embed_(g, g.constant(patchify(images)));
    patches = ad::add(patches, g.param(patch_pos_));
    auto camera = ad::add(g.constant(Tensor<T>({n, config_.views, 1, config_.dim})), g.param(camera_));
    return ad::concat(std::vector<Var<T>>{camera, patches}, 2);
  }

  Var<T> aggregate(Graph<T>& g, Var<T> tokens) const {
    const auto& c = config_;
    const Shape& s = tokens.shape();
    require(s.size() == 4 && s[1] == c.views && s[2] == c.tokens_per_view() && s[3] == c.dim, ErrorKind::shape,
            "aggregate: token shape " + to_string(s) + " does not match the encoder config");
    if (aggregator_.empty()) return tokens;
    const std::size_t n = s[0], sv = s[2], d = s[3];
    auto x = c.view_embedding ? ad::add(tokens, g.param(view_pos_)) : tokens;
    for (std::size_t i = 0; i < aggregator_.size(); ++i) {
      const bool global = i % 2 == 1;
      x = ad::reshape(x, global ? Shape{n, c.views * sv, d} : Shape{n * c.views, sv, d});
      x = aggregator_[i](g, x);
    }
    return ad::reshape(x, {n, c.views, sv, d});
  }

  Var<T> encode(Graph<T>& g, const Tensor<float>& images) const { return aggregate(g, tokenize(g, images)); }

  // Projector transformer output [N, V * kept, D]. `prune` (if given)
  // selects rows per (frame, view) as produced by sample_prune.
  Var<T> projector_tokens(Graph<T>& g, Var<T> tokens, const PruneIndex* prune = nullptr) const {
    const Shape& s = tokens.shape();
    require(s.size() == 4 && s[1] == config_.views && s[3] == config_.dim && s[2] > 0, ErrorKind::shape,
            "project: token shape " + to_string(s) + " does not match the encoder config");
    const std::size_t n = s[0], v = s[1], d = s[3];
    Var<T> x = tokens;
    std::size_t width = s[2];
    if (prune != nullptr) {
      x = ad::gather_rows(ad::reshape(x, {n * v, s[2], d}), prune->rows, prune->row_width());
      width = prune->row_width();
    }
    x = ad::reshape(x, {n, v * width, d});
    for (const auto& block : projector_) x = block(g, x);
    return x;
  }

  // Mean over the tokens actually present, [N, D].
  Var<T> pooled(Graph<T>& g, Var<T> tokens, const PruneIndex* prune = nullptr) const {
    return ad::mean(projector_tokens(g, tokens, prune), 1);
  }

  Var<T> project(Graph<T>& g, Var<T> tokens, const PruneIndex* prune = nullptr) const {
    return head_(g, pooled(g, tokens, prune));
  }

  // Inference helpers on a fresh no-grad graph.
  TokenSet<T> encode_frame(const ParamStore<T>& ps, const Tensor<float>& images, std::int64_t frame_index) const {
    Graph<T> g(false);
    g.attach(ps);
    TokenSet<T> out;
    out.tokens = encode(g, images).value();
    out.frame_index = frame_index;
    return out;
  }

  // window: T_o TokenSets of equal batch B -> condition embeddings [B, T_o, d_c].
  // Pruned sets carry only their kept rows, so pooling averages over those.
  Tensor<T> project_window(const ParamStore<T>& ps, const std::vector<TokenSet<T>>& window) const {
    require(!window.empty(), ErrorKind::shape, "project: empty window");
    const Shape& ref = window.front().tokens.shape();
    for (const auto& ts : window)
      require(ts.tokens.shape() == ref, ErrorKind::shape, "project: window frames have mixed token shapes");
    const std::size_t to = window.size(), b = ref[0], block = ref[1] * ref[2] * ref[3];
    Tensor<T> stacked({b * to, ref[1], ref[2], ref[3]});
    for (std::size_t bi = 0; bi < b; ++bi)
      for (std::size_t t = 0; t < to; ++t)
        std::copy_n(window[t].tokens.data() + bi * block, block, stacked.data() + (bi * to + t) * block);
    Graph<T> g(false);
    g.attach(ps);
    auto out = project(g, g.constant(std::move(stacked))).value();
    return out.reshaped({b, to, config_.cond_dim});
  }

 private:
  EncoderConfig config_;
  nn::Linear<T> patch_embed_;
  std::size_t patch_pos_ = 0, camera_ = 0, view_pos_ = 0;
  std::vector<nn::TransformerBlock<T>> aggregator_, projector_;
  nn::Mlp<T> head_;
};

}  // namespace geodp::encoder
