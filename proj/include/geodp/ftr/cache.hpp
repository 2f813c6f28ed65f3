#pragma once

// Frame-wise token reuse. Aggregated per-frame tokens are kept for the most
// recent T_o - 1 frames of one episode so each new observation window only
// encodes frames it has not seen before.

#include <algorithm>
#include <cstdint>
#include <deque>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "json.hpp"

#include "geodp/encoder/encoder.hpp"

namespace geodp::ftr {

using encoder::TokenSet;

struct CacheStats {
  std::uint64_t hits = 0;
  std::uint64_t misses = 0;
  std::uint64_t evictions = 0;
  std::uint64_t encoder_invocations = 0;

  nlohmann::json to_json() const {
    return {{"hits", hits}, {"misses", misses}, {"evictions", evictions}, {"encoder_invocations", encoder_invocations}};
  }
  friend bool operator==(const CacheStats&, const CacheStats&) = default;
};

// One observation frame for a batch of B streams: images [B, V, C, H, W].
struct FrameRef {
  std::int64_t index = 0;
  const Tensor<float>* images = nullptr;
};

// Encodes one frame [B, V, C, H, W] into aggregated tokens [B, V, S, D].
template <class T>
using FrameEncoder = std::function<Tensor<T>(const Tensor<float>&)>;

// Frame indices of the window ending at frame t, padded at the episode
// start by repeating frame 0.
inline std::vector<std::int64_t> window_indices(std::int64_t t, std::size_t obs_steps) {
  std::vector<std::int64_t> out;
  for (std::size_t j = 0; j < obs_steps; ++j)
    out.push_back(std::max<std::int64_t>(0, t - static_cast<std::int64_t>(obs_steps - 1 - j)));
  return out;
}

namespace detail {

template <class T>
Tensor<T> encode_one(const FrameEncoder<T>& encode, const Tensor<float>& images) {
  auto tokens = encode(images);
  require(tokens.rank() == 4 && tokens.dim(0) == images.dim(0), ErrorKind::shape,
          "encoder returned " + to_string(tokens.shape()) + " for images " + to_string(images.shape()));
  return tokens;
}

// Window indices must be contiguous and increasing, except that the oldest
// index may be repeated to pad the start of an episode.
inline void check_window(std::span<const FrameRef> frames) {
  require(!frames.empty(), ErrorKind::usage, "empty observation window");
  for (std::size_t i = 1; i < frames.size(); ++i) {
    const auto prev = frames[i - 1].index, cur = frames[i].index;
    if (cur == prev && cur == frames.front().index) continue;
    require(cur == prev + 1, ErrorKind::coherence,
            "observation window frames " + std::to_string(prev) + " -> " + std::to_string(cur) +
                " are not contiguous");
  }
  for (const auto& f : frames) require(f.images != nullptr, ErrorKind::usage, "frame without images");
}

}  // namespace detail

template <class T>
class FrameTokenCache {
 public:
  explicit FrameTokenCache(std::size_t obs_steps) : capacity_(obs_steps > 0 ? obs_steps - 1 : 0) {
    require(obs_steps > 0, ErrorKind::config, "observation window must hold at least one frame");
  }

  std::size_t capacity() const noexcept { return capacity_; }
  std::size_t size() const noexcept { return entries_.size(); }
  std::optional<std::uint64_t> episode() const noexcept { return episode_; }
  const CacheStats& stats() const noexcept { return stats_; }

  std::vector<std::int64_t> cached_frames() const {
    std::vector<std::int64_t> out;
    for (const auto& e : entries_) out.push_back(e.frame_index);
    return out;
  }

  void invalidate() {
    stats_.evictions += entries_.size();
    entries_.clear();
    episode_.reset();
  }

  // Returns one TokenSet per window frame (oldest first), encoding only the
  // distinct frames that are not cached, one encoder call per frame.
  std::vector<TokenSet<T>> window_tokens(std::uint64_t episode_id, std::span<const FrameRef> frames,
                                         const FrameEncoder<T>& encode) {
    detail::check_window(frames);
    require(!episode_ || *episode_ == episode_id, ErrorKind::coherence,
            "token cache holds episode " + std::to_string(episode_ ? *episode_ : 0) + " but was queried for episode " +
                std::to_string(episode_id) + "; invalidate it first");
    if (!entries_.empty())
      require(frames.back().index >= entries_.back().frame_index, ErrorKind::coherence,
              "observation window moved backwards (frame " + std::to_string(frames.back().index) +
                  " after cached frame " + std::to_string(entries_.back().frame_index) + ")");
    episode_ = episode_id;

    while (!entries_.empty() && entries_.front().frame_index < frames.front().index) {
      entries_.pop_front();
      ++stats_.evictions;
    }

    std::vector<std::int64_t> distinct;
    for (const auto& f : frames)
      if (distinct.empty() || distinct.back() != f.index) distinct.push_back(f.index);

    std::vector<TokenSet<T>> resolved(distinct.size());
    std::vector<std::size_t> missing;
    std::vector<const Tensor<float>*> to_encode;
    for (std::size_t i = 0; i < distinct.size(); ++i) {
      if (const auto* hit = find(distinct[i])) {
        resolved[i] = *hit;
        ++stats_.hits;
      } else {
        missing.push_back(i);
        for (const auto& f : frames)
          if (f.index == distinct[i]) {
            to_encode.push_back(f.images);
            break;
          }
      }
    }
    for (std::size_t j = 0; j < missing.size(); ++j) {
      resolved[missing[j]].tokens = detail::encode_one(encode, *to_encode[j]);
      resolved[missing[j]].frame_index = distinct[missing[j]];
    }
    stats_.misses += missing.size();
    stats_.encoder_invocations += missing.size();

    // Keep the newest capacity_ distinct frames for the next window.
    const std::size_t before = entries_.size() + missing.size();
    entries_.clear();
    for (std::size_t i = distinct.size() > capacity_ ? distinct.size() - capacity_ : 0; i < distinct.size(); ++i)
      entries_.push_back(resolved[i]);
    stats_.evictions += before - entries_.size();

    std::vector<TokenSet<T>> out;
    out.reserve(frames.size());
    std::size_t k = 0;
    for (std::size_t i = 0; i < frames.size(); ++i) {
      if (i > 0 && frames[i].index != frames[i - 1].index) ++k;
      out.push_back(resolved[k]);
    }
    return out;
  }

 private:
  const TokenSet<T>* find(std::int64_t frame) const {
    for (const auto& e : entries_)
      if (e.frame_index == frame) return &e;
    return nullptr;
  }

  std::size_t capacity_;
  std::deque<TokenSet<T>> entries_;
  std::optional<std::uint64_t> episode_;
  CacheStats stats_;
};

// Reference path without reuse: every window frame is encoded, padding
// duplicates included.
template <class T>
class FullRecompute {
 public:
  const CacheStats& stats() const noexcept { return stats_; }
  void invalidate() {}

  std::vector<TokenSet<T>> window_tokens(std::uint64_t, std::span<const FrameRef> frames,
                                         const FrameEncoder<T>& encode) {
    detail::check_window(frames);
    stats_.misses += frames.size();
    stats_.encoder_invocations += frames.size();
    std::vector<TokenSet<T>> out(frames.size());
    for (std::size_t i = 0; i < frames.size(); ++i) {
      out[i].tokens = detail::encode_one(encode, *frames[i].images);
      out[i].frame_index = frames[i].index;
    }
    return out;
  }

 private:
  CacheStats stats_;
};

}  // namespace geodp::ftr
