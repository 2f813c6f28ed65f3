#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <span>
#include <vector>

#include "geodp/numerics/params.hpp"

namespace geodp {

struct AdamWConfig {
  double lr = 1e-4;
  double beta1 = 0.95;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-6;
};

// Decoupled weight decay Adam with bias correction.
template <class T>
class AdamW {
 public:
  AdamW() = default;
  AdamW(const ParamStore<T>& params, AdamWConfig config) : config_(config) {
    for (const auto& p : params.values()) {
      m_.emplace_back(p.shape());
      v_.emplace_back(p.shape());
    }
  }

  const AdamWConfig& config() const noexcept { return config_; }
  std::int64_t steps() const noexcept { return step_; }
  std::vector<Tensor<T>>& first_moments() noexcept { return m_; }
  std::vector<Tensor<T>>& second_moments() noexcept { return v_; }
  const std::vector<Tensor<T>>& first_moments() const noexcept { return m_; }
  const std::vector<Tensor<T>>& second_moments() const noexcept { return v_; }
  void set_steps(std::int64_t s) { step_ = s; }

  void step(ParamStore<T>& params, std::span<const Tensor<T>> grads, double lr) {
    require(grads.size() == params.size() && m_.size() == params.size(), ErrorKind::shape,
            "adamw: parameter/gradient count mismatch");
    for (std::size_t i = 0; i < grads.size(); ++i) {
      require(grads[i].shape() == params.value(i).shape(), ErrorKind::shape,
              "adamw: gradient shape mismatch for " + params.name(i));
      require(grads[i].all_finite(), ErrorKind::numeric,
              "adamw: non-finite gradient for " + params.name(i));
    }
    ++step_;
    const double c1 = 1.0 - std::pow(config_.beta1, static_cast<double>(step_));
    const double c2 = 1.0 - std::pow(config_.beta2, static_cast<double>(step_));
    const double decay = 1.0 - lr * config_.weight_decay;
    for (std::size_t i = 0; i < grads.size(); ++i) {
      auto& p = params.value(i);
      auto& m = m_[i];
      auto& v = v_[i];
      const auto& g = grads[i];
      for (std::size_t j = 0; j < p.size(); ++j) {
        const double gj = g[j];
        const double mj = config_.beta1 * m[j] + (1.0 - config_.beta1) * gj;
        const double vj = config_.beta2 * v[j] + (1.0 - config_.beta2) * gj * gj;
        m[j] = static_cast<T>(mj);
        v[j] = static_cast<T>(vj);
        const double update = (mj / c1) / (std::sqrt(vj / c2) + config_.eps);
        p[j] = static_cast<T>(p[j] * decay - lr * update);
      }
    }
  }

 private:
  AdamWConfig config_;
  std::vector<Tensor<T>> m_, v_;
  std::int64_t step_ = 0;
};

// Linear warmup 0 -> base_lr, then half-cosine base_lr -> 0.
struct LrSchedule {
  double base_lr = 1e-4;
  std::int64_t warmup_steps = 500;
  std::int64_t total_steps = 1;

  void validate() const {
    require(base_lr >= 0.0, ErrorKind::config, "lr schedule: base_lr must be non-negative");
    require(warmup_steps >= 0, ErrorKind::config, "lr schedule: warmup_steps must be non-negative");
    require(total_steps > warmup_steps, ErrorKind::config,
            "lr schedule: total_steps (" + std::to_string(total_steps) +
                ") must exceed warmup_steps (" + std::to_string(warmup_steps) + ")");
  }

  double at(std::int64_t step) const {
    require(step >= 0 && step <= total_steps, ErrorKind::range,
            "lr schedule: step " + std::to_string(step) + " outside [0, " +
                std::to_string(total_steps) + "]");
    if (step < warmup_steps)
      return base_lr * static_cast<double>(step) / static_cast<double>(warmup_steps);
    const double progress = static_cast<double>(step - warmup_steps) /
                            static_cast<double>(total_steps - warmup_steps);
    return std::max(0.0, 0.5 * base_lr * (1.0 + std::cos(std::numbers::pi * progress)));
  }
};

struct EmaConfig {
  double gamma = 1.0;
  double power = 0.75;
  double max_decay = 0.9999;
};

// decay(step) = min(max_decay, 1 - (1 + step / gamma)^-power)
inline double ema_decay(const EmaConfig& c, std::int64_t step) {
  if (step <= 0) return 0.0;
  const double d = 1.0 - std::pow(1.0 + static_cast<double>(step) / c.gamma, -c.power);
  return std::clamp(d, 0.0, c.max_decay);
}

template <class T>
class Ema {
 public:
  Ema() = default;
  Ema(const ParamStore<T>& params, EmaConfig config) : config_(config), shadow_(params) {}

  const EmaConfig& config() const noexcept { return config_; }
  std::int64_t updates() const noexcept { return updates_; }
  void set_updates(std::int64_t n) { updates_ = n; }
  const ParamStore<T>& shadow() const noexcept { return shadow_; }
  ParamStore<T>& shadow() noexcept { return shadow_; }

  double decay() const { return ema_decay(config_, updates_); }

  void update(const ParamStore<T>& params) {
    require(params.size() == shadow_.size(), ErrorKind::shape, "ema: parameter count mismatch");
    const double d = decay();
    for (std::size_t i = 0; i < params.size(); ++i) {
      const auto& p = params.value(i);
      auto& s = shadow_.value(i);
      require(p.shape() == s.shape(), ErrorKind::shape, "ema: shape mismatch for " + params.name(i));
      for (std::size_t j = 0; j < p.size(); ++j)
        s[j] = static_cast<T>(d * s[j] + (1.0 - d) * p[j]);
    }
    ++updates_;
  }

 private:
  EmaConfig config_;
  ParamStore<T> shadow_;
  std::int64_t updates_ = 0;
};

}  // namespace geodp
