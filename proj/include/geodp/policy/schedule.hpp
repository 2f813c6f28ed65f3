#pragma once

// Diffusion noise schedule and the deterministic DDIM update.
//
// Steps are 1-indexed: k = 1..K with alpha_bar[0] = 1. The inference subset
// holds n evenly spaced steps k_i = floor((i + 1) K / n); sampling walks it
// from the largest step down to 0.

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include "geodp/numerics/rng.hpp"
#include "geodp/numerics/tensor.hpp"

namespace geodp::policy {

enum class ScheduleKind { squared_cosine, linear };

struct DdimStep {
  int k = 0;
  int k_prev = 0;
  double alpha = 1.0;  // sqrt(abar_prev / abar_k)
  double gamma = 0.0;  // sqrt(1 - abar_k) - sqrt(abar_k / abar_prev) sqrt(1 - abar_prev)
  double sigma = 0.0;
};

struct NoiseSchedule {
  int train_steps = 0;
  std::vector<double> beta;       // beta[k], k = 1..K (beta[0] unused, 0)
  std::vector<double> alpha_bar;  // alpha_bar[k], alpha_bar[0] = 1
  std::vector<int> inference;     // strictly increasing subset of 1..K

  double sqrt_ab(int k) const { return std::sqrt(alpha_bar.at(static_cast<std::size_t>(k))); }
  double sqrt_one_minus_ab(int k) const { return std::sqrt(1.0 - alpha_bar.at(static_cast<std::size_t>(k))); }

  // Update coefficients in sampling order (largest step first).
  std::vector<DdimStep> ddim_steps() const {
    std::vector<DdimStep> out;
    for (std::size_t i = inference.size(); i-- > 0;) {
      DdimStep s;
      s.k = inference[i];
      s.k_prev = i == 0 ? 0 : inference[i - 1];
      const double ab = alpha_bar[static_cast<std::size_t>(s.k)];
      const double ap = alpha_bar[static_cast<std::size_t>(s.k_prev)];
      s.alpha = std::sqrt(ap / ab);
      s.gamma = std::sqrt(1.0 - ab) - std::sqrt(ab / ap) * std::sqrt(1.0 - ap);
      out.push_back(s);
    }
    return out;
  }
};

inline NoiseSchedule build_schedule(int train_steps, int inference_steps,
                                    ScheduleKind kind = ScheduleKind::squared_cosine) {
  require(train_steps >= 1, ErrorKind::config, "schedule: K must be at least 1");
  require(inference_steps >= 1 && inference_steps <= train_steps, ErrorKind::config,
          "schedule: inference steps (" + std::to_string(inference_steps) + ") must lie in [1, K=" +
              std::to_string(train_steps) + "]");
  NoiseSchedule s;
  s.train_steps = train_steps;
  const auto k_count = static_cast<std::size_t>(train_steps);
  s.beta.assign(k_count + 1, 0.0);
  s.alpha_bar.assign(k_count + 1, 1.0);
  if (kind == ScheduleKind::squared_cosine) {
    const double off = 0.008;
    auto f = [&](double t) {
      const double c = std::cos((t + off) / (1.0 + off) * std::numbers::pi / 2.0);
      return c * c;
    };
    for (std::size_t k = 1; k <= k_count; ++k) {
      const double t1 = static_cast<double>(k - 1) / train_steps, t2 = static_cast<double>(k) / train_steps;
      s.beta[k] = std::min(1.0 - f(t2) / f(t1), 0.999);
    }
  } else {
    for (std::size_t k = 1; k <= k_count; ++k)
      s.beta[k] = k_count == 1 ? 0.02 : 1e-4 + (0.02 - 1e-4) * static_cast<double>(k - 1) / static_cast<double>(k_count - 1);
  }
  for (std::size_t k = 1; k <= k_count; ++k) s.alpha_bar[k] = s.alpha_bar[k - 1] * (1.0 - s.beta[k]);
  for (int i = 0; i < inference_steps; ++i) s.inference.push_back((i + 1) * train_steps / inference_steps);
  return s;
}

// One deterministic DDIM move for sample x given the predicted noise eps.
// With clip, the implied x0 is clamped to [-1, 1] before re-noising.
template <class T>
void ddim_update(Tensor<T>& x, const Tensor<T>& eps, const NoiseSchedule& s, const DdimStep& step, bool clip) {
  require(x.shape() == eps.shape(), ErrorKind::shape, "ddim: noise prediction shape mismatch");
  if (!clip) {
    for (std::size_t i = 0; i < x.size(); ++i)
      x[i] = static_cast<T>(step.alpha * (static_cast<double>(x[i]) - step.gamma * static_cast<double>(eps[i])));
  } else {
    const double sab = s.sqrt_ab(step.k), som = s.sqrt_one_minus_ab(step.k);
    const double sap = s.sqrt_ab(step.k_prev), sopm = s.sqrt_one_minus_ab(step.k_prev);
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double x0 = std::clamp((static_cast<double>(x[i]) - som * static_cast<double>(eps[i])) / sab, -1.0, 1.0);
      x[i] = static_cast<T>(sap * x0 + sopm * static_cast<double>(eps[i]));
    }
  }
  for (std::size_t i = 0; i < x.size(); ++i)
    require(std::isfinite(static_cast<double>(x[i])), ErrorKind::numeric,
            "ddim: non-finite sample at step k=" + std::to_string(step.k));
}

// Runs the sampler from x (the initial Gaussian draw). eps_fn(x, k) returns
// the predicted noise for the whole batch at step k.
template <class T, class EpsFn>
Tensor<T> ddim_sample(Tensor<T> x, const NoiseSchedule& s, EpsFn&& eps_fn, bool clip) {
  for (const auto& step : s.ddim_steps()) {
    const Tensor<T> eps = eps_fn(static_cast<const Tensor<T>&>(x), step.k);
    ddim_update(x, eps, s, step, clip);
  }
  return x;
}

template <class T>
Tensor<T> gaussian(Shape shape, Rng& rng) {
  Tensor<T> t(std::move(shape));
  for (auto& v : t.values()) v = static_cast<T>(rng.normal());
  return t;
}

}  // namespace geodp::policy
