#pragma once

// Planar manipulation simulator: a disc effector with a binary gripper, one
// object, a goal region and (for pick_out_of_hole) a hole. Observations are
// anti-aliased orthographic renderings from several cameras.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <string>
#include <string_view>
#include <vector>

#include "geodp/numerics/rng.hpp"
#include "geodp/numerics/tensor.hpp"

namespace geodp::env {

enum class Task { reach, sweep_into, pick_out_of_hole };

inline constexpr std::array<Task, 3> kAllTasks{Task::reach, Task::sweep_into, Task::pick_out_of_hole};

inline std::string_view task_name(Task t) {
  switch (t) {
    case Task::reach: return "reach";
    case Task::sweep_into: return "sweep_into";
    case Task::pick_out_of_hole: return "pick_out_of_hole";
  }
  return "?";
}

inline Task parse_task(std::string_view name) {
  for (Task t : kAllTasks)
    if (task_name(t) == name) return t;
  fail(ErrorKind::config, "unknown task '" + std::string(name) +
                              "'; valid tasks: reach, sweep_into, pick_out_of_hole");
}

struct Vec2 {
  double x = 0.0, y = 0.0;

  friend Vec2 operator+(Vec2 a, Vec2 b) { return {a.x + b.x, a.y + b.y}; }
  friend Vec2 operator-(Vec2 a, Vec2 b) { return {a.x - b.x, a.y - b.y}; }
  friend Vec2 operator*(double s, Vec2 a) { return {s * a.x, s * a.y}; }
  friend bool operator==(Vec2, Vec2) = default;
  double norm() const { return std::hypot(x, y); }
  double dot(Vec2 o) const { return x * o.x + y * o.y; }
};

struct Box {
  double x0, x1, y0, y1;
  bool contains(Vec2 p) const { return p.x >= x0 && p.x <= x1 && p.y >= y0 && p.y <= y1; }
  Vec2 sample(Rng& rng) const { return {rng.uniform(x0, x1), rng.uniform(y0, y1)}; }
};

inline constexpr double kMaxStep = 0.05;
inline constexpr double kEffectorRadius = 0.07;
inline constexpr double kObjectRadius = 0.07;
inline constexpr double kGraspRadius = 0.05;
inline constexpr double kHoleRadius = 0.11;
inline constexpr int kProprioDim = 5;
inline constexpr int kActionDim = 4;

struct TaskSpec {
  Box effector_spawn;
  Box object_spawn;  // reach: the goal marker is the target object
  Box goal_spawn;
  double goal_radius;
  int max_steps;
};

inline const TaskSpec& task_spec(Task t) {
  static const TaskSpec reach{{-0.5, -0.3, -0.1, 0.1}, {0.15, 0.45, -0.15, 0.15}, {0.15, 0.45, -0.15, 0.15}, 0.08, 100};
  static const TaskSpec sweep{{-0.75, -0.6, -0.1, 0.1}, {-0.2, 0.0, -0.15, 0.15}, {0.6, 0.6, 0.0, 0.0}, 0.1, 150};
  static const TaskSpec pick{{-0.7, -0.5, -0.2, 0.2}, {-0.2, 0.1, -0.4, 0.4}, {0.4, 0.7, -0.4, 0.4}, 0.08, 150};
  switch (t) {
    case Task::reach: return reach;
    case Task::sweep_into: return sweep;
    default: return pick;
  }
}

struct WorldState {
  Task task = Task::reach;
  Vec2 effector;
  double gripper = 0.0;  // 0 open, 1 closed
  Vec2 object;
  Vec2 goal;
  double goal_radius = 0.08;
  Vec2 hole;
  bool attached = false;
  int step = 0;
  int max_steps = 100;
  bool success = false;
  bool done = false;

  friend bool operator==(const WorldState&, const WorldState&) = default;
};

// Cartesian displacement (z accepted and ignored) plus gripper command.
struct Action {
  std::array<double, 3> delta{};
  double gripper = 0.0;

  static Action from(std::span<const double> v) {
    require(v.size() == kActionDim, ErrorKind::shape, "action must have 4 components");
    return Action{{v[0], v[1], v[2]}, v[3]};
  }
  std::array<double, kActionDim> to_array() const { return {delta[0], delta[1], delta[2], gripper}; }
};

struct CameraSpec {
  int view_id = 0;
  double nominal_deg = 0.0;
  double noise_deg = 0.0;
  bool from_below = false;
  int height = 32;
  int width = 32;
};

// View 0 looks down; view 1 looks up from below the table, rotated by 90
// degrees, so the object is drawn over the effector there.
inline std::vector<CameraSpec> default_cameras(int views, int height, int width, double noise_deg) {
  std::vector<CameraSpec> cams;
  for (int v = 0; v < views; ++v)
    cams.push_back({v, 90.0 * v, noise_deg, v % 2 == 1, height, width});
  return cams;
}

inline std::array<double, kProprioDim> proprio_of(const WorldState& s) {
  return {s.effector.x, s.effector.y, s.effector.x, s.effector.y, 0.0};
}

inline Vec2 clamp_workspace(Vec2 p) { return {std::clamp(p.x, -1.0, 1.0), std::clamp(p.y, -1.0, 1.0)}; }

inline Action clamp_action(const Action& a) {
  for (double v : a.delta)
    require(std::isfinite(v), ErrorKind::numeric, "non-finite action component");
  require(std::isfinite(a.gripper), ErrorKind::numeric, "non-finite gripper command");
  Action out = a;
  const double len = std::hypot(a.delta[0], a.delta[1]);
  if (len > kMaxStep * (1.0 + 1e-12)) {
    out.delta[0] *= kMaxStep / len;
    out.delta[1] *= kMaxStep / len;
  }
  out.delta[2] = std::clamp(a.delta[2], -kMaxStep, kMaxStep);
  out.gripper = std::clamp(a.gripper, 0.0, 1.0);
  return out;
}

inline WorldState initial_state(Task task, std::uint64_t seed) {
  const auto& spec = task_spec(task);
  Rng rng(derive_seed(seed, "spawn"));
  WorldState s;
  s.task = task;
  s.effector = spec.effector_spawn.sample(rng);
  s.object = spec.object_spawn.sample(rng);
  s.goal = task == Task::reach ? s.object : spec.goal_spawn.sample(rng);
  s.goal_radius = spec.goal_radius;
  s.hole = task == Task::pick_out_of_hole ? s.object : Vec2{};
  s.max_steps = spec.max_steps;
  return s;
}

inline bool task_success(const WorldState& s) {
  switch (s.task) {
    case Task::reach: return (s.effector - s.goal).norm() < s.goal_radius;
    case Task::sweep_into: return (s.object - s.goal).norm() < s.goal_radius;
    case Task::pick_out_of_hole:
      return !s.attached && (s.object - s.goal).norm() < s.goal_radius &&
             (s.object - s.hole).norm() > kHoleRadius;
  }
  return false;
}

// Pure transition function.
inline WorldState transition(const WorldState& prev, const Action& raw) {
  require(!prev.done, ErrorKind::usage, "step after episode is done");
  const Action a = clamp_action(raw);
  WorldState s = prev;
  s.effector = clamp_workspace(s.effector + Vec2{a.delta[0], a.delta[1]});
  s.gripper = a.gripper;
  switch (s.task) {
    case Task::reach: break;
    case Task::sweep_into: {
      // Sticking contact: an overlapped object moves with the effector, then
      // any remaining overlap is resolved along the center line.
      const double contact = kEffectorRadius + kObjectRadius;
      if ((s.object - s.effector).norm() < contact) s.object = clamp_workspace(s.object + (s.effector - prev.effector));
      const Vec2 rel = s.object - s.effector;
      const double dist = rel.norm();
      if (dist < contact) {
        Vec2 dir = dist > 1e-12 ? (1.0 / dist) * rel : Vec2{1.0, 0.0};
        s.object = clamp_workspace(s.effector + contact * dir);
      }
      break;
    }
    case Task::pick_out_of_hole: {
      const bool closed = s.gripper >= 0.5;
      if (s.attached && !closed) s.attached = false;
      if (!s.attached && closed && (s.effector - s.object).norm() < kGraspRadius) s.attached = true;
      if (s.attached) s.object = s.effector;
      break;
    }
  }
  ++s.step;
  s.success = task_success(s);
  s.done = s.success || s.step >= s.max_steps;
  return s;
}

// ---------------------------------------------------------------- rendering

struct RenderResult {
  Tensor<float> image;  // [3, H, W] in [0, 1]
  double angle_deg = 0.0;
};

namespace detail {

struct Disc {
  Vec2 center;
  double radius;
  std::array<float, 3> color;
};

}  // namespace detail

// The view angle is nominal + U[-noise, +noise], drawn fresh from `rng` per
// call (no draw when noise is zero).
inline RenderResult render(const WorldState& s, const CameraSpec& cam, Rng& rng) {
  RenderResult out;
  out.angle_deg = cam.nominal_deg + (cam.noise_deg > 0.0 ? rng.uniform(-cam.noise_deg, cam.noise_deg) : 0.0);
  const double th = out.angle_deg * std::numbers::pi / 180.0;
  const double c = std::cos(th), sn = std::sin(th);

  std::vector<detail::Disc> discs;
  if (s.task == Task::pick_out_of_hole) discs.push_back({s.hole, kHoleRadius, {0.55f, 0.45f, 0.3f}});
  discs.push_back({s.goal, s.goal_radius, {0.15f, 0.3f, 0.95f}});
  const detail::Disc object{s.object, kObjectRadius, {0.1f, 0.85f, 0.2f}};
  const detail::Disc effector{s.effector, kEffectorRadius,
                              {0.95f, 0.15f, static_cast<float>(0.15 + 0.7 * s.gripper)}};
  const bool has_object = s.task != Task::reach;
  if (cam.from_below) {
    discs.push_back(effector);
    if (has_object) discs.push_back(object);
  } else {
    if (has_object) discs.push_back(object);
    discs.push_back(effector);
  }

  const int h = cam.height, w = cam.width;
  out.image = Tensor<float>({3, static_cast<std::size_t>(h), static_cast<std::size_t>(w)});
  const double px = 2.0 / w;
  float* img = out.image.data();
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  for (int r = 0; r < h; ++r)
    for (int col = 0; col < w; ++col) {
      double u = -1.0 + (col + 0.5) * 2.0 / w;
      const double v = 1.0 - (r + 0.5) * 2.0 / h;
      if (cam.from_below) u = -u;
      const Vec2 p{c * u - sn * v, sn * u + c * v};
      std::array<double, 3> color{0.35, 0.35, 0.35};
      if (std::abs(p.x) <= 1.0 && std::abs(p.y) <= 1.0) color = {0.0, 0.0, 0.0};
      for (const auto& d : discs) {
        const double sd = (p - d.center).norm() - d.radius;
        const double cov = std::clamp(0.5 - sd / px, 0.0, 1.0);
        if (cov <= 0.0) continue;
        for (int k = 0; k < 3; ++k) color[k] += cov * (d.color[k] - color[k]);
      }
      const std::size_t idx = static_cast<std::size_t>(r) * w + col;
      for (int k = 0; k < 3; ++k) img[k * plane + idx] = static_cast<float>(color[k]);
    }
  return out;
}

// ---------------------------------------------------------------- expert

namespace detail {

inline std::array<double, 2> toward(Vec2 from, Vec2 to) {
  Vec2 d = to - from;
  const double len = d.norm();
  if (len > kMaxStep) d = (kMaxStep / len) * d;
  return {d.x, d.y};
}

inline double segment_distance(Vec2 p, Vec2 a, Vec2 b) {
  const Vec2 ab = b - a;
  const double l2 = ab.dot(ab);
  const double t = l2 > 0 ? std::clamp((p - a).dot(ab) / l2, 0.0, 1.0) : 0.0;
  return (p - (a + t * ab)).norm();
}

}  // namespace detail

// Proportional controller over approach -> engage -> deliver subgoals.
inline Action expert_action(const WorldState& s) {
  Action a;
  switch (s.task) {
    case Task::reach: {
      auto d = detail::toward(s.effector, s.goal);
      a.delta = {d[0], d[1], 0.0};
      break;
    }
    case Task::sweep_into: {
      const double contact = kEffectorRadius + kObjectRadius;
      Vec2 u = s.goal - s.object;
      const double gl = u.norm();
      u = gl > 1e-9 ? (1.0 / gl) * u : Vec2{1.0, 0.0};
      const Vec2 perp{-u.y, u.x};
      const Vec2 rel = s.effector - s.object;
      const double along = rel.dot(u);
      const double lateral = rel.dot(perp);
      Vec2 target;
      if (along < 0.0 && std::abs(lateral) < 0.03 && rel.norm() < contact + 0.04) {
        // Engaged behind the object: push along u while re-centering on the line.
        const Vec2 desired = s.object - contact * u;
        Vec2 d = (desired - s.effector) + kMaxStep * u;
        const double len = d.norm();
        if (len > kMaxStep) d = (kMaxStep / len) * d;
        a.delta = {d.x, d.y, 0.0};
        return a;
      }
      const Vec2 pre = s.object - (contact + 0.03) * u;
      if (detail::segment_distance(s.object, s.effector, pre) < contact + 0.01 && along > -contact) {
        const double side = lateral >= 0.0 ? 1.0 : -1.0;
        target = s.object - (contact + 0.03) * u + side * (contact + 0.06) * perp;
        if ((s.effector - target).norm() < 0.02) target = pre;
      } else {
        target = pre;
      }
      auto d = detail::toward(s.effector, target);
      a.delta = {d[0], d[1], 0.0};
      break;
    }
    case Task::pick_out_of_hole: {
      if (!s.attached) {
        if ((s.effector - s.object).norm() > 0.005) {
          auto d = detail::toward(s.effector, s.object);
          a.delta = {d[0], d[1], 0.0};
          a.gripper = 0.0;
        } else {
          a.gripper = 1.0;
        }
      } else if ((s.object - s.goal).norm() > 0.005) {
        auto d = detail::toward(s.effector, s.goal);
        a.delta = {d[0], d[1], 0.0};
        a.gripper = 1.0;
      } else {
        a.gripper = 0.0;
      }
      break;
    }
  }
  return a;
}

// ---------------------------------------------------------------- environment

struct EnvConfig {
  int views = 2;
  int height = 32;
  int width = 32;
  double view_noise_deg = 0.0;
  int max_steps = 0;  // 0 keeps the task default
};

struct Observation {
  Tensor<float> images;  // [V, 3, H, W]
  std::array<double, kProprioDim> proprio{};
};

struct StepResult {
  Observation observation;
  bool success = false;
  bool done = false;
};

class PlanarEnv {
 public:
  explicit PlanarEnv(EnvConfig config = {}) : config_(config) {
    require(config.views >= 1 && config.height > 0 && config.width > 0, ErrorKind::config,
            "env: views and resolution must be positive");
    cameras_ = default_cameras(config.views, config.height, config.width, config.view_noise_deg);
  }

  const EnvConfig& config() const noexcept { return config_; }
  const std::vector<CameraSpec>& cameras() const noexcept { return cameras_; }
  const WorldState& state() const noexcept { return state_; }
  std::uint64_t seed() const noexcept { return seed_; }
  const std::vector<double>& last_view_angles() const noexcept { return angles_; }

  Observation reset(Task task, std::uint64_t seed) {
    seed_ = seed;
    state_ = initial_state(task, seed);
    if (config_.max_steps > 0) state_.max_steps = config_.max_steps;
    render_rng_ = Rng(derive_seed(seed, "render"));
    return observe();
  }

  StepResult step(const Action& action) {
    state_ = transition(state_, action);
    StepResult r;
    r.observation = observe();
    r.success = state_.success;
    r.done = state_.done;
    return r;
  }

  Observation observe() {
    Observation o;
    const std::size_t v = cameras_.size(), h = config_.height, w = config_.width;
    o.images = Tensor<float>({v, 3, h, w});
    angles_.clear();
    for (std::size_t i = 0; i < v; ++i) {
      auto r = render(state_, cameras_[i], render_rng_);
      std::copy(r.image.values().begin(), r.image.values().end(), o.images.data() + i * 3 * h * w);
      angles_.push_back(r.angle_deg);
    }
    o.proprio = proprio_of(state_);
    return o;
  }

 private:
  EnvConfig config_;
  std::vector<CameraSpec> cameras_;
  WorldState state_;
  std::uint64_t seed_ = 0;
  Rng render_rng_;
  std::vector<double> angles_;
};

}  // namespace geodp::env
