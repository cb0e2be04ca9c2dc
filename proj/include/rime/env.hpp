#pragma once

// Toy continuous-control environments with known ground-truth rewards.
//
// Both environments integrate with explicit Euler at dt = 0.05:
//   position' = position + dt * velocity
//   velocity' = velocity + dt * (action - friction * velocity) + noise
// so a single step from rest never moves the body.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>

#include <json.hpp>

#include "rime/nn.hpp"

namespace rime {

struct Transition {
  Vec s;
  Vec a;
  Vec s_next;
  double reward = 0.0;
  bool done = false;      // last step of an episode (time limit)
  bool terminal = false;  // absorbing state; no bootstrapping past it
  std::int64_t episode = 0;
  int step = 0;
};

inline nlohmann::json to_json(const Transition& t) {
  auto vec = [](const Vec& v) { return std::vector<double>(v.data(), v.data() + v.size()); };
  return {{"s", vec(t.s)},           {"a", vec(t.a)},         {"s_next", vec(t.s_next)},
          {"reward", t.reward},      {"done", t.done},        {"terminal", t.terminal},
          {"episode", t.episode},    {"step", t.step}};
}

inline Transition transition_from_json(const nlohmann::json& j) {
  auto vec = [](const nlohmann::json& a) {
    const auto v = a.get<std::vector<double>>();
    return Vec(Eigen::Map<const Vec>(v.data(), static_cast<Eigen::Index>(v.size())));
  };
  Transition t;
  t.s = vec(j.at("s"));
  t.a = vec(j.at("a"));
  t.s_next = vec(j.at("s_next"));
  t.reward = j.at("reward");
  t.done = j.at("done");
  t.terminal = j.value("terminal", false);
  t.episode = j.value("episode", std::int64_t{0});
  t.step = j.value("step", 0);
  return t;
}

class ContinuousEnv {
 public:
  virtual ~ContinuousEnv() = default;

  virtual std::string name() const = 0;
  virtual int state_dim() const = 0;
  virtual int action_dim() const = 0;
  int horizon() const { return horizon_; }
  int steps_taken() const { return t_; }

  /// Ground-truth reward for taking (already clipped) action a in state s.
  virtual double reward(const Vec& s, const Vec& a) const = 0;
  /// Success indicator of a final state, for environments that define one.
  virtual std::optional<bool> success(const Vec& final_state) const {
    (void)final_state;
    return std::nullopt;
  }
  /// 2-D position used by annotation clients to draw the trajectory.
  virtual Eigen::Vector2d render_position(const Vec& s) const = 0;
  virtual nlohmann::json render_metadata() const = 0;
  /// Lower bound on the per-step reward; return >= horizon * min_reward().
  virtual double min_reward() const = 0;

  Vec reset() {
    t_ = 0;
    return initial_state(rng_);
  }

  Transition step(const Vec& s, const Vec& action) {
    if (s.size() != state_dim()) throw std::invalid_argument(name() + ": state dimension mismatch");
    if (action.size() != action_dim()) throw std::invalid_argument(name() + ": action dimension mismatch");
    for (Eigen::Index i = 0; i < action.size(); ++i)
      if (std::isnan(action[i])) throw std::invalid_argument(name() + ": NaN action");
    Transition tr;
    tr.s = s;
    tr.a = action.cwiseMax(-1.0).cwiseMin(1.0);
    tr.s_next = dynamics(s, tr.a, rng_);
    tr.reward = reward(s, tr.a);
    tr.step = t_;
    ++t_;
    tr.done = t_ >= horizon_;
    return tr;
  }

  static constexpr double dt = 0.05;

 protected:
  ContinuousEnv(int horizon, std::uint64_t seed) : horizon_(horizon), rng_(seed) {
    if (horizon <= 1) throw std::invalid_argument("environment horizon must exceed 1");
  }

  virtual Vec initial_state(std::mt19937_64& rng) const = 0;
  virtual Vec dynamics(const Vec& s, const Vec& a, std::mt19937_64& rng) const = 0;

 private:
  int horizon_;
  int t_ = 0;
  std::mt19937_64 rng_;
};

struct PointMassConfig {
  Eigen::Vector2d goal = Eigen::Vector2d::Zero();
  double start_range = 1.0;   // initial position ~ U[-start_range, start_range]^2
  double arena = 2.0;         // positions clipped to [-arena, arena]^2
  double friction = 0.5;
  double action_cost = 0.1;
  double noise = 0.0;         // std of Gaussian velocity noise per step
  int horizon = 100;
};

/// 2-D double integrator, state (x, y, vx, vy), reward -|p - goal| - c|a|^2.
class PointMassEnv final : public ContinuousEnv {
 public:
  PointMassEnv(PointMassConfig cfg, std::uint64_t seed) : ContinuousEnv(cfg.horizon, seed), cfg_(cfg) {}

  std::string name() const override { return "point_mass"; }
  int state_dim() const override { return 4; }
  int action_dim() const override { return 2; }
  const PointMassConfig& config() const { return cfg_; }

  double reward(const Vec& s, const Vec& a) const override {
    return -(s.head<2>() - cfg_.goal).norm() - cfg_.action_cost * a.squaredNorm();
  }

  Eigen::Vector2d render_position(const Vec& s) const override { return s.head<2>(); }

  nlohmann::json render_metadata() const override {
    return {{"env", name()}, {"goal", {cfg_.goal.x(), cfg_.goal.y()}}, {"arena", cfg_.arena}, {"dt", dt}};
  }

  double min_reward() const override {
    const double far = (Eigen::Vector2d(cfg_.arena, cfg_.arena) + cfg_.goal.cwiseAbs()).norm();
    return -far - cfg_.action_cost * action_dim();
  }

 protected:
  Vec initial_state(std::mt19937_64& rng) const override {
    std::uniform_real_distribution<double> u(-cfg_.start_range, cfg_.start_range);
    Vec s = Vec::Zero(4);
    s[0] = u(rng);
    s[1] = u(rng);
    return s;
  }

  Vec dynamics(const Vec& s, const Vec& a, std::mt19937_64& rng) const override {
    Vec next = s;
    next.head<2>() += dt * s.tail<2>();
    next.tail<2>() += dt * (a - cfg_.friction * s.tail<2>());
    if (cfg_.noise > 0.0) {
      std::normal_distribution<double> n(0.0, cfg_.noise);
      next[2] += n(rng);
      next[3] += n(rng);
    }
    for (int i = 0; i < 2; ++i) {
      if (std::abs(next[i]) > cfg_.arena) {
        next[i] = std::clamp(next[i], -cfg_.arena, cfg_.arena);
        next[i + 2] = 0.0;
      }
    }
    return next;
  }

 private:
  PointMassConfig cfg_;
};

struct CartPushConfig {
  double goal = 1.0;
  double tolerance = 0.1;   // success if |x - goal| < tolerance at episode end
  double friction = 0.5;
  double action_cost = 0.1;
  double noise = 0.0;
  double track = 2.0;       // x clipped to [-track, track]
  int horizon = 100;
};

/// 1-D cart pushed from the origin toward a goal, state (x, v).
class CartPushEnv final : public ContinuousEnv {
 public:
  CartPushEnv(CartPushConfig cfg, std::uint64_t seed) : ContinuousEnv(cfg.horizon, seed), cfg_(cfg) {}

  std::string name() const override { return "cart_push"; }
  int state_dim() const override { return 2; }
  int action_dim() const override { return 1; }

  double reward(const Vec& s, const Vec& a) const override {
    return -std::abs(s[0] - cfg_.goal) - cfg_.action_cost * a.squaredNorm();
  }

  std::optional<bool> success(const Vec& final_state) const override {
    return std::abs(final_state[0] - cfg_.goal) < cfg_.tolerance;
  }

  Eigen::Vector2d render_position(const Vec& s) const override { return {s[0], 0.0}; }

  nlohmann::json render_metadata() const override {
    return {{"env", name()}, {"goal", {cfg_.goal, 0.0}}, {"arena", cfg_.track}, {"dt", dt}};
  }

  double min_reward() const override {
    return -(cfg_.track + std::abs(cfg_.goal)) - cfg_.action_cost * action_dim();
  }

 protected:
  Vec initial_state(std::mt19937_64&) const override { return Vec::Zero(2); }

  Vec dynamics(const Vec& s, const Vec& a, std::mt19937_64& rng) const override {
    Vec next = s;
    next[0] += dt * s[1];
    next[1] += dt * (a[0] - cfg_.friction * s[1]);
    if (cfg_.noise > 0.0) next[1] += std::normal_distribution<double>(0.0, cfg_.noise)(rng);
    if (std::abs(next[0]) > cfg_.track) {
      next[0] = std::clamp(next[0], -cfg_.track, cfg_.track);
      next[1] = 0.0;
    }
    return next;
  }

 private:
  CartPushConfig cfg_;
};

/// Environment registry keyed by name. Options are the env.* keys of a run config.
inline std::unique_ptr<ContinuousEnv> make_env(const std::string& name, const std::map<std::string, double>& options,
                                               std::uint64_t seed) {
  auto get = [&](const std::string& key, double fallback) {
    auto it = options.find(key);
    return it == options.end() ? fallback : it->second;
  };
  if (name == "point_mass") {
    PointMassConfig c;
    c.goal = {get("goal_x", c.goal.x()), get("goal_y", c.goal.y())};
    c.start_range = get("start_range", c.start_range);
    c.arena = get("arena", c.arena);
    c.friction = get("friction", c.friction);
    c.action_cost = get("action_cost", c.action_cost);
    c.noise = get("noise", c.noise);
    c.horizon = static_cast<int>(get("horizon", c.horizon));
    return std::make_unique<PointMassEnv>(c, seed);
  }
  if (name == "cart_push") {
    CartPushConfig c;
    c.goal = get("goal", c.goal);
    c.tolerance = get("tolerance", c.tolerance);
    c.friction = get("friction", c.friction);
    c.action_cost = get("action_cost", c.action_cost);
    c.noise = get("noise", c.noise);
    c.track = get("track", c.track);
    c.horizon = static_cast<int>(get("horizon", c.horizon));
    return std::make_unique<CartPushEnv>(c, seed);
  }
  throw std::invalid_argument("unknown environment: " + name);
}

}  // namespace rime
