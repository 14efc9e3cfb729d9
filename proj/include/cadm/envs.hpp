#pragma once

// CartPole and Pendulum with context-dependent physics and the known reward
// functions used both by the simulator and by the planner.

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <string>
#include <string_view>
#include <vector>

#include "cadm/errors.hpp"
#include "cadm/rng.hpp"

namespace cadm::envs {

using Vector = Eigen::VectorXd;

enum class EnvId { cartpole, pendulum };
enum class Regime { train, moderate, extreme };

inline constexpr int kEpisodeLength = 200;

inline std::string_view to_string(EnvId e) { return e == EnvId::cartpole ? "cartpole" : "pendulum"; }

inline EnvId parse_env(std::string_view s) {
  if (s == "cartpole") return EnvId::cartpole;
  if (s == "pendulum") return EnvId::pendulum;
  throw ConfigError("env", "unknown environment '" + std::string(s) + "'");
}

inline std::string_view to_string(Regime r) {
  switch (r) {
    case Regime::train: return "train";
    case Regime::moderate: return "moderate";
    case Regime::extreme: return "extreme";
  }
  return "?";
}

inline Regime parse_regime(std::string_view s) {
  if (s == "train") return Regime::train;
  if (s == "moderate") return Regime::moderate;
  if (s == "extreme") return Regime::extreme;
  throw ConfigError("regime", "unknown regime '" + std::string(s) + "'");
}

inline int state_dim(EnvId e) { return e == EnvId::cartpole ? 4 : 3; }
inline constexpr int action_dim(EnvId) { return 1; }

/// Hidden context. CartPole: (push force, pole length); Pendulum: (mass, length).
struct EnvParams {
  EnvId env = EnvId::cartpole;
  std::array<double, 2> values{};

  double force() const { return values[0]; }
  double mass() const { return values[0]; }
  double length() const { return values[1]; }

  bool operator==(const EnvParams&) const = default;
};

inline std::array<std::string_view, 2> axis_names(EnvId e) {
  if (e == EnvId::cartpole) return {"force", "length"};
  return {"mass", "length"};
}

inline int axis_index(EnvId e, std::string_view name) {
  auto names = axis_names(e);
  for (int i = 0; i < 2; ++i)
    if (names[i] == name) return i;
  throw ConfigError("param", "environment " + std::string(to_string(e)) + " has no parameter '" +
                                 std::string(name) + "'");
}

inline EnvParams make_params(EnvId e, double first, double length) { return {e, {first, length}}; }

/// Discrete per-axis grid for one (env, regime) pair.
struct ParamGrid {
  std::array<std::vector<double>, 2> axes;
};

inline ParamGrid param_grid(EnvId e, Regime r) {
  auto steps = [](double lo, double hi, double step) {
    std::vector<double> v;
    const int n = static_cast<int>(std::lround((hi - lo) / step));
    for (int i = 0; i <= n; ++i) v.push_back(std::round((lo + i * step) * 1e6) / 1e6);
    return v;
  };
  if (e == EnvId::cartpole) {
    switch (r) {
      case Regime::train: return {{steps(5.0, 15.0, 1.0), steps(0.40, 0.60, 0.05)}};
      case Regime::moderate: return {{std::vector<double>{3.0, 3.5, 16.5, 17.0}, {0.25, 0.30, 0.70, 0.75}}};
      case Regime::extreme: return {{std::vector<double>{2.0, 2.5, 17.5, 18.0}, {0.15, 0.20, 0.80, 0.85}}};
    }
  }
  switch (r) {
    case Regime::train: return {{steps(0.75, 1.25, 0.05), steps(0.75, 1.25, 0.05)}};
    case Regime::moderate: return {{std::vector<double>{0.50, 0.70, 1.30, 1.50}, {0.50, 0.70, 1.30, 1.50}}};
    case Regime::extreme: return {{std::vector<double>{0.20, 0.40, 1.60, 1.80}, {0.20, 0.40, 1.60, 1.80}}};
  }
  return {};
}

/// Midpoint of the training grid along each axis.
inline EnvParams training_midpoint(EnvId e) {
  const ParamGrid g = param_grid(e, Regime::train);
  return {e, {g.axes[0][g.axes[0].size() / 2], g.axes[1][g.axes[1].size() / 2]}};
}

/// Independent uniform draw per axis from the regime grid.
inline EnvParams sample_params(EnvId e, Regime r, Rng& rng) {
  const ParamGrid g = param_grid(e, r);
  EnvParams p{e, {}};
  for (int a = 0; a < 2; ++a) p.values[a] = g.axes[a][uniform_index(rng, g.axes[a].size())];
  return p;
}

inline bool in_grid(const EnvParams& p, Regime r) {
  const ParamGrid g = param_grid(p.env, r);
  for (int a = 0; a < 2; ++a) {
    bool found = false;
    for (double v : g.axes[a]) found = found || std::abs(v - p.values[a]) < 1e-9;
    if (!found) return false;
  }
  return true;
}

struct ActionSpace {
  bool discrete;
  double low;
  double high;
};

inline ActionSpace action_space(EnvId e) {
  if (e == EnvId::cartpole) return {true, 0.0, 1.0};
  return {false, -2.0, 2.0};
}

/// Maps an arbitrary real onto the legal action set.
inline double legalize_action(EnvId e, double a) {
  if (e == EnvId::cartpole) return a > 0.5 ? 1.0 : 0.0;
  return std::clamp(a, -2.0, 2.0);
}

/// Simulator state. CartPole: (x, x_dot, theta, theta_dot). Pendulum: (theta,
/// theta_dot) in q[0..1]. `t` counts steps taken in the episode.
struct EnvState {
  std::array<double, 4> q{};
  int t = 0;
};

namespace cartpole {
inline constexpr double kGravity = 9.8;
inline constexpr double kCartMass = 1.0;
inline constexpr double kPoleMass = 0.1;
inline constexpr double kDt = 0.02;
inline constexpr double kXLimit = 2.4;
inline constexpr double kThetaLimit = 2.0 * std::numbers::pi * 14.0 / 360.0;

// Classic cart-pole equations, semi-implicit Euler. `length` is the full pole
// length; its half enters the torque terms.
inline std::array<double, 4> integrate(const std::array<double, 4>& q, double force_mag,
                                       double length, double action) {
  const double total_mass = kCartMass + kPoleMass;
  const double half_length = 0.5 * length;
  const double pole_mass_length = kPoleMass * half_length;
  const double force = action > 0.5 ? force_mag : -force_mag;
  const auto [x, x_dot, theta, theta_dot] = q;
  const double cos_t = std::cos(theta);
  const double sin_t = std::sin(theta);
  const double temp = (force + pole_mass_length * theta_dot * theta_dot * sin_t) / total_mass;
  const double theta_acc = (kGravity * sin_t - cos_t * temp) /
                           (half_length * (4.0 / 3.0 - kPoleMass * cos_t * cos_t / total_mass));
  const double x_acc = temp - pole_mass_length * theta_acc * cos_t / total_mass;
  const double x_dot_n = x_dot + kDt * x_acc;
  const double theta_dot_n = theta_dot + kDt * theta_acc;
  return {x + kDt * x_dot_n, x_dot_n, theta + kDt * theta_dot_n, theta_dot_n};
}
}  // namespace cartpole

namespace pendulum {
inline constexpr double kGravity = 10.0;
inline constexpr double kDt = 0.05;
inline constexpr double kMaxSpeed = 8.0;
inline constexpr double kMaxTorque = 2.0;

inline double wrap_angle(double th) {
  const double two_pi = 2.0 * std::numbers::pi;
  double r = std::fmod(th + std::numbers::pi, two_pi);
  if (r < 0) r += two_pi;
  return r - std::numbers::pi;
}

inline std::array<double, 2> integrate(double theta, double theta_dot, double mass, double length,
                                       double action) {
  const double u = std::clamp(action, -kMaxTorque, kMaxTorque);
  const double acc = 3.0 * kGravity / (2.0 * length) * std::sin(theta) +
                     3.0 * u / (mass * length * length);
  const double theta_dot_n = std::clamp(theta_dot + acc * kDt, -kMaxSpeed, kMaxSpeed);
  return {theta + theta_dot_n * kDt, theta_dot_n};
}
}  // namespace pendulum

inline Vector observe(EnvId e, const EnvState& s) {
  if (e == EnvId::cartpole) return Eigen::Vector4d(s.q[0], s.q[1], s.q[2], s.q[3]);
  return Eigen::Vector3d(std::cos(s.q[0]), std::sin(s.q[0]), s.q[1]);
}

/// Inverse of observe (up to angle wrapping); step counter is not observable.
inline EnvState state_from_observation(EnvId e, const Vector& obs) {
  EnvState s;
  if (e == EnvId::cartpole) {
    for (int i = 0; i < 4; ++i) s.q[i] = obs[i];
  } else {
    s.q[0] = std::atan2(obs[1], obs[0]);
    s.q[1] = obs[2];
  }
  return s;
}

/// Known reward on observations. CartPole scores next_obs, Pendulum scores
/// the current observation and the applied torque.
template <typename A, typename B>
double reward_fn(EnvId e, const Eigen::MatrixBase<A>& obs, double action,
                 const Eigen::MatrixBase<B>& next_obs) {
  if (e == EnvId::cartpole) {
    const bool alive = std::abs(next_obs[0]) < cartpole::kXLimit &&
                       std::abs(next_obs[2]) < cartpole::kThetaLimit;
    return alive ? 1.0 : 0.0;
  }
  const double theta = std::atan2(obs[1], obs[0]);
  const double theta_dot = obs[2];
  const double u = std::clamp(action, -pendulum::kMaxTorque, pendulum::kMaxTorque);
  return -(theta * theta + 0.1 * theta_dot * theta_dot + 0.001 * u * u);
}

inline EnvState env_reset(const EnvParams& p, Rng& rng) {
  EnvState s;
  if (p.env == EnvId::cartpole) {
    for (auto& v : s.q) v = uniform(rng, -0.05, 0.05);
  } else {
    s.q[0] = uniform(rng, -std::numbers::pi, std::numbers::pi);
    s.q[1] = uniform(rng, -1.0, 1.0);
  }
  return s;
}

struct StepResult {
  EnvState next;
  double reward;
  bool done;
};

inline StepResult env_step(const EnvParams& p, const EnvState& s, double action) {
  EnvState n;
  n.t = s.t + 1;
  if (p.env == EnvId::cartpole) {
    n.q = cartpole::integrate(s.q, p.force(), p.length(), legalize_action(p.env, action));
  } else {
    const auto [th, thd] = pendulum::integrate(s.q[0], s.q[1], p.mass(), p.length(), action);
    n.q = {th, thd, 0.0, 0.0};
  }
  for (double v : n.q)
    if (!std::isfinite(v)) throw EnvFault("env_step: non-finite state");
  const double r = reward_fn(p.env, observe(p.env, s), legalize_action(p.env, action), observe(p.env, n));
  bool done = n.t >= kEpisodeLength;
  if (p.env == EnvId::cartpole && r == 0.0) done = true;
  return {n, r, done};
}

/// True dynamics on observations; used to wrap the simulator as a model.
inline Vector step_observation(const EnvParams& p, const Vector& obs, double action) {
  const EnvState s = state_from_observation(p.env, obs);
  return observe(p.env, env_step(p, s, action).next);
}

}  // namespace cadm::envs
