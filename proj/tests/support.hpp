#pragma once

// Small synthetic problems shared by the unit tests and the acceptance suite.

#include <array>
#include <cmath>
#include <numbers>
#include <set>
#include <vector>

#include "cadm/loss.hpp"
#include "cadm/model.hpp"
#include "cadm/planner.hpp"
#include "cadm/rng.hpp"

namespace cadm::testkit {

inline Vector random_vector(Eigen::Index n, Rng& g, double lo = -1.0, double hi = 1.0) {
  Vector v(n);
  for (Eigen::Index i = 0; i < n; ++i) v[i] = uniform(g, lo, hi);
  return v;
}

/// Random-walk episode with `state_dim`-wide states and scalar actions.
inline Episode random_episode(int state_dim, int length, Rng& g) {
  Episode ep;
  ep.params = envs::training_midpoint(envs::EnvId::pendulum);
  Vector s = random_vector(state_dim, g);
  ep.states.push_back(s);
  for (int t = 0; t < length; ++t) {
    ep.actions.push_back(random_vector(1, g, -2.0, 2.0));
    s += random_vector(state_dim, g, -0.5, 0.5);
    ep.states.push_back(s);
    ep.rewards.push_back(0.0);
  }
  return ep;
}

/// CaDM on a synthetic state space of width `state_dim`, small nets,
/// random non-trivial normalizers and non-zero biases.
inline CadmModel small_model(int state_dim, int k, std::uint64_t seed, ModelKind kind = ModelKind::cadm) {
  ModelConfig mc;
  mc.kind = kind;
  mc.env = envs::EnvId::pendulum;
  mc.state_dim_override = state_dim;
  mc.history_k = kind == ModelKind::vanilla ? 0 : k;
  mc.latent_dim = 10;
  mc.encoder_hidden = {6, 6, 6};
  mc.dynamics_hidden = {7, 7};
  CadmModel m = CadmModel::create(mc, seed);
  Rng g(seed + 17);
  auto jitter = [&](nn::MlpParams& p) {
    for (auto& l : p.layers) l.bias = random_vector(l.bias.size(), g, -0.3, 0.3);
  };
  jitter(m.forward_net);
  if (mc.has_backward()) jitter(m.backward_net);
  if (mc.has_encoder()) jitter(m.encoder);
  m.state_norm = {random_vector(state_dim, g), random_vector(state_dim, g, 0.5, 2.0)};
  m.action_norm = {random_vector(1, g), random_vector(1, g, 0.5, 2.0)};
  m.delta_norm = {random_vector(state_dim, g, -0.2, 0.2), random_vector(state_dim, g, 0.2, 1.0)};
  return m;
}

/// `n` segments with heads spread over a few random episodes, including
/// heads near the start so history padding is exercised.
inline std::vector<TrainingSegment> random_segments(int state_dim, int k, int m, int n, Rng& g) {
  std::vector<Episode> eps;
  for (int e = 0; e < 3; ++e) eps.push_back(random_episode(state_dim, 8 + m, g));
  std::vector<TrainingSegment> out;
  for (int i = 0; i < n; ++i) {
    const Episode& ep = eps[uniform_index(g, eps.size())];
    const int t = static_cast<int>(uniform_index(g, static_cast<std::size_t>(ep.length() - m + 1)));
    out.push_back(make_segment(ep, t, k, m));
  }
  return out;
}

/// States never change; lets a reward functor define the whole problem.
struct StaticModel {
  envs::EnvId env_id = envs::EnvId::pendulum;
  envs::EnvId env() const { return env_id; }
  Vector context_at(const Episode&, int) const { return Vector(); }
  Matrix predict(const Matrix& s, const Matrix&, const Vector&) const { return s; }
  Vector delta_scale() const { return Vector::Ones(3); }
};

/// -(a - 0.5)^2 per step.
struct QuadraticReward {
  Vector operator()(const Matrix&, const Vector& a, const Matrix&) const {
    return -(a.array() - 0.5).square().matrix();
  }
};

// Independent brute force: simulate every 0/1 sequence with the raw
// integrator and score with the indicator on the next state.
inline double brute_force_best(const envs::EnvParams& p, const std::array<double, 4>& q0, int h,
                        std::set<int>* best_first_actions) {
  double best = -1;
  std::vector<std::pair<double, int>> all;
  for (int code = 0; code < (1 << h); ++code) {
    std::array<double, 4> q = q0;
    double ret = 0;
    for (int k = 0; k < h; ++k) {
      q = envs::cartpole::integrate(q, p.force(), p.length(), (code >> k) & 1);
      ret += (std::abs(q[0]) < 2.4 && std::abs(q[2]) < 2.0 * std::numbers::pi * 14.0 / 360.0) ? 1.0 : 0.0;
    }
    all.push_back({ret, code & 1});
    best = std::max(best, ret);
  }
  for (auto [r, a] : all)
    if (r == best) best_first_actions->insert(a);
  return best;
}

}  // namespace cadm::testkit
