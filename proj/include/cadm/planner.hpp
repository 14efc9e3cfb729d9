#pragma once

// Model-predictive control over a learned (or oracle) forward model.
// Candidate action sequences are scored by chaining the model's one-step
// predictions from the current state with the context held fixed, and summing
// the known reward. Only the first action is executed; callers re-plan every
// step.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "cadm/envs.hpp"
#include "cadm/errors.hpp"
#include "cadm/model.hpp"
#include "cadm/parallel.hpp"
#include "cadm/rng.hpp"

namespace cadm::planner {

enum class Method { rs, cem };

inline std::string_view to_string(Method m) { return m == Method::rs ? "rs" : "cem"; }

inline Method parse_method(std::string_view s) {
  if (s == "rs") return Method::rs;
  if (s == "cem") return Method::cem;
  throw ConfigError("plan_method", "unknown planning method '" + std::string(s) + "'");
}

struct PlanConfig {
  Method method = Method::rs;
  int horizon = 30;
  int n_candidates = 1000;
  int cem_iterations = 5;
  double elite_fraction = 0.1;
  double cem_alpha = 0.1;
  double std_floor = 1e-6;

  void validate() const {
    if (horizon < 1) throw ConfigError("horizon", "must be >= 1");
    if (n_candidates < 2) throw ConfigError("n_candidates", "must be >= 2");
    if (!(elite_fraction > 0.0 && elite_fraction <= 0.5))
      throw ConfigError("elite_fraction", "must lie in (0, 0.5]");
    if (cem_iterations < 1) throw ConfigError("cem_iterations", "must be >= 1");
    if (!(cem_alpha >= 0.0 && cem_alpha < 1.0)) throw ConfigError("cem_alpha", "must lie in [0, 1)");
  }

  bool operator==(const PlanConfig&) const = default;
};

/// Batched known reward: one value per row of (s, a, s').
struct EnvReward {
  envs::EnvId env;
  Vector operator()(const Matrix& s, const Vector& a, const Matrix& s_next) const {
    Vector r(s.rows());
    for (Eigen::Index i = 0; i < s.rows(); ++i)
      r[i] = envs::reward_fn(env, s.row(i), a[i], s_next.row(i));
    return r;
  }
};

template <typename R>
concept BatchReward = requires(const R& r, const Matrix& m, const Vector& v) {
  { r(m, v, m) } -> std::convertible_to<Vector>;
};

struct Rollout {
  std::vector<Vector> states;   // H + 1
  std::vector<double> actions;  // H
  double reward = 0.0;
};

/// Chains the model on its own predictions. A non-finite prediction truncates
/// the rollout and sets the reward to -inf.
template <DynamicsModel M, BatchReward R>
Rollout rollout_model(const M& model, const Vector& ctx, const Vector& s0,
                      std::span<const double> actions, const R& reward) {
  Rollout out;
  out.states.push_back(s0);
  Matrix s = s0.transpose();
  for (double a_k : actions) {
    Matrix a(1, 1);
    a(0, 0) = a_k;
    const Matrix next = model.predict(s, a, ctx);
    out.actions.push_back(a_k);
    if (!next.allFinite()) {
      out.reward = -std::numeric_limits<double>::infinity();
      return out;
    }
    out.reward += reward(s, a.col(0), next)[0];
    out.states.push_back(next.row(0).transpose());
    s = next;
  }
  return out;
}

template <DynamicsModel M>
Rollout rollout_model(const M& model, const Vector& ctx, const Vector& s0,
                      std::span<const double> actions) {
  return rollout_model(model, ctx, s0, actions, EnvReward{model.env()});
}

inline constexpr Eigen::Index kCandidateChunk = 256;

/// Cumulative model-predicted reward of every row of `candidates` (N x H).
/// Work is split into fixed-size chunks, so results do not depend on the
/// number of workers.
template <DynamicsModel M, BatchReward R>
Vector evaluate_candidates(const M& model, const Vector& ctx, const Vector& s0,
                           const Matrix& candidates, const R& reward) {
  const Eigen::Index n = candidates.rows();
  const Eigen::Index horizon = candidates.cols();
  Vector returns = Vector::Zero(n);
  const std::size_t chunks = static_cast<std::size_t>((n + kCandidateChunk - 1) / kCandidateChunk);
  parallel_for(chunks, [&](std::size_t c) {
    const Eigen::Index begin = static_cast<Eigen::Index>(c) * kCandidateChunk;
    const Eigen::Index rows = std::min(kCandidateChunk, n - begin);
    Matrix s = s0.transpose().replicate(rows, 1);
    Vector total = Vector::Zero(rows);
    std::vector<bool> dead(static_cast<std::size_t>(rows), false);
    for (Eigen::Index k = 0; k < horizon; ++k) {
      const Matrix a = candidates.block(begin, k, rows, 1);
      Matrix next = model.predict(s, a, ctx);
      for (Eigen::Index i = 0; i < rows; ++i) {
        if (!next.row(i).allFinite()) {
          dead[i] = true;
          next.row(i) = s.row(i);
        }
      }
      total += reward(s, a.col(0), next);
      s = std::move(next);
    }
    for (Eigen::Index i = 0; i < rows; ++i)
      returns[begin + i] = dead[i] ? -std::numeric_limits<double>::infinity() : total[i];
  });
  return returns;
}

/// Index of the best return; ties go to the lowest index.
inline Eigen::Index argmax_first(const Vector& v) {
  Eigen::Index best = 0;
  for (Eigen::Index i = 1; i < v.size(); ++i)
    if (v[i] > v[best]) best = i;
  return best;
}

struct PlanResult {
  double action = 0.0;
  double predicted_return = 0.0;
};

/// Uniformly sampled action sequences; candidate j draws from a stream keyed
/// by (plan seed, j).
inline Matrix sample_uniform_candidates(envs::EnvId env, int n, int horizon, std::uint64_t seed) {
  const envs::ActionSpace space = envs::action_space(env);
  Matrix cand(n, horizon);
  for (int j = 0; j < n; ++j) {
    StreamRng rng(seed, static_cast<std::uint64_t>(j));
    for (int k = 0; k < horizon; ++k)
      cand(j, k) = space.discrete ? static_cast<double>(uniform_index(rng, 2))
                                  : uniform(rng, space.low, space.high);
  }
  return cand;
}

/// Random shooting against an explicit candidate set.
template <DynamicsModel M, BatchReward R>
PlanResult select_best_candidate(const M& model, const Vector& ctx, const Vector& s0,
                                 const Matrix& candidates, const R& reward) {
  const Vector returns = evaluate_candidates(model, ctx, s0, candidates, reward);
  const Eigen::Index best = argmax_first(returns);
  return {candidates(best, 0), returns[best]};
}

template <DynamicsModel M, BatchReward R>
PlanResult plan_rs(const M& model, const Vector& ctx, const Vector& s0, const PlanConfig& cfg,
                   Rng& rng, const R& reward) {
  const std::uint64_t seed = rng();
  const Matrix cand = sample_uniform_candidates(model.env(), cfg.n_candidates, cfg.horizon, seed);
  return select_best_candidate(model, ctx, s0, cand, reward);
}

/// Per-iteration diagnostics of a CEM run.
struct CemTrace {
  std::vector<double> mean_candidate_return;
  std::vector<double> min_elite_return;
  std::vector<double> max_non_elite_return;
  double final_mean_return = 0.0;
};

template <DynamicsModel M, BatchReward R>
PlanResult plan_cem(const M& model, const Vector& ctx, const Vector& s0, const PlanConfig& cfg,
                    Rng& rng, const R& reward, CemTrace* trace = nullptr) {
  const envs::ActionSpace space = envs::action_space(model.env());
  if (space.discrete) throw ContractError("plan_cem: requires a continuous action space");
  const int h = cfg.horizon, n = cfg.n_candidates;
  const int n_elite = std::max(1, static_cast<int>(std::ceil(cfg.elite_fraction * n)));
  const std::uint64_t seed = rng();

  Vector mean = Vector::Constant(h, 0.5 * (space.low + space.high));
  Vector stdev = Vector::Constant(h, 0.5 * (space.high - space.low));
  Matrix cand(n, h);
  std::vector<int> order(n);
  for (int it = 0; it < cfg.cem_iterations; ++it) {
    const std::uint64_t it_seed = derive_seed(seed, static_cast<std::uint64_t>(it));
    for (int j = 0; j < n; ++j) {
      StreamRng g(it_seed, static_cast<std::uint64_t>(j));
      std::normal_distribution<double> normal(0.0, 1.0);
      for (int k = 0; k < h; ++k)
        cand(j, k) = std::clamp(mean[k] + stdev[k] * normal(g), space.low, space.high);
    }
    const Vector returns = evaluate_candidates(model, ctx, s0, cand, reward);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](int a, int b) { return returns[a] > returns[b]; });

    Vector elite_mean = Vector::Zero(h);
    for (int e = 0; e < n_elite; ++e) elite_mean += cand.row(order[e]).transpose();
    elite_mean /= n_elite;
    Vector elite_var = Vector::Zero(h);
    for (int e = 0; e < n_elite; ++e)
      elite_var += (cand.row(order[e]).transpose() - elite_mean).cwiseAbs2();
    elite_var /= n_elite;

    mean = cfg.cem_alpha * mean + (1.0 - cfg.cem_alpha) * elite_mean;
    stdev = (cfg.cem_alpha * stdev + (1.0 - cfg.cem_alpha) * elite_var.cwiseSqrt())
                .cwiseMax(cfg.std_floor);

    if (trace) {
      trace->mean_candidate_return.push_back(returns.mean());
      trace->min_elite_return.push_back(returns[order[n_elite - 1]]);
      trace->max_non_elite_return.push_back(
          n_elite < n ? returns[order[n_elite]] : -std::numeric_limits<double>::infinity());
    }
  }
  const double final_return =
      evaluate_candidates(model, ctx, s0, Matrix(mean.transpose()), reward)[0];
  if (trace) trace->final_mean_return = final_return;
  return {std::clamp(mean[0], space.low, space.high), final_return};
}

/// Dispatches on cfg.method using the environment's known reward.
template <DynamicsModel M>
PlanResult plan(const M& model, const Vector& ctx, const Vector& s0, const PlanConfig& cfg, Rng& rng) {
  const EnvReward reward{model.env()};
  if (cfg.method == Method::cem) return plan_cem(model, ctx, s0, cfg, rng, reward);
  return plan_rs(model, ctx, s0, cfg, rng, reward);
}

}  // namespace cadm::planner
