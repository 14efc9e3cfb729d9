#pragma once

// Generalization measurements on frozen models: per-regime returns,
// one-step prediction error along a parameter axis, open-loop prediction
// traces, latent export, and a power-iteration PCA for the embeddings.

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "cadm/envs.hpp"
#include "cadm/episode.hpp"
#include "cadm/errors.hpp"
#include "cadm/model.hpp"
#include "cadm/parallel.hpp"
#include "cadm/planner.hpp"
#include "cadm/rng.hpp"
#include "cadm/trainer.hpp"

namespace cadm::eval {

struct EvalReport {
  envs::EnvId env;
  envs::Regime regime;
  std::uint64_t seed = 0;
  std::vector<double> returns;
  std::vector<envs::EnvParams> params;

  std::size_t n_episodes() const { return returns.size(); }
  double mean() const {
    return returns.empty() ? 0.0
                           : std::accumulate(returns.begin(), returns.end(), 0.0) /
                                 static_cast<double>(returns.size());
  }
  /// Population standard deviation.
  double stddev() const {
    if (returns.empty()) return 0.0;
    const double mu = mean();
    double ss = 0.0;
    for (double r : returns) ss += (r - mu) * (r - mu);
    return std::sqrt(ss / static_cast<double>(returns.size()));
  }
};

/// Episode j samples its context from the regime grid with a stream keyed by
/// (seed, j), so the reduction is independent of worker count.
template <DynamicsModel M>
EvalReport evaluate_returns(const M& model, envs::EnvId env, envs::Regime regime, int n_episodes,
                            const planner::PlanConfig& plan_cfg, std::uint64_t seed) {
  if (model.env() != env)
    throw ConfigError("env", "model was trained on " + std::string(envs::to_string(model.env())) +
                                 ", not " + std::string(envs::to_string(env)));
  EvalReport rep{env, regime, seed, std::vector<double>(n_episodes), std::vector<envs::EnvParams>(n_episodes)};
  parallel_for(static_cast<std::size_t>(n_episodes), [&](std::size_t j) {
    const std::uint64_t ep_seed = derive_seed(seed, 0x2000u + j);
    Rng param_rng = make_rng(ep_seed, 2);
    rep.params[j] = envs::sample_params(env, regime, param_rng);
    rep.returns[j] = run_episode(model, rep.params[j], plan_cfg, ep_seed).total_return();
  });
  return rep;
}

struct SweepRow {
  std::string param;
  double value = 0.0;
  double mse = 0.0;  // mean over transitions and dims of squared normalized error
  std::size_t n = 0;
};

/// Mean squared one-step error of `model` on the transitions of `episodes`,
/// measured in units of the model's target scale, using live-history contexts.
template <DynamicsModel M>
std::pair<double, std::size_t> one_step_error(const M& model, const std::vector<Episode>& episodes) {
  const Vector scale = model.delta_scale();
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& ep : episodes) {
    for (int t = 0; t < ep.length(); ++t) {
      const Vector ctx = model.context_at(ep, t);
      const Matrix pred = model.predict(ep.states[t].transpose(), ep.actions[t].transpose(), ctx);
      const Vector err = (pred.row(0).transpose() - ep.states[t + 1]).cwiseQuotient(scale);
      sum += err.squaredNorm() / static_cast<double>(err.size());
      ++n;
    }
  }
  return {n ? sum / static_cast<double>(n) : 0.0, n};
}

/// Varies one parameter over `grid` with the other at its training midpoint.
template <DynamicsModel M>
std::vector<SweepRow> prediction_error_sweep(const M& model, const std::string& param,
                                             const std::vector<double>& grid, int n_rollouts,
                                             const planner::PlanConfig& plan_cfg, std::uint64_t seed) {
  const int axis = envs::axis_index(model.env(), param);
  std::vector<SweepRow> rows(grid.size());
  for (std::size_t g = 0; g < grid.size(); ++g) {
    envs::EnvParams p = envs::training_midpoint(model.env());
    p.values[axis] = grid[g];
    std::vector<Episode> eps(static_cast<std::size_t>(n_rollouts));
    parallel_for(eps.size(), [&](std::size_t j) {
      eps[j] = run_episode(model, p, plan_cfg, derive_seed(seed, g * 1000003u + j));
    });
    const auto [mse, n] = one_step_error(model, eps);
    rows[g] = {param, grid[g], mse, n};
  }
  return rows;
}

struct TraceRow {
  int t;
  Vector truth;
  Vector predicted;
};

/// Collects one planner-driven episode in `params`, takes the context from
/// the `warmup` steps before t0 = warmup, then predicts open-loop from s_t0
/// with ground-truth actions. Row 0 is the aligned start state.
template <DynamicsModel M>
std::vector<TraceRow> predict_trace(const M& model, const envs::EnvParams& params, int warmup,
                                    int horizon, const planner::PlanConfig& plan_cfg,
                                    std::uint64_t seed) {
  const Episode ep = run_episode(model, params, plan_cfg, seed);
  if (ep.length() < warmup + horizon)
    throw DataError("predict_trace: episode length " + std::to_string(ep.length()) + " < warmup + horizon");
  const Vector ctx = model.context_at(ep, warmup);
  std::vector<TraceRow> rows;
  Vector s = ep.states[warmup];
  for (int k = 0; k < horizon; ++k) {
    rows.push_back({k, ep.states[warmup + k], s});
    s = model.predict(s.transpose(), ep.actions[warmup + k].transpose(), ctx).row(0).transpose();
  }
  return rows;
}

struct LatentRow {
  envs::EnvParams params;
  double param_value = 0.0;
  int episode = 0;
  int t = 0;
  Vector z;
  Vector raw_window;  // K raw (s, a) pairs ending at t-1, for probe comparison
};

/// For each grid value collects planner-driven episodes and emits the latent
/// of every full-K window until `n_segments_per_param` rows exist.
inline std::vector<LatentRow> export_latents(const CadmModel& model, const std::string& param,
                                             const std::vector<double>& grid,
                                             int n_segments_per_param,
                                             const planner::PlanConfig& plan_cfg, std::uint64_t seed) {
  if (!model.config().has_encoder()) throw ContractError("export_latents: model has no encoder");
  const int axis = envs::axis_index(model.env(), param);
  const int k = model.config().history_k;
  const int sd = model.config().state_dim(), ad = model.config().action_dim();
  constexpr int kMaxEpisodes = 200;
  std::vector<LatentRow> rows;
  for (std::size_t g = 0; g < grid.size(); ++g) {
    envs::EnvParams p = envs::training_midpoint(model.env());
    p.values[axis] = grid[g];
    int produced = 0;
    for (int e = 0; produced < n_segments_per_param; ++e) {
      if (e >= kMaxEpisodes) throw DataError("export_latents: could not gather enough full windows");
      const Episode ep = run_episode(model, p, plan_cfg, derive_seed(seed, g * 1000003u + e));
      for (int t = k; t <= ep.length() && produced < n_segments_per_param; ++t, ++produced) {
        LatentRow row{p, grid[g], e, t, encode_context(model, build_history(ep, t, k)),
                      Vector(k * (sd + ad))};
        for (int i = 0; i < k; ++i) {
          row.raw_window.segment(i * (sd + ad), sd) = ep.states[t - k + i];
          row.raw_window.segment(i * (sd + ad) + sd, ad) = ep.actions[t - k + i];
        }
        rows.push_back(std::move(row));
      }
    }
  }
  return rows;
}

struct PcaResult {
  Matrix projections;              // N x 2
  std::array<Vector, 2> components;
  std::array<double, 2> variances;  // eigenvalues of the sample covariance
};

/// Top-2 principal directions by power iteration with deflation.
/// Components are orthonormal; each is signed so its largest-magnitude entry
/// is positive.
inline PcaResult pca_top2(const Matrix& points, double tol = 1e-10, int max_iter = 1000) {
  if (points.rows() < 3) throw ShapeError("pca_top2: need at least 3 points");
  const Eigen::Index d = points.cols();
  const Vector mean = points.colwise().mean().transpose();
  const Matrix centered = points.rowwise() - mean.transpose();
  Matrix cov = centered.transpose() * centered / static_cast<double>(points.rows() - 1);
  if (cov.cwiseAbs().maxCoeff() == 0.0) throw DegenerateDataError("pca_top2: data has zero variance");

  PcaResult res;
  StreamRng g(0x5eed, 0);
  for (int c = 0; c < 2; ++c) {
    Vector v(d);
    for (Eigen::Index i = 0; i < d; ++i) v[i] = uniform(g, -1.0, 1.0);
    auto orthogonalize = [&](Vector& x) {
      if (c == 1) x -= res.components[0].dot(x) * res.components[0];
    };
    orthogonalize(v);
    v.normalize();
    for (int it = 0; it < max_iter; ++it) {
      Vector w = cov * v;
      orthogonalize(w);
      const double norm = w.norm();
      if (norm < 1e-300) break;  // remaining spectrum is zero; any orthogonal v will do
      w /= norm;
      const double delta = std::min((w - v).norm(), (w + v).norm());
      v = w;
      if (delta < tol) break;
    }
    Eigen::Index arg;
    v.cwiseAbs().maxCoeff(&arg);
    if (v[arg] < 0) v = -v;
    res.components[c] = v;
    res.variances[c] = v.dot(cov * v);
    cov -= res.variances[c] * v * v.transpose();
  }
  res.projections.resize(points.rows(), 2);
  res.projections.col(0) = centered * res.components[0];
  res.projections.col(1) = centered * res.components[1];
  return res;
}

/// Closed-form least squares y ~ [X, 1] fitted on the training rows;
/// returns R^2 on the held-out rows.
inline double linear_probe_r2(const Matrix& x_train, const Vector& y_train, const Matrix& x_test,
                              const Vector& y_test) {
  auto with_bias = [](const Matrix& x) {
    Matrix a(x.rows(), x.cols() + 1);
    a << x, Vector::Ones(x.rows());
    return a;
  };
  const Vector w = with_bias(x_train).completeOrthogonalDecomposition().solve(y_train);
  const Vector pred = with_bias(x_test) * w;
  const double ss_res = (y_test - pred).squaredNorm();
  const double ss_tot = (y_test.array() - y_test.mean()).square().sum();
  return ss_tot > 0.0 ? 1.0 - ss_res / ss_tot : 0.0;
}

}  // namespace cadm::eval
