#pragma once

// Alternating data collection with the MPC controller and supervised updates
// of forward model, backward model, and encoder on sampled segments.

#include <algorithm>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <vector>

#include "cadm/envs.hpp"
#include "cadm/episode.hpp"
#include "cadm/errors.hpp"
#include "cadm/loss.hpp"
#include "cadm/model.hpp"
#include "cadm/nn.hpp"
#include "cadm/parallel.hpp"
#include "cadm/planner.hpp"
#include "cadm/rng.hpp"

namespace cadm {

struct SegmentHead {
  int episode;
  int t;
};

/// Every transition ever collected; nothing is evicted.
struct Dataset {
  std::vector<Episode> episodes;

  std::size_t transitions() const {
    std::size_t n = 0;
    for (const auto& e : episodes) n += static_cast<std::size_t>(e.length());
    return n;
  }

  /// Heads t whose future window [t, t+m] lies inside one episode.
  std::vector<SegmentHead> heads(int m) const {
    std::vector<SegmentHead> out;
    for (int e = 0; e < static_cast<int>(episodes.size()); ++e)
      for (int t = 0; t + m <= episodes[e].length(); ++t) out.push_back({e, t});
    return out;
  }

  void append(std::vector<Episode> eps) {
    for (auto& e : eps) episodes.push_back(std::move(e));
  }
};

/// Refits state, action and state-difference statistics on all data.
inline void fit_normalizers(CadmModel& model, const Dataset& data) {
  const std::size_t n = data.transitions();
  if (n == 0) throw DataError("normalizer_fit: empty dataset");
  const int sd = model.config().state_dim(), ad = model.config().action_dim();
  Matrix s(n, sd), a(n, ad), d(n, sd);
  Eigen::Index r = 0;
  for (const auto& ep : data.episodes)
    for (int t = 0; t < ep.length(); ++t, ++r) {
      s.row(r) = ep.states[t].transpose();
      a.row(r) = ep.actions[t].transpose();
      d.row(r) = (ep.states[t + 1] - ep.states[t]).transpose();
    }
  model.state_norm = Normalizer::fit(s);
  model.action_norm = Normalizer::fit(a);
  model.delta_norm = Normalizer::fit(d);
}

/// Runs one episode in the real environment, re-planning every step with the
/// context computed from the live history. A simulator fault ends the
/// episode early; transitions gathered so far are kept.
template <DynamicsModel M>
Episode run_episode(const M& model, const envs::EnvParams& params,
                    const planner::PlanConfig& plan_cfg, std::uint64_t seed,
                    bool random_actions = false) {
  Rng reset_rng = make_rng(seed, 0);
  Rng plan_rng = make_rng(seed, 1);
  Episode ep;
  ep.params = params;
  ep.seed = seed;
  envs::EnvState state = envs::env_reset(params, reset_rng);
  ep.states.push_back(envs::observe(params.env, state));
  const envs::ActionSpace space = envs::action_space(params.env);
  for (int t = 0; t < envs::kEpisodeLength; ++t) {
    double action;
    if (random_actions) {
      action = space.discrete ? static_cast<double>(uniform_index(plan_rng, 2))
                              : uniform(plan_rng, space.low, space.high);
    } else {
      const Vector ctx = model.context_at(ep, t);
      action = planner::plan(model, ctx, ep.states.back(), plan_cfg, plan_rng).action;
    }
    action = envs::legalize_action(params.env, action);
    envs::StepResult step;
    try {
      step = envs::env_step(params, state, action);
    } catch (const EnvFault&) {
      break;
    }
    state = step.next;
    ep.actions.push_back(Vector::Constant(1, action));
    ep.rewards.push_back(step.reward);
    ep.states.push_back(envs::observe(params.env, state));
    if (step.done) break;
  }
  return ep;
}

/// Trajectory j of collection iteration `iteration`: contexts drawn from the
/// given regime, streams keyed by (seed, iteration, j).
template <DynamicsModel M>
std::vector<Episode> collect_iteration(const M& model, envs::Regime regime,
                                       const planner::PlanConfig& plan_cfg, int n_traj,
                                       std::uint64_t seed, int iteration,
                                       bool random_actions = false) {
  std::vector<Episode> out(static_cast<std::size_t>(n_traj));
  const std::uint64_t it_seed = derive_seed(seed, 0x1000u + static_cast<std::uint64_t>(iteration));
  parallel_for(out.size(), [&](std::size_t j) {
    const std::uint64_t ep_seed = derive_seed(it_seed, j);
    Rng param_rng = make_rng(ep_seed, 2);
    const envs::EnvParams params = envs::sample_params(model.env(), regime, param_rng);
    out[j] = run_episode(model, params, plan_cfg, ep_seed, random_actions);
  });
  return out;
}

struct TrainConfig {
  ModelConfig model;
  int n_iterations = 20;
  int trajectories_per_iteration = 10;
  int epochs_per_iteration = 5;
  int batch_size = 128;
  double lr = 1e-3;
  int future_m = 10;
  double beta = 0.5;
  planner::PlanConfig plan;
  std::uint64_t seed = 0;
  bool random_warmup = false;
  envs::Regime train_regime = envs::Regime::train;

  /// Baselines always train the one-step forward objective.
  int effective_m() const { return model.kind == ModelKind::cadm ? future_m : 1; }
  double effective_beta() const { return model.kind == ModelKind::cadm ? beta : 0.0; }

  void validate() const {
    if (n_iterations < 1) throw ConfigError("n_iterations", "must be >= 1");
    if (trajectories_per_iteration < 1) throw ConfigError("trajectories_per_iteration", "must be >= 1");
    if (epochs_per_iteration < 1) throw ConfigError("epochs_per_iteration", "must be >= 1");
    if (batch_size < 1) throw ConfigError("batch_size", "must be >= 1");
    if (!(lr >= 0.0)) throw ConfigError("lr", "must be >= 0");
    if (future_m < 1) throw ConfigError("M", "must be >= 1");
    if (!(beta >= 0.0)) throw ConfigError("beta", "must be >= 0");
    if (model.kind == ModelKind::cadm && model.history_k < 1) throw ConfigError("K", "must be >= 1");
    if (model.latent_dim < 1) throw ConfigError("latent_dim", "must be >= 1");
    plan.validate();
    if (plan.method == planner::Method::cem && envs::action_space(model.env).discrete)
      throw ConfigError("plan_method", "cem needs a continuous action space; use rs for cartpole");
  }
};

/// Optimizer state that persists across iterations.
struct TrainerState {
  nn::AdamState forward;
  nn::AdamState backward;
  nn::AdamState encoder;
  std::size_t skipped_batches = 0;

  static TrainerState for_model(const CadmModel& m) {
    TrainerState s{nn::AdamState::like(m.forward_net), {}, {}, 0};
    if (m.config().has_backward()) s.backward = nn::AdamState::like(m.backward_net);
    if (m.config().has_encoder()) s.encoder = nn::AdamState::like(m.encoder);
    return s;
  }
};

/// Shuffled partition of [0, n) into ceil(n / batch) minibatches.
inline std::vector<std::vector<std::size_t>> epoch_batches(std::size_t n, std::size_t batch, Rng& rng) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::shuffle(idx.begin(), idx.end(), rng);
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t b = 0; b < n; b += batch)
    out.emplace_back(idx.begin() + b, idx.begin() + std::min(n, b + batch));
  return out;
}

/// Refits normalizers, then runs the configured number of epochs. Returns the
/// mean minibatch loss of each epoch.
inline std::vector<double> train_epochs(const Dataset& data, CadmModel& model, TrainerState& state,
                                        const TrainConfig& cfg, Rng& rng) {
  const int m = cfg.effective_m();
  const double beta = cfg.effective_beta();
  const std::vector<SegmentHead> heads = data.heads(m);
  if (heads.size() < static_cast<std::size_t>(cfg.batch_size))
    throw DataError("train_epochs: " + std::to_string(heads.size()) +
                    " segment heads, need at least batch size " + std::to_string(cfg.batch_size));
  fit_normalizers(model, data);

  const int k = model.config().history_k;
  std::vector<double> epoch_loss;
  std::vector<TrainingSegment> batch;
  for (int epoch = 0; epoch < cfg.epochs_per_iteration; ++epoch) {
    double sum = 0.0;
    std::size_t count = 0;
    for (const auto& idx : epoch_batches(heads.size(), static_cast<std::size_t>(cfg.batch_size), rng)) {
      batch.clear();
      for (std::size_t i : idx) {
        const SegmentHead& h = heads[i];
        batch.push_back(make_segment(data.episodes[h.episode], h.t, k, m));
      }
      LossResult res = cadm_loss(model, batch, beta);
      const bool finite = std::isfinite(res.loss) && res.grad_forward.all_finite() &&
                          (!model.config().has_backward() || res.grad_backward.all_finite()) &&
                          (!model.config().has_encoder() || res.grad_encoder.all_finite());
      if (!finite) {
        ++state.skipped_batches;
        continue;
      }
      // One backward pass; the shared gradient updates all three parameter sets.
      nn::adam_step(state.forward, model.forward_net, res.grad_forward, cfg.lr);
      if (model.config().has_backward())
        nn::adam_step(state.backward, model.backward_net, res.grad_backward, cfg.lr);
      if (model.config().has_encoder())
        nn::adam_step(state.encoder, model.encoder, res.grad_encoder, cfg.lr);
      sum += res.loss;
      ++count;
    }
    epoch_loss.push_back(count ? sum / static_cast<double>(count) : 0.0);
  }
  return epoch_loss;
}

struct MetricsRow {
  int iteration;
  std::size_t dataset_size;
  double mean_loss;
  double mean_return;
};

struct TrainingResult {
  CadmModel final_model;
  CadmModel best_model;  // the model that collected the highest-return batch
  double best_return = 0.0;
  int best_iteration = 0;
  std::vector<MetricsRow> metrics;
  Dataset dataset;
};

inline ModelConfig effective_model_config(const TrainConfig& cfg) {
  ModelConfig mc = cfg.model;
  if (mc.kind == ModelKind::vanilla) mc.history_k = 0;
  if (mc.kind == ModelKind::stacked) mc.history_k = kStackedHistory;
  return mc;
}

/// Called after every iteration with the row just appended.
using IterationCallback = std::function<void(const TrainingResult&, const CadmModel& current)>;

inline TrainingResult run_training(const TrainConfig& cfg, const IterationCallback& on_iteration = {}) {
  cfg.validate();
  TrainingResult res;
  CadmModel model = CadmModel::create(effective_model_config(cfg), derive_seed(cfg.seed, 7));
  TrainerState state = TrainerState::for_model(model);
  Rng train_rng = make_rng(cfg.seed, 9);
  res.best_return = -std::numeric_limits<double>::infinity();

  for (int it = 0; it < cfg.n_iterations; ++it) {
    const bool random = cfg.random_warmup && it == 0;
    std::vector<Episode> fresh = collect_iteration(model, cfg.train_regime, cfg.plan,
                                                   cfg.trajectories_per_iteration, cfg.seed, it, random);
    double ret = 0.0;
    for (const auto& e : fresh) ret += e.total_return();
    ret /= static_cast<double>(fresh.size());
    if (ret >= res.best_return) {
      res.best_return = ret;
      res.best_iteration = it + 1;
      res.best_model = model;
    }
    res.dataset.append(std::move(fresh));

    // Early iterations can hold fewer heads than one batch (short CartPole
    // episodes); shrink the batch rather than skip the update.
    TrainConfig it_cfg = cfg;
    const std::size_t n_heads = res.dataset.heads(cfg.effective_m()).size();
    double mean_loss = std::numeric_limits<double>::quiet_NaN();
    if (n_heads > 0) {
      it_cfg.batch_size = static_cast<int>(std::min<std::size_t>(n_heads, cfg.batch_size));
      const std::vector<double> losses = train_epochs(res.dataset, model, state, it_cfg, train_rng);
      mean_loss = std::accumulate(losses.begin(), losses.end(), 0.0) / static_cast<double>(losses.size());
    }
    res.metrics.push_back({it + 1, res.dataset.transitions(), mean_loss, ret});
    res.final_model = model;
    if (on_iteration) on_iteration(res, model);
  }
  return res;
}

}  // namespace cadm
