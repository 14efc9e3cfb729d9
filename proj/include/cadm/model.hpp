#pragma once

// Context-aware dynamics model: a context encoder over the recent
// (state-difference, action) history plus context-conditioned forward and
// backward one-step models. The Vanilla and Stacked baselines share the same
// container with the encoder (and backward model) absent.

#include <Eigen/Dense>

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "cadm/envs.hpp"
#include "cadm/episode.hpp"
#include "cadm/errors.hpp"
#include "cadm/nn.hpp"
#include "cadm/normalizer.hpp"
#include "cadm/rng.hpp"

namespace cadm {

/// K most recent (delta_s, a) pairs before some time t, oldest first and
/// flattened. Slots before the episode start are zero padding; `n_valid`
/// counts the real pairs, which occupy the tail.
struct HistorySegment {
  int k = 0;
  int state_dim = 0;
  int action_dim = 0;
  int n_valid = 0;
  Vector values;  // k * (state_dim + action_dim), raw units

  int pair_width() const { return state_dim + action_dim; }
};

inline HistorySegment build_history(const Episode& ep, int t, int k) {
  if (t < 0 || t > ep.length()) throw ContractError("build_history: t out of range");
  if (k < 0) throw ContractError("build_history: negative K");
  if (static_cast<int>(ep.states.size()) <= t)
    throw DataError("build_history: episode has no state at t");
  HistorySegment h;
  h.k = k;
  h.state_dim = ep.states.empty() ? 0 : static_cast<int>(ep.states[0].size());
  h.action_dim = ep.actions.empty() ? 1 : static_cast<int>(ep.actions[0].size());
  h.values = Vector::Zero(static_cast<Eigen::Index>(k) * h.pair_width());
  for (int slot = 0; slot < k; ++slot) {
    const int i = t - k + slot;
    if (i < 0) continue;
    ++h.n_valid;
    const Eigen::Index off = static_cast<Eigen::Index>(slot) * h.pair_width();
    h.values.segment(off, h.state_dim) = ep.states[i + 1] - ep.states[i];
    h.values.segment(off + h.state_dim, h.action_dim) = ep.actions[i];
  }
  return h;
}

enum class ModelKind { cadm, vanilla, stacked };

inline std::string_view to_string(ModelKind k) {
  switch (k) {
    case ModelKind::cadm: return "cadm";
    case ModelKind::vanilla: return "vanilla";
    case ModelKind::stacked: return "stacked";
  }
  return "?";
}

inline ModelKind parse_model_kind(std::string_view s) {
  if (s == "cadm") return ModelKind::cadm;
  if (s == "vanilla") return ModelKind::vanilla;
  if (s == "stacked") return ModelKind::stacked;
  throw ConfigError("kind", "unknown model kind '" + std::string(s) + "'");
}

inline constexpr int kStackedHistory = 10;

struct ModelConfig {
  ModelKind kind = ModelKind::cadm;
  envs::EnvId env = envs::EnvId::cartpole;
  int history_k = 10;  // K for cadm, 10 for stacked, 0 for vanilla
  int latent_dim = 10;
  std::vector<int> encoder_hidden{64, 64, 64};
  std::vector<int> dynamics_hidden{200, 200, 200, 200};
  nn::Activation activation = nn::Activation::swish;
  int state_dim_override = 0;  // nonzero only for synthetic problems in tests

  int state_dim() const { return state_dim_override > 0 ? state_dim_override : envs::state_dim(env); }
  int action_dim() const { return envs::action_dim(env); }
  int pair_width() const { return state_dim() + action_dim(); }
  int encoder_input_dim() const { return history_k * pair_width(); }

  int context_dim() const {
    switch (kind) {
      case ModelKind::cadm: return latent_dim;
      case ModelKind::stacked: return encoder_input_dim();
      case ModelKind::vanilla: return 0;
    }
    return 0;
  }
  int dynamics_input_dim() const { return pair_width() + context_dim(); }
  bool has_encoder() const { return kind == ModelKind::cadm; }
  bool has_backward() const { return kind == ModelKind::cadm; }

  /// Baseline configs carry their fixed history length.
  static ModelConfig baseline(ModelKind kind, envs::EnvId env, std::vector<int> dynamics_hidden,
                              nn::Activation act) {
    ModelConfig c;
    c.kind = kind;
    c.env = env;
    c.history_k = kind == ModelKind::stacked ? kStackedHistory : 0;
    c.dynamics_hidden = std::move(dynamics_hidden);
    c.activation = act;
    return c;
  }
};

class CadmModel {
 public:
  CadmModel() = default;

  /// Fresh model with Glorot weights; sub-network seeds derived from `seed`.
  static CadmModel create(const ModelConfig& cfg, std::uint64_t seed) {
    CadmModel m;
    m.config_ = cfg;
    const int sd = cfg.state_dim();
    m.state_norm = Normalizer::identity(sd);
    m.action_norm = Normalizer::identity(cfg.action_dim());
    m.delta_norm = Normalizer::identity(sd);
    m.forward_net = nn::mlp_init(nn::MlpSpec::make(cfg.dynamics_input_dim(), cfg.dynamics_hidden, sd,
                                                   cfg.activation),
                                 derive_seed(seed, 1));
    if (cfg.has_backward())
      m.backward_net = nn::mlp_init(nn::MlpSpec::make(cfg.dynamics_input_dim(), cfg.dynamics_hidden,
                                                      sd, cfg.activation),
                                    derive_seed(seed, 2));
    if (cfg.has_encoder())
      m.encoder = nn::mlp_init(nn::MlpSpec::make(cfg.encoder_input_dim(), cfg.encoder_hidden,
                                                 cfg.latent_dim, cfg.activation),
                               derive_seed(seed, 3));
    return m;
  }

  const ModelConfig& config() const { return config_; }
  envs::EnvId env() const { return config_.env; }

  Normalizer state_norm;
  Normalizer action_norm;
  Normalizer delta_norm;  // forward target s' - s; backward target is its negation
  nn::MlpParams forward_net;
  nn::MlpParams backward_net;  // empty layers unless kind == cadm
  nn::MlpParams encoder;       // empty layers unless kind == cadm

  /// Normalized encoder/stacked input for one history. Padding stays zero.
  Vector history_features(const HistorySegment& h) const {
    if (h.k != config_.history_k || h.state_dim != config_.state_dim() ||
        h.action_dim != config_.action_dim())
      throw ShapeError("history segment shape does not match model (K=" + std::to_string(h.k) +
                       ", expected " + std::to_string(config_.history_k) + ")");
    Vector out = Vector::Zero(h.values.size());
    const int w = h.pair_width();
    for (int slot = h.k - h.n_valid; slot < h.k; ++slot) {
      const Eigen::Index off = static_cast<Eigen::Index>(slot) * w;
      out.segment(off, h.state_dim) = delta_norm.apply(h.values.segment(off, h.state_dim));
      out.segment(off + h.state_dim, h.action_dim) =
          action_norm.apply(h.values.segment(off + h.state_dim, h.action_dim));
    }
    return out;
  }

  /// Context vector fed to the dynamics models: z for CaDM, the normalized
  /// window for Stacked, empty for Vanilla.
  Vector context(const HistorySegment& h) const {
    switch (config_.kind) {
      case ModelKind::cadm: return nn::mlp_predict(encoder, history_features(h).transpose()).row(0).transpose();
      case ModelKind::stacked: return history_features(h);
      case ModelKind::vanilla: return Vector();
    }
    return Vector();
  }

  Vector context_at(const Episode& ep, int t) const {
    if (config_.history_k == 0) return Vector();
    return context(build_history(ep, t, config_.history_k));
  }

  /// Dynamics-net input rows [norm(s), norm(a), context].
  Matrix dynamics_input(const Matrix& states, const Matrix& actions, const Vector& ctx) const {
    const Eigen::Index n = states.rows();
    const int sd = config_.state_dim(), ad = config_.action_dim(), cd = config_.context_dim();
    if (states.cols() != sd || actions.cols() != ad || actions.rows() != n || ctx.size() != cd)
      throw ShapeError("dynamics input shape mismatch");
    Matrix x(n, sd + ad + cd);
    x.leftCols(sd) = state_norm.apply_rows(states);
    x.middleCols(sd, ad) = action_norm.apply_rows(actions);
    if (cd > 0) x.rightCols(cd) = ctx.transpose().replicate(n, 1);
    return x;
  }

  /// Batched forward model: each row of `states`/`actions` maps to a next state.
  Matrix predict(const Matrix& states, const Matrix& actions, const Vector& ctx) const {
    const Matrix out = nn::mlp_predict(forward_net, dynamics_input(states, actions, ctx));
    return states + delta_norm.invert_rows(out);
  }

  Matrix predict_backward(const Matrix& next_states, const Matrix& actions, const Vector& ctx) const {
    if (!config_.has_backward()) throw ContractError("model has no backward dynamics");
    const Matrix out = nn::mlp_predict(backward_net, dynamics_input(next_states, actions, ctx));
    Normalizer back{-delta_norm.mean, delta_norm.std};
    return next_states + back.invert_rows(out);
  }

  /// Std of forward targets, the scale used for normalized prediction error.
  const Vector& delta_scale() const { return delta_norm.std; }

 private:
  ModelConfig config_;
};

using LatentContext = Vector;

/// z = g(history; phi).
inline LatentContext encode_context(const CadmModel& model, const HistorySegment& h) {
  if (!model.config().has_encoder()) throw ContractError("encode_context: model has no encoder");
  return model.context(h);
}

inline Vector forward_predict(const CadmModel& model, const Vector& s, const Vector& a,
                              const Vector& z) {
  return model.predict(s.transpose(), a.transpose(), z).row(0).transpose();
}

inline Vector backward_predict(const CadmModel& model, const Vector& s_next, const Vector& a,
                               const Vector& z) {
  return model.predict_backward(s_next.transpose(), a.transpose(), z).row(0).transpose();
}

/// Ground-truth simulator behind the model interface. Its "context" is the
/// true parameter vector read from the episode metadata.
class OracleModel {
 public:
  explicit OracleModel(envs::EnvId env) : env_(env) {}

  envs::EnvId env() const { return env_; }

  Vector context_at(const Episode& ep, int /*t*/) const {
    return Eigen::Vector2d(ep.params.values[0], ep.params.values[1]);
  }

  Matrix predict(const Matrix& states, const Matrix& actions, const Vector& ctx) const {
    const envs::EnvParams p{env_, {ctx[0], ctx[1]}};
    Matrix out(states.rows(), states.cols());
    for (Eigen::Index i = 0; i < states.rows(); ++i)
      out.row(i) = envs::step_observation(p, states.row(i).transpose(), actions(i, 0)).transpose();
    return out;
  }

  Vector delta_scale() const { return Vector::Ones(envs::state_dim(env_)); }

 private:
  envs::EnvId env_;
};

template <typename M>
concept DynamicsModel = requires(const M& m, const Episode& ep, const Matrix& s, const Vector& c) {
  { m.env() } -> std::convertible_to<envs::EnvId>;
  { m.context_at(ep, 0) } -> std::convertible_to<Vector>;
  { m.predict(s, s, c) } -> std::convertible_to<Matrix>;
  { m.delta_scale() } -> std::convertible_to<Vector>;
};

static_assert(DynamicsModel<CadmModel>);
static_assert(DynamicsModel<OracleModel>);

}  // namespace cadm
