#pragma once

// Future-step prediction loss: for each sampled segment, one context z is
// computed from the K-step history at the segment head and shared by M
// teacher-forced forward predictions and (beta-weighted) M backward
// predictions. Targets are normalized state differences; unit-variance
// Gaussians make the negative log-likelihood a halved squared error.

#include <Eigen/Dense>

#include <span>
#include <vector>

#include "cadm/episode.hpp"
#include "cadm/errors.hpp"
#include "cadm/model.hpp"
#include "cadm/nn.hpp"

namespace cadm {

/// Ground-truth states s_t..s_{t+M} and actions a_t..a_{t+M-1}.
struct FutureSegment {
  std::vector<Vector> states;
  std::vector<Vector> actions;

  int steps() const { return static_cast<int>(actions.size()); }
};

struct TrainingSegment {
  FutureSegment future;
  HistorySegment history;
};

/// Segment headed at t; the future window must fit inside the episode.
inline TrainingSegment make_segment(const Episode& ep, int t, int k, int m) {
  if (m < 1) throw DataError("make_segment: M must be >= 1");
  if (t < 0 || t + m > ep.length())
    throw DataError("make_segment: future window [" + std::to_string(t) + ", " +
                    std::to_string(t + m) + "] crosses the episode boundary (length " +
                    std::to_string(ep.length()) + ")");
  TrainingSegment seg;
  seg.future.states.assign(ep.states.begin() + t, ep.states.begin() + t + m + 1);
  seg.future.actions.assign(ep.actions.begin() + t, ep.actions.begin() + t + m);
  seg.history = build_history(ep, t, k);
  return seg;
}

struct LossResult {
  double loss = 0.0;
  double forward_term = 0.0;
  double backward_term = 0.0;
  nn::MlpParams grad_forward;
  nn::MlpParams grad_backward;  // empty unless the model has a backward net
  nn::MlpParams grad_encoder;   // empty unless the model has an encoder
};

inline LossResult cadm_loss(const CadmModel& model, std::span<const TrainingSegment> batch,
                            double beta) {
  if (batch.empty()) throw DataError("cadm_loss: empty batch");
  if (beta < 0.0) throw ContractError("cadm_loss: beta must be >= 0");
  const ModelConfig& cfg = model.config();
  const int sd = cfg.state_dim(), ad = cfg.action_dim(), cd = cfg.context_dim();
  const int m = batch.front().future.steps();
  if (m < 1) throw DataError("cadm_loss: M must be >= 1");
  const Eigen::Index nb = static_cast<Eigen::Index>(batch.size());
  const Eigen::Index rows = nb * m;

  for (const auto& seg : batch) {
    if (seg.future.steps() != m || static_cast<int>(seg.future.states.size()) != m + 1)
      throw DataError("cadm_loss: malformed or ragged future segment");
  }

  // Context per segment.
  Matrix ctx(nb, cd);
  nn::ForwardResult enc;
  if (cd > 0) {
    Matrix features(nb, cfg.encoder_input_dim());
    for (Eigen::Index b = 0; b < nb; ++b)
      features.row(b) = model.history_features(batch[b].history).transpose();
    if (cfg.has_encoder()) {
      enc = nn::mlp_forward(model.encoder, features);
      ctx = enc.output;
    } else {
      ctx = features;
    }
  }

  Matrix s_cur(rows, sd), s_next(rows, sd), act(rows, ad);
  for (Eigen::Index b = 0; b < nb; ++b) {
    const FutureSegment& f = batch[b].future;
    for (int i = 0; i < m; ++i) {
      const Eigen::Index r = b * m + i;
      s_cur.row(r) = f.states[i].transpose();
      s_next.row(r) = f.states[i + 1].transpose();
      act.row(r) = f.actions[i].transpose();
    }
  }
  Matrix ctx_rows(rows, cd);
  for (Eigen::Index b = 0; b < nb; ++b)
    for (int i = 0; i < m; ++i) ctx_rows.row(b * m + i) = ctx.row(b);

  auto assemble = [&](const Matrix& s) {
    Matrix x(rows, sd + ad + cd);
    x.leftCols(sd) = model.state_norm.apply_rows(s);
    x.middleCols(sd, ad) = model.action_norm.apply_rows(act);
    if (cd > 0) x.rightCols(cd) = ctx_rows;
    return x;
  };

  const double scale = 1.0 / static_cast<double>(rows);
  LossResult res;
  Matrix ctx_grad = Matrix::Zero(rows, cd);

  {
    const Matrix target = model.delta_norm.apply_rows(s_next - s_cur);
    auto fwd = nn::mlp_forward(model.forward_net, assemble(s_cur));
    const Matrix diff = fwd.output - target;
    res.forward_term = 0.5 * diff.squaredNorm() * scale;
    auto bw = nn::mlp_backward(model.forward_net, fwd.cache, diff * scale);
    res.grad_forward = std::move(bw.param_grads);
    if (cd > 0) ctx_grad += bw.input_grad.rightCols(cd);
  }

  if (cfg.has_backward()) {
    const Normalizer back{-model.delta_norm.mean, model.delta_norm.std};
    const Matrix target = back.apply_rows(s_cur - s_next);
    auto bwd = nn::mlp_forward(model.backward_net, assemble(s_next));
    const Matrix diff = bwd.output - target;
    res.backward_term = 0.5 * diff.squaredNorm() * scale;
    auto bw = nn::mlp_backward(model.backward_net, bwd.cache, diff * (beta * scale));
    res.grad_backward = std::move(bw.param_grads);
    if (cd > 0) ctx_grad += bw.input_grad.rightCols(cd);
  }

  res.loss = res.forward_term + beta * res.backward_term;

  if (cfg.has_encoder()) {
    Matrix z_grad = Matrix::Zero(nb, cd);
    for (Eigen::Index b = 0; b < nb; ++b)
      for (int i = 0; i < m; ++i) z_grad.row(b) += ctx_grad.row(b * m + i);
    res.grad_encoder = nn::mlp_backward(model.encoder, enc.cache, z_grad).param_grads;
  }
  return res;
}

/// Loss value only; used by finite-difference checks.
inline double cadm_loss_value(const CadmModel& model, std::span<const TrainingSegment> batch,
                              double beta) {
  return cadm_loss(model, batch, beta).loss;
}

}  // namespace cadm
