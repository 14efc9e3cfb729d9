#pragma once

// Dense MLP engine: forward pass with cache, exact backprop, Adam, and a
// central-difference gradient oracle used by the test suites.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include "cadm/errors.hpp"
#include "cadm/rng.hpp"

namespace cadm::nn {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

enum class Activation { swish, relu, tanh, identity };

inline std::string_view to_string(Activation a) {
  switch (a) {
    case Activation::swish: return "swish";
    case Activation::relu: return "relu";
    case Activation::tanh: return "tanh";
    case Activation::identity: return "identity";
  }
  return "?";
}

inline Activation parse_activation(std::string_view s) {
  if (s == "swish") return Activation::swish;
  if (s == "relu") return Activation::relu;
  if (s == "tanh") return Activation::tanh;
  if (s == "identity") return Activation::identity;
  throw ConfigError("activation", "unknown activation '" + std::string(s) + "'");
}

inline double swish(double x) { return x / (1.0 + std::exp(-x)); }

/// Layer widths (input first, output last). Hidden layers share one
/// activation; the output layer is always linear.
class MlpSpec {
 public:
  MlpSpec() = default;
  MlpSpec(std::vector<int> layer_sizes, Activation activation)
      : sizes_(std::move(layer_sizes)), activation_(activation) {
    if (sizes_.size() < 2) throw ShapeError("MlpSpec needs at least input and output sizes");
    for (int s : sizes_)
      if (s < 1) throw ShapeError("MlpSpec layer sizes must be >= 1");
  }

  const std::vector<int>& layer_sizes() const { return sizes_; }
  Activation activation() const { return activation_; }
  int input_dim() const { return sizes_.front(); }
  int output_dim() const { return sizes_.back(); }
  std::size_t n_layers() const { return sizes_.size() - 1; }

  /// Convenience: input -> hidden... -> output.
  static MlpSpec make(int in, const std::vector<int>& hidden, int out, Activation act) {
    std::vector<int> sizes{in};
    sizes.insert(sizes.end(), hidden.begin(), hidden.end());
    sizes.push_back(out);
    return MlpSpec(std::move(sizes), act);
  }

  bool operator==(const MlpSpec&) const = default;

 private:
  std::vector<int> sizes_;
  Activation activation_ = Activation::swish;
};

struct Layer {
  Matrix weight;  // out x in
  Vector bias;    // out
};

/// Weights of one network. Also used as the container for gradients and
/// Adam moments, which share its shape.
struct MlpParams {
  MlpSpec spec;
  std::vector<Layer> layers;
  // Bumped on every in-place update so caches from older weights are rejected.
  std::uint64_t revision = 0;

  static MlpParams zeros(const MlpSpec& spec) {
    MlpParams p;
    p.spec = spec;
    const auto& s = spec.layer_sizes();
    for (std::size_t l = 0; l + 1 < s.size(); ++l)
      p.layers.push_back({Matrix::Zero(s[l + 1], s[l]), Vector::Zero(s[l + 1])});
    return p;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& l : layers) n += l.weight.size() + l.bias.size();
    return n;
  }

  /// Visits every scalar in a fixed order: per layer, weights (column-major
  /// storage order) then biases.
  template <typename F>
  void for_each_scalar(F&& f) {
    for (auto& l : layers) {
      for (Eigen::Index i = 0; i < l.weight.size(); ++i) f(l.weight.data()[i]);
      for (Eigen::Index i = 0; i < l.bias.size(); ++i) f(l.bias.data()[i]);
    }
  }
  template <typename F>
  void for_each_scalar(F&& f) const {
    for (const auto& l : layers) {
      for (Eigen::Index i = 0; i < l.weight.size(); ++i) f(l.weight.data()[i]);
      for (Eigen::Index i = 0; i < l.bias.size(); ++i) f(l.bias.data()[i]);
    }
  }

  bool all_finite() const {
    bool ok = true;
    for_each_scalar([&](double v) { ok = ok && std::isfinite(v); });
    return ok;
  }

  /// Bitwise equality of weights (revision ignored).
  bool same_weights(const MlpParams& o) const {
    if (!(spec == o.spec) || layers.size() != o.layers.size()) return false;
    for (std::size_t l = 0; l < layers.size(); ++l)
      if (layers[l].weight != o.layers[l].weight || layers[l].bias != o.layers[l].bias)
        return false;
    return true;
  }
};

inline void add_scaled(MlpParams& dst, const MlpParams& src, double scale) {
  if (dst.layers.size() != src.layers.size()) throw ShapeError("add_scaled: layer count mismatch");
  for (std::size_t l = 0; l < dst.layers.size(); ++l) {
    dst.layers[l].weight += scale * src.layers[l].weight;
    dst.layers[l].bias += scale * src.layers[l].bias;
  }
}

inline double max_abs_diff(const MlpParams& a, const MlpParams& b) {
  double m = 0.0;
  for (std::size_t l = 0; l < a.layers.size(); ++l) {
    m = std::max(m, (a.layers[l].weight - b.layers[l].weight).cwiseAbs().maxCoeff());
    m = std::max(m, (a.layers[l].bias - b.layers[l].bias).cwiseAbs().maxCoeff());
  }
  return m;
}

/// Glorot-uniform weights, zero biases.
inline MlpParams mlp_init(const MlpSpec& spec, std::uint64_t seed) {
  MlpParams p = MlpParams::zeros(spec);
  Rng rng(seed);
  for (auto& layer : p.layers) {
    const double fan_in = static_cast<double>(layer.weight.cols());
    const double fan_out = static_cast<double>(layer.weight.rows());
    const double limit = std::sqrt(6.0 / (fan_in + fan_out));
    std::uniform_real_distribution<double> dist(-limit, limit);
    for (Eigen::Index r = 0; r < layer.weight.rows(); ++r)
      for (Eigen::Index c = 0; c < layer.weight.cols(); ++c) layer.weight(r, c) = dist(rng);
  }
  return p;
}

/// Per-layer inputs and pre-activations recorded by a forward pass.
struct ForwardCache {
  const MlpParams* owner = nullptr;
  std::uint64_t revision = 0;
  std::vector<Matrix> inputs;  // inputs[l] feeds layer l
  std::vector<Matrix> pre;     // pre[l] = inputs[l] * W^T + b
};

namespace detail {

inline void activate_inplace(Matrix& m, Activation a) {
  switch (a) {
    case Activation::swish:
      m.array() /= 1.0 + (-m.array()).exp();
      break;
    case Activation::relu:
      m = m.cwiseMax(0.0);
      break;
    case Activation::tanh:
      m = m.array().tanh().matrix();
      break;
    case Activation::identity:
      break;
  }
}

// grad <- grad * act'(pre)
inline void backprop_activation(Matrix& grad, const Matrix& pre, Activation a) {
  switch (a) {
    case Activation::swish:
      {
        const Eigen::ArrayXXd s = 1.0 / (1.0 + (-pre.array()).exp());
        grad.array() *= s * (1.0 + pre.array() * (1.0 - s));
      }
      break;
    case Activation::relu:
      grad = grad.binaryExpr(pre, [](double g, double x) { return x > 0.0 ? g : 0.0; });
      break;
    case Activation::tanh:
      grad = grad.binaryExpr(pre, [](double g, double x) {
        const double t = std::tanh(x);
        return g * (1.0 - t * t);
      });
      break;
    case Activation::identity:
      break;
  }
}

inline Matrix run_forward(const MlpParams& params, const Matrix& batch, ForwardCache* cache) {
  if (batch.cols() != params.spec.input_dim())
    throw ShapeError("mlp_forward: batch width " + std::to_string(batch.cols()) +
                     " != input dim " + std::to_string(params.spec.input_dim()));
  if (cache) {
    cache->owner = &params;
    cache->revision = params.revision;
    cache->inputs.clear();
    cache->pre.clear();
  }
  Matrix h = batch;
  const std::size_t n = params.layers.size();
  for (std::size_t l = 0; l < n; ++l) {
    const Layer& layer = params.layers[l];
    Matrix pre(h.rows(), layer.weight.rows());
    pre.noalias() = h * layer.weight.transpose();
    pre.rowwise() += layer.bias.transpose();
    if (cache) {
      cache->inputs.push_back(std::move(h));
      cache->pre.push_back(pre);
    }
    h = std::move(pre);
    if (l + 1 < n) activate_inplace(h, params.spec.activation());
  }
  return h;
}

}  // namespace detail

struct ForwardResult {
  Matrix output;
  ForwardCache cache;
};

/// Forward pass recording what mlp_backward needs.
inline ForwardResult mlp_forward(const MlpParams& params, const Matrix& batch) {
  ForwardResult r;
  r.output = detail::run_forward(params, batch, &r.cache);
  return r;
}

/// Inference-only forward pass.
inline Matrix mlp_predict(const MlpParams& params, const Matrix& batch) {
  return detail::run_forward(params, batch, nullptr);
}

struct BackwardResult {
  MlpParams param_grads;
  Matrix input_grad;
};

/// Gradients of a scalar loss whose derivative w.r.t. the network output is
/// `output_grad` (B x out).
inline BackwardResult mlp_backward(const MlpParams& params, const ForwardCache& cache,
                                   const Matrix& output_grad) {
  if (cache.owner != &params || cache.revision != params.revision ||
      cache.inputs.size() != params.layers.size())
    throw ContractError("mlp_backward: cache does not belong to these parameters");
  const Eigen::Index batch = cache.inputs.front().rows();
  if (output_grad.rows() != batch || output_grad.cols() != params.spec.output_dim())
    throw ShapeError("mlp_backward: output_grad shape mismatch");

  BackwardResult r{MlpParams::zeros(params.spec), Matrix()};
  Matrix g = output_grad;
  for (std::size_t l = params.layers.size(); l-- > 0;) {
    if (l + 1 < params.layers.size()) detail::backprop_activation(g, cache.pre[l], params.spec.activation());
    r.param_grads.layers[l].weight.noalias() = g.transpose() * cache.inputs[l];
    r.param_grads.layers[l].bias = g.colwise().sum().transpose();
    Matrix next(g.rows(), params.layers[l].weight.cols());
    next.noalias() = g * params.layers[l].weight;
    g = std::move(next);
  }
  r.input_grad = std::move(g);
  return r;
}

/// Central differences (L(p+eps) - L(p-eps)) / (2 eps), one scalar at a time.
inline MlpParams finite_diff_grad(const std::function<double(const MlpParams&)>& loss_fn,
                                  const MlpParams& params, double eps = 1e-5) {
  MlpParams probe = params;
  MlpParams grads = MlpParams::zeros(params.spec);
  std::vector<double*> slots;
  probe.for_each_scalar([&](double& v) { slots.push_back(&v); });
  std::vector<double> out;
  out.reserve(slots.size());
  for (double* p : slots) {
    const double saved = *p;
    *p = saved + eps;
    ++probe.revision;
    const double up = loss_fn(probe);
    *p = saved - eps;
    ++probe.revision;
    const double down = loss_fn(probe);
    *p = saved;
    out.push_back((up - down) / (2.0 * eps));
  }
  std::size_t i = 0;
  grads.for_each_scalar([&](double& v) { v = out[i++]; });
  return grads;
}

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;  // flat index in for_each_scalar order
  double analytic_at_worst = 0.0;
  double numeric_at_worst = 0.0;
};

/// |a - n| / max(|a|, |n|, 1e-8), maximized over all scalars.
inline GradCheckReport compare_grads(const MlpParams& analytic, const MlpParams& numeric) {
  std::vector<double> a, n;
  analytic.for_each_scalar([&](double v) { a.push_back(v); });
  numeric.for_each_scalar([&](double v) { n.push_back(v); });
  if (a.size() != n.size()) throw ShapeError("compare_grads: size mismatch");
  GradCheckReport rep;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double denom = std::max({std::abs(a[i]), std::abs(n[i]), 1e-8});
    const double rel = std::abs(a[i] - n[i]) / denom;
    if (i == 0 || rel > rep.max_rel_error) {
      rep.max_rel_error = rel;
      rep.worst_index = i;
      rep.analytic_at_worst = a[i];
      rep.numeric_at_worst = n[i];
    }
  }
  return rep;
}

struct AdamState {
  MlpParams m;
  MlpParams v;
  std::int64_t t = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  static AdamState like(const MlpParams& params) {
    return {MlpParams::zeros(params.spec), MlpParams::zeros(params.spec)};
  }
};

/// One bias-corrected Adam update. Throws OptimizerError, leaving state and
/// params untouched, when any gradient is non-finite.
inline void adam_step(AdamState& state, MlpParams& params, const MlpParams& grads, double lr) {
  if (!(lr >= 0.0)) throw ContractError("adam_step: lr must be non-negative");
  if (grads.layers.size() != params.layers.size() || state.m.layers.size() != params.layers.size())
    throw ShapeError("adam_step: shape mismatch");
  if (!grads.all_finite()) throw OptimizerError("adam_step: non-finite gradient");

  state.t += 1;
  const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.t));
  const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.t));
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    auto update = [&](auto& p, auto& m, auto& v, const auto& g) {
      m = state.beta1 * m + (1.0 - state.beta1) * g;
      v = state.beta2 * v + (1.0 - state.beta2) * g.cwiseProduct(g);
      p.array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + state.eps);
    };
    update(params.layers[l].weight, state.m.layers[l].weight, state.v.layers[l].weight,
           grads.layers[l].weight);
    update(params.layers[l].bias, state.m.layers[l].bias, state.v.layers[l].bias,
           grads.layers[l].bias);
  }
  ++params.revision;
}

}  // namespace cadm::nn
