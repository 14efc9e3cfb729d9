#pragma once

// Versioned structured-text checkpoint: JSON metadata with weights packed as
// base64 little-endian float64 blobs (row-major per matrix).

#include <Eigen/Dense>

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "cadm/errors.hpp"
#include "cadm/model.hpp"
#include "cadm/planner.hpp"
#include "cadm/trainer.hpp"

namespace cadm::ckpt {

inline constexpr int kFormatVersion = 1;
inline constexpr const char* kFormatName = "cadm-checkpoint";

namespace base64 {

inline constexpr char kAlphabet[] =
    "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";

inline std::string encode(const std::vector<std::uint8_t>& bytes) {
  std::string out;
  out.reserve((bytes.size() + 2) / 3 * 4);
  std::size_t i = 0;
  for (; i + 2 < bytes.size(); i += 3) {
    const std::uint32_t v = (bytes[i] << 16) | (bytes[i + 1] << 8) | bytes[i + 2];
    out += kAlphabet[(v >> 18) & 63];
    out += kAlphabet[(v >> 12) & 63];
    out += kAlphabet[(v >> 6) & 63];
    out += kAlphabet[v & 63];
  }
  if (i + 1 == bytes.size()) {
    const std::uint32_t v = bytes[i] << 16;
    out += kAlphabet[(v >> 18) & 63];
    out += kAlphabet[(v >> 12) & 63];
    out += "==";
  } else if (i + 2 == bytes.size()) {
    const std::uint32_t v = (bytes[i] << 16) | (bytes[i + 1] << 8);
    out += kAlphabet[(v >> 18) & 63];
    out += kAlphabet[(v >> 12) & 63];
    out += kAlphabet[(v >> 6) & 63];
    out += '=';
  }
  return out;
}

inline std::vector<std::uint8_t> decode(const std::string& text) {
  auto value = [](char c) -> int {
    if (c >= 'A' && c <= 'Z') return c - 'A';
    if (c >= 'a' && c <= 'z') return c - 'a' + 26;
    if (c >= '0' && c <= '9') return c - '0' + 52;
    if (c == '+') return 62;
    if (c == '/') return 63;
    return -1;
  };
  if (text.size() % 4 != 0) throw DataError("base64: length not a multiple of 4");
  std::vector<std::uint8_t> out;
  out.reserve(text.size() / 4 * 3);
  for (std::size_t i = 0; i < text.size(); i += 4) {
    int v[4];
    int pad = 0;
    for (int j = 0; j < 4; ++j) {
      const char c = text[i + j];
      if (c == '=') {
        v[j] = 0;
        ++pad;
      } else if ((v[j] = value(c)) < 0 || pad > 0) {
        throw DataError("base64: invalid character");
      }
    }
    const std::uint32_t w = (v[0] << 18) | (v[1] << 12) | (v[2] << 6) | v[3];
    out.push_back(static_cast<std::uint8_t>(w >> 16));
    if (pad < 2) out.push_back(static_cast<std::uint8_t>(w >> 8));
    if (pad < 1) out.push_back(static_cast<std::uint8_t>(w));
  }
  return out;
}

}  // namespace base64

inline std::string pack_doubles(const std::vector<double>& values) {
  static_assert(std::endian::native == std::endian::little, "checkpoint packing assumes little-endian");
  std::vector<std::uint8_t> bytes(values.size() * sizeof(double));
  std::memcpy(bytes.data(), values.data(), bytes.size());
  return base64::encode(bytes);
}

inline std::vector<double> unpack_doubles(const std::string& text) {
  const std::vector<std::uint8_t> bytes = base64::decode(text);
  if (bytes.size() % sizeof(double) != 0) throw DataError("checkpoint: blob is not a float64 array");
  std::vector<double> out(bytes.size() / sizeof(double));
  std::memcpy(out.data(), bytes.data(), bytes.size());
  return out;
}

using json = nlohmann::json;

inline json net_to_json(const nn::MlpParams& p) {
  json layers = json::array();
  for (const auto& l : p.layers) {
    std::vector<double> w;
    w.reserve(static_cast<std::size_t>(l.weight.size()));
    for (Eigen::Index r = 0; r < l.weight.rows(); ++r)
      for (Eigen::Index c = 0; c < l.weight.cols(); ++c) w.push_back(l.weight(r, c));
    layers.push_back({{"weight", pack_doubles(w)},
                      {"bias", pack_doubles(std::vector<double>(l.bias.data(), l.bias.data() + l.bias.size()))}});
  }
  return {{"layer_sizes", p.spec.layer_sizes()},
          {"activation", std::string(nn::to_string(p.spec.activation()))},
          {"layers", layers}};
}

inline nn::MlpParams net_from_json(const json& j) {
  const nn::MlpSpec spec(j.at("layer_sizes").get<std::vector<int>>(),
                         nn::parse_activation(j.at("activation").get<std::string>()));
  nn::MlpParams p = nn::MlpParams::zeros(spec);
  const json& layers = j.at("layers");
  if (layers.size() != p.layers.size()) throw DataError("checkpoint: layer count mismatch");
  for (std::size_t l = 0; l < p.layers.size(); ++l) {
    const auto w = unpack_doubles(layers[l].at("weight").get<std::string>());
    const auto b = unpack_doubles(layers[l].at("bias").get<std::string>());
    auto& layer = p.layers[l];
    if (w.size() != static_cast<std::size_t>(layer.weight.size()) ||
        b.size() != static_cast<std::size_t>(layer.bias.size()))
      throw DataError("checkpoint: weight blob size mismatch in layer " + std::to_string(l));
    std::size_t i = 0;
    for (Eigen::Index r = 0; r < layer.weight.rows(); ++r)
      for (Eigen::Index c = 0; c < layer.weight.cols(); ++c) layer.weight(r, c) = w[i++];
    for (std::size_t k = 0; k < b.size(); ++k) layer.bias[k] = b[k];
  }
  return p;
}

inline json norm_to_json(const Normalizer& n) {
  return {{"mean", pack_doubles(std::vector<double>(n.mean.data(), n.mean.data() + n.mean.size()))},
          {"std", pack_doubles(std::vector<double>(n.std.data(), n.std.data() + n.std.size()))}};
}

inline Normalizer norm_from_json(const json& j) {
  const auto m = unpack_doubles(j.at("mean").get<std::string>());
  const auto s = unpack_doubles(j.at("std").get<std::string>());
  if (m.size() != s.size()) throw DataError("checkpoint: normalizer size mismatch");
  return {Eigen::Map<const Vector>(m.data(), m.size()), Eigen::Map<const Vector>(s.data(), s.size())};
}

inline json plan_to_json(const planner::PlanConfig& p) {
  return {{"method", std::string(planner::to_string(p.method))},
          {"horizon", p.horizon},
          {"n_candidates", p.n_candidates},
          {"cem_iterations", p.cem_iterations},
          {"elite_fraction", p.elite_fraction},
          {"cem_alpha", p.cem_alpha},
          {"std_floor", p.std_floor}};
}

inline planner::PlanConfig plan_from_json(const json& j) {
  planner::PlanConfig p;
  p.method = planner::parse_method(j.at("method").get<std::string>());
  p.horizon = j.at("horizon").get<int>();
  p.n_candidates = j.at("n_candidates").get<int>();
  p.cem_iterations = j.at("cem_iterations").get<int>();
  p.elite_fraction = j.at("elite_fraction").get<double>();
  p.cem_alpha = j.at("cem_alpha").get<double>();
  p.std_floor = j.at("std_floor").get<double>();
  return p;
}

struct TrainingMeta {
  std::uint64_t seed = 0;
  int iterations_completed = 0;
  double best_return = 0.0;
  int best_iteration = 0;
};

/// Everything needed to run a trained model: weights, normalizers,
/// hyperparameters and the planner it was trained with.
struct Checkpoint {
  CadmModel model;
  planner::PlanConfig plan;
  int future_m = 1;
  double beta = 0.0;
  TrainingMeta meta;
};

inline std::string serialize(const Checkpoint& c) {
  const ModelConfig& mc = c.model.config();
  json j;
  j["format"] = kFormatName;
  j["version"] = kFormatVersion;
  j["env"] = std::string(envs::to_string(mc.env));
  j["kind"] = std::string(to_string(mc.kind));
  j["hyperparameters"] = {{"K", mc.history_k},
                          {"M", c.future_m},
                          {"beta", c.beta},
                          {"latent_dim", mc.latent_dim},
                          {"encoder_hidden", mc.encoder_hidden},
                          {"dynamics_hidden", mc.dynamics_hidden},
                          {"activation", std::string(nn::to_string(mc.activation))}};
  j["plan"] = plan_to_json(c.plan);
  j["normalizer"] = {{"state", norm_to_json(c.model.state_norm)},
                     {"action", norm_to_json(c.model.action_norm)},
                     {"delta", norm_to_json(c.model.delta_norm)}};
  j["networks"] = {{"forward", net_to_json(c.model.forward_net)}};
  if (mc.has_backward()) j["networks"]["backward"] = net_to_json(c.model.backward_net);
  if (mc.has_encoder()) j["networks"]["encoder"] = net_to_json(c.model.encoder);
  j["training"] = {{"seed", c.meta.seed},
                   {"iterations_completed", c.meta.iterations_completed},
                   {"best_return", c.meta.best_return},
                   {"best_iteration", c.meta.best_iteration}};
  return j.dump(1) + "\n";
}

inline Checkpoint deserialize(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw DataError(std::string("checkpoint: not valid JSON: ") + e.what());
  }
  try {
    if (j.value("format", "") != kFormatName) throw DataError("checkpoint: unrecognized format");
    const int version = j.at("version").get<int>();
    if (version != kFormatVersion)
      throw DataError("checkpoint: unsupported version " + std::to_string(version));
    const json& h = j.at("hyperparameters");
    ModelConfig mc;
    mc.env = envs::parse_env(j.at("env").get<std::string>());
    mc.kind = parse_model_kind(j.at("kind").get<std::string>());
    mc.history_k = h.at("K").get<int>();
    mc.latent_dim = h.at("latent_dim").get<int>();
    mc.encoder_hidden = h.at("encoder_hidden").get<std::vector<int>>();
    mc.dynamics_hidden = h.at("dynamics_hidden").get<std::vector<int>>();
    mc.activation = nn::parse_activation(h.at("activation").get<std::string>());

    Checkpoint c;
    c.model = CadmModel::create(mc, 0);
    c.future_m = h.at("M").get<int>();
    c.beta = h.at("beta").get<double>();
    c.plan = plan_from_json(j.at("plan"));
    const json& n = j.at("normalizer");
    c.model.state_norm = norm_from_json(n.at("state"));
    c.model.action_norm = norm_from_json(n.at("action"));
    c.model.delta_norm = norm_from_json(n.at("delta"));
    const json& nets = j.at("networks");
    auto load = [&](const char* name, nn::MlpParams& dst) {
      nn::MlpParams p = net_from_json(nets.at(name));
      if (!(p.spec == dst.spec)) throw DataError(std::string("checkpoint: ") + name + " shape mismatch");
      dst = std::move(p);
    };
    load("forward", c.model.forward_net);
    if (mc.has_backward()) load("backward", c.model.backward_net);
    if (mc.has_encoder()) load("encoder", c.model.encoder);
    if (!mc.has_encoder() && nets.contains("encoder"))
      throw DataError("checkpoint: baseline checkpoint carries encoder weights");
    const json& t = j.at("training");
    c.meta.seed = t.at("seed").get<std::uint64_t>();
    c.meta.iterations_completed = t.at("iterations_completed").get<int>();
    c.meta.best_return = t.at("best_return").get<double>();
    c.meta.best_iteration = t.at("best_iteration").get<int>();
    return c;
  } catch (const json::exception& e) {
    throw DataError(std::string("checkpoint: ") + e.what());
  } catch (const ConfigError& e) {
    throw DataError(std::string("checkpoint: ") + e.what());
  }
}

inline void save(const std::string& path, const Checkpoint& c) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write checkpoint " + path);
  out << serialize(c);
  if (!out) throw std::runtime_error("failed writing checkpoint " + path);
}

inline Checkpoint load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return deserialize(ss.str());
}

inline Checkpoint from_training(const CadmModel& model, const TrainConfig& cfg, const TrainingResult& res) {
  return {model, cfg.plan, cfg.effective_m(), cfg.effective_beta(),
          {cfg.seed, static_cast<int>(res.metrics.size()), res.best_return, res.best_iteration}};
}

}  // namespace cadm::ckpt
