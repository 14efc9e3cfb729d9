#pragma once

// Flat JSON run configuration. Every key is optional and defaults to the
// values documented in README.md; unknown keys are rejected by name.

#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "cadm/envs.hpp"
#include "cadm/errors.hpp"
#include "cadm/model.hpp"
#include "cadm/planner.hpp"
#include "cadm/trainer.hpp"

namespace cadm::config {

using json = nlohmann::json;

struct RunConfig {
  TrainConfig train;
  std::string out_dir = "run";
};

namespace detail {

template <typename T>
T get_as(const json& v, const std::string& key) {
  try {
    return v.get<T>();
  } catch (const json::exception&) {
    throw ConfigError(key, "wrong type (" + std::string(v.type_name()) + ")");
  }
}

inline int positive_int(const json& v, const std::string& key) {
  if (!v.is_number_integer()) throw ConfigError(key, "expected an integer");
  return v.get<int>();
}

inline std::vector<int> widths(const json& v, const std::string& key) {
  if (!v.is_array()) throw ConfigError(key, "expected an array of layer widths");
  std::vector<int> out;
  for (const auto& e : v) {
    if (!e.is_number_integer() || e.get<int>() < 1) throw ConfigError(key, "layer widths must be positive integers");
    out.push_back(e.get<int>());
  }
  return out;
}

}  // namespace detail

/// Applies a flat JSON object on top of the defaults.
inline RunConfig parse(const json& doc) {
  if (!doc.is_object()) throw ConfigError("config must be a JSON object");
  RunConfig rc;
  TrainConfig& t = rc.train;
  using Setter = std::function<void(const json&, const std::string&)>;
  const std::map<std::string, Setter> setters = {
      {"env", [&](const json& v, const std::string& k) { t.model.env = envs::parse_env(detail::get_as<std::string>(v, k)); }},
      {"kind", [&](const json& v, const std::string& k) { t.model.kind = parse_model_kind(detail::get_as<std::string>(v, k)); }},
      {"seed", [&](const json& v, const std::string& k) { t.seed = detail::get_as<std::uint64_t>(v, k); }},
      {"out_dir", [&](const json& v, const std::string& k) { rc.out_dir = detail::get_as<std::string>(v, k); }},
      {"n_iterations", [&](const json& v, const std::string& k) { t.n_iterations = detail::positive_int(v, k); }},
      {"trajectories_per_iteration", [&](const json& v, const std::string& k) { t.trajectories_per_iteration = detail::positive_int(v, k); }},
      {"epochs_per_iteration", [&](const json& v, const std::string& k) { t.epochs_per_iteration = detail::positive_int(v, k); }},
      {"batch_size", [&](const json& v, const std::string& k) { t.batch_size = detail::positive_int(v, k); }},
      {"lr", [&](const json& v, const std::string& k) { t.lr = detail::get_as<double>(v, k); }},
      {"K", [&](const json& v, const std::string& k) { t.model.history_k = detail::positive_int(v, k); }},
      {"M", [&](const json& v, const std::string& k) { t.future_m = detail::positive_int(v, k); }},
      {"beta", [&](const json& v, const std::string& k) { t.beta = detail::get_as<double>(v, k); }},
      {"latent_dim", [&](const json& v, const std::string& k) { t.model.latent_dim = detail::positive_int(v, k); }},
      {"encoder_hidden", [&](const json& v, const std::string& k) { t.model.encoder_hidden = detail::widths(v, k); }},
      {"dynamics_hidden", [&](const json& v, const std::string& k) { t.model.dynamics_hidden = detail::widths(v, k); }},
      {"activation", [&](const json& v, const std::string& k) { t.model.activation = nn::parse_activation(detail::get_as<std::string>(v, k)); }},
      {"plan_method", [&](const json& v, const std::string& k) { t.plan.method = planner::parse_method(detail::get_as<std::string>(v, k)); }},
      {"horizon", [&](const json& v, const std::string& k) { t.plan.horizon = detail::positive_int(v, k); }},
      {"n_candidates", [&](const json& v, const std::string& k) { t.plan.n_candidates = detail::positive_int(v, k); }},
      {"cem_iterations", [&](const json& v, const std::string& k) { t.plan.cem_iterations = detail::positive_int(v, k); }},
      {"elite_fraction", [&](const json& v, const std::string& k) { t.plan.elite_fraction = detail::get_as<double>(v, k); }},
      {"cem_alpha", [&](const json& v, const std::string& k) { t.plan.cem_alpha = detail::get_as<double>(v, k); }},
      {"random_warmup", [&](const json& v, const std::string& k) { t.random_warmup = detail::get_as<bool>(v, k); }},
      {"train_regime", [&](const json& v, const std::string& k) { t.train_regime = envs::parse_regime(detail::get_as<std::string>(v, k)); }},
  };
  for (const auto& [key, value] : doc.items()) {
    auto it = setters.find(key);
    if (it == setters.end()) throw ConfigError(key, "unknown configuration key");
    try {
      it->second(value, key);
    } catch (const ConfigError& e) {
      if (e.key() == key) throw;
      throw ConfigError(key, e.what());
    }
  }
  if (t.model.kind == ModelKind::vanilla) t.model.history_k = 0;
  if (t.model.kind == ModelKind::stacked) t.model.history_k = kStackedHistory;
  t.validate();
  return rc;
}

inline RunConfig parse_text(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  return parse(doc);
}

inline RunConfig load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config", "cannot open config file '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_text(ss.str());
}

}  // namespace cadm::config
