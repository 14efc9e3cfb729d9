#pragma once

#include <stdexcept>
#include <string>

namespace cadm {

/// Tensor/batch dimensions do not line up with what an operation expects.
struct ShapeError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// Caller broke an API contract (stale cache, wrong method for env, ...).
struct ContractError : std::logic_error {
  using std::logic_error::logic_error;
};

/// Malformed training data: segments crossing episodes, empty datasets.
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Non-finite gradients reached the optimizer.
struct OptimizerError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Simulator produced a non-finite state.
struct EnvFault : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Input to a decomposition has no variance to extract.
struct DegenerateDataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Bad user configuration. `key` names the offending entry when known.
struct ConfigError : std::runtime_error {
  ConfigError(std::string key, const std::string& what)
      : std::runtime_error(key.empty() ? what : key + ": " + what),
        key_(std::move(key)) {}
  explicit ConfigError(const std::string& what) : ConfigError("", what) {}
  const std::string& key() const noexcept { return key_; }

 private:
  std::string key_;
};

}  // namespace cadm
