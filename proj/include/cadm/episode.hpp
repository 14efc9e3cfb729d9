#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <vector>

#include "cadm/envs.hpp"

namespace cadm {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// One trajectory in observation space: states s_0..s_T, actions a_0..a_{T-1},
/// rewards r_0..r_{T-1}. A partially collected episode is valid at any time.
struct Episode {
  envs::EnvParams params;
  std::uint64_t seed = 0;
  std::vector<Vector> states;
  std::vector<Vector> actions;
  std::vector<double> rewards;

  int length() const { return static_cast<int>(actions.size()); }
  double total_return() const {
    double r = 0.0;
    for (double v : rewards) r += v;
    return r;
  }
};

}  // namespace cadm
