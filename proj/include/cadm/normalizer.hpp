#pragma once

#include <Eigen/Dense>

#include <cmath>

#include "cadm/errors.hpp"

namespace cadm {

/// Per-dimension affine standardization x~ = (x - mean) / std.
struct Normalizer {
  static constexpr double kStdFloor = 1e-6;

  Eigen::VectorXd mean;
  Eigen::VectorXd std;

  static Normalizer identity(Eigen::Index dim) {
    return {Eigen::VectorXd::Zero(dim), Eigen::VectorXd::Ones(dim)};
  }

  /// Population statistics over the rows of `data` (N x d).
  static Normalizer fit(const Eigen::MatrixXd& data) {
    if (data.rows() == 0) throw DataError("normalizer_fit: empty dataset");
    Normalizer n;
    n.mean = data.colwise().mean().transpose();
    const Eigen::MatrixXd centered = data.rowwise() - n.mean.transpose();
    n.std = (centered.array().square().colwise().sum() / static_cast<double>(data.rows()))
                .sqrt()
                .transpose()
                .max(kStdFloor);
    return n;
  }

  Eigen::Index dim() const { return mean.size(); }

  template <typename Derived>
  Eigen::VectorXd apply(const Eigen::MatrixBase<Derived>& x) const {
    return ((x.array() - mean.array()) / std.array()).matrix();
  }
  template <typename Derived>
  Eigen::VectorXd invert(const Eigen::MatrixBase<Derived>& x) const {
    return (x.array() * std.array() + mean.array()).matrix();
  }

  /// Row-wise versions over an N x d matrix.
  Eigen::MatrixXd apply_rows(const Eigen::MatrixXd& x) const {
    return ((x.rowwise() - mean.transpose()).array().rowwise() / std.transpose().array()).matrix();
  }
  Eigen::MatrixXd invert_rows(const Eigen::MatrixXd& x) const {
    return ((x.array().rowwise() * std.transpose().array()).rowwise() + mean.transpose().array())
        .matrix();
  }

  bool operator==(const Normalizer& o) const { return mean == o.mean && std == o.std; }
};

}  // namespace cadm
