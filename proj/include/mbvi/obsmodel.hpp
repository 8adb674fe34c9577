#pragma once

#include "mbvi/moments.hpp"

#include <Eigen/Dense>

#include <span>

namespace mbvi {

/// Scalar Gaussian observation y ~ N(a . x, sigma^2).
///
/// A zero variance is accepted so that noise-free synthetic data can be drawn;
/// the likelihood functions require a strictly positive variance.
class GaussianObservationModel {
 public:
  GaussianObservationModel(Eigen::VectorXd weights, double variance);

  const Eigen::VectorXd& weights() const { return weights_; }
  double variance() const { return variance_; }
  int species() const { return static_cast<int>(weights_.size()); }

  double project(std::span<const int> x) const;
  /// log N(y; a . x, sigma^2).
  double log_density(double y, std::span<const int> x) const;

 private:
  Eigen::VectorXd weights_;
  double variance_;
};

/// E[log N(y; a . X, sigma^2)] for any distribution of X with the moments psi:
///   -(y - a.m)^2 / (2 s2) - a^T (M - m m^T) a / (2 s2) - log(2 pi s2) / 2.
double expected_loglik(const GaussianObservationModel& obs, const MomentLayout& layout, ConstVecRef psi, double y);

/// Gradient of expected_loglik with respect to psi (packed parametrization).
Eigen::VectorXd dF_dpsi(const GaussianObservationModel& obs, const MomentLayout& layout, ConstVecRef psi, double y);

}  // namespace mbvi
