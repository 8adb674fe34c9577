#include "mbvi/obsmodel.hpp"

#include "mbvi/error.hpp"

#include <cmath>
#include <numbers>

namespace mbvi {

GaussianObservationModel::GaussianObservationModel(Eigen::VectorXd weights, double variance)
    : weights_(std::move(weights)), variance_(variance) {
  if (weights_.size() == 0 || weights_.isZero(0.0)) throw DomainError("observation weights must not all be zero");
  if (!weights_.allFinite()) throw DomainError("observation weights must be finite");
  if (!std::isfinite(variance_) || variance_ < 0.0) throw DomainError("observation variance must be nonnegative");
}

double GaussianObservationModel::project(std::span<const int> x) const {
  if (static_cast<int>(x.size()) != species()) throw DomainError("state dimension does not match observation weights");
  double s = 0.0;
  for (int i = 0; i < species(); ++i) s += weights_[i] * x[static_cast<std::size_t>(i)];
  return s;
}

double GaussianObservationModel::log_density(double y, std::span<const int> x) const {
  if (variance_ <= 0.0) throw DomainError("log density needs a positive observation variance");
  const double r = y - project(x);
  return -0.5 * r * r / variance_ - 0.5 * std::log(2.0 * std::numbers::pi * variance_);
}

namespace {

void check(const GaussianObservationModel& obs, const MomentLayout& layout) {
  if (obs.variance() <= 0.0) throw DomainError("expected log-likelihood needs a positive observation variance");
  if (obs.species() != layout.species()) throw DomainError("observation weights do not match the species count");
}

}  // namespace

double expected_loglik(const GaussianObservationModel& obs, const MomentLayout& layout, ConstVecRef psi, double y) {
  check(obs, layout);
  const auto& a = obs.weights();
  const int d = layout.species();
  double am = 0.0, aMa = 0.0;
  for (int s = 0; s < d; ++s) {
    am += a[s] * psi[layout.mean(s)];
    for (int u = 0; u < d; ++u) aMa += a[s] * a[u] * psi[layout.second(s, u)];
  }
  const double s2 = obs.variance();
  const double residual = y - am;
  const double var = aMa - am * am;
  return -0.5 * residual * residual / s2 - 0.5 * var / s2 - 0.5 * std::log(2.0 * std::numbers::pi * s2);
}

Eigen::VectorXd dF_dpsi(const GaussianObservationModel& obs, const MomentLayout& layout, ConstVecRef psi, double y) {
  check(obs, layout);
  // The value simplifies to -(y^2 - 2 y a.m + a^T M a) / (2 s2) + const, which is linear in psi.
  (void)psi;
  const auto& a = obs.weights();
  const int d = layout.species();
  const double s2 = obs.variance();
  Eigen::VectorXd g = Eigen::VectorXd::Zero(layout.dim());
  for (int s = 0; s < d; ++s) {
    g[layout.mean(s)] = y * a[s] / s2;
    for (int u = s; u < d; ++u) g[layout.second(s, u)] = (s == u ? -0.5 : -1.0) * a[s] * a[u] / s2;
  }
  return g;
}

}  // namespace mbvi
