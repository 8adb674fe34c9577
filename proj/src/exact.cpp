#include "mbvi/exact.hpp"

#include "mbvi/error.hpp"
#include "mbvi/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace mbvi {

TruncatedStateSpace::TruncatedStateSpace(const PopulationModel& model, std::vector<int> bounds, std::size_t max_states)
    : bounds_(std::move(bounds)) {
  const int d = model.species_count();
  if (static_cast<int>(bounds_.size()) != d)
    throw DomainError("truncation needs one bound per species (" + std::to_string(d) + ")");
  size_ = 1;
  strides_.resize(bounds_.size());
  for (int s = 0; s < d; ++s) {
    auto& b = bounds_[static_cast<std::size_t>(s)];
    if (b < 0) throw DomainError("truncation bounds must be non-negative");
    if (model.is_binary(s)) b = std::min(b, 1);
    strides_[static_cast<std::size_t>(s)] = size_;
    const auto extent = static_cast<std::size_t>(b) + 1;
    if (size_ > max_states / extent + 1 || size_ * extent > max_states)
      throw TooLargeError("truncated state space exceeds " + std::to_string(max_states) + " states");
    size_ *= extent;
  }
  classes_ = model.reaction_count();

  coords_.assign(static_cast<std::size_t>(d), std::vector<int>(size_));
  for (std::size_t i = 0; i < size_; ++i) {
    std::size_t rem = i;
    for (int s = 0; s < d; ++s) {
      const auto extent = static_cast<std::size_t>(bounds_[static_cast<std::size_t>(s)]) + 1;
      coords_[static_cast<std::size_t>(s)][i] = static_cast<int>(rem % extent);
      rem /= extent;
    }
  }

  targets_.assign(static_cast<std::size_t>(classes_), std::vector<long>(size_, -1));
  rates_.assign(static_cast<std::size_t>(classes_), std::vector<double>(size_, 0.0));
  outflow_.assign(size_, 0.0);
  exit_.assign(size_, 0.0);
  std::vector<std::size_t> in_count(size_ + 1, 0);
  State x(static_cast<std::size_t>(d)), y(static_cast<std::size_t>(d));
  for (std::size_t i = 0; i < size_; ++i) {
    for (int s = 0; s < d; ++s) x[static_cast<std::size_t>(s)] = coords_[static_cast<std::size_t>(s)][i];
    for (int c = 0; c < classes_; ++c) {
      const auto& rx = model.reaction(c);
      const double r = rx.rate * rx.propensity.evaluate(x);
      if (r <= 0.0) continue;
      for (int s = 0; s < d; ++s) y[static_cast<std::size_t>(s)] = x[static_cast<std::size_t>(s)] + rx.change[static_cast<std::size_t>(s)];
      const long j = index(y);
      if (j < 0) {
        outflow_[i] += r;
        continue;
      }
      targets_[static_cast<std::size_t>(c)][i] = j;
      rates_[static_cast<std::size_t>(c)][i] = r;
      exit_[i] += r;
      ++in_count[static_cast<std::size_t>(j) + 1];
    }
    max_exit_ = std::max(max_exit_, exit_[i]);
  }

  in_offsets_.assign(size_ + 1, 0);
  for (std::size_t i = 0; i < size_; ++i) in_offsets_[i + 1] = in_offsets_[i] + in_count[i + 1];
  in_source_.resize(in_offsets_.back());
  in_class_.resize(in_offsets_.back());
  std::vector<std::size_t> fill(in_offsets_.begin(), in_offsets_.end() - 1);
  for (std::size_t i = 0; i < size_; ++i) {
    for (int c = 0; c < classes_; ++c) {
      const long j = targets_[static_cast<std::size_t>(c)][i];
      if (j < 0) continue;
      const std::size_t k = fill[static_cast<std::size_t>(j)]++;
      in_source_[k] = static_cast<long>(i);
      in_class_[k] = c;
    }
  }
}

long TruncatedStateSpace::index(std::span<const int> x) const {
  if (x.size() != bounds_.size()) throw DomainError("state dimension does not match the state space");
  std::size_t idx = 0;
  for (std::size_t s = 0; s < x.size(); ++s) {
    if (x[s] < 0 || x[s] > bounds_[s]) return -1;
    idx += static_cast<std::size_t>(x[s]) * strides_[s];
  }
  return static_cast<long>(idx);
}

State TruncatedStateSpace::state(std::size_t idx) const {
  if (idx >= size_) throw DomainError("state index out of range");
  State x(bounds_.size());
  for (std::size_t s = 0; s < x.size(); ++s) x[s] = coords_[s][idx];
  return x;
}

Eigen::SparseMatrix<double, Eigen::RowMajor> TruncatedStateSpace::generator() const {
  std::vector<Eigen::Triplet<double>> trip;
  trip.reserve(size_ * static_cast<std::size_t>(classes_ + 1));
  for (std::size_t i = 0; i < size_; ++i) {
    for (int c = 0; c < classes_; ++c) {
      const long j = targets_[static_cast<std::size_t>(c)][i];
      if (j >= 0) trip.emplace_back(static_cast<long>(i), j, rates_[static_cast<std::size_t>(c)][i]);
    }
    trip.emplace_back(static_cast<long>(i), static_cast<long>(i), -(exit_[i] + outflow_[i]));
  }
  Eigen::SparseMatrix<double, Eigen::RowMajor> q(static_cast<long>(size_), static_cast<long>(size_));
  q.setFromTriplets(trip.begin(), trip.end());
  return q;
}

TruncatedStateSpace truncate(const PopulationModel& model, std::vector<int> bounds, std::size_t max_states) {
  return TruncatedStateSpace(model, std::move(bounds), max_states);
}

namespace {

double weighted_count(const TruncatedStateSpace& space, const Eigen::VectorXd& a, std::size_t i) {
  double v = 0.0;
  for (int s = 0; s < space.species(); ++s) v += a[s] * space.coordinate(s)[i];
  return v;
}

// Scales v to max |v| = 1 and returns the log of the removed factor.
double rescale(Eigen::VectorXd& v, const char* what) {
  const double m = v.cwiseAbs().maxCoeff();
  if (!(m > 0.0) || !std::isfinite(m)) throw DegenerateEvidence(std::string(what) + " vanished: observations impossible under the model");
  v /= m;
  return std::log(m);
}

int substeps(const TruncatedStateSpace& space, double dt) {
  // keeps dt * max exit rate <= 0.5, well inside the RK4 stability region
  return std::max(1, static_cast<int>(std::ceil(dt * space.max_exit_rate() / 0.5)));
}

template <class Apply>
void rk4(const TruncatedStateSpace& space, Eigen::VectorXd& v, double dt, Apply apply) {
  const int m = substeps(space, dt);
  const double h = dt / m;
  const long n = static_cast<long>(space.size());
  Eigen::VectorXd k1(n), k2(n), k3(n), k4(n), tmp(n);
  for (int s = 0; s < m; ++s) {
    apply(space, v, k1);
    tmp = v + 0.5 * h * k1;
    apply(space, tmp, k2);
    tmp = v + 0.5 * h * k2;
    apply(space, tmp, k3);
    tmp = v + h * k3;
    apply(space, tmp, k4);
    v += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
  }
  // discretisation error can leave tiny negative entries
  v = v.cwiseMax(0.0);
}

void step_backward(const TruncatedStateSpace& space, Eigen::VectorXd& sigma, double dt) {
  rk4(space, sigma, dt, [](const TruncatedStateSpace& sp, const Eigen::VectorXd& in, Eigen::VectorXd& out) {
    kernels::parallel::apply_backward(sp, in, out);
  });
}

void step_forward(const TruncatedStateSpace& space, Eigen::VectorXd& p, double dt) {
  rk4(space, p, dt, [](const TruncatedStateSpace& sp, const Eigen::VectorXd& in, Eigen::VectorXd& out) {
    kernels::parallel::apply_forward(sp, in, out);
  });
}

Eigen::VectorXd checked_initial(const TruncatedStateSpace& space, const Eigen::VectorXd& p0) {
  if (p0.size() != static_cast<long>(space.size())) throw DomainError("initial distribution has the wrong size");
  if ((p0.array() < 0.0).any() || !p0.allFinite()) throw DomainError("initial distribution must be non-negative");
  const double s = p0.sum();
  if (!(s > 0.0)) throw DomainError("initial distribution has zero mass");
  return p0 / s;
}

}  // namespace

GridLikelihood gaussian_likelihood(const TruncatedStateSpace& space, const GaussianObservationModel& obs, int index,
                                   double y) {
  if (!(obs.variance() > 0.0)) throw DomainError("likelihood needs a positive observation variance");
  if (obs.species() != space.species()) throw DomainError("observation weights do not match the species count");
  const long n = static_cast<long>(space.size());
  Eigen::VectorXd logv(n);
  for (long i = 0; i < n; ++i) {
    const double r = y - weighted_count(space, obs.weights(), static_cast<std::size_t>(i));
    logv[i] = -0.5 * r * r / obs.variance() - 0.5 * std::log(2.0 * M_PI * obs.variance());
  }
  const double top = logv.maxCoeff();
  return {index, (logv.array() - top).exp().matrix(), top};
}

GridLikelihood indicator_likelihood(const TruncatedStateSpace& space, const Eigen::VectorXd& weights, int index,
                                    double value) {
  if (weights.size() != space.species()) throw DomainError("indicator weights do not match the species count");
  const long n = static_cast<long>(space.size());
  Eigen::VectorXd v(n);
  for (long i = 0; i < n; ++i)
    v[i] = std::abs(weighted_count(space, weights, static_cast<std::size_t>(i)) - value) < 1e-9 ? 1.0 : 0.0;
  if (v.sum() == 0.0) throw DegenerateEvidence("indicator constraint selects no state of the truncated space");
  return {index, std::move(v), 0.0};
}

BackwardSolution backward_solve(const TruncatedStateSpace& space, const ObservationSet& obs,
                                const GaussianObservationModel& obs_model, const TimeGrid& grid) {
  std::vector<GridLikelihood> lik;
  for (const auto& o : snap_observations(grid, obs)) lik.push_back(gaussian_likelihood(space, obs_model, o.index, o.value));
  return backward_solve(space, std::move(lik), grid);
}

BackwardSolution backward_solve(const TruncatedStateSpace& space, std::vector<GridLikelihood> likelihoods,
                                const TimeGrid& grid) {
  const long n = static_cast<long>(space.size());
  for (const auto& l : likelihoods) {
    if (l.values.size() != n) throw DomainError("likelihood vector has the wrong size");
    if (l.index < 0 || l.index > grid.steps()) throw DomainError("likelihood attached outside the grid");
  }
  std::stable_sort(likelihoods.begin(), likelihoods.end(),
                   [](const GridLikelihood& a, const GridLikelihood& b) { return a.index < b.index; });

  const int N = grid.steps();
  BackwardSolution out{grid, Eigen::MatrixXd(n, N + 1), std::vector<double>(static_cast<std::size_t>(N) + 1), likelihoods};
  Eigen::VectorXd cur = Eigen::VectorXd::Ones(n);
  double log_scale = 0.0;
  long k = static_cast<long>(likelihoods.size()) - 1;
  for (int i = N; i >= 0; --i) {
    out.sigma.col(i) = cur;
    out.log_scale[static_cast<std::size_t>(i)] = log_scale;
    if (i == 0) break;
    while (k >= 0 && likelihoods[static_cast<std::size_t>(k)].index == i) {
      cur = cur.cwiseProduct(likelihoods[static_cast<std::size_t>(k)].values);
      log_scale += likelihoods[static_cast<std::size_t>(k)].log_offset;
      --k;
    }
    log_scale += rescale(cur, "backward function");
    step_backward(space, cur, grid.step());
    log_scale += rescale(cur, "backward function");
  }
  return out;
}

Eigen::VectorXd initial_distribution(const TruncatedStateSpace& space, const PopulationModel& model) {
  const long i = space.index(model.initial_state());
  if (i < 0) throw DomainError("initial state lies outside the truncated state space");
  Eigen::VectorXd p = Eigen::VectorXd::Zero(static_cast<long>(space.size()));
  p[i] = 1.0;
  return p;
}

double log_evidence(const TruncatedStateSpace& space, const Eigen::VectorXd& p0, const BackwardSolution& backward) {
  const Eigen::VectorXd p = checked_initial(space, p0);
  Eigen::VectorXd left = backward.sigma.col(0);
  double log_scale = backward.log_scale[0];
  for (const auto& l : backward.likelihoods) {
    if (l.index != 0) continue;
    left = left.cwiseProduct(l.values);
    log_scale += l.log_offset;
  }
  const double z = p.dot(left);
  if (!(z > 0.0)) return -std::numeric_limits<double>::infinity();
  return std::log(z) + log_scale;
}

Marginals posterior_marginals(const TruncatedStateSpace& space, const Eigen::VectorXd& p0,
                              const BackwardSolution& backward) {
  const TimeGrid& grid = backward.grid;
  const int N = grid.steps();
  if (backward.sigma.rows() != static_cast<long>(space.size())) throw DomainError("backward solution belongs to another state space");
  Marginals out{grid, Eigen::MatrixXd(static_cast<long>(space.size()), N + 1)};
  Eigen::VectorXd alpha = checked_initial(space, p0);
  std::size_t k = 0;
  for (int i = 0; i <= N; ++i) {
    while (k < backward.likelihoods.size() && backward.likelihoods[k].index == i) {
      alpha = alpha.cwiseProduct(backward.likelihoods[k].values);
      ++k;
    }
    const double sa = alpha.sum();
    if (!(sa > 0.0)) throw DegenerateEvidence("filtering distribution vanished at t = " + std::to_string(grid.time(i)));
    alpha /= sa;
    Eigen::VectorXd post = alpha.cwiseProduct(backward.sigma.col(i));
    const double z = post.sum();
    if (!(z > 0.0) || !std::isfinite(z))
      throw DegenerateEvidence("posterior mass underflow at t = " + std::to_string(grid.time(i)));
    out.prob.col(i) = post / z;
    if (i < N) step_forward(space, alpha, grid.step());
  }
  return out;
}

Marginals prior_marginals(const TruncatedStateSpace& space, const Eigen::VectorXd& p0, const TimeGrid& grid) {
  Marginals out{grid, Eigen::MatrixXd(static_cast<long>(space.size()), grid.points())};
  Eigen::VectorXd p = checked_initial(space, p0);
  for (int i = 0; i <= grid.steps(); ++i) {
    out.prob.col(i) = p / p.sum();
    if (i < grid.steps()) step_forward(space, p, grid.step());
  }
  return out;
}

Eigen::VectorXd distribution_moments(const TruncatedStateSpace& space, const Eigen::VectorXd& p) {
  const int d = space.species();
  const MomentLayout layout(d);
  Eigen::VectorXd psi = Eigen::VectorXd::Zero(layout.dim());
  for (std::size_t i = 0; i < space.size(); ++i) {
    const double w = p[static_cast<long>(i)];
    if (w == 0.0) continue;
    for (int s = 0; s < d; ++s) {
      const double xs = space.coordinate(s)[i];
      psi[layout.mean(s)] += w * xs;
      for (int u = s; u < d; ++u) psi[layout.second(s, u)] += w * xs * space.coordinate(u)[i];
    }
  }
  return psi;
}

Eigen::MatrixXd posterior_moments(const TruncatedStateSpace& space, const Marginals& marginals) {
  const MomentLayout layout(space.species());
  Eigen::MatrixXd out(layout.dim(), marginals.prob.cols());
  for (long i = 0; i < marginals.prob.cols(); ++i) out.col(i) = distribution_moments(space, marginals.prob.col(i));
  return out;
}

std::vector<Eigen::VectorXd> posterior_rates(const TruncatedStateSpace& space, const BackwardSolution& backward, int n) {
  if (n < 0 || n > backward.grid.steps()) throw DomainError("grid index out of range");
  const auto sigma = backward.sigma.col(n);
  std::vector<Eigen::VectorXd> out;
  for (int c = 0; c < space.class_count(); ++c) {
    Eigen::VectorXd r = Eigen::VectorXd::Zero(static_cast<long>(space.size()));
    for (std::size_t i = 0; i < space.size(); ++i) {
      const long j = space.target(c)[i];
      const double sx = sigma[static_cast<long>(i)];
      if (j >= 0 && sx > 0.0) r[static_cast<long>(i)] = space.rate(c)[i] * sigma[j] / sx;
    }
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace mbvi
