#include "mbvi/vismooth.hpp"

#include "mbvi/io.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <ostream>

namespace mbvi {

namespace {

double kl_density(double lambda) { return 1.0 - lambda + lambda * std::log(lambda); }

}  // namespace

struct VariationalSmoother::IntervalTrace {
  // Per substep: the four stage states and the interpolation weights of their scaling factors.
  std::vector<std::array<PsiVector, 4>> states;
  std::vector<std::array<double, 3>> theta;  // stage 1, stages 2-3, stage 4
};

VariationalSmoother::VariationalSmoother(MomentSystem system, TimeGrid grid, const ObservationSet& obs,
                                         GaussianObservationModel obs_model, Interpolation interpolation,
                                         int substeps)
    : system_(std::move(system)),
      grid_(grid),
      obs_(snap_observations(grid, obs)),
      obs_model_(std::move(obs_model)),
      interpolation_(interpolation),
      substeps_(substeps) {
  if (obs_model_.species() != system_.species())
    throw DomainError("observation weights do not match the species count");
  if (!obs_.empty() && !(obs_model_.variance() > 0.0))
    throw DomainError("smoothing needs a positive observation variance");
  if (substeps_ < 1) throw DomainError("substeps must be at least 1");
}

void VariationalSmoother::check_lambda(const ScalingFactors& lambda) const {
  if (lambda.classes() != system_.class_count() || lambda.points() != grid_.points())
    throw DomainError("scaling factors do not match the grid and class count");
  if (!lambda.values.allFinite() || (lambda.values.array() <= 0.0).any())
    throw DomainError("scaling factors must be positive and finite");
}

ClassVector VariationalSmoother::lambda_at(const ScalingFactors& lambda, int n, double theta) const {
  if (interpolation_ == Interpolation::kPiecewiseConstant || theta == 0.0) return lambda.values.col(n);
  return (1.0 - theta) * lambda.values.col(n) + theta * lambda.values.col(n + 1);
}

PsiVector VariationalSmoother::integrate_interval(const ScalingFactors& lambda, int n, const PsiVector& y0,
                                                  double* cost, IntervalTrace* trace, int* clamps) const {
  const int s = substeps_;
  const double h = grid_.step() / s;
  auto q = [&](const ClassVector& a, const PsiVector& y) {
    const ClassVector phi = system_.natural_moments(y);
    double acc = 0.0;
    for (int i = 0; i < system_.class_count(); ++i) acc += phi[i] * kl_density(a[i]);
    return acc;
  };
  if (trace) {
    trace->states.resize(static_cast<std::size_t>(s));
    trace->theta.resize(static_cast<std::size_t>(s));
  }
  PsiVector y = y0;
  for (int j = 0; j < s; ++j) {
    const std::array<double, 3> th{double(j) / s, (j + 0.5) / s, double(j + 1) / s};
    const ClassVector a1 = lambda_at(lambda, n, th[0]), a2 = lambda_at(lambda, n, th[1]),
                      a4 = lambda_at(lambda, n, th[2]);
    const PsiVector k1 = system_.drift(a1, y, clamps);
    const PsiVector y2 = y + 0.5 * h * k1;
    const PsiVector k2 = system_.drift(a2, y2, clamps);
    const PsiVector y3 = y + 0.5 * h * k2;
    const PsiVector k3 = system_.drift(a2, y3, clamps);
    const PsiVector y4 = y + h * k3;
    const PsiVector k4 = system_.drift(a4, y4, clamps);
    // Running KL cost carried as an extra RK4 state.
    if (cost) *cost += h / 6.0 * (q(a1, y) + 2.0 * q(a2, y2) + 2.0 * q(a2, y3) + q(a4, y4));
    if (trace) {
      trace->states[static_cast<std::size_t>(j)] = {y, y2, y3, y4};
      trace->theta[static_cast<std::size_t>(j)] = th;
    }
    y += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
  }
  return y;
}

MomentPath VariationalSmoother::forward_sweep(const ScalingFactors& lambda) const {
  check_lambda(lambda);
  const int N = grid_.steps();
  MomentPath path;
  path.psi.resize(system_.psi_dim(), N + 1);
  PsiVector y = system_.initial_psi();
  path.psi.col(0) = y;
  for (int n = 0; n < N; ++n) {
    y = integrate_interval(lambda, n, y, nullptr, nullptr, &path.closure_clamps);
    if (!y.allFinite()) throw IntegrationFailure("non-finite moment state at t = " + std::to_string(grid_.time(n + 1)));
    if (system_.project(y)) {
      ++path.projections;
      path.projected.push_back(n + 1);
    }
    path.psi.col(n + 1) = y;
  }
  return path;
}

Eigen::MatrixXd VariationalSmoother::natural_moments(const MomentPath& path) const {
  Eigen::MatrixXd phi(system_.class_count(), path.psi.cols());
  for (long n = 0; n < path.psi.cols(); ++n) phi.col(n) = system_.natural_moments(path.psi.col(n));
  return phi;
}

double VariationalSmoother::lambda_weight(int n) const {
  if (interpolation_ == Interpolation::kLinear) return grid_.weight(n);
  return n < grid_.steps() ? grid_.step() : 0.0;
}

PsiMatrix VariationalSmoother::projection_jacobian(const PsiVector& y) const {
  // Central differences; the projection is piecewise smooth and y sits strictly inside one piece.
  const int n = system_.psi_dim();
  PsiMatrix jac(n, n);
  for (int j = 0; j < n; ++j) {
    const double eps = 1e-7 * std::max(1.0, std::abs(y[j]));
    PsiVector up = y, down = y;
    up[j] += eps;
    down[j] -= eps;
    system_.project(up);
    system_.project(down);
    jac.col(j) = (up - down) / (2.0 * eps);
  }
  return jac;
}

double VariationalSmoother::objective(const ScalingFactors& lambda, const MomentPath& path) const {
  check_lambda(lambda);
  double kl = 0.0;
  for (int n = 0; n < grid_.steps(); ++n) integrate_interval(lambda, n, path.psi.col(n), &kl, nullptr, nullptr);
  double fit = 0.0;
  for (const auto& o : obs_) fit += expected_loglik(obs_model_, system_.layout(), path.psi.col(o.index), o.value);
  return kl - fit;
}

Costate VariationalSmoother::backward_sweep(const ScalingFactors& lambda, const MomentPath& path) const {
  check_lambda(lambda);
  const int N = grid_.steps();
  const int n_psi = system_.psi_dim();
  const int r = system_.class_count();
  const double h = grid_.step() / substeps_;
  Costate eta;
  eta.left = Eigen::MatrixXd::Zero(n_psi, N + 1);
  eta.right = Eigen::MatrixXd::Zero(n_psi, N + 1);
  eta.lambda_adjoint = Eigen::MatrixXd::Zero(r, N + 1);
  for (const auto& o : obs_) {
    eta.left.col(o.index) += dF_dpsi(obs_model_, system_.layout(), path.psi.col(o.index), o.value);
    if (eta.jump_indices.empty() || eta.jump_indices.back() != o.index) eta.jump_indices.push_back(o.index);
  }

  // Adjoint of one stage: drift VJP plus the running-cost term weighted by `cw`.
  PsiVector yb;
  ClassVector lb;
  auto stage = [&](const ClassVector& a, const PsiVector& y, const PsiVector& kb, double cw, ClassVector& lam_bar) {
    system_.drift_vjp(a, y, kb, yb, lb);
    const ClassVector phi = system_.natural_moments(y);
    const ClassByPsi jac = system_.natural_moments_jacobian(y);
    ClassVector l(r);
    for (int i = 0; i < r; ++i) {
      l[i] = kl_density(a[i]);
      lb[i] += cw * phi[i] * std::log(a[i]);
    }
    yb.noalias() += cw * (jac.transpose() * l);
    lam_bar = lb;
    return yb;
  };
  auto spread = [&](int n, double theta, const ClassVector& g) {
    if (interpolation_ == Interpolation::kPiecewiseConstant || theta == 0.0) {
      eta.lambda_adjoint.col(n) += g;
    } else {
      eta.lambda_adjoint.col(n) += (1.0 - theta) * g;
      eta.lambda_adjoint.col(n + 1) += theta * g;
    }
  };

  PsiVector bar = -eta.left.col(N);
  IntervalTrace tr;
  ClassVector lb1, lb2, lb3, lb4;
  PsiVector kb1, kb2, kb3, kb4;
  auto projected = path.projected.rbegin();
  for (int n = N - 1; n >= 0; --n) {
    const PsiVector end = integrate_interval(lambda, n, path.psi.col(n), nullptr, &tr, nullptr);
    if (projected != path.projected.rend() && *projected == n + 1) {
      bar = projection_jacobian(end).transpose() * bar;
      ++projected;
    }
    for (int j = substeps_ - 1; j >= 0; --j) {
      const auto& st = tr.states[static_cast<std::size_t>(j)];
      const auto& th = tr.theta[static_cast<std::size_t>(j)];
      const ClassVector a1 = lambda_at(lambda, n, th[0]), a2 = lambda_at(lambda, n, th[1]),
                        a4 = lambda_at(lambda, n, th[2]);
      kb1 = (h / 6.0) * bar;
      kb2 = (h / 3.0) * bar;
      kb3 = kb2;
      kb4 = kb1;
      PsiVector out = bar;
      PsiVector b = stage(a4, st[3], kb4, h / 6.0, lb4);
      out += b;
      kb3 += h * b;
      b = stage(a2, st[2], kb3, h / 3.0, lb3);
      out += b;
      kb2 += 0.5 * h * b;
      b = stage(a2, st[1], kb2, h / 3.0, lb2);
      out += b;
      kb1 += 0.5 * h * b;
      out += stage(a1, st[0], kb1, h / 6.0, lb1);
      spread(n, th[0], lb1);
      spread(n, th[1], lb2 + lb3);
      spread(n, th[2], lb4);
      bar = out;
    }
    if (!bar.allFinite()) throw IntegrationFailure("non-finite costate at t = " + std::to_string(grid_.time(n)));
    eta.right.col(n) = -bar;
    eta.left.col(n) += eta.right.col(n);
    bar = -eta.left.col(n);
  }
  return eta;
}

Eigen::MatrixXd VariationalSmoother::gradient(const ScalingFactors& lambda, const MomentPath& path,
                                              const Costate& eta) const {
  check_lambda(lambda);
  (void)path;
  const int N = grid_.steps();
  if (eta.lambda_adjoint.rows() != system_.class_count() || eta.lambda_adjoint.cols() != N + 1)
    throw DomainError("costate does not match the grid");
  Eigen::MatrixXd g(system_.class_count(), N + 1);
  for (int n = 0; n <= N; ++n) {
    const double w = lambda_weight(n);
    g.col(n) = w > 0.0 ? Eigen::VectorXd(eta.lambda_adjoint.col(n) / w) : Eigen::VectorXd::Zero(g.rows());
  }
  return g;
}

std::pair<Eigen::VectorXd, Eigen::VectorXd> VariationalSmoother::propensity_integrals(const ScalingFactors& lambda,
                                                                                     const Eigen::MatrixXd& psi,
                                                                                     const MomentSystem& unit) const {
  check_lambda(lambda);
  if (unit.class_count() != system_.class_count() || unit.psi_dim() != system_.psi_dim())
    throw DomainError("unit-rate system does not match the smoother's system");
  if (psi.rows() != system_.psi_dim() || psi.cols() != grid_.points()) throw DomainError("moment path does not match the grid");
  const int r = system_.class_count();
  const double h = grid_.step() / substeps_;
  Eigen::VectorXd exposure = Eigen::VectorXd::Zero(r), events = Eigen::VectorXd::Zero(r);
  IntervalTrace tr;
  for (int n = 0; n < grid_.steps(); ++n) {
    integrate_interval(lambda, n, psi.col(n), nullptr, &tr, nullptr);
    for (int j = 0; j < substeps_; ++j) {
      const auto& st = tr.states[static_cast<std::size_t>(j)];
      const auto& th = tr.theta[static_cast<std::size_t>(j)];
      const ClassVector a1 = lambda_at(lambda, n, th[0]), a2 = lambda_at(lambda, n, th[1]),
                        a4 = lambda_at(lambda, n, th[2]);
      const ClassVector e1 = unit.natural_moments(st[0]), e2 = unit.natural_moments(st[1]),
                        e3 = unit.natural_moments(st[2]), e4 = unit.natural_moments(st[3]);
      exposure += (h / 6.0) * (e1 + 2.0 * e2 + 2.0 * e3 + e4);
      events += (h / 6.0) * (e1.cwiseProduct(a1) + 2.0 * (e2 + e3).cwiseProduct(a2) + e4.cwiseProduct(a4));
    }
  }
  return {exposure, events};
}

Eigen::MatrixXd VariationalSmoother::preconditioner(const MomentPath& path) const {
  const Eigen::MatrixXd phi = natural_moments(path);
  Eigen::MatrixXd pre = phi;
  const long last = phi.cols() - 1;
  for (long n = 0; n <= last; ++n) {
    if (n > 0) pre.col(n) = pre.col(n).cwiseMax(phi.col(n - 1));
    if (n < last) pre.col(n) = pre.col(n).cwiseMax(phi.col(n + 1));
  }
  return pre.cwiseMax(kPhiFloor);
}

Eigen::MatrixXd VariationalSmoother::natural_gradient(const ScalingFactors& lambda, const MomentPath& path,
                                                      const Costate& eta) const {
  return precondition(lambda, path, gradient(lambda, path, eta));
}

Eigen::MatrixXd VariationalSmoother::precondition(const ScalingFactors& lambda, const MomentPath& path,
                                                  const Eigen::MatrixXd& gradient) const {
  return lambda.values.cwiseProduct(gradient).cwiseQuotient(preconditioner(path));
}

double VariationalSmoother::directional_derivative(const Eigen::MatrixXd& gradient, const Eigen::MatrixXd& delta) const {
  if (gradient.cols() != grid_.points() || delta.rows() != gradient.rows() || delta.cols() != gradient.cols())
    throw DomainError("gradient and direction shapes differ");
  double acc = 0.0;
  for (int n = 0; n <= grid_.steps(); ++n) acc += lambda_weight(n) * gradient.col(n).dot(delta.col(n));
  return acc;
}

VIResult VariationalSmoother::smooth(const SmoothOptions& options) const {
  if (!(options.step > 0.0) || !(options.backtrack > 0.0 && options.backtrack < 1.0) || !(options.tolerance > 0.0) ||
      options.max_iterations < 1 || options.max_shrinks < 0)
    throw DomainError("invalid smoother options");

  ScalingFactors lambda = options.initial ? *options.initial : ScalingFactors::ones(system_.class_count(), grid_.points());
  check_lambda(lambda);
  lambda.values = lambda.values.cwiseMax(kLambdaFloor);

  MomentPath path = forward_sweep(lambda);
  double value = objective(lambda, path);
  if (!std::isfinite(value)) throw IntegrationFailure("objective is not finite at the initial scaling factors");

  VIResult res{grid_, lambda, {}, {}, {value}};
  res.closure_clamps = path.closure_clamps;
  res.projections = path.projections;

  auto finish = [&](const ScalingFactors& lam, const MomentPath& p, const Eigen::MatrixXd& ng) {
    res.lambda = lam;
    res.psi = p.psi;
    res.phi = natural_moments(p);
    res.gradient_norm = ng.size() ? ng.cwiseAbs().maxCoeff() : 0.0;
  };

  double trial = std::min(options.step, options.max_step);
  for (int iter = 1; iter <= options.max_iterations; ++iter) {
    res.iterations = iter;
    const Costate eta = backward_sweep(lambda, path);
    const Eigen::MatrixXd g = gradient(lambda, path, eta);
    const Eigen::MatrixXd phi = preconditioner(path);
    const Eigen::MatrixXd ng = lambda.values.cwiseProduct(g).cwiseQuotient(phi);

    if (options.method == SmoothingMethod::kForwardBackwardSweep) {
      // Fixed-point iteration on the stationarity condition of lambda.
      ScalingFactors next = lambda;
      for (long n = 0; n < g.cols(); ++n)
        for (long i = 0; i < g.rows(); ++i) {
          const double e = std::clamp(-g(i, n) / phi(i, n), -50.0, 50.0);
          next.values(i, n) = std::max(lambda.values(i, n) * std::exp(e), kLambdaFloor);
        }
      MomentPath p = forward_sweep(next);
      const double v = objective(next, p);
      if (!std::isfinite(v)) throw IntegrationFailure("objective diverged in the forward-backward sweep");
      const double change = std::abs(v - value);
      lambda = std::move(next);
      path = std::move(p);
      value = v;
      res.objective_trace.push_back(v);
      res.closure_clamps += path.closure_clamps;
      res.projections += path.projections;
      if (change < options.tolerance) {
        res.converged = true;
        break;
      }
      continue;
    }

    const double predicted = directional_derivative(g, ng);
    if (!(predicted > 0.0)) {
      res.converged = true;
      finish(lambda, path, ng);
      return res;
    }

    // The update is lambda * (1 - h g / phi); each factor's relative change is clipped separately,
    // which keeps every component moving against its gradient.
    const Eigen::ArrayXXd rel = ng.array() / lambda.values.array();
    const double cap = options.max_relative_change;
    double h = trial;
    bool accepted = false;
    ScalingFactors cand = lambda;
    MomentPath cand_path;
    double cand_value = std::numeric_limits<double>::infinity();
    int shrinks = 0;
    for (; shrinks <= options.max_shrinks; ++shrinks) {
      cand.values = (lambda.values.array() * (1.0 - h * rel).min(1.0 + cap).max(1.0 - cap)).matrix().cwiseMax(kLambdaFloor);
      try {
        cand_path = forward_sweep(cand);
        cand_value = objective(cand, cand_path);
      } catch (const IntegrationFailure&) {
        cand_value = std::numeric_limits<double>::infinity();
      }
      if (cand_value < value) {
        accepted = true;
        break;
      }
      if (shrinks == options.max_shrinks) break;
      h *= options.backtrack;
      ++res.shrink_events;
    }

    if (!accepted) {
      if (trial * predicted < options.tolerance) {
        res.converged = true;
        finish(lambda, path, ng);
        return res;
      }
      finish(lambda, path, ng);
      res.stalled = true;
      if (options.throw_on_stall)
        throw SmoothingStalled("line search found no descent after " + std::to_string(options.max_shrinks) +
                                   " shrinks at iteration " + std::to_string(iter),
                               res);
      return res;
    }

    const double change = value - cand_value;
    lambda = std::move(cand);
    path = std::move(cand_path);
    value = cand_value;
    res.objective_trace.push_back(value);
    res.closure_clamps += path.closure_clamps;
    res.projections += path.projections;
    trial = shrinks == 0 ? std::min(2.0 * h, options.max_step) : h;
    if (change < options.tolerance) {
      res.converged = true;
      break;
    }
  }

  const Costate eta = backward_sweep(lambda, path);
  finish(lambda, path, natural_gradient(lambda, path, eta));
  return res;
}

VIResult smooth(const MomentSystem& system, const TimeGrid& grid, const ObservationSet& obs,
                const GaussianObservationModel& obs_model, const SmoothOptions& options,
                Interpolation interpolation, int substeps) {
  return VariationalSmoother(system, grid, obs, obs_model, interpolation, substeps).smooth(options);
}

std::vector<VIResult> smooth_batch(const MomentSystem& system, const TimeGrid& grid,
                                   const std::vector<ObservationSet>& observations,
                                   const GaussianObservationModel& obs_model, const SmoothOptions& options,
                                   Interpolation interpolation, int substeps) {
  std::vector<std::optional<VIResult>> out(observations.size());
  std::exception_ptr failure;
  const long n = static_cast<long>(observations.size());
#pragma omp parallel for schedule(dynamic)
  for (long k = 0; k < n; ++k) {
    try {
      out[static_cast<std::size_t>(k)] = smooth(system, grid, observations[static_cast<std::size_t>(k)], obs_model, options,
                                               interpolation, substeps);
    } catch (...) {
#pragma omp critical
      if (!failure) failure = std::current_exception();
    }
  }
  if (failure) std::rethrow_exception(failure);
  std::vector<VIResult> results;
  results.reserve(out.size());
  for (auto& r : out) results.push_back(std::move(*r));
  return results;
}

void write_lambda_csv(std::ostream& out, const VIResult& result, const std::vector<std::string>& class_names) {
  CsvTable table;
  table.header.push_back("time");
  for (int i = 0; i < result.lambda.classes(); ++i)
    table.header.push_back("lambda_" + (static_cast<std::size_t>(i) < class_names.size()
                                            ? class_names[static_cast<std::size_t>(i)]
                                            : std::to_string(i + 1)));
  for (int n = 0; n < result.grid.points(); ++n) {
    std::vector<double> row{result.grid.time(n)};
    for (int i = 0; i < result.lambda.classes(); ++i) row.push_back(result.lambda.values(i, n));
    table.rows.push_back(std::move(row));
  }
  write_csv_table(out, "lambda", table);
}

void write_moments_csv(std::ostream& out, const TimeGrid& grid, const Eigen::MatrixXd& psi,
                       const std::vector<std::string>& species) {
  const MomentLayout layout(static_cast<int>(species.size()));
  if (psi.rows() != layout.dim() || psi.cols() != grid.points()) throw DomainError("moment table shape mismatch");
  CsvTable table;
  table.header.push_back("time");
  for (const auto& s : species) table.header.push_back("mean_" + s);
  for (const auto& s : species) table.header.push_back("sd_" + s);
  for (int n = 0; n < grid.points(); ++n) {
    std::vector<double> row{grid.time(n)};
    const Eigen::MatrixXd cov = layout.covariance(psi.col(n));
    for (int s = 0; s < layout.species(); ++s) row.push_back(psi(layout.mean(s), n));
    for (int s = 0; s < layout.species(); ++s) row.push_back(std::sqrt(std::max(cov(s, s), 0.0)));
    table.rows.push_back(std::move(row));
  }
  write_csv_table(out, "moments", table);
}

void write_objective_csv(std::ostream& out, const VIResult& result) {
  CsvTable table;
  table.header = {"iteration", "objective"};
  for (std::size_t k = 0; k < result.objective_trace.size(); ++k)
    table.rows.push_back({static_cast<double>(k), result.objective_trace[k]});
  write_csv_table(out, "objective", table);
}

nlohmann::json summary_json(const VIResult& result) {
  return {{"tool_version", kToolVersion},
          {"converged", result.converged},
          {"stalled", result.stalled},
          {"iterations", result.iterations},
          {"objective", result.objective()},
          {"shrink_events", result.shrink_events},
          {"closure_clamps", result.closure_clamps},
          {"projections", result.projections},
          {"gradient_sup_norm", result.gradient_norm},
          {"grid", {{"horizon", result.grid.horizon()}, {"step", result.grid.step()}, {"points", result.grid.points()}}}};
}

}  // namespace mbvi
