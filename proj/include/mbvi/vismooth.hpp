#pragma once

#include "mbvi/error.hpp"
#include "mbvi/grid.hpp"
#include "mbvi/moments.hpp"
#include "mbvi/obsmodel.hpp"
#include "mbvi/ssa.hpp"

#include <nlohmann/json.hpp>

#include <Eigen/Dense>

#include <iosfwd>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace mbvi {

inline constexpr double kLambdaFloor = 1e-8;
inline constexpr double kPhiFloor = 1e-12;

enum class Interpolation { kLinear, kPiecewiseConstant };
enum class SmoothingMethod { kNaturalGradient, kForwardBackwardSweep };

/// Per-class scaling factors lambda_i at the grid points (classes x points).
struct ScalingFactors {
  Eigen::MatrixXd values;

  static ScalingFactors ones(int classes, int points) { return {Eigen::MatrixXd::Ones(classes, points)}; }
  int classes() const { return static_cast<int>(values.rows()); }
  int points() const { return static_cast<int>(values.cols()); }
};

/// Moment trajectory psi at the grid points (psi_dim x points) and integration diagnostics.
struct MomentPath {
  Eigen::MatrixXd psi;
  int closure_clamps = 0;
  int projections = 0;
  std::vector<int> projected;  // grid indices whose state was projected after the RK4 step
};

/// Costate at the grid points. `right` holds eta(s_n+) and `left` eta(s_n-); they differ by
/// dF/dpsi at observation indices only. right.col(N) == 0.
struct Costate {
  Eigen::MatrixXd left;
  Eigen::MatrixXd right;
  std::vector<int> jump_indices;
  Eigen::MatrixXd lambda_adjoint;  // dJ/dlambda at the grid points, classes x points
};

struct SmoothOptions {
  std::optional<ScalingFactors> initial;
  double step = 0.25;           // h0
  double max_step = 1.0;        // accepted steps may grow the trial step up to this value
  double max_relative_change = 0.5;  // per-iteration cap on |delta lambda| / lambda
  double backtrack = 0.5;
  int max_shrinks = 30;
  double tolerance = 1e-6;
  int max_iterations = 500;
  SmoothingMethod method = SmoothingMethod::kNaturalGradient;
  bool throw_on_stall = true;
};

struct VIResult {
  TimeGrid grid;
  ScalingFactors lambda;
  Eigen::MatrixXd psi;  // psi_dim x points
  Eigen::MatrixXd phi;  // classes x points
  std::vector<double> objective_trace;
  bool converged = false;
  bool stalled = false;
  int iterations = 0;
  int shrink_events = 0;
  int closure_clamps = 0;
  int projections = 0;
  double gradient_norm = 0.0;  // sup-norm of the natural gradient at the returned lambda

  double objective() const { return objective_trace.empty() ? 0.0 : objective_trace.back(); }
};

/// Thrown when the line search finds no decrease; carries the best iterate.
class SmoothingStalled : public Error {
 public:
  SmoothingStalled(const std::string& what, VIResult best) : Error(what), best_(std::move(best)) {}
  const VIResult& best() const { return best_; }

 private:
  VIResult best_;
};

/// Moment-based variational smoother for one observation set.
///
/// The objective is
///   J[lambda] = int sum_i phi_i(psi) (1 - lambda_i + lambda_i log lambda_i) dt - sum_k E[log p(y_k | X(t_k))]
/// with psi the RK4 solution of psi' = f(lambda, psi) on the grid. The integral is carried along as an
/// extra RK4 state, so every stage that uses a scaling factor also pays for it. Gradients are the exact
/// derivatives of this discretised objective.
class VariationalSmoother {
 public:
  /// `substeps` RK4 steps are taken per grid interval; the scaling factors stay on the grid.
  VariationalSmoother(MomentSystem system, TimeGrid grid, const ObservationSet& obs,
                      GaussianObservationModel obs_model, Interpolation interpolation = Interpolation::kLinear,
                      int substeps = 1);

  const MomentSystem& system() const { return system_; }
  const TimeGrid& grid() const { return grid_; }
  const std::vector<SnappedObservation>& observations() const { return obs_; }
  Interpolation interpolation() const { return interpolation_; }
  int substeps() const { return substeps_; }

  MomentPath forward_sweep(const ScalingFactors& lambda) const;
  Costate backward_sweep(const ScalingFactors& lambda, const MomentPath& path) const;
  double objective(const ScalingFactors& lambda, const MomentPath& path) const;
  Eigen::MatrixXd natural_moments(const MomentPath& path) const;

  /// dJ/dlambda(s_n) divided by the weight of lambda(s_n) in the time integral: a density approximating
  /// phi_i log lambda_i - sum_j eta_j df_j/dlambda_i.
  Eigen::MatrixXd gradient(const ScalingFactors& lambda, const MomentPath& path, const Costate& eta) const;
  /// lambda_i / phi_i times the gradient, with phi_i taken as the largest natural moment over the
  /// point and its grid neighbours (and at least kPhiFloor). The discrete gradient at s_n collects
  /// contributions from both adjacent RK4 steps, so a vanishing phi at s_n alone (e.g. X(0) = 0)
  /// would otherwise make the preconditioner singular.
  Eigen::MatrixXd natural_gradient(const ScalingFactors& lambda, const MomentPath& path, const Costate& eta) const;
  Eigen::MatrixXd precondition(const ScalingFactors& lambda, const MomentPath& path, const Eigen::MatrixXd& gradient) const;
  /// The phi values used by natural_gradient (classes x points).
  Eigen::MatrixXd preconditioner(const MomentPath& path) const;
  /// sum_n w_n <gradient_n, delta_n>, the derivative of J along delta.
  double directional_derivative(const Eigen::MatrixXd& gradient, const Eigen::MatrixXd& delta) const;

  VIResult smooth(const SmoothOptions& options = {}) const;

  /// Time integrals of E[h_i(X)] and E[h_i(X)] lambda_i with the same RK4 stage quadrature that the
  /// objective uses. `unit` must be the moment system of the same network with all rates equal to one.
  std::pair<Eigen::VectorXd, Eigen::VectorXd> propensity_integrals(const ScalingFactors& lambda,
                                                                   const Eigen::MatrixXd& psi,
                                                                   const MomentSystem& unit) const;

 private:
  void check_lambda(const ScalingFactors& lambda) const;
  double lambda_weight(int n) const;
  PsiMatrix projection_jacobian(const PsiVector& y) const;
  struct IntervalTrace;
  /// Integrates grid interval n from y; returns the unprojected end state and adds the KL cost to *cost.
  PsiVector integrate_interval(const ScalingFactors& lambda, int n, const PsiVector& y, double* cost,
                               IntervalTrace* trace, int* clamps) const;
  ClassVector lambda_at(const ScalingFactors& lambda, int n, double theta) const;

  MomentSystem system_;
  TimeGrid grid_;
  std::vector<SnappedObservation> obs_;
  GaussianObservationModel obs_model_;
  Interpolation interpolation_;
  int substeps_;
};

VIResult smooth(const MomentSystem& system, const TimeGrid& grid, const ObservationSet& obs,
                const GaussianObservationModel& obs_model, const SmoothOptions& options = {},
                Interpolation interpolation = Interpolation::kLinear, int substeps = 1);

/// Independent smoothing runs spread over OpenMP threads; rethrows the first failure.
std::vector<VIResult> smooth_batch(const MomentSystem& system, const TimeGrid& grid,
                                   const std::vector<ObservationSet>& observations,
                                   const GaussianObservationModel& obs_model, const SmoothOptions& options = {},
                                   Interpolation interpolation = Interpolation::kLinear, int substeps = 1);

/// CSV writers: (time, lambda_<class>...), (time, mean_<s>..., sd_<s>...), (iteration, objective).
void write_lambda_csv(std::ostream& out, const VIResult& result, const std::vector<std::string>& class_names);
void write_moments_csv(std::ostream& out, const TimeGrid& grid, const Eigen::MatrixXd& psi,
                       const std::vector<std::string>& species);
void write_objective_csv(std::ostream& out, const VIResult& result);
nlohmann::json summary_json(const VIResult& result);

}  // namespace mbvi
