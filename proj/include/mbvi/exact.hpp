#pragma once

#include "mbvi/grid.hpp"
#include "mbvi/model.hpp"
#include "mbvi/obsmodel.hpp"
#include "mbvi/ssa.hpp"

#include <Eigen/Dense>
#include <Eigen/SparseCore>

#include <cstddef>
#include <span>
#include <vector>

namespace mbvi {

inline constexpr std::size_t kDefaultMaxStates = 1'000'000;

/// Finite box {0..b_1} x ... x {0..b_d} of a population model. Transitions that would
/// leave the box are dropped from the dynamics (reflecting truncation); the dropped
/// rate is kept as `truncated_outflow` for diagnostics and for the generator matrix.
class TruncatedStateSpace {
 public:
  TruncatedStateSpace(const PopulationModel& model, std::vector<int> bounds,
                      std::size_t max_states = kDefaultMaxStates);

  std::size_t size() const { return size_; }
  int species() const { return static_cast<int>(bounds_.size()); }
  int class_count() const { return classes_; }
  const std::vector<int>& bounds() const { return bounds_; }

  /// Dense index of x, or -1 when x lies outside the box.
  long index(std::span<const int> x) const;
  State state(std::size_t idx) const;
  /// State component s of every enumerated state.
  const std::vector<int>& coordinate(int s) const { return coords_[static_cast<std::size_t>(s)]; }

  /// target(c)[x] is the index of x + v_c or -1; rate(c)[x] = c_c h_c(x) for kept transitions, else 0.
  std::span<const long> target(int c) const { return targets_[static_cast<std::size_t>(c)]; }
  std::span<const double> rate(int c) const { return rates_[static_cast<std::size_t>(c)]; }
  std::span<const double> truncated_outflow() const { return outflow_; }
  /// Sum of kept transition rates out of each state.
  std::span<const double> exit_rate() const { return exit_; }

  /// Incoming transitions in CSR form, used by the gather-style forward kernel.
  std::span<const std::size_t> in_offsets() const { return in_offsets_; }
  std::span<const long> in_source() const { return in_source_; }
  std::span<const int> in_class() const { return in_class_; }

  double max_exit_rate() const { return max_exit_; }

  /// Generator with the truncated outflow on the diagonal: row sums equal -truncated_outflow.
  Eigen::SparseMatrix<double, Eigen::RowMajor> generator() const;

 private:
  std::vector<int> bounds_;
  std::vector<std::size_t> strides_;
  std::size_t size_ = 0;
  int classes_ = 0;
  std::vector<std::vector<int>> coords_;
  std::vector<std::vector<long>> targets_;
  std::vector<std::vector<double>> rates_;
  std::vector<double> outflow_;
  std::vector<double> exit_;
  std::vector<std::size_t> in_offsets_;
  std::vector<long> in_source_;
  std::vector<int> in_class_;
  double max_exit_ = 0.0;
};

TruncatedStateSpace truncate(const PopulationModel& model, std::vector<int> bounds,
                             std::size_t max_states = kDefaultMaxStates);

/// Likelihood p(y_k | x) over enumerated states, attached to a grid index.
/// The true likelihood is values * exp(log_offset); values are kept with max 1.
struct GridLikelihood {
  int index = 0;
  Eigen::VectorXd values;
  double log_offset = 0.0;
};

GridLikelihood gaussian_likelihood(const TruncatedStateSpace& space, const GaussianObservationModel& obs, int index,
                                   double y);
/// 1 where a . x == value, 0 elsewhere (hard constraint).
GridLikelihood indicator_likelihood(const TruncatedStateSpace& space, const Eigen::VectorXd& weights, int index,
                                    double value);

/// Backward function sigma(x, t) on the grid. Stored slices are right-continuous
/// (the likelihood attached to a grid index is not folded into that index) and each
/// is scaled to max 1; the true value is sigma.col(n) * exp(log_scale[n]).
struct BackwardSolution {
  TimeGrid grid;
  Eigen::MatrixXd sigma;  // states x points
  std::vector<double> log_scale;
  std::vector<GridLikelihood> likelihoods;
};

BackwardSolution backward_solve(const TruncatedStateSpace& space, const ObservationSet& obs,
                                const GaussianObservationModel& obs_model, const TimeGrid& grid);
BackwardSolution backward_solve(const TruncatedStateSpace& space, std::vector<GridLikelihood> likelihoods,
                                const TimeGrid& grid);

struct Marginals {
  TimeGrid grid;
  Eigen::MatrixXd prob;  // states x points, each column sums to one
};

/// Point mass at the model's initial state.
Eigen::VectorXd initial_distribution(const TruncatedStateSpace& space, const PopulationModel& model);

/// Smoothing marginals p(x, t | y). Uses the identity p~(x,t) = alpha(x,t) sigma(x,t) / Z, with
/// alpha the filtering solution; this is the solution of the forward equation driven by the
/// posterior rates sigma(y,t)/sigma(x,t) Q(x,y).
Marginals posterior_marginals(const TruncatedStateSpace& space, const Eigen::VectorXd& p0,
                              const BackwardSolution& backward);

/// log p(y_1..y_n) under the truncated chain started from p0.
double log_evidence(const TruncatedStateSpace& space, const Eigen::VectorXd& p0, const BackwardSolution& backward);

/// Prior master-equation solution on the grid.
Marginals prior_marginals(const TruncatedStateSpace& space, const Eigen::VectorXd& p0, const TimeGrid& grid);

/// Packed first and second moments (MomentLayout order), one column per grid point.
Eigen::MatrixXd posterior_moments(const TruncatedStateSpace& space, const Marginals& marginals);
Eigen::VectorXd distribution_moments(const TruncatedStateSpace& space, const Eigen::VectorXd& p);

/// Rates of the posterior process Q~(x, x+v_c, t_n) = sigma(x+v_c)/sigma(x) Q(x, x+v_c) on one grid slice.
std::vector<Eigen::VectorXd> posterior_rates(const TruncatedStateSpace& space, const BackwardSolution& backward, int n);

}  // namespace mbvi
