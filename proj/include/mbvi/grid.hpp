#pragma once

#include "mbvi/ssa.hpp"

#include <vector>

namespace mbvi {

/// Uniform grid 0 = s_0 < ... < s_N = T. The requested step is shrunk so that N steps fit exactly.
class TimeGrid {
 public:
  TimeGrid(double horizon, double step);

  int points() const { return steps_ + 1; }
  int steps() const { return steps_; }
  double step() const { return step_; }
  double horizon() const { return horizon_; }
  double time(int n) const { return n == steps_ ? horizon_ : n * step_; }
  std::vector<double> times() const;
  /// Trapezoidal quadrature weight of grid point n.
  double weight(int n) const { return (n == 0 || n == steps_) ? 0.5 * step_ : step_; }
  /// Nearest grid index; throws DomainError outside [0, T].
  int snap(double t) const;

 private:
  double horizon_;
  double step_;
  int steps_;
};

struct SnappedObservation {
  int index = 0;
  double time = 0.0;
  double value = 0.0;
};

/// Observations mapped to their nearest grid points (displacement at most step/2).
std::vector<SnappedObservation> snap_observations(const TimeGrid& grid, const ObservationSet& obs);

}  // namespace mbvi
