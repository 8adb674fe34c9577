#include "mbvi/grid.hpp"

#include "mbvi/error.hpp"

#include <cmath>

namespace mbvi {

TimeGrid::TimeGrid(double horizon, double step) : horizon_(horizon) {
  if (!(horizon > 0.0) || !std::isfinite(horizon)) throw DomainError("grid horizon must be positive");
  if (!(step > 0.0) || !std::isfinite(step)) throw DomainError("grid step must be positive");
  steps_ = static_cast<int>(std::ceil(horizon / step - 1e-9));
  if (steps_ < 1) steps_ = 1;
  step_ = horizon / steps_;
}

std::vector<double> TimeGrid::times() const {
  std::vector<double> t(static_cast<std::size_t>(points()));
  for (int n = 0; n < points(); ++n) t[static_cast<std::size_t>(n)] = time(n);
  return t;
}

int TimeGrid::snap(double t) const {
  if (t < 0.0 || t > horizon_ * (1.0 + 1e-12)) throw DomainError("time " + std::to_string(t) + " outside the grid");
  const int n = static_cast<int>(std::lround(t / step_));
  return std::min(n, steps_);
}

std::vector<SnappedObservation> snap_observations(const TimeGrid& grid, const ObservationSet& obs) {
  obs.validate(grid.horizon() * (1.0 + 1e-12));
  std::vector<SnappedObservation> out;
  out.reserve(obs.size());
  for (std::size_t k = 0; k < obs.size(); ++k) out.push_back({grid.snap(obs.times[k]), obs.times[k], obs.values[k]});
  return out;
}

}  // namespace mbvi
