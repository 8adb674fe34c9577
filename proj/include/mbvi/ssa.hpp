#pragma once

#include "mbvi/model.hpp"
#include "mbvi/obsmodel.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <iosfwd>
#include <random>
#include <vector>

namespace mbvi {

using Rng = std::mt19937_64;

/// Independent generator for (seed, stream); streams split one seed into reproducible substreams.
Rng make_rng(std::uint64_t seed, std::uint64_t stream = 0);

/// Piecewise-constant, right-continuous sample path. times[0] == 0 carries the initial state.
struct Trajectory {
  std::vector<double> times;
  std::vector<State> states;
  double horizon = 0.0;

  std::size_t jumps() const { return times.empty() ? 0 : times.size() - 1; }
  const State& state_at(double t) const;
};

/// Scalar observations y_k at times t_1 < ... < t_n.
struct ObservationSet {
  std::vector<double> times;
  std::vector<double> values;

  std::size_t size() const { return times.size(); }
  bool empty() const { return times.empty(); }
  /// Throws DomainError unless times are strictly increasing inside (0, horizon].
  void validate(double horizon) const;
};

inline constexpr std::uint64_t kDefaultMaxEvents = 10'000'000;

/// Gillespie direct method. Throws SimulationAborted once `max_events` jumps occurred.
Trajectory simulate(const PopulationModel& model, double horizon, std::uint64_t seed,
                    std::uint64_t max_events = kDefaultMaxEvents);

/// One trajectory per seed; the batch is spread over OpenMP threads.
std::vector<Trajectory> simulate_batch(const PopulationModel& model, double horizon,
                                       const std::vector<std::uint64_t>& seeds,
                                       std::uint64_t max_events = kDefaultMaxEvents);

/// y_k = a . x(t_k) + eps_k, eps_k ~ N(0, sigma^2) i.i.d.
ObservationSet observe(const Trajectory& trajectory, const std::vector<double>& times,
                       const GaussianObservationModel& obs, std::uint64_t seed);

/// Evenly spaced times t_k = k T / n, k = 1..n.
std::vector<double> uniform_times(double horizon, int count);

void write_csv(std::ostream& out, const Trajectory& trajectory, const std::vector<std::string>& species);
void write_csv(std::ostream& out, const ObservationSet& obs);
ObservationSet read_observations_csv(std::istream& in);

nlohmann::json to_json(const Trajectory& trajectory);
nlohmann::json to_json(const ObservationSet& obs);
Trajectory trajectory_from_json(const nlohmann::json& j);
ObservationSet observations_from_json(const nlohmann::json& j);

}  // namespace mbvi
