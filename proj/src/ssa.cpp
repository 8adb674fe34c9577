#include "mbvi/ssa.hpp"

#include "mbvi/error.hpp"
#include "mbvi/io.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>

namespace mbvi {

Rng make_rng(std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32), 0x6d627669u};
  return Rng(seq);
}

const State& Trajectory::state_at(double t) const {
  if (t < 0.0 || t > horizon) throw DomainError("time " + std::to_string(t) + " outside the trajectory horizon");
  // last jump time <= t
  auto it = std::upper_bound(times.begin(), times.end(), t);
  return states[static_cast<std::size_t>(it - times.begin()) - 1];
}

void ObservationSet::validate(double horizon) const {
  if (times.size() != values.size()) throw DomainError("observation times and values differ in length");
  for (std::size_t k = 0; k < times.size(); ++k) {
    if (!(times[k] > 0.0) || times[k] > horizon)
      throw DomainError("observation time " + std::to_string(times[k]) + " outside (0, T]");
    if (k > 0 && !(times[k] > times[k - 1])) throw DomainError("observation times must be strictly increasing");
    if (!std::isfinite(values[k])) throw DomainError("observation values must be finite");
  }
}

Trajectory simulate(const PopulationModel& model, double horizon, std::uint64_t seed, std::uint64_t max_events) {
  if (!(horizon > 0.0)) throw DomainError("simulation horizon must be positive");
  Rng rng = make_rng(seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);

  Trajectory traj;
  traj.horizon = horizon;
  State x = model.initial_state();
  traj.times.push_back(0.0);
  traj.states.push_back(x);

  const int r = model.reaction_count();
  std::vector<double> a(static_cast<std::size_t>(r));
  double t = 0.0;
  std::uint64_t events = 0;
  while (true) {
    double total = 0.0;
    for (int i = 0; i < r; ++i) {
      const auto& rx = model.reaction(i);
      a[static_cast<std::size_t>(i)] = rx.rate * rx.propensity.evaluate(x);
      total += a[static_cast<std::size_t>(i)];
    }
    if (!std::isfinite(total)) throw SimulationAborted("propensity overflow at t = " + std::to_string(t));
    if (total <= 0.0) break;
    t += -std::log1p(-unif(rng)) / total;
    if (t > horizon) break;
    double u = unif(rng) * total;
    int chosen = r - 1;
    for (int i = 0; i < r; ++i) {
      u -= a[static_cast<std::size_t>(i)];
      if (u < 0.0) {
        chosen = i;
        break;
      }
    }
    // guard against rounding picking a zero-propensity channel
    while (a[static_cast<std::size_t>(chosen)] <= 0.0) --chosen;
    const auto& v = model.reaction(chosen).change;
    for (std::size_t s = 0; s < x.size(); ++s) x[s] += v[s];
    traj.times.push_back(t);
    traj.states.push_back(x);
    if (++events >= max_events)
      throw SimulationAborted("event cap of " + std::to_string(max_events) + " reached at t = " + std::to_string(t));
  }
  return traj;
}

std::vector<Trajectory> simulate_batch(const PopulationModel& model, double horizon,
                                       const std::vector<std::uint64_t>& seeds, std::uint64_t max_events) {
  std::vector<Trajectory> out(seeds.size());
  std::exception_ptr failure;
  const long n = static_cast<long>(seeds.size());
#pragma omp parallel for schedule(dynamic)
  for (long i = 0; i < n; ++i) {
    try {
      out[static_cast<std::size_t>(i)] = simulate(model, horizon, seeds[static_cast<std::size_t>(i)], max_events);
    } catch (...) {
#pragma omp critical
      if (!failure) failure = std::current_exception();
    }
  }
  if (failure) std::rethrow_exception(failure);
  return out;
}

ObservationSet observe(const Trajectory& trajectory, const std::vector<double>& times,
                       const GaussianObservationModel& obs, std::uint64_t seed) {
  Rng rng = make_rng(seed, 1);
  std::normal_distribution<double> noise(0.0, 1.0);
  const double sd = std::sqrt(obs.variance());
  ObservationSet out;
  for (double t : times) {
    if (t < 0.0 || t > trajectory.horizon)
      throw DomainError("observation time " + std::to_string(t) + " outside [0, T]");
    const double z = noise(rng);
    out.times.push_back(t);
    out.values.push_back(obs.project(trajectory.state_at(t)) + sd * z);
  }
  return out;
}

std::vector<double> uniform_times(double horizon, int count) {
  std::vector<double> t;
  for (int k = 1; k <= count; ++k) t.push_back(horizon * k / count);
  return t;
}

void write_csv(std::ostream& out, const Trajectory& trajectory, const std::vector<std::string>& species) {
  CsvTable table;
  table.header.push_back("time");
  table.header.insert(table.header.end(), species.begin(), species.end());
  for (std::size_t i = 0; i < trajectory.times.size(); ++i) {
    std::vector<double> row{trajectory.times[i]};
    for (int x : trajectory.states[i]) row.push_back(x);
    table.rows.push_back(std::move(row));
  }
  write_csv_table(out, "trajectory", table);
}

void write_csv(std::ostream& out, const ObservationSet& obs) {
  CsvTable table;
  table.header = {"time", "value"};
  for (std::size_t k = 0; k < obs.size(); ++k) table.rows.push_back({obs.times[k], obs.values[k]});
  write_csv_table(out, "observations", table);
}

ObservationSet read_observations_csv(std::istream& in) {
  const auto table = read_csv_table(in);
  const int t = table.column("time");
  const int v = table.column("value");
  ObservationSet obs;
  for (const auto& row : table.rows) {
    obs.times.push_back(row[static_cast<std::size_t>(t)]);
    obs.values.push_back(row[static_cast<std::size_t>(v)]);
  }
  return obs;
}

nlohmann::json to_json(const Trajectory& trajectory) {
  return {{"horizon", trajectory.horizon}, {"times", trajectory.times}, {"states", trajectory.states}};
}

nlohmann::json to_json(const ObservationSet& obs) { return {{"times", obs.times}, {"values", obs.values}}; }

Trajectory trajectory_from_json(const nlohmann::json& j) {
  Trajectory t;
  t.horizon = j.at("horizon").get<double>();
  t.times = j.at("times").get<std::vector<double>>();
  t.states = j.at("states").get<std::vector<State>>();
  if (t.times.size() != t.states.size()) throw ConfigError("trajectory times and states differ in length");
  return t;
}

ObservationSet observations_from_json(const nlohmann::json& j) {
  ObservationSet o;
  o.times = j.at("times").get<std::vector<double>>();
  o.values = j.at("values").get<std::vector<double>>();
  return o;
}

}  // namespace mbvi
