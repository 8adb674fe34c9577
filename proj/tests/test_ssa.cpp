#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "mbvi/error.hpp"
#include "mbvi/ssa.hpp"
#include "oracles.hpp"

#include <set>
#include <sstream>

using namespace mbvi;

namespace {

std::string csv_of(const Trajectory& t, const PopulationModel& m) {
  std::ostringstream s;
  write_csv(s, t, m.species());
  return s.str();
}

}  // namespace

TEST_CASE("zero rates give a constant path") {
  const auto m = models::birth_death(0.0, 0.0, 4);
  const Trajectory t = simulate(m, 10.0, 1);
  CHECK(t.jumps() == 0);
  CHECK(t.state_at(7.0) == State{4});
}

TEST_CASE("every jump is a change vector of the model") {
  const std::vector<double> ge{0.5, 0.2, 3, 1, 2, 0.3};
  const std::vector<double> ppr{0.5, 0.025, 0.025, 0.5};
  for (const auto& m : {models::birth_death(5, 0.1), models::gene_expression(ge), models::predator_prey(ppr, {20, 10})}) {
    std::set<std::vector<int>> changes;
    for (const auto& r : m.reactions()) changes.insert(r.change);
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      const Trajectory t = simulate(m, 10.0, seed);
      CHECK(t.times.front() == 0.0);
      CHECK(t.states.front() == m.initial_state());
      for (std::size_t k = 1; k < t.states.size(); ++k) {
        CHECK(t.times[k] > t.times[k - 1]);
        CHECK(t.times[k] <= 10.0);
        std::vector<int> d(t.states[k].size());
        for (std::size_t s = 0; s < d.size(); ++s) d[s] = t.states[k][s] - t.states[k - 1][s];
        CHECK(changes.count(d) == 1);
        m.check_state(t.states[k]);
      }
    }
  }
}

TEST_CASE("reproducible given the seed") {
  const auto m = models::birth_death(5, 0.1);
  CHECK(csv_of(simulate(m, 50.0, 7), m) == csv_of(simulate(m, 50.0, 7), m));
  CHECK(csv_of(simulate(m, 50.0, 7), m) != csv_of(simulate(m, 50.0, 8), m));
  const std::vector<std::uint64_t> seeds{3, 4, 5};
  const auto batch = simulate_batch(m, 20.0, seeds);
  for (std::size_t k = 0; k < seeds.size(); ++k) CHECK(csv_of(batch[k], m) == csv_of(simulate(m, 20.0, seeds[k]), m));
}

TEST_CASE("birth-death prior mean and stationary level") {
  const double c1 = 5, c2 = 0.1;
  const auto m = models::birth_death(c1, c2);
  const int paths = 1000;
  double tavg = 0.0, s5 = 0.0, s5sq = 0.0;
  for (int k = 0; k < paths; ++k) {
    const Trajectory t = simulate(m, 100.0, static_cast<std::uint64_t>(k));
    // Time average over [50, 100] of the piecewise-constant path.
    double acc = 0.0;
    for (std::size_t j = 0; j < t.times.size(); ++j) {
      const double a = std::max(t.times[j], 50.0);
      const double b = j + 1 < t.times.size() ? t.times[j + 1] : 100.0;
      if (b > a) acc += (b - a) * t.states[j][0];
    }
    tavg += acc / 50.0 / paths;
    const double x5 = t.state_at(5.0)[0];
    s5 += x5;
    s5sq += x5 * x5;
  }
  CHECK(std::abs(tavg - c1 / c2) < 2.0);
  const double mean5 = s5 / paths, se5 = std::sqrt((s5sq / paths - mean5 * mean5) / paths);
  CHECK(std::abs(mean5 - oracle::bd_prior_mean(c1, c2, 5.0)) < 3.0 * se5);
}

TEST_CASE("event cap aborts exploding runs") {
  const auto m = models::pure_birth(1000.0);
  CHECK_THROWS_AS(simulate(m, 100.0, 1, 1000), SimulationAborted);
}

TEST_CASE("observations") {
  const auto m = models::birth_death(5, 0.1);
  const Trajectory t = simulate(m, 20.0, 3);
  const std::vector<double> times = uniform_times(20.0, 10);
  REQUIRE(times.size() == 10);
  CHECK(times.back() == doctest::Approx(20.0));

  const ObservationSet exact = observe(t, times, GaussianObservationModel(Eigen::VectorXd::Ones(1), 0.0), 1);
  for (std::size_t k = 0; k < times.size(); ++k) CHECK(exact.values[k] == t.state_at(times[k])[0]);

  CHECK_THROWS_AS(observe(t, {25.0}, GaussianObservationModel(Eigen::VectorXd::Ones(1), 1.0), 1), DomainError);

  // Injected noise has the configured variance.
  const std::vector<double> many = uniform_times(20.0, 10000);
  const ObservationSet noisy = observe(t, many, GaussianObservationModel(Eigen::VectorXd::Ones(1), 2.5), 9);
  double s = 0.0, s2 = 0.0;
  for (std::size_t k = 0; k < many.size(); ++k) {
    const double e = noisy.values[k] - t.state_at(many[k])[0];
    s += e;
    s2 += e * e;
  }
  const double var = s2 / many.size() - (s / many.size()) * (s / many.size());
  CHECK(std::abs(var / 2.5 - 1.0) < 0.05);
}

TEST_CASE("scaled observation of one species") {
  const std::vector<double> ge{0.5, 0.2, 3, 1, 2, 0.3};
  const auto m = models::gene_expression(ge);
  const Trajectory t = simulate(m, 30.0, 5);
  Eigen::VectorXd a(3);
  a << 0, 0, 1;
  const ObservationSet obs = observe(t, uniform_times(30.0, 6), GaussianObservationModel(a, 0.0), 1);
  for (std::size_t k = 0; k < obs.size(); ++k) CHECK(obs.values[k] == t.state_at(obs.times[k])[2]);
}

TEST_CASE("serialisation round trips") {
  const auto m = models::birth_death(5, 0.1);
  const Trajectory t = simulate(m, 10.0, 2);
  const Trajectory back = trajectory_from_json(to_json(t));
  CHECK(back.times == t.times);
  CHECK(back.states == t.states);
  CHECK(back.horizon == t.horizon);

  const ObservationSet obs = observe(t, uniform_times(10.0, 5), GaussianObservationModel(Eigen::VectorXd::Ones(1), 1.0), 4);
  const ObservationSet j = observations_from_json(to_json(obs));
  CHECK(j.times == obs.times);
  CHECK(j.values == obs.values);
  std::stringstream s;
  write_csv(s, obs);
  const ObservationSet c = read_observations_csv(s);
  CHECK(c.times == obs.times);
  CHECK(c.values == obs.values);
}

TEST_CASE("observation set validation") {
  CHECK_THROWS_AS((ObservationSet{{2.0, 1.0}, {0.0, 0.0}}.validate(5.0)), DomainError);
  CHECK_THROWS_AS((ObservationSet{{0.0}, {0.0}}.validate(5.0)), DomainError);
  CHECK_THROWS_AS((ObservationSet{{6.0}, {0.0}}.validate(5.0)), DomainError);
  CHECK_NOTHROW((ObservationSet{{1.0, 5.0}, {0.0, 0.0}}.validate(5.0)));
}
