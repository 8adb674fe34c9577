#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "mbvi/exact.hpp"
#include "mbvi/io.hpp"
#include "mbvi/vismooth.hpp"
#include "oracles.hpp"

#include <random>
#include <sstream>

using namespace mbvi;

namespace {

const std::vector<double> kGene{0.5, 0.2, 3, 1, 2, 0.3};
const std::vector<double> kPredPrey{0.5, 0.025, 0.025, 0.5};
const GaussianObservationModel kUnit(Eigen::VectorXd::Ones(1), 1.0);

GaussianObservationModel observe_last(int d, double variance) {
  Eigen::VectorXd a = Eigen::VectorXd::Zero(d);
  a[d - 1] = 1.0;
  return GaussianObservationModel(a, variance);
}

double objective_at(const VariationalSmoother& vs, const ScalingFactors& l) { return vs.objective(l, vs.forward_sweep(l)); }

}  // namespace

TEST_CASE("unit scaling reproduces the prior mean") {
  const double c1 = 5, c2 = 0.1;
  const TimeGrid grid(10.0, 0.01);
  const VariationalSmoother vs(build_moment_system(models::birth_death(c1, c2)), grid, {}, kUnit);
  const MomentPath p = vs.forward_sweep(ScalingFactors::ones(2, grid.points()));
  for (int n = 0; n < grid.points(); ++n) CHECK(std::abs(p.psi(0, n) - oracle::bd_prior_mean(c1, c2, grid.time(n))) < 1e-6);
  CHECK(vs.objective(ScalingFactors::ones(2, grid.points()), p) == 0.0);
}

TEST_CASE("zero rates keep the moments constant") {
  const TimeGrid grid(5.0, 0.1);
  const VariationalSmoother vs(build_moment_system(models::birth_death(0, 0, 7)), grid, {}, kUnit);
  const MomentPath p = vs.forward_sweep(ScalingFactors::ones(2, grid.points()));
  for (int n = 0; n < grid.points(); ++n) {
    CHECK(p.psi(0, n) == 7.0);
    CHECK(p.psi(1, n) == 49.0);
  }
}

TEST_CASE("analytic posterior scalings give the analytic posterior mean") {
  const double c1 = 5, c2 = 0.1, T = 10;
  const TimeGrid grid(T, 0.0005);
  // Piecewise-constant factors sampled at interval midpoints; lambda_2 diverges at T itself.
  ScalingFactors l = ScalingFactors::ones(2, grid.points());
  for (int n = 0; n < grid.steps(); ++n) {
    const double t = grid.time(n) + 0.5 * grid.step();
    l.values(0, n) = oracle::bd_endpoint_lambda_birth(c2, T, t);
    l.values(1, n) = oracle::bd_endpoint_lambda_death(c2, T, t);
  }
  const VariationalSmoother vs(build_moment_system(models::birth_death(c1, c2)), grid, {}, kUnit,
                               Interpolation::kPiecewiseConstant, 10);
  const MomentPath p = vs.forward_sweep(l);
  double worst = 0.0;
  for (int n = 0; n < grid.steps(); ++n)
    worst = std::max(worst, std::abs(p.psi(0, n) - oracle::bd_endpoint_mean(c1, c2, T, grid.time(n))));
  MESSAGE("max deviation from analytic posterior mean before T: " << worst);
  CHECK(worst < 1e-4);
  // The death scaling is infinite at T, so the last step only converges at first order.
  CHECK(std::abs(p.psi(0, grid.steps())) < 1e-3);
}

TEST_CASE("objective hand value") {
  // One class with phi = 1: a pure-birth process at unit rate.
  const TimeGrid grid(1.0, 0.01);
  const VariationalSmoother vs(build_moment_system(models::pure_birth(1.0)), grid, {}, kUnit);
  ScalingFactors l{Eigen::MatrixXd::Constant(1, grid.points(), 2.0)};
  CHECK(objective_at(vs, l) == doctest::Approx(2.0 * std::log(2.0) - 1.0).epsilon(1e-12));
}

TEST_CASE("no observations: the prior is stationary") {
  for (const auto& m : {models::birth_death(5, 0.1), models::gene_expression(kGene), models::predator_prey(kPredPrey, {20, 10})}) {
    const TimeGrid grid(5.0, 0.05);
    const VariationalSmoother vs(build_moment_system(m), grid, {}, observe_last(m.species_count(), 1.0));
    const ScalingFactors one = ScalingFactors::ones(vs.system().class_count(), grid.points());
    const MomentPath p = vs.forward_sweep(one);
    const Costate eta = vs.backward_sweep(one, p);
    CHECK(eta.left.cwiseAbs().maxCoeff() == 0.0);
    CHECK(eta.right.cwiseAbs().maxCoeff() == 0.0);
    CHECK(vs.natural_gradient(one, p, eta).cwiseAbs().maxCoeff() == 0.0);
    const VIResult r = vs.smooth();
    CHECK(r.converged);
    CHECK(r.iterations <= 2);
    CHECK((r.lambda.values.array() - 1.0).abs().maxCoeff() < 1e-6);
    CHECK(std::abs(r.objective()) < 1e-8);
  }
}

TEST_CASE("costate jumps only at the observation") {
  const TimeGrid grid(10.0, 0.05);
  const VariationalSmoother vs(build_moment_system(models::birth_death(5, 0.1)), grid, ObservationSet{{6.0}, {40.0}}, kUnit);
  const ScalingFactors one = ScalingFactors::ones(2, grid.points());
  const Costate eta = vs.backward_sweep(one, vs.forward_sweep(one));
  REQUIRE(eta.jump_indices.size() == 1);
  CHECK(eta.jump_indices[0] == grid.snap(6.0));
  for (int n = 0; n < grid.points(); ++n) {
    const double jump = (eta.left.col(n) - eta.right.col(n)).cwiseAbs().maxCoeff();
    if (n == grid.snap(6.0)) CHECK(jump > 0.0);
    else CHECK(jump == 0.0);
  }
  CHECK(eta.right.col(grid.steps()).cwiseAbs().maxCoeff() == 0.0);
  // After the observation nothing influences the cost.
  for (int n = grid.snap(6.0) + 1; n < grid.points(); ++n) CHECK(eta.left.col(n).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("adjoint directional derivatives match finite differences") {
  struct Case {
    PopulationModel model;
    ObservationSet obs;
    double variance;
  };
  std::vector<Case> cases{{models::birth_death(5, 0.1), ObservationSet{{2.0, 4.0}, {10.0, 25.0}}, 4.0},
                          {models::gene_expression(kGene), ObservationSet{{1.5, 3.5}, {4.0, 9.0}}, 2.0},
                          {models::predator_prey(kPredPrey, {20, 10}), ObservationSet{{2.0, 4.0}, {15.0, 12.0}}, 4.0}};
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (const auto& c : cases) {
    for (Interpolation ip : {Interpolation::kLinear, Interpolation::kPiecewiseConstant}) {
      const TimeGrid grid(5.0, 0.05);
      const VariationalSmoother vs(build_moment_system(c.model), grid, c.obs,
                                   observe_last(c.model.species_count(), c.variance), ip, 2);
      const int r = vs.system().class_count();
      for (int trial = 0; trial < 20; ++trial) {
        // Smooth random lambda in [0.5, 2] and a smooth random direction.
        ScalingFactors l = ScalingFactors::ones(r, grid.points());
        Eigen::MatrixXd delta(r, grid.points());
        for (int i = 0; i < r; ++i) {
          const double a = u(rng), b = u(rng), f = 1 + 3 * u(rng), ph = 6.3 * u(rng), g = 1 + 3 * u(rng);
          for (int n = 0; n < grid.points(); ++n) {
            const double t = grid.time(n) / grid.horizon();
            l.values(i, n) = std::exp(0.6 * (a - 0.5) + 0.3 * std::sin(f * t + ph));
            delta(i, n) = (b - 0.5) + std::cos(g * t + ph);
          }
        }
        const MomentPath p = vs.forward_sweep(l);
        const double dd = vs.directional_derivative(vs.gradient(l, p, vs.backward_sweep(l, p)), delta);
        const double eps = 1e-5;
        ScalingFactors up = l, down = l;
        up.values += eps * delta;
        down.values -= eps * delta;
        const double fd = (objective_at(vs, up) - objective_at(vs, down)) / (2 * eps);
        CHECK(oracle::rel_err(dd, fd, 1e-8) < 1e-3);
      }
    }
  }
}

TEST_CASE("natural gradient is the preconditioned plain gradient") {
  const TimeGrid grid(10.0, 0.05);
  const VariationalSmoother vs(build_moment_system(models::gene_expression(kGene)), grid,
                               ObservationSet{{3.0, 7.0}, {5.0, 12.0}}, observe_last(3, 2.0));
  ScalingFactors l = ScalingFactors::ones(6, grid.points());
  l.values.row(2).setConstant(1.5);
  const MomentPath p = vs.forward_sweep(l);
  const Costate eta = vs.backward_sweep(l, p);
  const Eigen::MatrixXd g = vs.gradient(l, p, eta), ng = vs.natural_gradient(l, p, eta), phi = vs.preconditioner(p);
  CHECK((phi.array() >= kPhiFloor).all());
  const Eigen::MatrixXd expect = (l.values.array() / phi.array() * g.array()).matrix();
  CHECK((ng - expect).cwiseAbs().maxCoeff() <= 1e-12 * std::max(1.0, expect.cwiseAbs().maxCoeff()));
}

TEST_CASE("a late high observation raises the early birth scaling") {
  const double c1 = 5, c2 = 0.1, T = 10;
  const auto bd = models::birth_death(c1, c2);
  const TimeGrid grid(T, 0.05);
  const ObservationSet obs{{9.0}, {60.0}};  // prior mean at t = 9 is about 20
  const VariationalSmoother vs(build_moment_system(bd), grid, obs, kUnit);
  const ScalingFactors one = ScalingFactors::ones(2, grid.points());
  const MomentPath p = vs.forward_sweep(one);
  const Eigen::MatrixXd ng = vs.natural_gradient(one, p, vs.backward_sweep(one, p));

  // The exact posterior agrees: its early birth rate exceeds the prior rate.
  const TruncatedStateSpace space = truncate(bd, {150});
  const BackwardSolution b = backward_solve(space, obs, kUnit, grid);
  for (int n : {0, 20, 60, 100}) {
    CHECK(ng(0, n) < 0.0);
    CHECK(posterior_rates(space, b, n)[0][0] > c1);
  }
}

TEST_CASE("smoothing descends and matches the exact posterior on birth-death") {
  const auto bd = models::birth_death(5, 0.1);
  const TimeGrid grid(20.0, 0.02);
  const GaussianObservationModel obs_model(Eigen::VectorXd::Ones(1), 4.0);
  const ObservationSet obs{{4.0, 8.0, 12.0, 16.0, 20.0}, {14.0, 30.0, 35.0, 38.0, 52.0}};
  const VIResult r = smooth(build_moment_system(bd), grid, obs, obs_model);
  CHECK(r.converged);
  for (std::size_t k = 1; k < r.objective_trace.size(); ++k) CHECK(r.objective_trace[k] <= r.objective_trace[k - 1]);

  const TruncatedStateSpace space = truncate(bd, {150});
  const Eigen::MatrixXd ex = posterior_moments(space, posterior_marginals(space, initial_distribution(space, bd),
                                                                          backward_solve(space, obs, obs_model, grid)));
  double se = 0.0;
  for (int n = 0; n < grid.points(); ++n) se += std::pow(r.psi(0, n) - ex(0, n), 2);
  const double rms = std::sqrt(se / grid.points());
  MESSAGE("RMS VI vs exact: " << rms);
  CHECK(rms < 0.01 * 50.0);
}

TEST_CASE("gene expression: the variance dip at observations is weaker than the exact one") {
  // Exact smoothing narrows the protein distribution at each observation. One scaling factor per
  // reaction class can only partly reproduce this, so the VI dip is much shallower.
  const auto ge = models::gene_expression(kGene);
  const GaussianObservationModel obs_model = observe_last(3, 1.0);
  const MomentSystem sys = build_moment_system(ge);
  const TruncatedStateSpace space = truncate(ge, {1, 20, 100});
  const double T = 20;
  const TimeGrid grid(T, 0.02);
  for (std::uint64_t seed : {1, 2}) {
    const ObservationSet obs = observe(simulate(ge, T, seed), uniform_times(T, 8), obs_model, seed);
    const VIResult r = smooth(sys, grid, obs, obs_model);
    const Eigen::MatrixXd ex = posterior_moments(
        space, posterior_marginals(space, initial_distribution(space, ge), backward_solve(space, obs, obs_model, grid)));
    auto sd = [&](const Eigen::MatrixXd& psi, int n) { return std::sqrt(sys.layout().covariance(psi.col(n))(2, 2)); };
    double vi = 0.0, exact = 0.0;
    const int k_max = static_cast<int>(obs.size()) - 1;
    for (int k = 0; k < k_max; ++k) {
      const int n = grid.snap(obs.times[static_cast<std::size_t>(k)]);
      const int mid = grid.snap(0.5 * (obs.times[static_cast<std::size_t>(k)] + obs.times[static_cast<std::size_t>(k) + 1]));
      vi += sd(r.psi, n) / sd(r.psi, mid) / k_max;
      exact += sd(ex, n) / sd(ex, mid) / k_max;
    }
    MESSAGE("mean sd ratio (observation / midpoint): VI " << vi << ", exact " << exact);
    CHECK(vi > exact + 0.15);
  }
}

TEST_CASE("batch smoothing equals single runs") {
  const auto bd = models::birth_death(5, 0.1);
  const TimeGrid grid(10.0, 0.05);
  const std::vector<ObservationSet> sets{ObservationSet{{5.0}, {30.0}}, ObservationSet{{8.0}, {10.0}}};
  const MomentSystem sys = build_moment_system(bd);
  const auto batch = smooth_batch(sys, grid, sets, kUnit);
  for (std::size_t k = 0; k < sets.size(); ++k) {
    const VIResult one = smooth(sys, grid, sets[k], kUnit);
    CHECK(batch[k].objective_trace == one.objective_trace);
    CHECK((batch[k].lambda.values - one.lambda.values).cwiseAbs().maxCoeff() == 0.0);
  }
}

TEST_CASE("result export") {
  const auto bd = models::birth_death(5, 0.1);
  const TimeGrid grid(1.0, 0.5);
  const VIResult r = smooth(build_moment_system(bd), grid, ObservationSet{{1.0}, {3.0}}, kUnit);
  std::ostringstream a, b, c;
  write_lambda_csv(a, r, {"birth", "death"});
  write_moments_csv(b, grid, r.psi, {"X"});
  write_objective_csv(c, r);
  std::istringstream ia(a.str()), ib(b.str()), ic(c.str());
  const CsvTable ta = read_csv_table(ia), tb = read_csv_table(ib), tc = read_csv_table(ic);
  CHECK(ta.header == std::vector<std::string>{"time", "lambda_birth", "lambda_death"});
  CHECK(ta.rows.size() == 3);
  CHECK(tb.header == std::vector<std::string>{"time", "mean_X", "sd_X"});
  CHECK(tb.rows[0][1] == 0.0);
  CHECK(tc.header == std::vector<std::string>{"iteration", "objective"});
  CHECK(tc.rows.size() == r.objective_trace.size());
  const auto j = summary_json(r);
  CHECK(j.at("iterations").get<int>() == r.iterations);
}

TEST_CASE("invalid scaling factors are rejected") {
  const TimeGrid grid(1.0, 0.1);
  const VariationalSmoother vs(build_moment_system(models::birth_death(5, 0.1)), grid, {}, kUnit);
  ScalingFactors l = ScalingFactors::ones(2, grid.points());
  l.values(1, 3) = -1.0;
  CHECK_THROWS_AS(vs.forward_sweep(l), DomainError);
  CHECK_THROWS_AS(vs.forward_sweep(ScalingFactors::ones(3, grid.points())), DomainError);
}
