#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "mbvi/exact.hpp"
#include "mbvi/io.hpp"
#include "mbvi/paraminfer.hpp"
#include "oracles.hpp"

#include <sstream>

using namespace mbvi;

namespace {

Eigen::VectorXd vec(std::initializer_list<double> v) {
  Eigen::VectorXd out(static_cast<long>(v.size()));
  long i = 0;
  for (double x : v) out[i++] = x;
  return out;
}

// digamma at a positive integer: -gamma + sum_{k<n} 1/k
double digamma_int(int n) {
  double s = -0.57721566490153286061;
  for (int k = 1; k < n; ++k) s += 1.0 / k;
  return s;
}

}  // namespace

TEST_CASE("summary statistics hand values") {
  const TimeGrid grid(2.0, 0.1);
  const SummaryStats s = summary_stats(grid, Eigen::MatrixXd::Ones(1, grid.points()), Eigen::MatrixXd::Constant(1, grid.points(), 3.0));
  CHECK(s.G[0] == doctest::Approx(2.0));
  CHECK(s.H[0] == doctest::Approx(6.0));

  // lambda equal to the prior rates gives H = c G.
  Eigen::MatrixXd phi(2, grid.points()), lambda(2, grid.points());
  for (int n = 0; n < grid.points(); ++n) {
    phi(0, n) = 1.0;
    phi(1, n) = 1.0 + grid.time(n) * grid.time(n);
    lambda(0, n) = 5.0;
    lambda(1, n) = 0.1;
  }
  const SummaryStats p = summary_stats(grid, phi, lambda);
  CHECK(p.H[0] == doctest::Approx(5.0 * p.G[0]));
  CHECK(p.H[1] == doctest::Approx(0.1 * p.G[1]));
  CHECK_THROWS_AS(summary_stats(grid, phi, Eigen::MatrixXd::Ones(2, 3)), DomainError);
}

TEST_CASE("expected jump counts under the endpoint posterior") {
  // Started at 0 and conditioned to end at 0: births and deaths balance. The VI statistics with the
  // analytic scalings are compared against jump counts integrated from the exact posterior rates.
  const double c1 = 5, c2 = 0.1, T = 10;
  const auto bd = models::birth_death(c1, c2);
  const TimeGrid grid(T, 0.002);

  ScalingFactors l = ScalingFactors::ones(2, grid.points());
  for (int n = 0; n < grid.steps(); ++n) {
    const double t = grid.time(n) + 0.5 * grid.step();
    l.values(0, n) = oracle::bd_endpoint_lambda_birth(c2, T, t);
    l.values(1, n) = oracle::bd_endpoint_lambda_death(c2, T, t);
  }
  const VariationalSmoother vs(build_moment_system(bd), grid, {}, GaussianObservationModel(Eigen::VectorXd::Ones(1), 1.0),
                               Interpolation::kPiecewiseConstant, 4);
  const MomentPath path = vs.forward_sweep(l);
  const auto [G, weighted] = vs.propensity_integrals(l, path.psi, build_moment_system(models::birth_death(1, 1)));
  const Eigen::VectorXd H = weighted.cwiseProduct(vec({c1, c2}));

  const TruncatedStateSpace space = truncate(bd, {200});
  const BackwardSolution b = backward_solve(space, {indicator_likelihood(space, Eigen::VectorXd::Ones(1), grid.steps(), 0.0)}, grid);
  const Marginals post = posterior_marginals(space, initial_distribution(space, bd), b);
  // Trapezoid over the grid; the posterior death rate is infinite at T, so the last interval uses its left end.
  auto counts = [&](int n) {
    const auto rates = posterior_rates(space, b, n);
    return std::pair{post.prob.col(n).dot(rates[0]), post.prob.col(n).dot(rates[1])};
  };
  double births = 0.0, deaths = 0.0;
  for (int n = 0; n < grid.steps(); ++n) {
    const auto [b0, d0] = counts(n);
    const auto [b1, d1] = n + 1 < grid.steps() ? counts(n + 1) : counts(n);
    births += 0.5 * grid.step() * (b0 + b1);
    deaths += 0.5 * grid.step() * (d0 + d1);
  }
  MESSAGE("VI H = " << H.transpose() << ", exact births " << births << ", deaths " << deaths);
  CHECK(oracle::rel_err(H[0], H[1]) < 2e-3);
  CHECK(oracle::rel_err(H[0], births) < 2e-3);
  CHECK(oracle::rel_err(H[1], deaths) < 2e-3);
}

TEST_CASE("EM update") {
  const Eigen::VectorXd t = em_update({vec({2.0}), vec({6.0})});
  CHECK(t[0] == doctest::Approx(3.0));
  CHECK_THROWS_AS(em_update({vec({0.0}), vec({1.0})}), UndefinedParameter);
}

TEST_CASE("gamma conjugate arithmetic") {
  const GammaPosterior prior(vec({1.0}), vec({1.0}));
  const GammaPosterior post = vb_gamma_update(prior, {vec({2.0}), vec({3.0})});
  CHECK(post.shape[0] == 4.0);
  CHECK(post.rate[0] == 3.0);

  const GammaPosterior same = vb_gamma_update(GammaPosterior(vec({2.5, 0.3}), vec({1.5, 7.0})), {vec({0.0, 0.0}), vec({0.0, 0.0})});
  CHECK(same.shape == vec({2.5, 0.3}));
  CHECK(same.rate == vec({1.5, 7.0}));

  const SummaryStats s{vec({40.0, 350.0}), vec({210.0, 33.0})};
  const GammaPosterior flat = vb_gamma_update(GammaPosterior(vec({1e-6, 1e-6}), vec({1e-6, 1e-6})), s);
  const Eigen::VectorXd em = em_update(s);
  for (int i = 0; i < 2; ++i) CHECK(oracle::rel_err(flat.mean()[i], em[i]) < 1e-6);

  const GammaPosterior g(vec({4.0, 1.0}), vec({2.0, 0.5}));
  CHECK(g.geometric_mean()[0] == doctest::Approx(std::exp(digamma_int(4)) / 2.0).epsilon(1e-12));
  CHECK(g.geometric_mean()[1] == doctest::Approx(std::exp(digamma_int(1)) / 0.5).epsilon(1e-12));

  CHECK_THROWS_AS(GammaPosterior(vec({0.0}), vec({1.0})), DomainError);
  CHECK_THROWS_AS(GammaPosterior(vec({1.0}), vec({-1.0})), DomainError);
}

TEST_CASE("no observations leave the rates unchanged") {
  const auto bd = models::birth_death(5, 0.1);
  const TimeGrid grid(20.0, 0.1);
  EMOptions opts;
  opts.initial = vec({3.0, 0.4});
  opts.max_iterations = 1;
  const EMResult r = variational_em(bd, grid, {}, GaussianObservationModel(Eigen::VectorXd::Ones(1), 1.0), opts);
  CHECK(oracle::rel_err(r.theta[0], 3.0) < 1e-9);
  CHECK(oracle::rel_err(r.theta[1], 0.4) < 1e-9);
}

TEST_CASE("birth-death EM near the truth") {
  const auto bd = models::birth_death(5, 0.1);
  const double T = 100;
  const TimeGrid grid(T, 0.1);
  const GaussianObservationModel obs_model(Eigen::VectorXd::Ones(1), 1.0);
  const ObservationSet obs = observe(simulate(bd, T, 500), uniform_times(T, 50), obs_model, 500);

  SUBCASE("first update from the truth stays close") {
    EMOptions opts;
    opts.max_iterations = 1;
    const EMResult r = variational_em(bd, grid, obs, obs_model, opts);
    CHECK(oracle::rel_err(r.theta[0], 5.0) < 0.15);
    CHECK(oracle::rel_err(r.theta[1], 0.1) < 0.15);
  }
  SUBCASE("objective is non-increasing across EM iterations") {
    EMOptions opts;
    opts.initial = vec({2.5, 0.2});
    opts.max_iterations = 6;
    opts.tolerance = 1e-12;
    const EMResult r = variational_em(bd, grid, obs, obs_model, opts);
    REQUIRE(r.objective_trace.size() == 6);
    for (std::size_t k = 1; k < r.objective_trace.size(); ++k) CHECK(r.objective_trace[k] <= r.objective_trace[k - 1] + 1e-8);

    std::ostringstream out;
    write_em_csv(out, r, {"birth", "death"});
    std::istringstream in(out.str());
    const CsvTable t = read_csv_table(in);
    CHECK(t.header == std::vector<std::string>{"iteration", "objective", "theta_birth", "theta_death"});
    CHECK(t.rows.size() == 6);
  }
  SUBCASE("VB keeps the fixed classes and reports a gamma posterior") {
    EMOptions opts;
    opts.mode = EstimationMode::kVB;
    opts.prior = GammaPosterior(vec({2.0, 2.0}), vec({0.4, 20.0}));
    opts.estimate = {true, false};
    opts.max_iterations = 2;
    const EMResult r = variational_em(bd, grid, obs, obs_model, opts);
    REQUIRE(r.posterior);
    CHECK(r.posterior->shape[1] == 2.0);
    CHECK(r.posterior->rate[1] == 20.0);
    CHECK(r.theta[1] == doctest::Approx(0.1));
    CHECK(r.posterior->shape[0] > 2.0);
    CHECK(r.theta[0] == doctest::Approx(r.posterior->mean()[0]));
  }
}

TEST_CASE("VB mode needs a prior") {
  EMOptions opts;
  opts.mode = EstimationMode::kVB;
  CHECK_THROWS_AS(variational_em(models::birth_death(5, 0.1), TimeGrid(1.0, 0.1), {}, GaussianObservationModel(Eigen::VectorXd::Ones(1), 1.0), opts),
                  DomainError);
}
