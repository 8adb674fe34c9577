#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "mbvi/error.hpp"
#include "mbvi/model.hpp"
#include "oracles.hpp"

#include <random>

using namespace mbvi;

TEST_CASE("partition has one class per reaction") {
  CHECK(build_partition(models::birth_death(5, 0.1)).class_count() == 2);
  const std::vector<double> ge{1, 1, 1, 1, 1, 1};
  CHECK(build_partition(models::gene_expression(ge)).class_count() == 6);
  CHECK(build_partition(models::pure_birth(1.0)).class_count() == 1);
}

TEST_CASE("reactions with equal change vectors keep separate classes") {
  PopulationModel m({"X"},
                    {{"birth_a", {1}, 1.0, Propensity::constant()},
                     {"birth_b", {1}, 2.0, Propensity::linear(0)},
                     {"death", {-1}, 1.0, Propensity::linear(0)}},
                    State{0});
  const Partition p = build_partition(m);
  REQUIRE(p.class_count() == 3);
  CHECK(p.class_of_reaction(0) != p.class_of_reaction(1));
}

TEST_CASE("propensity hand values") {
  const auto bd = models::birth_death(5, 0.1);
  const int x3[] = {3};
  const Eigen::VectorXd a = propensity(bd, x3);
  CHECK(a[0] == doctest::Approx(5.0));
  CHECK(a[1] == doctest::Approx(0.3));

  const std::vector<double> ones{1, 1, 1, 1};
  const auto pp = models::predator_prey(ones, {2, 3});
  const int x23[] = {2, 3};
  const Eigen::VectorXd b = propensity(pp, x23);
  CHECK(b[0] == doctest::Approx(2));
  CHECK(b[1] == doctest::Approx(6));
  CHECK(b[2] == doctest::Approx(6));
  CHECK(b[3] == doctest::Approx(3));

  const int zero[] = {0, 0};
  const Eigen::VectorXd z = propensity(pp, zero);
  CHECK(z.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("class exit rates") {
  const auto bd = models::birth_death(5, 0.1);
  const Partition p = build_partition(bd);
  const int x4[] = {4};
  CHECK(class_exit_rate(bd, p, 1, x4) == doctest::Approx(0.4));
  const int x0[] = {0};
  CHECK(class_exit_rate(bd, p, 1, x0) == 0.0);
  CHECK_THROWS_AS(class_exit_rate(bd, p, 2, x4), DomainError);

  const std::vector<double> ge{0.5, 0.2, 3, 1, 2, 0.3};
  const auto g = models::gene_expression(ge);
  const Partition gp = build_partition(g);
  const int active[] = {1, 2, 5};
  CHECK(class_exit_rate(g, gp, 0, active) == 0.0);
}

TEST_CASE("negative states are rejected") {
  const auto bd = models::birth_death(5, 0.1);
  const int neg[] = {-1};
  CHECK_THROWS_AS(propensity(bd, neg), DomainError);
}

TEST_CASE("model validation") {
  CHECK_THROWS_AS(PopulationModel({"X"}, {}, State{0}), DomainError);
  CHECK_THROWS_AS(PopulationModel({"X"}, {{"b", {1, 0}, 1.0, Propensity::constant()}}, State{0}), DomainError);
  CHECK_THROWS_AS(PopulationModel({"X"}, {{"b", {1}, -1.0, Propensity::constant()}}, State{0}), DomainError);
  CHECK_THROWS_AS(PopulationModel({"G"}, {{"on", {1}, 1.0, Propensity::affine_switch(0)}}, State{0}), DomainError);
  CHECK_THROWS_AS(PopulationModel({"X", "Y"}, {{"b", {1, 0}, 1.0, Propensity::bilinear(0, 0)}}, State{0, 0}), DomainError);
}

TEST_CASE("propensities match hand evaluation and partition covers every transition") {
  const std::vector<double> ge{0.5, 0.2, 3, 1, 2, 0.3};
  const std::vector<double> ppr{1.3, 0.02, 0.03, 0.7};
  const std::vector<PopulationModel> ms{models::birth_death(5, 0.1), models::gene_expression(ge),
                                        models::predator_prey(ppr, {5, 5})};
  std::mt19937_64 rng(3);
  for (const auto& m : ms) {
    const Partition p = build_partition(m);
    for (int trial = 0; trial < 200; ++trial) {
      State x(static_cast<std::size_t>(m.species_count()));
      for (int s = 0; s < m.species_count(); ++s)
        x[static_cast<std::size_t>(s)] = m.is_binary(s) ? int(rng() % 2) : int(rng() % 40);
      const Eigen::VectorXd a = propensity(m, x);
      double total = 0.0, hand_total = 0.0;
      for (int j = 0; j < m.reaction_count(); ++j) {
        const double hand = m.reaction(j).rate * oracle::hand_propensity_factor(m.reaction(j).propensity, x);
        CHECK(a[j] >= 0.0);
        CHECK(a[j] == doctest::Approx(hand));
        total += class_exit_rate(m, p, j, x);
        hand_total += hand;
        // Exactly one class owns the transitions of reaction j.
        int owners = 0;
        for (int c = 0; c < p.class_count(); ++c) owners += p.classes[static_cast<std::size_t>(c)].reaction == j;
        CHECK(owners == 1);
      }
      CHECK(total == doctest::Approx(hand_total));
    }
  }
}
