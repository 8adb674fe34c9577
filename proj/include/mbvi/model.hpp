#pragma once

#include <Eigen/Dense>

#include <span>
#include <string>
#include <variant>
#include <vector>

namespace mbvi {

using State = std::vector<int>;

enum class PropensityKind { kConstant, kLinear, kBilinear, kAffineSwitch };

/// Mass-action propensity factor h(x); the rate constant is kept on the Reaction.
///   constant       h = 1
///   linear(s)      h = x_s
///   bilinear(s,u)  h = x_s x_u        (s != u)
///   affine_switch  h = 1 - x_s        (s binary)
struct Propensity {
  PropensityKind kind = PropensityKind::kConstant;
  int first = -1;
  int second = -1;

  static Propensity constant() { return {}; }
  static Propensity linear(int s) { return {PropensityKind::kLinear, s, -1}; }
  static Propensity bilinear(int s, int u) { return {PropensityKind::kBilinear, s, u}; }
  static Propensity affine_switch(int s) { return {PropensityKind::kAffineSwitch, s, -1}; }

  double evaluate(std::span<const int> x) const;
  /// Polynomial degree in the state (0, 1 or 2).
  int degree() const;
};

struct Reaction {
  std::string name;
  std::vector<int> change;
  double rate = 0.0;
  Propensity propensity;
};

/// Mean vector and non-central second-moment matrix E[X X^T].
struct InitialMoments {
  Eigen::VectorXd mean;
  Eigen::MatrixXd second;
};

using InitialCondition = std::variant<State, InitialMoments>;

class PopulationModel {
 public:
  PopulationModel(std::vector<std::string> species, std::vector<Reaction> reactions,
                  InitialCondition initial, std::vector<bool> binary = {});

  int species_count() const { return static_cast<int>(species_.size()); }
  int reaction_count() const { return static_cast<int>(reactions_.size()); }
  const std::vector<std::string>& species() const { return species_; }
  const std::vector<Reaction>& reactions() const { return reactions_; }
  const Reaction& reaction(int i) const { return reactions_.at(static_cast<std::size_t>(i)); }
  bool is_binary(int s) const { return binary_.at(static_cast<std::size_t>(s)); }
  const std::vector<bool>& binary() const { return binary_; }
  const InitialCondition& initial() const { return initial_; }
  bool has_deterministic_initial_state() const { return std::holds_alternative<State>(initial_); }
  /// Throws DomainError when the initial condition is given as moments.
  const State& initial_state() const;
  Eigen::VectorXd rates() const;
  int species_index(const std::string& name) const;

  /// Copy of the model with rate constants replaced.
  PopulationModel with_rates(std::span<const double> rates) const;
  PopulationModel with_initial(InitialCondition initial) const;

  /// Throws DomainError for negative components or binary species outside {0,1}.
  void check_state(std::span<const int> x) const;

 private:
  std::vector<std::string> species_;
  std::vector<Reaction> reactions_;
  InitialCondition initial_;
  std::vector<bool> binary_;
};

struct TransitionClass {
  int reaction = -1;
  std::vector<int> change;
};

/// Population partition: one class per reaction channel, transitions (x, x + v_i)
/// produced by reaction i belong to class i.
struct Partition {
  std::vector<TransitionClass> classes;

  int class_count() const { return static_cast<int>(classes.size()); }
  int class_of_reaction(int reaction) const;
};

Partition build_partition(const PopulationModel& model);

/// c_i h_i(x) for every reaction.
Eigen::VectorXd propensity(const PopulationModel& model, std::span<const int> x);

/// Total exit rate of x into class i.
double class_exit_rate(const PopulationModel& model, const Partition& partition, int class_index,
                       std::span<const int> x);

namespace models {

PopulationModel birth_death(double birth, double death, int x0 = 0);
PopulationModel pure_birth(double rate, int x0 = 0);

/// Species: gene (binary), mRNA, protein. Rates in reaction order:
/// activation, deactivation, transcription, mRNA decay, translation, protein decay.
PopulationModel gene_expression(std::span<const double> rates, State x0 = {0, 0, 0});

/// Species: prey, predator. Rates: prey birth, predation, predator birth, predator death.
PopulationModel predator_prey(std::span<const double> rates, State x0);

}  // namespace models

}  // namespace mbvi
