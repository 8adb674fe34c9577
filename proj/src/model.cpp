#include "mbvi/model.hpp"

#include "mbvi/error.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace mbvi {

double Propensity::evaluate(std::span<const int> x) const {
  switch (kind) {
    case PropensityKind::kConstant:
      return 1.0;
    case PropensityKind::kLinear:
      return static_cast<double>(x[first]);
    case PropensityKind::kBilinear:
      return static_cast<double>(x[first]) * static_cast<double>(x[second]);
    case PropensityKind::kAffineSwitch:
      return 1.0 - static_cast<double>(x[first]);
  }
  return 0.0;
}

int Propensity::degree() const {
  switch (kind) {
    case PropensityKind::kConstant:
      return 0;
    case PropensityKind::kLinear:
    case PropensityKind::kAffineSwitch:
      return 1;
    case PropensityKind::kBilinear:
      return 2;
  }
  return 0;
}

PopulationModel::PopulationModel(std::vector<std::string> species, std::vector<Reaction> reactions,
                                 InitialCondition initial, std::vector<bool> binary)
    : species_(std::move(species)),
      reactions_(std::move(reactions)),
      initial_(std::move(initial)),
      binary_(std::move(binary)) {
  const int d = species_count();
  if (d == 0) throw DomainError("model needs at least one species");
  if (reactions_.empty()) throw DomainError("model needs at least one reaction");
  if (binary_.empty()) binary_.assign(static_cast<std::size_t>(d), false);
  if (static_cast<int>(binary_.size()) != d) throw DomainError("binary flag count does not match species count");

  auto check_species = [&](int s, const std::string& what) {
    if (s < 0 || s >= d) throw DomainError(what + ": species index " + std::to_string(s) + " out of range");
  };
  for (std::size_t i = 0; i < reactions_.size(); ++i) {
    auto& r = reactions_[i];
    if (r.name.empty()) r.name = "R" + std::to_string(i + 1);
    if (static_cast<int>(r.change.size()) != d)
      throw DomainError("reaction '" + r.name + "': change vector has wrong dimension");
    if (!std::isfinite(r.rate) || r.rate < 0.0)
      throw DomainError("reaction '" + r.name + "': rate constant must be finite and nonnegative");
    const auto& p = r.propensity;
    switch (p.kind) {
      case PropensityKind::kConstant:
        break;
      case PropensityKind::kLinear:
        check_species(p.first, r.name);
        break;
      case PropensityKind::kBilinear:
        check_species(p.first, r.name);
        check_species(p.second, r.name);
        if (p.first == p.second) throw DomainError("reaction '" + r.name + "': bilinear propensity needs two distinct species");
        break;
      case PropensityKind::kAffineSwitch:
        check_species(p.first, r.name);
        if (!binary_[static_cast<std::size_t>(p.first)])
          throw DomainError("reaction '" + r.name + "': affine switch requires a binary species");
        break;
    }
  }
  for (int s = 0; s < d; ++s) {
    if (!binary_[static_cast<std::size_t>(s)]) continue;
    for (const auto& r : reactions_) {
      if (std::abs(r.change[static_cast<std::size_t>(s)]) > 1)
        throw DomainError("reaction '" + r.name + "' moves binary species '" + species_[static_cast<std::size_t>(s)] + "' by more than one");
    }
  }

  if (const auto* x0 = std::get_if<State>(&initial_)) {
    if (static_cast<int>(x0->size()) != d) throw DomainError("initial state has wrong dimension");
    check_state(*x0);
  } else {
    const auto& m = std::get<InitialMoments>(initial_);
    if (m.mean.size() != d || m.second.rows() != d || m.second.cols() != d)
      throw DomainError("initial moments have wrong dimension");
    if ((m.mean.array() < 0.0).any()) throw DomainError("initial means must be nonnegative");
  }
}

const State& PopulationModel::initial_state() const {
  if (const auto* x0 = std::get_if<State>(&initial_)) return *x0;
  throw DomainError("model has a moment-valued initial condition, not a deterministic state");
}

Eigen::VectorXd PopulationModel::rates() const {
  Eigen::VectorXd c(reaction_count());
  for (int i = 0; i < reaction_count(); ++i) c[i] = reactions_[static_cast<std::size_t>(i)].rate;
  return c;
}

int PopulationModel::species_index(const std::string& name) const {
  auto it = std::find(species_.begin(), species_.end(), name);
  if (it == species_.end()) throw DomainError("unknown species '" + name + "'");
  return static_cast<int>(it - species_.begin());
}

PopulationModel PopulationModel::with_rates(std::span<const double> rates) const {
  if (static_cast<int>(rates.size()) != reaction_count()) throw DomainError("rate vector has wrong length");
  auto reactions = reactions_;
  for (std::size_t i = 0; i < reactions.size(); ++i) reactions[i].rate = rates[i];
  return PopulationModel(species_, std::move(reactions), initial_, binary_);
}

PopulationModel PopulationModel::with_initial(InitialCondition initial) const {
  return PopulationModel(species_, reactions_, std::move(initial), binary_);
}

void PopulationModel::check_state(std::span<const int> x) const {
  if (static_cast<int>(x.size()) != species_count()) throw DomainError("state has wrong dimension");
  for (std::size_t s = 0; s < x.size(); ++s) {
    if (x[s] < 0) throw DomainError("state component " + std::to_string(s) + " is negative");
    if (binary_[s] && x[s] > 1) throw DomainError("binary species '" + species_[s] + "' outside {0,1}");
  }
}

int Partition::class_of_reaction(int reaction) const {
  if (reaction < 0 || reaction >= class_count()) throw DomainError("reaction index out of range");
  return reaction;
}

Partition build_partition(const PopulationModel& model) {
  Partition p;
  p.classes.reserve(static_cast<std::size_t>(model.reaction_count()));
  for (int i = 0; i < model.reaction_count(); ++i) p.classes.push_back({i, model.reaction(i).change});
  return p;
}

Eigen::VectorXd propensity(const PopulationModel& model, std::span<const int> x) {
  model.check_state(x);
  Eigen::VectorXd a(model.reaction_count());
  for (int i = 0; i < model.reaction_count(); ++i) {
    const auto& r = model.reaction(i);
    a[i] = r.rate * r.propensity.evaluate(x);
  }
  return a;
}

double class_exit_rate(const PopulationModel& model, const Partition& partition, int class_index,
                       std::span<const int> x) {
  if (class_index < 0 || class_index >= partition.class_count())
    throw DomainError("class index " + std::to_string(class_index) + " out of range");
  model.check_state(x);
  const auto& r = model.reaction(partition.classes[static_cast<std::size_t>(class_index)].reaction);
  return r.rate * r.propensity.evaluate(x);
}

namespace models {

PopulationModel birth_death(double birth, double death, int x0) {
  std::vector<Reaction> reactions{
      {"birth", {1}, birth, Propensity::constant()},
      {"death", {-1}, death, Propensity::linear(0)},
  };
  return PopulationModel({"X"}, std::move(reactions), State{x0});
}

PopulationModel pure_birth(double rate, int x0) {
  return PopulationModel({"X"}, {{"birth", {1}, rate, Propensity::constant()}}, State{x0});
}

PopulationModel gene_expression(std::span<const double> c, State x0) {
  if (c.size() != 6) throw DomainError("gene expression model takes six rate constants");
  std::vector<Reaction> reactions{
      {"activation", {1, 0, 0}, c[0], Propensity::affine_switch(0)},
      {"deactivation", {-1, 0, 0}, c[1], Propensity::linear(0)},
      {"transcription", {0, 1, 0}, c[2], Propensity::linear(0)},
      {"mrna_decay", {0, -1, 0}, c[3], Propensity::linear(1)},
      {"translation", {0, 0, 1}, c[4], Propensity::linear(1)},
      {"protein_decay", {0, 0, -1}, c[5], Propensity::linear(2)},
  };
  return PopulationModel({"gene", "mrna", "protein"}, std::move(reactions), std::move(x0),
                         {true, false, false});
}

PopulationModel predator_prey(std::span<const double> c, State x0) {
  if (c.size() != 4) throw DomainError("predator-prey model takes four rate constants");
  std::vector<Reaction> reactions{
      {"prey_birth", {1, 0}, c[0], Propensity::linear(0)},
      {"predation", {-1, 0}, c[1], Propensity::bilinear(0, 1)},
      {"predator_birth", {0, 1}, c[2], Propensity::bilinear(0, 1)},
      {"predator_death", {0, -1}, c[3], Propensity::linear(1)},
  };
  return PopulationModel({"prey", "predator"}, std::move(reactions), std::move(x0));
}

}  // namespace models

}  // namespace mbvi
