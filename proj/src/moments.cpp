#include "mbvi/moments.hpp"

#include "mbvi/error.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <sstream>

namespace mbvi {

// ---------------------------------------------------------------------------
// MomentLayout

MomentLayout::MomentLayout(int species) : species_(species) {
  if (species < 1 || species > kMaxSpecies)
    throw DomainError("moment systems support 1.." + std::to_string(kMaxSpecies) + " species");
}

int MomentLayout::second(int s, int u) const {
  if (s > u) std::swap(s, u);
  // rows s' < s contribute (d - s') entries each
  const int before = s * species_ - s * (s - 1) / 2;
  return species_ + before + (u - s);
}

Eigen::VectorXd MomentLayout::means(ConstVecRef psi) const { return psi.head(species_); }

Eigen::MatrixXd MomentLayout::second_moments(ConstVecRef psi) const {
  Eigen::MatrixXd m(species_, species_);
  for (int s = 0; s < species_; ++s)
    for (int u = s; u < species_; ++u) m(s, u) = m(u, s) = psi[second(s, u)];
  return m;
}

Eigen::MatrixXd MomentLayout::covariance(ConstVecRef psi) const {
  const Eigen::VectorXd m = means(psi);
  return second_moments(psi) - m * m.transpose();
}

Eigen::VectorXd MomentLayout::pack(const Eigen::VectorXd& mean, const Eigen::MatrixXd& second_mom) const {
  Eigen::VectorXd psi(dim());
  psi.head(species_) = mean;
  for (int s = 0; s < species_; ++s)
    for (int u = s; u < species_; ++u) psi[second(s, u)] = second_mom(s, u);
  return psi;
}

Eigen::VectorXd MomentLayout::point_mass(std::span<const int> x) const {
  Eigen::VectorXd m(species_);
  for (int s = 0; s < species_; ++s) m[s] = x[static_cast<std::size_t>(s)];
  return pack(m, m * m.transpose());
}

std::string MomentLayout::name(int k) const {
  if (k < species_) return "m_" + std::to_string(k + 1);
  for (int s = 0; s < species_; ++s)
    for (int u = s; u < species_; ++u)
      if (second(s, u) == k) return "m_" + std::to_string(s + 1) + std::to_string(u + 1);
  return "?";
}

// ---------------------------------------------------------------------------
// Closure

LnpClosure closure_lnp(double m1, double m2, double m11, double m12, double m22, double floor) {
  LnpClosure r;
  const bool c1 = m1 < floor;
  const bool c2 = m2 < floor;
  r.clamped = c1 || c2;
  const double a = c1 ? floor : m1;
  const double b = c2 ? floor : m2;
  // d(a)/d(m1) is zero on the clamped branch
  const double da = c1 ? 0.0 : 1.0;
  const double db = c2 ? 0.0 : 1.0;

  const double q = m12 * m12;
  {
    const double den = a * a * b;
    const double num = (m11 - m1) * q;
    r.m112 = num / den + m12;
    // ordering (m1, m2, m11, m12, m22)
    r.d112[0] = -q / den - num * 2.0 * da / (a * a * a * b);
    r.d112[1] = -num * db / (a * a * b * b);
    r.d112[2] = q / den;
    r.d112[3] = 2.0 * (m11 - m1) * m12 / den + 1.0;
    r.d112[4] = 0.0;
  }
  {
    const double den = b * b * a;
    const double num = (m22 - m2) * q;
    r.m122 = num / den + m12;
    r.d122[0] = -num * da / (b * b * a * a);
    r.d122[1] = -q / den - num * 2.0 * db / (b * b * b * a);
    r.d122[2] = 0.0;
    r.d122[3] = 2.0 * (m22 - m2) * m12 / den + 1.0;
    r.d122[4] = q / den;
  }
  return r;
}

void LogNormalPoissonClosure::evaluate(const MomentLayout& layout, ConstVecRef psi, ClosureValues& out) const {
  if (layout.species() != 2) throw DomainError("log-normal product-Poisson closure needs two species");
  const int i1 = layout.mean(0), i2 = layout.mean(1);
  const int i11 = layout.second(0, 0), i12 = layout.second(0, 1), i22 = layout.second(1, 1);
  const auto c = closure_lnp(psi[i1], psi[i2], psi[i11], psi[i12], psi[i22]);
  out.values.resize(2);
  out.gradient.setZero(2, layout.dim());
  out.values << c.m112, c.m122;
  const int idx[5] = {i1, i2, i11, i12, i22};
  for (int k = 0; k < 5; ++k) {
    out.gradient(0, idx[k]) = c.d112[static_cast<std::size_t>(k)];
    out.gradient(1, idx[k]) = c.d122[static_cast<std::size_t>(k)];
  }
  out.clamps = c.clamped ? 1 : 0;
}

// ---------------------------------------------------------------------------
// Symbolic generation

namespace {

using Polynomial = std::map<Exponents, double>;

Polynomial multiply(const Polynomial& a, const Polynomial& b) {
  Polynomial out;
  for (const auto& [ea, ca] : a)
    for (const auto& [eb, cb] : b) {
      Exponents e(ea.size());
      for (std::size_t s = 0; s < e.size(); ++s) e[s] = ea[s] + eb[s];
      out[e] += ca * cb;
    }
  return out;
}

Exponents unit(int d, int s, int power = 1) {
  Exponents e(static_cast<std::size_t>(d), 0);
  e[static_cast<std::size_t>(s)] = power;
  return e;
}

Polynomial propensity_polynomial(const Propensity& p, int d) {
  const Exponents zero(static_cast<std::size_t>(d), 0);
  switch (p.kind) {
    case PropensityKind::kConstant:
      return {{zero, 1.0}};
    case PropensityKind::kLinear:
      return {{unit(d, p.first), 1.0}};
    case PropensityKind::kBilinear: {
      auto e = unit(d, p.first);
      e[static_cast<std::size_t>(p.second)] += 1;
      return {{e, 1.0}};
    }
    case PropensityKind::kAffineSwitch:
      return {{zero, 1.0}, {unit(d, p.first), -1.0}};
  }
  return {};
}

// G(x + v) - G(x) for G = x_s (u < 0) or G = x_s x_u.
Polynomial increment_polynomial(const std::vector<int>& v, int s, int u, int d) {
  const Exponents zero(static_cast<std::size_t>(d), 0);
  Polynomial out;
  const double vs = v[static_cast<std::size_t>(s)];
  if (u < 0) {
    if (vs != 0.0) out[zero] = vs;
    return out;
  }
  const double vu = v[static_cast<std::size_t>(u)];
  if (vs != 0.0) out[unit(d, u)] += vs;
  if (vu != 0.0) out[unit(d, s)] += vu;
  if (vs * vu != 0.0) out[zero] += vs * vu;
  return out;
}

int degree(const Exponents& e) { return std::accumulate(e.begin(), e.end(), 0); }

}  // namespace

// ---------------------------------------------------------------------------
// MomentSystem

MomentSystem::MomentSystem(const PopulationModel& model, const Partition& partition,
                           std::shared_ptr<const Closure> closure)
    : layout_(model.species_count()),
      classes_(partition.class_count()),
      closure_(std::move(closure)),
      binary_(model.binary()),
      rates_(model.rates()) {
  const int d = layout_.species();
  const int n = layout_.dim();
  if (classes_ > kMaxClasses) throw DomainError("too many transition classes for a moment system");

  std::vector<Exponents> closure_monomials;
  if (closure_) closure_monomials = closure_->monomials();
  closure_slots_ = static_cast<int>(closure_monomials.size());
  if (basis_dim() > kMaxBasis) throw DomainError("closure provides too many moments");

  auto basis_index = [&](const Exponents& e) -> int {
    switch (degree(e)) {
      case 0:
        return 0;
      case 1:
        return 1 + static_cast<int>(std::find(e.begin(), e.end(), 1) - e.begin());
      case 2: {
        int s = -1, u = -1;
        for (int k = 0; k < d; ++k) {
          const int p = e[static_cast<std::size_t>(k)];
          if (p == 2) s = u = k;
          if (p == 1) (s < 0 ? s : u) = k;
        }
        return 1 + layout_.second(s, u);
      }
      default: {
        auto it = std::find(closure_monomials.begin(), closure_monomials.end(), e);
        if (it == closure_monomials.end()) {
          std::ostringstream msg;
          msg << "moment equations are not closed: they need E[";
          for (int k = 0; k < d; ++k)
            if (e[static_cast<std::size_t>(k)] > 0) msg << "X" << k + 1 << "^" << e[static_cast<std::size_t>(k)];
          msg << "]" << (closure_ ? " which the closure does not provide" : "; use a closure-equipped builder");
          throw NotClosedError(msg.str());
        }
        return 1 + n + static_cast<int>(it - closure_monomials.begin());
      }
    }
  };

  coefficients_.assign(static_cast<std::size_t>(classes_), Eigen::MatrixXd::Zero(n, basis_dim()));
  natural_ = Eigen::MatrixXd::Zero(classes_, basis_dim());

  for (int j = 0; j < classes_; ++j) {
    const auto& r = model.reaction(partition.classes[static_cast<std::size_t>(j)].reaction);
    const auto h = propensity_polynomial(r.propensity, d);
    for (const auto& [e, c] : h) natural_(j, basis_index(e)) += r.rate * c;

    auto& C = coefficients_[static_cast<std::size_t>(j)];
    for (int k = 0; k < n; ++k) {
      int s = k, u = -1;
      if (k >= d) {
        for (int a = 0; a < d; ++a)
          for (int b = a; b < d; ++b)
            if (layout_.second(a, b) == k) s = a, u = b;
      }
      const auto term = multiply(increment_polynomial(r.change, s, u, d), h);
      for (const auto& [e, c] : term)
        if (c != 0.0) C(k, basis_index(e)) += r.rate * c;
    }
  }

  Eigen::VectorXd psi0;
  if (model.has_deterministic_initial_state()) {
    psi0 = layout_.point_mass(model.initial_state());
  } else {
    const auto& m = std::get<InitialMoments>(model.initial());
    psi0 = layout_.pack(m.mean, m.second);
  }
  initial_psi_ = psi0;
}

void MomentSystem::basis(ConstVecRef psi, BasisVector& mu, ClosureValues* closure_values, int* clamps) const {
  const int n = psi_dim();
  mu.resize(basis_dim());
  mu[0] = 1.0;
  mu.segment(1, n) = psi;
  if (closure_slots_ > 0) {
    ClosureValues local;
    ClosureValues& cv = closure_values ? *closure_values : local;
    closure_->evaluate(layout_, psi, cv);
    mu.tail(closure_slots_) = cv.values;
    if (clamps) *clamps += cv.clamps;
  }
}

ClassVector MomentSystem::natural_moments(ConstVecRef psi) const {
  BasisVector mu;
  basis(psi, mu, nullptr, nullptr);
  return natural_ * mu;
}

ClassByPsi MomentSystem::natural_moments_jacobian(ConstVecRef psi) const {
  const int n = psi_dim();
  ClassByPsi jac = natural_.middleCols(1, n);
  if (closure_slots_ > 0) {
    BasisVector mu;
    ClosureValues cv;
    basis(psi, mu, &cv, nullptr);
    jac += natural_.rightCols(closure_slots_) * cv.gradient;
  }
  return jac;
}

PsiVector MomentSystem::drift(ConstVecRef lambda, ConstVecRef psi, int* clamps) const {
  BasisVector mu;
  basis(psi, mu, nullptr, clamps);
  PsiVector out = PsiVector::Zero(psi_dim());
  for (int j = 0; j < classes_; ++j) {
    const double l = lambda[j];
    if (l != 0.0) out.noalias() += l * (coefficients_[static_cast<std::size_t>(j)] * mu);
  }
  return out;
}

PsiByClass MomentSystem::drift_jacobian_lambda(ConstVecRef psi) const {
  BasisVector mu;
  basis(psi, mu, nullptr, nullptr);
  PsiByClass out(psi_dim(), classes_);
  for (int j = 0; j < classes_; ++j) out.col(j).noalias() = coefficients_[static_cast<std::size_t>(j)] * mu;
  return out;
}

PsiMatrix MomentSystem::drift_jacobian_psi(ConstVecRef lambda, ConstVecRef psi) const {
  const int n = psi_dim();
  Eigen::MatrixXd weighted = Eigen::MatrixXd::Zero(n, basis_dim());
  for (int j = 0; j < classes_; ++j) weighted += lambda[j] * coefficients_[static_cast<std::size_t>(j)];
  PsiMatrix jac = weighted.middleCols(1, n);
  if (closure_slots_ > 0) {
    BasisVector mu;
    ClosureValues cv;
    basis(psi, mu, &cv, nullptr);
    jac += weighted.rightCols(closure_slots_) * cv.gradient;
  }
  return jac;
}

void MomentSystem::drift_vjp(ConstVecRef lambda, ConstVecRef psi, ConstVecRef w, PsiVector& psi_bar,
                             ClassVector& lambda_bar) const {
  const int n = psi_dim();
  BasisVector mu;
  ClosureValues cv;
  basis(psi, mu, closure_slots_ > 0 ? &cv : nullptr, nullptr);
  BasisVector mu_bar = BasisVector::Zero(basis_dim());
  lambda_bar.resize(classes_);
  for (int j = 0; j < classes_; ++j) {
    BasisVector cw = coefficients_[static_cast<std::size_t>(j)].transpose() * w;
    lambda_bar[j] = cw.dot(mu);
    mu_bar.noalias() += lambda[j] * cw;
  }
  psi_bar = mu_bar.segment(1, n);
  if (closure_slots_ > 0) psi_bar.noalias() += cv.gradient.transpose() * mu_bar.tail(closure_slots_);
}

bool MomentSystem::project(PsiVector& psi) const {
  const int d = species();
  bool changed = false;
  for (int s = 0; s < d; ++s) {
    if (psi[s] < -kCovarianceTolerance) {
      psi[s] = 0.0;
      changed = true;
    }
  }
  Eigen::VectorXd m = psi.head(d);
  Eigen::MatrixXd cov = layout_.covariance(psi);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
  if (eig.eigenvalues().minCoeff() < -kCovarianceTolerance) {
    Eigen::VectorXd ev = eig.eigenvalues().cwiseMax(0.0);
    cov = eig.eigenvectors() * ev.asDiagonal() * eig.eigenvectors().transpose();
    const Eigen::MatrixXd second = cov + m * m.transpose();
    for (int s = 0; s < d; ++s)
      for (int u = s; u < d; ++u) psi[layout_.second(s, u)] = second(s, u);
    changed = true;
  }
  for (int s = 0; s < d; ++s) {
    if (!binary_[static_cast<std::size_t>(s)]) continue;
    const int k = layout_.second(s, s);
    if (std::abs(psi[k] - psi[s]) > kCovarianceTolerance) {
      psi[k] = psi[s];
      changed = true;
    }
  }
  return changed;
}

std::string MomentSystem::basis_name(int idx) const {
  if (idx == 0) return "1";
  const int n = psi_dim();
  if (idx <= n) return layout_.name(idx - 1);
  const auto mono = closure_->monomials()[static_cast<std::size_t>(idx - 1 - n)];
  std::string s = "m_";
  for (std::size_t k = 0; k < mono.size(); ++k)
    for (int p = 0; p < mono[k]; ++p) s += std::to_string(k + 1);
  return s;
}

std::string MomentSystem::describe() const {
  std::ostringstream out;
  out.precision(6);
  for (int k = 0; k < psi_dim(); ++k) {
    out << "d" << layout_.name(k) << "/dt =";
    bool any = false;
    for (int j = 0; j < classes_; ++j) {
      const auto& C = coefficients_[static_cast<std::size_t>(j)];
      for (int b = 0; b < basis_dim(); ++b) {
        const double c = C(k, b);
        if (c == 0.0) continue;
        out << (c < 0 ? " - " : " + ") << std::abs(c) << "*lambda_" << j + 1;
        if (b != 0) out << "*" << basis_name(b);
        any = true;
      }
    }
    if (!any) out << " 0";
    out << "\n";
  }
  if (closure_) out << "# closure: " << closure_->name() << "\n";
  return out.str();
}

MomentSystem build_affine_system(const PopulationModel& model, const Partition& partition) {
  for (const auto& r : model.reactions())
    if (r.propensity.kind == PropensityKind::kBilinear)
      throw NotClosedError("reaction '" + r.name + "' has a bilinear propensity; the moment equations are not closed");
  return MomentSystem(model, partition, nullptr);
}

MomentSystem build_predator_prey_system(const PopulationModel& model) {
  auto shape_error = [] { return DomainError("model is not the two-species predator-prey network"); };
  if (model.species_count() != 2 || model.reaction_count() != 4) throw shape_error();
  const auto& r = model.reactions();
  auto is = [](const Reaction& x, std::vector<int> v, PropensityKind k, int a, int b) {
    return x.change == v && x.propensity.kind == k && x.propensity.first == a &&
           (k != PropensityKind::kBilinear || x.propensity.second == b || (x.propensity.first == b && x.propensity.second == a));
  };
  if (!is(r[0], {1, 0}, PropensityKind::kLinear, 0, -1) || !is(r[1], {-1, 0}, PropensityKind::kBilinear, 0, 1) ||
      !is(r[2], {0, 1}, PropensityKind::kBilinear, 0, 1) || !is(r[3], {0, -1}, PropensityKind::kLinear, 1, -1))
    throw shape_error();
  return MomentSystem(model, build_partition(model), std::make_shared<LogNormalPoissonClosure>());
}

MomentSystem build_moment_system(const PopulationModel& model) {
  const auto partition = build_partition(model);
  const bool affine = std::none_of(model.reactions().begin(), model.reactions().end(), [](const Reaction& r) {
    return r.propensity.kind == PropensityKind::kBilinear;
  });
  if (affine) return build_affine_system(model, partition);
  return build_predator_prey_system(model);
}

}  // namespace mbvi
