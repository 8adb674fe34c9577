#pragma once

#include "mbvi/model.hpp"

#include <Eigen/Dense>

#include <array>
#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace mbvi {

inline constexpr int kMaxSpecies = 4;
inline constexpr int kMaxPsi = kMaxSpecies + kMaxSpecies * (kMaxSpecies + 1) / 2;
inline constexpr int kMaxClasses = 16;

// Small fixed-capacity types keep moment evaluations off the heap.
using PsiVector = Eigen::Matrix<double, Eigen::Dynamic, 1, Eigen::ColMajor, kMaxPsi, 1>;
using ClassVector = Eigen::Matrix<double, Eigen::Dynamic, 1, Eigen::ColMajor, kMaxClasses, 1>;
using PsiMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::ColMajor, kMaxPsi, kMaxPsi>;
using PsiByClass = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::ColMajor, kMaxPsi, kMaxClasses>;
using ClassByPsi = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::ColMajor, kMaxClasses, kMaxPsi>;

using ConstVecRef = Eigen::Ref<const Eigen::VectorXd>;

inline constexpr int kMaxBasis = 64;
using BasisVector = Eigen::Matrix<double, Eigen::Dynamic, 1, Eigen::ColMajor, kMaxBasis, 1>;

/// Packing of first moments m_s and non-central second moments m_su (s <= u)
/// into one vector: [m_1 .. m_d, m_11, m_12, .., m_1d, m_22, .., m_dd].
class MomentLayout {
 public:
  explicit MomentLayout(int species);

  int species() const { return species_; }
  int dim() const { return species_ + species_ * (species_ + 1) / 2; }
  int mean(int s) const { return s; }
  int second(int s, int u) const;

  Eigen::VectorXd means(ConstVecRef psi) const;
  Eigen::MatrixXd second_moments(ConstVecRef psi) const;
  Eigen::MatrixXd covariance(ConstVecRef psi) const;
  Eigen::VectorXd pack(const Eigen::VectorXd& mean, const Eigen::MatrixXd& second) const;
  /// Moments of a point mass at x.
  Eigen::VectorXd point_mass(std::span<const int> x) const;
  std::string name(int k) const;

 private:
  int species_;
};

/// Monomial x_1^e_1 ... x_d^e_d as its exponent vector.
using Exponents = std::vector<int>;

/// Closure values and their gradients with respect to psi.
struct ClosureValues {
  Eigen::VectorXd values;
  Eigen::MatrixXd gradient;  // values.size() x psi_dim
  int clamps = 0;
};

/// Supplies third-order moments that the moment equations need but psi does not carry.
class Closure {
 public:
  virtual ~Closure() = default;
  virtual std::vector<Exponents> monomials() const = 0;
  virtual void evaluate(const MomentLayout& layout, ConstVecRef psi, ClosureValues& out) const = 0;
  virtual std::string name() const = 0;
};

/// Result of the log-normal / product-Poisson closure for two species.
struct LnpClosure {
  double m112 = 0.0;
  double m122 = 0.0;
  /// Partial derivatives ordered (m1, m2, m11, m12, m22).
  std::array<double, 5> d112{};
  std::array<double, 5> d122{};
  bool clamped = false;
};

inline constexpr double kClosureMeanFloor = 1e-6;

/// E[X1^2 X2] = (m11 - m1) m12^2 / (m1^2 m2) + m12 and the index-swapped formula for E[X1 X2^2].
/// Means below `floor` are replaced by `floor` inside the denominators.
LnpClosure closure_lnp(double m1, double m2, double m11, double m12, double m22,
                       double floor = kClosureMeanFloor);

class LogNormalPoissonClosure final : public Closure {
 public:
  std::vector<Exponents> monomials() const override { return {{2, 1}, {1, 2}}; }
  void evaluate(const MomentLayout& layout, ConstVecRef psi, ClosureValues& out) const override;
  std::string name() const override { return "log-normal product-Poisson"; }
};

/// Closure backed by an arbitrary callable; used to plug exact third moments into the equations.
class FunctionClosure final : public Closure {
 public:
  using Fn = std::function<void(const MomentLayout&, ConstVecRef, ClosureValues&)>;
  FunctionClosure(std::vector<Exponents> monomials, Fn fn, std::string name = "function")
      : monomials_(std::move(monomials)), fn_(std::move(fn)), name_(std::move(name)) {}
  std::vector<Exponents> monomials() const override { return monomials_; }
  void evaluate(const MomentLayout& layout, ConstVecRef psi, ClosureValues& out) const override {
    fn_(layout, psi, out);
  }
  std::string name() const override { return name_; }

 private:
  std::vector<Exponents> monomials_;
  Fn fn_;
  std::string name_;
};

inline constexpr double kCovarianceTolerance = 1e-8;

/// Closed moment dynamics psi' = f(lambda, psi) = sum_j lambda_j f_j(psi) for the
/// population partition, together with phi = g(psi) and all Jacobians.
///
/// The equations are generated once from the mass-action polynomials:
///   d/dt E[G(X)] = sum_j lambda_j c_j E[(G(X + v_j) - G(X)) h_j(X)]
/// for G in {x_s, x_s x_u}. Every expectation is linear in the basis
///   mu(psi) = [1, psi, closure(psi)],
/// so the system is stored as one coefficient matrix per class.
class MomentSystem {
 public:
  MomentSystem(const PopulationModel& model, const Partition& partition,
               std::shared_ptr<const Closure> closure = nullptr);

  int psi_dim() const { return layout_.dim(); }
  int class_count() const { return classes_; }
  int species() const { return layout_.species(); }
  const MomentLayout& layout() const { return layout_; }
  const PsiVector& initial_psi() const { return initial_psi_; }
  bool naturally_closed() const { return closure_slots_ == 0; }
  const std::vector<bool>& binary() const { return binary_; }
  const Eigen::VectorXd& rates() const { return rates_; }

  ClassVector natural_moments(ConstVecRef psi) const;
  ClassByPsi natural_moments_jacobian(ConstVecRef psi) const;

  /// `clamps`, when given, is incremented by the number of closure floor activations.
  PsiVector drift(ConstVecRef lambda, ConstVecRef psi, int* clamps = nullptr) const;
  PsiMatrix drift_jacobian_psi(ConstVecRef lambda, ConstVecRef psi) const;
  /// Column j is f_j(psi); independent of lambda.
  PsiByClass drift_jacobian_lambda(ConstVecRef psi) const;

  /// Vector-Jacobian products: psi_bar = (df/dpsi)^T w, lambda_bar = (df/dlambda)^T w.
  void drift_vjp(ConstVecRef lambda, ConstVecRef psi, ConstVecRef w, PsiVector& psi_bar,
                 ClassVector& lambda_bar) const;

  /// Projects psi back onto valid moment states: nonnegative means, PSD covariance
  /// (eigenvalue clipping when violated by more than kCovarianceTolerance), and
  /// m_ss = m_s for binary species. Returns true when psi was modified.
  bool project(PsiVector& psi) const;

  /// Human-readable equations, one line per psi component.
  std::string describe() const;

 private:
  int basis_dim() const { return 1 + psi_dim() + closure_slots_; }
  void basis(ConstVecRef psi, BasisVector& mu,
             ClosureValues* closure_values, int* clamps) const;
  std::string basis_name(int idx) const;

  MomentLayout layout_;
  int classes_ = 0;
  int closure_slots_ = 0;
  std::shared_ptr<const Closure> closure_;
  std::vector<bool> binary_;
  Eigen::VectorXd rates_;
  // coefficients_[j] is psi_dim x basis_dim, already multiplied by c_j.
  std::vector<Eigen::MatrixXd> coefficients_;
  Eigen::MatrixXd natural_;  // class_count x basis_dim
  PsiVector initial_psi_;
};

/// Exact moment equations for models whose propensities are constant, linear or affine-switch.
/// Throws NotClosedError when a bilinear propensity is present.
MomentSystem build_affine_system(const PopulationModel& model, const Partition& partition);

/// Moment equations of the two-species predator-prey network, closed with closure_lnp.
MomentSystem build_predator_prey_system(const PopulationModel& model);

/// Affine builder when possible, predator-prey closure otherwise.
MomentSystem build_moment_system(const PopulationModel& model);

}  // namespace mbvi
