#pragma once

#include "mbvi/grid.hpp"
#include "mbvi/model.hpp"
#include "mbvi/obsmodel.hpp"
#include "mbvi/ssa.hpp"
#include "mbvi/vismooth.hpp"

#include <nlohmann/json.hpp>

#include <Eigen/Dense>

#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace mbvi {

/// G_i = int E[h_i] dt (exposure) and H_i = int E[h_i] lambda_i dt (expected number of class-i events),
/// where lambda_i is the absolute rate of class i under the variational process.
struct SummaryStats {
  Eigen::VectorXd G;
  Eigen::VectorXd H;
};

/// Trapezoidal integrals of phi and phi * lambda over the grid (classes x points inputs).
SummaryStats summary_stats(const TimeGrid& grid, const Eigen::MatrixXd& phi, const Eigen::MatrixXd& lambda);

/// theta_i = H_i / G_i; throws UndefinedParameter when a class has zero exposure.
Eigen::VectorXd em_update(const SummaryStats& stats);

/// Gamma(shape, rate) factors of the rate-parameter posterior, one per class.
struct GammaPosterior {
  Eigen::VectorXd shape;
  Eigen::VectorXd rate;

  GammaPosterior(Eigen::VectorXd shape_, Eigen::VectorXd rate_);
  Eigen::VectorXd mean() const { return shape.cwiseQuotient(rate); }
  /// exp(E[log c]) = exp(digamma(shape)) / rate.
  Eigen::VectorXd geometric_mean() const;
};

/// shape' = shape + H, rate' = rate + G.
GammaPosterior vb_gamma_update(const GammaPosterior& prior, const SummaryStats& stats);

enum class EstimationMode { kEM, kVB };
/// Rate handed to the smoother in VB mode.
enum class PluginRate { kMean, kGeometricMean };

struct EMOptions {
  EstimationMode mode = EstimationMode::kEM;
  std::optional<Eigen::VectorXd> initial;  // starting rates; the model's rates by default
  std::optional<GammaPosterior> prior;     // required in VB mode
  PluginRate plugin = PluginRate::kMean;
  std::vector<bool> estimate;              // classes to update; all by default
  double tolerance = 1e-4;
  int max_iterations = 50;
  Interpolation interpolation = Interpolation::kLinear;
  int substeps = 1;
  SmoothOptions smoother;
};

struct EMResult {
  Eigen::VectorXd theta;                       // final rate estimates (plug-in rates in VB mode)
  std::vector<Eigen::VectorXd> theta_trace;    // starting point followed by one entry per iteration
  std::optional<GammaPosterior> posterior;     // VB mode
  std::vector<GammaPosterior> posterior_trace;
  std::vector<double> objective_trace;         // smoother objective after each iteration
  std::optional<VIResult> final_smoothing;
  bool converged = false;
  int iterations = 0;
};

/// Alternates smoothing at the current rates with closed-form rate updates. The scaling
/// factors of the smoother are relative to the current rates; between iterations they are
/// rescaled so that the absolute variational rates carry over.
EMResult variational_em(const PopulationModel& model, const TimeGrid& grid, const ObservationSet& obs,
                        const GaussianObservationModel& obs_model, const EMOptions& options = {});

/// Columns: iteration, objective, theta_<class>... and in VB mode shape_<class>..., rate_<class>...
void write_em_csv(std::ostream& out, const EMResult& result, const std::vector<std::string>& class_names);
nlohmann::json summary_json(const EMResult& result, const std::vector<std::string>& class_names);

}  // namespace mbvi
