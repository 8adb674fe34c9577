#include "mbvi/paraminfer.hpp"

#include "mbvi/error.hpp"
#include "mbvi/io.hpp"

#include <boost/math/special_functions/digamma.hpp>

#include <cmath>
#include <ostream>

namespace mbvi {

SummaryStats summary_stats(const TimeGrid& grid, const Eigen::MatrixXd& phi, const Eigen::MatrixXd& lambda) {
  if (phi.cols() != grid.points() || lambda.cols() != grid.points() || phi.rows() != lambda.rows())
    throw DomainError("summary statistics need phi and lambda on the same grid");
  SummaryStats s{Eigen::VectorXd::Zero(phi.rows()), Eigen::VectorXd::Zero(phi.rows())};
  for (int n = 0; n < grid.points(); ++n) {
    s.G += grid.weight(n) * phi.col(n);
    s.H += grid.weight(n) * phi.col(n).cwiseProduct(lambda.col(n));
  }
  return s;
}

Eigen::VectorXd em_update(const SummaryStats& stats) {
  if (stats.G.size() != stats.H.size()) throw DomainError("summary statistics differ in length");
  Eigen::VectorXd theta(stats.G.size());
  for (long i = 0; i < theta.size(); ++i) {
    if (!(stats.G[i] > 0.0))
      throw UndefinedParameter("class " + std::to_string(i + 1) + " has zero exposure; its rate is not identifiable");
    theta[i] = stats.H[i] / stats.G[i];
  }
  return theta;
}

GammaPosterior::GammaPosterior(Eigen::VectorXd shape_, Eigen::VectorXd rate_)
    : shape(std::move(shape_)), rate(std::move(rate_)) {
  if (shape.size() != rate.size()) throw DomainError("gamma shape and rate differ in length");
  if (!shape.allFinite() || !rate.allFinite() || (shape.array() <= 0.0).any() || (rate.array() <= 0.0).any())
    throw DomainError("gamma shape and rate must be positive");
}

Eigen::VectorXd GammaPosterior::geometric_mean() const {
  Eigen::VectorXd g(shape.size());
  for (long i = 0; i < g.size(); ++i) g[i] = std::exp(boost::math::digamma(shape[i])) / rate[i];
  return g;
}

GammaPosterior vb_gamma_update(const GammaPosterior& prior, const SummaryStats& stats) {
  if (stats.G.size() != prior.shape.size() || stats.H.size() != prior.shape.size())
    throw DomainError("summary statistics do not match the prior");
  return GammaPosterior(prior.shape + stats.H, prior.rate + stats.G);
}

EMResult variational_em(const PopulationModel& model, const TimeGrid& grid, const ObservationSet& obs,
                        const GaussianObservationModel& obs_model, const EMOptions& options) {
  const int r = model.reaction_count();
  if (options.max_iterations < 1 || !(options.tolerance > 0.0)) throw DomainError("invalid EM options");
  std::vector<bool> estimate = options.estimate.empty() ? std::vector<bool>(static_cast<std::size_t>(r), true) : options.estimate;
  if (static_cast<int>(estimate.size()) != r) throw DomainError("estimate mask needs one entry per class");

  Eigen::VectorXd theta = options.initial ? *options.initial : model.rates();
  if (theta.size() != r || !theta.allFinite() || (theta.array() < 0.0).any())
    throw DomainError("initial rates must be non-negative, one per class");

  const bool vb = options.mode == EstimationMode::kVB;
  if (vb && !options.prior) throw DomainError("VB mode needs a gamma prior");
  if (vb && options.prior->shape.size() != r) throw DomainError("gamma prior needs one factor per class");

  EMResult result;
  if (vb) {
    result.posterior = *options.prior;
    const Eigen::VectorXd plug =
        options.plugin == PluginRate::kMean ? options.prior->mean() : options.prior->geometric_mean();
    for (int i = 0; i < r; ++i)
      if (estimate[static_cast<std::size_t>(i)]) theta[i] = plug[i];
  }
  result.theta_trace.push_back(theta);

  const MomentSystem unit = build_moment_system(model.with_rates(std::vector<double>(static_cast<std::size_t>(r), 1.0)));
  std::optional<ScalingFactors> warm;
  SmoothOptions sopts = options.smoother;

  for (int iter = 1; iter <= options.max_iterations; ++iter) {
    result.iterations = iter;
    const PopulationModel current = model.with_rates(std::vector<double>(theta.data(), theta.data() + r));
    const VariationalSmoother smoother(build_moment_system(current), grid, obs, obs_model, options.interpolation,
                                         options.substeps);
    sopts.initial = warm;
    VIResult vi = [&] {
      try {
        return smoother.smooth(sopts);
      } catch (const SmoothingStalled& e) {
        throw SmoothingStalled("EM iteration " + std::to_string(iter) + ": " + e.what(), e.best());
      } catch (const Error& e) {
        throw Error("EM iteration " + std::to_string(iter) + ": " + e.what());
      }
    }();
    result.objective_trace.push_back(vi.objective());

    const auto [exposure, weighted] = smoother.propensity_integrals(vi.lambda, vi.psi, unit);
    SummaryStats stats{exposure, theta.cwiseProduct(weighted)};

    Eigen::VectorXd next = theta;
    if (vb) {
      // Conjugate update from the original prior with the current statistics.
      GammaPosterior post = vb_gamma_update(*options.prior, stats);
      for (int i = 0; i < r; ++i) {
        if (estimate[static_cast<std::size_t>(i)]) continue;
        post.shape[i] = options.prior->shape[i];
        post.rate[i] = options.prior->rate[i];
      }
      const Eigen::VectorXd plug = options.plugin == PluginRate::kMean ? post.mean() : post.geometric_mean();
      for (int i = 0; i < r; ++i)
        if (estimate[static_cast<std::size_t>(i)]) next[i] = plug[i];
      result.posterior_trace.push_back(post);
      result.posterior = post;
    } else {
      for (int i = 0; i < r; ++i) {
        if (!estimate[static_cast<std::size_t>(i)]) continue;
        if (!(stats.G[i] > 0.0))
          throw UndefinedParameter("EM iteration " + std::to_string(iter) + ": class " + std::to_string(i + 1) +
                                   " has zero exposure");
        next[i] = stats.H[i] / stats.G[i];
      }
    }

    // Keep the absolute variational rates theta * lambda when theta changes.
    warm = vi.lambda;
    for (int i = 0; i < r; ++i) {
      const double ratio = next[i] > 0.0 ? theta[i] / next[i] : 1.0;
      if (ratio != 1.0) warm->values.row(i) = (warm->values.row(i) * ratio).cwiseMax(kLambdaFloor);
    }
    theta = next;
    result.theta_trace.push_back(theta);
    result.final_smoothing = std::move(vi);

    const auto& tr = result.objective_trace;
    if (tr.size() >= 2 && std::abs(tr[tr.size() - 1] - tr[tr.size() - 2]) < options.tolerance) {
      result.converged = true;
      break;
    }
  }
  result.theta = theta;
  return result;
}

void write_em_csv(std::ostream& out, const EMResult& result, const std::vector<std::string>& class_names) {
  const long r = result.theta.size();
  auto name = [&](long i) {
    return static_cast<std::size_t>(i) < class_names.size() ? class_names[static_cast<std::size_t>(i)] : std::to_string(i + 1);
  };
  CsvTable table;
  table.header = {"iteration", "objective"};
  for (long i = 0; i < r; ++i) table.header.push_back("theta_" + name(i));
  const bool vb = !result.posterior_trace.empty();
  if (vb) {
    for (long i = 0; i < r; ++i) table.header.push_back("shape_" + name(i));
    for (long i = 0; i < r; ++i) table.header.push_back("rate_" + name(i));
  }
  for (std::size_t k = 1; k < result.theta_trace.size(); ++k) {
    std::vector<double> row{static_cast<double>(k), result.objective_trace[k - 1]};
    for (long i = 0; i < r; ++i) row.push_back(result.theta_trace[k][i]);
    if (vb) {
      const auto& p = result.posterior_trace[k - 1];
      for (long i = 0; i < r; ++i) row.push_back(p.shape[i]);
      for (long i = 0; i < r; ++i) row.push_back(p.rate[i]);
    }
    table.rows.push_back(std::move(row));
  }
  write_csv_table(out, "em_trace", table);
}

nlohmann::json summary_json(const EMResult& result, const std::vector<std::string>& class_names) {
  nlohmann::json rates = nlohmann::json::object();
  for (long i = 0; i < result.theta.size(); ++i) {
    const std::string key =
        static_cast<std::size_t>(i) < class_names.size() ? class_names[static_cast<std::size_t>(i)] : std::to_string(i + 1);
    rates[key] = result.theta[i];
  }
  nlohmann::json j = {{"tool_version", kToolVersion},
                      {"converged", result.converged},
                      {"iterations", result.iterations},
                      {"objective", result.objective_trace.empty() ? 0.0 : result.objective_trace.back()},
                      {"rates", rates}};
  if (result.posterior) {
    nlohmann::json post = nlohmann::json::object();
    for (long i = 0; i < result.theta.size(); ++i) {
      const std::string key =
          static_cast<std::size_t>(i) < class_names.size() ? class_names[static_cast<std::size_t>(i)] : std::to_string(i + 1);
      post[key] = {{"shape", result.posterior->shape[i]}, {"rate", result.posterior->rate[i]}};
    }
    j["posterior"] = post;
  }
  return j;
}

}  // namespace mbvi
