// Command-line front end: simulate, smooth (exact / vi / both) and infer.
#include "mbvi/config.hpp"
#include "mbvi/error.hpp"
#include "mbvi/exact.hpp"
#include "mbvi/grid.hpp"
#include "mbvi/io.hpp"
#include "mbvi/moments.hpp"
#include "mbvi/paraminfer.hpp"
#include "mbvi/ssa.hpp"
#include "mbvi/vismooth.hpp"

#include <CLI11.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

namespace fs = std::filesystem;
using namespace mbvi;

namespace {

constexpr int kExitError = 1;
constexpr int kExitNotConverged = 2;

// Files are collected in memory and only written once the command has succeeded.
class Outputs {
 public:
  std::ostream& open(const std::string& name) {
    files_.emplace_back(name, std::make_unique<std::ostringstream>());
    return *files_.back().second;
  }
  void json(const std::string& name, const nlohmann::json& j) { open(name) << std::setw(2) << j << "\n"; }

  void commit(const fs::path& dir) const {
    fs::create_directories(dir);
    std::vector<fs::path> written;
    try {
      for (const auto& [name, body] : files_) {
        const fs::path target = dir / name;
        const fs::path tmp = dir / (name + ".partial");
        {
          std::ofstream out(tmp, std::ios::binary);
          out << body->str();
          out.flush();
          if (!out) throw Error("cannot write '" + tmp.string() + "'");
        }
        written.push_back(tmp);
      }
      for (const auto& [name, body] : files_) fs::rename(dir / (name + ".partial"), dir / name);
    } catch (...) {
      std::error_code ec;
      for (const auto& p : written) fs::remove(p, ec);
      throw;
    }
  }

 private:
  std::vector<std::pair<std::string, std::unique_ptr<std::ostringstream>>> files_;
};

std::vector<std::string> class_names(const PopulationModel& model) {
  std::vector<std::string> names;
  for (const auto& r : model.reactions()) names.push_back(r.name);
  return names;
}

std::string numbered(const std::string& stem, int k, int total) {
  if (total == 1) return stem + ".csv";
  std::ostringstream s;
  s << stem << "_" << std::setw(4) << std::setfill('0') << k << ".csv";
  return s.str();
}

struct LoadedObservations {
  ObservationSet obs;
  std::optional<Trajectory> truth;
};

LoadedObservations load_observations(const RunConfig& cfg) {
  switch (cfg.source) {
    case ObservationSource::kFile: {
      std::ifstream in(cfg.observations_file);
      if (!in) throw ConfigError("cannot open observations file '" + cfg.observations_file.string() + "'");
      ObservationSet obs = read_observations_csv(in);
      obs.validate(cfg.horizon);
      return {obs, std::nullopt};
    }
    case ObservationSource::kInline:
      return {cfg.inline_observations, std::nullopt};
    case ObservationSource::kSimulate:
      break;
  }
  Trajectory traj = simulate(cfg.model, cfg.horizon, cfg.seed, cfg.max_events);
  ObservationSet obs = observe(traj, cfg.observation_times, cfg.observation, cfg.seed);
  return {obs, std::move(traj)};
}

int cmd_simulate(const RunConfig& cfg, Outputs& out) {
  std::vector<std::uint64_t> seeds;
  for (int k = 0; k < cfg.runs; ++k) seeds.push_back(cfg.seed + static_cast<std::uint64_t>(k));
  const std::vector<Trajectory> trajs = simulate_batch(cfg.model, cfg.horizon, seeds, cfg.max_events);
  nlohmann::json runs = nlohmann::json::array();
  for (int k = 0; k < cfg.runs; ++k) {
    const auto& traj = trajs[static_cast<std::size_t>(k)];
    write_csv(out.open(numbered("trajectory", k + 1, cfg.runs)), traj, cfg.model.species());
    const ObservationSet obs = observe(traj, cfg.observation_times, cfg.observation, seeds[static_cast<std::size_t>(k)]);
    write_csv(out.open(numbered("observations", k + 1, cfg.runs)), obs);
    runs.push_back({{"seed", seeds[static_cast<std::size_t>(k)]}, {"jumps", traj.jumps()}});
  }
  out.json("simulate_summary.json", {{"tool_version", kToolVersion}, {"horizon", cfg.horizon}, {"runs", runs}});
  return 0;
}

double rms(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  return std::sqrt((a - b).squaredNorm() / static_cast<double>(a.size()));
}

int cmd_smooth(const RunConfig& cfg, const std::string& engine, Outputs& out) {
  const TimeGrid grid(cfg.horizon, cfg.grid_step);
  const LoadedObservations data = load_observations(cfg);
  if (data.truth) write_csv(out.open("trajectory.csv"), *data.truth, cfg.model.species());
  write_csv(out.open("observations.csv"), data.obs);
  const auto& species = cfg.model.species();
  const MomentLayout layout(cfg.model.species_count());

  int status = 0;
  nlohmann::json summary = {{"tool_version", kToolVersion}, {"engine", engine}, {"observations", data.obs.size()}};
  std::optional<Eigen::MatrixXd> vi_psi, exact_psi;

  if (engine == "vi" || engine == "both") {
    SmoothOptions opts = cfg.smoother;
    opts.throw_on_stall = false;
    const VariationalSmoother smoother(build_moment_system(cfg.model), grid, data.obs, cfg.observation,
                                       cfg.interpolation, cfg.substeps);
    const VIResult res = smoother.smooth(opts);
    write_lambda_csv(out.open("lambda.csv"), res, class_names(cfg.model));
    write_moments_csv(out.open("moments_vi.csv"), grid, res.psi, species);
    write_objective_csv(out.open("objective.csv"), res);
    summary["vi"] = summary_json(res);
    vi_psi = res.psi;
    if (!res.converged) status = kExitNotConverged;
  }

  if (engine == "exact" || engine == "both") {
    if (cfg.bounds.empty()) throw ConfigError("the exact engine needs 'exact.bounds' in the config");
    const TruncatedStateSpace space(cfg.model, cfg.bounds, cfg.max_states);
    const BackwardSolution back = backward_solve(space, data.obs, cfg.observation, grid);
    const Eigen::VectorXd p0 = initial_distribution(space, cfg.model);
    const Marginals post = posterior_marginals(space, p0, back);
    exact_psi = posterior_moments(space, post);
    write_moments_csv(out.open("moments_exact.csv"), grid, *exact_psi, species);
    summary["exact"] = {{"states", space.size()}, {"log_evidence", log_evidence(space, p0, back)}};
  }

  if (vi_psi && exact_psi) {
    nlohmann::json cmp = nlohmann::json::object();
    for (int s = 0; s < layout.species(); ++s) {
      Eigen::VectorXd sd_vi(grid.points()), sd_ex(grid.points());
      for (int n = 0; n < grid.points(); ++n) {
        sd_vi[n] = std::sqrt(std::max(0.0, layout.covariance(vi_psi->col(n))(s, s)));
        sd_ex[n] = std::sqrt(std::max(0.0, layout.covariance(exact_psi->col(n))(s, s)));
      }
      cmp[species[static_cast<std::size_t>(s)]] = {
          {"rms_mean", rms(vi_psi->row(s).transpose(), exact_psi->row(s).transpose())},
          {"rms_sd", rms(sd_vi, sd_ex)}};
    }
    out.json("comparison.json", {{"tool_version", kToolVersion}, {"species", cmp}});
  }
  out.json("smooth_summary.json", summary);
  return status;
}

int cmd_infer(const RunConfig& cfg, Outputs& out) {
  const TimeGrid grid(cfg.horizon, cfg.grid_step);
  const LoadedObservations data = load_observations(cfg);
  if (data.truth) write_csv(out.open("trajectory.csv"), *data.truth, cfg.model.species());
  write_csv(out.open("observations.csv"), data.obs);
  if (cfg.infer.mode == EstimationMode::kVB && !cfg.infer.prior)
    throw ConfigError("VB mode needs 'infer.prior' with gamma shape and rate per reaction");
  const EMResult res = variational_em(cfg.model, grid, data.obs, cfg.observation, cfg.infer);
  const auto names = class_names(cfg.model);
  write_em_csv(out.open("em_trace.csv"), res, names);
  if (res.final_smoothing) {
    write_lambda_csv(out.open("lambda.csv"), *res.final_smoothing, names);
    write_moments_csv(out.open("moments_vi.csv"), grid, res.final_smoothing->psi, cfg.model.species());
  }
  nlohmann::json j = summary_json(res, names);
  j["mode"] = cfg.infer.mode == EstimationMode::kVB ? "vb" : "em";
  out.json("estimates.json", j);
  return res.converged ? 0 : kExitNotConverged;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Moment-based variational smoothing and parameter inference for population jump processes"};
  app.set_version_flag("--version", std::string(kToolVersion));
  app.require_subcommand(1);

  std::string config_path, out_dir, engine = "vi", mode;
  std::optional<std::uint64_t> seed;
  std::optional<double> grid_step;

  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "run configuration (JSON)")->required()->check(CLI::ExistingFile);
    sub->add_option("--out", out_dir, "output directory")->required();
    sub->add_option("--seed", seed, "overrides the configured seed");
    sub->add_option("--grid-step", grid_step, "overrides the configured grid step")->check(CLI::PositiveNumber);
  };
  CLI::App* sim = app.add_subcommand("simulate", "draw trajectories and noisy observations");
  common(sim);
  CLI::App* smooth = app.add_subcommand("smooth", "posterior moments from exact or variational smoothing");
  common(smooth);
  smooth->add_option("--engine", engine, "exact, vi or both")->check(CLI::IsMember({"exact", "vi", "both"}));
  CLI::App* infer = app.add_subcommand("infer", "variational EM / VB estimation of rate constants");
  common(infer);
  infer->add_option("--mode", mode, "em or vb (overrides the config)")->check(CLI::IsMember({"em", "vb"}));

  CLI11_PARSE(app, argc, argv);

  try {
    RunConfig cfg = load_config(config_path);
    if (seed) cfg.seed = *seed;
    if (grid_step) {
      if (*grid_step > cfg.horizon) throw ConfigError("--grid-step exceeds the horizon");
      cfg.grid_step = *grid_step;
    }
    if (!mode.empty()) cfg.infer.mode = mode == "vb" ? EstimationMode::kVB : EstimationMode::kEM;

    Outputs out;
    int status = 0;
    if (sim->parsed()) status = cmd_simulate(cfg, out);
    else if (smooth->parsed()) status = cmd_smooth(cfg, engine, out);
    else status = cmd_infer(cfg, out);
    out.commit(out_dir);
    if (status == kExitNotConverged) std::cerr << "warning: optimisation did not converge\n";
    return status;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitError;
  }
}
