#pragma once

#include "mbvi/model.hpp"
#include "mbvi/obsmodel.hpp"
#include "mbvi/paraminfer.hpp"
#include "mbvi/ssa.hpp"
#include "mbvi/vismooth.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace mbvi {

/// Where the observations of a smoothing or inference run come from.
enum class ObservationSource { kSimulate, kFile, kInline };

struct RunConfig {
  RunConfig(PopulationModel model_, GaussianObservationModel observation_)
      : model(std::move(model_)), observation(std::move(observation_)) {}

  std::filesystem::path model_path;
  PopulationModel model;
  double horizon = 0.0;
  double grid_step = 0.01;
  std::uint64_t seed = 0;
  std::uint64_t max_events = kDefaultMaxEvents;

  // simulate
  int runs = 1;
  std::vector<double> observation_times;  // empty: no observations are drawn

  GaussianObservationModel observation;

  ObservationSource source = ObservationSource::kSimulate;
  std::filesystem::path observations_file;
  ObservationSet inline_observations;

  std::vector<int> bounds;  // exact engine; empty when not configured
  std::size_t max_states = 1'000'000;

  SmoothOptions smoother;
  Interpolation interpolation = Interpolation::kLinear;
  int substeps = 1;

  EMOptions infer;
};

/// Model description:
/// {"species": [...], "binary": [...], "initial": [...] | {"mean": [...], "second": [[...]]},
///  "reactions": [{"name", "change": [...], "rate", "propensity": {"kind", "species": [...]}}]}
PopulationModel model_from_json(const nlohmann::json& j);
nlohmann::json model_to_json(const PopulationModel& model);

/// Parses a run config; relative paths resolve against `base_dir`. Unknown keys, missing
/// required keys, out-of-range values and unreadable referenced files throw ConfigError.
RunConfig parse_config(const nlohmann::json& j, const std::filesystem::path& base_dir);
RunConfig load_config(const std::filesystem::path& path);

}  // namespace mbvi
