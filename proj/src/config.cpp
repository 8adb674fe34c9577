#include "mbvi/config.hpp"

#include "mbvi/error.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

namespace mbvi {

namespace {

using nlohmann::json;

// Object reader that records which keys were consumed so leftovers can be rejected.
class Reader {
 public:
  Reader(const json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) fail("expected an object");
  }

  bool has(const std::string& key) const { return j_.contains(key); }

  const json& at(const std::string& key) {
    if (!j_.contains(key)) fail("missing required key '" + key + "'");
    used_.insert(key);
    return j_.at(key);
  }

  const json* find(const std::string& key) {
    if (!j_.contains(key)) return nullptr;
    used_.insert(key);
    return &j_.at(key);
  }

  double number(const std::string& key) { return as_number(at(key), key); }
  double number(const std::string& key, double fallback) {
    const json* v = find(key);
    return v ? as_number(*v, key) : fallback;
  }

  long long integer(const std::string& key, long long fallback) {
    const json* v = find(key);
    if (!v) return fallback;
    if (!v->is_number_integer()) fail("'" + key + "' must be an integer");
    return v->get<long long>();
  }

  std::string string(const std::string& key, const std::string& fallback) {
    const json* v = find(key);
    if (!v) return fallback;
    if (!v->is_string()) fail("'" + key + "' must be a string");
    return v->get<std::string>();
  }

  std::vector<double> numbers(const std::string& key) {
    const json& v = at(key);
    if (!v.is_array()) fail("'" + key + "' must be an array of numbers");
    std::vector<double> out;
    for (const auto& x : v) out.push_back(as_number(x, key));
    return out;
  }

  std::string path(const std::string& key) const { return where_ + "." + key; }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!used_.count(it.key())) fail("unknown key '" + it.key() + "'");
  }

  [[noreturn]] void fail(const std::string& msg) const { throw ConfigError(where_ + ": " + msg); }

 private:
  double as_number(const json& v, const std::string& key) const {
    if (!v.is_number()) fail("'" + key + "' must be a number");
    const double x = v.get<double>();
    if (!std::isfinite(x)) fail("'" + key + "' must be finite");
    return x;
  }

  const json& j_;
  std::string where_;
  std::set<std::string> used_;
};

int species_ref(const Reader& r, const std::vector<std::string>& species, const json& v) {
  if (v.is_string()) {
    for (std::size_t s = 0; s < species.size(); ++s)
      if (species[s] == v.get<std::string>()) return static_cast<int>(s);
    r.fail("unknown species '" + v.get<std::string>() + "'");
  }
  if (v.is_number_integer()) return v.get<int>();
  r.fail("species references must be names or indices");
}

Propensity parse_propensity(const json& j, const std::vector<std::string>& species, const std::string& where) {
  Reader r(j, where);
  const std::string kind = r.string("kind", "");
  Propensity p;
  if (kind == "constant") {
    p = Propensity::constant();
  } else if (kind == "linear" || kind == "affine_switch") {
    const int s = species_ref(r, species, r.at("species"));
    p = kind == "linear" ? Propensity::linear(s) : Propensity::affine_switch(s);
  } else if (kind == "bilinear") {
    const json& v = r.at("species");
    if (!v.is_array() || v.size() != 2) r.fail("bilinear propensity needs two species");
    p = Propensity::bilinear(species_ref(r, species, v[0]), species_ref(r, species, v[1]));
  } else {
    r.fail("propensity kind must be constant, linear, bilinear or affine_switch");
  }
  r.finish();
  return p;
}

std::vector<bool> parse_mask(Reader& r, const json& v, const std::vector<std::string>& names) {
  std::vector<bool> mask(names.size(), false);
  if (!v.is_array()) r.fail("'estimate' must be an array");
  for (const auto& e : v) {
    if (e.is_boolean()) continue;
    if (!e.is_string()) r.fail("'estimate' entries must be class names or booleans");
    bool found = false;
    for (std::size_t i = 0; i < names.size(); ++i)
      if (names[i] == e.get<std::string>()) mask[i] = found = true;
    if (!found) r.fail("unknown reaction '" + e.get<std::string>() + "' in 'estimate'");
  }
  if (!v.empty() && v[0].is_boolean()) {
    if (v.size() != names.size()) r.fail("'estimate' needs one boolean per reaction");
    for (std::size_t i = 0; i < names.size(); ++i) {
      if (!v[i].is_boolean()) r.fail("'estimate' mixes names and booleans");
      mask[i] = v[i].get<bool>();
    }
  }
  return mask;
}

json read_json_file(const std::filesystem::path& path, const std::string& what) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open " + what + " '" + path.string() + "'");
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError(what + " '" + path.string() + "' is not valid JSON: " + e.what());
  }
}

}  // namespace

PopulationModel model_from_json(const json& j) {
  Reader r(j, "model");
  const json& sp = r.at("species");
  if (!sp.is_array() || sp.empty()) r.fail("'species' must be a non-empty array of names");
  std::vector<std::string> species;
  for (const auto& s : sp) {
    if (!s.is_string()) r.fail("species names must be strings");
    species.push_back(s.get<std::string>());
  }
  const int d = static_cast<int>(species.size());

  std::vector<bool> binary(species.size(), false);
  if (const json* b = r.find("binary")) {
    if (!b->is_array()) r.fail("'binary' must be an array of species names");
    for (const auto& s : *b) binary[static_cast<std::size_t>(species_ref(r, species, s))] = true;
  }

  const json& rx = r.at("reactions");
  if (!rx.is_array()) r.fail("'reactions' must be an array");
  std::vector<Reaction> reactions;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    Reader rr(rx[i], "model.reactions[" + std::to_string(i) + "]");
    Reaction reaction;
    reaction.name = rr.string("name", "R" + std::to_string(i + 1));
    const std::vector<double> change = rr.numbers("change");
    if (static_cast<int>(change.size()) != d) rr.fail("'change' needs one entry per species");
    for (double c : change) {
      if (c != std::round(c)) rr.fail("'change' entries must be integers");
      reaction.change.push_back(static_cast<int>(c));
    }
    reaction.rate = rr.number("rate");
    reaction.propensity = parse_propensity(rr.at("propensity"), species, rr.path("propensity"));
    rr.finish();
    reactions.push_back(std::move(reaction));
  }

  const json& init = r.at("initial");
  InitialCondition initial;
  if (init.is_array()) {
    State x;
    for (const auto& v : init) {
      if (!v.is_number_integer()) r.fail("'initial' state entries must be integers");
      x.push_back(v.get<int>());
    }
    if (static_cast<int>(x.size()) != d) r.fail("'initial' needs one entry per species");
    initial = x;
  } else {
    Reader ri(init, "model.initial");
    const std::vector<double> mean = ri.numbers("mean");
    const json& second = ri.at("second");
    if (static_cast<int>(mean.size()) != d || !second.is_array() || static_cast<int>(second.size()) != d)
      ri.fail("'mean' and 'second' must match the species count");
    InitialMoments m{Eigen::VectorXd(d), Eigen::MatrixXd(d, d)};
    for (int s = 0; s < d; ++s) {
      m.mean[s] = mean[static_cast<std::size_t>(s)];
      if (!second[s].is_array() || static_cast<int>(second[s].size()) != d) ri.fail("'second' must be a square matrix");
      for (int u = 0; u < d; ++u) {
        if (!second[s][u].is_number()) ri.fail("'second' entries must be numbers");
        m.second(s, u) = second[s][u].get<double>();
      }
    }
    ri.finish();
    initial = m;
  }
  r.finish();
  try {
    return PopulationModel(std::move(species), std::move(reactions), std::move(initial), std::move(binary));
  } catch (const DomainError& e) {
    throw ConfigError(std::string("model: ") + e.what());
  }
}

json model_to_json(const PopulationModel& model) {
  json j;
  j["species"] = model.species();
  json binary = json::array();
  for (int s = 0; s < model.species_count(); ++s)
    if (model.is_binary(s)) binary.push_back(model.species()[static_cast<std::size_t>(s)]);
  j["binary"] = binary;
  json reactions = json::array();
  for (const auto& r : model.reactions()) {
    json p;
    const auto& names = model.species();
    switch (r.propensity.kind) {
      case PropensityKind::kConstant:
        p = {{"kind", "constant"}};
        break;
      case PropensityKind::kLinear:
        p = {{"kind", "linear"}, {"species", names[static_cast<std::size_t>(r.propensity.first)]}};
        break;
      case PropensityKind::kBilinear:
        p = {{"kind", "bilinear"},
             {"species", {names[static_cast<std::size_t>(r.propensity.first)],
                          names[static_cast<std::size_t>(r.propensity.second)]}}};
        break;
      case PropensityKind::kAffineSwitch:
        p = {{"kind", "affine_switch"}, {"species", names[static_cast<std::size_t>(r.propensity.first)]}};
        break;
    }
    reactions.push_back({{"name", r.name}, {"change", r.change}, {"rate", r.rate}, {"propensity", p}});
  }
  j["reactions"] = reactions;
  if (model.has_deterministic_initial_state()) {
    j["initial"] = model.initial_state();
  } else {
    const auto& m = std::get<InitialMoments>(model.initial());
    json second = json::array();
    for (long s = 0; s < m.second.rows(); ++s) {
      json row = json::array();
      for (long u = 0; u < m.second.cols(); ++u) row.push_back(m.second(s, u));
      second.push_back(row);
    }
    j["initial"] = {{"mean", std::vector<double>(m.mean.data(), m.mean.data() + m.mean.size())}, {"second", second}};
  }
  return j;
}

RunConfig parse_config(const json& j, const std::filesystem::path& base_dir) {
  Reader r(j, "config");
  auto resolve = [&](const std::string& p) {
    std::filesystem::path path(p);
    return path.is_absolute() ? path : base_dir / path;
  };

  std::filesystem::path model_path;
  const json& mj = r.at("model");
  json model_json;
  if (mj.is_string()) {
    model_path = resolve(mj.get<std::string>());
    model_json = read_json_file(model_path, "model file");
  } else if (mj.is_object()) {
    model_json = mj;
  } else {
    r.fail("'model' must be a file path or an inline model object");
  }
  PopulationModel model = model_from_json(model_json);
  const int d = model.species_count();
  const int classes = model.reaction_count();

  Eigen::VectorXd weights = Eigen::VectorXd::Zero(d);
  weights[d - 1] = 1.0;
  double variance = 1.0;
  if (const json* o = r.find("observation")) {
    Reader ro(*o, "config.observation");
    if (ro.has("weights")) {
      const std::vector<double> w = ro.numbers("weights");
      if (static_cast<int>(w.size()) != d) ro.fail("'weights' needs one entry per species");
      weights = Eigen::Map<const Eigen::VectorXd>(w.data(), d);
    }
    variance = ro.number("variance", variance);
    if (variance < 0.0) ro.fail("'variance' must be nonnegative");
    ro.finish();
  }

  RunConfig cfg(std::move(model), GaussianObservationModel(weights, variance));
  cfg.model_path = model_path;
  cfg.horizon = r.number("horizon");
  if (!(cfg.horizon > 0.0)) r.fail("'horizon' must be positive");
  cfg.grid_step = r.number("grid_step", cfg.grid_step);
  if (!(cfg.grid_step > 0.0) || cfg.grid_step > cfg.horizon) r.fail("'grid_step' must lie in (0, horizon]");
  const long long seed = r.integer("seed", 0);
  if (seed < 0) r.fail("'seed' must be nonnegative");
  cfg.seed = static_cast<std::uint64_t>(seed);
  const long long max_events = r.integer("max_events", static_cast<long long>(kDefaultMaxEvents));
  if (max_events < 1) r.fail("'max_events' must be positive");
  cfg.max_events = static_cast<std::uint64_t>(max_events);

  if (const json* s = r.find("simulate")) {
    Reader rs(*s, "config.simulate");
    cfg.runs = static_cast<int>(rs.integer("runs", 1));
    if (cfg.runs < 1 || cfg.runs > 100000) rs.fail("'runs' must lie in [1, 100000]");
    if (rs.has("observation_times") && rs.has("observation_count"))
      rs.fail("give either 'observation_times' or 'observation_count'");
    if (rs.has("observation_times")) {
      cfg.observation_times = rs.numbers("observation_times");
    } else if (rs.has("observation_count")) {
      const long long n = rs.integer("observation_count", 0);
      if (n < 0) rs.fail("'observation_count' must be nonnegative");
      cfg.observation_times = uniform_times(cfg.horizon, static_cast<int>(n));
    }
    try {
      ObservationSet{cfg.observation_times, std::vector<double>(cfg.observation_times.size(), 0.0)}.validate(cfg.horizon);
    } catch (const DomainError& e) {
      rs.fail(e.what());
    }
    rs.finish();
  }

  if (const json* o = r.find("observations")) {
    Reader ro(*o, "config.observations");
    const std::string source = ro.string("source", "simulate");
    if (source == "simulate") {
      cfg.source = ObservationSource::kSimulate;
    } else if (source == "file") {
      cfg.source = ObservationSource::kFile;
      const json& f = ro.at("file");
      if (!f.is_string()) ro.fail("'file' must be a path");
      cfg.observations_file = resolve(f.get<std::string>());
      if (!std::filesystem::is_regular_file(cfg.observations_file))
        ro.fail("observations file '" + cfg.observations_file.string() + "' does not exist");
    } else if (source == "inline") {
      cfg.source = ObservationSource::kInline;
      cfg.inline_observations.times = ro.numbers("times");
      cfg.inline_observations.values = ro.numbers("values");
      if (cfg.inline_observations.times.size() != cfg.inline_observations.values.size())
        ro.fail("'times' and 'values' differ in length");
      try {
        cfg.inline_observations.validate(cfg.horizon);
      } catch (const DomainError& e) {
        ro.fail(e.what());
      }
    } else {
      ro.fail("'source' must be simulate, file or inline");
    }
    ro.finish();
  }

  if (const json* e = r.find("exact")) {
    Reader re(*e, "config.exact");
    for (double b : re.numbers("bounds")) {
      if (b != std::round(b) || b < 0.0) re.fail("'bounds' must be nonnegative integers");
      cfg.bounds.push_back(static_cast<int>(b));
    }
    if (static_cast<int>(cfg.bounds.size()) != d) re.fail("'bounds' needs one entry per species");
    const long long ms = re.integer("max_states", static_cast<long long>(cfg.max_states));
    if (ms < 1) re.fail("'max_states' must be positive");
    cfg.max_states = static_cast<std::size_t>(ms);
    re.finish();
  }

  if (const json* s = r.find("smoother")) {
    Reader rs(*s, "config.smoother");
    SmoothOptions& o = cfg.smoother;
    const std::string interp = rs.string("interpolation", "linear");
    if (interp == "linear") cfg.interpolation = Interpolation::kLinear;
    else if (interp == "constant") cfg.interpolation = Interpolation::kPiecewiseConstant;
    else rs.fail("'interpolation' must be linear or constant");
    cfg.substeps = static_cast<int>(rs.integer("substeps", 1));
    if (cfg.substeps < 1 || cfg.substeps > 1000) rs.fail("'substeps' must lie in [1, 1000]");
    o.step = rs.number("step", o.step);
    o.max_step = rs.number("max_step", o.max_step);
    o.max_relative_change = rs.number("max_relative_change", o.max_relative_change);
    o.backtrack = rs.number("backtrack", o.backtrack);
    o.max_shrinks = static_cast<int>(rs.integer("max_shrinks", o.max_shrinks));
    o.tolerance = rs.number("tolerance", o.tolerance);
    o.max_iterations = static_cast<int>(rs.integer("max_iterations", o.max_iterations));
    const std::string method = rs.string("method", "natural_gradient");
    if (method == "natural_gradient") o.method = SmoothingMethod::kNaturalGradient;
    else if (method == "forward_backward") o.method = SmoothingMethod::kForwardBackwardSweep;
    else rs.fail("'method' must be natural_gradient or forward_backward");
    if (!(o.step > 0.0) || !(o.max_step >= o.step)) rs.fail("need 0 < step <= max_step");
    if (!(o.max_relative_change > 0.0 && o.max_relative_change < 1.0)) rs.fail("'max_relative_change' must lie in (0, 1)");
    if (!(o.backtrack > 0.0 && o.backtrack < 1.0)) rs.fail("'backtrack' must lie in (0, 1)");
    if (o.max_shrinks < 0 || o.max_shrinks > 200) rs.fail("'max_shrinks' must lie in [0, 200]");
    if (!(o.tolerance > 0.0)) rs.fail("'tolerance' must be positive");
    if (o.max_iterations < 1) rs.fail("'max_iterations' must be positive");
    rs.finish();
  }

  EMOptions& em = cfg.infer;
  em.interpolation = cfg.interpolation;
  em.substeps = cfg.substeps;
  em.smoother = cfg.smoother;
  if (const json* s = r.find("infer")) {
    Reader ri(*s, "config.infer");
    const std::string mode = ri.string("mode", "em");
    if (mode == "em") em.mode = EstimationMode::kEM;
    else if (mode == "vb") em.mode = EstimationMode::kVB;
    else ri.fail("'mode' must be em or vb");
    auto per_class = [&](const std::string& key) {
      const std::vector<double> v = ri.numbers(key);
      if (static_cast<int>(v.size()) != classes) ri.fail("'" + key + "' needs one entry per reaction");
      return Eigen::VectorXd(Eigen::Map<const Eigen::VectorXd>(v.data(), classes));
    };
    if (ri.has("initial")) {
      em.initial = per_class("initial");
      if ((em.initial->array() < 0.0).any()) ri.fail("'initial' rates must be nonnegative");
    }
    if (const json* p = ri.find("prior")) {
      Reader rp(*p, "config.infer.prior");
      const std::vector<double> shape = rp.numbers("shape"), rate = rp.numbers("rate");
      if (static_cast<int>(shape.size()) != classes || static_cast<int>(rate.size()) != classes)
        rp.fail("'shape' and 'rate' need one entry per reaction");
      rp.finish();
      try {
        em.prior = GammaPosterior(Eigen::Map<const Eigen::VectorXd>(shape.data(), classes),
                                  Eigen::Map<const Eigen::VectorXd>(rate.data(), classes));
      } catch (const DomainError& e) {
        rp.fail(e.what());
      }
    }
    const std::string plugin = ri.string("plugin", "mean");
    if (plugin == "mean") em.plugin = PluginRate::kMean;
    else if (plugin == "geometric_mean") em.plugin = PluginRate::kGeometricMean;
    else ri.fail("'plugin' must be mean or geometric_mean");
    if (const json* e = ri.find("estimate")) {
      std::vector<std::string> names;
      for (const auto& rx : cfg.model.reactions()) names.push_back(rx.name);
      em.estimate = parse_mask(ri, *e, names);
    }
    em.tolerance = ri.number("tolerance", em.tolerance);
    em.max_iterations = static_cast<int>(ri.integer("max_iterations", em.max_iterations));
    if (!(em.tolerance > 0.0)) ri.fail("'tolerance' must be positive");
    if (em.max_iterations < 1) ri.fail("'max_iterations' must be positive");
    if (em.mode == EstimationMode::kVB && !em.prior) ri.fail("vb mode needs a 'prior'");
    ri.finish();
  }
  r.finish();
  return cfg;
}

RunConfig load_config(const std::filesystem::path& path) {
  const json j = read_json_file(path, "config file");
  return parse_config(j, path.parent_path());
}

}  // namespace mbvi
