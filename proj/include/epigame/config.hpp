#pragma once

// Run configuration: nested JSON with explicit units in key names. A preset
// supplies a complete document; a user file is merged over it, and every
// field is validated with its dotted path in the error message.

#include "epigame/dfp.hpp"
#include "epigame/presets.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace epigame {

using json = nlohmann::json;

/// Invalid or incomplete configuration; `field()` is the dotted path.
class ConfigError : public std::runtime_error {
 public:
  ConfigError(std::string field, const std::string& what)
      : std::runtime_error(field + ": " + what), field_(std::move(field)) {}
  const std::string& field() const { return field_; }

 private:
  std::string field_;
};

struct SimulationConfig {
  std::size_t paths = 256;
};

struct RunConfig {
  std::string preset;
  GameParams params;
  GameState x0;
  TimeGrid grid;
  dfp::SolverConfig solver;
  SimulationConfig simulation;
  std::vector<std::string> region_names;
  std::uint64_t seed = 1;
  std::filesystem::path output_dir = "epigame-run";
  json resolved;  // the merged document the config was read from

  /// 16 hex digits of FNV-1a over the canonical dump of `resolved`.
  std::string hash() const;
  dfp::Game game() const { return dfp::Game{params, x0, grid}; }
};

inline std::vector<std::string> preset_names() { return {"ny-nj-pa"}; }

/// Solver settings of the NY / NJ / PA case study.
inline dfp::SolverConfig ny_nj_pa_solver() {
  dfp::SolverConfig c;
  c.stages = 10;
  c.tolerance = 1e-3;
  c.iterations_per_stage = 1000;
  c.batch_size = 32;
  c.tau = 1e-3;
  c.learning_rate = 1e-3;
  c.jitter = 0.5;
  c.hidden = {32, 32, 32};
  c.threads = 1;
  return c;
}

/// Complete configuration document of a named preset.
inline json preset_document(const std::string& name) {
  if (name != "ny-nj-pa") throw ConfigError("preset", "unknown preset '" + name + "'");
  const GameParams p = ny_nj_pa_params();
  const GameState s = ny_nj_pa_initial_state();
  const dfp::SolverConfig sc = ny_nj_pa_solver();
  auto vec = [](const Eigen::VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); };
  std::vector<double> S, E, I, R;
  for (std::size_t r = 0; r < 3; ++r) {
    S.push_back(s.S(r));
    E.push_back(s.E(r));
    I.push_back(s.I(r));
    R.push_back(s.R(r));
  }
  return json{
      {"preset", name},
      {"seed", 1},
      {"output_dir", "runs/ny-nj-pa"},
      {"model",
       {{"num_regions", 3},
        {"region_names", ny_nj_pa_region_names()},
        {"contact", {{"base_rate_per_day", 0.17}, {"residency_fraction", 0.9}}},
        {"latency_rate_per_day", p.latency_rate},
        {"base_recovery_rate_per_day", p.base_recovery_rate},
        {"death_rate_per_day", p.death_rate},
        {"policy_effectiveness", p.policy_effectiveness},
        {"noise_s_per_sqrt_day", vec(p.noise_s)},
        {"noise_e_per_sqrt_day", vec(p.noise_e)},
        {"populations_persons", vec(p.populations)},
        {"productivity_per_person_day", p.productivity},
        {"death_weight", p.death_weight},
        {"value_of_life_currency", p.value_of_life},
        {"hospitalization_rate", p.hospitalization_rate},
        {"inpatient_cost_per_person_day", p.inpatient_cost},
        {"health_grant_coeff_currency", p.health_grant_coeff},
        {"discount_rate_per_day", p.discount_rate},
        {"vaccine_threshold", p.vaccine_threshold},
        {"vaccine_max_rate_per_day", p.vaccine_max_rate},
        {"recovery_boost_per_day", p.recovery_boost}}},
      {"initial_state", {{"S_fraction", S}, {"E_fraction", E}, {"I_fraction", I}, {"R_fraction", R}}},
      {"grid", {{"horizon_days", p.horizon}, {"num_steps", 180}}},
      {"solver",
       {{"stages", sc.stages},
        {"tolerance", sc.tolerance},
        {"iterations_per_stage", sc.iterations_per_stage},
        {"batch_size", sc.batch_size},
        {"tau", sc.tau},
        {"consistency", sc.consistency},
        {"broad_fraction", sc.broad_fraction},
        {"learning_rate", sc.learning_rate},
        {"l2", sc.l2},
        {"jitter", sc.jitter},
        {"hidden_widths", sc.hidden},
        {"probe_states", sc.probe_states},
        {"probe_paths", sc.probe_paths},
        {"threads", sc.threads},
        {"initial_policy_bias", sc.initial_policy_bias}}},
      {"simulation", {{"paths", 256}}},
  };
}

namespace detail {

class FieldReader {
 public:
  FieldReader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_.empty() ? "<root>" : path_, "expected an object");
  }

  std::string at(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }
  bool has(const std::string& key) const { return j_.contains(key); }

  const json& raw(const std::string& key) const {
    used_.insert(key);
    if (!j_.contains(key)) throw ConfigError(at(key), "missing required field");
    return j_.at(key);
  }

  FieldReader child(const std::string& key) const { return FieldReader(raw(key), at(key)); }

  double number(const std::string& key) const {
    const json& v = raw(key);
    if (!v.is_number()) throw ConfigError(at(key), "expected a number");
    return v.get<double>();
  }

  std::uint64_t count(const std::string& key) const {
    const json& v = raw(key);
    if (!v.is_number_integer() || v.get<long long>() < 0) {
      throw ConfigError(at(key), "expected a non-negative integer");
    }
    return v.get<std::uint64_t>();
  }

  std::string text(const std::string& key) const {
    const json& v = raw(key);
    if (!v.is_string()) throw ConfigError(at(key), "expected a string");
    return v.get<std::string>();
  }

  Eigen::VectorXd numbers(const std::string& key, std::size_t expected) const {
    const json& v = raw(key);
    if (!v.is_array() || v.size() != expected) {
      throw ConfigError(at(key), "expected an array of " + std::to_string(expected) + " numbers");
    }
    Eigen::VectorXd out(static_cast<Eigen::Index>(expected));
    for (std::size_t i = 0; i < expected; ++i) {
      if (!v[i].is_number()) throw ConfigError(at(key) + "[" + std::to_string(i) + "]", "expected a number");
      out(static_cast<Eigen::Index>(i)) = v[i].get<double>();
    }
    return out;
  }

  /// Rejects keys that were never read, which catches misspelt fields.
  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!used_.count(it.key())) throw ConfigError(at(it.key()), "unknown field");
    }
  }

 private:
  const json& j_;
  std::string path_;
  mutable std::set<std::string> used_;
};

/// Runs `check` and rewraps std::invalid_argument as a ConfigError at `field`.
template <class F>
void checked(const std::string& field, F&& check) {
  try {
    check();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(field, e.what());
  }
}

inline GameParams read_model(const FieldReader& m, double horizon, std::vector<std::string>& names) {
  GameParams p;
  const std::uint64_t n = m.count("num_regions");
  if (n < 1) throw ConfigError(m.at("num_regions"), "must be at least 1");
  p.num_regions = n;
  names.clear();
  if (m.has("region_names")) {
    const json& v = m.raw("region_names");
    if (!v.is_array() || v.size() != n) throw ConfigError(m.at("region_names"), "expected one name per region");
    for (const auto& s : v) {
      if (!s.is_string()) throw ConfigError(m.at("region_names"), "expected strings");
      names.push_back(s.get<std::string>());
    }
  } else {
    for (std::uint64_t r = 0; r < n; ++r) names.push_back("region" + std::to_string(r));
  }

  if (m.has("contact_matrix_per_day")) {
    if (m.has("contact")) throw ConfigError(m.at("contact"), "give either contact or contact_matrix_per_day");
    const json& rows = m.raw("contact_matrix_per_day");
    if (!rows.is_array() || rows.size() != n) {
      throw ConfigError(m.at("contact_matrix_per_day"), "expected num_regions rows");
    }
    p.contact_matrix.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
    for (std::size_t i = 0; i < n; ++i) {
      const std::string row_path = m.at("contact_matrix_per_day") + "[" + std::to_string(i) + "]";
      if (!rows[i].is_array() || rows[i].size() != n) throw ConfigError(row_path, "expected num_regions entries");
      for (std::size_t k = 0; k < n; ++k) {
        if (!rows[i][k].is_number()) throw ConfigError(row_path, "expected numbers");
        p.contact_matrix(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = rows[i][k].get<double>();
      }
    }
  } else {
    const FieldReader c = m.child("contact");
    const double base = c.number("base_rate_per_day");
    const double stay = c.number("residency_fraction");
    c.finish();
    checked(m.at("contact"), [&] { p.contact_matrix = build_contact_matrix(base, stay, n); });
  }

  p.latency_rate = m.number("latency_rate_per_day");
  p.base_recovery_rate = m.number("base_recovery_rate_per_day");
  p.death_rate = m.number("death_rate_per_day");
  p.policy_effectiveness = m.number("policy_effectiveness");
  p.noise_s = m.numbers("noise_s_per_sqrt_day", n);
  p.noise_e = m.numbers("noise_e_per_sqrt_day", n);
  p.populations = m.numbers("populations_persons", n);
  p.productivity = m.number("productivity_per_person_day");
  p.death_weight = m.number("death_weight");
  p.value_of_life = m.number("value_of_life_currency");
  p.hospitalization_rate = m.number("hospitalization_rate");
  p.inpatient_cost = m.number("inpatient_cost_per_person_day");
  p.health_grant_coeff = m.number("health_grant_coeff_currency");
  p.discount_rate = m.number("discount_rate_per_day");
  p.vaccine_threshold = m.number("vaccine_threshold");
  p.vaccine_max_rate = m.number("vaccine_max_rate_per_day");
  p.recovery_boost = m.number("recovery_boost_per_day");
  p.horizon = horizon;
  m.finish();
  checked("model", [&] { p.validate(); });
  return p;
}

inline GameState read_initial_state(const FieldReader& s, std::size_t n) {
  GameState x(n);
  const Eigen::VectorXd S = s.numbers("S_fraction", n);
  const Eigen::VectorXd E = s.numbers("E_fraction", n);
  const Eigen::VectorXd I = s.numbers("I_fraction", n);
  const Eigen::VectorXd R = s.numbers("R_fraction", n);
  s.finish();
  for (std::size_t r = 0; r < n; ++r) {
    const auto i = static_cast<Eigen::Index>(r);
    for (double v : {S(i), E(i), I(i), R(i)}) {
      if (!(v >= 0.0 && v <= 1.0)) throw ConfigError("initial_state", "fractions must lie in [0, 1]");
    }
    if (std::abs(S(i) + E(i) + I(i) + R(i) - 1.0) > 1e-9) {
      throw ConfigError("initial_state", "fractions of region " + std::to_string(r) + " must sum to 1");
    }
    x.S(r) = S(i);
    x.E(r) = E(i);
    x.I(r) = I(i);
    x.R(r) = R(i);
  }
  return x;
}

inline dfp::SolverConfig read_solver(const FieldReader& s) {
  dfp::SolverConfig c;
  c.stages = s.count("stages");
  c.tolerance = s.number("tolerance");
  c.iterations_per_stage = s.count("iterations_per_stage");
  c.batch_size = s.count("batch_size");
  c.tau = s.number("tau");
  c.consistency = s.number("consistency");
  c.broad_fraction = s.number("broad_fraction");
  c.learning_rate = s.number("learning_rate");
  c.l2 = s.number("l2");
  c.jitter = s.number("jitter");
  const json& widths = s.raw("hidden_widths");
  if (!widths.is_array() || widths.empty()) throw ConfigError(s.at("hidden_widths"), "expected a non-empty array");
  c.hidden.clear();
  for (const auto& w : widths) {
    if (!w.is_number_integer() || w.get<long long>() < 1) {
      throw ConfigError(s.at("hidden_widths"), "widths must be positive integers");
    }
    c.hidden.push_back(w.get<std::size_t>());
  }
  c.probe_states = s.count("probe_states");
  c.probe_paths = s.count("probe_paths");
  c.threads = static_cast<unsigned>(s.count("threads"));
  c.initial_policy_bias = s.number("initial_policy_bias");
  s.finish();
  auto positive = [&](bool ok, const std::string& key, const std::string& what) {
    if (!ok) throw ConfigError(s.at(key), what);
  };
  positive(c.stages >= 1, "stages", "must be at least 1");
  positive(c.tolerance >= 0.0, "tolerance", "must be >= 0");
  positive(c.iterations_per_stage >= 1, "iterations_per_stage", "must be at least 1");
  positive(c.batch_size >= 1, "batch_size", "must be at least 1");
  positive(c.tau >= 0.0, "tau", "must be >= 0");
  positive(c.consistency >= 0.0, "consistency", "must be >= 0");
  positive(c.broad_fraction >= 0.0 && c.broad_fraction <= 1.0, "broad_fraction", "must lie in [0, 1]");
  positive(c.learning_rate > 0.0, "learning_rate", "must be > 0");
  positive(c.l2 >= 0.0, "l2", "must be >= 0");
  positive(c.jitter >= 0.0 && c.jitter < 1.0, "jitter", "must lie in [0, 1)");
  positive(c.probe_states >= 1, "probe_states", "must be at least 1");
  positive(c.probe_paths >= 1, "probe_paths", "must be at least 1");
  positive(std::isfinite(c.initial_policy_bias), "initial_policy_bias", "must be finite");
  return c;
}

}  // namespace detail

/// Builds a RunConfig from a complete document.
inline RunConfig parse_config(const json& doc) {
  const detail::FieldReader root(doc, "");
  RunConfig cfg;
  cfg.resolved = doc;
  if (root.has("preset")) cfg.preset = root.text("preset");
  const std::uint64_t seed = root.count("seed");
  cfg.seed = seed;
  cfg.output_dir = root.text("output_dir");

  const detail::FieldReader grid = root.child("grid");
  const double horizon = grid.number("horizon_days");
  const std::uint64_t steps = grid.count("num_steps");
  grid.finish();
  detail::checked("grid", [&] { cfg.grid = TimeGrid(horizon, steps); });

  cfg.params = detail::read_model(root.child("model"), horizon, cfg.region_names);
  cfg.x0 = detail::read_initial_state(root.child("initial_state"), cfg.params.num_regions);
  cfg.solver = detail::read_solver(root.child("solver"));
  cfg.solver.seed = seed;

  const detail::FieldReader sim = root.child("simulation");
  cfg.simulation.paths = sim.count("paths");
  sim.finish();
  if (cfg.simulation.paths < 1) throw ConfigError("simulation.paths", "must be at least 1");
  root.finish();
  return cfg;
}

/// Merges `overrides` into the preset named by `preset` (or by the
/// document's own "preset" field) and parses the result.
inline RunConfig resolve_config(const std::string& preset, const json& overrides) {
  std::string name = preset;
  if (name.empty() && overrides.is_object() && overrides.contains("preset")) {
    if (!overrides["preset"].is_string()) throw ConfigError("preset", "expected a string");
    name = overrides["preset"].get<std::string>();
  }
  json doc = name.empty() ? json::object() : preset_document(name);
  if (!overrides.is_null()) {
    if (!overrides.is_object()) throw ConfigError("<root>", "expected an object");
    doc.merge_patch(overrides);
  }
  if (!name.empty()) doc["preset"] = name;
  return parse_config(doc);
}

inline json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config file " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("<file>", std::string("malformed JSON in ") + path.string() + ": " + e.what());
  }
}

inline std::string RunConfig::hash() const {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << dfp::fnv1a(resolved.dump());
  return os.str();
}

}  // namespace epigame
