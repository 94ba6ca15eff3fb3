// Experiment configuration: JSON schema, validation, defaults, hashing.
#pragma once

#include <cstdint>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "subcrit/environment.hpp"
#include "subcrit/spectral.hpp"

namespace subcrit {

// Raised on any malformed or inconsistent configuration input.  The CLI maps
// this (and JSON parse errors) to exit code 2.
struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

// Walk-stage knobs: passage tails, harmonic estimation, the conditioned
// histogram, dispersion, and the local band design.
struct WalkSettings {
  std::vector<double> a_values{1.0, 2.0};   // starting levels for tail studies
  std::vector<int> checkpoints{200, 400};   // horizons at which tails are read
  std::uint64_t reps = 200000;              // trajectories per starting level
  int harmonic_horizon = 1024;              // plateau horizon for h estimates
  std::uint64_t harmonic_reps = 200000;
  std::vector<double> harmonic_as{0.5, 1.0, 2.0, 4.0, 8.0};
  int coarse_resolution = 4;                // direction grid for the h table
  int hist_n = 300;                         // conditioned-profile horizon
  double hist_ell = 0.5;                    // histogram bin width (sigma sqrt(n) units)
  std::uint64_t hist_reps = 400000;
  int sigma_horizon = 256;                  // dispersion measured at n and 2n
  std::uint64_t sigma_reps = 100000;
  std::vector<double> band_b{2.0, 4.0, 6.0};    // local band left endpoints
  std::vector<double> band_ell{0.5, 1.0, 2.0};  // local band widths
};

// Survival-stage knobs: the n schedule and per-method replica budgets.
struct SurvivalSettings {
  std::vector<int> n_values{100, 150, 200, 250, 300, 350, 400};
  std::uint64_t tilted_reps = 200000;
  std::uint64_t naive_reps = 200000;
  int naive_max_n = 60;     // naive estimates stop here (variance blow-up)
  int bootstrap = 1000;     // resamples for the slope CI
};

struct ExperimentConfig {
  std::uint64_t seed = 0;
  EnvironmentLaw law;
  nlohmann::json law_json;  // environment block as given (provenance)
  std::string out_dir = "out";
  int workers = 0;          // 0 = hardware concurrency
  std::string format = "md";
  SolverSettings spectral;
  std::uint64_t conditions_budget = 4096;
  WalkSettings walk;
  SurvivalSettings survival;
  std::uint64_t config_hash = 0;  // FNV-1a of the canonical JSON dump
  nlohmann::json raw;             // canonical config (defaults applied)
};

namespace detail {

inline double num_or(const nlohmann::json& j, const char* key, double dflt) {
  if (!j.contains(key)) return dflt;
  if (!j.at(key).is_number()) throw ConfigError(std::string("field '") + key + "' must be a number");
  return j.at(key).get<double>();
}

inline std::int64_t int_or(const nlohmann::json& j, const char* key, std::int64_t dflt) {
  if (!j.contains(key)) return dflt;
  if (!j.at(key).is_number_integer())
    throw ConfigError(std::string("field '") + key + "' must be an integer");
  return j.at(key).get<std::int64_t>();
}

inline std::vector<double> num_list_or(const nlohmann::json& j, const char* key,
                                       std::vector<double> dflt) {
  if (!j.contains(key)) return dflt;
  const auto& arr = j.at(key);
  if (!arr.is_array() || arr.empty())
    throw ConfigError(std::string("field '") + key + "' must be a non-empty array");
  std::vector<double> out;
  for (const auto& e : arr) {
    if (!e.is_number()) throw ConfigError(std::string("field '") + key + "' must hold numbers");
    out.push_back(e.get<double>());
  }
  return out;
}

inline std::vector<int> int_list_or(const nlohmann::json& j, const char* key,
                                    std::vector<int> dflt) {
  if (!j.contains(key)) return dflt;
  const auto& arr = j.at(key);
  if (!arr.is_array() || arr.empty())
    throw ConfigError(std::string("field '") + key + "' must be a non-empty array");
  std::vector<int> out;
  for (const auto& e : arr) {
    if (!e.is_number_integer() || e.get<std::int64_t>() <= 0)
      throw ConfigError(std::string("field '") + key + "' must hold positive integers");
    out.push_back(static_cast<int>(e.get<std::int64_t>()));
  }
  return out;
}

}  // namespace detail

inline SolverSettings solver_settings_from_json(const nlohmann::json& j) {
  detail::require_keys(j, {},
                       {"resolution", "margin", "quadrature", "quadrature_seed", "tol",
                        "max_iter", "deriv_step", "root_tol", "regime_tol"},
                       "spectral");
  SolverSettings s;
  s.resolution = static_cast<int>(detail::int_or(j, "resolution", s.resolution));
  s.margin = detail::num_or(j, "margin", s.margin);
  s.quadrature = static_cast<int>(detail::int_or(j, "quadrature", s.quadrature));
  s.quadrature_seed = static_cast<std::uint64_t>(
      detail::int_or(j, "quadrature_seed", static_cast<std::int64_t>(s.quadrature_seed)));
  s.tol = detail::num_or(j, "tol", s.tol);
  s.max_iter = static_cast<int>(detail::int_or(j, "max_iter", s.max_iter));
  s.deriv_step = detail::num_or(j, "deriv_step", s.deriv_step);
  s.root_tol = detail::num_or(j, "root_tol", s.root_tol);
  s.regime_tol = detail::num_or(j, "regime_tol", s.regime_tol);
  if (s.resolution < 1 || s.quadrature < 1 || s.tol <= 0 || s.max_iter < 10 ||
      s.deriv_step <= 0 || s.root_tol <= 0 || s.regime_tol <= 0)
    throw ConfigError("spectral settings out of range");
  return s;
}

inline nlohmann::json solver_settings_to_json(const SolverSettings& s) {
  return nlohmann::json{{"resolution", s.resolution},
                        {"margin", s.margin},
                        {"quadrature", s.quadrature},
                        {"quadrature_seed", s.quadrature_seed},
                        {"tol", s.tol},
                        {"max_iter", s.max_iter},
                        {"deriv_step", s.deriv_step},
                        {"root_tol", s.root_tol},
                        {"regime_tol", s.regime_tol}};
}

inline WalkSettings walk_settings_from_json(const nlohmann::json& j) {
  detail::require_keys(j, {},
                       {"a_values", "checkpoints", "reps", "harmonic_horizon", "harmonic_reps",
                        "harmonic_as", "coarse_resolution", "hist_n", "hist_ell", "hist_reps",
                        "sigma_horizon", "sigma_reps", "band_b", "band_ell"},
                       "walk");
  WalkSettings w;
  w.a_values = detail::num_list_or(j, "a_values", w.a_values);
  w.checkpoints = detail::int_list_or(j, "checkpoints", w.checkpoints);
  w.reps = static_cast<std::uint64_t>(detail::int_or(j, "reps", static_cast<std::int64_t>(w.reps)));
  w.harmonic_horizon = static_cast<int>(detail::int_or(j, "harmonic_horizon", w.harmonic_horizon));
  w.harmonic_reps = static_cast<std::uint64_t>(
      detail::int_or(j, "harmonic_reps", static_cast<std::int64_t>(w.harmonic_reps)));
  w.harmonic_as = detail::num_list_or(j, "harmonic_as", w.harmonic_as);
  w.coarse_resolution = static_cast<int>(detail::int_or(j, "coarse_resolution", w.coarse_resolution));
  w.hist_n = static_cast<int>(detail::int_or(j, "hist_n", w.hist_n));
  w.hist_ell = detail::num_or(j, "hist_ell", w.hist_ell);
  w.hist_reps = static_cast<std::uint64_t>(
      detail::int_or(j, "hist_reps", static_cast<std::int64_t>(w.hist_reps)));
  w.sigma_horizon = static_cast<int>(detail::int_or(j, "sigma_horizon", w.sigma_horizon));
  w.sigma_reps = static_cast<std::uint64_t>(
      detail::int_or(j, "sigma_reps", static_cast<std::int64_t>(w.sigma_reps)));
  w.band_b = detail::num_list_or(j, "band_b", w.band_b);
  w.band_ell = detail::num_list_or(j, "band_ell", w.band_ell);
  for (double a : w.a_values)
    if (a < 0) throw ConfigError("walk.a_values must be nonnegative");
  for (double v : w.band_ell)
    if (v <= 0) throw ConfigError("walk.band_ell must be positive");
  if (w.reps == 0 || w.harmonic_reps == 0 || w.hist_reps == 0 || w.sigma_reps == 0)
    throw ConfigError("walk replica counts must be positive");
  if (w.hist_ell <= 0 || w.hist_n < 2 || w.sigma_horizon < 2 || w.harmonic_horizon < 2 ||
      w.coarse_resolution < 1)
    throw ConfigError("walk settings out of range");
  return w;
}

inline nlohmann::json walk_settings_to_json(const WalkSettings& w) {
  return nlohmann::json{{"a_values", w.a_values},
                        {"checkpoints", w.checkpoints},
                        {"reps", w.reps},
                        {"harmonic_horizon", w.harmonic_horizon},
                        {"harmonic_reps", w.harmonic_reps},
                        {"harmonic_as", w.harmonic_as},
                        {"coarse_resolution", w.coarse_resolution},
                        {"hist_n", w.hist_n},
                        {"hist_ell", w.hist_ell},
                        {"hist_reps", w.hist_reps},
                        {"sigma_horizon", w.sigma_horizon},
                        {"sigma_reps", w.sigma_reps},
                        {"band_b", w.band_b},
                        {"band_ell", w.band_ell}};
}

inline SurvivalSettings survival_settings_from_json(const nlohmann::json& j) {
  detail::require_keys(j, {},
                       {"n_values", "tilted_reps", "naive_reps", "naive_max_n", "bootstrap"},
                       "survival");
  SurvivalSettings s;
  s.n_values = detail::int_list_or(j, "n_values", s.n_values);
  s.tilted_reps = static_cast<std::uint64_t>(
      detail::int_or(j, "tilted_reps", static_cast<std::int64_t>(s.tilted_reps)));
  s.naive_reps = static_cast<std::uint64_t>(
      detail::int_or(j, "naive_reps", static_cast<std::int64_t>(s.naive_reps)));
  s.naive_max_n = static_cast<int>(detail::int_or(j, "naive_max_n", s.naive_max_n));
  s.bootstrap = static_cast<int>(detail::int_or(j, "bootstrap", s.bootstrap));
  if (s.tilted_reps == 0 || s.bootstrap < 10)
    throw ConfigError("survival settings out of range");
  return s;
}

inline nlohmann::json survival_settings_to_json(const SurvivalSettings& s) {
  return nlohmann::json{{"n_values", s.n_values},
                        {"tilted_reps", s.tilted_reps},
                        {"naive_reps", s.naive_reps},
                        {"naive_max_n", s.naive_max_n},
                        {"bootstrap", s.bootstrap}};
}

// Parses and validates a full experiment configuration.  Unknown fields are
// rejected; a mandatory seed and environment block are enforced.  The result
// carries a canonical JSON form (defaults applied) and its hash, which stage
// artifacts embed so cached files can be matched to the config they came from.
inline ExperimentConfig parse_config(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  try {
    detail::require_keys(j, {"seed", "environment"},
                         {"out", "workers", "format", "spectral", "conditions", "walk",
                          "survival"},
                         "config");
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  ExperimentConfig cfg;
  if (!j.at("seed").is_number_integer())
    throw ConfigError("config requires an integer 'seed'");
  cfg.seed = static_cast<std::uint64_t>(j.at("seed").get<std::int64_t>());
  cfg.law_json = j.at("environment");
  std::optional<std::uint64_t> env_seed;
  try {
    cfg.law = law_from_json(cfg.law_json, &env_seed);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("environment: ") + e.what());
  }
  (void)env_seed;  // environment-level seeds are not used; the root seed governs
  if (j.contains("out")) {
    if (!j.at("out").is_string()) throw ConfigError("'out' must be a string");
    cfg.out_dir = j.at("out").get<std::string>();
  }
  cfg.workers = static_cast<int>(detail::int_or(j, "workers", 0));
  if (cfg.workers < 0) throw ConfigError("'workers' must be >= 0");
  if (j.contains("format")) {
    if (!j.at("format").is_string()) throw ConfigError("'format' must be a string");
    cfg.format = j.at("format").get<std::string>();
    if (cfg.format != "csv" && cfg.format != "json" && cfg.format != "md")
      throw ConfigError("'format' must be one of csv, json, md");
  }
  try {
    if (j.contains("spectral")) cfg.spectral = solver_settings_from_json(j.at("spectral"));
    if (j.contains("conditions")) {
      detail::require_keys(j.at("conditions"), {}, {"budget"}, "conditions");
      cfg.conditions_budget = static_cast<std::uint64_t>(detail::int_or(
          j.at("conditions"), "budget", static_cast<std::int64_t>(cfg.conditions_budget)));
      if (cfg.conditions_budget < 16) throw ConfigError("conditions.budget too small");
    }
    if (j.contains("walk")) cfg.walk = walk_settings_from_json(j.at("walk"));
    if (j.contains("survival")) cfg.survival = survival_settings_from_json(j.at("survival"));
  } catch (const std::invalid_argument& e) {
    // unknown-field rejections surface as shape errors like everything else
    throw ConfigError(e.what());
  }

  cfg.raw = nlohmann::json{{"seed", cfg.seed},
                           {"environment", cfg.law_json},
                           {"out", cfg.out_dir},
                           {"workers", cfg.workers},
                           {"format", cfg.format},
                           {"spectral", solver_settings_to_json(cfg.spectral)},
                           {"conditions", nlohmann::json{{"budget", cfg.conditions_budget}}},
                           {"walk", walk_settings_to_json(cfg.walk)},
                           {"survival", survival_settings_to_json(cfg.survival)}};
  // The hash covers the canonical dump minus fields that do not affect
  // numerical results (output directory, report format, worker count).
  nlohmann::json hashed = cfg.raw;
  hashed.erase("out");
  hashed.erase("format");
  hashed.erase("workers");
  cfg.config_hash = fnv1a(hashed.dump());
  return cfg;
}

inline ExperimentConfig load_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config parse error: ") + e.what());
  }
  return parse_config(j);
}

}  // namespace subcrit
