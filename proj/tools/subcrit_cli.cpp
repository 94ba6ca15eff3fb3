// Command-line laboratory driver.
//
// Subcommands: spectral, conditions, walk, survival, verify, report.  Each is
// runnable standalone: upstream artifacts are loaded from the output
// directory when they match the config hash and seed, and recomputed (and
// cached) otherwise.
//
// Exit codes: 0 success, 1 verification failure or unexpected error,
// 2 invalid config, 3 regime mismatch, 4 numerical non-convergence.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "subcrit/subcrit.hpp"

namespace {

namespace fs = std::filesystem;
using namespace subcrit;

struct CliOptions {
  std::string config_path;
  std::optional<std::int64_t> seed;
  std::optional<std::string> out;
  std::optional<int> workers;
  std::optional<std::string> format;
};

ExperimentConfig load_with_overrides(const CliOptions& opt) {
  std::ifstream in(opt.config_path);
  if (!in) throw ConfigError("cannot open config file: " + opt.config_path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config parse error: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  if (opt.seed) j["seed"] = *opt.seed;
  if (opt.out) j["out"] = *opt.out;
  if (opt.workers) j["workers"] = *opt.workers;
  if (opt.format) j["format"] = *opt.format;
  return parse_config(j);
}

void write_json(const fs::path& path, const nlohmann::json& j) {
  write_text_file(path.string(), j.dump(2) + "\n");
}

std::optional<nlohmann::json> try_load_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) return std::nullopt;
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception&) {
    return std::nullopt;
  }
  return j;
}

// Loads the cached spectral artifact when it matches config hash and seed;
// recomputes and caches otherwise.
SpectralArtifact spectral_artifact(const ExperimentConfig& cfg, bool* from_cache = nullptr) {
  const fs::path path = fs::path(cfg.out_dir) / "spectral.json";
  if (auto j = try_load_json(path)) {
    try {
      SpectralArtifact art = SpectralArtifact::from_json(*j);
      if (art.config_hash == cfg.config_hash && art.seed == cfg.seed) {
        if (from_cache) *from_cache = true;
        return art;
      }
    } catch (const std::exception&) {
      // stale or corrupt cache: fall through to recompute
    }
  }
  SpectralArtifact art = run_spectral(cfg);
  fs::create_directories(cfg.out_dir);
  write_json(path, art.to_json());
  if (from_cache) *from_cache = false;
  return art;
}

int cmd_spectral(const ExperimentConfig& cfg) {
  bool cached = false;
  const SpectralArtifact art = spectral_artifact(cfg, &cached);
  std::printf("theta_star  %.10g\n", art.critical.theta_star);
  std::printf("rho_star    %.10g\n", art.critical.rho_star);
  std::printf("gamma       %.10g\n", art.critical.gamma);
  std::printf("deriv(1)    %.10g\n", art.critical.deriv_at_one);
  std::printf("regime      %s\n", regime_name(art.critical.regime).c_str());
  std::printf("residual    %.3g   (transposed-law gap %.3g)%s\n",
              art.critical.solution.residual, art.reversed_lambda_gap,
              cached ? "   [cached]" : "");
  return 0;
}

int cmd_conditions(const ExperimentConfig& cfg) {
  // The drift check can use spectral data even when the regime is not the
  // weakly subcritical one; regime errors carry the measured drifts.
  std::optional<std::pair<double, double>> drift;
  try {
    const SpectralArtifact art = spectral_artifact(cfg);
    drift = std::make_pair(art.critical.gamma, art.critical.deriv_at_one);
  } catch (const RegimeError& e) {
    drift = std::make_pair(e.gamma, e.deriv_at_one);
  } catch (const ConvergenceError&) {
    drift = std::nullopt;
  }
  ConditionReport rep = check_conditions(cfg.law, cfg.conditions_budget,
                                         mix64(cfg.seed ^ fnv1a("conditions")), drift);
  fs::create_directories(cfg.out_dir);
  write_text_file((fs::path(cfg.out_dir) / "conditions.csv").string(),
                  conditions_table(rep).render());
  write_json(fs::path(cfg.out_dir) / "conditions.json",
             conditions_to_json(rep, cfg.config_hash));
  for (const auto& c : rep.checks) {
    const char* status = c.declared_only ? "declared" : (c.passed ? "pass" : "FAIL");
    std::printf("%-4s %-8s %s\n", c.id.c_str(), status, c.description.c_str());
  }
  std::printf("required checks: %s\n", rep.required_passed() ? "pass" : "FAIL");
  return rep.required_passed() ? 0 : 1;
}

int cmd_walk(const ExperimentConfig& cfg) {
  const SpectralArtifact sp = spectral_artifact(cfg);
  const WalkArtifact art = run_walk(cfg, sp);
  fs::create_directories(cfg.out_dir);
  write_text_file((fs::path(cfg.out_dir) / "walk_estimates.csv").string(),
                  estimate_table(art.rows).render());
  write_json(fs::path(cfg.out_dir) / "walk.json", art.to_json());
  std::printf("sigma       %.6g (doubled horizon %.6g)\n", art.sigma.sigma,
              art.sigma.sigma_double);
  std::printf("rayleigh ks %.4g  (%llu conditioned samples at n = %d)\n", art.hist.ks,
              static_cast<unsigned long long>(art.hist.alive), art.hist.n);
  std::printf("rows        %zu -> walk_estimates.csv\n", art.rows.size());
  return 0;
}

int cmd_survival(const ExperimentConfig& cfg) {
  const SpectralArtifact sp = spectral_artifact(cfg);
  const SurvivalArtifact art = run_survival(cfg, sp);
  fs::create_directories(cfg.out_dir);
  write_text_file((fs::path(cfg.out_dir) / "survival_estimates.csv").string(),
                  survival_table(art).render());
  write_json(fs::path(cfg.out_dir) / "survival.json", art.to_json());
  if (art.fit_valid) {
    std::printf("slope       %.6g  (se %.3g, 95%% CI [%.6g, %.6g])\n", art.fit.slope,
                art.fit.se_slope, art.fit.ci_lo, art.fit.ci_hi);
    std::printf("compensated n^{3/2} E[q_n]/rho^n in [%.6g, %.6g]\n", art.compensated_min,
                art.compensated_max);
  } else {
    std::printf("slope fit unavailable: %s\n", art.fit_error.c_str());
  }
  return 0;
}

int cmd_verify(const ExperimentConfig& cfg) {
  const SpectralArtifact sp = spectral_artifact(cfg);
  const VerifyArtifact art = run_verify(cfg, sp);
  fs::create_directories(cfg.out_dir);
  write_json(fs::path(cfg.out_dir) / "verify.json", art.to_json());
  for (const auto& c : art.checks) {
    const char* status = !c.applicable ? "skip" : (c.passed ? "pass" : "FAIL");
    std::printf("%-34s %-5s %s\n", c.id.c_str(), status, c.detail.c_str());
  }
  return art.all_passed() ? 0 : 1;
}

int cmd_report(const ExperimentConfig& cfg) {
  RunReport rep;
  rep.config_hash = cfg.config_hash;
  rep.seed = cfg.seed;
  rep.law_name = cfg.law.name;
  rep.spectral = spectral_artifact(cfg);

  // Reuse cached stage artifacts where they match; recompute the rest.
  const fs::path dir(cfg.out_dir);
  if (auto j = try_load_json(dir / "walk.json")) {
    try {
      WalkArtifact w = WalkArtifact::from_json(*j);
      if (w.config_hash == cfg.config_hash && w.seed == cfg.seed) rep.walk = std::move(w);
    } catch (const std::exception&) {
    }
  }
  if (auto j = try_load_json(dir / "survival.json")) {
    try {
      SurvivalArtifact s = SurvivalArtifact::from_json(*j);
      if (s.config_hash == cfg.config_hash && s.seed == cfg.seed) rep.survival = std::move(s);
    } catch (const std::exception&) {
    }
  }
  try {
    rep.conditions = run_conditions(cfg, &*rep.spectral);
  } catch (const std::exception& e) {
    rep.failures.push_back(std::string("conditions: ") + e.what());
  }
  if (!rep.walk) {
    try {
      rep.walk = run_walk(cfg, *rep.spectral);
      write_json(dir / "walk.json", rep.walk->to_json());
    } catch (const std::exception& e) {
      rep.failures.push_back(std::string("walk: ") + e.what());
    }
  }
  if (!rep.survival) {
    try {
      rep.survival = run_survival(cfg, *rep.spectral);
      write_json(dir / "survival.json", rep.survival->to_json());
    } catch (const std::exception& e) {
      rep.failures.push_back(std::string("survival: ") + e.what());
    }
  }
  rep.checks = report_checks(rep);
  emit_report(rep, cfg.out_dir, cfg.format);
  std::printf("report written to %s (format scope: %s)\n", cfg.out_dir.c_str(),
              cfg.format.c_str());
  for (const auto& c : rep.checks) {
    const char* status = !c.applicable ? "skip" : (c.passed ? "pass" : "FAIL");
    std::printf("%-28s %s\n", c.id.c_str(), status);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Numerical laboratory for weakly subcritical multitype branching "
               "processes in iid random environments"};
  app.require_subcommand(1);
  app.fallthrough();  // global options may follow the subcommand name

  CliOptions opt;
  app.add_option("--config", opt.config_path, "experiment config (JSON)")
      ->required()
      ->check(CLI::ExistingFile);
  app.add_option("--seed", opt.seed, "override the config seed");
  app.add_option("--out", opt.out, "override the output directory");
  app.add_option("--workers", opt.workers, "override the worker count (0 = hardware)");
  app.add_option("--format", opt.format, "report scope: csv, json, or md")
      ->check(CLI::IsMember({"csv", "json", "md"}));

  auto* sc_spectral = app.add_subcommand("spectral", "critical tilt and eigen-data");
  auto* sc_conditions = app.add_subcommand("conditions", "model condition report");
  auto* sc_walk = app.add_subcommand("walk", "tilted walk diagnostics");
  auto* sc_survival = app.add_subcommand("survival", "annealed survival schedule and slope fit");
  auto* sc_verify = app.add_subcommand("verify", "cross-estimator and identity checks");
  auto* sc_report = app.add_subcommand("report", "aggregate report (runs missing stages)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;  // bad invocation is an invalid-config error
  }

  try {
    const ExperimentConfig cfg = load_with_overrides(opt);
    if (sc_spectral->parsed()) return cmd_spectral(cfg);
    if (sc_conditions->parsed()) return cmd_conditions(cfg);
    if (sc_walk->parsed()) return cmd_walk(cfg);
    if (sc_survival->parsed()) return cmd_survival(cfg);
    if (sc_verify->parsed()) return cmd_verify(cfg);
    if (sc_report->parsed()) return cmd_report(cfg);
    return 2;
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const std::invalid_argument& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const RegimeError& e) {
    std::fprintf(stderr, "regime mismatch: %s\n", e.what());
    return 3;
  } catch (const ConvergenceError& e) {
    std::fprintf(stderr, "non-convergence: %s\n", e.what());
    return 4;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}
