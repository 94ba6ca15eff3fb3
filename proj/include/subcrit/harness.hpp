// Experiment stages and orchestration: spectral solve, condition report,
// walk diagnostics, survival schedule, slope fit, and report emission.
#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "subcrit/branching.hpp"
#include "subcrit/config.hpp"
#include "subcrit/environment.hpp"
#include "subcrit/report.hpp"
#include "subcrit/spectral.hpp"
#include "subcrit/tilted_walk.hpp"

namespace subcrit {

inline constexpr const char* kVersion = "0.1.0";

namespace detail {

// Stage-scoped root seeds: one root seed, split per stage by name.
inline std::uint64_t stage_seed(std::uint64_t root, const char* name) {
  return mix64(root ^ fnv1a(name));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Spectral stage
// ---------------------------------------------------------------------------

// Critical-point data for the law plus the eigen-solution of the transposed
// law at the same tilt (the reversed walk's kernel).  The lambda gap between
// the two solves is a discretization diagnostic: the exact values coincide.
struct SpectralArtifact {
  std::uint64_t config_hash = 0;
  std::uint64_t seed = 0;
  CriticalPoint critical;
  SpectralSolution reversed;
  double reversed_lambda_gap = 0.0;

  nlohmann::json to_json() const {
    return nlohmann::json{{"config_hash", config_hash},
                          {"seed", seed},
                          {"version", kVersion},
                          {"theta_star", critical.theta_star},
                          {"rho_star", critical.rho_star},
                          {"gamma", critical.gamma},
                          {"deriv_at_one", critical.deriv_at_one},
                          {"regime", regime_name(critical.regime)},
                          {"solution", critical.solution.to_json()},
                          {"reversed_solution", reversed.to_json()},
                          {"reversed_lambda_gap", reversed_lambda_gap}};
  }

  static SpectralArtifact from_json(const nlohmann::json& j) {
    SpectralArtifact a;
    a.config_hash = j.at("config_hash").get<std::uint64_t>();
    a.seed = j.at("seed").get<std::uint64_t>();
    a.critical.theta_star = j.at("theta_star").get<double>();
    a.critical.rho_star = j.at("rho_star").get<double>();
    a.critical.gamma = j.at("gamma").get<double>();
    a.critical.deriv_at_one = j.at("deriv_at_one").get<double>();
    const std::string reg = j.at("regime").get<std::string>();
    a.critical.regime = reg == regime_name(Regime::WeaklySubcritical) ? Regime::WeaklySubcritical
                        : reg == regime_name(Regime::IntermediatelySubcritical)
                            ? Regime::IntermediatelySubcritical
                        : reg == regime_name(Regime::StronglySubcritical)
                            ? Regime::StronglySubcritical
                            : Regime::NotSubcritical;
    a.critical.solution = SpectralSolution::from_json(j.at("solution"));
    a.reversed = SpectralSolution::from_json(j.at("reversed_solution"));
    a.reversed_lambda_gap = j.at("reversed_lambda_gap").get<double>();
    return a;
  }
};

inline SpectralArtifact run_spectral(const ExperimentConfig& cfg) {
  SpectralArtifact art;
  art.config_hash = cfg.config_hash;
  art.seed = cfg.seed;
  SpectralWorkspace ws(cfg.law, cfg.spectral);
  art.critical = ws.critical_point();
  SpectralWorkspace wst(cfg.law.transposed(), cfg.spectral);
  art.reversed = wst.solve(art.critical.theta_star);
  art.reversed_lambda_gap =
      std::abs(art.reversed.lambda - art.critical.rho_star) / art.critical.rho_star;
  return art;
}

// ---------------------------------------------------------------------------
// Conditions stage
// ---------------------------------------------------------------------------

inline ConditionReport run_conditions(const ExperimentConfig& cfg, const SpectralArtifact* sp) {
  std::optional<std::pair<double, double>> drift;
  if (sp) drift = std::make_pair(sp->critical.gamma, sp->critical.deriv_at_one);
  return check_conditions(cfg.law, cfg.conditions_budget,
                          detail::stage_seed(cfg.seed, "conditions"), drift);
}

inline CsvTable conditions_table(const ConditionReport& rep) {
  CsvTable t;
  t.header = {"id", "description", "value", "passed", "declared_only", "note"};
  for (const auto& c : rep.checks)
    t.add_row({c.id, c.description, fmt_double(c.value), c.passed ? "true" : "false",
               c.declared_only ? "true" : "false", c.note});
  return t;
}

inline nlohmann::json conditions_to_json(const ConditionReport& rep, std::uint64_t config_hash) {
  nlohmann::json checks = nlohmann::json::array();
  for (const auto& c : rep.checks)
    checks.push_back(nlohmann::json{{"id", c.id},
                                    {"description", c.description},
                                    {"value", c.value},
                                    {"passed", c.passed},
                                    {"declared_only", c.declared_only},
                                    {"note", c.note}});
  return nlohmann::json{{"config_hash", config_hash},
                        {"seed", rep.seed},
                        {"version", kVersion},
                        {"required_passed", rep.required_passed()},
                        {"checks", checks}};
}

// ---------------------------------------------------------------------------
// Walk stage
// ---------------------------------------------------------------------------

// Everything the walk stage measures.  Estimates land in `rows` (the CSV
// surface); tables and the histogram keep their structured form for reuse.
struct WalkArtifact {
  std::uint64_t config_hash = 0;
  std::uint64_t seed = 0;
  double theta = 0.0;
  double lambda = 0.0;
  SigmaEstimate sigma;
  std::vector<HarmonicEstimate> harmonic;  // aligned with walk.a_values
  HarmonicTable table_forward;
  HarmonicTable table_reversed;
  LocalLimitReport hist;
  double hist_a = 0.0;
  std::vector<EstimateRow> rows;

  nlohmann::json to_json() const;
  static WalkArtifact from_json(const nlohmann::json& j);
};

namespace detail {

inline nlohmann::json harmonic_table_to_json(const HarmonicTable& t) {
  return nlohmann::json{{"grid", t.grid.to_json()}, {"as", t.as},      {"h", t.h},
                        {"se", t.se},               {"horizon", t.horizon}, {"reps", t.reps}};
}

inline HarmonicTable harmonic_table_from_json(const nlohmann::json& j) {
  HarmonicTable t;
  t.grid = SpectralGrid::from_json(j.at("grid"));
  t.as = j.at("as").get<std::vector<double>>();
  t.h = j.at("h").get<std::vector<double>>();
  t.se = j.at("se").get<std::vector<double>>();
  t.horizon = j.at("horizon").get<int>();
  t.reps = j.at("reps").get<std::uint64_t>();
  const std::size_t want = static_cast<std::size_t>(t.grid.size()) * t.as.size();
  if (t.h.size() != want || t.se.size() != want)
    throw std::invalid_argument("harmonic table size mismatch");
  return t;
}

// Accumulator for the combined per-`a` tail pass: checkpoint survival under
// the tilted measure, importance-weighted untilted survival, and (optionally)
// the (b, ell) band hits at each checkpoint.
struct TailPassAcc {
  std::vector<std::uint64_t> alive;
  std::vector<double> wsum, wsum2;
  std::vector<std::uint64_t> bhit;
  std::vector<double> bwsum, bwsum2;
  std::uint64_t reps = 0;
};

struct TailPassResult {
  std::vector<int> checkpoints;
  TailPassAcc acc;
};

inline TailPassResult tail_pass(const TiltedKernel& kernel, const ProjectivePoint& x0, double a,
                                std::span<const int> checkpoints, std::span<const double> band_b,
                                std::span<const double> band_ell, bool bands, std::uint64_t reps,
                                std::uint64_t seed, int workers) {
  std::vector<int> cps(checkpoints.begin(), checkpoints.end());
  std::sort(cps.begin(), cps.end());
  cps.erase(std::unique(cps.begin(), cps.end()), cps.end());
  const int n_max = cps.back();
  const std::size_t nc = cps.size();
  const std::size_t nb = bands ? band_b.size() * band_ell.size() : 0;

  TailPassAcc zero;
  zero.alive.assign(nc, 0);
  zero.wsum.assign(nc, 0.0);
  zero.wsum2.assign(nc, 0.0);
  zero.bhit.assign(nc * nb, 0);
  zero.bwsum.assign(nc * nb, 0.0);
  zero.bwsum2.assign(nc * nb, 0.0);

  TailPassAcc total = replica_reduce(
      reps, workers, zero,
      [&](TailPassAcc& acc, std::uint64_t r) {
        RandomStream rng = RandomStream::from_key(seed, "tail-pass", r);
        WalkState st = make_walk_state(kernel, x0, a);
        std::size_t next = 0;
        while (st.alive && st.n < n_max) {
          step_tilted(kernel, st, rng);
          if (st.alive && next < nc && st.n == cps[next]) {
            acc.alive[next] += 1;
            acc.wsum[next] += st.weight;
            acc.wsum2[next] += st.weight * st.weight;
            if (nb) {
              std::size_t bi = 0;
              for (double b : band_b)
                for (double ell : band_ell) {
                  if (st.s >= b && st.s < b + ell) {
                    const std::size_t idx = next * nb + bi;
                    acc.bhit[idx] += 1;
                    acc.bwsum[idx] += st.weight;
                    acc.bwsum2[idx] += st.weight * st.weight;
                  }
                  ++bi;
                }
            }
            ++next;
          }
        }
        acc.reps += 1;
      },
      [](TailPassAcc& a_, const TailPassAcc& b_) {
        for (std::size_t i = 0; i < a_.alive.size(); ++i) a_.alive[i] += b_.alive[i];
        for (std::size_t i = 0; i < a_.wsum.size(); ++i) {
          a_.wsum[i] += b_.wsum[i];
          a_.wsum2[i] += b_.wsum2[i];
        }
        for (std::size_t i = 0; i < a_.bhit.size(); ++i) {
          a_.bhit[i] += b_.bhit[i];
          a_.bwsum[i] += b_.bwsum[i];
          a_.bwsum2[i] += b_.bwsum2[i];
        }
        a_.reps += b_.reps;
      });
  return TailPassResult{std::move(cps), std::move(total)};
}

}  // namespace detail

// Runs every walk diagnostic.  Convention for the passage-tail comparisons:
// the compensating functional V(x,a) = lim E[S_n; tau > n] is what
// estimate_harmonic returns; classical fluctuation theory gives
// P(tau > n) ~ (2 V / sigma) / sqrt(2 pi n), so the tail-normalized harmonic
// value used in ratio checks is h = 2 V / sigma.
inline WalkArtifact run_walk(const ExperimentConfig& cfg, const SpectralArtifact& sp,
                             int workers_override = -1) {
  const int workers = workers_override >= 0 ? workers_override : cfg.workers;
  const WalkSettings& w = cfg.walk;
  const std::uint64_t base = detail::stage_seed(cfg.seed, "walk");

  WalkArtifact art;
  art.config_hash = cfg.config_hash;
  art.seed = cfg.seed;
  art.theta = sp.critical.theta_star;
  art.lambda = sp.critical.rho_star;

  const TiltedKernel kernel = make_tilted_kernel(cfg.law, sp.critical.solution);
  const TiltedKernel kernel_rev = make_tilted_kernel(cfg.law.transposed(), sp.reversed);
  const ProjectivePoint x0 = ProjectivePoint::uniform(cfg.law.p, Flavor::Row);

  // Dispersion of the unkilled walk.
  art.sigma = sigma_estimate(kernel, w.sigma_horizon, w.sigma_reps, mix64(base ^ 1), workers);
  const double sigma = art.sigma.sigma;
  art.rows.push_back({"sigma", w.sigma_horizon, {}, {}, {}, art.sigma.sigma, 0.0, art.sigma.reps,
                      mix64(base ^ 1)});
  art.rows.push_back({"sigma_double_horizon", 2 * w.sigma_horizon, {}, {}, {},
                      art.sigma.sigma_double, 0.0, art.sigma.reps, mix64(base ^ 1)});

  // Compensating-functional tables over direction x offset grids, forward and
  // reversed (transposed law).
  art.table_forward = build_harmonic_table(kernel, w.coarse_resolution, w.harmonic_as,
                                           w.harmonic_horizon, w.harmonic_reps, mix64(base ^ 2),
                                           workers);
  art.table_reversed = build_harmonic_table(kernel_rev, w.coarse_resolution, w.harmonic_as,
                                            w.harmonic_horizon, w.harmonic_reps, mix64(base ^ 3),
                                            workers);

  // Dedicated compensating-functional estimates at the tail starting points.
  for (std::size_t ai = 0; ai < w.a_values.size(); ++ai) {
    const double a = w.a_values[ai];
    const std::uint64_t hs = mix64(base ^ (0x100 + ai));
    const HarmonicEstimate he =
        estimate_harmonic(kernel, x0, a, w.harmonic_horizon, w.harmonic_reps, hs, workers);
    art.harmonic.push_back(he);
    art.rows.push_back({"harmonic", w.harmonic_horizon, a, {}, {}, he.value, he.se, he.reps, hs});
    art.rows.push_back({"harmonic_half_horizon", w.harmonic_horizon / 2, a, {}, {}, he.value_half,
                        he.se_half, he.reps, hs});
  }
  for (double b : w.band_b) {
    const double vr = art.table_reversed.at(ProjectivePoint::uniform(cfg.law.p, Flavor::Row), b);
    art.rows.push_back({"harmonic_reversed", w.harmonic_horizon, {}, b, {}, vr, 0.0,
                        art.table_reversed.reps, mix64(base ^ 3)});
  }

  // Tail passes: one combined simulation per starting level.
  for (std::size_t ai = 0; ai < w.a_values.size(); ++ai) {
    const double a = w.a_values[ai];
    const double v_a = std::max(art.harmonic[ai].value, 1e-12);
    const double h_tail = 2.0 * v_a / std::max(sigma, 1e-12);
    const std::uint64_t ts = mix64(base ^ (0x200 + ai));
    const bool bands = ai == 0;
    const auto pass = detail::tail_pass(kernel, x0, a, w.checkpoints, w.band_b, w.band_ell, bands,
                                        w.reps, ts, workers);
    const double reps_d = static_cast<double>(pass.acc.reps);
    for (std::size_t ci = 0; ci < pass.checkpoints.size(); ++ci) {
      const int n = pass.checkpoints[ci];
      const double p = static_cast<double>(pass.acc.alive[ci]) / reps_d;
      const double p_se = std::sqrt(std::max(p * (1.0 - p), 1e-300) / reps_d);
      art.rows.push_back({"tail_prob_tilted", n, a, {}, {}, p, p_se, pass.acc.reps, ts});
      const double comp = std::sqrt(kTwoPi * n);
      art.rows.push_back(
          {"tail_compensated", n, a, {}, {}, comp * p, comp * p_se, pass.acc.reps, ts});
      const double ratio = comp * p / h_tail;
      const double ratio_se =
          ratio * std::sqrt((p_se / std::max(p, 1e-300)) * (p_se / std::max(p, 1e-300)) +
                            (art.harmonic[ai].se / v_a) * (art.harmonic[ai].se / v_a));
      art.rows.push_back({"tail_ratio_h", n, a, {}, {}, ratio, ratio_se, pass.acc.reps, ts});

      const MeanSE un = mean_se(pass.acc.wsum[ci], pass.acc.wsum2[ci], pass.acc.reps);
      art.rows.push_back({"tail_prob_untilted", n, a, {}, {}, un.mean, un.se, pass.acc.reps, ts});
      // Untilted envelope: n^{3/2} rho^{-n} P(tau > n) against e^{theta a} V(a).
      const double scale = std::pow(n, 1.5) * std::exp(-n * std::log(art.lambda)) /
                           (std::exp(art.theta * a) * v_a);
      art.rows.push_back({"envelope_untilted", n, a, {}, {}, scale * un.mean, scale * un.se,
                          pass.acc.reps, ts});

      if (bands) {
        const std::size_t nb = w.band_b.size() * w.band_ell.size();
        std::size_t bi = 0;
        for (double b : w.band_b)
          for (double ell : w.band_ell) {
            const std::size_t idx = ci * nb + bi;
            const double bp = static_cast<double>(pass.acc.bhit[idx]) / reps_d;
            const double bp_se = std::sqrt(std::max(bp * (1.0 - bp), 1e-300) / reps_d);
            art.rows.push_back(
                {"band_prob_tilted", n, a, b, ell, bp, bp_se, pass.acc.reps, ts});
            const double vr =
                art.table_reversed.at(ProjectivePoint::uniform(cfg.law.p, Flavor::Row), b);
            const double shape = std::pow(n, 1.5) / (v_a * vr * ell);
            art.rows.push_back({"envelope_band_tilted", n, a, b, ell, shape * bp, shape * bp_se,
                                pass.acc.reps, ts});
            ++bi;
          }
      }
    }
  }

  // Conditioned endpoint profile at hist_n from the first starting level.
  art.hist_a = w.a_values.front();
  const double v_a0 = std::max(art.harmonic.front().value, 1e-12);
  const double ell_abs = w.hist_ell * sigma * std::sqrt(static_cast<double>(w.hist_n));
  art.hist = local_limit(kernel, x0, art.hist_a, w.hist_n, ell_abs, sigma, v_a0 / sigma,
                         w.hist_reps, mix64(base ^ 4), workers);
  for (const auto& row : art.hist.rows) {
    art.rows.push_back({"hist_scaled", art.hist.n, art.hist_a, row.b, art.hist.ell, row.scaled,
                        row.se, art.hist.reps, mix64(base ^ 4)});
    art.rows.push_back({"hist_reference", art.hist.n, art.hist_a, row.b, art.hist.ell,
                        row.reference, 0.0, art.hist.reps, mix64(base ^ 4)});
  }
  const double m = std::max<double>(1.0, static_cast<double>(art.hist.alive));
  art.rows.push_back({"rayleigh_ks", art.hist.n, art.hist_a, {}, {}, art.hist.ks,
                      0.5 / std::sqrt(m), art.hist.alive, mix64(base ^ 4)});
  return art;
}

inline nlohmann::json WalkArtifact::to_json() const {
  nlohmann::json rows_j = nlohmann::json::array();
  for (const auto& r : rows) rows_j.push_back(estimate_row_to_json(r));
  nlohmann::json hist_rows = nlohmann::json::array();
  for (const auto& r : hist.rows)
    hist_rows.push_back(nlohmann::json{
        {"b", r.b}, {"scaled", r.scaled}, {"se", r.se}, {"reference", r.reference}});
  nlohmann::json harm = nlohmann::json::array();
  for (const auto& h : harmonic)
    harm.push_back(nlohmann::json{{"value", h.value},
                                  {"se", h.se},
                                  {"value_half", h.value_half},
                                  {"se_half", h.se_half},
                                  {"horizon", h.horizon},
                                  {"reps", h.reps}});
  return nlohmann::json{
      {"config_hash", config_hash},
      {"seed", seed},
      {"version", kVersion},
      {"theta", theta},
      {"lambda", lambda},
      {"sigma", nlohmann::json{{"sigma", sigma.sigma},
                               {"sigma_double", sigma.sigma_double},
                               {"horizon", sigma.horizon},
                               {"reps", sigma.reps}}},
      {"harmonic", harm},
      {"table_forward", detail::harmonic_table_to_json(table_forward)},
      {"table_reversed", detail::harmonic_table_to_json(table_reversed)},
      {"hist", nlohmann::json{{"n", hist.n},
                              {"ell", hist.ell},
                              {"sigma", hist.sigma},
                              {"reps", hist.reps},
                              {"alive", hist.alive},
                              {"ks", hist.ks},
                              {"a", hist_a},
                              {"rows", hist_rows}}},
      {"rows", rows_j}};
}

inline WalkArtifact WalkArtifact::from_json(const nlohmann::json& j) {
  WalkArtifact a;
  a.config_hash = j.at("config_hash").get<std::uint64_t>();
  a.seed = j.at("seed").get<std::uint64_t>();
  a.theta = j.at("theta").get<double>();
  a.lambda = j.at("lambda").get<double>();
  const auto& sj = j.at("sigma");
  a.sigma.sigma = sj.at("sigma").get<double>();
  a.sigma.sigma_double = sj.at("sigma_double").get<double>();
  a.sigma.horizon = sj.at("horizon").get<int>();
  a.sigma.reps = sj.at("reps").get<std::uint64_t>();
  for (const auto& hj : j.at("harmonic")) {
    HarmonicEstimate h;
    h.value = hj.at("value").get<double>();
    h.se = hj.at("se").get<double>();
    h.value_half = hj.at("value_half").get<double>();
    h.se_half = hj.at("se_half").get<double>();
    h.horizon = hj.at("horizon").get<int>();
    h.reps = hj.at("reps").get<std::uint64_t>();
    a.harmonic.push_back(h);
  }
  a.table_forward = detail::harmonic_table_from_json(j.at("table_forward"));
  a.table_reversed = detail::harmonic_table_from_json(j.at("table_reversed"));
  const auto& hj = j.at("hist");
  a.hist.n = hj.at("n").get<int>();
  a.hist.ell = hj.at("ell").get<double>();
  a.hist.sigma = hj.at("sigma").get<double>();
  a.hist.reps = hj.at("reps").get<std::uint64_t>();
  a.hist.alive = hj.at("alive").get<std::uint64_t>();
  a.hist.ks = hj.at("ks").get<double>();
  a.hist_a = hj.at("a").get<double>();
  for (const auto& rj : hj.at("rows")) {
    LocalLimitRow r;
    r.b = rj.at("b").get<double>();
    r.scaled = rj.at("scaled").get<double>();
    r.se = rj.at("se").get<double>();
    r.reference = rj.at("reference").get<double>();
    a.hist.rows.push_back(r);
  }
  for (const auto& rj : j.at("rows")) a.rows.push_back(estimate_row_from_json(rj));
  return a;
}

// ---------------------------------------------------------------------------
// Survival stage
// ---------------------------------------------------------------------------

struct SurvivalArtifact {
  std::uint64_t config_hash = 0;
  std::uint64_t seed = 0;
  int p = 1;
  double theta = 0.0;
  double rho = 0.0;
  std::vector<SurvivalEstimate> tilted;
  std::vector<SurvivalEstimate> naive;
  SlopeFit fit;           // on type-0 tilted estimates
  bool fit_valid = false;
  std::string fit_error;
  double compensated_min = 0.0;  // min/max over n of n^{3/2} est / rho^n
  double compensated_max = 0.0;

  nlohmann::json to_json() const;
  static SurvivalArtifact from_json(const nlohmann::json& j);
};

namespace detail {

inline nlohmann::json survival_estimate_to_json(const SurvivalEstimate& e, int p) {
  std::vector<double> est, se;
  for (int i = 0; i < p; ++i) {
    est.push_back(e.estimate[i]);
    se.push_back(e.se[i]);
  }
  return nlohmann::json{{"n", e.n},
                        {"estimate", est},
                        {"se", se},
                        {"ess", e.ess},
                        {"mean_weight", e.mean_weight},
                        {"mean_weight_se", e.mean_weight_se},
                        {"reps", e.reps},
                        {"seed", e.seed},
                        {"method", e.method},
                        {"high_variance_warning", e.high_variance_warning}};
}

inline SurvivalEstimate survival_estimate_from_json(const nlohmann::json& j, int p) {
  SurvivalEstimate e;
  e.n = j.at("n").get<int>();
  const auto est = j.at("estimate").get<std::vector<double>>();
  const auto se = j.at("se").get<std::vector<double>>();
  if (static_cast<int>(est.size()) != p || static_cast<int>(se.size()) != p)
    throw std::invalid_argument("survival estimate dimension mismatch");
  e.estimate = Vec(p);
  e.se = Vec(p);
  for (int i = 0; i < p; ++i) {
    e.estimate[i] = est[i];
    e.se[i] = se[i];
  }
  e.ess = j.at("ess").get<double>();
  e.mean_weight = j.at("mean_weight").get<double>();
  e.mean_weight_se = j.at("mean_weight_se").get<double>();
  e.reps = j.at("reps").get<std::uint64_t>();
  e.seed = j.at("seed").get<std::uint64_t>();
  e.method = j.at("method").get<std::string>();
  e.high_variance_warning = j.at("high_variance_warning").get<bool>();
  return e;
}

}  // namespace detail

inline SurvivalArtifact run_survival(const ExperimentConfig& cfg, const SpectralArtifact& sp,
                                     int workers_override = -1) {
  const int workers = workers_override >= 0 ? workers_override : cfg.workers;
  const SurvivalSettings& s = cfg.survival;
  const std::uint64_t base = detail::stage_seed(cfg.seed, "survival");

  SurvivalArtifact art;
  art.config_hash = cfg.config_hash;
  art.seed = cfg.seed;
  art.p = cfg.law.p;
  art.theta = sp.critical.theta_star;
  art.rho = sp.critical.rho_star;

  const TiltedKernel kernel = make_tilted_kernel(cfg.law, sp.critical.solution);
  std::vector<int> ns(s.n_values.begin(), s.n_values.end());
  std::sort(ns.begin(), ns.end());
  ns.erase(std::unique(ns.begin(), ns.end()), ns.end());

  for (std::size_t i = 0; i < ns.size(); ++i) {
    const std::uint64_t seed_i = mix64(base ^ (0x10 + i));
    art.tilted.push_back(annealed_tilted(cfg.law, kernel, ns[i], s.tilted_reps, seed_i, workers));
  }
  if (cfg.law.has_offspring()) {
    for (std::size_t i = 0; i < ns.size(); ++i) {
      if (ns[i] > s.naive_max_n || s.naive_reps == 0) continue;
      const std::uint64_t seed_i = mix64(base ^ (0x1000 + i));
      art.naive.push_back(annealed_naive(cfg.law, ns[i], s.naive_reps, seed_i, workers));
    }
  }

  std::vector<DecayPoint> pts;
  for (const auto& e : art.tilted)
    pts.push_back({e.n, e.estimate[0], e.se[0]});
  try {
    art.fit = fit_power_law(pts, std::log(art.rho), s.bootstrap,
                            detail::stage_seed(cfg.seed, "bootstrap"));
    art.fit_valid = true;
  } catch (const std::invalid_argument& e) {
    art.fit_valid = false;
    art.fit_error = e.what();
  }

  art.compensated_min = 1e300;
  art.compensated_max = 0.0;
  for (const auto& e : art.tilted) {
    const double comp =
        std::pow(e.n, 1.5) * e.estimate[0] * std::exp(-e.n * std::log(art.rho));
    art.compensated_min = std::min(art.compensated_min, comp);
    art.compensated_max = std::max(art.compensated_max, comp);
  }
  return art;
}

inline CsvTable survival_table(const SurvivalArtifact& art) {
  CsvTable t;
  t.header = {"method", "n", "type", "estimate", "stderr", "ess", "mean_weight", "reps", "seed"};
  auto add = [&](const SurvivalEstimate& e) {
    for (int i = 0; i < art.p; ++i)
      t.add_row({e.method, fmt_int(e.n), fmt_int(i), fmt_double(e.estimate[i]),
                 fmt_double(e.se[i]), fmt_double(e.ess), fmt_double(e.mean_weight),
                 fmt_int(static_cast<std::int64_t>(e.reps)),
                 fmt_int(static_cast<std::int64_t>(e.seed))});
  };
  for (const auto& e : art.tilted) add(e);
  for (const auto& e : art.naive) add(e);
  return t;
}

inline nlohmann::json SurvivalArtifact::to_json() const {
  nlohmann::json tj = nlohmann::json::array();
  for (const auto& e : tilted) tj.push_back(detail::survival_estimate_to_json(e, p));
  nlohmann::json nj = nlohmann::json::array();
  for (const auto& e : naive) nj.push_back(detail::survival_estimate_to_json(e, p));
  nlohmann::json out{{"config_hash", config_hash},
                     {"seed", seed},
                     {"version", kVersion},
                     {"p", p},
                     {"theta", theta},
                     {"rho", rho},
                     {"tilted", tj},
                     {"naive", nj},
                     {"fit_valid", fit_valid},
                     {"compensated_min", compensated_min},
                     {"compensated_max", compensated_max}};
  if (fit_valid)
    out["fit"] = slope_fit_to_json(fit);
  else
    out["fit_error"] = fit_error;
  return out;
}

inline SurvivalArtifact SurvivalArtifact::from_json(const nlohmann::json& j) {
  SurvivalArtifact a;
  a.config_hash = j.at("config_hash").get<std::uint64_t>();
  a.seed = j.at("seed").get<std::uint64_t>();
  a.p = j.at("p").get<int>();
  a.theta = j.at("theta").get<double>();
  a.rho = j.at("rho").get<double>();
  for (const auto& e : j.at("tilted")) a.tilted.push_back(detail::survival_estimate_from_json(e, a.p));
  for (const auto& e : j.at("naive")) a.naive.push_back(detail::survival_estimate_from_json(e, a.p));
  a.fit_valid = j.at("fit_valid").get<bool>();
  if (a.fit_valid)
    a.fit = slope_fit_from_json(j.at("fit"));
  else
    a.fit_error = j.value("fit_error", "");
  a.compensated_min = j.at("compensated_min").get<double>();
  a.compensated_max = j.at("compensated_max").get<double>();
  return a;
}

// ---------------------------------------------------------------------------
// Report assembly
// ---------------------------------------------------------------------------

struct ReportCheck {
  std::string id;
  bool passed = false;
  bool applicable = true;
  double value = 0.0;
  std::string detail;
};

struct RunReport {
  std::uint64_t config_hash = 0;
  std::uint64_t seed = 0;
  std::string law_name;
  std::optional<SpectralArtifact> spectral;
  std::optional<ConditionReport> conditions;
  std::optional<WalkArtifact> walk;
  std::optional<SurvivalArtifact> survival;
  std::vector<ReportCheck> checks;
  std::vector<std::string> failures;  // stage failures recorded, run continued
};

// Computes the report checklist from whichever artifacts are present.
// These mirror the acceptance gates but run at config-level budgets.
inline std::vector<ReportCheck> report_checks(const RunReport& r) {
  std::vector<ReportCheck> out;
  auto add = [&out](std::string id, bool applicable, bool passed, double value,
                    std::string detail) {
    out.push_back({std::move(id), passed, applicable, value, std::move(detail)});
  };

  if (r.spectral) {
    const auto& c = r.spectral->critical;
    add("regime-weakly-subcritical", true, c.regime == Regime::WeaklySubcritical,
        c.deriv_at_one, std::string("regime = ") + regime_name(c.regime));
    add("spectral-residual", true,
        r.spectral->critical.solution.residual <= 1e-6 && r.spectral->reversed_lambda_gap < 1e-3,
        r.spectral->critical.solution.residual, "eigen residual and transposed-law gap");
  } else {
    add("regime-weakly-subcritical", false, false, 0, "spectral stage missing");
  }
  if (r.conditions) {
    add("conditions-required", true, r.conditions->required_passed(), 0,
        "all non-declared checks hold");
  }
  if (r.walk) {
    double worst = 0.0;
    bool any = false, ok = true;
    for (const auto& row : r.walk->rows)
      if (row.quantity == "tail_ratio_h") {
        any = true;
        worst = std::max(worst, std::abs(row.estimate - 1.0));
        if (row.estimate < 0.85 || row.estimate > 1.15) ok = false;
      }
    add("tail-ratio-band", any, any && ok, worst, "sqrt(2 pi n) P(tau>n) / h within [0.85, 1.15]");
    add("rayleigh-ks", true, r.walk->hist.ks < 0.05, r.walk->hist.ks,
        "conditioned endpoint profile vs Rayleigh law");

    double band_lo = 1e300, band_hi = 0.0;
    bool band_any = false;
    for (const auto& row : r.walk->rows)
      if (row.quantity == "envelope_band_tilted" && row.estimate > 0) {
        band_any = true;
        band_lo = std::min(band_lo, row.estimate);
        band_hi = std::max(band_hi, row.estimate);
      }
    add("band-envelope-spread", band_any, band_any && band_hi <= 4.0 * band_lo,
        band_any ? band_hi / band_lo : 0.0, "local band masses vs h*h~*ell shape");

    double env_lo = 1e300, env_hi = 0.0;
    bool env_any = false;
    for (const auto& row : r.walk->rows)
      if (row.quantity == "envelope_untilted" && row.estimate > 0) {
        env_any = true;
        env_lo = std::min(env_lo, row.estimate);
        env_hi = std::max(env_hi, row.estimate);
      }
    add("untilted-envelope-spread", env_any, env_any && env_hi <= 4.0 * env_lo,
        env_any ? env_hi / env_lo : 0.0, "n^{3/2} rho^{-n} P(tau>n) vs e^{theta a} V(a) shape");
  }
  if (r.survival) {
    if (r.survival->fit_valid) {
      const auto& f = r.survival->fit;
      add("slope-in-window", true, f.slope >= -1.8 && f.slope <= -1.2, f.slope,
          "decay exponent within [-1.8, -1.2]");
      add("slope-ci-covers", true, f.ci_lo <= -1.5 && -1.5 <= f.ci_hi, f.ci_lo,
          "bootstrap CI contains -1.5");
    } else {
      add("slope-in-window", false, false, 0, "fit unavailable: " + r.survival->fit_error);
    }
    const bool comp_ok = r.survival->compensated_min > 0 &&
                         r.survival->compensated_max <= 2.0 * r.survival->compensated_min;
    add("compensated-bounded", true, comp_ok,
        r.survival->compensated_min > 0
            ? r.survival->compensated_max / r.survival->compensated_min
            : 0.0,
        "n^{3/2} E[q_n] / rho^n varies by less than a factor 2");
    bool func_any = false, func_ok = true;
    double worst = 0.0;
    for (const auto& e : r.survival->tilted) {
      func_any = true;
      const double gap = std::abs(e.mean_weight - 1.0);
      worst = std::max(worst, gap);
      if (gap > 3.0 * e.mean_weight_se + 0.01) func_ok = false;
    }
    add("tilted-functional-one", func_any, func_any && func_ok, worst,
        "mean importance weight = 1 within 3 se (+1% normalization slack)");
  }
  return out;
}

inline nlohmann::json run_report_to_json(const RunReport& r) {
  nlohmann::json j{{"config_hash", r.config_hash},
                   {"seed", r.seed},
                   {"version", kVersion},
                   {"law", r.law_name}};
  if (r.spectral) j["spectral"] = r.spectral->to_json();
  if (r.conditions) j["conditions"] = conditions_to_json(*r.conditions, r.config_hash);
  if (r.walk) j["walk"] = r.walk->to_json();
  if (r.survival) j["survival"] = r.survival->to_json();
  nlohmann::json checks = nlohmann::json::array();
  for (const auto& c : r.checks)
    checks.push_back(nlohmann::json{{"id", c.id},
                                    {"passed", c.passed},
                                    {"applicable", c.applicable},
                                    {"value", c.value},
                                    {"detail", c.detail}});
  j["checks"] = checks;
  j["failures"] = r.failures;
  return j;
}

inline std::string render_markdown_report(const RunReport& r) {
  std::string md;
  md += "# Subcritical branching laboratory report\n\n";
  md += "- law: " + r.law_name + "\n";
  md += "- seed: " + fmt_int(static_cast<std::int64_t>(r.seed)) + "\n";
  md += "- config hash: " + fmt_int(static_cast<std::int64_t>(r.config_hash)) + "\n";
  md += "- version: " + std::string(kVersion) + "\n\n";

  if (r.spectral) {
    const auto& c = r.spectral->critical;
    md += "## Critical point\n\n";
    md += "| quantity | value |\n|---|---|\n";
    md += "| theta_star | " + fmt_double(c.theta_star) + " |\n";
    md += "| rho_star | " + fmt_double(c.rho_star) + " |\n";
    md += "| gamma (drift at 0) | " + fmt_double(c.gamma) + " |\n";
    md += "| growth derivative at 1 | " + fmt_double(c.deriv_at_one) + " |\n";
    md += "| regime | " + std::string(regime_name(c.regime)) + " |\n";
    md += "| eigen residual | " + fmt_double(c.solution.residual) + " |\n\n";
  }
  if (r.conditions) {
    md += "## Model conditions\n\n";
    md += "| id | value | status | note |\n|---|---|---|---|\n";
    for (const auto& c : r.conditions->checks) {
      const std::string status =
          c.declared_only ? "declared" : (c.passed ? "pass" : "FAIL");
      md += "| " + c.id + " | " + fmt_double(c.value) + " | " + status + " | " + c.note + " |\n";
    }
    md += "\n";
  }
  if (r.survival && r.survival->fit_valid) {
    const auto& f = r.survival->fit;
    md += "## Decay exponent\n\n";
    md += "Weighted fit of log E[q_n] - n log rho_star against log n:\n\n";
    md += "- slope: " + fmt_double(f.slope) + " (se " + fmt_double(f.se_slope) + ")\n";
    md += "- bootstrap 95% CI: [" + fmt_double(f.ci_lo) + ", " + fmt_double(f.ci_hi) + "]\n";
    md += "- intercept (log C): " + fmt_double(f.intercept) + "\n";
    md += "- points used: " + fmt_int(f.points_used) + "\n\n";
  }
  if (r.walk) {
    md += "## Walk diagnostics\n\n";
    md += "- sigma: " + fmt_double(r.walk->sigma.sigma) + " (doubled horizon: " +
          fmt_double(r.walk->sigma.sigma_double) + ")\n";
    md += "- Rayleigh KS at n = " + fmt_int(r.walk->hist.n) + ": " + fmt_double(r.walk->hist.ks) +
          " (" + fmt_int(static_cast<std::int64_t>(r.walk->hist.alive)) +
          " conditioned samples)\n\n";
  }
  md += "## Checklist\n\n";
  md += "| check | status | value | detail |\n|---|---|---|---|\n";
  for (const auto& c : r.checks) {
    const std::string status = !c.applicable ? "skipped" : (c.passed ? "pass" : "FAIL");
    md += "| " + c.id + " | " + status + " | " + fmt_double(c.value) + " | " + c.detail + " |\n";
  }
  md += "\n";
  if (!r.failures.empty()) {
    md += "## Stage failures\n\n";
    for (const auto& f : r.failures) md += "- " + f + "\n";
    md += "\n";
  }
  return md;
}

// Writes the report surfaces selected by `format` ("csv" = tables only,
// "json" = tables + machine summary, "md" = everything).
inline void emit_report(const RunReport& r, const std::string& out_dir, const std::string& format) {
  std::filesystem::create_directories(out_dir);
  const std::filesystem::path dir(out_dir);
  if (r.conditions)
    write_text_file((dir / "conditions.csv").string(), conditions_table(*r.conditions).render());
  if (r.walk)
    write_text_file((dir / "walk_estimates.csv").string(), estimate_table(r.walk->rows).render());
  if (r.survival)
    write_text_file((dir / "survival_estimates.csv").string(),
                    survival_table(*r.survival).render());
  if (format == "csv") return;
  write_text_file((dir / "summary.json").string(), run_report_to_json(r).dump(2) + "\n");
  if (format == "json") return;
  write_text_file((dir / "report.md").string(), render_markdown_report(r));
}

// Full pipeline: spectral solve, condition report, walk diagnostics, survival
// schedule, slope fit, checklist.  Stage failures after the spectral solve are
// recorded and the run continues where dependencies allow.  Spectral failures
// (regime mismatch, non-convergence) propagate: nothing downstream is
// meaningful without the critical point.
inline RunReport run(const ExperimentConfig& cfg) {
  RunReport rep;
  rep.config_hash = cfg.config_hash;
  rep.seed = cfg.seed;
  rep.law_name = cfg.law.name;

  rep.spectral = run_spectral(cfg);
  try {
    rep.conditions = run_conditions(cfg, &*rep.spectral);
  } catch (const std::exception& e) {
    rep.failures.push_back(std::string("conditions: ") + e.what());
  }
  try {
    rep.walk = run_walk(cfg, *rep.spectral);
  } catch (const std::exception& e) {
    rep.failures.push_back(std::string("walk: ") + e.what());
  }
  try {
    rep.survival = run_survival(cfg, *rep.spectral);
  } catch (const std::exception& e) {
    rep.failures.push_back(std::string("survival: ") + e.what());
  }
  rep.checks = report_checks(rep);
  return rep;
}

}  // namespace subcrit
