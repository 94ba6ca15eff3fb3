// Cross-validation suite: independent estimators checked against each other
// (spectral vs Monte Carlo growth, quenched vs forward simulation, tilted vs
// naive survival) plus the exact pathwise identities.  Every check is cheap
// enough for a CLI subcommand; the heavyweight versions live in the
// acceptance suite.
#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "subcrit/branching.hpp"
#include "subcrit/harness.hpp"

namespace subcrit {

struct VerifyArtifact {
  std::uint64_t config_hash = 0;
  std::uint64_t seed = 0;
  std::vector<ReportCheck> checks;

  bool all_passed() const {
    for (const auto& c : checks)
      if (c.applicable && !c.passed) return false;
    return true;
  }

  nlohmann::json to_json() const {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& c : checks)
      arr.push_back(nlohmann::json{{"id", c.id},
                                   {"passed", c.passed},
                                   {"applicable", c.applicable},
                                   {"value", c.value},
                                   {"detail", c.detail}});
    return nlohmann::json{
        {"config_hash", config_hash}, {"seed", seed}, {"version", kVersion}, {"checks", arr}};
  }
};

namespace detail {

// Quenched backward composition against forward individual-level simulation:
// averaged signed gap of survival indicators across environments.
inline ReportCheck quenched_vs_forward(const EnvironmentLaw& law, int n, int envs,
                                       int forward_reps, std::uint64_t seed) {
  ReportCheck c;
  c.id = "quenched-vs-forward";
  if (!law.has_offspring()) {
    c.applicable = false;
    c.detail = "law has no offspring description (transposed continuous law)";
    return c;
  }
  double gap_sum = 0.0, gap_sq = 0.0;
  std::vector<EnvironmentAtom> env;
  for (int e = 0; e < envs; ++e) {
    RandomStream rng = RandomStream::from_key(seed, "qvf-env", static_cast<std::uint64_t>(e));
    env.clear();
    for (int g = 0; g < n; ++g) env.push_back(law.sample_atom(rng));
    const Vec q = quenched_survival(env, n);
    std::array<std::int64_t, kMaxTypes> z0{};
    z0[0] = 1;
    int alive = 0;
    for (int r = 0; r < forward_reps; ++r) {
      const ForwardResult fr =
          forward_simulate(env, std::span<const std::int64_t>(z0.data(), law.p), n, rng);
      if (fr.alive_at(n)) ++alive;
    }
    const double gap = static_cast<double>(alive) / forward_reps - q[0];
    gap_sum += gap;
    gap_sq += gap * gap;
  }
  const MeanSE m = mean_se(gap_sum, gap_sq, static_cast<std::uint64_t>(envs));
  c.value = m.mean;
  c.passed = std::abs(m.mean) <= 3.0 * std::max(m.se, 1e-12);
  c.detail = "mean survival gap " + fmt_double(m.mean) + " (se " + fmt_double(m.se) + ")";
  return c;
}

}  // namespace detail

inline VerifyArtifact run_verify(const ExperimentConfig& cfg, const SpectralArtifact& sp,
                                 int workers_override = -1) {
  const int workers = workers_override >= 0 ? workers_override : cfg.workers;
  const std::uint64_t seed = detail::stage_seed(cfg.seed, "verify");
  VerifyArtifact art;
  art.config_hash = cfg.config_hash;
  art.seed = seed;
  auto add = [&art](ReportCheck c) { art.checks.push_back(std::move(c)); };

  // 1. Spectral growth rate against direct Monte Carlo at four tilts.
  {
    SpectralWorkspace ws(cfg.law, cfg.spectral);
    const double thetas[4] = {0.25, 0.5, 0.75, 1.0};
    for (double th : thetas) {
      const SpectralSolution sol = ws.solve(th);
      const ParticleGrowth mc = growth_rate_particle(
          cfg.law, th, 2048, 16, 96, 4,
          mix64(seed ^ fnv1a("growth") ^ static_cast<std::uint64_t>(th * 1024)));
      ReportCheck c;
      c.id = "growth-spectral-vs-mc-theta-" + fmt_double(th);
      const double tol = std::max(0.01 * sol.lambda, 3.0 * mc.se);
      c.value = std::abs(mc.lambda - sol.lambda);
      c.passed = c.value <= tol;
      c.detail = "spectral " + fmt_double(sol.lambda) + " vs mc " + fmt_double(mc.lambda) +
                 " (se " + fmt_double(mc.se) + ")";
      add(std::move(c));
    }
  }

  // 2. Quenched composition vs forward simulation.
  add(detail::quenched_vs_forward(cfg.law, 8, 40, 1500, mix64(seed ^ fnv1a("qvf"))));

  // 3. Tilted vs naive annealed survival at an overlap horizon.
  if (cfg.law.has_offspring()) {
    const TiltedKernel kernel = make_tilted_kernel(cfg.law, sp.critical.solution);
    const int n = 30;
    const SurvivalEstimate tilted =
        annealed_tilted(cfg.law, kernel, n, 60000, mix64(seed ^ fnv1a("ovl-t")), workers);
    const SurvivalEstimate naive =
        annealed_naive(cfg.law, n, 120000, mix64(seed ^ fnv1a("ovl-n")), workers);
    ReportCheck c;
    c.id = "tilted-vs-naive-overlap";
    const double gap = std::abs(tilted.estimate[0] - naive.estimate[0]);
    const double joint = std::sqrt(tilted.se[0] * tilted.se[0] + naive.se[0] * naive.se[0]);
    c.value = joint > 0 ? gap / joint : 0.0;
    c.passed = gap <= 3.0 * joint + 0.01 * naive.estimate[0];
    c.detail = "tilted " + fmt_double(tilted.estimate[0]) + " vs naive " +
               fmt_double(naive.estimate[0]) + " at n = " + fmt_int(n);
    add(std::move(c));

    // 4. The bare importance weight must average to one.
    ReportCheck f;
    f.id = "tilted-functional-one";
    f.value = std::abs(tilted.mean_weight - 1.0);
    f.passed = f.value <= 3.0 * tilted.mean_weight_se + 0.01;
    f.detail = "mean weight " + fmt_double(tilted.mean_weight) + " (se " +
               fmt_double(tilted.mean_weight_se) + ")";
    add(std::move(f));
  }

  // 5. Exact telescoping of 1/(1 - F(s)) on sampled environments.
  if (cfg.law.has_offspring()) {
    RandomStream rng = RandomStream::from_key(seed, "telescope");
    double worst = 0.0;
    std::vector<EnvironmentAtom> env;
    const int n = 30;
    for (int trial = 0; trial < 20; ++trial) {
      env.clear();
      for (int g = 0; g < n; ++g) env.push_back(cfg.law.sample_atom(rng));
      Vec s(cfg.law.p, 0.0);
      const TelescopingCheck tc = telescoping_check(env, n, 0, s);
      worst = std::max(worst, tc.residual / std::max(1.0, std::abs(tc.lhs)));
    }
    ReportCheck c;
    c.id = "telescoping-exact";
    c.value = worst;
    c.passed = worst <= 1e-9;
    c.detail = "worst relative residual over 20 environments, n = 30";
    add(std::move(c));
  }

  // 6. Min-norm partition: A + B + C equals the full sum and the pathwise
  //    event identity (m_n >= e^{-a}) <=> (tau > n).
  {
    RandomStream rng = RandomStream::from_key(seed, "abc");
    bool exact = true, events = true;
    const int n = 24;
    std::vector<EnvironmentAtom> env;
    for (int trial = 0; trial < 200; ++trial) {
      env.clear();
      for (int g = 0; g < n; ++g) env.push_back(cfg.law.sample_atom(rng));
      const AbcDecomposition d = abc_decomposition(env, n);
      const double together = d.part_before + d.part_at + d.part_after;
      if (std::abs(together - d.total) > 1e-9 * d.total) exact = false;
      for (double a : {0.5, 1.0, 2.0}) {
        // tau > n means every partial log-norm sum stays above -a
        bool tau_gt = true;
        for (double ln : d.log_norms)
          if (a + ln <= 0.0) tau_gt = false;
        if (tau_gt != d.min_norm_event(a)) events = false;
      }
    }
    ReportCheck c;
    c.id = "min-norm-partition";
    c.value = exact && events ? 0.0 : 1.0;
    c.passed = exact && events;
    c.detail = "partition exact and event identity pathwise over 200 environments";
    add(std::move(c));
  }

  // 7. Forward/reversed duality inequality (untilted, modest horizon).
  {
    const ProjectivePoint x = ProjectivePoint::uniform(cfg.law.p, Flavor::Row);
    const ProjectivePoint y = ProjectivePoint::uniform(cfg.law.p, Flavor::Row);
    const double delta_log = comparability_constants(cfg.law.bound, cfg.law.p).log_delta;
    const ReversalReport rr = check_reversal(cfg.law, x, 3.0, y, 2.0, 1.0, 12,
                                             std::max(0.25, delta_log), 60000,
                                             mix64(seed ^ fnv1a("reversal")), workers);
    ReportCheck c;
    c.id = "reversal-inequality";
    c.value = rr.lhs;
    c.passed = rr.upper_ok() && rr.lower_ok();
    c.detail = "lhs " + fmt_double(rr.lhs) + " <= rhs+ " + fmt_double(rr.rhs_upper) +
               (rr.lower_applicable ? " >= rhs- " + fmt_double(rr.rhs_lower) : "");
    add(std::move(c));
  }

  return art;
}

}  // namespace subcrit
