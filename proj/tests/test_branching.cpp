#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <string>
#include <vector>

#include "subcrit/branching.hpp"
#include "subcrit/tilted_walk.hpp"

using namespace subcrit;

namespace {

const TiltedKernel& scalar_kernel() {
  static const TiltedKernel k = [] {
    const EnvironmentLaw law = preset_law("weakly-subcritical-scalar");
    const SpectralWorkspace ws(law, SolverSettings{});
    return make_tilted_kernel(law, ws.critical_point().solution);
  }();
  return k;
}

const TiltedKernel& jitter_kernel() {
  static const TiltedKernel k = [] {
    const EnvironmentLaw law = preset_law("weakly-subcritical-2type");
    const SpectralWorkspace ws(law, SolverSettings{});
    return make_tilted_kernel(law, ws.critical_point().solution);
  }();
  return k;
}

std::vector<EnvironmentAtom> sample_env(const EnvironmentLaw& law, int n, std::uint64_t seed) {
  RandomStream rng = RandomStream::from_key(seed, "env");
  std::vector<EnvironmentAtom> env;
  env.reserve(n);
  for (int k = 0; k < n; ++k) env.push_back(law.sample_atom(rng));
  return env;
}

Vec make_s(double a, double b) {
  Vec s(2, 0.0);
  s[0] = a;
  s[1] = b;
  return s;
}

}  // namespace

TEST_CASE("quenched survival on the all-or-nothing pair has exact closed forms") {
  // each individual leaves one child of every type with probability 1/2,
  // so f(s) = 1/2 + s0 s1 / 2 for both ancestor types
  const EnvironmentLaw law = preset_law("bernoulli-pair");
  const std::vector<EnvironmentAtom> env = sample_env(law, 4, 81001);

  const Vec q1 = quenched_survival(env, 1);
  const Vec q2 = quenched_survival(env, 2);
  for (int i = 0; i < 2; ++i) {
    CHECK(q1[i] == Catch::Approx(0.5).margin(1e-12));
    CHECK(q2[i] == Catch::Approx(0.375).margin(1e-12));
  }

  // longer horizons can only lower the survival probability
  Vec prev = q1;
  for (int n = 2; n <= 4; ++n) {
    const Vec q = quenched_survival(env, n);
    for (int i = 0; i < 2; ++i) CHECK(q[i] <= prev[i] + 1e-15);
    prev = q;
  }

  // path bookkeeping: endpoints of the backward composition
  const Vec terminal = make_s(0.25, 0.75);
  const QuenchedPath path = quenched_path(env, 3, &terminal);
  CHECK(path.backward.size() == 4);
  for (int i = 0; i < 2; ++i) {
    CHECK(path.from(3)[i] == terminal[i]);
    CHECK(path.q[i] == Catch::Approx(1.0 - path.from(0)[i]).margin(1e-15));
  }

  CHECK_THROWS_AS(quenched_survival(env, 5), std::invalid_argument);
}

TEST_CASE("psi has the scaled-family closed form and guards its domain") {
  const EnvironmentAtom atom = scalar_scaled_atom(2, 1.4, 1.05);
  const Vec s = make_s(0.3, 0.3);
  const std::vector<double> r{1.0, 0.0};

  // f_0(s) = 1 / (1 + 0.7 * 0.7)^2 ; e_0 M (1 - s) = 1.4 * 0.7
  const double f = 1.0 / ((1.0 + 0.7 * 0.7) * (1.0 + 0.7 * 0.7));
  const double expected = 1.0 / (1.0 - f) - 1.0 / (1.4 * 0.7);
  CHECK(psi(atom, r, s) == Catch::Approx(expected).epsilon(1e-12));

  // the functional is scale invariant in r
  const std::vector<double> r2{3.0, 0.0};
  CHECK(psi(atom, r2, s) == Catch::Approx(expected).epsilon(1e-12));

  CHECK_THROWS_AS(psi(atom, r, make_s(1.0, 0.3)), std::domain_error);
  CHECK_THROWS_AS(psi(atom, r, make_s(-0.1, 0.3)), std::domain_error);
  const std::vector<double> r3{1.0, 0.0, 0.0};
  CHECK_THROWS_AS(psi(atom, r3, s), std::invalid_argument);

  CHECK(psi_upper_bound(atom, 1.05) > 0.0);
}

TEST_CASE("the reciprocal survival functional telescopes exactly") {
  const Vec s = make_s(0.2, 0.55);
  for (const char* name : {"weakly-subcritical-scalar", "weakly-subcritical-2type",
                           "intermediately-subcritical-scalar"}) {
    const EnvironmentLaw law = preset_law(name);
    for (int rep = 0; rep < 20; ++rep) {
      const std::vector<EnvironmentAtom> env = sample_env(law, 30, 81010 + rep);
      for (int type_i = 0; type_i < 2; ++type_i) {
        const TelescopingCheck tc = telescoping_check(env, 30, type_i, s);
        INFO(name << " rep " << rep << " type " << type_i);
        CHECK(tc.residual <= 1e-9 * std::max(1.0, std::abs(tc.lhs)));
        CHECK(tc.terms.size() == 30);
        CHECK(tc.head > 0.0);
      }
    }
  }

  // one-step edge case and input guards
  const std::vector<EnvironmentAtom> env = sample_env(preset_law("weakly-subcritical-scalar"), 4, 81044);
  const TelescopingCheck one = telescoping_check(env, 1, 0, s);
  CHECK(one.residual <= 1e-12 * std::max(1.0, std::abs(one.lhs)));
  CHECK_THROWS_AS(telescoping_check(env, 2, 5, s), std::invalid_argument);
  CHECK_THROWS_AS(telescoping_check(env, 2, 0, make_s(0.2, 1.0)), std::domain_error);
}

TEST_CASE("the shape expansion reconstructs from raw terms and row norms") {
  const EnvironmentLaw law = preset_law("weakly-subcritical-2type");
  for (int rep = 0; rep < 10; ++rep) {
    const int n = 20;
    const std::vector<EnvironmentAtom> env = sample_env(law, n, 81050 + rep);
    const PsiDecomposition d = eta_values(env, n, rep % 2);
    REQUIRE(d.eta.size() == static_cast<std::size_t>(n));
    REQUIRE(d.eta_bound.size() == static_cast<std::size_t>(n));
    REQUIRE(d.log_row_norm.size() == static_cast<std::size_t>(n));

    double recon = d.head + d.eta[0];
    for (int k = 1; k < n; ++k) recon += std::exp(-d.log_row_norm[k - 1]) * d.eta[k];
    CHECK(recon == Catch::Approx(d.lhs).epsilon(1e-10));

    for (int k = 0; k < n; ++k) {
      CHECK(d.eta[k] >= -1e-12);
      CHECK(d.eta[k] <= d.eta_bound[k] * (1.0 + 1e-9) + 1e-12);
    }
  }
}

TEST_CASE("quenched chains agree with forward population simulation") {
  for (const char* name :
       {"weakly-subcritical-scalar", "weakly-subcritical-scalar-continuous",
        "weakly-subcritical-2type", "intermediately-subcritical-scalar",
        "strongly-subcritical-scalar", "bernoulli-pair"}) {
    const EnvironmentLaw law = preset_law(name);
    const int n = 6, reps = 1200;
    for (int e = 0; e < 25; ++e) {
      const std::vector<EnvironmentAtom> env = sample_env(law, n, 81100 + e);
      const Vec q = quenched_survival(env, n);
      for (int type_i = 0; type_i < 2; ++type_i) {
        const std::vector<std::int64_t> z0{type_i == 0 ? 1 : 0, type_i == 1 ? 1 : 0};
        int alive = 0;
        for (int r = 0; r < reps; ++r) {
          RandomStream rng = RandomStream::from_key(81200 + e, name, r * 2 + type_i);
          if (forward_simulate(env, z0, n, rng).alive_at(n)) ++alive;
        }
        const double freq = static_cast<double>(alive) / reps;
        const double se = std::sqrt(std::max(q[type_i] * (1.0 - q[type_i]), 1e-12) / reps);
        INFO(name << " env " << e << " type " << type_i);
        CHECK(std::abs(freq - q[type_i]) <= 4.0 * se + 0.012);
      }
    }
  }
}

TEST_CASE("forward simulation reports when the population hits the cap") {
  // a frozen supercritical environment: every child count has mean e^2 / 2
  std::vector<EnvironmentAtom> env(8, scalar_scaled_atom(2, std::exp(2.0), 1.05));
  const std::vector<std::int64_t> z0{10, 10};
  RandomStream rng = RandomStream::from_key(81300, "cap");
  const ForwardResult res = forward_simulate(env, z0, 8, rng, 200);
  CHECK(res.capped);
  CHECK_FALSE(res.trajectory.empty());
}

TEST_CASE("importance-sampled and plain annealed survival estimates agree") {
  const EnvironmentLaw law = preset_law("weakly-subcritical-scalar");
  const TiltedKernel& k = scalar_kernel();
  const int n = 40;

  const SurvivalEstimate naive = annealed_naive(law, n, 200000, 81400);
  const SurvivalEstimate tilted = annealed_tilted(law, k, n, 60000, 81401);
  CHECK(naive.n == n);
  CHECK(tilted.n == n);
  CHECK(naive.method != tilted.method);
  CHECK(tilted.ess > 1000.0);
  // the bare block weight has unit mean under the tilted draw
  CHECK(std::abs(tilted.mean_weight - 1.0) < 3.0 * tilted.mean_weight_se + 0.01);

  for (int i = 0; i < 2; ++i) {
    const double joint = std::sqrt(naive.se[i] * naive.se[i] + tilted.se[i] * tilted.se[i]);
    INFO("type " << i << ": naive " << naive.estimate[i] << " tilted " << tilted.estimate[i]);
    CHECK(std::abs(naive.estimate[i] - tilted.estimate[i]) <=
          4.0 * joint + 0.01 * naive.estimate[i]);
    CHECK(tilted.se[i] < naive.se[i]);  // the whole point of the tilt
  }

  CHECK_THROWS_AS(annealed_naive(law.transposed(), 10, 10, 1), std::invalid_argument);
  CHECK_THROWS_AS(annealed_tilted(law.transposed(), k, 10, 10, 1), std::invalid_argument);
}

TEST_CASE("tilted annealed survival is deterministic and worker-invariant") {
  const EnvironmentLaw law = preset_law("weakly-subcritical-scalar");
  const TiltedKernel& k = scalar_kernel();
  const SurvivalEstimate a = annealed_tilted(law, k, 30, 20000, 81500, 1);
  const SurvivalEstimate b = annealed_tilted(law, k, 30, 20000, 81500, 3);
  const SurvivalEstimate c = annealed_tilted(law, k, 30, 20000, 81500, 3);
  for (int i = 0; i < 2; ++i) {
    CHECK(a.estimate[i] == b.estimate[i]);
    CHECK(b.estimate[i] == c.estimate[i]);
    CHECK(a.se[i] == b.se[i]);
  }
  CHECK(a.ess == b.ess);
  CHECK(a.mean_weight == b.mean_weight);

  const SurvivalEstimate other = annealed_tilted(law, k, 30, 20000, 81501, 1);
  CHECK(other.estimate[0] != a.estimate[0]);
}

TEST_CASE("fused pgf updates match materialized atoms bit for bit") {
  for (const TiltedKernel* kp : {&scalar_kernel(), &jitter_kernel()}) {
    const TiltedKernel& k = *kp;
    RandomStream rng = RandomStream::from_key(81600, "fused");
    ProjectivePoint x = ProjectivePoint::uniform(2, Flavor::Row);
    double v_x = k.v_at(x);
    Vec s = make_s(0.3, 0.6);
    for (int step = 0; step < 200; ++step) {
      const Vec s_in = s;
      EnvironmentAtom atom;
      const StepCore core = sample_step_core(k, x, v_x, rng, &atom, &s);
      const Vec direct = atom.eval_pgf(s_in);
      REQUIRE(s[0] == direct[0]);
      REQUIRE(s[1] == direct[1]);
      x = core.image;
      v_x = core.v_image;
    }
  }
}

TEST_CASE("prefix norms partition the quenched decomposition") {
  const EnvironmentLaw law = preset_law("weakly-subcritical-2type");
  for (int rep = 0; rep < 50; ++rep) {
    const int n = 24;
    const std::vector<EnvironmentAtom> env = sample_env(law, n, 81700 + rep);
    const AbcDecomposition d = abc_decomposition(env, n);
    REQUIRE(d.log_norms.size() == static_cast<std::size_t>(n));
    CHECK(d.part_before + d.part_at + d.part_after ==
          Catch::Approx(d.total).epsilon(1e-12));
    CHECK(d.log_norms[d.argmin] == Catch::Approx(std::log(d.m_n)).margin(1e-12));
    for (double w : d.log_norms) CHECK(w >= d.log_norms[d.argmin]);
    // crossing below -a and the minimum norm dipping under e^{-a} are the
    // same event along any fixed environment
    for (double a : {0.5, 1.0, 2.0})
      CHECK(d.min_norm_event(a) == d.passage_event(a));
  }
}
