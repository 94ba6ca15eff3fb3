#pragma once

// The tilted environment walk and its first-passage machinery.
//
// Given eigen-data (lambda, v) at tilt theta, one step from direction x
// draws an atom M with density proportional to
//     w(x, M) = |x M|^theta v(x . M) / (lambda v(x))
// against the base law, moves to x . M, and adds log |x M| to the additive
// functional S.  At the critical tilt S becomes a centered random walk, so
// rare survival events of the untilted chain become ordinary events here.
//
// Sampling is exact for finite mixtures (the per-step normalizer
// c(x) = E[w(x, M)] is summed over atoms and folded into the likelihood
// ratio) and for scalar laws (c(x) is a constant with a closed form).  For
// continuous matrix laws steps are drawn by rejection, whose acceptance
// already normalizes the density; the residual per-step normalization gap
// |c(x) - 1| is second order in the grid step and can be measured with
// normalization_gap().
//
// Each state carries the accumulated likelihood ratio of the untilted law
// against the sampled law, so E[phi] under the base law equals the sampled
// mean of phi * weight.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

#include "subcrit/environment.hpp"
#include "subcrit/linalg.hpp"
#include "subcrit/parallel.hpp"
#include "subcrit/rng.hpp"
#include "subcrit/spectral.hpp"

namespace subcrit {

inline constexpr double kTwoPi = 6.283185307179586;

// E[c^theta] for the scalar kinds, where c is the law's scale variable.
inline std::optional<double> scale_moment(const EnvironmentLaw& law, double theta) {
  switch (law.kind) {
    case EnvironmentLaw::Kind::ScalarLogUniform:
      if (std::abs(theta) < 1e-14) return 1.0;
      return (std::exp(theta * law.log_hi) - std::exp(theta * law.log_lo)) /
             (theta * (law.log_hi - law.log_lo));
    case EnvironmentLaw::Kind::ScalarLogNormal:
      return std::exp(theta * law.log_mean + 0.5 * theta * theta * law.log_sd * law.log_sd);
    default:
      return std::nullopt;
  }
}

struct TiltedKernel {
  EnvironmentLaw law;
  double theta = 0.0;
  SpectralSolution spectral;
  double accept_bound = 1.0;     // sup of the one-step weight w(x, M)
  double scalar_normalizer = 1.0;  // exact c(x) when it is x-independent
  bool exact_normalizer = false;   // finite law or scalar kind
  double v_sup = 1.0;              // cached max of the eigenfunction table
  double jitter_tilt_bound = 1.0;  // cached exp(|theta| jitter) for the proposal bound

  double v_at(const ProjectivePoint& x) const { return spectral.v_at(x); }
};

inline TiltedKernel make_tilted_kernel(const EnvironmentLaw& law, const SpectralSolution& sol) {
  if (sol.grid.p != law.p) throw std::invalid_argument("solution does not match law");
  TiltedKernel k;
  k.law = law;
  k.theta = sol.theta;
  k.spectral = sol;
  k.accept_bound = std::exp(std::max(0.0, k.theta * law.sup_log_row_norm())) * sol.v_max() /
                   (sol.lambda * sol.v_min());
  k.v_sup = sol.v_max();
  k.jitter_tilt_bound = std::exp(std::abs(k.theta) * law.jitter);
  if (law.is_finite()) {
    k.exact_normalizer = true;  // normalizer summed per step over atoms
  } else if (auto m = scale_moment(law, k.theta)) {
    // scalar law: |x M| = c for every direction, v is constant on the grid,
    // so c(x) = E[c^theta] / lambda exactly
    k.scalar_normalizer = *m / sol.lambda;
    k.exact_normalizer = true;
  }
  return k;
}

// Exact draw of l = log c from the theta-tilted scale marginal (density
// proportional to e^{theta l} against the base law of the scale part).
inline double sample_tilted_log_scale(const EnvironmentLaw& law, double theta, RandomStream& rng) {
  switch (law.kind) {
    case EnvironmentLaw::Kind::ScalarLogUniform:
    case EnvironmentLaw::Kind::GeometricJitter: {
      const double span = law.log_hi - law.log_lo;
      if (std::abs(theta) < 1e-14) return law.log_lo + rng.next_double() * span;
      return law.log_lo + std::log1p(rng.next_double() * std::expm1(theta * span)) / theta;
    }
    case EnvironmentLaw::Kind::ScalarLogNormal:
      return law.log_mean + theta * law.log_sd * law.log_sd + law.log_sd * rng.normal();
    case EnvironmentLaw::Kind::FiniteMixture:
      break;
  }
  throw std::invalid_argument("tilted scale draw requires a continuous law");
}

// One sampled step of the tilted kernel from direction x.
struct StepDraw {
  EnvironmentAtom atom;
  ProjectivePoint image;
  double increment = 0.0;     // log |x M|
  double weight_factor = 0.0; // one-step likelihood ratio d(base)/d(sampled)
  double v_image = 0.0;
  int proposals = 1;
};

// Step payload without the environment part; callers that also need the
// sampled atom pass a slot, which is filled in place so tight loops never
// copy whole atoms around.
struct StepCore {
  ProjectivePoint image;
  double increment = 0.0;      // log |x M|
  double weight_factor = 0.0;  // one-step likelihood ratio d(base)/d(sampled)
  double v_image = 0.0;
  int proposals = 1;
};

// `pgf_io`, when set, is advanced through the sampled atom's generating
// function in place (g <- f(g)), with arithmetic identical to
// EnvironmentAtom::eval_pgf on the materialized atom; survival loops use it
// to fold the extinction iterate without building atoms at all.
inline StepCore sample_step_core(const TiltedKernel& k, const ProjectivePoint& x, double v_x,
                                 RandomStream& rng, EnvironmentAtom* atom_out,
                                 Vec* pgf_io = nullptr) {
  StepCore d;
  if (k.law.is_finite()) {
    constexpr int kMaxAtoms = 64;
    const int n = static_cast<int>(k.law.atoms.size());
    if (n > kMaxAtoms) throw std::invalid_argument("finite tilted sampling limited to 64 atoms");
    std::array<ProjectiveStep, kMaxAtoms> steps;
    std::array<double, kMaxAtoms> vals;
    std::array<double, kMaxAtoms> w;
    double c = 0.0;
    for (int a = 0; a < n; ++a) {
      steps[a] = project_act(x, k.law.atoms[a].mean.base);
      vals[a] = k.spectral.v_at(steps[a].image);
      w[a] = k.law.weights[a] * std::exp(k.theta * steps[a].log_norm) * vals[a] /
             (k.spectral.lambda * v_x);
      c += w[a];
    }
    const double u = rng.next_double() * c;
    double acc = 0.0;
    int pick = n - 1;
    for (int a = 0; a < n; ++a) {
      acc += w[a];
      if (u < acc) {
        pick = a;
        break;
      }
    }
    if (atom_out) *atom_out = k.law.atoms[pick];
    if (pgf_io) *pgf_io = k.law.atoms[pick].eval_pgf(*pgf_io);
    d.image = steps[pick].image;
    d.increment = steps[pick].log_norm;
    d.v_image = vals[pick];
    // base/sampled: mu_a / (w_a / c) with w_a = mu_a * (one-step weight)
    d.weight_factor = c * k.law.weights[pick] / w[pick];
    return d;
  }
  // Continuous laws factor as M = (c/p) J with log c carrying the whole
  // scale: c is drawn exactly from its tilted marginal by inversion, and
  // only the direction-dependent jitter residual needs rejection, against
  // a bound that stays close to one.  The accepted pair has density
  // w(x, M) mu(dM) -- the same law a global rejection sampler would give --
  // so the weight bookkeeping downstream is unchanged.
  const int p = k.law.p;
  if (k.law.kind == EnvironmentLaw::Kind::GeometricJitter) {
    const double log_c = sample_tilted_log_scale(k.law, k.theta, rng);
    const double bound_j = k.jitter_tilt_bound * k.v_sup / (k.spectral.lambda * v_x);
    PositiveMatrix m(p);
    for (int trial = 1;; ++trial) {
      // entries are iid, so the acting orientation can be filled directly
      for (int i = 0; i < p; ++i)
        for (int j = 0; j < p; ++j)
          m(i, j) = std::exp(rng.uniform(-k.law.jitter, k.law.jitter)) / p;
      const ProjectiveStep st = project_act(x, m);
      const double v_img = k.spectral.v_at(st.image);
      const double g = std::exp(k.theta * st.log_norm) * v_img / (k.spectral.lambda * v_x);
      if (rng.next_double() * bound_j <= g) {
        if (atom_out || pgf_io) {
          const double c = std::exp(log_c);
          for (int i = 0; i < p; ++i)
            for (int j = 0; j < p; ++j) m(i, j) *= c;
          if (atom_out) fill_geometric_atom(*atom_out, p, m, k.law.bound);
          if (pgf_io) {
            Vec next(p);
            for (int i = 0; i < p; ++i) {
              double f = 1.0;
              for (int j = 0; j < p; ++j) f /= 1.0 + m(i, j) * (1.0 - (*pgf_io)[j]);
              next[i] = f;
            }
            *pgf_io = next;
          }
        }
        d.image = st.image;
        d.increment = log_c + st.log_norm;
        d.v_image = v_img;
        // likelihood ratio mu/sampled = 1 / w(x, M)
        d.weight_factor = 1.0 / (std::exp(k.theta * log_c) * g);
        d.proposals = trial;
        return d;
      }
      if (trial > 1'000'000) throw std::runtime_error("rejection sampler stalled");
    }
  }
  // scalar kinds: the one-step weight depends on M only through c and the
  // direction jumps straight to the barycenter, so the draw is exact with
  // no rejection; the matrix is symmetric, so transposition is moot
  const double log_c = sample_tilted_log_scale(k.law, k.theta, rng);
  const double c = std::exp(log_c);
  PositiveMatrix m(p);
  for (int i = 0; i < p; ++i)
    for (int j = 0; j < p; ++j) m(i, j) = c / p;
  if (atom_out) fill_scalar_scaled_atom(*atom_out, p, c, k.law.bound);
  if (pgf_io) {
    const double m0 = c / p;
    double f = 1.0;
    for (int j = 0; j < p; ++j) f /= 1.0 + m0 * (1.0 - (*pgf_io)[j]);
    for (int j = 0; j < p; ++j) (*pgf_io)[j] = f;
  }
  const ProjectiveStep st = project_act(x, m);
  d.image = st.image;
  d.increment = st.log_norm;
  d.v_image = k.spectral.v_at(st.image);
  // likelihood ratio of the exact draw: E[c^theta] e^{-theta log c}
  d.weight_factor = k.scalar_normalizer * k.spectral.lambda * std::exp(-k.theta * st.log_norm);
  return d;
}

inline StepDraw sample_step(const TiltedKernel& k, const ProjectivePoint& x, double v_x,
                            RandomStream& rng) {
  StepDraw d;
  const StepCore core = sample_step_core(k, x, v_x, rng, &d.atom);
  d.image = core.image;
  d.increment = core.increment;
  d.weight_factor = core.weight_factor;
  d.v_image = core.v_image;
  d.proposals = core.proposals;
  return d;
}

// Walk state: direction, additive functional, step count, accumulated
// likelihood ratio of the untilted law, and the survival flag
// alive = (min_{1<=k<=n} S_k > 0).
struct WalkState {
  ProjectivePoint x;
  double s = 0.0;
  int n = 0;
  double weight = 1.0;
  bool alive = true;
  double v_x = -1.0;  // cached v(x); refreshed by the step functions
};

inline WalkState make_walk_state(const TiltedKernel& k, const ProjectivePoint& x, double a) {
  if (a < 0.0) throw std::invalid_argument("start offset must be nonnegative");
  WalkState st;
  st.x = x;
  st.s = a;
  st.v_x = k.v_at(x);
  return st;
}

inline void step_tilted(const TiltedKernel& k, WalkState& st, RandomStream& rng,
                        StepDraw* draw_out = nullptr) {
  const StepCore core =
      sample_step_core(k, st.x, st.v_x, rng, draw_out ? &draw_out->atom : nullptr);
  if (draw_out) {
    draw_out->image = core.image;
    draw_out->increment = core.increment;
    draw_out->weight_factor = core.weight_factor;
    draw_out->v_image = core.v_image;
    draw_out->proposals = core.proposals;
  }
  st.x = core.image;
  st.v_x = core.v_image;
  st.s += core.increment;
  st.n += 1;
  st.weight *= core.weight_factor;
  if (st.s <= 0.0) st.alive = false;
}

// tau = min{n >= 1 : S_n <= 0}, censored at n_max.
struct FirstPassage {
  std::optional<int> tau;
  double s_final = 0.0;
  double min_s = 0.0;
};

inline FirstPassage first_passage(const TiltedKernel& k, const ProjectivePoint& x, double a,
                                  int n_max, RandomStream& rng) {
  WalkState st = make_walk_state(k, x, a);
  FirstPassage fp;
  fp.min_s = a;
  while (st.n < n_max) {
    step_tilted(k, st, rng);
    fp.min_s = std::min(fp.min_s, st.s);
    if (!st.alive) {
      fp.tau = st.n;
      break;
    }
  }
  fp.s_final = st.s;
  return fp;
}

// ---------------------------------------------------------------------------
// Harmonic function estimation: h(x, a) = lim_n E[S_n; tau > n] under the
// tilted kernel.  The estimator reports the functional at the horizon and
// at half the horizon; their gap is the convergence diagnostic.

struct HarmonicEstimate {
  double value = 0.0;
  double se = 0.0;
  double value_half = 0.0;
  double se_half = 0.0;
  int horizon = 0;
  std::uint64_t reps = 0;

  double convergence_gap() const {
    return std::abs(value - value_half) / std::max(1e-12, value);
  }
};

inline HarmonicEstimate estimate_harmonic(const TiltedKernel& k, const ProjectivePoint& x,
                                          double a, int horizon, std::uint64_t reps,
                                          std::uint64_t seed, int workers = 0) {
  const int half = horizon / 2;
  struct Acc {
    double s1 = 0, q1 = 0, sh = 0, qh = 0;
    std::uint64_t n = 0;
  };
  Acc t = replica_reduce(
      reps, workers, Acc{},
      [&](Acc& acc, std::uint64_t r) {
        RandomStream rng = RandomStream::from_key(seed, "harmonic", r);
        WalkState st = make_walk_state(k, x, a);
        while (st.alive && st.n < horizon) {
          step_tilted(k, st, rng);
          if (st.alive && st.n == half) {
            acc.sh += st.s;
            acc.qh += st.s * st.s;
          }
        }
        if (st.alive) {
          acc.s1 += st.s;
          acc.q1 += st.s * st.s;
        }
        acc.n += 1;
      },
      [](Acc& a_, const Acc& b) {
        a_.s1 += b.s1;
        a_.q1 += b.q1;
        a_.sh += b.sh;
        a_.qh += b.qh;
        a_.n += b.n;
      });
  HarmonicEstimate e;
  e.horizon = horizon;
  e.reps = t.n;
  const MeanSE m1 = mean_se(t.s1, t.q1, t.n);
  const MeanSE mh = mean_se(t.sh, t.qh, t.n);
  e.value = m1.mean;
  e.se = m1.se;
  e.value_half = mh.mean;
  e.se_half = mh.se;
  return e;
}

// Tabulated h over a coarse direction grid and a list of offsets, with
// barycentric interpolation in x and piecewise-linear interpolation (linear
// extrapolation) in a.
struct HarmonicTable {
  SpectralGrid grid;          // coarse direction grid
  std::vector<double> as;     // increasing offsets
  std::vector<double> h;      // grid.size() x as.size(), node-major
  std::vector<double> se;
  int horizon = 0;
  std::uint64_t reps = 0;

  double at_node(int node, double a) const {
    const int na = static_cast<int>(as.size());
    const double* row = h.data() + static_cast<std::size_t>(node) * na;
    if (na == 1) return row[0];
    int j = 0;
    while (j + 2 < na && as[j + 1] < a) ++j;
    const double t = (a - as[j]) / (as[j + 1] - as[j]);
    const double val = row[j] + t * (row[j + 1] - row[j]);
    return std::max(val, 1e-12);
  }

  double at(const ProjectivePoint& x, double a) const {
    const SpectralGrid::Interp in = grid.locate(x);
    double s = 0.0;
    for (int k = 0; k < in.count; ++k) s += in.w[k] * at_node(in.idx[k], a);
    return std::max(s, 1e-12);
  }
};

inline HarmonicTable build_harmonic_table(const TiltedKernel& k, int coarse_resolution,
                                          std::span<const double> as, int horizon,
                                          std::uint64_t reps_per_node, std::uint64_t seed,
                                          int workers = 0) {
  HarmonicTable tab;
  tab.grid = SpectralGrid::regular(k.law.p, coarse_resolution, k.spectral.grid.margin);
  tab.as.assign(as.begin(), as.end());
  tab.horizon = horizon;
  tab.reps = reps_per_node;
  const int nn = tab.grid.size();
  const int na = static_cast<int>(as.size());
  tab.h.assign(static_cast<std::size_t>(nn) * na, 0.0);
  tab.se.assign(static_cast<std::size_t>(nn) * na, 0.0);
  for (int i = 0; i < nn; ++i)
    for (int j = 0; j < na; ++j) {
      const HarmonicEstimate e =
          estimate_harmonic(k, tab.grid.nodes[i], as[j], horizon, reps_per_node,
                            mix64(seed ^ (static_cast<std::uint64_t>(i) * 131 + j)), workers);
      tab.h[static_cast<std::size_t>(i) * na + j] = std::max(e.value, 1e-12);
      tab.se[static_cast<std::size_t>(i) * na + j] = e.se;
    }
  return tab;
}

// One step of the h-transformed (conditioned-to-survive) walk, realized by
// weighting: the state advances under the tilted kernel and the weight picks
// up h(X_1, S_1) 1{alive} / h(X_0, S_0) instead of the tilt ratio.
inline void doob_step(const TiltedKernel& k, const HarmonicTable& tab, WalkState& st,
                      RandomStream& rng) {
  const double h0 = tab.at(st.x, st.s);
  if (!(h0 > 0.0)) throw std::runtime_error("harmonic table returned a nonpositive value");
  const double w0 = st.weight;
  step_tilted(k, st, rng);
  st.weight = st.alive ? w0 * tab.at(st.x, st.s) / h0 : 0.0;
}

// ---------------------------------------------------------------------------
// Tail of the first-passage time: P(tau > n) at several n, with the
// compensated sequence sqrt(2 pi n) P(tau > n) that should approach h.

struct TailRow {
  int n = 0;
  double prob = 0.0;
  double se = 0.0;
  double compensated = 0.0;  // sqrt(2 pi n) * prob
};

inline std::vector<TailRow> survival_tail(const TiltedKernel& k, const ProjectivePoint& x,
                                          double a, std::span<const int> ns, std::uint64_t reps,
                                          std::uint64_t seed, int workers = 0) {
  std::vector<int> sorted(ns.begin(), ns.end());
  std::sort(sorted.begin(), sorted.end());
  const int n_max = sorted.back();
  struct Acc {
    std::array<std::uint64_t, 16> alive{};
    std::uint64_t n = 0;
  };
  if (sorted.size() > 16) throw std::invalid_argument("too many checkpoints");
  Acc t = replica_reduce(
      reps, workers, Acc{},
      [&](Acc& acc, std::uint64_t r) {
        RandomStream rng = RandomStream::from_key(seed, "tail", r);
        WalkState st = make_walk_state(k, x, a);
        std::size_t next = 0;
        while (st.alive && st.n < n_max) {
          step_tilted(k, st, rng);
          while (next < sorted.size() && st.alive && st.n == sorted[next]) {
            acc.alive[next] += 1;
            ++next;
          }
        }
        acc.n += 1;
      },
      [](Acc& a_, const Acc& b) {
        for (std::size_t i = 0; i < a_.alive.size(); ++i) a_.alive[i] += b.alive[i];
        a_.n += b.n;
      });
  std::vector<TailRow> rows;
  for (std::size_t i = 0; i < sorted.size(); ++i) {
    TailRow row;
    row.n = sorted[i];
    row.prob = static_cast<double>(t.alive[i]) / static_cast<double>(t.n);
    row.se = std::sqrt(std::max(row.prob * (1.0 - row.prob), 1e-300) / static_cast<double>(t.n));
    row.compensated = std::sqrt(kTwoPi * row.n) * row.prob;
    rows.push_back(row);
  }
  return rows;
}

// ---------------------------------------------------------------------------
// Local shape of (tau > n, S_n): histogram of S_n on survival against the
// Rayleigh profile, plus the Kolmogorov-Smirnov distance of the normalized
// sample t = S_n / (sigma sqrt n) from CDF 1 - exp(-t^2/2).

struct LocalLimitRow {
  double b = 0.0;        // bin lower edge
  double scaled = 0.0;   // n * P(tau > n, S_n in [b, b+ell))
  double se = 0.0;
  double reference = 0.0;  // (2 ell h / sqrt(2 pi sigma^2)) phi_plus(b / (sigma sqrt n))
};

struct LocalLimitReport {
  int n = 0;
  double ell = 0.0;
  double sigma = 0.0;
  std::uint64_t reps = 0;
  std::uint64_t alive = 0;
  double ks = 0.0;
  std::vector<LocalLimitRow> rows;
};

inline LocalLimitReport local_limit(const TiltedKernel& k, const ProjectivePoint& x, double a,
                                    int n, double ell, double sigma, double h_value,
                                    std::uint64_t reps, std::uint64_t seed, int workers = 0) {
  struct Acc {
    std::vector<double> s;
    std::uint64_t n = 0;
  };
  Acc t = replica_reduce(
      reps, workers, Acc{},
      [&](Acc& acc, std::uint64_t r) {
        RandomStream rng = RandomStream::from_key(seed, "local-limit", r);
        WalkState st = make_walk_state(k, x, a);
        while (st.alive && st.n < n) step_tilted(k, st, rng);
        if (st.alive) acc.s.push_back(st.s);
        acc.n += 1;
      },
      [](Acc& a_, const Acc& b) {
        a_.s.insert(a_.s.end(), b.s.begin(), b.s.end());
        a_.n += b.n;
      });

  LocalLimitReport rep;
  rep.n = n;
  rep.ell = ell;
  rep.sigma = sigma;
  rep.reps = t.n;
  rep.alive = t.s.size();

  const double scale = sigma * std::sqrt(static_cast<double>(n));
  std::sort(t.s.begin(), t.s.end());
  // KS distance of t = S/scale against 1 - exp(-t^2/2)
  const std::size_t m = t.s.size();
  double ks = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    const double u = t.s[i] / scale;
    const double F = 1.0 - std::exp(-0.5 * u * u);
    ks = std::max(ks, std::abs(static_cast<double>(i + 1) / m - F));
    ks = std::max(ks, std::abs(static_cast<double>(i) / m - F));
  }
  rep.ks = ks;

  const int n_bins = m ? static_cast<int>(t.s.back() / ell) + 1 : 0;
  std::vector<std::uint64_t> counts(n_bins, 0);
  for (double s : t.s) counts[static_cast<std::size_t>(s / ell)] += 1;
  for (int bin = 0; bin < n_bins; ++bin) {
    LocalLimitRow row;
    row.b = bin * ell;
    const double p = static_cast<double>(counts[bin]) / static_cast<double>(t.n);
    row.scaled = n * p;
    row.se = n * std::sqrt(std::max(p * (1.0 - p), 1e-300) / static_cast<double>(t.n));
    const double u = (row.b + 0.5 * ell) / scale;
    row.reference = (2.0 * ell * h_value / std::sqrt(kTwoPi * sigma * sigma)) * u *
                    std::exp(-0.5 * u * u);
    rep.rows.push_back(row);
  }
  return rep;
}

// sqrt(Var(S_n)/n) of the unkilled tilted walk at horizons n and 2n.
struct SigmaEstimate {
  double sigma = 0.0;       // at horizon n
  double sigma_double = 0.0;  // at horizon 2n
  int horizon = 0;
  std::uint64_t reps = 0;

  double agreement_gap() const {
    return std::abs(sigma - sigma_double) / std::max(sigma, 1e-12);
  }
};

inline SigmaEstimate sigma_estimate(const TiltedKernel& k, int n, std::uint64_t reps,
                                    std::uint64_t seed, int workers = 0) {
  struct Acc {
    double s1 = 0, q1 = 0, s2 = 0, q2 = 0;
    std::uint64_t n = 0;
  };
  const ProjectivePoint x0 = ProjectivePoint::uniform(k.law.p, Flavor::Row);
  Acc t = replica_reduce(
      reps, workers, Acc{},
      [&](Acc& acc, std::uint64_t r) {
        RandomStream rng = RandomStream::from_key(seed, "sigma", r);
        WalkState st = make_walk_state(k, x0, 0.0);
        st.alive = true;
        for (int i = 0; i < 2 * n; ++i) {
          const StepDraw d = sample_step(k, st.x, st.v_x, rng);
          st.x = d.image;
          st.v_x = d.v_image;
          st.s += d.increment;
          if (i + 1 == n) {
            acc.s1 += st.s;
            acc.q1 += st.s * st.s;
          }
        }
        acc.s2 += st.s;
        acc.q2 += st.s * st.s;
        acc.n += 1;
      },
      [](Acc& a_, const Acc& b) {
        a_.s1 += b.s1;
        a_.q1 += b.q1;
        a_.s2 += b.s2;
        a_.q2 += b.q2;
        a_.n += b.n;
      });
  SigmaEstimate e;
  e.horizon = n;
  e.reps = t.n;
  const double m1 = t.s1 / t.n, m2 = t.s2 / t.n;
  e.sigma = std::sqrt(std::max(0.0, (t.q1 / t.n - m1 * m1) / n));
  e.sigma_double = std::sqrt(std::max(0.0, (t.q2 / t.n - m2 * m2) / (2.0 * n)));
  return e;
}

// ---------------------------------------------------------------------------
// Duality between the forward walk and the reversed walk built on the
// transposed law: the reversed functional starts at b and subtracts the
// log-norms of the transposed chain.  check_reversal estimates
//   lhs  = P(tau_{x,a} > n, S_n in [b, b+ell])
//   rhs+ = P(tau~_{y,b+ell+window} > n, S~_n in [a, a+ell+2 window])
//   rhs- = P(tau~_{y,b-window} > n, S~_n in [a-ell, a-2 window])
// and flags violations of lhs <= rhs+ (always) and lhs >= rhs- (valid when
// a >= ell > 2 window and b >= window).

struct ReversalReport {
  double lhs = 0.0, lhs_se = 0.0;
  double rhs_upper = 0.0, rhs_upper_se = 0.0;
  double rhs_lower = 0.0, rhs_lower_se = 0.0;
  bool lower_applicable = false;
  std::uint64_t reps = 0;

  // violation = CI-separated failure of the inequality (3 sigma)
  bool upper_ok() const {
    return lhs <= rhs_upper + 3.0 * std::sqrt(lhs_se * lhs_se + rhs_upper_se * rhs_upper_se);
  }
  bool lower_ok() const {
    if (!lower_applicable) return true;
    return lhs >= rhs_lower - 3.0 * std::sqrt(lhs_se * lhs_se + rhs_lower_se * rhs_lower_se);
  }
};

namespace detail {

// Forward walk event frequency under iid (untilted) sampling.
inline MeanSE forward_event_untilted(const EnvironmentLaw& law, const ProjectivePoint& x,
                                     double a, double b, double ell, int n, std::uint64_t reps,
                                     std::uint64_t seed, int workers) {
  struct Acc {
    std::uint64_t hit = 0, n = 0;
  };
  Acc t = replica_reduce(
      reps, workers, Acc{},
      [&](Acc& acc, std::uint64_t r) {
        RandomStream rng = RandomStream::from_key(seed, "rev-fwd", r);
        ProjectivePoint cur = x;
        double s = a;
        bool alive = true;
        for (int k = 0; k < n && alive; ++k) {
          const EnvironmentAtom atom = law.sample_atom(rng);
          const ProjectiveStep st = project_act(cur, atom.mean.base);
          cur = st.image;
          s += st.log_norm;
          if (s <= 0.0) alive = false;
        }
        if (alive && s >= b && s <= b + ell) acc.hit += 1;
        acc.n += 1;
      },
      [](Acc& a_, const Acc& b_) {
        a_.hit += b_.hit;
        a_.n += b_.n;
      });
  MeanSE out;
  out.mean = static_cast<double>(t.hit) / t.n;
  out.se = std::sqrt(std::max(out.mean * (1.0 - out.mean), 1e-300) / t.n);
  return out;
}

// Reversed walk event frequency: S~ starts at b0 and subtracts increments of
// the transposed chain started from y; the event is tau~ > n and
// S~_n in [lo, hi].
inline MeanSE reversed_event_untilted(const EnvironmentLaw& transposed_law,
                                      const ProjectivePoint& y, double b0, double lo, double hi,
                                      int n, std::uint64_t reps, std::uint64_t seed, int workers) {
  struct Acc {
    std::uint64_t hit = 0, n = 0;
  };
  Acc t = replica_reduce(
      reps, workers, Acc{},
      [&](Acc& acc, std::uint64_t r) {
        RandomStream rng = RandomStream::from_key(seed, "rev-bwd", r);
        ProjectivePoint cur = y;
        double s = b0;
        bool alive = true;
        for (int k = 0; k < n && alive; ++k) {
          const EnvironmentAtom atom = transposed_law.sample_atom(rng);
          const ProjectiveStep st = project_act(cur, atom.mean.base);
          cur = st.image;
          s -= st.log_norm;
          if (s <= 0.0) alive = false;
        }
        if (alive && s >= lo && s <= hi) acc.hit += 1;
        acc.n += 1;
      },
      [](Acc& a_, const Acc& b_) {
        a_.hit += b_.hit;
        a_.n += b_.n;
      });
  MeanSE out;
  out.mean = static_cast<double>(t.hit) / t.n;
  out.se = std::sqrt(std::max(out.mean * (1.0 - out.mean), 1e-300) / t.n);
  return out;
}

}  // namespace detail

inline ReversalReport check_reversal(const EnvironmentLaw& law, const ProjectivePoint& x,
                                     double a, const ProjectivePoint& y, double b, double ell,
                                     int n, double window, std::uint64_t reps, std::uint64_t seed,
                                     int workers = 0) {
  if (!(ell > 0.0) || !(window > 0.0)) throw std::invalid_argument("ell and window must be positive");
  const EnvironmentLaw tlaw = law.transposed();
  ReversalReport rep;
  rep.reps = reps;
  const MeanSE lhs = detail::forward_event_untilted(law, x, a, b, ell, n, reps, seed, workers);
  rep.lhs = lhs.mean;
  rep.lhs_se = lhs.se;
  const MeanSE up = detail::reversed_event_untilted(tlaw, y, b + ell + window, a, a + ell + 2.0 * window,
                                                    n, reps, seed + 1, workers);
  rep.rhs_upper = up.mean;
  rep.rhs_upper_se = up.se;
  rep.lower_applicable = (a >= ell && ell > 2.0 * window && b >= window);
  if (rep.lower_applicable) {
    const MeanSE lo = detail::reversed_event_untilted(tlaw, y, b - window, a - ell, a - 2.0 * window,
                                                      n, reps, seed + 2, workers);
    rep.rhs_lower = lo.mean;
    rep.rhs_lower_se = lo.se;
  }
  return rep;
}

// Measures the residual per-step normalization gap sup_x |c(x) - 1| of the
// rejection sampler at `probes` random interior directions.  For exactly
// normalized kernels the gap is the quadrature/eigen residual only.
inline double normalization_gap(const TiltedKernel& k, int probes, int mc_reps,
                                std::uint64_t seed) {
  RandomStream rng = RandomStream::from_key(seed, "norm-gap");
  double worst = 0.0;
  const int p = k.law.p;
  for (int t = 0; t < probes; ++t) {
    // uniform direction via sorted-uniform spacings, pulled inside the hull
    std::array<double, kMaxTypes + 1> cuts{};
    cuts[0] = 0.0;
    cuts[p] = 1.0;
    for (int i = 1; i < p; ++i) cuts[i] = rng.next_double();
    std::sort(cuts.begin() + 1, cuts.begin() + p);
    std::array<double, kMaxTypes> coords{};
    const double margin = k.spectral.grid.margin;
    for (int i = 0; i < p; ++i)
      coords[i] = margin + (1.0 - p * margin) * (cuts[i + 1] - cuts[i]);
    const ProjectivePoint x =
        ProjectivePoint::from_coords(std::span<const double>(coords.data(), p), Flavor::Row);
    const double v_x = k.v_at(x);

    double c = 0.0;
    if (k.law.is_finite()) {
      for (std::size_t a = 0; a < k.law.atoms.size(); ++a) {
        const ProjectiveStep st = project_act(x, k.law.atoms[a].mean.base);
        c += k.law.weights[a] * std::exp(k.theta * st.log_norm) * k.spectral.v_at(st.image) /
             (k.spectral.lambda * v_x);
      }
    } else {
      RandomStream inner = RandomStream::from_key(seed, "norm-gap-mc", t);
      double acc = 0.0;
      for (int r = 0; r < mc_reps; ++r) {
        const EnvironmentAtom atom = k.law.sample_atom(inner);
        const ProjectiveStep st = project_act(x, atom.mean.base);
        acc += std::exp(k.theta * st.log_norm) * k.spectral.v_at(st.image) /
               (k.spectral.lambda * v_x);
      }
      c = acc / mc_reps;
    }
    worst = std::max(worst, std::abs(c - 1.0));
  }
  return worst;
}

}  // namespace subcrit
