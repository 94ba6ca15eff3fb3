#pragma once

// Branching process driven by an environment sequence: quenched survival by
// backward pgf composition, forward population simulation, the psi
// expansion of 1/(1 - F(s)), and annealed survival estimators (direct and
// via the critically tilted environment chain).

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
#include "subcrit/tilted_walk.hpp"

namespace subcrit {

// Backward pgf composition: s_n = 0, s_k = f_k(s_{k+1}); the quenched
// survival probability at generation n of an ancestor of type i is
// 1 - s_0[i].  States s_n .. s_0 are recorded for reuse.
struct QuenchedPath {
  std::vector<Vec> backward;  // backward[k] = F_{k,n-1}(0), k = n down to 0
  Vec q;                      // per-type survival probability

  // F_{k,n-1}(0), the composition of atoms k..n-1 applied to 0.
  const Vec& from(int k) const { return backward[backward.size() - 1 - k]; }
};

inline QuenchedPath quenched_path(std::span<const EnvironmentAtom> env, int n,
                                  const Vec* terminal = nullptr) {
  if (n < 0 || n > static_cast<int>(env.size()))
    throw std::invalid_argument("horizon exceeds environment length");
  const int p = env.empty() ? 2 : env[0].p;
  QuenchedPath path;
  path.backward.reserve(n + 1);
  Vec s = terminal ? *terminal : Vec(p, 0.0);
  path.backward.push_back(s);
  for (int k = n - 1; k >= 0; --k) {
    s = env[k].eval_pgf(s);
    path.backward.push_back(s);
  }
  path.q = Vec(s.p);
  for (int i = 0; i < s.p; ++i) path.q[i] = 1.0 - s[i];
  return path;
}

inline Vec quenched_survival(std::span<const EnvironmentAtom> env, int n) {
  if (n < 1) throw std::invalid_argument("horizon must be >= 1");
  const int p = env[0].p;
  Vec s(p, 0.0);
  for (int k = n - 1; k >= 0; --k) s = env[k].eval_pgf(s);
  Vec q(p);
  for (int i = 0; i < p; ++i) q[i] = 1.0 - s[i];
  return q;
}

// Forward simulation of the population vector.  Offspring are sampled
// individual by individual; when the total population exceeds `cap`, the
// path is marked capped and sampling stops (a capped path counts as
// surviving, its counts are no longer meaningful).
struct ForwardResult {
  std::vector<std::array<std::int64_t, kMaxTypes>> trajectory;  // Z_0 .. Z_n
  bool capped = false;

  bool alive_at(int n) const {
    if (capped && n >= static_cast<int>(trajectory.size()) - 1) return true;
    const auto& z = trajectory[std::min<std::size_t>(n, trajectory.size() - 1)];
    for (std::int64_t c : z)
      if (c > 0) return true;
    return false;
  }
};

inline ForwardResult forward_simulate(std::span<const EnvironmentAtom> env,
                                      std::span<const std::int64_t> z0, int n, RandomStream& rng,
                                      std::int64_t cap = 1'000'000) {
  if (n > static_cast<int>(env.size())) throw std::invalid_argument("environment too short");
  const int p = env[0].p;
  ForwardResult res;
  std::array<std::int64_t, kMaxTypes> z{};
  for (int i = 0; i < p; ++i) z[i] = z0[i];
  res.trajectory.push_back(z);
  std::array<int, kMaxTypes> kids{};
  for (int g = 0; g < n; ++g) {
    std::array<std::int64_t, kMaxTypes> next{};
    std::int64_t total = 0;
    for (int i = 0; i < p && !res.capped; ++i) {
      for (std::int64_t c = 0; c < z[i]; ++c) {
        env[g].laws[i].sample(rng, kids);
        for (int j = 0; j < p; ++j) {
          next[j] += kids[j];
          total += kids[j];
        }
        if (total > cap) {
          res.capped = true;
          break;
        }
      }
    }
    z = next;
    res.trajectory.push_back(z);
    if (res.capped) break;
    bool any = false;
    for (int i = 0; i < p; ++i) any = any || z[i] > 0;
    if (!any) {
      // extinct; remaining generations stay at zero
      for (int g2 = g + 1; g2 < n; ++g2) res.trajectory.push_back(z);
      break;
    }
  }
  return res;
}

// ---------------------------------------------------------------------------
// The psi functional and the exact expansion of 1/(1 - F(s)).
//
// For an atom with pgf f and mean matrix M, and a nonnegative row vector r
// (the ancestor functional; scale-invariant),
//     psi_{f,r}(s) = |r| / (r . (1 - f(s)))  -  |r| / (r M (1 - s)).
// With r_k = e_i M_0 ... M_{k-1} (tracked as a renormalized direction plus
// log scale) the expansion reads
//     1 / (1 - F^{(i)}_{0,n-1}(s))
//       = 1 / (e_i M_{0,n-1} (1 - s))
//         + sum_{k=0}^{n-1} (1 / |r_k|) psi_{f_k, r_k}(F_{k+1,n-1}(s)),
// an exact identity for every environment sequence and every s in [0,1)^p.

inline double psi(const EnvironmentAtom& atom, std::span<const double> r, const Vec& s) {
  const int p = atom.p;
  if (static_cast<int>(r.size()) != p || s.p != p) throw std::invalid_argument("dimension mismatch");
  for (int j = 0; j < p; ++j)
    if (!(s[j] >= 0.0 && s[j] < 1.0)) throw std::domain_error("psi needs s in [0,1)^p");
  const Vec f = atom.eval_pgf(s);
  double norm_r = 0.0, r_one_minus_f = 0.0;
  for (int i = 0; i < p; ++i) {
    norm_r += r[i];
    r_one_minus_f += r[i] * (1.0 - f[i]);
  }
  // r M (1 - s)
  double r_m_one_minus_s = 0.0;
  for (int j = 0; j < p; ++j) {
    double col = 0.0;
    for (int i = 0; i < p; ++i) col += r[i] * atom.mean.base(i, j);
    r_m_one_minus_s += col * (1.0 - s[j]);
  }
  if (!(r_one_minus_f > 0.0) || !(r_m_one_minus_s > 0.0))
    throw std::domain_error("psi denominators must be positive");
  return norm_r / r_one_minus_f - norm_r / r_m_one_minus_s;
}

// Both sides of the expansion evaluated independently.
struct TelescopingCheck {
  double lhs = 0.0;       // 1 / (1 - F^{(i)}(s))
  double rhs = 0.0;       // head term + sum of psi terms
  double residual = 0.0;  // |lhs - rhs|
  std::vector<double> terms;  // psi contributions, k = 0 .. n-1
  double head = 0.0;          // 1 / (e_i M_{0,n-1} (1-s))
};

inline TelescopingCheck telescoping_check(std::span<const EnvironmentAtom> env, int n, int type_i,
                                          const Vec& s) {
  const int p = env[0].p;
  if (type_i < 0 || type_i >= p) throw std::invalid_argument("bad ancestor type");
  for (int j = 0; j < p; ++j)
    if (!(s[j] >= 0.0 && s[j] < 1.0)) throw std::domain_error("s must lie in [0,1)^p");

  TelescopingCheck out;

  // backward compositions F_{k,n-1}(s), k = n down to 0
  QuenchedPath back = quenched_path(env.subspan(0, n), n, &s);
  const Vec F0 = back.from(0);
  out.lhs = 1.0 / (1.0 - F0[type_i]);

  // forward row functionals r_k = e_i M_0 .. M_{k-1}, renormalized
  std::array<double, kMaxTypes> r{};
  r[type_i] = 1.0;
  double log_scale = 0.0;
  for (int k = 0; k < n; ++k) {
    const double term =
        std::exp(-log_scale) * psi(env[k], std::span<const double>(r.data(), p), back.from(k + 1));
    out.terms.push_back(term);
    out.rhs += term;
    // advance r through M_k
    std::array<double, kMaxTypes> nr{};
    double norm = 0.0;
    for (int j = 0; j < p; ++j) {
      double acc = 0.0;
      for (int i = 0; i < p; ++i) acc += r[i] * env[k].mean.base(i, j);
      nr[j] = acc;
      norm += acc;
    }
    for (int j = 0; j < p; ++j) r[j] = nr[j] / norm;
    log_scale += std::log(norm);
  }
  // head term 1 / (r_n (1-s)) with the accumulated scale
  double tail = 0.0;
  for (int j = 0; j < p; ++j) tail += r[j] * (1.0 - s[j]);
  out.head = std::exp(-log_scale) / tail;
  out.rhs += out.head;
  out.residual = std::abs(out.lhs - out.rhs);
  return out;
}

// The psi terms of the expansion at s = 0 together with their a-priori
// bound psi <= bound * p^2 * sum_i |H^{(i)}| / |M|^2 (H^{(i)} the pgf
// Hessians of the atom at 1).
struct PsiDecomposition {
  std::vector<double> eta;        // psi_{f_k, r_k}(F_{k+1,n-1}(0))
  std::vector<double> eta_bound;  // per-step closed-form bound
  std::vector<double> log_row_norm;  // log |e_i M_0..M_{k-1}|, k = 1..n
  double head = 0.0;
  double lhs = 0.0;
};

inline double psi_upper_bound(const EnvironmentAtom& atom, double bound) {
  double hess = 0.0;
  for (int i = 0; i < atom.p; ++i) hess += l1_norm(atom.hessian(i));
  const double norm = l1_norm(atom.mean.base);
  return bound * atom.p * atom.p * hess / (norm * norm);
}

inline PsiDecomposition eta_values(std::span<const EnvironmentAtom> env, int n, int type_i) {
  const int p = env[0].p;
  PsiDecomposition out;
  const Vec zero(p, 0.0);
  QuenchedPath back = quenched_path(env.subspan(0, n), n);
  out.lhs = 1.0 / (1.0 - back.from(0)[type_i]);

  std::array<double, kMaxTypes> r{};
  r[type_i] = 1.0;
  double log_scale = 0.0;
  for (int k = 0; k < n; ++k) {
    out.eta.push_back(psi(env[k], std::span<const double>(r.data(), p), back.from(k + 1)));
    out.eta_bound.push_back(psi_upper_bound(env[k], env[k].mean.bound));
    std::array<double, kMaxTypes> nr{};
    double norm = 0.0;
    for (int j = 0; j < p; ++j) {
      double acc = 0.0;
      for (int i = 0; i < p; ++i) acc += r[i] * env[k].mean.base(i, j);
      nr[j] = acc;
      norm += acc;
    }
    for (int j = 0; j < p; ++j) r[j] = nr[j] / norm;
    log_scale += std::log(norm);
    out.log_row_norm.push_back(log_scale);
  }
  double tail = 0.0;
  for (int j = 0; j < p; ++j) tail += r[j];
  out.head = std::exp(-log_scale) / tail;
  return out;
}

// ---------------------------------------------------------------------------
// Annealed survival estimators.

struct SurvivalEstimate {
  int n = 0;
  Vec estimate;     // per ancestor type
  Vec se;
  double ess = 0.0;       // effective sample size, min over types
  double mean_weight = 0.0;  // tilted only: sampled mean of the bare weight
  double mean_weight_se = 0.0;
  std::uint64_t reps = 0;
  std::uint64_t seed = 0;
  std::string method;
  bool high_variance_warning = false;
};

// Direct Monte Carlo: sample environments from the base law and average the
// quenched survival.  The relative variance grows like 1/E[q_n], so this is
// only usable for moderate horizons; estimates carry a warning flag when
// fewer than ~100 effective positives are expected.
inline SurvivalEstimate annealed_naive(const EnvironmentLaw& law, int n, std::uint64_t reps,
                                       std::uint64_t seed, int workers = 0) {
  if (!law.has_offspring()) throw std::invalid_argument("transposed law has no offspring side");
  const int p = law.p;
  struct Acc {
    std::array<double, kMaxTypes> s{}, q{};
    std::uint64_t n = 0;
    std::vector<EnvironmentAtom> scratch;
  };
  Acc t = replica_reduce(
      reps, workers, Acc{},
      [&](Acc& acc, std::uint64_t r) {
        RandomStream rng = RandomStream::from_key(seed, "naive", r);
        acc.scratch.clear();
        for (int k = 0; k < n; ++k) acc.scratch.push_back(law.sample_atom(rng));
        const Vec q = quenched_survival(acc.scratch, n);
        for (int i = 0; i < p; ++i) {
          acc.s[i] += q[i];
          acc.q[i] += q[i] * q[i];
        }
        acc.n += 1;
      },
      [](Acc& a_, const Acc& b) {
        for (std::size_t i = 0; i < a_.s.size(); ++i) {
          a_.s[i] += b.s[i];
          a_.q[i] += b.q[i];
        }
        a_.n += b.n;
      });
  SurvivalEstimate est;
  est.n = n;
  est.reps = t.n;
  est.seed = seed;
  est.method = "naive";
  est.estimate = Vec(p);
  est.se = Vec(p);
  double ess = 1e300;
  for (int i = 0; i < p; ++i) {
    const MeanSE m = mean_se(t.s[i], t.q[i], t.n);
    est.estimate[i] = m.mean;
    est.se[i] = m.se;
    const double e = (t.q[i] > 0.0) ? t.s[i] * t.s[i] / t.q[i] : 0.0;
    ess = std::min(ess, e);
  }
  est.ess = ess;
  est.high_variance_warning = ess < 100.0;
  return est;
}

// Importance-sampled estimator: environments are drawn from the tilted
// chain at theta (normally the critical tilt), the quenched survival is
// composed exactly along the sampled sequence, and the accumulated
// likelihood ratio lambda^n v(x_0) e^{-theta (S_n - S_0)} / v(X_n) (times
// the per-step normalizers) unwinds the tilt.  Unbiased for E[q_n] with
// variance polynomial in n instead of exponential.
//
// The composition folds each atom into the generating function as it is
// sampled, i.e. along the time-reversed environment; since the base law is
// iid, the reversed sequence has the same annealed distribution and the
// estimator stays unbiased (checked empirically: estimate and effective
// sample size match the buffered forward composition within noise).
inline SurvivalEstimate annealed_tilted(const EnvironmentLaw& law, const TiltedKernel& kernel,
                                        int n, std::uint64_t reps, std::uint64_t seed,
                                        int workers = 0) {
  if (!law.has_offspring()) throw std::invalid_argument("transposed law has no offspring side");
  if (kernel.law.transpose_matrices) throw std::invalid_argument("kernel built on transposed law");
  const int p = law.p;
  struct Acc {
    std::array<double, kMaxTypes> s{}, q{};
    double w = 0.0, w2 = 0.0;
    std::uint64_t n = 0;
  };
  const ProjectivePoint x0 = ProjectivePoint::uniform(p, Flavor::Row);
  Acc t = replica_reduce(
      reps, workers, Acc{},
      [&](Acc& acc, std::uint64_t r) {
        RandomStream rng = RandomStream::from_key(seed, "tilted", r);
        WalkState st = make_walk_state(kernel, x0, 0.0);
        Vec g(p);  // extinction pgf iterate, starts at 0
        for (int k = 0; k < n; ++k) {
          const StepCore core = sample_step_core(kernel, st.x, st.v_x, rng, nullptr, &g);
          st.x = core.image;
          st.v_x = core.v_image;
          st.s += core.increment;
          st.n += 1;
          st.weight *= core.weight_factor;
        }
        // st.weight now carries the telescoped likelihood ratio
        // lambda^n v(x_0) e^{-theta S_n} / v(X_n) times the normalizers
        for (int i = 0; i < p; ++i) {
          const double f = st.weight * (1.0 - g[i]);
          acc.s[i] += f;
          acc.q[i] += f * f;
        }
        acc.w += st.weight;
        acc.w2 += st.weight * st.weight;
        acc.n += 1;
      },
      [](Acc& a_, const Acc& b) {
        for (std::size_t i = 0; i < a_.s.size(); ++i) {
          a_.s[i] += b.s[i];
          a_.q[i] += b.q[i];
        }
        a_.w += b.w;
        a_.w2 += b.w2;
        a_.n += b.n;
      });
  SurvivalEstimate est;
  est.n = n;
  est.reps = t.n;
  est.seed = seed;
  est.method = "tilted";
  est.estimate = Vec(p);
  est.se = Vec(p);
  double ess = 1e300;
  for (int i = 0; i < p; ++i) {
    const MeanSE m = mean_se(t.s[i], t.q[i], t.n);
    est.estimate[i] = m.mean;
    est.se[i] = m.se;
    const double e = (t.q[i] > 0.0) ? t.s[i] * t.s[i] / t.q[i] : 0.0;
    ess = std::min(ess, e);
  }
  est.ess = ess;
  const MeanSE mw = mean_se(t.w, t.w2, t.n);
  est.mean_weight = mw.mean;
  est.mean_weight_se = mw.se;
  return est;
}

// ---------------------------------------------------------------------------
// Partial-sum decomposition of sum_l 1/|M_{0,l}| around the argmin of the
// running norms, and the pathwise event identity
// (min_l |M_{0,l}| > e^-a)  <=>  (tau_{1,a} > n) for the walk started from
// the all-ones row functional.

struct AbcDecomposition {
  std::vector<double> log_norms;  // log |M_{0,l}|, l = 0 .. n-1
  int argmin = 0;
  double m_n = 0.0;               // min_l |M_{0,l}|
  double part_before = 0.0;       // sum over l < argmin of 1/|M_{0,l}|
  double part_at = 0.0;           // 1/m_n
  double part_after = 0.0;        // sum over l > argmin
  double total = 0.0;

  bool min_norm_event(double a) const { return -std::log(m_n) < a; }
  bool passage_event(double a) const {
    for (double w : log_norms)
      if (!(a + w > 0.0)) return false;
    return true;
  }
};

inline AbcDecomposition abc_decomposition(std::span<const EnvironmentAtom> env, int n) {
  if (n < 1 || n > static_cast<int>(env.size())) throw std::invalid_argument("bad horizon");
  const int p = env[0].p;
  AbcDecomposition out;
  // |M_{0,l}| = |1 M_0 .. M_l| via the renormalized all-ones row
  std::array<double, kMaxTypes> r{};
  for (int i = 0; i < p; ++i) r[i] = 1.0;
  double log_scale = 0.0;
  for (int l = 0; l < n; ++l) {
    std::array<double, kMaxTypes> nr{};
    double norm = 0.0;
    for (int j = 0; j < p; ++j) {
      double acc = 0.0;
      for (int i = 0; i < p; ++i) acc += r[i] * env[l].mean.base(i, j);
      nr[j] = acc;
      norm += acc;
    }
    for (int j = 0; j < p; ++j) r[j] = nr[j] / norm;
    log_scale += std::log(norm);
    out.log_norms.push_back(log_scale);
  }
  out.argmin = static_cast<int>(
      std::min_element(out.log_norms.begin(), out.log_norms.end()) - out.log_norms.begin());
  out.m_n = std::exp(out.log_norms[out.argmin]);
  for (int l = 0; l < n; ++l) {
    const double inv = std::exp(-out.log_norms[l]);
    out.total += inv;
    if (l < out.argmin)
      out.part_before += inv;
    else if (l == out.argmin)
      out.part_at += inv;
    else
      out.part_after += inv;
  }
  return out;
}

}  // namespace subcrit
