#pragma once

// Discretized transfer-operator family and its principal eigen-data.
//
// For a parameter theta in [0,1] the operator acts on functions of a
// direction x on the simplex by
//     (K_theta phi)(x) = E[ |x M|^theta phi(x . M) ],
// with M drawn from the environment's mean-matrix law and x . M the
// projective image.  Its principal eigenvalue lambda(theta) is the growth
// rate of E|M_{n-1} ... M_0|^theta; the right eigenfunction v_theta and the
// eigenmeasure nu_theta normalize the tilted walk kernel.
//
// Discretization: directions live on a margin-shrunk simplex lattice, the
// expectation over M is replaced by a frozen quadrature rule, and images
// x . M are folded back onto the lattice by barycentric interpolation on
// the standard (Freudenthal) triangulation.  The margin is sized from the
// declared entry-comparability bound B so that every image of every lattice
// node stays strictly inside the lattice hull: images have coordinates
// >= 1/(pB), the margin is 1/(2pB), and the resolution must be at least
// 2 p B (p - 1) lattice steps for the interpolation cells to fit.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "subcrit/environment.hpp"
#include "subcrit/linalg.hpp"
#include "subcrit/parallel.hpp"
#include "subcrit/rng.hpp"

namespace subcrit {

struct ConvergenceError : std::runtime_error {
  double residual;
  ConvergenceError(const std::string& what, double r) : std::runtime_error(what), residual(r) {}
};

enum class Regime { WeaklySubcritical, IntermediatelySubcritical, StronglySubcritical, NotSubcritical };

inline std::string regime_name(Regime r) {
  switch (r) {
    case Regime::WeaklySubcritical: return "weakly subcritical";
    case Regime::IntermediatelySubcritical: return "intermediately subcritical";
    case Regime::StronglySubcritical: return "strongly subcritical";
    case Regime::NotSubcritical: return "not subcritical";
  }
  return "?";
}

struct RegimeError : std::runtime_error {
  Regime actual;
  double gamma;
  double deriv_at_one;
  RegimeError(Regime a, double g, double d)
      : std::runtime_error("environment law is " + regime_name(a) +
                           " (drift " + std::to_string(g) + ", growth derivative at 1 " +
                           std::to_string(d) + "); weakly subcritical law required"),
        actual(a), gamma(g), deriv_at_one(d) {}
};

// ---------------------------------------------------------------------------
// Margin-shrunk simplex lattice.

struct SpectralGrid {
  int p = 0;
  int resolution = 0;   // lattice steps per edge
  double margin = 0.0;  // distance of the lattice hull from the simplex faces
  std::vector<ProjectivePoint> nodes;

  // Barycentric interpolation stencil: `count` nodes with convex weights.
  struct Interp {
    std::array<int, kMaxTypes + 1> idx{};
    std::array<double, kMaxTypes + 1> w{};
    int count = 0;
    bool clamped = false;
  };

  static SpectralGrid regular(int p, int resolution, double margin) {
    if (p < 2 || p > kMaxTypes) throw std::invalid_argument("grid dimension out of range");
    if (resolution < 1) throw std::invalid_argument("grid resolution must be positive");
    if (!(margin > 0.0) || margin * p >= 1.0)
      throw std::invalid_argument("grid margin must satisfy 0 < p*margin < 1");
    SpectralGrid g;
    g.p = p;
    g.resolution = resolution;
    g.margin = margin;
    g.build_counts();
    const std::uint64_t n = g.count(resolution, p);
    if (n > 5'000'000) throw std::invalid_argument("grid too large");
    g.nodes.reserve(n);
    std::array<int, kMaxTypes> comp{};
    g.enumerate(comp, 0, resolution);
    return g;
  }

  // Margin sized so that images of certified matrices stay inside the hull.
  static double margin_for_bound(int p, double bound) { return 1.0 / (2.0 * p * bound); }

  int size() const { return static_cast<int>(nodes.size()); }

  // Rank of a composition (c_0 .. c_{p-1}), lexicographic order.
  int rank(const std::array<int, kMaxTypes>& c) const {
    std::uint64_t r = 0;
    int rem = resolution;
    for (int j = 0; j + 1 < p; ++j) {
      for (int t = 0; t < c[j]; ++t) r += count(rem - t, p - 1 - j);
      rem -= c[j];
    }
    return static_cast<int>(r);
  }

  // Locates x in the triangulation; clamps queries that fall outside the
  // lattice hull (flagged in the result).
  Interp locate(const ProjectivePoint& x) const {
    if (x.p != p) throw std::invalid_argument("dimension mismatch");
    Interp out;
    const double span = 1.0 - p * margin;
    const int d = p - 1;
    std::array<double, kMaxTypes> u{};
    double total = 0.0;
    for (int k = 0; k < d; ++k) {
      u[k] = (x.x[k] - margin) / span * resolution;
      if (u[k] < 0.0) {
        u[k] = 0.0;
        out.clamped = true;
      }
      if (u[k] > resolution) {
        u[k] = resolution;
        out.clamped = true;
      }
      total += u[k];
    }
    if (total > resolution) {
      const double scale = resolution / total;
      for (int k = 0; k < d; ++k) u[k] *= scale;
      out.clamped = true;
    }
    // Shrink toward the barycenter until the enclosing cell fits; only
    // reachable for queries at or beyond the hull boundary.
    for (int guard = 0; !cell_fits(u); ++guard) {
      if (guard > 200) throw std::logic_error("grid cell search failed");
      const double center = static_cast<double>(resolution) / p;
      for (int k = 0; k < d; ++k) u[k] = center + (u[k] - center) * 0.995;
      out.clamped = true;
    }

    std::array<int, kMaxTypes> base{};
    std::array<double, kMaxTypes> frac{};
    for (int k = 0; k < d; ++k) {
      base[k] = std::min(static_cast<int>(u[k]), resolution - 1);
      frac[k] = u[k] - base[k];
    }
    std::array<int, kMaxTypes> order{};
    for (int k = 0; k < d; ++k) order[k] = k;
    std::sort(order.begin(), order.begin() + d,
              [&](int a, int b) { return frac[a] > frac[b]; });

    std::array<int, kMaxTypes> comp = base;
    out.count = d + 1;
    out.idx[0] = rank(comp);
    out.w[0] = 1.0 - frac[order[0]];
    for (int j = 0; j < d; ++j) {
      comp[order[j]] += 1;
      out.idx[j + 1] = rank(comp);
      out.w[j + 1] = (j + 1 < d) ? frac[order[j]] - frac[order[j + 1]] : frac[order[d - 1]];
    }
    return out;
  }

  nlohmann::json to_json() const {
    return nlohmann::json{{"types", p}, {"resolution", resolution}, {"margin", margin}};
  }
  static SpectralGrid from_json(const nlohmann::json& j) {
    detail::require_keys(j, {"types", "resolution", "margin"}, {}, "grid");
    return regular(j.at("types").get<int>(), j.at("resolution").get<int>(),
                   j.at("margin").get<double>());
  }

 private:
  // counts_[k][n] = number of compositions of n into k nonnegative parts.
  std::vector<std::vector<std::uint64_t>> counts_;

  void build_counts() {
    counts_.assign(p + 1, std::vector<std::uint64_t>(resolution + 1, 0));
    for (int n = 0; n <= resolution; ++n) counts_[1][n] = 1;
    for (int k = 2; k <= p; ++k) {
      std::uint64_t acc = 0;
      for (int n = 0; n <= resolution; ++n) {
        acc += counts_[k - 1][n];
        counts_[k][n] = acc;
      }
    }
  }
  std::uint64_t count(int n, int k) const { return counts_[k][n]; }

  void enumerate(std::array<int, kMaxTypes>& comp, int pos, int rem) {
    if (pos == p - 1) {
      comp[pos] = rem;
      const double span = 1.0 - p * margin;
      std::array<double, kMaxTypes> coords{};
      for (int i = 0; i < p; ++i)
        coords[i] = margin + span * static_cast<double>(comp[i]) / resolution;
      nodes.push_back(
          ProjectivePoint::from_coords(std::span<const double>(coords.data(), p), Flavor::Row));
      return;
    }
    for (int c = 0; c <= rem; ++c) {
      comp[pos] = c;
      enumerate(comp, pos + 1, rem - c);
    }
  }

  bool cell_fits(const std::array<double, kMaxTypes>& u) const {
    // every Freudenthal vertex of the cell containing u must satisfy
    // sum <= resolution componentwise in the composition
    double s = 0.0;
    const int d = p - 1;
    for (int k = 0; k < d; ++k) s += std::min(static_cast<int>(u[k]), resolution - 1) + 1;
    return s <= resolution;
  }
};

// ---------------------------------------------------------------------------
// Discretized operator family (theta-independent geometry, per-theta weights).

struct SolverSettings {
  int resolution = 200;
  double margin = -1.0;  // <= 0: derived from the law's bound
  int quadrature = 512;
  std::uint64_t quadrature_seed = 0x5EED0BADF00DULL;
  double tol = 1e-10;         // eigen residual target
  int max_iter = 20000;
  double deriv_step = 1e-3;   // central difference step for growth derivative
  double root_tol = 1e-5;     // |growth derivative| target at the critical point
  double regime_tol = 1e-4;   // classification margin around zero derivative
};

class SpectralWorkspace;

// Principal eigen-data of K_theta on the grid.  nu sums to 1 and
// sum_i nu_i v_i = 1.
struct SpectralSolution {
  double theta = 0.0;
  double lambda = 0.0;
  double residual = 0.0;
  double adjoint_residual = 0.0;
  int iterations = 0;
  SpectralGrid grid;
  std::vector<double> v;
  std::vector<double> nu;

  double v_at(const ProjectivePoint& x) const {
    const SpectralGrid::Interp in = grid.locate(x);
    double s = 0.0;
    for (int k = 0; k < in.count; ++k) s += in.w[k] * v[in.idx[k]];
    return s;
  }
  double v_min() const { return *std::min_element(v.begin(), v.end()); }
  double v_max() const { return *std::max_element(v.begin(), v.end()); }

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["theta"] = theta;
    j["lambda"] = lambda;
    j["residual"] = residual;
    j["adjoint_residual"] = adjoint_residual;
    j["iterations"] = iterations;
    j["grid"] = grid.to_json();
    j["v"] = v;
    j["nu"] = nu;
    return j;
  }
  static SpectralSolution from_json(const nlohmann::json& j) {
    detail::require_keys(
        j, {"theta", "lambda", "residual", "adjoint_residual", "iterations", "grid", "v", "nu"},
        {}, "spectral solution");
    SpectralSolution s;
    s.theta = j.at("theta").get<double>();
    s.lambda = j.at("lambda").get<double>();
    s.residual = j.at("residual").get<double>();
    s.adjoint_residual = j.at("adjoint_residual").get<double>();
    s.iterations = j.at("iterations").get<int>();
    s.grid = SpectralGrid::from_json(j.at("grid"));
    s.v = j.at("v").get<std::vector<double>>();
    s.nu = j.at("nu").get<std::vector<double>>();
    if (static_cast<int>(s.v.size()) != s.grid.size() ||
        static_cast<int>(s.nu.size()) != s.grid.size())
      throw std::invalid_argument("spectral solution does not match its grid");
    return s;
  }
};

// The critical tilt: growth derivative vanishes at theta_star.
struct CriticalPoint {
  double theta_star = 0.0;
  double rho_star = 0.0;       // lambda(theta_star)
  double gamma = 0.0;          // growth derivative at 0 (drift of log |x M_0..k|)
  double deriv_at_one = 0.0;   // growth derivative at 1
  Regime regime = Regime::WeaklySubcritical;
  SpectralSolution solution;   // eigen-data at theta_star
};

class SpectralWorkspace {
 public:
  SpectralWorkspace(const EnvironmentLaw& law, SolverSettings settings)
      : law_(law), settings_(settings) {
    const double margin = settings_.margin > 0.0
                              ? settings_.margin
                              : SpectralGrid::margin_for_bound(law.p, law.bound);
    const int min_res = static_cast<int>(std::ceil((law.p - 1) / margin));
    if (settings_.resolution < min_res)
      throw std::invalid_argument("grid resolution " + std::to_string(settings_.resolution) +
                                  " too coarse for bound; need >= " + std::to_string(min_res));
    grid_ = SpectralGrid::regular(law.p, settings_.resolution, margin);
    build_geometry();
  }

  const SpectralGrid& grid() const { return grid_; }
  const EnvironmentLaw& law() const { return law_; }
  const SolverSettings& settings() const { return settings_; }
  std::uint64_t clamped_queries() const { return clamped_; }

  // One application of the discretized K_theta to phi (length = grid size).
  std::vector<double> apply(double theta, std::span<const double> phi) const {
    std::vector<double> w = weights(theta);
    std::vector<double> out(grid_.size(), 0.0);
    apply_with(w, phi, out);
    return out;
  }

  SpectralSolution solve(double theta) const {
    const int n = grid_.size();
    const std::vector<double> w = weights(theta);

    SpectralSolution sol;
    sol.theta = theta;
    sol.grid = grid_;

    // forward eigenfunction
    std::vector<double> v(n, 1.0), kv(n);
    double lambda = 0.0, resid = 0.0;
    int it = 0;
    for (; it < settings_.max_iter; ++it) {
      apply_with(w, v, kv);
      double norm = 0.0, vmax = 0.0;
      for (double e : kv) norm += e;
      lambda = norm / n;  // v is renormalized to mean 1 each sweep
      for (double& e : kv) e *= n / norm;
      resid = 0.0;
      for (int i = 0; i < n; ++i) {
        resid = std::max(resid, std::abs(kv[i] - v[i]));
        vmax = std::max(vmax, kv[i]);
      }
      std::swap(v, kv);
      if (resid <= settings_.tol * vmax) break;
    }
    if (it >= settings_.max_iter)
      throw ConvergenceError("eigen iteration did not converge (residual " +
                                 std::to_string(resid) + ")",
                             resid);

    // adjoint eigenmeasure
    std::vector<double> nu(n, 1.0 / n), knu(n);
    double lambda_adj = 0.0, resid_adj = 0.0;
    int it_adj = 0;
    for (; it_adj < settings_.max_iter; ++it_adj) {
      apply_adjoint_with(w, nu, knu);
      double norm = 0.0;
      for (double e : knu) norm += e;
      lambda_adj = norm;  // nu is kept a probability vector
      double numax = 0.0;
      for (double& e : knu) {
        e /= norm;
        numax = std::max(numax, e);
      }
      resid_adj = 0.0;
      for (int i = 0; i < n; ++i) resid_adj = std::max(resid_adj, std::abs(knu[i] - nu[i]));
      std::swap(nu, knu);
      if (resid_adj <= settings_.tol * numax) break;
    }
    if (it_adj >= settings_.max_iter)
      throw ConvergenceError("adjoint eigen iteration did not converge (residual " +
                                 std::to_string(resid_adj) + ")",
                             resid_adj);

    // normalize: nu is a probability vector already; scale v so nu(v) = 1
    double nv = 0.0;
    for (int i = 0; i < n; ++i) nv += nu[i] * v[i];
    for (double& e : v) e /= nv;

    sol.lambda = lambda;
    sol.adjoint_residual = std::abs(lambda_adj - lambda) / lambda;
    sol.iterations = it + it_adj + 2;
    // final residual, relative to lambda * max v
    apply_with(w, v, kv);
    double r = 0.0, vmax = 0.0;
    for (int i = 0; i < n; ++i) {
      r = std::max(r, std::abs(kv[i] - lambda * v[i]));
      vmax = std::max(vmax, v[i]);
    }
    sol.residual = r / (lambda * vmax);
    sol.v = std::move(v);
    sol.nu = std::move(nu);
    return sol;
  }

  // log lambda(theta)
  double growth_log(double theta) const { return std::log(solve(theta).lambda); }

  // d/dtheta log lambda, central difference
  double growth_log_deriv(double theta) const {
    const double h = settings_.deriv_step;
    return (growth_log(theta + h) - growth_log(theta - h)) / (2.0 * h);
  }

  Regime classify(double* gamma_out = nullptr, double* deriv1_out = nullptr) const {
    const double gamma = growth_log_deriv(0.0);
    const double d1 = growth_log_deriv(1.0);
    if (gamma_out) *gamma_out = gamma;
    if (deriv1_out) *deriv1_out = d1;
    if (gamma >= 0.0) return Regime::NotSubcritical;
    if (d1 > settings_.regime_tol) return Regime::WeaklySubcritical;
    if (d1 < -settings_.regime_tol) return Regime::StronglySubcritical;
    return Regime::IntermediatelySubcritical;
  }

  // Bisection for the vanishing growth derivative; requires the weakly
  // subcritical regime and throws RegimeError otherwise.
  CriticalPoint critical_point() const {
    CriticalPoint cp;
    cp.regime = classify(&cp.gamma, &cp.deriv_at_one);
    if (cp.regime != Regime::WeaklySubcritical)
      throw RegimeError(cp.regime, cp.gamma, cp.deriv_at_one);
    double lo = 0.0, hi = 1.0;
    double mid = 0.5, dm = 0.0;
    for (int it = 0; it < 200; ++it) {
      mid = 0.5 * (lo + hi);
      dm = growth_log_deriv(mid);
      if (std::abs(dm) <= settings_.root_tol || hi - lo < 1e-13) break;
      (dm < 0.0 ? lo : hi) = mid;
    }
    if (std::abs(dm) > settings_.root_tol)
      throw ConvergenceError("critical-point bisection stalled (derivative " +
                                 std::to_string(dm) + ")",
                             std::abs(dm));
    cp.theta_star = mid;
    cp.solution = solve(mid);
    cp.rho_star = cp.solution.lambda;
    return cp;
  }

 private:
  EnvironmentLaw law_;
  SolverSettings settings_;
  SpectralGrid grid_;
  int n_atoms_ = 0;
  std::vector<double> atom_weight_;  // quadrature weights, length A
  std::vector<double> log_norm_;     // log |x_i M_a|, length N*A
  std::vector<int> tgt_idx_;         // interpolation stencil, length N*A*p
  std::vector<double> tgt_w_;
  std::uint64_t clamped_ = 0;

  void build_geometry() {
    const auto quad = law_.quadrature(settings_.quadrature, settings_.quadrature_seed);
    n_atoms_ = static_cast<int>(quad.size());
    const int n = grid_.size();
    const int p = grid_.p;
    atom_weight_.resize(n_atoms_);
    for (int a = 0; a < n_atoms_; ++a) atom_weight_[a] = quad[a].first;
    log_norm_.assign(static_cast<std::size_t>(n) * n_atoms_, 0.0);
    tgt_idx_.assign(static_cast<std::size_t>(n) * n_atoms_ * p, 0);
    tgt_w_.assign(static_cast<std::size_t>(n) * n_atoms_ * p, 0.0);
    for (int i = 0; i < n; ++i) {
      for (int a = 0; a < n_atoms_; ++a) {
        const ProjectiveStep st = project_act(grid_.nodes[i], quad[a].second.mean.base);
        const std::size_t cell = static_cast<std::size_t>(i) * n_atoms_ + a;
        log_norm_[cell] = st.log_norm;
        const SpectralGrid::Interp in = grid_.locate(st.image);
        if (in.clamped) ++clamped_;
        for (int k = 0; k < p; ++k) {
          tgt_idx_[cell * p + k] = (k < in.count) ? in.idx[k] : in.idx[0];
          tgt_w_[cell * p + k] = (k < in.count) ? in.w[k] : 0.0;
        }
      }
    }
  }

  std::vector<double> weights(double theta) const {
    std::vector<double> w(log_norm_.size());
    for (std::size_t c = 0; c < log_norm_.size(); ++c)
      w[c] = atom_weight_[c % n_atoms_] * std::exp(theta * log_norm_[c]);
    return w;
  }

  void apply_with(std::span<const double> w, std::span<const double> in,
                  std::span<double> out) const {
    const int n = grid_.size();
    const int p = grid_.p;
    for (int i = 0; i < n; ++i) {
      double acc = 0.0;
      const std::size_t row = static_cast<std::size_t>(i) * n_atoms_;
      for (int a = 0; a < n_atoms_; ++a) {
        const std::size_t cell = row + a;
        double interp = 0.0;
        for (int k = 0; k < p; ++k) interp += tgt_w_[cell * p + k] * in[tgt_idx_[cell * p + k]];
        acc += w[cell] * interp;
      }
      out[i] = acc;
    }
  }

  void apply_adjoint_with(std::span<const double> w, std::span<const double> in,
                          std::span<double> out) const {
    const int n = grid_.size();
    const int p = grid_.p;
    std::fill(out.begin(), out.end(), 0.0);
    for (int i = 0; i < n; ++i) {
      const std::size_t row = static_cast<std::size_t>(i) * n_atoms_;
      for (int a = 0; a < n_atoms_; ++a) {
        const std::size_t cell = row + a;
        const double m = w[cell] * in[i];
        for (int k = 0; k < p; ++k) out[tgt_idx_[cell * p + k]] += m * tgt_w_[cell * p + k];
      }
    }
  }
};

inline std::vector<double> apply_transfer(const SpectralWorkspace& ws, double theta,
                                          std::span<const double> phi) {
  return ws.apply(theta, phi);
}

// ---------------------------------------------------------------------------
// Monte Carlo cross-check of the growth rate: lambda(theta) is estimated
// from exact renormalized left products, E[|M_{n-1} ... M_0|^theta]^{1/n}.

struct GrowthEstimate {
  double lambda = 0.0;
  double se = 0.0;       // delta-method standard error on lambda
  double rel_se_mean = 0.0;  // relative standard error of the underlying mean
  int horizon = 0;
  std::uint64_t reps = 0;
};

inline GrowthEstimate growth_rate_mc(const EnvironmentLaw& law, double theta, int horizon,
                                     std::uint64_t reps, std::uint64_t seed, int workers = 0) {
  struct Acc {
    double shift1 = -1e300, sum1 = 0.0;  // sum exp(theta log N - shift)
    double shift2 = -1e300, sum2 = 0.0;  // same for the square
    std::uint64_t n = 0;
  };
  auto fold_shifted = [](double& shift, double& sum, double s2, double v2) {
    if (v2 <= 0.0) return;
    if (s2 > shift) {
      sum = sum * std::exp(shift - s2) + v2;
      shift = s2;
    } else {
      sum += v2 * std::exp(s2 - shift);
    }
  };

  Acc total = replica_reduce(
      reps, workers, Acc{},
      [&](Acc& acc, std::uint64_t r) {
        RandomStream rng = RandomStream::from_key(seed, "growth-mc", r);
        PositiveMatrix prod;
        double log_scale = 0.0;
        for (int k = 0; k < horizon; ++k) {
          const EnvironmentAtom atom = law.sample_atom(rng);
          if (k == 0) {
            prod = atom.mean.base;
          } else {
            prod = multiply(atom.mean.base, prod);  // left product
          }
          const double nrm = l1_norm(prod);
          for (int i = 0; i < prod.p; ++i)
            for (int j = 0; j < prod.p; ++j) prod(i, j) /= nrm;
          log_scale += std::log(nrm);
        }
        const double x = theta * log_scale;
        fold_shifted(acc.shift1, acc.sum1, x, 1.0);
        fold_shifted(acc.shift2, acc.sum2, 2.0 * x, 1.0);
        acc.n += 1;
      },
      [&](Acc& into, const Acc& from) {
        fold_shifted(into.shift1, into.sum1, from.shift1, from.sum1);
        fold_shifted(into.shift2, into.sum2, from.shift2, from.sum2);
        into.n += from.n;
      });

  GrowthEstimate out;
  out.horizon = horizon;
  out.reps = total.n;
  const double log_mean = total.shift1 + std::log(total.sum1 / total.n);
  out.lambda = std::exp(log_mean / horizon);
  // relative s.e. of the mean via E[x^2]/E[x]^2
  const double log_m2 = total.shift2 + std::log(total.sum2 / total.n);
  const double ratio = std::exp(log_m2 - 2.0 * log_mean);
  out.rel_se_mean = std::sqrt(std::max(0.0, ratio - 1.0) / static_cast<double>(total.n));
  out.se = out.lambda * out.rel_se_mean / horizon;
  return out;
}

// ---------------------------------------------------------------------------
// Particle estimate of the growth rate.  The plain estimator above suffers
// the exponential-moment variance wall: the relative variance of
// E[|M_{0,n-1}|^theta] grows like e^{theta^2 n Var}, so useful horizons are
// tiny for theta near 1.  A self-normalized particle system (one-step weights
// e^{theta log|x M|}, systematic resampling each step) estimates the same
// growth factor with relative error growing linearly in the horizon, which
// makes long horizons - and hence negligible direction-equilibration bias -
// affordable.  Burn-in steps are excluded so the leading-eigenvalue factor
// dominates the window.

struct ParticleGrowth {
  double lambda = 0.0;
  double se = 0.0;           // spread over independent replicates
  int particles = 0;
  int burn_in = 0;
  int horizon = 0;
  int replicates = 0;
};

inline ParticleGrowth growth_rate_particle(const EnvironmentLaw& law, double theta, int particles,
                                           int burn_in, int horizon, int replicates,
                                           std::uint64_t seed) {
  if (particles < 2 || replicates < 2 || horizon <= burn_in || burn_in < 0)
    throw std::invalid_argument("bad particle estimator parameters");
  std::vector<double> lambdas;
  std::vector<ProjectivePoint> states, next_states;
  std::vector<double> weights, cumulative;
  for (int r = 0; r < replicates; ++r) {
    RandomStream rng = RandomStream::from_key(seed, "particle-growth", static_cast<std::uint64_t>(r));
    states.assign(particles, ProjectivePoint::uniform(law.p, Flavor::Row));
    double log_z = 0.0;
    for (int k = 0; k < horizon; ++k) {
      weights.clear();
      next_states.clear();
      double mean_w = 0.0;
      for (int i = 0; i < particles; ++i) {
        const EnvironmentAtom atom = law.sample_atom(rng);
        const ProjectiveStep st = project_act(states[i], atom.mean.base);
        const double w = std::exp(theta * st.log_norm);
        weights.push_back(w);
        next_states.push_back(st.image);
        mean_w += w;
      }
      mean_w /= particles;
      if (k >= burn_in) log_z += std::log(mean_w);
      // systematic resampling keeps the particle count fixed and is
      // deterministic given the single uniform draw
      cumulative.assign(particles, 0.0);
      double acc = 0.0;
      for (int i = 0; i < particles; ++i) {
        acc += weights[i];
        cumulative[i] = acc;
      }
      const double u = rng.next_open();
      states.clear();
      int pos = 0;
      for (int i = 0; i < particles; ++i) {
        const double target = (u + i) / particles * acc;
        while (pos < particles - 1 && cumulative[pos] < target) ++pos;
        states.push_back(next_states[pos]);
      }
    }
    lambdas.push_back(std::exp(log_z / (horizon - burn_in)));
  }
  ParticleGrowth out;
  out.particles = particles;
  out.burn_in = burn_in;
  out.horizon = horizon;
  out.replicates = replicates;
  double m = 0.0;
  for (double l : lambdas) m += l;
  m /= replicates;
  double var = 0.0;
  for (double l : lambdas) var += (l - m) * (l - m);
  var /= (replicates - 1);
  out.lambda = m;
  out.se = std::sqrt(var / replicates);
  return out;
}

}  // namespace subcrit
