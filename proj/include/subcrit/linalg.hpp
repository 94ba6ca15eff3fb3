#pragma once

// Positive matrices, the projective simplex they act on, the Hilbert-type
// contraction metric, and the additive log-norm cocycle.
//
// Conventions used throughout the library:
//   * |M|  is the sum of all entries (an operator norm on the positive cone),
//   * v(M) is the minimal column sum, so v(M)|x| <= |Mx| <= |M||x| for x >= 0,
//   * row directions act on the right (x -> x M), column directions on the
//     left (x -> M x); both live on the open unit simplex.
// Long products are kept renormalized: we store a unit-norm matrix together
// with an accumulated log scale, which keeps products of hundreds of factors
// well inside double range.

#include <array>
#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <vector>

namespace subcrit {

// Hard cap on the number of types; keeps all hot-loop state on the stack.
inline constexpr int kMaxTypes = 8;

// Coordinates are floored at this value when normalizing, so directions
// stay strictly inside the simplex even after long contractions.
inline constexpr double kSimplexFloor = 1e-300;

// Fixed-capacity vector of doubles with a runtime dimension.
struct Vec {
  int p = 0;
  std::array<double, kMaxTypes> x{};

  Vec() = default;
  explicit Vec(int dim, double fill = 0.0) : p(dim) {
    for (int i = 0; i < p; ++i) x[i] = fill;
  }
  Vec(std::initializer_list<double> v) : p(static_cast<int>(v.size())) {
    int i = 0;
    for (double e : v) x[i++] = e;
  }
  double& operator[](int i) { return x[i]; }
  double operator[](int i) const { return x[i]; }
  double sum() const {
    double s = 0.0;
    for (int i = 0; i < p; ++i) s += x[i];
    return s;
  }
};

// Dense p x p matrix with strictly positive entries, row-major.
struct PositiveMatrix {
  int p = 0;
  std::array<double, kMaxTypes * kMaxTypes> a{};

  PositiveMatrix() = default;
  explicit PositiveMatrix(int dim) : p(dim) {
    if (dim < 2 || dim > kMaxTypes) throw std::invalid_argument("matrix dimension out of range");
  }
  static PositiveMatrix from_rows(std::initializer_list<std::initializer_list<double>> rows) {
    PositiveMatrix m(static_cast<int>(rows.size()));
    int i = 0;
    for (const auto& row : rows) {
      if (static_cast<int>(row.size()) != m.p) throw std::invalid_argument("ragged matrix literal");
      int j = 0;
      for (double e : row) m(i, j++) = e;
      ++i;
    }
    m.validate();
    return m;
  }

  double& operator()(int i, int j) { return a[static_cast<std::size_t>(i) * kMaxTypes + j]; }
  double operator()(int i, int j) const { return a[static_cast<std::size_t>(i) * kMaxTypes + j]; }

  void validate() const {
    if (p < 2 || p > kMaxTypes) throw std::invalid_argument("matrix dimension out of range");
    for (int i = 0; i < p; ++i)
      for (int j = 0; j < p; ++j)
        if (!(operator()(i, j) > 0.0) || !std::isfinite(operator()(i, j)))
          throw std::invalid_argument("matrix entries must be strictly positive and finite");
  }
};

// |M|: sum of all entries.
inline double l1_norm(const PositiveMatrix& m) {
  double s = 0.0;
  for (int i = 0; i < m.p; ++i)
    for (int j = 0; j < m.p; ++j) s += m(i, j);
  return s;
}

// v(M): minimal column sum.  v(M)|x| <= |Mx| <= |M||x| for nonnegative x.
inline double col_min(const PositiveMatrix& m) {
  double best = 0.0;
  for (int j = 0; j < m.p; ++j) {
    double c = 0.0;
    for (int i = 0; i < m.p; ++i) c += m(i, j);
    if (j == 0 || c < best) best = c;
  }
  return best;
}

inline double min_entry(const PositiveMatrix& m) {
  double v = m(0, 0);
  for (int i = 0; i < m.p; ++i)
    for (int j = 0; j < m.p; ++j) v = std::min(v, m(i, j));
  return v;
}

inline double max_entry(const PositiveMatrix& m) {
  double v = m(0, 0);
  for (int i = 0; i < m.p; ++i)
    for (int j = 0; j < m.p; ++j) v = std::max(v, m(i, j));
  return v;
}

inline PositiveMatrix multiply(const PositiveMatrix& l, const PositiveMatrix& r) {
  if (l.p != r.p) throw std::invalid_argument("dimension mismatch");
  PositiveMatrix out(l.p);
  for (int i = 0; i < l.p; ++i)
    for (int j = 0; j < l.p; ++j) {
      double s = 0.0;
      for (int k = 0; k < l.p; ++k) s += l(i, k) * r(k, j);
      out(i, j) = s;
    }
  return out;
}

inline PositiveMatrix transpose(const PositiveMatrix& m) {
  PositiveMatrix out(m.p);
  for (int i = 0; i < m.p; ++i)
    for (int j = 0; j < m.p; ++j) out(i, j) = m(j, i);
  return out;
}

// A positive matrix together with a certificate that all entries agree
// within the factor `bound`:  max entry <= bound * min entry.
struct SBMatrix {
  PositiveMatrix base;
  double bound = 1.0;

  static SBMatrix certify(const PositiveMatrix& m, double bound) {
    m.validate();
    if (!(bound >= 1.0)) throw std::invalid_argument("comparability bound must be >= 1");
    const double ratio = max_entry(m) / min_entry(m);
    if (ratio > bound * (1.0 + 1e-12))
      throw std::invalid_argument("matrix violates declared comparability bound");
    return SBMatrix{m, bound};
  }
};

// Constants of the norm-comparison inequalities on the class of matrices
// with entries comparable within B:  for such M, N and any directions x, y,
//   |Mx|, |yM|, |yMx| and |MN| all agree with |M| (resp. |M||N|) within
//   delta = p^2 B^2.
struct ComparabilityConstants {
  double delta;
  double log_delta;
};

inline ComparabilityConstants comparability_constants(double bound, int p) {
  if (!(bound >= 1.0) || p < 2) throw std::invalid_argument("bad comparability parameters");
  const double delta = static_cast<double>(p) * static_cast<double>(p) * bound * bound;
  return ComparabilityConstants{delta, std::log(delta)};
}

enum class Flavor { Row, Column };

// Strictly positive direction on the unit simplex (L1-normalized).
struct ProjectivePoint {
  int p = 0;
  Flavor flavor = Flavor::Row;
  std::array<double, kMaxTypes> x{};

  double operator[](int i) const { return x[i]; }

  static ProjectivePoint uniform(int p, Flavor flavor = Flavor::Row) {
    if (p < 2 || p > kMaxTypes) throw std::invalid_argument("dimension out of range");
    ProjectivePoint pt;
    pt.p = p;
    pt.flavor = flavor;
    for (int i = 0; i < p; ++i) pt.x[i] = 1.0 / p;
    return pt;
  }

  static ProjectivePoint from_coords(std::span<const double> coords,
                                     Flavor flavor = Flavor::Row) {
    const int p = static_cast<int>(coords.size());
    if (p < 2 || p > kMaxTypes) throw std::invalid_argument("dimension out of range");
    ProjectivePoint pt;
    pt.p = p;
    pt.flavor = flavor;
    double s = 0.0;
    for (int i = 0; i < p; ++i) {
      if (!(coords[i] > 0.0) || !std::isfinite(coords[i]))
        throw std::invalid_argument("direction coordinates must be strictly positive");
      s += coords[i];
    }
    for (int i = 0; i < p; ++i) pt.x[i] = std::max(coords[i] / s, kSimplexFloor);
    return pt;
  }
};

// Result of one projective step: the new direction and the log of the norm
// gained, i.e. log|xM| for row flavor or log|Mx| for column flavor.
struct ProjectiveStep {
  ProjectivePoint image;
  double log_norm;
};

inline ProjectiveStep project_act(const ProjectivePoint& pt, const PositiveMatrix& m) {
  if (pt.p != m.p) throw std::invalid_argument("dimension mismatch");
  ProjectiveStep out;
  out.image.p = pt.p;
  out.image.flavor = pt.flavor;
  double norm = 0.0;
  if (pt.flavor == Flavor::Row) {
    for (int j = 0; j < m.p; ++j) {
      double s = 0.0;
      for (int i = 0; i < m.p; ++i) s += pt.x[i] * m(i, j);
      out.image.x[j] = s;
      norm += s;
    }
  } else {
    for (int i = 0; i < m.p; ++i) {
      double s = 0.0;
      for (int j = 0; j < m.p; ++j) s += m(i, j) * pt.x[j];
      out.image.x[i] = s;
      norm += s;
    }
  }
  const double inv = 1.0 / norm;
  for (int i = 0; i < m.p; ++i)
    out.image.x[i] = std::max(out.image.x[i] * inv, kSimplexFloor);
  out.log_norm = std::log(norm);
  return out;
}

// min_i x_i / y_i, the one-sided part of the projective metric.
inline double direction_ratio_min(const ProjectivePoint& a, const ProjectivePoint& b) {
  double best = a.x[0] / b.x[0];
  for (int i = 1; i < a.p; ++i) best = std::min(best, a.x[i] / b.x[i]);
  return best;
}

// Projective distance d(x, y) = (1 - m(x,y) m(y,x)) / (1 + m(x,y) m(y,x)),
// where m(x, y) = min_i x_i / y_i.  Values lie in [0, 1); d = 0 iff x = y.
inline double hilbert_distance(const ProjectivePoint& a, const ProjectivePoint& b) {
  if (a.p != b.p) throw std::invalid_argument("dimension mismatch");
  const double s = direction_ratio_min(a, b) * direction_ratio_min(b, a);
  double d = (1.0 - s) / (1.0 + s);
  if (d < 0.0) d = 0.0;  // guard: s can exceed 1 by rounding when a == b
  return d;
}

// Birkhoff-type contraction coefficient
//   c(M) = max_{i,j,k,l} |M(i,j)M(k,l) - M(i,l)M(k,j)| /
//                        (M(i,j)M(k,l) + M(i,l)M(k,j)).
// The projective action of M contracts the metric above by this factor,
// and c(M) <= (B^2 - 1)/(B^2 + 1) < 1 when entries are comparable within B.
inline double contraction_coeff(const PositiveMatrix& m) {
  double best = 0.0;
  for (int i = 0; i < m.p; ++i)
    for (int k = 0; k < m.p; ++k)
      for (int j = 0; j < m.p; ++j)
        for (int l = 0; l < m.p; ++l) {
          const double u = m(i, j) * m(k, l);
          const double w = m(i, l) * m(k, j);
          const double c = std::abs(u - w) / (u + w);
          if (c > best) best = c;
        }
  return best;
}

enum class ProductOrder {
  LeftToRight,  // M_0 M_1 ... M_{n-1}: new factors multiply on the right
  RightToLeft   // M_{n-1} ... M_1 M_0: new factors multiply on the left
};

// A long product kept in the form (unit-norm matrix, log scale):
// the true product equals exp(log_scale) * unit.
struct NormalizedProduct {
  PositiveMatrix unit;
  double log_scale = 0.0;

  double log_l1_norm() const { return log_scale; }  // since |unit| == 1
};

inline NormalizedProduct product_chain(std::span<const PositiveMatrix> ms, ProductOrder order) {
  if (ms.empty()) throw std::invalid_argument("empty product");
  NormalizedProduct acc;
  acc.unit = ms.front();
  double n0 = l1_norm(acc.unit);
  for (int i = 0; i < acc.unit.p; ++i)
    for (int j = 0; j < acc.unit.p; ++j) acc.unit(i, j) /= n0;
  acc.log_scale = std::log(n0);
  for (std::size_t k = 1; k < ms.size(); ++k) {
    acc.unit = (order == ProductOrder::LeftToRight) ? multiply(acc.unit, ms[k])
                                                    : multiply(ms[k], acc.unit);
    const double n = l1_norm(acc.unit);
    for (int i = 0; i < acc.unit.p; ++i)
      for (int j = 0; j < acc.unit.p; ++j) acc.unit(i, j) /= n;
    acc.log_scale += std::log(n);
  }
  return acc;
}

// The additive random-walk functional driven by the projective chain:
// states x_0 = start, x_{k+1} = x_k . M_k, and sums S_0 = offset,
// S_{k+1} = S_k + log |x_k M_k|, so S_n = offset + log |start M_0...M_{n-1}|.
struct CocyclePath {
  ProjectivePoint start;
  double offset = 0.0;
  std::vector<ProjectivePoint> states;  // x_0 .. x_n
  std::vector<double> sums;             // S_0 .. S_n
};

inline CocyclePath cocycle_path(const ProjectivePoint& start, double offset,
                                std::span<const PositiveMatrix> ms) {
  CocyclePath path;
  path.start = start;
  path.offset = offset;
  path.states.reserve(ms.size() + 1);
  path.sums.reserve(ms.size() + 1);
  path.states.push_back(start);
  path.sums.push_back(offset);
  ProjectivePoint cur = start;
  double s = offset;
  for (const auto& m : ms) {
    ProjectiveStep st = project_act(cur, m);
    cur = st.image;
    s += st.log_norm;
    path.states.push_back(cur);
    path.sums.push_back(s);
  }
  return path;
}

}  // namespace subcrit
