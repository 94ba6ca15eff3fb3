// Result tables, the decay-exponent regression, and file emission
// (RFC-4180 CSV, JSON summary, markdown report).
#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "subcrit/rng.hpp"

namespace subcrit {

// Canonical number formatting for emitted tables.  %.12g keeps full working
// precision while producing identical bytes across runs and worker counts.
inline std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.12g", v);
  return std::string(buf);
}

inline std::string fmt_int(std::int64_t v) { return std::to_string(v); }

// Quotes a CSV field per RFC 4180 when it contains commas, quotes, or
// line breaks.
inline std::string csv_escape(const std::string& field) {
  bool needs_quote = false;
  for (char c : field)
    if (c == ',' || c == '"' || c == '\n' || c == '\r') { needs_quote = true; break; }
  if (!needs_quote) return field;
  std::string out = "\"";
  for (char c : field) {
    if (c == '"') out += "\"\"";
    else out += c;
  }
  out += "\"";
  return out;
}

// A rectangular string table rendered as RFC-4180 CSV with CRLF line endings.
struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  void add_row(std::vector<std::string> row) {
    if (row.size() != header.size())
      throw std::logic_error("CSV row width does not match header");
    rows.push_back(std::move(row));
  }

  std::string render() const {
    std::string out;
    auto emit = [&out](const std::vector<std::string>& cells) {
      for (std::size_t i = 0; i < cells.size(); ++i) {
        if (i) out += ',';
        out += csv_escape(cells[i]);
      }
      out += "\r\n";
    };
    emit(header);
    for (const auto& r : rows) emit(r);
    return out;
  }
};

inline void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);  // binary: keep CRLF intact
  if (!out) throw std::runtime_error("cannot write file: " + path);
  out << content;
  if (!out) throw std::runtime_error("write failed: " + path);
}

inline std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read file: " + path);
  std::string s((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return s;
}

// One row of the estimate tables: a named quantity with its design point
// (n, a, b, ell — each optional), the estimate, its standard error, and the
// replica count and seed that produced it.
struct EstimateRow {
  std::string quantity;
  std::optional<int> n;
  std::optional<double> a;
  std::optional<double> b;
  std::optional<double> ell;
  double estimate = 0;
  double stderr_ = 0;
  std::uint64_t reps = 0;
  std::uint64_t seed = 0;
};

inline CsvTable estimate_table(const std::vector<EstimateRow>& rows) {
  CsvTable t;
  t.header = {"quantity", "n", "a", "b", "ell", "estimate", "stderr", "reps", "seed"};
  for (const auto& r : rows) {
    t.add_row({r.quantity,
               r.n ? fmt_int(*r.n) : "",
               r.a ? fmt_double(*r.a) : "",
               r.b ? fmt_double(*r.b) : "",
               r.ell ? fmt_double(*r.ell) : "",
               fmt_double(r.estimate),
               fmt_double(r.stderr_),
               fmt_int(static_cast<std::int64_t>(r.reps)),
               fmt_int(static_cast<std::int64_t>(r.seed))});
  }
  return t;
}

inline nlohmann::json estimate_row_to_json(const EstimateRow& r) {
  nlohmann::json j{{"quantity", r.quantity},
                   {"estimate", r.estimate},
                   {"stderr", r.stderr_},
                   {"reps", r.reps},
                   {"seed", r.seed}};
  if (r.n) j["n"] = *r.n;
  if (r.a) j["a"] = *r.a;
  if (r.b) j["b"] = *r.b;
  if (r.ell) j["ell"] = *r.ell;
  return j;
}

inline EstimateRow estimate_row_from_json(const nlohmann::json& j) {
  EstimateRow r;
  r.quantity = j.at("quantity").get<std::string>();
  if (j.contains("n")) r.n = j.at("n").get<int>();
  if (j.contains("a")) r.a = j.at("a").get<double>();
  if (j.contains("b")) r.b = j.at("b").get<double>();
  if (j.contains("ell")) r.ell = j.at("ell").get<double>();
  r.estimate = j.at("estimate").get<double>();
  r.stderr_ = j.at("stderr").get<double>();
  r.reps = j.at("reps").get<std::uint64_t>();
  r.seed = j.at("seed").get<std::uint64_t>();
  return r;
}

// ---------------------------------------------------------------------------
// Decay-exponent regression
// ---------------------------------------------------------------------------

// Input point for the exponent fit: a survival estimate at horizon n.
struct DecayPoint {
  int n = 0;
  double estimate = 0;
  double stderr_ = 0;
};

// Weighted least-squares fit of log(estimate) - n*log(rho) against log(n).
// If the estimates follow C * rho^n * n^slope the fitted slope recovers the
// polynomial correction exponent.  The CI comes from a parametric bootstrap:
// each resample perturbs the log-estimates by their delta-method standard
// errors and refits.
struct SlopeFit {
  double slope = 0;
  double intercept = 0;   // log C
  double se_slope = 0;    // analytic WLS standard error
  double ci_lo = 0;       // bootstrap percentile CI
  double ci_hi = 0;
  int points_used = 0;
  std::vector<int> excluded;  // n values dropped (nonpositive estimates)
};

namespace detail {

struct WlsResult {
  double slope, intercept, se_slope;
};

inline WlsResult weighted_line(const std::vector<double>& x, const std::vector<double>& y,
                               const std::vector<double>& w) {
  double sw = 0, swx = 0, swy = 0, swxx = 0, swxy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sw += w[i];
    swx += w[i] * x[i];
    swy += w[i] * y[i];
    swxx += w[i] * x[i] * x[i];
    swxy += w[i] * x[i] * y[i];
  }
  const double det = sw * swxx - swx * swx;
  if (det <= 0) throw std::invalid_argument("degenerate regression design");
  WlsResult r;
  r.slope = (sw * swxy - swx * swy) / det;
  r.intercept = (swxx * swy - swx * swxy) / det;
  r.se_slope = std::sqrt(sw / det);
  return r;
}

}  // namespace detail

inline SlopeFit fit_power_law(const std::vector<DecayPoint>& points, double log_rho,
                              int bootstrap_reps = 1000, std::uint64_t seed = 1) {
  SlopeFit fit;
  std::vector<double> x, y, se_log, w;
  for (const auto& p : points) {
    if (p.n <= 0) throw std::invalid_argument("fit_power_law: n must be positive");
    if (!(p.estimate > 0) || !std::isfinite(p.estimate)) {
      fit.excluded.push_back(p.n);
      continue;
    }
    x.push_back(std::log(static_cast<double>(p.n)));
    y.push_back(std::log(p.estimate) - p.n * log_rho);
    // Delta method: sd(log est) ~= sd(est)/est.  A tiny floor keeps exact
    // synthetic inputs (stderr 0) usable.
    double s = p.stderr_ > 0 ? p.stderr_ / p.estimate : 1e-12;
    se_log.push_back(s);
    w.push_back(1.0 / (s * s));
  }
  if (x.size() < 5)
    throw std::invalid_argument("fit_power_law needs at least 5 positive estimates");
  {
    // Distinctness guard: all-equal n values make the design singular.
    double mn = x[0], mx = x[0];
    for (double v : x) { mn = std::min(mn, v); mx = std::max(mx, v); }
    if (mx - mn < 1e-12) throw std::invalid_argument("fit_power_law needs distinct n values");
  }
  const auto base = detail::weighted_line(x, y, w);
  fit.slope = base.slope;
  fit.intercept = base.intercept;
  fit.se_slope = base.se_slope;
  fit.points_used = static_cast<int>(x.size());

  std::vector<double> slopes(static_cast<std::size_t>(bootstrap_reps));
  std::vector<double> yb(y.size());
  for (int r = 0; r < bootstrap_reps; ++r) {
    RandomStream rs = RandomStream::from_key(seed, "bootstrap", static_cast<std::uint64_t>(r));
    for (std::size_t i = 0; i < y.size(); ++i)
      yb[i] = y[i] + se_log[i] * rs.normal();
    slopes[static_cast<std::size_t>(r)] = detail::weighted_line(x, yb, w).slope;
  }
  std::sort(slopes.begin(), slopes.end());
  auto pct = [&slopes](double q) {
    const double pos = q * (static_cast<double>(slopes.size()) - 1);
    const std::size_t lo = static_cast<std::size_t>(pos);
    const std::size_t hi = std::min(lo + 1, slopes.size() - 1);
    const double frac = pos - static_cast<double>(lo);
    return slopes[lo] * (1 - frac) + slopes[hi] * frac;
  };
  fit.ci_lo = pct(0.025);
  fit.ci_hi = pct(0.975);
  return fit;
}

inline nlohmann::json slope_fit_to_json(const SlopeFit& f) {
  return nlohmann::json{{"slope", f.slope},       {"intercept", f.intercept},
                        {"se_slope", f.se_slope}, {"ci_lo", f.ci_lo},
                        {"ci_hi", f.ci_hi},       {"points_used", f.points_used},
                        {"excluded", f.excluded}};
}

inline SlopeFit slope_fit_from_json(const nlohmann::json& j) {
  SlopeFit f;
  f.slope = j.at("slope").get<double>();
  f.intercept = j.at("intercept").get<double>();
  f.se_slope = j.at("se_slope").get<double>();
  f.ci_lo = j.at("ci_lo").get<double>();
  f.ci_hi = j.at("ci_hi").get<double>();
  f.points_used = j.at("points_used").get<int>();
  f.excluded = j.at("excluded").get<std::vector<int>>();
  return f;
}

}  // namespace subcrit
