#ifndef ENTCLT_FAMILIES_HPP
#define ENTCLT_FAMILIES_HPP

#include "entclt/errors.hpp"
#include "entclt/grid.hpp"

#include <boost/math/distributions/beta.hpp>
#include <boost/math/distributions/gamma.hpp>
#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <numbers>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

namespace entclt {

/// A named density family. With `standardize` the variable is centered and
/// scaled to unit variance before `scale` is applied.
struct FamilySpec {
  std::string family = "gaussian";
  nlohmann::json params = nlohmann::json::object();
  bool standardize = false;
  double scale = 1.0;
};

inline const std::vector<std::string>& family_names() {
  static const std::vector<std::string> names{"gaussian", "uniform",          "exponential",
                                              "gamma",    "beta",             "gaussian_mixture",
                                              "triangular", "grid_file"};
  return names;
}

inline FamilySpec family_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw input_error("family spec must be a JSON object");
  FamilySpec s;
  if (!j.contains("family") || !j["family"].is_string())
    throw input_error("family spec needs a string field \"family\"");
  s.family = j["family"].get<std::string>();
  const auto& names = family_names();
  if (std::find(names.begin(), names.end(), s.family) == names.end())
    throw input_error("unknown family \"" + s.family + "\"");
  if (j.contains("params")) {
    if (!j["params"].is_object()) throw input_error("\"params\" must be an object");
    s.params = j["params"];
  }
  if (j.contains("standardize")) {
    if (!j["standardize"].is_boolean()) throw input_error("\"standardize\" must be a boolean");
    s.standardize = j["standardize"].get<bool>();
  }
  if (j.contains("scale")) {
    if (!j["scale"].is_number()) throw input_error("\"scale\" must be a number");
    s.scale = j["scale"].get<double>();
  }
  return s;
}

inline nlohmann::json family_to_json(const FamilySpec& s) {
  nlohmann::json j{{"family", s.family}, {"params", s.params}, {"standardize", s.standardize}};
  if (s.scale != 1.0) j["scale"] = s.scale;
  return j;
}

namespace detail {

struct Analytic {
  std::function<double(double)> pdf;
  std::function<double(double)> cdf;
  std::function<double(double)> ccdf;
  std::vector<double> breaks;  ///< jumps, kinks or singular points
  std::vector<double> jumps;   ///< discontinuities of the density
  bool singular = false;       ///< unbounded density; every cell gets its exact mass
  double mean = 0.0;
  double sd = 1.0;
};

inline double param(const nlohmann::json& p, const char* key, double fallback) {
  if (!p.contains(key)) return fallback;
  if (!p[key].is_number()) throw input_error(std::string("parameter \"") + key + "\" must be a number");
  return p[key].get<double>();
}

inline double required(const nlohmann::json& p, const char* key) {
  if (!p.contains(key)) throw input_error(std::string("missing parameter \"") + key + "\"");
  return param(p, key, 0.0);
}

inline std::vector<double> vector_param(const nlohmann::json& p, const char* key) {
  if (!p.contains(key) || !p[key].is_array())
    throw input_error(std::string("parameter \"") + key + "\" must be an array");
  std::vector<double> v;
  for (const auto& x : p[key]) {
    if (!x.is_number()) throw input_error(std::string("parameter \"") + key + "\" must hold numbers");
    v.push_back(x.get<double>());
  }
  return v;
}

inline double norm_cdf(double z) { return 0.5 * std::erfc(-z / std::numbers::sqrt2); }
inline double norm_pdf(double z) { return std::exp(-0.5 * z * z) / std::sqrt(2.0 * std::numbers::pi); }

inline Analytic gaussian(double mu, double sd) {
  if (!(sd > 0.0)) throw input_error("gaussian sd must be positive");
  Analytic a;
  a.pdf = [=](double x) { return norm_pdf((x - mu) / sd) / sd; };
  a.cdf = [=](double x) { return norm_cdf((x - mu) / sd); };
  a.ccdf = [=](double x) { return norm_cdf((mu - x) / sd); };
  a.mean = mu;
  a.sd = sd;
  return a;
}

inline Analytic build(const FamilySpec& s) {
  const auto& p = s.params;
  using boost::math::cdf;
  using boost::math::complement;
  if (s.family == "gaussian") return gaussian(param(p, "mean", 0.0), param(p, "sd", 1.0));
  if (s.family == "uniform") {
    const double lo = param(p, "a", 0.0), hi = param(p, "b", 1.0);
    if (!(hi > lo)) throw input_error("uniform needs a < b");
    Analytic a;
    a.pdf = [=](double x) { return (x >= lo && x <= hi) ? 1.0 / (hi - lo) : 0.0; };
    a.cdf = [=](double x) { return std::clamp((x - lo) / (hi - lo), 0.0, 1.0); };
    a.ccdf = [=](double x) { return std::clamp((hi - x) / (hi - lo), 0.0, 1.0); };
    a.breaks = {lo, hi};
    a.jumps = {lo, hi};
    a.mean = 0.5 * (lo + hi);
    a.sd = (hi - lo) / std::sqrt(12.0);
    return a;
  }
  if (s.family == "exponential") {
    const double rate = param(p, "rate", 1.0);
    if (!(rate > 0.0)) throw input_error("exponential rate must be positive");
    Analytic a;
    a.pdf = [=](double x) { return x < 0.0 ? 0.0 : rate * std::exp(-rate * x); };
    a.cdf = [=](double x) { return x <= 0.0 ? 0.0 : -std::expm1(-rate * x); };
    a.ccdf = [=](double x) { return x <= 0.0 ? 1.0 : std::exp(-rate * x); };
    a.breaks = {0.0};
    a.jumps = {0.0};
    a.mean = 1.0 / rate;
    a.sd = 1.0 / rate;
    return a;
  }
  if (s.family == "gamma") {
    const double shape = required(p, "shape"), rate = param(p, "rate", 1.0);
    if (!(shape > 0.0) || !(rate > 0.0)) throw input_error("gamma needs shape > 0 and rate > 0");
    const boost::math::gamma_distribution<double> g(shape, 1.0 / rate);
    Analytic a;
    a.pdf = [=](double x) { return x <= 0.0 ? 0.0 : boost::math::pdf(g, x); };
    a.cdf = [=](double x) { return x <= 0.0 ? 0.0 : cdf(g, x); };
    a.ccdf = [=](double x) { return x <= 0.0 ? 1.0 : cdf(complement(g, x)); };
    a.breaks = {0.0};
    a.singular = shape < 1.0;
    if (shape == 1.0) a.jumps = {0.0};
    a.mean = shape / rate;
    a.sd = std::sqrt(shape) / rate;
    return a;
  }
  if (s.family == "beta") {
    const double al = required(p, "a"), be = required(p, "b");
    if (!(al > 0.0) || !(be > 0.0)) throw input_error("beta needs a > 0 and b > 0");
    const boost::math::beta_distribution<double> b(al, be);
    Analytic a;
    a.pdf = [=](double x) { return (x <= 0.0 || x >= 1.0) ? 0.0 : boost::math::pdf(b, x); };
    a.cdf = [=](double x) { return x <= 0.0 ? 0.0 : x >= 1.0 ? 1.0 : cdf(b, x); };
    a.ccdf = [=](double x) { return x <= 0.0 ? 1.0 : x >= 1.0 ? 0.0 : cdf(complement(b, x)); };
    a.breaks = {0.0, 1.0};
    a.singular = al < 1.0 || be < 1.0;
    if (al == 1.0) a.jumps.push_back(0.0);
    if (be == 1.0) a.jumps.push_back(1.0);
    a.mean = al / (al + be);
    a.sd = std::sqrt(al * be / ((al + be) * (al + be) * (al + be + 1.0)));
    return a;
  }
  if (s.family == "gaussian_mixture") {
    auto w = vector_param(p, "weights");
    const auto mu = vector_param(p, "means");
    const auto sd = vector_param(p, "sds");
    if (w.empty() || w.size() != mu.size() || w.size() != sd.size())
      throw input_error("gaussian_mixture needs equal-length weights, means, sds");
    double total = 0.0;
    for (std::size_t k = 0; k < w.size(); ++k) {
      if (!(w[k] > 0.0) || !(sd[k] > 0.0)) throw input_error("mixture weights and sds must be positive");
      total += w[k];
    }
    for (double& x : w) x /= total;
    Analytic a;
    a.pdf = [=](double x) {
      double acc = 0.0;
      for (std::size_t k = 0; k < w.size(); ++k) acc += w[k] * norm_pdf((x - mu[k]) / sd[k]) / sd[k];
      return acc;
    };
    a.cdf = [=](double x) {
      double acc = 0.0;
      for (std::size_t k = 0; k < w.size(); ++k) acc += w[k] * norm_cdf((x - mu[k]) / sd[k]);
      return acc;
    };
    a.ccdf = [=](double x) {
      double acc = 0.0;
      for (std::size_t k = 0; k < w.size(); ++k) acc += w[k] * norm_cdf((mu[k] - x) / sd[k]);
      return acc;
    };
    double m = 0.0, m2 = 0.0;
    for (std::size_t k = 0; k < w.size(); ++k) {
      m += w[k] * mu[k];
      m2 += w[k] * (sd[k] * sd[k] + mu[k] * mu[k]);
    }
    a.mean = m;
    a.sd = std::sqrt(m2 - m * m);
    return a;
  }
  if (s.family == "triangular") {
    const double lo = param(p, "a", -1.0), c = param(p, "mode", 0.0), hi = param(p, "b", 1.0);
    if (!(lo <= c && c <= hi && lo < hi)) throw input_error("triangular needs a <= mode <= b and a < b");
    const double w = hi - lo;
    Analytic a;
    a.pdf = [=](double x) {
      if (x < lo || x > hi) return 0.0;
      if (x <= c) return c > lo ? 2.0 * (x - lo) / (w * (c - lo)) : 2.0 / w;
      return 2.0 * (hi - x) / (w * (hi - c));
    };
    a.cdf = [=](double x) {
      if (x <= lo) return 0.0;
      if (x >= hi) return 1.0;
      if (x <= c) return (x - lo) * (x - lo) / (w * (c - lo));
      return 1.0 - (hi - x) * (hi - x) / (w * (hi - c));
    };
    a.ccdf = [f = a.cdf](double x) { return 1.0 - f(x); };
    a.breaks = {lo, c, hi};
    if (c == lo) a.jumps.push_back(lo);
    if (c == hi) a.jumps.push_back(hi);
    a.mean = (lo + c + hi) / 3.0;
    a.sd = std::sqrt((lo * lo + c * c + hi * hi - lo * c - lo * hi - c * hi) / 18.0);
    return a;
  }
  throw input_error("unknown family \"" + s.family + "\"");
}

/// Reads two whitespace-separated columns x, p(x) with equal x spacing.
inline GridDensity read_grid_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw input_error("cannot open grid file \"" + path + "\"");
  std::vector<double> xs, ps;
  std::string line;
  while (std::getline(in, line)) {
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    std::replace(line.begin(), line.end(), ',', ' ');
    std::istringstream ls(line);
    double x = 0.0, v = 0.0;
    if (!(ls >> x >> v)) throw input_error("malformed line in grid file: " + line);
    xs.push_back(x);
    ps.push_back(v);
  }
  if (xs.size() < 2) throw input_error("grid file needs at least two rows");
  const double h = (xs.back() - xs.front()) / static_cast<double>(xs.size() - 1);
  if (!(h > 0.0)) throw input_error("grid file x values must increase");
  for (std::size_t i = 1; i < xs.size(); ++i)
    if (std::abs((xs[i] - xs[i - 1]) - h) > 1e-9 * h)
      throw input_error("grid file spacing is not uniform at row " + std::to_string(i));
  for (double v : ps)
    if (!(v >= 0.0) || !std::isfinite(v)) throw input_error("grid file densities must be finite and >= 0");
  GridDensity g(xs.front(), h, std::move(ps));
  return normalize(g);
}

}  // namespace detail

namespace detail {

/// Coefficients of the map Y = a X + b applied by materialize.
inline std::pair<double, double> affine_map(const FamilySpec& spec, const Analytic& fam) {
  if (spec.standardize) return {spec.scale / fam.sd, -spec.scale * fam.mean / fam.sd};
  return {spec.scale, 0.0};
}

}  // namespace detail

/// Shifts (one jump) or slightly rescales (two or more jumps) `base` so the
/// family's density jumps fall on cell edges. A histogram cell split by a jump
/// costs O(h log h) in the entropy; aligned edges remove that term.
inline GridConfig jump_aligned_grid(const FamilySpec& spec, const GridConfig& base) {
  if (spec.family == "grid_file") return base;
  const detail::Analytic fam = detail::build(spec);
  const auto [a, b] = detail::affine_map(spec, fam);
  std::vector<double> ys;
  for (double x : fam.jumps) ys.push_back(a * x + b);
  std::sort(ys.begin(), ys.end());
  if (ys.empty()) return base;
  GridConfig g = base;
  if (ys.size() >= 2) {
    const double span = ys.back() - ys.front();
    const double cells = std::max(1.0, std::round(span / base.h));
    g.h = span / cells;
  }
  const double centre = base.x0 + 0.5 * static_cast<double>(base.points - 1) * base.h;
  const double lower = centre - 0.5 * static_cast<double>(base.points) * g.h;
  const double k = std::round((ys.front() - lower) / g.h);
  g.x0 = ys.front() - k * g.h + 0.5 * g.h;
  return g;
}

/// Evaluates the family on `grid` and renormalizes. Cells containing a jump,
/// kink or singular point get their exact cell-average mass.
inline GridDensity materialize(const FamilySpec& spec, const GridConfig& grid) {
  if (grid.points < 1024) throw grid_error("materialize needs at least 2^10 grid points");
  if (!(spec.scale > 0.0)) throw input_error("family scale must be positive");

  if (spec.family == "grid_file") {
    if (!spec.params.contains("path") || !spec.params["path"].is_string())
      throw input_error("grid_file needs a string parameter \"path\"");
    GridDensity g = detail::read_grid_file(spec.params["path"].get<std::string>());
    if (spec.standardize) g = standardize(g);
    if (spec.scale != 1.0) g = scale_density(g, spec.scale);
    GridDensity r = resample(g, grid);
    if (r.truncated_mass() > max_truncated_mass)
      throw grid_error("truncated mass " + std::to_string(r.truncated_mass()) +
                       " exceeds 1e-8; widen the grid");
    return r;
  }

  const detail::Analytic fam = detail::build(spec);
  const auto [a, b] = detail::affine_map(spec, fam);
  auto to_x = [&](double y) { return (y - b) / a; };
  // upper-tail masses come from the complementary cdf to avoid cancellation
  auto cell_mass = [&](double xl, double xr) {
    const double m = xl > fam.mean ? fam.ccdf(xl) - fam.ccdf(xr) : fam.cdf(xr) - fam.cdf(xl);
    return std::max(0.0, m);
  };

  const double truncated = fam.cdf(to_x(grid.lower_edge())) + fam.ccdf(to_x(grid.upper_edge()));
  if (truncated > max_truncated_mass) {
    std::ostringstream msg;
    msg << "truncated mass " << truncated << " exceeds 1e-8 for family " << spec.family
        << "; widen the grid";
    throw grid_error(msg.str());
  }

  std::vector<double> v(grid.points);
  for (std::size_t i = 0; i < grid.points; ++i) {
    const double y = grid.x(i);
    const double xl = to_x(y - 0.5 * grid.h), xr = to_x(y + 0.5 * grid.h);
    bool straddles = fam.singular;
    for (double br : fam.breaks)
      if (br >= xl && br <= xr) straddles = true;
    if (straddles)
      v[i] = cell_mass(xl, xr) / grid.h;
    else
      v[i] = fam.pdf(to_x(y)) / a;
  }
  GridDensity raw(grid.x0, grid.h, std::move(v));
  const double m = raw.mass();
  if (!(m > 0.0)) throw grid_error("family " + spec.family + " has no mass on the grid");
  std::vector<double> w = raw.values();
  for (double& x : w) x /= m;
  return GridDensity(grid.x0, grid.h, std::move(w), truncated);
}

}  // namespace entclt

#endif
