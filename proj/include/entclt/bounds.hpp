#ifndef ENTCLT_BOUNDS_HPP
#define ENTCLT_BOUNDS_HPP

#include "entclt/check.hpp"
#include "entclt/decomposition.hpp"
#include "entclt/errors.hpp"
#include "entclt/functionals.hpp"
#include "entclt/grid.hpp"
#include "entclt/spectral.hpp"

#include <json.hpp>

#include <cmath>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <numbers>
#include <span>
#include <string>
#include <vector>

namespace entclt {

// ---------------------------------------------------------------------------
// Parameter-free envelopes

/// sqrt(||f - g||^2 / 2 + ||f' - g'||^2 / 2), an upper bound on int |p - q|.
inline double tv_fourier_bound(const CharFunction& f, const CharFunction& g) {
  const double a = l2_norm_interval(f, g, 0);
  const double b = l2_norm_interval(f, g, 1);
  return std::sqrt(0.5 * a * a + 0.5 * b * b);
}

/// e^{-T^2/2} + sqrt(2 pi) int_{|x|<T} (p - phi)^2 e^{x^2/2} + 1/2 int_{|x|>=T} x^2 p
/// + int_{|x|>=T} p log p, an upper bound on D(X || Z). Cells are assigned to
/// the inner region by their centers.
inline double relative_entropy_split_bound(const GridDensity& p, double T) {
  if (!(T >= 0.0)) throw input_error("T must be nonnegative");
  const double m = p.mass();
  double inner = 0.0, second = 0.0, ent = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double x = p.x(i);
    const double q = p[i] / m;
    if (std::abs(x) < T) {
      const double d = q - std_normal_pdf(x);
      inner += d * d * std::exp(0.5 * x * x);
    } else {
      second += x * x * q;
      if (q > 0.0) ent += q * std::log(q);
    }
  }
  const double h = p.h();
  return std::exp(-0.5 * T * T) + std::sqrt(2.0 * std::numbers::pi) * inner * h + 0.5 * second * h + ent * h;
}

/// alpha^2 + 4 (||f - g_alpha|| + ||f''' - g_alpha'''||), an upper bound on D(X || Z).
inline double edgeworth_entropy_bound(const CharFunction& f, double alpha) {
  if (f.max_order < 3) throw input_error("edgeworth_entropy_bound needs derivatives up to order 3");
  const auto g = g_alpha(f.grid, alpha, 3);
  return alpha * alpha + 4.0 * (l2_norm_interval(f, g, 0) + l2_norm_interval(f, g, 3));
}

// ---------------------------------------------------------------------------
// Characteristic-function envelopes with an unspecified constant

enum class CramerForm { bounded_density, finite_entropy };

struct CramerEnvelope {
  double value = 1.0;
  bool negative = false;  ///< c too large for this probe; the value is not clamped
};

/// 1 - c min{1, s^2 t^2} / (M^2 s^2) for bounded densities, or
/// 1 - c min{1, s^2 t^2} e^{-4 D} under finite entropy.
inline CramerEnvelope cramer_envelope(double M, double sigma, double D, double t, double c, CramerForm form) {
  if (!(sigma > 0.0) || !(c >= 0.0)) throw input_error("cramer_envelope needs sigma > 0 and c >= 0");
  const double core = std::min(1.0, sigma * sigma * t * t);
  double v;
  if (form == CramerForm::bounded_density) {
    if (!(M > 0.0)) throw input_error("cramer_envelope needs M > 0");
    v = 1.0 - c * core / (M * M * sigma * sigma);
  } else {
    v = 1.0 - c * core * std::exp(-4.0 * D);
  }
  return {v, v < 0.0};
}

enum class Trend { decreasing_in_c, increasing_in_c };

/// Extremal c for which envelope(c, i) >= measured[i] at every point: the
/// largest such c for envelopes decreasing in c, the smallest otherwise.
/// Bisection to relative 1e-6; returns infinity when no finite extreme exists.
inline double fit_constant(std::span<const double> measured, const std::function<double(double, std::size_t)>& envelope,
                           Trend trend) {
  if (measured.empty()) throw input_error("fit_constant needs at least one measured point");
  auto valid = [&](double c) {
    for (std::size_t i = 0; i < measured.size(); ++i)
      if (!(envelope(c, i) >= measured[i])) return false;
    return true;
  };
  const bool decreasing = trend == Trend::decreasing_in_c;
  if (decreasing) {
    if (!valid(0.0)) throw violation_error("no constant c >= 0 makes the envelope dominate the data");
    double lo = 0.0, hi = 1.0;
    while (valid(hi)) {
      lo = hi;
      hi *= 2.0;
      if (hi > 1e300) return std::numeric_limits<double>::infinity();
    }
    while (hi - lo > 1e-6 * hi) {
      const double mid = 0.5 * (lo + hi);
      (valid(mid) ? lo : hi) = mid;
    }
    return lo;
  }
  if (valid(0.0)) return 0.0;
  double lo = 0.0, hi = 1.0;
  while (!valid(hi)) {
    lo = hi;
    hi *= 2.0;
    if (hi > 1e300) throw violation_error("no finite constant makes the envelope dominate the data");
  }
  while (hi - lo > 1e-6 * hi) {
    const double mid = 0.5 * (lo + hi);
    (valid(mid) ? hi : lo) = mid;
  }
  return hi;
}

/// Largest c with |f(t)| <= cramer_envelope(..., c) on the grid points t > 0.
inline double fit_cramer_constant(const CharFunction& f, double M, double sigma, double D, CramerForm form) {
  std::vector<double> ts, ms;
  for (std::size_t k = 0; k < f.size(); ++k) {
    if (f.t(k) <= 0.0) continue;
    ts.push_back(f.t(k));
    ms.push_back(std::abs(f.at(0, k)));
  }
  return fit_constant(
      ms, [&](double c, std::size_t i) { return cramer_envelope(M, sigma, D, ts[i], c, form).value; },
      Trend::decreasing_in_c);
}

// ---------------------------------------------------------------------------
// Tail integrals of the modified characteristic function

/// Lattice band of `p` sampled 8 times finer, so the cut at sqrt(N) falls
/// inside a short cell.
inline TGrid tail_tgrid(const GridDensity& p) { return band_tgrid(p, 8); }

/// int_{|t| >= sqrt(N)} |f^{(s)}(t)|^2 dt over the t-grid.
inline double tail_integral(const CharFunction& f, std::size_t N, int s) {
  const double a = std::sqrt(static_cast<double>(N));
  if (a > f.grid.t_max() || -a < f.grid.t_min()) throw grid_error("sqrt(N) lies beyond the t-grid");
  const double lo = l2_norm_interval(f, s, -INFINITY, -a);
  const double hi = l2_norm_interval(f, s, a, INFINITY);
  return lo * lo + hi * hi;
}

/// C N^{s + 1/2} e^{-c N} with C = e^{2D + 4}, c = c0 e^{-12 D}; orders 3 and 4
/// carry the moment factors 2(1 + L_3) and 3(1 + L_4).
inline double tail_envelope(std::size_t N, int s, double D, double L_s, double c0) {
  const double n = static_cast<double>(N);
  double factor = 1.0;
  if (s == 3) factor = 2.0 * (1.0 + L_s);
  else if (s == 4) factor = 3.0 * (1.0 + L_s);
  else if (s < 0 || s > 4) throw input_error("tail order must be in 0..4");
  return std::exp(2.0 * D + 4.0) * factor * std::pow(n, s + 0.5) * std::exp(-c0 * std::exp(-12.0 * D) * n);
}

struct TailPoint {
  std::size_t N = 0;
  double measured = 0.0;
  double L_s = 0.0;
};

/// Largest c0 for which tail_envelope dominates every point.
inline double fit_tail_constant(std::span<const TailPoint> points, int s, double D) {
  std::vector<double> ms;
  for (const auto& p : points) ms.push_back(p.measured);
  return fit_constant(
      ms, [&](double c0, std::size_t i) { return tail_envelope(points[i].N, s, D, points[i].L_s, c0); },
      Trend::decreasing_in_c);
}

inline BoundCheck tail_integral_check(const CharFunction& f_tilde, std::size_t N, int s, double D, double L_s,
                                      double c0) {
  auto c = BoundCheck::make("modified_cf_tail_" + std::to_string(s), tail_integral(f_tilde, N, s),
                            tail_envelope(N, s, D, L_s, c0));
  c.fitted_constant = c0;
  return c;
}

// ---------------------------------------------------------------------------
// Edgeworth closeness on the central interval

enum class EdgeworthForm {
  third_order,   ///< |f_n - g| <= A L_3 e^{-t^2/4} on |t| <= L_3^{-1/3}, orders 0..3
  fourth_order,  ///< |f_n - g_alpha| <= A L_4 e^{-t^2/4} on |t| <= L_4^{-1/6}, orders 0..4
};

/// Smallest A for the chosen form: the maximum of |f^{(s)} - g^{(s)}| e^{t^2/4} / L
/// over the interval and orders. A finite `t_limit` replaces the default interval.
inline double edgeworth_constant(const CharFunction& f, double alpha, double L, EdgeworthForm form,
                                 double t_limit = std::numeric_limits<double>::quiet_NaN()) {
  if (!(L > 0.0)) throw input_error("edgeworth_constant needs L > 0");
  const bool third = form == EdgeworthForm::third_order;
  const int orders = third ? 3 : 4;
  if (f.max_order < orders) throw input_error("characteristic function lacks the needed derivative orders");
  const double limit = std::isnan(t_limit) ? (third ? std::pow(L, -1.0 / 3.0) : std::pow(L, -1.0 / 6.0)) : t_limit;
  if (limit > f.grid.t_max() || -limit < f.grid.t_min()) throw grid_error("edgeworth interval exceeds the t-grid");
  const auto g = g_alpha(f.grid, third ? 0.0 : alpha, orders);
  double A = 0.0;
  for (std::size_t k = 0; k < f.size(); ++k) {
    const double t = f.t(k);
    if (std::abs(t) > limit) continue;
    const double w = std::exp(0.25 * t * t) / L;
    for (int s = 0; s <= orders; ++s) A = std::max(A, std::abs(f.at(s, k) - g.at(s, k)) * w);
  }
  return A;
}

/// alpha^2 <= L_3^2 <= L_4.
inline bool moment_chain_holds(double alpha, double L3, double L4, double tol = 1e-12) {
  return alpha * alpha <= L3 * L3 * (1.0 + tol) + tol && L3 * L3 <= L4 * (1.0 + tol) + tol;
}

// ---------------------------------------------------------------------------
// Named closed-form envelopes

/// Direct evaluation of the decomposition envelopes by role:
/// "binomial_tail", "modified_density_l1", "modified_density_moment" (order s,
/// Lyapunov ratio L) and "modified_density_entropy" (distance bound D).
inline double theory_envelope(const std::string& name, std::size_t N, std::size_t m0, double D = 0.0, int s = 0,
                              double L = 0.0) {
  if (N < m0 + 1) throw input_error("envelopes need N >= m0 + 1");
  if (name == "binomial_tail") return binomial_tail_bound(N, m0);
  if (name == "modified_density_l1") return moment_gap_envelope(N, m0, 0, 0.0);
  if (name == "modified_density_moment") return moment_gap_envelope(N, m0, s, L);
  if (name == "modified_density_entropy") return entropy_gap_envelope(N, m0, D);
  throw input_error("unknown envelope name: " + name);
}

// ---------------------------------------------------------------------------
// Persisted constants

/// Flat JSON map from constant name to fitted value.
struct Constants {
  std::map<std::string, double> values;

  bool has(const std::string& k) const { return values.count(k) != 0; }
  double at(const std::string& k) const {
    const auto it = values.find(k);
    if (it == values.end()) throw input_error("constants file lacks '" + k + "'");
    return it->second;
  }

  static Constants load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw input_error("cannot open constants file: " + path);
    nlohmann::json j;
    try {
      in >> j;
    } catch (const nlohmann::json::exception& e) {
      throw input_error("malformed constants file " + path + ": " + e.what());
    }
    Constants c;
    for (auto it = j.begin(); it != j.end(); ++it) {
      if (!it.value().is_number()) throw input_error("constant '" + it.key() + "' is not a number");
      c.values[it.key()] = it.value().get<double>();
    }
    return c;
  }

  void save(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw input_error("cannot write constants file: " + path);
    out << nlohmann::json(values).dump(2) << "\n";
  }
};

}  // namespace entclt

#endif
