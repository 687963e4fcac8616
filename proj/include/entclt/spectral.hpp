#ifndef ENTCLT_SPECTRAL_HPP
#define ENTCLT_SPECTRAL_HPP

#include "entclt/errors.hpp"
#include "entclt/fft.hpp"
#include "entclt/functionals.hpp"
#include "entclt/grid.hpp"

#include <array>
#include <cmath>
#include <complex>
#include <limits>
#include <numbers>
#include <ostream>
#include <vector>

namespace entclt {

using cplx = std::complex<double>;

/// Frequencies t_j = j*dt for j = jmin..jmax. A periodic grid spans exactly one
/// period 2*pi/h of a lattice density's characteristic function.
struct TGrid {
  double dt = 1.0 / 64.0;
  long jmin = -4096;
  long jmax = 4096;
  bool periodic = false;

  std::size_t size() const { return static_cast<std::size_t>(jmax - jmin + 1); }
  double t(std::size_t k) const { return static_cast<double>(jmin + static_cast<long>(k)) * dt; }
  double t_min() const { return static_cast<double>(jmin) * dt; }
  double t_max() const { return static_cast<double>(jmax) * dt; }

  static TGrid symmetric(double dt, long half) {
    if (!(dt > 0.0) || half < 1) throw input_error("t-grid needs dt > 0 and at least one positive node");
    return {dt, -half, half, false};
  }

  /// Symmetric grid on [-t_max, t_max] whose spacing is 2*pi/(K h) for a power of
  /// two K >= points, so the transform of an h-lattice density is one FFT.
  static TGrid fft_compatible(double h, std::size_t points, double t_max = 64.0,
                              double max_dt = 1.0 / 64.0) {
    std::size_t K = fft::next_pow2(points);
    while (2.0 * std::numbers::pi / (static_cast<double>(K) * h) > max_dt) K <<= 1;
    const double dt = 2.0 * std::numbers::pi / (static_cast<double>(K) * h);
    const long half = static_cast<long>(std::floor(t_max / dt + 1e-9));
    return symmetric(dt, half);
  }

  /// One full period [-pi/h, pi/h) with K = oversample * next_pow2(points) nodes.
  /// On this grid the rectangle rule integrates |f|^2 of the lattice density exactly.
  static TGrid lattice_band(double h, std::size_t points, std::size_t oversample = 1) {
    const std::size_t K = fft::next_pow2(points) * fft::next_pow2(oversample);
    const double dt = 2.0 * std::numbers::pi / (static_cast<double>(K) * h);
    return {dt, -static_cast<long>(K / 2), static_cast<long>(K / 2) - 1, true};
  }
};

inline TGrid default_tgrid(const GridDensity& p) { return TGrid::fft_compatible(p.h(), p.size()); }
inline TGrid band_tgrid(const GridDensity& p, std::size_t oversample = 1) {
  return TGrid::lattice_band(p.h(), p.size(), oversample);
}

/// Values of f^{(s)}(t), s = 0..max_order, on a t-grid.
struct CharFunction {
  TGrid grid;
  int max_order = 0;
  std::vector<std::vector<cplx>> derivs;

  std::size_t size() const { return grid.size(); }
  double t(std::size_t k) const { return grid.t(k); }
  const cplx& at(int s, std::size_t k) const { return derivs[static_cast<std::size_t>(s)][k]; }
};

namespace detail {

inline cplx i_pow(int s) {
  static constexpr std::array<cplx, 4> table{cplx{1, 0}, cplx{0, 1}, cplx{-1, 0}, cplx{0, -1}};
  return table[static_cast<std::size_t>(s % 4)];
}

inline void check_order(int max_order) {
  if (max_order < 0 || max_order > 4) throw input_error("characteristic function order must be in 0..4");
}

inline CharFunction assemble(const TGrid& g, int max_order, const std::vector<std::vector<cplx>>& raw) {
  CharFunction cf{g, max_order, {}};
  const double norm = raw[0][0].real();
  cf.derivs.assign(static_cast<std::size_t>(max_order) + 1, std::vector<cplx>(g.size()));
  for (int s = 0; s <= max_order; ++s) {
    const double sign = (s % 2 == 0) ? 1.0 : -1.0;
    for (std::size_t k = 0; k < g.size(); ++k) {
      const long j = g.jmin + static_cast<long>(k);
      const cplx v = j >= 0 ? raw[static_cast<std::size_t>(s)][static_cast<std::size_t>(j)]
                            : sign * std::conj(raw[static_cast<std::size_t>(s)][static_cast<std::size_t>(-j)]);
      cf.derivs[static_cast<std::size_t>(s)][k] = v / norm;
    }
  }
  if (g.jmin <= 0 && g.jmax >= 0) cf.derivs[0][static_cast<std::size_t>(-g.jmin)] = 1.0;
  return cf;
}

/// Returns K when dt*h*K = 2*pi for a power of two K that holds the density.
inline std::size_t fft_period(const GridDensity& p, const TGrid& g) {
  const double kr = 2.0 * std::numbers::pi / (g.dt * p.h());
  if (!(kr < 1e9)) return 0;
  const auto K = static_cast<std::size_t>(std::llround(kr));
  if (!fft::is_pow2(K) || K < p.size()) return 0;
  if (std::abs(kr / static_cast<double>(K) - 1.0) > 1e-12) return 0;
  return K;
}

}  // namespace detail

/// f^{(s)}(t) = sum_i h (i x_i)^s e^{i t x_i} p_i, divided by the total mass.
/// Uses one FFT per order when the t-grid matches the density's lattice,
/// direct summation otherwise. Only t >= 0 is computed; negative t follows
/// from f^{(s)}(-t) = (-1)^s conj f^{(s)}(t).
inline CharFunction char_fn(const GridDensity& p, const TGrid& g, int max_order) {
  detail::check_order(max_order);
  const long J = std::max(std::abs(g.jmin), std::abs(g.jmax));
  const auto nJ = static_cast<std::size_t>(J) + 1;
  std::vector<std::vector<cplx>> raw(static_cast<std::size_t>(max_order) + 1, std::vector<cplx>(nJ));
  const std::size_t K = detail::fft_period(p, g);
  const std::size_t n = p.size();
  if (K != 0) {
    std::vector<double> a(n);
    for (int s = 0; s <= max_order; ++s) {
      for (std::size_t m = 0; m < n; ++m) a[m] = p.h() * p[m] * std::pow(p.x(m), s);
      const auto R = fft::forward_real(a, K);
      const cplx is = detail::i_pow(s);
      for (std::size_t j = 0; j < nJ; ++j) {
        const std::size_t k = j % K;
        const cplx b = k <= K / 2 ? std::conj(R[k]) : R[K - k];
        const double t = static_cast<double>(j) * g.dt;
        raw[static_cast<std::size_t>(s)][j] = is * std::polar(1.0, t * p.x0()) * b;
      }
    }
  } else {
    std::size_t first = 0, last = n;
    while (first < n && p[first] == 0.0) ++first;
    while (last > first && p[last - 1] == 0.0) --last;
    for (std::size_t j = 0; j < nJ; ++j) {
      const double t = static_cast<double>(j) * g.dt;
      const cplx w = std::polar(1.0, t * p.h());
      std::array<cplx, 5> acc{};
      cplx z;
      for (std::size_t m = first; m < last; ++m) {
        if ((m - first) % 512 == 0) z = std::polar(1.0, t * p.x(m));
        const double x = p.x(m);
        double xs = p.h() * p[m];
        for (int s = 0; s <= max_order; ++s) {
          acc[static_cast<std::size_t>(s)] += xs * z;
          xs *= x;
        }
        z *= w;
      }
      for (int s = 0; s <= max_order; ++s)
        raw[static_cast<std::size_t>(s)][j] = detail::i_pow(s) * acc[static_cast<std::size_t>(s)];
    }
  }
  return detail::assemble(g, max_order, raw);
}

/// g_alpha(t) = e^{-t^2/2} (1 + alpha (it)^3 / 6) and its derivatives, from the
/// recurrence (P e^{-t^2/2})' = (P' - t P) e^{-t^2/2} on polynomial coefficients.
inline CharFunction g_alpha(const TGrid& g, double alpha, int max_order) {
  detail::check_order(max_order);
  std::vector<std::vector<cplx>> poly(static_cast<std::size_t>(max_order) + 1);
  poly[0] = {1.0, 0.0, 0.0, cplx(0.0, -alpha / 6.0)};
  for (int s = 1; s <= max_order; ++s) {
    const auto& P = poly[static_cast<std::size_t>(s) - 1];
    std::vector<cplx> Q(P.size() + 1, 0.0);
    for (std::size_t k = 1; k < P.size(); ++k) Q[k - 1] += static_cast<double>(k) * P[k];
    for (std::size_t k = 0; k < P.size(); ++k) Q[k + 1] -= P[k];
    poly[static_cast<std::size_t>(s)] = std::move(Q);
  }
  CharFunction cf{g, max_order, {}};
  cf.derivs.assign(static_cast<std::size_t>(max_order) + 1, std::vector<cplx>(g.size()));
  for (std::size_t k = 0; k < g.size(); ++k) {
    const double t = g.t(k);
    const double e = std::exp(-0.5 * t * t);
    for (int s = 0; s <= max_order; ++s) {
      const auto& P = poly[static_cast<std::size_t>(s)];
      cplx v = 0.0;
      for (auto it = P.rbegin(); it != P.rend(); ++it) v = v * t + *it;
      cf.derivs[static_cast<std::size_t>(s)][k] = v * e;
    }
  }
  return cf;
}

/// Signed function on a uniform grid.
struct GridFunction {
  double x0 = 0.0;
  double h = 1.0;
  std::vector<double> values;

  double x(std::size_t i) const { return x0 + static_cast<double>(i) * h; }
  double integral() const {
    double s = 0.0;
    for (double v : values) s += v;
    return s * h;
  }
};

/// phi_alpha(x) = phi(x) (1 + alpha (x^3 - 3x) / 6); negative for large |alpha| x.
inline GridFunction phi_alpha(const GridConfig& grid, double alpha) {
  GridFunction f{grid.x0, grid.h, std::vector<double>(grid.points)};
  for (std::size_t i = 0; i < grid.points; ++i) {
    const double x = grid.x(i);
    f.values[i] = std_normal_pdf(x) * (1.0 + alpha * (x * x * x - 3.0 * x) / 6.0);
  }
  return f;
}

namespace detail {

inline void check_same_grid(const CharFunction& f, const CharFunction& g) {
  if (f.grid.jmin != g.grid.jmin || f.grid.jmax != g.grid.jmax ||
      std::abs(f.grid.dt - g.grid.dt) > 1e-14 * f.grid.dt)
    throw grid_error("characteristic functions live on different t-grids");
}

template <class Sq>
double l2_squared(const TGrid& g, Sq sq, double a, double b) {
  if (std::isinf(a) && a < 0) a = g.t_min();
  if (std::isinf(b) && b > 0) b = g.t_max();
  const double slack = 1e-9 * g.dt;
  if (a > b || a < g.t_min() - slack || b > g.t_max() + slack)
    throw grid_error("integration interval lies outside the t-grid");
  const std::size_t n = g.size();
  if (a <= g.t_min() + slack && b >= g.t_max() - slack) {
    double acc = 0.0;
    if (g.periodic) {
      for (std::size_t k = 0; k < n; ++k) acc += sq(k);
    } else {
      for (std::size_t k = 0; k < n; ++k) acc += (k == 0 || k + 1 == n) ? 0.5 * sq(k) : sq(k);
    }
    return acc * g.dt;
  }
  // trapezoid on [a, b] with linear interpolation of |u|^2 at partial cells
  double acc = 0.0;
  for (std::size_t k = 0; k + 1 < n; ++k) {
    const double t0 = g.t(k), t1 = g.t(k + 1);
    const double lo = std::max(a, t0), hi = std::min(b, t1);
    if (hi <= lo) continue;
    const double y0 = sq(k), y1 = sq(k + 1);
    const double f0 = y0 + (y1 - y0) * (lo - t0) / g.dt;
    const double f1 = y0 + (y1 - y0) * (hi - t0) / g.dt;
    acc += 0.5 * (f0 + f1) * (hi - lo);
  }
  return acc;
}

}  // namespace detail

/// ||f^{(s)}||_2 over [a, b]; infinite endpoints mean the grid ends. The full
/// grid uses the rectangle rule when periodic, the trapezoid rule otherwise.
inline double l2_norm_interval(const CharFunction& f, int s, double a = -INFINITY, double b = INFINITY) {
  if (s > f.max_order) throw input_error("order exceeds the characteristic function's max_order");
  const auto& d = f.derivs[static_cast<std::size_t>(s)];
  return std::sqrt(detail::l2_squared(f.grid, [&](std::size_t k) { return std::norm(d[k]); }, a, b));
}

/// ||f^{(s)} - g^{(s)}||_2 over [a, b].
inline double l2_norm_interval(const CharFunction& f, const CharFunction& g, int s, double a = -INFINITY,
                               double b = INFINITY) {
  if (s > f.max_order || s > g.max_order) throw input_error("order exceeds an operand's max_order");
  detail::check_same_grid(f, g);
  const auto& u = f.derivs[static_cast<std::size_t>(s)];
  const auto& v = g.derivs[static_cast<std::size_t>(s)];
  return std::sqrt(detail::l2_squared(f.grid, [&](std::size_t k) { return std::norm(u[k] - v[k]); }, a, b));
}

/// Grid maximum of |f(t)| over |t| >= T. Throws when the maximum sits on the
/// grid edge, where the true supremum may lie beyond the grid.
inline double cramer_delta(const CharFunction& f, double T) {
  if (!(T >= 0.0)) throw input_error("cramer_delta needs T >= 0");
  const double tmax = std::min(-f.grid.t_min(), f.grid.t_max());
  if (T > tmax) throw grid_error("T lies beyond the t-grid");
  const auto& d = f.derivs[0];
  double best = -1.0;
  std::size_t arg = 0;
  for (std::size_t k = 0; k < f.size(); ++k) {
    if (std::abs(f.t(k)) + 1e-12 < T) continue;
    const double a = std::abs(d[k]);
    if (a > best) {
      best = a;
      arg = k;
    }
  }
  const bool at_edge = arg == 0 || arg + 1 == f.size();
  if (at_edge && T < tmax - f.grid.dt)
    throw grid_error("cramer_delta: supremum attained at the t-grid edge; extend the grid");
  return best;
}

struct PlancherelReport {
  double order0 = 0.0;
  double order3 = std::numeric_limits<double>::quiet_NaN();

  double worst() const { return std::isnan(order3) ? order0 : std::max(order0, order3); }
};

/// Relative gaps |int |f|^2 dt - 2 pi int p^2 dx| / (2 pi int p^2 dx), and the
/// order-3 analogue against 2 pi int x^6 p^2 dx.
inline PlancherelReport plancherel_check(const GridDensity& p, const CharFunction& f) {
  const double m = p.mass();
  double s0 = 0.0, s3 = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double q = p[i] / m;
    const double x = p.x(i);
    s0 += q * q;
    s3 += std::pow(x, 6) * q * q;
  }
  const double two_pi = 2.0 * std::numbers::pi;
  s0 *= two_pi * p.h();
  s3 *= two_pi * p.h();
  PlancherelReport r;
  const double n0 = l2_norm_interval(f, 0);
  r.order0 = std::abs(n0 * n0 - s0) / s0;
  if (f.max_order >= 3) {
    const double n3 = l2_norm_interval(f, 3);
    r.order3 = std::abs(n3 * n3 - s3) / s3;
  }
  return r;
}

/// CSV rows: t, then Re and Im of each derivative order.
inline void write_csv(std::ostream& out, const CharFunction& f) {
  out << "t";
  for (int s = 0; s <= f.max_order; ++s) out << ",re_f" << s << ",im_f" << s;
  out << "\n";
  out.precision(17);
  for (std::size_t k = 0; k < f.size(); ++k) {
    out << f.t(k);
    for (int s = 0; s <= f.max_order; ++s) out << ',' << f.at(s, k).real() << ',' << f.at(s, k).imag();
    out << "\n";
  }
}

}  // namespace entclt

#endif
