#ifndef ENTCLT_GRID_HPP
#define ENTCLT_GRID_HPP

#include "entclt/errors.hpp"
#include "entclt/fft.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace entclt {

/// Mass tolerance for a normalized density.
inline constexpr double tol_mass = 1e-9;
/// Largest truncated mass a density may carry into downstream computations.
inline constexpr double max_truncated_mass = 1e-8;
/// Largest negative mass one convolution may clamp away.
inline constexpr double max_clamped_mass = 1e-10;

/// Uniform grid x_i = x0 + i*h, i = 0..points-1. Cell i is [x_i - h/2, x_i + h/2].
struct GridConfig {
  double x0 = -32.0;
  double h = 1.0 / 256.0;
  std::size_t points = 16384;

  /// `points` cells covering [-range, range), with x = 0 on the grid when points is even.
  static GridConfig symmetric(double range, std::size_t points) {
    if (!(range > 0.0) || points < 2) throw input_error("grid needs range > 0 and >= 2 points");
    return {-range, 2.0 * range / static_cast<double>(points), points};
  }

  double x(std::size_t i) const { return x0 + static_cast<double>(i) * h; }
  double lower_edge() const { return x0 - 0.5 * h; }
  double upper_edge() const { return x(points - 1) + 0.5 * h; }
};

/// Nonnegative density values on a uniform grid.
class GridDensity {
public:
  GridDensity() = default;

  GridDensity(double x0, double h, std::vector<double> values, double truncated_mass = 0.0)
      : x0_(x0), h_(h), values_(std::move(values)), truncated_(truncated_mass) {
    if (!(h_ > 0.0) || !std::isfinite(h_) || !std::isfinite(x0_))
      throw grid_error("grid spacing must be positive and finite");
    if (values_.empty()) throw grid_error("density has no grid points");
    for (double v : values_)
      if (!std::isfinite(v) || v < 0.0) throw grid_error("density values must be finite and >= 0");
    if (!(truncated_ >= 0.0)) truncated_ = 0.0;
  }

  double x0() const { return x0_; }
  double h() const { return h_; }
  std::size_t size() const { return values_.size(); }
  double x(std::size_t i) const { return x0_ + static_cast<double>(i) * h_; }
  double operator[](std::size_t i) const { return values_[i]; }
  const std::vector<double>& values() const { return values_; }
  double truncated_mass() const { return truncated_; }
  GridConfig grid() const { return {x0_, h_, values_.size()}; }

  double mass() const {
    double s = 0.0;
    for (double v : values_) s += v;
    return s * h_;
  }

  double max_value() const { return *std::max_element(values_.begin(), values_.end()); }

private:
  double x0_ = 0.0;
  double h_ = 1.0;
  std::vector<double> values_;
  double truncated_ = 0.0;
};

/// Mean, variance and central third/fourth moments.
struct MomentSummary {
  double mean = 0.0;
  double variance = 1.0;
  double m3 = 0.0;    ///< signed third central moment
  double abs3 = 0.0;  ///< E|X - mean|^3
  double m4 = 0.0;    ///< fourth central moment
  double abs4 = 0.0;  ///< E|X - mean|^4

  double sd() const { return std::sqrt(variance); }
};

inline bool same_spacing(double h1, double h2, double rel = 1e-12) {
  return std::abs(h1 - h2) <= rel * std::max(h1, h2);
}

/// Scales to unit mass; any mass deficit is booked as truncated mass.
inline GridDensity normalize(const GridDensity& p) {
  const double m = p.mass();
  if (!(m > 0.0)) throw grid_error("cannot normalize a density with zero mass");
  std::vector<double> v = p.values();
  for (double& x : v) x /= m;
  const double deficit = std::max(0.0, 1.0 - m);
  return GridDensity(p.x0(), p.h(), std::move(v), p.truncated_mass() + deficit);
}

inline MomentSummary moments(const GridDensity& p) {
  const double m = p.mass();
  if (!(m > 0.0)) throw grid_error("moments of a zero-mass density");
  const double h = p.h() / m;
  double mean = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) mean += h * p.x(i) * p[i];
  MomentSummary s;
  s.mean = mean;
  double v = 0.0, m3 = 0.0, a3 = 0.0, m4 = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] == 0.0) continue;
    const double d = p.x(i) - mean;
    const double w = h * p[i];
    const double d2 = d * d;
    v += w * d2;
    m3 += w * d2 * d;
    a3 += w * d2 * std::abs(d);
    m4 += w * d2 * d2;
  }
  if (v < 1e-12) throw degenerate_error("variance below 1e-12");
  s.variance = v;
  s.m3 = m3;
  s.abs3 = a3;
  s.m4 = m4;
  s.abs4 = m4;
  return s;
}

/// E X^s about the origin, s >= 0.
inline double raw_moment(const GridDensity& p, int s) {
  const double h = p.h() / p.mass();
  double acc = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) acc += h * std::pow(p.x(i), s) * p[i];
  return acc;
}

/// Exact affine relabel x -> (x - mean)/sd. The grid moves with the density,
/// so no interpolation is involved.
inline GridDensity standardize(const GridDensity& p) {
  const auto s = moments(p);
  const double sd = s.sd();
  const double m = p.mass();
  std::vector<double> v = p.values();
  for (double& x : v) x *= sd / m;
  return GridDensity((p.x0() - s.mean) / sd, p.h() / sd, std::move(v), p.truncated_mass());
}

/// Density of a*X for a > 0, again an exact relabel.
inline GridDensity scale_density(const GridDensity& p, double a) {
  if (!(a > 0.0)) throw input_error("scale factor must be positive");
  std::vector<double> v = p.values();
  for (double& x : v) x /= a;
  return GridDensity(p.x0() * a, p.h() * a, std::move(v), p.truncated_mass());
}

namespace detail {

inline double sample_or_zero(const std::vector<double>& v, long i) {
  return (i < 0 || i >= static_cast<long>(v.size())) ? 0.0 : v[static_cast<std::size_t>(i)];
}

/// Four-point Lagrange interpolation; falls back to linear where the cubic dips below 0.
inline double interpolate(const GridDensity& p, double x) {
  const double u = (x - p.x0()) / p.h();
  const double fl = std::floor(u);
  if (fl < -2.0 || fl > static_cast<double>(p.size()) + 1.0) return 0.0;
  const long i = static_cast<long>(fl);
  const double t = u - fl;
  const auto& v = p.values();
  const double a = sample_or_zero(v, i - 1), b = sample_or_zero(v, i);
  const double c = sample_or_zero(v, i + 1), d = sample_or_zero(v, i + 2);
  if (t == 0.0) return b;
  const double cubic = -t * (t - 1.0) * (t - 2.0) / 6.0 * a + (t + 1.0) * (t - 1.0) * (t - 2.0) / 2.0 * b -
                       (t + 1.0) * t * (t - 2.0) / 2.0 * c + (t + 1.0) * t * (t - 1.0) / 6.0 * d;
  if (cubic >= 0.0) return cubic;
  return (1.0 - t) * b + t * c;
}

}  // namespace detail

/// Interpolates onto `grid`. Mass of cells outside the target window is booked
/// as truncated mass and the result is renormalized.
inline GridDensity resample(const GridDensity& p, const GridConfig& grid) {
  std::vector<double> v(grid.points);
  for (std::size_t i = 0; i < grid.points; ++i) v[i] = detail::interpolate(p, grid.x(i));
  const double lo = grid.lower_edge(), hi = grid.upper_edge();
  double outside = 0.0, total = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    total += p[i];
    if (p.x(i) < lo || p.x(i) > hi) outside += p[i];
  }
  outside = total > 0.0 ? outside / total : 0.0;
  GridDensity raw(grid.x0, grid.h, std::move(v), p.truncated_mass() + outside);
  if (!(raw.mass() > 0.0)) throw grid_error("resampled density has no mass on the target grid");
  const double m = raw.mass();
  std::vector<double> w = raw.values();
  for (double& x : w) x /= m;
  return GridDensity(grid.x0, grid.h, std::move(w), raw.truncated_mass());
}

/// Drops cells with centers outside [lo, hi]; their mass is booked as truncated.
inline GridDensity trim(const GridDensity& p, double lo, double hi) {
  std::size_t first = 0, last = p.size();
  while (first < p.size() && p.x(first) < lo) ++first;
  while (last > first && p.x(last - 1) > hi) --last;
  if (first >= last) throw grid_error("trim window contains no grid points");
  double dropped = 0.0;
  for (std::size_t i = 0; i < first; ++i) dropped += p[i];
  for (std::size_t i = last; i < p.size(); ++i) dropped += p[i];
  std::vector<double> v(p.values().begin() + static_cast<long>(first),
                        p.values().begin() + static_cast<long>(last));
  return GridDensity(p.x(first), p.h(), std::move(v), p.truncated_mass() + dropped * p.h());
}

/// Lattice convolution of two densities sharing a spacing. Negative FFT
/// round-off is clamped to 0 and booked as truncated mass.
inline GridDensity convolve(const GridDensity& p, const GridDensity& q) {
  if (!same_spacing(p.h(), q.h())) throw grid_error("convolution needs a common grid spacing");
  const double h = p.h();
  auto c = fft::linear_convolve(p.values(), q.values());
  double clamped = 0.0;
  for (double& v : c) {
    v *= h;
    if (v < 0.0) {
      clamped -= v;
      v = 0.0;
    }
  }
  clamped *= h;
  if (clamped > max_clamped_mass)
    throw grid_error("convolution clamped mass " + std::to_string(clamped) + " exceeds 1e-10");
  return GridDensity(p.x0() + q.x0(), h, std::move(c),
                     p.truncated_mass() + q.truncated_mass() + clamped);
}

/// Copies a density onto a window of the same lattice. Mass outside the window
/// is booked as truncated; more than 1e-8 of it is an overflow error.
inline GridDensity fit_to_window(const GridDensity& p, const GridConfig& window) {
  if (!same_spacing(p.h(), window.h)) throw grid_error("window spacing differs from the density's");
  const double shift = (p.x0() - window.x0) / p.h();
  const double k = std::round(shift);
  if (std::abs(shift - k) > 1e-6) throw grid_error("density lattice is not aligned with the window");
  const auto offset = static_cast<long>(k);
  std::vector<double> v(window.points, 0.0);
  double outside = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const long j = static_cast<long>(i) + offset;
    if (j >= 0 && j < static_cast<long>(window.points))
      v[static_cast<std::size_t>(j)] = p[i];
    else
      outside += p[i];
  }
  outside *= p.h();
  if (outside > max_truncated_mass)
    throw grid_error("support overflows the grid window: lost mass " + std::to_string(outside));
  return GridDensity(window.x0, window.h, std::move(v), p.truncated_mass() + outside);
}

/// Sum of abs_s over summands divided by (sum of variances)^{s/2}, s in {3, 4}.
inline double lyapunov_ratio(std::span<const MomentSummary> summaries, int s) {
  if (summaries.empty()) throw input_error("lyapunov_ratio needs at least one summand");
  if (s != 3 && s != 4) throw input_error("lyapunov_ratio order must be 3 or 4");
  double num = 0.0, b = 0.0;
  for (const auto& m : summaries) {
    if (!(m.variance > 0.0)) throw degenerate_error("summand variance must be positive");
    num += (s == 3) ? m.abs3 : m.abs4;
    b += m.variance;
  }
  return num / std::pow(b, 0.5 * s);
}

}  // namespace entclt

#endif
