#ifndef ENTCLT_FUNCTIONALS_HPP
#define ENTCLT_FUNCTIONALS_HPP

#include "entclt/errors.hpp"
#include "entclt/grid.hpp"

#include <boost/math/special_functions/erf.hpp>
#include <json.hpp>

#include <cmath>
#include <numbers>
#include <vector>

namespace entclt {

inline constexpr double log_sqrt_2pi = 0.91893853320467274178;   // log sqrt(2 pi)
inline constexpr double gaussian_entropy = 1.41893853320467274178;  // log sqrt(2 pi e)

inline double std_normal_pdf(double x) { return std::exp(-0.5 * x * x - log_sqrt_2pi); }

/// h(X) = -int p log p, with 0 log 0 = 0.
inline double differential_entropy(const GridDensity& p) {
  const double m = p.mass();
  double acc = 0.0;
  for (double v : p.values()) {
    const double q = v / m;
    if (q > 0.0) acc -= q * std::log(q);
  }
  return acc * p.h();
}

/// Raw D(X) = log(sd sqrt(2 pi e)) - h(X); may dip below 0 by quadrature noise.
inline double entropic_distance(const GridDensity& p) {
  const auto s = moments(p);
  return 0.5 * std::log(s.variance) + gaussian_entropy - differential_entropy(p);
}

/// D(X||Z) = int p log(p / phi) against the standard normal.
inline double relative_entropy_vs_std_normal(const GridDensity& p) {
  const double m = p.mass();
  double acc = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double q = p[i] / m;
    if (q <= 0.0) continue;
    const double x = p.x(i);
    acc += q * (std::log(q) + 0.5 * x * x + log_sqrt_2pi);
  }
  return acc * p.h();
}

inline double tv_distance(const GridDensity& p, const GridDensity& q) {
  const GridDensity* a = &p;
  GridDensity aligned;
  if (!same_spacing(p.h(), q.h()) || std::abs(p.x0() - q.x0()) > 1e-9 * p.h() || p.size() != q.size()) {
    aligned = resample(q, p.grid());
    if (aligned.truncated_mass() - q.truncated_mass() > max_truncated_mass)
      throw grid_error("tv_distance: grids cannot be aligned without losing mass");
    const double mp = a->mass(), mq = aligned.mass();
    double acc = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) acc += std::abs(p[i] / mp - aligned[i] / mq);
    return acc * p.h();
  }
  const double mp = p.mass(), mq = q.mass();
  double acc = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) acc += std::abs(p[i] / mp - q[i] / mq);
  return acc * p.h();
}

/// int |p - phi| against the standard normal, TV in [0, 2].
inline double tv_distance(const GridDensity& p) {
  const double m = p.mass();
  double acc = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) acc += std::abs(p[i] / m - std_normal_pdf(p.x(i)));
  return acc * p.h();
}

namespace detail {

/// Quantile function of the step density: linear inside each cell.
class StepQuantile {
public:
  explicit StepQuantile(const GridDensity& p) : p_(p), cdf_(p.size() + 1, 0.0) {
    const double m = p.mass();
    for (std::size_t i = 0; i < p.size(); ++i) cdf_[i + 1] = cdf_[i] + p[i] * p.h() / m;
    for (double& c : cdf_) c /= cdf_.back();
  }

  /// Evaluates at increasing u in order; keeps a running cell cursor.
  double operator()(double u) {
    while (cursor_ + 1 < p_.size() && cdf_[cursor_ + 1] < u) ++cursor_;
    const double lo = cdf_[cursor_], hi = cdf_[cursor_ + 1];
    const double frac = hi > lo ? std::clamp((u - lo) / (hi - lo), 0.0, 1.0) : 0.5;
    return p_.x(cursor_) - 0.5 * p_.h() + frac * p_.h();
  }

private:
  const GridDensity& p_;
  std::vector<double> cdf_;
  std::size_t cursor_ = 0;
};

inline constexpr std::size_t w2_nodes = 16384;

}  // namespace detail

/// W2 by the monotone coupling, midpoint rule over u with 2^14 nodes.
inline double w2_distance(const GridDensity& p, const GridDensity& q) {
  detail::StepQuantile qp(p), qq(q);
  const double K = static_cast<double>(detail::w2_nodes);
  double acc = 0.0;
  for (std::size_t k = 0; k < detail::w2_nodes; ++k) {
    const double u = (static_cast<double>(k) + 0.5) / K;
    const double d = qp(u) - qq(u);
    acc += d * d;
  }
  return std::sqrt(acc / K);
}

inline double w2_distance(const GridDensity& p) {
  detail::StepQuantile qp(p);
  const double K = static_cast<double>(detail::w2_nodes);
  double acc = 0.0;
  for (std::size_t k = 0; k < detail::w2_nodes; ++k) {
    const double u = (static_cast<double>(k) + 0.5) / K;
    const double z = -std::numbers::sqrt2 * boost::math::erfc_inv(2.0 * u);
    const double d = qp(u) - z;
    acc += d * d;
  }
  return std::sqrt(acc / K);
}

/// Upper bound log(M sd sqrt(2 pi e)) on D(X) for a density bounded by M.
inline double bounded_density_bound(double M, double sigma) {
  if (!(M > 0.0) || !(sigma > 0.0)) throw input_error("bounded_density_bound needs M > 0 and sigma > 0");
  // M sigma >= 1/sqrt(12) for every density. Midpoint variances of a grid uniform
  // fall short by a relative h^2/(2 width^2), hence the slack.
  if (M * sigma < (1.0 - 1e-4) / std::sqrt(12.0))
    throw input_error("M*sigma below 1/sqrt(12) is impossible for a probability density");
  return std::log(M * sigma) + gaussian_entropy;
}

struct DistanceReport {
  double entropy = 0.0;
  double entropic_distance = 0.0;      ///< clamped at 0
  double entropic_distance_raw = 0.0;
  double relative_entropy = 0.0;
  double tv = 0.0;
  double w2 = 0.0;
  double density_max = 0.0;
  double pinsker_slack = 0.0;    ///< D(X||Z) - tv^2/2
  double talagrand_slack = 0.0;  ///< 2 D(X||Z) - w2^2
};

inline DistanceReport distance_report(const GridDensity& p) {
  DistanceReport r;
  r.entropy = differential_entropy(p);
  r.entropic_distance_raw = entropic_distance(p);
  r.entropic_distance = std::max(0.0, r.entropic_distance_raw);
  r.relative_entropy = relative_entropy_vs_std_normal(p);
  r.tv = tv_distance(p);
  r.w2 = w2_distance(p);
  r.density_max = p.max_value() / p.mass();
  r.pinsker_slack = r.relative_entropy - 0.5 * r.tv * r.tv;
  r.talagrand_slack = 2.0 * r.relative_entropy - r.w2 * r.w2;
  return r;
}

inline nlohmann::json to_json(const DistanceReport& r) {
  return {{"entropy", r.entropy},
          {"entropic_distance", r.entropic_distance},
          {"entropic_distance_raw", r.entropic_distance_raw},
          {"relative_entropy", r.relative_entropy},
          {"tv", r.tv},
          {"w2", r.w2},
          {"density_max", r.density_max},
          {"pinsker_slack", r.pinsker_slack},
          {"talagrand_slack", r.talagrand_slack}};
}

}  // namespace entclt

#endif
