#ifndef ENTCLT_DECOMPOSITION_HPP
#define ENTCLT_DECOMPOSITION_HPP

#include "entclt/check.hpp"
#include "entclt/errors.hpp"
#include "entclt/fft.hpp"
#include "entclt/functionals.hpp"
#include "entclt/grid.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <vector>

namespace entclt {

// ---------------------------------------------------------------------------
// Quantile density decomposition

/// p = kappa p0 + (1 - kappa) p1, with p0 carried by the cells of lowest density.
struct QuantileSplit {
  double kappa = 0.5;
  double m_kappa = 0.0;        ///< density level at the boundary cell
  GridDensity p0;              ///< low part, kappa * p0 <= m_kappa
  GridDensity p1;              ///< high part, supported where p >= m_kappa
  double mass0 = 0.0;
  double mass1 = 0.0;
  std::size_t boundary_cell = 0;
  double boundary_fraction = 0.0;  ///< share of the boundary cell's mass in the low part
};

/// Cells sorted by (value, index); mass accumulates into the low part until it
/// reaches kappa, splitting the boundary cell fractionally.
inline QuantileSplit quantile_split(const GridDensity& density, double kappa) {
  if (!(kappa > 0.0 && kappa < 1.0)) throw input_error("quantile_split needs 0 < kappa < 1");
  const GridDensity p = normalize(density);
  const std::size_t n = p.size();
  const double h = p.h();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return p[a] < p[b] || (p[a] == p[b] && a < b);
  });

  std::vector<double> low(n, 0.0), high(n, 0.0);
  double acc = 0.0;
  std::size_t pos = 0;
  QuantileSplit out;
  out.kappa = kappa;
  for (; pos < n; ++pos) {
    const std::size_t i = order[pos];
    const double w = p[i] * h;
    if (acc + w >= kappa) {
      const double frac = w > 0.0 ? (kappa - acc) / w : 1.0;
      low[i] = frac * p[i];
      high[i] = p[i] - low[i];
      out.boundary_cell = i;
      out.boundary_fraction = frac;
      out.m_kappa = p[i];
      acc = kappa;
      ++pos;
      break;
    }
    low[i] = p[i];
    acc += w;
  }
  for (; pos < n; ++pos) high[order[pos]] = p[order[pos]];

  double m0 = 0.0, m1 = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    m0 += low[i];
    m1 += high[i];
  }
  out.mass0 = m0 * h;
  out.mass1 = m1 * h;
  for (double& v : low) v /= kappa;
  for (double& v : high) v /= 1.0 - kappa;
  out.p0 = GridDensity(p.x0(), h, std::move(low));
  out.p1 = GridDensity(p.x0(), h, std::move(high));
  return out;
}

/// Measured m_kappa sigma sqrt(2 pi) against e^{(D + 1)/(1 - kappa)}.
inline BoundCheck quantile_bound_check(const GridDensity& p, double kappa) {
  const auto split = quantile_split(p, kappa);
  const double sigma = moments(p).sd();
  const double measured = split.m_kappa * sigma * std::sqrt(2.0 * std::numbers::pi);
  const double envelope = std::exp((entropic_distance(p) + 1.0) / (1.0 - kappa));
  return BoundCheck::make("quantile_level", measured, envelope);
}

struct SplitEntropyReport {
  double d0 = 0.0, d1 = 0.0;        ///< D of the low and high parts
  double sigma = 0.0, sigma0 = 0.0, sigma1 = 0.0;
  BoundCheck entropy_split;         ///< kappa D0 + (1-kappa) D1 <= D - kappa log kappa - ...
  BoundCheck sigma0_lower;          ///< sigma e^{-(D+4)/kappa} < sigma0, reported as lower/sigma0
  BoundCheck sigma1_lower;
};

inline SplitEntropyReport split_entropy_check(const GridDensity& p, double kappa) {
  const auto split = quantile_split(p, kappa);
  SplitEntropyReport r;
  const double D = entropic_distance(p);
  r.sigma = moments(p).sd();
  r.sigma0 = moments(split.p0).sd();
  r.sigma1 = moments(split.p1).sd();
  r.d0 = entropic_distance(split.p0);
  r.d1 = entropic_distance(split.p1);
  const double lhs = kappa * r.d0 + (1.0 - kappa) * r.d1;
  const double rhs = D - kappa * std::log(kappa) - (1.0 - kappa) * std::log1p(-kappa);
  r.entropy_split = BoundCheck::make("split_entropy", lhs, rhs, 1e-7);
  const double lo0 = r.sigma * std::exp(-(D + 4.0) / kappa);
  const double lo1 = r.sigma * std::exp(-(D + 4.0) / (1.0 - kappa));
  // strict inequality: lower bound strictly below the part's sd
  r.sigma0_lower = BoundCheck::make("split_sd_low", lo0, r.sigma0);
  r.sigma0_lower.passed = lo0 < r.sigma0;
  r.sigma1_lower = BoundCheck::make("split_sd_high", lo1, r.sigma1);
  r.sigma1_lower.passed = lo1 < r.sigma1;
  return r;
}

// ---------------------------------------------------------------------------
// Block repacking

struct BlockPlan {
  std::size_t N = 1;
  std::vector<std::size_t> cuts;          ///< n_0 = 0 < ... <= n_N = n
  std::vector<double> block_variances;
  double max_variance = 0.0;              ///< sigma^2 = max_l sigma_l^2

  /// N <= 1/(2 sigma^2), where the (1/(2N), 2/N) window is guaranteed.
  bool window_applies() const { return static_cast<double>(N) * 2.0 * max_variance <= 1.0 + 1e-12; }

  /// Indices of blocks whose variance falls outside (1/(2N), 2/N).
  std::vector<std::size_t> window_violations() const {
    std::vector<std::size_t> bad;
    const double n = static_cast<double>(N);
    for (std::size_t k = 0; k < block_variances.size(); ++k)
      if (!(block_variances[k] > 0.5 / n && block_variances[k] < 2.0 / n)) bad.push_back(k);
    return bad;
  }
};

/// n_k = max{l <= n : sigma_1^2 + ... + sigma_l^2 <= k/N}. Throws a violation
/// when the variance window is guaranteed but fails.
inline BlockPlan repack(std::span<const double> variances, std::size_t N) {
  const std::size_t n = variances.size();
  if (n == 0) throw input_error("repack needs at least one variance");
  if (N < 1 || N > n) throw input_error("repack needs 1 <= N <= n");
  double total = 0.0;
  for (double v : variances) {
    if (!(v > 0.0)) throw input_error("repack needs positive variances");
    total += v;
  }
  if (std::abs(total - 1.0) > 1e-12) throw input_error("repack needs variances summing to 1");

  BlockPlan plan;
  plan.N = N;
  plan.max_variance = *std::max_element(variances.begin(), variances.end());
  plan.cuts.assign(N + 1, 0);
  std::vector<double> cum(n + 1, 0.0);
  for (std::size_t l = 0; l < n; ++l) cum[l + 1] = cum[l] + variances[l];
  std::size_t l = 0;
  for (std::size_t k = 1; k <= N; ++k) {
    const double level = static_cast<double>(k) / static_cast<double>(N) + 1e-12;
    while (l < n && cum[l + 1] <= level) ++l;
    plan.cuts[k] = l;
  }
  plan.cuts[N] = n;
  for (std::size_t k = 1; k <= N; ++k) plan.block_variances.push_back(cum[plan.cuts[k]] - cum[plan.cuts[k - 1]]);
  if (plan.window_applies() && !plan.window_violations().empty())
    throw violation_error("block variance outside (1/(2N), 2/N) although N <= 1/(2 sigma^2)");
  return plan;
}

/// Lattice convolution kept on a fixed window.
inline GridDensity convolve_on(const GridDensity& p, const GridDensity& q, const GridConfig& window) {
  return fit_to_window(convolve(p, q), window);
}

inline GridDensity convolve_all(std::span<const GridDensity> densities, const GridConfig& window) {
  if (densities.empty()) throw input_error("convolve_all needs at least one density");
  GridDensity acc = fit_to_window(densities[0], window);
  for (std::size_t k = 1; k < densities.size(); ++k) acc = convolve_on(acc, densities[k], window);
  return acc;
}

/// rho_k = density of V_k, the convolution of block k's summands (no rescaling).
inline std::vector<GridDensity> block_densities(std::span<const GridDensity> summands, const BlockPlan& plan) {
  if (summands.empty() || plan.cuts.back() != summands.size())
    throw input_error("block plan does not match the number of summands");
  const GridConfig window = summands[0].grid();
  std::vector<GridDensity> blocks;
  for (std::size_t k = 1; k < plan.cuts.size(); ++k) {
    if (plan.cuts[k] == plan.cuts[k - 1]) throw input_error("block " + std::to_string(k) + " is empty");
    blocks.push_back(convolve_all(summands.subspan(plan.cuts[k - 1], plan.cuts[k] - plan.cuts[k - 1]), window));
  }
  return blocks;
}

// ---------------------------------------------------------------------------
// Modified-density convolution decomposition

/// Exact eps_n = 2^{-N} sum_{k <= m0} C(N, k) as a reduced fraction.
struct BinomialTail {
  std::uint64_t numerator = 0;
  std::uint64_t denominator = 1;

  double value() const { return static_cast<double>(numerator) / static_cast<double>(denominator); }
  std::string str() const { return std::to_string(numerator) + "/" + std::to_string(denominator); }
};

inline BinomialTail binomial_tail(std::size_t N, std::size_t m0) {
  if (N > 62) throw input_error("binomial_tail supports N <= 62");
  std::uint64_t sum = 0, c = 1;
  for (std::size_t k = 0; k <= std::min(m0, N); ++k) {
    sum += c;
    c = c * (N - k) / (k + 1);
  }
  std::uint64_t den = std::uint64_t{1} << N;
  const std::uint64_t g = std::gcd(sum, den);
  return {sum / g, den / g};
}

/// 2^{-(N-1)} N^{m0}.
inline double binomial_tail_bound(std::size_t N, std::size_t m0) {
  return std::pow(2.0, -(static_cast<double>(N) - 1.0)) * std::pow(static_cast<double>(N), static_cast<double>(m0));
}

struct ConvolutionDecomposition {
  std::size_t N = 0;
  std::size_t m0 = 0;
  BinomialTail eps;
  double eps_n = 0.0;
  GridDensity p_n;    ///< q_n0 + q_n1, the density of S_n
  GridDensity p_n0;   ///< modified density q_n0 / (1 - eps_n)
  GridDensity p_n1;   ///< q_n1 / eps_n
  double q_n0_mass = 0.0;
  double q_n1_mass = 0.0;
  std::vector<double> split_levels;  ///< median level m of each rho_k
};

namespace detail {

/// Embeds a window density (x0/h integral) into a circular array of length K
/// indexed by x/h mod K and returns its real DFT scaled by h.
inline std::vector<std::complex<double>> circular_transform(const GridDensity& p, std::size_t K) {
  const double o = p.x0() / p.h();
  const long off = std::lround(o);
  if (std::abs(o - static_cast<double>(off)) > 1e-6)
    throw grid_error("decomposition needs a grid with x0/h integral (0 on the lattice)");
  std::vector<double> a(K, 0.0);
  const long k = static_cast<long>(K);
  for (std::size_t i = 0; i < p.size(); ++i) {
    const long j = ((static_cast<long>(i) + off) % k + k) % k;
    a[static_cast<std::size_t>(j)] += p.h() * p[i];
  }
  return fft::forward_real(a, K);
}

/// Inverse of circular_transform restricted to the window; negative round-off
/// is clamped and booked together with out-of-window mass.
inline GridDensity window_density(const std::vector<std::complex<double>>& spec, std::size_t K,
                                  const GridConfig& window) {
  const auto a = fft::inverse_real(spec, K);
  const long off = std::lround(window.x0 / window.h);
  const long k = static_cast<long>(K);
  std::vector<double> v(window.points);
  std::vector<bool> inside(K, false);
  double clamped = 0.0;
  for (std::size_t i = 0; i < window.points; ++i) {
    const auto j = static_cast<std::size_t>(((static_cast<long>(i) + off) % k + k) % k);
    inside[j] = true;
    double x = a[j];
    if (x < 0.0) {
      clamped -= x;
      x = 0.0;
    }
    v[i] = x / window.h;
  }
  double outside = 0.0;
  for (std::size_t j = 0; j < K; ++j)
    if (!inside[j]) outside += std::abs(a[j]);
  return GridDensity(window.x0, window.h, std::move(v), clamped + outside);
}

}  // namespace detail

/// Median-splits every block density and sums the 2^N convolution terms by a
/// dynamic program over k that tracks the number of low factors, capped at
/// m0 + 1, in the Fourier domain.
inline ConvolutionDecomposition convolution_decomposition(std::span<const GridDensity> blocks, std::size_t m0) {
  using cplx = std::complex<double>;
  const std::size_t N = blocks.size();
  if (N <= m0) throw input_error("convolution_decomposition needs N >= m0 + 1");
  const GridConfig window = blocks[0].grid();
  for (const auto& b : blocks)
    if (!same_spacing(b.h(), window.h) || std::abs(b.x0() - window.x0) > 1e-9 * window.h ||
        b.size() != window.points)
      throw grid_error("block densities must share one grid");

  const std::size_t K = 2 * fft::next_pow2(window.points);
  const std::size_t M = K / 2 + 1;
  const std::size_t buckets = m0 + 2;
  std::vector<std::vector<cplx>> state(buckets, std::vector<cplx>(M, 0.0));
  std::fill(state[0].begin(), state[0].end(), cplx(1.0, 0.0));

  ConvolutionDecomposition dec;
  dec.N = N;
  dec.m0 = m0;
  for (std::size_t k = 0; k < N; ++k) {
    const auto split = quantile_split(blocks[k], 0.5);
    dec.split_levels.push_back(split.m_kappa);
    const auto R0 = detail::circular_transform(split.p0, K);
    const auto R1 = detail::circular_transform(split.p1, K);
    std::vector<std::vector<cplx>> next(buckets, std::vector<cplx>(M, 0.0));
    for (std::size_t c = 0; c < buckets; ++c) {
      for (std::size_t j = 0; j < M; ++j) {
        const cplx s = 0.5 * state[c][j];
        next[c][j] += s * R1[j];
        next[std::min(c + 1, buckets - 1)][j] += s * R0[j];
      }
    }
    state = std::move(next);
  }

  std::vector<cplx> tail(M, 0.0);
  for (std::size_t c = 0; c + 1 < buckets; ++c)
    for (std::size_t j = 0; j < M; ++j) tail[j] += state[c][j];
  const GridDensity q0 = detail::window_density(state[buckets - 1], K, window);
  const GridDensity q1 = detail::window_density(tail, K, window);

  dec.eps = binomial_tail(N, m0);
  dec.eps_n = dec.eps.value();
  dec.q_n0_mass = q0.mass();
  dec.q_n1_mass = q1.mass();
  std::vector<double> pn(window.points), p0(window.points), p1(window.points);
  for (std::size_t i = 0; i < window.points; ++i) {
    pn[i] = q0[i] + q1[i];
    p0[i] = q0[i] / (1.0 - dec.eps_n);
    p1[i] = q1[i] / dec.eps_n;
  }
  const double lost = q0.truncated_mass() + q1.truncated_mass();
  if (lost > max_truncated_mass)
    throw grid_error("decomposition lost mass " + std::to_string(lost) + " to the grid window");
  dec.p_n = GridDensity(window.x0, window.h, std::move(pn), lost);
  dec.p_n0 = GridDensity(window.x0, window.h, std::move(p0), q0.truncated_mass() / (1.0 - dec.eps_n));
  dec.p_n1 = GridDensity(window.x0, window.h, std::move(p1), q1.truncated_mass() / dec.eps_n);
  return dec;
}

/// Rosenthal-type constants for E|S_n|^s under Var(S_n) = 1: E|S_n| <= 1 and
/// E S_n^2 = 1; C_3 = 2; E S_n^4 = 3 - 3 sum sigma_k^4 + sum E X_k^4 <= 3(1 + L_4).
inline double moment_gap_envelope(std::size_t N, std::size_t m0, int s, double L_s) {
  const double n = static_cast<double>(N);
  const double m = static_cast<double>(m0);
  switch (s) {
    case 0:
      return std::pow(2.0, -(n - 2.0)) * std::pow(n, m);
    case 1:
    case 2:
      return std::pow(2.0, -(n - 3.0)) * std::pow(n, m + s);
    case 3:
      return (1.0 + L_s) * std::pow(2.0, -(n - 4.0)) * std::pow(n, m + 3.0);
    case 4:
      return 3.0 * (1.0 + L_s) * std::pow(2.0, -(n - 3.0)) * std::pow(n, m + 4.0);
    default:
      throw input_error("moment order must be in 0..4");
  }
}

/// Measured int |x|^s |p~_n - p_n| against its envelope. L_s is the Lyapunov
/// ratio of order s, used for s = 3, 4.
inline BoundCheck modified_density_gaps(const ConvolutionDecomposition& dec, const GridDensity& p_n, int s,
                                        double L_s = 0.0) {
  const GridDensity& q = dec.p_n0;
  if (!same_spacing(q.h(), p_n.h()) || q.size() != p_n.size() || std::abs(q.x0() - p_n.x0()) > 1e-9 * q.h())
    throw grid_error("modified density and p_n live on different grids");
  double acc = 0.0;
  for (std::size_t i = 0; i < q.size(); ++i) acc += std::pow(std::abs(q.x(i)), s) * std::abs(q[i] - p_n[i]);
  acc *= q.h();
  return BoundCheck::make("modified_density_moment_" + std::to_string(s), acc,
                          moment_gap_envelope(dec.N, dec.m0, s, L_s));
}

/// 2^{-(N-6)} N^{m0+1} (D + 1).
inline double entropy_gap_envelope(std::size_t N, std::size_t m0, double D) {
  return std::pow(2.0, -(static_cast<double>(N) - 6.0)) * std::pow(static_cast<double>(N), static_cast<double>(m0) + 1.0) *
         (D + 1.0);
}

/// |D(p~_n || phi) - D(p_n || phi)| against the entropy-closeness envelope.
inline BoundCheck entropy_gap(const ConvolutionDecomposition& dec, const GridDensity& p_n, double D) {
  const double measured = std::abs(relative_entropy_vs_std_normal(dec.p_n0) - relative_entropy_vs_std_normal(p_n));
  auto c = BoundCheck::make("modified_density_entropy", measured, entropy_gap_envelope(dec.N, dec.m0, D));
  c.passed = measured < c.envelope;
  return c;
}

}  // namespace entclt

#endif
