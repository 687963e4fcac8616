// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 on any failure.

#include "entclt/entclt.hpp"
#include "fixtures.hpp"
#include "oracles.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <functional>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

using namespace entclt;
using fixture::standardized;

namespace {

namespace tol {
constexpr double gaussian_distance = 1e-7;
constexpr double family_distance = 1e-4;
constexpr double split_mass = 1e-9;
constexpr double reconstruction = 1e-9;
constexpr double brute_force = 1e-10;
constexpr double asymptotic_relative = 0.20;
constexpr double uniform_nD = 0.02;
constexpr double ratio_spread = 10.0;
constexpr double plancherel = 1e-6;
constexpr double cf_moment = 1e-6;
}  // namespace tol

namespace budget {
constexpr double closed_form = 5.0;
constexpr double inequality_suite = 120.0;
constexpr double decomposition = 60.0;
constexpr double block_window = 5.0;
constexpr double tail_decay = 180.0;
constexpr double asymptotic = 120.0;
constexpr double rate_ratio_shape = 180.0;
constexpr double spectral = 60.0;
}  // namespace budget

struct Outcome {
  bool passed = true;
  std::ostringstream detail;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      passed = false;
      detail << " [failed: " << what << "]";
    }
  }
};

int failures = 0;

void criterion(int id, const char* name, double budget_s, const std::function<void(Outcome&)>& body) {
  Outcome o;
  const auto t0 = std::chrono::steady_clock::now();
  try {
    body(o);
  } catch (const std::exception& e) {
    o.passed = false;
    o.detail << " [exception: " << e.what() << "]";
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (secs > budget_s) {
    o.passed = false;
    o.detail << " [over budget " << budget_s << " s]";
  }
  if (!o.passed) ++failures;
  std::printf("%s %d %s: %s (%.2f s)\n", o.passed ? "PASS" : "FAIL", id, name, o.detail.str().c_str(), secs);
  std::fflush(stdout);
}

std::string fmt(const char* f, double x) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, x);
  return buf;
}

/// Families outside the unit-test matrix, used as held-out shapes.
std::vector<FamilySpec> extra_families() {
  return {
      standardized("gamma", {{"shape", 2.0}}),
      standardized("beta", {{"a", 2.0}, {"b", 2.0}}),
      standardized("beta", {{"a", 1.0}, {"b", 3.0}}),
      standardized("triangular", {{"a", -1.0}, {"mode", 0.0}, {"b", 1.0}}),
      standardized("gaussian_mixture", {{"weights", {0.3, 0.7}}, {"means", {-1.0, 1.0}}, {"sds", {0.8, 0.8}}}),
  };
}

std::string label(const FamilySpec& f) { return f.family + family_to_json(f)["params"].dump(); }

ExperimentSpec iid(const FamilySpec& f, std::vector<std::size_t> ns) {
  ExperimentSpec s;
  s.summands = {f};
  s.n_schedule = std::move(ns);
  return s;
}

// ---------------------------------------------------------------------------

void closed_form_functionals(Outcome& o) {
  const double dz = entropic_distance(fixture::build(standardized("gaussian")));
  const double du = entropic_distance(fixture::build(standardized("uniform")));
  const double de = entropic_distance(fixture::build(standardized("exponential")));
  const double dt =
      entropic_distance(fixture::build(standardized("triangular", {{"a", -1.0}, {"mode", 0.0}, {"b", 1.0}})));
  const double eu = std::abs(du - oracle::uniform_distance());
  const double ee = std::abs(de - oracle::exponential_distance());
  const double et = std::abs(dt - oracle::triangular_distance());
  o.detail << "gaussian " << fmt("%.2e", dz) << ", |err| uniform " << fmt("%.2e", eu) << ", exponential "
           << fmt("%.2e", ee) << ", triangular " << fmt("%.2e", et);
  o.require(std::abs(dz) <= tol::gaussian_distance, "gaussian");
  o.require(eu <= tol::family_distance, "uniform");
  o.require(ee <= tol::family_distance, "exponential");
  o.require(et <= tol::family_distance, "triangular");
}

void inequality_suite(Outcome& o) {
  std::vector<std::pair<std::string, GridDensity>> densities;
  for (const auto& f : fixture::family_matrix()) densities.emplace_back(label(f), summand_density(f));
  for (const auto& f : extra_families()) densities.emplace_back(label(f), summand_density(f));
  const auto u = summand_density(standardized("uniform"));
  const auto e = summand_density(standardized("exponential"));
  densities.emplace_back("uniform_sum_4", convolve_iid(u, 4));
  densities.emplace_back("exponential_sum_4", convolve_iid(e, 4));

  std::size_t total = 0, violations = 0;
  for (const auto& [name, p] : densities) {
    auto checks = density_checks(p, moments(p).m3);
    for (const auto& c : split_checks(p)) checks.push_back(c);
    for (const auto& c : checks) {
      ++total;
      if (!c.passed) {
        ++violations;
        o.detail << " " << name << ":" << c.name << "=" << c.measured << ">" << c.envelope;
      }
    }
  }
  o.detail << densities.size() << " densities x {3 kappa, 4 T, 3 alpha, pinsker, talagrand, tv, bounded}: " << total
           << " checks, " << violations << " violations";
  o.require(densities.size() >= 6, "at least six families");
  o.require(violations == 0, "zero violations");
}

std::uint64_t choose(std::size_t n, std::size_t k) {
  std::uint64_t c = 1;
  for (std::size_t j = 1; j <= k; ++j) c = c * (n - k + j) / j;
  return c;
}

/// Accumulates every 2^N factor product into a bucket by its number of low factors.
void enumerate(const std::vector<QuantileSplit>& splits, std::size_t k, std::size_t lows, const GridDensity& acc,
               double weight, const GridConfig& window, std::vector<std::vector<double>>& buckets) {
  if (k == splits.size()) {
    for (std::size_t i = 0; i < acc.size(); ++i) buckets[lows][i] += weight * acc[i];
    return;
  }
  enumerate(splits, k + 1, lows + 1, convolve_on(acc, splits[k].p0, window), 0.5 * weight, window, buckets);
  enumerate(splits, k + 1, lows, convolve_on(acc, splits[k].p1, window), 0.5 * weight, window, buckets);
}

void decomposition_exactness(Outcome& o) {
  double worst_mass = 0.0, worst_split = 0.0;
  for (const auto& f : fixture::family_matrix()) {
    const auto p = normalize(fixture::build(f));
    for (double kappa : {0.25, 0.5, 0.75}) {
      const auto s = quantile_split(p, kappa);
      worst_mass = std::max({worst_mass, std::abs(s.mass0 - kappa), std::abs(s.p0.mass() - 1.0),
                             std::abs(s.p1.mass() - 1.0)});
      for (std::size_t i = 0; i < p.size(); ++i)
        worst_split = std::max(worst_split, std::abs(kappa * s.p0[i] + (1.0 - kappa) * s.p1[i] - p[i]));
    }
  }

  std::size_t eps_pairs = 0;
  bool eps_ok = true;
  for (std::size_t N = 1; N <= 20; ++N)
    for (std::size_t m0 = 0; m0 <= 4; ++m0) {
      std::uint64_t sum = 0;
      for (std::size_t k = 0; k <= std::min(m0, N); ++k) sum += choose(N, k);
      const auto eps = binomial_tail(N, m0);
      eps_ok = eps_ok && (eps.numerator << N) == sum * eps.denominator &&
               eps.value() <= binomial_tail_bound(N, m0) * (1.0 + 1e-15);
      ++eps_pairs;
    }

  double worst_recon = 0.0;
  const GridConfig grid{};
  for (const char* fam : {"uniform", "exponential"}) {
    for (std::size_t N : {6u, 12u, 20u}) {
      auto spec = standardized(fam);
      spec.scale = 1.0 / std::sqrt(static_cast<double>(N));
      const std::vector<GridDensity> blocks(N, materialize(spec, grid));
      const auto direct = convolve_all(blocks, grid);
      for (std::size_t m0 = 0; m0 <= 4; ++m0) {
        const auto dec = convolution_decomposition(blocks, m0);
        for (std::size_t i = 0; i < direct.size(); ++i) {
          worst_recon = std::max(worst_recon, std::abs((1.0 - dec.eps_n) * dec.p_n0[i] + dec.eps_n * dec.p_n1[i] -
                                                       dec.p_n[i]));
          worst_recon = std::max(worst_recon, std::abs(dec.p_n[i] - direct[i]));
        }
      }
    }
  }

  double worst_brute = 0.0;
  const GridConfig small{-24.0, 1.0 / 64.0, 3072};
  std::vector<double> delta(small.points, 0.0);
  delta[static_cast<std::size_t>(-small.x0 / small.h)] = 1.0 / small.h;
  const GridDensity unit(small.x0, small.h, delta);
  for (const char* fam : {"uniform", "exponential"}) {
    for (std::size_t N = 1; N <= 8; ++N) {
      auto spec = standardized(fam);
      spec.scale = 1.0 / std::sqrt(static_cast<double>(N));
      const std::vector<GridDensity> blocks(N, materialize(spec, small));
      std::vector<QuantileSplit> splits;
      for (const auto& b : blocks) splits.push_back(quantile_split(b, 0.5));
      std::vector<std::vector<double>> buckets(N + 1, std::vector<double>(small.points, 0.0));
      enumerate(splits, 0, 0, unit, 1.0, small, buckets);
      for (std::size_t m0 = 0; m0 <= 4 && m0 < N; ++m0) {
        const auto dec = convolution_decomposition(blocks, m0);
        for (std::size_t i = 0; i < small.points; ++i) {
          double q0 = 0.0, q1 = 0.0;
          for (std::size_t l = 0; l <= N; ++l) (l > m0 ? q0 : q1) += buckets[l][i];
          worst_brute = std::max({worst_brute, std::abs((1.0 - dec.eps_n) * dec.p_n0[i] - q0),
                                  std::abs(dec.eps_n * dec.p_n1[i] - q1)});
        }
      }
    }
  }

  o.detail << "split masses " << fmt("%.1e", worst_mass) << ", split reconstruction " << fmt("%.1e", worst_split)
           << ", eps_n exact on " << eps_pairs << " (N, m0) pairs, block reconstruction " << fmt("%.1e", worst_recon)
           << ", DP vs brute force " << fmt("%.1e", worst_brute);
  o.require(worst_mass <= tol::split_mass, "split masses");
  o.require(worst_split <= tol::reconstruction, "split reconstruction");
  o.require(eps_ok, "eps_n rationals and bound");
  o.require(worst_recon <= tol::reconstruction, "decomposition reconstruction");
  o.require(worst_brute <= tol::brute_force, "brute force");
}

void block_window(Outcome& o) {
  std::mt19937_64 rng(20261016);
  std::uniform_real_distribution<double> u(0.05, 1.0);
  std::uniform_int_distribution<std::size_t> len(2, 64);
  std::size_t pairs = 0, outside = 0;
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> v(len(rng));
    for (double& x : v) x = u(rng);
    const double total = std::accumulate(v.begin(), v.end(), 0.0);
    for (double& x : v) x /= total;
    const double s2 = *std::max_element(v.begin(), v.end());
    for (std::size_t N = 1; N <= v.size() && 2.0 * static_cast<double>(N) * s2 <= 1.0; ++N) {
      ++pairs;
      try {
        outside += repack(v, N).window_violations().size();
      } catch (const violation_error&) {
        ++outside;
      }
    }
  }
  o.detail << "50 variance vectors, " << pairs << " admissible (vector, N) pairs, " << outside
           << " blocks outside (1/(2N), 2/N)";
  o.require(pairs > 50, "admissible pairs exist");
  o.require(outside == 0, "window");
}

struct SlopeFit {
  double slope = 0.0, r2 = 0.0;
};

SlopeFit log_linear(const TailSweep& sw, int s) {
  std::vector<double> x, y;
  for (std::size_t i = 0; i < sw.Ns.size(); ++i) {
    x.push_back(static_cast<double>(sw.Ns[i]));
    y.push_back(std::log(sw.measured[i][static_cast<std::size_t>(s)]));
  }
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  return {sxy / sxx, sxy * sxy / (sxx * syy)};
}

void tail_decay(Outcome& o) {
  const auto Ns = default_tail_Ns();
  const std::size_t n = 32;
  struct Family {
    const char* name;
    ExperimentSpec spec;
    std::vector<SummandInfo> table;
    TailSweep sweep;
  };
  std::vector<Family> fams;
  for (const char* name : {"uniform", "exponential"}) {
    Family f{name, iid(standardized(name), {n}), {}, {}};
    f.table = summand_table(f.spec);
    f.sweep = tail_sweep(f.spec, n, Ns);
    fams.push_back(std::move(f));
  }
  bool decreasing = true;
  double worst_r2 = 1.0, worst_slope = -INFINITY;
  for (const auto& f : fams)
    for (int s : {0, 1, 3}) {
      for (std::size_t i = 1; i < Ns.size(); ++i)
        decreasing = decreasing && f.sweep.measured[i][s] < f.sweep.measured[i - 1][s];
      const auto fit = log_linear(f.sweep, s);
      worst_r2 = std::min(worst_r2, fit.r2);
      worst_slope = std::max(worst_slope, fit.slope);
    }

  auto fit = [&](const Family& f) {
    double c = INFINITY;
    for (int s : {0, 1, 3}) {
      const double L = lyapunov_for(f.spec, f.table, n, s);
      c = std::min(c, fit_tail_constant(f.sweep.points(s, L), s, f.table[0].D));
    }
    return c;
  };
  // Calibrate on the uniform, then check the envelope on both families.
  const double c0 = fit(fams[0]);
  const double c0_heldout = fit(fams[1]);
  std::size_t checks = 0, violations = 0;
  for (const auto& f : fams)
    for (int s : {0, 1, 3}) {
      const double L = lyapunov_for(f.spec, f.table, n, s);
      for (const auto& pt : f.sweep.points(s, L)) {
        ++checks;
        if (!(pt.measured <= tail_envelope(pt.N, s, f.table[0].D, L, c0))) ++violations;
      }
    }
  o.detail << "N = 6..16, s in {0,1,3}: monotone " << (decreasing ? "yes" : "no") << ", log-slope max "
           << fmt("%.3f", worst_slope) << ", R^2 min " << fmt("%.4f", worst_r2) << "; c0 fitted on uniform "
           << fmt("%.3f", c0) << " (exponential alone " << fmt("%.3f", c0_heldout) << "), " << violations << "/" << checks << " violations on uniform + held-out exponential";
  o.require(decreasing, "monotone decrease");
  o.require(worst_slope < 0.0, "negative log-slope");
  o.require(c0 > 0.0 && std::isfinite(c0) && c0_heldout > 0.0, "fitted c0 > 0");
  o.require(violations == 0, "envelope dominates");
}

void asymptotic(Outcome& o) {
  const auto exp_rows = run_scan(iid(standardized("exponential"), {16, 32, 64, 128}));
  const auto uni_rows = run_scan(iid(standardized("uniform"), {16, 32, 64, 128}));
  const double target = (1.0 / 12.0) * 2.0 * 2.0;
  const double nD = exp_rows.back().nD;
  bool monotone = true;
  for (std::size_t i = 1; i < exp_rows.size(); ++i) monotone = monotone && exp_rows[i].nD < exp_rows[i - 1].nD;
  const double rel = std::abs(nD - target) / target;
  o.detail << "exponential n D(S_128) = " << fmt("%.5f", nD) << " vs 1/3 (rel " << fmt("%.4f", rel)
           << "), monotone in n: " << (monotone ? "yes" : "no") << "; uniform n D(S_128) = "
           << fmt("%.2e", uni_rows.back().nD);
  o.require(rel <= tol::asymptotic_relative, "exponential within 20%");
  o.require(monotone, "exponential monotone");
  o.require(uni_rows.back().nD < tol::uniform_nD, "uniform below 0.02");
}

void rate_ratio_shape(Outcome& o) {
  const auto calibration = load_experiments(std::string(ENTCLT_SOURCE_DIR) + "/specs/calibration.json");
  const auto heldout = load_experiments(std::string(ENTCLT_SOURCE_DIR) + "/specs/heldout.json");

  double worst_tv = 0.0, worst_D = 0.0;
  std::string worst_tv_f, worst_D_f;
  std::size_t families = 0;
  auto spread = [&](const ExperimentSpec& spec, const std::vector<ExperimentRow>& rows) {
    if (spec.summands[0].family == "gaussian") return;
    ++families;
    double tmin = INFINITY, tmax = 0.0, dmin = INFINITY, dmax = 0.0;
    for (const auto& r : rows) {
      tmin = std::min(tmin, r.tv_over_L3);
      tmax = std::max(tmax, r.tv_over_L3);
      dmin = std::min(dmin, r.D_over_L4);
      dmax = std::max(dmax, r.D_over_L4);
    }
    if (tmax / tmin > worst_tv) worst_tv = tmax / tmin, worst_tv_f = spec_label(spec);
    if (dmax / dmin > worst_D) worst_D = dmax / dmin, worst_D_f = spec_label(spec);
  };
  for (const auto& s : calibration) spread(s, run_scan(s));

  const Constants k = fit_constants(std::span<const ExperimentSpec>(calibration));
  const auto rep = verify_suite(std::span<const ExperimentSpec>(heldout), &k);
  for (const auto& s : heldout) spread(s, run_scan(s));
  std::size_t fitted = 0;
  for (const auto& c : rep.checks)
    if (c.fitted_constant && c.gating) ++fitted;
  o.detail << families << " families, n = 16..128: max/min of TV/L3 " << fmt("%.2f", worst_tv) << " (" << worst_tv_f
           << "), of D/L4 " << fmt("%.2f", worst_D) << " (" << worst_D_f << "); held-out: " << rep.checks.size()
           << " checks (" << fitted << " with fitted constants), " << rep.gating_failures() << " gating failures";
  for (const auto& c : rep.checks)
    if (c.gating && !c.passed) o.detail << " " << c.name << "=" << c.measured << ">" << c.envelope;
  o.require(worst_tv <= tol::ratio_spread, "TV/L3 spread");
  o.require(worst_D <= tol::ratio_spread, "D/L4 spread");
  o.require(fitted > 0, "fitted checks ran");
  o.require(rep.gating_failures() == 0, "held-out violations");
}

void spectral_consistency(Outcome& o) {
  auto fams = fixture::family_matrix();
  for (const auto& f : extra_families()) fams.push_back(f);
  double worst0 = 0.0, worst3 = 0.0, worst_moment = 0.0;
  for (const auto& f : fams) {
    const auto p = fixture::build(f);
    const auto band = char_fn(p, band_tgrid(p), 3);
    const auto r = plancherel_check(p, band);
    worst0 = std::max(worst0, r.order0);
    worst3 = std::max(worst3, r.order3);

    const auto q = standardize(p);
    const auto cf = char_fn(q, default_tgrid(q), 4);
    const std::size_t zero = static_cast<std::size_t>(-cf.grid.jmin);
    for (int s = 0; s <= 4; ++s) {
      const auto m = cf.at(s, zero) / detail::i_pow(s);
      const double raw = raw_moment(q, s);
      worst_moment = std::max({worst_moment, std::abs(m.real() - raw) / std::max(1.0, std::abs(raw)),
                               std::abs(m.imag())});
    }
    worst_moment = std::max({worst_moment, std::abs(cf.at(1, zero)), std::abs(cf.at(2, zero).real() + 1.0)});
  }
  o.detail << fams.size() << " families: Plancherel order 0 " << fmt("%.1e", worst0) << ", order 3 "
           << fmt("%.1e", worst3) << "; CF moment identities at t = 0 " << fmt("%.1e", worst_moment);
  o.require(worst0 < tol::plancherel && worst3 < tol::plancherel, "Plancherel");
  o.require(worst_moment < tol::cf_moment, "moment identities");
}

}  // namespace

int main() {
  criterion(1, "closed_form_functionals", budget::closed_form, closed_form_functionals);
  criterion(2, "parameter_free_inequalities", budget::inequality_suite, inequality_suite);
  criterion(3, "decomposition_exactness", budget::decomposition, decomposition_exactness);
  criterion(4, "block_variance_window", budget::block_window, block_window);
  criterion(5, "modified_cf_tail_decay", budget::tail_decay, tail_decay);
  criterion(6, "entropy_asymptotic", budget::asymptotic, asymptotic);
  criterion(7, "rate_ratio_shape_and_heldout", budget::rate_ratio_shape, rate_ratio_shape);
  criterion(8, "spectral_self_consistency", budget::spectral, spectral_consistency);
  std::printf("%d of 8 criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
