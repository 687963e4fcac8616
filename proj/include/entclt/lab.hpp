#ifndef ENTCLT_LAB_HPP
#define ENTCLT_LAB_HPP

#include "entclt/bounds.hpp"
#include "entclt/check.hpp"
#include "entclt/decomposition.hpp"
#include "entclt/errors.hpp"
#include "entclt/families.hpp"
#include "entclt/functionals.hpp"
#include "entclt/grid.hpp"
#include "entclt/spectral.hpp"

#include <json.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace entclt {

/// Relative-plus-absolute slack for parameter-free checks evaluated by quadrature.
inline constexpr double quadrature_tol = 1e-6;
/// Largest allowed |Var(S_n) - 1| before the final relabel.
inline constexpr double max_variance_drift = 1e-5;

inline BoundCheck quadrature_check(std::string name, double measured, double envelope) {
  return BoundCheck::make(std::move(name), measured, envelope, quadrature_tol * std::max(1.0, std::abs(envelope)));
}

// ---------------------------------------------------------------------------
// Sums

/// Mass-exact transfer of the piecewise-constant reading of `p` onto the
/// lattice {x0 + j h}. The result covers only the cells that receive mass.
inline GridDensity rebin(const GridDensity& p, double lattice_x0, double h) {
  const double hs = p.h();
  const double lo_edge = p.x0() - 0.5 * hs;
  const double hi_edge = p.x(p.size() - 1) + 0.5 * hs;
  const long jlo = static_cast<long>(std::floor((lo_edge - lattice_x0) / h + 0.5));
  const long jhi = static_cast<long>(std::floor((hi_edge - lattice_x0) / h + 0.5));
  std::vector<double> mass(static_cast<std::size_t>(jhi - jlo + 1), 0.0);
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] == 0.0) continue;
    const double a = p.x(i) - 0.5 * hs, b = a + hs;
    long j = static_cast<long>(std::floor((a - lattice_x0) / h + 0.5));
    for (;; ++j) {
      const double ca = lattice_x0 + (static_cast<double>(j) - 0.5) * h;
      const double cb = ca + h;
      const double overlap = std::min(b, cb) - std::max(a, ca);
      if (overlap > 0.0) mass[static_cast<std::size_t>(std::clamp(j, jlo, jhi) - jlo)] += p[i] * overlap;
      if (cb >= b) break;
    }
  }
  for (double& m : mass) m /= h;
  return GridDensity(lattice_x0 + static_cast<double>(jlo) * h, h, std::move(mass), p.truncated_mass());
}

namespace detail {

/// Normalizes, enforces the mass and variance budgets, then relabels to unit variance.
inline GridDensity finish_sum(const GridDensity& s) {
  if (s.truncated_mass() > max_truncated_mass)
    throw grid_error("sum lost mass " + std::to_string(s.truncated_mass()) + " to clamping or truncation");
  const GridDensity q = normalize(s);
  const auto m = moments(q);
  if (std::abs(m.variance - 1.0) > max_variance_drift)
    throw grid_error("variance drift " + std::to_string(m.variance - 1.0) + " exceeds 1e-5");
  return standardize(q);
}

}  // namespace detail

/// Density of (X_1 + ... + X_n)/sqrt(n) for i.i.d. X_k with density `p`. Powers
/// of two use log2(n) self-convolutions, each rescaled by 1/sqrt(2) and
/// resampled onto `grid`; other n fall back to sequential accumulation.
inline GridDensity convolve_iid(const GridDensity& p, std::size_t n, const GridConfig& grid = {});

/// Density of sum a_k X_k for standardized X_k and sum a_k^2 = 1. Summands are
/// rebinned onto a lattice `refine` times finer than `grid` and accumulated in
/// order; the result is resampled onto `grid` and relabeled to unit variance.
inline GridDensity convolve_sum(std::span<const GridDensity> densities, std::span<const double> weights,
                                const GridConfig& grid = {}, std::size_t refine = 8) {
  if (densities.empty() || densities.size() != weights.size())
    throw input_error("convolve_sum needs one weight per summand");
  double sq = 0.0;
  for (double a : weights) {
    if (!(a > 0.0)) throw input_error("weights must be positive");
    sq += a * a;
  }
  if (std::abs(sq - 1.0) > 1e-12) throw input_error("weights must satisfy sum a_k^2 = 1");
  if (densities.size() == 1) return standardize(densities[0]);

  bool iid = true;
  for (std::size_t k = 1; k < densities.size() && iid; ++k)
    iid = std::abs(weights[k] - weights[0]) <= 1e-15 && densities[k].values() == densities[0].values() &&
          densities[k].h() == densities[0].h() && densities[k].x0() == densities[0].x0();
  if (iid && fft::is_pow2(densities.size())) return convolve_iid(densities[0], densities.size(), grid);

  const double hc = grid.h / static_cast<double>(refine);
  const GridConfig fine{grid.x0, hc, grid.points * refine};
  GridDensity acc;
  for (std::size_t k = 0; k < densities.size(); ++k) {
    const GridDensity part = rebin(scale_density(standardize(densities[k]), weights[k]), fine.x0, hc);
    acc = k == 0 ? fit_to_window(part, fine) : fit_to_window(convolve(acc, part), fine);
  }
  return detail::finish_sum(resample(acc, grid));
}

inline GridDensity convolve_iid(const GridDensity& p, std::size_t n, const GridConfig& grid) {
  if (n == 0) throw input_error("convolve_iid needs n >= 1");
  GridDensity s = standardize(p);
  if (n == 1) return s;
  if (!fft::is_pow2(n)) {
    std::vector<GridDensity> ds(n, s);
    std::vector<double> ws(n, 1.0 / std::sqrt(static_cast<double>(n)));
    return convolve_sum(ds, ws, grid);
  }
  for (std::size_t m = 1; m < n; m *= 2) {
    const GridDensity doubled = scale_density(convolve(s, s), 1.0 / std::numbers::sqrt2);
    s = resample(doubled, grid);
  }
  return detail::finish_sum(s);
}

/// Standardized summand density on `grid`, shifted or rescaled so jumps sit on
/// cell edges, then relabeled to exact unit grid variance.
inline GridDensity summand_density(FamilySpec spec, const GridConfig& grid = {}) {
  spec.standardize = true;
  spec.scale = 1.0;
  return standardize(materialize(spec, jump_aligned_grid(spec, grid)));
}

// ---------------------------------------------------------------------------
// Experiment specification

enum class NRuleKind { third_order, fourth_order, fixed };

struct NRule {
  NRuleKind kind = NRuleKind::fourth_order;
  std::size_t value = 0;  ///< used by `fixed`
};

/// Block count used by the decomposition checks of one row.
struct NChoice {
  std::size_t N = 0;
  std::size_t formula = 0;  ///< value of the closed-form rule (0 for fixed)
  std::size_t cap = 0;      ///< floor(1 / (2 max sigma_k^2))
  bool fallback = false;    ///< the rule gave N < 6 and the cap was used
  bool applicable = false;  ///< 6 <= N <= cap
};

/// floor(L_3^{-2/3} / 2) or floor(L_4^{-1/3} / 2), guarded by 6 <= N <= 1/(2 max sigma_k^2).
/// Below 6 the rule falls back to min(cap, n_max).
inline NChoice choose_N(const NRule& rule, double L3, double L4, double max_variance, std::size_t n_max = 16) {
  NChoice c;
  c.cap = static_cast<std::size_t>(std::floor(1.0 / (2.0 * max_variance) + 1e-9));
  switch (rule.kind) {
    case NRuleKind::third_order:
      c.formula = static_cast<std::size_t>(std::floor(0.5 * std::pow(L3, -2.0 / 3.0) + 1e-9));
      break;
    case NRuleKind::fourth_order:
      c.formula = static_cast<std::size_t>(std::floor(0.5 * std::pow(L4, -1.0 / 3.0) + 1e-9));
      break;
    case NRuleKind::fixed:
      c.N = rule.value;
      c.applicable = c.N >= 6 && c.N <= c.cap;
      return c;
  }
  c.N = std::min(c.formula, c.cap);
  if (c.N < 6) {
    c.N = std::min(c.cap, n_max);
    c.fallback = true;
  }
  c.applicable = c.N >= 6 && c.N <= c.cap;
  return c;
}

struct ExperimentSpec {
  std::vector<FamilySpec> summands;  ///< cycled to length n; one entry means i.i.d.
  std::string weight_rule = "equal";  ///< "equal", "power" or "explicit"
  double weight_power = 0.0;
  std::vector<double> weights;        ///< for "explicit"
  std::vector<std::size_t> n_schedule{16, 32, 64};
  GridConfig grid{};
  NRule n_rule{};
  std::size_t n_max_blocks = 16;
  std::size_t m0 = 3;
  std::size_t n_cap = 256;
  std::size_t tail_n = 32;
  std::vector<std::string> outputs{"functionals"};

  bool wants(const std::string& o) const { return std::find(outputs.begin(), outputs.end(), o) != outputs.end(); }
  bool iid() const { return summands.size() == 1; }

  /// a_1..a_n with sum a_k^2 = 1.
  std::vector<double> weights_for(std::size_t n) const {
    std::vector<double> a(n);
    if (weight_rule == "explicit") {
      if (weights.size() != n) throw input_error("explicit weights need n = " + std::to_string(weights.size()));
      return weights;
    }
    for (std::size_t k = 0; k < n; ++k)
      a[k] = weight_rule == "power" ? std::pow(static_cast<double>(k + 1), -weight_power) : 1.0;
    double s = 0.0;
    for (double x : a) s += x * x;
    for (double& x : a) x /= std::sqrt(s);
    return a;
  }

  const FamilySpec& summand(std::size_t k) const { return summands[k % summands.size()]; }
};

inline ExperimentSpec experiment_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw input_error("experiment spec must be a JSON object");
  ExperimentSpec s;
  try {
    if (!j.contains("summands")) throw input_error("experiment spec needs \"summands\"");
    const auto& sm = j["summands"];
    if (sm.is_array()) {
      for (const auto& e : sm) s.summands.push_back(family_from_json(e));
    } else {
      s.summands.push_back(family_from_json(sm));
    }
    if (s.summands.empty()) throw input_error("\"summands\" is empty");

    if (j.contains("n")) {
      s.n_schedule.clear();
      if (j["n"].is_array())
        for (const auto& v : j["n"]) s.n_schedule.push_back(v.get<std::size_t>());
      else
        s.n_schedule.push_back(j["n"].get<std::size_t>());
    }
    if (j.contains("weights")) {
      const auto& w = j["weights"];
      if (w.is_string()) {
        if (w.get<std::string>() != "equal") throw input_error("unknown weight rule " + w.dump());
        s.weight_rule = "equal";
      } else if (w.is_object()) {
        if (!w.contains("power")) throw input_error("weight object needs \"power\"");
        s.weight_rule = "power";
        s.weight_power = w["power"].get<double>();
      } else if (w.is_array()) {
        s.weight_rule = "explicit";
        s.weights = w.get<std::vector<double>>();
        double sq = 0.0;
        for (double a : s.weights) sq += a * a;
        if (std::abs(sq - 1.0) > 1e-12) throw input_error("explicit weights must satisfy sum a_k^2 = 1 within 1e-12");
        if (!j.contains("n")) s.n_schedule = {s.weights.size()};
      } else {
        throw input_error("\"weights\" must be \"equal\", {\"power\": p} or an array");
      }
    }
    if (j.contains("grid")) {
      const auto& g = j["grid"];
      const std::size_t points = g.value("points", std::size_t{16384});
      const double range = g.value("range", 32.0);
      s.grid = GridConfig::symmetric(range, points);
    }
    if (j.contains("N")) {
      const auto& n = j["N"];
      if (n.is_number_unsigned() || n.is_number_integer()) {
        s.n_rule = {NRuleKind::fixed, n.get<std::size_t>()};
      } else if (n == "third_order") {
        s.n_rule.kind = NRuleKind::third_order;
      } else if (n == "fourth_order") {
        s.n_rule.kind = NRuleKind::fourth_order;
      } else {
        throw input_error("\"N\" must be an integer, \"third_order\" or \"fourth_order\"");
      }
    }
    s.n_max_blocks = j.value("N_max", s.n_max_blocks);
    s.m0 = j.value("m0", s.m0);
    s.n_cap = j.value("n_cap", s.n_cap);
    s.tail_n = j.value("tail_n", s.tail_n);
    if (j.contains("outputs")) s.outputs = j["outputs"].get<std::vector<std::string>>();
  } catch (const nlohmann::json::exception& e) {
    throw input_error(std::string("malformed experiment spec: ") + e.what());
  }
  if (s.n_schedule.empty()) throw input_error("n schedule is empty");
  for (std::size_t i = 0; i < s.n_schedule.size(); ++i) {
    if (s.n_schedule[i] == 0) throw input_error("n must be positive");
    if (i > 0 && s.n_schedule[i] <= s.n_schedule[i - 1]) throw input_error("n schedule must be increasing");
  }
  if (s.n_schedule.back() > s.n_cap)
    throw input_error("n = " + std::to_string(s.n_schedule.back()) + " exceeds the cap " + std::to_string(s.n_cap));
  return s;
}

/// One spec object, or an array of them.
inline std::vector<ExperimentSpec> experiments_from_json(const nlohmann::json& j) {
  std::vector<ExperimentSpec> out;
  if (j.is_array()) {
    for (const auto& e : j) out.push_back(experiment_from_json(e));
    if (out.empty()) throw input_error("spec array is empty");
  } else {
    out.push_back(experiment_from_json(j));
  }
  return out;
}

inline std::vector<ExperimentSpec> load_experiments(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw input_error("cannot open spec file: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw input_error("malformed spec file " + path + ": " + e.what());
  }
  return experiments_from_json(j);
}

/// Family names of the summands joined by '+'.
inline std::string spec_label(const ExperimentSpec& spec) {
  std::string s;
  for (const auto& f : spec.summands) s += (s.empty() ? "" : "+") + f.family;
  return s;
}

// ---------------------------------------------------------------------------
// Scan

struct ExperimentRow {
  std::size_t n = 0;
  double L3 = 0.0, L4 = 0.0, alpha = 0.0;
  double D = 0.0;  ///< raw, may dip below 0 by quadrature noise
  double tv = 0.0, w2 = 0.0;
  double nD = 0.0;
  double tv_over_L3 = 0.0, D_over_L4 = 0.0;
  double asymptotic_nD = 0.0;  ///< n alpha^2 / 12
  double relative_entropy = 0.0;
  double sum_a4 = 0.0, max_abs4 = 0.0;
  NChoice blocks;
  std::vector<BoundCheck> checks;
};

/// Per-summand quantities shared by every row of a scan.
struct SummandInfo {
  FamilySpec spec;
  GridDensity density;
  MomentSummary moments;
  double D = 0.0;
  double M = 0.0;  ///< max density, so M sigma with sigma = 1
};

inline std::vector<SummandInfo> summand_table(const ExperimentSpec& spec) {
  std::vector<SummandInfo> out;
  for (const auto& f : spec.summands) {
    SummandInfo s;
    s.spec = f;
    s.density = summand_density(f, spec.grid);
    s.moments = moments(s.density);
    s.D = std::max(0.0, entropic_distance(s.density));
    s.M = s.density.max_value() / s.density.mass();
    out.push_back(std::move(s));
  }
  return out;
}

inline GridDensity sum_density(const ExperimentSpec& spec, const std::vector<SummandInfo>& table, std::size_t n) {
  const auto a = spec.weights_for(n);
  if (spec.iid() && spec.weight_rule == "equal") return convolve_iid(table[0].density, n, spec.grid);
  std::vector<GridDensity> ds;
  ds.reserve(n);
  for (std::size_t k = 0; k < n; ++k) ds.push_back(table[k % table.size()].density);
  return convolve_sum(ds, a, spec.grid);
}

/// Parameter-free checks on one density: Pinsker, Talagrand, the Fourier TV
/// bound, the four-term and Edgeworth relative-entropy bounds and the
/// bounded-density entropy bound.
inline std::vector<BoundCheck> density_checks(const GridDensity& p, double alpha) {
  std::vector<BoundCheck> out;
  const auto r = distance_report(p);
  out.push_back(quadrature_check("pinsker", 0.5 * r.tv * r.tv, r.relative_entropy));
  out.push_back(quadrature_check("talagrand", r.w2 * r.w2, 2.0 * r.relative_entropy));
  const auto f = char_fn(p, band_tgrid(p), 3);
  const auto g = g_alpha(f.grid, 0.0, 1);
  out.push_back(quadrature_check("tv_fourier", r.tv, tv_fourier_bound(f, g)));
  for (double T : {0.0, 1.0, 2.0, 3.0})
    out.push_back(quadrature_check("relative_entropy_split_T" + std::to_string(static_cast<int>(T)),
                                   r.relative_entropy, relative_entropy_split_bound(p, T)));
  const double alphas[3] = {0.0, alpha, 1.0};
  const char* labels[3] = {"zero", "matched", "one"};
  for (int i = 0; i < 3; ++i)
    out.push_back(quadrature_check(std::string("edgeworth_entropy_alpha_") + labels[i], r.relative_entropy,
                                   edgeworth_entropy_bound(f, alphas[i])));
  const auto m = moments(p);
  out.push_back(quadrature_check("bounded_density_entropy", r.entropic_distance_raw,
                                 bounded_density_bound(r.density_max, m.sd())));
  return out;
}

/// Quantile-split checks for kappa in {1/4, 1/2, 3/4}.
inline std::vector<BoundCheck> split_checks(const GridDensity& p) {
  std::vector<BoundCheck> out;
  for (double kappa : {0.25, 0.5, 0.75}) {
    const std::string tag = "_k" + std::to_string(static_cast<int>(std::lround(100 * kappa)));
    auto q = quantile_bound_check(p, kappa);
    q.name += tag;
    out.push_back(q);
    const auto rep = split_entropy_check(p, kappa);
    for (auto c : {rep.entropy_split, rep.sigma0_lower, rep.sigma1_lower}) {
      c.name += tag;
      out.push_back(c);
    }
  }
  return out;
}

/// Blocks of the scaled summands a_k X_k on the spec grid.
inline ConvolutionDecomposition row_decomposition(const ExperimentSpec& spec, std::size_t n, std::size_t N) {
  const auto a = spec.weights_for(n);
  std::vector<GridDensity> parts;
  std::vector<double> variances;
  for (std::size_t k = 0; k < n; ++k) {
    FamilySpec f = spec.summand(k);
    f.standardize = true;
    f.scale = a[k];
    parts.push_back(materialize(f, spec.grid));
    variances.push_back(a[k] * a[k]);
  }
  const auto plan = repack(variances, N);
  const auto blocks = block_densities(parts, plan);
  return convolution_decomposition(blocks, spec.m0);
}

/// Modified-density checks at the row's block count.
inline std::vector<BoundCheck> decomposition_checks(const ConvolutionDecomposition& dec, double D, double L3,
                                                    double L4) {
  std::vector<BoundCheck> out;
  out.push_back(BoundCheck::make("binomial_tail", dec.eps.value(), binomial_tail_bound(dec.N, dec.m0)));
  for (int s = 0; s <= 4; ++s)
    out.push_back(modified_density_gaps(dec, dec.p_n, s, s == 3 ? L3 : (s == 4 ? L4 : 0.0)));
  out.push_back(entropy_gap(dec, dec.p_n, D));
  return out;
}

/// One scan row; the sum density is handed back through `sum_out` when given.
inline ExperimentRow scan_row(const ExperimentSpec& spec, const std::vector<SummandInfo>& table, std::size_t n,
                              GridDensity* sum_out = nullptr) {
  ExperimentRow row;
  row.n = n;
  const auto a = spec.weights_for(n);
  double max_var = 0.0, maxD = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    const auto& m = table[k % table.size()].moments;
    const double a2 = a[k] * a[k];
    row.L3 += a2 * a[k] * m.abs3;
    row.L4 += a2 * a2 * m.abs4;
    row.alpha += a2 * a[k] * m.m3;
    row.sum_a4 += a2 * a2;
    row.max_abs4 = std::max(row.max_abs4, m.abs4);
    max_var = std::max(max_var, a2);
    maxD = std::max(maxD, table[k % table.size()].D);
  }
  GridDensity s;
  try {
    s = sum_density(spec, table, n);
  } catch (const std::exception& e) {
    throw grid_error("n = " + std::to_string(n) + ": " + e.what());
  }
  const auto r = distance_report(s);
  row.D = r.entropic_distance_raw;
  row.relative_entropy = r.relative_entropy;
  row.tv = r.tv;
  row.w2 = r.w2;
  row.nD = static_cast<double>(n) * row.D;
  row.tv_over_L3 = row.tv / row.L3;
  row.D_over_L4 = row.D / row.L4;
  row.asymptotic_nD = static_cast<double>(n) * row.alpha * row.alpha / 12.0;
  row.blocks = choose_N(spec.n_rule, row.L3, row.L4, max_var, spec.n_max_blocks);
  if (spec.wants("checks")) row.checks = density_checks(s, row.alpha);
  if (spec.wants("decomposition") && row.blocks.applicable) {
    const auto dec = row_decomposition(spec, n, row.blocks.N);
    for (auto& c : decomposition_checks(dec, maxD, row.L3, row.L4)) row.checks.push_back(c);
  }
  if (sum_out) *sum_out = std::move(s);
  return row;
}

inline std::vector<ExperimentRow> run_scan(const ExperimentSpec& spec) {
  const auto table = summand_table(spec);
  std::vector<ExperimentRow> rows;
  for (std::size_t n : spec.n_schedule) rows.push_back(scan_row(spec, table, n));
  return rows;
}

inline nlohmann::json to_json(const ExperimentRow& r) {
  nlohmann::json checks = nlohmann::json::array();
  for (const auto& c : r.checks) checks.push_back(to_json(c));
  return {{"n", r.n},
          {"L3", r.L3},
          {"L4", r.L4},
          {"alpha", r.alpha},
          {"D", r.D},
          {"relative_entropy", r.relative_entropy},
          {"tv", r.tv},
          {"w2", r.w2},
          {"nD", r.nD},
          {"tv_over_L3", r.tv_over_L3},
          {"D_over_L4", r.D_over_L4},
          {"asymptotic_nD", r.asymptotic_nD},
          {"N", r.blocks.N},
          {"N_fallback", r.blocks.fallback},
          {"checks", checks}};
}

/// RFC-4180 CSV with header n,L3,L4,alpha,D,tv,w2,nD.
inline void write_scan_csv(std::ostream& out, const std::vector<ExperimentRow>& rows) {
  out << "n,L3,L4,alpha,D,tv,w2,nD\n";
  out.precision(17);
  for (const auto& r : rows)
    out << r.n << ',' << r.L3 << ',' << r.L4 << ',' << r.alpha << ',' << r.D << ',' << r.tv << ',' << r.w2 << ','
        << r.nD << '\n';
}

// ---------------------------------------------------------------------------
// Fitting and verification

/// Tail integrals of the modified characteristic function at orders 0..3
/// over an N-sweep, one decomposition per N.
struct TailSweep {
  std::vector<std::size_t> Ns;
  std::vector<std::array<double, 4>> measured;

  std::vector<TailPoint> points(int s, double L_s) const {
    std::vector<TailPoint> out;
    for (std::size_t i = 0; i < Ns.size(); ++i) out.push_back({Ns[i], measured[i][static_cast<std::size_t>(s)], L_s});
    return out;
  }
};

inline TailSweep tail_sweep(const ExperimentSpec& spec, std::size_t n, std::span<const std::size_t> Ns) {
  TailSweep out;
  for (std::size_t N : Ns) {
    const auto dec = row_decomposition(spec, n, N);
    const auto f = char_fn(dec.p_n0, tail_tgrid(dec.p_n0), 3);
    std::array<double, 4> m{};
    for (int s = 0; s <= 3; ++s) m[static_cast<std::size_t>(s)] = tail_integral(f, N, s);
    out.Ns.push_back(N);
    out.measured.push_back(m);
  }
  return out;
}

inline std::vector<std::size_t> default_tail_Ns() { return {6, 7, 8, 9, 10, 11, 12, 13, 14, 15, 16}; }

/// Lyapunov ratio of order s for the spec at size n (0 for s < 3).
inline double lyapunov_for(const ExperimentSpec& spec, const std::vector<SummandInfo>& table, std::size_t n, int s) {
  if (s < 3) return 0.0;
  const auto a = spec.weights_for(n);
  double L = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    const auto& m = table[k % table.size()].moments;
    L += std::pow(a[k], s) * (s == 3 ? m.abs3 : m.abs4);
  }
  return L;
}

/// Largest tail constant c0 valid for s in {0, 1, 3} over the N-sweep.
inline double fit_tail_decay(const ExperimentSpec& spec, const std::vector<SummandInfo>& table) {
  double maxD = 0.0;
  for (const auto& s : table) maxD = std::max(maxD, s.D);
  const auto Ns = default_tail_Ns();
  const auto sweep = tail_sweep(spec, spec.tail_n, Ns);
  double c0 = std::numeric_limits<double>::infinity();
  for (int s : {0, 1, 3}) c0 = std::min(c0, fit_tail_constant(sweep.points(s, lyapunov_for(spec, table, spec.tail_n, s)), s, maxD));
  return c0;
}

inline double fit_cramer(const SummandInfo& s, CramerForm form) {
  const auto f = char_fn(s.density, default_tgrid(s.density), 0);
  return fit_cramer_constant(f, s.M, 1.0, s.D, form);
}

/// Edgeworth constants of one row; NaN when the form's L exceeds 1.
inline std::pair<double, double> edgeworth_constants(const GridDensity& s, const ExperimentRow& row) {
  const auto f = char_fn(s, band_tgrid(s), 4);
  const double third = row.L3 <= 1.0 ? edgeworth_constant(f, 0.0, row.L3, EdgeworthForm::third_order)
                                     : std::numeric_limits<double>::quiet_NaN();
  const double fourth = row.L4 <= 1.0 ? edgeworth_constant(f, row.alpha, row.L4, EdgeworthForm::fourth_order)
                                      : std::numeric_limits<double>::quiet_NaN();
  return {third, fourth};
}

/// Derives every fitted constant from a calibration spec: the two Cramer
/// constants and the tail constant (largest valid), the Edgeworth and rate
/// constants (largest observed ratio), and the calibrated ranges of D and M sigma.
inline Constants fit_constants(const ExperimentSpec& spec) {
  const auto table = summand_table(spec);
  Constants c;
  double cb = INFINITY, ce = INFINITY, maxD = 0.0, maxM = 0.0;
  for (const auto& s : table) {
    cb = std::min(cb, fit_cramer(s, CramerForm::bounded_density));
    ce = std::min(ce, fit_cramer(s, CramerForm::finite_entropy));
    maxD = std::max(maxD, s.D);
    maxM = std::max(maxM, s.M);
  }
  double A3 = 0.0, A4 = 0.0, Ctv = 0.0, CD = 0.0;
  for (std::size_t n : spec.n_schedule) {
    GridDensity s;
    const auto row = scan_row(spec, table, n, &s);
    const auto [a3, a4] = edgeworth_constants(s, row);
    if (!std::isnan(a3)) A3 = std::max(A3, a3);
    if (!std::isnan(a4)) A4 = std::max(A4, a4);
    Ctv = std::max(Ctv, row.tv_over_L3);
    CD = std::max(CD, row.D_over_L4);
  }
  c.values["cramer_bounded_c"] = cb;
  c.values["cramer_entropy_c"] = ce;
  c.values["tail_decay_c0"] = fit_tail_decay(spec, table);
  c.values["edgeworth_third_A"] = A3;
  c.values["edgeworth_fourth_A"] = A4;
  c.values["tv_rate_C"] = Ctv;
  c.values["entropy_rate_C"] = CD;
  c.values["calibration_max_D"] = maxD;
  c.values["calibration_max_bounded"] = maxM;
  return c;
}

/// Union of spec files fitted jointly: the largest valid constants become the
/// smallest over specs and the largest observed ratios the largest.
inline Constants merge_constants(const std::vector<Constants>& parts) {
  if (parts.empty()) throw input_error("no constants to merge");
  Constants out = parts[0];
  for (std::size_t i = 1; i < parts.size(); ++i)
    for (const auto& [k, v] : parts[i].values) {
      const bool smallest = k == "cramer_bounded_c" || k == "cramer_entropy_c" || k == "tail_decay_c0";
      out.values[k] = smallest ? std::min(out.values[k], v) : std::max(out.values[k], v);
    }
  return out;
}

struct VerifyReport {
  std::vector<BoundCheck> checks;
  std::vector<ExperimentRow> rows;
  nlohmann::json notes = nlohmann::json::object();

  std::size_t gating_failures() const {
    return static_cast<std::size_t>(
        std::count_if(checks.begin(), checks.end(), [](const BoundCheck& c) { return c.gating && !c.passed; }));
  }
  bool passed() const { return gating_failures() == 0; }
};

/// Every parameter-free check on the summands and the sums of the spec, the
/// moment chain, and, when `constants` is given, the fitted envelopes. Rate
/// checks on summands outside the calibrated D or M sigma range are reported
/// but not gating.
inline VerifyReport verify_suite(const ExperimentSpec& spec, const Constants* constants = nullptr) {
  VerifyReport rep;
  const auto table = summand_table(spec);
  double maxD = 0.0, maxM = 0.0, maxAbs4 = 0.0;
  for (const auto& s : table) {
    const std::string tag = "[" + s.spec.family + "]";
    for (auto c : density_checks(s.density, s.moments.m3)) {
      c.name += tag;
      rep.checks.push_back(c);
    }
    for (auto c : split_checks(s.density)) {
      c.name += tag;
      rep.checks.push_back(c);
    }
    maxD = std::max(maxD, s.D);
    maxM = std::max(maxM, s.M);
    maxAbs4 = std::max(maxAbs4, s.moments.abs4);
    if (constants) {
      for (auto [key, form] : {std::pair{"cramer_bounded_c", CramerForm::bounded_density},
                               std::pair{"cramer_entropy_c", CramerForm::finite_entropy}}) {
        if (!constants->has(key)) continue;
        auto c = BoundCheck::make(std::string(key == std::string("cramer_bounded_c") ? "cramer_bounded_density"
                                                                                     : "cramer_finite_entropy") +
                                      tag,
                                  constants->at(key), fit_cramer(s, form));
        c.fitted_constant = constants->at(key);
        rep.checks.push_back(c);
      }
    }
  }

  const bool in_D_range = !constants || !constants->has("calibration_max_D") ||
                          maxD <= constants->at("calibration_max_D") * (1.0 + 1e-9);
  const bool in_M_range = !constants || !constants->has("calibration_max_bounded") ||
                          maxM <= constants->at("calibration_max_bounded") * (1.0 + 1e-9);
  rep.notes["max_summand_D"] = maxD;
  rep.notes["max_M_sigma"] = maxM;
  rep.notes["calibrated_D_range"] = in_D_range;
  rep.notes["bounded_density_threshold_n1"] = std::pow(maxM * std::sqrt(2.0 * std::numbers::pi * std::numbers::e), 48.0) * maxAbs4;

  for (std::size_t n : spec.n_schedule) {
    GridDensity s;
    auto row = scan_row(spec, table, n, &s);
    const std::string tag = "[" + spec_label(spec) + ",n=" + std::to_string(n) + "]";
    if (!spec.wants("checks"))
      for (auto c : density_checks(s, row.alpha)) row.checks.push_back(c);
    for (auto c : row.checks) {
      c.name += tag;
      rep.checks.push_back(c);
    }
    rep.checks.push_back(BoundCheck::make("moment_chain_alpha" + tag, row.alpha * row.alpha, row.L3 * row.L3, 1e-12));
    rep.checks.push_back(BoundCheck::make("moment_chain_lyapunov" + tag, row.L3 * row.L3, row.L4, 1e-12));
    if (row.blocks.applicable) {
      const auto dec = row_decomposition(spec, n, row.blocks.N);
      for (auto c : decomposition_checks(dec, maxD, row.L3, row.L4)) {
        c.name += tag;
        rep.checks.push_back(c);
      }
      if (constants && constants->has("tail_decay_c0")) {
        const double c0 = constants->at("tail_decay_c0");
        const auto f = char_fn(dec.p_n0, tail_tgrid(dec.p_n0), 3);
        for (int s3 : {0, 1, 3}) {
          auto c = tail_integral_check(f, dec.N, s3, maxD, s3 == 3 ? row.L3 : 0.0, c0);
          c.name += tag;
          rep.checks.push_back(c);
        }
      }
    }
    if (constants) {
      const auto [a3, a4] = edgeworth_constants(s, row);
      auto add = [&](const char* name, const char* key, double measured, bool gating) {
        if (!constants->has(key) || std::isnan(measured)) return;
        auto c = BoundCheck::make(std::string(name) + tag, measured, constants->at(key));
        c.fitted_constant = constants->at(key);
        c.gating = gating;
        rep.checks.push_back(c);
      };
      add("edgeworth_third_order", "edgeworth_third_A", a3, true);
      add("edgeworth_fourth_order", "edgeworth_fourth_A", a4, true);
      if (row.L3 < 0.25) {
        const auto f = char_fn(s, band_tgrid(s), 3);
        add("edgeworth_third_order_wide", "edgeworth_third_A",
            edgeworth_constant(f, 0.0, row.L3, EdgeworthForm::third_order, 0.25 / row.L3), false);
      }
      auto rate = [&](const char* name, const char* key, double measured, double L, bool gating) {
        if (!constants->has(key)) return;
        auto c = BoundCheck::make(std::string(name) + tag, measured, constants->at(key) * L);
        c.fitted_constant = constants->at(key);
        c.gating = gating;
        rep.checks.push_back(c);
      };
      rate("tv_rate", "tv_rate_C", row.tv, row.L3, in_D_range);
      rate("entropy_rate", "entropy_rate_C", row.D, row.L4, in_D_range);
      rate("bounded_density_tv_rate", "tv_rate_C", row.tv, row.L3, in_M_range && in_D_range);
      rate("bounded_density_entropy_rate", "entropy_rate_C", row.D, row.L4, in_M_range && in_D_range);
      if (spec.weight_rule != "equal" && spec.iid()) {
        const double EX4 = table[0].moments.abs4;
        rate("weighted_sum_rate", "entropy_rate_C", row.D, EX4 * row.sum_a4, in_D_range);
        auto cond = BoundCheck::make("weighted_sum_condition" + tag, row.sum_a4, std::exp(-48.0 * table[0].D) / EX4);
        cond.gating = false;
        rep.checks.push_back(cond);
        rep.notes["weighted_sum_threshold_n1"] = std::exp(48.0 * table[0].D) * EX4;
      }
    }
    rep.rows.push_back(std::move(row));
  }
  return rep;
}

inline Constants fit_constants(std::span<const ExperimentSpec> specs) {
  std::vector<Constants> parts;
  for (const auto& s : specs) parts.push_back(fit_constants(s));
  return merge_constants(parts);
}

inline VerifyReport verify_suite(std::span<const ExperimentSpec> specs, const Constants* constants = nullptr) {
  VerifyReport out;
  nlohmann::json notes = nlohmann::json::array();
  for (const auto& s : specs) {
    auto r = verify_suite(s, constants);
    out.checks.insert(out.checks.end(), r.checks.begin(), r.checks.end());
    for (auto& row : r.rows) out.rows.push_back(std::move(row));
    r.notes["spec"] = spec_label(s);
    notes.push_back(r.notes);
  }
  out.notes = specs.size() == 1 ? notes[0] : notes;
  return out;
}

inline nlohmann::json to_json(const VerifyReport& r) {
  nlohmann::json checks = nlohmann::json::array();
  for (const auto& c : r.checks) checks.push_back(to_json(c));
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& row : r.rows) rows.push_back(to_json(row));
  return {{"passed", r.passed()},
          {"gating_failures", r.gating_failures()},
          {"checks", checks},
          {"rows", rows},
          {"notes", r.notes}};
}

}  // namespace entclt

#endif
