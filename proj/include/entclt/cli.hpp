#ifndef ENTCLT_CLI_HPP
#define ENTCLT_CLI_HPP

#include "entclt/bounds.hpp"
#include "entclt/decomposition.hpp"
#include "entclt/errors.hpp"
#include "entclt/families.hpp"
#include "entclt/functionals.hpp"
#include "entclt/lab.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace entclt {

namespace cli {

enum Exit { ok = 0, violation = 1, usage = 2 };

struct Globals {
  std::optional<std::size_t> grid_points;
  std::optional<double> grid_range;
  std::string out;
  std::string format = "json";
  std::uint64_t seed = 0;  // reserved; every computation is deterministic
  std::string spec;
  std::string constants;
};

inline nlohmann::json read_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw input_error("cannot open " + path);
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw input_error("malformed JSON in " + path + ": " + e.what());
  }
}

inline nlohmann::json parse_inline(const std::string& text, const char* what) {
  try {
    return nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception&) {
    throw input_error(std::string("malformed JSON for ") + what + ": " + text);
  }
}

inline GridConfig grid_for(const Globals& g, GridConfig base = {}) {
  if (!g.grid_points && !g.grid_range) return base;
  const std::size_t points = g.grid_points.value_or(base.points);
  const double range = g.grid_range.value_or(-base.x0);
  return GridConfig::symmetric(range, points);
}

/// Writes to --out when given, otherwise to `out`.
inline void emit(const Globals& g, std::ostream& out, const std::string& text) {
  if (g.out.empty()) {
    out << text;
    return;
  }
  std::ofstream f(g.out);
  if (!f) throw input_error("cannot write " + g.out);
  f << text;
}

inline std::vector<std::size_t> parse_list(const std::string& s) {
  std::vector<std::size_t> v;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t pos = 0;
      const long x = std::stol(item, &pos);
      if (pos != item.size() || x <= 0) throw std::invalid_argument(item);
      v.push_back(static_cast<std::size_t>(x));
    } catch (const std::exception&) {
      throw input_error("bad integer list: " + s);
    }
  }
  if (v.empty()) throw input_error("empty integer list");
  return v;
}

inline std::vector<ExperimentSpec> load_specs(const Globals& g) {
  if (g.spec.empty()) throw input_error("--spec is required");
  auto specs = experiments_from_json(read_json(g.spec));
  for (auto& s : specs) s.grid = grid_for(g, s.grid);
  return specs;
}

inline int run_density(const Globals& g, const std::string& family, const std::string& params, bool standardize,
                       std::ostream& out) {
  FamilySpec spec;
  if (!g.spec.empty()) {
    spec = family_from_json(read_json(g.spec));
  } else {
    if (family.empty()) throw input_error("density needs --family or --spec");
    spec.family = family;
    if (!params.empty()) spec.params = parse_inline(params, "--params");
    spec.standardize = standardize;
  }
  const GridDensity p = materialize(spec, jump_aligned_grid(spec, grid_for(g)));
  const auto m = moments(p);
  const auto r = distance_report(p);
  if (g.format == "csv") {
    std::ostringstream os;
    os.precision(17);
    os << "mean,variance,m3,abs3,m4,entropy,entropic_distance,relative_entropy,tv,w2,density_max\n"
       << m.mean << ',' << m.variance << ',' << m.m3 << ',' << m.abs3 << ',' << m.m4 << ',' << r.entropy << ','
       << r.entropic_distance << ',' << r.relative_entropy << ',' << r.tv << ',' << r.w2 << ',' << r.density_max
       << '\n';
    emit(g, out, os.str());
    return ok;
  }
  nlohmann::json j{{"family", family_to_json(spec)},
                   {"grid", {{"x0", p.x0()}, {"h", p.h()}, {"points", p.size()}}},
                   {"truncated_mass", p.truncated_mass()},
                   {"moments", {{"mean", m.mean}, {"variance", m.variance}, {"m3", m.m3}, {"abs3", m.abs3}, {"m4", m.m4}}},
                   {"distances", to_json(r)}};
  emit(g, out, j.dump(2) + "\n");
  return ok;
}

inline void write_density_csv(const std::string& path, const GridDensity& p) {
  std::ofstream f(path);
  if (!f) throw input_error("cannot write " + path);
  f.precision(17);
  f << "x,density\n";
  for (std::size_t i = 0; i < p.size(); ++i) f << p.x(i) << ',' << p[i] << '\n';
}

/// Quantile split of the first summand, block plan and modified-density
/// checks for one (n, N, m0).
inline int run_decompose(const Globals& g, const std::string& dump, std::ostream& out) {
  const nlohmann::json raw = read_json(g.spec);
  ExperimentSpec spec = experiment_from_json(raw);
  spec.grid = grid_for(g, spec.grid);
  const double kappa = raw.value("kappa", 0.5);
  const std::size_t n = spec.n_schedule.back();
  if (spec.n_rule.kind != NRuleKind::fixed) throw input_error("decompose needs an integer \"N\"");
  const std::size_t N = spec.n_rule.value;

  const auto table = summand_table(spec);
  const auto split = quantile_split(table[0].density, kappa);
  const auto ent = split_entropy_check(table[0].density, kappa);
  const auto a = spec.weights_for(n);
  std::vector<double> variances;
  for (double x : a) variances.push_back(x * x);
  const auto plan = repack(variances, N);
  const auto dec = row_decomposition(spec, n, N);
  double maxD = 0.0;
  for (const auto& s : table) maxD = std::max(maxD, s.D);
  const double L3 = lyapunov_for(spec, table, n, 3), L4 = lyapunov_for(spec, table, n, 4);

  std::vector<BoundCheck> checks{quantile_bound_check(table[0].density, kappa), ent.entropy_split, ent.sigma0_lower,
                                 ent.sigma1_lower};
  for (const auto& c : decomposition_checks(dec, maxD, L3, L4)) checks.push_back(c);
  nlohmann::json jc = nlohmann::json::array();
  bool passed = true;
  for (const auto& c : checks) {
    jc.push_back(to_json(c));
    passed = passed && (c.passed || !c.gating);
  }
  nlohmann::json j{
      {"n", n},
      {"N", N},
      {"m0", spec.m0},
      {"kappa", kappa},
      {"eps_n", {{"fraction", dec.eps.str()}, {"value", dec.eps.value()}}},
      {"eps_bound", binomial_tail_bound(N, spec.m0)},
      {"split", {{"m_kappa", split.m_kappa}, {"mass0", split.mass0}, {"mass1", split.mass1}}},
      {"blocks", {{"cuts", plan.cuts}, {"variances", plan.block_variances}, {"window_applies", plan.window_applies()}}},
      {"checks", jc}};
  if (!dump.empty()) {
    write_density_csv(dump + "_p0.csv", split.p0);
    write_density_csv(dump + "_p1.csv", split.p1);
    write_density_csv(dump + "_ptilde.csv", dec.p_n0);
  }
  emit(g, out, j.dump(2) + "\n");
  return passed ? ok : violation;
}

inline int run_bounds(const Globals& g, bool fit, std::ostream& out) {
  const auto spec = load_specs(g);
  if (fit) {
    const Constants c = fit_constants(std::span<const ExperimentSpec>(spec));
    c.save(g.constants.empty() ? "constants.json" : g.constants);
    emit(g, out, nlohmann::json(c.values).dump(2) + "\n");
    return ok;
  }
  std::optional<Constants> c;
  if (!g.constants.empty()) c = Constants::load(g.constants);
  const auto rep = verify_suite(std::span<const ExperimentSpec>(spec), c ? &*c : nullptr);
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& ch : rep.checks) arr.push_back(to_json(ch));
  emit(g, out, arr.dump(2) + "\n");
  return rep.passed() ? ok : violation;
}

inline int run_scan_cmd(const Globals& g, const std::string& family, const std::string& params,
                        const std::string& ns, std::ostream& out) {
  ExperimentSpec spec;
  if (!g.spec.empty()) {
    const auto specs = load_specs(g);
    if (specs.size() != 1) throw input_error("scan takes a single experiment spec");
    spec = specs[0];
  } else {
    if (family.empty()) throw input_error("scan needs --family or --spec");
    FamilySpec f;
    f.family = family;
    if (!params.empty()) f.params = parse_inline(params, "--params");
    spec.summands = {f};
    spec.grid = grid_for(g);
  }
  if (!ns.empty()) spec.n_schedule = parse_list(ns);
  for (std::size_t i = 1; i < spec.n_schedule.size(); ++i)
    if (spec.n_schedule[i] <= spec.n_schedule[i - 1]) throw input_error("n schedule must be increasing");
  if (spec.n_schedule.back() > spec.n_cap) throw input_error("n exceeds the cap " + std::to_string(spec.n_cap));
  const auto rows = run_scan(spec);
  if (g.format == "csv") {
    std::ostringstream os;
    write_scan_csv(os, rows);
    emit(g, out, os.str());
  } else {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& r : rows) arr.push_back(to_json(r));
    emit(g, out, arr.dump(2) + "\n");
  }
  return ok;
}

inline int run_verify(const Globals& g, std::ostream& out) {
  const auto spec = load_specs(g);
  std::optional<Constants> c;
  if (!g.constants.empty()) c = Constants::load(g.constants);
  const auto rep = verify_suite(std::span<const ExperimentSpec>(spec), c ? &*c : nullptr);
  emit(g, out, to_json(rep).dump(2) + "\n");
  return rep.passed() ? ok : violation;
}

}  // namespace cli

/// Command-line entry point. Exit status 0 when every gating check passes,
/// 1 on a violation, 2 on a usage or input error.
inline int cli_main(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  using namespace cli;
  CLI::App app{"Entropic central limit theorem toolkit"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--grid-points", g.grid_points, "grid points (default 16384)");
  app.add_option("--grid-range", g.grid_range, "grid half-width (default 32)");
  app.add_option("--out", g.out, "output file (default stdout)");
  app.add_option("--format", g.format, "output format")->check(CLI::IsMember({"csv", "json"}));
  app.add_option("--seed", g.seed, "reserved; results do not depend on it");
  app.add_option("--spec", g.spec, "JSON spec file");
  app.add_option("--constants", g.constants, "JSON constants file");

  std::string family, params, ns, dump;
  bool standardize = false, fit = false;
  auto* density = app.add_subcommand("density", "materialize a family and report its functionals");
  density->add_option("--family", family, "family name");
  density->add_option("--params", params, "family parameters as JSON");
  density->add_flag("--standardize", standardize, "center and scale to unit variance");
  auto* decompose = app.add_subcommand("decompose", "quantile split, block plan and modified-density checks");
  decompose->add_option("--dump", dump, "prefix for p0/p1/ptilde CSV files");
  auto* bounds = app.add_subcommand("bounds", "bound-check battery");
  bounds->add_flag("--fit", fit, "fit constants and write them to --constants");
  auto* scan = app.add_subcommand("scan", "sweep n and tabulate functionals");
  scan->add_option("--family", family, "i.i.d. summand family");
  scan->add_option("--params", params, "family parameters as JSON");
  scan->add_option("--n", ns, "comma-separated n schedule");
  auto* verify = app.add_subcommand("verify", "full verification report");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? ok : usage;
  }
  try {
    if (*density) return run_density(g, family, params, standardize, out);
    if (*decompose) {
      if (g.spec.empty()) throw input_error("decompose needs --spec");
      return run_decompose(g, dump, out);
    }
    if (*bounds) return run_bounds(g, fit, out);
    if (*scan) return run_scan_cmd(g, family, params, ns, out);
    if (*verify) return run_verify(g, out);
  } catch (const violation_error& e) {
    err << "violation: " << e.what() << "\n";
    return violation;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n" << app.help();
    return usage;
  }
  return usage;
}

inline int cli_main(const std::vector<std::string>& args, std::ostream& out = std::cout,
                    std::ostream& err = std::cerr) {
  std::vector<const char*> argv{"entclt"};
  for (const auto& a : args) argv.push_back(a.c_str());
  return cli_main(static_cast<int>(argv.size()), argv.data(), out, err);
}

}  // namespace entclt

#endif
