#include "entclt/lab.hpp"
#include "fixtures.hpp"
#include "oracles.hpp"

#include <gtest/gtest.h>

#include <numbers>
#include <sstream>

using namespace entclt;
using fixture::standardized;

namespace {

double max_gap_to_normal(const GridDensity& p) {
  double e = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) e = std::max(e, std::abs(p[i] - oracle::phi(p.x(i))));
  return e;
}

ExperimentSpec iid_spec(const FamilySpec& f, std::vector<std::size_t> ns) {
  ExperimentSpec s;
  s.summands = {f};
  s.n_schedule = std::move(ns);
  return s;
}

std::string spec_path(const char* name) { return std::string(ENTCLT_SOURCE_DIR) + "/specs/" + name; }

}  // namespace

// ---------------------------------------------------------------------------
// convolve_sum

TEST(ConvolveSum, GaussianClosureEqualWeights) {
  const auto z = summand_density(standardized("gaussian"));
  const std::vector<GridDensity> ds{z, z};
  const std::vector<double> w{std::numbers::sqrt2 / 2, std::numbers::sqrt2 / 2};
  EXPECT_LT(max_gap_to_normal(convolve_sum(ds, w)), 1e-9);
}

TEST(ConvolveSum, GaussianClosureUnequalWeights) {
  const auto z = summand_density(standardized("gaussian"));
  const std::vector<GridDensity> ds{z, z};
  const std::vector<double> w{0.6, 0.8};
  EXPECT_LT(max_gap_to_normal(convolve_sum(ds, w)), 1e-9);
}

TEST(ConvolveSum, TwoUniformsGiveTriangular) {
  const auto u = summand_density(standardized("uniform"));
  const std::vector<GridDensity> ds{u, u};
  const std::vector<double> w{std::numbers::sqrt2 / 2, std::numbers::sqrt2 / 2};
  EXPECT_NEAR(entropic_distance(convolve_sum(ds, w)), oracle::triangular_distance(), 1e-5);
}

TEST(ConvolveSum, ExponentialSumsMatchGammaClosedForm) {
  const auto e = summand_density(standardized("exponential"));
  for (std::size_t n : {3u, 16u, 24u, 64u}) {
    const double truth = oracle::gamma_sum_distance(static_cast<double>(n));
    EXPECT_NEAR(entropic_distance(convolve_iid(e, n)), truth, 1e-6 + 1e-3 * truth) << "n = " << n;
  }
}

TEST(ConvolveSum, SequentialAndBinaryRoutesAgree) {
  const auto e = summand_density(standardized("exponential"));
  const std::vector<GridDensity> ds(4, e);
  const std::vector<double> w(4, 0.5);
  const auto binary = convolve_iid(e, 4);
  // A tiny perturbation of one weight forces the sequential route.
  std::vector<double> w2{0.5, 0.5, 0.5, 0.5};
  w2[0] = std::sqrt(0.25 - 1e-14);
  w2[1] = std::sqrt(0.25 + 1e-14);
  const auto sequential = convolve_sum(ds, w2);
  EXPECT_NEAR(entropic_distance(binary), entropic_distance(sequential), 5e-6);
  EXPECT_NEAR(entropic_distance(convolve_sum(ds, w)), entropic_distance(binary), 1e-15);
}

TEST(ConvolveSum, UniformDistanceDecreasesInN) {
  const auto u = summand_density(standardized("uniform"));
  const double d16 = entropic_distance(convolve_iid(u, 16));
  const double d32 = entropic_distance(convolve_iid(u, 32));
  const double d64 = entropic_distance(convolve_iid(u, 64));
  EXPECT_LT(d64, d32);
  EXPECT_LT(d32, d16);
}

TEST(ConvolveSum, VarianceIsOneForEveryRoute) {
  const auto u = summand_density(standardized("uniform"));
  const auto e = summand_density(standardized("exponential"));
  const std::vector<GridDensity> mixed{u, e, u};
  const std::vector<double> w{0.6, 0.64, 0.48};
  for (const auto& s : {convolve_iid(u, 8), convolve_iid(e, 5), convolve_sum(mixed, w)}) {
    const auto m = moments(s);
    EXPECT_NEAR(m.variance, 1.0, 1e-6);
    EXPECT_NEAR(m.mean, 0.0, 1e-6);
    EXPECT_NEAR(s.mass(), 1.0, 1e-12);
  }
}

TEST(ConvolveSum, Deterministic) {
  const auto e = summand_density(standardized("exponential"));
  const std::vector<GridDensity> ds{e, e, e};
  const std::vector<double> w{0.6, 0.64, 0.48};
  const auto a = convolve_sum(ds, w);
  const auto b = convolve_sum(ds, w);
  EXPECT_EQ(a.values(), b.values());
  EXPECT_EQ(a.x0(), b.x0());
  EXPECT_EQ(a.h(), b.h());
}

TEST(ConvolveSum, RejectsBadWeights) {
  const auto u = summand_density(standardized("uniform"));
  const std::vector<GridDensity> ds{u, u};
  EXPECT_THROW(convolve_sum(ds, std::vector<double>{0.5, 0.5}), input_error);
  EXPECT_THROW(convolve_sum(ds, std::vector<double>{1.0}), input_error);
  EXPECT_THROW(convolve_sum(ds, std::vector<double>{-0.6, 0.8}), input_error);
  EXPECT_THROW(convolve_iid(u, 0), input_error);
}

TEST(ConvolveSum, ReportsWindowOverflow) {
  const auto e = summand_density(standardized("exponential"));
  EXPECT_THROW(convolve_iid(e, 16, GridConfig::symmetric(4.0, 2048)), grid_error);
}

TEST(Rebin, ConservesMassAndMean) {
  const auto p = fixture::build(standardized("beta", {{"a", 2.0}, {"b", 5.0}}));
  const auto q = rebin(p, -32.0, p.h() / 8.0);
  EXPECT_NEAR(q.mass(), p.mass(), 1e-12);
  EXPECT_NEAR(moments(q).mean, moments(p).mean, 1e-9);
}

// ---------------------------------------------------------------------------
// Block-count rule

TEST(ChooseN, FixedValueWithGuards) {
  const auto c = choose_N({NRuleKind::fixed, 10}, 0.1, 0.01, 1.0 / 64);
  EXPECT_EQ(c.N, 10u);
  EXPECT_EQ(c.cap, 32u);
  EXPECT_TRUE(c.applicable);
  EXPECT_FALSE(choose_N({NRuleKind::fixed, 5}, 0.1, 0.01, 1.0 / 64).applicable);
  EXPECT_FALSE(choose_N({NRuleKind::fixed, 40}, 0.1, 0.01, 1.0 / 64).applicable);
}

TEST(ChooseN, FormulasFollowLyapunovRatios) {
  const auto third = choose_N({NRuleKind::third_order, 0}, 0.001, 1.0, 1.0 / 4096);
  EXPECT_EQ(third.formula, 50u);
  EXPECT_EQ(third.N, 50u);
  EXPECT_FALSE(third.fallback);
  const auto fourth = choose_N({NRuleKind::fourth_order, 0}, 1.0, 1e-6, 1.0 / 4096);
  EXPECT_EQ(fourth.formula, 50u);
  EXPECT_TRUE(fourth.applicable);
}

TEST(ChooseN, SmallFormulaFallsBackToCappedMaximum) {
  const auto c = choose_N({NRuleKind::fourth_order, 0}, 0.5, 0.1, 1.0 / 32, 16);
  EXPECT_TRUE(c.fallback);
  EXPECT_EQ(c.N, 16u);
  const auto tight = choose_N({NRuleKind::fourth_order, 0}, 0.5, 0.1, 1.0 / 8, 16);
  EXPECT_EQ(tight.N, 4u);
  EXPECT_FALSE(tight.applicable);
}

// ---------------------------------------------------------------------------
// Spec parsing

TEST(ExperimentSpecJson, ParsesAllFields) {
  const auto s = experiment_from_json(nlohmann::json::parse(R"({
    "summands": [{"family": "uniform"}, {"family": "exponential"}],
    "n": [8, 16], "weights": {"power": 0.5}, "grid": {"points": 8192, "range": 24},
    "N": "third_order", "N_max": 12, "m0": 2, "outputs": ["checks"]})"));
  EXPECT_EQ(s.summands.size(), 2u);
  EXPECT_EQ(s.n_schedule, (std::vector<std::size_t>{8, 16}));
  EXPECT_EQ(s.weight_rule, "power");
  EXPECT_EQ(s.grid.points, 8192u);
  EXPECT_DOUBLE_EQ(s.grid.x0, -24.0);
  EXPECT_EQ(s.n_rule.kind, NRuleKind::third_order);
  EXPECT_EQ(s.n_max_blocks, 12u);
  EXPECT_EQ(s.m0, 2u);
  EXPECT_TRUE(s.wants("checks"));
  EXPECT_FALSE(s.iid());
}

TEST(ExperimentSpecJson, WeightsSquareSumToOne) {
  auto s = iid_spec(standardized("uniform"), {16});
  s.weight_rule = "power";
  s.weight_power = 1.0;
  const auto a = s.weights_for(37);
  double sq = 0.0;
  for (double x : a) sq += x * x;
  EXPECT_NEAR(sq, 1.0, 1e-12);
  EXPECT_GT(a[0], a[36]);
}

TEST(ExperimentSpecJson, ExplicitWeightsSetTheSchedule) {
  const auto s = experiment_from_json(nlohmann::json::parse(R"({"summands": {"family": "uniform"},
    "weights": [0.6, 0.8]})"));
  EXPECT_EQ(s.n_schedule, (std::vector<std::size_t>{2}));
  EXPECT_EQ(s.weights_for(2), (std::vector<double>{0.6, 0.8}));
}

TEST(ExperimentSpecJson, RejectsInvalidSpecs) {
  const char* bad[] = {
      R"([])",
      R"({"n": [16]})",
      R"({"summands": []})",
      R"({"summands": {"family": "uniform"}, "n": [32, 16]})",
      R"({"summands": {"family": "uniform"}, "n": [16, 16]})",
      R"({"summands": {"family": "uniform"}, "n": [512]})",
      R"({"summands": {"family": "uniform"}, "n": [0]})",
      R"({"summands": {"family": "uniform"}, "weights": [0.5, 0.5]})",
      R"({"summands": {"family": "uniform"}, "weights": "decaying"})",
      R"({"summands": {"family": "uniform"}, "N": "fifth_order"})",
      R"({"summands": {"family": "uniform"}, "n": "many"})",
      R"({"summands": {"family": "no_such_family"}})",
  };
  for (const char* b : bad) EXPECT_THROW(experiments_from_json(nlohmann::json::parse(b)), input_error) << b;
}

TEST(ExperimentSpecJson, SampleSpecsLoad) {
  for (const char* f : {"gaussian.json", "calibration.json", "heldout.json", "mixed.json", "weighted_uniform.json"})
    EXPECT_NO_THROW(load_experiments(spec_path(f))) << f;
  EXPECT_EQ(load_experiments(spec_path("calibration.json")).size(), 5u);
  EXPECT_THROW(load_experiments(spec_path("missing.json")), input_error);
}

// ---------------------------------------------------------------------------
// Scan

TEST(RunScan, ExponentialRowsFollowGammaClosedForm) {
  const auto rows = run_scan(iid_spec(standardized("exponential"), {16, 32, 64}));
  ASSERT_EQ(rows.size(), 3u);
  for (const auto& r : rows) {
    const double n = static_cast<double>(r.n);
    EXPECT_NEAR(r.nD, n * oracle::gamma_sum_distance(n), 1e-3);
    EXPECT_NEAR(r.alpha, 2.0 / std::sqrt(n), 1e-5);
    EXPECT_NEAR(r.L3, oracle::exponential_abs3() / std::sqrt(n), 1e-5);
    EXPECT_NEAR(r.asymptotic_nD, 1.0 / 3.0, 1e-5);
    EXPECT_TRUE(std::isfinite(r.tv_over_L3));
    EXPECT_TRUE(std::isfinite(r.D_over_L4));
  }
  EXPECT_GT(rows[0].nD, rows[1].nD);
  EXPECT_GT(rows[1].nD, rows[2].nD);
}

TEST(RunScan, UniformDistanceIsLittleOOfOneOverN) {
  const auto rows = run_scan(iid_spec(standardized("uniform"), {16, 32, 64, 128}));
  for (std::size_t i = 1; i < rows.size(); ++i) EXPECT_LT(rows[i].nD, 0.6 * rows[i - 1].nD);
  EXPECT_LT(rows.back().nD, 0.02);
  for (const auto& r : rows) {
    EXPECT_NEAR(r.alpha, 0.0, 1e-9);
    EXPECT_GE(r.D, -1e-7);
  }
}

TEST(RunScan, PinskerAndTalagrandHoldOnEveryRow) {
  auto spec = load_experiments(spec_path("mixed.json")).front();
  spec.outputs = {"checks"};
  for (const auto& r : run_scan(spec)) {
    ASSERT_FALSE(r.checks.empty());
    for (const auto& c : r.checks) EXPECT_TRUE(c.passed) << c.name << " n = " << r.n;
  }
}

TEST(RunScan, CsvHeaderAndRowCount) {
  const auto rows = run_scan(iid_spec(standardized("uniform"), {4, 8}));
  std::ostringstream os;
  write_scan_csv(os, rows);
  std::istringstream in(os.str());
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "n,L3,L4,alpha,D,tv,w2,nD");
  int count = 0;
  while (std::getline(in, line)) {
    ++count;
    EXPECT_EQ(std::count(line.begin(), line.end(), ','), 7);
  }
  EXPECT_EQ(count, 2);
}

TEST(RunScan, DeterministicOutput) {
  const auto spec = iid_spec(standardized("gamma", {{"shape", 3.0}}), {8, 16});
  std::ostringstream a, b;
  write_scan_csv(a, run_scan(spec));
  write_scan_csv(b, run_scan(spec));
  EXPECT_EQ(a.str(), b.str());
}

// ---------------------------------------------------------------------------
// Verification

TEST(VerifySuite, GaussianSpecPassesWithZeroDistances) {
  const auto rep = verify_suite(load_experiments(spec_path("gaussian.json")));
  EXPECT_TRUE(rep.passed());
  ASSERT_FALSE(rep.rows.empty());
  for (const auto& r : rep.rows) {
    EXPECT_NEAR(r.D, 0.0, 1e-7);
    EXPECT_NEAR(r.tv, 0.0, 1e-6);
  }
}

TEST(VerifySuite, MixedSpecPassesParameterFreeChecks) {
  const auto rep = verify_suite(load_experiments(spec_path("mixed.json")));
  EXPECT_EQ(rep.gating_failures(), 0u);
  EXPECT_GT(rep.checks.size(), 40u);
  bool saw_split = false, saw_decomposition = false;
  for (const auto& c : rep.checks) {
    saw_split |= c.name.rfind("split_entropy", 0) == 0;
    saw_decomposition |= c.name.rfind("modified_density_entropy", 0) == 0;
  }
  EXPECT_TRUE(saw_split);
  EXPECT_TRUE(saw_decomposition);
}

TEST(VerifySuite, WeightedUniformHoldsWithFittedConstants) {
  const auto spec = load_experiments(spec_path("weighted_uniform.json"));
  Constants k = fit_constants(load_experiments(spec_path("calibration.json")));
  const auto rep = verify_suite(spec, &k);
  EXPECT_TRUE(rep.passed());
  std::size_t weighted = 0;
  for (const auto& c : rep.checks)
    if (c.name.rfind("weighted_sum_rate", 0) == 0) {
      ++weighted;
      EXPECT_TRUE(c.gating);
      EXPECT_TRUE(c.passed) << c.name;
    }
  EXPECT_EQ(weighted, spec.front().n_schedule.size());
  for (const auto& r : rep.rows) EXPECT_LT(r.sum_a4, 1.0);
}

TEST(VerifySuite, RateChecksNeedConstants) {
  const auto rep = verify_suite(iid_spec(standardized("uniform"), {16}));
  for (const auto& c : rep.checks) EXPECT_EQ(c.name.find("rate"), std::string::npos) << c.name;
}

TEST(Constants, MergeKeepsConservativeValues) {
  Constants a, b;
  a.values = {{"cramer_entropy_c", 0.5}, {"tv_rate_C", 0.1}};
  b.values = {{"cramer_entropy_c", 0.4}, {"tv_rate_C", 0.2}};
  const auto m = merge_constants({a, b});
  EXPECT_DOUBLE_EQ(m.at("cramer_entropy_c"), 0.4);
  EXPECT_DOUBLE_EQ(m.at("tv_rate_C"), 0.2);
}
