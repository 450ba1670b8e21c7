#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "test_support.hpp"

using namespace nmaci;
using namespace nmaci::testing;

namespace {

std::string tsv(const CoverageReport& r) {
  std::ostringstream os;
  write_tsv(os, r, true);
  return os.str();
}

TEST(Scenario, SimulationOneDesign) {
  const auto spec = scenarios::simulation1(10);
  const auto studies = generate_dataset(spec, 0);
  ASSERT_EQ(studies.size(), 10u);
  for (const auto& s : studies) EXPECT_EQ(s.contrasts.size(), 1u);
  std::map<std::string, int> count;
  for (const auto& s : studies) count[s.contrasts[0].name()]++;
  EXPECT_EQ(count["A-P"], 3);
  EXPECT_EQ(count["B-P"], 2);
  EXPECT_EQ(count["C-P"], 2);
  EXPECT_EQ(count["A-B"], 2);
  EXPECT_EQ(count["A-C"], 1);
  EXPECT_EQ(scenarios::simulation1(30).total_studies(), 30);
  EXPECT_THROW(scenarios::simulation1(20), Error);
}

TEST(Scenario, SimulationTwoDesign) {
  const auto spec = scenarios::simulation2(20);
  EXPECT_EQ(spec.total_studies(), 20);
  EXPECT_EQ(scenarios::simulation2(30).total_studies(), 30);
  EXPECT_EQ(spec.labels().size(), 6u);
  EXPECT_NEAR(spec.true_effects.at("B"), 0.093, 5e-4);
  EXPECT_NEAR(spec.true_effects.at("C"), 0.192, 5e-4);
  EXPECT_NEAR(spec.true_effects.at("D"), 0.301, 5e-4);
  EXPECT_NEAR(spec.true_effects.at("E"), 0.426, 5e-4);
  EXPECT_NEAR(spec.true_effects.at("F"), 0.577, 5e-4);
  EXPECT_EQ(spec.true_effects.at("A"), 0.0);
  const auto m = assemble(generate_dataset(spec, 0), spec.structure, spec.reference);
  EXPECT_EQ(m.p(), 6);
}

TEST(Scenario, NoHeterogeneityLargeSamples) {
  auto spec = scenarios::simulation1(10);
  spec.theta = 0.0;
  spec.subjects_min = spec.subjects_max = 2000000;
  spec.reference_p_min = spec.reference_p_max = 0.3;
  for (const auto& s : generate_dataset(spec, 4)) {
    const auto& c = s.contrasts[0];
    const double expected = spec.true_effects.at(c.treatment) - (c.comparator == "P" ? 0.0 : spec.true_effects.at(c.comparator));
    EXPECT_NEAR(s.estimates[0], expected, 0.01) << c.name();
  }
}

TEST(Scenario, DeterministicDataset) {
  const auto spec = scenarios::simulation2(20);
  const auto a = generate_dataset(spec, 17);
  const auto b = generate_dataset(spec, 17);
  const auto c = generate_dataset(spec, 18);
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].estimates, b[i].estimates);
    EXPECT_EQ(a[i].within_cov, b[i].within_cov);
  }
  EXPECT_NE(a[0].estimates, c[0].estimates);
}

TEST(Scenario, Json) {
  const auto j = nlohmann::json::parse(R"({"preset": "simulation1", "studies": 30, "replications": 12, "seed": 3})");
  const auto s = scenario_from_json(j);
  EXPECT_EQ(s.total_studies(), 30);
  EXPECT_EQ(s.replications, 12);
  const auto custom = scenario_from_json(nlohmann::json::parse(
      R"({"designs": [["A", "P", 3], ["B", "A", 2]], "true_effects": {"A": 0.1, "B": 0.2}, "theta": 0.1,
          "structure": "diag", "subjects": [40, 80], "reference_p": [0.2, 0.3]})"));
  EXPECT_EQ(custom.structure, StructureKind::diagonal);
  EXPECT_EQ(custom.total_studies(), 5);
  EXPECT_THROW(scenario_from_json(nlohmann::json::parse(R"({"preset": "simulation1", "bogus": 1})")), Error);
  EXPECT_THROW(scenario_from_json(nlohmann::json::parse(R"({"designs": [["A", "P", 3]], "true_effects": {}})")),
               Error);
}

TEST(Coverage, ExactNormalShim) {
  const auto m = simulation1_model();
  const Vector mu = (Vector(3) << 0.398, 0.702, 0.866).finished();
  const auto r = normal_shim_coverage(m, Vector::Constant(1, 0.3), mu, 20000, 77);
  ASSERT_EQ(r.rows.size(), 9u);
  for (const auto& row : r.rows) {
    const double se = 100 * std::sqrt(0.95 * 0.05 / row.replications);
    EXPECT_NEAR(row.coverage, 95.0, 2 * se) << row.method.name() << " " << row.contrast;
  }
}

TEST(Coverage, StandardErrorFormula) {
  auto spec = scenarios::simulation1(10);
  spec.replications = 50;
  const auto r = coverage_study(spec, {{LikelihoodKind::reml, StatisticKind::wald, Adjustment::none}});
  for (const auto& row : r.rows) {
    const double c = row.coverage / 100;
    EXPECT_NEAR(row.se, 100 * std::sqrt(c * (1 - c) / row.replications), 1e-12);
    EXPECT_GE(row.coverage, 0);
    EXPECT_LE(row.coverage, 100);
  }
}

TEST(Coverage, DeterministicAcrossWidths) {
  auto spec = scenarios::simulation1(10);
  spec.replications = 60;
  CoverageConfig c1, c8;
  c8.width = 8;
  const auto methods = all_methods();
  EXPECT_EQ(tsv(coverage_study(spec, methods, c1)), tsv(coverage_study(spec, methods, c8)));
}

TEST(Coverage, DeterministicWithBootstrap) {
  auto spec = scenarios::simulation1(10);
  spec.replications = 4;
  CoverageConfig c1, c8;
  c1.bootstrap_m = c8.bootstrap_m = 99;
  c8.width = 8;
  const std::vector<Method> methods{{LikelihoodKind::reml, StatisticKind::lr, Adjustment::bartlett_bootstrap}};
  EXPECT_EQ(tsv(coverage_study(spec, methods, c1)), tsv(coverage_study(spec, methods, c8)));
}

TEST(Coverage, QualitativeOrdering) {
  auto spec = scenarios::simulation1(10);
  spec.replications = 2000;
  CoverageConfig cfg;
  cfg.contrasts = {"A"};
  const Method ml_w{LikelihoodKind::ml, StatisticKind::wald, Adjustment::none};
  const Method ml_wb{LikelihoodKind::ml, StatisticKind::wald, Adjustment::bartlett};
  const Method ml_lr{LikelihoodKind::ml, StatisticKind::lr, Adjustment::none};
  const Method ml_s{LikelihoodKind::ml, StatisticKind::score, Adjustment::none};
  const Method reml_s{LikelihoodKind::reml, StatisticKind::score, Adjustment::none};
  const auto r = coverage_study(spec, {ml_w, ml_wb, ml_lr, ml_s, reml_s}, cfg);
  EXPECT_LT(r.row(ml_w, "A").coverage, r.row(ml_lr, "A").coverage);
  EXPECT_LT(r.row(ml_lr, "A").coverage, r.row(ml_s, "A").coverage);
  EXPECT_GT(r.row(reml_s, "A").coverage, 95.0);
  EXPECT_LT(std::abs(r.row(ml_wb, "A").coverage - 95), std::abs(r.row(ml_w, "A").coverage - 95));
}

TEST(Coverage, LargerNetworksCloserToNominal) {
  const Method ml_w{LikelihoodKind::ml, StatisticKind::wald, Adjustment::none};
  CoverageConfig cfg;
  cfg.contrasts = {"A"};
  auto s10 = scenarios::simulation1(10);
  auto s30 = scenarios::simulation1(30);
  s10.replications = s30.replications = 1000;
  const double c10 = coverage_study(s10, {ml_w}, cfg).row(ml_w, "A").coverage;
  const double c30 = coverage_study(s30, {ml_w}, cfg).row(ml_w, "A").coverage;
  EXPECT_LT(std::abs(c30 - 95), std::abs(c10 - 95));
}

TEST(Coverage, Reports) {
  auto spec = scenarios::simulation1(10);
  spec.replications = 20;
  CoverageConfig cfg;
  const auto r = coverage_study(spec, {{LikelihoodKind::reml, StatisticKind::lr, Adjustment::bartlett}}, cfg);
  const auto text = tsv(r);
  EXPECT_EQ(text.find("wall"), std::string::npos);
  EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 4);
  const auto j = to_json(r);
  EXPECT_EQ(j["rows"].size(), 3u);
  EXPECT_FALSE(j.contains("wall_seconds"));
  EXPECT_THROW(r.row({LikelihoodKind::ml, StatisticKind::lr, Adjustment::none}, "A"), Error);
  EXPECT_THROW(coverage_study(spec, {}, cfg), Error);
}

}  // namespace
