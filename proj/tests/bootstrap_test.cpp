#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "test_support.hpp"

using namespace nmaci;
using namespace nmaci::testing;

namespace {

TEST(OrderStatistic, Index) {
  EXPECT_EQ(order_statistic_index(19, 0.05), 19);
  EXPECT_EQ(order_statistic_index(1001, 0.05), 952);
  EXPECT_EQ(order_statistic_index(99, 0.05), 95);
  EXPECT_EQ(order_statistic_index(501, 0.05), 477);
  EXPECT_THROW(order_statistic_index(10, 0.05), Error);
}

TEST(OrderStatistic, MonotoneInIndex) {
  std::mt19937_64 rng(3);
  std::exponential_distribution<double> e;
  std::vector<double> v(1001);
  for (auto& x : v) x = e(rng);
  double prev = -1;
  for (double a : {0.5, 0.2, 0.1, 0.05, 0.01}) {
    auto copy = v;
    const double q = upper_order_statistic(copy, a);
    EXPECT_GE(q, prev);
    prev = q;
  }
}

TEST(Engine, ChiSquareShim) {
  auto draw = [](int, Rng& rng) -> std::optional<std::array<double, 1>> {
    std::normal_distribution<double> g;
    const double z = g(rng);
    return std::array<double, 1>{z * z};
  };
  const auto q = bootstrap_order_statistics<1>(20000, 0.05, 5, 1, 0.02, draw);
  EXPECT_NEAR(q[0], 3.8415, 0.1);
}

TEST(Engine, AbortsOnFailures) {
  auto draw = [](int b, Rng&) -> std::optional<std::array<double, 1>> {
    if (b % 10 == 0) return std::nullopt;
    return std::array<double, 1>{1.0};
  };
  try {
    bootstrap_order_statistics<1>(200, 0.05, 5, 1, 0.02, draw);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::refit_failure);
  }
  int failures = -1;
  bootstrap_order_statistics<1>(200, 0.05, 5, 1, 0.2, draw, &failures);
  EXPECT_EQ(failures, 20);
}

BootstrapConfig config(int m, std::uint64_t seed, int width) {
  BootstrapConfig c;
  c.m = m;
  c.seed = seed;
  c.width = width;
  return c;
}

TEST(Quantiles, DeterministicAcrossWidths) {
  const auto m = diagonal_model();
  const auto fits = fit_null_pair(m, LikelihoodKind::ml, NullSpec::select(1, 0, 0.0));
  const std::vector<StatisticKind> all{StatisticKind::wald, StatisticKind::lr, StatisticKind::score};
  const auto a = bootstrap_quantiles(m, fits, all, config(199, 42, 1));
  const auto b = bootstrap_quantiles(m, fits, all, config(199, 42, 8));
  const auto c = bootstrap_quantiles(m, fits, all, config(199, 43, 1));
  EXPECT_EQ(a.z_star_w, b.z_star_w);
  EXPECT_EQ(a.z_star_lr, b.z_star_lr);
  EXPECT_EQ(a.z_star_s, b.z_star_s);
  EXPECT_NE(a.z_star_w, c.z_star_w);
  EXPECT_GT(a.z_star_w, 0);
}

TEST(Quantiles, RequestedKindsOnly) {
  const auto m = diagonal_model();
  const auto fits = fit_null_pair(m, LikelihoodKind::reml, NullSpec::select(1, 0, 0.0));
  const auto q = bootstrap_quantiles(m, fits, {StatisticKind::lr}, config(99, 1, 1));
  EXPECT_TRUE(std::isfinite(q.z_star_lr));
  EXPECT_TRUE(std::isnan(q.z_star_w));
  EXPECT_THROW(bootstrap_adjusted_ci(m, fits, StatisticKind::wald, 0.05, q), Error);
  EXPECT_THROW(bootstrap_quantiles(m, fits, {StatisticKind::lr}, config(50, 1, 1)), Error);
}

TEST(BootstrapCi, ReducesToBartlettAtChiSquarePoint) {
  const auto m = simulation1_model();
  const auto fits = fit_null_pair(m, LikelihoodKind::reml, NullSpec::select(3, 1, 0.702));
  BootstrapQuantiles q;
  q.z_star_w = q.z_star_lr = q.z_star_s = chi2_critical(0.05);
  for (auto st : {StatisticKind::wald, StatisticKind::lr, StatisticKind::score}) {
    const auto b = bootstrap_adjusted_ci(m, fits, st, 0.05, q);
    const auto a = adjusted_ci(m, fits, st, 0.05);
    EXPECT_DOUBLE_EQ(b.lower, a.lower);
    EXPECT_DOUBLE_EQ(b.upper, a.upper);
    EXPECT_NEAR(b.upper - b.center, b.center - b.lower, 1e-12);
    EXPECT_EQ(b.adjustment, Adjustment::bartlett_bootstrap);
  }
}

TEST(BootstrapCi, ReproducibleDiagonal) {
  const auto m = diagonal_model();
  const auto fits = fit_null_pair(m, LikelihoodKind::reml, NullSpec::select(1, 0, 0.0));
  const auto a = bootstrap_adjusted_ci(m, fits, StatisticKind::lr, config(1001, 42, 1));
  const auto b = bootstrap_adjusted_ci(m, fits, StatisticKind::lr, config(1001, 42, 8));
  EXPECT_EQ(a.lower, b.lower);
  EXPECT_EQ(a.upper, b.upper);
  EXPECT_NEAR(a.upper - a.center, a.center - a.lower, 1e-12);
}

TEST(BootstrapCi, GenerationSourceSwitch) {
  const auto m = simulation1_model();
  const auto fits = fit_null_pair(m, LikelihoodKind::reml, NullSpec::select(3, 0, 0.2));
  auto c = config(199, 11, 1);
  const auto a = bootstrap_quantiles(m, fits, {StatisticKind::lr}, c);
  c.source = BootstrapSource::null_mean_at_theta_tilde;
  const auto b = bootstrap_quantiles(m, fits, {StatisticKind::lr}, c);
  EXPECT_TRUE(std::isfinite(a.z_star_lr));
  EXPECT_TRUE(std::isfinite(b.z_star_lr));
  EXPECT_NE(a.z_star_lr, b.z_star_lr);
}

}  // namespace
