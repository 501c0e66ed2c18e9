#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include <downscale/marginals.hpp>

using namespace downscale;

TEST(SolveBeta, SymmetricCase) {
  const auto b = solve_beta(0.5, std::sqrt(0.05));
  EXPECT_NEAR(b.alpha, 2.0, 1e-10);
  EXPECT_NEAR(b.beta, 2.0, 1e-10);
  // Independent check of the forward moment equations.
  EXPECT_NEAR(b.alpha * b.beta / ((b.alpha + b.beta) * (b.alpha + b.beta) * (b.alpha + b.beta + 1)), 0.05, 1e-12);
}

TEST(SolveBeta, AsymmetricCase) {
  const auto b = solve_beta(0.2, 0.1);
  EXPECT_NEAR(b.alpha, 3.0, 1e-10);
  EXPECT_NEAR(b.beta, 12.0, 1e-10);
  EXPECT_NEAR(beta_mean(b), 0.2, 1e-12);
  EXPECT_NEAR(beta_variance(b), 0.01, 1e-12);
}

TEST(SolveBeta, VarianceCeilingClamp) {
  for (double sd : {0.5, 0.7, 10.0}) {
    const auto b = solve_beta(0.5, sd);
    EXPECT_NEAR(b.alpha, 0.5 * (1.0 / 0.999 - 1.0), 1e-12);
    EXPECT_NEAR(b.alpha, 0.0005, 1e-6);
    EXPECT_DOUBLE_EQ(b.alpha, b.beta);
    EXPECT_NEAR(beta_variance(b), 0.999 * 0.25, 1e-12);
  }
}

TEST(SolveBeta, VarianceFloorAndMeanPreserved) {
  const auto b = solve_beta(0.3, 0.0);
  EXPECT_NEAR(beta_variance(b), 1e-6, 1e-15);
  for (double mu : {1e-4, 0.01, 0.37, 0.999}) {
    for (double sd : {0.0, 0.01, 0.2, 3.0}) {
      const auto law = solve_beta(mu, sd);
      EXPECT_GT(law.alpha, 0.0);
      EXPECT_GT(law.beta, 0.0);
      EXPECT_NEAR(beta_mean(law), mu, 1e-12 * mu);
    }
  }
}

TEST(SolveBeta, RejectsBoundaryMeans) {
  EXPECT_THROW(solve_beta(0.0, 0.1), ValidationError);
  EXPECT_THROW(solve_beta(1.0, 0.1), ValidationError);
  EXPECT_THROW(solve_beta(0.5, -1.0), ValidationError);
}

TEST(SolveLognormal, ClosedForms) {
  const auto zero = solve_lognormal(1.0, 0.0);
  EXPECT_EQ(zero.sigma_log, 0.0);
  EXPECT_DOUBLE_EQ(zero.mu_log, 0.0);

  const auto unit = solve_lognormal(1.0, 1.0);
  EXPECT_NEAR(unit.sigma_log * unit.sigma_log, std::numbers::ln2, 1e-15);
  EXPECT_NEAR(unit.mu_log, -std::numbers::ln2 / 2, 1e-15);

  const auto income = solve_lognormal(50000.0, 25000.0);
  EXPECT_NEAR(lognormal_mean(income), 50000.0, 50000.0 * 1e-9);
  EXPECT_NEAR(lognormal_sd(income), 25000.0, 25000.0 * 1e-12);
  EXPECT_THROW(solve_lognormal(0.0, 1.0), ValidationError);
}

namespace {

CoarseTable two_feature_table() {
  CoarseTable t;
  t.units.push_back({"a", 49, {{"g", std::vector<double>{0.0, 1.0}}, {"x", 10.0}}});
  t.units.push_back({"b", 100, {{"g", std::vector<double>{0.3, 0.7}}, {"x", 14.0}}});
  t.units.push_back({"c", 4, {{"g", std::vector<double>{0.5, 0.5}}, {"x", 12.0}}});
  return t;
}

std::vector<Coordinate> coords() {
  return {{"g", std::size_t{0}}, {"g", std::size_t{1}}, {"x", std::nullopt}};
}

}  // namespace

TEST(UnitSd, Modes) {
  EXPECT_NEAR(unit_sd(0.05, SdMode::sqrt_n, 500, 49), 0.35, 1e-15);
  EXPECT_NEAR(unit_sd(0.05, SdMode::paper, 4, 49), 0.7, 1e-15);
  EXPECT_EQ(unit_sd(0.05, SdMode::pooled, 4, 49), 0.05);
  EXPECT_EQ(parse_sd_mode("paper"), SdMode::paper);
  EXPECT_THROW(parse_sd_mode("sqrt"), ValidationError);
}

TEST(PooledSd, UnbiasedEstimator) {
  const auto sd = pooled_sd(two_feature_table(), coords());
  EXPECT_NEAR(sd[2], 2.0, 1e-12);  // values 10, 14, 12
  const auto without_b = pooled_sd(two_feature_table(), coords(), {"b"});
  EXPECT_NEAR(without_b[2], std::sqrt(2.0), 1e-12);
}

TEST(FitUnitMarginals, ClampsBoundaryProportions) {
  auto t = two_feature_table();
  t.units[0].population = 100;
  const auto m = fit_unit_marginals(t, coords(), {0.1, 0.1, 2.0}, SdMode::pooled, 3);
  EXPECT_DOUBLE_EQ(m[0][0].mean, 0.005);
  EXPECT_DOUBLE_EQ(m[0][1].mean, 0.995);
  EXPECT_NEAR(beta_mean(m[0][0].beta()), 0.005, 1e-14);
  EXPECT_FALSE(m[0][2].is_beta());
  EXPECT_NEAR(lognormal_mean(m[0][2].lognormal()), 10.0, 1e-12);
}

TEST(FitUnitMarginals, ZeroPooledSdGivesMinimumVariance) {
  const auto m = fit_unit_marginals(two_feature_table(), coords(), {0.0, 0.0, 0.0}, SdMode::sqrt_n, 3);
  for (const auto& row : m) {
    EXPECT_NEAR(beta_variance(row[0].beta()), 1e-6, 1e-15);
    EXPECT_EQ(row[2].lognormal().sigma_log, 0.0);
  }
}

TEST(FitUnitMarginals, SqrtNScalesPerUnit) {
  const auto m = fit_unit_marginals(two_feature_table(), coords(), {0.05, 0.05, 0.1}, SdMode::sqrt_n, 3);
  EXPECT_NEAR(m[0][0].sd, 0.35, 1e-15);
  EXPECT_NEAR(m[1][2].sd, 1.0, 1e-15);
  EXPECT_NEAR(lognormal_sd(m[1][2].lognormal()), 1.0, 1e-12);
}

TEST(MarginalQuantile, DispatchesOnLaw) {
  MarginalSpec beta{BetaLaw{2, 2}, 0.5, 0.2};
  MarginalSpec logn{LogNormalLaw{0.0, 0.5}, 1.0, 0.5};
  EXPECT_NEAR(MarginalQuantile(beta)(0.5, 0.5), 0.5, 1e-14);
  EXPECT_NEAR(MarginalQuantile(logn)(0.5, 0.5), 1.0, 1e-14);
}
