#include <gtest/gtest.h>

#include "pixscale/scaling.hpp"

using namespace pixscale;

namespace {

IsoProfile make_profile(double budget, Direction dir, std::vector<std::pair<double, double>> nv) {
  IsoProfile p;
  p.budget = budget;
  p.direction = dir;
  p.metric = dir == Direction::minimize ? metric::eval_loss : metric::probe_accuracy;
  for (auto [n, v] : nv) p.points.push_back({n, 0, v});
  return p;
}

const std::vector<double> kLadder = {-0.9, -0.6, -0.3, 0.0, 0.3, 0.6, 0.9};
const std::vector<double> kBudgets = {4.5e18, 1.1e19, 2.8e19, 7e19};

}  // namespace

TEST(Parabola, ThreePointsExact) {
  // 2 (u - 4)^2 + 1 sampled at u = 3, 4, 5.
  const auto f = fit_parabola(make_profile(1e15, Direction::minimize, {{1e3, 3.0}, {1e4, 1.0}, {1e5, 3.0}}));
  EXPECT_NEAR(f.c2, 2.0, 1e-10);
  EXPECT_NEAR(f.c1, -16.0, 1e-9);
  EXPECT_NEAR(f.c0, 33.0, 1e-8);
  EXPECT_NEAR(f.u_opt, 4.0, 1e-12);
  EXPECT_NEAR(f.value_opt, 1.0, 1e-12);
  EXPECT_FALSE(f.extrapolated);
}

TEST(Parabola, AsymmetricThreePointOracle) {
  // Lagrange vertex of (u, v) = (1, 5), (2, 2), (4, 8).
  const auto f = fit_parabola(make_profile(1e15, Direction::minimize, {{10, 5}, {100, 2}, {1e4, 8}}));
  // v = 2u^2 - 9u + 12, vertex (2.25, 1.875).
  EXPECT_NEAR(f.c2, 2.0, 1e-10);
  EXPECT_NEAR(f.c1, -9.0, 1e-10);
  EXPECT_NEAR(f.c0, 12.0, 1e-10);
  EXPECT_NEAR(f.u_opt, 2.25, 1e-12);
  EXPECT_NEAR(f.value_opt, 1.875, 1e-10);
}

TEST(Parabola, MaximizeDirection) {
  const auto f = fit_parabola(make_profile(1e15, Direction::maximize, {{1e3, 0.6}, {1e4, 0.7}, {1e5, 0.6}, {1e6, 0.3}}));
  EXPECT_LT(f.c2, 0.0);
  const auto g = fit_parabola(make_profile(1e15, Direction::minimize, {{1e3, -0.6}, {1e4, -0.7}, {1e5, -0.6}, {1e6, -0.3}}));
  EXPECT_NEAR(f.u_opt, g.u_opt, 1e-12);
  EXPECT_NEAR(f.value_opt, -g.value_opt, 1e-12);
}

TEST(Parabola, WrongCurvatureRaisesAndFallsBack) {
  const auto p = make_profile(1e15, Direction::minimize, {{1e3, 1.0}, {1e4, 2.0}, {1e5, 1.0}});
  EXPECT_THROW(fit_parabola(p), NoInteriorOptimum);
  const OptimalPoint o = profile_optimum(p);
  EXPECT_TRUE(o.boundary);
  EXPECT_TRUE(o.extrapolated);
  EXPECT_EQ(o.n_opt, 1e3);  // first of the tied minima
  EXPECT_EQ(o.value_opt, 1.0);
}

TEST(Parabola, ExtrapolatedVertexFlagged) {
  // Vertex at u = 7 with data on [3, 5].
  std::vector<std::pair<double, double>> nv;
  for (double u : {3.0, 4.0, 5.0}) nv.emplace_back(std::pow(10, u), (u - 7) * (u - 7));
  EXPECT_TRUE(fit_parabola(make_profile(1e15, Direction::minimize, nv)).extrapolated);
}

TEST(Profile, Validation) {
  EXPECT_THROW(fit_parabola(make_profile(1e15, Direction::minimize, {{1e3, 1}, {1e4, 2}})), Error);
  EXPECT_THROW(fit_parabola(make_profile(1e15, Direction::minimize, {{1e3, 1}, {1e3, 2}, {1e4, 1}})), Error);
  IsoProfile p = make_profile(1e15, Direction::minimize, {{1e3, 3}, {1e4, 1}, {1e5, 3}});
  p.points[0].tokens = 1e15 / 6e3;
  EXPECT_NO_THROW(fit_parabola(p));
  p.points[1].tokens = 1.02 * 1e15 / 6e4;
  EXPECT_THROW(fit_parabola(p), Error);
}

TEST(OptimalPoint, TokensFromSixND) {
  const auto f = fit_parabola(make_profile(6e12, Direction::minimize, {{1e3, 3.0}, {1e4, 1.0}, {1e5, 3.0}}));
  const OptimalPoint o = optimal_point(f, 6e12);
  EXPECT_NEAR(o.n_opt, 1e4, 1e-6);
  EXPECT_NEAR(o.d_opt, 1e8, 1e-2);
}

TEST(PowerLaw, ExactRecovery) {
  std::vector<std::pair<double, double>> pts;
  for (double c : {1e10, 1e11, 1e12, 1e13}) pts.emplace_back(c, 3.0 * std::pow(c, 0.55));
  const auto f = fit_power_law(pts);
  EXPECT_NEAR(f.exponent, 0.55, 1e-12);
  EXPECT_NEAR(f.log10_coef, std::log10(3.0), 1e-10);
  EXPECT_NEAR(f.r2, 1.0, 1e-12);
  EXPECT_NEAR(f.predict(1e14), 3.0 * std::pow(1e14, 0.55), 1e-6 * 3.0 * std::pow(1e14, 0.55));
}

TEST(PowerLaw, MonteCarloUnbiased) {
  // OLS slope is unbiased under log-normal noise: mean over trials ~ truth.
  Rng rng(3);
  double mean = 0;
  const int trials = 400;
  for (int t = 0; t < trials; ++t) {
    std::vector<std::pair<double, double>> pts;
    for (double c : {1e10, 1e11, 1e12, 1e13, 1e14}) pts.emplace_back(c, std::pow(c, 0.4) * std::pow(10.0, 0.05 * rng.normal()));
    mean += fit_power_law(pts).exponent;
  }
  mean /= trials;
  // sd of one slope = 0.05 / sqrt(10) ~ 0.016; of the mean ~ 0.0008.
  EXPECT_NEAR(mean, 0.4, 0.004);
}

TEST(PowerLaw, Errors) {
  EXPECT_THROW(fit_power_law(std::vector<std::pair<double, double>>{{1, 1}}), Error);
  EXPECT_THROW(fit_power_law(std::vector<std::pair<double, double>>{{1, 1}, {1, 2}}), Error);
  EXPECT_THROW(fit_power_law(std::vector<std::pair<double, double>>{{1, 1}, {2, -2}}), Error);
}

TEST(Frontier, LinearInLogCompute) {
  std::vector<OptimalPoint> opt(3);
  for (int i = 0; i < 3; ++i) {
    opt[i].budget = std::pow(10.0, 20 + i);
    opt[i].value_opt = 0.5 + 0.1 * i;
  }
  const auto f = fit_frontier(metric::probe_accuracy, opt);
  EXPECT_NEAR(f.slope, 0.1, 1e-12);
  EXPECT_NEAR(f.predict(1e23), 0.8, 1e-12);
  EXPECT_EQ(f.predict(1e40), 1.0);  // clamped accuracy
  const auto g = fit_frontier(metric::eval_loss, opt);
  EXPECT_GT(g.predict(1e40), 1.0);
}

TEST(Projection, PerPixelNormalization) {
  const auto n = calibrated_power_law(0.5, 1e22, 4e9);
  const auto d = calibrated_power_law(0.5, 1e22, 1e22 / (6 * 4e9));
  const Projection p = project(n, d, nullptr, 1e24, 32);
  EXPECT_NEAR(p.n_opt, 4e10, 1e-3 * 4e10);
  EXPECT_NEAR(p.d_per_pixel, p.d_opt / 1024, 1e-6 * p.d_per_pixel);
  EXPECT_NEAR(6 * p.n_opt * p.d_opt / 1e24, 1.0, 1e-9);
  EXPECT_NEAR(p.extrapolation_decades, 2.0, 1e-12);
  EXPECT_FALSE(p.metric_value.has_value());
}

TEST(Forecast, LogRatio) {
  EXPECT_NEAR(forecast_years(1e24, 1e26, 4.0), std::log(100.0) / std::log(4.0), 1e-12);
  EXPECT_EQ(forecast_years(1e24, 1e24, 5.0), 0.0);
  EXPECT_THROW(forecast_years(1e24, 1e26, 1.0), Error);
  EXPECT_THROW(forecast_years(1e26, 1e24, 4.0), Error);
}

TEST(Profiles, GroupByBudgetAndResolution) {
  SyntheticTruth truth;
  auto recs = synthetic_records(truth, kBudgets, kLadder, 1, 32);
  auto more = synthetic_records(truth, std::vector<double>{1e19}, kLadder, 2, 16);
  recs.insert(recs.end(), more.begin(), more.end());
  EXPECT_EQ(build_profiles(recs, metric::eval_loss, 32).size(), 4u);
  EXPECT_EQ(build_profiles(recs, metric::eval_loss, 16).size(), 1u);
  EXPECT_EQ(build_profiles(recs, metric::eval_loss).size(), 5u);
  EXPECT_TRUE(build_profiles(recs, metric::probe_accuracy).empty());
  EXPECT_THROW(build_profiles(recs, "bogus"), Error);
}

TEST(Synthetic, NoiseFreeRecoversTruth) {
  SyntheticTruth truth;
  truth.noise = 0;
  truth.center_jitter = 0;
  const auto recs = synthetic_records(truth, kBudgets, kLadder, 1);
  const auto profiles = build_profiles(recs, metric::eval_loss);
  const auto rep = analyze(profiles);
  EXPECT_NEAR(rep.n_fit.exponent, 0.55, 1e-4);
  EXPECT_NEAR(rep.n_fit.exponent + rep.d_fit.exponent, 1.0, 1e-9);
  EXPECT_LT(rep.frontier.slope, 0.0);
}

TEST(Synthetic, ShortRegistryIsInsufficient) {
  const auto recs = synthetic_records(SyntheticTruth{}, std::vector<double>{1e19, 1e20}, std::vector<double>{0.0, 0.3}, 1);
  EXPECT_THROW(analyze(build_profiles(recs, metric::eval_loss)), Error);
}

TEST(Reference, ExponentsSumToOne) {
  for (const auto& e : kReferenceExponents32) EXPECT_NEAR(e.a + e.b, 1.0, 1e-12) << e.metric;
  EXPECT_EQ(reference_projection_table().size(), 18u);
}

TEST(Properties, VertexInvariantToConstantShift) {
  Rng rng(4);
  for (int t = 0; t < 20; ++t) {
    std::vector<std::pair<double, double>> nv, shifted;
    const double c = rng.uniform(-5, 5);
    for (double u : {3.0, 3.4, 3.9, 4.3, 5.0}) {
      const double v = (u - 4) * (u - 4) + 0.1 * rng.normal();
      nv.emplace_back(std::pow(10, u), v);
      shifted.emplace_back(std::pow(10, u), v + c);
    }
    const auto a = fit_parabola(make_profile(1e15, Direction::minimize, nv));
    const auto b = fit_parabola(make_profile(1e15, Direction::minimize, shifted));
    EXPECT_NEAR(a.u_opt, b.u_opt, 1e-9);
    EXPECT_NEAR(a.value_opt + c, b.value_opt, 1e-9);
  }
}

TEST(Properties, ExponentInvariantToComputeRescale) {
  std::vector<std::pair<double, double>> pts, scaled;
  Rng rng(5);
  for (double c : {1e18, 1e19, 1e20, 1e21}) {
    const double y = std::pow(c, 0.5) * (1 + 0.1 * rng.normal());
    pts.emplace_back(c, y);
    scaled.emplace_back(37.0 * c, y);
  }
  EXPECT_NEAR(fit_power_law(pts).exponent, fit_power_law(scaled).exponent, 1e-12);
}

TEST(Properties, PerPixelRoundTripIsExact) {
  const auto n = calibrated_power_law(0.56, 1e22, 4.02e9);
  const auto d = calibrated_power_law(0.44, 1e22, 0.40e9 * 1024);
  for (int s : {8, 16, 32, 64}) {
    const Projection p = project(n, d, nullptr, 3e23, s);
    EXPECT_EQ(p.n_per_pixel * s * s, p.n_opt);
    EXPECT_EQ(p.d_per_pixel * s * s, p.d_opt);
  }
}

TEST(Properties, PublishedExponentsReproduceProjectionRows) {
  // Calibrate on the 1e22 accuracy row at 32x32 and project the other two.
  const auto& e = kReferenceExponents32[1];
  const auto n = calibrated_power_law(e.a, 1e22, 4.02e9);
  EXPECT_NEAR(n.predict(1e23) / 14.71e9, 1.0, 0.10);
  EXPECT_NEAR(n.predict(1e24) / 53.8e9, 1.0, 0.10);
}

TEST(Properties, SyntheticProjectionAtTenfoldExtrapolation) {
  SyntheticTruth truth;
  const auto recs = synthetic_records(truth, kBudgets, kLadder, 21);
  const auto rep = analyze(build_profiles(recs, metric::eval_loss));
  const double target = 7e20;
  const Projection p = project(rep.n_fit, rep.d_fit, &rep.frontier, target, 32);
  const double truth_n = std::pow(10.0, truth.n_coef_log10 + truth.a * std::log10(target));
  EXPECT_NEAR(p.n_opt / truth_n, 1.0, 0.05);
  EXPECT_NEAR(6 * p.n_opt * p.d_opt / target, 1.0, 0.05);
}

TEST(Forecast, SpecExamples) {
  EXPECT_NEAR(forecast_years(1e20, 1e24, 10.0), 4.0, 1e-12);
  EXPECT_NEAR(forecast_years(1e20, 1e24, 4.5), 6.12, 0.005);
}
