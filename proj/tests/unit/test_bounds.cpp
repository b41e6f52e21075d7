#include <gtest/gtest.h>

#include <cmath>

#include "mixcp/bounds.hpp"
#include "mixcp/random.hpp"
#include "oracles.hpp"

using namespace mixcp;

namespace {

void expect_matches_oracle(const BoundSpec& spec, const MixingProfile& prof) {
  const auto want = oracle::scan_bound(spec, prof);
  std::optional<BoundResult> got;
  try {
    got = optimize_block_plan(spec, prof);
  } catch (const Error& e) {
    ASSERT_EQ(e.code(), Errc::no_feasible_plan);
  }
  ASSERT_EQ(got.has_value(), want.has_value()) << prof.description() << " n=" << spec.n;
  if (!want) return;
  EXPECT_EQ(got->plan.a, want->a) << prof.description() << " n=" << spec.n;
  EXPECT_EQ(got->plan.m, want->m);
  EXPECT_EQ(got->plan.slack, want->slack);
  EXPECT_NEAR(got->eps, want->eps, 1e-12 * want->eps);
}

}  // namespace

TEST(IidEpsilon, Values) {
  EXPECT_NEAR(iid_epsilon(10000, 0.01), std::sqrt(std::log(200.0) / 20000.0), 1e-16);
  EXPECT_NEAR(iid_epsilon(10000, 0.01), 0.016276, 1e-6);
  EXPECT_NEAR(iid_epsilon(4000, 0.05), iid_epsilon(1000, 0.05) / 2, 1e-16);
  EXPECT_THROW(iid_epsilon(10, 2.0), Error);
}

TEST(IidEpsilon, VarianceVariant) {
  EXPECT_NEAR(iid_epsilon_variance(10000, 0.01, 0.1), std::sqrt(2 * 0.09 * std::log(200.0) / 10000), 1e-16);
  EXPECT_NEAR(iid_epsilon_variance(10000, 0.01, 0.1), 0.0097657, 1e-7);
  EXPECT_LT(iid_epsilon_variance(10000, 0.01, 1e-6), iid_epsilon_variance(10000, 0.01, 0.1));
  EXPECT_THROW(iid_epsilon_variance(100, 0.01, 0.6), Error);
  for (double a : {0.01, 0.1, 0.3, 0.49})
    EXPECT_LE(iid_epsilon_variance(1000, 0.05, a), 2 * std::sqrt(a * (1 - a)) * iid_epsilon(1000, 0.05) + 1e-15);
}

TEST(VarianceProxy, Values) {
  const auto zero = MixingProfile::constant(0);
  EXPECT_DOUBLE_EQ(variance_proxy(zero, 7), 0.5);
  EXPECT_NEAR(variance_proxy(zero, 7, 0.1), 0.3, 1e-15);
  EXPECT_NEAR(variance_proxy(MixingProfile::geometric(1, 0.5), 3), std::sqrt(0.25 + 2.0 / 3 * 1.25), 1e-15);
  EXPECT_NEAR(variance_proxy(MixingProfile::geometric(1, 0.5), 3), 1.0408, 1e-4);
  EXPECT_DOUBLE_EQ(variance_proxy(MixingProfile::geometric(1, 0.5), 1), 0.5);
}

TEST(EpsCalBeta, IndependentTenThousand) {
  const auto r = eps_cal_beta(10000, 0.01, MixingProfile::constant(0));
  EXPECT_EQ(r.plan.a, 1u);
  EXPECT_EQ(r.plan.m, 5000u);
  EXPECT_EQ(r.plan.slack, 1u);
  const double L = std::log(400.0);
  EXPECT_NEAR(r.eps, 0.5 * std::sqrt(4 * L / 10000) + L / 15000, 1e-15);
  EXPECT_NEAR(r.eps, 0.0249, 1e-4);
  EXPECT_FALSE(r.vacuous());
}

TEST(EpsCalBeta, DegenerateProfile) {
  try {
    eps_cal_beta(1000, 0.01, MixingProfile::constant(1));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::no_feasible_plan);
  }
}

TEST(EpsCalBeta, DependenceCosts) {
  const double dep = eps_cal_beta(10000, 0.01, MixingProfile::geometric(1, 0.5)).eps;
  EXPECT_GT(dep, eps_cal_beta(10000, 0.01, MixingProfile::constant(0)).eps);
  EXPECT_TRUE(std::isfinite(dep));
}

TEST(EpsTestBeta, Structure) {
  const auto r = eps_test_beta(10000, 500, 0.01, MixingProfile::constant(0));
  // With no dependence the best plan uses all points: s = 0, a = 1.
  EXPECT_EQ(r.plan.slack, 0u);
  EXPECT_EQ(r.plan.a, 1u);
  const double L = std::log(400.0);
  EXPECT_NEAR(r.eps, 0.5 * std::sqrt(4 * L / 10000) + L / 15000, 1e-15);
  try {
    eps_test_beta(1000, 50, 0.01, MixingProfile::table({{1, 0.5}, {50, 0.02}}));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::no_feasible_plan);
  }
  const auto g = eps_test_beta(15000, 15000, 0.005, MixingProfile::geometric(1, 0.9));
  expect_matches_oracle({BoundKind::test_beta, 15000, 15000, 0.005, std::nullopt, 0, 0, std::nullopt},
                        MixingProfile::geometric(1, 0.9));
  EXPECT_TRUE(std::isfinite(g.eps));
}

TEST(EpsConditional, GammaAndDimension) {
  const auto prof = MixingProfile::geometric(1, 0.3);
  BoundSpec s{BoundKind::cal_conditional, 20000, 0, 0.01, std::nullopt, 0.5, 2, std::nullopt};
  const auto at = eps_cal_conditional(20000, 0.01, prof, 0.5, 2);
  // Same plan, halved gamma doubles the value.
  s.gamma = 0.25;
  const double beta_a = prof(at.plan.a), tail = prof(at.plan.slack);
  const double v_half = *plan_value(s, at.plan.a, at.plan.m, at.plan.slack, beta_a, tail, 0);
  EXPECT_NEAR(v_half, 2 * at.eps, 1e-12);
  s.gamma = 0.5;
  s.vc_dim = 8;
  EXPECT_GT(*plan_value(s, at.plan.a, at.plan.m, at.plan.slack, beta_a, tail, 0), at.eps);
}

TEST(EpsConditional, IndependentMillion) {
  const auto r = eps_cal_conditional(1000000, 0.01, MixingProfile::constant(0), 0.25, 2);
  // Every plan is feasible with beta = 0; the best is the largest block count.
  EXPECT_EQ(r.plan.a, 1u);
  EXPECT_EQ(r.plan.m, 500000u);
  EXPECT_EQ(r.plan.slack, 1u);
  const double m = 500000;
  const double want = (4 * std::sqrt(std::log(2 * (m + 1) * (m + 1)) / m) + 2 * std::sqrt(std::log(1600.0) / (2 * m))) / 0.25;
  EXPECT_NEAR(r.eps, want, 1e-13);
}

TEST(EpsConditional, TestSide) {
  const auto prof = MixingProfile::geometric(2, 0.4);
  const auto r = eps_test_conditional(5000, 3000, 0.02, prof, 0.3, 1);
  expect_matches_oracle({BoundKind::test_conditional, 5000, 3000, 0.02, std::nullopt, 0.3, 1, std::nullopt}, prof);
  EXPECT_GT(eps_test_conditional(5000, 3000, 0.02, prof, 0.3, 3).eps, r.eps);
}

TEST(IidConditional, Formula) {
  const double n = 1e5;
  const double want = (4 * std::sqrt(std::log(2 * (n + 1)) / n) + 2 * std::sqrt(std::log(400.0) / (2 * n))) / 0.5;
  EXPECT_NEAR(iid_conditional_epsilon(100000, 0.01, 0.5, 1), want, 1e-15);
  EXPECT_NEAR(iid_conditional_epsilon(100000, 0.01, 0.25, 1), 2 * want, 1e-15);
  EXPECT_GT(iid_conditional_epsilon(100000, 0.01, 0.5, 3), want);
}

TEST(OptimizeBlockPlan, MatchesExhaustiveScan) {
  SplitMix64 rng(1234);
  for (int t = 0; t < 24; ++t) {
    MixingProfile prof = MixingProfile::constant(0);
    switch (t % 4) {
      case 0: prof = MixingProfile::geometric(0.2 + 3 * rng.uniform(), 0.05 + 0.9 * rng.uniform()); break;
      case 1: prof = MixingProfile::polynomial(1.2 + 3 * rng.uniform()); break;
      case 2: prof = MixingProfile::two_state(0.05 + 0.9 * rng.uniform(), 0.05 + 0.9 * rng.uniform()); break;
      case 3: prof = MixingProfile::table({{1, 0.3}, {4, 0.05}, {20, 0.001}, {200, 1e-6}}); break;
    }
    const std::size_t n = 50 + rng.next() % 4000;
    const double delta = 0.005 + 0.2 * rng.uniform();
    for (auto kind : {BoundKind::cal_beta, BoundKind::test_beta, BoundKind::cal_conditional, BoundKind::test_conditional}) {
      BoundSpec s{kind, n, 1 + rng.next() % 3000, delta, std::nullopt, 0.1 + 0.8 * rng.uniform(),
                  1 + rng.next() % 4, std::nullopt};
      if (t % 3 == 0 && (kind == BoundKind::cal_beta || kind == BoundKind::test_beta)) s.alpha = 0.1;
      expect_matches_oracle(s, prof);
    }
  }
}

TEST(OptimizeBlockPlan, MonotoneInSampleSize) {
  const auto prof = MixingProfile::geometric(1, 0.6);
  double prev = 1e9;
  for (std::size_t n = 500; n <= 20000; n += 500) {
    const double e = eps_cal_beta(n, 0.01, prof).eps;
    EXPECT_LE(e, prev + 1e-15) << n;
    prev = e;
  }
}

TEST(OptimizeBlockPlan, MonotoneInProfile) {
  for (std::size_t n : {1000u, 5000u, 20000u}) {
    const double lo = eps_cal_beta(n, 0.01, MixingProfile::geometric(1, 0.3)).eps;
    const double hi = eps_cal_beta(n, 0.01, MixingProfile::geometric(1, 0.6)).eps;
    EXPECT_LE(lo, hi);
  }
}

TEST(OptimizeBlockPlan, VarianceVariantNeverWorse) {
  const auto prof = MixingProfile::two_state(0.3, 0.2);
  for (double a : {0.01, 0.1, 0.3, 0.5, 0.9}) {
    EXPECT_LE(eps_cal_beta(8000, 0.01, prof, a).eps, eps_cal_beta(8000, 0.01, prof).eps);
    EXPECT_LE(eps_test_beta(8000, 4000, 0.01, prof, a).eps, eps_test_beta(8000, 4000, 0.01, prof).eps);
  }
}

TEST(OptimizeBlockPlan, IidOrderRecovered) {
  for (std::size_t n : {1000u, 10000u, 100000u})
    EXPECT_LE(eps_cal_beta(n, 0.01, MixingProfile::constant(0)).eps, 2 * iid_epsilon(n, 0.01));
}

TEST(EpsTrain, Values) {
  EXPECT_EQ(eps_train(5, MixingProfile::constant(0)), 0.0);
  EXPECT_DOUBLE_EQ(eps_train(3, MixingProfile::geometric(1, 0.5)), 0.125);
  const auto p = MixingProfile::two_state(0.2, 0.2);
  EXPECT_GE(eps_train(1, p), eps_train(10, p));
}

TEST(Assembly, EtaRules) {
  const ConfidenceParams params(0.1, 0.005, 0.01);
  EXPECT_EQ(eta_marginal(params, 0, 0), 0.005);
  EXPECT_DOUBLE_EQ(eta_marginal(params, 0.01, 0.02), 0.035);
  EXPECT_DOUBLE_EQ(eta_empirical(0.01, 0.02), 0.03);
  EXPECT_EQ(eta_empirical(0, 0), 0.0);

  const auto prof = MixingProfile::two_state(0.4, 0.4);
  const auto m = marginal_factors(params, 5000, prof, 5001);
  EXPECT_EQ(m.eta, recompute_eta(m));
  EXPECT_EQ(m.guarantee, Guarantee::marginal);
  const auto e = empirical_factors(params, 5000, 3000, prof, true);
  EXPECT_EQ(e.eta, recompute_eta(e));
  EXPECT_DOUBLE_EQ(e.failure_probability, 2 * (0.005 + 0.01));
  EXPECT_DOUBLE_EQ(empirical_factors(params, 5000, 3000, prof).failure_probability, 0.015);
  const auto i = iid_marginal_factors(params, 5000);
  EXPECT_DOUBLE_EQ(i.eta, iid_epsilon(5000, 0.005) + 0.005);
  EXPECT_THROW(ConfidenceParams(0.1, 0.0, 0.1), Error);
}

TEST(PopulationQuantile, UniformAndConstant) {
  SplitMix64 rng(99);
  auto uniform_draw = [&] { return std::pair<double, double>{0.0, rng.uniform()}; };
  auto y_score = [](double, double y) { return y; };
  EXPECT_NEAR(estimate_population_quantile(uniform_draw, y_score, QuantileLevel(0.9), 1000000), 0.9, 0.005);
  auto constant_draw = [] { return std::pair<double, double>{0.0, 3.5}; };
  EXPECT_EQ(estimate_population_quantile(constant_draw, y_score, QuantileLevel(0.3), 10000), 3.5);
  EXPECT_THROW(estimate_population_quantile(constant_draw, y_score, QuantileLevel(0.3), 100), Error);
}
