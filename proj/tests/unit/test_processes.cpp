#include <gtest/gtest.h>

#include <cmath>
#include <sstream>
#include <vector>

#include "mixcp/processes.hpp"

using namespace mixcp;

namespace {

std::vector<double> vec(const TimeSeries& s) { return {s.values().begin(), s.values().end()}; }

}  // namespace

TEST(Hmm, TransitionFrequencies) {
  HmmConfig cfg;
  cfg.p = 0.2;
  cfg.q = 0.05;
  cfg.length = 400000;
  cfg.seed = 1;
  const auto path = simulate_two_state_hmm_path(cfg);
  double n0 = 0, n01 = 0, n1 = 0, n10 = 0, ones = 0;
  for (std::size_t t = 0; t + 1 < path.states.size(); ++t) {
    if (path.states[t] == 0) {
      ++n0;
      n01 += path.states[t + 1] == 1;
    } else {
      ++n1;
      n10 += path.states[t + 1] == 0;
    }
    ones += path.states[t];
  }
  EXPECT_NEAR(n01 / n0, 0.2, 0.01);
  EXPECT_NEAR(n10 / n1, 0.05, 0.003);
  EXPECT_NEAR(ones / static_cast<double>(cfg.length), 0.8, 0.02);
}

TEST(Hmm, StickyChainRunLength) {
  HmmConfig cfg;
  cfg.p = cfg.q = 0.01;
  cfg.length = 200000;
  cfg.seed = 9;
  const auto path = simulate_two_state_hmm_path(cfg);
  double runs = 1;
  for (std::size_t t = 1; t < path.states.size(); ++t) runs += path.states[t] != path.states[t - 1];
  EXPECT_NEAR(static_cast<double>(cfg.length) / runs, 100.0, 15.0);
}

TEST(Hmm, NoiselessEmissionsAreStates) {
  HmmConfig cfg;
  cfg.noise_sigma = 0.0;
  cfg.length = 100;
  const auto path = simulate_two_state_hmm_path(cfg);
  for (std::size_t t = 0; t < cfg.length; ++t) ASSERT_EQ(path.observations[t], path.states[t]);
}

TEST(Hmm, Determinism) {
  HmmConfig cfg;
  cfg.p = 0.3;
  cfg.q = 0.4;
  cfg.length = 500;
  cfg.seed = 42;
  EXPECT_EQ(vec(simulate_two_state_hmm(cfg)), vec(simulate_two_state_hmm(cfg)));
  auto other = cfg;
  other.seed = 43;
  EXPECT_NE(vec(simulate_two_state_hmm(cfg)), vec(simulate_two_state_hmm(other)));
}

TEST(Hmm, Validation) {
  HmmConfig cfg;
  cfg.p = 1.0;
  EXPECT_THROW(simulate_two_state_hmm(cfg), Error);
  cfg.p = 0.5;
  cfg.noise_sigma = -1;
  EXPECT_THROW(simulate_two_state_hmm(cfg), Error);
}

TEST(Ar1, StationaryMoments) {
  Ar1Config cfg{0.8, 500000, 3};
  const auto s = simulate_ar1(cfg);
  double mean = 0, var = 0, cov = 0;
  for (double v : s.values()) mean += v;
  mean /= static_cast<double>(s.size());
  for (std::size_t t = 0; t < s.size(); ++t) {
    var += (s[t] - mean) * (s[t] - mean);
    if (t > 0) cov += (s[t] - mean) * (s[t - 1] - mean);
  }
  var /= static_cast<double>(s.size());
  cov /= static_cast<double>(s.size() - 1);
  EXPECT_NEAR(mean, 0.0, 0.03);
  EXPECT_NEAR(var, 1.0 / (1 - 0.64), 0.08);
  EXPECT_NEAR(cov / var, 0.8, 0.01);
}

TEST(Ar1, ZeroLambdaIsWhiteNoise) {
  const auto s = simulate_ar1({0.0, 200000, 5});
  double var = 0;
  for (double v : s.values()) var += v * v;
  EXPECT_NEAR(var / static_cast<double>(s.size()), 1.0, 0.02);
}

TEST(Ar1, RejectsUnitRoot) {
  try {
    simulate_ar1({1.0, 10, 0});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::non_stationary_lambda);
  }
  EXPECT_EQ(vec(simulate_ar1({0.5, 100, 7})), vec(simulate_ar1({0.5, 100, 7})));
}

TEST(WritePath, RoundTripsExactly) {
  const auto s = simulate_ar1({0.3, 50, 11});
  std::ostringstream out;
  write_path(out, s);
  std::istringstream in(out.str());
  for (std::size_t t = 0; t < s.size(); ++t) {
    double v;
    in >> v;
    ASSERT_EQ(v, s[t]);
  }
}
