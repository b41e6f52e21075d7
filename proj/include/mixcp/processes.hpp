#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <ostream>
#include <vector>

#include "mixcp/core.hpp"
#include "mixcp/error.hpp"
#include "mixcp/random.hpp"

namespace mixcp {

struct HmmConfig {
  double p = 0.5;              // P(0 -> 1)
  double q = 0.5;              // P(1 -> 0)
  double noise_sigma = 0.1;    // Gaussian emission noise
  std::size_t length = 1000;
  std::uint64_t seed = 0;

  void validate() const {
    require(p > 0.0 && p < 1.0 && q > 0.0 && q < 1.0, Errc::bad_parameter,
            "HMM transition probabilities must lie in (0,1)");
    require(noise_sigma >= 0.0 && std::isfinite(noise_sigma), Errc::bad_parameter,
            "noise_sigma must be a finite nonnegative number");
    require(length >= 1, Errc::bad_parameter, "length must be positive");
  }
};

struct Ar1Config {
  double lambda = 0.0;
  std::size_t length = 1000;
  std::uint64_t seed = 0;
};

/// Hidden chain path of a two-state HMM, W_0 ~ pi. Draw order per step: one
/// uniform for the state, then one normal for the emission.
struct HmmPath {
  std::vector<int> states;
  TimeSeries observations;
};

inline HmmPath simulate_two_state_hmm_path(const HmmConfig& cfg) {
  cfg.validate();
  SplitMix64 rng(cfg.seed);
  const double pi1 = cfg.p / (cfg.p + cfg.q);
  std::vector<int> states(cfg.length);
  std::vector<double> obs(cfg.length);
  int w = 0;
  for (std::size_t t = 0; t < cfg.length; ++t) {
    const double u = rng.uniform();
    if (t == 0) {
      w = u < pi1 ? 1 : 0;
    } else if (w == 0) {
      w = u < cfg.p ? 1 : 0;
    } else {
      w = u < cfg.q ? 0 : 1;
    }
    const double z = rng.normal();
    states[t] = w;
    obs[t] = static_cast<double>(w) + cfg.noise_sigma * z;
  }
  return {std::move(states), TimeSeries(std::move(obs))};
}

inline TimeSeries simulate_two_state_hmm(const HmmConfig& cfg) {
  return simulate_two_state_hmm_path(cfg).observations;
}

/// W_0 ~ N(0, 1/(1-lambda^2)), W_t = lambda W_{t-1} + N(0,1).
inline TimeSeries simulate_ar1(const Ar1Config& cfg) {
  require(std::abs(cfg.lambda) < 1.0, Errc::non_stationary_lambda,
          "AR(1) coefficient must satisfy |lambda| < 1");
  require(cfg.length >= 1, Errc::bad_parameter, "length must be positive");
  SplitMix64 rng(cfg.seed);
  std::vector<double> w(cfg.length);
  w[0] = rng.normal() / std::sqrt(1.0 - cfg.lambda * cfg.lambda);
  for (std::size_t t = 1; t < cfg.length; ++t) w[t] = cfg.lambda * w[t - 1] + rng.normal();
  return TimeSeries(std::move(w));
}

/// One value per line, 17 significant digits so values read back exactly.
inline void write_path(std::ostream& out, const TimeSeries& series) {
  const auto old = out.precision(17);
  for (double v : series.values()) out << v << '\n';
  out.precision(old);
}

}  // namespace mixcp
