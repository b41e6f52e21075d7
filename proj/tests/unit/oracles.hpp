#pragma once

// Brute-force reference implementations used by the unit and acceptance tests.
// They deliberately avoid the library's fast paths.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <tuple>
#include <vector>

#include "mixcp/bounds.hpp"
#include "mixcp/mixing.hpp"
#include "mixcp/random.hpp"

namespace oracle {

/// Tries every sorted score as threshold t and returns the first with
/// (1/n) #{s_i <= t} >= phi.
inline double scan_quantile(std::vector<double> s, double phi) {
  std::sort(s.begin(), s.end());
  const double n = static_cast<double>(s.size());
  for (double t : s) {
    std::size_t count = 0;
    for (double v : s) count += v <= t ? 1 : 0;
    if (static_cast<double>(count) / n >= phi) return t;
  }
  return s.back();
}

using Matrix = std::vector<std::vector<double>>;

/// P^r by r successive multiplications.
inline Matrix dense_power(const Matrix& p, std::size_t r) {
  const std::size_t k = p.size();
  Matrix acc(k, std::vector<double>(k, 0.0));
  for (std::size_t i = 0; i < k; ++i) acc[i][i] = 1.0;
  for (std::size_t step = 0; step < r; ++step) {
    Matrix next(k, std::vector<double>(k, 0.0));
    for (std::size_t i = 0; i < k; ++i)
      for (std::size_t j = 0; j < k; ++j)
        for (std::size_t m = 0; m < k; ++m) next[i][j] += acc[i][m] * p[m][j];
    acc = std::move(next);
  }
  return acc;
}

/// beta(r) of the two-state chain: pi from the 2x2 balance equation, then the
/// TV sum over P^r computed without squaring.
inline double two_state_beta(double p, double q, std::size_t r) {
  const Matrix P{{1.0 - p, p}, {q, 1.0 - q}};
  const double pi0 = q / (p + q);
  const double pi[2] = {pi0, 1.0 - pi0};
  const Matrix pr = dense_power(P, r);
  double beta = 0.0;
  for (int x = 0; x < 2; ++x) {
    double tv = 0.0;
    for (int y = 0; y < 2; ++y) tv += std::abs(pr[x][y] - pi[y]);
    beta += pi[x] * 0.5 * tv;
  }
  return beta;
}

/// AR(1) beta(r): stratified sample of x from the stationary law, TV of the
/// two Gaussian densities by midpoint integration of |f - g| / 2.
inline double ar1_beta_mc(double lambda, std::size_t r, std::size_t strata = 1000,
                          std::size_t grid = 8000) {
  const double var_inf = 1.0 / (1.0 - lambda * lambda);
  const double sd_inf = std::sqrt(var_inf);
  const double lr = std::pow(lambda, static_cast<double>(r));
  const double sd_r = std::sqrt((1.0 - std::pow(lambda, 2.0 * static_cast<double>(r))) * var_inf);
  auto pdf = [](double x, double mu, double s) {
    const double z = (x - mu) / s;
    return std::exp(-0.5 * z * z) / (s * std::sqrt(2.0 * M_PI));
  };
  const double lo = -12.0 * sd_inf;
  const double h = 24.0 * sd_inf / static_cast<double>(grid);
  double total = 0.0;
  for (std::size_t i = 0; i < strata; ++i) {
    const double x = sd_inf * mixcp::normal_quantile((static_cast<double>(i) + 0.5) / static_cast<double>(strata));
    double tv = 0.0;
    for (std::size_t k = 0; k < grid; ++k) {
      const double y = lo + h * (static_cast<double>(k) + 0.5);
      tv += std::abs(pdf(y, lr * x, sd_r) - pdf(y, 0.0, sd_inf));
    }
    total += 0.5 * tv * h;
  }
  return total / static_cast<double>(strata);
}

struct Plan {
  std::size_t a = 0, m = 0, slack = 0;
  double eps = 0.0;
};

/// Exhaustive scan over every (a, m) with the implied slack inside its range.
/// No pruning, no divisor tricks; beta straight from the profile, sigma from
/// prefix sums of beta.
inline std::optional<Plan> scan_bound(const mixcp::BoundSpec& spec, const mixcp::MixingProfile& profile) {
  const bool cal = spec.kind == mixcp::BoundKind::cal_beta || spec.kind == mixcp::BoundKind::cal_conditional;
  const bool cond = spec.kind == mixcp::BoundKind::cal_conditional || spec.kind == mixcp::BoundKind::test_conditional;
  const std::size_t n = spec.n;
  const double dn = static_cast<double>(n);
  const std::size_t slack_lo = cal ? 1 : 0;
  std::size_t slack_hi = spec.max_slack ? *spec.max_slack : std::max(slack_lo, n / 4);
  slack_hi = std::min(slack_hi, cal ? n : n - 1);
  double mult = 4.0;
  if (spec.kind == mixcp::BoundKind::cal_conditional) mult = 16.0;
  if (spec.kind == mixcp::BoundKind::test_conditional) mult = 8.0;

  // beta as the nonincreasing envelope of the clamped profile values, so
  // roundoff noise at the floor cannot make it grow with the lag.
  const std::size_t a_top = n / 2 + 1;
  const std::size_t need = std::max({a_top, n + 1, spec.n_cal});
  std::vector<double> env(need + 1, 1.0);
  for (std::size_t r = 1; r <= need; ++r) env[r] = std::min(env[r - 1], std::clamp(profile(r), 0.0, 1.0));
  auto beta = [&](std::size_t r) { return env[r]; };
  std::vector<double> s1(a_top + 1, 0.0), s2(a_top + 1, 0.0);  // sums over j < a of beta(j), j*beta(j)
  for (std::size_t a = 2; a <= a_top; ++a) {
    s1[a] = s1[a - 1] + beta(a - 1);
    s2[a] = s2[a - 1] + static_cast<double>(a - 1) * beta(a - 1);
  }
  const double base = spec.alpha ? *spec.alpha * (1.0 - *spec.alpha) : 0.25;
  auto sigma = [&](std::size_t a) {
    const double da = static_cast<double>(a);
    return std::sqrt(base + 2.0 / da * (da * s1[a] - s2[a]));
  };

  std::optional<Plan> best;
  for (std::size_t a = 1; 2 * a <= n + 1; ++a) {
    const double beta_a = beta(a);
    for (std::size_t m = 1; 2 * a * m <= n + 1; ++m) {
      const std::size_t used = 2 * a * m;
      std::size_t slack;
      if (cal) {
        slack = n + 1 - used;
      } else {
        if (used > n) continue;
        slack = n - used;
      }
      if (slack < slack_lo || slack > slack_hi) continue;
      const double tail = cal ? beta(slack) : beta(spec.n_cal);
      const double budget = spec.delta - mult * static_cast<double>(m - 1) * beta_a - tail;
      if (!(budget > 0.0)) continue;
      const double dm = static_cast<double>(m);
      const double ds = static_cast<double>(slack);
      double eps;
      if (!cond) {
        const double L = std::log(4.0 / budget);
        const double denom = cal ? dn - ds + 1.0 : dn;
        eps = sigma(a) * std::sqrt(4.0 / denom * L) + L / (3.0 * dm) + (cal ? (ds - 1.0) / dn : ds / dn);
      } else {
        const double num = cal ? 16.0 : 8.0;
        const double growth = std::log(2.0 * std::pow(dm + 1.0, static_cast<double>(spec.vc_dim)));
        eps = (4.0 * std::sqrt(growth / dm) + 2.0 * (cal ? (ds - 1.0) / dn : ds / dn) +
               2.0 * std::sqrt(std::log(num / budget) / (2.0 * dm))) /
              spec.gamma;
      }
      const bool better = !best || eps < best->eps ||
                          (eps == best->eps && std::tie(a, m, slack) < std::tie(best->a, best->m, best->slack));
      if (better) best = Plan{a, m, slack, eps};
    }
  }
  return best;
}

}  // namespace oracle
