#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "mixcp/core.hpp"
#include "mixcp/error.hpp"

namespace mixcp {

/// A quantile level phi in the open interval (0, 1). phi = 0 would make the
/// inf-form quantile -inf, so it is rejected.
class QuantileLevel {
 public:
  explicit QuantileLevel(double phi) : phi_(phi) {
    require(phi > 0.0 && phi < 1.0, Errc::bad_parameter,
            "quantile level must lie in (0,1), got " + std::to_string(phi));
  }
  double value() const noexcept { return phi_; }

 private:
  double phi_;
};

/// Smallest k in 1..n with k/n >= phi, i.e. the rank of the inf-form quantile.
/// Evaluated with the same floating expression as the mass condition so that
/// ceil(phi*n) rounding never disagrees with the definition.
inline std::size_t quantile_rank(std::size_t n, double phi) noexcept {
  const double dn = static_cast<double>(n);
  auto k = static_cast<std::size_t>(std::ceil(phi * dn));
  k = std::clamp<std::size_t>(k, 1, n);
  while (k > 1 && static_cast<double>(k - 1) / dn >= phi) --k;
  while (k < n && static_cast<double>(k) / dn < phi) ++k;
  return k;
}

/// inf{t : (1/n) sum 1{s_i <= t} >= phi}, the ceil(phi*n)-th smallest score.
/// No interpolation; ties are resolved by counting mass.
inline double empirical_quantile(std::span<const double> scores, QuantileLevel phi) {
  require(!scores.empty(), Errc::empty_input, "empirical quantile of an empty sample");
  std::vector<double> work(scores.begin(), scores.end());
  for (double s : work) require(!std::isnan(s), Errc::bad_parameter, "NaN score");
  const std::size_t k = quantile_rank(work.size(), phi.value());
  auto kth = work.begin() + static_cast<std::ptrdiff_t>(k - 1);
  std::nth_element(work.begin(), kth, work.end());
  return *kth;
}

/// Quantile of the scores whose mask entry is set.
inline double conditional_empirical_quantile(std::span<const double> scores,
                                             const std::vector<bool>& in_set, QuantileLevel phi) {
  require(scores.size() == in_set.size(), Errc::size_mismatch,
          "scores and membership mask differ in length");
  std::vector<double> kept;
  for (std::size_t i = 0; i < scores.size(); ++i)
    if (in_set[i]) kept.push_back(scores[i]);
  require(!kept.empty(), Errc::empty_condition_set, "no calibration point falls in the set");
  return empirical_quantile(kept, phi);
}

/// Quantile of the scores whose covariate row satisfies the predicate.
template <class Predicate>
double conditional_empirical_quantile(std::span<const double> scores,
                                      const SupervisedDataset& covariates, Predicate&& in_set,
                                      QuantileLevel phi) {
  require(scores.size() == covariates.size(), Errc::size_mismatch,
          "scores and covariates differ in length");
  std::vector<bool> mask(scores.size());
  for (std::size_t i = 0; i < scores.size(); ++i) mask[i] = in_set(covariates.x(i));
  return conditional_empirical_quantile(scores, mask, phi);
}

/// Rank-one-out quantile: the empirical quantile of every score except the
/// held-out one (0-based index).
inline double roo_quantile(std::span<const double> test_scores, std::size_t held_out,
                           QuantileLevel phi) {
  require(test_scores.size() >= 2, Errc::too_few_points,
          "rank-one-out needs at least two test points");
  require(held_out < test_scores.size(), Errc::bad_parameter, "held-out index out of range");
  std::vector<double> rest;
  rest.reserve(test_scores.size() - 1);
  for (std::size_t j = 0; j < test_scores.size(); ++j)
    if (j != held_out) rest.push_back(test_scores[j]);
  return empirical_quantile(rest, phi);
}

/// All n rank-one-out thresholds in O(n log n). Removing one score shifts the
/// target rank among the remaining n-1 by at most one position in the sorted
/// full sample, so each threshold is one of two neighbouring order statistics.
inline std::vector<double> roo_quantiles(std::span<const double> test_scores, QuantileLevel phi) {
  const std::size_t n = test_scores.size();
  require(n >= 2, Errc::too_few_points, "rank-one-out needs at least two test points");
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return test_scores[a] < test_scores[b]; });
  std::vector<std::size_t> position(n);
  for (std::size_t r = 0; r < n; ++r) position[order[r]] = r;

  const std::size_t k = quantile_rank(n - 1, phi.value());  // 1-based rank among n-1
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    // k-th smallest of the sample with sorted position position[i] removed.
    const std::size_t idx = position[i] >= k ? k - 1 : k;
    out[i] = test_scores[order[idx]];
  }
  return out;
}

}  // namespace mixcp
