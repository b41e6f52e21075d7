#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "mixcp/core.hpp"
#include "mixcp/error.hpp"

namespace mixcp {

/// Membership test of a tolerance region T_lambda(x).
using Region = std::function<bool(double)>;

/// Tolerance regions indexed by an increasing lambda grid, nested in lambda.
struct NestedFamily {
  std::vector<double> lambda_grid;
  std::function<Region(std::span<const double>, double)> region;
  // Set for score sublevel families; lets the miscoverage risk curve be
  // computed from sorted scores.
  std::function<double(std::span<const double>, double)> score;

  NestedFamily(std::vector<double> grid,
               std::function<Region(std::span<const double>, double)> region_fn)
      : lambda_grid(std::move(grid)), region(std::move(region_fn)) {
    require(!lambda_grid.empty(), Errc::bad_parameter, "lambda grid must not be empty");
    for (std::size_t k = 1; k < lambda_grid.size(); ++k)
      require(lambda_grid[k - 1] < lambda_grid[k], Errc::bad_parameter,
              "lambda grid must be strictly increasing");
    require(static_cast<bool>(region), Errc::bad_parameter, "region evaluator is empty");
  }

  std::size_t index_of(double lambda) const {
    auto it = std::lower_bound(lambda_grid.begin(), lambda_grid.end(), lambda);
    require(it != lambda_grid.end() && *it == lambda, Errc::lambda_not_in_grid,
            "lambda is not a grid value");
    return static_cast<std::size_t>(it - lambda_grid.begin());
  }

  /// T_lambda(x) = {y : s(x, y) <= lambda}. Nested by construction.
  static NestedFamily score_sublevel(std::vector<double> grid,
                                     std::function<double(std::span<const double>, double)> score) {
    NestedFamily f(std::move(grid), [score](std::span<const double> x, double lambda) -> Region {
      std::vector<double> xs(x.begin(), x.end());
      return [score, xs = std::move(xs), lambda](double y) { return score(xs, y) <= lambda; };
    });
    f.score = std::move(score);
    return f;
  }
};

struct LossSpec {
  std::function<double(double, const Region&)> loss;
  std::optional<double> bound;
  bool is_miscoverage = false;

  static LossSpec miscoverage() {
    return {[](double y, const Region& r) { return r(y) ? 0.0 : 1.0; }, 1.0, true};
  }
};

inline double evaluate_risk(const NestedFamily& family, const LossSpec& loss,
                            const SupervisedDataset& data, double lambda) {
  require(!data.empty(), Errc::empty_test, "evaluation set is empty");
  family.index_of(lambda);
  double sum = 0.0;
  for (std::size_t i = 0; i < data.size(); ++i)
    sum += loss.loss(data.y(i), family.region(data.x(i), lambda));
  return sum / static_cast<double>(data.size());
}

inline double empirical_risk(const NestedFamily& family, const LossSpec& loss,
                             const SupervisedDataset& cal_data, double lambda) {
  require(!cal_data.empty(), Errc::empty_calibration, "calibration set is empty");
  return evaluate_risk(family, loss, cal_data, lambda);
}

/// Empirical risk at every grid value, in grid order.
inline std::vector<double> risk_curve(const NestedFamily& family, const LossSpec& loss,
                                      const SupervisedDataset& cal_data) {
  std::vector<double> out;
  out.reserve(family.lambda_grid.size());
  if (loss.is_miscoverage && family.score) {
    require(!cal_data.empty(), Errc::empty_calibration, "calibration set is empty");
    std::vector<double> s(cal_data.size());
    for (std::size_t i = 0; i < cal_data.size(); ++i) s[i] = family.score(cal_data.x(i), cal_data.y(i));
    std::sort(s.begin(), s.end());
    const double n = static_cast<double>(s.size());
    for (double lambda : family.lambda_grid) {
      const auto covered = std::upper_bound(s.begin(), s.end(), lambda) - s.begin();
      out.push_back(static_cast<double>(s.size() - static_cast<std::size_t>(covered)) / n);
    }
    return out;
  }
  for (double lambda : family.lambda_grid) out.push_back(empirical_risk(family, loss, cal_data, lambda));
  return out;
}

/// Smallest grid index k such that every strictly larger index has risk < alpha.
/// The risk at k itself is not constrained. The top index must have risk < alpha.
inline std::size_t threshold_index(std::span<const double> risks, double alpha) {
  require(!risks.empty(), Errc::bad_parameter, "risk curve is empty");
  if (!(risks.back() < alpha))
    fail(Errc::no_controlling_lambda, "even the largest lambda does not control the risk");
  std::size_t k = risks.size() - 1;
  while (k > 0 && risks[k] < alpha) --k;
  return k;
}

inline double rcps_threshold(const NestedFamily& family, const LossSpec& loss,
                             const SupervisedDataset& cal_data, double alpha) {
  const auto risks = risk_curve(family, loss, cal_data);
  return family.lambda_grid[threshold_index(risks, alpha)];
}

/// Spot check of nesting: for each sampled (x, y) and consecutive grid pair,
/// y in T_{lambda_k}(x) implies y in T_{lambda_{k+1}}(x). Returns false on the
/// first violation.
inline bool check_nesting(const NestedFamily& family, const SupervisedDataset& data,
                          std::span<const double> y_probes) {
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto x = data.x(i);
    std::vector<double> ys(y_probes.begin(), y_probes.end());
    ys.push_back(data.y(i));
    std::optional<Region> prev;
    for (double lambda : family.lambda_grid) {
      Region cur = family.region(x, lambda);
      if (prev)
        for (double y : ys)
          if ((*prev)(y) && !cur(y)) return false;
      prev = std::move(cur);
    }
  }
  return true;
}

}  // namespace mixcp
