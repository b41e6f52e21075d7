#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mixcp/core.hpp"
#include "mixcp/error.hpp"
#include "mixcp/models.hpp"
#include "mixcp/quantile.hpp"

namespace mixcp {

using PointPredictor = std::function<double(std::span<const double>)>;

/// Closed interval [lo, hi]; empty when lo > hi.
struct Interval {
  double lo = 0.0;
  double hi = 0.0;

  bool contains(double y) const noexcept { return lo <= y && y <= hi; }
  bool empty() const noexcept { return lo > hi; }
  double width() const noexcept { return empty() ? 0.0 : hi - lo; }
};

/// A trained conformity score s(x, y). Built-in residual, weighted-residual and
/// CQR scores also know how to turn a threshold into an interval.
class ConformityScore {
 public:
  enum class Kind { black_box, residual, weighted_residual, cqr };
  using Fn = std::function<double(std::span<const double>, double)>;

  static ConformityScore black_box(Fn fn) {
    ConformityScore s;
    s.kind_ = Kind::black_box;
    s.fn_ = std::move(fn);
    return s;
  }

  static ConformityScore residual(PointPredictor mu) {
    ConformityScore s;
    s.kind_ = Kind::residual;
    s.first_ = std::move(mu);
    return s;
  }

  static ConformityScore weighted_residual(PointPredictor mu, PointPredictor rho) {
    ConformityScore s;
    s.kind_ = Kind::weighted_residual;
    s.first_ = std::move(mu);
    s.second_ = std::move(rho);
    return s;
  }

  /// CQR from two quantile regressors; crossings are swapped before use.
  static ConformityScore cqr(PointPredictor lo, PointPredictor hi) {
    ConformityScore s;
    s.kind_ = Kind::cqr;
    s.first_ = std::move(lo);
    s.second_ = std::move(hi);
    return s;
  }

  static ConformityScore cqr(std::shared_ptr<const QuantileModel> model) {
    return cqr([model](std::span<const double> x) { return model->predict_lo(x); },
               [model](std::span<const double> x) { return model->predict_hi(x); });
  }

  Kind kind() const noexcept { return kind_; }
  bool invertible() const noexcept { return kind_ != Kind::black_box; }

  double operator()(std::span<const double> x, double y) const {
    switch (kind_) {
      case Kind::black_box: return fn_(x, y);
      case Kind::residual: return residual_score(first_(x), y);
      case Kind::weighted_residual: return weighted_residual_score(first_(x), second_(x), y);
      case Kind::cqr: {
        const auto [lo, hi] = fix_quantile_crossing(first_(x), second_(x));
        return std::max(lo - y, y - hi);
      }
    }
    return 0.0;
  }

  /// {y : s(x, y) <= threshold} as an interval.
  Interval invert(std::span<const double> x, double threshold) const {
    switch (kind_) {
      case Kind::residual: {
        const double mu = first_(x);
        return {mu - threshold, mu + threshold};
      }
      case Kind::weighted_residual: {
        const double mu = first_(x);
        const double rho = second_(x);
        require(rho > 0.0, Errc::nonpositive_scale, "scale estimate must be positive");
        return {mu - threshold * rho, mu + threshold * rho};
      }
      case Kind::cqr: {
        const auto [lo, hi] = fix_quantile_crossing(first_(x), second_(x));
        return {lo - threshold, hi + threshold};
      }
      case Kind::black_box: break;
    }
    fail(Errc::not_invertible, "black-box scores have no closed-form prediction interval");
  }

 private:
  ConformityScore() = default;

  Kind kind_ = Kind::black_box;
  Fn fn_;
  PointPredictor first_;
  PointPredictor second_;
};

struct NamedSet {
  std::string name;
  std::function<bool(std::span<const double>)> contains;
};

/// Finite family of covariate sets with a declared VC dimension and a lower
/// bound gamma on the probability of each set.
struct SetFamily {
  std::vector<NamedSet> sets;
  std::size_t vc_dim = 1;
  double gamma = 0.5;

  SetFamily(std::vector<NamedSet> sets_, std::size_t vc_dim_, double gamma_)
      : sets(std::move(sets_)), vc_dim(vc_dim_), gamma(gamma_) {
    require(!sets.empty(), Errc::bad_parameter, "set family must not be empty");
    require(vc_dim >= 1, Errc::bad_parameter, "VC dimension must be positive");
    require(gamma > 0.0 && gamma < 1.0, Errc::bad_parameter, "gamma must lie in (0,1)");
  }

  static SetFamily whole_space() {
    return SetFamily({{"all", [](std::span<const double>) { return true; }}}, 1, 0.5);
  }
};

enum class CalibrationMode { global, per_set, roo };

class CalibratedPredictor {
 public:
  const ConformityScore& score() const noexcept { return score_; }
  double alpha() const noexcept { return alpha_; }
  CalibrationMode mode() const noexcept { return mode_; }

  /// Global threshold (global mode).
  double q_hat() const {
    require(mode_ == CalibrationMode::global, Errc::bad_parameter, "predictor is not global");
    return q_hat_;
  }
  /// Per-set thresholds in family order (per_set mode).
  const std::vector<double>& set_thresholds() const noexcept { return thresholds_; }
  /// Per-test-index thresholds (roo mode).
  const std::vector<double>& roo_thresholds() const noexcept { return thresholds_; }
  const std::optional<SetFamily>& family() const noexcept { return family_; }

 private:
  friend CalibratedPredictor calibrate(const ConformityScore&, const SupervisedDataset&, double);
  friend CalibratedPredictor conditional_calibrate(const ConformityScore&, const SupervisedDataset&,
                                                   double, const SetFamily&);
  friend CalibratedPredictor roo_calibrate(const ConformityScore&, const SupervisedDataset&, double);

  CalibratedPredictor(ConformityScore score, double alpha, CalibrationMode mode)
      : score_(std::move(score)), alpha_(alpha), mode_(mode) {}

  ConformityScore score_;
  double alpha_;
  CalibrationMode mode_;
  double q_hat_ = 0.0;
  std::vector<double> thresholds_;
  std::optional<SetFamily> family_;
};

inline void check_alpha(double alpha) {
  require(alpha > 0.0 && alpha < 1.0, Errc::bad_parameter, "alpha must lie in (0,1)");
}

inline std::vector<double> score_all(const ConformityScore& score, const SupervisedDataset& data) {
  std::vector<double> out(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) out[i] = score(data.x(i), data.y(i));
  return out;
}

/// q_hat = empirical (1 - alpha)-quantile of the calibration scores, with no
/// finite-sample +1 correction.
inline CalibratedPredictor calibrate(const ConformityScore& score, const SupervisedDataset& cal_data,
                                     double alpha) {
  check_alpha(alpha);
  require(!cal_data.empty(), Errc::empty_calibration, "calibration set is empty");
  CalibratedPredictor pred(score, alpha, CalibrationMode::global);
  pred.q_hat_ = empirical_quantile(score_all(score, cal_data), QuantileLevel(1.0 - alpha));
  return pred;
}

/// One threshold per set: the (1 - alpha)-quantile of the calibration scores
/// whose covariates fall in that set.
inline CalibratedPredictor conditional_calibrate(const ConformityScore& score,
                                                 const SupervisedDataset& cal_data, double alpha,
                                                 const SetFamily& family) {
  check_alpha(alpha);
  require(!cal_data.empty(), Errc::empty_calibration, "calibration set is empty");
  const std::vector<double> scores = score_all(score, cal_data);
  CalibratedPredictor pred(score, alpha, CalibrationMode::per_set);
  for (const auto& set : family.sets) {
    std::vector<bool> mask(cal_data.size());
    for (std::size_t i = 0; i < cal_data.size(); ++i) mask[i] = set.contains(cal_data.x(i));
    try {
      pred.thresholds_.push_back(conditional_empirical_quantile(scores, mask, QuantileLevel(1.0 - alpha)));
    } catch (const Error& e) {
      if (e.code() == Errc::empty_condition_set)
        fail(Errc::empty_condition_set, "set '" + set.name + "' has no calibration points");
      throw;
    }
  }
  pred.family_ = family;
  return pred;
}

/// Each test point is calibrated on the other test points.
inline CalibratedPredictor roo_calibrate(const ConformityScore& score,
                                         const SupervisedDataset& test_data, double alpha) {
  check_alpha(alpha);
  require(test_data.size() >= 2, Errc::too_few_points, "rank-one-out needs n_test >= 2");
  CalibratedPredictor pred(score, alpha, CalibrationMode::roo);
  pred.thresholds_ = roo_quantiles(score_all(score, test_data), QuantileLevel(1.0 - alpha));
  return pred;
}

/// y in C(x) iff s(x, y) <= q_hat (boundary included).
inline bool predict_set_membership(const CalibratedPredictor& pred, std::span<const double> x,
                                   double y) {
  return pred.score()(x, y) <= pred.q_hat();
}

inline Interval predict_interval(const CalibratedPredictor& pred, std::span<const double> x) {
  return pred.score().invert(x, pred.q_hat());
}

/// Largest threshold among the sets containing x, i.e. the union of the per-set
/// predictive sets; nullopt when x lies in no set.
inline std::optional<double> union_threshold(const CalibratedPredictor& pred,
                                             std::span<const double> x) {
  require(pred.mode() == CalibrationMode::per_set && pred.family(), Errc::bad_parameter,
          "predictor is not per-set");
  std::optional<double> best;
  const auto& sets = pred.family()->sets;
  for (std::size_t k = 0; k < sets.size(); ++k)
    if (sets[k].contains(x)) best = best ? std::max(*best, pred.set_thresholds()[k]) : pred.set_thresholds()[k];
  return best;
}

inline bool predict_set_membership_union(const CalibratedPredictor& pred, std::span<const double> x,
                                         double y) {
  const auto t = union_threshold(pred, x);
  return t && pred.score()(x, y) <= *t;
}

inline std::optional<Interval> predict_interval_union(const CalibratedPredictor& pred,
                                                      std::span<const double> x) {
  const auto t = union_threshold(pred, x);
  if (!t) return std::nullopt;
  return pred.score().invert(x, *t);
}

struct SetCoverage {
  std::string name;
  std::size_t n_points = 0;
  std::optional<double> coverage;  // absent when no test point falls in the set
};

struct CoverageReport {
  double marginal_coverage = 0.0;
  std::size_t n_evaluated = 0;
  std::optional<std::vector<SetCoverage>> per_set_coverage;
  std::optional<double> infimum_coverage;
  std::optional<double> eta_used;
};

inline CoverageReport evaluate_marginal_coverage(const CalibratedPredictor& pred,
                                                 const SupervisedDataset& test_data) {
  require(!test_data.empty(), Errc::empty_test, "test set is empty");
  std::size_t covered = 0;
  if (pred.mode() == CalibrationMode::global) {
    const double q = pred.q_hat();
    for (std::size_t i = 0; i < test_data.size(); ++i)
      covered += pred.score()(test_data.x(i), test_data.y(i)) <= q ? 1 : 0;
  } else if (pred.mode() == CalibrationMode::roo) {
    const auto& th = pred.roo_thresholds();
    require(th.size() == test_data.size(), Errc::size_mismatch,
            "rank-one-out thresholds do not match the test set");
    for (std::size_t i = 0; i < test_data.size(); ++i)
      covered += pred.score()(test_data.x(i), test_data.y(i)) <= th[i] ? 1 : 0;
  } else {
    fail(Errc::bad_parameter, "use evaluate_conditional_coverage for per-set predictors");
  }
  CoverageReport rep;
  rep.n_evaluated = test_data.size();
  rep.marginal_coverage = static_cast<double>(covered) / static_cast<double>(test_data.size());
  return rep;
}

/// Per-set coverage with each set's own threshold. `marginal_coverage` is the
/// coverage of the union predictor over test points in at least one set.
inline CoverageReport evaluate_conditional_coverage(const CalibratedPredictor& pred,
                                                    const SupervisedDataset& test_data,
                                                    const SetFamily& family) {
  require(pred.mode() == CalibrationMode::per_set, Errc::bad_parameter, "predictor is not per-set");
  require(pred.set_thresholds().size() == family.sets.size(), Errc::size_mismatch,
          "family does not match the calibrated predictor");
  std::vector<std::size_t> in_set(family.sets.size(), 0);
  std::vector<std::size_t> covered(family.sets.size(), 0);
  std::size_t union_n = 0;
  std::size_t union_covered = 0;
  for (std::size_t i = 0; i < test_data.size(); ++i) {
    const auto x = test_data.x(i);
    const double s = pred.score()(x, test_data.y(i));
    std::optional<double> widest;
    for (std::size_t k = 0; k < family.sets.size(); ++k) {
      if (!family.sets[k].contains(x)) continue;
      const double t = pred.set_thresholds()[k];
      ++in_set[k];
      covered[k] += s <= t ? 1 : 0;
      widest = widest ? std::max(*widest, t) : t;
    }
    if (widest) {
      ++union_n;
      union_covered += s <= *widest ? 1 : 0;
    }
  }
  require(union_n > 0, Errc::empty_test, "no test point falls in any set of the family");
  CoverageReport rep;
  rep.n_evaluated = union_n;
  rep.marginal_coverage = static_cast<double>(union_covered) / static_cast<double>(union_n);
  std::vector<SetCoverage> per;
  for (std::size_t k = 0; k < family.sets.size(); ++k) {
    SetCoverage sc{family.sets[k].name, in_set[k], std::nullopt};
    if (in_set[k] > 0) {
      sc.coverage = static_cast<double>(covered[k]) / static_cast<double>(in_set[k]);
      rep.infimum_coverage =
          rep.infimum_coverage ? std::min(*rep.infimum_coverage, *sc.coverage) : *sc.coverage;
    }
    per.push_back(std::move(sc));
  }
  rep.per_set_coverage = std::move(per);
  return rep;
}

// -- Online sliding-window CP ---------------------------------------------------

struct OnlineConfig {
  std::size_t lag_count = 11;
  std::size_t w_train = 1000;
  std::size_t w_cal = 500;
  double alpha = 0.1;
  ModelConfig model = ModelConfig::for_alpha(0.1);
  /// Refit the quantile model every `refit_stride` steps; calibration is redone
  /// every step on the cal window that follows the model's training window.
  std::size_t refit_stride = 1;
};

struct OnlineRecord {
  std::int64_t timestamp = 0;  // timestamp of the predicted value, or its index
  double y = 0.0;
  Interval interval;
  bool covered = false;
};

/// For every step: train on the w_train rows before the cal window, calibrate
/// on the w_cal rows before the target, predict the single target row.
inline std::vector<OnlineRecord> online_sliding_cp(const TimeSeries& series, const OnlineConfig& cfg) {
  check_alpha(cfg.alpha);
  require(cfg.w_train >= 1 && cfg.w_cal >= 1 && cfg.refit_stride >= 1, Errc::bad_parameter,
          "window sizes and refit stride must be positive");
  require(series.size() >= cfg.lag_count + cfg.w_train + cfg.w_cal + 1, Errc::series_too_short,
          "series too short for one full sliding window");
  const SupervisedDataset rows = make_lagged_features(series, cfg.lag_count);
  const QuantileLevel level(1.0 - cfg.alpha);

  std::vector<OnlineRecord> out;
  out.reserve(rows.size() - cfg.w_train - cfg.w_cal);
  std::shared_ptr<const QuantileModel> model;
  std::vector<double> cache(rows.size(), 0.0);
  std::vector<char> cached(rows.size(), 0);
  std::vector<double> window(cfg.w_cal);

  const std::size_t first = cfg.w_train + cfg.w_cal;
  for (std::size_t t = first; t < rows.size(); ++t) {
    if ((t - first) % cfg.refit_stride == 0) {
      const std::size_t train_begin = t - cfg.w_cal - cfg.w_train;
      model = std::make_shared<const QuantileModel>(
          fit_quantile_model(rows.slice(train_begin, train_begin + cfg.w_train), cfg.model));
      std::fill(cached.begin(), cached.end(), 0);
    }
    for (std::size_t k = 0; k < cfg.w_cal; ++k) {
      const std::size_t i = t - cfg.w_cal + k;
      if (!cached[i]) {
        cache[i] = cqr_score(*model, rows.x(i), rows.y(i));
        cached[i] = 1;
      }
      window[k] = cache[i];
    }
    const double q = empirical_quantile(window, level);
    const auto [lo, hi] = model->predict(rows.x(t));
    OnlineRecord rec;
    rec.interval = {lo - q, hi + q};
    rec.y = rows.y(t);
    rec.covered = rec.interval.contains(rec.y);
    const std::size_t series_index = t + cfg.lag_count;
    rec.timestamp = series.has_timestamps() ? (*series.timestamps())[series_index]
                                            : static_cast<std::int64_t>(series_index);
    out.push_back(rec);
  }
  return out;
}

}  // namespace mixcp
