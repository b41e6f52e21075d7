#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <string>
#include <tuple>
#include <vector>

#include "mixcp/error.hpp"
#include "mixcp/mixing.hpp"
#include "mixcp/quantile.hpp"

namespace mixcp {

// Coverage correction factors. The beta-mixing factors come from a Bernstein
// inequality for blocked samples; each is an infimum over block plans
// (a, m, slack) with 2*m*a equal to the effective sample size.

struct ConfidenceParams {
  double alpha;
  double delta_cal;
  double delta_test;

  ConfidenceParams(double alpha_, double delta_cal_, double delta_test_)
      : alpha(alpha_), delta_cal(delta_cal_), delta_test(delta_test_) {
    auto in01 = [](double v) { return v > 0.0 && v < 1.0; };
    require(in01(alpha) && in01(delta_cal) && in01(delta_test), Errc::bad_parameter,
            "alpha, delta_cal and delta_test must lie in (0,1)");
  }
};

struct BlockPlan {
  std::size_t a = 0;      // block length
  std::size_t m = 0;      // block count
  std::size_t slack = 0;  // r on the calibration side, s on the test side
  double achieved_eps = 0.0;

  friend bool operator==(const BlockPlan&, const BlockPlan&) = default;
};

struct BoundResult {
  double eps = 0.0;
  BlockPlan plan;

  /// The guarantee is formally true but says nothing.
  bool vacuous() const noexcept { return eps > 1.0; }
};

inline double iid_epsilon(std::size_t n, double delta) {
  require(n >= 1, Errc::bad_parameter, "n must be positive");
  require(delta > 0.0 && delta < 1.0, Errc::bad_parameter, "delta must lie in (0,1)");
  return std::sqrt(std::log(2.0 / delta) / (2.0 * static_cast<double>(n)));
}

/// Variance-aware iid radius sqrt(2 alpha (1-alpha) log(2/delta) / n), valid for alpha < 1/2.
inline double iid_epsilon_variance(std::size_t n, double delta, double alpha) {
  require(n >= 1, Errc::bad_parameter, "n must be positive");
  require(delta > 0.0 && delta < 1.0, Errc::bad_parameter, "delta must lie in (0,1)");
  require(alpha > 0.0 && alpha < 0.5, Errc::bad_parameter, "alpha must lie in (0, 1/2)");
  return std::sqrt(2.0 * alpha * (1.0 - alpha) * std::log(2.0 / delta) /
                   static_cast<double>(n));
}

/// sigma(a) = sqrt(v + (2/a) sum_{j<a} (a-j) beta(j)), v = 1/4 or alpha(1-alpha).
inline double variance_proxy(const MixingProfile& profile, std::size_t a,
                             std::optional<double> alpha = std::nullopt) {
  require(a >= 1, Errc::bad_parameter, "block length must be positive");
  double base = 0.25;
  if (alpha) {
    require(*alpha > 0.0 && *alpha < 1.0, Errc::bad_parameter, "alpha must lie in (0,1)");
    base = *alpha * (1.0 - *alpha);
  }
  double dep = 0.0;
  for (std::size_t j = 1; j < a; ++j) dep += static_cast<double>(a - j) * profile(j);
  return std::sqrt(base + 2.0 / static_cast<double>(a) * dep);
}

enum class BoundKind { cal_beta, test_beta, cal_conditional, test_conditional };

/// One correction-factor problem. `n` is n_cal for the calibration kinds and
/// n_test for the test kinds.
struct BoundSpec {
  BoundKind kind = BoundKind::cal_beta;
  std::size_t n = 0;
  std::size_t n_cal = 0;
  double delta = 0.0;
  std::optional<double> alpha;  // variance-aware variant (beta kinds only)
  double gamma = 0.0;           // conditional kinds
  std::size_t vc_dim = 0;       // conditional kinds
  std::optional<std::size_t> max_slack;

  bool calibration_side() const noexcept {
    return kind == BoundKind::cal_beta || kind == BoundKind::cal_conditional;
  }
  bool conditional() const noexcept {
    return kind == BoundKind::cal_conditional || kind == BoundKind::test_conditional;
  }

  std::size_t slack_min() const noexcept { return calibration_side() ? 1 : 0; }
  std::size_t slack_max() const noexcept {
    if (max_slack) return *max_slack;
    return std::max<std::size_t>(slack_min(), n / 4);
  }
  /// 2 m a must equal this.
  std::size_t effective_size(std::size_t slack) const noexcept {
    if (calibration_side()) return slack <= n ? n - slack + 1 : 0;
    return slack <= n ? n - slack : 0;
  }
  double penalty_multiplier() const noexcept {
    switch (kind) {
      case BoundKind::cal_beta:
      case BoundKind::test_beta: return 4.0;
      case BoundKind::cal_conditional: return 16.0;
      case BoundKind::test_conditional: return 8.0;
    }
    return 4.0;
  }
  /// Lower bound of the objective contributed by the slack term alone.
  double slack_term(std::size_t slack) const noexcept {
    const double dn = static_cast<double>(n);
    switch (kind) {
      case BoundKind::cal_beta: return static_cast<double>(slack - 1) / dn;
      case BoundKind::test_beta: return static_cast<double>(slack) / dn;
      case BoundKind::cal_conditional: return 2.0 * static_cast<double>(slack - 1) / dn / gamma;
      case BoundKind::test_conditional: return 2.0 * static_cast<double>(slack) / dn / gamma;
    }
    return 0.0;
  }

  void validate() const {
    require(n >= 1, Errc::bad_parameter, "sample size must be positive");
    require(delta > 0.0 && delta < 1.0, Errc::bad_parameter, "delta must lie in (0,1)");
    if (!calibration_side()) require(n_cal >= 1, Errc::bad_parameter, "n_cal must be positive");
    if (alpha)
      require(*alpha > 0.0 && *alpha < 1.0, Errc::bad_parameter, "alpha must lie in (0,1)");
    if (conditional()) {
      require(gamma > 0.0 && gamma < 1.0, Errc::bad_parameter, "gamma must lie in (0,1)");
      require(vc_dim >= 1, Errc::bad_parameter, "VC dimension must be positive");
    }
  }
};

/// Value of the bound at one plan, or nullopt when the plan is infeasible
/// (the failure budget left after the mixing penalties is not positive).
/// `beta_a` = beta(a); `beta_tail` = beta(r) (calibration) or beta(n_cal) (test);
/// `sigma` = variance_proxy(a) and is ignored by the conditional kinds.
inline std::optional<double> plan_value(const BoundSpec& spec, std::size_t a, std::size_t m,
                                        std::size_t slack, double beta_a, double beta_tail,
                                        double sigma) {
  if (a == 0 || m == 0 || 2 * a * m != spec.effective_size(slack)) return std::nullopt;
  const double budget = spec.delta - spec.penalty_multiplier() * static_cast<double>(m - 1) * beta_a -
                        beta_tail;
  if (!(budget > 0.0)) return std::nullopt;
  const double dm = static_cast<double>(m);

  if (!spec.conditional()) {
    const double log_term = std::log(4.0 / budget);
    const double size = spec.calibration_side() ? static_cast<double>(spec.effective_size(slack))
                                                : static_cast<double>(spec.n);
    return sigma * std::sqrt(4.0 / size * log_term) + log_term / (3.0 * dm) + spec.slack_term(slack);
  }
  const double growth = std::log(2.0) + static_cast<double>(spec.vc_dim) * std::log(dm + 1.0);
  const double numerator = spec.kind == BoundKind::cal_conditional ? 16.0 : 8.0;
  const double conc = std::log(numerator / budget) / (2.0 * dm);
  return (4.0 * std::sqrt(growth / dm) + 2.0 * std::sqrt(conc)) / spec.gamma + spec.slack_term(slack);
}

namespace detail {

inline bool plan_less(const BlockPlan& x, const BlockPlan& y) {
  if (x.achieved_eps != y.achieved_eps) return x.achieved_eps < y.achieved_eps;
  return std::tie(x.a, x.m, x.slack) < std::tie(y.a, y.m, y.slack);
}

}  // namespace detail

/// Exact minimisation over the feasible plans. (a, m) pairs are the divisor
/// pairs of effective_size/2; odd effective sizes are skipped, which is the same
/// as moving to the next slack value. Slack values whose slack term alone
/// already exceeds the incumbent are pruned; that is exact because every other
/// term is positive.
inline BoundResult optimize_block_plan(const BoundSpec& spec, const MixingProfile& profile) {
  spec.validate();
  const std::size_t s_lo = spec.slack_min();
  const std::size_t s_hi = std::min(spec.slack_max(), spec.calibration_side() ? spec.n : spec.n - 1);

  const std::size_t table_len = std::max({spec.n, spec.n_cal, s_hi}) + 1;
  const std::vector<double> beta = profile.tabulate(table_len);

  // sigma^2 dependence part: W(a) = sum_{j<a} (a-j) beta(j), W(a+1) = W(a) + sum_{j<=a} beta(j).
  const double base = spec.alpha ? *spec.alpha * (1.0 - *spec.alpha) : 0.25;
  std::vector<double> sigma;
  if (!spec.conditional()) {
    const std::size_t a_max = spec.n / 2 + 1;
    sigma.resize(a_max + 1);
    double w = 0.0;
    double prefix = 0.0;
    for (std::size_t a = 1; a <= a_max; ++a) {
      if (a > 1) {
        prefix += beta[a - 1];
        w += prefix;
      }
      sigma[a] = std::sqrt(base + 2.0 / static_cast<double>(a) * w);
    }
  }

  const double tail_test = spec.calibration_side() ? 0.0 : beta[std::min(spec.n_cal, table_len - 1)];

  std::optional<BlockPlan> best;
  for (std::size_t slack = s_lo; slack <= s_hi; ++slack) {
    if (best && spec.slack_term(slack) >= best->achieved_eps) break;
    const std::size_t total = spec.effective_size(slack);
    if (total < 2 || total % 2 != 0) continue;
    const std::size_t half = total / 2;
    const double tail = spec.calibration_side() ? beta[slack] : tail_test;
    auto consider = [&](std::size_t a) {
      const std::size_t m = half / a;
      const double sg = spec.conditional() ? 0.0 : sigma[a];
      auto v = plan_value(spec, a, m, slack, beta[a], tail, sg);
      if (!v) return;
      BlockPlan cand{a, m, slack, *v};
      if (!best || detail::plan_less(cand, *best)) best = cand;
    };
    for (std::size_t d = 1; d * d <= half; ++d) {
      if (half % d != 0) continue;
      consider(d);
      if (d != half / d) consider(half / d);
    }
  }
  require(best.has_value(), Errc::no_feasible_plan,
          "no block plan leaves a positive failure budget (profile " + profile.description() + ")");
  return {best->achieved_eps, *best};
}

inline BoundResult eps_cal_beta(std::size_t n_cal, double delta_cal, const MixingProfile& profile,
                                std::optional<double> alpha = std::nullopt,
                                std::optional<std::size_t> max_slack = std::nullopt) {
  BoundSpec spec;
  spec.kind = BoundKind::cal_beta;
  spec.n = n_cal;
  spec.delta = delta_cal;
  spec.alpha = alpha;
  spec.max_slack = max_slack;
  return optimize_block_plan(spec, profile);
}

inline BoundResult eps_test_beta(std::size_t n_test, std::size_t n_cal, double delta_test,
                                 const MixingProfile& profile,
                                 std::optional<double> alpha = std::nullopt,
                                 std::optional<std::size_t> max_slack = std::nullopt) {
  BoundSpec spec;
  spec.kind = BoundKind::test_beta;
  spec.n = n_test;
  spec.n_cal = n_cal;
  spec.delta = delta_test;
  spec.alpha = alpha;
  spec.max_slack = max_slack;
  return optimize_block_plan(spec, profile);
}

inline BoundResult eps_cal_conditional(std::size_t n_cal, double delta_cal,
                                       const MixingProfile& profile, double gamma,
                                       std::size_t vc_dim,
                                       std::optional<std::size_t> max_slack = std::nullopt) {
  BoundSpec spec;
  spec.kind = BoundKind::cal_conditional;
  spec.n = n_cal;
  spec.delta = delta_cal;
  spec.gamma = gamma;
  spec.vc_dim = vc_dim;
  spec.max_slack = max_slack;
  return optimize_block_plan(spec, profile);
}

inline BoundResult eps_test_conditional(std::size_t n_test, std::size_t n_cal, double delta_test,
                                        const MixingProfile& profile, double gamma,
                                        std::size_t vc_dim,
                                        std::optional<std::size_t> max_slack = std::nullopt) {
  BoundSpec spec;
  spec.kind = BoundKind::test_conditional;
  spec.n = n_test;
  spec.n_cal = n_cal;
  spec.delta = delta_test;
  spec.gamma = gamma;
  spec.vc_dim = vc_dim;
  spec.max_slack = max_slack;
  return optimize_block_plan(spec, profile);
}

/// Decoupling term beta(gap) with gap = i - n_train for test index i. Every
/// test index has gap >= n_cal + 1; gap = 1 is the index-free worst case.
inline double eps_train(std::size_t gap, const MixingProfile& profile) {
  require(gap >= 1, Errc::bad_parameter, "gap must be positive");
  return profile(gap);
}

inline double iid_conditional_epsilon(std::size_t n, double delta, double gamma, std::size_t vc_dim) {
  require(n >= 1, Errc::bad_parameter, "n must be positive");
  require(delta > 0.0 && delta < 1.0, Errc::bad_parameter, "delta must lie in (0,1)");
  require(gamma > 0.0 && gamma < 1.0, Errc::bad_parameter, "gamma must lie in (0,1)");
  require(vc_dim >= 1, Errc::bad_parameter, "VC dimension must be positive");
  const double dn = static_cast<double>(n);
  const double growth = std::log(2.0) + static_cast<double>(vc_dim) * std::log(dn + 1.0);
  return (4.0 * std::sqrt(growth / dn) + 2.0 * std::sqrt(std::log(4.0 / delta) / (2.0 * dn))) / gamma;
}

// -- Assembly -----------------------------------------------------------------

enum class Regime { iid, beta_mixing, conditional };
enum class Guarantee { marginal, empirical };

struct CorrectionFactors {
  double eps_cal = 0.0;
  double eps_test = 0.0;
  double eps_train = 0.0;
  double eta = 0.0;
  double delta_cal = 0.0;
  double delta_test = 0.0;
  /// Probability with which the guarantee may fail (empirical guarantees).
  double failure_probability = 0.0;
  bool two_sided = false;
  std::optional<BlockPlan> plan_cal;
  std::optional<BlockPlan> plan_test;
  Regime regime = Regime::iid;
  Guarantee guarantee = Guarantee::marginal;

  bool vacuous() const noexcept { return eta > 1.0; }
};

/// eta = eps_cal + eps_train + delta_cal. The same eta bounds |coverage - (1 - alpha)|
/// when the score is continuous.
inline double eta_marginal(const ConfidenceParams& params, double eps_cal, double eps_train_value) {
  return eps_cal + eps_train_value + params.delta_cal;
}

inline double eta_empirical(double eps_cal, double eps_test) { return eps_cal + eps_test; }

/// Recomputes eta from the stored components.
inline double recompute_eta(const CorrectionFactors& f) {
  return f.guarantee == Guarantee::marginal ? f.eps_cal + f.eps_train + f.delta_cal
                                            : f.eps_cal + f.eps_test;
}

inline CorrectionFactors marginal_factors(const ConfidenceParams& params, std::size_t n_cal,
                                          const MixingProfile& profile, std::size_t gap,
                                          bool continuous = false,
                                          std::optional<double> variance_alpha = std::nullopt) {
  CorrectionFactors f;
  const BoundResult cal = eps_cal_beta(n_cal, params.delta_cal, profile, variance_alpha);
  f.eps_cal = cal.eps;
  f.plan_cal = cal.plan;
  f.eps_train = eps_train(gap, profile);
  f.delta_cal = params.delta_cal;
  f.delta_test = params.delta_test;
  f.eta = eta_marginal(params, f.eps_cal, f.eps_train);
  f.two_sided = continuous;
  f.regime = Regime::beta_mixing;
  f.guarantee = Guarantee::marginal;
  return f;
}

inline CorrectionFactors empirical_factors(const ConfidenceParams& params, std::size_t n_cal,
                                           std::size_t n_test, const MixingProfile& profile,
                                           bool continuous = false,
                                           std::optional<double> variance_alpha = std::nullopt) {
  CorrectionFactors f;
  const BoundResult cal = eps_cal_beta(n_cal, params.delta_cal, profile, variance_alpha);
  const BoundResult test = eps_test_beta(n_test, n_cal, params.delta_test, profile, variance_alpha);
  f.eps_cal = cal.eps;
  f.eps_test = test.eps;
  f.plan_cal = cal.plan;
  f.plan_test = test.plan;
  f.delta_cal = params.delta_cal;
  f.delta_test = params.delta_test;
  f.eta = eta_empirical(f.eps_cal, f.eps_test);
  f.two_sided = continuous;
  f.failure_probability = continuous ? 2.0 * (params.delta_cal + params.delta_test)
                                     : params.delta_cal + params.delta_test;
  f.regime = Regime::beta_mixing;
  f.guarantee = Guarantee::empirical;
  return f;
}

inline CorrectionFactors iid_marginal_factors(const ConfidenceParams& params, std::size_t n_cal) {
  CorrectionFactors f;
  f.eps_cal = iid_epsilon(n_cal, params.delta_cal);
  f.delta_cal = params.delta_cal;
  f.delta_test = params.delta_test;
  f.eta = eta_marginal(params, f.eps_cal, 0.0);
  f.regime = Regime::iid;
  f.guarantee = Guarantee::marginal;
  return f;
}

/// Monte Carlo stand-in for the population phi-quantile of the trained score.
/// `draw()` returns a fresh (x, y) pair independent of the training data.
template <class Draw, class Score>
double estimate_population_quantile(Draw&& draw, Score&& score, QuantileLevel phi,
                                    std::size_t n_mc) {
  require(n_mc >= 10000, Errc::bad_parameter, "n_mc must be at least 10^4");
  std::vector<double> scores(n_mc);
  for (auto& s : scores) {
    const auto [x, y] = draw();
    s = score(x, y);
  }
  return empirical_quantile(scores, phi);
}

}  // namespace mixcp
