#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "mixcp/core.hpp"
#include "mixcp/error.hpp"
#include "mixcp/quantile.hpp"

namespace mixcp {

/// tau (y - y_hat) above the prediction, (1 - tau)(y_hat - y) below.
inline double pinball_loss(double y, double y_hat, double tau) {
  require(tau > 0.0 && tau < 1.0, Errc::bad_parameter, "tau must lie in (0,1)");
  return y >= y_hat ? tau * (y - y_hat) : (1.0 - tau) * (y_hat - y);
}

/// Returns (min, max).
inline std::pair<double, double> fix_quantile_crossing(double lo, double hi) noexcept {
  return lo <= hi ? std::pair{lo, hi} : std::pair{hi, lo};
}

struct ModelConfig {
  std::size_t tree_depth = 3;
  std::size_t n_rounds = 100;
  double learning_rate = 0.1;
  std::size_t min_leaf = 20;
  std::pair<double, double> quantile_levels{0.05, 0.95};

  static ModelConfig for_alpha(double alpha) {
    ModelConfig cfg;
    cfg.quantile_levels = {alpha / 2.0, 1.0 - alpha / 2.0};
    return cfg;
  }

  void validate() const {
    require(tree_depth >= 1, Errc::bad_parameter, "tree_depth must be >= 1");
    require(n_rounds >= 1, Errc::bad_parameter, "n_rounds must be >= 1");
    require(learning_rate > 0.0 && learning_rate <= 1.0, Errc::bad_parameter,
            "learning_rate must lie in (0,1]");
    require(min_leaf >= 1, Errc::bad_parameter, "min_leaf must be >= 1");
    auto [lo, hi] = quantile_levels;
    require(lo > 0.0 && lo < 1.0 && hi > 0.0 && hi < 1.0, Errc::bad_parameter,
            "quantile levels must lie in (0,1)");
  }
};

/// Axis-aligned binary regression tree; x[feature] <= threshold goes left.
class RegressionTree {
 public:
  struct Node {
    int feature = -1;  // -1 marks a leaf
    double threshold = 0.0;
    std::int32_t left = -1;
    std::int32_t right = -1;
    double value = 0.0;
  };

  double predict(std::span<const double> x) const noexcept {
    std::size_t i = 0;
    while (nodes_[i].feature >= 0) {
      const Node& n = nodes_[i];
      i = static_cast<std::size_t>(x[static_cast<std::size_t>(n.feature)] <= n.threshold ? n.left
                                                                                         : n.right);
    }
    return nodes_[i].value;
  }

  std::size_t node_count() const noexcept { return nodes_.size(); }
  std::size_t depth() const noexcept { return depth_of(0); }

 private:
  friend class QuantileBooster;

  std::size_t depth_of(std::size_t i) const noexcept {
    if (nodes_[i].feature < 0) return 0;
    return 1 + std::max(depth_of(static_cast<std::size_t>(nodes_[i].left)),
                        depth_of(static_cast<std::size_t>(nodes_[i].right)));
  }

  std::vector<Node> nodes_;
};

/// Gradient-boosted trees for one conditional quantile level tau.
///
/// Each round fits a depth-bounded tree to the pinball-loss negative gradient
/// (tau above the current fit, tau - 1 at or below it) by squared-error
/// splitting, then replaces every leaf value with the exact pinball-loss line
/// search: the empirical tau-quantile of the residuals in that leaf. Because the
/// leaf loss is convex in the step, any learning rate in (0,1] cannot increase
/// the training loss.
class QuantileBooster {
 public:
  QuantileBooster() = default;

  static QuantileBooster fit(const SupervisedDataset& train, double tau, const ModelConfig& cfg);

  double predict(std::span<const double> x) const noexcept {
    double s = init_;
    for (const auto& t : trees_) s += learning_rate_ * t.predict(x);
    return s;
  }

  double tau() const noexcept { return tau_; }
  std::size_t rounds() const noexcept { return trees_.size(); }
  const std::vector<double>& training_loss_history() const noexcept { return loss_history_; }

 private:
  class Fitter;

  double tau_ = 0.5;
  double init_ = 0.0;
  double learning_rate_ = 0.1;
  std::vector<RegressionTree> trees_;
  std::vector<double> loss_history_;  // mean pinball loss after 0..rounds trees
};

class QuantileBooster::Fitter {
 public:
  Fitter(const SupervisedDataset& train, double tau, const ModelConfig& cfg)
      : n_(train.size()), dim_(train.dim()), tau_(tau), cfg_(cfg), y_(train.ys().begin(), train.ys().end()) {
    cols_.resize(dim_ * n_);
    for (std::size_t i = 0; i < n_; ++i) {
      auto x = train.x(i);
      for (std::size_t f = 0; f < dim_; ++f) cols_[f * n_ + i] = x[f];
    }
    sorted_.resize(dim_ * n_);
    for (std::size_t f = 0; f < dim_; ++f) {
      auto begin = sorted_.begin() + static_cast<std::ptrdiff_t>(f * n_);
      std::iota(begin, begin + static_cast<std::ptrdiff_t>(n_), 0U);
      const double* col = &cols_[f * n_];
      std::stable_sort(begin, begin + static_cast<std::ptrdiff_t>(n_),
                       [col](std::uint32_t a, std::uint32_t b) { return col[a] < col[b]; });
    }
    order_.resize(sorted_.size());
    grad_.resize(n_);
    resid_.resize(n_);
    goes_left_.resize(n_);
    scratch_.resize(n_);
    all_.resize(n_);
    std::iota(all_.begin(), all_.end(), 0U);
  }

  QuantileBooster run() {
    QuantileBooster out;
    out.tau_ = tau_;
    out.learning_rate_ = cfg_.learning_rate;
    out.init_ = empirical_quantile(y_, QuantileLevel(tau_));
    fit_.assign(n_, out.init_);
    out.loss_history_.push_back(mean_loss());
    out.trees_.reserve(cfg_.n_rounds);
    for (std::size_t round = 0; round < cfg_.n_rounds; ++round) {
      for (std::size_t i = 0; i < n_; ++i) {
        resid_[i] = y_[i] - fit_[i];
        grad_[i] = resid_[i] > 0.0 ? tau_ : tau_ - 1.0;
      }
      out.trees_.push_back(grow_tree());
      out.loss_history_.push_back(mean_loss());
    }
    return out;
  }

 private:
  struct Pending {
    std::size_t node;
    std::size_t begin;
    std::size_t end;
    std::size_t depth;
  };

  double mean_loss() const {
    double s = 0.0;
    for (std::size_t i = 0; i < n_; ++i) s += pinball_loss(y_[i], fit_[i], tau_);
    return s / static_cast<double>(n_);
  }

  // Samples of the segment in the order of feature 0 (or all samples when the
  // data has no covariates).
  std::span<const std::uint32_t> segment(std::size_t begin, std::size_t end) const {
    if (dim_ == 0) return {all_.data() + begin, end - begin};
    return {order_.data() + begin, end - begin};
  }

  RegressionTree grow_tree() {
    std::copy(sorted_.begin(), sorted_.end(), order_.begin());
    RegressionTree tree;
    tree.nodes_.emplace_back();
    std::vector<Pending> stack{{0, 0, n_, 0}};
    while (!stack.empty()) {
      const Pending cur = stack.back();
      stack.pop_back();
      const auto split = best_split(cur);
      if (!split) {
        make_leaf(tree, cur);
        continue;
      }
      const auto [feature, threshold, n_left] = *split;
      partition(cur, feature, threshold);
      const auto left = static_cast<std::int32_t>(tree.nodes_.size());
      tree.nodes_.emplace_back();
      tree.nodes_.emplace_back();
      auto& node = tree.nodes_[cur.node];
      node.feature = static_cast<int>(feature);
      node.threshold = threshold;
      node.left = left;
      node.right = left + 1;
      // Right pushed first so the left subtree is finished first; order does not
      // affect the result.
      stack.push_back({static_cast<std::size_t>(left) + 1, cur.begin + n_left, cur.end, cur.depth + 1});
      stack.push_back({static_cast<std::size_t>(left), cur.begin, cur.begin + n_left, cur.depth + 1});
    }
    return tree;
  }

  struct Split {
    std::size_t feature;
    double threshold;
    std::size_t n_left;
  };

  std::optional<Split> best_split(const Pending& cur) const {
    const std::size_t count = cur.end - cur.begin;
    if (dim_ == 0 || cur.depth >= cfg_.tree_depth || count < 2 * cfg_.min_leaf) return std::nullopt;

    double total = 0.0;
    for (std::uint32_t idx : segment(cur.begin, cur.end)) total += grad_[idx];
    const double parent = total * total / static_cast<double>(count);
    double best_gain = parent + 1e-12 * std::max(1.0, std::abs(parent));
    std::optional<Split> best;

    for (std::size_t f = 0; f < dim_; ++f) {
      const std::uint32_t* ord = &order_[f * n_];
      const double* col = &cols_[f * n_];
      double left_sum = 0.0;
      for (std::size_t k = 1; k < count; ++k) {
        const std::uint32_t idx = ord[cur.begin + k - 1];
        left_sum += grad_[idx];
        if (k < cfg_.min_leaf) continue;
        if (count - k < cfg_.min_leaf) break;
        const double v = col[idx];
        const double v_next = col[ord[cur.begin + k]];
        if (!(v < v_next)) continue;
        const double right_sum = total - left_sum;
        const double gain = left_sum * left_sum / static_cast<double>(k) +
                            right_sum * right_sum / static_cast<double>(count - k);
        if (gain > best_gain) {
          best_gain = gain;
          double thr = v + 0.5 * (v_next - v);
          if (!(thr < v_next)) thr = v;
          best = Split{f, thr, k};
        }
      }
    }
    return best;
  }

  void partition(const Pending& cur, std::size_t feature, double threshold) {
    const double* col = &cols_[feature * n_];
    for (std::size_t k = cur.begin; k < cur.end; ++k) {
      const std::uint32_t idx = order_[feature * n_ + k];
      goes_left_[idx] = col[idx] <= threshold ? 1 : 0;
    }
    for (std::size_t f = 0; f < dim_; ++f) {
      std::uint32_t* ord = &order_[f * n_];
      std::size_t l = cur.begin;
      std::size_t r = 0;
      for (std::size_t k = cur.begin; k < cur.end; ++k) {
        const std::uint32_t idx = ord[k];
        if (goes_left_[idx]) ord[l++] = idx;
        else scratch_[r++] = idx;
      }
      std::copy(scratch_.begin(), scratch_.begin() + static_cast<std::ptrdiff_t>(r), ord + l);
    }
  }

  void make_leaf(RegressionTree& tree, const Pending& cur) {
    auto members = segment(cur.begin, cur.end);
    std::vector<double> r;
    r.reserve(members.size());
    for (std::uint32_t idx : members) r.push_back(resid_[idx]);
    const double value = empirical_quantile(r, QuantileLevel(tau_));
    tree.nodes_[cur.node].value = value;
    for (std::uint32_t idx : members) fit_[idx] += cfg_.learning_rate * value;
  }

  std::size_t n_;
  std::size_t dim_;
  double tau_;
  ModelConfig cfg_;
  std::vector<double> y_;
  std::vector<double> cols_;            // column-major covariates
  std::vector<std::uint32_t> sorted_;   // per-feature sample order, fixed
  std::vector<std::uint32_t> order_;    // per-feature order, partitioned by node
  std::vector<double> grad_;
  std::vector<double> resid_;
  std::vector<double> fit_;
  std::vector<unsigned char> goes_left_;
  std::vector<std::uint32_t> scratch_;
  std::vector<std::uint32_t> all_;
};

inline QuantileBooster QuantileBooster::fit(const SupervisedDataset& train, double tau,
                                            const ModelConfig& cfg) {
  cfg.validate();
  require(tau > 0.0 && tau < 1.0, Errc::bad_parameter, "tau must lie in (0,1)");
  require(!train.empty(), Errc::empty_training, "cannot fit on an empty training set");
  Fitter f(train, tau, cfg);
  return f.run();
}

/// Lower and upper conditional-quantile regressors.
class QuantileModel {
 public:
  QuantileModel(QuantileBooster lo, QuantileBooster hi) : lo_(std::move(lo)), hi_(std::move(hi)) {}

  double predict_lo(std::span<const double> x) const noexcept { return lo_.predict(x); }
  double predict_hi(std::span<const double> x) const noexcept { return hi_.predict(x); }

  /// Both predictions after the crossing fix.
  std::pair<double, double> predict(std::span<const double> x) const noexcept {
    return fix_quantile_crossing(lo_.predict(x), hi_.predict(x));
  }

  const QuantileBooster& lower() const noexcept { return lo_; }
  const QuantileBooster& upper() const noexcept { return hi_; }

 private:
  QuantileBooster lo_;
  QuantileBooster hi_;
};

inline QuantileModel fit_quantile_model(const SupervisedDataset& train, const ModelConfig& cfg) {
  cfg.validate();
  require(!train.empty(), Errc::empty_training, "cannot fit on an empty training set");
  return {QuantileBooster::fit(train, cfg.quantile_levels.first, cfg),
          QuantileBooster::fit(train, cfg.quantile_levels.second, cfg)};
}

/// max(lo(x) - y, y - hi(x)) on crossing-fixed predictions.
inline double cqr_score(const QuantileModel& model, std::span<const double> x, double y) {
  const auto [lo, hi] = model.predict(x);
  return std::max(lo - y, y - hi);
}

inline double residual_score(double mu_x, double y) noexcept { return std::abs(y - mu_x); }

inline double weighted_residual_score(double mu_x, double rho_x, double y) {
  require(rho_x > 0.0, Errc::nonpositive_scale, "scale estimate must be positive");
  return std::abs(y - mu_x) / rho_x;
}

}  // namespace mixcp
