#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <exception>
#include <istream>
#include <limits>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "mixcp/bounds.hpp"
#include "mixcp/core.hpp"
#include "mixcp/error.hpp"
#include "mixcp/ingest.hpp"
#include "mixcp/mixing.hpp"
#include "mixcp/models.hpp"
#include "mixcp/processes.hpp"
#include "mixcp/random.hpp"
#include "mixcp/rcps.hpp"
#include "mixcp/splitcp.hpp"

namespace mixcp {

// -- Formatting -----------------------------------------------------------------

inline std::string fmt_fixed(double v, int digits = 6) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  if (std::isnan(v)) return "nan";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

/// Shortest text that reads back to the same double.
inline std::string fmt_exact(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  for (int p = 1; p <= 17; ++p) {
    std::snprintf(buf, sizeof buf, "%.*g", p, v);
    if (std::strtod(buf, nullptr) == v) break;
  }
  return buf;
}

// -- Config ---------------------------------------------------------------------

/// `key = value` lines, '#' comments. Every value read through a getter is
/// recorded (defaults included) so outputs can carry the resolved config.
class Config {
 public:
  Config() = default;

  static Config parse(std::istream& in) {
    Config c;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
      const auto view = detail::trim(line);
      if (view.empty()) continue;
      const auto eq = view.find('=');
      if (eq == std::string_view::npos)
        fail(Errc::config_error, "config line " + std::to_string(lineno) + ": expected key = value");
      const std::string key(detail::trim(view.substr(0, eq)));
      const std::string value(detail::trim(view.substr(eq + 1)));
      if (key.empty())
        fail(Errc::config_error, "config line " + std::to_string(lineno) + ": empty key");
      if (!c.values_.emplace(key, value).second)
        fail(Errc::config_error, "config line " + std::to_string(lineno) + ": duplicate key '" + key + "'");
    }
    return c;
  }

  static Config parse_string(const std::string& text) {
    std::istringstream in(text);
    return parse(in);
  }

  void set(const std::string& key, const std::string& value) { values_[key] = value; }
  bool has(const std::string& key) const { return values_.count(key) > 0; }

  std::string get_string(const std::string& key, const std::optional<std::string>& fallback = std::nullopt) const {
    auto it = values_.find(key);
    if (it == values_.end()) {
      if (!fallback) fail(Errc::config_error, "missing config key '" + key + "'");
      record(key, *fallback);
      return *fallback;
    }
    record(key, it->second);
    return it->second;
  }

  double get_double(const std::string& key, std::optional<double> fallback = std::nullopt) const {
    auto it = values_.find(key);
    if (it == values_.end()) {
      if (!fallback) fail(Errc::config_error, "missing config key '" + key + "'");
      record(key, fmt_exact(*fallback));
      return *fallback;
    }
    const auto v = parse_real(it->second);
    if (!v) fail(Errc::config_error, "config key '" + key + "' is not a number: " + it->second);
    record(key, it->second);
    return *v;
  }

  std::uint64_t get_uint(const std::string& key, std::optional<std::uint64_t> fallback = std::nullopt) const {
    auto it = values_.find(key);
    if (it == values_.end()) {
      if (!fallback) fail(Errc::config_error, "missing config key '" + key + "'");
      record(key, std::to_string(*fallback));
      return *fallback;
    }
    const auto v = detail::parse_number<std::uint64_t>(it->second);
    if (!v) fail(Errc::config_error, "config key '" + key + "' is not a nonnegative integer: " + it->second);
    record(key, it->second);
    return *v;
  }

  std::size_t get_size(const std::string& key, std::optional<std::size_t> fallback = std::nullopt) const {
    return static_cast<std::size_t>(get_uint(key, fallback));
  }

  std::vector<double> get_doubles(const std::string& key,
                                  const std::optional<std::vector<double>>& fallback = std::nullopt) const {
    auto it = values_.find(key);
    if (it == values_.end()) {
      if (!fallback) fail(Errc::config_error, "missing config key '" + key + "'");
      std::string joined;
      for (std::size_t i = 0; i < fallback->size(); ++i) joined += (i ? "," : "") + fmt_exact((*fallback)[i]);
      record(key, joined);
      return *fallback;
    }
    std::vector<double> out;
    for (auto field : detail::split_commas(it->second)) {
      const auto v = parse_real(field);
      if (!v) fail(Errc::config_error, "config key '" + key + "' has a bad list entry: " + std::string(field));
      out.push_back(*v);
    }
    record(key, it->second);
    return out;
  }

  std::vector<std::size_t> get_sizes(const std::string& key,
                                     const std::optional<std::vector<std::size_t>>& fallback = std::nullopt) const {
    auto it = values_.find(key);
    if (it == values_.end()) {
      if (!fallback) fail(Errc::config_error, "missing config key '" + key + "'");
      std::string joined;
      for (std::size_t i = 0; i < fallback->size(); ++i) joined += (i ? "," : "") + std::to_string((*fallback)[i]);
      record(key, joined);
      return *fallback;
    }
    std::vector<std::size_t> out;
    for (auto field : detail::split_commas(it->second)) {
      const auto v = detail::parse_number<std::uint64_t>(field);
      if (!v) fail(Errc::config_error, "config key '" + key + "' has a bad list entry: " + std::string(field));
      out.push_back(static_cast<std::size_t>(*v));
    }
    record(key, it->second);
    return out;
  }

  /// Keys present in the file that no getter asked for.
  std::vector<std::string> unused_keys() const {
    std::vector<std::string> out;
    for (const auto& [k, v] : values_)
      if (!resolved_.count(k)) out.push_back(k);
    return out;
  }

  void reject_unused() const {
    const auto unused = unused_keys();
    if (unused.empty()) return;
    std::string msg = "unknown config key(s):";
    for (const auto& k : unused) msg += " " + k;
    fail(Errc::config_error, msg);
  }

  const std::map<std::string, std::string>& resolved() const noexcept { return resolved_; }

 private:
  static std::optional<double> parse_real(std::string_view s) {
    s = detail::trim(s);
    if (s == "inf" || s == "+inf") return std::numeric_limits<double>::infinity();
    const auto v = detail::parse_number<double>(s);
    if (v && !std::isfinite(*v)) return std::nullopt;
    return v;
  }

  void record(const std::string& key, const std::string& value) const { resolved_[key] = value; }

  std::map<std::string, std::string> values_;
  mutable std::map<std::string, std::string> resolved_;
};

// -- Output ---------------------------------------------------------------------

/// CSV table preceded by `# key=value` lines.
struct Report {
  std::vector<std::pair<std::string, std::string>> header;
  std::vector<std::string> columns;
  std::vector<std::vector<std::string>> rows;
  /// Some requested bound had no feasible block plan.
  bool bound_infeasible = false;
  /// No requested bound was feasible.
  bool all_bounds_infeasible = false;

  void write(std::ostream& out) const {
    for (const auto& [k, v] : header) out << "# " << k << '=' << v << '\n';
    for (std::size_t i = 0; i < columns.size(); ++i) out << (i ? "," : "") << columns[i];
    out << '\n';
    for (const auto& row : rows) {
      for (std::size_t i = 0; i < row.size(); ++i) out << (i ? "," : "") << row[i];
      out << '\n';
    }
  }

  std::string to_string() const {
    std::ostringstream s;
    write(s);
    return s.str();
  }

  /// Index of a column, for callers reading results back.
  std::size_t column(const std::string& name) const {
    auto it = std::find(columns.begin(), columns.end(), name);
    require(it != columns.end(), Errc::bad_parameter, "no column " + name);
    return static_cast<std::size_t>(it - columns.begin());
  }
};

inline void finish_header(Report& r, const std::string& experiment, const Config& cfg) {
  r.header.emplace_back("experiment", experiment);
  for (const auto& [k, v] : cfg.resolved()) r.header.emplace_back(k, v);
}

// -- Replication driver -----------------------------------------------------------

/// Runs fn(i) for i in [0, n) on `threads` workers; results come back in index
/// order so output does not depend on scheduling.
template <class Fn>
auto run_indexed(std::size_t n, std::size_t threads, Fn&& fn) -> std::vector<decltype(fn(std::size_t{}))> {
  using T = decltype(fn(std::size_t{}));
  std::vector<std::optional<T>> slots(n);
  threads = std::max<std::size_t>(1, std::min(threads, n));
  if (threads == 1) {
    for (std::size_t i = 0; i < n; ++i) slots[i].emplace(fn(i));
  } else {
    std::atomic<std::size_t> next{0};
    std::exception_ptr err;
    std::mutex err_mu;
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < threads; ++w)
      pool.emplace_back([&] {
        for (;;) {
          const std::size_t i = next.fetch_add(1);
          if (i >= n) return;
          try {
            slots[i].emplace(fn(i));
          } catch (...) {
            std::lock_guard lock(err_mu);
            if (!err) err = std::current_exception();
            next.store(n);
          }
        }
      });
    for (auto& t : pool) t.join();
    if (err) std::rethrow_exception(err);
  }
  std::vector<T> out;
  out.reserve(n);
  for (auto& s : slots) out.push_back(std::move(*s));
  return out;
}

struct MeanStderr {
  double mean = 0.0;
  double stderr_ = 0.0;
};

inline MeanStderr mean_stderr(const std::vector<double>& v) {
  MeanStderr r;
  if (v.empty()) return r;
  for (double x : v) r.mean += x;
  r.mean /= static_cast<double>(v.size());
  if (v.size() > 1) {
    double ss = 0.0;
    for (double x : v) ss += (x - r.mean) * (x - r.mean);
    r.stderr_ = std::sqrt(ss / static_cast<double>(v.size() - 1) / static_cast<double>(v.size()));
  }
  return r;
}

// -- Split CP protocol ------------------------------------------------------------

struct SplitProtocol {
  std::size_t lags = 11;
  std::size_t n_train = 1000;
  std::size_t n_cal = 500;
  std::size_t n_test = 1;
  double alpha = 0.1;
  ModelConfig model = ModelConfig::for_alpha(0.1);

  std::size_t series_length() const { return lags + n_train + n_cal + n_test; }

  static SplitProtocol from(const Config& cfg) { return from(cfg, SplitProtocol{}); }

  static SplitProtocol from(const Config& cfg, const SplitProtocol& d) {
    SplitProtocol p;
    p.lags = cfg.get_size("lags", d.lags);
    p.n_train = cfg.get_size("n_train", d.n_train);
    p.n_cal = cfg.get_size("n_cal", d.n_cal);
    p.n_test = cfg.get_size("n_test", d.n_test);
    p.alpha = cfg.get_double("alpha", d.alpha);
    if (!(p.alpha > 0.0 && p.alpha < 1.0)) fail(Errc::config_error, "alpha must lie in (0,1)");
    p.model = ModelConfig::for_alpha(p.alpha);
    p.model.tree_depth = cfg.get_size("tree_depth", p.model.tree_depth);
    p.model.n_rounds = cfg.get_size("n_rounds", p.model.n_rounds);
    p.model.learning_rate = cfg.get_double("learning_rate", p.model.learning_rate);
    p.model.min_leaf = cfg.get_size("min_leaf", p.model.min_leaf);
    if (p.lags < 1 || p.n_train < 1 || p.n_cal < 1 || p.n_test < 1)
      fail(Errc::config_error, "lags, n_train, n_cal and n_test must be positive");
    try {
      p.model.validate();
    } catch (const Error& e) {
      fail(Errc::config_error, e.what());
    }
    return p;
  }
};

/// Fits CQR on the first n_train lagged rows, calibrates on the next n_cal and
/// returns the covered fraction of the following n_test rows.
inline double split_cp_coverage(const TimeSeries& series, const SplitProtocol& p) {
  const SupervisedDataset rows = make_lagged_features(series, p.lags);
  const SplitIndices split = split_indices(rows.size(), p.n_train, p.n_cal, p.n_test);
  auto model = std::make_shared<const QuantileModel>(
      fit_quantile_model(rows.slice(split.train().begin, split.train().end), p.model));
  const auto pred = calibrate(ConformityScore::cqr(model),
                              rows.slice(split.cal().begin, split.cal().end), p.alpha);
  return evaluate_marginal_coverage(pred, rows.slice(split.test().begin, split.test().end))
      .marginal_coverage;
}

inline std::size_t replications_from(const Config& cfg, std::size_t fallback) {
  const std::size_t r = cfg.get_size("replications", fallback);
  if (r == 0) fail(Errc::config_error, "replications must be positive");
  return r;
}

inline void check_stay(double stay) {
  if (!(stay > 0.0 && stay < 1.0)) fail(Errc::config_error, "stay probabilities must lie in (0,1)");
}

// -- Experiments ------------------------------------------------------------------

/// Marginal coverage of split CQR on the two-state HMM, per dependence level.
/// A level is the probability 1-p = 1-q of repeating the previous state.
inline Report run_hmm_coverage(const Config& cfg) {
  const auto stays = cfg.get_doubles("stay", std::vector<double>{0.5, 0.9, 0.99, 0.999});
  const double sigma = cfg.get_double("noise_sigma", 0.1);
  const std::size_t reps = replications_from(cfg, 1000);
  const std::uint64_t seed = cfg.get_uint("seed", 0);
  const std::size_t threads = cfg.get_size("threads", 1);
  const SplitProtocol proto = SplitProtocol::from(cfg);
  cfg.reject_unused();
  for (double s : stays) check_stay(s);

  Report r;
  r.columns = {"stay", "p", "q", "coverage", "stderr", "replications"};
  for (std::size_t li = 0; li < stays.size(); ++li) {
    const double p = 1.0 - stays[li];
    const auto cover = run_indexed(reps, threads, [&](std::size_t rep) {
      HmmConfig h{p, p, sigma, proto.series_length(), derive_seed(derive_seed(seed, li), rep)};
      return split_cp_coverage(simulate_two_state_hmm(h), proto);
    });
    const auto ms = mean_stderr(cover);
    r.rows.push_back({fmt_exact(stays[li]), fmt_exact(p), fmt_exact(p), fmt_fixed(ms.mean),
                      fmt_fixed(ms.stderr_), std::to_string(reps)});
  }
  finish_header(r, "hmm_coverage", cfg);
  return r;
}

inline Report run_ar1_coverage(const Config& cfg) {
  const auto lambdas = cfg.get_doubles("lambda", std::vector<double>{0.0, 0.8, 0.9, 0.99, 0.999, 0.9999});
  const std::size_t reps = replications_from(cfg, 500);
  const std::uint64_t seed = cfg.get_uint("seed", 0);
  const std::size_t threads = cfg.get_size("threads", 1);
  const SplitProtocol proto = SplitProtocol::from(cfg);
  cfg.reject_unused();
  for (double l : lambdas)
    if (!(std::abs(l) < 1.0)) fail(Errc::config_error, "AR(1) lambda must satisfy |lambda| < 1");

  Report r;
  r.columns = {"lambda", "coverage", "stderr", "replications"};
  for (std::size_t li = 0; li < lambdas.size(); ++li) {
    const auto cover = run_indexed(reps, threads, [&](std::size_t rep) {
      Ar1Config a{lambdas[li], proto.series_length(), derive_seed(derive_seed(seed, li), rep)};
      return split_cp_coverage(simulate_ar1(a), proto);
    });
    const auto ms = mean_stderr(cover);
    r.rows.push_back({fmt_exact(lambdas[li]), fmt_fixed(ms.mean), fmt_fixed(ms.stderr_), std::to_string(reps)});
  }
  finish_header(r, "ar1_coverage", cfg);
  return r;
}

/// eta = eps_cal + eps_train + delta against n_cal for HMM dependence levels,
/// with a Hoeffding iid reference. The training gap is n_cal + 1, the distance
/// from the last training index to the first test index.
inline Report run_bound_curves(const Config& cfg) {
  const auto stays = cfg.get_doubles("stay", std::vector<double>{0.5, 0.6, 0.7, 0.8});
  const auto n_grid = cfg.get_sizes("n_cal", std::vector<std::size_t>{1000, 2000, 5000, 10000, 20000, 50000, 100000});
  const double delta = cfg.get_double("delta", 0.01);
  cfg.reject_unused();
  for (double s : stays) check_stay(s);
  if (!(delta > 0.0 && delta < 1.0)) fail(Errc::config_error, "delta must lie in (0,1)");
  for (std::size_t n : n_grid)
    if (n < 2) fail(Errc::config_error, "n_cal values must be at least 2");

  Report r;
  r.columns = {"n_cal", "profile", "eps_cal", "eps_train", "eta", "a", "m", "slack", "status"};
  const ConfidenceParams params(0.1, delta, delta);
  std::size_t feasible = 0, total = 0;
  for (std::size_t n : n_grid) {
    const double eps = iid_epsilon(n, delta);
    r.rows.push_back({std::to_string(n), "iid", fmt_fixed(eps, 8), fmt_fixed(0.0, 8),
                      fmt_fixed(eps + delta, 8), "", "", "", "ok"});
    for (double stay : stays) {
      const auto prof = MixingProfile::two_state(1.0 - stay, 1.0 - stay);
      const std::string name = "stay=" + fmt_exact(stay);
      ++total;
      try {
        const auto f = marginal_factors(params, n, prof, n + 1);
        ++feasible;
        r.rows.push_back({std::to_string(n), name, fmt_fixed(f.eps_cal, 8), fmt_fixed(f.eps_train, 8),
                          fmt_fixed(f.eta, 8), std::to_string(f.plan_cal->a), std::to_string(f.plan_cal->m),
                          std::to_string(f.plan_cal->slack), "ok"});
      } catch (const Error& e) {
        if (e.code() != Errc::no_feasible_plan) throw;
        r.bound_infeasible = true;
        r.rows.push_back({std::to_string(n), name, "", "", "", "", "", "", "NoFeasiblePlan"});
      }
    }
  }
  r.all_bounds_infeasible = total > 0 && feasible == 0;
  finish_header(r, "bound_curves", cfg);
  return r;
}

/// Test-set coverage per replication against the floor 1 - alpha - eta with
/// eta = eps_cal + eps_test.
inline Report run_empirical_coverage(const Config& cfg) {
  const auto stays = cfg.get_doubles("stay", std::vector<double>{0.6});
  const double sigma = cfg.get_double("noise_sigma", 0.1);
  const std::size_t reps = replications_from(cfg, 300);
  const std::uint64_t seed = cfg.get_uint("seed", 0);
  const std::size_t threads = cfg.get_size("threads", 1);
  const double delta_cal = cfg.get_double("delta_cal", 0.005);
  const double delta_test = cfg.get_double("delta_test", 0.005);
  const std::string profile_kind = cfg.get_string("profile", std::string("two_state"));
  SplitProtocol d;
  d.n_cal = 3000;
  d.n_test = 3000;
  const SplitProtocol proto = SplitProtocol::from(cfg, d);
  cfg.reject_unused();
  for (double s : stays) check_stay(s);
  if (profile_kind != "two_state" && profile_kind != "one")
    fail(Errc::config_error, "profile must be two_state or one");
  const ConfidenceParams params = [&] {
    try {
      return ConfidenceParams(proto.alpha, delta_cal, delta_test);
    } catch (const Error& e) {
      fail(Errc::config_error, e.what());
    }
  }();

  Report r;
  r.columns = {"stay", "replication", "coverage", "floor", "above_floor"};
  std::size_t feasible = 0;
  for (std::size_t li = 0; li < stays.size(); ++li) {
    const double p = 1.0 - stays[li];
    const auto prof = profile_kind == "one" ? MixingProfile::constant(1.0) : MixingProfile::two_state(p, p);
    std::optional<double> floor;
    try {
      floor = 1.0 - proto.alpha - empirical_factors(params, proto.n_cal, proto.n_test, prof).eta;
      ++feasible;
    } catch (const Error& e) {
      if (e.code() != Errc::no_feasible_plan) throw;
      r.bound_infeasible = true;
    }
    const auto cover = run_indexed(reps, threads, [&](std::size_t rep) {
      HmmConfig h{p, p, sigma, proto.series_length(), derive_seed(derive_seed(seed, li), rep)};
      return split_cp_coverage(simulate_two_state_hmm(h), proto);
    });
    const std::string floor_text = floor ? fmt_fixed(*floor, 8) : "NoFeasiblePlan";
    std::size_t above = 0;
    for (std::size_t rep = 0; rep < reps; ++rep) {
      const bool ok = floor && cover[rep] >= *floor;
      above += ok ? 1 : 0;
      r.rows.push_back({fmt_exact(stays[li]), std::to_string(rep), fmt_fixed(cover[rep], 8), floor_text,
                        floor ? (ok ? "1" : "0") : ""});
    }
    r.rows.push_back({fmt_exact(stays[li]), "summary", fmt_fixed(mean_stderr(cover).mean, 8), floor_text,
                      floor ? fmt_fixed(static_cast<double>(above) / static_cast<double>(reps), 6) : ""});
  }
  r.all_bounds_infeasible = feasible == 0;
  finish_header(r, "empirical_coverage", cfg);
  return r;
}

// -- Conditional table ------------------------------------------------------------

inline const std::vector<std::string>& event_names() {
  static const std::vector<std::string> names{"uptrend", "downtrend", "high_vol", "low_vol"};
  return names;
}

/// The four event sets as predicates on lagged feature rows (oldest lag first),
/// matching event_masks at the target index.
inline SetFamily event_family(std::size_t lags, std::size_t vol_window, double vol_threshold) {
  require(lags >= std::max<std::size_t>(2, vol_window), Errc::bad_parameter,
          "lag count must cover the volatility window");
  auto vol = [vol_window](std::span<const double> x) { return trailing_stddev(x, vol_window); };
  std::vector<NamedSet> sets{
      {"uptrend", [](std::span<const double> x) { return is_uptrend(x); }},
      {"downtrend", [](std::span<const double> x) { return is_downtrend(x); }},
      {"high_vol", [vol, vol_threshold](std::span<const double> x) { return vol(x) > vol_threshold; }},
      {"low_vol", [vol, vol_threshold](std::span<const double> x) { return vol(x) <= vol_threshold; }},
  };
  return SetFamily(std::move(sets), 2, 0.25);
}

/// Per-event coverage for each calibration size. Every replication fits one
/// model on its training rows and shares one test block across calibration
/// sizes; the calibration window ends where the test block starts.
inline Report run_conditional_table(const Config& cfg) {
  const std::string source = cfg.get_string("source", std::string("ar1"));
  const auto cal_sizes = cfg.get_sizes("cal_sizes", std::vector<std::size_t>{500, 5000});
  const std::size_t vol_window = cfg.get_size("vol_window", 10);
  const std::uint64_t seed = cfg.get_uint("seed", 0);
  const std::size_t threads = cfg.get_size("threads", 1);
  SplitProtocol d;
  d.n_test = 2000;
  const SplitProtocol proto = SplitProtocol::from(cfg, d);
  if (cal_sizes.empty()) fail(Errc::config_error, "cal_sizes must not be empty");
  for (std::size_t c : cal_sizes)
    if (c == 0) fail(Errc::config_error, "calibration sizes must be positive");
  if (proto.lags < std::max<std::size_t>(2, vol_window))
    fail(Errc::config_error, "lags must be at least max(2, vol_window)");
  const std::size_t max_cal = *std::max_element(cal_sizes.begin(), cal_sizes.end());
  const std::size_t seg_len = proto.lags + proto.n_train + max_cal + proto.n_test;

  std::vector<TimeSeries> segments;
  std::string dataset;
  std::size_t reps = 0;
  double lambda = 0.0;
  if (source == "ar1") {
    lambda = cfg.get_double("lambda", 0.5);
    reps = replications_from(cfg, 40);
    dataset = "ar1(" + fmt_exact(lambda) + ")";
    if (!(std::abs(lambda) < 1.0)) fail(Errc::config_error, "AR(1) lambda must satisfy |lambda| < 1");
  } else if (source == "csv") {
    const std::string path = cfg.get_string("input");
    CsvColumns cols;
    cols.timestamp = cfg.get_size("timestamp_column", 0);
    cols.price = cfg.get_size("price_column", 1);
    reps = cfg.get_size("replications", 0);  // 0 = every full segment
    dataset = cfg.get_string("dataset", path);
    const TimeSeries ret = linear_returns(load_price_csv(path, cols));
    const std::size_t chunks = reps == 0 ? ret.size() / seg_len : std::min(reps, ret.size() / seg_len);
    if (chunks == 0) fail(Errc::series_too_short, "input too short for one train/cal/test segment");
    for (std::size_t k = 0; k < chunks; ++k) {
      const auto v = ret.values().subspan(k * seg_len, seg_len);
      segments.emplace_back(std::vector<double>(v.begin(), v.end()));
    }
    reps = chunks;
  } else {
    fail(Errc::config_error, "source must be ar1 or csv");
  }
  cfg.reject_unused();

  struct RepResult {
    double threshold = 0.0;
    // [cal size][event] -> coverage, absent when the event has no test point
    std::vector<std::vector<std::optional<double>>> coverage;
  };
  const auto results = run_indexed(reps, threads, [&](std::size_t rep) {
    const TimeSeries series = source == "ar1"
                                  ? simulate_ar1({lambda, seg_len, derive_seed(seed, rep)})
                                  : segments[rep];
    const EventMasks masks = event_masks(series, vol_window);
    const SetFamily family = event_family(proto.lags, vol_window, masks.vol_threshold);
    const SupervisedDataset rows = make_lagged_features(series, proto.lags);
    auto model = std::make_shared<const QuantileModel>(fit_quantile_model(rows.slice(0, proto.n_train), proto.model));
    const auto score = ConformityScore::cqr(model);
    const std::size_t test_begin = proto.n_train + max_cal;
    const SupervisedDataset test = rows.slice(test_begin, test_begin + proto.n_test);
    RepResult out;
    out.threshold = masks.vol_threshold;
    for (std::size_t c : cal_sizes) {
      const auto pred = conditional_calibrate(score, rows.slice(test_begin - c, test_begin), proto.alpha, family);
      const auto rep_cov = evaluate_conditional_coverage(pred, test, family);
      std::vector<std::optional<double>> per;
      for (const auto& sc : *rep_cov.per_set_coverage) per.push_back(sc.coverage);
      out.coverage.push_back(std::move(per));
    }
    return out;
  });

  Report r;
  r.columns = {"dataset", "cal_size"};
  for (const auto& e : event_names()) r.columns.push_back(e);
  r.columns.push_back("mean_abs_dev");
  const double target = 1.0 - proto.alpha;
  for (std::size_t ci = 0; ci < cal_sizes.size(); ++ci) {
    std::vector<std::string> row{dataset, std::to_string(cal_sizes[ci])};
    double dev_sum = 0.0;
    std::size_t dev_n = 0;
    for (std::size_t e = 0; e < event_names().size(); ++e) {
      double sum = 0.0;
      std::size_t n = 0;
      for (const auto& res : results)
        if (const auto& c = res.coverage[ci][e]) {
          sum += *c;
          dev_sum += std::abs(*c - target);
          ++n;
          ++dev_n;
        }
      row.push_back(n ? fmt_fixed(sum / static_cast<double>(n)) : "absent");
    }
    row.push_back(dev_n ? fmt_fixed(dev_sum / static_cast<double>(dev_n)) : "absent");
    r.rows.push_back(std::move(row));
  }
  double thr = 0.0;
  for (const auto& res : results) thr += res.threshold;
  finish_header(r, "conditional_table", cfg);
  r.header.emplace_back("replications_run", std::to_string(reps));
  r.header.emplace_back("mean_vol_threshold", fmt_exact(thr / static_cast<double>(reps)));
  return r;
}

// -- Backtest ---------------------------------------------------------------------

/// Monday = 0 ... Sunday = 6 for a UTC epoch-second timestamp.
inline int weekday_of(std::int64_t epoch_seconds) {
  const std::int64_t day = epoch_seconds >= 0 ? epoch_seconds / 86400 : (epoch_seconds - 86399) / 86400;
  return static_cast<int>(((day + 3) % 7 + 7) % 7);  // day 0 was a Thursday
}

inline std::string iso_date(std::int64_t epoch_seconds) {
  const std::int64_t day = epoch_seconds >= 0 ? epoch_seconds / 86400 : (epoch_seconds - 86399) / 86400;
  const std::chrono::year_month_day ymd{std::chrono::sys_days{std::chrono::days{day}}};
  char buf[32];
  std::snprintf(buf, sizeof buf, "%04d-%02u-%02u", static_cast<int>(ymd.year()),
                static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()));
  return buf;
}

inline std::set<int> parse_weekdays(const std::string& spec) {
  static const std::vector<std::string> names{"mon", "tue", "wed", "thu", "fri", "sat", "sun"};
  std::set<int> out;
  for (auto field : detail::split_commas(spec)) {
    if (field.empty()) continue;
    auto it = std::find(names.begin(), names.end(), std::string(field));
    if (it == names.end()) fail(Errc::config_error, "unknown weekday '" + std::string(field) + "'");
    out.insert(static_cast<int>(it - names.begin()));
  }
  if (out.empty()) fail(Errc::config_error, "weekday selection is empty");
  return out;
}

/// Sliding-window online CQR on linear returns, aggregated by UTC day.
inline Report run_backtest(const Config& cfg) {
  const std::string source = cfg.get_string("source", std::string("ar1"));
  const std::set<int> weekdays = parse_weekdays(cfg.get_string("weekdays", std::string("mon,tue,wed,thu")));
  OnlineConfig oc;
  oc.lag_count = cfg.get_size("lags", 11);
  oc.w_train = cfg.get_size("w_train", 1000);
  oc.w_cal = cfg.get_size("w_cal", 500);
  oc.alpha = cfg.get_double("alpha", 0.1);
  if (!(oc.alpha > 0.0 && oc.alpha < 1.0)) fail(Errc::config_error, "alpha must lie in (0,1)");
  oc.model = ModelConfig::for_alpha(oc.alpha);
  oc.model.tree_depth = cfg.get_size("tree_depth", oc.model.tree_depth);
  oc.model.n_rounds = cfg.get_size("n_rounds", oc.model.n_rounds);
  oc.model.learning_rate = cfg.get_double("learning_rate", oc.model.learning_rate);
  oc.model.min_leaf = cfg.get_size("min_leaf", oc.model.min_leaf);
  oc.refit_stride = cfg.get_size("refit_stride", 1);
  if (oc.refit_stride == 0) fail(Errc::config_error, "refit_stride must be positive");

  std::optional<TimeSeries> prices;
  if (source == "ar1") {
    const double lambda = cfg.get_double("lambda", 0.5);
    const double scale = cfg.get_double("return_scale", 1e-4);
    const std::size_t minutes = cfg.get_size("minutes", 10080);
    const auto start = static_cast<std::int64_t>(cfg.get_uint("start_epoch", 1609459200));  // 2021-01-01
    const std::uint64_t seed = cfg.get_uint("seed", 0);
    cfg.reject_unused();
    if (!(std::abs(lambda) < 1.0)) fail(Errc::config_error, "AR(1) lambda must satisfy |lambda| < 1");
    if (!(scale > 0.0) || minutes < 2) fail(Errc::config_error, "return_scale and minutes must be positive");
    const TimeSeries w = simulate_ar1({lambda, minutes - 1, seed});
    std::vector<double> p(minutes);
    std::vector<std::int64_t> ts(minutes);
    p[0] = 1.0;
    for (std::size_t t = 0; t < minutes; ++t) {
      if (t > 0) p[t] = p[t - 1] * (1.0 + scale * w[t - 1]);
      ts[t] = start + 60 * static_cast<std::int64_t>(t);
    }
    prices.emplace(std::move(p), std::move(ts));
  } else if (source == "csv") {
    CsvColumns cols;
    const std::string path = cfg.get_string("input");
    cols.timestamp = cfg.get_size("timestamp_column", 0);
    cols.price = cfg.get_size("price_column", 1);
    cfg.reject_unused();
    prices.emplace(load_price_csv(path, cols));
  } else {
    fail(Errc::config_error, "source must be ar1 or csv");
  }

  const auto records = online_sliding_cp(linear_returns(*prices), oc);
  Report r;
  r.columns = {"date", "weekday", "n_points", "coverage"};
  static const char* const day_names[] = {"mon", "tue", "wed", "thu", "fri", "sat", "sun"};
  std::size_t total = 0, total_cov = 0;
  std::size_t i = 0;
  while (i < records.size()) {
    const std::string date = iso_date(records[i].timestamp);
    const int wd = weekday_of(records[i].timestamp);
    std::size_t n = 0, cov = 0;
    for (; i < records.size() && iso_date(records[i].timestamp) == date; ++i) {
      ++n;
      cov += records[i].covered ? 1 : 0;
    }
    if (!weekdays.count(wd)) continue;
    total += n;
    total_cov += cov;
    r.rows.push_back({date, day_names[wd], std::to_string(n),
                      fmt_fixed(static_cast<double>(cov) / static_cast<double>(n))});
  }
  r.rows.push_back({"overall", "", std::to_string(total),
                    total ? fmt_fixed(static_cast<double>(total_cov) / static_cast<double>(total)) : "absent"});
  finish_header(r, "backtest", cfg);
  return r;
}

// -- RCPS demo --------------------------------------------------------------------

/// iid y = x + N(0,1), x ~ N(0,1), fixed predictor mu(x) = x, regions
/// {y : |y - x| <= lambda} on a uniform grid topped by +inf.
inline Report run_rcps_demo(const Config& cfg) {
  const std::size_t reps = replications_from(cfg, 500);
  const std::size_t n_cal = cfg.get_size("n_cal", 5000);
  const std::size_t n_test = cfg.get_size("n_test", 5000);
  const double alpha = cfg.get_double("alpha", 0.1);
  const double delta = cfg.get_double("delta", 0.05);
  const double grid_max = cfg.get_double("grid_max", 5.0);
  const std::size_t grid_points = cfg.get_size("grid_points", 5001);
  const std::uint64_t seed = cfg.get_uint("seed", 0);
  const std::size_t threads = cfg.get_size("threads", 1);
  cfg.reject_unused();
  if (!(alpha > 0.0 && alpha < 1.0) || !(delta > 0.0 && delta < 1.0))
    fail(Errc::config_error, "alpha and delta must lie in (0,1)");
  if (n_cal == 0 || n_test == 0 || grid_points < 2 || !(grid_max > 0.0))
    fail(Errc::config_error, "sizes and grid must be positive");

  std::vector<double> grid(grid_points);
  for (std::size_t k = 0; k < grid_points; ++k)
    grid[k] = grid_max * static_cast<double>(k) / static_cast<double>(grid_points - 1);
  grid.push_back(std::numeric_limits<double>::infinity());
  auto score = [](std::span<const double> x, double y) { return std::abs(y - x[0]); };
  const NestedFamily family = NestedFamily::score_sublevel(grid, score);
  const LossSpec loss = LossSpec::miscoverage();
  const double bound = alpha + iid_epsilon(n_cal, delta);

  auto draw = [](SplitMix64& rng, std::size_t n) {
    std::vector<double> x(n), y(n);
    for (std::size_t i = 0; i < n; ++i) {
      x[i] = rng.normal();
      y[i] = x[i] + rng.normal();
    }
    return SupervisedDataset(1, std::move(x), std::move(y));
  };

  struct RepResult {
    double lambda_hat, cal_risk, test_risk, cp_coverage_gap;
    bool monotone;
  };
  const auto results = run_indexed(reps, threads, [&](std::size_t rep) {
    SplitMix64 rng(derive_seed(seed, rep));
    const SupervisedDataset cal = draw(rng, n_cal);
    const SupervisedDataset test = draw(rng, n_test);
    const auto curve = risk_curve(family, loss, cal);
    RepResult out{};
    out.monotone = std::is_sorted(curve.rbegin(), curve.rend());
    const std::size_t k = threshold_index(curve, alpha);
    out.lambda_hat = grid[k];
    out.cal_risk = curve[k];
    out.test_risk = evaluate_risk(family, loss, test, out.lambda_hat);
    const auto pred = calibrate(ConformityScore::black_box(score), cal, alpha);
    const double cp_cov = evaluate_marginal_coverage(pred, test).marginal_coverage;
    out.cp_coverage_gap = std::abs((1.0 - out.test_risk) - cp_cov);
    return out;
  });

  Report r;
  r.columns = {"replication", "lambda_hat", "cal_risk", "test_risk", "bound", "controlled", "monotone",
               "cp_coverage_gap"};
  std::size_t controlled = 0, monotone = 0;
  double max_gap = 0.0;
  for (std::size_t rep = 0; rep < reps; ++rep) {
    const auto& x = results[rep];
    const bool ok = x.test_risk <= bound;
    controlled += ok ? 1 : 0;
    monotone += x.monotone ? 1 : 0;
    max_gap = std::max(max_gap, x.cp_coverage_gap);
    r.rows.push_back({std::to_string(rep), fmt_exact(x.lambda_hat), fmt_fixed(x.cal_risk, 8),
                      fmt_fixed(x.test_risk, 8), fmt_fixed(bound, 8), ok ? "1" : "0", x.monotone ? "1" : "0",
                      fmt_fixed(x.cp_coverage_gap, 8)});
  }
  const double dr = static_cast<double>(reps);
  r.rows.push_back({"summary", "", "", "", fmt_fixed(bound, 8), fmt_fixed(static_cast<double>(controlled) / dr),
                    fmt_fixed(static_cast<double>(monotone) / dr), fmt_fixed(max_gap, 8)});
  finish_header(r, "rcps_demo", cfg);
  r.header.emplace_back("grid_resolution", fmt_exact(grid_max / static_cast<double>(grid_points - 1)));
  return r;
}

/// "two_state:p,q", "ar1:lambda", "geometric:c,rho", "polynomial:b",
/// "constant:v" or "table:path".
inline MixingProfile parse_profile_spec(const std::string& spec) {
  const auto colon = spec.find(':');
  if (colon == std::string::npos) fail(Errc::config_error, "profile spec needs kind:params, got '" + spec + "'");
  const std::string kind = spec.substr(0, colon);
  const std::string rest = spec.substr(colon + 1);
  if (kind == "table") return load_profile_table(rest);
  std::vector<double> args;
  for (auto field : detail::split_commas(rest)) {
    const auto v = detail::parse_number<double>(field);
    if (!v) fail(Errc::config_error, "bad number in profile spec: " + std::string(field));
    args.push_back(*v);
  }
  auto want = [&](std::size_t n) {
    if (args.size() != n)
      fail(Errc::config_error, "profile '" + kind + "' takes " + std::to_string(n) + " parameter(s)");
  };
  if (kind == "two_state") {
    want(2);
    return MixingProfile::two_state(args[0], args[1]);
  }
  if (kind == "ar1") {
    want(1);
    return MixingProfile::ar1(args[0]);
  }
  if (kind == "geometric") {
    want(2);
    return MixingProfile::geometric(args[0], args[1]);
  }
  if (kind == "polynomial") {
    want(1);
    return MixingProfile::polynomial(args[0]);
  }
  if (kind == "constant") {
    want(1);
    return MixingProfile::constant(args[0]);
  }
  fail(Errc::config_error, "unknown profile kind '" + kind + "'");
}

inline Report run_experiment(const std::string& kind, const Config& cfg) {
  if (kind == "hmm_coverage") return run_hmm_coverage(cfg);
  if (kind == "ar1_coverage") return run_ar1_coverage(cfg);
  if (kind == "bound_curves") return run_bound_curves(cfg);
  if (kind == "empirical_coverage") return run_empirical_coverage(cfg);
  if (kind == "conditional_table") return run_conditional_table(cfg);
  if (kind == "backtest") return run_backtest(cfg);
  if (kind == "rcps_demo") return run_rcps_demo(cfg);
  fail(Errc::config_error, "unknown experiment '" + kind + "'");
}

}  // namespace mixcp
