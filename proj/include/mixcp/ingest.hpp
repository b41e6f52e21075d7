#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <istream>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mixcp/core.hpp"
#include "mixcp/error.hpp"

namespace mixcp {

enum class HeaderMode { detect, present, absent };

struct CsvColumns {
  std::size_t timestamp = 0;
  std::size_t price = 1;
  HeaderMode header = HeaderMode::detect;
};

namespace detail {

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

inline std::vector<std::string_view> split_commas(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (;;) {
    const auto pos = line.find(',', start);
    out.push_back(trim(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

template <class T>
std::optional<T> parse_number(std::string_view s) {
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  T v{};
  const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size() || s.empty()) return std::nullopt;
  return v;
}

}  // namespace detail

/// Reads (timestamp, price) rows. Timestamps are integer epoch seconds and
/// must be strictly increasing.
inline TimeSeries parse_price_csv(std::istream& in, const CsvColumns& cols = {}) {
  std::vector<double> prices;
  std::vector<std::int64_t> stamps;
  std::string line;
  std::size_t lineno = 0;
  bool first = true;
  const std::size_t need = std::max(cols.timestamp, cols.price) + 1;
  while (std::getline(in, line)) {
    ++lineno;
    const auto view = detail::trim(line);
    if (view.empty()) continue;
    const auto fields = detail::split_commas(view);
    const bool is_first = first;
    first = false;
    if (is_first && cols.header == HeaderMode::present) continue;
    const auto where = "line " + std::to_string(lineno) + ": ";
    if (fields.size() < need) {
      if (is_first && cols.header == HeaderMode::detect) continue;
      fail(Errc::parse_error, where + "expected at least " + std::to_string(need) + " fields");
    }
    const auto ts = detail::parse_number<std::int64_t>(fields[cols.timestamp]);
    const auto px = detail::parse_number<double>(fields[cols.price]);
    if (!ts || !px) {
      if (is_first && cols.header == HeaderMode::detect) continue;
      fail(Errc::parse_error, where + "cannot parse timestamp/price");
    }
    if (!std::isfinite(*px)) fail(Errc::parse_error, where + "price is not finite");
    if (*px <= 0.0) fail(Errc::nonpositive_price, where + "price must be positive");
    if (!stamps.empty() && *ts <= stamps.back())
      fail(Errc::non_monotone_timestamps, where + "timestamps must be strictly increasing");
    stamps.push_back(*ts);
    prices.push_back(*px);
  }
  require(!prices.empty(), Errc::empty_input, "no price rows found");
  return TimeSeries(std::move(prices), std::move(stamps));
}

inline TimeSeries load_price_csv(const std::string& path, const CsvColumns& cols = {}) {
  std::ifstream in(path);
  require(static_cast<bool>(in), Errc::parse_error, "cannot open " + path);
  return parse_price_csv(in, cols);
}

/// r_t = p_t / p_{t-1} - 1. Timestamps, if any, follow the later price.
inline TimeSeries linear_returns(const TimeSeries& prices) {
  require(prices.size() >= 2, Errc::series_too_short, "need at least two prices");
  std::vector<double> r(prices.size() - 1);
  for (std::size_t t = 1; t < prices.size(); ++t) {
    require(prices[t - 1] > 0.0 && prices[t] > 0.0, Errc::nonpositive_price, "prices must be positive");
    r[t - 1] = prices[t] / prices[t - 1] - 1.0;
  }
  std::optional<std::vector<std::int64_t>> ts;
  if (prices.has_timestamps()) ts.emplace(prices.timestamps()->begin() + 1, prices.timestamps()->end());
  return TimeSeries(std::move(r), std::move(ts));
}

/// Sample (n-1) standard deviation.
inline double sample_stddev(std::span<const double> v) {
  require(v.size() >= 2, Errc::too_few_points, "stddev needs two values");
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  return std::sqrt(ss / static_cast<double>(v.size() - 1));
}

/// Event tests on the returns strictly before the target, oldest first.
inline bool is_uptrend(std::span<const double> prior) {
  return prior.size() >= 2 && prior[prior.size() - 1] > 0.0 && prior[prior.size() - 2] > 0.0;
}
inline bool is_downtrend(std::span<const double> prior) {
  return prior.size() >= 2 && prior[prior.size() - 1] < 0.0 && prior[prior.size() - 2] < 0.0;
}
inline double trailing_stddev(std::span<const double> prior, std::size_t window) {
  require(prior.size() >= window, Errc::series_too_short, "not enough prior returns");
  return sample_stddev(prior.subspan(prior.size() - window));
}

struct EventMasks {
  std::vector<bool> uptrend;
  std::vector<bool> downtrend;
  std::vector<bool> high_vol;
  std::vector<bool> low_vol;
  double vol_threshold = 0.0;
};

/// Masks aligned to the return index t (0-based). Trend masks need two prior
/// returns (t >= 2); volatility masks need vol_window prior returns
/// (t >= vol_window). Earlier indices carry no mask. Without an explicit
/// threshold the median of the rolling stddevs is used.
inline EventMasks event_masks(const TimeSeries& returns, std::size_t vol_window = 10,
                              std::optional<double> vol_threshold = std::nullopt) {
  require(vol_window >= 2, Errc::bad_parameter, "vol_window must be at least 2");
  require(returns.size() > vol_window, Errc::series_too_short, "series must be longer than vol_window");
  const auto r = returns.values();
  const std::size_t n = r.size();
  EventMasks m;
  m.uptrend.assign(n, false);
  m.downtrend.assign(n, false);
  m.high_vol.assign(n, false);
  m.low_vol.assign(n, false);
  std::vector<double> sd(n, 0.0);
  for (std::size_t t = vol_window; t < n; ++t) sd[t] = trailing_stddev(r.first(t), vol_window);
  if (vol_threshold) {
    m.vol_threshold = *vol_threshold;
  } else {
    std::vector<double> tail(sd.begin() + static_cast<std::ptrdiff_t>(vol_window), sd.end());
    std::sort(tail.begin(), tail.end());
    const std::size_t k = tail.size();
    m.vol_threshold = k % 2 == 1 ? tail[k / 2] : 0.5 * (tail[k / 2 - 1] + tail[k / 2]);
  }
  for (std::size_t t = 2; t < n; ++t) {
    m.uptrend[t] = is_uptrend(r.first(t));
    m.downtrend[t] = is_downtrend(r.first(t));
  }
  for (std::size_t t = vol_window; t < n; ++t) {
    m.high_vol[t] = sd[t] > m.vol_threshold;
    m.low_vol[t] = !m.high_vol[t];
  }
  return m;
}

}  // namespace mixcp
