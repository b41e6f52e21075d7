#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mixcp/error.hpp"

namespace mixcp {

/// An ordered sequence of finite observations, optionally stamped with
/// strictly increasing epoch seconds.
class TimeSeries {
 public:
  explicit TimeSeries(std::vector<double> values,
                      std::optional<std::vector<std::int64_t>> timestamps = std::nullopt)
      : values_(std::move(values)), timestamps_(std::move(timestamps)) {
    require(!values_.empty(), Errc::empty_input, "time series must have at least one value");
    for (std::size_t i = 0; i < values_.size(); ++i)
      require(std::isfinite(values_[i]), Errc::bad_parameter,
              "non-finite value at index " + std::to_string(i));
    if (timestamps_) {
      require(timestamps_->size() == values_.size(), Errc::size_mismatch,
              "timestamps and values differ in length");
      for (std::size_t i = 1; i < timestamps_->size(); ++i)
        require((*timestamps_)[i] > (*timestamps_)[i - 1], Errc::non_monotone_timestamps,
                "timestamps not strictly increasing at index " + std::to_string(i));
    }
  }

  std::size_t size() const noexcept { return values_.size(); }
  double operator[](std::size_t i) const { return values_[i]; }
  std::span<const double> values() const noexcept { return values_; }
  bool has_timestamps() const noexcept { return timestamps_.has_value(); }
  const std::optional<std::vector<std::int64_t>>& timestamps() const noexcept { return timestamps_; }

 private:
  std::vector<double> values_;
  std::optional<std::vector<std::int64_t>> timestamps_;
};

/// Rows (x, y) with x in R^d, stored row-major.
class SupervisedDataset {
 public:
  SupervisedDataset() = default;

  SupervisedDataset(std::size_t dim, std::vector<double> x, std::vector<double> y)
      : dim_(dim), x_(std::move(x)), y_(std::move(y)) {
    require(x_.size() == dim_ * y_.size(), Errc::size_mismatch,
            "covariate storage does not match dim * rows");
    for (double v : x_) require(std::isfinite(v), Errc::bad_parameter, "non-finite covariate");
    for (double v : y_) require(std::isfinite(v), Errc::bad_parameter, "non-finite response");
  }

  std::size_t size() const noexcept { return y_.size(); }
  bool empty() const noexcept { return y_.empty(); }
  std::size_t dim() const noexcept { return dim_; }

  std::span<const double> x(std::size_t row) const noexcept {
    return {x_.data() + row * dim_, dim_};
  }
  double y(std::size_t row) const noexcept { return y_[row]; }
  std::span<const double> ys() const noexcept { return y_; }

  /// Rows [begin, end) as a new dataset.
  SupervisedDataset slice(std::size_t begin, std::size_t end) const {
    require(begin <= end && end <= size(), Errc::size_mismatch, "slice out of range");
    std::vector<double> x(x_.begin() + static_cast<std::ptrdiff_t>(begin * dim_),
                          x_.begin() + static_cast<std::ptrdiff_t>(end * dim_));
    std::vector<double> y(y_.begin() + static_cast<std::ptrdiff_t>(begin),
                          y_.begin() + static_cast<std::ptrdiff_t>(end));
    SupervisedDataset out;
    out.dim_ = dim_;
    out.x_ = std::move(x);
    out.y_ = std::move(y);
    return out;
  }

 private:
  std::size_t dim_ = 0;
  std::vector<double> x_;
  std::vector<double> y_;
};

/// Half-open row range [begin, end), 0-based.
struct IndexRange {
  std::size_t begin = 0;
  std::size_t end = 0;
  std::size_t size() const noexcept { return end - begin; }
  bool contains(std::size_t i) const noexcept { return i >= begin && i < end; }
};

/// Contiguous temporal partition train | cal | test. In 1-based terms
/// I_train = {1..n_train}, I_cal = {n_train+1..n_train+n_cal}, I_test = the rest.
struct SplitIndices {
  std::size_t n_train = 0;
  std::size_t n_cal = 0;
  std::size_t n_test = 0;

  std::size_t n() const noexcept { return n_train + n_cal + n_test; }
  IndexRange train() const noexcept { return {0, n_train}; }
  IndexRange cal() const noexcept { return {n_train, n_train + n_cal}; }
  IndexRange test() const noexcept { return {n_train + n_cal, n()}; }
};

inline SplitIndices split_indices(std::size_t n, std::size_t n_train, std::size_t n_cal,
                                  std::size_t n_test) {
  require(n_train > 0 && n_cal > 0 && n_test > 0, Errc::size_mismatch,
          "split counts must all be positive");
  require(n_train + n_cal + n_test == n, Errc::size_mismatch,
          "split counts sum to " + std::to_string(n_train + n_cal + n_test) + ", expected " +
              std::to_string(n));
  return {n_train, n_cal, n_test};
}

/// Row t holds x = (v[t-L], ..., v[t-1]) and y = v[t], for t = L .. size-1.
inline SupervisedDataset make_lagged_features(const TimeSeries& series, std::size_t lag_count) {
  require(series.size() > lag_count, Errc::series_too_short,
          "series of length " + std::to_string(series.size()) + " cannot supply " +
              std::to_string(lag_count) + " lags");
  const std::size_t rows = series.size() - lag_count;
  std::vector<double> x;
  std::vector<double> y;
  x.reserve(rows * lag_count);
  y.reserve(rows);
  auto v = series.values();
  for (std::size_t t = lag_count; t < series.size(); ++t) {
    x.insert(x.end(), v.begin() + static_cast<std::ptrdiff_t>(t - lag_count),
             v.begin() + static_cast<std::ptrdiff_t>(t));
    y.push_back(v[t]);
  }
  return SupervisedDataset(lag_count, std::move(x), std::move(y));
}

}  // namespace mixcp
