#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace mixcp {

// Every failure the library reports carries one of these codes.
enum class Errc {
  size_mismatch,
  series_too_short,
  empty_input,
  empty_condition_set,
  too_few_points,
  empty_calibration,
  empty_test,
  empty_training,
  not_invertible,
  not_stochastic,
  no_unique_stationary,
  non_stationary_lambda,
  bad_parameter,
  no_feasible_plan,
  nonpositive_scale,
  lambda_not_in_grid,
  no_controlling_lambda,
  parse_error,
  non_monotone_timestamps,
  nonpositive_price,
  config_error,
};

constexpr std::string_view to_string(Errc code) noexcept {
  switch (code) {
    case Errc::size_mismatch: return "SizeMismatch";
    case Errc::series_too_short: return "SeriesTooShort";
    case Errc::empty_input: return "EmptyInput";
    case Errc::empty_condition_set: return "EmptyConditionSet";
    case Errc::too_few_points: return "TooFewPoints";
    case Errc::empty_calibration: return "EmptyCalibration";
    case Errc::empty_test: return "EmptyTest";
    case Errc::empty_training: return "EmptyTraining";
    case Errc::not_invertible: return "NotInvertible";
    case Errc::not_stochastic: return "NotStochastic";
    case Errc::no_unique_stationary: return "NoUniqueStationary";
    case Errc::non_stationary_lambda: return "NonStationaryLambda";
    case Errc::bad_parameter: return "BadParameter";
    case Errc::no_feasible_plan: return "NoFeasiblePlan";
    case Errc::nonpositive_scale: return "NonpositiveScale";
    case Errc::lambda_not_in_grid: return "LambdaNotInGrid";
    case Errc::no_controlling_lambda: return "NoControllingLambda";
    case Errc::parse_error: return "ParseError";
    case Errc::non_monotone_timestamps: return "NonMonotoneTimestamps";
    case Errc::nonpositive_price: return "NonpositivePrice";
    case Errc::config_error: return "ConfigError";
  }
  return "Unknown";
}

class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

[[noreturn]] inline void fail(Errc code, const std::string& what) { throw Error(code, what); }

inline void require(bool ok, Errc code, const std::string& what) {
  if (!ok) fail(code, what);
}

}  // namespace mixcp
