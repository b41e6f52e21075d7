#include <gtest/gtest.h>

#include <cstdlib>
#include <string>

#include "mixcp/experiments.hpp"

using namespace mixcp;

namespace {

Errc code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no exception";
  return Errc::bad_parameter;
}

double cell(const Report& r, std::size_t row, const std::string& col) {
  return std::strtod(r.rows.at(row).at(r.column(col)).c_str(), nullptr);
}

const std::string small_split =
    "lags = 3\nn_train = 150\nn_cal = 60\nn_test = 20\nn_rounds = 10\nmin_leaf = 10\n";

}  // namespace

TEST(Config, ParseAndRecord) {
  const auto c = Config::parse_string("# comment\nalpha = 0.2\nstay = 0.5, 0.9  # trailing\nname=x\n");
  EXPECT_EQ(c.get_double("alpha"), 0.2);
  EXPECT_EQ(c.get_doubles("stay"), (std::vector<double>{0.5, 0.9}));
  EXPECT_EQ(c.get_size("n", 7), 7u);
  EXPECT_EQ(c.resolved().at("n"), "7");
  EXPECT_EQ(c.unused_keys(), std::vector<std::string>{"name"});
  EXPECT_EQ(code_of([&] { c.reject_unused(); }), Errc::config_error);
  EXPECT_EQ(c.get_string("name"), "x");
  c.reject_unused();
}

TEST(Config, Errors) {
  EXPECT_EQ(code_of([] { Config::parse_string("a = 1\na = 2\n"); }), Errc::config_error);
  EXPECT_EQ(code_of([] { Config::parse_string("novalue\n"); }), Errc::config_error);
  const auto c = Config::parse_string("x = abc\nn = -3\n");
  EXPECT_EQ(code_of([&] { c.get_double("x"); }), Errc::config_error);
  EXPECT_EQ(code_of([&] { c.get_size("n"); }), Errc::config_error);
  EXPECT_EQ(code_of([&] { c.get_double("missing"); }), Errc::config_error);
}

TEST(Format, ExactRoundTrips) {
  for (double v : {0.1, 1.0 / 3.0, 1e-300, 123456.789, -2.5}) EXPECT_EQ(std::stod(fmt_exact(v)), v);
  EXPECT_EQ(fmt_exact(0.5), "0.5");
  EXPECT_EQ(fmt_fixed(0.123456789, 4), "0.1235");
}

TEST(Dates, WeekdayAndIso) {
  EXPECT_EQ(weekday_of(0), 3);  // 1970-01-01 was a Thursday
  EXPECT_EQ(iso_date(0), "1970-01-01");
  EXPECT_EQ(weekday_of(1609459200), 4);  // 2021-01-01, Friday
  EXPECT_EQ(iso_date(1609459200 + 86399), "2021-01-01");
  EXPECT_EQ(iso_date(1609459200 + 86400), "2021-01-02");
  EXPECT_EQ(weekday_of(-1), 2);
  EXPECT_EQ(parse_weekdays("mon, thu"), (std::set<int>{0, 3}));
  EXPECT_EQ(code_of([] { parse_weekdays(""); }), Errc::config_error);
  EXPECT_EQ(code_of([] { parse_weekdays("funday"); }), Errc::config_error);
}

TEST(ProfileSpec, Parsing) {
  EXPECT_DOUBLE_EQ(parse_profile_spec("two_state:0.1,0.1")(1), 0.4);
  EXPECT_DOUBLE_EQ(parse_profile_spec("geometric:1,0.5")(2), 0.25);
  EXPECT_EQ(parse_profile_spec("constant:0")(5), 0.0);
  EXPECT_EQ(code_of([] { parse_profile_spec("two_state:0.1"); }), Errc::config_error);
  EXPECT_EQ(code_of([] { parse_profile_spec("weird:1"); }), Errc::config_error);
  EXPECT_EQ(code_of([] { parse_profile_spec("nocolon"); }), Errc::config_error);
}

TEST(RunIndexed, OrderIndependentOfThreads) {
  auto f = [](std::size_t i) { return i * i; };
  EXPECT_EQ(run_indexed(50, 1, f), run_indexed(50, 4, f));
  EXPECT_EQ(run_indexed(50, 4, f)[7], 49u);
}

TEST(HmmCoverage, SmallRunDeterministic) {
  auto c = Config::parse_string(small_split + "stay = 0.5, 0.99\nreplications = 6\nseed = 3\n");
  const auto a = run_hmm_coverage(c);
  ASSERT_EQ(a.rows.size(), 2u);
  EXPECT_DOUBLE_EQ(cell(a, 0, "stay"), 0.5);
  EXPECT_GE(cell(a, 0, "coverage"), 0.0);
  EXPECT_LE(cell(a, 0, "coverage"), 1.0);
  auto c2 = Config::parse_string(small_split + "stay = 0.5, 0.99\nreplications = 6\nseed = 3\nthreads = 3\n");
  const auto b = run_hmm_coverage(c2);
  EXPECT_EQ(a.rows, b.rows);
  auto c3 = Config::parse_string(small_split + "stay = 0.5, 0.99\nreplications = 6\nseed = 4\n");
  EXPECT_NE(run_hmm_coverage(c3).rows, a.rows);
}

TEST(HmmCoverage, RejectsBadInput) {
  EXPECT_EQ(code_of([] { run_hmm_coverage(Config::parse_string("replications = 0\n")); }), Errc::config_error);
  EXPECT_EQ(code_of([] { run_hmm_coverage(Config::parse_string("stay = 1.0\n")); }), Errc::config_error);
  EXPECT_EQ(code_of([] { run_hmm_coverage(Config::parse_string("bogus = 1\n")); }), Errc::config_error);
}

TEST(Ar1Coverage, SmallRun) {
  const auto r = run_ar1_coverage(Config::parse_string(small_split + "lambda = 0, 0.9\nreplications = 4\n"));
  ASSERT_EQ(r.rows.size(), 2u);
  EXPECT_EQ(code_of([] { run_ar1_coverage(Config::parse_string("lambda = 1\n")); }), Errc::config_error);
}

TEST(BoundCurves, RowsAndInfeasible) {
  const auto r = run_bound_curves(Config::parse_string("stay = 0.6\nn_cal = 1000, 10000\n"));
  ASSERT_EQ(r.rows.size(), 4u);
  for (std::size_t i = 0; i < r.rows.size(); ++i) EXPECT_EQ(r.rows[i][r.column("status")], "ok");
  // eta shrinks with n for each profile.
  EXPECT_LT(cell(r, 2, "eta"), cell(r, 0, "eta"));
  EXPECT_FALSE(r.bound_infeasible);
  const auto bad = run_bound_curves(Config::parse_string("stay = 0.9999999\nn_cal = 100\n"));
  EXPECT_TRUE(bad.bound_infeasible);
}

TEST(EmpiricalCoverage, SmallRun) {
  const auto r = run_empirical_coverage(Config::parse_string(
      "lags = 3\nn_train = 150\nn_cal = 400\nn_test = 400\nn_rounds = 10\nmin_leaf = 10\nreplications = 3\n"));
  ASSERT_EQ(r.rows.size(), 4u);
  EXPECT_EQ(r.rows.back()[r.column("replication")], "summary");
}

TEST(ConditionalTable, SmallRun) {
  const auto r = run_conditional_table(Config::parse_string(
      "lags = 10\nn_train = 300\ncal_sizes = 100, 300\nn_test = 300\nn_rounds = 10\nmin_leaf = 10\nreplications = 2\n"));
  ASSERT_EQ(r.rows.size(), 2u);
  for (const auto& name : event_names()) {
    const double v = cell(r, 0, name);
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
}

TEST(Backtest, SmallRun) {
  const auto r = run_backtest(Config::parse_string(
      "lags = 3\nw_train = 100\nw_cal = 50\nn_rounds = 5\nmin_leaf = 10\nminutes = 4320\nrefit_stride = 200\n"
      "weekdays = fri,sat,sun\n"));
  ASSERT_GE(r.rows.size(), 2u);
  EXPECT_EQ(r.rows.back()[0], "overall");
}

TEST(RcpsDemo, SmallRun) {
  const auto r = run_rcps_demo(
      Config::parse_string("replications = 5\nn_cal = 500\nn_test = 500\ngrid_points = 501\n"));
  ASSERT_EQ(r.rows.size(), 6u);
  for (std::size_t i = 0; i < 5; ++i) EXPECT_EQ(r.rows[i][r.column("monotone")], "1");
}

TEST(RunExperiment, Dispatch) {
  EXPECT_EQ(code_of([] { run_experiment("nope", Config{}); }), Errc::config_error);
}
