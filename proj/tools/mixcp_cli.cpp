#include <cstdint>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "mixcp/bounds.hpp"
#include "mixcp/experiments.hpp"
#include "mixcp/mixing.hpp"
#include "mixcp/processes.hpp"

namespace {

constexpr int exit_ok = 0;
constexpr int exit_other = 1;
constexpr int exit_config = 2;
constexpr int exit_infeasible = 3;

struct ExperimentArgs {
  std::string config_path;
  std::string out_path;
  std::optional<std::uint64_t> seed;
  std::vector<std::string> overrides;
};

void add_experiment_options(CLI::App* sub, ExperimentArgs& args) {
  sub->add_option("--config", args.config_path, "key = value config file");
  sub->add_option("--out", args.out_path, "output CSV (default: stdout)");
  sub->add_option("--seed", args.seed, "override the config seed");
  sub->add_option("--set", args.overrides, "override a config entry, key=value")->take_all();
}

mixcp::Config load_config(const ExperimentArgs& args) {
  mixcp::Config cfg;
  if (!args.config_path.empty()) {
    std::ifstream in(args.config_path);
    if (!in) mixcp::fail(mixcp::Errc::config_error, "cannot open config " + args.config_path);
    cfg = mixcp::Config::parse(in);
  }
  for (const auto& kv : args.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) mixcp::fail(mixcp::Errc::config_error, "--set expects key=value, got " + kv);
    cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (args.seed) cfg.set("seed", std::to_string(*args.seed));
  return cfg;
}

void emit(const std::string& path, const std::string& text) {
  if (path.empty()) {
    std::cout << text;
    return;
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) mixcp::fail(mixcp::Errc::config_error, "cannot write " + path);
  out << text;
}

int run_report(const std::string& kind, const ExperimentArgs& args) {
  const mixcp::Config cfg = load_config(args);
  std::string chosen = kind;
  if (chosen.empty()) chosen = cfg.get_string("experiment");
  else if (cfg.has("experiment") && cfg.get_string("experiment") != kind)
    mixcp::fail(mixcp::Errc::config_error, "config is for experiment '" + cfg.get_string("experiment") + "'");
  const mixcp::Report report = mixcp::run_experiment(chosen, cfg);
  emit(args.out_path, report.to_string());
  return report.all_bounds_infeasible ? exit_infeasible : exit_ok;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Conformal prediction under beta-mixing dependence"};
  app.require_subcommand(1);

  struct Entry {
    std::string name;
    std::string kind;
    std::string help;
    ExperimentArgs args;
    CLI::App* sub = nullptr;
  };
  std::vector<Entry> entries{
      {"run", "", "run the experiment named by the config's `experiment` key", {}},
      {"hmm-coverage", "hmm_coverage", "marginal coverage on the two-state HMM", {}},
      {"ar1-coverage", "ar1_coverage", "marginal coverage on AR(1) processes", {}},
      {"bound-curves", "bound_curves", "correction factor eta against n_cal", {}},
      {"empirical-coverage", "empirical_coverage", "test-set coverage against 1 - alpha - eta", {}},
      {"conditional-table", "conditional_table", "per-event conditional coverage", {}},
      {"backtest", "backtest", "sliding-window online CP with daily coverage", {}},
      {"rcps-demo", "rcps_demo", "risk-controlling prediction sets on iid data", {}},
  };
  for (auto& e : entries) {
    e.sub = app.add_subcommand(e.name, e.help);
    add_experiment_options(e.sub, e.args);
  }

  std::string process = "hmm", sim_out;
  double sim_p = 0.5, sim_q = 0.5, sim_sigma = 0.1, sim_lambda = 0.5;
  std::size_t sim_length = 1000;
  std::uint64_t sim_seed = 0;
  auto* simulate = app.add_subcommand("simulate", "write one simulated path, one value per line");
  simulate->add_option("--process", process, "hmm or ar1")->check(CLI::IsMember({"hmm", "ar1"}));
  simulate->add_option("--p", sim_p, "HMM P(0 -> 1)");
  simulate->add_option("--q", sim_q, "HMM P(1 -> 0)");
  simulate->add_option("--sigma", sim_sigma, "HMM emission noise");
  simulate->add_option("--lambda", sim_lambda, "AR(1) coefficient");
  simulate->add_option("--length", sim_length, "path length");
  simulate->add_option("--seed", sim_seed, "seed");
  simulate->add_option("--out", sim_out, "output file (default: stdout)");

  std::string profile_spec;
  std::size_t max_lag = 20;
  auto* mixing = app.add_subcommand("mixing", "tabulate beta(r) for a mixing profile");
  mixing->add_option("--profile", profile_spec, "two_state:p,q | ar1:lambda | geometric:c,rho | "
                                                "polynomial:b | constant:v | table:path")
      ->required();
  mixing->add_option("--max-lag", max_lag, "largest lag r");

  std::string bound_profile;
  std::size_t n_cal = 0, n_test = 0, vc_dim = 1;
  double delta_cal = 0.01, delta_test = 0.01, gamma = 0.0;
  std::optional<double> variance_alpha;
  auto* bounds = app.add_subcommand("bounds", "correction factors for one configuration");
  bounds->add_option("--profile", bound_profile, "mixing profile spec (see `mixing`)")->required();
  bounds->add_option("--n-cal", n_cal, "calibration size")->required();
  bounds->add_option("--n-test", n_test, "test size (adds the test-side factor)");
  bounds->add_option("--delta-cal", delta_cal, "calibration confidence");
  bounds->add_option("--delta-test", delta_test, "test confidence");
  bounds->add_option("--variance-alpha", variance_alpha, "use the alpha(1 - alpha) variance proxy");
  bounds->add_option("--gamma", gamma, "set-probability floor; switches to the conditional bounds");
  bounds->add_option("--vc-dim", vc_dim, "VC dimension of the set family");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? exit_ok : exit_config;
  }

  try {
    for (auto& e : entries)
      if (e.sub->parsed()) return run_report(e.kind, e.args);

    if (simulate->parsed()) {
      mixcp::TimeSeries path = process == "hmm"
                                   ? mixcp::simulate_two_state_hmm({sim_p, sim_q, sim_sigma, sim_length, sim_seed})
                                   : mixcp::simulate_ar1({sim_lambda, sim_length, sim_seed});
      std::ostringstream s;
      mixcp::write_path(s, path);
      emit(sim_out, s.str());
      return exit_ok;
    }

    if (mixing->parsed()) {
      const auto prof = mixcp::parse_profile_spec(profile_spec);
      std::cout << "# profile=" << prof.description() << "\n# provenance=" << mixcp::to_string(prof.provenance())
                << "\nr,beta\n";
      for (std::size_t r = 1; r <= max_lag; ++r) std::cout << r << ',' << mixcp::fmt_exact(prof(r)) << '\n';
      return exit_ok;
    }

    if (bounds->parsed()) {
      const auto prof = mixcp::parse_profile_spec(bound_profile);
      auto print = [](const char* name, const mixcp::BoundResult& b) {
        std::cout << name << ',' << mixcp::fmt_exact(b.eps) << ',' << b.plan.a << ',' << b.plan.m << ','
                  << b.plan.slack << '\n';
      };
      std::cout << "# profile=" << prof.description() << "\nbound,eps,a,m,slack\n";
      try {
        if (gamma > 0.0) {
          print("eps_cal_conditional", mixcp::eps_cal_conditional(n_cal, delta_cal, prof, gamma, vc_dim));
          if (n_test > 0)
            print("eps_test_conditional",
                  mixcp::eps_test_conditional(n_test, n_cal, delta_test, prof, gamma, vc_dim));
        } else {
          print("eps_cal", mixcp::eps_cal_beta(n_cal, delta_cal, prof, variance_alpha));
          if (n_test > 0) print("eps_test", mixcp::eps_test_beta(n_test, n_cal, delta_test, prof, variance_alpha));
          std::cout << "eps_train," << mixcp::fmt_exact(mixcp::eps_train(n_cal + 1, prof)) << ",,,\n";
        }
      } catch (const mixcp::Error& e) {
        if (e.code() != mixcp::Errc::no_feasible_plan) throw;
        std::cerr << e.what() << '\n';
        return exit_infeasible;
      }
      return exit_ok;
    }
  } catch (const mixcp::Error& e) {
    std::cerr << e.what() << '\n';
    switch (e.code()) {
      case mixcp::Errc::config_error:
      case mixcp::Errc::bad_parameter:
      case mixcp::Errc::non_stationary_lambda:
        return exit_config;
      case mixcp::Errc::no_feasible_plan:
        return exit_infeasible;
      default:
        return exit_other;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return exit_other;
  }
  return exit_other;
}
