#include <CLI11.hpp>
#include <iostream>
#include <sstream>

#include "polymhe/harness.hpp"

namespace {

std::map<std::string, std::string> parse_overrides(
    const std::vector<std::string>& kvs) {
  std::map<std::string, std::string> out;
  for (const auto& kv : kvs) {
    const auto pos = kv.find('=');
    if (pos == std::string::npos) {
      throw CLI::ValidationError("--override expects key=value, got '" + kv + "'");
    }
    out[kv.substr(0, pos)] = kv.substr(pos + 1);
  }
  return out;
}

template <typename T>
std::vector<T> parse_list(const std::string& csv) {
  std::vector<T> out;
  std::stringstream ss(csv);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    if constexpr (std::is_same_v<T, int>) {
      out.push_back(std::stoi(item));
    } else {
      out.push_back(std::stod(item));
    }
  }
  return out;
}

void print_table(const polymhe::MseTable& t) {
  std::cout << "estimator            ";
  for (int c = 0; c < t.state_dim; ++c) std::cout << "  mse_x" << c << "        ";
  std::cout << "used diverged\n";
  for (const auto& e : t.entries) {
    std::printf("%-20s ", e.estimator.c_str());
    for (int c = 0; c < t.state_dim; ++c) std::printf(" %12.6g  ", e.mse(c));
    std::printf("%4d %8d\n", e.trials_used, e.diverged);
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"polymhe: adaptive polytopic moving-horizon estimation benchmarks"};
  app.require_subcommand(1);

  polymhe::RunConfig cfg;
  std::string estimators_csv, l_csv = "1,2,5,10,20", n_csv = "4,8,12";
  std::string noise_csv = "0.0,0.1,0.5,1.0";
  std::vector<std::string> override_kvs;
  std::uint64_t seed = 0;
  bool seed_set = false;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--scenario", cfg.scenario, "builtin name (example1, example2) or file path")
        ->required();
    sub->add_option("--trials", cfg.trials, "Monte-Carlo trial count");
    sub->add_option("--seed", seed, "base RNG seed")->each([&](const std::string&) {
      seed_set = true;
    });
    sub->add_option("--out", cfg.out_dir, "output directory for CSV files");
    sub->add_option("--override", override_kvs, "scenario override key=value")
        ->take_all();
    sub->add_option("--jobs", cfg.jobs, "worker thread count")->check(CLI::PositiveNumber);
  };

  CLI::App* run = app.add_subcommand("run", "Monte-Carlo estimator comparison");
  add_common(run);
  run->add_option("--estimators", estimators_csv,
                  "comma-separated estimator names (default: all available)");
  run->add_option("--max-diverged", cfg.max_diverged,
                  "diverged-trial quota before a nonzero exit");

  CLI::App* sweep = app.add_subcommand("sweep", "error surface over l and N");
  add_common(sweep);
  sweep->add_option("--l", l_csv, "comma-separated iteration counts");
  sweep->add_option("--N", n_csv, "comma-separated horizons");

  CLI::App* trace = app.add_subcommand("trace", "mixing-vector time series per noise level");
  add_common(trace);
  trace->add_option("--noise", noise_csv, "comma-separated process-noise levels");

  CLI::App* validate = app.add_subcommand("validate", "run the scenario invariant suite");
  add_common(validate);

  CLI11_PARSE(app, argc, argv);

  try {
    cfg.overrides = parse_overrides(override_kvs);
    if (seed_set) cfg.seed = seed;

    if (run->parsed()) {
      if (!estimators_csv.empty()) {
        std::stringstream ss(estimators_csv);
        std::string name;
        while (std::getline(ss, name, ',')) {
          if (!name.empty()) cfg.estimators.push_back(name);
        }
      }
      const polymhe::MseTable table = polymhe::run_trials(cfg);
      print_table(table);
      int worst = 0;
      for (const auto& e : table.entries) worst = std::max(worst, e.diverged);
      if (worst > cfg.max_diverged) {
        std::cerr << "diverged-trial quota breached (" << worst << " > "
                  << cfg.max_diverged << ")\n";
        return 2;
      }
    } else if (sweep->parsed()) {
      const auto result =
          polymhe::sweep_l_N(cfg, parse_list<int>(l_csv), parse_list<int>(n_csv));
      std::cout << polymhe::to_csv(result);
    } else if (trace->parsed()) {
      const auto result = polymhe::trace_alpha(cfg, parse_list<double>(noise_csv));
      std::cout << "wrote " << result.rows.size() << " trace rows\n";
      if (cfg.out_dir.empty()) std::cout << polymhe::to_csv(result);
    } else if (validate->parsed()) {
      const int failures = polymhe::validate_scenario(cfg, std::cout);
      if (failures > 0) {
        std::cerr << failures << " validation check(s) failed\n";
        return 1;
      }
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
