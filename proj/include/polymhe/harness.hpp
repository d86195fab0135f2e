#pragma once

#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "polymhe/baselines.hpp"
#include "polymhe/scenarios.hpp"

namespace polymhe {

struct RunConfig {
  std::string scenario;  // builtin name or file path
  std::vector<std::string> estimators;
  int trials = -1;  // -1: scenario default
  std::optional<std::uint64_t> seed;
  std::map<std::string, std::string> overrides;
  std::string out_dir;  // empty: no files written
  int jobs = 1;
  int max_diverged = 0;
};

struct MseEntry {
  std::string estimator;
  Vector mse;   // per state component
  Vector ci95;  // normal-approximation half widths
  int trials_used = 0;
  int diverged = 0;
};

struct MseTable {
  std::vector<MseEntry> entries;
  int state_dim = 0;
  int trials = 0;
};

struct SweepRow {
  int l = 0;
  int N = 0;
  Vector mse;
};

struct SweepResult {
  std::vector<SweepRow> rows;
  int state_dim = 0;
};

struct TraceRow {
  double s_w = 0.0;
  int k = 0;
  Vector alpha;
  double p1_hat = 0.0;
  double p2_hat = 0.0;
};

struct TraceResult {
  std::vector<TraceRow> rows;
  int q = 0;
  bool has_params = false;  // nonlinear scenario: implied (p1, p2) present
};

// CSV codecs; emit/parse round-trip exactly (%.17g formatting).
std::string to_csv(const MseTable& t);
MseTable mse_table_from_csv(const std::string& text);
std::string to_csv(const SweepResult& r);
SweepResult sweep_from_csv(const std::string& text);
std::string to_csv(const TraceResult& t);
TraceResult trace_from_csv(const std::string& text);

// Typed scenario overrides (N, l_max, epsilon_stop, s_w, s_v, T, trials, ...).
Scenario apply_overrides(Scenario s, const std::map<std::string, std::string>& kv);

// Estimator registry.
std::vector<std::string> available_estimators(const Scenario& s);
std::unique_ptr<StateEstimator> make_estimator(const std::string& name,
                                               const Scenario& s);

// The proposed estimator, wrapped for streaming use.
class AdaptiveMheEstimator : public StateEstimator {
 public:
  explicit AdaptiveMheEstimator(const Scenario& s);
  Vector update(const Vector& y) override;
  std::string name() const override { return "mhe-adaptive"; }
  const StepResult& last() const { return last_; }

 private:
  PolytopicModel model_;
  StageCostWeights weights_;
  MheConfig config_;
  WindowBuffer buffer_;
  StepResult last_;
};

// Paired-noise Monte-Carlo comparison; writes mse_table.csv (and a
// diagnostics log for the first trial) when out_dir is set.
MseTable run_trials(const RunConfig& cfg);

// Error surface over iteration counts and horizons; writes sweep_l_N.csv.
SweepResult sweep_l_N(const RunConfig& cfg, const std::vector<int>& l_values,
                      const std::vector<int>& N_values);

// Mixing-vector (and implied-parameter) time series per noise level;
// writes alpha_trace.csv.
TraceResult trace_alpha(const RunConfig& cfg,
                        const std::vector<double>& noise_levels);

// Scenario invariant suite; returns the number of failed checks.
int validate_scenario(const RunConfig& cfg, std::ostream& log);

}  // namespace polymhe
