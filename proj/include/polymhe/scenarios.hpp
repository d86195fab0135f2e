#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>

#include "polymhe/mhe.hpp"
#include "polymhe/model.hpp"

namespace polymhe {

enum class PlantKind { linear_polytopic, nonlinear_sine };

// Everything needed to reproduce one benchmark: plant, priors, noise,
// stage-cost weights and estimator configuration.
struct Scenario {
  std::string name;
  PlantKind kind = PlantKind::linear_polytopic;
  PolytopicModel model{{Matrix::Identity(1, 1)}, {Matrix::Identity(1, 1)}};

  Vector alpha_true;  // linear plant mixing vector
  double p1_init = 1.0;  // nonlinear plant parameters
  double p2 = 0.05;
  int p1_schedule_span = -1;  // -1: use run_length

  Vector x0_true;
  Vector x0_prior;
  Vector alpha_prior;
  NoiseSpec noise;
  StageCostWeights weights;
  MheConfig mhe;

  double sigma_x = 1e-4, c_x = 5.0, lambda_x = 10.0;
  double sigma_alpha = 1e-4, c_alpha = 5.0, lambda_alpha = 10.0;

  int run_length = 150;
  int trials = 100;
  double fixed_prior_kappa = 0.89;  // mhe-fixed-prior weight is kappa^N
  int fie_window_cap = 200;

  // nominal mixing vector used by the fixed-model baselines
  Vector alpha_nominal;

  WindowBuffer make_buffer() const;
  Trajectory simulate_truth(std::uint64_t trial) const;
};

// The two published benchmarks with all constants frozen.
Scenario example1();
Scenario example2();

// Randomized scenario for property tests: vertices scaled so every simplex
// blend is stable with margin, observable at the vertices and the true mix.
Scenario random_scenario(std::uint64_t seed, int q, int n_x,
                         double stability_margin);

std::string serialize_scenario(const Scenario& s);
Scenario parse_scenario(std::istream& in);
Scenario parse_scenario_string(const std::string& text);
Scenario load_scenario(const std::string& name_or_path);
void save_scenario(const Scenario& s, const std::string& path);

// FNV-1a over the canonical serialization; guards the published constants.
std::uint64_t scenario_checksum(const Scenario& s);

}  // namespace polymhe
