#pragma once

#include <Eigen/Dense>

#include "polymhe/model.hpp"

namespace polymhe {

// Which branch the prior-weight recursion took.
enum class ArrivalBranch { forgetting, contraction, skipped };

// Adaptive arrival-cost parameters: prior weight P (not its inverse),
// prior mean, and the update hyper-parameters.
struct ArrivalCostState {
  Matrix P;
  Vector prior_mean;
  double sigma = 1e-4;     // innovation scale in the gain
  double trace_cap = 5.0;  // c: trace bound for the forgetting branch
  double lambda0 = 10.0;   // initial scale, P_0 = lambda0 * I

  static ArrivalCostState initial(Vector mean, double sigma, double trace_cap,
                                  double lambda0);
  int dim() const { return static_cast<int>(prior_mean.size()); }
};

struct ArrivalUpdateResult {
  ArrivalCostState state;
  ArrivalBranch branch = ArrivalBranch::contraction;
  double theta = 0.0;
  double gain = 0.0;  // N in the recursion
};

// Prior-weight recursion:
//   N     = (1 + r'Pr) sigma / |eps|^2
//   theta = 1 - 1/N
//   W     = (I - P r r' / (1 + r'Pr)) P
//   P+    = W/theta   if theta > theta_min and tr(W)/theta <= c
//         = W         otherwise
// |eps|^2 below eps_floor skips the gain computation and takes the W branch.
ArrivalUpdateResult update_weight(const ArrivalCostState& state,
                                  const Vector& regressor,
                                  const Vector& innovation);

// Smoothed-estimate prior update: mean <- smoothed, P unchanged.
ArrivalCostState update_prior_mean(const ArrivalCostState& state,
                                   const Vector& smoothed);

// (candidate - mean)' P^{-1} (candidate - mean)
double prior_cost(const ArrivalCostState& state, const Vector& candidate);

}  // namespace polymhe
