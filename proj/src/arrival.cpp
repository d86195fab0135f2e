#include "polymhe/arrival.hpp"

#include <cmath>
#include <stdexcept>

namespace polymhe {

namespace {
constexpr double kThetaMin = 1e-6;
constexpr double kEpsFloor = 1e-12;  // on |eps|^2
}  // namespace

ArrivalCostState ArrivalCostState::initial(Vector mean, double sigma,
                                           double trace_cap, double lambda0) {
  if (sigma <= 0 || trace_cap <= 0 || lambda0 <= 0) {
    throw std::invalid_argument("ArrivalCostState: sigma, c, lambda must be > 0");
  }
  ArrivalCostState s;
  s.P = lambda0 * Matrix::Identity(mean.size(), mean.size());
  s.prior_mean = std::move(mean);
  s.sigma = sigma;
  s.trace_cap = trace_cap;
  s.lambda0 = lambda0;
  return s;
}

ArrivalUpdateResult update_weight(const ArrivalCostState& state,
                                  const Vector& regressor,
                                  const Vector& innovation) {
  if (regressor.size() != state.dim()) {
    throw std::invalid_argument("update_weight: regressor dimension mismatch");
  }
  const Vector Pr = state.P * regressor;
  const double rPr = regressor.dot(Pr);
  const double denom = 1.0 + rPr;
  Matrix W = state.P - (Pr * Pr.transpose()) / denom;
  W = 0.5 * (W + W.transpose());

  ArrivalUpdateResult out;
  out.state = state;
  const double eps2 = innovation.squaredNorm();
  if (eps2 < kEpsFloor) {
    out.branch = ArrivalBranch::skipped;
    out.state.P = W;
  } else {
    out.gain = denom * state.sigma / eps2;
    out.theta = 1.0 - 1.0 / out.gain;
    if (out.theta > kThetaMin && W.trace() / out.theta <= state.trace_cap) {
      out.branch = ArrivalBranch::forgetting;
      out.state.P = W / out.theta;
    } else {
      out.branch = ArrivalBranch::contraction;
      out.state.P = W;
    }
  }
  out.state.P = 0.5 * (out.state.P + out.state.P.transpose());

  Eigen::SelfAdjointEigenSolver<Matrix> es(out.state.P, Eigen::EigenvaluesOnly);
  if (es.eigenvalues().minCoeff() <= 0.0) {
    throw std::runtime_error("update_weight: P lost positive definiteness");
  }
  return out;
}

ArrivalCostState update_prior_mean(const ArrivalCostState& state,
                                   const Vector& smoothed) {
  if (smoothed.size() != state.dim()) {
    throw std::invalid_argument("update_prior_mean: dimension mismatch");
  }
  ArrivalCostState out = state;
  out.prior_mean = smoothed;
  return out;
}

double prior_cost(const ArrivalCostState& state, const Vector& candidate) {
  if (candidate.size() != state.dim()) {
    throw std::invalid_argument("prior_cost: dimension mismatch");
  }
  const Vector d = candidate - state.prior_mean;
  return d.dot(state.P.ldlt().solve(d));
}

}  // namespace polymhe
