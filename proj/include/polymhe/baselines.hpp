#pragma once

#include <functional>
#include <memory>
#include <string>

#include "polymhe/mhe.hpp"
#include "polymhe/model.hpp"

namespace polymhe {

struct KalmanState {
  Vector x_hat;
  Matrix P;
  Matrix Q;
  Matrix R;
};

struct KalmanStepResult {
  KalmanState state;
  Vector innovation;
  bool regularized = false;  // innovation covariance needed a 1e-12 ridge
};

// Predict with (A, Q), then measurement update with Joseph-form covariance.
KalmanStepResult kf_step(const KalmanState& state, const Matrix& A,
                         const Matrix& C, const Vector& y);

// EKF step: nonlinear predict through f, covariance through the Jacobian at
// the current estimate, then the same linear measurement update.
KalmanStepResult ekf_step(const KalmanState& state,
                          const std::function<Vector(const Vector&)>& f,
                          const std::function<Matrix(const Vector&)>& jacobian,
                          const Matrix& C, const Vector& y);

// Streaming estimator interface used by the benchmark harness. Every
// implementation consumes the same measurement sequence of a trial.
class StateEstimator {
 public:
  virtual ~StateEstimator() = default;
  // consume y_k, return x_hat_{k|k}
  virtual Vector update(const Vector& y) = 0;
  virtual std::string name() const = 0;
};

// Moving horizon estimation with a static prior weight L*I and a fixed
// nominal model; stand-in for the robust-MHE baselines of the literature,
// labeled `mhe-fixed-prior` in all outputs.
class FixedPriorMhe : public StateEstimator {
 public:
  FixedPriorMhe(Matrix A, Matrix C, Vector x0_prior, double weight,
                StageCostWeights weights, int horizon, QpOptions qp = {});
  Vector update(const Vector& y) override;
  std::string name() const override { return "mhe-fixed-prior"; }

 private:
  Matrix A_, C_;
  StageCostWeights weights_;
  int horizon_;
  QpOptions qp_;
  ArrivalCostState arrival_;
  std::deque<Vector> measurements_;
  std::optional<std::vector<Vector>> last_states_;
};

// Growing-window estimator with a caller-supplied model path (true blended
// matrices, or a per-step relinearized model). Window grows from startup and
// is capped for tractability; past the cap it behaves like a fixed-prior MHE.
class FullInformationEstimator : public StateEstimator {
 public:
  using ModelCallback =
      std::function<void(int k, const Vector& x_ref, Matrix* A, Vector* c)>;

  FullInformationEstimator(Matrix C, Vector x0_prior, double lambda0,
                           StageCostWeights weights, ModelCallback dynamics,
                           int window_cap = 200, QpOptions qp = {});
  Vector update(const Vector& y) override;
  std::string name() const override { return "fie"; }

 private:
  Matrix C_;
  StageCostWeights weights_;
  ModelCallback dynamics_;
  int window_cap_;
  QpOptions qp_;
  ArrivalCostState arrival_;
  std::vector<Vector> measurements_;
  std::vector<Vector> ref_states_;  // linearization trajectory
  int step_ = 0;
};

}  // namespace polymhe
