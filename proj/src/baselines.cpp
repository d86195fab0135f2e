#include "polymhe/baselines.hpp"

#include <cmath>

namespace polymhe {

KalmanStepResult kf_step(const KalmanState& state, const Matrix& A,
                         const Matrix& C, const Vector& y) {
  const int n = static_cast<int>(state.x_hat.size());
  KalmanStepResult out;
  const Vector x_pred = A * state.x_hat;
  Matrix P_pred = A * state.P * A.transpose() + state.Q;
  P_pred = 0.5 * (P_pred + P_pred.transpose());

  Matrix S = C * P_pred * C.transpose() + state.R;
  Eigen::LDLT<Matrix> ldlt(S);
  if (ldlt.info() != Eigen::Success || !ldlt.isPositive() ||
      ldlt.vectorD().minCoeff() <= 0.0) {
    S += 1e-12 * Matrix::Identity(S.rows(), S.cols());
    ldlt.compute(S);
    out.regularized = true;
  }
  const Matrix K = ldlt.solve(C * P_pred).transpose();
  out.innovation = y - C * x_pred;

  out.state = state;
  out.state.x_hat = x_pred + K * out.innovation;
  const Matrix IKC = Matrix::Identity(n, n) - K * C;
  Matrix P = IKC * P_pred * IKC.transpose() + K * state.R * K.transpose();
  out.state.P = 0.5 * (P + P.transpose());
  return out;
}

KalmanStepResult ekf_step(const KalmanState& state,
                          const std::function<Vector(const Vector&)>& f,
                          const std::function<Matrix(const Vector&)>& jacobian,
                          const Matrix& C, const Vector& y) {
  const int n = static_cast<int>(state.x_hat.size());
  KalmanStepResult out;
  const Matrix J = jacobian(state.x_hat);
  const Vector x_pred = f(state.x_hat);
  Matrix P_pred = J * state.P * J.transpose() + state.Q;
  P_pred = 0.5 * (P_pred + P_pred.transpose());

  Matrix S = C * P_pred * C.transpose() + state.R;
  Eigen::LDLT<Matrix> ldlt(S);
  if (ldlt.info() != Eigen::Success || !ldlt.isPositive() ||
      ldlt.vectorD().minCoeff() <= 0.0) {
    S += 1e-12 * Matrix::Identity(S.rows(), S.cols());
    ldlt.compute(S);
    out.regularized = true;
  }
  const Matrix K = ldlt.solve(C * P_pred).transpose();
  out.innovation = y - C * x_pred;

  out.state = state;
  out.state.x_hat = x_pred + K * out.innovation;
  const Matrix IKC = Matrix::Identity(n, n) - K * C;
  Matrix P = IKC * P_pred * IKC.transpose() + K * state.R * K.transpose();
  out.state.P = 0.5 * (P + P.transpose());
  return out;
}

FixedPriorMhe::FixedPriorMhe(Matrix A, Matrix C, Vector x0_prior, double weight,
                             StageCostWeights weights, int horizon, QpOptions qp)
    : A_(std::move(A)),
      C_(std::move(C)),
      weights_(std::move(weights)),
      horizon_(horizon),
      qp_(qp) {
  if (weight <= 0.0) throw std::invalid_argument("FixedPriorMhe: weight must be > 0");
  // Gamma(chi) = weight * |chi - mean|^2  <=>  P = (1/weight) I, never updated
  arrival_ = ArrivalCostState::initial(std::move(x0_prior), 1.0, 1.0, 1.0 / weight);
}

Vector FixedPriorMhe::update(const Vector& y) {
  if (static_cast<int>(measurements_.size()) == horizon_ + 1) {
    // slide: move the prior mean to the previous window's smoothed estimate
    arrival_ = update_prior_mean(arrival_, (*last_states_)[1]);
    measurements_.pop_front();
  }
  measurements_.push_back(y);
  const int M = static_cast<int>(measurements_.size()) - 1;
  const std::vector<Matrix> A_path(M, A_);
  const std::vector<Matrix> C_path(M + 1, C_);
  const std::vector<Vector> ms(measurements_.begin(), measurements_.end());
  WindowSolution sol =
      solve_linear_window(A_path, C_path, {}, ms, arrival_, weights_, {}, qp_);
  last_states_ = sol.estimate.x_hat;
  return sol.estimate.x_hat.back();
}

FullInformationEstimator::FullInformationEstimator(
    Matrix C, Vector x0_prior, double lambda0, StageCostWeights weights,
    ModelCallback dynamics, int window_cap, QpOptions qp)
    : C_(std::move(C)),
      weights_(std::move(weights)),
      dynamics_(std::move(dynamics)),
      window_cap_(window_cap),
      qp_(qp) {
  arrival_ = ArrivalCostState::initial(std::move(x0_prior), 1.0, 1.0, lambda0);
}

Vector FullInformationEstimator::update(const Vector& y) {
  if (static_cast<int>(measurements_.size()) == window_cap_ + 1) {
    arrival_ = update_prior_mean(arrival_, ref_states_[1]);
    measurements_.erase(measurements_.begin());
    ref_states_.erase(ref_states_.begin());
  }
  measurements_.push_back(y);
  const int M = static_cast<int>(measurements_.size()) - 1;
  const int k0 = step_ - M;  // absolute index of the window start

  // linearization references: previous solution extended by one prediction
  if (ref_states_.empty()) {
    ref_states_.push_back(arrival_.prior_mean);
  } else {
    Matrix A;
    Vector c;
    dynamics_(step_ - 1, ref_states_.back(), &A, &c);
    ref_states_.push_back(A * ref_states_.back() + c);
  }

  std::vector<Matrix> A_path(M);
  std::vector<Vector> c_path(M);
  for (int j = 0; j < M; ++j) {
    dynamics_(k0 + j, ref_states_[j], &A_path[j], &c_path[j]);
  }
  const std::vector<Matrix> C_path(M + 1, C_);
  WindowSolution sol = solve_linear_window(A_path, C_path, c_path, measurements_,
                                           arrival_, weights_, {}, qp_);
  ref_states_ = sol.estimate.x_hat;
  ++step_;
  return sol.estimate.x_hat.back();
}

}  // namespace polymhe
