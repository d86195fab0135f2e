#include "polymhe/model.hpp"

#include <cmath>

namespace polymhe {

SimplexWeights::SimplexWeights(Vector alpha) : alpha_(std::move(alpha)) {
  if (alpha_.size() < 1) {
    throw std::invalid_argument("SimplexWeights: empty vector");
  }
  const double sum = alpha_.sum();
  if (std::abs(sum - 1.0) > 1e-9) {
    throw std::invalid_argument("SimplexWeights: sum " + std::to_string(sum) +
                                " not 1 within 1e-9");
  }
  if (alpha_.minCoeff() < -1e-12) {
    throw std::invalid_argument("SimplexWeights: negative entry " +
                                std::to_string(alpha_.minCoeff()));
  }
  alpha_ = alpha_.cwiseMax(0.0);
}

SimplexWeights SimplexWeights::uniform(int q) {
  return SimplexWeights(Vector::Constant(q, 1.0 / q));
}

SimplexWeights SimplexWeights::vertex(int q, int i) {
  Vector e = Vector::Zero(q);
  e(i) = 1.0;
  return SimplexWeights(std::move(e));
}

PolytopicModel::PolytopicModel(std::vector<Matrix> vertices_A,
                               std::vector<Matrix> vertices_C)
    : vertices_A_(std::move(vertices_A)), vertices_C_(std::move(vertices_C)) {
  if (vertices_A_.empty() || vertices_A_.size() != vertices_C_.size()) {
    throw std::invalid_argument("PolytopicModel: need q >= 1 matched vertices");
  }
  const auto n = vertices_A_[0].rows();
  const auto p = vertices_C_[0].rows();
  for (const auto& A : vertices_A_) {
    if (A.rows() != n || A.cols() != n) {
      throw std::invalid_argument("PolytopicModel: A vertices must be square with equal size");
    }
  }
  for (const auto& C : vertices_C_) {
    if (C.rows() != p || C.cols() != n) {
      throw std::invalid_argument("PolytopicModel: C vertices must share shape n_p x n_x");
    }
  }
}

BlendedModel blend(const PolytopicModel& model, const SimplexWeights& alpha) {
  if (alpha.size() != model.vertex_count()) {
    throw std::invalid_argument("blend: alpha length " +
                                std::to_string(alpha.size()) +
                                " != vertex count " +
                                std::to_string(model.vertex_count()));
  }
  Matrix A = Matrix::Zero(model.state_dim(), model.state_dim());
  Matrix C = Matrix::Zero(model.output_dim(), model.state_dim());
  for (int i = 0; i < model.vertex_count(); ++i) {
    A += alpha[i] * model.vertex_A(i);
    C += alpha[i] * model.vertex_C(i);
  }
  return {std::move(A), std::move(C)};
}

namespace {

Vector draw_noise(const CounterRng& rng, std::uint64_t trial, std::uint64_t step,
                  int dim, double std_dev, std::uint64_t channel_base) {
  Vector out = Vector::Zero(dim);
  if (std_dev > 0.0) {
    for (int c = 0; c < dim; ++c) {
      out(c) = std_dev * rng.normal(trial, step, channel_base + c);
    }
  }
  return out;
}

void check_finite(const Vector& x, int step) {
  if (!x.allFinite()) {
    throw DivergedTrajectory(step, "trajectory diverged at step " +
                                       std::to_string(step));
  }
}

}  // namespace

Trajectory simulate(const PolytopicModel& model,
                    const std::vector<SimplexWeights>& alpha_path,
                    const Vector& x0, const NoiseSpec& noise, int steps,
                    std::uint64_t trial) {
  if (steps < 1) throw std::invalid_argument("simulate: steps must be >= 1");
  if (alpha_path.size() != 1 && static_cast<int>(alpha_path.size()) != steps) {
    throw std::invalid_argument("simulate: alpha_path length must be 1 or steps");
  }
  if (x0.size() != model.state_dim()) {
    throw std::invalid_argument("simulate: x0 dimension mismatch");
  }

  const CounterRng rng(noise.seed);
  const int n = model.state_dim();
  const int p = model.output_dim();
  // channels: [0, n) process noise, [n, n+p) measurement noise
  Trajectory traj;
  traj.states.reserve(steps + 1);
  traj.outputs.reserve(steps + 1);
  traj.w.reserve(steps);
  traj.v.reserve(steps + 1);

  Vector x = x0;
  for (int k = 0; k <= steps; ++k) {
    check_finite(x, k);
    const SimplexWeights& a =
        alpha_path.size() == 1 ? alpha_path[0] : alpha_path[std::min<int>(k, steps - 1)];
    const BlendedModel m = blend(model, a);
    const Vector vk = draw_noise(rng, trial, k, p, noise.s_v, n);
    const Vector yk = m.C * x + vk;
    traj.states.push_back(x);
    traj.outputs.push_back(yk);
    traj.v.push_back(vk);
    if (k < steps) {
      const Vector wk = draw_noise(rng, trial, k, n, noise.s_w, 0);
      traj.w.push_back(wk);
      x = m.A * x + wk;
    }
  }
  return traj;
}

Vector nonlinear_dynamics(const Vector& x, double p1, double p2) {
  Vector out(2);
  out(0) = x(1);
  out(1) = p1 * x(0) + std::sin(p2 * x(1));
  return out;
}

Matrix nonlinear_jacobian(const Vector& x, double p1, double p2) {
  Matrix J(2, 2);
  J << 0.0, 1.0, p1, p2 * std::cos(p2 * x(1));
  return J;
}

Matrix nonlinear_output_matrix() {
  Matrix C(1, 2);
  C << 0.5, 0.5;
  return C;
}

std::vector<double> p1_schedule(double p1_init, int steps, int schedule_span) {
  const int span = schedule_span < 0 ? steps : schedule_span;
  std::vector<double> p1(steps + 1);
  p1[0] = p1_init;
  for (int k = 0; k < steps; ++k) {
    // the sweep law starts at k = 1 and freezes past three quarters of the span
    if (k >= 1 && 4 * k <= 3 * span) {
      p1[k + 1] = 0.01 * p1[k] * std::sin(5.0 * M_PI * k / span);
    } else {
      p1[k + 1] = p1[k];
    }
  }
  return p1;
}

Trajectory simulate_nonlinear(const Vector& x0, double p2,
                              const NoiseSpec& noise, int steps,
                              double p1_init, int schedule_span,
                              std::uint64_t trial) {
  if (steps < 1) throw std::invalid_argument("simulate_nonlinear: steps must be >= 1");
  if (x0.size() != 2) throw std::invalid_argument("simulate_nonlinear: x0 must be 2-dim");

  const CounterRng rng(noise.seed);
  const Matrix C = nonlinear_output_matrix();
  const std::vector<double> p1 = p1_schedule(p1_init, steps, schedule_span);

  Trajectory traj;
  traj.p1 = p1;
  Vector x = x0;
  for (int k = 0; k <= steps; ++k) {
    check_finite(x, k);
    const Vector vk = draw_noise(rng, trial, k, 1, noise.s_v, 2);
    traj.states.push_back(x);
    traj.outputs.push_back(C * x + vk);
    traj.v.push_back(vk);
    if (k < steps) {
      const Vector wk = draw_noise(rng, trial, k, 2, noise.s_w, 0);
      traj.w.push_back(wk);
      x = nonlinear_dynamics(x, p1[k], p2) + wk;
    }
  }
  return traj;
}

}  // namespace polymhe
