#pragma once

#include <Eigen/Dense>
#include <stdexcept>
#include <string>
#include <vector>

#include "polymhe/rng.hpp"

namespace polymhe {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

// Thrown when a simulated trajectory leaves the finite range.
class DivergedTrajectory : public std::runtime_error {
 public:
  DivergedTrajectory(int step, const std::string& what)
      : std::runtime_error(what), step_(step) {}
  int step() const { return step_; }

 private:
  int step_;
};

// Mixing vector on the unit simplex: sum == 1 within 1e-9, entries >= -1e-12.
// Tiny negative entries are clamped to zero on construction.
class SimplexWeights {
 public:
  explicit SimplexWeights(Vector alpha);

  static SimplexWeights uniform(int q);
  static SimplexWeights vertex(int q, int i);

  const Vector& coeffs() const { return alpha_; }
  double operator[](int i) const { return alpha_(i); }
  int size() const { return static_cast<int>(alpha_.size()); }

 private:
  Vector alpha_;
};

// Convex family of linear models: vertices {A_i, C_i}, i = 1..q.
// Any simplex combination of the vertices is an admissible model.
class PolytopicModel {
 public:
  PolytopicModel(std::vector<Matrix> vertices_A, std::vector<Matrix> vertices_C);

  int vertex_count() const { return static_cast<int>(vertices_A_.size()); }
  int state_dim() const { return static_cast<int>(vertices_A_[0].rows()); }
  int output_dim() const { return static_cast<int>(vertices_C_[0].rows()); }

  const Matrix& vertex_A(int i) const { return vertices_A_.at(i); }
  const Matrix& vertex_C(int i) const { return vertices_C_.at(i); }
  const std::vector<Matrix>& vertices_A() const { return vertices_A_; }
  const std::vector<Matrix>& vertices_C() const { return vertices_C_; }

 private:
  std::vector<Matrix> vertices_A_;
  std::vector<Matrix> vertices_C_;
};

struct BlendedModel {
  Matrix A;
  Matrix C;
};

// A(alpha) = sum_i alpha_i A_i,  C(alpha) = sum_i alpha_i C_i.
BlendedModel blend(const PolytopicModel& model, const SimplexWeights& alpha);

struct NoiseSpec {
  double s_w = 0.0;       // process noise std per state channel
  double s_v = 0.0;       // measurement noise std per output channel
  std::uint64_t seed = 0;
};

struct Trajectory {
  std::vector<Vector> states;   // x_0..x_T
  std::vector<Vector> outputs;  // y_0..y_T
  std::vector<Vector> w;        // w_0..w_{T-1} as drawn
  std::vector<Vector> v;        // v_0..v_T as drawn
  std::vector<double> p1;       // parameter path (nonlinear plant only)

  int length() const { return static_cast<int>(states.size()) - 1; }
};

// Linear polytopic plant, x_{k+1} = A(alpha_k) x_k + w_k, y_k = C(alpha_k) x_k + v_k.
// alpha_path holds either one constant weight vector or one per step.
Trajectory simulate(const PolytopicModel& model,
                    const std::vector<SimplexWeights>& alpha_path,
                    const Vector& x0, const NoiseSpec& noise, int steps,
                    std::uint64_t trial = 0);

// Time-varying nonlinear benchmark plant:
//   x_{k+1} = [x_2; p_1(k) x_1 + sin(p_2 x_2)] + w_k,   y = [0.5 0.5] x + v.
// p_1 follows a multiplicative sine sweep over the first three quarters of
// schedule_span samples and is frozen afterwards; schedule_span < 0 means
// "use the run length".
Trajectory simulate_nonlinear(const Vector& x0, double p2,
                              const NoiseSpec& noise, int steps,
                              double p1_init = 1.0, int schedule_span = -1,
                              std::uint64_t trial = 0);

Vector nonlinear_dynamics(const Vector& x, double p1, double p2);
Matrix nonlinear_jacobian(const Vector& x, double p1, double p2);
Matrix nonlinear_output_matrix();
std::vector<double> p1_schedule(double p1_init, int steps, int schedule_span);

}  // namespace polymhe
