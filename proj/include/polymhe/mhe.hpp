#pragma once

#include <deque>
#include <optional>
#include <vector>

#include "polymhe/arrival.hpp"
#include "polymhe/model.hpp"
#include "polymhe/solver.hpp"

namespace polymhe {

// Thrown when a window subproblem reports infeasibility; carries the
// plain-text dump of the offending QP.
class WindowInfeasible : public std::runtime_error {
 public:
  WindowInfeasible(const std::string& what, std::string qp_dump)
      : std::runtime_error(what), qp_dump_(std::move(qp_dump)) {}
  const std::string& qp_dump() const { return qp_dump_; }

 private:
  std::string qp_dump_;
};

// Inverse-covariance stage-cost weights, l(w, v) = w'Qinv w + v'Rinv v.
// Dinv prices the model-mismatch residual of the mixing problem and
// Qalpha_inv the random-walk increments of the per-step mixing mode.
struct StageCostWeights {
  Matrix Qinv;
  Matrix Rinv;
  Matrix Qalpha_inv;
  Matrix Dinv;

  static StageCostWeights diagonal(const Vector& qinv, const Vector& rinv,
                                   int q, double qalpha_scale = 1e6);
};

// A box; empty vectors mean unbounded.
struct BoxSet {
  Vector lower;
  Vector upper;
  bool trivial() const;
};

struct WindowBounds {
  BoxSet state;  // X
  BoxSet w;      // W
  BoxSet v;      // V
  bool all_trivial() const { return state.trivial() && w.trivial() && v.trivial(); }
};

enum class StateQpForm { automatic, condensed, full };

struct MheConfig {
  int horizon = 8;           // N
  double epsilon_stop = 1e-6;
  int l_max = 30;
  double epsilon_bound = 0.5;  // epsilon in the iteration bound
  bool use_bound_stop = true;
  bool per_step_alpha = false;
  StateQpForm qp_form = StateQpForm::automatic;
  WindowBounds bounds;
  QpOptions qp;
  double psi1_floor = 1e-15;   // below this, the window is already exact
  double gamma_floor = 1e-12;  // floor on Gamma_min in the bound
};

// Last N+1 measurements plus the smoothed information carried across
// sampling instants (previous window solution and prior states).
struct StepEstimate {
  std::vector<Vector> x_hat;  // window states, oldest first
  Vector alpha_hat;
  std::vector<Vector> w_hat;
  std::vector<Vector> v_hat;
  std::vector<Vector> d_hat;
  std::vector<Vector> w_alpha_hat;
};

struct WindowBuffer {
  int horizon = 8;
  std::deque<Vector> measurements;
  ArrivalCostState arrival_x;
  ArrivalCostState arrival_alpha;
  std::optional<StepEstimate> previous;

  static WindowBuffer initial(int horizon, const Vector& x0_prior,
                              const Vector& alpha0_prior, double sigma_x,
                              double c_x, double lambda_x, double sigma_a,
                              double c_a, double lambda_a);
  bool warm() const { return static_cast<int>(measurements.size()) == horizon + 1; }
};

// Costs and normalized costs across the dual iteration at one sample.
struct DualIterationReport {
  std::vector<double> costs_x;      // Psi_x^1..l
  std::vector<double> costs_alpha;  // Psi_alpha^1..l
  std::vector<double> g;            // g(k,i) = Psi_x^i / Psi_x^1
  std::vector<double> gamma_x;      // Gamma_{k-N}(x_hat^i)
  int l_used = 0;
  int l_bound = 0;
};

struct WindowSolution {
  StepEstimate estimate;  // x_hat, w_hat, v_hat filled
  double cost = 0.0;
  double gamma = 0.0;  // arrival-cost part
};

struct AlphaSolution {
  Vector alpha;
  std::vector<Vector> w_alpha;
  std::vector<Vector> d_hat;
  std::vector<Vector> v_hat;
  double cost = 0.0;
  bool flat = false;  // degenerate regressors, prior returned
};

// State subproblem: minimize Gamma + sum l(w, v) over the window with the
// mixing vector held fixed. Dynamics are condensed into (x_{k-N}, w) unless
// state/output boxes require the explicit form.
WindowSolution solve_state_window(const WindowBuffer& buffer,
                                  const PolytopicModel& model,
                                  const SimplexWeights& alpha_fixed,
                                  const StageCostWeights& weights,
                                  const WindowBounds& bounds = {},
                                  const QpOptions& qp_opts = {},
                                  StateQpForm form = StateQpForm::automatic);

// General linear-time-varying window solve used by the state subproblem and
// by the growing-window baselines: x_{j+1} = A_j x_j + c_j + w_j,
// y_j = C_j x_j + v_j.
WindowSolution solve_linear_window(const std::vector<Matrix>& A_path,
                                   const std::vector<Matrix>& C_path,
                                   const std::vector<Vector>& c_path,
                                   const std::vector<Vector>& measurements,
                                   const ArrivalCostState& arrival,
                                   const StageCostWeights& weights,
                                   const WindowBounds& bounds = {},
                                   const QpOptions& qp_opts = {},
                                   StateQpForm form = StateQpForm::automatic);

// Mixing subproblem: minimize Lambda + sum l(d, v[, w_alpha]) over simplex
// weights with the state trajectory held fixed.
AlphaSolution solve_alpha_window(const WindowBuffer& buffer,
                                 const PolytopicModel& model,
                                 const std::vector<Vector>& x_fixed,
                                 const StageCostWeights& weights,
                                 bool per_step_alpha = false,
                                 const QpOptions& qp_opts = {});

// Iteration bound: ceil(log2((epsilon psi1 - gamma_l)/gamma_min + 1)) + 1,
// clamped to >= 1; the log argument is clamped to 1 when already converged.
int compute_iteration_bound(double psi1, double gamma_l, double gamma_min,
                            double epsilon);

struct DualResult {
  StepEstimate estimate;
  DualIterationReport report;
};

// Alternate the state and mixing subproblems at one sampling instant,
// enforcing non-increasing cost sequences and the stopping rules.
DualResult dual_iterate(const WindowBuffer& buffer, const PolytopicModel& model,
                        const SimplexWeights& init_alpha,
                        const StageCostWeights& weights, const MheConfig& config);

struct StepDiagnostics {
  double trace_Px = 0.0;
  double trace_Palpha = 0.0;
  double theta_x = 0.0;
  double theta_alpha = 0.0;
  ArrivalBranch branch_x = ArrivalBranch::skipped;
  ArrivalBranch branch_alpha = ArrivalBranch::skipped;
  bool arrival_updated = false;
};

struct StepResult {
  StepEstimate estimate;
  DualIterationReport report;
  WindowBuffer buffer;
  StepDiagnostics diagnostics;
};

// Full per-sample pipeline: update both arrival costs from the previous
// window's smoothed estimates, slide the window, append the new measurement
// and run the dual iteration.
StepResult step(const WindowBuffer& buffer, const PolytopicModel& model,
                const StageCostWeights& weights, const MheConfig& config,
                const Vector& y_new);

}  // namespace polymhe
