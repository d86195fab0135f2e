#include "polymhe/mhe.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace polymhe {

namespace {

constexpr double kAlphaRidge = 1e-10;

Matrix inverse_spd(const Matrix& P) {
  return P.ldlt().solve(Matrix::Identity(P.rows(), P.cols()));
}

void apply_box(Vector& lower, Vector& upper, const BoxSet& box, int offset, int dim) {
  if (box.lower.size()) lower.segment(offset, dim) = box.lower;
  if (box.upper.size()) upper.segment(offset, dim) = box.upper;
}

double quad(const Matrix& Winv, const Vector& r) { return r.dot(Winv * r); }

}  // namespace

StageCostWeights StageCostWeights::diagonal(const Vector& qinv, const Vector& rinv,
                                            int q, double qalpha_scale) {
  StageCostWeights w;
  w.Qinv = qinv.asDiagonal();
  w.Rinv = rinv.asDiagonal();
  w.Dinv = w.Qinv;
  w.Qalpha_inv = qalpha_scale * Matrix::Identity(q, q);
  return w;
}

bool BoxSet::trivial() const {
  const bool lo = lower.size() == 0 || (lower.array() == -std::numeric_limits<double>::infinity()).all();
  const bool hi = upper.size() == 0 || (upper.array() == std::numeric_limits<double>::infinity()).all();
  return lo && hi;
}

WindowBuffer WindowBuffer::initial(int horizon, const Vector& x0_prior,
                                   const Vector& alpha0_prior, double sigma_x,
                                   double c_x, double lambda_x, double sigma_a,
                                   double c_a, double lambda_a) {
  if (horizon < 1) throw std::invalid_argument("WindowBuffer: horizon must be >= 1");
  WindowBuffer b;
  b.horizon = horizon;
  b.arrival_x = ArrivalCostState::initial(x0_prior, sigma_x, c_x, lambda_x);
  b.arrival_alpha = ArrivalCostState::initial(alpha0_prior, sigma_a, c_a, lambda_a);
  return b;
}

WindowSolution solve_linear_window(const std::vector<Matrix>& A_path,
                                   const std::vector<Matrix>& C_path,
                                   const std::vector<Vector>& c_path,
                                   const std::vector<Vector>& measurements,
                                   const ArrivalCostState& arrival,
                                   const StageCostWeights& weights,
                                   const WindowBounds& bounds,
                                   const QpOptions& qp_opts, StateQpForm form) {
  const int M = static_cast<int>(measurements.size()) - 1;
  if (M < 0) throw std::invalid_argument("solve_linear_window: no measurements");
  if (static_cast<int>(A_path.size()) != M || static_cast<int>(C_path.size()) != M + 1) {
    throw std::invalid_argument("solve_linear_window: path lengths inconsistent");
  }
  const int n = static_cast<int>(arrival.dim());
  const int p = static_cast<int>(C_path[0].rows());
  const Matrix Pinv = inverse_spd(arrival.P);

  if (form == StateQpForm::automatic) {
    form = (bounds.state.trivial() && bounds.v.trivial()) ? StateQpForm::condensed
                                                          : StateQpForm::full;
  }

  QuadraticProgram qp;
  Vector z;
  if (form == StateQpForm::condensed) {
    const int nz = n * (M + 1);  // [x_0; w_0..w_{M-1}]
    Matrix Ht = Matrix::Zero(nz, nz);
    Vector bt = Vector::Zero(nz);
    Ht.topLeftCorner(n, n) = Pinv;
    bt.head(n) = Pinv * arrival.prior_mean;

    // Phi_j maps z to x_j; phi_j collects the affine drift
    Matrix Phi = Matrix::Zero(n, nz);
    Phi.leftCols(n).setIdentity();
    Vector phi = Vector::Zero(n);
    for (int j = 0; j <= M; ++j) {
      const Matrix CP = C_path[j] * Phi;
      const Vector target = measurements[j] - C_path[j] * phi;
      Ht.noalias() += CP.transpose() * weights.Rinv * CP;
      bt.noalias() += CP.transpose() * weights.Rinv * target;
      if (j < M) {
        Ht.block(n * (j + 1), n * (j + 1), n, n) += weights.Qinv;
        Matrix next = A_path[j] * Phi;
        next.middleCols(n * (j + 1), n) += Matrix::Identity(n, n);
        phi = A_path[j] * phi + (c_path.empty() ? Vector::Zero(n) : c_path[j]);
        Phi = std::move(next);
      }
    }
    qp.H = 2.0 * Ht;
    qp.f = -2.0 * bt;
    if (!bounds.w.trivial()) {
      qp.lower = Vector::Constant(nz, -std::numeric_limits<double>::infinity());
      qp.upper = Vector::Constant(nz, std::numeric_limits<double>::infinity());
      for (int j = 0; j < M; ++j) apply_box(qp.lower, qp.upper, bounds.w, n * (j + 1), n);
    }
    const QpSolution sol = solve(qp, qp_opts);
    if (sol.status == QpStatus::infeasible) {
      throw WindowInfeasible("state window infeasible", dump_qp(qp));
    }
    z = sol.z;
  } else {
    // explicit variables [x_0..x_M; w_0..w_{M-1}; v_0..v_M]
    const int nx = n * (M + 1), nw = n * M, nv = p * (M + 1);
    const int nz = nx + nw + nv;
    qp.H = Matrix::Zero(nz, nz);
    qp.f = Vector::Zero(nz);
    qp.H.topLeftCorner(n, n) = 2.0 * Pinv;
    qp.f.head(n) = -2.0 * Pinv * arrival.prior_mean;
    for (int j = 0; j < M; ++j) {
      qp.H.block(nx + n * j, nx + n * j, n, n) = 2.0 * weights.Qinv;
    }
    for (int j = 0; j <= M; ++j) {
      qp.H.block(nx + nw + p * j, nx + nw + p * j, p, p) = 2.0 * weights.Rinv;
    }
    qp.Aeq = Matrix::Zero(n * M + p * (M + 1), nz);
    qp.beq = Vector::Zero(n * M + p * (M + 1));
    for (int j = 0; j < M; ++j) {
      qp.Aeq.block(n * j, n * (j + 1), n, n) = Matrix::Identity(n, n);
      qp.Aeq.block(n * j, n * j, n, n) = -A_path[j];
      qp.Aeq.block(n * j, nx + n * j, n, n) = -Matrix::Identity(n, n);
      qp.beq.segment(n * j, n) = c_path.empty() ? Vector::Zero(n) : c_path[j];
    }
    for (int j = 0; j <= M; ++j) {
      const int row = n * M + p * j;
      qp.Aeq.block(row, n * j, p, n) = C_path[j];
      qp.Aeq.block(row, nx + nw + p * j, p, p) = Matrix::Identity(p, p);
      qp.beq.segment(row, p) = measurements[j];
    }
    if (!bounds.all_trivial()) {
      qp.lower = Vector::Constant(nz, -std::numeric_limits<double>::infinity());
      qp.upper = Vector::Constant(nz, std::numeric_limits<double>::infinity());
      for (int j = 0; j <= M; ++j) apply_box(qp.lower, qp.upper, bounds.state, n * j, n);
      for (int j = 0; j < M; ++j) apply_box(qp.lower, qp.upper, bounds.w, nx + n * j, n);
      for (int j = 0; j <= M; ++j) apply_box(qp.lower, qp.upper, bounds.v, nx + nw + p * j, p);
    }
    const QpSolution sol = solve(qp, qp_opts);
    if (sol.status == QpStatus::infeasible) {
      throw WindowInfeasible("state window infeasible", dump_qp(qp));
    }
    z = sol.z;
  }

  // reconstruct the trajectory and residuals from the decision variables
  WindowSolution out;
  out.estimate.x_hat.resize(M + 1);
  out.estimate.w_hat.resize(M);
  out.estimate.v_hat.resize(M + 1);
  if (form == StateQpForm::condensed) {
    Vector x = z.head(n);
    for (int j = 0; j <= M; ++j) {
      out.estimate.x_hat[j] = x;
      out.estimate.v_hat[j] = measurements[j] - C_path[j] * x;
      if (j < M) {
        const Vector w = z.segment(n * (j + 1), n);
        out.estimate.w_hat[j] = w;
        x = A_path[j] * x + (c_path.empty() ? Vector::Zero(n) : c_path[j]) + w;
      }
    }
  } else {
    const int nx = n * (M + 1), nw = n * M;
    for (int j = 0; j <= M; ++j) {
      out.estimate.x_hat[j] = z.segment(n * j, n);
      out.estimate.v_hat[j] = z.segment(nx + nw + p * j, p);
    }
    for (int j = 0; j < M; ++j) out.estimate.w_hat[j] = z.segment(nx + n * j, n);
  }
  out.gamma = prior_cost(arrival, out.estimate.x_hat[0]);
  out.cost = out.gamma;
  for (int j = 0; j < M; ++j) out.cost += quad(weights.Qinv, out.estimate.w_hat[j]);
  for (int j = 0; j <= M; ++j) out.cost += quad(weights.Rinv, out.estimate.v_hat[j]);
  return out;
}

WindowSolution solve_state_window(const WindowBuffer& buffer,
                                  const PolytopicModel& model,
                                  const SimplexWeights& alpha_fixed,
                                  const StageCostWeights& weights,
                                  const WindowBounds& bounds,
                                  const QpOptions& qp_opts, StateQpForm form) {
  const int M = static_cast<int>(buffer.measurements.size()) - 1;
  const BlendedModel m = blend(model, alpha_fixed);
  const std::vector<Matrix> A_path(M, m.A);
  const std::vector<Matrix> C_path(M + 1, m.C);
  const std::vector<Vector> measurements(buffer.measurements.begin(),
                                         buffer.measurements.end());
  WindowSolution sol = solve_linear_window(A_path, C_path, {}, measurements,
                                           buffer.arrival_x, weights, bounds,
                                           qp_opts, form);
  sol.estimate.alpha_hat = alpha_fixed.coeffs();
  return sol;
}

AlphaSolution solve_alpha_window(const WindowBuffer& buffer,
                                 const PolytopicModel& model,
                                 const std::vector<Vector>& x_fixed,
                                 const StageCostWeights& weights,
                                 bool per_step_alpha, const QpOptions& qp_opts) {
  const int M = static_cast<int>(buffer.measurements.size()) - 1;
  if (static_cast<int>(x_fixed.size()) != M + 1) {
    throw std::invalid_argument("solve_alpha_window: x_fixed length mismatch");
  }
  const int q = model.vertex_count();
  const int n = model.state_dim();
  const int p = model.output_dim();
  const ArrivalCostState& arr = buffer.arrival_alpha;
  const Matrix Pinv = inverse_spd(arr.P);
  const Vector prior = project_simplex(arr.prior_mean);

  // regressors: d_j = x_{j+1} - Dx_j alpha, v_j = y_j - Cx_j alpha
  std::vector<Matrix> Dx(M), Cx(M + 1);
  double reg_norm = 0.0;
  for (int j = 0; j <= M; ++j) {
    Cx[j] = Matrix(p, q);
    for (int i = 0; i < q; ++i) Cx[j].col(i) = model.vertex_C(i) * x_fixed[j];
    reg_norm = std::max(reg_norm, x_fixed[j].norm());
    if (j < M) {
      Dx[j] = Matrix(n, q);
      for (int i = 0; i < q; ++i) Dx[j].col(i) = model.vertex_A(i) * x_fixed[j];
    }
  }

  AlphaSolution out;
  auto finalize = [&](const Vector& alpha, const std::vector<Vector>& alphas) {
    out.alpha = alpha;
    out.d_hat.resize(M);
    out.v_hat.resize(M + 1);
    out.w_alpha.assign(M + 1, Vector::Zero(q));
    out.w_alpha[0] = alphas[0] - prior;
    out.cost = quad(Pinv, Vector(alphas[0] - arr.prior_mean));
    for (int j = 0; j <= M; ++j) {
      out.v_hat[j] = buffer.measurements[j] - Cx[j] * alphas[j];
      out.cost += quad(weights.Rinv, out.v_hat[j]);
      if (j < M) {
        out.d_hat[j] = x_fixed[j + 1] - Dx[j] * alphas[j];
        out.cost += quad(weights.Dinv, out.d_hat[j]);
      }
      if (j > 0) {
        out.w_alpha[j] = alphas[j] - alphas[j - 1];
        if (per_step_alpha) out.cost += quad(weights.Qalpha_inv, out.w_alpha[j]);
      }
    }
    return out;
  };

  if (reg_norm < 1e-14) {
    out.flat = true;
    return finalize(prior, std::vector<Vector>(M + 1, prior));
  }

  QuadraticProgram qp;
  if (!per_step_alpha) {
    Matrix Ht = Pinv + kAlphaRidge * Matrix::Identity(q, q);
    Vector bt = Pinv * arr.prior_mean + kAlphaRidge * prior;
    for (int j = 0; j <= M; ++j) {
      Ht.noalias() += Cx[j].transpose() * weights.Rinv * Cx[j];
      bt.noalias() += Cx[j].transpose() * weights.Rinv * buffer.measurements[j];
      if (j < M) {
        Ht.noalias() += Dx[j].transpose() * weights.Dinv * Dx[j];
        bt.noalias() += Dx[j].transpose() * weights.Dinv * x_fixed[j + 1];
      }
    }
    qp.H = 2.0 * Ht;
    qp.f = -2.0 * bt;
    qp.simplex_blocks = {{0, q}};
    const QpSolution sol = solve(qp, qp_opts);
    if (sol.status == QpStatus::infeasible) {
      throw WindowInfeasible("mixing window infeasible", dump_qp(qp));
    }
    const Vector alpha = project_simplex(sol.z);
    return finalize(alpha, std::vector<Vector>(M + 1, alpha));
  }

  // per-step mixing weights: z = [alpha_0..alpha_M], one simplex block each
  const int nz = q * (M + 1);
  qp.H = Matrix::Zero(nz, nz);
  qp.f = Vector::Zero(nz);
  qp.H.topLeftCorner(q, q) = 2.0 * (Pinv + kAlphaRidge * Matrix::Identity(q, q));
  qp.f.head(q) = -2.0 * (Pinv * arr.prior_mean + kAlphaRidge * prior);
  for (int j = 0; j <= M; ++j) {
    qp.H.block(q * j, q * j, q, q).noalias() +=
        2.0 * Cx[j].transpose() * weights.Rinv * Cx[j];
    qp.f.segment(q * j, q).noalias() -=
        2.0 * Cx[j].transpose() * weights.Rinv * buffer.measurements[j];
    if (j < M) {
      qp.H.block(q * j, q * j, q, q).noalias() +=
          2.0 * Dx[j].transpose() * weights.Dinv * Dx[j];
      qp.f.segment(q * j, q).noalias() -=
          2.0 * Dx[j].transpose() * weights.Dinv * x_fixed[j + 1];
      // random-walk increment penalty between alpha_j and alpha_{j+1}
      qp.H.block(q * j, q * j, q, q) += 2.0 * weights.Qalpha_inv;
      qp.H.block(q * (j + 1), q * (j + 1), q, q) += 2.0 * weights.Qalpha_inv;
      qp.H.block(q * j, q * (j + 1), q, q) -= 2.0 * weights.Qalpha_inv;
      qp.H.block(q * (j + 1), q * j, q, q) -= 2.0 * weights.Qalpha_inv;
    }
    qp.simplex_blocks.push_back({q * j, q});
  }
  const QpSolution sol = solve(qp, qp_opts);
  if (sol.status == QpStatus::infeasible) {
    throw WindowInfeasible("mixing window infeasible", dump_qp(qp));
  }
  std::vector<Vector> alphas(M + 1);
  for (int j = 0; j <= M; ++j) alphas[j] = project_simplex(sol.z.segment(q * j, q));
  return finalize(alphas[M], alphas);
}

int compute_iteration_bound(double psi1, double gamma_l, double gamma_min,
                            double epsilon) {
  if (gamma_min <= 0.0) {
    throw std::invalid_argument("compute_iteration_bound: gamma_min must be > 0");
  }
  if (psi1 <= 0.0 || epsilon <= 0.0 || epsilon > 1.0) {
    throw std::invalid_argument("compute_iteration_bound: need psi1 > 0, epsilon in (0,1]");
  }
  double arg = (epsilon * psi1 - gamma_l) / gamma_min + 1.0;
  if (epsilon * psi1 <= gamma_l) arg = 1.0;
  const int bound = static_cast<int>(std::ceil(std::log2(arg) - 1e-9)) + 1;
  return std::max(1, bound);
}

DualResult dual_iterate(const WindowBuffer& buffer, const PolytopicModel& model,
                        const SimplexWeights& init_alpha,
                        const StageCostWeights& weights, const MheConfig& config) {
  if (config.l_max < 1) throw std::invalid_argument("dual_iterate: l_max must be >= 1");
  if (config.epsilon_stop <= 0.0) {
    throw std::invalid_argument("dual_iterate: epsilon_stop must be > 0");
  }

  DualResult res;
  DualIterationReport& rep = res.report;

  SimplexWeights alpha = init_alpha;
  WindowSolution xsol = solve_state_window(buffer, model, alpha, weights,
                                           config.bounds, config.qp, config.qp_form);
  AlphaSolution asol = solve_alpha_window(buffer, model, xsol.estimate.x_hat,
                                          weights, config.per_step_alpha, config.qp);
  rep.costs_x.push_back(xsol.cost);
  rep.costs_alpha.push_back(asol.cost);
  rep.gamma_x.push_back(xsol.gamma);
  rep.g.push_back(1.0);
  rep.l_used = 1;
  rep.l_bound = 1;

  const double psi1 = xsol.cost;
  double gamma_min = std::max(xsol.gamma, config.gamma_floor);
  bool stop = psi1 < config.psi1_floor || config.l_max == 1;
  if (!stop && config.use_bound_stop) {
    rep.l_bound = compute_iteration_bound(psi1, xsol.gamma, gamma_min,
                                          config.epsilon_bound);
    stop = rep.l_used >= rep.l_bound;
  }

  while (!stop) {
    const SimplexWeights alpha_try(asol.alpha);
    WindowSolution x_try = solve_state_window(buffer, model, alpha_try, weights,
                                              config.bounds, config.qp, config.qp_form);
    AlphaSolution a_try = solve_alpha_window(buffer, model, x_try.estimate.x_hat,
                                             weights, config.per_step_alpha, config.qp);
    const double slack_x = 1e-12 * (1.0 + std::abs(rep.costs_x.back()));
    const double slack_a = 1e-12 * (1.0 + std::abs(rep.costs_alpha.back()));
    if (x_try.cost > rep.costs_x.back() + slack_x ||
        a_try.cost > rep.costs_alpha.back() + slack_a) {
      break;  // iterate rejected: keep the previous pair
    }
    const double prev = rep.costs_x.back();
    alpha = alpha_try;
    xsol = std::move(x_try);
    asol = std::move(a_try);
    rep.costs_x.push_back(xsol.cost);
    rep.costs_alpha.push_back(asol.cost);
    rep.gamma_x.push_back(xsol.gamma);
    rep.g.push_back(xsol.cost / psi1);
    rep.l_used += 1;

    gamma_min = std::max(std::min(gamma_min, xsol.gamma), config.gamma_floor);
    if (config.use_bound_stop) {
      rep.l_bound = compute_iteration_bound(psi1, xsol.gamma, gamma_min,
                                            config.epsilon_bound);
      if (rep.l_used >= rep.l_bound) break;
    }
    const double rel = (prev - xsol.cost) / std::max(prev, config.psi1_floor);
    if (rel < config.epsilon_stop) break;
    if (rep.l_used >= config.l_max) break;
  }

  res.estimate = xsol.estimate;
  res.estimate.alpha_hat = asol.alpha;
  res.estimate.d_hat = asol.d_hat;
  res.estimate.w_alpha_hat = asol.w_alpha;
  return res;
}

StepResult step(const WindowBuffer& buffer, const PolytopicModel& model,
                const StageCostWeights& weights, const MheConfig& config,
                const Vector& y_new) {
  StepResult out;
  out.buffer = buffer;
  WindowBuffer& buf = out.buffer;

  if (buf.warm()) {
    // window slides: refresh both arrival costs from the previous window's
    // smoothed estimates before dropping the oldest measurement
    const StepEstimate& prev = *buf.previous;
    const Vector& smoothed_x = prev.x_hat[1];
    const SimplexWeights prev_alpha{prev.alpha_hat};
    const BlendedModel m = blend(model, prev_alpha);
    const Vector innovation = buf.measurements[1] - m.C * smoothed_x;

    const ArrivalUpdateResult ux = update_weight(buf.arrival_x, smoothed_x, innovation);
    buf.arrival_x = update_prior_mean(ux.state, smoothed_x);
    const ArrivalUpdateResult ua =
        update_weight(buf.arrival_alpha, prev.alpha_hat, innovation);
    buf.arrival_alpha = update_prior_mean(ua.state, prev.alpha_hat);

    out.diagnostics.arrival_updated = true;
    out.diagnostics.theta_x = ux.theta;
    out.diagnostics.theta_alpha = ua.theta;
    out.diagnostics.branch_x = ux.branch;
    out.diagnostics.branch_alpha = ua.branch;
    buf.measurements.pop_front();
  }
  buf.measurements.push_back(y_new);

  const SimplexWeights init_alpha(buf.previous ? buf.previous->alpha_hat
                                               : project_simplex(buf.arrival_alpha.prior_mean));
  DualResult dual = dual_iterate(buf, model, init_alpha, weights, config);
  buf.previous = dual.estimate;

  out.estimate = std::move(dual.estimate);
  out.report = std::move(dual.report);
  out.diagnostics.trace_Px = buf.arrival_x.P.trace();
  out.diagnostics.trace_Palpha = buf.arrival_alpha.P.trace();
  return out;
}

}  // namespace polymhe
