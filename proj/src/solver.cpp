#include "polymhe/solver.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <ostream>
#include <sstream>

namespace polymhe {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// One scalar inequality sign*z[var] <= value, i.e. an active box face.
struct BoundRow {
  int var;
  double value;
  double sign;  // +1: upper bound, -1: lower bound
};

struct Canonical {
  Matrix A;  // equalities: user rows + one sum row per simplex block
  Vector b;
  std::vector<BoundRow> rows;  // inequalities (finite bounds only)
  Vector eff_lower, eff_upper;
};

double inf_norm(const Vector& v) { return v.size() ? v.cwiseAbs().maxCoeff() : 0.0; }

Canonical canonicalize(const QuadraticProgram& qp) {
  const int n = qp.size();
  Canonical c;
  c.eff_lower = qp.lower.size() ? qp.lower : Vector::Constant(n, -kInf);
  c.eff_upper = qp.upper.size() ? qp.upper : Vector::Constant(n, kInf);
  if (c.eff_lower.size() != n || c.eff_upper.size() != n) {
    throw std::invalid_argument("solve: bound vectors must match problem size");
  }

  std::vector<bool> in_block(n, false);
  for (const auto& blk : qp.simplex_blocks) {
    if (blk.start < 0 || blk.size < 1 || blk.start + blk.size > n) {
      throw std::invalid_argument("solve: simplex block out of range");
    }
    for (int i = blk.start; i < blk.start + blk.size; ++i) {
      if (in_block[i]) {
        throw std::invalid_argument("solve: overlapping simplex blocks");
      }
      in_block[i] = true;
      c.eff_lower(i) = std::max(c.eff_lower(i), 0.0);
    }
  }

  const int me_user = static_cast<int>(qp.Aeq.rows());
  const int me = me_user + static_cast<int>(qp.simplex_blocks.size());
  c.A = Matrix::Zero(me, n);
  c.b = Vector::Zero(me);
  if (me_user > 0) {
    if (qp.Aeq.cols() != n || qp.beq.size() != me_user) {
      throw std::invalid_argument("solve: equality dimensions mismatch");
    }
    c.A.topRows(me_user) = qp.Aeq;
    c.b.head(me_user) = qp.beq;
  }
  for (size_t k = 0; k < qp.simplex_blocks.size(); ++k) {
    const auto& blk = qp.simplex_blocks[k];
    c.A.row(me_user + static_cast<int>(k)).segment(blk.start, blk.size).setOnes();
    c.b(me_user + static_cast<int>(k)) = 1.0;
  }

  for (int i = 0; i < n; ++i) {
    if (std::isfinite(c.eff_lower(i))) c.rows.push_back({i, c.eff_lower(i), -1.0});
    if (std::isfinite(c.eff_upper(i))) c.rows.push_back({i, c.eff_upper(i), +1.0});
  }
  return c;
}

struct Residuals {
  double stationarity;
  double feasibility;
  double complementarity;
};

// lambda is indexed like can.rows; dual sign convention: grad L = Hz+f+A'y+G'lam.
Residuals kkt_residuals(const Matrix& H, const Vector& f, const Canonical& can,
                        const Vector& z, const Vector& y, const Vector& lambda) {
  Vector grad = H * z + f;
  if (can.A.rows() > 0) grad += can.A.transpose() * y;
  for (size_t i = 0; i < can.rows.size(); ++i) {
    grad(can.rows[i].var) += can.rows[i].sign * lambda(static_cast<int>(i));
  }
  double feas = can.A.rows() > 0 ? inf_norm(can.A * z - can.b) : 0.0;
  double comp = 0.0;
  for (size_t i = 0; i < can.rows.size(); ++i) {
    const auto& r = can.rows[i];
    const double slack = r.value - r.sign * z(r.var);  // >= 0 when feasible
    feas = std::max(feas, -slack);
    comp = std::max(comp, std::abs(lambda(static_cast<int>(i)) * slack));
  }
  return {inf_norm(grad), feas, comp};
}

double objective_of(const Matrix& H, const Vector& f, const Vector& z) {
  return 0.5 * z.dot(H * z) + f.dot(z);
}

Vector initial_point(const QuadraticProgram& qp, const Canonical& can) {
  const int n = qp.size();
  Vector z = Vector::Zero(n);
  for (int i = 0; i < n; ++i) {
    const double lo = can.eff_lower(i), hi = can.eff_upper(i);
    if (std::isfinite(lo) && std::isfinite(hi)) {
      z(i) = 0.5 * (lo + hi);
    } else if (std::isfinite(lo)) {
      z(i) = lo + 1.0;
    } else if (std::isfinite(hi)) {
      z(i) = hi - 1.0;
    }
  }
  for (const auto& blk : qp.simplex_blocks) {
    for (int i = blk.start; i < blk.start + blk.size; ++i) z(i) = 1.0 / blk.size;
  }
  return z;
}

// Equality-constrained (or unconstrained) minimization via the KKT system.
// Returns false when the system stays numerically singular after ridging.
bool solve_equality_kkt(const Matrix& H, const Vector& f, const Matrix& A,
                        const Vector& b, Vector* z, Vector* y) {
  const int n = static_cast<int>(f.size());
  const int me = static_cast<int>(A.rows());
  const double hscale = 1.0 + H.cwiseAbs().maxCoeff();
  double ridge = 0.0;
  for (int attempt = 0; attempt < 4; ++attempt) {
    Matrix M(n + me, n + me);
    M.setZero();
    M.topLeftCorner(n, n) = H + ridge * Matrix::Identity(n, n);
    if (me > 0) {
      M.topRightCorner(n, me) = A.transpose();
      M.bottomLeftCorner(me, n) = A;
    }
    Vector rhs(n + me);
    rhs.head(n) = -f;
    rhs.tail(me) = b;
    Eigen::FullPivLU<Matrix> lu(M);
    lu.setThreshold(1e-12);
    const Vector sol = lu.solve(rhs);
    if (sol.allFinite() && inf_norm(M * sol - rhs) <= 1e-8 * (1.0 + inf_norm(rhs))) {
      *z = sol.head(n);
      if (me > 0) *y = sol.tail(me);
      return true;
    }
    ridge = ridge == 0.0 ? 1e-12 * hscale : ridge * 100.0;
  }
  return false;
}

void check_psd(const Matrix& H) {
  if (H.rows() > 64) return;  // internally built large QPs are PSD by construction
  Eigen::SelfAdjointEigenSolver<Matrix> es(H, Eigen::EigenvaluesOnly);
  const double lmax = std::max(1.0, es.eigenvalues().cwiseAbs().maxCoeff());
  if (es.eigenvalues().minCoeff() < -1e-8 * lmax) {
    throw std::invalid_argument("solve: H is not positive semidefinite");
  }
}

}  // namespace

Vector project_simplex(const Vector& v) {
  if (!v.allFinite()) throw std::invalid_argument("project_simplex: non-finite input");
  const int n = static_cast<int>(v.size());
  std::vector<double> u(v.data(), v.data() + n);
  std::sort(u.begin(), u.end(), std::greater<double>());
  double css = 0.0, t = 0.0;
  int rho = -1;
  for (int j = 0; j < n; ++j) {
    css += u[j];
    const double cand = (1.0 - css) / (j + 1);
    if (u[j] + cand > 0.0) {
      rho = j;
      t = cand;
    }
  }
  (void)rho;
  return (v.array() + t).cwiseMax(0.0);
}

QpSolution solve(const QuadraticProgram& qp, double tol, int max_iter) {
  QpOptions opts;
  opts.max_iter = max_iter;
  opts.tol_stationarity = std::max(tol, 1e-12);
  opts.tol_feasibility = std::max(tol, 1e-12);
  opts.tol_complementarity = std::max(tol, 1e-12);
  return solve(qp, opts);
}

QpSolution solve(const QuadraticProgram& qp, const QpOptions& opts) {
  const int n = qp.size();
  if (qp.H.rows() != n || qp.H.cols() != n) {
    throw std::invalid_argument("solve: H must be n x n");
  }
  const double asym = (qp.H - qp.H.transpose()).cwiseAbs().maxCoeff();
  if (asym > 1e-10 * (1.0 + qp.H.cwiseAbs().maxCoeff())) {
    throw std::invalid_argument("solve: H not symmetric within tolerance");
  }
  const Matrix H = 0.5 * (qp.H + qp.H.transpose());
  check_psd(H);

  Canonical can = canonicalize(qp);
  const int me = static_cast<int>(can.A.rows());
  const int mi = static_cast<int>(can.rows.size());
  const double scale_d = 1.0 + inf_norm(qp.f) + H.cwiseAbs().maxCoeff();
  const double scale_p = 1.0 + (me ? inf_norm(can.b) : 0.0);

  QpSolution out;
  out.z = initial_point(qp, can);

  auto finish = [&](const Vector& z, const Vector& y, const Vector& lambda,
                    int iters, bool hit_cap) {
    const Residuals r = kkt_residuals(H, qp.f, can, z, y, lambda);
    out.z = z;
    out.objective = objective_of(H, qp.f, z);
    out.iterations = iters;
    out.stationarity = r.stationarity;
    out.feasibility = r.feasibility;
    out.complementarity = r.complementarity;
    const bool ok = r.stationarity <= opts.tol_stationarity * scale_d &&
                    r.feasibility <= opts.tol_feasibility * scale_p &&
                    r.complementarity <= opts.tol_complementarity * scale_d;
    if (ok) {
      out.status = QpStatus::optimal;
    } else if (hit_cap && r.feasibility > 1e-6 * scale_p) {
      out.status = QpStatus::infeasible;
    } else {
      out.status = QpStatus::max_iter;
    }
    return out;
  };

  // quick structural infeasibility checks
  for (int i = 0; i < n; ++i) {
    if (can.eff_lower(i) > can.eff_upper(i) + 1e-12) {
      out.status = QpStatus::infeasible;
      out.objective = objective_of(H, qp.f, out.z);
      return out;
    }
  }
  for (const auto& blk : qp.simplex_blocks) {
    double lo_sum = 0.0, hi_sum = 0.0;
    for (int i = blk.start; i < blk.start + blk.size; ++i) {
      lo_sum += can.eff_lower(i);
      hi_sum += std::min(can.eff_upper(i), 1.0);
    }
    if (lo_sum > 1.0 + 1e-9 || hi_sum < 1.0 - 1e-9) {
      out.status = QpStatus::infeasible;
      out.objective = objective_of(H, qp.f, out.z);
      return out;
    }
  }
  if (me > 0) {
    Eigen::ColPivHouseholderQR<Matrix> qr(can.A);
    const Vector zls = qr.solve(can.b);
    if (inf_norm(can.A * zls - can.b) > 1e-8 * scale_p) {
      out.status = QpStatus::infeasible;
      out.objective = objective_of(H, qp.f, out.z);
      return out;
    }
  }

  if (mi == 0) {
    // no inequalities: one KKT factorization solves the problem exactly
    Vector z = out.z, y = Vector::Zero(me);
    if (!solve_equality_kkt(H, qp.f, can.A, can.b, &z, &y)) {
      return finish(out.z, Vector::Zero(me), Vector(), 0, true);
    }
    return finish(z, y, Vector(), 1, false);
  }

  // ---- primal-dual interior point (Mehrotra predictor-corrector) ----
  Vector z = out.z;
  Vector y = Vector::Zero(me);
  Vector s(mi), lambda = Vector::Ones(mi);
  for (int i = 0; i < mi; ++i) {
    const auto& r = can.rows[i];
    s(i) = std::max(1.0, r.value - r.sign * z(r.var));
  }

  const double delta_z = 1e-13 * (1.0 + H.cwiseAbs().maxCoeff());
  const double delta_y = 1e-13;
  int it = 0;
  int stalls = 0;

  auto bound_residual = [&](int i) {
    const auto& r = can.rows[i];
    return r.sign * z(r.var) + s(i) - r.value;
  };

  for (it = 1; it <= opts.max_iter; ++it) {
    Vector r_d = H * z + qp.f;
    if (me > 0) r_d += can.A.transpose() * y;
    for (int i = 0; i < mi; ++i) {
      r_d(can.rows[i].var) += can.rows[i].sign * lambda(i);
    }
    const Vector r_p = me > 0 ? Vector(can.A * z - can.b) : Vector();
    Vector r_g(mi);
    for (int i = 0; i < mi; ++i) r_g(i) = bound_residual(i);
    const double mu = s.dot(lambda) / mi;

    if (inf_norm(r_d) <= 1e-11 * scale_d && inf_norm(r_g) <= 1e-12 * scale_p &&
        (me == 0 || inf_norm(r_p) <= 1e-12 * scale_p) && mu <= 1e-13 * scale_d) {
      break;
    }

    // reduced system: [H + G' Sigma G, A'; A, -delta I]
    Matrix M(n + me, n + me);
    M.setZero();
    M.topLeftCorner(n, n) = H;
    for (int i = 0; i < n; ++i) M(i, i) += delta_z;
    for (int i = 0; i < mi; ++i) {
      const auto& r = can.rows[i];
      M(r.var, r.var) += lambda(i) / s(i);
    }
    if (me > 0) {
      M.topRightCorner(n, me) = can.A.transpose();
      M.bottomLeftCorner(me, n) = can.A;
      for (int i = 0; i < me; ++i) M(n + i, n + i) = -delta_y;
    }
    Eigen::PartialPivLU<Matrix> lu(M);

    auto solve_newton = [&](const Vector& rc, Vector* dz, Vector* dy, Vector* ds,
                            Vector* dl) {
      Vector rhs(n + me);
      rhs.head(n) = -r_d;
      for (int i = 0; i < mi; ++i) {
        const auto& r = can.rows[i];
        rhs(r.var) -= r.sign * (rc(i) / s(i) + lambda(i) / s(i) * r_g(i));
      }
      if (me > 0) rhs.tail(me) = -r_p;
      const Vector sol = lu.solve(rhs);
      *dz = sol.head(n);
      if (me > 0) *dy = sol.tail(me);
      ds->resize(mi);
      dl->resize(mi);
      for (int i = 0; i < mi; ++i) {
        const auto& r = can.rows[i];
        (*ds)(i) = -r_g(i) - r.sign * (*dz)(r.var);
        (*dl)(i) = (rc(i) - lambda(i) * (*ds)(i)) / s(i);
      }
    };

    auto max_step = [&](const Vector& w, const Vector& dw) {
      double a = 1.0;
      for (int i = 0; i < mi; ++i) {
        if (dw(i) < 0.0) a = std::min(a, -w(i) / dw(i));
      }
      return a;
    };

    // predictor
    Vector rc = -(s.array() * lambda.array()).matrix();
    Vector dz, dy, ds, dl;
    solve_newton(rc, &dz, &dy, &ds, &dl);
    const double ap_aff = max_step(s, ds);
    const double ad_aff = max_step(lambda, dl);
    const double mu_aff =
        (s + ap_aff * ds).dot(lambda + ad_aff * dl) / mi;
    double sig = mu > 0 ? std::pow(mu_aff / mu, 3.0) : 0.0;
    sig = std::clamp(sig, 0.0, 1.0);

    // corrector
    rc = (sig * mu - (s.array() * lambda.array() + ds.array() * dl.array())).matrix();
    solve_newton(rc, &dz, &dy, &ds, &dl);
    const double eta = mu > 1e-8 * scale_d ? 0.99 : 0.9999;
    const double ap = std::min(1.0, eta * max_step(s, ds));
    const double ad = std::min(1.0, eta * max_step(lambda, dl));

    z += ap * dz;
    s += ap * ds;
    if (me > 0) y += ad * dy;
    lambda += ad * dl;

    if (ap < 1e-10 && ad < 1e-10) {
      if (++stalls >= 3) break;
    } else {
      stalls = 0;
    }
  }

  // ---- crossover polish: clamp the identified active set, solve exactly ----
  {
    std::vector<int> active;
    for (int i = 0; i < mi; ++i) {
      if (s(i) <= lambda(i) || s(i) <= 1e-10 * scale_p) active.push_back(i);
    }
    const int na = static_cast<int>(active.size());
    Matrix Ap(me + na, n);
    Vector bp(me + na);
    if (me > 0) {
      Ap.topRows(me) = can.A;
      bp.head(me) = can.b;
    }
    for (int k = 0; k < na; ++k) {
      const auto& r = can.rows[active[k]];
      Ap.row(me + k).setZero();
      Ap(me + k, r.var) = r.sign;
      bp(me + k) = r.value;
    }
    Vector zp, yp;
    if (solve_equality_kkt(H, qp.f, Ap, bp, &zp, &yp)) {
      Vector lam_p = Vector::Zero(mi);
      bool ok = zp.allFinite();
      for (int k = 0; k < na && ok; ++k) {
        const double m = yp(me + k);
        if (m < -1e-9 * scale_d) ok = false;
        lam_p(active[k]) = std::max(0.0, m);
      }
      for (int i = 0; i < mi && ok; ++i) {
        const auto& r = can.rows[i];
        if (r.sign * zp(r.var) - r.value > 1e-9 * scale_p) ok = false;
      }
      if (ok) {
        const Residuals rp =
            kkt_residuals(H, qp.f, can, zp, me > 0 ? Vector(yp.head(me)) : Vector(), lam_p);
        const Residuals ri = kkt_residuals(H, qp.f, can, z, y, lambda);
        const double sp = std::max({rp.stationarity, rp.feasibility, rp.complementarity});
        const double si = std::max({ri.stationarity, ri.feasibility, ri.complementarity});
        if (sp <= si) {
          return finish(zp, me > 0 ? Vector(yp.head(me)) : Vector::Zero(0), lam_p,
                        it, it > opts.max_iter);
        }
      }
    }
  }

  return finish(z, y, lambda, std::min(it, opts.max_iter), it > opts.max_iter);
}

void write_qp(std::ostream& os, const QuadraticProgram& qp) {
  const int n = qp.size();
  os << "qp n " << n << " me " << qp.Aeq.rows() << " blocks "
     << qp.simplex_blocks.size() << "\n";
  const Eigen::IOFormat fmt(Eigen::FullPrecision, Eigen::DontAlignCols, " ", "\n");
  os << "H\n" << qp.H.format(fmt) << "\nf\n" << qp.f.transpose().format(fmt) << "\n";
  if (qp.Aeq.rows() > 0) {
    os << "Aeq\n" << qp.Aeq.format(fmt) << "\nbeq\n"
       << qp.beq.transpose().format(fmt) << "\n";
  }
  if (qp.lower.size()) os << "lower\n" << qp.lower.transpose().format(fmt) << "\n";
  if (qp.upper.size()) os << "upper\n" << qp.upper.transpose().format(fmt) << "\n";
  for (const auto& blk : qp.simplex_blocks) {
    os << "simplex " << blk.start << " " << blk.size << "\n";
  }
}

std::string dump_qp(const QuadraticProgram& qp) {
  std::ostringstream ss;
  write_qp(ss, qp);
  return ss.str();
}

}  // namespace polymhe
