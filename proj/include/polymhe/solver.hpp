#pragma once

#include <Eigen/Dense>
#include <iosfwd>
#include <string>
#include <vector>

#include "polymhe/model.hpp"

namespace polymhe {

// Index range [start, start+size) constrained to the unit simplex.
struct SimplexBlock {
  int start = 0;
  int size = 0;
};

// min 1/2 z'Hz + f'z  s.t.  Aeq z = beq,  lower <= z <= upper,
// plus simplex blocks (sum = 1, entries >= 0).
// lower/upper may be empty (unbounded) or contain +-inf entries.
struct QuadraticProgram {
  Matrix H;
  Vector f;
  Matrix Aeq;  // 0 x n when absent
  Vector beq;
  Vector lower;
  Vector upper;
  std::vector<SimplexBlock> simplex_blocks;

  int size() const { return static_cast<int>(f.size()); }
};

enum class QpStatus { optimal, max_iter, infeasible };

struct QpSolution {
  Vector z;
  double objective = 0.0;
  QpStatus status = QpStatus::max_iter;
  int iterations = 0;
  // KKT residuals at the returned point
  double stationarity = 0.0;
  double feasibility = 0.0;
  double complementarity = 0.0;
};

struct QpOptions {
  int max_iter = 100;
  // acceptance thresholds for status == optimal
  double tol_stationarity = 1e-7;
  double tol_feasibility = 1e-8;
  double tol_complementarity = 1e-7;
};

QpSolution solve(const QuadraticProgram& qp, const QpOptions& opts = {});
QpSolution solve(const QuadraticProgram& qp, double tol, int max_iter);

// Euclidean projection onto the unit simplex (sort-based).
Vector project_simplex(const Vector& v);

// Plain-text dump for offline inspection of problem instances.
void write_qp(std::ostream& os, const QuadraticProgram& qp);
std::string dump_qp(const QuadraticProgram& qp);

}  // namespace polymhe
