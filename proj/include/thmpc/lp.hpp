#pragma once

// Sparse linear programming with dual multipliers for every row.
//
//   minimize    c'x
//   subject to  A x  = b      (dual y, free)
//               G x <= h      (dual z >= 0)
//               l <= x <= u   (reduced costs w = w_l - w_u)
//
// Sign convention: c - A'y + G'z - w = 0 at an optimum, so y = d(opt)/db and
// z = -d(opt)/dh.

#include <Eigen/Sparse>

#include <iosfwd>
#include <limits>
#include <string>
#include <string_view>

namespace thmpc::lp {

using Vector = Eigen::VectorXd;
using SparseMatrix = Eigen::SparseMatrix<double>;
using Index = Eigen::Index;

inline constexpr double kInf = std::numeric_limits<double>::infinity();

struct LpProblem {
  Vector cost;
  SparseMatrix eq_matrix;
  Vector eq_rhs;
  SparseMatrix ineq_matrix;
  Vector ineq_rhs;
  Vector lower;
  Vector upper;

  /// n free variables, no rows, zero cost.
  static LpProblem with_vars(Index n);

  Index num_vars() const { return cost.size(); }
  /// Throws std::invalid_argument on inconsistent dimensions or non-finite data.
  void validate() const;
};

enum class LpStatus { optimal, infeasible, unbounded, numerical_failure };

std::string_view status_name(LpStatus s);

/// Relative KKT residuals of a candidate solution.
struct KktResiduals {
  double primal_eq = 0.0;
  double primal_ineq = 0.0;
  double bounds = 0.0;
  double stationarity = 0.0;
  double dual_sign = 0.0;
  double complementarity = 0.0;
  double gap = 0.0;

  double worst() const;
};

struct LpSolution {
  LpStatus status = LpStatus::numerical_failure;
  Vector primal;
  Vector dual_eq;
  Vector dual_ineq;
  Vector dual_bounds;  // reduced costs: positive at a lower bound, negative at an upper bound
  double objective = 0.0;
  KktResiduals kkt;
  int iterations = 0;
  std::string message;

  bool optimal() const { return status == LpStatus::optimal; }
};

struct SolverOptions {
  double tolerance = 1e-9;         // interior-point stopping tolerance (scaled problem)
  double certify_tolerance = 1e-7; // KKT certificate required for status optimal
  int max_iterations = 200;
  bool scaling = true;
  bool eliminate_singletons = true;  // fold single-entry columns (slacks) out of the Newton system
};

LpSolution solve(const LpProblem& problem, const SolverOptions& options = {});

/// Case where the equalities determine the point: returns it together with the
/// multipliers of the adjoint system A'y = c (minimum-norm when overdetermined).
LpSolution solve_equality_system_with_duals(const SparseMatrix& a, const Vector& b, const Vector& cost,
                                            double tolerance = 1e-7);

KktResiduals certify(const LpProblem& problem, const LpSolution& solution);

/// Plain-text dump for external cross-checks; see docs/lp_dump_format.md.
void write_dump(const LpProblem& problem, std::ostream& os);
LpProblem read_dump(std::istream& is);

}  // namespace thmpc::lp
