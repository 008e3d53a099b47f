#pragma once

// Dense reference LP solvers for small problems.

#include "thmpc/lp.hpp"

#include <Eigen/Dense>

#include <random>

namespace oracle_lp {

struct DenseResult {
  thmpc::lp::LpStatus status = thmpc::lp::LpStatus::numerical_failure;
  double objective = 0.0;
  Eigen::VectorXd x;
};

/// Two-phase tableau simplex with Bland's rule on the general-form problem.
DenseResult simplex(const thmpc::lp::LpProblem& p);

/// Minimum over all vertices of a problem with finite boxes on every variable.
/// Enumerates active sets in the null space of the equalities.
DenseResult vertex_enumeration(const thmpc::lp::LpProblem& p);

/// Random LP, feasible by construction: b = A x0, h = G x0 + slack with x0
/// inside finite boxes.
thmpc::lp::LpProblem random_lp(std::mt19937& rng, thmpc::lp::Index n, thmpc::lp::Index me, thmpc::lp::Index mi,
                               double density = 0.6);

}  // namespace oracle_lp
