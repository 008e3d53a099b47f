#pragma once

// Brute-force references for the controller and the discretization: an
// exhaustive search over gridded flow plans, a fine-step plant run and
// central differences of the decomposition value function.

#include "thmpc/pdmpc.hpp"

#include <span>
#include <stdexcept>
#include <vector>

namespace thmpc::oracle {

class GridTooLarge : public std::invalid_argument {
 public:
  GridTooLarge(double cardinality, double limit);
  double cardinality() const { return cardinality_; }

 private:
  double cardinality_;
};

inline constexpr double kMaxGridCombinations = 1e6;

struct GridEntry {
  std::vector<int> index;  // grid index per (step, pump), step-major
  bool feasible = false;
  double j_h = 0.0;
  double j_t = 0.0;
  double cost() const { return j_h + j_t; }
};

struct GridResult {
  std::vector<Vector> best_uh;
  double best_cost = lp::kInf;
  std::size_t best_entry = 0;
  std::size_t feasible_count = 0;
  std::vector<GridEntry> table;  // in lexicographic grid order
};

/// Every combination of `values` for every pump and step. Pressure losses are
/// obtained by solving the hydraulic relations directly; the thermal LP is
/// solved per combination. `threads` > 1 splits the table into contiguous
/// chunks; the result does not depend on it.
GridResult grid_search(const HorizonAssembly& h, std::span<const double> values, int threads = 1,
                       const lp::SolverOptions& options = {});

/// Grid search used as the closed-loop optimizer: the best grid plan with its
/// thermal LP solution. Throws pd::ThermalInfeasible if no combination is
/// feasible.
pd::PlanChoice grid_plan(const HorizonAssembly& h, std::span<const double> values, int threads = 1,
                         const lp::SolverOptions& options = {});

/// Evenly spaced grid of `points` values on [lo, hi].
std::vector<double> linear_grid(double lo, double hi, int points);

/// Plant run at dt / refinement with inputs held over each original step,
/// sampled at the ends of the original steps.
plant::Trajectory fine_reference(const DiscreteModel& model, const plant::PlantState& initial,
                                 const plant::ControlSequence& controls, const std::vector<Vector>& disturbances,
                                 int refinement);

class ProbeInfeasible : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Central difference of phi = J_h + J_t in one component of the stacked
/// flow plan (index step * n_uh + pump).
double fd_value_slope(const HorizonAssembly& h, std::span<const Vector> uh, Index component, double step,
                      const lp::SolverOptions& options = {});

}  // namespace thmpc::oracle
