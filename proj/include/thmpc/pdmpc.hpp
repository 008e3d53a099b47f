#pragma once

// Economic MPC by primal decomposition. The pump flows u_h of all horizon
// steps are the complicating block: with them fixed, the hydraulic relations
// determine the pressure losses and the thermal part becomes a linear program.
// The flows are improved by projected subgradient steps on the value function
//
//     phi(u_h) = J_h*(u_h) + J_t*(u_h)
//
// with a diminishing step alpha_i = alpha0 / sqrt(i) and backtracking whenever
// a trial flow plan makes a subproblem infeasible.

#include "thmpc/bdf.hpp"
#include "thmpc/lp.hpp"
#include "thmpc/plant.hpp"

#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace thmpc::pd {

/// How the thermal LP is solved: `reduced` eliminates (theta, zt) step by step
/// and solves over the heater inputs, `full` hands the sparse LP to the solver
/// as assembled. Both return multipliers of the full problem.
enum class ThermalMethod { reduced, full };

std::string_view method_name(ThermalMethod m);

struct PdConfig {
  double alpha0 = 5.0;  // [kg/s per EUR/(kg/s)]
  double b0 = 0.5;
  double b_shrink = 0.5;
  int max_backtracks = 20;
  double eps_rel = 1e-4;
  double eps_abs = 1e-3;  // [EUR]
  int i_max = 50;
  int n_c = 12;
  double feasibility_tolerance = 1e-7;  // scaled residual accepted for an iterate
  double safe_flow = 2.0;               // [kg/s] per pump, fallback plan (clipped to the flow box)
  double safe_ut = 1.0;                 // fallback heater input [K]
  lp::SolverOptions lp_options;
  ThermalMethod thermal_method = ThermalMethod::reduced;

  void validate() const;  // throws std::invalid_argument
};

/// Flow plan over the horizon (one u_h per step) and heater plan.
using Plan = plant::ControlSequence;

class SubproblemInfeasible : public std::runtime_error {
 public:
  SubproblemInfeasible(const std::string& what, lp::LpStatus status) : std::runtime_error(what), status_(status) {}
  lp::LpStatus status() const { return status_; }

 private:
  lp::LpStatus status_;
};

class HydraulicInfeasible : public SubproblemInfeasible {
 public:
  using SubproblemInfeasible::SubproblemInfeasible;
};

class ThermalInfeasible : public SubproblemInfeasible {
 public:
  using SubproblemInfeasible::SubproblemInfeasible;
};

class SafePlanInfeasible : public std::runtime_error {
 public:
  SafePlanInfeasible(const std::string& what, std::vector<std::string> rows)
      : std::runtime_error(what), rows_(std::move(rows)) {}
  const std::vector<std::string>& violated_rows() const { return rows_; }

 private:
  std::vector<std::string> rows_;
};

/// Box of the pump flows read off the single-variable rows of g_h.
struct FlowBox {
  Vector lower;
  Vector upper;
  Vector project(const Vector& u) const { return u.cwiseMax(lower).cwiseMin(upper); }
};

FlowBox flow_box(const CvNetwork& net);

struct FeasibleStart {
  Plan plan;
  Vector x;  // stacked horizon point from simulating the plan
  bool used_safe_plan = false;
};

/// Shifts `previous` by one step (repeating its last entry), simulates it and
/// checks all inequalities; falls back to the safe plan if that fails. Pass an
/// empty plan at the first MPC step.
FeasibleStart feasible_start(const HorizonAssembly& h, const plant::PlantState& state, const Plan& previous,
                             const PdConfig& config);

struct HydraulicResult {
  double cost = 0.0;           // J_h [EUR]
  std::vector<Vector> zh;      // per step
  std::vector<Vector> dual_fh; // per step
  std::vector<Vector> dual_gh; // per step
  lp::LpSolution lp;
};

struct ThermalResult {
  double cost = 0.0;  // J_t [EUR]
  ThermalMethod method = ThermalMethod::full;  // form that produced the solution
  std::vector<Vector> theta, zt, ut;
  std::vector<Vector> dual_dynamics, dual_ft, dual_gt;
  lp::LpSolution lp;
};

/// Hydraulic subproblem for fixed flows. Throws HydraulicInfeasible.
HydraulicResult solve_hydraulic(const HorizonAssembly& h, std::span<const Vector> uh,
                                const lp::SolverOptions& options = {});

/// Thermal horizon LP for fixed flows and pressure losses. Throws
/// ThermalInfeasible. `lp.kkt` always refers to the full problem.
ThermalResult solve_thermal(const HorizonAssembly& h, std::span<const Vector> uh, std::span<const Vector> zh,
                            const lp::SolverOptions& options = {}, ThermalMethod method = ThermalMethod::reduced);

/// The LP solved by solve_thermal, exposed for cross-checks.
lp::LpProblem thermal_lp(const HorizonAssembly& h, std::span<const Vector> uh, std::span<const Vector> zh);

/// Both subproblems at one flow plan.
struct Evaluation {
  std::vector<Vector> uh;
  HydraulicResult hydraulic;
  ThermalResult thermal;
  Vector x;  // stacked horizon point
  double equality_residual = 0.0;
  double inequality_violation = 0.0;

  double cost() const { return hydraulic.cost + thermal.cost; }
  Plan plan() const { return Plan{uh, thermal.ut}; }
};

Evaluation evaluate(const HorizonAssembly& h, std::span<const Vector> uh, const lp::SolverOptions& options = {},
                    ThermalMethod method = ThermalMethod::reduced);

/// Subgradient of phi w.r.t. the stacked flow plan [EUR per kg/s], assembled
/// from the subproblem multipliers.
Vector subgradient(const HorizonAssembly& h, const Evaluation& e);

struct PdRecord {
  int iteration = 0;  // 1-based
  double j_h = 0.0, j_t = 0.0, j = 0.0;
  double best_j = 0.0;
  double subgradient_norm = 0.0;
  double alpha = 0.0;   // alpha0 / sqrt(iteration), step towards the next iterate
  double step_scale = 1.0;  // backtracking factor finally used (1 if none)
  int backtracks = 0;
  bool feasible = false;
  double equality_residual = 0.0;
  double inequality_violation = 0.0;
  double kkt = 0.0;  // worst KKT residual of the two subproblem solves
  std::vector<Vector> uh;
  double wall_ms = 0.0;
};

enum class PdStop { converged, iteration_cap, backtrack_exhausted };

std::string_view stop_name(PdStop s);

struct PdTrace {
  std::vector<PdRecord> records;
  PdStop stop = PdStop::iteration_cap;
  bool converged() const { return stop == PdStop::converged; }
};

struct PdResult {
  Evaluation best;
  int best_iteration = 1;
  PdTrace trace;
};

/// Decomposition loop from a feasible flow plan. Never throws on
/// non-convergence; the best feasible iterate is returned with the stop reason.
PdResult pd_iterate(const HorizonAssembly& h, const PdConfig& config, std::vector<Vector> uh0);

/// Outcome of one MPC optimization.
struct PlanChoice {
  Plan plan;
  PdTrace trace;
  int best_iteration = 1;
  double predicted_cost = 0.0;  // [EUR]
  bool used_safe_plan = false;
};

/// Replacement optimizer for the closed loop (e.g. an exhaustive search).
/// Arguments: horizon, current plant state, previous plan (empty at step 0).
using Planner = std::function<PlanChoice(const HorizonAssembly&, const plant::PlantState&, const Plan&)>;

/// The decomposition planner: feasible start, then pd_iterate.
PlanChoice pd_plan(const HorizonAssembly& h, const plant::PlantState& state, const Plan& previous,
                   const PdConfig& config);

struct ClosedLoopStep;

struct ClosedLoopInput {
  const DiscreteModel* model = nullptr;
  plant::PlantState initial;
  std::vector<Vector> disturbances;  // at least sim_steps + n_c entries
  std::vector<double> prices;        // same length [EUR/kWh]
  int sim_steps = 0;
  PdConfig config;
  Planner planner;                                   // empty: pd_plan with `config`
  std::function<void(const ClosedLoopStep&)> on_step;  // called after every applied step
};

struct ClosedLoopStep {
  int step = 0;
  double time_s = 0.0;  // end of the step
  plant::StepRecord applied;
  PdTrace trace;
  int best_iteration = 1;
  double predicted_cost = 0.0;  // horizon objective of the plan [EUR]
  bool used_safe_plan = false;
  double wall_ms = 0.0;
};

struct ClosedLoopResult {
  std::vector<ClosedLoopStep> steps;
  plant::PlantState final_state;
};

class ControllerError : public std::runtime_error {
 public:
  enum class Cause { infeasible, solver_failure };

  ControllerError(const std::string& what, int step, Cause cause)
      : std::runtime_error(what), step_(step), cause_(cause) {}
  int step() const { return step_; }
  Cause cause() const { return cause_; }

 private:
  int step_;
  Cause cause_;
};

/// Receding-horizon loop with the plant in the loop. Controller failures are
/// rethrown as ControllerError carrying the step index; an infeasible LP or
/// safe plan is reported as `infeasible`, anything else as `solver_failure`.
ClosedLoopResult closed_loop(const ClosedLoopInput& input);

}  // namespace thmpc::pd
