#pragma once

// Simulation of the discretized network: each step solves the dynamics
// residual together with the algebraic equations f_h, f_t for the temperatures
// and algebraic states, given controls and disturbances.

#include "thmpc/bdf.hpp"

#include <optional>
#include <stdexcept>
#include <vector>

namespace thmpc::plant {

class PlantError : public std::runtime_error {
 public:
  PlantError(const std::string& what, int step) : std::runtime_error(what), step_(step) {}
  int step() const { return step_; }

 private:
  int step_;
};

class NonConvergence : public PlantError {
 public:
  NonConvergence(const std::string& what, int step, double residual, int iterations)
      : PlantError(what, step), residual_(residual), iterations_(iterations) {}
  double residual() const { return residual_; }
  int iterations() const { return iterations_; }

 private:
  double residual_;
  int iterations_;
};

class SingularJacobian : public PlantError {
 public:
  using PlantError::PlantError;
};

struct NewtonOptions {
  int max_iterations = 50;
  double tolerance = 1e-10;  // scaled residual
  double armijo = 1e-4;
  double damping_factor = 0.5;
  double min_damping = 1e-6;
};

/// State carried between steps. zh/zt seed Newton and supply the value held
/// by degenerate algebraic rows (e.g. mixing temperature at zero flow).
struct PlantState {
  Vector theta;
  std::optional<Vector> theta_prev;
  Vector zh;
  Vector zt;

  StepHistory history() const { return StepHistory{theta, theta_prev}; }
};

/// Initial state with algebraic guesses set to the mean temperature and zero
/// pressures.
PlantState initial_state(const CvNetwork& net, const Vector& theta0);

struct StepResult {
  Point point;  // theta_k, z_k and the applied inputs
  int newton_iterations = 0;
  double residual = 0.0;  // scaled, after the last iterate
  std::vector<Index> held_rows;  // f_t rows replaced by a hold
};

StepResult step(const DiscreteModel& model, const PlantState& state, const Vector& uh, const Vector& ut,
                const Vector& d, const NewtonOptions& options = {}, int step_index = -1);

/// Next carried state after a step.
PlantState advance(const PlantState& state, const StepResult& result);

struct StepRecord {
  Point point;
  int newton_iterations = 0;
  double residual = 0.0;
  double power_h = 0.0;  // [W]
  double power_t = 0.0;  // [W]
  double cost_h = 0.0;   // [EUR]
  double cost_t = 0.0;   // [EUR]
};

struct Trajectory {
  std::vector<StepRecord> steps;
  PlantState final_state;
};

struct ControlSequence {
  std::vector<Vector> uh;
  std::vector<Vector> ut;
  std::size_t size() const { return uh.size(); }
};

/// Repeated step. `prices` may be empty (costs are then zero).
Trajectory rollout(const DiscreteModel& model, const PlantState& initial, const ControlSequence& controls,
                   const std::vector<Vector>& disturbances, const std::vector<double>& prices = {},
                   const NewtonOptions& options = {});

}  // namespace thmpc::plant
