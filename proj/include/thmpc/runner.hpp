#pragma once

// Scenario execution and CSV artifacts: closed-loop runs, benchmark sweeps and
// the structural model checks. Column layouts are documented in docs/csv.md.

#include "thmpc/scenario.hpp"

#include <optional>
#include <ostream>
#include <string>
#include <vector>

namespace thmpc::runner {

enum class RunStatus { ok, constraint_violation, infeasible, solver_failure };

std::string_view status_name(RunStatus s);

/// Bound violations below this are round-off [K or kg/s].
inline constexpr double kViolationTolerance = 1e-6;

struct RunResult {
  std::vector<pd::ClosedLoopStep> steps;  // completed steps, also on failure
  RunStatus status = RunStatus::ok;
  std::string message;  // failure description
  double max_violation = 0.0;  // largest g_h/g_t row value over applied steps
};

/// Closed loop for the scenario, or a plain plant run for an open-loop
/// controller. Controller and plant failures end the run and are reported in
/// the result; configuration problems throw ConfigError. `refinement` > 1
/// simulates an open-loop scenario at timestep / refinement and samples the
/// ends of the original steps.
RunResult run(const scenario::Scenario& s, int refinement = 1);

struct CsvOptions {
  bool timing = true;  // false writes 0 in every wall-clock column
};

void write_trajectory(std::ostream& out, const scenario::Scenario& s, const RunResult& r);
void write_trace(std::ostream& out, const RunResult& r, const CsvOptions& opt = {});
void write_summary(std::ostream& out, const scenario::Scenario& s, const RunResult& r, const CsvOptions& opt = {});

struct BenchRow {
  int n_pi = 0;
  int n_x = 0;
  Index variables_per_step = 0;
  RunStatus status = RunStatus::ok;
  std::string message;
  int steps_completed = 0;
  double avg_cost = 0.0;     // [EUR per step]
  double avg_wall_ms = 0.0;  // [ms per step]
  double mean_iterations = 0.0;
  int max_iterations = 0;
  bool config_error = false;
};

/// Runs every configuration of the sweep; failures are recorded per row.
/// `parallel` > 1 runs that many configurations concurrently.
std::vector<BenchRow> bench(const scenario::Sweep& sweep, int parallel = 1);

void write_bench(std::ostream& out, const std::vector<BenchRow>& rows, const CsvOptions& opt = {});

struct Check {
  std::string name;
  bool passed = false;
  std::string detail;
};

/// Structural invariants of the scenario's model: network consistency,
/// capacity-weighted coupling symmetry, the per-step variable count and
/// finite-difference spot checks of every analytic Jacobian block.
std::vector<Check> validate_model(const scenario::Scenario& s);

/// Per-step decision variables (n_pi, n_x) counted from the layout rules,
/// independent of the model builder.
Index expected_variables_per_step(int n_pi, int n_x);

}  // namespace thmpc::runner
