#pragma once

// Scenario files: a JSON document describing one heating-field experiment
// (system size, time grid, series, controller). The layout is documented in
// docs/scenario.md.

#include "thmpc/heatfield.hpp"
#include "thmpc/pdmpc.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace thmpc::scenario {

inline constexpr int kSchemaVersion = 1;

/// Malformed or inconsistent scenario. `where` names the offending field.
class ConfigError : public std::runtime_error {
 public:
  ConfigError(const std::string& where, const std::string& what)
      : std::runtime_error(where.empty() ? what : where + ": " + what), where_(where) {}
  const std::string& where() const { return where_; }

 private:
  std::string where_;
};

enum class ControllerKind { pd, grid, open_loop };

struct ControllerSpec {
  ControllerKind kind = ControllerKind::pd;
  pd::PdConfig pd;                // n_c is taken from the scenario horizon
  std::vector<double> grid_values;  // [kg/s], grid controller only
  int grid_threads = 1;
  std::vector<std::vector<double>> open_loop_mdot;  // [pipe][step] [kg/s], open loop only
  std::vector<double> open_loop_dtheta;             // [step] [K], open loop only
};

/// Deliberate model defects for exercising the structural checks.
struct FaultInjection {
  std::optional<std::pair<int, int>> negate_coupling;  // 1-based CV numbers (row, column) of A
};

struct Scenario {
  std::string name;
  heatfield::HeatfieldParams system;
  double timestep_s = 7200.0;
  int bdf_order = 2;
  int horizon = 12;
  int sim_steps = 24;
  Vector initial_temperatures;  // one per CV [K]
  std::vector<double> price;       // [EUR/kWh] per step
  std::vector<double> theta_soil;  // [K] per step
  std::vector<double> theta_air;   // [K] per step
  ControllerSpec controller;
  std::uint64_t seed = 0;
  FaultInjection fault;

  std::vector<Vector> disturbances() const;  // (theta_soil, theta_air) per step
};

/// Parses scenario text. Relative CSV paths resolve against `base_dir`.
Scenario parse(std::string_view text, const std::filesystem::path& base_dir = ".");

/// Reads and parses a scenario file.
Scenario load(const std::filesystem::path& path);

/// Replaces the system size; a uniform initial temperature is carried over,
/// per-CV temperatures are rejected.
Scenario resized(const Scenario& s, int n_pi, int n_x);

/// Heating-field network with the scenario's parameters and fault injection.
CvNetwork build_network(const Scenario& s);

/// Bench sweep file: a base scenario and the (n_pi, n_x) pairs to run.
struct Sweep {
  Scenario base;
  std::vector<std::pair<int, int>> configs;
};

Sweep parse_sweep(std::string_view text, const std::filesystem::path& base_dir = ".");
Sweep load_sweep(const std::filesystem::path& path);

}  // namespace thmpc::scenario
