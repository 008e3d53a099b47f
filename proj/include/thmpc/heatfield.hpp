#pragma once

// Underground heating field: n_pi parallel pipes embedded in two layers of soil
// CVs, n_x slices along the pipes.
//
// Cross-section (one slice), columns along y:
//
//     top     soil  soil  soil  soil  soil        <- air above
//     bottom  soil  PIPE  soil  PIPE  soil
//             ^ undisturbed soil on both sides ^
//
// State numbering (1-based, as "cv<N>"): ((layer * n_cols) + column) * n_x + slice.

#include "thmpc/netmodel.hpp"

#include <span>
#include <utility>

namespace thmpc::heatfield {

struct HeatfieldParams {
  int n_pi = 2;
  int n_x = 3;
  double volume = 3.75;           // [m^3]
  double sigma_x = 0.025;         // [W/K]
  double sigma_y = 22.5;          // [W/K]
  double sigma_z = 22.5;          // [W/K]
  double sigma_pi = 44.86;        // [W/K]
  double c_w = 4200.0;            // [J/(kg K)]
  double rho_w = 1000.0;          // [kg/m^3]
  double cs_rhos = 1.5e6;         // [J/(m^3 K)]
  double dp_nom = 8e5;            // [Pa]
  double mdot_nom = 30.0;         // [kg/s]
  double eta_pu = 0.8;            // [-]
  double theta_soil_min = 278.15; // [K]
  double theta_soil_max = 313.15; // [K]
  double mdot_min = 0.1;          // [kg/s], keeps mixing well-posed in the optimizer
  double mdot_max = 30.0;         // [kg/s]
  double dtheta_max = 10.0;       // [K]

  void validate() const;  // throws std::invalid_argument
};

enum class Layer { bottom, top };
enum class CvKind { pipe, soil };

struct GridIndex {
  int column = 1;  // 1..2*n_pi+1
  int slice = 1;   // 1..n_x
  Layer layer = Layer::bottom;
  CvKind kind = CvKind::soil;
};

// Index of the algebraic and input blocks.
inline constexpr Index kThetaIn = 0;   // zt
inline constexpr Index kThetaOut = 1;  // zt
inline constexpr Index kDeltaTheta = 0;  // ut
inline constexpr Index kThetaSoil = 0;   // d
inline constexpr Index kThetaAir = 1;    // d
inline constexpr Index kMixingRow = 1;   // f_t

int column_count(const HeatfieldParams& p);
Index state_count(const HeatfieldParams& p);
Index state_index(const HeatfieldParams& p, const GridIndex& g);
GridIndex grid_index(const HeatfieldParams& p, Index state);

/// State of slice s (0-based) of pipe q (0-based).
Index pipe_state(const HeatfieldParams& p, int pipe, int slice);
Index mflow_index(const HeatfieldParams& p, int pipe, int slice);
std::vector<Index> pipe_states(const HeatfieldParams& p);
std::vector<Index> soil_states(const HeatfieldParams& p);

/// Decision variables per step: theta, CV flows, pressure losses, pump flows,
/// inlet/outlet temperature and heater temperature rise.
Index variables_per_step(const HeatfieldParams& p);

CvNetwork build(const HeatfieldParams& params);

/// Step-cost forms for one price and step length (price in EUR/kWh).
std::pair<ObjectiveForm, ObjectiveForm> objective_coeffs(const CvNetwork& net, double price_eur_per_kwh,
                                                         double dt);

/// (sum flows) * theta_out - sum flows_p * exit_p
double mixing_residual(std::span<const double> flows, std::span<const double> exit_temps,
                       double theta_out);

/// Pump electrical power [W] for pressure loss dp and flow mdot.
double pump_power(const HeatfieldParams& p, double dp, double mdot);
/// Heater electrical power [W] for temperature rise dtheta and total flow.
double heater_power(const HeatfieldParams& p, double dtheta, double total_flow);

}  // namespace thmpc::heatfield
