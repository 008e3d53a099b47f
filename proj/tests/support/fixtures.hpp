#pragma once

// Shared builders for the unit suites: heating-field models, horizons with
// simple forecasts and random points.

#include "thmpc/bdf.hpp"
#include "thmpc/heatfield.hpp"
#include "thmpc/plant.hpp"

#include <Eigen/Dense>

#include <memory>
#include <string>
#include <random>
#include <vector>

namespace fixtures {

using namespace thmpc;

inline heatfield::HeatfieldParams params(int n_pi, int n_x) {
  heatfield::HeatfieldParams p;
  p.n_pi = n_pi;
  p.n_x = n_x;
  return p;
}

/// Model, discretization and plant state kept alive together; the horizon
/// refers to the model by pointer.
struct Field {
  heatfield::HeatfieldParams p;
  CvNetwork net;
  std::unique_ptr<DiscreteModel> model;
  plant::PlantState state;

  Field(int n_pi, int n_x, double dt = 7200.0, double theta0 = 279.5)
      : p(params(n_pi, n_x)), net(heatfield::build(p)) {
    model = std::make_unique<DiscreteModel>(net, dt, 2);
    state = plant::initial_state(net, Vector::Constant(net.dims.theta, theta0));
  }
  explicit Field(const heatfield::HeatfieldParams& params, double dt = 7200.0, double theta0 = 279.5)
      : p(params), net(heatfield::build(p)) {
    model = std::make_unique<DiscreteModel>(net, dt, 2);
    state = plant::initial_state(net, Vector::Constant(net.dims.theta, theta0));
  }

  Field(const Field&) = delete;
  Field& operator=(const Field&) = delete;

  Vector d(double soil, double air) const {
    Vector v(2);
    v << soil, air;
    return v;
  }

  HorizonAssembly horizon(int n_c, std::vector<double> prices, double soil = 283.0, double air = 270.0) const {
    std::vector<Vector> dist(static_cast<std::size_t>(n_c), d(soil, air));
    prices.resize(static_cast<std::size_t>(n_c), prices.empty() ? 0.2 : prices.back());
    return HorizonAssembly(*model, n_c, state.history(), dist, prices);
  }
};

/// Pure linear network d(theta)/dt = A theta without algebraic part.
inline CvNetwork linear_network(const Eigen::MatrixXd& a) {
  CvNetwork net;
  net.dims.theta = a.rows();
  net.capacity = Vector::Ones(a.rows());
  for (Index i = 0; i < a.rows(); ++i) net.state_labels.push_back("s" + std::to_string(i));
  net.dynamics = BilinearMap(a.rows(), net.dims);
  net.dynamics.set_affine(Block::theta, a.sparseView());
  for (ConstraintSet* c : {&net.f_h, &net.f_t, &net.g_h, &net.g_t}) c->map = BilinearMap(0, net.dims);
  net.g_h.kind = net.g_t.kind = ConstraintKind::inequality_leq;
  net.mflow_map = SparseMatrix(0, 0);
  net.objective_h.form = BilinearMap(1, net.dims);
  net.objective_t.form = BilinearMap(1, net.dims);
  return net;
}

inline std::vector<Vector> constant_plan(int steps, Index n, double v) {
  return std::vector<Vector>(static_cast<std::size_t>(steps), Vector::Constant(n, v));
}

/// Random point with temperatures near `mean` and positive flows.
inline Point random_point(const CvNetwork& net, std::mt19937& rng, double mean = 290.0) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Point p = Point::zeros(net.dims);
  for (Index i = 0; i < p.theta.size(); ++i) p.theta[i] = mean + 10.0 * u(rng);
  for (Index i = 0; i < p.zh.size(); ++i) p.zh[i] = 4e5 + 3e5 * u(rng);
  for (Index i = 0; i < p.zt.size(); ++i) p.zt[i] = mean + 10.0 * u(rng);
  for (Index i = 0; i < p.uh.size(); ++i) p.uh[i] = 10.0 + 8.0 * u(rng);
  for (Index i = 0; i < p.ut.size(); ++i) p.ut[i] = 5.0 + 4.0 * u(rng);
  for (Index i = 0; i < p.d.size(); ++i) p.d[i] = mean + 10.0 * u(rng);
  return p;
}

}  // namespace fixtures
