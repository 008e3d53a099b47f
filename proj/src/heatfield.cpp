#include "thmpc/heatfield.hpp"

#include <numeric>
#include <stdexcept>
#include <string>

namespace thmpc::heatfield {

namespace {

SparseMatrix from_triplets(Index rows, Index cols, const std::vector<Triplet>& t) {
  SparseMatrix m(rows, cols);
  m.setFromTriplets(t.begin(), t.end());
  m.makeCompressed();
  return m;
}

SparseMatrix identity(Index n) {
  SparseMatrix m(n, n);
  m.setIdentity();
  return m;
}

/// Accumulates conductive couplings into A and D.
class ConductionBuilder {
 public:
  explicit ConductionBuilder(const Vector& capacity) : capacity_(capacity) {}

  void couple(Index i, Index j, double sigma) {
    a_.emplace_back(i, i, -sigma / capacity_[i]);
    a_.emplace_back(i, j, sigma / capacity_[i]);
    a_.emplace_back(j, j, -sigma / capacity_[j]);
    a_.emplace_back(j, i, sigma / capacity_[j]);
  }

  void boundary(Index i, Index d_col, double sigma) {
    a_.emplace_back(i, i, -sigma / capacity_[i]);
    d_.emplace_back(i, d_col, sigma / capacity_[i]);
  }

  const std::vector<Triplet>& a() const { return a_; }
  const std::vector<Triplet>& d() const { return d_; }

 private:
  const Vector& capacity_;
  std::vector<Triplet> a_;
  std::vector<Triplet> d_;
};

}  // namespace

void HeatfieldParams::validate() const {
  auto require = [](bool ok, const char* what) {
    if (!ok) throw std::invalid_argument(std::string("invalid heatfield parameters: ") + what);
  };
  require(n_pi >= 1, "n_pi must be >= 1");
  require(n_x >= 1, "n_x must be >= 1");
  require(volume > 0 && sigma_x > 0 && sigma_y > 0 && sigma_z > 0 && sigma_pi > 0,
          "volume and conductances must be positive");
  require(c_w > 0 && rho_w > 0 && cs_rhos > 0, "material properties must be positive");
  require(dp_nom > 0 && mdot_nom > 0, "nominal pressure loss and flow must be positive");
  require(eta_pu > 0 && eta_pu <= 1, "pump efficiency must lie in (0, 1]");
  require(theta_soil_min > 0 && theta_soil_min < theta_soil_max, "soil bounds must satisfy 0 < min < max");
  require(mdot_min >= 0 && mdot_max > mdot_min, "flow bounds must satisfy 0 <= min < max");
  require(dtheta_max > 0, "dtheta_max must be positive");
}

int column_count(const HeatfieldParams& p) { return 2 * p.n_pi + 1; }

Index state_count(const HeatfieldParams& p) {
  return static_cast<Index>(column_count(p)) * 2 * p.n_x;
}

Index state_index(const HeatfieldParams& p, const GridIndex& g) {
  const Index layer = g.layer == Layer::bottom ? 0 : 1;
  return (layer * column_count(p) + (g.column - 1)) * p.n_x + (g.slice - 1);
}

GridIndex grid_index(const HeatfieldParams& p, Index state) {
  if (state < 0 || state >= state_count(p)) throw std::out_of_range("state index out of range");
  GridIndex g;
  g.slice = static_cast<int>(state % p.n_x) + 1;
  const Index col_layer = state / p.n_x;
  g.column = static_cast<int>(col_layer % column_count(p)) + 1;
  g.layer = col_layer / column_count(p) == 0 ? Layer::bottom : Layer::top;
  g.kind = (g.layer == Layer::bottom && g.column % 2 == 0) ? CvKind::pipe : CvKind::soil;
  return g;
}

Index pipe_state(const HeatfieldParams& p, int pipe, int slice) {
  return state_index(p, GridIndex{2 * (pipe + 1), slice + 1, Layer::bottom, CvKind::pipe});
}

Index mflow_index(const HeatfieldParams& p, int pipe, int slice) {
  return static_cast<Index>(pipe) * p.n_x + slice;
}

std::vector<Index> pipe_states(const HeatfieldParams& p) {
  std::vector<Index> out;
  for (int q = 0; q < p.n_pi; ++q)
    for (int s = 0; s < p.n_x; ++s) out.push_back(pipe_state(p, q, s));
  return out;
}

std::vector<Index> soil_states(const HeatfieldParams& p) {
  std::vector<Index> out;
  for (Index i = 0; i < state_count(p); ++i) {
    if (grid_index(p, i).kind == CvKind::soil) out.push_back(i);
  }
  return out;
}

Index variables_per_step(const HeatfieldParams& p) {
  return state_count(p) + static_cast<Index>(p.n_pi) * p.n_x + 2 * p.n_pi + 3;
}

CvNetwork build(const HeatfieldParams& params) {
  params.validate();
  const int n_pi = params.n_pi;
  const int n_x = params.n_x;
  const int n_cols = column_count(params);

  CvNetwork net;
  Dimensions& dims = net.dims;
  dims.theta = state_count(params);
  dims.zh = n_pi;
  dims.zt = 2;
  dims.uh = n_pi;
  dims.ut = 1;
  dims.d = 2;
  dims.mflow = static_cast<Index>(n_pi) * n_x;

  net.capacity.resize(dims.theta);
  net.state_labels.resize(static_cast<std::size_t>(dims.theta));
  for (Index i = 0; i < dims.theta; ++i) {
    const GridIndex g = grid_index(params, i);
    net.capacity[i] = g.kind == CvKind::pipe ? params.c_w * params.rho_w * params.volume
                                             : params.cs_rhos * params.volume;
    net.state_labels[static_cast<std::size_t>(i)] = "cv" + std::to_string(i + 1);
  }

  // Conduction.
  ConductionBuilder cond(net.capacity);
  for (int layer = 0; layer < 2; ++layer) {
    const Layer lay = layer == 0 ? Layer::bottom : Layer::top;
    for (int col = 1; col <= n_cols; ++col) {
      for (int s = 1; s <= n_x; ++s) {
        const Index i = state_index(params, GridIndex{col, s, lay, CvKind::soil});
        const GridIndex g = grid_index(params, i);
        if (g.kind == CvKind::pipe) continue;  // pipe couplings are added from the soil side
        if (s < n_x) cond.couple(i, state_index(params, GridIndex{col, s + 1, lay, CvKind::soil}), params.sigma_x);
        if (col < n_cols) {
          const Index j = state_index(params, GridIndex{col + 1, s, lay, CvKind::soil});
          if (grid_index(params, j).kind == CvKind::soil) cond.couple(i, j, params.sigma_y);
        }
        if (lay == Layer::top) {
          const Index below = state_index(params, GridIndex{col, s, Layer::bottom, CvKind::soil});
          const bool pipe_below = grid_index(params, below).kind == CvKind::pipe;
          cond.couple(i, below, pipe_below ? params.sigma_pi : params.sigma_z);
          cond.boundary(i, kThetaAir, 0.5 * params.sigma_z);
        }
        if (col == 1 || col == n_cols) cond.boundary(i, kThetaSoil, 0.5 * params.sigma_y);
      }
    }
  }

  net.dynamics = BilinearMap(dims.theta, dims);
  net.dynamics.set_affine(Block::theta, from_triplets(dims.theta, dims.theta, cond.a()));
  net.dynamics.set_affine(Block::d, from_triplets(dims.theta, dims.d, cond.d()));

  // Convection along each pipe: (1/(rho V)) mdot_s (theta_{s-1} - theta_s),
  // with theta_in feeding the first slice.
  const double conv = 1.0 / (params.rho_w * params.volume);
  {
    std::vector<Triplet> x, z;
    for (int q = 0; q < n_pi; ++q) {
      for (int s = 0; s < n_x; ++s) {
        const Index r = mflow_index(params, q, s);
        const Index i = pipe_state(params, q, s);
        x.emplace_back(i, r, conv);
        z.emplace_back(r, i, -1.0);
        if (s > 0) z.emplace_back(r, pipe_state(params, q, s - 1), 1.0);
      }
    }
    net.dynamics.add_term(BilinearTerm{from_triplets(dims.theta, dims.mflow, x), identity(dims.mflow),
                                       from_triplets(dims.mflow, dims.theta, z), Block::theta});
  }
  {
    std::vector<Triplet> x, y, z;
    for (int q = 0; q < n_pi; ++q) {
      x.emplace_back(pipe_state(params, q, 0), q, conv);
      y.emplace_back(q, mflow_index(params, q, 0), 1.0);
      z.emplace_back(q, kThetaIn, 1.0);
    }
    net.dynamics.add_term(BilinearTerm{from_triplets(dims.theta, n_pi, x), from_triplets(n_pi, dims.mflow, y),
                                       from_triplets(n_pi, dims.zt, z), Block::zt});
  }

  // Every CV of pipe q carries the pump flow of pipe q.
  {
    std::vector<Triplet> m;
    for (int q = 0; q < n_pi; ++q)
      for (int s = 0; s < n_x; ++s) m.emplace_back(mflow_index(params, q, s), q, 1.0);
    net.mflow_map = from_triplets(dims.mflow, dims.uh, m);
  }

  // Pressure loss: dp_q - k mdot_q^2 = 0.
  {
    const double k = params.dp_nom / (params.mdot_nom * params.mdot_nom);
    net.f_h.kind = ConstraintKind::equality;
    net.f_h.map = BilinearMap(n_pi, dims);
    net.f_h.map.set_affine(Block::zh, identity(n_pi));
    std::vector<Triplet> x, yz;
    for (int q = 0; q < n_pi; ++q) {
      x.emplace_back(q, q, -k);
      yz.emplace_back(q, mflow_index(params, q, 0), 1.0);
      net.f_h.row_labels.push_back("f_h[pressure_loss_" + std::to_string(q + 1) + "]");
    }
    const SparseMatrix sel = from_triplets(n_pi, dims.mflow, yz);
    net.f_h.map.add_term(BilinearTerm{from_triplets(n_pi, n_pi, x), sel, sel, Block::mflow});
    net.f_h.degenerate_hold.assign(static_cast<std::size_t>(n_pi), std::nullopt);
  }

  // theta_in - theta_out - dtheta = 0 and the mixing balance
  // (sum mdot) theta_out - sum mdot_q theta_exit_q = 0.
  {
    net.f_t.kind = ConstraintKind::equality;
    net.f_t.map = BilinearMap(2, dims);
    net.f_t.map.set_affine(Block::zt, from_triplets(2, 2, {{0, kThetaIn, 1.0}, {0, kThetaOut, -1.0}}));
    net.f_t.map.set_affine(Block::ut, from_triplets(2, 1, {{0, kDeltaTheta, -1.0}}));
    std::vector<Triplet> xa, xb, y, za, zb;
    for (int q = 0; q < n_pi; ++q) {
      xa.emplace_back(kMixingRow, q, 1.0);
      xb.emplace_back(kMixingRow, q, -1.0);
      y.emplace_back(q, mflow_index(params, q, n_x - 1), 1.0);
      za.emplace_back(q, kThetaOut, 1.0);
      zb.emplace_back(q, pipe_state(params, q, n_x - 1), 1.0);
    }
    const SparseMatrix ysel = from_triplets(n_pi, dims.mflow, y);
    net.f_t.map.add_term(BilinearTerm{from_triplets(2, n_pi, xa), ysel, from_triplets(n_pi, dims.zt, za), Block::zt});
    net.f_t.map.add_term(
        BilinearTerm{from_triplets(2, n_pi, xb), ysel, from_triplets(n_pi, dims.theta, zb), Block::theta});
    net.f_t.row_labels = {"f_t[inlet_temperature]", "f_t[mixing]"};
    net.f_t.degenerate_hold = {std::nullopt, VarRef{Block::zt, kThetaOut}};
  }

  // Pump flow box.
  {
    net.g_h.kind = ConstraintKind::inequality_leq;
    net.g_h.map = BilinearMap(2 * n_pi, dims);
    std::vector<Triplet> u;
    Vector c(2 * n_pi);
    for (int q = 0; q < n_pi; ++q) {
      u.emplace_back(2 * q, q, -1.0);
      c[2 * q] = params.mdot_min;
      u.emplace_back(2 * q + 1, q, 1.0);
      c[2 * q + 1] = -params.mdot_max;
      net.g_h.row_labels.push_back("g_h[mdot_in_" + std::to_string(q + 1) + ">=min]");
      net.g_h.row_labels.push_back("g_h[mdot_in_" + std::to_string(q + 1) + "<=max]");
    }
    net.g_h.map.set_affine(Block::uh, from_triplets(2 * n_pi, n_pi, u));
    net.g_h.map.set_constant(std::move(c));
    net.g_h.degenerate_hold.assign(static_cast<std::size_t>(2 * n_pi), std::nullopt);
  }

  // Soil temperature box and heater range.
  {
    const std::vector<Index> soil = soil_states(params);
    const Index rows = 2 * static_cast<Index>(soil.size()) + 2;
    net.g_t.kind = ConstraintKind::inequality_leq;
    net.g_t.map = BilinearMap(rows, dims);
    std::vector<Triplet> th;
    Vector c(rows);
    Index r = 0;
    for (Index i : soil) {
      const std::string name = net.state_labels[static_cast<std::size_t>(i)];
      th.emplace_back(r, i, -1.0);
      c[r++] = params.theta_soil_min;
      net.g_t.row_labels.push_back("g_t[" + name + ">=min]");
      th.emplace_back(r, i, 1.0);
      c[r++] = -params.theta_soil_max;
      net.g_t.row_labels.push_back("g_t[" + name + "<=max]");
    }
    net.g_t.map.set_affine(Block::theta, from_triplets(rows, dims.theta, th));
    net.g_t.map.set_affine(Block::ut, from_triplets(rows, 1, {Triplet(r, kDeltaTheta, -1.0), Triplet(r + 1, kDeltaTheta, 1.0)}));
    c[r] = 0.0;
    c[r + 1] = -params.dtheta_max;
    net.g_t.row_labels.push_back("g_t[dtheta>=0]");
    net.g_t.row_labels.push_back("g_t[dtheta<=max]");
    net.g_t.map.set_constant(std::move(c));
    net.g_t.degenerate_hold.assign(static_cast<std::size_t>(rows), std::nullopt);
  }

  // Objectives as powers [W]; the per-step price factor is applied on use.
  {
    std::vector<Triplet> xh, xt, y, zh, zt;
    for (int q = 0; q < n_pi; ++q) {
      xh.emplace_back(0, q, 1.0 / (params.rho_w * params.eta_pu));
      xt.emplace_back(0, q, params.c_w);
      y.emplace_back(q, mflow_index(params, q, 0), 1.0);
      zh.emplace_back(q, q, 1.0);
      zt.emplace_back(q, kDeltaTheta, 1.0);
    }
    const SparseMatrix ysel = from_triplets(n_pi, dims.mflow, y);
    net.objective_h.form = BilinearMap(1, dims);
    net.objective_h.form.add_term(
        BilinearTerm{from_triplets(1, n_pi, xh), ysel, from_triplets(n_pi, dims.zh, zh), Block::zh});
    net.objective_h.price_scaled = true;
    net.objective_t.form = BilinearMap(1, dims);
    net.objective_t.form.add_term(
        BilinearTerm{from_triplets(1, n_pi, xt), ysel, from_triplets(n_pi, dims.ut, zt), Block::ut});
    net.objective_t.price_scaled = true;
  }

  net.validate();
  return net;
}

std::pair<ObjectiveForm, ObjectiveForm> objective_coeffs(const CvNetwork& net, double price_eur_per_kwh,
                                                         double dt) {
  if (price_eur_per_kwh < 0) throw std::invalid_argument("price must be nonnegative");
  if (!(dt > 0)) throw std::invalid_argument("dt must be positive");
  return {instantiate(net.objective_h, price_eur_per_kwh, dt), instantiate(net.objective_t, price_eur_per_kwh, dt)};
}

double mixing_residual(std::span<const double> flows, std::span<const double> exit_temps, double theta_out) {
  if (flows.size() != exit_temps.size()) throw std::invalid_argument("flows and exit temperatures differ in length");
  double total = 0.0;
  double weighted = 0.0;
  for (std::size_t q = 0; q < flows.size(); ++q) {
    total += flows[q];
    weighted += flows[q] * exit_temps[q];
  }
  return total * theta_out - weighted;
}

double pump_power(const HeatfieldParams& p, double dp, double mdot) { return dp * mdot / (p.rho_w * p.eta_pu); }

double heater_power(const HeatfieldParams& p, double dtheta, double total_flow) {
  return p.c_w * dtheta * total_flow;
}

}  // namespace thmpc::heatfield
