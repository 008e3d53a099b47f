#include "thmpc/pdmpc.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <memory>
#include <optional>

#include <Eigen/SparseLU>

namespace thmpc::pd {

namespace {

using Clock = std::chrono::steady_clock;

double elapsed_ms(Clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

bool depends_on(const BilinearMap& m, Block b) {
  if (m.affine(b).nonZeros() > 0) return true;
  return std::any_of(m.terms().begin(), m.terms().end(), [b](const BilinearTerm& t) { return t.z_block == b; });
}

// The decomposition needs the hydraulic relations free of thermal variables
// and the thermal relations free of pressure losses.
void check_separable(const CvNetwork& net) {
  for (Block b : {Block::theta, Block::zt, Block::ut}) {
    for (const BilinearMap* m : {&net.f_h.map, &net.g_h.map, &net.objective_h.form}) {
      if (depends_on(*m, b))
        throw std::invalid_argument("hydraulic relation depends on thermal block " + std::string(block_name(b)));
    }
  }
  for (const BilinearMap* m : {&net.dynamics, &net.f_t.map, &net.g_t.map, &net.objective_t.form}) {
    if (depends_on(*m, Block::zh)) throw std::invalid_argument("thermal relation depends on the pressure block zh");
  }
}

double cost_factor(const HorizonAssembly& h, const ObjectiveForm& form, int step) {
  return form.price_scaled ? price_factor(h.price(step), h.model().dt()) : 1.0;
}

void append_block(std::vector<Triplet>& out, const SparseMatrix& m, Index row0, Index col0, double scale = 1.0) {
  for (Index j = 0; j < m.outerSize(); ++j)
    for (SparseMatrix::InnerIterator it(m, j); it; ++it)
      out.emplace_back(row0 + it.row(), col0 + it.col(), scale * it.value());
}

void append_dense_row(Vector& out, const SparseMatrix& row, Index col0, double scale) {
  for (Index j = 0; j < row.outerSize(); ++j)
    for (SparseMatrix::InnerIterator it(row, j); it; ++it) out[col0 + it.col()] += scale * it.value();
}

SparseMatrix from_triplets(Index rows, Index cols, const std::vector<Triplet>& t) {
  SparseMatrix m(rows, cols);
  m.setFromTriplets(t.begin(), t.end());
  m.makeCompressed();
  return m;
}

void check_plan_size(const HorizonAssembly& h, std::span<const Vector> uh) {
  if (uh.size() != static_cast<std::size_t>(h.horizon()))
    throw std::invalid_argument("flow plan length differs from the control horizon");
  for (const Vector& u : uh) {
    if (u.size() != h.net().dims.uh) throw DimensionError(Block::uh, h.net().dims.uh, u.size());
  }
}

// Point of one step with the given flows and all other unknowns zero.
Point base_point(const HorizonAssembly& h, int step, const Vector& uh) {
  Point p = Point::zeros(h.net().dims);
  p.uh = uh;
  p.d = h.disturbance(step);
  return p;
}

double max_abs(const Vector& v) { return v.size() == 0 ? 0.0 : v.cwiseAbs().maxCoeff(); }

std::vector<std::string> violated_rows(const HorizonAssembly& h, const Vector& x, double tol) {
  const Vector g = h.eval_inequalities(x);
  std::vector<std::string> out;
  const CvNetwork& net = h.net();
  for (const FamilyRange& f : h.inequality_families()) {
    const ConstraintSet& set = f.family == Family::g_h ? net.g_h : net.g_t;
    for (Index r = 0; r < f.rows; ++r) {
      if (g[f.offset + r] > tol) {
        const std::string label = static_cast<std::size_t>(r) < set.row_labels.size()
                                      ? set.row_labels[static_cast<std::size_t>(r)]
                                      : std::string(f.family == Family::g_h ? "g_h" : "g_t") + "[" + std::to_string(r) + "]";
        out.push_back("step " + std::to_string(f.step) + " " + label);
      }
    }
  }
  return out;
}

}  // namespace

void PdConfig::validate() const {
  if (!(alpha0 > 0)) throw std::invalid_argument("alpha0 must be positive");
  if (!(b0 > 0 && b0 < 1)) throw std::invalid_argument("b0 must lie in (0, 1)");
  if (!(b_shrink > 0 && b_shrink < 1)) throw std::invalid_argument("b_shrink must lie in (0, 1)");
  if (max_backtracks < 0) throw std::invalid_argument("max_backtracks must be nonnegative");
  if (i_max < 1) throw std::invalid_argument("i_max must be >= 1");
  if (n_c < 1) throw std::invalid_argument("n_c must be >= 1");
  if (!(eps_rel >= 0) || !(eps_abs >= 0)) throw std::invalid_argument("convergence tolerances must be nonnegative");
  if (!(feasibility_tolerance > 0)) throw std::invalid_argument("feasibility_tolerance must be positive");
}

std::string_view stop_name(PdStop s) {
  switch (s) {
    case PdStop::converged: return "converged";
    case PdStop::iteration_cap: return "iteration_cap";
    case PdStop::backtrack_exhausted: return "backtrack_exhausted";
  }
  return "unknown";
}

FlowBox flow_box(const CvNetwork& net) {
  const Index n = net.dims.uh;
  FlowBox box{Vector::Constant(n, -lp::kInf), Vector::Constant(n, lp::kInf)};
  const BilinearMap& m = net.g_h.map;
  if (m.rows() == 0) return box;
  const Eigen::SparseMatrix<double, Eigen::RowMajor> a = m.affine(Block::uh);
  std::vector<bool> other(static_cast<std::size_t>(m.rows()), false);
  for (Block b : kAllBlocks) {
    if (b == Block::uh) continue;
    const SparseMatrix& o = m.affine(b);
    for (Index j = 0; j < o.outerSize(); ++j)
      for (SparseMatrix::InnerIterator it(o, j); it; ++it) other[static_cast<std::size_t>(it.row())] = true;
  }
  for (const BilinearTerm& t : m.terms())
    for (Index j = 0; j < t.x_matrix.outerSize(); ++j)
      for (SparseMatrix::InnerIterator it(t.x_matrix, j); it; ++it) other[static_cast<std::size_t>(it.row())] = true;
  const Vector& c = m.constant();
  for (Index r = 0; r < m.rows(); ++r) {
    if (other[static_cast<std::size_t>(r)] || a.row(r).nonZeros() != 1) continue;
    Eigen::SparseMatrix<double, Eigen::RowMajor>::InnerIterator it(a, r);
    const double coef = it.value();
    const double cr = c.size() ? c[r] : 0.0;
    if (coef == 0.0) continue;
    const double bound = -cr / coef;
    if (coef > 0)
      box.upper[it.col()] = std::min(box.upper[it.col()], bound);
    else
      box.lower[it.col()] = std::max(box.lower[it.col()], bound);
  }
  return box;
}

namespace {

// Evaluation that also passes the independent residual check of the stacked
// horizon system.
Evaluation checked_evaluate(const HorizonAssembly& h, std::span<const Vector> uh, const PdConfig& config) {
  Evaluation e = evaluate(h, uh, config.lp_options, config.thermal_method);
  if (e.equality_residual > config.feasibility_tolerance || e.inequality_violation > config.feasibility_tolerance)
    throw ThermalInfeasible("iterate fails the horizon residual check (equality " +
                                std::to_string(e.equality_residual) + ", inequality " +
                                std::to_string(e.inequality_violation) + ")",
                            lp::LpStatus::numerical_failure);
  return e;
}

}  // namespace

FeasibleStart feasible_start(const HorizonAssembly& h, const plant::PlantState& state, const Plan& previous,
                             const PdConfig& config) {
  const CvNetwork& net = h.net();
  const int n_c = h.horizon();
  const FlowBox box = flow_box(net);

  auto simulate = [&](const Plan& plan) {
    std::vector<Vector> dist;
    for (int k = 0; k < n_c; ++k) dist.push_back(h.disturbance(k));
    const plant::Trajectory traj = plant::rollout(h.model(), state, plan, dist);
    Vector x = Vector::Zero(h.size());
    for (int k = 0; k < n_c; ++k) h.set_point(x, k, traj.steps[static_cast<std::size_t>(k)].point);
    return x;
  };
  auto acceptable = [&](const Vector& x) {
    return scaled_inequality_violation(h, x) <= config.feasibility_tolerance &&
           scaled_equality_residual(h, x) <= config.feasibility_tolerance;
  };

  if (previous.size() > 0) {
    Plan shifted;
    for (int k = 0; k < n_c; ++k) {
      const std::size_t src = std::min(static_cast<std::size_t>(k + 1), previous.size() - 1);
      shifted.uh.push_back(box.project(previous.uh[src]));
      shifted.ut.push_back(previous.ut[src]);
    }
    try {
      Vector x = simulate(shifted);
      if (acceptable(x)) return FeasibleStart{std::move(shifted), std::move(x), false};
    } catch (const plant::PlantError&) {
      // fall through to the safe plan
    }
  }

  Plan safe;
  for (int k = 0; k < n_c; ++k) {
    safe.uh.push_back(box.project(Vector::Constant(net.dims.uh, config.safe_flow)));
    safe.ut.push_back(Vector::Constant(net.dims.ut, config.safe_ut));
  }
  Vector x;
  std::string failure;
  std::vector<std::string> rows;
  try {
    x = simulate(safe);
    if (acceptable(x)) return FeasibleStart{std::move(safe), std::move(x), true};
    rows = violated_rows(h, x, 0.0);
    failure = "safe plan violates " + std::to_string(rows.size()) + " inequality rows";
  } catch (const plant::PlantError& e) {
    failure = std::string("safe plan could not be simulated: ") + e.what();
  }

  // Only the flows enter the decomposition; keep the first flow plan for
  // which the thermal LP finds heater inputs.
  std::vector<const std::vector<Vector>*> flow_plans;
  Plan shifted_flows;
  if (previous.size() > 0) {
    for (int k = 0; k < n_c; ++k)
      shifted_flows.uh.push_back(box.project(previous.uh[std::min(static_cast<std::size_t>(k + 1), previous.size() - 1)]));
    flow_plans.push_back(&shifted_flows.uh);
  }
  flow_plans.push_back(&safe.uh);
  for (const std::vector<Vector>* uh : flow_plans) {
    try {
      Evaluation e = checked_evaluate(h, *uh, config);
      return FeasibleStart{e.plan(), std::move(e.x), uh == &safe.uh};
    } catch (const SubproblemInfeasible&) {
      // next candidate
    }
  }
  throw SafePlanInfeasible(failure, std::move(rows));
}

HydraulicResult solve_hydraulic(const HorizonAssembly& h, std::span<const Vector> uh,
                                const lp::SolverOptions& options) {
  const CvNetwork& net = h.net();
  check_separable(net);
  check_plan_size(h, uh);
  const int n_c = h.horizon();
  const Index nz = net.dims.zh;
  const Index nf = net.f_h.rows();
  const Index ng = net.g_h.rows();

  std::vector<Triplet> ta, tg;
  Vector b(n_c * nf), g_rhs(n_c * ng), cost = Vector::Zero(n_c * nz);
  for (int k = 0; k < n_c; ++k) {
    const Point p0 = base_point(h, k, uh[static_cast<std::size_t>(k)]);
    const Vector m0 = net.mflow(p0);
    append_block(ta, jacobian_wrt_block(net, p0, Target::f_h, Block::zh), k * nf, k * nz);
    b.segment(k * nf, nf) = -net.f_h.map.evaluate(p0, m0);
    append_block(tg, jacobian_wrt_block(net, p0, Target::g_h, Block::zh), k * ng, k * nz);
    g_rhs.segment(k * ng, ng) = -net.g_h.map.evaluate(p0, m0);
    append_dense_row(cost, jacobian_wrt_block(net, p0, Target::objective_h, Block::zh), k * nz,
                     cost_factor(h, net.objective_h, k));
  }
  lp::LpProblem prob = lp::LpProblem::with_vars(n_c * nz);
  prob.cost = cost;
  prob.eq_matrix = from_triplets(n_c * nf, n_c * nz, ta);
  prob.eq_rhs = b;
  prob.ineq_matrix = from_triplets(n_c * ng, n_c * nz, tg);
  prob.ineq_rhs = g_rhs;

  HydraulicResult out;
  if (tg.empty() && n_c * nf >= n_c * nz) {
    // Rows not involving zh only restrict the fixed flows.
    const double tol = options.certify_tolerance;
    for (Index r = 0; r < g_rhs.size(); ++r) {
      if (-g_rhs[r] > tol * (1.0 + max_abs(uh[static_cast<std::size_t>(r / std::max<Index>(ng, 1))])))
        throw HydraulicInfeasible("flow plan violates g_h row " + std::to_string(r % ng) + " at step " +
                                      std::to_string(r / ng),
                                  lp::LpStatus::infeasible);
    }
    out.lp = lp::solve_equality_system_with_duals(prob.eq_matrix, b, cost, options.certify_tolerance);
    out.lp.dual_ineq = Vector::Zero(n_c * ng);
  } else {
    out.lp = lp::solve(prob, options);
  }
  if (!out.lp.optimal())
    throw HydraulicInfeasible("hydraulic subproblem " + std::string(lp::status_name(out.lp.status)) + ": " +
                                  out.lp.message,
                              out.lp.status);

  for (int k = 0; k < n_c; ++k) {
    out.zh.push_back(out.lp.primal.segment(k * nz, nz));
    out.dual_fh.push_back(out.lp.dual_eq.segment(k * nf, nf));
    out.dual_gh.push_back(out.lp.dual_ineq.segment(k * ng, ng));
    Point p = base_point(h, k, uh[static_cast<std::size_t>(k)]);
    p.zh = out.zh.back();
    out.cost += cost_factor(h, net.objective_h, k) * net.objective_h.value(p, net.mflow(p));
  }
  return out;
}

lp::LpProblem thermal_lp(const HorizonAssembly& h, std::span<const Vector> uh, std::span<const Vector> zh) {
  const CvNetwork& net = h.net();
  check_separable(net);
  check_plan_size(h, uh);
  if (zh.size() != uh.size()) throw std::invalid_argument("pressure plan length differs from the flow plan");
  const int n_c = h.horizon();
  const Dimensions& dims = net.dims;
  const Index nth = dims.theta, nzt = dims.zt, nut = dims.ut;
  const Index nv = nth + nzt + nut;
  const Index nft = net.f_t.rows(), ngt = net.g_t.rows();
  const Index ne = nth + nft;

  std::vector<Triplet> ta, tg;
  Vector b(n_c * ne), g_rhs(n_c * ngt), cost = Vector::Zero(n_c * nv);
  SparseMatrix eye(nth, nth);
  eye.setIdentity();
  for (int k = 0; k < n_c; ++k) {
    Point p0 = base_point(h, k, uh[static_cast<std::size_t>(k)]);
    p0.zh = zh[static_cast<std::size_t>(k)];
    const Vector m0 = net.mflow(p0);
    const int order = h.order_at(k);
    const BdfCoefficients c = bdf_coefficients(order);
    const Index row = k * ne, col = k * nv;
    const Index c_zt = col + nth, c_ut = col + nth + nzt;

    append_block(ta, step_jacobian(h.model(), p0, Block::theta, order), row, col);
    append_block(ta, step_jacobian(h.model(), p0, Block::zt, order), row, c_zt);
    append_block(ta, step_jacobian(h.model(), p0, Block::ut, order), row, c_ut);
    if (k >= 1) append_block(ta, eye, row, (k - 1) * nv, -c.a1);
    if (order == 2 && k >= 2) append_block(ta, eye, row, (k - 2) * nv, c.a2);

    // Constant part: the residual with every horizon unknown zero, so only
    // the supplied history survives.
    StepHistory hist0;
    const Vector zero = Vector::Zero(nth);
    if (k == 0) {
      hist0 = h.history();
    } else if (k == 1) {
      hist0 = StepHistory{zero, h.history().theta_km1};
    } else {
      hist0 = StepHistory{zero, zero};
    }
    if (order == 1) hist0.theta_km2.reset();
    b.segment(row, nth) = -step_residual(h.model(), p0, hist0, order);

    append_block(ta, jacobian_wrt_block(net, p0, Target::f_t, Block::theta), row + nth, col);
    append_block(ta, jacobian_wrt_block(net, p0, Target::f_t, Block::zt), row + nth, c_zt);
    append_block(ta, jacobian_wrt_block(net, p0, Target::f_t, Block::ut), row + nth, c_ut);
    b.segment(row + nth, nft) = -net.f_t.map.evaluate(p0, m0);

    append_block(tg, jacobian_wrt_block(net, p0, Target::g_t, Block::theta), k * ngt, col);
    append_block(tg, jacobian_wrt_block(net, p0, Target::g_t, Block::zt), k * ngt, c_zt);
    append_block(tg, jacobian_wrt_block(net, p0, Target::g_t, Block::ut), k * ngt, c_ut);
    g_rhs.segment(k * ngt, ngt) = -net.g_t.map.evaluate(p0, m0);

    const double f = cost_factor(h, net.objective_t, k);
    append_dense_row(cost, jacobian_wrt_block(net, p0, Target::objective_t, Block::theta), col, f);
    append_dense_row(cost, jacobian_wrt_block(net, p0, Target::objective_t, Block::zt), c_zt, f);
    append_dense_row(cost, jacobian_wrt_block(net, p0, Target::objective_t, Block::ut), c_ut, f);
  }
  lp::LpProblem prob = lp::LpProblem::with_vars(n_c * nv);
  prob.cost = cost;
  prob.eq_matrix = from_triplets(n_c * ne, n_c * nv, ta);
  prob.eq_rhs = b;
  prob.ineq_matrix = from_triplets(n_c * ngt, n_c * nv, tg);
  prob.ineq_rhs = g_rhs;
  return prob;
}

namespace {

// Block lower-triangular system with square diagonal blocks, one per step:
// the thermal equalities restricted to (theta, zt).
class StepElimination {
 public:
  StepElimination(const SparseMatrix& a, int steps, Index block) : steps_(steps), block_(block) {
    std::vector<std::vector<Triplet>> parts(static_cast<std::size_t>(steps * steps));
    for (Index j = 0; j < a.outerSize(); ++j) {
      for (SparseMatrix::InnerIterator it(a, j); it; ++it) {
        const Index k = it.row() / block, l = j / block;
        if (l > k) {
          ok_ = false;
          return;
        }
        parts[static_cast<std::size_t>(k * steps + l)].emplace_back(it.row() % block, j % block, it.value());
      }
    }
    below_.resize(static_cast<std::size_t>(steps));
    above_.resize(static_cast<std::size_t>(steps));
    for (int k = 0; k < steps; ++k) {
      for (int l = 0; l <= k; ++l) {
        const auto& t = parts[static_cast<std::size_t>(k * steps + l)];
        if (l < k && t.empty()) continue;
        SparseMatrix m = from_triplets(block, block, t);
        if (l == k) {
          diag_.emplace_back(std::make_unique<Eigen::SparseLU<SparseMatrix>>(m));
          if (diag_.back()->info() != Eigen::Success) ok_ = false;
        } else {
          above_[static_cast<std::size_t>(l)].emplace_back(k, SparseMatrix(m.transpose()));
          below_[static_cast<std::size_t>(k)].emplace_back(l, std::move(m));
        }
      }
    }
  }

  bool ok() const { return ok_; }

  Vector solve(const Vector& r) const {
    Vector x(r.size());
    for (int k = 0; k < steps_; ++k) {
      Vector rhs = r.segment(k * block_, block_);
      for (const auto& [l, m] : below_[static_cast<std::size_t>(k)]) rhs -= m * x.segment(l * block_, block_);
      x.segment(k * block_, block_) = diag_[static_cast<std::size_t>(k)]->solve(rhs);
    }
    return x;
  }

  Vector solve_transposed(const Vector& q) const {
    Vector y(q.size());
    for (int k = steps_ - 1; k >= 0; --k) {
      Vector rhs = q.segment(k * block_, block_);
      for (const auto& [l, mt] : above_[static_cast<std::size_t>(k)]) rhs -= mt * y.segment(l * block_, block_);
      y.segment(k * block_, block_) = diag_[static_cast<std::size_t>(k)]->transpose().solve(rhs);
    }
    return y;
  }

 private:
  int steps_;
  Index block_;
  bool ok_ = true;
  std::vector<std::unique_ptr<Eigen::SparseLU<SparseMatrix>>> diag_;
  std::vector<std::vector<std::pair<int, SparseMatrix>>> below_;  // (l, A_kl), l < k
  std::vector<std::vector<std::pair<int, SparseMatrix>>> above_;  // (k, A_kl'), k > l
};

SparseMatrix select_columns(const SparseMatrix& m, const std::vector<Index>& cols) {
  SparseMatrix out(m.rows(), static_cast<Index>(cols.size()));
  std::vector<Triplet> t;
  for (std::size_t c = 0; c < cols.size(); ++c)
    for (SparseMatrix::InnerIterator it(m, cols[c]); it; ++it) t.emplace_back(it.row(), static_cast<Index>(c), it.value());
  out.setFromTriplets(t.begin(), t.end());
  return out;
}

// Reduced-space solve of the thermal LP. Per step the equality rows determine
// (theta, zt) once ut is given, x_X = s0 + S u, so the LP is solved over u
// alone. The eliminated variables and the equality multipliers (from the
// adjoint system A_X' y = c_X + G_X' z - w_X) are recovered and certified on
// the full problem. Returns nullopt if the structure does not permit it.
std::optional<lp::LpSolution> solve_reduced(const lp::LpProblem& prob, int steps, Index nx, Index nu,
                                            const lp::SolverOptions& options) {
  const Index nv = nx + nu;
  if (prob.eq_matrix.rows() != steps * nx) return std::nullopt;
  std::vector<Index> xcols, ucols;
  for (int k = 0; k < steps; ++k) {
    for (Index i = 0; i < nx; ++i) xcols.push_back(k * nv + i);
    for (Index i = 0; i < nu; ++i) ucols.push_back(k * nv + nx + i);
  }
  const SparseMatrix ax = select_columns(prob.eq_matrix, xcols), au = select_columns(prob.eq_matrix, ucols);
  const StepElimination elim(ax, steps, nx);
  if (!elim.ok()) return std::nullopt;

  const Index n_x = static_cast<Index>(xcols.size()), n_u = static_cast<Index>(ucols.size());
  const Vector s0 = elim.solve(prob.eq_rhs);
  Eigen::MatrixXd sens(n_x, n_u);
  for (Index j = 0; j < n_u; ++j) sens.col(j) = -elim.solve(Vector(au.col(j)));
  if (!s0.allFinite() || !sens.allFinite()) return std::nullopt;

  Vector cx(n_x), cu(n_u), lu(n_u), uu(n_u);
  for (Index i = 0; i < n_x; ++i) cx[i] = prob.cost[xcols[static_cast<std::size_t>(i)]];
  for (Index i = 0; i < n_u; ++i) {
    const Index c = ucols[static_cast<std::size_t>(i)];
    cu[i] = prob.cost[c];
    lu[i] = prob.lower[c];
    uu[i] = prob.upper[c];
  }
  const SparseMatrix gx = select_columns(prob.ineq_matrix, xcols), gu = select_columns(prob.ineq_matrix, ucols);

  // rows: G_U + G_X S, then finite bounds of eliminated variables as rows
  std::vector<Index> lower_rows, upper_rows;
  for (Index i = 0; i < n_x; ++i) {
    const Index c = xcols[static_cast<std::size_t>(i)];
    if (std::isfinite(prob.lower[c])) lower_rows.push_back(i);
    if (std::isfinite(prob.upper[c])) upper_rows.push_back(i);
  }
  const Index mg = prob.ineq_matrix.rows();
  const Index m = mg + static_cast<Index>(lower_rows.size() + upper_rows.size());
  Eigen::MatrixXd g(m, n_u);
  Vector h(m);
  g.topRows(mg) = Eigen::MatrixXd(gu) + gx * sens;
  h.head(mg) = prob.ineq_rhs - gx * s0;
  Index r = mg;
  for (Index i : lower_rows) {
    g.row(r) = -sens.row(i);
    h[r++] = s0[i] - prob.lower[xcols[static_cast<std::size_t>(i)]];
  }
  for (Index i : upper_rows) {
    g.row(r) = sens.row(i);
    h[r++] = prob.upper[xcols[static_cast<std::size_t>(i)]] - s0[i];
  }
  // Sensitivities at round-off level would only distort the row scaling.
  const double drop = 1e-14 * (g.size() ? g.cwiseAbs().maxCoeff() : 0.0);
  std::vector<Triplet> t;
  for (Index j = 0; j < n_u; ++j)
    for (Index i = 0; i < m; ++i)
      if (std::abs(g(i, j)) > drop) t.emplace_back(i, j, g(i, j));

  lp::LpProblem reduced = lp::LpProblem::with_vars(n_u);
  reduced.cost = cu + sens.transpose() * cx;
  reduced.ineq_matrix = from_triplets(m, n_u, t);
  reduced.ineq_rhs = h;
  reduced.lower = lu;
  reduced.upper = uu;
  lp::LpSolution rs = lp::solve(reduced, options);

  lp::LpSolution full;
  full.status = rs.status;
  full.message = rs.message;
  full.iterations = rs.iterations;
  if (!rs.optimal()) return full;

  const Vector xx = s0 + sens * rs.primal;
  const Vector z = rs.dual_ineq.head(mg);
  Vector wx = Vector::Zero(n_x);
  r = mg;
  for (Index i : lower_rows) wx[i] += rs.dual_ineq[r++];
  for (Index i : upper_rows) wx[i] -= rs.dual_ineq[r++];
  const Vector y = elim.solve_transposed(cx + gx.transpose() * z - wx);

  full.primal = Vector::Zero(prob.num_vars());
  full.dual_bounds = Vector::Zero(prob.num_vars());
  for (Index i = 0; i < n_x; ++i) {
    full.primal[xcols[static_cast<std::size_t>(i)]] = xx[i];
    full.dual_bounds[xcols[static_cast<std::size_t>(i)]] = wx[i];
  }
  for (Index i = 0; i < n_u; ++i) {
    full.primal[ucols[static_cast<std::size_t>(i)]] = rs.primal[i];
    full.dual_bounds[ucols[static_cast<std::size_t>(i)]] = rs.dual_bounds[i];
  }
  full.dual_eq = y;
  full.dual_ineq = z;
  full.objective = prob.cost.dot(full.primal);
  full.kkt = lp::certify(prob, full);
  if (!(full.kkt.worst() <= options.certify_tolerance)) {
    full.status = lp::LpStatus::numerical_failure;
    full.message = "reduced solution fails the full certificate";
  }
  return full;
}

}  // namespace

std::string_view method_name(ThermalMethod m) {
  return m == ThermalMethod::reduced ? "reduced" : "full";
}

ThermalResult solve_thermal(const HorizonAssembly& h, std::span<const Vector> uh, std::span<const Vector> zh,
                            const lp::SolverOptions& options, ThermalMethod method) {
  const lp::LpProblem prob = thermal_lp(h, uh, zh);
  const CvNetwork& net = h.net();
  const Index nth = net.dims.theta, nzt = net.dims.zt, nut = net.dims.ut;
  const Index nv = nth + nzt + nut;
  const Index nft = net.f_t.rows(), ngt = net.g_t.rows();
  const Index ne = nth + nft;

  ThermalResult out;
  std::optional<lp::LpSolution> reduced;
  if (method == ThermalMethod::reduced && nft == nzt) reduced = solve_reduced(prob, h.horizon(), nth + nzt, nut, options);
  // A numerical failure of the reduced form is retried on the full problem.
  if (reduced && reduced->status != lp::LpStatus::numerical_failure) {
    out.lp = std::move(*reduced);
    out.method = ThermalMethod::reduced;
  } else {
    out.lp = lp::solve(prob, options);
    out.method = ThermalMethod::full;
  }
  if (!out.lp.optimal())
    throw ThermalInfeasible("thermal subproblem " + std::string(lp::status_name(out.lp.status)) + ": " +
                                out.lp.message,
                            out.lp.status);
  for (int k = 0; k < h.horizon(); ++k) {
    const Vector& x = out.lp.primal;
    out.theta.push_back(x.segment(k * nv, nth));
    out.zt.push_back(x.segment(k * nv + nth, nzt));
    out.ut.push_back(x.segment(k * nv + nth + nzt, nut));
    out.dual_dynamics.push_back(out.lp.dual_eq.segment(k * ne, nth));
    out.dual_ft.push_back(out.lp.dual_eq.segment(k * ne + nth, nft));
    out.dual_gt.push_back(out.lp.dual_ineq.segment(k * ngt, ngt));
    Point p = base_point(h, k, uh[static_cast<std::size_t>(k)]);
    p.zh = zh[static_cast<std::size_t>(k)];
    p.theta = out.theta.back();
    p.zt = out.zt.back();
    p.ut = out.ut.back();
    out.cost += cost_factor(h, net.objective_t, k) * net.objective_t.value(p, net.mflow(p));
  }
  return out;
}

Evaluation evaluate(const HorizonAssembly& h, std::span<const Vector> uh, const lp::SolverOptions& options,
                    ThermalMethod method) {
  Evaluation e;
  e.uh.assign(uh.begin(), uh.end());
  e.hydraulic = solve_hydraulic(h, uh, options);
  e.thermal = solve_thermal(h, uh, e.hydraulic.zh, options, method);
  e.x = Vector::Zero(h.size());
  for (int k = 0; k < h.horizon(); ++k) {
    const std::size_t s = static_cast<std::size_t>(k);
    Point p = base_point(h, k, uh[s]);
    p.theta = e.thermal.theta[s];
    p.zh = e.hydraulic.zh[s];
    p.zt = e.thermal.zt[s];
    p.ut = e.thermal.ut[s];
    h.set_point(e.x, k, p);
  }
  e.equality_residual = scaled_equality_residual(h, e.x);
  e.inequality_violation = scaled_inequality_violation(h, e.x);
  return e;
}

Vector subgradient(const HorizonAssembly& h, const Evaluation& e) {
  const CvNetwork& net = h.net();
  const Index nu = net.dims.uh;
  if (e.uh.size() != static_cast<std::size_t>(h.horizon()) || e.x.size() != h.size())
    throw std::invalid_argument("evaluation does not match the horizon");
  Vector s = Vector::Zero(h.horizon() * nu);
  for (int k = 0; k < h.horizon(); ++k) {
    const std::size_t i = static_cast<std::size_t>(k);
    const Point p = h.point_at(e.x, k);
    Eigen::RowVectorXd g = Eigen::RowVectorXd::Zero(nu);
    g += cost_factor(h, net.objective_h, k) *
         Eigen::RowVectorXd(jacobian_wrt_block(net, p, Target::objective_h, Block::uh).toDense());
    g += cost_factor(h, net.objective_t, k) *
         Eigen::RowVectorXd(jacobian_wrt_block(net, p, Target::objective_t, Block::uh).toDense());
    g -= e.hydraulic.dual_fh[i].transpose() * jacobian_wrt_block(net, p, Target::f_h, Block::uh);
    g += e.hydraulic.dual_gh[i].transpose() * jacobian_wrt_block(net, p, Target::g_h, Block::uh);
    g -= e.thermal.dual_dynamics[i].transpose() * step_jacobian(h.model(), p, Block::uh, h.order_at(k));
    g -= e.thermal.dual_ft[i].transpose() * jacobian_wrt_block(net, p, Target::f_t, Block::uh);
    g += e.thermal.dual_gt[i].transpose() * jacobian_wrt_block(net, p, Target::g_t, Block::uh);
    s.segment(k * nu, nu) = g.transpose();
  }
  return s;
}

namespace {

std::vector<Vector> unstack(const Vector& v, int n_c, Index nu) {
  std::vector<Vector> out;
  for (int k = 0; k < n_c; ++k) out.push_back(v.segment(k * nu, nu));
  return out;
}

Vector stack(const std::vector<Vector>& parts) {
  Index n = 0;
  for (const Vector& p : parts) n += p.size();
  Vector v(n);
  Index off = 0;
  for (const Vector& p : parts) {
    v.segment(off, p.size()) = p;
    off += p.size();
  }
  return v;
}


}  // namespace

PdResult pd_iterate(const HorizonAssembly& h, const PdConfig& config, std::vector<Vector> uh0) {
  config.validate();
  const CvNetwork& net = h.net();
  const Index nu = net.dims.uh;
  const int n_c = h.horizon();
  const FlowBox box = flow_box(net);
  for (Vector& u : uh0) u = box.project(u);

  PdResult out;
  auto t0 = Clock::now();
  Evaluation cur = checked_evaluate(h, uh0, config);
  out.best = cur;
  double best_j = cur.cost();
  double prev_j = 0.0;

  for (int i = 1;; ++i) {
    PdRecord rec;
    rec.iteration = i;
    rec.j_h = cur.hydraulic.cost;
    rec.j_t = cur.thermal.cost;
    rec.j = cur.cost();
    rec.uh = cur.uh;
    rec.equality_residual = cur.equality_residual;
    rec.inequality_violation = cur.inequality_violation;
    rec.kkt = std::max(cur.hydraulic.lp.kkt.worst(), cur.thermal.lp.kkt.worst());
    rec.feasible = cur.equality_residual <= config.feasibility_tolerance &&
                   cur.inequality_violation <= config.feasibility_tolerance;
    if (rec.feasible && rec.j < best_j) {
      best_j = rec.j;
      out.best = cur;
      out.best_iteration = i;
    }
    rec.best_j = best_j;
    rec.alpha = config.alpha0 / std::sqrt(static_cast<double>(i));

    if (i >= 2 && std::abs(rec.j - prev_j) <= config.eps_abs + config.eps_rel * std::abs(prev_j)) {
      out.trace.stop = PdStop::converged;
      rec.wall_ms = elapsed_ms(t0);
      out.trace.records.push_back(std::move(rec));
      break;
    }
    if (i >= config.i_max) {
      out.trace.stop = PdStop::iteration_cap;
      rec.wall_ms = elapsed_ms(t0);
      out.trace.records.push_back(std::move(rec));
      break;
    }

    const Vector s = subgradient(h, cur);
    rec.subgradient_norm = s.norm();
    const Vector u = stack(cur.uh);
    double scale = 1.0;
    bool accepted = false;
    Evaluation next;
    while (true) {
      std::vector<Vector> trial = unstack(u - scale * rec.alpha * s, n_c, nu);
      for (Vector& t : trial) t = box.project(t);
      try {
        next = checked_evaluate(h, trial, config);
        accepted = true;
        break;
      } catch (const SubproblemInfeasible&) {
        if (rec.backtracks >= config.max_backtracks) break;
        ++rec.backtracks;
        scale = rec.backtracks == 1 ? config.b0 : scale * config.b_shrink;
      }
    }
    rec.step_scale = scale;
    rec.wall_ms = elapsed_ms(t0);
    out.trace.records.push_back(std::move(rec));
    if (!accepted) {
      out.trace.stop = PdStop::backtrack_exhausted;
      break;
    }
    prev_j = cur.cost();
    cur = std::move(next);
    t0 = Clock::now();
  }
  return out;
}

PlanChoice pd_plan(const HorizonAssembly& h, const plant::PlantState& state, const Plan& previous,
                   const PdConfig& config) {
  const FeasibleStart start = feasible_start(h, state, previous, config);
  PdResult r = pd_iterate(h, config, start.plan.uh);
  PlanChoice out;
  out.plan = r.best.plan();
  out.trace = std::move(r.trace);
  out.best_iteration = r.best_iteration;
  out.predicted_cost = r.best.cost();
  out.used_safe_plan = start.used_safe_plan;
  return out;
}

ClosedLoopResult closed_loop(const ClosedLoopInput& input) {
  if (input.model == nullptr) throw std::invalid_argument("closed loop needs a model");
  input.config.validate();
  const DiscreteModel& model = *input.model;
  const int n_c = input.config.n_c;
  const std::size_t need = static_cast<std::size_t>(input.sim_steps + n_c);
  if (input.disturbances.size() < need || input.prices.size() < need)
    throw ForecastTooShort("scenario series shorter than sim_steps + n_c (" + std::to_string(need) + ")");

  const Planner planner = input.planner ? input.planner : Planner([&](const HorizonAssembly& h,
                                                                      const plant::PlantState& s, const Plan& prev) {
    return pd_plan(h, s, prev, input.config);
  });
  ClosedLoopResult out;
  plant::PlantState state = input.initial;
  Plan previous;
  const std::span<const Vector> dist(input.disturbances);
  const std::span<const double> price(input.prices);
  using Cause = ControllerError::Cause;
  for (int k = 0; k < input.sim_steps; ++k) {
    const auto t0 = Clock::now();
    ClosedLoopStep rec;
    rec.step = k;
    rec.time_s = (k + 1) * model.dt();
    const auto fail = [k](const std::exception& e, Cause cause) {
      return ControllerError("step " + std::to_string(k) + ": " + e.what(), k, cause);
    };
    try {
      const HorizonAssembly h(model, n_c, state.history(), dist.subspan(static_cast<std::size_t>(k)),
                              price.subspan(static_cast<std::size_t>(k)));
      PlanChoice choice = planner(h, state, previous);
      rec.used_safe_plan = choice.used_safe_plan;
      rec.trace = std::move(choice.trace);
      rec.best_iteration = choice.best_iteration;
      rec.predicted_cost = choice.predicted_cost;
      previous = std::move(choice.plan);
      const plant::ControlSequence first{{previous.uh.front()}, {previous.ut.front()}};
      plant::Trajectory applied = plant::rollout(model, state, first, {input.disturbances[static_cast<std::size_t>(k)]},
                                                 {input.prices[static_cast<std::size_t>(k)]});
      rec.applied = std::move(applied.steps.front());
      state = std::move(applied.final_state);
    } catch (const SafePlanInfeasible& e) {
      throw fail(e, Cause::infeasible);
    } catch (const SubproblemInfeasible& e) {
      throw fail(e, e.status() == lp::LpStatus::infeasible ? Cause::infeasible : Cause::solver_failure);
    } catch (const plant::PlantError& e) {
      throw fail(e, Cause::solver_failure);
    }
    rec.wall_ms = elapsed_ms(t0);
    out.steps.push_back(std::move(rec));
    if (input.on_step) input.on_step(out.steps.back());
  }
  out.final_state = std::move(state);
  return out;
}

}  // namespace thmpc::pd
