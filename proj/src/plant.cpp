#include "thmpc/plant.hpp"

#include <Eigen/SparseLU>

#include <algorithm>
#include <cmath>
#include <string>

namespace thmpc::plant {

namespace {

double max_abs(const Vector& v) { return v.size() == 0 ? 0.0 : v.cwiseAbs().maxCoeff(); }

void append_block(std::vector<Triplet>& out, const SparseMatrix& m, Index row0, Index col0) {
  for (Index j = 0; j < m.outerSize(); ++j)
    for (SparseMatrix::InnerIterator it(m, j); it; ++it) out.emplace_back(row0 + it.row(), col0 + it.col(), it.value());
}

std::string where(int step_index) {
  return step_index >= 0 ? " at step " + std::to_string(step_index) : std::string();
}

/// Square system of one plant step in the unknowns [theta; zh; zt].
class StepSystem {
 public:
  StepSystem(const DiscreteModel& model, const PlantState& state, const Vector& uh, const Vector& ut,
             const Vector& d)
      : model_(model), net_(model.net()), state_(state), order_(effective_order(model, state.history())) {
    const Dimensions& dims = net_.dims;
    if (uh.size() != dims.uh) throw DimensionError(Block::uh, dims.uh, uh.size());
    if (ut.size() != dims.ut) throw DimensionError(Block::ut, dims.ut, ut.size());
    if (d.size() != dims.d) throw DimensionError(Block::d, dims.d, d.size());
    if (state.zh.size() != dims.zh) throw DimensionError(Block::zh, dims.zh, state.zh.size());
    if (state.zt.size() != dims.zt) throw DimensionError(Block::zt, dims.zt, state.zt.size());
    base_ = Point::zeros(dims);
    base_.uh = uh;
    base_.ut = ut;
    base_.d = d;
    n_theta_ = dims.theta;
    n_zh_ = dims.zh;
    n_zt_ = dims.zt;
    find_degenerate_rows();
  }

  Index size() const { return n_theta_ + n_zh_ + n_zt_; }
  const std::vector<Index>& held_rows() const { return held_; }

  Point point(const Vector& y) const {
    Point p = base_;
    p.theta = y.head(n_theta_);
    p.zh = y.segment(n_theta_, n_zh_);
    p.zt = y.tail(n_zt_);
    return p;
  }

  Vector pack(const Vector& theta, const Vector& zh, const Vector& zt) const {
    Vector y(size());
    y << theta, zh, zt;
    return y;
  }

  Vector residual(const Vector& y) const {
    const Point p = point(y);
    const Vector mflow = net_.mflow(p);
    Vector f(size());
    f.head(n_theta_) = step_residual(model_, p, state_.history(), order_);
    f.segment(n_theta_, n_zh_) = net_.f_h.map.evaluate(p, mflow);
    Vector ft = net_.f_t.map.evaluate(p, mflow);
    for (Index r : held_) {
      const VarRef v = *net_.f_t.degenerate_hold[static_cast<std::size_t>(r)];
      ft[r] = p.get(v.block)[v.index] - held_value(v);
    }
    f.tail(n_zt_) = ft;
    return f;
  }

  SparseMatrix jacobian(const Vector& y) const {
    const Point p = point(y);
    std::vector<Triplet> t;
    const Index c_zh = n_theta_;
    const Index c_zt = n_theta_ + n_zh_;
    append_block(t, step_jacobian(model_, p, Block::theta, order_), 0, 0);
    append_block(t, step_jacobian(model_, p, Block::zh, order_), 0, c_zh);
    append_block(t, step_jacobian(model_, p, Block::zt, order_), 0, c_zt);
    const Index r_fh = n_theta_;
    append_block(t, jacobian_wrt_block(net_, p, Target::f_h, Block::theta), r_fh, 0);
    append_block(t, jacobian_wrt_block(net_, p, Target::f_h, Block::zh), r_fh, c_zh);
    append_block(t, jacobian_wrt_block(net_, p, Target::f_h, Block::zt), r_fh, c_zt);
    const Index r_ft = n_theta_ + n_zh_;
    std::vector<Triplet> ft;
    append_block(ft, jacobian_wrt_block(net_, p, Target::f_t, Block::theta), 0, 0);
    append_block(ft, jacobian_wrt_block(net_, p, Target::f_t, Block::zh), 0, c_zh);
    append_block(ft, jacobian_wrt_block(net_, p, Target::f_t, Block::zt), 0, c_zt);
    for (const Triplet& e : ft) {
      if (std::find(held_.begin(), held_.end(), e.row()) == held_.end())
        t.emplace_back(r_ft + e.row(), e.col(), e.value());
    }
    for (Index r : held_) {
      const VarRef v = *net_.f_t.degenerate_hold[static_cast<std::size_t>(r)];
      t.emplace_back(r_ft + r, column_of(v), 1.0);
    }
    SparseMatrix j(size(), size());
    j.setFromTriplets(t.begin(), t.end());
    j.makeCompressed();
    return j;
  }

  double scaled_norm(const Vector& f, const Vector& y) const {
    const double thermal = 1.0 + std::max(max_abs(y.head(n_theta_)), max_abs(y.tail(n_zt_)));
    const double hydraulic = 1.0 + std::max(max_abs(y.segment(n_theta_, n_zh_)), max_abs(base_.uh));
    return std::max({max_abs(f.head(n_theta_)) / thermal, max_abs(f.segment(n_theta_, n_zh_)) / hydraulic,
                     max_abs(f.tail(n_zt_)) / thermal});
  }

 private:
  Index column_of(const VarRef& v) const {
    switch (v.block) {
      case Block::theta: return v.index;
      case Block::zh: return n_theta_ + v.index;
      case Block::zt: return n_theta_ + n_zh_ + v.index;
      default: throw std::invalid_argument("held variable must be an unknown of the step");
    }
  }

  double held_value(const VarRef& v) const {
    switch (v.block) {
      case Block::theta: return state_.theta[v.index];
      case Block::zh: return state_.zh[v.index];
      case Block::zt: return state_.zt[v.index];
      default: throw std::invalid_argument("held variable must be an unknown of the step");
    }
  }

  // A row whose derivative w.r.t. every unknown vanishes for the given inputs
  // (independent of the unknowns, since flows are fixed) is replaced by its hold.
  void find_degenerate_rows() {
    if (net_.f_t.degenerate_hold.empty()) return;
    Point p = base_;
    p.theta = state_.theta;
    p.zh = state_.zh;
    p.zt = state_.zt;
    Vector row_norm = Vector::Zero(net_.f_t.rows());
    for (Block b : {Block::theta, Block::zh, Block::zt}) {
      const SparseMatrix j = jacobian_wrt_block(net_, p, Target::f_t, b);
      for (Index c = 0; c < j.outerSize(); ++c)
        for (SparseMatrix::InnerIterator it(j, c); it; ++it)
          row_norm[it.row()] = std::max(row_norm[it.row()], std::abs(it.value()));
    }
    for (Index r = 0; r < net_.f_t.rows(); ++r) {
      if (row_norm[r] == 0.0 && net_.f_t.degenerate_hold[static_cast<std::size_t>(r)]) held_.push_back(r);
    }
  }

  const DiscreteModel& model_;
  const CvNetwork& net_;
  const PlantState& state_;
  int order_;
  Point base_;
  Index n_theta_ = 0, n_zh_ = 0, n_zt_ = 0;
  std::vector<Index> held_;
};

}  // namespace

PlantState initial_state(const CvNetwork& net, const Vector& theta0) {
  if (theta0.size() != net.dims.theta) throw DimensionError(Block::theta, net.dims.theta, theta0.size());
  PlantState s;
  s.theta = theta0;
  s.zh = Vector::Zero(net.dims.zh);
  s.zt = Vector::Constant(net.dims.zt, theta0.mean());
  return s;
}

StepResult step(const DiscreteModel& model, const PlantState& state, const Vector& uh, const Vector& ut,
                const Vector& d, const NewtonOptions& options, int step_index) {
  StepSystem sys(model, state, uh, ut, d);
  Vector y = sys.pack(state.theta, state.zh, state.zt);
  Vector f = sys.residual(y);
  Eigen::SparseLU<SparseMatrix, Eigen::COLAMDOrdering<int>> lu;
  bool analyzed = false;

  int iterations = 0;
  double scaled = sys.scaled_norm(f, y);
  // At least one Newton update is always taken.
  while (iterations == 0 || scaled > options.tolerance) {
    if (iterations >= options.max_iterations) {
      throw NonConvergence("plant Newton iteration did not converge" + where(step_index) + " (scaled residual " +
                               std::to_string(scaled) + ")",
                           step_index, scaled, iterations);
    }
    const SparseMatrix jac = sys.jacobian(y);
    if (!analyzed) {
      lu.analyzePattern(jac);
      analyzed = true;
    }
    lu.factorize(jac);
    if (lu.info() != Eigen::Success) {
      throw SingularJacobian("singular plant Jacobian" + where(step_index), step_index);
    }
    const Vector dy = lu.solve(-f);
    if (!dy.allFinite()) throw SingularJacobian("singular plant Jacobian" + where(step_index), step_index);

    const double norm0 = f.norm();
    double t = 1.0;
    Vector y_trial = y + dy;
    Vector f_trial = sys.residual(y_trial);
    while (f_trial.norm() > (1.0 - options.armijo * t) * norm0 && norm0 > 0.0) {
      t *= options.damping_factor;
      if (t < options.min_damping) break;
      y_trial = y + t * dy;
      f_trial = sys.residual(y_trial);
    }
    y = std::move(y_trial);
    f = std::move(f_trial);
    ++iterations;
    scaled = sys.scaled_norm(f, y);
  }

  StepResult out;
  out.point = sys.point(y);
  out.newton_iterations = iterations;
  out.residual = scaled;
  out.held_rows = sys.held_rows();
  return out;
}

PlantState advance(const PlantState& state, const StepResult& result) {
  PlantState next;
  next.theta = result.point.theta;
  next.theta_prev = state.theta;
  next.zh = result.point.zh;
  next.zt = result.point.zt;
  return next;
}

Trajectory rollout(const DiscreteModel& model, const PlantState& initial, const ControlSequence& controls,
                   const std::vector<Vector>& disturbances, const std::vector<double>& prices,
                   const NewtonOptions& options) {
  if (controls.uh.size() != controls.ut.size() || controls.uh.size() != disturbances.size())
    throw std::invalid_argument("rollout sequences must have equal length");
  if (!prices.empty() && prices.size() != disturbances.size())
    throw std::invalid_argument("price sequence length differs from the disturbance sequence");
  const CvNetwork& net = model.net();
  Trajectory traj;
  PlantState state = initial;
  traj.steps.reserve(controls.size());
  for (std::size_t k = 0; k < controls.size(); ++k) {
    StepResult r = step(model, state, controls.uh[k], controls.ut[k], disturbances[k], options, static_cast<int>(k));
    StepRecord rec;
    const Vector mflow = net.mflow(r.point);
    rec.power_h = net.objective_h.form.evaluate(r.point, mflow).sum();
    rec.power_t = net.objective_t.form.evaluate(r.point, mflow).sum();
    if (!prices.empty()) {
      const double f = price_factor(prices[k], model.dt());
      rec.cost_h = net.objective_h.price_scaled ? f * rec.power_h : rec.power_h;
      rec.cost_t = net.objective_t.price_scaled ? f * rec.power_t : rec.power_t;
    }
    rec.newton_iterations = r.newton_iterations;
    rec.residual = r.residual;
    state = advance(state, r);
    rec.point = std::move(r.point);
    traj.steps.push_back(std::move(rec));
  }
  traj.final_state = std::move(state);
  return traj;
}

}  // namespace thmpc::plant
