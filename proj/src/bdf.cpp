#include "thmpc/bdf.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace thmpc {

namespace {

double step_cost(const ObjectiveForm& form, const Point& p, const Vector& mflow, double price, double dt) {
  const double v = form.value(p, mflow);
  return form.price_scaled ? price_factor(price, dt) * v : v;
}

double max_abs(const Vector& v) { return v.size() == 0 ? 0.0 : v.cwiseAbs().maxCoeff(); }

}  // namespace

BdfCoefficients bdf_coefficients(int order) {
  switch (order) {
    case 1: return {1.0, 1.0, 0.0};
    case 2: return {2.0 / 3.0, 4.0 / 3.0, 1.0 / 3.0};
    default: throw std::invalid_argument("only BDF orders 1 and 2 are implemented");
  }
}

DiscreteModel::DiscreteModel(const CvNetwork& net, double dt, int order) : net_(&net), dt_(dt), order_(order) {
  if (!(dt > 0)) throw std::invalid_argument("time step must be positive");
  bdf_coefficients(order);
}

int effective_order(const DiscreteModel& model, const StepHistory& history) {
  return (model.order() == 2 && history.theta_km2.has_value()) ? 2 : 1;
}

Vector step_residual(const DiscreteModel& model, const Point& point, const StepHistory& history, int order) {
  const CvNetwork& net = model.net();
  check_point(net, point);
  if (history.theta_km1.size() != net.dims.theta)
    throw DimensionError(Block::theta, net.dims.theta, history.theta_km1.size());
  const BdfCoefficients c = bdf_coefficients(order);
  Vector r = point.theta - c.a1 * history.theta_km1 - c.gamma * model.dt() * eval_dynamics_rhs(net, point);
  if (order == 2) {
    if (!history.theta_km2) throw MissingHistory("BDF2 step requires theta_{k-2}");
    if (history.theta_km2->size() != net.dims.theta)
      throw DimensionError(Block::theta, net.dims.theta, history.theta_km2->size());
    r += c.a2 * *history.theta_km2;
  }
  return r;
}

Vector step_residual(const DiscreteModel& model, const Point& point, const StepHistory& history) {
  return step_residual(model, point, history, model.order());
}

SparseMatrix step_jacobian(const DiscreteModel& model, const Point& point, Block b, int order) {
  const BdfCoefficients c = bdf_coefficients(order);
  SparseMatrix jac = jacobian_wrt_block(model.net(), point, Target::dynamics, b);
  jac *= -c.gamma * model.dt();
  if (b == Block::theta) {
    SparseMatrix eye(jac.rows(), jac.cols());
    eye.setIdentity();
    jac += eye;
  }
  jac.makeCompressed();
  return jac;
}

StepLayout::StepLayout(const Dimensions& dims) {
  theta = 0;
  mflow = theta + dims.theta;
  zh = mflow + dims.mflow;
  zt = zh + dims.zh;
  uh = zt + dims.zt;
  ut = uh + dims.uh;
  size = ut + dims.ut;
}

Index StepLayout::offset(Block b) const {
  switch (b) {
    case Block::theta: return theta;
    case Block::mflow: return mflow;
    case Block::zh: return zh;
    case Block::zt: return zt;
    case Block::uh: return uh;
    case Block::ut: return ut;
    case Block::d: break;
  }
  throw UnknownBlock("d (disturbances are data, not horizon variables)");
}

HorizonAssembly::HorizonAssembly(const DiscreteModel& model, int n_c, StepHistory history,
                                 std::span<const Vector> disturbances, std::span<const double> prices)
    : model_(&model), n_c_(n_c), history_(std::move(history)), layout_(model.net().dims) {
  const CvNetwork& net = model.net();
  if (n_c < 1) throw std::invalid_argument("control horizon must be >= 1");
  if (disturbances.size() < static_cast<std::size_t>(n_c) || prices.size() < static_cast<std::size_t>(n_c))
    throw ForecastTooShort("forecast shorter than the control horizon (" + std::to_string(n_c) + " steps)");
  if (history_.theta_km1.size() != net.dims.theta)
    throw DimensionError(Block::theta, net.dims.theta, history_.theta_km1.size());
  disturbances_.assign(disturbances.begin(), disturbances.begin() + n_c);
  prices_.assign(prices.begin(), prices.begin() + n_c);
  for (const Vector& d : disturbances_) {
    if (d.size() != net.dims.d) throw DimensionError(Block::d, net.dims.d, d.size());
  }
  eq_rows_per_step_ = net.dims.theta + net.f_h.rows() + net.f_t.rows() + net.dims.mflow;
  ineq_rows_per_step_ = net.g_h.rows() + net.g_t.rows();
}

int HorizonAssembly::order_at(int step) const {
  if (step == 0) return effective_order(*model_, history_);
  return model_->order();
}

std::vector<FamilyRange> HorizonAssembly::equality_families() const {
  const CvNetwork& net = this->net();
  std::vector<FamilyRange> out;
  Index off = 0;
  for (int k = 0; k < n_c_; ++k) {
    for (auto [fam, rows] : {std::pair{Family::dynamics, net.dims.theta}, std::pair{Family::f_h, net.f_h.rows()},
                             std::pair{Family::f_t, net.f_t.rows()}, std::pair{Family::mflow_link, net.dims.mflow}}) {
      out.push_back({fam, k, off, rows});
      off += rows;
    }
  }
  return out;
}

std::vector<FamilyRange> HorizonAssembly::inequality_families() const {
  const CvNetwork& net = this->net();
  std::vector<FamilyRange> out;
  Index off = 0;
  for (int k = 0; k < n_c_; ++k) {
    out.push_back({Family::g_h, k, off, net.g_h.rows()});
    off += net.g_h.rows();
    out.push_back({Family::g_t, k, off, net.g_t.rows()});
    off += net.g_t.rows();
  }
  return out;
}

StepHistory HorizonAssembly::history_at(const Vector& x, int step) const {
  const Index n = net().dims.theta;
  auto theta_of = [&](int s) -> Vector { return x.segment(s * layout_.size + layout_.theta, n); };
  if (step == 0) return history_;
  if (step == 1) return StepHistory{theta_of(0), history_.theta_km1};
  return StepHistory{theta_of(step - 1), theta_of(step - 2)};
}

Point HorizonAssembly::point_at(const Vector& x, int step) const {
  const Dimensions& dims = net().dims;
  const Index base = step * layout_.size;
  Point p;
  p.theta = x.segment(base + layout_.theta, dims.theta);
  p.zh = x.segment(base + layout_.zh, dims.zh);
  p.zt = x.segment(base + layout_.zt, dims.zt);
  p.uh = x.segment(base + layout_.uh, dims.uh);
  p.ut = x.segment(base + layout_.ut, dims.ut);
  p.d = disturbance(step);
  return p;
}

void HorizonAssembly::set_point(Vector& x, int step, const Point& p) const {
  const CvNetwork& net = this->net();
  check_point(net, p);
  if (x.size() != size()) x = Vector::Zero(size());
  const Index base = step * layout_.size;
  x.segment(base + layout_.theta, net.dims.theta) = p.theta;
  x.segment(base + layout_.mflow, net.dims.mflow) = net.mflow(p);
  x.segment(base + layout_.zh, net.dims.zh) = p.zh;
  x.segment(base + layout_.zt, net.dims.zt) = p.zt;
  x.segment(base + layout_.uh, net.dims.uh) = p.uh;
  x.segment(base + layout_.ut, net.dims.ut) = p.ut;
}

Vector HorizonAssembly::eval_equalities(const Vector& x) const {
  const CvNetwork& net = this->net();
  if (x.size() != size()) throw std::invalid_argument("stacked vector has wrong length");
  Vector r(equality_rows());
  Index off = 0;
  for (int k = 0; k < n_c_; ++k) {
    const Point p = point_at(x, k);
    const Vector mflow = net.mflow(p);
    const Vector dyn = step_residual(*model_, p, history_at(x, k), order_at(k));
    r.segment(off, dyn.size()) = dyn;
    off += dyn.size();
    const Vector fh = net.f_h.map.evaluate(p, mflow);
    r.segment(off, fh.size()) = fh;
    off += fh.size();
    const Vector ft = net.f_t.map.evaluate(p, mflow);
    r.segment(off, ft.size()) = ft;
    off += ft.size();
    r.segment(off, net.dims.mflow) = x.segment(k * layout_.size + layout_.mflow, net.dims.mflow) - mflow;
    off += net.dims.mflow;
  }
  return r;
}

Vector HorizonAssembly::eval_inequalities(const Vector& x) const {
  const CvNetwork& net = this->net();
  if (x.size() != size()) throw std::invalid_argument("stacked vector has wrong length");
  Vector r(inequality_rows());
  Index off = 0;
  for (int k = 0; k < n_c_; ++k) {
    const Point p = point_at(x, k);
    const Vector mflow = net.mflow(p);
    const Vector gh = net.g_h.map.evaluate(p, mflow);
    r.segment(off, gh.size()) = gh;
    off += gh.size();
    const Vector gt = net.g_t.map.evaluate(p, mflow);
    r.segment(off, gt.size()) = gt;
    off += gt.size();
  }
  return r;
}

std::pair<double, double> HorizonAssembly::objective(const Vector& x) const {
  const CvNetwork& net = this->net();
  double jh = 0.0;
  double jt = 0.0;
  for (int k = 0; k < n_c_; ++k) {
    const Point p = point_at(x, k);
    const Vector mflow = net.mflow(p);
    jh += step_cost(net.objective_h, p, mflow, price(k), model_->dt());
    jt += step_cost(net.objective_t, p, mflow, price(k), model_->dt());
  }
  return {jh, jt};
}

namespace {

// Magnitude used to scale the rows of a family: temperatures for the thermal
// families, pressures for the hydraulic ones and flows for the link rows.
double family_scale(const HorizonAssembly& h, const Vector& x, Family f, int step) {
  const Point p = h.point_at(x, step);
  switch (f) {
    case Family::dynamics:
    case Family::f_t:
    case Family::g_t: return 1.0 + std::max(max_abs(p.theta), max_abs(p.zt));
    case Family::f_h: return 1.0 + std::max(max_abs(p.zh), max_abs(p.uh));
    case Family::g_h:
    case Family::mflow_link: return 1.0 + max_abs(p.uh);
  }
  return 1.0;
}

}  // namespace

double scaled_equality_residual(const HorizonAssembly& h, const Vector& x) {
  const Vector r = h.eval_equalities(x);
  double worst = 0.0;
  for (const FamilyRange& f : h.equality_families()) {
    if (f.rows == 0) continue;
    worst = std::max(worst, max_abs(r.segment(f.offset, f.rows)) / family_scale(h, x, f.family, f.step));
  }
  return worst;
}

double scaled_inequality_violation(const HorizonAssembly& h, const Vector& x) {
  const Vector g = h.eval_inequalities(x);
  double worst = 0.0;
  for (const FamilyRange& f : h.inequality_families()) {
    if (f.rows == 0) continue;
    worst = std::max(worst, g.segment(f.offset, f.rows).maxCoeff() / family_scale(h, x, f.family, f.step));
  }
  return std::max(worst, 0.0);
}

}  // namespace thmpc
