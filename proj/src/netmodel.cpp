#include "thmpc/netmodel.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace thmpc {

namespace {

constexpr std::size_t slot(Block b) { return static_cast<std::size_t>(b); }

SparseMatrix empty_matrix(Index rows, Index cols) {
  SparseMatrix m(rows, cols);
  m.makeCompressed();
  return m;
}

}  // namespace

std::string_view block_name(Block b) {
  switch (b) {
    case Block::theta: return "theta";
    case Block::zh: return "zh";
    case Block::zt: return "zt";
    case Block::uh: return "uh";
    case Block::ut: return "ut";
    case Block::d: return "d";
    case Block::mflow: return "mflow";
  }
  return "?";
}

Block parse_block(std::string_view name) {
  for (Block b : kAllBlocks) {
    if (block_name(b) == name) return b;
  }
  throw UnknownBlock(std::string(name));
}

DimensionError::DimensionError(Block block, Index expected, Index got)
    : std::invalid_argument([&] {
        std::ostringstream os;
        os << "dimension mismatch in block '" << block_name(block) << "': expected " << expected
           << ", got " << got;
        return os.str();
      }()),
      block_(block) {}

Index Dimensions::size(Block b) const {
  switch (b) {
    case Block::theta: return theta;
    case Block::zh: return zh;
    case Block::zt: return zt;
    case Block::uh: return uh;
    case Block::ut: return ut;
    case Block::d: return d;
    case Block::mflow: return mflow;
  }
  return 0;
}

Point Point::zeros(const Dimensions& dims) {
  Point p;
  p.theta = Vector::Zero(dims.theta);
  p.zh = Vector::Zero(dims.zh);
  p.zt = Vector::Zero(dims.zt);
  p.uh = Vector::Zero(dims.uh);
  p.ut = Vector::Zero(dims.ut);
  p.d = Vector::Zero(dims.d);
  return p;
}

const Vector& Point::get(Block b) const {
  switch (b) {
    case Block::theta: return theta;
    case Block::zh: return zh;
    case Block::zt: return zt;
    case Block::uh: return uh;
    case Block::ut: return ut;
    case Block::d: return d;
    case Block::mflow: break;
  }
  throw UnknownBlock("mflow (derived, not stored in a point)");
}

Vector& Point::get(Block b) { return const_cast<Vector&>(static_cast<const Point&>(*this).get(b)); }

BilinearMap::BilinearMap(Index rows, const Dimensions& dims)
    : rows_(rows), dims_(dims), constant_(Vector::Zero(rows)) {
  for (Block b : kAllBlocks) affine_[slot(b)] = empty_matrix(rows, dims.size(b));
}

void BilinearMap::set_affine(Block b, SparseMatrix m) {
  if (m.rows() != rows_) throw DimensionError(b, rows_, m.rows());
  if (m.cols() != dims_.size(b)) throw DimensionError(b, dims_.size(b), m.cols());
  m.makeCompressed();
  affine_[slot(b)] = std::move(m);
}

void BilinearMap::set_constant(Vector c) {
  if (c.size() != rows_) throw std::invalid_argument("constant vector has wrong length");
  constant_ = std::move(c);
}

void BilinearMap::add_term(BilinearTerm term) {
  if (term.x_matrix.rows() != rows_)
    throw std::invalid_argument("bilinear term: X rows differ from map rows");
  if (term.x_matrix.cols() != term.y_matrix.rows() || term.y_matrix.rows() != term.z_matrix.rows())
    throw std::invalid_argument("bilinear term: X columns, Y rows and Z rows must agree");
  if (term.y_matrix.cols() != dims_.mflow) throw DimensionError(Block::mflow, dims_.mflow, term.y_matrix.cols());
  if (term.z_matrix.cols() != dims_.size(term.z_block))
    throw DimensionError(term.z_block, dims_.size(term.z_block), term.z_matrix.cols());
  term.x_matrix.makeCompressed();
  term.y_matrix.makeCompressed();
  term.z_matrix.makeCompressed();
  terms_.push_back(std::move(term));
}

const Vector& BilinearMap::block_value(const Point& p, const Vector& mflow, Block b) const {
  return b == Block::mflow ? mflow : p.get(b);
}

Vector BilinearMap::evaluate(const Point& p, const Vector& mflow) const {
  Vector r = constant_;
  for (Block b : kAllBlocks) {
    const SparseMatrix& m = affine_[slot(b)];
    if (m.nonZeros() > 0) r += m * block_value(p, mflow, b);
  }
  for (const BilinearTerm& t : terms_) {
    const Vector ym = t.y_matrix * mflow;
    const Vector zv = t.z_matrix * block_value(p, mflow, t.z_block);
    r += t.x_matrix * ym.cwiseProduct(zv);
  }
  return r;
}

SparseMatrix BilinearMap::jacobian(const Point& p, const Vector& mflow,
                                   const SparseMatrix& mflow_map, Block b) const {
  SparseMatrix jac = affine_[slot(b)];
  if (b == Block::uh && affine_[slot(Block::mflow)].nonZeros() > 0)
    jac += SparseMatrix(affine_[slot(Block::mflow)] * mflow_map);

  for (const BilinearTerm& t : terms_) {
    const Vector ym = t.y_matrix * mflow;
    if (b == Block::mflow || b == Block::uh) {
      const Vector zv = t.z_matrix * block_value(p, mflow, t.z_block);
      SparseMatrix d_mflow = t.x_matrix * zv.asDiagonal() * t.y_matrix;
      if (t.z_block == Block::mflow) d_mflow += SparseMatrix(t.x_matrix * ym.asDiagonal() * t.z_matrix);
      if (b == Block::mflow) {
        jac += d_mflow;
      } else {
        jac += SparseMatrix(d_mflow * mflow_map);
      }
    }
    if (t.z_block == b && b != Block::mflow) {
      jac += SparseMatrix(t.x_matrix * ym.asDiagonal() * t.z_matrix);
    }
  }
  jac.makeCompressed();
  return jac;
}

double ObjectiveForm::value(const Point& p, const Vector& mflow) const {
  return form.evaluate(p, mflow).sum();
}

ObjectiveForm instantiate(const ObjectiveForm& base, double price_eur_per_kwh, double dt) {
  if (!base.price_scaled) return base;
  const double f = price_factor(price_eur_per_kwh, dt);
  ObjectiveForm out;
  out.price_scaled = false;
  BilinearMap scaled(base.form.rows(), base.form.dims());
  for (Block b : kAllBlocks) scaled.set_affine(b, base.form.affine(b) * f);
  scaled.set_constant(base.form.constant() * f);
  for (BilinearTerm t : base.form.terms()) {
    t.x_matrix *= f;
    scaled.add_term(std::move(t));
  }
  out.form = std::move(scaled);
  return out;
}

std::string_view target_name(Target t) {
  switch (t) {
    case Target::dynamics: return "dynamics";
    case Target::f_h: return "f_h";
    case Target::f_t: return "f_t";
    case Target::g_h: return "g_h";
    case Target::g_t: return "g_t";
    case Target::objective_h: return "objective_h";
    case Target::objective_t: return "objective_t";
  }
  return "?";
}

const BilinearMap& target_map(const CvNetwork& net, Target t) {
  switch (t) {
    case Target::dynamics: return net.dynamics;
    case Target::f_h: return net.f_h.map;
    case Target::f_t: return net.f_t.map;
    case Target::g_h: return net.g_h.map;
    case Target::g_t: return net.g_t.map;
    case Target::objective_h: return net.objective_h.form;
    case Target::objective_t: return net.objective_t.form;
  }
  throw std::invalid_argument("unknown target");
}

void check_point(const CvNetwork& net, const Point& p) {
  for (Block b : kAllBlocks) {
    if (b == Block::mflow) continue;
    if (p.get(b).size() != net.dims.size(b)) throw DimensionError(b, net.dims.size(b), p.get(b).size());
  }
}

Vector eval_constraints(const CvNetwork& net, const Point& p, Target which) {
  check_point(net, p);
  return target_map(net, which).evaluate(p, net.mflow(p));
}

Vector eval_dynamics_rhs(const CvNetwork& net, const Point& p) {
  return eval_constraints(net, p, Target::dynamics);
}

SparseMatrix jacobian_wrt_block(const CvNetwork& net, const Point& p, Target target, Block b) {
  check_point(net, p);
  return target_map(net, target).jacobian(p, net.mflow(p), net.mflow_map, b);
}

double capacity_symmetry_defect(const CvNetwork& net) {
  const SparseMatrix& a = net.a_matrix();
  const SparseMatrix at = a.transpose();
  double worst = 0.0;
  for (Index j = 0; j < a.outerSize(); ++j) {
    for (SparseMatrix::InnerIterator it(a, j); it; ++it) {
      const Index i = it.row();
      if (i == j) continue;
      const double lhs = net.capacity[i] * it.value();
      const double rhs = net.capacity[j] * at.coeff(i, j);
      const double scale = std::max({std::abs(lhs), std::abs(rhs), 1e-300});
      worst = std::max(worst, std::abs(lhs - rhs) / scale);
    }
  }
  return worst;
}

void CvNetwork::validate() const {
  auto fail = [](const std::string& what) { throw std::invalid_argument("invalid CvNetwork: " + what); };
  const SparseMatrix& a = a_matrix();
  if (a.rows() != dims.theta || a.cols() != dims.theta) fail("A must be square with n_theta rows");
  if (dynamics.rows() != dims.theta) fail("dynamics must have n_theta rows");
  if (capacity.size() != dims.theta) fail("capacity vector length differs from n_theta");
  if ((capacity.array() <= 0.0).any()) fail("capacities must be positive");
  if (mflow_map.rows() != dims.mflow || mflow_map.cols() != dims.uh)
    fail("mflow_map must be n_mflow x n_uh");
  {
    std::vector<int> per_row(static_cast<std::size_t>(dims.mflow), 0);
    for (Index j = 0; j < mflow_map.outerSize(); ++j) {
      for (SparseMatrix::InnerIterator it(mflow_map, j); it; ++it) {
        if (it.value() == 0.0) continue;
        if (it.value() != 1.0) fail("mflow_map entries must be 0 or 1");
        ++per_row[static_cast<std::size_t>(it.row())];
      }
    }
    for (int n : per_row) {
      if (n != 1) fail("every CV mass flow must equal exactly one pump flow");
    }
  }
  if (f_h.kind != ConstraintKind::equality || f_t.kind != ConstraintKind::equality)
    fail("f_h and f_t must be equality sets");
  if (g_h.kind != ConstraintKind::inequality_leq || g_t.kind != ConstraintKind::inequality_leq)
    fail("g_h and g_t must be inequality sets");
  for (const BilinearMap* m :
       {&dynamics, &f_h.map, &f_t.map, &g_h.map, &g_t.map, &objective_h.form, &objective_t.form}) {
    if (!(m->dims() == dims)) fail("constraint block dimensions differ from the network");
  }
  if (objective_h.form.rows() != 1 || objective_t.form.rows() != 1) fail("objectives must be single-row forms");
  if (capacity_symmetry_defect(*this) > 1e-12) fail("capacity-weighted coupling symmetry violated");
}

}  // namespace thmpc
