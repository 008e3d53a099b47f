#include "thmpc/lp.hpp"

#include <Eigen/OrderingMethods>
#include <Eigen/SparseCholesky>
#include <Eigen/SparseLU>

#include <algorithm>
#include <cmath>
#include <functional>
#include <iomanip>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <vector>

namespace thmpc::lp {

namespace {

using RowMajor = Eigen::SparseMatrix<double, Eigen::RowMajor>;
using Triplet = Eigen::Triplet<double>;

double inf_norm(const Vector& v) { return v.size() == 0 ? 0.0 : v.lpNorm<Eigen::Infinity>(); }

bool all_finite(const SparseMatrix& m) {
  for (Index j = 0; j < m.outerSize(); ++j)
    for (SparseMatrix::InnerIterator it(m, j); it; ++it)
      if (!std::isfinite(it.value())) return false;
  return true;
}

// min c'x  s.t.  A x = b,  l <= x <= u
struct StdForm {
  SparseMatrix a;
  Vector b, c, l, u;
};

enum class IpmOutcome { converged, stalled, diverged };

struct IpmResult {
  IpmOutcome outcome = IpmOutcome::stalled;
  Vector x, y, zl, zu;
  int iterations = 0;
};

// ---------------------------------------------------------------------------
// Interior point

// Newton system [-D A'; A 0] of the interior point. Columns with a single
// nonzero (slacks, mostly) are eliminated into the diagonal of their row, and
// rows left with a diagonal only are folded into the column block, so an LP
// with many inequality rows over few variables factorizes a small matrix.
class KktSystem {
 public:
  KktSystem(const SparseMatrix& a, double reg, bool eliminate)
      : a_(a), at_(a.transpose()), n_(a.cols()), m_(a.rows()), reg_(reg) {
    elim_col_.assign(static_cast<std::size_t>(m_), -1);
    elim_coef_.assign(static_cast<std::size_t>(m_), 0.0);
    std::vector<bool> eliminated(static_cast<std::size_t>(n_), false);
    if (eliminate) {
      for (Index j = 0; j < n_; ++j) {
        if (a.col(j).nonZeros() != 1) continue;
        SparseMatrix::InnerIterator it(a, j);
        const Index i = it.row();
        if (it.value() == 0.0 || elim_col_[static_cast<std::size_t>(i)] >= 0) continue;
        elim_col_[static_cast<std::size_t>(i)] = j;
        elim_coef_[static_cast<std::size_t>(i)] = it.value();
        eliminated[static_cast<std::size_t>(j)] = true;
      }
    }
    col_pos_.assign(static_cast<std::size_t>(n_), -1);
    for (Index j = 0; j < n_; ++j)
      if (!eliminated[static_cast<std::size_t>(j)]) {
        col_pos_[static_cast<std::size_t>(j)] = static_cast<Index>(kept_cols_.size());
        kept_cols_.push_back(j);
      }
    const Index nr = static_cast<Index>(kept_cols_.size());
    row_pos_.assign(static_cast<std::size_t>(m_), -1);
    for (Index i = 0; i < m_; ++i)
      if (elim_col_[static_cast<std::size_t>(i)] < 0) {
        row_pos_[static_cast<std::size_t>(i)] = nr + static_cast<Index>(kept_rows_.size());
        kept_rows_.push_back(i);
      }
    // rows with an eliminated column, restricted to kept columns
    const RowMajor ar(a);
    folded_.resize(static_cast<std::size_t>(m_));
    for (Index i = 0; i < m_; ++i) {
      if (elim_col_[static_cast<std::size_t>(i)] < 0) continue;
      for (RowMajor::InnerIterator it(ar, i); it; ++it)
        if (col_pos_[static_cast<std::size_t>(it.col())] >= 0)
          folded_[static_cast<std::size_t>(i)].emplace_back(col_pos_[static_cast<std::size_t>(it.col())], it.value());
    }

    const Index size = nr + static_cast<Index>(kept_rows_.size());
    std::vector<Triplet> t;
    for (Index p = 0; p < size; ++p) t.emplace_back(p, p, 0.0);
    for (Index j = 0; j < a.outerSize(); ++j) {
      const Index cj = col_pos_[static_cast<std::size_t>(j)];
      if (cj < 0) continue;
      for (SparseMatrix::InnerIterator it(a, j); it; ++it) {
        const Index ri = row_pos_[static_cast<std::size_t>(it.row())];
        if (ri >= 0) t.emplace_back(ri, cj, 0.0);
      }
    }
    for (const auto& row : folded_)
      for (const auto& [p, vp] : row)
        for (const auto& [q, vq] : row)
          if (p >= q) t.emplace_back(p, q, 0.0);
    k_.resize(size, size);
    k_.setFromTriplets(t.begin(), t.end());
    k_.makeCompressed();
    auto slot = [&](Index r, Index c) {
      for (SparseMatrix::InnerIterator it(k_, c); it; ++it)
        if (it.row() == r) return &it.valueRef();
      throw std::logic_error("KKT pattern slot missing");
    };
    diag_.resize(static_cast<std::size_t>(size));
    for (Index p = 0; p < size; ++p) diag_[static_cast<std::size_t>(p)] = slot(p, p);
    for (Index j = 0; j < a.outerSize(); ++j) {
      const Index cj = col_pos_[static_cast<std::size_t>(j)];
      if (cj < 0) continue;
      for (SparseMatrix::InnerIterator it(a, j); it; ++it) {
        const Index ri = row_pos_[static_cast<std::size_t>(it.row())];
        if (ri >= 0) *slot(ri, cj) = it.value();
      }
    }
    for (Index i = 0; i < m_; ++i) {
      const auto& row = folded_[static_cast<std::size_t>(i)];
      for (const auto& [p, vp] : row)
        for (const auto& [q, vq] : row)
          if (p >= q) updates_.push_back({slot(p, q), i, vp * vq});
    }
    ldlt_.analyzePattern(k_);
  }

  bool factorize(const Vector& d) {
    d_ = d;
    double reg = reg_;
    for (int attempt = 0; attempt < 4; ++attempt, reg *= 100.0) {
      reg_used_ = reg;
      // inverse diagonal of folded rows: 1 / (a_j^2 / (d_j + reg) + reg)
      inv_e_.assign(static_cast<std::size_t>(m_), 0.0);
      for (Index i = 0; i < m_; ++i) {
        const Index j = elim_col_[static_cast<std::size_t>(i)];
        if (j < 0) continue;
        const double aj = elim_coef_[static_cast<std::size_t>(i)];
        inv_e_[static_cast<std::size_t>(i)] = 1.0 / (aj * aj / (d[j] + reg) + reg);
      }
      for (const Update& u : updates_) *u.slot = 0.0;
      for (std::size_t p = 0; p < kept_cols_.size(); ++p) *diag_[p] = -(d[kept_cols_[p]] + reg);
      for (std::size_t r = 0; r < kept_rows_.size(); ++r) *diag_[kept_cols_.size() + r] = reg;
      for (const Update& u : updates_) *u.slot -= inv_e_[static_cast<std::size_t>(u.row)] * u.coef;
      ldlt_.factorize(k_);
      if (ldlt_.info() == Eigen::Success) return true;
    }
    return false;
  }

  // Solves [-D A'; A 0][dx; dy] = [r1; r2] with refinement against the
  // unregularized operator.
  void solve(const Vector& r1, const Vector& r2, Vector& dx, Vector& dy) const {
    regularized_solve(r1, r2, dx, dy);
    const double scale = 1.0 + std::max(inf_norm(r1), inf_norm(r2));
    for (int it = 0; it < 6; ++it) {
      const Vector e1 = r1 - (-d_.cwiseProduct(dx) + at_ * dy);
      const Vector e2 = r2 - a_ * dx;
      if (std::max(inf_norm(e1), inf_norm(e2)) <= 1e-14 * scale) break;
      Vector cx, cy;
      regularized_solve(e1, e2, cx, cy);
      dx += cx;
      dy += cy;
    }
  }

  const SparseMatrix& at() const { return at_; }

 private:
  struct Update {
    double* slot;
    Index row;
    double coef;
  };

  void regularized_solve(const Vector& r1, const Vector& r2, Vector& dx, Vector& dy) const {
    const Index nr = static_cast<Index>(kept_cols_.size());
    Vector rhs(k_.rows());
    for (Index p = 0; p < nr; ++p) rhs[p] = r1[kept_cols_[static_cast<std::size_t>(p)]];
    for (std::size_t r = 0; r < kept_rows_.size(); ++r) rhs[nr + static_cast<Index>(r)] = r2[kept_rows_[r]];
    // t_i = r2_i + a_j r1_j / (d_j + reg) on folded rows
    Vector t = Vector::Zero(m_);
    for (Index i = 0; i < m_; ++i) {
      const Index j = elim_col_[static_cast<std::size_t>(i)];
      if (j < 0) continue;
      t[i] = r2[i] + elim_coef_[static_cast<std::size_t>(i)] * r1[j] / (d_[j] + reg_used_);
      const double w = inv_e_[static_cast<std::size_t>(i)] * t[i];
      for (const auto& [p, vp] : folded_[static_cast<std::size_t>(i)]) rhs[p] -= vp * w;
    }
    const Vector sol = ldlt_.solve(rhs);
    dx = Vector::Zero(n_);
    dy = Vector::Zero(m_);
    for (Index p = 0; p < nr; ++p) dx[kept_cols_[static_cast<std::size_t>(p)]] = sol[p];
    for (std::size_t r = 0; r < kept_rows_.size(); ++r) dy[kept_rows_[r]] = sol[nr + static_cast<Index>(r)];
    for (Index i = 0; i < m_; ++i) {
      const Index j = elim_col_[static_cast<std::size_t>(i)];
      if (j < 0) continue;
      double ax = 0.0;
      for (const auto& [p, vp] : folded_[static_cast<std::size_t>(i)]) ax += vp * sol[p];
      dy[i] = inv_e_[static_cast<std::size_t>(i)] * (t[i] - ax);
      dx[j] = (elim_coef_[static_cast<std::size_t>(i)] * dy[i] - r1[j]) / (d_[j] + reg_used_);
    }
  }

  const SparseMatrix& a_;
  SparseMatrix at_;
  Index n_, m_;
  double reg_;
  double reg_used_ = 0.0;
  std::vector<Index> elim_col_;
  std::vector<double> elim_coef_;
  std::vector<Index> col_pos_, row_pos_, kept_cols_, kept_rows_;
  std::vector<std::vector<std::pair<Index, double>>> folded_;
  std::vector<Update> updates_;
  std::vector<double> inv_e_;
  SparseMatrix k_;
  std::vector<double*> diag_;
  Vector d_;
  Eigen::SimplicialLDLT<SparseMatrix, Eigen::Lower, Eigen::AMDOrdering<int>> ldlt_;
};

// Accuracy of an iterate measured on the original problem (worst relative KKT
// residual); lets the iteration stop on the quantity that is certified.
using Measure = std::function<double(const Vector& x, const Vector& y, const Vector& zl, const Vector& zu)>;

double max_step(const Vector& v, const Vector& dv, const std::vector<bool>& active) {
  double alpha = 1.0;
  for (Index j = 0; j < v.size(); ++j) {
    if (active[static_cast<std::size_t>(j)] && dv[j] < 0.0) alpha = std::min(alpha, -v[j] / dv[j]);
  }
  return alpha;
}

IpmResult interior_point(const StdForm& f, const SolverOptions& opt, const Measure& measure) {
  const Index n = f.a.cols();
  const Index m = f.a.rows();
  std::vector<bool> has_l(static_cast<std::size_t>(n)), has_u(static_cast<std::size_t>(n));
  Index n_bounds = 0;
  for (Index j = 0; j < n; ++j) {
    has_l[static_cast<std::size_t>(j)] = std::isfinite(f.l[j]);
    has_u[static_cast<std::size_t>(j)] = std::isfinite(f.u[j]);
    n_bounds += has_l[static_cast<std::size_t>(j)] + has_u[static_cast<std::size_t>(j)];
  }
  auto hl = [&](Index j) { return has_l[static_cast<std::size_t>(j)]; };
  auto hu = [&](Index j) { return has_u[static_cast<std::size_t>(j)]; };

  KktSystem kkt(f.a, 1e-9, opt.eliminate_singletons);
  IpmResult res;

  // Starting point: bound-centred guess corrected onto Ax = b, then pushed inside.
  Vector x = Vector::Zero(n);
  for (Index j = 0; j < n; ++j) {
    if (hl(j) && hu(j)) x[j] = 0.5 * (f.l[j] + f.u[j]);
    else if (hl(j)) x[j] = std::max(0.0, f.l[j] + 1.0);
    else if (hu(j)) x[j] = std::min(0.0, f.u[j] - 1.0);
  }
  Vector y = Vector::Zero(m);
  {
    if (!kkt.factorize(Vector::Ones(n))) {
      res.outcome = IpmOutcome::stalled;
      return res;
    }
    Vector dx, dy;
    kkt.solve(Vector::Zero(n), f.b - f.a * x, dx, dy);
    x += dx;
    for (Index j = 0; j < n; ++j) {
      if (hl(j) && hu(j)) {
        const double margin = std::min(0.5 * (f.u[j] - f.l[j]), std::max(1.0, 0.1 * std::abs(x[j])));
        x[j] = std::clamp(x[j], f.l[j] + margin, f.u[j] - margin);
      } else if (hl(j)) {
        x[j] = std::max(x[j], f.l[j] + std::max(1.0, 0.1 * std::abs(x[j])));
      } else if (hu(j)) {
        x[j] = std::min(x[j], f.u[j] - std::max(1.0, 0.1 * std::abs(x[j])));
      }
    }
  }
  Vector zl = Vector::Zero(n), zu = Vector::Zero(n);
  const double z0 = std::max(1.0, inf_norm(f.c));
  for (Index j = 0; j < n; ++j) {
    if (hl(j)) zl[j] = z0;
    if (hu(j)) zu[j] = z0;
  }

  const double b_scale = 1.0 + inf_norm(f.b);
  const double c_scale = 1.0 + inf_norm(f.c);
  Vector sl(n), su(n);
  int small_steps = 0;
  // Most accurate iterate so far; returned when the iteration breaks down
  // near the solution and left to the final KKT certificate.
  struct Snapshot { Vector x, y, zl, zu; };
  Snapshot best;
  double best_worst = kInf;

  for (int iter = 0; iter <= opt.max_iterations; ++iter) {
    res.iterations = iter;
    for (Index j = 0; j < n; ++j) {
      sl[j] = hl(j) ? x[j] - f.l[j] : 1.0;
      su[j] = hu(j) ? f.u[j] - x[j] : 1.0;
    }
    const Vector rp = f.b - f.a * x;
    const Vector rd = f.c - kkt.at() * y - zl + zu;
    double comp = 0.0;
    double dobj = f.b.dot(y);
    double dmag = f.b.cwiseProduct(y).cwiseAbs().sum();
    for (Index j = 0; j < n; ++j) {
      if (hl(j)) {
        comp += sl[j] * zl[j];
        dobj += f.l[j] * zl[j];
        dmag += std::abs(f.l[j] * zl[j]);
      }
      if (hu(j)) {
        comp += su[j] * zu[j];
        dobj -= f.u[j] * zu[j];
        dmag += std::abs(f.u[j] * zu[j]);
      }
    }
    const double mu = n_bounds > 0 ? comp / static_cast<double>(n_bounds) : 0.0;
    const double pobj = f.c.dot(x);
    const double worst = std::max({inf_norm(rp) / b_scale, inf_norm(rd) / c_scale,
                                   std::abs(pobj - dobj) / (1.0 + std::abs(pobj))});
    // Screening for the measured check uses the gap relative to the size of
    // the summed terms, as the final certificate does.
    const double pmag = f.c.cwiseProduct(x).cwiseAbs().sum();
    const double screen = std::max({inf_norm(rp) / b_scale, inf_norm(rd) / c_scale,
                                    std::abs(pobj - dobj) / (1.0 + std::abs(pobj) + std::max(pmag, dmag))});
    if (measure) {
      if (screen <= 1e-5) {
        const double m_worst = measure(x, y, zl, zu);
        if (m_worst < best_worst) {
          best_worst = m_worst;
          best = {x, y, zl, zu};
        }
        if (m_worst <= opt.tolerance) {
          res.outcome = IpmOutcome::converged;
          break;
        }
      }
    } else {
      if (worst <= opt.tolerance) {
        res.outcome = IpmOutcome::converged;
        break;
      }
      if (std::isfinite(worst) && worst < best_worst) {
        best_worst = worst;
        best = {x, y, zl, zu};
      }
    }
    if (iter == opt.max_iterations) break;
    if (!x.allFinite() || !y.allFinite() || !zl.allFinite() || !zu.allFinite()) {
      res.outcome = IpmOutcome::stalled;
      break;
    }
    if (inf_norm(x) > 1e14 || inf_norm(y) > 1e14 || inf_norm(zl) > 1e14 || inf_norm(zu) > 1e14) {
      res.outcome = IpmOutcome::diverged;
      break;
    }

    Vector d = Vector::Zero(n);
    for (Index j = 0; j < n; ++j) {
      if (hl(j)) d[j] += zl[j] / sl[j];
      if (hu(j)) d[j] += zu[j] / su[j];
    }
    if (!kkt.factorize(d)) break;

    auto direction = [&](const Vector& rl, const Vector& ru, Vector& dx, Vector& dy, Vector& dzl, Vector& dzu) {
      Vector r1 = rd;
      for (Index j = 0; j < n; ++j) {
        if (hl(j)) r1[j] -= rl[j] / sl[j];
        if (hu(j)) r1[j] += ru[j] / su[j];
      }
      kkt.solve(r1, rp, dx, dy);
      dzl = Vector::Zero(n);
      dzu = Vector::Zero(n);
      for (Index j = 0; j < n; ++j) {
        if (hl(j)) dzl[j] = (rl[j] - zl[j] * dx[j]) / sl[j];
        if (hu(j)) dzu[j] = (ru[j] + zu[j] * dx[j]) / su[j];
      }
    };
    auto primal_step = [&](const Vector& dx) {
      const Vector neg = -dx;
      return std::min(max_step(sl, dx, has_l), max_step(su, neg, has_u));
    };
    auto dual_step = [&](const Vector& dzl, const Vector& dzu) {
      return std::min(max_step(zl, dzl, has_l), max_step(zu, dzu, has_u));
    };

    Vector rl = Vector::Zero(n), ru = Vector::Zero(n);
    for (Index j = 0; j < n; ++j) {
      if (hl(j)) rl[j] = -sl[j] * zl[j];
      if (hu(j)) ru[j] = -su[j] * zu[j];
    }
    Vector dx, dy, dzl, dzu;
    direction(rl, ru, dx, dy, dzl, dzu);

    if (n_bounds > 0) {
      const double ap = primal_step(dx);
      const double ad = dual_step(dzl, dzu);
      double mu_aff = 0.0;
      for (Index j = 0; j < n; ++j) {
        if (hl(j)) mu_aff += (sl[j] + ap * dx[j]) * (zl[j] + ad * dzl[j]);
        if (hu(j)) mu_aff += (su[j] - ap * dx[j]) * (zu[j] + ad * dzu[j]);
      }
      mu_aff /= static_cast<double>(n_bounds);
      const double sigma = mu > 0.0 ? std::pow(std::clamp(mu_aff / mu, 0.0, 1.0), 3) : 0.0;
      for (Index j = 0; j < n; ++j) {
        if (hl(j)) rl[j] = sigma * mu - sl[j] * zl[j] - dx[j] * dzl[j];
        if (hu(j)) ru[j] = sigma * mu - su[j] * zu[j] + dx[j] * dzu[j];
      }
      direction(rl, ru, dx, dy, dzl, dzu);
    }

    const double tau = std::max(0.99, 1.0 - mu);
    const double ap = std::min(1.0, tau * primal_step(dx));
    const double ad = std::min(1.0, tau * dual_step(dzl, dzu));
    x += ap * dx;
    y += ad * dy;
    zl += ad * dzl;
    zu += ad * dzu;
    small_steps = (ap < 1e-10 && ad < 1e-10) ? small_steps + 1 : 0;
    if (small_steps >= 5) break;
  }
  const double accept = measure ? opt.certify_tolerance : 1e3 * opt.tolerance;
  if (res.outcome != IpmOutcome::converged && best_worst <= accept) {
    res.outcome = IpmOutcome::converged;
    x = std::move(best.x);
    y = std::move(best.y);
    zl = std::move(best.zl);
    zu = std::move(best.zu);
  }
  res.x = std::move(x);
  res.y = std::move(y);
  res.zl = std::move(zl);
  res.zu = std::move(zu);
  return res;
}

// Ruiz equilibration, then uniform cost and right-hand-side scaling:
//   x = beta C x_s,  A_s = R A C,  b_s = R b / beta,  c_s = beta C c / sigma.
IpmResult solve_scaled(const StdForm& f, const SolverOptions& opt, const std::function<double(const IpmResult&)>& measure = {}) {
  const Index n = f.a.cols();
  const Index m = f.a.rows();
  Vector row = Vector::Ones(m), col = Vector::Ones(n);
  SparseMatrix a = f.a;
  if (opt.scaling) {
    for (int pass = 0; pass < 12; ++pass) {
      Vector rmax = Vector::Zero(m), cmax = Vector::Zero(n);
      for (Index j = 0; j < a.outerSize(); ++j)
        for (SparseMatrix::InnerIterator it(a, j); it; ++it) {
          const double v = std::abs(it.value());
          rmax[it.row()] = std::max(rmax[it.row()], v);
          cmax[j] = std::max(cmax[j], v);
        }
      Vector rs(m), cs(n);
      double spread = 0.0;
      for (Index i = 0; i < m; ++i) {
        rs[i] = rmax[i] > 0.0 ? 1.0 / std::sqrt(rmax[i]) : 1.0;
        spread = std::max(spread, std::abs(1.0 - rmax[i]) * (rmax[i] > 0.0));
      }
      for (Index j = 0; j < n; ++j) {
        cs[j] = cmax[j] > 0.0 ? 1.0 / std::sqrt(cmax[j]) : 1.0;
        spread = std::max(spread, std::abs(1.0 - cmax[j]) * (cmax[j] > 0.0));
      }
      if (spread < 1e-3) break;
      for (Index j = 0; j < a.outerSize(); ++j)
        for (SparseMatrix::InnerIterator it(a, j); it; ++it) it.valueRef() *= rs[it.row()] * cs[j];
      row = row.cwiseProduct(rs);
      col = col.cwiseProduct(cs);
    }
  }
  StdForm s;
  s.a = a;
  const Vector rb = row.cwiseProduct(f.b);
  double beta = 1.0;
  if (opt.scaling) {
    double mag = inf_norm(rb);
    for (Index j = 0; j < n; ++j) {
      if (std::isfinite(f.l[j])) mag = std::max(mag, std::abs(f.l[j] / col[j]));
      if (std::isfinite(f.u[j])) mag = std::max(mag, std::abs(f.u[j] / col[j]));
    }
    beta = std::max(1.0, mag);
  }
  s.b = rb / beta;
  Vector cc = beta * col.cwiseProduct(f.c);
  double sigma = opt.scaling ? inf_norm(cc) : 1.0;
  if (!(sigma > 0.0)) sigma = 1.0;
  s.c = cc / sigma;
  s.l = f.l.cwiseQuotient(col) / beta;
  s.u = f.u.cwiseQuotient(col) / beta;

  auto unscale = [&](IpmResult& r) {
    r.x = beta * col.cwiseProduct(r.x);
    r.y = (sigma / beta) * row.cwiseProduct(r.y);
    r.zl = (sigma / beta) * r.zl.cwiseQuotient(col);
    r.zu = (sigma / beta) * r.zu.cwiseQuotient(col);
  };
  Measure scaled_measure;
  if (measure) {
    scaled_measure = [&](const Vector& x, const Vector& y, const Vector& zl, const Vector& zu) {
      IpmResult r;
      r.x = x;
      r.y = y;
      r.zl = zl;
      r.zu = zu;
      unscale(r);
      return measure(r);
    };
  }
  IpmResult r = interior_point(s, opt, scaled_measure);
  if (r.x.size() == n) unscale(r);
  return r;
}

// ---------------------------------------------------------------------------
// Presolve

struct BoundSource {
  Index row = -1;  // inequality row that produced the bound, -1 for the original
  double coef = 0.0;
};

// Variable removals, replayed in reverse to recover multipliers.
struct FixEvent {
  Index var;
  Index eq_row;  // equality row that determined the value, -1 when fixed by bounds
  double coef;
};

struct Presolved {
  bool infeasible = false;
  std::string message;
  Vector lower, upper, fixed_value;
  std::vector<BoundSource> lower_src, upper_src;
  std::vector<Index> col_of;    // original variable -> column, -1 when fixed
  std::vector<Index> cols;      // column -> original variable
  std::vector<Index> eq_rows;   // kept equality rows
  std::vector<Index> ineq_rows; // kept inequality rows (slack columns follow the variables)
  std::vector<FixEvent> events;
  StdForm form;
};

Presolved presolve(const LpProblem& p) {
  Presolved pre;
  const Index n = p.num_vars();
  const Index me = p.eq_matrix.rows();
  const Index mi = p.ineq_matrix.rows();
  const RowMajor eq = p.eq_matrix;
  const RowMajor in = p.ineq_matrix;
  const double feas_tol = 1e-9;
  pre.lower = p.lower;
  pre.upper = p.upper;
  pre.lower_src.assign(static_cast<std::size_t>(n), {});
  pre.upper_src.assign(static_cast<std::size_t>(n), {});
  pre.fixed_value = Vector::Zero(n);

  std::vector<char> fixed(static_cast<std::size_t>(n), 0);
  std::vector<char> eq_alive(static_cast<std::size_t>(me), 1), in_alive(static_cast<std::size_t>(mi), 1);
  std::vector<Index> eq_count(static_cast<std::size_t>(me), 0), in_count(static_cast<std::size_t>(mi), 0);
  Vector eq_b = p.eq_rhs;
  Vector in_h = p.ineq_rhs;
  for (Index i = 0; i < me; ++i)
    for (RowMajor::InnerIterator it(eq, i); it; ++it) eq_count[static_cast<std::size_t>(i)] += it.value() != 0.0;
  for (Index i = 0; i < mi; ++i)
    for (RowMajor::InnerIterator it(in, i); it; ++it) in_count[static_cast<std::size_t>(i)] += it.value() != 0.0;

  auto fail = [&](const std::string& why) {
    pre.infeasible = true;
    pre.message = why;
  };
  auto fix = [&](Index j, double v, Index row, double coef) {
    fixed[static_cast<std::size_t>(j)] = 1;
    pre.fixed_value[j] = v;
    pre.events.push_back({j, row, coef});
    for (SparseMatrix::InnerIterator it(p.eq_matrix, j); it; ++it) {
      if (it.value() == 0.0 || !eq_alive[static_cast<std::size_t>(it.row())]) continue;
      eq_b[it.row()] -= it.value() * v;
      --eq_count[static_cast<std::size_t>(it.row())];
    }
    for (SparseMatrix::InnerIterator it(p.ineq_matrix, j); it; ++it) {
      if (it.value() == 0.0 || !in_alive[static_cast<std::size_t>(it.row())]) continue;
      in_h[it.row()] -= it.value() * v;
      --in_count[static_cast<std::size_t>(it.row())];
    }
  };
  auto only_entry = [&](const RowMajor& mat, Index i, Index& col, double& coef) {
    for (RowMajor::InnerIterator it(mat, i); it; ++it) {
      if (it.value() != 0.0 && !fixed[static_cast<std::size_t>(it.col())]) {
        col = it.col();
        coef = it.value();
        return;
      }
    }
  };
  auto magnitude = [](double l, double u) {
    return 1.0 + std::max(std::isfinite(l) ? std::abs(l) : 0.0, std::isfinite(u) ? std::abs(u) : 0.0);
  };

  for (bool changed = true; changed && !pre.infeasible;) {
    changed = false;
    for (Index i = 0; i < me && !pre.infeasible; ++i) {
      if (!eq_alive[static_cast<std::size_t>(i)]) continue;
      const Index count = eq_count[static_cast<std::size_t>(i)];
      if (count == 0) {
        if (std::abs(eq_b[i]) > feas_tol * (1.0 + std::abs(p.eq_rhs[i])))
          fail("equality row " + std::to_string(i) + " cannot be satisfied");
        eq_alive[static_cast<std::size_t>(i)] = 0;
        changed = true;
      } else if (count == 1) {
        Index j = -1;
        double a = 0.0;
        only_entry(eq, i, j, a);
        const double v = eq_b[i] / a;
        const double tol = feas_tol * magnitude(pre.lower[j], pre.upper[j]);
        if (v < pre.lower[j] - tol || v > pre.upper[j] + tol) {
          fail("equality row " + std::to_string(i) + " forces variable " + std::to_string(j) + " outside its bounds");
          break;
        }
        eq_alive[static_cast<std::size_t>(i)] = 0;
        fix(j, std::clamp(v, pre.lower[j], pre.upper[j]), i, a);
        changed = true;
      }
    }
    for (Index i = 0; i < mi && !pre.infeasible; ++i) {
      if (!in_alive[static_cast<std::size_t>(i)]) continue;
      const Index count = in_count[static_cast<std::size_t>(i)];
      if (count == 0) {
        if (in_h[i] < -feas_tol * (1.0 + std::abs(p.ineq_rhs[i])))
          fail("inequality row " + std::to_string(i) + " cannot be satisfied");
        in_alive[static_cast<std::size_t>(i)] = 0;
        changed = true;
      } else if (count == 1) {
        Index j = -1;
        double a = 0.0;
        only_entry(in, i, j, a);
        const double bound = in_h[i] / a;
        if (a > 0.0 && bound < pre.upper[j]) {
          pre.upper[j] = bound;
          pre.upper_src[static_cast<std::size_t>(j)] = {i, a};
        } else if (a < 0.0 && bound > pre.lower[j]) {
          pre.lower[j] = bound;
          pre.lower_src[static_cast<std::size_t>(j)] = {i, a};
        }
        in_alive[static_cast<std::size_t>(i)] = 0;
        changed = true;
      }
    }
    for (Index j = 0; j < n && !pre.infeasible; ++j) {
      if (fixed[static_cast<std::size_t>(j)]) continue;
      const double l = pre.lower[j], u = pre.upper[j];
      const double scale = magnitude(l, u);
      if (u < l - feas_tol * scale) {
        fail("variable " + std::to_string(j) + " has crossing bounds");
      } else if (u - l <= 1e-12 * scale) {
        fix(j, 0.5 * (l + u), -1, 0.0);
        changed = true;
      }
    }
  }
  if (pre.infeasible) return pre;

  // Rows that the variable bounds already imply, with a margin, carry a zero
  // multiplier and are dropped.
  for (Index i = 0; i < mi; ++i) {
    if (!in_alive[static_cast<std::size_t>(i)]) continue;
    double max_act = 0.0, mag = 0.0;
    for (RowMajor::InnerIterator it(in, i); it; ++it) {
      const Index j = it.col();
      if (it.value() == 0.0 || fixed[static_cast<std::size_t>(j)]) continue;
      const double b = it.value() > 0.0 ? pre.upper[j] : pre.lower[j];
      max_act += it.value() * b;
      mag += std::abs(it.value() * b);
    }
    if (std::isfinite(max_act) && max_act <= in_h[i] - 1e-6 * (1.0 + mag + std::abs(in_h[i])))
      in_alive[static_cast<std::size_t>(i)] = 0;
  }

  pre.col_of.assign(static_cast<std::size_t>(n), -1);
  for (Index j = 0; j < n; ++j) {
    if (fixed[static_cast<std::size_t>(j)]) continue;
    pre.col_of[static_cast<std::size_t>(j)] = static_cast<Index>(pre.cols.size());
    pre.cols.push_back(j);
  }
  const Index n1 = static_cast<Index>(pre.cols.size());
  for (Index i = 0; i < me; ++i)
    if (eq_alive[static_cast<std::size_t>(i)]) pre.eq_rows.push_back(i);
  for (Index i = 0; i < mi; ++i)
    if (in_alive[static_cast<std::size_t>(i)]) pre.ineq_rows.push_back(i);

  std::vector<Triplet> t;
  std::vector<double> rhs;
  auto add_row = [&](const RowMajor& mat, Index i, double b) {
    const Index r = static_cast<Index>(rhs.size());
    for (RowMajor::InnerIterator it(mat, i); it; ++it) {
      const Index c = pre.col_of[static_cast<std::size_t>(it.col())];
      if (it.value() != 0.0 && c >= 0) t.emplace_back(r, c, it.value());
    }
    rhs.push_back(b);
  };
  for (Index i : pre.eq_rows) add_row(eq, i, eq_b[i]);
  for (std::size_t k = 0; k < pre.ineq_rows.size(); ++k) {
    add_row(in, pre.ineq_rows[k], in_h[pre.ineq_rows[k]]);
    t.emplace_back(static_cast<Index>(rhs.size()) - 1, n1 + static_cast<Index>(k), 1.0);
  }

  const Index ns = n1 + static_cast<Index>(pre.ineq_rows.size());
  StdForm& f = pre.form;
  f.a.resize(static_cast<Index>(rhs.size()), ns);
  f.a.setFromTriplets(t.begin(), t.end());
  f.a.makeCompressed();
  f.b = Eigen::Map<const Vector>(rhs.data(), static_cast<Index>(rhs.size()));
  f.c = Vector::Zero(ns);
  f.l = Vector::Zero(ns);
  f.u = Vector::Constant(ns, kInf);
  for (Index c = 0; c < n1; ++c) {
    const Index j = pre.cols[static_cast<std::size_t>(c)];
    f.c[c] = p.cost[j];
    f.l[c] = pre.lower[j];
    f.u[c] = pre.upper[j];
  }
  return pre;
}

LpSolution postsolve(const LpProblem& p, const Presolved& pre, const IpmResult& r) {
  const Index n = p.num_vars();
  const Index n1 = static_cast<Index>(pre.cols.size());
  LpSolution s;
  s.primal = pre.fixed_value;
  s.dual_eq = Vector::Zero(p.eq_matrix.rows());
  s.dual_ineq = Vector::Zero(p.ineq_matrix.rows());
  s.dual_bounds = Vector::Zero(n);
  for (Index c = 0; c < n1; ++c) s.primal[pre.cols[static_cast<std::size_t>(c)]] = r.x[c];
  for (std::size_t k = 0; k < pre.eq_rows.size(); ++k) s.dual_eq[pre.eq_rows[k]] = r.y[static_cast<Index>(k)];
  for (std::size_t k = 0; k < pre.ineq_rows.size(); ++k)
    s.dual_ineq[pre.ineq_rows[k]] = std::max(0.0, r.zl[n1 + static_cast<Index>(k)]);

  auto attribute = [&](Index j, double wl, double wu) {
    const BoundSource& ls = pre.lower_src[static_cast<std::size_t>(j)];
    const BoundSource& us = pre.upper_src[static_cast<std::size_t>(j)];
    if (ls.row >= 0) s.dual_ineq[ls.row] += wl / std::abs(ls.coef);
    else s.dual_bounds[j] += wl;
    if (us.row >= 0) s.dual_ineq[us.row] += wu / us.coef;
    else s.dual_bounds[j] -= wu;
  };
  for (Index c = 0; c < n1; ++c) attribute(pre.cols[static_cast<std::size_t>(c)], r.zl[c], r.zu[c]);

  auto reduced_cost = [&](Index j) {
    double rc = p.cost[j] - s.dual_bounds[j];
    for (SparseMatrix::InnerIterator it(p.eq_matrix, j); it; ++it) rc -= it.value() * s.dual_eq[it.row()];
    for (SparseMatrix::InnerIterator it(p.ineq_matrix, j); it; ++it) rc += it.value() * s.dual_ineq[it.row()];
    return rc;
  };
  for (auto ev = pre.events.rbegin(); ev != pre.events.rend(); ++ev) {
    const double rc = reduced_cost(ev->var);
    if (ev->eq_row >= 0) s.dual_eq[ev->eq_row] += rc / ev->coef;
    else attribute(ev->var, std::max(rc, 0.0), std::max(-rc, 0.0));
  }
  s.objective = p.cost.dot(s.primal);
  s.iterations = r.iterations;
  return s;
}

// Classifies a problem the interior point did not solve.
LpSolution classify_failure(const LpProblem& p, const Presolved& pre, const SolverOptions& opt, int iterations) {
  LpSolution out;
  out.iterations = iterations;
  const StdForm& f = pre.form;
  const Index n = f.a.cols();
  const Index m = f.a.rows();

  // Phase 1: min 1'(p + q)  s.t.  A x + p - q = b.
  StdForm ph;
  {
    std::vector<Triplet> t;
    for (Index j = 0; j < f.a.outerSize(); ++j)
      for (SparseMatrix::InnerIterator it(f.a, j); it; ++it) t.emplace_back(it.row(), it.col(), it.value());
    for (Index i = 0; i < m; ++i) {
      t.emplace_back(i, n + i, 1.0);
      t.emplace_back(i, n + m + i, -1.0);
    }
    ph.a.resize(m, n + 2 * m);
    ph.a.setFromTriplets(t.begin(), t.end());
    ph.b = f.b;
    ph.c = Vector::Zero(n + 2 * m);
    ph.c.tail(2 * m).setOnes();
    ph.l = Vector::Zero(n + 2 * m);
    ph.u = Vector::Constant(n + 2 * m, kInf);
    ph.l.head(n) = f.l;
    ph.u.head(n) = f.u;
  }
  const IpmResult r1 = solve_scaled(ph, opt);
  if (r1.outcome != IpmOutcome::converged) {
    out.status = LpStatus::numerical_failure;
    out.message = "interior point failed and the feasibility problem could not be solved";
    return out;
  }
  const double infeas = r1.x.tail(2 * m).sum();
  if (infeas > 1e-7 * (1.0 + inf_norm(f.b))) {
    out.status = LpStatus::infeasible;
    out.message = "constraints are inconsistent (phase-1 residual " + std::to_string(infeas) + ")";
    return out;
  }

  // Feasible: re-solve inside an artificial box.
  double mag = 1.0 + inf_norm(r1.x.head(n));
  for (Index j = 0; j < n; ++j) {
    if (std::isfinite(f.l[j])) mag = std::max(mag, std::abs(f.l[j]));
    if (std::isfinite(f.u[j])) mag = std::max(mag, std::abs(f.u[j]));
  }
  const double big = 1e6 * mag;
  StdForm boxed = f;
  for (Index j = 0; j < n; ++j) {
    if (!std::isfinite(boxed.l[j])) boxed.l[j] = -big;
    if (!std::isfinite(boxed.u[j])) boxed.u[j] = big;
  }
  const IpmResult r2 = solve_scaled(boxed, opt);
  if (r2.outcome != IpmOutcome::converged) {
    out.status = LpStatus::numerical_failure;
    out.message = "interior point did not converge";
    return out;
  }
  for (Index j = 0; j < n; ++j) {
    if ((!std::isfinite(f.l[j]) && r2.x[j] <= -0.5 * big) || (!std::isfinite(f.u[j]) && r2.x[j] >= 0.5 * big)) {
      out.status = LpStatus::unbounded;
      out.message = "objective is unbounded below";
      return out;
    }
  }
  out = postsolve(p, pre, r2);
  out.iterations += iterations;
  out.kkt = certify(p, out);
  out.status = out.kkt.worst() <= opt.certify_tolerance ? LpStatus::optimal : LpStatus::numerical_failure;
  if (!out.optimal()) out.message = "KKT certificate failed (" + std::to_string(out.kkt.worst()) + ")";
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------

LpProblem LpProblem::with_vars(Index n) {
  LpProblem p;
  p.cost = Vector::Zero(n);
  p.eq_matrix.resize(0, n);
  p.eq_rhs.resize(0);
  p.ineq_matrix.resize(0, n);
  p.ineq_rhs.resize(0);
  p.lower = Vector::Constant(n, -kInf);
  p.upper = Vector::Constant(n, kInf);
  return p;
}

void LpProblem::validate() const {
  const Index n = num_vars();
  auto fail = [](const std::string& m) { throw std::invalid_argument("LP: " + m); };
  if (eq_matrix.cols() != n || ineq_matrix.cols() != n) fail("constraint matrix column count differs from cost");
  if (eq_matrix.rows() != eq_rhs.size()) fail("equality rows and right-hand side differ in length");
  if (ineq_matrix.rows() != ineq_rhs.size()) fail("inequality rows and right-hand side differ in length");
  if (lower.size() != n || upper.size() != n) fail("bound vectors differ in length from cost");
  if (!cost.allFinite() || !eq_rhs.allFinite() || !ineq_rhs.allFinite()) fail("non-finite cost or right-hand side");
  if (!all_finite(eq_matrix) || !all_finite(ineq_matrix)) fail("non-finite matrix entry");
  for (Index j = 0; j < n; ++j) {
    if (std::isnan(lower[j]) || std::isnan(upper[j]) || lower[j] == kInf || upper[j] == -kInf)
      fail("invalid bound on variable " + std::to_string(j));
  }
}

std::string_view status_name(LpStatus s) {
  switch (s) {
    case LpStatus::optimal: return "optimal";
    case LpStatus::infeasible: return "infeasible";
    case LpStatus::unbounded: return "unbounded";
    case LpStatus::numerical_failure: return "numerical_failure";
  }
  return "unknown";
}

double KktResiduals::worst() const {
  return std::max({primal_eq, primal_ineq, bounds, stationarity, dual_sign, complementarity, gap});
}

KktResiduals certify(const LpProblem& p, const LpSolution& s) {
  KktResiduals k;
  const Index n = p.num_vars();
  const Vector& x = s.primal;
  if (x.size() != n || s.dual_eq.size() != p.eq_matrix.rows() || s.dual_ineq.size() != p.ineq_matrix.rows() ||
      s.dual_bounds.size() != n) {
    k.primal_eq = kInf;
    return k;
  }
  const double c_scale = 1.0 + inf_norm(p.cost);
  const double pobj = p.cost.dot(x);
  const double o_scale = 1.0 + std::abs(pobj);

  if (p.eq_matrix.rows() > 0)
    k.primal_eq = inf_norm(p.eq_matrix * x - p.eq_rhs) / (1.0 + inf_norm(p.eq_rhs));
  Vector slack = Vector::Zero(p.ineq_matrix.rows());
  if (p.ineq_matrix.rows() > 0) {
    slack = p.ineq_rhs - p.ineq_matrix * x;
    k.primal_ineq = std::max(0.0, -slack.minCoeff()) / (1.0 + inf_norm(p.ineq_rhs));
  }
  double bmag = 0.0;
  double bviol = 0.0;
  for (Index j = 0; j < n; ++j) {
    if (std::isfinite(p.lower[j])) {
      bmag = std::max(bmag, std::abs(p.lower[j]));
      bviol = std::max(bviol, p.lower[j] - x[j]);
    }
    if (std::isfinite(p.upper[j])) {
      bmag = std::max(bmag, std::abs(p.upper[j]));
      bviol = std::max(bviol, x[j] - p.upper[j]);
    }
  }
  k.bounds = bviol / (1.0 + bmag);

  const Vector stat = p.cost - p.eq_matrix.transpose() * s.dual_eq + p.ineq_matrix.transpose() * s.dual_ineq -
                      s.dual_bounds;
  k.stationarity = inf_norm(stat) / c_scale;

  // Gap and complementarity are taken relative to the magnitude of the terms
  // summed into the objectives: with large right-hand sides and multipliers a
  // round-off level primal residual already shows up in b'y, even when the
  // optimal value itself is near zero.
  double sign = 0.0;
  double comp = 0.0;
  double dobj = p.eq_rhs.dot(s.dual_eq) - p.ineq_rhs.dot(s.dual_ineq);
  double dmag = p.eq_rhs.cwiseProduct(s.dual_eq).cwiseAbs().sum() + p.ineq_rhs.cwiseProduct(s.dual_ineq).cwiseAbs().sum();
  for (Index i = 0; i < s.dual_ineq.size(); ++i) {
    sign = std::max(sign, -s.dual_ineq[i]);
    comp = std::max(comp, std::abs(s.dual_ineq[i] * slack[i]));
  }
  for (Index j = 0; j < n; ++j) {
    const double w = s.dual_bounds[j];
    if (w > 0.0) {
      if (std::isfinite(p.lower[j])) {
        comp = std::max(comp, std::abs(w * (x[j] - p.lower[j])));
        dobj += w * p.lower[j];
        dmag += std::abs(w * p.lower[j]);
      } else {
        sign = std::max(sign, w);
      }
    } else if (w < 0.0) {
      if (std::isfinite(p.upper[j])) {
        comp = std::max(comp, std::abs(w * (p.upper[j] - x[j])));
        dobj += w * p.upper[j];
        dmag += std::abs(w * p.upper[j]);
      } else {
        sign = std::max(sign, -w);
      }
    }
  }
  k.dual_sign = sign / c_scale;
  const double pmag = p.cost.cwiseProduct(x).cwiseAbs().sum();
  const double term_scale = o_scale + std::max(pmag, dmag);
  k.complementarity = comp / term_scale;
  k.gap = std::abs(pobj - dobj) / term_scale;
  return k;
}

LpSolution solve(const LpProblem& problem, const SolverOptions& options) {
  problem.validate();
  const Presolved pre = presolve(problem);
  if (pre.infeasible) {
    LpSolution s;
    s.status = LpStatus::infeasible;
    s.message = pre.message;
    return s;
  }
  const auto measure = [&](const IpmResult& candidate) {
    const LpSolution trial = postsolve(problem, pre, candidate);
    return certify(problem, trial).worst();
  };
  const IpmResult r = solve_scaled(pre.form, options, measure);
  if (r.outcome != IpmOutcome::converged) return classify_failure(problem, pre, options, r.iterations);
  LpSolution s = postsolve(problem, pre, r);
  s.kkt = certify(problem, s);
  if (s.kkt.worst() <= options.certify_tolerance) {
    s.status = LpStatus::optimal;
  } else {
    s.status = LpStatus::numerical_failure;
    s.message = "KKT certificate failed (" + std::to_string(s.kkt.worst()) + ")";
  }
  return s;
}

LpSolution solve_equality_system_with_duals(const SparseMatrix& a, const Vector& b, const Vector& cost,
                                            double tolerance) {
  const Index m = a.rows();
  const Index n = a.cols();
  if (b.size() != m || cost.size() != n) throw std::invalid_argument("LP: equality system dimensions differ");
  LpProblem p = LpProblem::with_vars(n);
  p.cost = cost;
  p.eq_matrix = a;
  p.eq_rhs = b;
  if (m < n) {
    SolverOptions opt;
    opt.certify_tolerance = tolerance;
    return solve(p, opt);
  }

  LpSolution s;
  s.dual_ineq = Vector::Zero(0);
  s.dual_bounds = Vector::Zero(n);
  if (m == n) {
    Eigen::SparseLU<SparseMatrix, Eigen::COLAMDOrdering<int>> lu(a);
    SparseMatrix at = a.transpose();
    Eigen::SparseLU<SparseMatrix, Eigen::COLAMDOrdering<int>> lu_t(at);
    if (lu.info() != Eigen::Success || lu_t.info() != Eigen::Success) {
      s.status = LpStatus::numerical_failure;
      s.message = "equality system is singular";
      return s;
    }
    s.primal = lu.solve(b);
    s.dual_eq = lu_t.solve(cost);
  } else {
    const SparseMatrix normal = SparseMatrix(a.transpose() * a);
    Eigen::SimplicialLDLT<SparseMatrix> ldlt(normal);
    if (ldlt.info() != Eigen::Success) {
      s.status = LpStatus::numerical_failure;
      s.message = "equality system is rank deficient";
      return s;
    }
    s.primal = ldlt.solve(SparseMatrix(a.transpose()) * b);
    s.dual_eq = a * ldlt.solve(cost);
    if (inf_norm(a * s.primal - b) > tolerance * (1.0 + inf_norm(b))) {
      s.status = LpStatus::infeasible;
      s.message = "overdetermined equality system is inconsistent";
      return s;
    }
  }
  if (!s.primal.allFinite() || !s.dual_eq.allFinite()) {
    s.status = LpStatus::numerical_failure;
    s.message = "equality system is singular";
    return s;
  }
  s.objective = cost.dot(s.primal);
  s.kkt = certify(p, s);
  s.status = s.kkt.worst() <= tolerance ? LpStatus::optimal : LpStatus::numerical_failure;
  if (!s.optimal()) s.message = "KKT certificate failed (" + std::to_string(s.kkt.worst()) + ")";
  return s;
}

// ---------------------------------------------------------------------------
// Dump format

namespace {

std::string fmt(double v) {
  if (v == kInf) return "inf";
  if (v == -kInf) return "-inf";
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

double parse_double(const std::string& s) {
  if (s == "inf" || s == "+inf") return kInf;
  if (s == "-inf") return -kInf;
  std::size_t pos = 0;
  const double v = std::stod(s, &pos);
  if (pos != s.size()) throw std::invalid_argument("LP dump: bad number '" + s + "'");
  return v;
}

void write_matrix(std::ostream& os, const char* name, const SparseMatrix& m) {
  os << name << ' ' << m.nonZeros() << '\n';
  const RowMajor r = m;
  for (Index i = 0; i < r.outerSize(); ++i)
    for (RowMajor::InnerIterator it(r, i); it; ++it)
      os << it.row() + 1 << ' ' << it.col() + 1 << ' ' << fmt(it.value()) << '\n';
}

void write_vector(std::ostream& os, const char* name, const Vector& v) {
  Index nnz = 0;
  for (Index i = 0; i < v.size(); ++i) nnz += v[i] != 0.0;
  os << name << ' ' << nnz << '\n';
  for (Index i = 0; i < v.size(); ++i)
    if (v[i] != 0.0) os << i + 1 << ' ' << fmt(v[i]) << '\n';
}

class DumpReader {
 public:
  explicit DumpReader(std::istream& is) : is_(is) {}

  std::string token() {
    std::string t;
    while (is_ >> t) {
      if (t[0] == '%') {
        std::string rest;
        std::getline(is_, rest);
        continue;
      }
      return t;
    }
    throw std::invalid_argument("LP dump: unexpected end of input");
  }

  void expect(const std::string& word) {
    const std::string t = token();
    if (t != word) throw std::invalid_argument("LP dump: expected '" + word + "', found '" + t + "'");
  }

  Index count() {
    const std::string t = token();
    std::size_t pos = 0;
    const long long v = std::stoll(t, &pos);
    if (pos != t.size() || v < 0) throw std::invalid_argument("LP dump: bad count '" + t + "'");
    return static_cast<Index>(v);
  }

  Index index(Index limit) {
    const Index i = count();
    if (i < 1 || i > limit) throw std::invalid_argument("LP dump: index out of range");
    return i - 1;
  }

  double value() { return parse_double(token()); }

  SparseMatrix matrix(const char* name, Index rows, Index cols) {
    expect(name);
    const Index nnz = count();
    std::vector<Triplet> t;
    for (Index k = 0; k < nnz; ++k) {
      const Index i = index(rows);
      const Index j = index(cols);
      t.emplace_back(i, j, value());
    }
    SparseMatrix m(rows, cols);
    m.setFromTriplets(t.begin(), t.end());
    m.makeCompressed();
    return m;
  }

  Vector vector(const char* name, Index size) {
    expect(name);
    const Index nnz = count();
    Vector v = Vector::Zero(size);
    for (Index k = 0; k < nnz; ++k) {
      const Index i = index(size);
      v[i] = value();
    }
    return v;
  }

 private:
  std::istream& is_;
};

}  // namespace

void write_dump(const LpProblem& p, std::ostream& os) {
  p.validate();
  os << "%%thmpc-lp 1\n";
  os << "vars " << p.num_vars() << "\neq " << p.eq_matrix.rows() << "\nineq " << p.ineq_matrix.rows() << '\n';
  write_vector(os, "cost", p.cost);
  os << "bounds\n";
  for (Index j = 0; j < p.num_vars(); ++j) os << j + 1 << ' ' << fmt(p.lower[j]) << ' ' << fmt(p.upper[j]) << '\n';
  write_matrix(os, "eq_matrix", p.eq_matrix);
  write_vector(os, "eq_rhs", p.eq_rhs);
  write_matrix(os, "ineq_matrix", p.ineq_matrix);
  write_vector(os, "ineq_rhs", p.ineq_rhs);
  os << "end\n";
}

LpProblem read_dump(std::istream& is) {
  DumpReader r(is);
  r.expect("vars");
  const Index n = r.count();
  r.expect("eq");
  const Index me = r.count();
  r.expect("ineq");
  const Index mi = r.count();
  LpProblem p = LpProblem::with_vars(n);
  p.cost = r.vector("cost", n);
  r.expect("bounds");
  for (Index k = 0; k < n; ++k) {
    const Index j = r.index(n);
    p.lower[j] = r.value();
    p.upper[j] = r.value();
  }
  p.eq_matrix = r.matrix("eq_matrix", me, n);
  p.eq_rhs = r.vector("eq_rhs", me);
  p.ineq_matrix = r.matrix("ineq_matrix", mi, n);
  p.ineq_rhs = r.vector("ineq_rhs", mi);
  r.expect("end");
  p.validate();
  return p;
}

}  // namespace thmpc::lp
