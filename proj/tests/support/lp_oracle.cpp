#include "support/lp_oracle.hpp"

#include <cmath>
#include <functional>
#include <limits>
#include <stdexcept>
#include <vector>

namespace oracle_lp {

using thmpc::lp::LpProblem;
using thmpc::lp::LpStatus;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

constexpr double kTol = 1e-9;

// min c'x, A x = b, x >= 0. Returns status and x.
LpStatus tableau_simplex(MatrixXd a, VectorXd b, const VectorXd& c, VectorXd& x) {
  const Eigen::Index m = a.rows();
  const Eigen::Index n = a.cols();
  for (Eigen::Index i = 0; i < m; ++i) {
    if (b[i] < 0) {
      a.row(i) *= -1.0;
      b[i] *= -1.0;
    }
  }
  // Columns: n structural, m artificial, rhs.
  MatrixXd t = MatrixXd::Zero(m + 1, n + m + 1);
  t.topLeftCorner(m, n) = a;
  t.block(0, n, m, m).setIdentity();
  t.col(n + m).head(m) = b;
  std::vector<Eigen::Index> basis(static_cast<std::size_t>(m));
  for (Eigen::Index i = 0; i < m; ++i) basis[static_cast<std::size_t>(i)] = n + i;

  auto pivot = [&](Eigen::Index r, Eigen::Index col) {
    t.row(r) /= t(r, col);
    for (Eigen::Index i = 0; i <= m; ++i)
      if (i != r && t(i, col) != 0.0) t.row(i) -= t(i, col) * t.row(r);
    basis[static_cast<std::size_t>(r)] = col;
  };
  auto run = [&](Eigen::Index allowed) -> bool {  // false: unbounded
    for (int guard = 0; guard < 100000; ++guard) {
      Eigen::Index enter = -1;
      for (Eigen::Index j = 0; j < allowed; ++j)
        if (t(m, j) < -kTol) {
          enter = j;
          break;
        }
      if (enter < 0) return true;
      Eigen::Index leave = -1;
      double best = std::numeric_limits<double>::infinity();
      for (Eigen::Index i = 0; i < m; ++i) {
        if (t(i, enter) > kTol) {
          const double ratio = t(i, n + m) / t(i, enter);
          if (ratio < best - 1e-12 ||
              (std::abs(ratio - best) <= 1e-12 && basis[static_cast<std::size_t>(i)] <
                                                       basis[static_cast<std::size_t>(leave)])) {
            best = ratio;
            leave = i;
          }
        }
      }
      if (leave < 0) return false;
      pivot(leave, enter);
    }
    throw std::runtime_error("simplex cycling guard hit");
  };

  // Phase 1: minimize the artificial sum.
  t.row(m).setZero();
  for (Eigen::Index i = 0; i < m; ++i) t.row(m) -= t.row(i);
  for (Eigen::Index i = 0; i < m; ++i) t(m, n + i) = 0.0;
  run(n + m);
  if (-t(m, n + m) > 1e-7 * (1.0 + b.cwiseAbs().maxCoeff())) return LpStatus::infeasible;
  // Drive artificials out of the basis where possible.
  for (Eigen::Index i = 0; i < m; ++i) {
    if (basis[static_cast<std::size_t>(i)] < n) continue;
    for (Eigen::Index j = 0; j < n; ++j)
      if (std::abs(t(i, j)) > 1e-9) {
        pivot(i, j);
        break;
      }
  }
  // Phase 2.
  t.row(m).setZero();
  t.row(m).head(n) = c.transpose();
  for (Eigen::Index i = 0; i < m; ++i) {
    const Eigen::Index bj = basis[static_cast<std::size_t>(i)];
    if (bj < n && t(m, bj) != 0.0) t.row(m) -= t(m, bj) * t.row(i);
  }
  t.block(0, n, m + 1, m).setZero();
  if (!run(n)) return LpStatus::unbounded;
  x = VectorXd::Zero(n);
  for (Eigen::Index i = 0; i < m; ++i) {
    const Eigen::Index bj = basis[static_cast<std::size_t>(i)];
    if (bj < n) x[bj] = t(i, n + m);
  }
  return LpStatus::optimal;
}

}  // namespace

DenseResult simplex(const LpProblem& p) {
  const Eigen::Index n = p.num_vars();
  const MatrixXd ae = MatrixXd(p.eq_matrix);
  const MatrixXd ai = MatrixXd(p.ineq_matrix);
  // x_j = offset_j + sum over its standard columns (coef * s).
  struct Col { Eigen::Index var; double coef; };
  std::vector<Col> cols;
  VectorXd offset = VectorXd::Zero(n);
  std::vector<std::pair<Eigen::Index, double>> upper_rows;  // (column, width)
  for (Eigen::Index j = 0; j < n; ++j) {
    const double l = p.lower[j], u = p.upper[j];
    if (std::isfinite(l)) {
      offset[j] = l;
      cols.push_back({j, 1.0});
      if (std::isfinite(u)) upper_rows.emplace_back(static_cast<Eigen::Index>(cols.size()) - 1, u - l);
    } else if (std::isfinite(u)) {
      offset[j] = u;
      cols.push_back({j, -1.0});
    } else {
      cols.push_back({j, 1.0});
      cols.push_back({j, -1.0});
    }
  }
  const Eigen::Index nc = static_cast<Eigen::Index>(cols.size());
  const Eigen::Index me = ae.rows(), mi = ai.rows(), mu = static_cast<Eigen::Index>(upper_rows.size());
  const Eigen::Index rows = me + mi + mu;
  const Eigen::Index ns = nc + mi + mu;
  MatrixXd a = MatrixXd::Zero(rows, ns);
  VectorXd b(rows);
  VectorXd c = VectorXd::Zero(ns);
  for (Eigen::Index k = 0; k < nc; ++k) {
    const Col& col = cols[static_cast<std::size_t>(k)];
    if (me) a.block(0, k, me, 1) = ae.col(col.var) * col.coef;
    if (mi) a.block(me, k, mi, 1) = ai.col(col.var) * col.coef;
    c[k] = p.cost[col.var] * col.coef;
  }
  if (me) b.head(me) = p.eq_rhs - ae * offset;
  if (mi) {
    b.segment(me, mi) = p.ineq_rhs - ai * offset;
    a.block(me, nc, mi, mi).setIdentity();
  }
  for (Eigen::Index r = 0; r < mu; ++r) {
    a(me + mi + r, upper_rows[static_cast<std::size_t>(r)].first) = 1.0;
    a(me + mi + r, nc + mi + r) = 1.0;
    b[me + mi + r] = upper_rows[static_cast<std::size_t>(r)].second;
  }
  DenseResult out;
  VectorXd s;
  out.status = tableau_simplex(a, b, c, s);
  if (out.status != LpStatus::optimal) return out;
  out.x = offset;
  for (Eigen::Index k = 0; k < nc; ++k) out.x[cols[static_cast<std::size_t>(k)].var] += cols[static_cast<std::size_t>(k)].coef * s[k];
  out.objective = p.cost.dot(out.x);
  return out;
}

DenseResult vertex_enumeration(const LpProblem& p) {
  const Eigen::Index n = p.num_vars();
  for (Eigen::Index j = 0; j < n; ++j)
    if (!std::isfinite(p.lower[j]) || !std::isfinite(p.upper[j]))
      throw std::invalid_argument("vertex enumeration needs finite boxes");
  const MatrixXd ae = MatrixXd(p.eq_matrix);
  const MatrixXd ai = MatrixXd(p.ineq_matrix);

  // x = x0 + N t
  VectorXd x0 = VectorXd::Zero(n);
  MatrixXd null;
  if (ae.rows() > 0) {
    Eigen::FullPivLU<MatrixXd> lu(ae);
    x0 = lu.solve(p.eq_rhs);
    DenseResult out;
    if ((ae * x0 - p.eq_rhs).cwiseAbs().maxCoeff() > 1e-9 * (1.0 + p.eq_rhs.cwiseAbs().maxCoeff())) {
      out.status = LpStatus::infeasible;
      return out;
    }
    null = lu.kernel();
    if (lu.rank() == n) null.resize(n, 0);
  } else {
    null = MatrixXd::Identity(n, n);
  }
  const Eigen::Index k = null.cols();

  // Constraints  g_i' t <= h_i
  const Eigen::Index mc = ai.rows() + 2 * n;
  MatrixXd g(mc, k);
  VectorXd h(mc);
  if (ai.rows()) {
    g.topRows(ai.rows()) = ai * null;
    h.head(ai.rows()) = p.ineq_rhs - ai * x0;
  }
  for (Eigen::Index j = 0; j < n; ++j) {
    g.row(ai.rows() + 2 * j) = null.row(j);
    h[ai.rows() + 2 * j] = p.upper[j] - x0[j];
    g.row(ai.rows() + 2 * j + 1) = -null.row(j);
    h[ai.rows() + 2 * j + 1] = x0[j] - p.lower[j];
  }
  const VectorXd ct = null.transpose() * p.cost;

  DenseResult best;
  best.status = LpStatus::infeasible;
  best.objective = std::numeric_limits<double>::infinity();
  auto consider = [&](const VectorXd& t) {
    const VectorXd slack = h - g * t;
    if (slack.size() && slack.minCoeff() < -1e-9 * (1.0 + h.cwiseAbs().maxCoeff())) return;
    const double obj = p.cost.dot(x0) + ct.dot(t);
    if (obj < best.objective) {
      best.objective = obj;
      best.x = x0 + null * t;
      best.status = LpStatus::optimal;
    }
  };
  if (k == 0) {
    consider(VectorXd::Zero(0));
    return best;
  }
  std::vector<Eigen::Index> pick(static_cast<std::size_t>(k));
  std::function<void(Eigen::Index, Eigen::Index)> rec = [&](Eigen::Index depth, Eigen::Index start) {
    if (depth == k) {
      MatrixXd m(k, k);
      VectorXd r(k);
      for (Eigen::Index i = 0; i < k; ++i) {
        m.row(i) = g.row(pick[static_cast<std::size_t>(i)]);
        r[i] = h[pick[static_cast<std::size_t>(i)]];
      }
      Eigen::FullPivLU<MatrixXd> lu(m);
      if (lu.rank() < k) return;
      consider(lu.solve(r));
      return;
    }
    for (Eigen::Index i = start; i < mc; ++i) {
      pick[static_cast<std::size_t>(depth)] = i;
      rec(depth + 1, i + 1);
    }
  };
  rec(0, 0);
  return best;
}

namespace {

thmpc::lp::SparseMatrix sparse(const MatrixXd& m) {
  thmpc::lp::SparseMatrix s = m.sparseView();
  s.makeCompressed();
  return s;
}

}  // namespace

LpProblem random_lp(std::mt19937& rng, thmpc::lp::Index n, thmpc::lp::Index me, thmpc::lp::Index mi, double density) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::uniform_real_distribution<double> pos(0.0, 1.0);
  LpProblem p = LpProblem::with_vars(n);
  VectorXd x0(n);
  for (thmpc::lp::Index j = 0; j < n; ++j) {
    p.lower[j] = -1.0 - 4.0 * pos(rng);
    p.upper[j] = 1.0 + 4.0 * pos(rng);
    x0[j] = p.lower[j] + (p.upper[j] - p.lower[j]) * (0.2 + 0.6 * pos(rng));
    p.cost[j] = u(rng);
  }
  auto random_matrix = [&](thmpc::lp::Index rows) {
    MatrixXd m = MatrixXd::Zero(rows, n);
    for (thmpc::lp::Index i = 0; i < rows; ++i) {
      for (thmpc::lp::Index j = 0; j < n; ++j)
        if (pos(rng) < density) m(i, j) = u(rng);
      m(i, static_cast<thmpc::lp::Index>(pos(rng) * static_cast<double>(n)) % n) += 1.0;
    }
    return m;
  };
  const MatrixXd a = random_matrix(me);
  const MatrixXd g = random_matrix(mi);
  p.eq_matrix = sparse(a);
  p.eq_rhs = a * x0;
  p.ineq_matrix = sparse(g);
  p.ineq_rhs = g * x0;
  for (thmpc::lp::Index i = 0; i < mi; ++i) p.ineq_rhs[i] += 0.5 * pos(rng);
  return p;
}

}  // namespace oracle_lp
