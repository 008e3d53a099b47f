#include "support/fixtures.hpp"
#include "thmpc/heatfield.hpp"
#include "thmpc/netmodel.hpp"

#include <doctest.h>

#include <random>

using namespace thmpc;

namespace {

Eigen::MatrixXd dense(const SparseMatrix& m) { return Eigen::MatrixXd(m); }

// Term-by-term evaluation with dense matrices.
Vector dense_evaluate(const BilinearMap& map, const Point& p, const Vector& mflow) {
  Vector r = Vector::Zero(map.rows());
  for (Block b : kAllBlocks) {
    const SparseMatrix& a = map.affine(b);
    if (a.size() == 0 || a.nonZeros() == 0) continue;
    const Vector& v = b == Block::mflow ? mflow : p.get(b);
    r += dense(a) * v;
  }
  if (map.constant().size() > 0) r += map.constant();
  for (const BilinearTerm& t : map.terms()) {
    const Vector& v = t.z_block == Block::mflow ? mflow : p.get(t.z_block);
    const Vector y = dense(t.y_matrix) * mflow;
    const Vector z = dense(t.z_matrix) * v;
    r += dense(t.x_matrix) * y.cwiseProduct(z).eval();
  }
  return r;
}

SparseMatrix random_sparse(std::mt19937& rng, Index rows, Index cols, double density) {
  std::uniform_real_distribution<double> u(-1.0, 1.0), pos(0.0, 1.0);
  std::vector<Triplet> t;
  for (Index i = 0; i < rows; ++i)
    for (Index j = 0; j < cols; ++j)
      if (pos(rng) < density) t.emplace_back(i, j, u(rng));
  SparseMatrix m(rows, cols);
  m.setFromTriplets(t.begin(), t.end());
  return m;
}

Dimensions small_dims() {
  Dimensions d;
  d.theta = 4;
  d.zh = 2;
  d.zt = 2;
  d.uh = 2;
  d.ut = 1;
  d.d = 2;
  d.mflow = 3;
  return d;
}

SparseMatrix small_mflow_map() {
  SparseMatrix m(3, 2);
  std::vector<Triplet> t = {{0, 0, 1.0}, {1, 0, 1.0}, {2, 1, 1.0}};
  m.setFromTriplets(t.begin(), t.end());
  return m;
}

BilinearMap random_map(std::mt19937& rng, Index rows, const Dimensions& dims) {
  BilinearMap map(rows, dims);
  for (Block b : {Block::theta, Block::zh, Block::zt, Block::uh, Block::ut, Block::d})
    map.set_affine(b, random_sparse(rng, rows, dims.size(b), 0.5));
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Vector c(rows);
  for (Index i = 0; i < rows; ++i) c[i] = u(rng);
  map.set_constant(c);
  map.add_term({random_sparse(rng, rows, 3, 0.6), random_sparse(rng, 3, dims.mflow, 0.6),
                random_sparse(rng, 3, dims.theta, 0.6), Block::theta});
  map.add_term({random_sparse(rng, rows, 2, 0.8), random_sparse(rng, 2, dims.mflow, 0.8),
                random_sparse(rng, 2, dims.mflow, 0.8), Block::mflow});
  return map;
}

}  // namespace

TEST_SUITE("netmodel") {
  TEST_CASE("zero point on a zero-constant set gives a zero residual") {
    const Dimensions dims = small_dims();
    std::mt19937 rng(1);
    BilinearMap map = random_map(rng, 5, dims);
    map.set_constant(Vector::Zero(5));
    const Point p = Point::zeros(dims);
    CHECK(map.evaluate(p, Vector::Zero(dims.mflow)).norm() == 0.0);
  }

  TEST_CASE("random five-row set matches a dense re-evaluation") {
    const Dimensions dims = small_dims();
    const SparseMatrix mm = small_mflow_map();
    std::mt19937 rng(2);
    for (int trial = 0; trial < 10; ++trial) {
      const BilinearMap map = random_map(rng, 5, dims);
      Point p = Point::zeros(dims);
      std::uniform_real_distribution<double> u(-2.0, 2.0);
      for (Block b : {Block::theta, Block::zh, Block::zt, Block::uh, Block::ut, Block::d})
        for (Index i = 0; i < p.get(b).size(); ++i) p.get(b)[i] = u(rng);
      const Vector mflow = mm * p.uh;
      CHECK((map.evaluate(p, mflow) - dense_evaluate(map, p, mflow)).lpNorm<Eigen::Infinity>() <= 1e-12);
    }
  }

  TEST_CASE("pressure loss rows vanish at nominal flow and pressure") {
    fixtures::Field f(2, 3);
    Point p = Point::zeros(f.net.dims);
    p.uh.setConstant(30.0);
    p.zh.setConstant(8e5);
    const Vector r = eval_constraints(f.net, p, Target::f_h);
    REQUIRE(r.size() == 2);
    CHECK(r.lpNorm<Eigen::Infinity>() <= 1e-9);
  }

  TEST_CASE("uniform temperature is a fixed point of the dynamics") {
    fixtures::Field f(2, 3);
    std::mt19937 rng(3);
    for (int trial = 0; trial < 5; ++trial) {
      Point p = fixtures::random_point(f.net, rng);
      const double t = 285.0 + trial;
      p.theta.setConstant(t);
      p.d.setConstant(t);
      p.zt.setConstant(t);
      CHECK(eval_dynamics_rhs(f.net, p).lpNorm<Eigen::Infinity>() <= 1e-12);
    }
  }

  TEST_CASE("unit temperature with zero flows picks a column of A") {
    fixtures::Field f(1, 2);
    const Eigen::MatrixXd a = dense(f.net.a_matrix());
    for (Index i = 0; i < f.net.dims.theta; ++i) {
      Point p = Point::zeros(f.net.dims);
      p.theta[i] = 1.0;
      CHECK((eval_dynamics_rhs(f.net, p) - a.col(i)).norm() == 0.0);
    }
  }

  TEST_CASE("heating-field dynamics match the dense evaluation") {
    fixtures::Field f(1, 2);
    std::mt19937 rng(4);
    for (int trial = 0; trial < 10; ++trial) {
      const Point p = fixtures::random_point(f.net, rng);
      const Vector ref = dense_evaluate(f.net.dynamics, p, f.net.mflow(p));
      CHECK((eval_dynamics_rhs(f.net, p) - ref).lpNorm<Eigen::Infinity>() <= 1e-12 * (1.0 + ref.lpNorm<Eigen::Infinity>()));
    }
  }

  TEST_CASE("pressure loss derivative at 15 kg/s") {
    fixtures::Field f(2, 3);
    Point p = Point::zeros(f.net.dims);
    p.uh.setConstant(15.0);
    const Eigen::MatrixXd j = dense(jacobian_wrt_block(f.net, p, Target::f_h, Block::uh));
    REQUIRE(j.rows() == 2);
    CHECK(j(0, 0) == doctest::Approx(-2.0 * (8e5 / 900.0) * 15.0).epsilon(1e-12));
    CHECK(j(0, 0) == doctest::Approx(-26666.67).epsilon(1e-6));
    CHECK(j(0, 1) == 0.0);
    CHECK(j(1, 1) == doctest::Approx(j(0, 0)).epsilon(1e-12));
  }

  TEST_CASE("dynamics Jacobian in theta at zero flows is A") {
    fixtures::Field f(2, 3);
    const Point p = Point::zeros(f.net.dims);
    const Eigen::MatrixXd j = dense(jacobian_wrt_block(f.net, p, Target::dynamics, Block::theta));
    CHECK((j - dense(f.net.a_matrix())).norm() == 0.0);
  }

  TEST_CASE("Jacobians agree with central differences") {
    fixtures::Field f(2, 3);
    std::mt19937 rng(5);
    const double h = 1e-6;
    for (int trial = 0; trial < 10; ++trial) {
      const Point p = fixtures::random_point(f.net, rng);
      for (Target t : {Target::dynamics, Target::f_h, Target::f_t, Target::g_h, Target::g_t, Target::objective_h,
                       Target::objective_t}) {
        auto value = [&](const Point& q) -> Vector {
          if (t == Target::dynamics) return eval_dynamics_rhs(f.net, q);
          if (t == Target::objective_h || t == Target::objective_t) return target_map(f.net, t).evaluate(q, f.net.mflow(q));
          return eval_constraints(f.net, q, t);
        };
        for (Block b : {Block::theta, Block::zh, Block::zt, Block::uh, Block::ut, Block::d}) {
          const Eigen::MatrixXd j = dense(jacobian_wrt_block(f.net, p, t, b));
          Eigen::MatrixXd fd(j.rows(), j.cols());
          for (Index c = 0; c < j.cols(); ++c) {
            Point plus = p, minus = p;
            const double step = h * std::max(1.0, std::abs(p.get(b)[c]));
            plus.get(b)[c] += step;
            minus.get(b)[c] -= step;
            fd.col(c) = (value(plus) - value(minus)) / (2.0 * step);
          }
          CAPTURE(target_name(t));
          CAPTURE(block_name(b));
          const double scale = std::max(1.0, j.lpNorm<Eigen::Infinity>());
          CHECK((j - fd).lpNorm<Eigen::Infinity>() <= 1e-6 * scale);
        }
      }
    }
  }

  TEST_CASE("relations are affine once the flows are fixed") {
    fixtures::Field f(2, 3);
    std::mt19937 rng(6);
    for (int trial = 0; trial < 5; ++trial) {
      Point p1 = fixtures::random_point(f.net, rng);
      Point p2 = fixtures::random_point(f.net, rng);
      p2.uh = p1.uh;
      Point zero = Point::zeros(f.net.dims);
      zero.uh = p1.uh;
      Point sum = p1;
      for (Block b : {Block::theta, Block::zh, Block::zt, Block::ut, Block::d}) sum.get(b) += p2.get(b);
      auto check = [&](auto&& fn) {
        const Vector lhs = fn(p1) + fn(p2) - fn(zero);
        const Vector rhs = fn(sum);
        CHECK((lhs - rhs).lpNorm<Eigen::Infinity>() <= 1e-9 * (1.0 + rhs.lpNorm<Eigen::Infinity>()));
      };
      check([&](const Point& q) { return eval_dynamics_rhs(f.net, q); });
      for (Target t : {Target::f_h, Target::f_t, Target::g_h, Target::g_t})
        check([&](const Point& q) { return eval_constraints(f.net, q, t); });
    }
  }

  TEST_CASE("wrong block size names the block") {
    fixtures::Field f(1, 2);
    Point p = Point::zeros(f.net.dims);
    p.zt = Vector::Zero(5);
    try {
      eval_constraints(f.net, p, Target::f_t);
      FAIL("no exception");
    } catch (const DimensionError& e) {
      CHECK(e.block() == Block::zt);
      CHECK(std::string(e.what()).find("zt") != std::string::npos);
    }
  }

  TEST_CASE("block names parse and unknown names are rejected") {
    for (Block b : kAllBlocks) CHECK(parse_block(block_name(b)) == b);
    CHECK_THROWS_AS(parse_block("pressure"), UnknownBlock);
  }

  TEST_CASE("built models satisfy the capacity-weighted coupling symmetry") {
    for (auto [n_pi, n_x] : {std::pair{1, 2}, {2, 3}, {7, 5}, {3, 1}}) {
      fixtures::Field f(n_pi, n_x);
      CHECK(capacity_symmetry_defect(f.net) <= 1e-12);
      CHECK_NOTHROW(f.net.validate());
    }
  }

  TEST_CASE("a one-sided coupling breaks validation") {
    fixtures::Field f(1, 2);
    SparseMatrix& a = f.net.dynamics.affine_mut(Block::theta);
    for (Index j = 0; j < a.outerSize(); ++j)
      for (SparseMatrix::InnerIterator it(a, j); it; ++it)
        if (it.row() == 0 && j != 0) {
          it.valueRef() = -it.value();
          j = a.outerSize();
          break;
        }
    CHECK(capacity_symmetry_defect(f.net) > 1e-12);
    CHECK_THROWS_AS(f.net.validate(), std::invalid_argument);
  }

  TEST_CASE("price factor converts EUR/kWh and seconds") {
    CHECK(price_factor(0.25, 7200.0) == doctest::Approx(0.25 * 7200.0 / 3.6e6));
    CHECK(price_factor(0.0, 7200.0) == 0.0);
  }
}
