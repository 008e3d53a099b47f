#include "support/fixtures.hpp"
#include "thmpc/heatfield.hpp"
#include "thmpc/oracle.hpp"

#include <doctest.h>

#include <cmath>
#include <numbers>

using namespace thmpc;
namespace hf = thmpc::heatfield;

namespace {

std::vector<Vector> scalar_flows(std::initializer_list<double> v) {
  std::vector<Vector> out;
  for (double x : v) out.push_back(Vector::Constant(1, x));
  return out;
}

Vector vec2(double a, double b) {
  Vector v(2);
  v << a, b;
  return v;
}

}  // namespace

TEST_SUITE("oracle") {
  TEST_CASE("linear grids") {
    const std::vector<double> g = oracle::linear_grid(0.5, 4.5, 9);
    REQUIRE(g.size() == 9);
    CHECK(g.front() == 0.5);
    CHECK(g.back() == 4.5);
    CHECK(g[4] == doctest::Approx(2.5));
    CHECK(oracle::linear_grid(3.0, 7.0, 1) == std::vector<double>{3.0});
    CHECK_THROWS_AS(oracle::linear_grid(0.0, 1.0, 0), std::invalid_argument);
  }

  TEST_CASE("a one-point grid returns that point's evaluation") {
    fixtures::Field f(1, 2, 7200.0, 279.0);
    const HorizonAssembly h = f.horizon(2, {0.2, 0.3}, 276.0, 262.0);
    const std::vector<double> one{3.0};
    const oracle::GridResult g = oracle::grid_search(h, one);
    REQUIRE(g.table.size() == 1);
    const pd::Evaluation e = pd::evaluate(h, scalar_flows({3.0, 3.0}));
    CHECK(g.best_cost == doctest::Approx(e.cost()).epsilon(1e-9));
    CHECK(g.best_uh == e.uh);
    CHECK(g.feasible_count == 1);
  }

  TEST_CASE("exhaustive table on a nine-point grid") {
    fixtures::Field f(1, 2, 7200.0, 279.0);
    const HorizonAssembly h = f.horizon(2, {0.3, 0.05}, 276.0, 262.0);
    const std::vector<double> values = oracle::linear_grid(0.5, 8.5, 9);
    const oracle::GridResult g = oracle::grid_search(h, values);
    REQUIRE(g.table.size() == 81);
    double best = lp::kInf;
    std::size_t feasible = 0;
    for (std::size_t c = 0; c < g.table.size(); ++c) {
      const oracle::GridEntry& e = g.table[c];
      CHECK(static_cast<std::size_t>(e.index[0] * 9 + e.index[1]) == c);
      if (!e.feasible) continue;
      ++feasible;
      best = std::min(best, e.cost());
    }
    CHECK(feasible == g.feasible_count);
    CHECK(g.best_cost == best);
    CHECK(g.table[g.best_entry].cost() == best);

    // Spot entries against an independent evaluation of the same plan.
    for (std::size_t c : {std::size_t{0}, std::size_t{40}, std::size_t{80}}) {
      const oracle::GridEntry& e = g.table[c];
      if (!e.feasible) continue;
      const pd::Evaluation ev = pd::evaluate(h, scalar_flows({values[e.index[0]], values[e.index[1]]}), {},
                                             pd::ThermalMethod::full);
      CHECK(e.cost() == doctest::Approx(ev.cost()).epsilon(1e-8));
    }
  }

  TEST_CASE("refining the grid never raises the best objective") {
    fixtures::Field f(1, 2, 7200.0, 279.0);
    const HorizonAssembly h = f.horizon(2, {0.3, 0.05}, 276.0, 262.0);
    const oracle::GridResult coarse = oracle::grid_search(h, oracle::linear_grid(0.5, 8.5, 9));
    const oracle::GridResult fine = oracle::grid_search(h, oracle::linear_grid(0.5, 8.5, 17));
    CHECK(fine.table.size() == 289);
    CHECK(fine.best_cost <= coarse.best_cost + 1e-12);
  }

  TEST_CASE("threads do not change the table") {
    fixtures::Field f(2, 3, 7200.0, 279.0);
    const HorizonAssembly h = f.horizon(2, {0.3, 0.1}, 276.0, 262.0);
    const std::vector<double> values = oracle::linear_grid(1.0, 5.0, 3);
    const oracle::GridResult a = oracle::grid_search(h, values, 1);
    const oracle::GridResult b = oracle::grid_search(h, values, 3);
    REQUIRE(a.table.size() == 81);
    REQUIRE(b.table.size() == 81);
    for (std::size_t c = 0; c < a.table.size(); ++c) {
      CHECK(a.table[c].index == b.table[c].index);
      CHECK(a.table[c].feasible == b.table[c].feasible);
      CHECK(a.table[c].cost() == b.table[c].cost());
    }
    CHECK(a.best_entry == b.best_entry);
  }

  TEST_CASE("oversized grids are refused") {
    fixtures::Field f(1, 2);
    const HorizonAssembly h = f.horizon(5, {0.2});
    const std::vector<double> values = oracle::linear_grid(0.5, 8.5, 17);
    try {
      oracle::grid_search(h, values);
      FAIL("no exception");
    } catch (const oracle::GridTooLarge& e) {
      CHECK(e.cardinality() == doctest::Approx(std::pow(17.0, 5)));
    }
  }

  TEST_CASE("grid planner with no feasible combination") {
    hf::HeatfieldParams p = fixtures::params(1, 2);
    p.theta_soil_min = 300.0;
    fixtures::Field f(p);
    const HorizonAssembly h = f.horizon(2, {0.2});
    const std::vector<double> values{1.0, 2.0};
    CHECK_THROWS_AS(oracle::grid_plan(h, values), pd::ThermalInfeasible);
  }

  TEST_CASE("fine reference of a scalar decay approaches the exponential") {
    const CvNetwork net = fixtures::linear_network(Eigen::MatrixXd::Constant(1, 1, -1.0));
    const DiscreteModel model(net, 0.5, 2);
    plant::PlantState s;
    s.theta = Vector::Ones(1);
    s.zh = Vector::Zero(0);
    s.zt = Vector::Zero(0);
    const int n = 4;
    const plant::ControlSequence c{std::vector<Vector>(n, Vector::Zero(0)), std::vector<Vector>(n, Vector::Zero(0))};
    const std::vector<Vector> d(n, Vector::Zero(0));
    double prev = lp::kInf;
    for (int refinement : {4, 16, 64}) {
      const plant::Trajectory t = oracle::fine_reference(model, s, c, d, refinement);
      REQUIRE(t.steps.size() == n);
      double err = 0.0;
      for (int k = 0; k < n; ++k) err = std::max(err, std::abs(t.steps[k].point.theta[0] - std::exp(-0.5 * (k + 1))));
      CHECK(err < prev / 8.0);
      prev = err;
    }
    CHECK(prev < 1e-4);
    CHECK_THROWS_AS(oracle::fine_reference(model, s, c, d, 0), std::invalid_argument);
  }

  TEST_CASE("two-hour steps deviate more from the fine reference than quarter-hour steps") {
    fixtures::Field coarse(2, 3, 7200.0);
    fixtures::Field quarter(2, 3, 900.0);
    const int n = 24;
    plant::ControlSequence c;
    std::vector<Vector> d;
    for (int k = 0; k < n; ++k) {
      c.uh.push_back(vec2(2.0, k < 5 ? 2.0 : 5.0));
      c.ut.push_back(Vector::Constant(1, k < 12 ? 1.0 : 0.5));
      d.push_back(vec2(283.15, 272.0 + 4.0 * std::sin(2.0 * std::numbers::pi * (k + 1) / 12.0)));
    }
    const plant::Trajectory ref = oracle::fine_reference(*coarse.model, coarse.state, c, d, 64);
    const plant::Trajectory run2h = plant::rollout(*coarse.model, coarse.state, c, d);
    // The quarter-hour run needs the inputs held over eight of its steps.
    plant::ControlSequence c8;
    std::vector<Vector> d8;
    for (int k = 0; k < n; ++k)
      for (int r = 0; r < 8; ++r) {
        c8.uh.push_back(c.uh[k]);
        c8.ut.push_back(c.ut[k]);
        d8.push_back(d[k]);
      }
    const plant::Trajectory q = plant::rollout(*quarter.model, quarter.state, c8, d8);
    double e2h = 0.0, e15 = 0.0;
    for (int k = 0; k < n; ++k)
      for (Index i : hf::pipe_states(coarse.p)) {
        e2h = std::max(e2h, std::abs(run2h.steps[k].point.theta[i] - ref.steps[k].point.theta[i]));
        e15 = std::max(e15, std::abs(q.steps[8 * k + 7].point.theta[i] - ref.steps[k].point.theta[i]));
      }
    MESSAGE("pipe error 2 h: " << e2h << " K, 15 min: " << e15 << " K");
    CHECK(e2h > e15);
    CHECK(e2h < 5.0);
  }

  TEST_CASE("pump cost makes the value slope positive on warm soil") {
    fixtures::Field f(2, 3, 7200.0, 290.0);
    const HorizonAssembly h = f.horizon(2, {0.5, 0.1}, 290.0, 288.0);
    std::vector<Vector> uh{vec2(4.0, 6.0), vec2(3.0, 3.0)};
    for (Index c = 0; c < 4; ++c) CHECK(oracle::fd_value_slope(h, uh, c, 1e-3) > 0.0);
    const double s0 = oracle::fd_value_slope(h, uh, 0, 1e-3);
    const double s2 = oracle::fd_value_slope(h, uh, 2, 1e-3);
    // Same flow level is cheaper in the cheap step.
    CHECK(oracle::fd_value_slope(h, std::vector<Vector>{vec2(3.0, 6.0), vec2(3.0, 3.0)}, 0, 1e-3) > s2);
    CHECK(s0 > s2);
  }

  TEST_CASE("probes outside the flow box are reported") {
    fixtures::Field f(1, 2);
    const HorizonAssembly h = f.horizon(2, {0.2});
    const std::vector<Vector> uh = scalar_flows({0.15, 2.0});
    CHECK_THROWS_AS(oracle::fd_value_slope(h, uh, 0, 0.1), oracle::ProbeInfeasible);
    CHECK_THROWS_AS(oracle::fd_value_slope(h, uh, 2, 0.1), std::out_of_range);
    CHECK_THROWS_AS(oracle::fd_value_slope(h, uh, 1, 0.0), std::invalid_argument);
  }
}
