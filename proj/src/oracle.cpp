#include "thmpc/oracle.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <string>
#include <thread>

namespace thmpc::oracle {

GridTooLarge::GridTooLarge(double cardinality, double limit)
    : std::invalid_argument("grid has " + std::to_string(cardinality) + " combinations, limit is " +
                            std::to_string(limit)),
      cardinality_(cardinality) {}

std::vector<double> linear_grid(double lo, double hi, int points) {
  if (points < 1) throw std::invalid_argument("grid needs at least one point");
  if (points == 1) return {lo};
  std::vector<double> g(static_cast<std::size_t>(points));
  for (int i = 0; i < points; ++i) g[static_cast<std::size_t>(i)] = lo + (hi - lo) * i / (points - 1);
  return g;
}

namespace {

// J_h with the hydraulic equations solved densely for zh.
double direct_hydraulic_cost(const HorizonAssembly& h, std::span<const Vector> uh, std::vector<Vector>& zh) {
  zh.clear();
  const CvNetwork& net = h.net();
  double total = 0.0;
  for (int k = 0; k < h.horizon(); ++k) {
    Point p = Point::zeros(net.dims);
    p.uh = uh[static_cast<std::size_t>(k)];
    p.d = h.disturbance(k);
    const Eigen::MatrixXd j = Eigen::MatrixXd(jacobian_wrt_block(net, p, Target::f_h, Block::zh));
    const Vector r0 = net.f_h.map.evaluate(p, net.mflow(p));
    p.zh = j.fullPivLu().solve(-r0);
    zh.push_back(p.zh);
    const double v = net.objective_h.value(p, net.mflow(p));
    total += net.objective_h.price_scaled ? price_factor(h.price(k), h.model().dt()) * v : v;
  }
  return total;
}

void decode(std::size_t code, std::size_t base, std::vector<int>& index) {
  for (std::size_t i = index.size(); i-- > 0;) {
    index[i] = static_cast<int>(code % base);
    code /= base;
  }
}

}  // namespace

GridResult grid_search(const HorizonAssembly& h, std::span<const double> values, int threads,
                       const lp::SolverOptions& options) {
  if (values.empty()) throw std::invalid_argument("empty grid");
  const Index nu = h.net().dims.uh;
  const int slots = static_cast<int>(nu) * h.horizon();
  const double card = std::pow(static_cast<double>(values.size()), slots);
  if (card > kMaxGridCombinations) throw GridTooLarge(card, kMaxGridCombinations);
  const std::size_t count = static_cast<std::size_t>(std::llround(card));

  GridResult out;
  out.table.resize(count);
  auto work = [&](std::size_t begin, std::size_t end) {
    std::vector<Vector> uh(static_cast<std::size_t>(h.horizon()), Vector(nu));
    std::vector<Vector> zh;
    for (std::size_t c = begin; c < end; ++c) {
      GridEntry& e = out.table[c];
      e.index.assign(static_cast<std::size_t>(slots), 0);
      decode(c, values.size(), e.index);
      for (int s = 0; s < slots; ++s)
        uh[static_cast<std::size_t>(s / nu)][s % nu] = values[static_cast<std::size_t>(e.index[static_cast<std::size_t>(s)])];
      try {
        e.j_h = direct_hydraulic_cost(h, uh, zh);
        e.j_t = pd::solve_thermal(h, uh, zh, options, pd::ThermalMethod::full).cost;
        e.feasible = true;
      } catch (const pd::SubproblemInfeasible&) {
        e.feasible = false;
      }
    }
  };
  const int n_threads = std::max(1, std::min<int>(threads, static_cast<int>(count)));
  if (n_threads == 1) {
    work(0, count);
  } else {
    std::vector<std::thread> pool;
    const std::size_t chunk = (count + n_threads - 1) / n_threads;
    for (int t = 0; t < n_threads; ++t) {
      const std::size_t b = t * chunk, e = std::min(count, b + chunk);
      if (b < e) pool.emplace_back(work, b, e);
    }
    for (std::thread& t : pool) t.join();
  }

  for (std::size_t c = 0; c < count; ++c) {
    const GridEntry& e = out.table[c];
    if (!e.feasible) continue;
    ++out.feasible_count;
    if (e.cost() < out.best_cost) {
      out.best_cost = e.cost();
      out.best_entry = c;
    }
  }
  if (out.feasible_count > 0) {
    const GridEntry& e = out.table[out.best_entry];
    out.best_uh.assign(static_cast<std::size_t>(h.horizon()), Vector(nu));
    for (int s = 0; s < slots; ++s)
      out.best_uh[static_cast<std::size_t>(s / nu)][s % nu] = values[static_cast<std::size_t>(e.index[static_cast<std::size_t>(s)])];
  }
  return out;
}

pd::PlanChoice grid_plan(const HorizonAssembly& h, std::span<const double> values, int threads,
                         const lp::SolverOptions& options) {
  const GridResult g = grid_search(h, values, threads, options);
  if (g.feasible_count == 0)
    throw pd::ThermalInfeasible("no grid plan is feasible", lp::LpStatus::infeasible);
  std::vector<Vector> zh;
  const double j_h = direct_hydraulic_cost(h, g.best_uh, zh);
  pd::ThermalResult t = pd::solve_thermal(h, g.best_uh, zh, options, pd::ThermalMethod::full);
  pd::PlanChoice out;
  out.plan = pd::Plan{g.best_uh, std::move(t.ut)};
  out.predicted_cost = j_h + t.cost;
  return out;
}

plant::Trajectory fine_reference(const DiscreteModel& model, const plant::PlantState& initial,
                                 const plant::ControlSequence& controls, const std::vector<Vector>& disturbances,
                                 int refinement) {
  if (refinement < 1) throw std::invalid_argument("refinement factor must be >= 1");
  if (refinement == 1) return plant::rollout(model, initial, controls, disturbances);
  if (controls.size() != disturbances.size()) throw std::invalid_argument("rollout sequences must have equal length");

  const DiscreteModel fine(model.net(), model.dt() / refinement, model.order());
  plant::ControlSequence held;
  std::vector<Vector> dist;
  for (std::size_t k = 0; k < controls.size(); ++k) {
    for (int r = 0; r < refinement; ++r) {
      held.uh.push_back(controls.uh[k]);
      held.ut.push_back(controls.ut[k]);
      dist.push_back(disturbances[k]);
    }
  }
  plant::Trajectory run = plant::rollout(fine, initial, held, dist);
  plant::Trajectory out;
  out.final_state = std::move(run.final_state);
  for (std::size_t k = 0; k < controls.size(); ++k) {
    plant::StepRecord rec = std::move(run.steps[(k + 1) * refinement - 1]);
    out.steps.push_back(std::move(rec));
  }
  return out;
}

double fd_value_slope(const HorizonAssembly& h, std::span<const Vector> uh, Index component, double step,
                      const lp::SolverOptions& options) {
  const Index nu = h.net().dims.uh;
  if (component < 0 || component >= nu * h.horizon()) throw std::out_of_range("flow component out of range");
  if (!(step > 0)) throw std::invalid_argument("difference step must be positive");
  const pd::FlowBox box = pd::flow_box(h.net());
  const std::size_t k = static_cast<std::size_t>(component / nu);
  const Index j = component % nu;
  std::vector<Vector> plus(uh.begin(), uh.end()), minus(uh.begin(), uh.end());
  plus[k][j] += step;
  minus[k][j] -= step;
  if (plus[k][j] > box.upper[j] || minus[k][j] < box.lower[j])
    throw ProbeInfeasible("probe leaves the flow box at component " + std::to_string(component));
  try {
    const double fp = pd::evaluate(h, plus, options, pd::ThermalMethod::full).cost();
    const double fm = pd::evaluate(h, minus, options, pd::ThermalMethod::full).cost();
    return (fp - fm) / (2.0 * step);
  } catch (const pd::SubproblemInfeasible& e) {
    throw ProbeInfeasible(std::string("probe infeasible: ") + e.what());
  }
}

}  // namespace thmpc::oracle
