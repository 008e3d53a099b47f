#include "thmpc/runner.hpp"

#include "thmpc/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <random>
#include <thread>

namespace thmpc::runner {

std::string_view status_name(RunStatus s) {
  switch (s) {
    case RunStatus::ok: return "ok";
    case RunStatus::constraint_violation: return "constraint_violation";
    case RunStatus::infeasible: return "infeasible";
    case RunStatus::solver_failure: return "solver_failure";
  }
  return "unknown";
}

namespace {

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.12g", v);
  return buf;
}

std::string text(std::string_view s) {
  if (s.find_first_of(",\"\n\r") == std::string_view::npos) return std::string(s);
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

void row(std::ostream& out, const std::vector<std::string>& cells) {
  for (std::size_t i = 0; i < cells.size(); ++i) out << (i ? "," : "") << cells[i];
  out << '\n';
}

double step_violation(const CvNetwork& net, const Point& p) {
  double worst = -lp::kInf;
  for (Target t : {Target::g_h, Target::g_t}) {
    const Vector g = eval_constraints(net, p, t);
    if (g.size() > 0) worst = std::max(worst, g.maxCoeff());
  }
  return worst;
}

void check_grid_size(const scenario::Scenario& s) {
  const double card = std::pow(static_cast<double>(s.controller.grid_values.size()),
                               static_cast<double>(s.system.n_pi) * s.horizon);
  if (card > oracle::kMaxGridCombinations)
    throw scenario::ConfigError("controller", "grid has " + num(card) + " combinations per MPC step, limit is " +
                                                  num(oracle::kMaxGridCombinations));
}

std::string_view controller_name(scenario::ControllerKind k) {
  switch (k) {
    case scenario::ControllerKind::pd: return "pd";
    case scenario::ControllerKind::grid: return "grid";
    case scenario::ControllerKind::open_loop: return "open_loop";
  }
  return "unknown";
}

struct IterationStats {
  double mean = 0.0;
  int max = 0;
};

IterationStats iteration_stats(const std::vector<pd::ClosedLoopStep>& steps) {
  IterationStats st;
  if (steps.empty()) return st;
  for (const pd::ClosedLoopStep& s : steps) {
    const int n = static_cast<int>(s.trace.records.size());
    st.mean += n;
    st.max = std::max(st.max, n);
  }
  st.mean /= static_cast<double>(steps.size());
  return st;
}

double mean_wall_ms(const std::vector<pd::ClosedLoopStep>& steps) {
  if (steps.empty()) return 0.0;
  double t = 0.0;
  for (const pd::ClosedLoopStep& s : steps) t += s.wall_ms;
  return t / static_cast<double>(steps.size());
}

double total_cost(const std::vector<pd::ClosedLoopStep>& steps) {
  double c = 0.0;
  for (const pd::ClosedLoopStep& s : steps) c += s.applied.cost_h + s.applied.cost_t;
  return c;
}

void finish(const CvNetwork& net, RunResult& out) {
  for (const pd::ClosedLoopStep& step : out.steps)
    out.max_violation = std::max(out.max_violation, step_violation(net, step.applied.point));
  if (out.status == RunStatus::ok && out.max_violation > kViolationTolerance) {
    out.status = RunStatus::constraint_violation;
    out.message = "applied step violates an inequality by " + num(out.max_violation);
  }
}

RunResult open_loop(const scenario::Scenario& s, const CvNetwork& net, const DiscreteModel& model, int refinement) {
  const std::size_t n = static_cast<std::size_t>(s.sim_steps);
  plant::ControlSequence controls;
  for (std::size_t k = 0; k < n; ++k) {
    Vector uh(s.system.n_pi);
    for (int q = 0; q < s.system.n_pi; ++q) uh[q] = s.controller.open_loop_mdot[static_cast<std::size_t>(q)][k];
    controls.uh.push_back(std::move(uh));
    controls.ut.push_back(Vector::Constant(1, s.controller.open_loop_dtheta[k]));
  }
  std::vector<Vector> dist = s.disturbances();
  dist.resize(n);

  RunResult out;
  try {
    const plant::Trajectory t =
        oracle::fine_reference(model, plant::initial_state(net, s.initial_temperatures), controls, dist, refinement);
    for (std::size_t k = 0; k < t.steps.size(); ++k) {
      pd::ClosedLoopStep st;
      st.step = static_cast<int>(k);
      st.time_s = s.timestep_s * static_cast<double>(k + 1);
      st.applied = t.steps[k];
      const double f = price_factor(s.price[k], s.timestep_s);
      st.applied.cost_h = f * st.applied.power_h;
      st.applied.cost_t = f * st.applied.power_t;
      out.steps.push_back(std::move(st));
    }
  } catch (const plant::PlantError& e) {
    out.status = RunStatus::solver_failure;
    out.message = e.what();
  }
  finish(net, out);
  return out;
}

}  // namespace

RunResult run(const scenario::Scenario& s, int refinement) {
  if (refinement < 1) throw scenario::ConfigError("--refine", "must be >= 1");
  if (refinement > 1 && s.controller.kind != scenario::ControllerKind::open_loop)
    throw scenario::ConfigError("--refine", "only open-loop scenarios can be refined");
  if (s.controller.kind == scenario::ControllerKind::grid) check_grid_size(s);
  const CvNetwork net = scenario::build_network(s);
  const DiscreteModel model(net, s.timestep_s, s.bdf_order);
  if (s.controller.kind == scenario::ControllerKind::open_loop) return open_loop(s, net, model, refinement);

  RunResult out;
  pd::ClosedLoopInput in;
  in.model = &model;
  in.initial = plant::initial_state(net, s.initial_temperatures);
  in.disturbances = s.disturbances();
  in.prices = s.price;
  in.sim_steps = s.sim_steps;
  in.config = s.controller.pd;
  if (s.controller.kind == scenario::ControllerKind::grid) {
    const double cardinality = std::pow(static_cast<double>(s.controller.grid_values.size()), s.horizon);
    if (cardinality > oracle::kMaxGridCombinations)
      throw scenario::ConfigError("controller", "grid of " + num(cardinality) + " combinations per step exceeds " +
                                                    num(oracle::kMaxGridCombinations));
    in.planner = [&s](const HorizonAssembly& h, const plant::PlantState&, const pd::Plan&) {
      return oracle::grid_plan(h, s.controller.grid_values, s.controller.grid_threads, s.controller.pd.lp_options);
    };
  }
  in.on_step = [&out](const pd::ClosedLoopStep& step) { out.steps.push_back(step); };
  try {
    pd::closed_loop(in);
  } catch (const pd::ControllerError& e) {
    out.status = e.cause() == pd::ControllerError::Cause::infeasible ? RunStatus::infeasible
                                                                      : RunStatus::solver_failure;
    out.message = e.what();
  } catch (const plant::PlantError& e) {
    out.status = RunStatus::solver_failure;
    out.message = e.what();
  }
  finish(net, out);
  return out;
}

void write_trajectory(std::ostream& out, const scenario::Scenario& s, const RunResult& r) {
  const heatfield::HeatfieldParams& p = s.system;
  const Index n = heatfield::state_count(p);
  std::vector<std::string> head{"step[-]", "time[s]"};
  for (Index i = 0; i < n; ++i) {
    const bool pipe = heatfield::grid_index(p, i).kind == heatfield::CvKind::pipe;
    head.push_back("theta_cv" + std::to_string(i + 1) + (pipe ? "_pipe" : "_soil") + "[K]");
  }
  for (int q = 1; q <= p.n_pi; ++q) head.push_back("mdot_pipe" + std::to_string(q) + "[kg/s]");
  for (int q = 1; q <= p.n_pi; ++q) head.push_back("dp_pipe" + std::to_string(q) + "[Pa]");
  for (const char* h : {"dtheta[K]", "theta_in[K]", "theta_out[K]", "j_h[EUR]", "j_t[EUR]", "price[EUR/kWh]"})
    head.emplace_back(h);
  row(out, head);
  for (const pd::ClosedLoopStep& st : r.steps) {
    const Point& pt = st.applied.point;
    std::vector<std::string> cells{std::to_string(st.step), num(st.time_s)};
    for (Index i = 0; i < n; ++i) cells.push_back(num(pt.theta[i]));
    for (int q = 0; q < p.n_pi; ++q) cells.push_back(num(pt.uh[q]));
    for (int q = 0; q < p.n_pi; ++q) cells.push_back(num(pt.zh[q]));
    cells.push_back(num(pt.ut[heatfield::kDeltaTheta]));
    cells.push_back(num(pt.zt[heatfield::kThetaIn]));
    cells.push_back(num(pt.zt[heatfield::kThetaOut]));
    cells.push_back(num(st.applied.cost_h));
    cells.push_back(num(st.applied.cost_t));
    cells.push_back(num(s.price[static_cast<std::size_t>(st.step)]));
    row(out, cells);
  }
}

void write_trace(std::ostream& out, const RunResult& r, const CsvOptions& opt) {
  row(out, {"mpc_step[-]", "pd_iteration[-]", "J_h[EUR]", "J_t[EUR]", "J[EUR]", "best_J[EUR]",
            "step_size[(kg/s)^2/EUR]", "step_scale[-]", "backtracks[-]", "subgradient_norm[EUR/(kg/s)]",
            "feasible[-]", "kkt_residual[-]", "wall[ms]"});
  for (const pd::ClosedLoopStep& st : r.steps) {
    for (const pd::PdRecord& rec : st.trace.records) {
      row(out, {std::to_string(st.step), std::to_string(rec.iteration), num(rec.j_h), num(rec.j_t), num(rec.j),
                num(rec.best_j), num(rec.alpha), num(rec.step_scale), std::to_string(rec.backtracks),
                num(rec.subgradient_norm), rec.feasible ? "1" : "0", num(rec.kkt), num(opt.timing ? rec.wall_ms : 0.0)});
    }
  }
}

void write_summary(std::ostream& out, const scenario::Scenario& s, const RunResult& r, const CsvOptions& opt) {
  double jh = 0.0, jt = 0.0;
  int safe = 0;
  for (const pd::ClosedLoopStep& st : r.steps) {
    jh += st.applied.cost_h;
    jt += st.applied.cost_t;
    safe += st.used_safe_plan ? 1 : 0;
  }
  const double steps = std::max<double>(1.0, static_cast<double>(r.steps.size()));
  const IterationStats it = iteration_stats(r.steps);
  row(out, {"scenario[-]", "controller[-]", "n_pi[-]", "n_x[-]", "variables_per_step[-]", "timestep[s]",
            "horizon[steps]", "steps_requested[-]", "steps_completed[-]", "status[-]", "total_j_h[EUR]",
            "total_j_t[EUR]", "total_cost[EUR]", "avg_cost_per_step[EUR]", "avg_calc_time_per_step[ms]",
            "pd_iterations_mean[-]", "pd_iterations_max[-]", "safe_plan_steps[-]", "max_violation[K]", "seed[-]"});
  row(out, {text(s.name), std::string(controller_name(s.controller.kind)),
            std::to_string(s.system.n_pi), std::to_string(s.system.n_x),
            std::to_string(heatfield::variables_per_step(s.system)), num(s.timestep_s), std::to_string(s.horizon),
            std::to_string(s.sim_steps), std::to_string(r.steps.size()), std::string(status_name(r.status)), num(jh),
            num(jt), num(jh + jt), num(r.steps.empty() ? 0.0 : (jh + jt) / steps),
            num(opt.timing ? mean_wall_ms(r.steps) : 0.0), num(it.mean), std::to_string(it.max),
            std::to_string(safe), num(std::max(0.0, r.max_violation)), std::to_string(s.seed)});
}

std::vector<BenchRow> bench(const scenario::Sweep& sweep, int parallel) {
  std::vector<BenchRow> rows(sweep.configs.size());
  auto one = [&](std::size_t i) {
    BenchRow& b = rows[i];
    std::tie(b.n_pi, b.n_x) = sweep.configs[i];
    try {
      const scenario::Scenario s = scenario::resized(sweep.base, b.n_pi, b.n_x);
      b.variables_per_step = heatfield::variables_per_step(s.system);
      const RunResult r = run(s);
      b.status = r.status;
      b.message = r.message;
      b.steps_completed = static_cast<int>(r.steps.size());
      b.avg_cost = r.steps.empty() ? 0.0 : total_cost(r.steps) / static_cast<double>(r.steps.size());
      b.avg_wall_ms = mean_wall_ms(r.steps);
      const IterationStats it = iteration_stats(r.steps);
      b.mean_iterations = it.mean;
      b.max_iterations = it.max;
    } catch (const scenario::ConfigError& e) {
      b.config_error = true;
      b.message = e.what();
    } catch (const std::exception& e) {
      b.status = RunStatus::solver_failure;
      b.message = e.what();
    }
  };
  const std::size_t workers = std::min<std::size_t>(static_cast<std::size_t>(std::max(1, parallel)), rows.size());
  if (workers <= 1) {
    for (std::size_t i = 0; i < rows.size(); ++i) one(i);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&, w] {
        for (std::size_t i = w; i < rows.size(); i += workers) one(i);
      });
    }
    for (std::thread& t : pool) t.join();
  }
  return rows;
}

void write_bench(std::ostream& out, const std::vector<BenchRow>& rows, const CsvOptions& opt) {
  row(out, {"n_pi[-]", "n_x[-]", "variables_per_step[-]", "status[-]", "steps_completed[-]",
            "avg_cost_per_step[EUR]", "avg_calc_time_per_step[ms]", "wall_ratio_to_first[-]",
            "pd_iterations_mean[-]", "pd_iterations_max[-]", "message[-]"});
  const double first = rows.empty() ? 0.0 : rows.front().avg_wall_ms;
  for (const BenchRow& b : rows) {
    const double ratio = opt.timing && first > 0.0 ? b.avg_wall_ms / first : 0.0;
    row(out, {std::to_string(b.n_pi), std::to_string(b.n_x), std::to_string(b.variables_per_step),
              b.config_error ? "config_error" : std::string(status_name(b.status)), std::to_string(b.steps_completed),
              num(b.avg_cost), num(opt.timing ? b.avg_wall_ms : 0.0), num(ratio), num(b.mean_iterations),
              std::to_string(b.max_iterations), text(b.message)});
  }
}

Index expected_variables_per_step(int n_pi, int n_x) {
  const Index cvs = 2 * static_cast<Index>(2 * n_pi + 1) * n_x;  // two layers of 2 n_pi + 1 columns
  const Index cv_flows = static_cast<Index>(n_pi) * n_x;
  const Index pressure_losses = n_pi, pump_flows = n_pi;
  const Index thermal_algebraic = 2, heater = 1;
  return cvs + cv_flows + pressure_losses + pump_flows + thermal_algebraic + heater;
}

std::vector<Check> validate_model(const scenario::Scenario& s) {
  std::vector<Check> checks;
  const CvNetwork net = scenario::build_network(s);

  {
    Check c{"network_consistency", true, "ok"};
    try {
      net.validate();
    } catch (const std::invalid_argument& e) {
      c.passed = false;
      c.detail = e.what();
    }
    checks.push_back(std::move(c));
  }
  {
    const double defect = capacity_symmetry_defect(net);
    checks.push_back({"capacity_weighted_antisymmetry", defect <= 1e-12, "defect " + num(defect)});
  }
  {
    const Index built = StepLayout(net.dims).size;
    const Index expected = expected_variables_per_step(s.system.n_pi, s.system.n_x);
    checks.push_back({"variable_count", built == expected,
                      std::to_string(built) + " per step (expected " + std::to_string(expected) + ")"});
  }

  std::mt19937_64 rng(s.seed);
  auto uniform = [&rng](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };
  Point p = Point::zeros(net.dims);
  const heatfield::HeatfieldParams& hp = s.system;
  for (Index i = 0; i < p.theta.size(); ++i) p.theta[i] = uniform(275.0, 300.0);
  for (Index i = 0; i < p.zh.size(); ++i) p.zh[i] = uniform(1e3, 1e5);
  for (Index i = 0; i < p.zt.size(); ++i) p.zt[i] = uniform(278.0, 300.0);
  for (Index i = 0; i < p.uh.size(); ++i) p.uh[i] = uniform(hp.mdot_min, hp.mdot_max);
  for (Index i = 0; i < p.ut.size(); ++i) p.ut[i] = uniform(0.0, hp.dtheta_max);
  for (Index i = 0; i < p.d.size(); ++i) p.d[i] = uniform(260.0, 290.0);

  for (Target t : {Target::dynamics, Target::f_h, Target::f_t, Target::g_h, Target::g_t}) {
    const BilinearMap& map = target_map(net, t);
    for (Block b : {Block::theta, Block::zh, Block::zt, Block::uh, Block::ut, Block::d}) {
      const Eigen::MatrixXd analytic = Eigen::MatrixXd(jacobian_wrt_block(net, p, t, b));
      Eigen::MatrixXd fd(analytic.rows(), analytic.cols());
      for (Index j = 0; j < analytic.cols(); ++j) {
        Point plus = p, minus = p;
        const double h = 1e-6 * std::max(1.0, std::abs(p.get(b)[j]));
        plus.get(b)[j] += h;
        minus.get(b)[j] -= h;
        fd.col(j) = (map.evaluate(plus, net.mflow(plus)) - map.evaluate(minus, net.mflow(minus))) / (2.0 * h);
      }
      const double scale = 1.0 + (analytic.size() ? analytic.cwiseAbs().maxCoeff() : 0.0);
      const double err = analytic.size() ? (analytic - fd).cwiseAbs().maxCoeff() / scale : 0.0;
      checks.push_back({"jacobian_fd[" + std::string(target_name(t)) + "/" + std::string(block_name(b)) + "]",
                        err <= 1e-6, "relative error " + num(err)});
    }
  }
  return checks;
}

}  // namespace thmpc::runner
