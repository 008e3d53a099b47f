// thmpc: closed-loop runs, benchmark sweeps and model checks for the heating
// field controller. See README.md for usage and docs/ for file formats.

#include "thmpc/runner.hpp"

#include <CLI11.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <filesystem>
#include <functional>
#include <fstream>
#include <iostream>

namespace {

namespace fs = std::filesystem;
using namespace thmpc;

enum Exit : int {
  kOk = 0,
  kInternal = 1,
  kConfig = 2,
  kInfeasible = 3,
  kSolverFailure = 4,
  kViolation = 5,
  kCheckFailed = 6,
};

int exit_code(runner::RunStatus s) {
  switch (s) {
    case runner::RunStatus::ok: return kOk;
    case runner::RunStatus::constraint_violation: return kViolation;
    case runner::RunStatus::infeasible: return kInfeasible;
    case runner::RunStatus::solver_failure: return kSolverFailure;
  }
  return kInternal;
}

void write_file(const fs::path& path, const std::function<void(std::ostream&)>& body) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw scenario::ConfigError("--out", "cannot write " + path.string());
  body(out);
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

void prepare_out(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw scenario::ConfigError("--out", "cannot create " + dir.string() + ": " + ec.message());
}

int cmd_run(const fs::path& scenario_path, const fs::path& out_dir, bool timing, int refinement) {
  const scenario::Scenario s = scenario::load(scenario_path);
  prepare_out(out_dir);
  spdlog::info("scenario '{}': (n_pi, n_x) = ({}, {}), {} steps of {} s, horizon {}", s.name, s.system.n_pi,
               s.system.n_x, s.sim_steps, s.timestep_s, s.horizon);
  const runner::RunResult r = runner::run(s, refinement);
  for (const pd::ClosedLoopStep& st : r.steps) {
    spdlog::debug("step {}: {} PD iterations ({}), cost {:.6f} EUR, {:.1f} ms", st.step, st.trace.records.size(),
                  pd::stop_name(st.trace.stop), st.applied.cost_h + st.applied.cost_t, st.wall_ms);
  }
  const runner::CsvOptions opt{timing};
  write_file(out_dir / "trajectory.csv", [&](std::ostream& o) { runner::write_trajectory(o, s, r); });
  write_file(out_dir / "trace.csv", [&](std::ostream& o) { runner::write_trace(o, r, opt); });
  write_file(out_dir / "summary.csv", [&](std::ostream& o) { runner::write_summary(o, s, r, opt); });
  if (r.status != runner::RunStatus::ok) {
    spdlog::error("{}: {}", runner::status_name(r.status), r.message);
  } else {
    spdlog::info("completed {} steps, CSVs in {}", r.steps.size(), out_dir.string());
  }
  return exit_code(r.status);
}

int cmd_bench(const fs::path& sweep_path, const fs::path& out_dir, int parallel, bool timing) {
  const scenario::Sweep sweep = scenario::load_sweep(sweep_path);
  prepare_out(out_dir);
  const std::vector<runner::BenchRow> rows = runner::bench(sweep, parallel);
  write_file(out_dir / "bench.csv", [&](std::ostream& o) { runner::write_bench(o, rows, {timing}); });
  int code = kOk;
  for (const runner::BenchRow& b : rows) {
    if (b.config_error) {
      spdlog::error("({}, {}): config error: {}", b.n_pi, b.n_x, b.message);
      if (code == kOk) code = kConfig;
    } else if (b.status != runner::RunStatus::ok) {
      spdlog::error("({}, {}): {}: {}", b.n_pi, b.n_x, runner::status_name(b.status), b.message);
      if (code == kOk) code = exit_code(b.status);
    } else {
      spdlog::info("({}, {}): {} variables per step, {:.3f} ms per step", b.n_pi, b.n_x, b.variables_per_step,
                   b.avg_wall_ms);
    }
  }
  return code;
}

int cmd_validate(const fs::path& scenario_path) {
  const scenario::Scenario s = scenario::load(scenario_path);
  bool ok = true;
  for (const runner::Check& c : runner::validate_model(s)) {
    std::cout << (c.passed ? "PASS " : "FAIL ") << c.name << ": " << c.detail << '\n';
    ok = ok && c.passed;
  }
  return ok ? kOk : kCheckFailed;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Economic MPC of a heating field by primal decomposition"};
  app.require_subcommand(1);
  std::string log_level = "info";
  app.add_option("--log-level", log_level, "trace, debug, info, warn, error, critical or off")
      ->check(CLI::IsMember({"trace", "debug", "info", "warn", "error", "critical", "off"}));

  fs::path scenario_path, out_dir;
  int parallel = 1;
  int refinement = 1;
  bool no_timing = false;

  CLI::App* run = app.add_subcommand("run", "closed-loop simulation of one scenario");
  run->add_option("--scenario", scenario_path, "scenario file")->required();
  run->add_option("--out", out_dir, "output directory")->required();
  run->add_flag("--no-timing", no_timing, "write 0 in wall-clock columns (byte-stable output)");
  run->add_option("--refine", refinement, "open-loop scenarios: simulate at timestep / N, sample every N-th step")
      ->check(CLI::PositiveNumber);

  CLI::App* bench = app.add_subcommand("bench", "closed-loop runs over a sweep of system sizes");
  bench->add_option("--scenario", scenario_path, "sweep file")->required();
  bench->add_option("--out", out_dir, "output directory")->required();
  bench->add_option("--parallel", parallel, "configurations run concurrently")->check(CLI::PositiveNumber);
  bench->add_flag("--no-timing", no_timing, "write 0 in wall-clock columns (byte-stable output)");

  CLI::App* validate = app.add_subcommand("validate-model", "structural checks of the scenario's model");
  validate->add_option("--scenario", scenario_path, "scenario file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfig;
  }

  auto logger = spdlog::stderr_color_mt("thmpc");
  spdlog::set_default_logger(logger);
  spdlog::set_level(spdlog::level::from_str(log_level));
  spdlog::set_pattern("%^%l%$: %v");

  try {
    if (*run) return cmd_run(scenario_path, out_dir, !no_timing, refinement);
    if (*bench) return cmd_bench(scenario_path, out_dir, parallel, !no_timing);
    if (*validate) return cmd_validate(scenario_path);
  } catch (const scenario::ConfigError& e) {
    spdlog::error("configuration: {}", e.what());
    return kConfig;
  } catch (const std::exception& e) {
    spdlog::critical("{}", e.what());
    return kInternal;
  }
  return kInternal;
}
