#include "thmpc/scenario.hpp"

#include <doctest.h>
#include <json.hpp>

#include <filesystem>
#include <fstream>

using namespace thmpc;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

json minimal() {
  return json::parse(R"({
    "schema_version": 1,
    "name": "t",
    "system": {"n_pi": 1, "n_x": 2},
    "timestep_s": 7200,
    "horizon": 2,
    "sim_steps": 1,
    "initial_temperatures": 280.0,
    "series": {"price": [0.3, 0.1, 0.3], "theta_soil": 283.0, "theta_air": 270.0}
  })");
}

std::string where_of(const json& doc, const fs::path& base = ".") {
  try {
    scenario::parse(doc.dump(), base);
  } catch (const scenario::ConfigError& e) {
    return e.where();
  }
  return "<accepted>";
}

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& tag) {
    path = fs::temp_directory_path() / ("thmpc_test_" + tag + "_" + std::to_string(::getpid()));
    fs::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path, ec);
  }
};

}  // namespace

TEST_SUITE("scenario") {
  TEST_CASE("minimal scenario") {
    const scenario::Scenario s = scenario::parse(minimal().dump());
    CHECK(s.name == "t");
    CHECK(s.system.n_pi == 1);
    CHECK(s.system.n_x == 2);
    CHECK(s.timestep_s == 7200.0);
    CHECK(s.bdf_order == 2);
    CHECK(s.horizon == 2);
    CHECK(s.sim_steps == 1);
    CHECK(s.initial_temperatures.size() == 12);
    CHECK(s.initial_temperatures.minCoeff() == 280.0);
    CHECK(s.price == std::vector<double>{0.3, 0.1, 0.3});
    CHECK(s.theta_soil == std::vector<double>(3, 283.0));
    CHECK(s.controller.kind == scenario::ControllerKind::pd);
    CHECK(s.controller.pd.n_c == 2);
    CHECK(s.controller.pd.alpha0 == 5.0);
    CHECK(s.seed == 0);
    const auto d = s.disturbances();
    REQUIRE(d.size() == 3);
    CHECK(d[1][0] == 283.0);
    CHECK(d[1][1] == 270.0);
  }

  TEST_CASE("missing and unknown fields are named") {
    json doc = minimal();
    doc.erase("horizon");
    CHECK(where_of(doc) == "horizon");
    doc = minimal();
    doc["bogus"] = 1;
    CHECK(where_of(doc) == "bogus");
    doc = minimal();
    doc["system"]["sigma_q"] = 1.0;
    CHECK(where_of(doc) == "system.sigma_q");
    doc = minimal();
    doc["series"].erase("theta_air");
    CHECK(where_of(doc) == "series.theta_air");
    doc = minimal();
    doc["controller"] = {{"alpha", 2.0}};
    CHECK(where_of(doc) == "controller.alpha");
  }

  TEST_CASE("invalid values are rejected") {
    json doc = minimal();
    doc["schema_version"] = 2;
    CHECK(where_of(doc) == "schema_version");
    doc = minimal();
    doc["timestep_s"] = 0;
    CHECK(where_of(doc) == "timestep_s");
    doc = minimal();
    doc["bdf_order"] = 3;
    CHECK(where_of(doc) == "bdf_order");
    doc = minimal();
    doc["system"]["n_pi"] = 0;
    CHECK(where_of(doc) == "system");
    doc = minimal();
    doc["system"]["n_x"] = 2.5;
    CHECK(where_of(doc) == "system.n_x");
    doc = minimal();
    doc["seed"] = -4;
    CHECK(where_of(doc) == "seed");
    doc = minimal();
    doc["controller"] = {{"alpha0", -1.0}};
    CHECK(where_of(doc) == "controller");
    doc = minimal();
    doc["controller"] = {{"type", "ipm"}};
    CHECK(where_of(doc) == "controller.type");
    CHECK_THROWS_AS(scenario::parse("{ not json"), scenario::ConfigError);
  }

  TEST_CASE("series must cover the run and the horizon") {
    json doc = minimal();
    doc["series"]["price"] = {0.3, 0.1};
    CHECK(where_of(doc) == "series.price");
    doc = minimal();
    doc["series"]["theta_air"] = "cold";
    CHECK(where_of(doc) == "series.theta_air");
  }

  TEST_CASE("initial temperatures per CV") {
    json doc = minimal();
    json arr = json::array();
    for (int i = 0; i < 12; ++i) arr.push_back(279.0 + i);
    doc["initial_temperatures"] = arr;
    const scenario::Scenario s = scenario::parse(doc.dump());
    CHECK(s.initial_temperatures[11] == 290.0);
    arr.erase(0);
    doc["initial_temperatures"] = arr;
    CHECK(where_of(doc) == "initial_temperatures");
    doc["initial_temperatures"] = -3.0;
    CHECK(where_of(doc) == "initial_temperatures");
  }

  TEST_CASE("series from CSV files") {
    TempDir dir("csv");
    {
      std::ofstream out(dir.path / "series.csv");
      out << "step,price,theta_air\n0,0.1,268\n1,0.2,269\n\n2,0.3,270\n";
    }
    json doc = minimal();
    doc["series"]["price"] = {{"csv", "series.csv"}, {"column", "price"}};
    doc["series"]["theta_air"] = {{"csv", (dir.path / "series.csv").string()}, {"column", "theta_air"}};
    const scenario::Scenario s = scenario::parse(doc.dump(), dir.path);
    CHECK(s.price == std::vector<double>{0.1, 0.2, 0.3});
    CHECK(s.theta_air == std::vector<double>{268.0, 269.0, 270.0});

    doc["series"]["price"] = {{"csv", "series.csv"}, {"column", "cost"}};
    CHECK(where_of(doc, dir.path) == "series.price");
    doc["series"]["price"] = {{"csv", "nope.csv"}, {"column", "price"}};
    CHECK(where_of(doc, dir.path) == "series.price");
    {
      std::ofstream out(dir.path / "bad.csv");
      out << "price\n0.1\nabc\n0.3\n";
    }
    doc["series"]["price"] = {{"csv", "bad.csv"}, {"column", "price"}};
    CHECK(where_of(doc, dir.path) == "series.price");
  }

  TEST_CASE("grid controller specs") {
    json doc = minimal();
    doc["controller"] = {{"type", "grid"}, {"lo", 1.0}, {"hi", 3.0}, {"points", 5}, {"threads", 2}};
    scenario::Scenario s = scenario::parse(doc.dump());
    CHECK(s.controller.kind == scenario::ControllerKind::grid);
    CHECK(s.controller.grid_values == std::vector<double>{1.0, 1.5, 2.0, 2.5, 3.0});
    CHECK(s.controller.grid_threads == 2);
    doc["controller"] = {{"type", "grid"}, {"values", {0.5, 4.0}}};
    s = scenario::parse(doc.dump());
    CHECK(s.controller.grid_values == std::vector<double>{0.5, 4.0});
    doc["controller"] = {{"type", "grid"}, {"values", json::array()}};
    CHECK(where_of(doc) == "controller.values");
    doc["controller"] = {{"type", "grid"}, {"lo", 3.0}, {"hi", 1.0}, {"points", 3}};
    CHECK(where_of(doc) == "controller");
  }

  TEST_CASE("pd controller overrides") {
    json doc = minimal();
    doc["controller"] = {{"type", "pd"}, {"alpha0", 2.5}, {"i_max", 7}, {"safe_flow", 3.0}, {"eps_abs", 0.01}};
    const scenario::Scenario s = scenario::parse(doc.dump());
    CHECK(s.controller.pd.alpha0 == 2.5);
    CHECK(s.controller.pd.i_max == 7);
    CHECK(s.controller.pd.safe_flow == 3.0);
    CHECK(s.controller.pd.eps_abs == 0.01);
    CHECK(s.controller.pd.eps_rel == 1e-4);
  }

  TEST_CASE("open-loop controls") {
    json doc = minimal();
    doc["system"]["n_pi"] = 2;
    doc["sim_steps"] = 3;
    doc["series"]["price"] = 0.2;
    doc["controller"] = {{"type", "open_loop"}, {"mdot", {2.0, {1.0, 2.0, 3.0}}}, {"dtheta", {1.0, 0.5, 0.0}}};
    const scenario::Scenario s = scenario::parse(doc.dump());
    CHECK(s.controller.kind == scenario::ControllerKind::open_loop);
    REQUIRE(s.controller.open_loop_mdot.size() == 2);
    CHECK(s.controller.open_loop_mdot[0] == std::vector<double>(3, 2.0));
    CHECK(s.controller.open_loop_mdot[1] == std::vector<double>{1.0, 2.0, 3.0});
    CHECK(s.controller.open_loop_dtheta == std::vector<double>{1.0, 0.5, 0.0});

    doc["controller"]["mdot"] = 4.0;
    CHECK(scenario::parse(doc.dump()).controller.open_loop_mdot[1] == std::vector<double>(3, 4.0));
    doc["controller"]["mdot"] = {2.0, 2.0, 2.0};
    CHECK(where_of(doc) == "controller.mdot");
    doc["controller"]["mdot"] = {2.0, {1.0, 2.0}};
    CHECK(where_of(doc) == "controller.mdot[1]");
  }

  TEST_CASE("resizing carries a uniform initial temperature") {
    const scenario::Scenario s = scenario::parse(minimal().dump());
    const scenario::Scenario r = scenario::resized(s, 2, 3);
    CHECK(r.system.n_pi == 2);
    CHECK(r.initial_temperatures.size() == 30);
    CHECK(r.initial_temperatures.maxCoeff() == 280.0);
    CHECK_THROWS_AS(scenario::resized(s, 0, 3), scenario::ConfigError);

    json doc = minimal();
    json arr = json::array();
    for (int i = 0; i < 12; ++i) arr.push_back(279.0 + i);
    doc["initial_temperatures"] = arr;
    CHECK_THROWS_AS(scenario::resized(scenario::parse(doc.dump()), 2, 3), scenario::ConfigError);
  }

  TEST_CASE("fault injection negates one coupling") {
    json doc = minimal();
    const scenario::Scenario clean = scenario::parse(doc.dump());
    CHECK(capacity_symmetry_defect(scenario::build_network(clean)) <= 1e-12);
    // cv1 (bottom soil, slice 1) and cv2 (bottom soil, slice 2) are coupled along x.
    doc["fault_injection"] = {{"negate_coupling", {1, 2}}};
    const scenario::Scenario bad = scenario::parse(doc.dump());
    const CvNetwork net = scenario::build_network(bad);
    CHECK(net.a_matrix().coeff(0, 1) < 0.0);
    CHECK(capacity_symmetry_defect(net) > 1e-3);
    doc["fault_injection"] = {{"negate_coupling", {1, 1}}};
    CHECK(where_of(doc) == "fault_injection.negate_coupling");
    doc["fault_injection"] = {{"negate_coupling", {1, 12}}};
    const scenario::Scenario far = scenario::parse(doc.dump());
    CHECK_THROWS_AS(scenario::build_network(far), scenario::ConfigError);
  }

  TEST_CASE("sweep files") {
    TempDir dir("sweep");
    {
      std::ofstream out(dir.path / "base.json");
      out << minimal().dump();
    }
    const json inline_sweep = {{"schema_version", 1}, {"scenario", minimal()}, {"configs", {{1, 2}, {2, 3}}}};
    const scenario::Sweep a = scenario::parse_sweep(inline_sweep.dump());
    CHECK(a.configs == std::vector<std::pair<int, int>>{{1, 2}, {2, 3}});
    CHECK(a.base.name == "t");

    const json file_sweep = {{"schema_version", 1}, {"scenario", "base.json"}, {"configs", json::array()}};
    {
      std::ofstream out(dir.path / "sweep.json");
      out << file_sweep.dump();
    }
    const scenario::Sweep b = scenario::load_sweep(dir.path / "sweep.json");
    CHECK(b.configs.empty());
    CHECK(b.base.system.n_x == 2);

    json bad = inline_sweep;
    bad["configs"] = {{1, 2, 3}};
    CHECK_THROWS_AS(scenario::parse_sweep(bad.dump()), scenario::ConfigError);
    CHECK_THROWS_AS(scenario::load_sweep(dir.path / "missing.json"), scenario::ConfigError);
  }

  TEST_CASE("loading names the scenario after its file") {
    TempDir dir("load");
    json doc = minimal();
    doc.erase("name");
    {
      std::ofstream out(dir.path / "winter_case.json");
      out << doc.dump();
    }
    CHECK(scenario::load(dir.path / "winter_case.json").name == "winter_case");
  }

  TEST_CASE("shipped scenarios parse") {
    for (const char* f : {"minimal.json", "field_1x2_48h.json", "field_2x3_48h.json", "grid_1x2.json",
                          "study_2x3_open_loop.json"})
      CHECK_NOTHROW(scenario::load(fs::path(THMPC_SCENARIO_DIR) / f));
    CHECK(scenario::load_sweep(fs::path(THMPC_SCENARIO_DIR) / "bench.json").configs.size() == 3);
  }
}
