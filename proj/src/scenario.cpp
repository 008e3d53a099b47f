#include "thmpc/scenario.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

namespace thmpc::scenario {

using nlohmann::json;

namespace {

std::string read_file(const std::filesystem::path& path, const std::string& where) {
  std::ifstream in(path);
  if (!in) throw ConfigError(where, "cannot open " + path.string());
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

void reject_unknown(const json& obj, const std::string& where, std::initializer_list<std::string_view> known) {
  for (const auto& [key, value] : obj.items()) {
    if (std::find(known.begin(), known.end(), key) == known.end())
      throw ConfigError(where.empty() ? key : where + "." + key, "unknown field");
  }
}

const json& require(const json& obj, const std::string& key, const std::string& where) {
  const auto it = obj.find(key);
  if (it == obj.end()) throw ConfigError(where.empty() ? key : where + "." + key, "missing field");
  return *it;
}

double get_number(const json& v, const std::string& where) {
  if (!v.is_number()) throw ConfigError(where, "expected a number");
  return v.get<double>();
}

int get_int(const json& v, const std::string& where) {
  if (!v.is_number_integer()) throw ConfigError(where, "expected an integer");
  return v.get<int>();
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream s(line);
  while (std::getline(s, cell, ',')) {
    const auto b = cell.find_first_not_of(" \t\r");
    const auto e = cell.find_last_not_of(" \t\r");
    out.push_back(b == std::string::npos ? "" : cell.substr(b, e - b + 1));
  }
  return out;
}

std::vector<double> read_csv_column(const std::filesystem::path& path, const std::string& column,
                                    const std::string& where) {
  std::istringstream in(read_file(path, where));
  std::string line;
  if (!std::getline(in, line)) throw ConfigError(where, path.string() + " is empty");
  const std::vector<std::string> header = split_csv_line(line);
  const auto it = std::find(header.begin(), header.end(), column);
  if (it == header.end()) throw ConfigError(where, "column '" + column + "' not found in " + path.string());
  const std::size_t col = static_cast<std::size_t>(it - header.begin());
  std::vector<double> out;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::vector<std::string> cells = split_csv_line(line);
    if (col >= cells.size()) throw ConfigError(where, path.string() + " line " + std::to_string(line_no) + " is short");
    try {
      std::size_t used = 0;
      out.push_back(std::stod(cells[col], &used));
      if (used != cells[col].size()) throw std::invalid_argument("trailing characters");
    } catch (const std::exception&) {
      throw ConfigError(where, path.string() + " line " + std::to_string(line_no) + ": not a number");
    }
  }
  return out;
}

// number (held constant), array, or {"csv": path, "column": name}
std::vector<double> read_series(const json& v, std::size_t length, const std::filesystem::path& base_dir,
                                const std::string& where) {
  std::vector<double> out;
  if (v.is_number()) {
    out.assign(length, v.get<double>());
  } else if (v.is_array()) {
    for (std::size_t i = 0; i < v.size(); ++i) out.push_back(get_number(v[i], where + "[" + std::to_string(i) + "]"));
  } else if (v.is_object()) {
    reject_unknown(v, where, {"csv", "column"});
    const json& file = require(v, "csv", where);
    const json& column = require(v, "column", where);
    if (!file.is_string() || !column.is_string()) throw ConfigError(where, "csv and column must be strings");
    std::filesystem::path p = file.get<std::string>();
    if (p.is_relative()) p = base_dir / p;
    if (!std::filesystem::exists(p)) throw ConfigError(where, "file not found: " + p.string());
    out = read_csv_column(p, column.get<std::string>(), where);
  } else {
    throw ConfigError(where, "expected a number, an array or a csv reference");
  }
  if (out.size() < length)
    throw ConfigError(where, "has " + std::to_string(out.size()) + " entries, sim_steps + horizon needs " +
                                 std::to_string(length));
  for (double x : out) {
    if (!std::isfinite(x)) throw ConfigError(where, "non-finite entry");
  }
  return out;
}

using ParamSetter = std::function<void(heatfield::HeatfieldParams&, const json&, const std::string&)>;

const std::map<std::string, ParamSetter, std::less<>>& param_setters() {
  static const std::map<std::string, ParamSetter, std::less<>> m = [] {
    std::map<std::string, ParamSetter, std::less<>> s;
    auto num = [&s](const char* key, double heatfield::HeatfieldParams::*field) {
      s[key] = [field](heatfield::HeatfieldParams& p, const json& v, const std::string& w) { p.*field = get_number(v, w); };
    };
    s["n_pi"] = [](heatfield::HeatfieldParams& p, const json& v, const std::string& w) { p.n_pi = get_int(v, w); };
    s["n_x"] = [](heatfield::HeatfieldParams& p, const json& v, const std::string& w) { p.n_x = get_int(v, w); };
    num("volume", &heatfield::HeatfieldParams::volume);
    num("sigma_x", &heatfield::HeatfieldParams::sigma_x);
    num("sigma_y", &heatfield::HeatfieldParams::sigma_y);
    num("sigma_z", &heatfield::HeatfieldParams::sigma_z);
    num("sigma_pi", &heatfield::HeatfieldParams::sigma_pi);
    num("c_w", &heatfield::HeatfieldParams::c_w);
    num("rho_w", &heatfield::HeatfieldParams::rho_w);
    num("cs_rhos", &heatfield::HeatfieldParams::cs_rhos);
    num("dp_nom", &heatfield::HeatfieldParams::dp_nom);
    num("mdot_nom", &heatfield::HeatfieldParams::mdot_nom);
    num("eta_pu", &heatfield::HeatfieldParams::eta_pu);
    num("theta_soil_min", &heatfield::HeatfieldParams::theta_soil_min);
    num("theta_soil_max", &heatfield::HeatfieldParams::theta_soil_max);
    num("mdot_min", &heatfield::HeatfieldParams::mdot_min);
    num("mdot_max", &heatfield::HeatfieldParams::mdot_max);
    num("dtheta_max", &heatfield::HeatfieldParams::dtheta_max);
    return s;
  }();
  return m;
}

heatfield::HeatfieldParams read_system(const json& v) {
  if (!v.is_object()) throw ConfigError("system", "expected an object");
  require(v, "n_pi", "system");
  require(v, "n_x", "system");
  heatfield::HeatfieldParams p;
  for (const auto& [key, value] : v.items()) {
    const auto it = param_setters().find(key);
    if (it == param_setters().end()) throw ConfigError("system." + key, "unknown field");
    it->second(p, value, "system." + key);
  }
  try {
    p.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError("system", e.what());
  }
  return p;
}

ControllerSpec read_controller(const json& v, int n_pi, std::size_t steps, const std::filesystem::path& base_dir) {
  ControllerSpec c;
  if (!v.is_object()) throw ConfigError("controller", "expected an object");
  const std::string type = v.contains("type") ? v["type"].get<std::string>() : "pd";
  if (type == "pd") {
    reject_unknown(v, "controller", {"type", "alpha0", "b0", "b_shrink", "max_backtracks", "eps_rel", "eps_abs",
                                     "i_max", "feasibility_tolerance", "safe_flow", "safe_ut"});
    pd::PdConfig& p = c.pd;
    auto num = [&](const char* key, double& field) {
      if (v.contains(key)) field = get_number(v[key], std::string("controller.") + key);
    };
    auto integer = [&](const char* key, int& field) {
      if (v.contains(key)) field = get_int(v[key], std::string("controller.") + key);
    };
    num("alpha0", p.alpha0);
    num("b0", p.b0);
    num("b_shrink", p.b_shrink);
    integer("max_backtracks", p.max_backtracks);
    num("eps_rel", p.eps_rel);
    num("eps_abs", p.eps_abs);
    integer("i_max", p.i_max);
    num("feasibility_tolerance", p.feasibility_tolerance);
    num("safe_flow", p.safe_flow);
    num("safe_ut", p.safe_ut);
  } else if (type == "grid") {
    c.kind = ControllerKind::grid;
    reject_unknown(v, "controller", {"type", "values", "lo", "hi", "points", "threads"});
    if (v.contains("values")) {
      const json& vals = v["values"];
      if (!vals.is_array() || vals.empty()) throw ConfigError("controller.values", "expected a non-empty array");
      for (std::size_t i = 0; i < vals.size(); ++i)
        c.grid_values.push_back(get_number(vals[i], "controller.values[" + std::to_string(i) + "]"));
    } else {
      const double lo = get_number(require(v, "lo", "controller"), "controller.lo");
      const double hi = get_number(require(v, "hi", "controller"), "controller.hi");
      const int points = get_int(require(v, "points", "controller"), "controller.points");
      if (points < 1 || !(hi >= lo)) throw ConfigError("controller", "grid needs points >= 1 and hi >= lo");
      for (int i = 0; i < points; ++i) c.grid_values.push_back(points == 1 ? lo : lo + (hi - lo) * i / (points - 1));
    }
    if (v.contains("threads")) c.grid_threads = get_int(v["threads"], "controller.threads");
    if (c.grid_threads < 1) throw ConfigError("controller.threads", "must be >= 1");
  } else if (type == "open_loop") {
    c.kind = ControllerKind::open_loop;
    reject_unknown(v, "controller", {"type", "mdot", "dtheta"});
    const json& mdot = require(v, "mdot", "controller");
    // One series per pipe; a single number holds every pipe constant.
    if (mdot.is_array() && static_cast<int>(mdot.size()) == n_pi) {
      for (int q = 0; q < n_pi; ++q)
        c.open_loop_mdot.push_back(
            read_series(mdot[static_cast<std::size_t>(q)], steps, base_dir, "controller.mdot[" + std::to_string(q) + "]"));
    } else if (mdot.is_number()) {
      c.open_loop_mdot.assign(static_cast<std::size_t>(n_pi), read_series(mdot, steps, base_dir, "controller.mdot"));
    } else {
      throw ConfigError("controller.mdot", "expected a number or one series per pipe (" + std::to_string(n_pi) + ")");
    }
    c.open_loop_dtheta = read_series(require(v, "dtheta", "controller"), steps, base_dir, "controller.dtheta");
  } else {
    throw ConfigError("controller.type", "expected \"pd\", \"grid\" or \"open_loop\"");
  }
  return c;
}

Scenario from_json(const json& doc, const std::filesystem::path& base_dir) {
  if (!doc.is_object()) throw ConfigError("", "scenario must be a JSON object");
  reject_unknown(doc, "", {"schema_version", "name", "system", "timestep_s", "bdf_order", "horizon", "sim_steps",
                           "initial_temperatures", "series", "controller", "seed", "fault_injection"});
  const int version = get_int(require(doc, "schema_version", ""), "schema_version");
  if (version != kSchemaVersion)
    throw ConfigError("schema_version", "unsupported version " + std::to_string(version) + ", expected " +
                                            std::to_string(kSchemaVersion));
  Scenario s;
  if (doc.contains("name")) {
    if (!doc["name"].is_string()) throw ConfigError("name", "expected a string");
    s.name = doc["name"].get<std::string>();
  }
  s.system = read_system(require(doc, "system", ""));
  s.timestep_s = get_number(require(doc, "timestep_s", ""), "timestep_s");
  if (!(s.timestep_s > 0)) throw ConfigError("timestep_s", "must be positive");
  if (doc.contains("bdf_order")) s.bdf_order = get_int(doc["bdf_order"], "bdf_order");
  if (s.bdf_order != 1 && s.bdf_order != 2) throw ConfigError("bdf_order", "must be 1 or 2");
  s.horizon = get_int(require(doc, "horizon", ""), "horizon");
  if (s.horizon < 1) throw ConfigError("horizon", "must be >= 1");
  s.sim_steps = get_int(require(doc, "sim_steps", ""), "sim_steps");
  if (s.sim_steps < 1) throw ConfigError("sim_steps", "must be >= 1");
  if (doc.contains("seed")) {
    if (!doc["seed"].is_number_unsigned()) throw ConfigError("seed", "expected a nonnegative integer");
    s.seed = doc["seed"].get<std::uint64_t>();
  }

  const Index n = heatfield::state_count(s.system);
  const json& init = require(doc, "initial_temperatures", "");
  if (init.is_number()) {
    s.initial_temperatures = Vector::Constant(n, init.get<double>());
  } else if (init.is_array()) {
    if (static_cast<Index>(init.size()) != n)
      throw ConfigError("initial_temperatures", "has " + std::to_string(init.size()) + " entries, the system has " +
                                                    std::to_string(n) + " CVs");
    s.initial_temperatures.resize(n);
    for (Index i = 0; i < n; ++i)
      s.initial_temperatures[i] = get_number(init[static_cast<std::size_t>(i)], "initial_temperatures");
  } else {
    throw ConfigError("initial_temperatures", "expected a number or an array");
  }
  if (!s.initial_temperatures.allFinite() || (s.initial_temperatures.array() <= 0.0).any())
    throw ConfigError("initial_temperatures", "temperatures must be positive kelvin values");

  const json& series = require(doc, "series", "");
  if (!series.is_object()) throw ConfigError("series", "expected an object");
  reject_unknown(series, "series", {"price", "theta_soil", "theta_air"});
  const std::size_t length = static_cast<std::size_t>(s.sim_steps + s.horizon);
  s.price = read_series(require(series, "price", "series"), length, base_dir, "series.price");
  s.theta_soil = read_series(require(series, "theta_soil", "series"), length, base_dir, "series.theta_soil");
  s.theta_air = read_series(require(series, "theta_air", "series"), length, base_dir, "series.theta_air");

  if (doc.contains("controller"))
    s.controller = read_controller(doc["controller"], s.system.n_pi, static_cast<std::size_t>(s.sim_steps), base_dir);
  s.controller.pd.n_c = s.horizon;
  try {
    s.controller.pd.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError("controller", e.what());
  }

  if (doc.contains("fault_injection")) {
    const json& f = doc["fault_injection"];
    if (!f.is_object()) throw ConfigError("fault_injection", "expected an object");
    reject_unknown(f, "fault_injection", {"negate_coupling"});
    if (f.contains("negate_coupling")) {
      const json& c = f["negate_coupling"];
      if (!c.is_array() || c.size() != 2) throw ConfigError("fault_injection.negate_coupling", "expected [row, column]");
      const int i = get_int(c[0], "fault_injection.negate_coupling"), j = get_int(c[1], "fault_injection.negate_coupling");
      if (i < 1 || j < 1 || i > n || j > n || i == j)
        throw ConfigError("fault_injection.negate_coupling", "needs two distinct CV numbers in 1.." + std::to_string(n));
      s.fault.negate_coupling = std::make_pair(i, j);
    }
  }
  return s;
}

json parse_json(std::string_view text) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError("", std::string("invalid JSON: ") + e.what());
  }
}

}  // namespace

std::vector<Vector> Scenario::disturbances() const {
  std::vector<Vector> out;
  const std::size_t n = std::min(theta_soil.size(), theta_air.size());
  for (std::size_t k = 0; k < n; ++k) {
    Vector d(2);
    d[heatfield::kThetaSoil] = theta_soil[k];
    d[heatfield::kThetaAir] = theta_air[k];
    out.push_back(std::move(d));
  }
  return out;
}

Scenario parse(std::string_view text, const std::filesystem::path& base_dir) {
  try {
    return from_json(parse_json(text), base_dir);
  } catch (const json::exception& e) {
    throw ConfigError("", e.what());
  }
}

Scenario load(const std::filesystem::path& path) {
  Scenario s = parse(read_file(path, "scenario"), path.parent_path());
  if (s.name.empty()) s.name = path.stem().string();
  return s;
}

Scenario resized(const Scenario& s, int n_pi, int n_x) {
  Scenario out = s;
  out.system.n_pi = n_pi;
  out.system.n_x = n_x;
  try {
    out.system.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError("system", e.what());
  }
  const Vector& t = s.initial_temperatures;
  if (t.size() > 0 && (t.array() != t[0]).any())
    throw ConfigError("initial_temperatures", "per-CV temperatures cannot be resized, use a uniform value");
  out.initial_temperatures = Vector::Constant(heatfield::state_count(out.system), t.size() > 0 ? t[0] : 0.0);
  out.fault = {};
  if (out.controller.kind == ControllerKind::open_loop && n_pi != s.system.n_pi)
    throw ConfigError("controller.mdot", "open-loop flow series cannot be resized to another pipe count");
  return out;
}

CvNetwork build_network(const Scenario& s) {
  CvNetwork net = heatfield::build(s.system);
  if (s.fault.negate_coupling) {
    const auto [i, j] = *s.fault.negate_coupling;
    SparseMatrix a = net.a_matrix();
    const double v = a.coeff(i - 1, j - 1);
    if (v == 0.0) throw ConfigError("fault_injection.negate_coupling", "CVs are not coupled");
    a.coeffRef(i - 1, j - 1) = -v;
    net.dynamics.set_affine(Block::theta, std::move(a));
  }
  return net;
}

Sweep parse_sweep(std::string_view text, const std::filesystem::path& base_dir) {
  try {
    const json doc = parse_json(text);
    if (!doc.is_object()) throw ConfigError("", "sweep must be a JSON object");
    reject_unknown(doc, "", {"schema_version", "scenario", "configs"});
    const int version = get_int(require(doc, "schema_version", ""), "schema_version");
    if (version != kSchemaVersion) throw ConfigError("schema_version", "unsupported version " + std::to_string(version));
    Sweep sw;
    const json& base = require(doc, "scenario", "");
    if (base.is_string()) {
      std::filesystem::path p = base.get<std::string>();
      if (p.is_relative()) p = base_dir / p;
      sw.base = load(p);
    } else {
      sw.base = from_json(base, base_dir);
    }
    const json& configs = require(doc, "configs", "");
    if (!configs.is_array()) throw ConfigError("configs", "expected an array of [n_pi, n_x] pairs");
    for (std::size_t i = 0; i < configs.size(); ++i) {
      const std::string where = "configs[" + std::to_string(i) + "]";
      const json& c = configs[i];
      if (!c.is_array() || c.size() != 2) throw ConfigError(where, "expected [n_pi, n_x]");
      sw.configs.emplace_back(get_int(c[0], where), get_int(c[1], where));
    }
    return sw;
  } catch (const json::exception& e) {
    throw ConfigError("", e.what());
  }
}

Sweep load_sweep(const std::filesystem::path& path) {
  return parse_sweep(read_file(path, "sweep"), path.parent_path());
}

}  // namespace thmpc::scenario
