// Command-line front end: configuration parsing, subcommand dispatch and
// serialization of all simulation/optimization inputs and outputs.
//
// Subcommands:
//   evaluate         torque sweep + field samples for one design
//   gradcheck        adjoint derivatives vs central finite differences
//   optimize         constrained design optimization with streamed history
//   export-geometry  full NURBS control net of the instantiated design
//
// Exit codes: 0 success, 2 configuration error, 3 geometry error,
//             4 solver/runtime error, 5 gradient check failure.

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "igamotor/optimize.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
namespace im = igamotor::machine;
namespace opt = igamotor::optimize;
using igamotor::ConfigError;
using igamotor::GeometryError;
using igamotor::Mat2;
using igamotor::SolverError;
using igamotor::Vec2;
using igamotor::VecX;
using json = nlohmann::json;

namespace {

// ---------------------------------------------------------------------------
// Formatting and file helpers.

std::string num(double v) {
  char b[40];
  std::snprintf(b, sizeof b, "%.17g", v);
  return b;
}

void write_atomic(const fs::path& path, const std::string& content) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw ConfigError("cannot open for writing: " + tmp.string());
    out << content;
    if (!out) throw ConfigError("write failed: " + tmp.string());
  }
  fs::rename(tmp, path);
}

void error_json(int code, const std::string& kind, const std::string& message) {
  json e = {{"error", {{"code", code}, {"kind", kind}, {"message", message}}}};
  std::cerr << e.dump() << "\n";
}

// ---------------------------------------------------------------------------
// Run configuration: a single JSON document. Geometry lengths are millimetres
// and angles degrees (matching the design-parameter table); everything else
// is SI. Unknown keys are rejected so typos cannot silently fall back to
// defaults.

struct GradcheckConfig {
  int control_points = 10;
  unsigned seed = 7071u;
  double fd_step = 1e-6;
  double threshold = 1e-3;
  double angle_deg = 12.0;
};

struct RunConfig {
  im::Parameters params;
  VecX offsets_m = VecX::Zero(opt::kNumOffsets);
  std::string bh_csv;
  im::SimulationOptions sim;
  std::vector<double> angles_deg;
  int field_samples = 3;
  double field_angle_deg = std::numeric_limits<double>::quiet_NaN();
  GradcheckConfig gradcheck;
  opt::MachineOptimizationConfig optimize;
  std::string out_dir = "out";
};

void check_keys(const json& j, std::initializer_list<const char*> allowed,
                const std::string& where) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool known = false;
    for (const char* k : allowed)
      if (it.key() == k) {
        known = true;
        break;
      }
    if (!known) throw ConfigError("unknown key '" + it.key() + "' in " + where);
  }
}

std::vector<double> angles_from_json(const json& j) {
  std::vector<double> out;
  if (j.is_array()) {
    for (const auto& v : j) out.push_back(v.get<double>());
  } else if (j.is_object()) {
    check_keys(j, {"start", "stop", "count"}, "angles_deg");
    const double start = j.at("start").get<double>();
    const double stop = j.at("stop").get<double>();
    const int count = j.at("count").get<int>();
    if (count < 1) throw ConfigError("angles_deg.count must be >= 1");
    for (int i = 0; i < count; ++i)
      out.push_back(count == 1 ? start
                               : start + (stop - start) * i / (count - 1));
  } else {
    throw ConfigError("angles_deg must be an array or {start,stop,count}");
  }
  if (out.empty()) throw ConfigError("angle set is empty");
  return out;
}

std::vector<double> parse_angles_arg(const std::string& s) {
  std::vector<double> out;
  if (s.find(':') != std::string::npos) {
    double start = 0.0, stop = 0.0;
    int count = 0;
    char c1 = 0, c2 = 0;
    std::istringstream in(s);
    if (!(in >> start >> c1 >> stop >> c2 >> count) || c1 != ':' || c2 != ':' || count < 1)
      throw ConfigError("--angles range must be start:stop:count");
    for (int i = 0; i < count; ++i)
      out.push_back(count == 1 ? start : start + (stop - start) * i / (count - 1));
    return out;
  }
  std::istringstream in(s);
  std::string tok;
  while (std::getline(in, tok, ',')) {
    if (tok.empty()) continue;
    out.push_back(std::stod(tok));
  }
  if (out.empty()) throw ConfigError("--angles list is empty");
  return out;
}

RunConfig default_config() {
  RunConfig c;
  for (int i = 0; i < 30; ++i) c.angles_deg.push_back(static_cast<double>(i));
  return c;
}

RunConfig load_config(const std::string& path) {
  RunConfig c = default_config();
  if (path.empty()) return c;
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config: " + path);
  json j;
  try {
    j = json::parse(in, nullptr, true, /*ignore_comments=*/true);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config parse: ") + e.what());
  }

  check_keys(j,
             {"geometry", "material", "excitation", "axial_length_mm", "harmonics",
              "coupling_quad", "newton", "angles_deg", "field", "gradcheck", "optimize",
              "output_dir"},
             "config root");

  if (j.contains("geometry")) {
    const json& g = j["geometry"];
    check_keys(g, {"parameters", "offsets_mm"}, "geometry");
    if (g.contains("parameters")) {
      for (auto it = g["parameters"].begin(); it != g["parameters"].end(); ++it) {
        const int idx = im::Parameters::index_of(it.key());  // throws on unknown
        c.params[idx] = it.value().get<double>();
      }
    }
    if (g.contains("offsets_mm")) {
      const auto& o = g["offsets_mm"];
      if (!o.is_array() || static_cast<int>(o.size()) != opt::kNumOffsets)
        throw ConfigError("geometry.offsets_mm must hold " +
                          std::to_string(opt::kNumOffsets) + " values");
      for (int k = 0; k < opt::kNumOffsets; ++k)
        c.offsets_m[k] = o[static_cast<std::size_t>(k)].get<double>() * 1e-3;
    }
  }

  if (j.contains("material")) {
    const json& m = j["material"];
    check_keys(m, {"linear_iron", "mu_r_iron", "bh_csv"}, "material");
    if (m.contains("linear_iron")) c.sim.excitation.linear_iron = m["linear_iron"].get<bool>();
    if (m.contains("mu_r_iron")) c.sim.excitation.mu_r_iron = m["mu_r_iron"].get<double>();
    if (m.contains("bh_csv")) c.bh_csv = m["bh_csv"].get<std::string>();
  }

  if (j.contains("excitation")) {
    const json& e = j["excitation"];
    check_keys(e, {"current_A", "turns", "pole_pairs", "remanence_T", "mu_r_magnet"},
               "excitation");
    if (e.contains("current_A")) c.sim.excitation.current = e["current_A"].get<double>();
    if (e.contains("turns")) c.sim.excitation.turns = e["turns"].get<double>();
    if (e.contains("pole_pairs")) c.sim.excitation.pole_pairs = e["pole_pairs"].get<int>();
    if (e.contains("remanence_T")) c.sim.excitation.remanence = e["remanence_T"].get<double>();
    if (e.contains("mu_r_magnet")) c.sim.excitation.mu_r_magnet = e["mu_r_magnet"].get<double>();
  }

  if (j.contains("axial_length_mm")) c.sim.axial_length_mm = j["axial_length_mm"].get<double>();
  if (j.contains("harmonics")) c.sim.harmonics = im::machine_harmonics(j["harmonics"].get<int>());
  if (j.contains("coupling_quad")) c.sim.coupling_quad = j["coupling_quad"].get<int>();

  if (j.contains("newton")) {
    const json& n = j["newton"];
    check_keys(n, {"rel_tol", "abs_tol", "max_iter"}, "newton");
    if (n.contains("rel_tol")) c.sim.newton.rel_tol = n["rel_tol"].get<double>();
    if (n.contains("abs_tol")) c.sim.newton.abs_tol = n["abs_tol"].get<double>();
    if (n.contains("max_iter")) c.sim.newton.max_iter = n["max_iter"].get<int>();
  }

  if (j.contains("angles_deg")) c.angles_deg = angles_from_json(j["angles_deg"]);

  if (j.contains("field")) {
    const json& f = j["field"];
    check_keys(f, {"samples_per_patch", "angle_deg"}, "field");
    if (f.contains("samples_per_patch")) c.field_samples = f["samples_per_patch"].get<int>();
    if (f.contains("angle_deg") && !f["angle_deg"].is_null())
      c.field_angle_deg = f["angle_deg"].get<double>();
  }

  if (j.contains("gradcheck")) {
    const json& g = j["gradcheck"];
    check_keys(g, {"control_points", "seed", "fd_step", "threshold", "angle_deg"}, "gradcheck");
    if (g.contains("control_points")) c.gradcheck.control_points = g["control_points"].get<int>();
    if (g.contains("seed")) c.gradcheck.seed = g["seed"].get<unsigned>();
    if (g.contains("fd_step")) c.gradcheck.fd_step = g["fd_step"].get<double>();
    if (g.contains("threshold")) c.gradcheck.threshold = g["threshold"].get<double>();
    if (g.contains("angle_deg")) c.gradcheck.angle_deg = g["angle_deg"].get<double>();
  }

  if (j.contains("optimize")) {
    const json& o = j["optimize"];
    check_keys(o,
               {"mode", "w_area", "w_ripple", "w_smooth", "torque_target", "target_margin",
                "max_iterations", "tolerance", "memory", "shape_optimizes_phase"},
               "optimize");
    if (o.contains("mode")) c.optimize.mode = opt::mode_of(o["mode"].get<std::string>());
    if (o.contains("w_area")) c.optimize.w_area = o["w_area"].get<double>();
    if (o.contains("w_ripple")) c.optimize.w_ripple = o["w_ripple"].get<double>();
    if (o.contains("w_smooth")) c.optimize.w_smooth = o["w_smooth"].get<double>();
    if (o.contains("torque_target")) c.optimize.torque_target = o["torque_target"].get<double>();
    if (o.contains("target_margin")) c.optimize.target_margin = o["target_margin"].get<double>();
    if (o.contains("max_iterations"))
      c.optimize.max_iterations = o["max_iterations"].get<int>();
    if (o.contains("tolerance")) c.optimize.tolerance = o["tolerance"].get<double>();
    if (o.contains("memory")) c.optimize.memory = o["memory"].get<int>();
    if (o.contains("shape_optimizes_phase"))
      c.optimize.shape_optimizes_phase = o["shape_optimizes_phase"].get<bool>();
  }

  if (j.contains("output_dir")) c.out_dir = j["output_dir"].get<std::string>();
  return c;
}

// Effective configuration as a reloadable JSON document.
json config_to_json(const RunConfig& c) {
  json params = json::object();
  for (int l = 0; l < opt::kNumParams; ++l)
    params[im::param_table()[static_cast<std::size_t>(l)].name] = c.params[l];
  json offsets = json::array();
  for (int k = 0; k < opt::kNumOffsets; ++k) offsets.push_back(c.offsets_m[k] * 1e3);

  const char* mode_name = c.optimize.mode == opt::Mode::kParam        ? "param"
                          : c.optimize.mode == opt::Mode::kShape      ? "shape"
                          : c.optimize.mode == opt::Mode::kSequential ? "sequential"
                                                                      : "combined";
  json j = {
      {"geometry", {{"parameters", params}, {"offsets_mm", offsets}}},
      {"material",
       {{"linear_iron", c.sim.excitation.linear_iron},
        {"mu_r_iron", c.sim.excitation.mu_r_iron},
        {"bh_csv", c.bh_csv}}},
      {"excitation",
       {{"current_A", c.sim.excitation.current},
        {"turns", c.sim.excitation.turns},
        {"pole_pairs", c.sim.excitation.pole_pairs},
        {"remanence_T", c.sim.excitation.remanence},
        {"mu_r_magnet", c.sim.excitation.mu_r_magnet}}},
      {"axial_length_mm", c.sim.axial_length_mm},
      {"harmonics", static_cast<int>(c.sim.harmonics.size())},
      {"coupling_quad", c.sim.coupling_quad},
      {"newton",
       {{"rel_tol", c.sim.newton.rel_tol},
        {"abs_tol", c.sim.newton.abs_tol},
        {"max_iter", c.sim.newton.max_iter}}},
      {"angles_deg", c.angles_deg},
      {"field", {{"samples_per_patch", c.field_samples}}},
      {"gradcheck",
       {{"control_points", c.gradcheck.control_points},
        {"seed", c.gradcheck.seed},
        {"fd_step", c.gradcheck.fd_step},
        {"threshold", c.gradcheck.threshold},
        {"angle_deg", c.gradcheck.angle_deg}}},
      {"optimize",
       {{"mode", mode_name},
        {"w_area", c.optimize.w_area},
        {"w_ripple", c.optimize.w_ripple},
        {"w_smooth", c.optimize.w_smooth},
        {"torque_target", c.optimize.torque_target},
        {"target_margin", c.optimize.target_margin},
        {"max_iterations", c.optimize.max_iterations},
        {"tolerance", c.optimize.tolerance},
        {"memory", c.optimize.memory},
        {"shape_optimizes_phase", c.optimize.shape_optimizes_phase}}},
      {"output_dir", c.out_dir}};
  if (!std::isnan(c.field_angle_deg)) j["field"]["angle_deg"] = c.field_angle_deg;
  return j;
}

const igamotor::materials::BHCurve& bh_of(const RunConfig& c) {
  static igamotor::materials::BHCurve custom;
  if (c.bh_csv.empty()) return igamotor::materials::BHCurve::default_steel();
  custom = igamotor::materials::BHCurve::from_csv(c.bh_csv);
  return custom;
}

// ---------------------------------------------------------------------------
// evaluate

void sample_fields(const igamotor::assembly::System& sys, const VecX& u,
                   const std::string& prefix, int n, std::string* csv) {
  const auto& g = sys.geometry();
  igamotor::splines::BasisPoint bp;
  std::vector<int> locals;
  for (int p = 0; p < g.num_patches(); ++p) {
    const auto& patch = g.patches[static_cast<std::size_t>(p)];
    for (int j = 0; j < n; ++j) {
      for (int i = 0; i < n; ++i) {
        const double xi = (i + 0.5) / n;
        const double eta = (j + 0.5) / n;
        patch.eval_basis(xi, eta, &bp);
        Vec2 x;
        Mat2 J;
        patch.eval_mapping(bp, &x, &J);
        patch.local_indices(bp, &locals);
        Vec2 gp = Vec2::Zero();
        for (std::size_t a = 0; a < locals.size(); ++a) {
          const int node = g.node_of(p, locals[static_cast<std::size_t>(a)]);
          const int dof = sys.dofs().dof(node);
          if (dof < 0) continue;
          gp += sys.dofs().sign(node) * u[dof] * bp.dR.row(static_cast<Eigen::Index>(a)).transpose();
        }
        const Vec2 gx = J.inverse().transpose() * gp;
        const Vec2 B(gx.y(), -gx.x());  // B = curl(A e_z)
        *csv += prefix + std::to_string(p) + ',' + num(xi) + ',' + num(eta) + ',' +
                num(x.x()) + ',' + num(x.y()) + ',' + num(B.x()) + ',' + num(B.y()) + ',' +
                num(B.norm()) + '\n';
      }
    }
  }
}

int cmd_evaluate(const RunConfig& c) {
  im::MachineSimulation sim(c.params, &bh_of(c), c.sim);
  if (c.offsets_m.norm() != 0.0) sim.set_offsets(c.offsets_m);

  std::vector<double> angles;
  for (double a : c.angles_deg) angles.push_back(im::deg(a));
  const auto sweep = sim.sweep(angles);

  std::string torque_csv = "beta_deg,torque_Nm\n";
  for (std::size_t i = 0; i < sweep.angles.size(); ++i)
    torque_csv += num(c.angles_deg[i]) + ',' + num(sweep.torque[i]) + '\n';
  write_atomic(fs::path(c.out_dir) / "torque.csv", torque_csv);

  // Field samples at one angle of the sweep (default: the first).
  const double fa = std::isnan(c.field_angle_deg) ? c.angles_deg.front() : c.field_angle_deg;
  VecX state;
  bool found = false;
  for (std::size_t i = 0; i < sweep.angles.size(); ++i)
    if (c.angles_deg[i] == fa) {
      state = sweep.states[i];
      found = true;
      break;
    }
  if (!found) {
    state = sweep.states.back();
    const auto rep = sim.solve(im::deg(fa), &state);
    if (!rep.converged) throw SolverError("field-sample solve did not converge");
  }
  const int nr = sim.problem().rotor_dofs();
  const int ns = sim.problem().stator_dofs();
  std::string field_csv = "patch,xi,eta,x,y,Bx,By,Bmag\n";
  sample_fields(sim.rotor_system(), state.segment(0, nr), "rotor_", c.field_samples,
                &field_csv);
  sample_fields(sim.stator_system(), state.segment(nr, ns), "stator_", c.field_samples,
                &field_csv);
  write_atomic(fs::path(c.out_dir) / "field.csv", field_csv);

  json summary = {
      {"angles_deg", c.angles_deg},
      {"torque_Nm", sweep.torque},
      {"mean_torque_Nm", sweep.mean_torque()},
      {"torque_std_Nm", sweep.torque_stddev()},
      {"quarter_model_mean_torque_Nm", sweep.mean_torque() / im::kQuarterToFull},
      {"magnet_area_m2", im::magnet_area(c.params)},
      {"newton_iterations", sweep.iterations},
      {"field_angle_deg", fa},
  };
  write_atomic(fs::path(c.out_dir) / "summary.json", summary.dump(2) + "\n");
  std::cout << summary.dump(2) << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// gradcheck

int cmd_gradcheck(const RunConfig& c, bool corrupt) {
  const auto& bh = bh_of(c);
  im::MachineSimulation sim(c.params, &bh, c.sim);
  if (c.offsets_m.norm() != 0.0) sim.set_offsets(c.offsets_m);
  const double beta = im::deg(c.gradcheck.angle_deg);

  VecX state = VecX::Zero(sim.problem().size());
  auto rep = sim.solve(beta, &state);
  if (!rep.converged) throw SolverError("gradcheck base solve did not converge");

  im::SensitivityEngine engine(&sim);
  auto ag = engine.at(beta, state);
  if (corrupt && ag.d_params.size() > 0) ag.d_params[0] += 1e-3;  // test hook

  struct Row {
    std::string name;
    double analytic, fd, rel;
    bool pass;
  };
  std::vector<Row> rows;
  const auto rel_gap = [](double a, double b) {
    return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-30});
  };

  // All geometry/excitation parameters, fresh instances on both FD sides.
  for (int l = 0; l < opt::kNumParams; ++l) {
    const auto& info = im::param_table()[static_cast<std::size_t>(l)];
    const double h = c.gradcheck.fd_step * (info.hi - info.lo);
    double side[2];
    for (int s = 0; s < 2; ++s) {
      im::Parameters p = c.params;
      p[l] += (s == 0 ? +h : -h);
      im::MachineSimulation ps(p, &bh, c.sim);
      if (c.offsets_m.norm() != 0.0) ps.set_offsets(c.offsets_m);
      VecX xs = state;
      const auto r = ps.solve(beta, &xs);
      if (!r.converged) throw SolverError("gradcheck FD solve did not converge");
      side[s] = ps.torque(xs);
    }
    const double fd = (side[0] - side[1]) / (2.0 * h);
    const double rel = rel_gap(ag.d_params[l], fd);
    rows.push_back({info.name, ag.d_params[l], fd, rel, rel < c.gradcheck.threshold});
  }

  // Most torque-sensitive control points, sampled deterministically.
  std::vector<int> pool(static_cast<std::size_t>(ag.d_nodes.rows()));
  std::iota(pool.begin(), pool.end(), 0);
  std::sort(pool.begin(), pool.end(), [&](int a, int b) {
    return ag.d_nodes.row(a).norm() > ag.d_nodes.row(b).norm();
  });
  pool.resize(std::min<std::size_t>(pool.size(), 40));
  std::mt19937 rng(c.gradcheck.seed);
  std::shuffle(pool.begin(), pool.end(), rng);
  const int ncp = std::min<int>(c.gradcheck.control_points, static_cast<int>(pool.size()));
  const double hc = c.gradcheck.fd_step;  // metres
  for (int k = 0; k < ncp; ++k) {
    const int node = pool[static_cast<std::size_t>(k)];
    for (int axis = 0; axis < 2; ++axis) {
      const Vec2 base = sim.rotor().geom.node_position[static_cast<std::size_t>(node)];
      double side[2];
      for (int s = 0; s < 2; ++s) {
        Vec2 pos = base;
        pos[axis] += (s == 0 ? +hc : -hc);
        sim.set_rotor_node(node, pos);
        VecX xs = state;
        const auto r = sim.solve(beta, &xs);
        if (!r.converged) throw SolverError("gradcheck FD solve did not converge");
        side[s] = sim.torque(xs);
      }
      sim.set_rotor_node(node, base);
      const double fd = (side[0] - side[1]) / (2.0 * hc);
      const double an = ag.d_nodes(node, axis);
      const double rel = rel_gap(an, fd);
      rows.push_back({"node" + std::to_string(node) + (axis == 0 ? ".x" : ".y"), an, fd, rel,
                      rel < c.gradcheck.threshold});
    }
  }

  std::string csv = "coordinate,analytic,fd,rel_error,status\n";
  bool all_pass = true;
  double worst = 0.0;
  for (const auto& r : rows) {
    csv += r.name + ',' + num(r.analytic) + ',' + num(r.fd) + ',' + num(r.rel) + ',' +
           (r.pass ? "pass" : "FAIL") + '\n';
    all_pass = all_pass && r.pass;
    worst = std::max(worst, r.rel);
  }
  write_atomic(fs::path(c.out_dir) / "gradcheck.csv", csv);
  std::cout << "gradcheck: " << rows.size() << " coordinates, max relative error "
            << num(worst) << ", threshold " << num(c.gradcheck.threshold) << ": "
            << (all_pass ? "PASS" : "FAIL") << "\n";
  if (!all_pass) {
    error_json(5, "gradcheck", "relative error " + num(worst) + " exceeds threshold");
    return 5;
  }
  return 0;
}

// ---------------------------------------------------------------------------
// optimize

int cmd_optimize(RunConfig c) {
  c.optimize.initial = c.params;
  c.optimize.initial_offsets = c.offsets_m;
  c.optimize.simulation = c.sim;
  c.optimize.angles.clear();
  for (double a : c.angles_deg) c.optimize.angles.push_back(im::deg(a));

  // History is streamed (not atomic) so an aborted run keeps partial rows.
  fs::create_directories(c.out_dir);
  const fs::path hist_path = fs::path(c.out_dir) / "history.csv";
  std::ofstream hist(hist_path, std::ios::binary);
  if (!hist) throw ConfigError("cannot open for writing: " + hist_path.string());
  hist << "iter,f,A,Tstd,S,Tmean,viol,gnorm,evals,phase\n";
  c.optimize.on_iteration = [&hist](const opt::MachineIterationRecord& r) {
    hist << r.iteration << ',' << num(r.f) << ',' << num(r.area) << ',' << num(r.ripple)
         << ',' << num(r.smooth) << ',' << num(r.mean_torque) << ',' << num(r.max_violation)
         << ',' << num(r.pg_norm) << ',' << r.evals << ',' << r.phase << '\n';
    hist.flush();
  };

  const auto t0 = std::chrono::steady_clock::now();
  const auto res = opt::optimize_machine(c.optimize, &bh_of(c));
  const double elapsed =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  hist.close();

  // Final design as a reloadable configuration document.
  RunConfig final_cfg = c;
  final_cfg.params = res.params;
  final_cfg.offsets_m = res.offsets;
  final_cfg.optimize.on_iteration = nullptr;
  write_atomic(fs::path(c.out_dir) / "final_config.json",
               config_to_json(final_cfg).dump(2) + "\n");

  double max_shortfall = -std::numeric_limits<double>::infinity();
  const auto g = im::clearance_shortfalls(res.params);
  for (double gi : g) max_shortfall = std::max(max_shortfall, gi);
  const auto comp_json = [](const opt::DesignComponents& d) {
    return json{{"f", d.f},
                {"area_m2", d.area},
                {"torque_std_Nm", d.ripple},
                {"smoothness", d.smooth},
                {"mean_torque_Nm", d.mean_torque}};
  };
  json report = {
      {"mode", config_to_json(c)["optimize"]["mode"]},
      {"torque_target_Nm", res.torque_target},
      {"iterations", res.iterations},
      {"converged", res.converged},
      {"initial", comp_json(res.initial)},
      {"final", comp_json(res.final)},
      {"torque_deficit_rel",
       std::max(0.0, res.torque_target - res.final.mean_torque) /
           std::max(res.torque_target, 1e-300)},
      {"max_clearance_shortfall_m", max_shortfall},
      {"elapsed_seconds", elapsed},
  };
  write_atomic(fs::path(c.out_dir) / "report.json", report.dump(2) + "\n");
  std::cout << report.dump(2) << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// export-geometry

json patches_to_json(const igamotor::geometry::MultiPatchGeometry& g) {
  json out = json::array();
  for (int p = 0; p < g.num_patches(); ++p) {
    const auto& patch = g.patches[static_cast<std::size_t>(p)];
    json cps = json::array();
    for (int l = 0; l < patch.num_control_points(); ++l) {
      const Vec2 x = patch.point(l);
      cps.push_back({x.x(), x.y(), patch.weight(l)});
    }
    out.push_back({{"material", g.patch_material[static_cast<std::size_t>(p)]},
                   {"degree_u", patch.knots_u().degree()},
                   {"degree_v", patch.knots_v().degree()},
                   {"knots_u", patch.knots_u().knots()},
                   {"knots_v", patch.knots_v().knots()},
                   {"num_u", patch.num_u()},
                   {"num_v", patch.num_v()},
                   {"control_points_xyw", cps}});
  }
  return out;
}

int cmd_export_geometry(const RunConfig& c) {
  im::MachineSimulation sim(c.params, &bh_of(c), c.sim);
  if (c.offsets_m.norm() != 0.0) sim.set_offsets(c.offsets_m);

  json params = json::object();
  for (int l = 0; l < opt::kNumParams; ++l)
    params[im::param_table()[static_cast<std::size_t>(l)].name] = c.params[l];
  json offsets = json::array();
  for (int k = 0; k < opt::kNumOffsets; ++k) offsets.push_back(c.offsets_m[k] * 1e3);
  json surface = json::array();
  for (const auto& sp : sim.rotor().surface)
    surface.push_back({{"node", sp.node},
                       {"design", sp.design},
                       {"base_m", {sp.base.x(), sp.base.y()}},
                       {"direction", {sp.rhat.x(), sp.rhat.y()}},
                       {"pole_angle_rad", sp.pole_angle}});

  json out = {{"parameters", params},
              {"offsets_mm", offsets},
              {"magnet_area_m2", im::magnet_area(c.params)},
              {"rotor", {{"patches", patches_to_json(sim.rotor().geom)},
                          {"surface_nodes", surface}}},
              {"stator", {{"patches", patches_to_json(sim.stator().geom)}}}};
  write_atomic(fs::path(c.out_dir) / "geometry.json", out.dump(2) + "\n");
  std::cout << "geometry written: "
            << (fs::path(c.out_dir) / "geometry.json").string() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Isogeometric 2D magnetostatic machine simulation and design optimization"};
  app.require_subcommand(1);

  struct Shared {
    std::string config, out, angles;
    int threads = 1;
  };
  Shared sh;
  std::string mode_arg;
  double fd_step_arg = -1.0;
  unsigned seed_arg = 0;
  bool seed_set = false, corrupt = false;

  const auto add_shared = [&sh](CLI::App* cmd) {
    cmd->add_option("--config", sh.config, "JSON run configuration");
    cmd->add_option("--out", sh.out, "output directory (overrides config)");
    cmd->add_option("--angles", sh.angles,
                    "angle set [deg]: comma list 'a,b,c' or range 'start:stop:count'");
    cmd->add_option("--threads", sh.threads, "worker threads (this build runs serially)");
  };

  CLI::App* ev = app.add_subcommand("evaluate", "torque sweep and field samples");
  CLI::App* gc = app.add_subcommand("gradcheck", "adjoint vs finite-difference derivatives");
  CLI::App* op = app.add_subcommand("optimize", "constrained design optimization");
  CLI::App* xg = app.add_subcommand("export-geometry", "write the NURBS control net");
  for (CLI::App* cmd : {ev, gc, op, xg}) add_shared(cmd);
  op->add_option("--mode", mode_arg, "param|shape|sequential|combined");
  gc->add_option("--fd-step", fd_step_arg, "finite-difference step (see README)");
  gc->add_option("--seed", seed_arg, "seed for the sampled control-point set")
      ->each([&seed_set](const std::string&) { seed_set = true; });
  gc->add_flag("--corrupt-gradient", corrupt, "fault-injection hook for exit-code tests")
      ->group("");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help/--version
    app.exit(e);
    return 2;
  }

  try {
    RunConfig cfg = load_config(sh.config);
    if (!sh.out.empty()) cfg.out_dir = sh.out;
    if (!sh.angles.empty()) cfg.angles_deg = parse_angles_arg(sh.angles);
    if (sh.threads > 1)
      std::cerr << "note: --threads " << sh.threads
                << " requested; this build evaluates serially for determinism\n";
    if (fd_step_arg > 0.0) cfg.gradcheck.fd_step = fd_step_arg;
    if (seed_set) cfg.gradcheck.seed = seed_arg;
    if (!mode_arg.empty()) cfg.optimize.mode = opt::mode_of(mode_arg);
    cfg.params.validate();

    if (ev->parsed()) return cmd_evaluate(cfg);
    if (gc->parsed()) return cmd_gradcheck(cfg, corrupt);
    if (op->parsed()) return cmd_optimize(cfg);
    if (xg->parsed()) return cmd_export_geometry(cfg);
    return 2;
  } catch (const ConfigError& e) {
    error_json(2, "config", e.what());
    return 2;
  } catch (const std::invalid_argument& e) {
    error_json(2, "config", e.what());
    return 2;
  } catch (const json::exception& e) {
    error_json(2, "config", e.what());
    return 2;
  } catch (const GeometryError& e) {
    error_json(3, "geometry", e.what());
    return 3;
  } catch (const SolverError& e) {
    error_json(4, "solver", e.what());
    return 4;
  } catch (const std::exception& e) {
    error_json(4, "runtime", e.what());
    return 4;
  }
}
