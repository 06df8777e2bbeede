// Command-line front end: solve, scan-power, resonator, recool-fit,
// scenario run <name>, serve. Exit codes: 0 success, 1 failed check,
// 2 validation error, 3 solver failure.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "planartrap/io.hpp"
#include "planartrap/motion.hpp"
#include "planartrap/rfnetwork.hpp"
#include "planartrap/scenarios.hpp"
#include "planartrap/service.hpp"
#include "planartrap/trapsolver.hpp"

namespace fs = std::filesystem;
using namespace planartrap;

namespace {

struct Globals {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out_dir = ".";
};

struct DriveArgs {
  std::string layout = "folsom";
  std::string site = inner_experiment_site;
  double amplitude = 100.0;
  double frequency = 10.1e6;
  std::vector<std::string> db, phase_deg, dc;
  std::string drive_file;
};

void add_drive_options(CLI::App* app, DriveArgs& a) {
  app->add_option("--layout", a.layout, "Builtin layout (folsom, miniature) or layout JSON file");
  app->add_option("--site", a.site, "Site id used as the null-search seed");
  app->add_option("--amplitude", a.amplitude, "Home RF amplitude, V 0-pk");
  app->add_option("--frequency", a.frequency, "RF drive frequency, Hz");
  app->add_option("--db", a.db, "Channel power offset, CHANNEL=DB (repeatable)");
  app->add_option("--phase", a.phase_deg, "Channel phase, CHANNEL=DEG (repeatable)");
  app->add_option("--dc", a.dc, "Channel DC bias, CHANNEL=VOLTS (repeatable)");
  app->add_option("--drive", a.drive_file, "Drive patch JSON applied after the home drive");
}

std::pair<std::string, double> split_assignment(const std::string& s, const std::string& flag) {
  const auto eq = s.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError(flag + ": expected CHANNEL=VALUE, got '" + s + "'");
  try {
    std::size_t used = 0;
    const double v = std::stod(s.substr(eq + 1), &used);
    if (used != s.size() - eq - 1) throw std::invalid_argument("trailing");
    return {s.substr(0, eq), v};
  } catch (const std::exception&) {
    throw ConfigError(flag + ": '" + s.substr(eq + 1) + "' is not a number");
  }
}

ArrayLayout layout_of(const DriveArgs& a) {
  if (a.layout == "folsom" || a.layout == "miniature") return resolve_layout(json(a.layout));
  return layout_from_json(load_json_file(a.layout));
}

DriveState drive_of(const ArrayLayout& layout, const DriveArgs& a) {
  DriveState d = home_drive(layout, a.amplitude, a.frequency);
  if (!a.drive_file.empty()) d = apply_drive_patch(d, load_json_file(a.drive_file), a.drive_file);
  json patch = json::object();
  for (const auto& s : a.db) {
    auto [ch, v] = split_assignment(s, "--db");
    patch[ch]["offset_db"] = v;
  }
  for (const auto& s : a.phase_deg) {
    auto [ch, v] = split_assignment(s, "--phase");
    patch[ch]["phase_rad"] = v * constants::pi / 180.0;
  }
  for (const auto& s : a.dc) {
    auto [ch, v] = split_assignment(s, "--dc");
    patch[ch]["dc_v"] = v;
  }
  d = apply_drive_patch(d, patch, "command line");
  validate_drive(layout, d);
  return d;
}

Settings load_settings(const Globals& g) {
  return Settings::load(PLANARTRAP_DEFAULT_CONFIG, g.config.empty() ? std::nullopt : std::optional(g.config));
}

void emit(const Globals& g, const std::string& output, const std::string& text) {
  if (output.empty()) {
    std::cout << text;
    return;
  }
  const fs::path path = fs::path(g.out_dir) / output;
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write '" + path.string() + "'");
  out << text;
}

fs::path scenario_path(const std::string& name) {
  if (fs::exists(name)) return name;
  const fs::path bundled = fs::path(PLANARTRAP_SCENARIO_DIR) / (name + ".json");
  if (fs::exists(bundled)) return bundled;
  throw ConfigError("scenario '" + name + "' not found");
}

std::vector<double> read_trace_counts(const std::string& path, double& bin_width) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open trace '" + path + "'");
  std::string line;
  std::getline(in, line);
  if (line.rfind("t_s,counts", 0) != 0) throw ConfigError(path + ": expected header t_s,counts");
  std::vector<double> t, counts;
  int row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty()) continue;
    double a = 0.0, b = 0.0;
    if (std::sscanf(line.c_str(), "%lf,%lf", &a, &b) != 2)
      throw ConfigError(path + ":" + std::to_string(row) + ": expected two numbers");
    t.push_back(a);
    counts.push_back(b);
  }
  if (t.size() < 2) throw ConfigError(path + ": trace needs at least two rows");
  bin_width = t[1] - t[0];
  if (!(bin_width > 0.0)) throw ConfigError(path + ": times must increase");
  return counts;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Planar RF ion-trap array toolkit"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--config", g.config, "Settings overlay merged onto the defaults")->check(CLI::ExistingFile);
  app.add_option("--seed", g.seed, "Seed override for stochastic steps");
  app.add_option("--out-dir", g.out_dir, "Directory for output files");

  DriveArgs solve_args;
  bool no_depth = false;
  std::string solve_out;
  auto* solve = app.add_subcommand("solve", "Find the RF null near a site and report the trap");
  add_drive_options(solve, solve_args);
  solve->add_flag("--no-depth", no_depth, "Skip the trap-depth search");
  solve->add_option("--output", solve_out, "Write JSON here (relative to --out-dir) instead of stdout");

  DriveArgs scan_args;
  std::string scan_channel, scan_out;
  double from_db = 0.0, to_db = -5.0, step_db = 0.5;
  auto* scan = app.add_subcommand("scan-power", "Null position and secular frequencies versus channel power");
  add_drive_options(scan, scan_args);
  scan->add_option("--channel", scan_channel, "Channel to scan")->required();
  scan->add_option("--from-db", from_db, "Start offset, dB");
  scan->add_option("--to-db", to_db, "End offset, dB");
  scan->add_option("--step-db", step_db, "Step, dB")->check(CLI::PositiveNumber);
  scan->add_option("--output", scan_out, "Write CSV here (relative to --out-dir) instead of stdout");

  std::string load = "adjuster", lock_csv;
  std::optional<double> f_target;
  auto* reso = app.add_subcommand("resonator", "Tune a resonator to the drive frequency and report the lock");
  reso->add_option("--load", load, "Load preset from the settings (adjuster, main)");
  reso->add_option("--frequency", f_target, "Target frequency, Hz");
  reso->add_option("--lock-csv", lock_csv, "Write the closed-loop step response here (relative to --out-dir)");

  std::string trace_file, trace_out;
  std::optional<double> simulate_e0;
  std::optional<int> runs;
  auto* recool = app.add_subcommand("recool-fit", "Maximum-likelihood initial energy from a recooling trace");
  recool->add_option("--trace", trace_file, "Trace CSV (t_s,counts) summed over runs")->check(CLI::ExistingFile);
  recool->add_option("--simulate", simulate_e0, "Simulate a trace with this initial energy, meV, and fit it");
  recool->add_option("--runs", runs, "Number of runs summed in the trace");
  recool->add_option("--trace-out", trace_out, "With --simulate, also write the trace (relative to --out-dir)");

  std::string scenario_name;
  auto* scenario = app.add_subcommand("scenario", "Scenario commands");
  scenario->require_subcommand(1);
  auto* scenario_run = scenario->add_subcommand("run", "Run a bundled scenario by name or a scenario file");
  scenario_run->add_option("name", scenario_name, "Scenario name or path")->required();

  DriveArgs serve_args;
  std::string host = "127.0.0.1", static_dir;
  int port = 8080;
  auto* serve = app.add_subcommand("serve", "Start the HTTP service");
  add_drive_options(serve, serve_args);
  serve->add_option("--host", host, "Bind address");
  serve->add_option("--port", port, "Port");
  serve->add_option("--static", static_dir, "Directory of console assets served at /")->check(CLI::ExistingDirectory);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? exit_codes::success : exit_codes::validation;
  }

  try {
    if (*solve) {
      const ArrayLayout layout = layout_of(solve_args);
      const DriveState d = drive_of(layout, solve_args);
      const TrapSolver solver(layout);
      const TrapSite site = solver.solve_site(d, layout.site_seed(solve_args.site), !no_depth);
      json out = {{"site_id", solve_args.site}, {"drive", drive_to_json(d)}, {"site", site_to_json(site)}};
      emit(g, solve_out, out.dump(2) + "\n");
    } else if (*scan) {
      const ArrayLayout layout = layout_of(scan_args);
      TrapService service(layout, drive_of(layout, scan_args), scan_args.site);
      emit(g, scan_out, service.scan_csv(scan_channel, from_db, to_db, step_db, scan_args.site, std::nullopt));
    } else if (*reso) {
      const Settings s = load_settings(g);
      const double f = f_target ? *f_target : s.number("/network/f_target_hz");
      const double omega = constants::two_pi * f;
      ResonatorNetwork net;
      net.resonators = {network_resonator(s, load)};
      net.source_impedance = s.number("/network/source_impedance_ohm");
      TuneReport rep;
      net = tune_home(net, f, &rep);
      const Resonator& r = net.resonators.front();
      const ServoParams servo = servo_for(s, r, omega);
      const Transfer tf = transfer(r, omega, net.source_impedance);
      json out = {{"target_frequency_hz", f},
                  {"resonant_frequency_hz", resonant_frequency(r, net.source_impedance)},
                  {"reflection", rep.reflection.front()},
                  {"converged", rep.ok()},
                  {"gain", std::abs(tf.gain)},
                  {"phase_setpoint_deg", r.phase_setpoint * 180.0 / constants::pi},
                  {"k_i", servo.k_i},
                  {"resonator", resonator_to_json(r)}};
      if (!lock_csv.empty()) {
        const double c0 = r.load_c_t * (1.0 + s.number("/servo/step_fraction"));
        const LockTrace tr = simulate_lock(r, omega, [c0](double) { return c0; }, s.number("/servo/dt_s"),
                                           s.number("/servo/duration_s"), servo, 0.0, net.source_impedance);
        std::ostringstream os;
        write_lock_csv(os, tr);
        emit(g, lock_csv, os.str());
        const double settle = tr.settling_time(s.band("lock_bound_deg").max);
        out["settle_s"] = std::isfinite(settle) ? json(settle) : json(nullptr);
      }
      std::cout << out.dump(2) << "\n";
    } else if (*recool) {
      const Settings s = load_settings(g);
      const LaserParams laser = laser_from_json(s.at("/recooling/laser"));
      RecoolingModel model = recooling_model(s);
      const int n_runs = runs ? *runs : static_cast<int>(s.number("/recooling/n_runs"));
      if (n_runs < 1) throw ConfigError("--runs must be >= 1");
      RecoolingTrace tr;
      if (simulate_e0) {
        tr = simulate_recooling(*simulate_e0, s.number("/recooling/trap_freq_hz"), laser,
                                s.number("/recooling/duration_s"), n_runs, g.seed.value_or(0), model);
        if (!trace_out.empty()) {
          std::ostringstream os;
          write_trace_csv(os, tr);
          emit(g, trace_out, os.str());
        }
      } else if (!trace_file.empty()) {
        double bin = 0.0;
        tr.counts_per_bin = read_trace_counts(trace_file, bin);
        tr.bin_width = bin;
        tr.n_runs = n_runs;
        tr.laser = laser;
        tr.trap_freq = s.number("/recooling/trap_freq_hz");
        model.bin_width = bin;
        tr.model = model;
      } else {
        throw ConfigError("recool-fit: give --trace or --simulate");
      }
      std::cout << recooling_fit_to_json(fit_recooling(tr, s.number("/recooling/fit_e_max_mev"))).dump(2) << "\n";
    } else if (*scenario) {
      RunOptions opt;
      opt.out_dir = g.out_dir;
      opt.seed = g.seed;
      const ScenarioResult res = run_scenario(scenario_path(scenario_name).string(), load_settings(g), opt);
      if (!res.error.empty()) std::cerr << "error: " << res.error << "\n";
      for (const auto& c : res.checks)
        std::printf("%s %s.%s = %.6g [%.6g, %.6g]\n", c.passed ? "PASS" : "FAIL", c.step.c_str(), c.metric.c_str(),
                    c.value, c.limits.min, c.limits.max);
      for (const auto& o : res.outputs) std::printf("wrote %s\n", o.c_str());
      return res.exit_code;
    } else if (*serve) {
      const ArrayLayout layout = layout_of(serve_args);
      TrapService service(layout, drive_of(layout, serve_args), serve_args.site);
      httplib::Server srv;
      service.mount(srv, static_dir.empty() ? std::nullopt : std::optional(static_dir));
      std::fprintf(stderr, "listening on http://%s:%d\n", host.c_str(), port);
      if (!srv.listen(host, port)) throw ConfigError("cannot bind " + host + ":" + std::to_string(port));
    }
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_codes::validation;
  } catch (const SolverError& e) {
    std::cerr << "solver error: " << e.what() << "\n";
    return exit_codes::solver;
  }
  return exit_codes::success;
}
