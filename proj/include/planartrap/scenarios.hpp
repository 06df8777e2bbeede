#pragma once

// Scenario runner: a JSON document names a layout, a drive and an ordered
// list of steps. Each step computes metrics, optionally writes CSV/JSON
// files, and may check metrics against acceptance bands from the settings
// file. Every stochastic step takes its seed from the document.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "planartrap/errors.hpp"
#include "planartrap/io.hpp"
#include "planartrap/layout.hpp"
#include "planartrap/motion.hpp"
#include "planartrap/rfnetwork.hpp"
#include "planartrap/trapsolver.hpp"

namespace planartrap {

/// Independent RF sources needed for an n x n array with per-site control.
inline long count_sources(long n) {
  if (n < 1) throw ConfigError("count_sources: n must be >= 1");
  return 2 * n * n;
}

namespace exit_codes {
inline constexpr int success = 0;
inline constexpr int check_failed = 1;
inline constexpr int validation = 2;
inline constexpr int solver = 3;
}  // namespace exit_codes

struct Band {
  double min = -std::numeric_limits<double>::infinity();
  double max = std::numeric_limits<double>::infinity();
  bool contains(double v) const { return v >= min && v <= max; }
};

/// Settings document (config/defaults.json, optionally merge-patched).
class Settings {
 public:
  Settings() = default;
  explicit Settings(json doc) : doc_(std::move(doc)) {}

  static Settings load(const std::string& path, const std::optional<std::string>& overlay = std::nullopt) {
    json doc = load_json_file(path);
    if (overlay) doc.merge_patch(load_json_file(*overlay));
    return Settings(std::move(doc));
  }

  const json& doc() const { return doc_; }

  const json& at(const std::string& pointer) const {
    try {
      return doc_.at(json::json_pointer(pointer));
    } catch (const nlohmann::json::exception&) {
      throw ConfigError("settings" + pointer + ": missing");
    }
  }

  double number(const std::string& pointer) const {
    const json& j = at(pointer);
    if (!j.is_number()) throw ConfigError("settings" + pointer + ": expected a number");
    return j.get<double>();
  }

  Band band(const std::string& key) const {
    const json& j = at("/acceptance/" + key);
    Band b;
    if (j.is_number()) {
      b.min = 0.0;
      b.max = j.get<double>();
    } else {
      b.min = detail::field<double>(j, "min", "acceptance." + key);
      b.max = detail::field<double>(j, "max", "acceptance." + key);
    }
    return b;
  }

 private:
  json doc_;
};

// ---------------------------------------------------------------------------
// Builders shared by scenarios, the CLI and the service

inline ArrayLayout resolve_layout(const json& spec) {
  if (spec.is_string()) {
    const auto name = spec.get<std::string>();
    if (name == "folsom") return make_folsom();
    if (name == "miniature") return make_miniature();
    throw ConfigError("layout: unknown builtin '" + name + "'");
  }
  if (spec.is_object() && spec.contains("builtin")) {
    const auto name = detail::field<std::string>(spec, "builtin", "layout");
    const int order = detail::field_or<int>(spec, "polygon_order", 64, "layout");
    const bool plane = detail::field_or<bool>(spec, "ground_plane", false, "layout");
    if (name == "folsom") return make_folsom(order, plane);
    if (name == "miniature") {
      ArrayLayout l = make_miniature(order);
      if (plane) l.ground_plane_height = 7e-3 / 15.0;
      return l;
    }
    throw ConfigError("layout.builtin: unknown '" + name + "'");
  }
  if (spec.is_object()) return layout_from_json(spec);
  throw ConfigError("layout: expected a builtin name or an object");
}

/// {"home": {"amplitude_v", "rf_frequency_hz"}, "set": {channel patches}} or a full drive document.
inline DriveState resolve_drive(const ArrayLayout& layout, const json& spec) {
  if (!spec.is_object()) throw ConfigError("drive: expected an object");
  DriveState d;
  if (spec.contains("home")) {
    const json& h = spec.at("home");
    d = home_drive(layout, detail::field<double>(h, "amplitude_v", "drive.home"),
                   detail::field<double>(h, "rf_frequency_hz", "drive.home"));
  } else {
    d = drive_from_json(spec);
  }
  if (spec.contains("set")) d = apply_drive_patch(d, spec.at("set"), "drive.set");
  validate_drive(layout, d);
  return d;
}

inline Resonator network_resonator(const Settings& s, const std::string& load) {
  Resonator r = resonator_from_json(s.at("/network/resonator"));
  return resonator_from_json(s.at("/network/loads/" + load), r);
}

inline ServoParams servo_for(const Settings& s, const Resonator& tuned, double omega) {
  ServoParams p;
  p.k_m = s.number("/servo/k_m_v_per_rad");
  p.k_i = integral_gain_for_bandwidth(tuned, omega, s.number("/servo/bandwidth_hz"), p.k_m,
                                      s.number("/network/source_impedance_ohm"));
  return p;
}

inline RecoolingModel recooling_model(const Settings& s) {
  RecoolingModel m;
  m.detection_efficiency = s.number("/recooling/detection_efficiency");
  m.bin_width = s.number("/recooling/bin_width_s");
  return m;
}

inline std::vector<double> heating_times(const Settings& s) {
  std::vector<double> t;
  const int n = static_cast<int>(s.number("/heating_series/count"));
  for (int i = 0; i < n; ++i) t.push_back(s.number("/heating_series/t_start_s") + i * s.number("/heating_series/t_step_s"));
  return t;
}

/// Frequency along `axis` from the secular modes (sqrt of the projected
/// curvature); well defined when two radial modes are near-degenerate.
inline double axis_frequency(const Vec3& freqs, const std::array<Vec3, 3>& axes, const Vec3& axis) {
  double k = 0.0;
  for (int i = 0; i < 3; ++i) {
    const double f = freqs[i];
    const double c = axes[static_cast<std::size_t>(i)].dot(axis);
    k += (f >= 0.0 ? 1.0 : -1.0) * f * f * c * c;
  }
  return k >= 0.0 ? std::sqrt(k) : -std::sqrt(-k);
}

/// Index of the secular mode whose axis is closest to `axis`.
inline int mode_along(const std::array<Vec3, 3>& axes, const Vec3& axis) {
  int best = 0;
  for (int i = 1; i < 3; ++i)
    if (std::abs(axes[static_cast<std::size_t>(i)].dot(axis)) > std::abs(axes[static_cast<std::size_t>(best)].dot(axis)))
      best = i;
  return best;
}

inline Vec3 axis_from_name(const std::string& name) {
  if (name == "x") return Vec3::UnitX();
  if (name == "y") return Vec3::UnitY();
  if (name == "z") return Vec3::UnitZ();
  throw ConfigError("axis: expected x, y or z");
}

// ---------------------------------------------------------------------------
// Scenario execution

struct CheckResult {
  std::string step;
  std::string metric;
  std::string band;
  double value = 0.0;
  Band limits;
  bool passed = false;
};

struct ScenarioResult {
  int exit_code = exit_codes::success;
  std::vector<std::string> outputs;
  std::vector<CheckResult> checks;
  json metrics = json::object();
  std::string error;
};

struct RunOptions {
  std::filesystem::path out_dir = ".";
  std::optional<std::uint64_t> seed;  // overrides the document seed
};

class ScenarioRunner {
 public:
  ScenarioRunner(Settings settings, RunOptions options) : settings_(std::move(settings)), opt_(std::move(options)) {}

  ScenarioResult run(const json& doc) {
    ScenarioResult res;
    try {
      execute(doc, res);
    } catch (const ConfigError& e) {
      res.exit_code = exit_codes::validation;
      res.error = e.what();
    } catch (const SolverError& e) {
      res.exit_code = exit_codes::solver;
      res.error = e.what();
    }
    return res;
  }

  ScenarioResult run_file(const std::string& path) {
    ScenarioResult res;
    try {
      return run(load_json_file(path));
    } catch (const ConfigError& e) {
      res.exit_code = exit_codes::validation;
      res.error = e.what();
    }
    return res;
  }

 private:
  using StepFn = std::function<json(const json&, const std::string&)>;

  void execute(const json& doc, ScenarioResult& res) {
    name_ = detail::field<std::string>(doc, "name", "scenario");
    seed_ = opt_.seed ? *opt_.seed : detail::field_or<std::uint64_t>(doc, "seed", 0, "scenario");
    const json steps = doc.contains("steps") ? doc.at("steps") : json::array();
    if (!steps.is_array()) throw ConfigError("scenario.steps: expected an array");
    layout_spec_ = doc.contains("layout") ? doc.at("layout") : json("folsom");
    drive_spec_ = doc.contains("drive") ? doc.at("drive") : json(nullptr);
    solver_.reset();

    // Validate operation names and output paths before doing any work.
    std::set<std::string> outputs;
    for (std::size_t i = 0; i < steps.size(); ++i) {
      const std::string where = "scenario.steps[" + std::to_string(i) + "]";
      const auto op = detail::field<std::string>(steps[i], "op", where);
      if (!ops().contains(op)) throw ConfigError(where + ".op: unknown operation '" + op + "'");
      if (steps[i].contains("outputs"))
        for (const auto& [k, v] : steps[i].at("outputs").items())
          if (!outputs.insert(v.get<std::string>()).second)
            throw ConfigError(where + ".outputs." + k + ": duplicate output path");
      if (steps[i].contains("checks"))
        for (const auto& c : steps[i].at("checks")) (void)settings_.band(detail::field<std::string>(c, "band", where));
    }
    if (steps.empty()) return;

    std::filesystem::create_directories(opt_.out_dir);
    res_ = &res;
    for (std::size_t i = 0; i < steps.size(); ++i) {
      const json& step = steps[i];
      const auto op = step.at("op").get<std::string>();
      const std::string label = detail::field_or<std::string>(step, "label", op, "step");
      const json metrics = ops().at(op)(step, label);
      res.metrics[label] = metrics;
      if (step.contains("checks")) {
        for (const auto& c : step.at("checks")) {
          CheckResult cr;
          cr.step = label;
          cr.metric = detail::field<std::string>(c, "metric", "check");
          cr.band = detail::field<std::string>(c, "band", "check");
          if (!metrics.contains(cr.metric)) throw ConfigError("check: step '" + label + "' has no metric '" + cr.metric + "'");
          const json& mv = metrics.at(cr.metric);
          if (mv.is_boolean()) cr.value = mv.get<bool>() ? 1.0 : 0.0;
          else if (mv.is_number()) cr.value = mv.get<double>();
          else cr.value = std::numeric_limits<double>::quiet_NaN();
          cr.limits = settings_.band(cr.band);
          cr.passed = cr.limits.contains(cr.value);
          res.checks.push_back(cr);
          if (!cr.passed) res.exit_code = exit_codes::check_failed;
        }
      }
    }
    json report = {{"scenario", name_}, {"seed", seed_}, {"metrics", res.metrics}};
    json checks = json::array();
    for (const auto& c : res.checks)
      checks.push_back({{"step", c.step}, {"metric", c.metric}, {"band", c.band}, {"value", c.value},
                        {"min", c.limits.min}, {"max", c.limits.max}, {"passed", c.passed}});
    report["checks"] = checks;
    write_text(name_ + "_report.json", report.dump(2) + "\n");
  }

  // -- helpers --------------------------------------------------------------

  void write_text(const std::string& rel, const std::string& text) {
    const auto path = opt_.out_dir / rel;
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ConfigError("cannot write '" + path.string() + "'");
    out << text;
    res_->outputs.push_back(path.string());
  }

  std::optional<std::string> output(const json& step, const std::string& key) const {
    if (!step.contains("outputs") || !step.at("outputs").contains(key)) return std::nullopt;
    return step.at("outputs").at(key).get<std::string>();
  }

  const TrapSolver& solver_for(const json& step) {
    if (step.contains("layout")) {
      step_solver_ = std::make_unique<TrapSolver>(resolve_layout(step.at("layout")));
      return *step_solver_;
    }
    if (!solver_) solver_ = std::make_unique<TrapSolver>(resolve_layout(layout_spec_));
    return *solver_;
  }

  DriveState drive_for(const json& step, const TrapSolver& s) const {
    const json& spec = step.contains("drive") ? step.at("drive") : drive_spec_;
    if (spec.is_null()) throw ConfigError("step: no drive given");
    return resolve_drive(s.layout(), spec);
  }

  Vec3 seed_for(const json& step, const TrapSolver& s) const {
    if (step.contains("seed_m")) return detail::vec3_from(step.at("seed_m"), "step.seed_m");
    return s.layout().site_seed(detail::field<std::string>(step, "site", "step"));
  }

  std::uint64_t step_seed(const json& step) const {
    return seed_ + detail::field_or<std::uint64_t>(step, "seed_offset", 0, "step");
  }

  // -- operations -------------------------------------------------------------

  const std::map<std::string, StepFn>& ops() {
    if (ops_.empty()) {
      ops_["solve_site"] = [this](const json& st, const std::string&) { return op_solve_site(st); };
      ops_["scan_power"] = [this](const json& st, const std::string&) { return op_scan_power(st); };
      ops_["dc_bias_shift"] = [this](const json& st, const std::string&) { return op_dc_bias_shift(st); };
      ops_["recool_roundtrip"] = [this](const json& st, const std::string&) { return op_recool(st); };
      ops_["heating_rate_series"] = [this](const json& st, const std::string&) { return op_heating(st); };
      ops_["convert_energy_rate"] = [](const json& st, const std::string&) {
        const double x = detail::field<double>(st, "mev_per_s", "step");
        return json{{"k_per_s", mev_per_s_to_k_per_s(x)}};
      };
      ops_["lock_step"] = [this](const json& st, const std::string&) { return op_lock_step(st); };
      ops_["loss_rate"] = [this](const json& st, const std::string&) { return op_loss(st); };
      ops_["gate_time"] = [this](const json& st, const std::string&) { return op_gate(st); };
      ops_["count_sources"] = [](const json& st, const std::string&) {
        return json{{"sources", count_sources(detail::field<long>(st, "n", "step"))}};
      };
    }
    return ops_;
  }

  json op_solve_site(const json& st) {
    const TrapSolver& s = solver_for(st);
    const DriveState d = drive_for(st, s);
    const TrapSite site = s.solve_site(d, seed_for(st, s), detail::field_or<bool>(st, "depth", true, "step"));
    if (auto p = output(st, "site_json")) write_text(*p, site_to_json(site).dump(2) + "\n");
    const int z_mode = mode_along(site.principal_axes, Vec3::UnitZ());
    return {{"null_height_m", site.null_position.z()},
            {"freq_z_hz", site.secular_freqs[z_mode]},
            {"freq_min_hz", site.secular_freqs[0]},
            {"freq_max_hz", site.secular_freqs[2]},
            {"depth_ev", std::isfinite(site.depth) ? json(site.depth) : json(nullptr)},
            {"q_max", site.mathieu_q.maxCoeff()},
            {"stable", site.stable() && mathieu_q(site, d).stable}};
  }

  json op_scan_power(const json& st) {
    const TrapSolver& s = solver_for(st);
    const DriveState d = drive_for(st, s);
    const auto channel = detail::field<std::string>(st, "channel", "step");
    const auto db = detail::field<std::vector<double>>(st, "db", "step");
    const Vec3 seed = s.find_null(d, seed_for(st, s)).null_position;
    const ScanCurve curve = s.scan_power(d, channel, db, seed);
    if (auto p = output(st, "csv")) {
      std::ostringstream os;
      write_scan_csv(os, curve);
      write_text(*p, os.str());
    }
    json m = {{"points", curve.points.size()}, {"truncated", curve.truncated}};
    if (curve.points.empty()) return m;
    const auto& home = curve.points.front();
    const auto& last = curve.points.back();
    m["displacement_m"] = (last.null_position - home.null_position).norm();
    // Projection onto the direction of the final displacement must grow monotonically.
    const Vec3 dir = (last.null_position - home.null_position).normalized();
    bool monotone = true;
    double prev = 0.0;
    for (const auto& p : curve.points) {
      const double proj = (p.null_position - home.null_position).dot(dir);
      if (proj < prev - 1e-12) monotone = false;
      prev = proj;
    }
    m["monotone"] = monotone;
    m["displacement_x_m"] = last.null_position.x() - home.null_position.x();
    m["displacement_y_m"] = last.null_position.y() - home.null_position.y();
    if (st.contains("axis")) {
      const Vec3 axis = axis_from_name(st.at("axis").get<std::string>());
      const double f0 = axis_frequency(home.secular_freqs, home.axes, axis);
      json freqs = json::array();
      for (const auto& p : curve.points) freqs.push_back(axis_frequency(p.secular_freqs, p.axes, axis));
      m["axis_freq_hz"] = freqs;
      m["axis_freq_home_hz"] = f0;
      for (std::size_t i = 1; i < curve.points.size(); ++i)
        if (curve.points[i].db == -1.0)
          m["slope_hz_per_db"] = (f0 - freqs[i].get<double>()) / (home.db - curve.points[i].db);
      m["reduction_at_end"] = (f0 - freqs.back().get<double>()) / f0;
    }
    return m;
  }

  // Curvature contribution of a site DC bias at the RF null: sign and ordering
  // of the radial and axial shifts, plus the relocated equilibrium.
  json op_dc_bias_shift(const json& st) {
    const TrapSolver& s = solver_for(st);
    const DriveState d = drive_for(st, s);
    const auto channel = detail::field<std::string>(st, "channel", "step");
    const double volts = st.contains("dc_v") ? st.at("dc_v").get<double>()
                                             : settings_.number("/operating_points/inner_site_dc_bias_v");
    const Vec3 null = s.find_null(d, seed_for(st, s)).null_position;
    const SecularModes home = s.secular_frequencies(d, null);
    const DriveState biased = d.with_dc(channel, volts);
    const SecularModes at_null = s.secular_frequencies(biased, null);
    const int zh = mode_along(home.axes, Vec3::UnitZ());
    const int zb = mode_along(at_null.axes, Vec3::UnitZ());
    auto radial_mean = [](const SecularModes& m, int z) {
      double acc = 0.0;
      for (int i = 0; i < 3; ++i)
        if (i != z) acc += m.freqs_hz[i];
      return acc / 2.0;
    };
    json m = {{"dc_v", volts},
              {"radial_home_hz", radial_mean(home, zh)},
              {"axial_home_hz", home.freqs_hz[zh]},
              {"radial_biased_hz", radial_mean(at_null, zb)},
              {"axial_biased_hz", at_null.freqs_hz[zb]},
              {"axial_stable_at_null", at_null.stable[static_cast<std::size_t>(zb)]}};
    m["radial_up_axial_down"] =
        m["radial_biased_hz"].get<double>() > m["radial_home_hz"].get<double>() &&
        m["axial_biased_hz"].get<double>() < m["axial_home_hz"].get<double>();
    try {
      const Vec3 eq = s.find_equilibrium(biased, null);
      const SecularModes em = s.secular_frequencies(biased, eq);
      m["equilibrium_m"] = detail::vec_json(eq);
      m["equilibrium_freqs_hz"] = detail::vec_json(em.freqs_hz);
    } catch (const SolverError& e) {
      m["equilibrium_error"] = e.what();
    }
    if (auto p = output(st, "json")) write_text(*p, m.dump(2) + "\n");
    return m;
  }

  json op_recool(const json& st) {
    const LaserParams laser = laser_from_json(settings_.at("/recooling/laser"));
    RecoolingModel model = recooling_model(settings_);
    const double e0 = detail::field_or<double>(st, "e0_mev", settings_.number("/recooling/e0_mev"), "step");
    const int runs = detail::field_or<int>(st, "n_runs", static_cast<int>(settings_.number("/recooling/n_runs")), "step");
    const double duration =
        detail::field_or<double>(st, "duration_s", settings_.number("/recooling/duration_s"), "step");
    const double trap_f = settings_.number("/recooling/trap_freq_hz");
    const RecoolingTrace tr = simulate_recooling(e0, trap_f, laser, duration, runs, step_seed(st), model);
    const RecoolingFit fit = fit_recooling(tr, settings_.number("/recooling/fit_e_max_mev"));
    if (auto p = output(st, "trace_csv")) {
      std::ostringstream os;
      write_trace_csv(os, tr);
      write_text(*p, os.str());
    }
    if (auto p = output(st, "fit_json")) write_text(*p, recooling_fit_to_json(fit).dump(2) + "\n");
    return {{"e0_true_mev", e0},
            {"e0_fit_mev", fit.e0_mev},
            {"ci_lo_mev", fit.ci_lo_mev},
            {"ci_hi_mev", fit.ci_hi_mev},
            {"relative_error", std::abs(fit.e0_mev - e0) / std::max(e0, 1e-300)}};
  }

  json op_heating(const json& st) {
    const double rate = settings_.number("/heating_series/rate_mev_s");
    const double sigma = settings_.number("/heating_series/sigma_mev");
    const int reps = static_cast<int>(settings_.number("/heating_series/repetitions"));
    const Band band = settings_.band("heating_rate_mev_s");
    const auto times = heating_times(settings_);
    int pass = 0;
    std::ostringstream os;
    os << "repetition,rate_mev_s,sigma\n";
    for (int r = 0; r < reps; ++r) {
      const auto pts = synthetic_heating_series(rate, sigma, times, step_seed(st) + static_cast<std::uint64_t>(r));
      const HeatingRateFit fit = heating_rate_fit(pts);
      if (band.contains(fit.rate_mev_s)) ++pass;
      char buf[96];
      std::snprintf(buf, sizeof buf, "%d,%.9g,%.9g\n", r, fit.rate_mev_s, fit.sigma);
      os << buf;
    }
    if (auto p = output(st, "csv")) write_text(*p, os.str());
    return {{"repetitions", reps}, {"pass_fraction", static_cast<double>(pass) / reps}};
  }

  json op_lock_step(const json& st) {
    const std::string load = detail::field_or<std::string>(st, "load", "adjuster", "step");
    const double f = settings_.number("/network/f_target_hz");
    const double omega = constants::two_pi * f;
    ResonatorNetwork net;
    net.resonators = {network_resonator(settings_, load)};
    net.source_impedance = settings_.number("/network/source_impedance_ohm");
    TuneReport rep;
    net = tune_home(net, f, &rep);
    const Resonator& r = net.resonators.front();
    const double frac = settings_.number("/servo/step_fraction");
    const double c0 = r.load_c_t;
    const auto step_c = [c0, frac](double) { return c0 * (1.0 + frac); };
    const double dt = settings_.number("/servo/dt_s"), dur = settings_.number("/servo/duration_s");
    ServoParams closed = servo_for(settings_, r, omega);
    ServoParams open = closed;
    open.enabled = false;
    const LockTrace tc = simulate_lock(r, omega, step_c, dt, dur, closed, 0.0, net.source_impedance);
    const LockTrace to = simulate_lock(r, omega, step_c, dt, dur, open, 0.0, net.source_impedance);
    if (auto p = output(st, "closed_csv")) {
      std::ostringstream os;
      write_lock_csv(os, tc);
      write_text(*p, os.str());
    }
    if (auto p = output(st, "open_csv")) {
      std::ostringstream os;
      write_lock_csv(os, to);
      write_text(*p, os.str());
    }
    const double bound = settings_.band("lock_bound_deg").max;
    const double settle = tc.settling_time(bound);
    return {{"reflection", rep.reflection.front()},
            {"k_i", closed.k_i},
            {"initial_error_deg", tc.samples.front().phase_err_deg},
            {"settle_s", std::isfinite(settle) ? json(settle) : json(nullptr)},
            {"final_error_deg", std::abs(tc.samples.back().phase_err_deg)},
            {"open_loop_error_deg", std::abs(to.samples.back().phase_err_deg)},
            {"saturation_events", tc.saturation_times.size()}};
  }

  json op_loss(const json& st) {
    double depth = detail::field_or<double>(st, "depth_ev", settings_.number("/loss/depth_ev"), "step");
    json m;
    if (st.contains("site")) {
      const TrapSolver& s = solver_for(st);
      const DriveState d = drive_for(st, s);
      const TrapSite site = s.solve_site(d, seed_for(st, s));
      m["model_depth_ev"] = site.depth;
      m["model_half_time_s"] = loss_time(site.depth, settings_.number("/loss/rate_k_s"));
    }
    const double rate = settings_.number("/loss/rate_k_s");
    const double p = settings_.number("/loss/probability");
    const double wait = settings_.number("/loss/wait_s");
    m["depth_ev"] = depth;
    m["half_time_s"] = loss_time(depth, rate, p);
    m["inverted_rate_k_s"] = invert_rate(depth, p, wait);
    if (auto path = output(st, "csv")) {
      std::ostringstream os;
      os << "t_s,loss_probability\n";
      for (int i = 0; i <= 100; ++i) {
        const double t = 0.2 * i;
        char buf[64];
        std::snprintf(buf, sizeof buf, "%.6g,%.9g\n", t, loss_probability(depth, rate, t));
        os << buf;
      }
      write_text(*path, os.str());
    }
    return m;
  }

  json op_gate(const json& st) {
    GatePair g;
    g.separation_m = detail::field_or<double>(st, "separation_m", settings_.number("/gate/separation_m"), "step");
    g.omega_rad_s =
        constants::two_pi * detail::field_or<double>(st, "omega_hz", settings_.number("/gate/omega_hz"), "step");
    return {{"gate_time_s", gate_time(g)}};
  }

  Settings settings_;
  RunOptions opt_;
  std::string name_;
  std::uint64_t seed_ = 0;
  json layout_spec_;
  json drive_spec_;
  std::unique_ptr<TrapSolver> solver_;
  std::unique_ptr<TrapSolver> step_solver_;
  std::map<std::string, StepFn> ops_;
  ScenarioResult* res_ = nullptr;
};

inline ScenarioResult run_scenario(const std::string& config_path, const Settings& settings, const RunOptions& opt) {
  ScenarioRunner runner(settings, opt);
  return runner.run_file(config_path);
}

}  // namespace planartrap
