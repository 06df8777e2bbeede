// Acceptance run: one PASS/FAIL line per criterion. Exit status is nonzero
// if any criterion fails. Bands come from the settings file.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "planartrap/fields.hpp"
#include "planartrap/motion.hpp"
#include "planartrap/scenarios.hpp"
#include "planartrap/trapsolver.hpp"

namespace fs = std::filesystem;
using namespace planartrap;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

int failures = 0;

void report(const std::string& name, bool pass, const std::string& detail, double seconds) {
  if (!pass) ++failures;
  std::printf("%s %-28s %s (%.1f s)\n", pass ? "PASS" : "FAIL", name.c_str(), detail.c_str(), seconds);
  std::fflush(stdout);
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

struct ScenarioRun {
  ScenarioResult result;
  double seconds = 0.0;
};

ScenarioRun run_named(const Settings& s, const std::string& name, const fs::path& out) {
  const auto t0 = Clock::now();
  RunOptions opt;
  opt.out_dir = out;
  ScenarioRun r;
  r.result = run_scenario((fs::path(PLANARTRAP_SCENARIO_DIR) / (name + ".json")).string(), s, opt);
  r.seconds = seconds_since(t0);
  return r;
}

std::string describe(const ScenarioResult& r) {
  if (!r.error.empty()) return "error: " + r.error;
  std::string out;
  for (const auto& c : r.checks) {
    if (!out.empty()) out += "; ";
    out += fmt("%s.%s=%.4g%s", c.step.c_str(), c.metric.c_str(), c.value, c.passed ? "" : " (out of band)");
  }
  return out;
}

bool scenario_ok(const ScenarioRun& r, double max_seconds) {
  return r.result.exit_code == exit_codes::success && !r.result.checks.empty() && r.seconds < max_seconds;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// Disc oracle, Laplace trace and gradient-vs-difference checks.
void check_field_oracle(const Settings& s) {
  const auto t0 = Clock::now();
  const double tol_disc = s.number("/acceptance/disc_on_axis_rel");
  const double tol_prop = s.number("/acceptance/field_property_rel");

  const double radius = 1e-3;
  const int n = 256;
  const double theta = constants::two_pi / n;
  const double equal_area = radius * std::sqrt(theta / std::sin(theta));
  const Electrode disc{"disc", regular_polygon(Vec2::Zero(), equal_area, n), "disc"};
  double worst_disc = 0.0;
  for (int i = 0; i <= 200; ++i) {
    const double zr = 0.1 * std::pow(100.0, i / 200.0);
    const double z = zr * radius;
    const double exact = 1.0 - z / std::sqrt(z * z + radius * radius);
    worst_disc = std::max(worst_disc, std::abs(basis_potential(disc, {0.0, 0.0, z}) / exact - 1.0));
  }

  const ArrayLayout layout = make_folsom();
  const FieldModel model(layout);
  std::mt19937_64 rng(20240601);
  std::uniform_real_distribution<double> ux(0.0, 3.0e-3), uz(50e-6, 1.5e-3);
  std::uniform_int_distribution<std::size_t> pick(0, model.channels().size() - 1);
  double worst_laplace = 0.0, worst_grad = 0.0;
  for (int i = 0; i < 1000; ++i) {
    const Vec3 p(ux(rng), ux(rng), uz(rng));
    const std::size_t ch = pick(rng);
    const Mat3 h = model.channel_hessian(ch, p);
    worst_laplace = std::max(worst_laplace, std::abs(h.trace()) / h.norm());
    const Vec3 g = model.channel_gradient(ch, p);
    Vec3 fd;
    for (int k = 0; k < 3; ++k) {
      const double step = 1e-3 * p.z();
      Vec3 a = p, b = p;
      a[k] += step;
      b[k] -= step;
      fd[k] = (model.channel_potential(ch, a) - model.channel_potential(ch, b)) / (2.0 * step);
    }
    worst_grad = std::max(worst_grad, (fd - g).norm() / g.norm());
  }
  const double secs = seconds_since(t0);
  const bool pass = worst_disc < tol_disc && worst_laplace < tol_prop && worst_grad < tol_prop && secs < 10.0;
  report("field_oracle", pass,
         fmt("disc max rel %.2e, laplace max %.2e, grad-vs-fd max %.2e", worst_disc, worst_laplace, worst_grad), secs);
}

void check_gate_time(const Settings& s) {
  const auto t0 = Clock::now();
  GatePair g;
  g.separation_m = s.number("/gate/separation_m");
  g.omega_rad_s = constants::two_pi * s.number("/gate/omega_hz");
  const double t = gate_time(g);
  report("gate_time", s.band("gate_time_s").contains(t), fmt("t_gate = %.4f ms", t * 1e3), seconds_since(t0));
}

// Secular frequencies from full-RF trajectories against the Hessian, and
// micromotion amplitude under a 1 degree phase error.
void check_trajectory(const Settings& s) {
  const auto t0 = Clock::now();
  const double tol_f = s.number("/acceptance/trajectory_freq_rel");
  const double tol_mm = s.number("/acceptance/micromotion_rel");
  const json& op = s.at("/operating_points/folsom_outer");
  const ArrayLayout layout = resolve_layout(op.at("layout"));
  const TrapSolver solver(layout);
  const DriveState d = home_drive(layout, op.at("amplitude_v").get<double>(), op.at("rf_frequency_hz").get<double>());
  const TrapSite site = solver.solve_site(d, layout.site_seed(op.at("site").get<std::string>()), false);
  const double q = site.mathieu_q.maxCoeff();
  double worst_f = 0.0;
  for (int ax = 0; ax < 3; ++ax) {
    IonState s0;
    s0.position = site.null_position + 1e-6 * site.principal_axes[ax];
    const double f = site.secular_freqs[ax];
    const Trajectory tr = integrate_trajectory(solver.model(), d, layout.ion, s0, 30.0 / f);
    std::vector<double> t, x;
    for (const auto& st : tr.states) {
      t.push_back(st.time);
      x.push_back((st.position - site.null_position).dot(site.principal_axes[ax]));
    }
    worst_f = std::max(worst_f, std::abs(spectral_peak(t, x, 0.3 * f, 2.0 * f) / f - 1.0));
  }

  const json& in = s.at("/operating_points/folsom_inner");
  const ArrayLayout inner_layout = resolve_layout(in.at("layout"));
  const TrapSolver inner(inner_layout);
  const DriveState di =
      home_drive(inner_layout, in.at("amplitude_v").get<double>(), in.at("rf_frequency_hz").get<double>());
  const TrapSite home = inner.solve_site(di, inner_layout.site_seed(in.at("site").get<std::string>()), false);
  const DriveState dp = di.with_phase(channel_ids::x_adj, constants::pi / 180.0);
  const Vec3 predicted = inner.excess_micromotion(dp, home.null_position);
  const IonState s0 = micromotion_initial_state(inner.model(), dp, inner_layout.ion, home.null_position);
  const Trajectory tr = integrate_trajectory(inner.model(), dp, inner_layout.ion, s0, 20.0 / home.secular_freqs[0]);
  std::vector<double> t, xs[3];
  for (const auto& st : tr.states) {
    t.push_back(st.time);
    for (int a = 0; a < 3; ++a) xs[a].push_back(st.position[a]);
  }
  Vec3 amp;
  for (int a = 0; a < 3; ++a) amp[a] = tone_amplitude(t, xs[a], dp.omega());
  const double mm_rel = std::abs(amp.norm() / predicted.norm() - 1.0);
  const double secs = seconds_since(t0);
  const bool pass = q < 0.3 && worst_f < tol_f && mm_rel < tol_mm && secs < 120.0;
  report("pseudopotential_vs_trajectory", pass,
         fmt("q_max %.3f, freq max rel %.2e, micromotion %.4g m vs %.4g m (rel %.2e)", q, worst_f, amp.norm(),
             predicted.norm(), mm_rel),
         secs);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria"};
  std::string overlay, out_dir = "acceptance_out";
  app.add_option("--config", overlay, "Settings overlay merged onto the defaults")->check(CLI::ExistingFile);
  app.add_option("--out-dir", out_dir, "Directory for scenario outputs");
  CLI11_PARSE(app, argc, argv);

  const Settings s =
      Settings::load(PLANARTRAP_DEFAULT_CONFIG, overlay.empty() ? std::nullopt : std::optional(overlay));
  const fs::path out = out_dir;
  fs::remove_all(out);

  check_field_oracle(s);
  check_gate_time(s);

  const fs::path run_a = out / "run_a";
  const auto folsom = run_named(s, "depth_outer_site", run_a);
  report("folsom_operating_point", scenario_ok(folsom, 60.0), describe(folsom.result), folsom.seconds);

  const auto y_scan = run_named(s, "fig7b_y_scan", run_a);
  const auto x_scan = run_named(s, "fig7c_x_scan", run_a);
  report("fig7_bands", scenario_ok(y_scan, 120.0) && scenario_ok(x_scan, 120.0 - y_scan.seconds),
         describe(y_scan.result) + "; " + describe(x_scan.result), y_scan.seconds + x_scan.seconds);

  check_trajectory(s);

  const auto mini = run_named(s, "miniature_design", run_a);
  report("miniature_design_point", scenario_ok(mini, 60.0), describe(mini.result), mini.seconds);

  const auto recool = run_named(s, "recool_fig8_roundtrip", run_a);
  report("recooling_round_trip", scenario_ok(recool, 300.0), describe(recool.result), recool.seconds);

  const auto loss = run_named(s, "loss_rate_outer", run_a);
  report("ion_loss_model", scenario_ok(loss, 60.0), describe(loss.result), loss.seconds);

  const auto lock = run_named(s, "lock_step_response", run_a);
  report("phase_lock", scenario_ok(lock, 30.0), describe(lock.result), lock.seconds);

  // Determinism: rerun every bundled scenario and compare outputs byte for byte.
  const auto t0 = Clock::now();
  const auto bias = run_named(s, "inner_site_dc_bias", run_a);
  std::vector<std::string> names;
  for (const auto& e : fs::directory_iterator(PLANARTRAP_SCENARIO_DIR))
    if (e.path().extension() == ".json") names.push_back(e.path().stem().string());
  std::sort(names.begin(), names.end());
  const fs::path run_b = out / "run_b";
  int compared = 0, differing = 0;
  for (const auto& name : names) (void)run_named(s, name, run_b);
  for (const auto& e : fs::recursive_directory_iterator(run_a)) {
    if (!e.is_regular_file()) continue;
    const fs::path other = run_b / fs::relative(e.path(), run_a);
    ++compared;
    if (!fs::exists(other) || slurp(e.path()) != slurp(other)) {
      ++differing;
      std::printf("  differs: %s\n", fs::relative(e.path(), run_a).c_str());
    }
  }
  report("determinism", differing == 0 && compared > 0 && bias.result.error.empty(),
         fmt("%d scenarios, %d files compared, %d differ; no console build required", static_cast<int>(names.size()),
             compared, differing),
         seconds_since(t0));

  std::printf("%s: %d criteria failed\n", failures == 0 ? "ALL PASS" : "FAILURES", failures);
  return failures == 0 ? 0 : 1;
}
