#include <gtest/gtest.h>

#include "planartrap/scenarios.hpp"
#include "planartrap/trapsolver.hpp"

using namespace planartrap;

namespace {

struct Folsom {
  ArrayLayout layout = make_folsom();
  TrapSolver solver{layout};
  DriveState outer = home_drive(layout, 100.0, 10.7e6);
  DriveState inner = home_drive(layout, 100.0, 10.1e6);
};

const Folsom& folsom() {
  static const Folsom f;
  return f;
}

double deg(double d) { return d * constants::pi / 180.0; }

}  // namespace

TEST(TrapSolver, OuterSiteNullAtCalibratedHeightOnDiagonal) {
  const auto& f = folsom();
  const TrapSite s = f.solver.find_null(f.outer, f.layout.site_seed(folsom_calibration_site));
  EXPECT_NEAR(s.null_position.z(), 400e-6, 5e-6);
  EXPECT_NEAR(s.null_position.x(), s.null_position.y(), 1e-9);
  EXPECT_LT(s.residual_field, 1e-3);
}

TEST(TrapSolver, InnerSiteNullOnDiagonal) {
  const auto& f = folsom();
  const TrapSite s = f.solver.find_null(f.inner, f.layout.site_seed(inner_experiment_site));
  EXPECT_NEAR(s.null_position.x(), s.null_position.y(), 1e-9);
}

TEST(TrapSolver, NullAgreesWithDenseGridMinimum) {
  const auto& f = folsom();
  const TrapSite s = f.solver.find_null(f.inner, f.layout.site_seed(inner_experiment_site));
  const DriveWeights w = f.solver.weights(f.inner);
  const double step = 4e-6;
  double best = std::numeric_limits<double>::infinity();
  Vec3 best_p;
  for (int i = -5; i <= 5; ++i)
    for (int j = -5; j <= 5; ++j)
      for (int k = -5; k <= 5; ++k) {
        const Vec3 p = s.null_position + step * Vec3(i + 0.37, j - 0.21, k + 0.13);
        const double e2 = f.solver.model().rf_field(w, p).squaredNorm();
        if (e2 < best) {
          best = e2;
          best_p = p;
        }
      }
  EXPECT_LT((best_p - s.null_position).cwiseAbs().maxCoeff(), step);
}

TEST(TrapSolver, OuterSiteAxialFrequencyWithinFactorTwo) {
  const auto& f = folsom();
  TrapSite s = f.solver.find_null(f.outer, f.layout.site_seed(folsom_calibration_site));
  f.solver.fill_modes(s, f.outer);
  ASSERT_TRUE(s.stable());
  const double fz = s.secular_freqs[mode_along(s.principal_axes, Vec3::UnitZ())];
  EXPECT_GE(fz, 340e3);
  EXPECT_LE(fz, 1.36e6);
}

TEST(TrapSolver, SphericalQuadrupoleRadialIsHalfAxial) {
  // phi = A (x^2 + y^2 - 2 z^2): U = c |grad phi|^2 has curvature 8cA^2 (1, 1, 4).
  const auto& f = folsom();
  const double a = 1e7, c = f.solver.rf_energy_factor(constants::two_pi * 10e6);
  const Mat3 h = (8.0 * c * a * a * Vec3(1.0, 1.0, 4.0)).asDiagonal();
  const SecularModes m = f.solver.modes_from_hessian(h);
  EXPECT_NEAR(m.freqs_hz[0] / m.freqs_hz[2], 0.5, 0.005);
  EXPECT_NEAR(m.freqs_hz[1] / m.freqs_hz[2], 0.5, 0.005);
}

TEST(TrapSolver, FrequenciesInvariantUnderJointAmplitudeAndDriveScaling) {
  const auto& f = folsom();
  const TrapSite s = f.solver.find_null(f.outer, f.layout.site_seed(folsom_calibration_site));
  const DriveState scaled = f.outer.with_amplitude_scale(2.0).with_frequency(2.0 * f.outer.rf_frequency_hz);
  const SecularModes a = f.solver.secular_frequencies(f.outer, s.null_position);
  const SecularModes b = f.solver.secular_frequencies(scaled, s.null_position);
  for (int i = 0; i < 3; ++i) EXPECT_NEAR(b.freqs_hz[i] / a.freqs_hz[i], 1.0, 1e-9);
}

TEST(TrapSolver, MathieuParameter) {
  EXPECT_NEAR(mathieu_q(Vec3(680e3, 0, 0), 10.7e6).q[0], 2.0 * std::sqrt(2.0) * 0.680 / 10.7, 1e-12);
  EXPECT_NEAR(mathieu_q(Vec3(680e3, 0, 0), 10.7e6).q[0], 0.180, 0.001);
  EXPECT_EQ(mathieu_q(Vec3::Zero(), 10.7e6).q.maxCoeff(), 0.0);
  EXPECT_NEAR(mathieu_q(Vec3(10e6, 0, 0), 100e6).q[0], 0.283, 0.0005);
  EXPECT_TRUE(mathieu_q(Vec3(10e6, 0, 0), 100e6).stable);
  EXPECT_TRUE(mathieu_q(Vec3(10e6, 0, 0), 100e6).pseudopotential_valid);
  EXPECT_FALSE(mathieu_q(Vec3(40e6, 0, 0), 100e6).stable);
  EXPECT_THROW(mathieu_q(Vec3::Zero(), 0.0), ConfigError);
}

TEST(TrapSolver, OuterSiteDepthWithinFactorTwo) {
  const auto& f = folsom();
  const TrapSite s = f.solver.solve_site(f.outer, f.layout.site_seed(folsom_calibration_site));
  EXPECT_TRUE(s.trapped);
  EXPECT_GE(s.depth, 0.05);
  EXPECT_LE(s.depth, 0.2);
  EXPECT_NEAR(f.solver.pseudopotential_ev(f.outer, s.null_position), 0.0, 1e-9);
}

TEST(TrapSolver, DepthScalesWithAmplitudeSquared) {
  const auto& f = folsom();
  const TrapSite s = f.solver.find_null(f.outer, f.layout.site_seed(folsom_calibration_site));
  const DepthResult d1 = f.solver.trap_depth(f.outer, s.null_position);
  const DepthResult d2 = f.solver.trap_depth(f.outer.with_amplitude_scale(2.0), s.null_position);
  EXPECT_NEAR(d2.depth_ev / d1.depth_ev, 4.0, 4e-6);
}

TEST(TrapSolver, MiniatureDesignPoint) {
  const ArrayLayout l = make_miniature();
  const TrapSolver solver(l);
  const DriveState d = home_drive(l, 150.0, 100e6);
  const TrapSite s = solver.solve_site(d, l.site_seed(inner_experiment_site));
  ASSERT_TRUE(s.stable());
  EXPECT_GE(s.secular_freqs.maxCoeff(), 5e6);
  EXPECT_LE(s.secular_freqs.maxCoeff(), 20e6);
  EXPECT_GE(s.depth, 0.05);
  EXPECT_LE(s.depth, 0.2);
  EXPECT_LT(s.mathieu_q.maxCoeff(), 0.9);
  EXPECT_TRUE(mathieu_q(s, d).stable);
}

TEST(TrapSolver, YAdjusterReductionDisplacesNullMonotonically) {
  const auto& f = folsom();
  const Vec3 seed = f.solver.find_null(f.inner, f.layout.site_seed(inner_experiment_site)).null_position;
  const ScanCurve c = f.solver.scan_power(f.inner, channel_ids::y_adj, {0, -1, -2, -3, -4, -5}, seed);
  ASSERT_EQ(c.points.size(), 6u);
  EXPECT_FALSE(c.truncated);
  double prev_y = c.points.front().null_position.y();
  for (std::size_t i = 1; i < c.points.size(); ++i) {
    EXPECT_LT(c.points[i].null_position.y(), prev_y);
    prev_y = c.points[i].null_position.y();
  }
  const double disp = (c.points.back().null_position - c.points.front().null_position).norm();
  EXPECT_GE(disp, 37e-6 * 0.5);
  EXPECT_LE(disp, 37e-6 * 1.5);
}

TEST(TrapSolver, XAdjusterLowersXFrequency) {
  const auto& f = folsom();
  const Vec3 seed = f.solver.find_null(f.inner, f.layout.site_seed(inner_experiment_site)).null_position;
  const ScanCurve c = f.solver.scan_power(f.inner, channel_ids::x_adj, {0, -1, -6}, seed);
  ASSERT_EQ(c.points.size(), 3u);
  const double f0 = axis_frequency(c.points[0].secular_freqs, c.points[0].axes, Vec3::UnitX());
  const double f1 = axis_frequency(c.points[1].secular_freqs, c.points[1].axes, Vec3::UnitX());
  const double f6 = axis_frequency(c.points[2].secular_freqs, c.points[2].axes, Vec3::UnitX());
  EXPECT_GE(f0 - f1, 7.5e3);
  EXPECT_LE(f0 - f1, 22.5e3);
  EXPECT_GE((f0 - f6) / f0, 0.15);
  EXPECT_LE((f0 - f6) / f0, 0.35);
}

TEST(TrapSolver, ScanRejectsUnknownChannel) {
  const auto& f = folsom();
  EXPECT_THROW(f.solver.scan_power(f.inner, "nope", {0}, f.layout.site_seed(inner_experiment_site)), ConfigError);
}

TEST(TrapSolver, BalancedPhasesGiveNoMicromotion) {
  const auto& f = folsom();
  const TrapSite s = f.solver.solve_site(f.inner, f.layout.site_seed(inner_experiment_site), false);
  EXPECT_EQ(s.micromotion_amp.norm(), 0.0);
  EXPECT_LT(f.solver.excess_micromotion(f.inner, s.null_position).norm(), 1e-12);
}

TEST(TrapSolver, MicromotionIsLinearInPhaseOffset) {
  const auto& f = folsom();
  const Vec3 null = f.solver.find_null(f.inner, f.layout.site_seed(inner_experiment_site)).null_position;
  const Vec3 a1 = f.solver.excess_micromotion(f.inner.with_phase(channel_ids::x_adj, deg(1.0)), null);
  const Vec3 a2 = f.solver.excess_micromotion(f.inner.with_phase(channel_ids::x_adj, deg(2.0)), null);
  EXPECT_GT(a1.norm(), 0.0);
  EXPECT_NEAR(a2.norm() / a1.norm(), 2.0, 0.02);

  // Direct evaluation: Q |E| / (m Omega^2) from the residual field.
  const DriveState d = f.inner.with_phase(channel_ids::x_adj, deg(1.0));
  const CVec3 e = f.solver.model().rf_field(f.solver.weights(d), null);
  const double k = f.layout.ion.charge_c / (f.layout.ion.mass_kg * d.omega() * d.omega());
  for (int i = 0; i < 3; ++i) EXPECT_NEAR(a1[i], k * std::abs(e[i]), 1e-12 * a1.norm());
}

TEST(TrapSolver, SolveSiteReportsMicromotionAtBalancedNull) {
  const auto& f = folsom();
  const DriveState d = f.inner.with_phase(channel_ids::x_adj, deg(1.0));
  const TrapSite s = f.solver.solve_site(d, f.layout.site_seed(inner_experiment_site), false);
  const TrapSite b = f.solver.solve_site(f.inner, f.layout.site_seed(inner_experiment_site), false);
  EXPECT_EQ(s.null_position, b.null_position);
  EXPECT_GT(s.micromotion_amp.norm(), 0.0);
}

TEST(TrapSolver, GateTime) {
  GatePair g;
  g.separation_m = 60e-6;
  g.omega_rad_s = constants::two_pi * 10e6;
  const double t = gate_time(g);
  const double oracle = 4.0 * constants::pi * constants::vacuum_permittivity * constants::ca40_ion_mass *
                        std::pow(60e-6, 3) * g.omega_rad_s / std::pow(constants::elementary_charge, 2);
  EXPECT_NEAR(t, oracle, 1e-15);
  EXPECT_NEAR(t, 3.9e-3, 0.1e-3);
  GatePair g2 = g;
  g2.separation_m *= 2.0;
  EXPECT_DOUBLE_EQ(gate_time(g2), 8.0 * t);
  GatePair g3 = g;
  g3.omega_rad_s /= 2.0;
  EXPECT_DOUBLE_EQ(gate_time(g3), t / 2.0);
  g3.separation_m = 0.0;
  EXPECT_THROW(gate_time(g3), ConfigError);
}

TEST(TrapSolver, SiteDcBiasRaisesRadialAndLowersAxial) {
  const auto& f = folsom();
  const Vec3 null = f.solver.find_null(f.inner, f.layout.site_seed(inner_experiment_site)).null_position;
  const SecularModes home = f.solver.secular_frequencies(f.inner, null);
  const SecularModes biased = f.solver.secular_frequencies(f.inner.with_dc("dc_" + inner_experiment_site, -5.3), null);
  const int zh = mode_along(home.axes, Vec3::UnitZ()), zb = mode_along(biased.axes, Vec3::UnitZ());
  auto radial_mean = [](const SecularModes& m, int z) { return (m.freqs_hz.sum() - m.freqs_hz[z]) / 2.0; };
  EXPECT_GT(radial_mean(biased, zb), radial_mean(home, zh));
  EXPECT_LT(biased.freqs_hz[zb], home.freqs_hz[zh]);
}

TEST(TrapSolver, EquilibriumWithDcBiasIsForceFree) {
  const auto& f = folsom();
  const DriveState d = f.inner.with_dc("dc_" + inner_experiment_site, -2.0);
  const Vec3 null = f.solver.find_null(f.inner, f.layout.site_seed(inner_experiment_site)).null_position;
  const Vec3 eq = f.solver.find_equilibrium(d, null);
  const DriveWeights w = f.solver.weights(d);
  Vec3 grad;
  for (int k = 0; k < 3; ++k) {
    const double h = 1e-4 * eq.z();
    Vec3 a = eq, b = eq;
    a[k] += h;
    b[k] -= h;
    grad[k] = (f.solver.energy_j(w, a) - f.solver.energy_j(w, b)) / (2 * h);
  }
  const Mat3 hess = f.solver.model().sample(w, eq).hess_e2;
  EXPECT_LT(grad.norm() * eq.z(), 1e-6 * f.solver.rf_energy_factor(d.omega()) * hess.norm() * eq.z() * eq.z());
}

TEST(TrapSolver, NullSearchFailureCarriesLastIterate) {
  ArrayLayout l;
  l.electrodes = {{"pad", rectangle(-5e-4, 5e-4, -5e-4, 5e-4), "rf"}};
  l.rf_channels = {"rf"};
  const TrapSolver s(l);
  DriveState d;
  d.rf_frequency_hz = 10e6;
  d.channels["rf"].amplitude_v = 100.0;
  try {
    s.find_null(d, {0, 0, 4e-4});
    FAIL() << "expected NullSearchError";
  } catch (const NullSearchError& e) {
    EXPECT_GT(e.last_iterate.z(), 0.0);
  }
}

TEST(TrapSolver, ScanCsvColumns) {
  const auto& f = folsom();
  const Vec3 seed = f.solver.find_null(f.inner, f.layout.site_seed(inner_experiment_site)).null_position;
  std::ostringstream os;
  write_scan_csv(os, f.solver.scan_power(f.inner, channel_ids::y_adj, {0, -0.5}, seed));
  const std::string text = os.str();
  EXPECT_EQ(text.substr(0, text.find('\n')), "db,x,y,z,f1,f2,f3,stable");
  EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 3);
}
