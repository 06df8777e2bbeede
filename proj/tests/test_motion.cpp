#include <gtest/gtest.h>

#include <boost/math/special_functions/gamma.hpp>

#include "planartrap/motion.hpp"
#include "planartrap/scenarios.hpp"

using namespace planartrap;

namespace {

Settings defaults() { return Settings::load(PLANARTRAP_DEFAULT_CONFIG); }

LaserParams default_laser() { return laser_from_json(defaults().at("/recooling/laser")); }

RecoolingTrace simulate(double e0, int runs, std::uint64_t seed) {
  const Settings s = defaults();
  return simulate_recooling(e0, s.number("/recooling/trap_freq_hz"), default_laser(), s.number("/recooling/duration_s"),
                            runs, seed, recooling_model(s));
}

}  // namespace

TEST(Motion, FreeParticleMovesInStraightLine) {
  const ArrayLayout l = make_folsom();
  const FieldModel m(l);
  const DriveState d = home_drive(l, 0.0, 10.1e6);
  IonState s0;
  s0.position = Vec3(0.75e-3, 0.75e-3, 4e-4);
  s0.velocity = Vec3(3.0, -2.0, 1.0);
  TrajectoryOptions opt;
  opt.sample_stride = 100;
  const Trajectory tr = integrate_trajectory(m, d, l.ion, s0, 10.0 / 10.1e6, opt);
  ASSERT_FALSE(tr.escaped);
  for (const auto& s : tr.states) {
    EXPECT_LT((s.position - (s0.position + s0.velocity * s.time)).norm(), 1e-15);
    EXPECT_NEAR(s.velocity.squaredNorm() / s0.velocity.squaredNorm(), 1.0, 1e-10);
  }
}

TEST(Motion, TrajectoryRejectsCoarseStep) {
  const ArrayLayout l = make_folsom();
  const FieldModel m(l);
  IonState s0;
  s0.position = Vec3(0.0, 0.0, 4e-4);
  TrajectoryOptions opt;
  opt.dt = 1.0 / (50.0 * 10.1e6);
  EXPECT_THROW(integrate_trajectory(m, home_drive(l, 100.0, 10.1e6), l.ion, s0, 1e-6, opt), ConfigError);
}

TEST(Motion, ScatterRateLimits) {
  LaserParams laser;
  laser.detuning = 0.0;
  const double gamma = laser.natural_linewidth;
  EXPECT_NEAR(scatter_rate(Vec3::Zero(), laser, 1e9), gamma / 2.0, 1e-8 * gamma);
  EXPECT_NEAR(scatter_rate(Vec3::Zero(), laser, 1.0), gamma / 4.0, 1e-12 * gamma);
}

TEST(Motion, ScatterRatePeaksAtDopplerResonance) {
  const LaserParams laser = default_laser();
  const double v_res = laser.detuning / laser.wavenumber();
  const Vec3 dir = laser.direction;
  const double peak = scatter_rate(dir * v_res, laser);
  EXPECT_NEAR(peak, 0.5 * laser.natural_linewidth * laser.saturation_s / (1.0 + laser.saturation_s), 1e-9 * peak);
  for (double dv : {-2.0, -0.5, 0.5, 2.0}) EXPECT_LT(scatter_rate(dir * (v_res + dv), laser), peak);
}

TEST(Motion, GaussianBeamProfile) {
  const LaserParams laser = default_laser();
  EXPECT_DOUBLE_EQ(local_saturation(laser.focus + 3e-4 * laser.direction, laser), laser.saturation_s);
  const Vec3 perp = Vec3(0.0, 1.0, 0.0);
  EXPECT_NEAR(local_saturation(laser.focus + laser.waist * perp, laser), laser.saturation_s * std::exp(-2.0), 1e-12);
}

TEST(Motion, ColdIonGivesFlatTrace) {
  const Settings s = defaults();
  const auto rates = recooling_rates(0.0, default_laser(), s.number("/recooling/duration_s"), recooling_model(s));
  ASSERT_FALSE(rates.empty());
  // Only recoil heating moves a cold ion.
  for (double r : rates) EXPECT_NEAR(r, rates.front(), 1e-3 * rates.front());
  EXPECT_LT(fit_recooling(simulate(0.0, 1000, 3)).e0_mev, 1.0);
}

TEST(Motion, RecoolingRoundTrip) {
  const RecoolingFit fit = fit_recooling(simulate(30.0, 1000, 8));
  EXPECT_TRUE(fit.identifiable);
  EXPECT_NEAR(fit.e0_mev, 30.0, 3.0);
  EXPECT_LE(fit.ci_lo_mev, fit.e0_mev);
  EXPECT_GE(fit.ci_hi_mev, fit.e0_mev);
}

TEST(Motion, HotterIonsFitHotter) {
  double prev = -1.0;
  for (double e0 : {10.0, 20.0, 40.0}) {
    const double e = fit_recooling(simulate(e0, 1000, 11)).e0_mev;
    EXPECT_GT(e, prev) << e0;
    prev = e;
  }
}

TEST(Motion, MoreRunsNarrowTheInterval) {
  const RecoolingFit few = fit_recooling(simulate(30.0, 100, 5));
  const RecoolingFit many = fit_recooling(simulate(30.0, 1000, 5));
  const double ratio = (few.ci_hi_mev - few.ci_lo_mev) / (many.ci_hi_mev - many.ci_lo_mev);
  EXPECT_NEAR(ratio, std::sqrt(10.0), 0.2 * std::sqrt(10.0));
}

TEST(Motion, RecoolingRejectsBadInput) {
  EXPECT_THROW(simulate(-1.0, 10, 0), ConfigError);
  EXPECT_THROW(simulate(10.0, 0, 0), ConfigError);
  RecoolingTrace tr;
  tr.bin_width = 50e-6;
  tr.counts_per_bin.assign(5, 1.0);
  EXPECT_THROW(fit_recooling(tr), ConfigError);
}

TEST(Motion, TraceCsvColumns) {
  std::ostringstream os;
  write_trace_csv(os, simulate(30.0, 10, 1));
  EXPECT_EQ(os.str().substr(0, 11), "t_s,counts\n");
}

TEST(Motion, HeatingFitRecoversExactLine) {
  std::vector<HeatingPoint> pts;
  for (int i = 1; i <= 16; ++i) pts.push_back({0.006 * i, 60.0 * 0.006 * i});
  const HeatingRateFit fit = heating_rate_fit(pts);
  EXPECT_NEAR(fit.rate_mev_s, 60.0, 1e-9);
  EXPECT_NEAR(fit.intercept_mev, 0.0, 1e-9);
  EXPECT_NEAR(fit.sigma, 0.0, 1e-6);
}

TEST(Motion, HeatingFitIgnoresConstantOffset) {
  std::vector<HeatingPoint> pts;
  for (int i = 1; i <= 16; ++i) pts.push_back({0.006 * i, 5.0 + 60.0 * 0.006 * i});
  const HeatingRateFit fit = heating_rate_fit(pts);
  EXPECT_NEAR(fit.rate_mev_s, 60.0, 1e-9);
  EXPECT_NEAR(fit.intercept_mev, 5.0, 1e-9);
  EXPECT_THROW(heating_rate_fit(std::span(pts).first(2)), ConfigError);
}

TEST(Motion, SyntheticHeatingSeriesFitsWithinBand) {
  const Settings s = defaults();
  const auto times = heating_times(s);
  const HeatingRateFit fit = heating_rate_fit(synthetic_heating_series(60.0, 1.0, times, 42));
  EXPECT_NEAR(fit.rate_mev_s, 60.0, 20.0);
  EXPECT_GT(fit.sigma, 0.0);
}

TEST(Motion, UnitConversions) {
  const double oracle = 60e-3 / 8.617333262e-5;
  EXPECT_NEAR(mev_per_s_to_k_per_s(60.0), oracle, 1e-6 * oracle);
  EXPECT_NEAR(mev_per_s_to_k_per_s(60.0), 696.3, 0.5);
  EXPECT_NEAR(k_per_s_to_mev_per_s(mev_per_s_to_k_per_s(12.5)), 12.5, 1e-12);
  const IonSpecies ion;
  const double s_e = 1e-12;
  const double joules = ion.charge_c * ion.charge_c * s_e / (4.0 * ion.mass_kg);
  EXPECT_NEAR(noise_heating_rate_mev_s(s_e, ion), joules / 1.602176634e-19 * 1e3, 1e-9 * joules / 1.6e-22);
}

TEST(Motion, LossProbabilityMatchesIncompleteGamma) {
  EXPECT_EQ(loss_probability(0.1, 200.0, 0.0), 0.0);
  for (double t : {0.5, 2.0, 5.0, 20.0}) {
    const double kt = 8.617333262e-5 * 200.0 * t;
    EXPECT_NEAR(loss_probability(0.1, 200.0, t), boost::math::gamma_q(1.5, 0.1 / kt), 1e-9) << t;
  }
  double prev = 0.0;
  for (double t = 0.5; t < 50.0; t *= 1.5) {
    const double p = loss_probability(0.1, 200.0, t);
    EXPECT_GT(p, prev);
    prev = p;
  }
}

TEST(Motion, LossHalfTimeAndInversion) {
  const double t_half = loss_time(0.1, 200.0, 0.5);
  EXPECT_GT(t_half, 2.0);
  EXPECT_LT(t_half, 10.0);
  EXPECT_NEAR(loss_probability(0.1, 200.0, t_half), 0.5, 1e-12);
  EXPECT_NEAR(invert_rate(0.1, 0.5, t_half), 200.0, 1e-6);
  const double r5 = invert_rate(0.1, 0.5, 5.0);
  EXPECT_GT(r5, 100.0);
  EXPECT_LT(r5, 400.0);
  EXPECT_THROW(loss_probability(0.0, 200.0, 1.0), ConfigError);
  EXPECT_THROW(invert_rate(0.1, 1.0, 1.0), ConfigError);
}

TEST(Motion, SpectralPeakFindsTone) {
  std::vector<double> t, x;
  for (int i = 0; i < 4000; ++i) {
    t.push_back(i * 1e-7);
    x.push_back(2.0 * std::sin(constants::two_pi * 123.4e3 * t.back()) + 0.3);
  }
  EXPECT_NEAR(spectral_peak(t, x, 50e3, 300e3), 123.4e3, 50.0);
  EXPECT_NEAR(tone_amplitude(t, x, constants::two_pi * 123.4e3), 2.0, 0.02);
}
