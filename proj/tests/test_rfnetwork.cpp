#include <gtest/gtest.h>

#include "planartrap/rfnetwork.hpp"
#include "planartrap/scenarios.hpp"

using namespace planartrap;

namespace {

constexpr double f_home = 10.1e6;
const double w_home = constants::two_pi * f_home;

Settings defaults() { return Settings::load(PLANARTRAP_DEFAULT_CONFIG); }

Resonator tuned(const std::string& load, TuneReport* rep = nullptr) {
  ResonatorNetwork net;
  net.resonators = {network_resonator(defaults(), load)};
  return tune_home(net, f_home, rep).resonators.front();
}

double phase_deg(Complex z) { return std::arg(z) * 180.0 / constants::pi; }

}  // namespace

TEST(RfNetwork, LowFrequencyInputIsCapacitive) {
  const Resonator r = tuned("adjuster");
  EXPECT_LT(phase_deg(input_impedance(r, w_home / 100.0)), -80.0);
}

TEST(RfNetwork, TunedInputMatchesSource) {
  TuneReport rep;
  const Resonator r = tuned("adjuster", &rep);
  EXPECT_LT(std::abs(input_impedance(r, w_home) - 50.0) / 50.0, 0.05);
  ASSERT_EQ(rep.reflection.size(), 1u);
  EXPECT_NEAR(rep.reflection[0], reflection_power(input_impedance(r, w_home)), 1e-15);
}

TEST(RfNetwork, LosslessLimitHasNoResistance) {
  Resonator r = tuned("adjuster");
  r.quality_factor = 1e15;
  for (double f : {3e6, 8e6, 13e6}) {
    const Complex z = input_impedance(r, constants::two_pi * f);
    EXPECT_LT(std::abs(z.real()), 1e-9 * std::abs(z)) << f;
  }
}

TEST(RfNetwork, SingleLcResonance) {
  Resonator r;
  r.L = 10e-6;
  r.quality_factor = 1e12;
  r.load_c_t = 1e-12;
  r.CV = 1e-12;
  r.C1 = 1e-12;
  r.C1 = 24.8e-12 - (tank_capacitance(r) - r.C1);
  r.CA = 1e-15;
  r.CB = 1e-12;
  ASSERT_NEAR(tank_capacitance(r), 24.8e-12, 1e-24);
  const double oracle = 1.0 / (constants::two_pi * std::sqrt(10e-6 * 24.8e-12));
  EXPECT_NEAR(oracle, 10.10e6, 0.02e6);

  // Zero crossing of the tank susceptance, by bisection.
  double lo = 5e6, hi = 20e6;
  for (int i = 0; i < 100; ++i) {
    const double mid = 0.5 * (lo + hi);
    (tank_admittance(r, constants::two_pi * mid).imag() < 0.0 ? lo : hi) = mid;
  }
  EXPECT_NEAR(lo, oracle, 1.0);
  EXPECT_NEAR(resonant_frequency(r), 10.10e6, 0.02e6);
}

TEST(RfNetwork, ResonanceFallsWithCapacitance) {
  const Resonator base = tuned("adjuster");
  double prev = std::numeric_limits<double>::infinity();
  for (int i = 0; i <= 10; ++i) {
    Resonator r = base;
    r.C1 = base.C1 * (1.0 + 0.1 * i);
    const double f = resonant_frequency(r);
    EXPECT_LT(f, prev);
    prev = f;
  }
  Resonator heavier = base;
  heavier.load_c_t *= 1.1;
  EXPECT_LT(resonant_frequency(heavier), resonant_frequency(base));
}

TEST(RfNetwork, PickOffIsCapacitiveDivider) {
  const Resonator r = tuned("main");
  for (double f : {1e6, 10.1e6, 30e6}) {
    const Transfer t = transfer(r, constants::two_pi * f);
    EXPECT_NEAR(std::abs(t.tap / t.gain - r.C2 / (r.C2 + r.C3)), 0.0, 1e-9);
  }
}

TEST(RfNetwork, TunedGainAndLockPhase) {
  for (const char* load : {"adjuster", "main"}) {
    const Resonator r = tuned(load);
    const Transfer t = transfer(r, w_home);
    EXPECT_GT(std::abs(t.gain), 5.0) << load;
    EXPECT_LT(std::abs(std::remainder(std::arg(t.gain) - r.phase_setpoint, constants::two_pi)) * 180.0 / constants::pi,
              0.1);
  }
}

TEST(RfNetwork, TuningConvergesForEveryResonator) {
  const Settings s = defaults();
  ResonatorNetwork net;
  net.resonators = {network_resonator(s, "adjuster"), network_resonator(s, "adjuster"), network_resonator(s, "main")};
  TuneReport rep;
  const ResonatorNetwork out = tune_home(net, f_home, &rep);
  EXPECT_TRUE(rep.ok());
  for (const auto& r : out.resonators) EXPECT_LT(reflection_power(input_impedance(r, w_home)), 0.01);
  EXPECT_EQ(out.resonators[0].C1, out.resonators[1].C1);
  EXPECT_EQ(out.resonators[0].CA, out.resonators[1].CA);
  EXPECT_EQ(out.resonators[0].CB, out.resonators[1].CB);
}

TEST(RfNetwork, MatchedLoadReflectsNothing) {
  EXPECT_EQ(reflection_power(Complex(50.0, 0.0)), 0.0);
  EXPECT_NEAR(reflection_power(Complex(150.0, 0.0)), 0.25, 1e-15);
}

TEST(RfNetwork, LockHoldsWithoutDisturbance) {
  const Settings s = defaults();
  const Resonator r = tuned("adjuster");
  const ServoParams servo = servo_for(s, r, w_home);
  const LockTrace tr = simulate_lock(r, w_home, [&](double) { return r.load_c_t; }, 1e-7, 100e-6, servo);
  for (const auto& smp : tr.samples) ASSERT_LT(std::abs(smp.phase_err_deg), 1e-6);
}

TEST(RfNetwork, LockRecoversFromLoadStep) {
  const Settings s = defaults();
  const Resonator r = tuned("adjuster");
  const double c1 = 1.1 * r.load_c_t;
  const ServoParams servo = servo_for(s, r, w_home);
  const LockTrace closed = simulate_lock(r, w_home, [&](double) { return c1; }, 1e-7, 300e-6, servo);
  EXPECT_GT(std::abs(closed.samples.front().phase_err_deg), 1.0);
  const double settle = closed.settling_time(1.0);
  ASSERT_TRUE(std::isfinite(settle));
  EXPECT_LT(settle, 100e-6);
  for (const auto& smp : closed.samples)
    if (smp.t >= settle) ASSERT_LT(std::abs(smp.phase_err_deg), 1.0);

  ServoParams open = servo;
  open.enabled = false;
  const LockTrace drift = simulate_lock(r, w_home, [&](double) { return c1; }, 1e-7, 300e-6, open);
  EXPECT_GT(std::abs(drift.samples.back().phase_err_deg), 1.0);
  EXPECT_TRUE(std::isnan(drift.settling_time(1.0)));
}

TEST(RfNetwork, LockCsvColumns) {
  const Resonator r = tuned("adjuster");
  std::ostringstream os;
  write_lock_csv(os, simulate_lock(r, w_home, [&](double) { return r.load_c_t; }, 1e-6, 3e-6, {}));
  const std::string text = os.str();
  EXPECT_EQ(text.substr(0, text.find('\n')), "t_s,phase_err_deg,v_ctrl,c_var_f");
  EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 5);
}

TEST(RfNetwork, NoCouplingMeansNoDeviation) {
  ResonatorNetwork net;
  net.resonators = {tuned("adjuster"), tuned("adjuster"), tuned("main")};
  net.mutual_c = Eigen::MatrixXd::Zero(3, 3);
  for (const auto& d : mutual_coupling_shift(net, w_home, {100.0, 60.0, 100.0})) {
    EXPECT_EQ(d.amplitude_error_v, 0.0);
    EXPECT_EQ(d.phase_error_deg, 0.0);
  }
}

TEST(RfNetwork, SymmetricCouplingGivesCommonModeDeviation) {
  ResonatorNetwork net;
  const Resonator r = tuned("adjuster");
  net.resonators = {r, r, r};
  net.mutual_c = Eigen::MatrixXd::Constant(3, 3, 1e-12);
  net.mutual_c.diagonal().setZero();
  const auto d = mutual_coupling_shift(net, w_home, {100.0, 100.0, 100.0});
  for (int i = 1; i < 3; ++i) {
    EXPECT_NEAR(d[i].phase_error_deg, d[0].phase_error_deg, 1e-9);
    EXPECT_NEAR(d[i].amplitude_error_v, d[0].amplitude_error_v, 1e-9);
  }
}

TEST(RfNetwork, LightLoadIsMoreSensitiveToCoupling) {
  const double mc = defaults().number("/network/mutual_c_f");
  ResonatorNetwork net;
  net.resonators = {tuned("adjuster"), tuned("adjuster"), tuned("main")};
  net.mutual_c = Eigen::MatrixXd::Constant(3, 3, mc);
  net.mutual_c.diagonal().setZero();
  const auto d = mutual_coupling_shift(net, w_home, {100.0 * std::pow(10.0, -5.0 / 20.0), 100.0, 100.0});
  EXPECT_GT(std::abs(d[0].phase_error_deg), 0.0);
  EXPECT_GT(std::abs(d[0].phase_error_deg), std::abs(d[2].phase_error_deg));
}

TEST(RfNetwork, InvalidInputsAreRejected) {
  Resonator r;
  r.CA = -1e-12;
  EXPECT_THROW(validate_resonator(r), ConfigError);
  ResonatorNetwork net;
  net.resonators = {Resonator{}, Resonator{}};
  net.mutual_c = Eigen::MatrixXd::Zero(2, 2);
  net.mutual_c(0, 1) = 1e-12;
  EXPECT_THROW(validate_network(net), ConfigError);
  EXPECT_THROW(tune_home(ResonatorNetwork{}, 0.0), ConfigError);
  EXPECT_THROW(simulate_lock(Resonator{}, w_home, [](double) { return 30e-12; }, 1e-5, 1e-4, {}), ConfigError);
}
