#pragma once

// Phase-locked tank-resonator drive, one per RF electrode.
//
// Netlist per resonator (see docs/netlist.md):
//   source (V_s, R_s = 50 ohm) -> node M
//   M: CB to ground; CA in series from M to the tank node T
//   T: L (series loss R = omega L / Q) to ground, C1 to ground, C2-C3 pick-off
//      divider to ground, CV + varactor in series to ground, electrode load C_T
// Electrode outputs couple to each other through the mutual capacitance matrix.

#include <algorithm>
#include <cmath>
#include <complex>
#include <functional>
#include <limits>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "planartrap/errors.hpp"
#include "planartrap/units.hpp"

namespace planartrap {

struct Varactor {
  double c_min = 5e-12;
  double c_max = 50e-12;
  double c_nominal = 20e-12;  // capacitance at v_ctrl = 0
  double slope = 2e-12;       // F/V, capacitance decreases with v_ctrl
  double v_ctrl = 0.0;

  double raw_capacitance() const { return c_nominal - slope * v_ctrl; }
  double capacitance() const { return std::clamp(raw_capacitance(), c_min, c_max); }
};

struct Resonator {
  double L = 3.3e-6;
  double C1 = 30e-12;
  double C2 = 1e-12;
  double C3 = 99e-12;
  double CV = 47e-12;
  double CA = 10e-12;
  double CB = 100e-12;
  double quality_factor = 200.0;
  Varactor varactor;
  double load_c_t = 30e-12;
  double phase_setpoint = 0.0;  // phase of the transfer at the locked home point, rad
};

struct ResonatorNetwork {
  std::vector<Resonator> resonators;
  Eigen::MatrixXd mutual_c;  // F, symmetric, zero diagonal
  double source_impedance = 50.0;
  double phase_reference = 0.0;  // common offset added to every setpoint, rad
};

using ComplexMatrix = Eigen::MatrixXcd;
using ComplexVector = Eigen::VectorXcd;

inline void validate_resonator(const Resonator& r) {
  const double caps[] = {r.C1, r.C2, r.C3, r.CV, r.CA, r.CB, r.load_c_t};
  for (double c : caps)
    if (!(c > 0.0)) throw ConfigError("resonator: capacitances must be > 0");
  if (!(r.L > 0.0)) throw ConfigError("resonator: L must be > 0");
  if (!(r.quality_factor > 0.0)) throw ConfigError("resonator: quality_factor must be > 0");
  const auto& v = r.varactor;
  if (!(v.c_min > 0.0 && v.c_min <= v.c_max)) throw ConfigError("resonator: varactor needs 0 < c_min <= c_max");
  if (!(v.slope > 0.0)) throw ConfigError("resonator: varactor slope must be > 0");
}

inline void validate_network(const ResonatorNetwork& n) {
  for (const auto& r : n.resonators) validate_resonator(r);
  const auto N = static_cast<Eigen::Index>(n.resonators.size());
  if (n.mutual_c.size() != 0) {
    if (n.mutual_c.rows() != N || n.mutual_c.cols() != N) throw ConfigError("network: mutual_c must be N x N");
    for (Eigen::Index i = 0; i < N; ++i) {
      if (n.mutual_c(i, i) != 0.0) throw ConfigError("network: mutual_c diagonal must be zero");
      for (Eigen::Index j = 0; j < N; ++j) {
        if (n.mutual_c(i, j) != n.mutual_c(j, i)) throw ConfigError("network: mutual_c must be symmetric");
        if (n.mutual_c(i, j) < 0.0) throw ConfigError("network: mutual_c entries must be >= 0");
      }
    }
  }
  if (!(n.source_impedance > 0.0)) throw ConfigError("network: source_impedance must be > 0");
}

namespace detail {

inline Complex cap_admittance(double c, double omega) { return {0.0, omega * c}; }

inline double series_c(double a, double b) { return a * b / (a + b); }

}  // namespace detail

/// Capacitance hanging on the tank node apart from L (C1, divider, varactor arm, load).
inline double tank_capacitance(const Resonator& r) {
  return r.C1 + r.load_c_t + detail::series_c(r.C2, r.C3) + detail::series_c(r.CV, r.varactor.capacitance());
}

inline Complex tank_admittance(const Resonator& r, double omega) {
  const double loss = omega * r.L / r.quality_factor;
  return 1.0 / Complex(loss, omega * r.L) + detail::cap_admittance(tank_capacitance(r), omega);
}

/// Impedance seen by the source.
inline Complex input_impedance(const Resonator& r, double omega) {
  if (!(omega > 0.0)) throw ConfigError("input_impedance: omega must be > 0");
  const Complex z_branch = 1.0 / detail::cap_admittance(r.CA, omega) + 1.0 / tank_admittance(r, omega);
  const Complex y_in = detail::cap_admittance(r.CB, omega) + 1.0 / z_branch;
  return 1.0 / y_in;
}

inline double reflection_power(Complex z, double z0 = 50.0) { return std::norm((z - z0) / (z + z0)); }

struct Transfer {
  Complex gain;  // electrode voltage / source EMF
  Complex tap;   // pick-off voltage / source EMF
};

inline Transfer transfer(const Resonator& r, double omega, double source_impedance = 50.0) {
  if (!(omega > 0.0)) throw ConfigError("transfer: omega must be > 0");
  const Complex z_tank = 1.0 / tank_admittance(r, omega);
  const Complex z_branch = 1.0 / detail::cap_admittance(r.CA, omega) + z_tank;
  const Complex z_in = input_impedance(r, omega);
  const Complex v_m = z_in / (z_in + source_impedance);
  const Complex gain = v_m * z_tank / z_branch;
  return {gain, gain * (r.C2 / (r.C2 + r.C3))};
}

/// Frequency of maximum |transfer| onto the load: log-spaced scan around the
/// bare LC estimate, then golden-section on the best bracket.
inline double resonant_frequency(const Resonator& r, double source_impedance = 50.0) {
  validate_resonator(r);
  const double f0 = 1.0 / (constants::two_pi * std::sqrt(r.L * tank_capacitance(r)));
  auto mag = [&](double f) { return std::abs(transfer(r, constants::two_pi * f, source_impedance).gain); };
  const int n = 400;
  const double lo_f = 0.5 * f0, hi_f = 2.0 * f0;
  const double ratio = std::pow(hi_f / lo_f, 1.0 / n);
  int best = 0;
  double best_v = -1.0;
  for (int i = 0; i <= n; ++i) {
    const double v = mag(lo_f * std::pow(ratio, i));
    if (v > best_v) {
      best_v = v;
      best = i;
    }
  }
  double a = lo_f * std::pow(ratio, std::max(best - 1, 0));
  double b = lo_f * std::pow(ratio, std::min(best + 1, n));
  const double gr = (std::sqrt(5.0) - 1.0) / 2.0;
  double c = b - gr * (b - a), d = a + gr * (b - a);
  double fc = mag(c), fd = mag(d);
  while (b - a > 1e-10 * f0) {
    if (fc > fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - gr * (b - a);
      fc = mag(c);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + gr * (b - a);
      fd = mag(d);
    }
  }
  return 0.5 * (a + b);
}

// ---------------------------------------------------------------------------
// Matching

struct TuneBounds {
  double c_lo = 0.1e-12;
  double c_hi = 10e-9;
};

struct TuneReport {
  std::vector<double> reflection;  // |Gamma|^2 per resonator at f_target
  std::vector<bool> converged;     // |Gamma|^2 < threshold
  bool ok() const { return std::all_of(converged.begin(), converged.end(), [](bool b) { return b; }); }
};

inline constexpr double tune_reflection_threshold = 0.01;

namespace detail {

// L-match seed: tank detuned so its impedance has real part z0/2, then CA
// and CB chosen to present exactly z0 at omega.
inline void seed_match(Resonator& r, double omega, double z0, const TuneBounds& bounds) {
  const Complex y_l = 1.0 / Complex(omega * r.L / r.quality_factor, omega * r.L);
  const double g = y_l.real();
  const double r_t = z0 / 2.0;
  const double disc = g / r_t - g * g;
  if (!(disc > 0.0)) return;
  const double b_t = -std::sqrt(disc);
  const double c_rest = tank_capacitance(r) - r.C1;
  r.C1 = std::clamp((b_t - y_l.imag()) / omega - c_rest, bounds.c_lo, bounds.c_hi);
  const double x_t = -r_t * b_t / g;
  const double x = std::sqrt(z0 * r_t - r_t * r_t);
  if (x_t > x) r.CA = std::clamp(1.0 / (omega * (x_t - x)), bounds.c_lo, bounds.c_hi);
  r.CB = std::clamp(x / (omega * z0 * r_t), bounds.c_lo, bounds.c_hi);
}

// Golden-section over log(c) within [lo, hi] minimising f.
template <typename F>
double golden_log(F&& f, double lo, double hi, int iterations = 80) {
  double a = std::log(lo), b = std::log(hi);
  const double gr = (std::sqrt(5.0) - 1.0) / 2.0;
  double c = b - gr * (b - a), d = a + gr * (b - a);
  double fc = f(std::exp(c)), fd = f(std::exp(d));
  for (int i = 0; i < iterations; ++i) {
    if (fc < fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - gr * (b - a);
      fc = f(std::exp(c));
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + gr * (b - a);
      fd = f(std::exp(d));
    }
  }
  return std::exp(0.5 * (a + b));
}

}  // namespace detail

/// Minimises |Gamma|^2 at f_target per resonator by adjusting C1, CA, CB
/// (analytic L-match seed, then 3 rounds of golden-section coordinate descent
/// in a +-1 decade window around the current value). Also records each
/// resonator's locked phase setpoint.
inline ResonatorNetwork tune_home(ResonatorNetwork net, double f_target, TuneReport* report = nullptr,
                                  const TuneBounds& bounds = {}) {
  if (!(f_target > 0.0)) throw ConfigError("tune_home: f_target must be > 0");
  validate_network(net);
  const double omega = constants::two_pi * f_target;
  const double z0 = net.source_impedance;
  TuneReport rep;
  for (auto& r : net.resonators) {
    detail::seed_match(r, omega, z0, bounds);
    double* knobs[] = {&r.C1, &r.CA, &r.CB};
    for (int round = 0; round < 3; ++round) {
      for (double* knob : knobs) {
        const double current = *knob;
        const double before = reflection_power(input_impedance(r, omega), z0);
        auto cost = [&](double c) {
          *knob = c;
          return reflection_power(input_impedance(r, omega), z0);
        };
        const double lo = std::max(bounds.c_lo, current / 10.0), hi = std::min(bounds.c_hi, current * 10.0);
        const double best = detail::golden_log(cost, lo, hi);
        *knob = best;
        if (reflection_power(input_impedance(r, omega), z0) > before) *knob = current;
      }
    }
    const double gamma2 = reflection_power(input_impedance(r, omega), z0);
    rep.reflection.push_back(gamma2);
    rep.converged.push_back(gamma2 < tune_reflection_threshold);
    r.phase_setpoint = std::arg(transfer(r, omega, z0).gain);
  }
  if (report) *report = std::move(rep);
  return net;
}

// ---------------------------------------------------------------------------
// Phase lock

struct ServoParams {
  double k_m = 1.0;   // mixer gain, V/rad (m = k_m sin(dphi))
  double k_i = 0.0;   // integral gain, 1/s
  bool enabled = true;
};

/// d(phase)/d(varactor capacitance) at the current operating point, rad/F.
inline double phase_sensitivity(const Resonator& r, double omega, double source_impedance = 50.0) {
  const double dc = 1e-4 * r.varactor.capacitance();
  Resonator a = r, b = r;
  a.varactor.c_nominal += dc;
  b.varactor.c_nominal -= dc;
  const double pa = std::arg(transfer(a, omega, source_impedance).gain);
  const double pb = std::arg(transfer(b, omega, source_impedance).gain);
  return std::remainder(pa - pb, constants::two_pi) / (2.0 * dc);
}

/// Integral gain giving a first-order loop with the requested bandwidth
/// (linearised about the locked point). Carries the sign that makes the
/// loop negative feedback.
inline double integral_gain_for_bandwidth(const Resonator& r, double omega, double bandwidth_hz, double k_m = 1.0,
                                          double source_impedance = 50.0) {
  const double s = phase_sensitivity(r, omega, source_impedance);
  if (s == 0.0) throw SolverError("integral_gain_for_bandwidth: zero phase sensitivity");
  return constants::two_pi * bandwidth_hz / (s * r.varactor.slope * k_m);
}

struct LockSample {
  double t = 0.0;
  double phase_err_deg = 0.0;
  double v_ctrl = 0.0;
  double c_var = 0.0;
  bool saturated = false;
};

struct LockTrace {
  std::vector<LockSample> samples;
  std::vector<double> saturation_times;  // instants the varactor hit a rail

  /// First time after which |phase error| stays below `bound_deg`; NaN if never.
  double settling_time(double bound_deg) const {
    double t_settle = std::numeric_limits<double>::quiet_NaN();
    for (auto it = samples.rbegin(); it != samples.rend(); ++it) {
      if (std::abs(it->phase_err_deg) >= bound_deg) break;
      t_settle = it->t;
    }
    return t_settle;
  }
};

using CapacitanceTrajectory = std::function<double(double t)>;

/// Quasi-static discrete-time servo for one resonator.
inline LockTrace simulate_lock(const Resonator& res, double omega, const CapacitanceTrajectory& c_t, double dt,
                               double duration, const ServoParams& servo, double phase_reference = 0.0,
                               double source_impedance = 50.0) {
  if (!(dt > 0.0 && dt <= 1e-6)) throw ConfigError("simulate_lock: dt must be in (0, 1 us]");
  if (!(duration >= 0.0)) throw ConfigError("simulate_lock: duration must be >= 0");
  Resonator r = res;
  const double setpoint = res.phase_setpoint + phase_reference;
  // v_ctrl limits where the varactor reaches its rails (anti-windup).
  const auto& v = r.varactor;
  const double v_lo = (v.c_nominal - v.c_max) / v.slope, v_hi = (v.c_nominal - v.c_min) / v.slope;
  LockTrace trace;
  const auto steps = static_cast<long>(std::llround(duration / dt));
  trace.samples.reserve(static_cast<std::size_t>(steps) + 1);
  bool was_saturated = false;
  for (long k = 0; k <= steps; ++k) {
    const double t = k * dt;
    r.load_c_t = c_t(t);
    const double dphi = std::remainder(std::arg(transfer(r, omega, source_impedance).gain) - setpoint, constants::two_pi);
    const double raw = r.varactor.raw_capacitance();
    const bool saturated = raw < v.c_min || raw > v.c_max;
    if (saturated && !was_saturated) trace.saturation_times.push_back(t);
    was_saturated = saturated;
    trace.samples.push_back({t, dphi * 180.0 / constants::pi, r.varactor.v_ctrl, r.varactor.capacitance(), saturated});
    if (servo.enabled) {
      const double m = servo.k_m * std::sin(dphi);
      r.varactor.v_ctrl = std::clamp(r.varactor.v_ctrl + servo.k_i * m * dt, v_lo, v_hi);
    }
  }
  return trace;
}

inline std::vector<LockTrace> simulate_lock(const ResonatorNetwork& net, double omega,
                                            const std::vector<CapacitanceTrajectory>& c_t, double dt, double duration,
                                            const std::vector<ServoParams>& servos) {
  if (c_t.size() != net.resonators.size() || servos.size() != net.resonators.size())
    throw ConfigError("simulate_lock: one trajectory and servo per resonator required");
  std::vector<LockTrace> out;
  for (std::size_t i = 0; i < net.resonators.size(); ++i)
    out.push_back(simulate_lock(net.resonators[i], omega, c_t[i], dt, duration, servos[i], net.phase_reference,
                                net.source_impedance));
  return out;
}

/// CSV columns: t_s,phase_err_deg,v_ctrl,c_var_f.
inline void write_lock_csv(std::ostream& os, const LockTrace& trace) {
  os << "t_s,phase_err_deg,v_ctrl,c_var_f\n";
  char buf[160];
  for (const auto& s : trace.samples) {
    std::snprintf(buf, sizeof buf, "%.9g,%.9g,%.9g,%.9g\n", s.t, s.phase_err_deg, s.v_ctrl, s.c_var);
    os << buf;
  }
}

// ---------------------------------------------------------------------------
// Mutual coupling

/// Nodal admittance matrix (2N x 2N) of the coupled network, source
/// resistances included. Node order: M_0..M_{N-1}, T_0..T_{N-1}.
inline ComplexMatrix network_admittance(const ResonatorNetwork& net, double omega, bool include_sources = true) {
  const auto n = static_cast<Eigen::Index>(net.resonators.size());
  ComplexMatrix y = ComplexMatrix::Zero(2 * n, 2 * n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& r = net.resonators[static_cast<std::size_t>(i)];
    const Complex ya = detail::cap_admittance(r.CA, omega);
    y(i, i) += ya + detail::cap_admittance(r.CB, omega);
    if (include_sources) y(i, i) += 1.0 / net.source_impedance;
    y(i, n + i) -= ya;
    y(n + i, i) -= ya;
    y(n + i, n + i) += ya + tank_admittance(r, omega);
  }
  if (net.mutual_c.size() != 0) {
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index j = 0; j < n; ++j) {
        if (i == j) continue;
        const Complex ym = detail::cap_admittance(net.mutual_c(i, j), omega);
        y(n + i, n + i) += ym;
        y(n + i, n + j) -= ym;
      }
  }
  return y;
}

struct CouplingShift {
  double amplitude_error_v = 0.0;
  double phase_error_deg = 0.0;
};

/// Each source is set so its electrode would carry `amplitudes[i]` at zero
/// phase without coupling; returns the deviation the coupling introduces.
/// Both the coupled and the uncoupled voltages come from the same nodal
/// solve, so zero coupling gives exactly zero deviation.
inline std::vector<CouplingShift> mutual_coupling_shift(const ResonatorNetwork& net, double omega,
                                                        const std::vector<double>& amplitudes) {
  validate_network(net);
  const auto n = static_cast<Eigen::Index>(net.resonators.size());
  if (static_cast<Eigen::Index>(amplitudes.size()) != n)
    throw ConfigError("mutual_coupling_shift: one amplitude per resonator required");
  ComplexVector rhs = ComplexVector::Zero(2 * n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& r = net.resonators[static_cast<std::size_t>(i)];
    const Complex source = amplitudes[static_cast<std::size_t>(i)] / transfer(r, omega, net.source_impedance).gain;
    rhs(i) = source / net.source_impedance;
  }
  auto solve = [&](const ResonatorNetwork& nw) {
    Eigen::FullPivLU<ComplexMatrix> lu(network_admittance(nw, omega));
    if (!lu.isInvertible()) throw SolverError("mutual_coupling_shift: singular network matrix");
    return ComplexVector(lu.solve(rhs));
  };
  ResonatorNetwork bare = net;
  bare.mutual_c = Eigen::MatrixXd::Zero(n, n);
  const ComplexVector coupled = solve(net);
  const ComplexVector uncoupled = solve(bare);
  std::vector<CouplingShift> out;
  for (Eigen::Index i = 0; i < n; ++i) {
    const Complex vc = coupled(n + i), vu = uncoupled(n + i);
    const double phase = vu == Complex{} ? 0.0 : std::arg(vc / vu) * 180.0 / constants::pi;
    out.push_back({std::abs(vc) - std::abs(vu), phase});
  }
  return out;
}

}  // namespace planartrap
