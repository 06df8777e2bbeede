#pragma once

// Ion dynamics and thermometry: trajectories in the full time-dependent
// field, Doppler scattering, the 1D recooling model with its likelihood fit,
// heating-rate regression and the thermal ion-loss model.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <ostream>
#include <random>
#include <span>
#include <vector>

#include "planartrap/errors.hpp"
#include "planartrap/fields.hpp"
#include "planartrap/layout.hpp"
#include "planartrap/units.hpp"

namespace planartrap {

struct IonState {
  Vec3 position = Vec3::Zero();
  Vec3 velocity = Vec3::Zero();
  double time = 0.0;
};

inline const double laser_elevation_rad = 6.0 * constants::pi / 180.0;

struct LaserParams {
  double wavelength = 397e-9;
  double detuning = -constants::two_pi * 15e6;           // rad/s, negative = red
  double natural_linewidth = constants::two_pi * 21e6;   // rad/s
  double saturation_s = 10.0;
  Vec3 direction = Vec3(std::cos(laser_elevation_rad), 0.0, std::sin(laser_elevation_rad));
  double waist = 20e-6;                                  // 1/e^2 intensity radius (40 um diameter)
  Vec3 focus = Vec3::Zero();                             // a point on the beam axis

  double wavenumber() const { return constants::two_pi / wavelength; }

  void validate() const {
    if (!(natural_linewidth > 0.0)) throw ConfigError("laser: natural_linewidth must be > 0");
    if (!(saturation_s >= 0.0)) throw ConfigError("laser: saturation_s must be >= 0");
    if (std::abs(direction.norm() - 1.0) > 1e-9) throw ConfigError("laser: direction must be a unit vector");
    if (!(wavelength > 0.0)) throw ConfigError("laser: wavelength must be > 0");
  }
};

/// Two-level steady-state scattering rate with Doppler shift along the beam.
inline double scatter_rate(const Vec3& v, const LaserParams& laser, double saturation) {
  const double gamma = laser.natural_linewidth;
  const double delta = laser.detuning - laser.wavenumber() * laser.direction.dot(v);
  const double x = 2.0 * delta / gamma;
  return 0.5 * gamma * saturation / (1.0 + saturation + x * x);
}

inline double scatter_rate(const Vec3& v, const LaserParams& laser) { return scatter_rate(v, laser, laser.saturation_s); }

/// Saturation parameter at `x` for a Gaussian beam of the configured waist.
inline double local_saturation(const Vec3& x, const LaserParams& laser) {
  const Vec3 d = x - laser.focus;
  const Vec3 perp = d - laser.direction * laser.direction.dot(d);
  return laser.saturation_s * std::exp(-2.0 * perp.squaredNorm() / (laser.waist * laser.waist));
}

// ---------------------------------------------------------------------------
// Unit conversions and heating

inline double mev_per_s_to_k_per_s(double mev_per_s) { return mev_per_s / constants::boltzmann_mev_per_k; }
inline double k_per_s_to_mev_per_s(double k_per_s) { return k_per_s * constants::boltzmann_mev_per_k; }

/// Energy heating rate (meV/s) of one motional axis from white electric-field
/// noise of one-sided spectral density s_e (V^2/m^2/Hz): q^2 S_E / (4 m).
inline double noise_heating_rate_mev_s(double s_e, const IonSpecies& ion = {}) {
  return ion.charge_c * ion.charge_c * s_e / (4.0 * ion.mass_kg) / constants::elementary_charge * 1e3;
}

// ---------------------------------------------------------------------------
// Trajectories

struct TrajectoryOptions {
  double dt = 0.0;                      // 0 selects 1/(200 f)
  int sample_stride = 1;
  std::optional<LaserParams> laser;     // mean Doppler force, Gaussian beam profile
  double noise_psd = 0.0;               // S_E, V^2/m^2/Hz; 0 disables
  std::uint64_t seed = 0;
  double escape_radius = 0.0;           // 0 selects 10 x starting height
};

struct Trajectory {
  std::vector<IonState> states;
  bool escaped = false;
  double escape_time = std::numeric_limits<double>::quiet_NaN();
};

/// Kick-drift-kick leapfrog in Q(Re[e_rf e^{i Omega t}] + e_dc); laser and
/// noise impulses are applied between the drift and the closing kick.
inline Trajectory integrate_trajectory(const FieldModel& model, const DriveState& drive, const IonSpecies& ion,
                                       const IonState& ion0, double duration, const TrajectoryOptions& opt = {}) {
  const DriveWeights w = model.weights(drive);
  const double f = drive.rf_frequency_hz;
  const double max_dt = 1.0 / (100.0 * f);
  const double dt = opt.dt > 0.0 ? opt.dt : 1.0 / (200.0 * f);
  if (dt > max_dt * (1.0 + 1e-12)) throw ConfigError("integrate_trajectory: dt exceeds 1/(100 f_rf)");
  if (!(duration >= 0.0)) throw ConfigError("integrate_trajectory: duration must be >= 0");
  if (opt.sample_stride < 1) throw ConfigError("integrate_trajectory: sample_stride must be >= 1");
  detail::require_above_plane(ion0.position);
  if (opt.laser) opt.laser->validate();

  const double qm = ion.charge_c / ion.mass_kg;
  const double omega = w.omega;
  const double escape = opt.escape_radius > 0.0 ? opt.escape_radius : 10.0 * ion0.position.z();
  auto accel = [&](const Vec3& x, double t) {
    CVec3 e_rf;
    Vec3 e_dc;
    model.fields(w, x, e_rf, e_dc);
    const Complex phase = std::polar(1.0, omega * t);
    const Vec3 e = (e_rf * phase).real() + e_dc;
    return Vec3(qm * e);
  };

  std::mt19937_64 rng(opt.seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  const double noise_sigma = opt.noise_psd > 0.0 ? std::sqrt(opt.noise_psd / (2.0 * dt)) : 0.0;
  const double hbar_k = opt.laser ? constants::hbar * opt.laser->wavenumber() : 0.0;

  Trajectory traj;
  IonState s = ion0;
  traj.states.push_back(s);
  const auto steps = static_cast<long>(std::llround(duration / dt));
  Vec3 a = accel(s.position, s.time);
  for (long k = 1; k <= steps; ++k) {
    s.velocity += 0.5 * dt * a;
    s.position += dt * s.velocity;
    s.time = ion0.time + k * dt;
    if (!(s.position.z() > 0.0) || (s.position - ion0.position).norm() > escape) {
      traj.escaped = true;
      traj.escape_time = s.time;
      traj.states.push_back(s);
      return traj;
    }
    if (opt.laser) {
      const double rate = scatter_rate(s.velocity, *opt.laser, local_saturation(s.position, *opt.laser));
      s.velocity += (hbar_k * rate / ion.mass_kg * dt) * opt.laser->direction;
    }
    if (noise_sigma > 0.0) {
      const Vec3 e(gauss(rng), gauss(rng), gauss(rng));
      s.velocity += (qm * noise_sigma * dt) * e;
    }
    a = accel(s.position, s.time);
    s.velocity += 0.5 * dt * a;
    if (k % opt.sample_stride == 0 || k == steps) traj.states.push_back(s);
  }
  return traj;
}

/// Starting state on the driven (micromotion) orbit through x0: the RF part of
/// the motion is already present, so no secular oscillation is excited at
/// first order.
inline IonState micromotion_initial_state(const FieldModel& model, const DriveState& drive, const IonSpecies& ion,
                                          const Vec3& x0) {
  const DriveWeights w = model.weights(drive);
  const CVec3 e = model.rf_field(w, x0);
  const double k = ion.charge_c / (ion.mass_kg * w.omega * w.omega);
  IonState s;
  s.position = x0 - k * e.real();
  s.velocity = (k * w.omega) * e.imag();
  return s;
}

/// Hann-windowed single-bin DFT amplitude of samples x(t_n) at angular frequency omega.
inline double tone_amplitude(std::span<const double> t, std::span<const double> x, double omega) {
  const std::size_t n = x.size();
  if (n < 2) return 0.0;
  double mean = 0.0;
  for (double v : x) mean += v;
  mean /= static_cast<double>(n);
  Complex acc{};
  double wsum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double win = 0.5 - 0.5 * std::cos(constants::two_pi * static_cast<double>(i) / static_cast<double>(n - 1));
    acc += win * (x[i] - mean) * std::polar(1.0, -omega * t[i]);
    wsum += win;
  }
  return 2.0 * std::abs(acc) / wsum;
}

/// Frequency (Hz) of the strongest spectral line in [f_lo, f_hi]: grid scan
/// of the windowed DFT followed by golden-section refinement.
inline double spectral_peak(std::span<const double> t, std::span<const double> x, double f_lo, double f_hi,
                            int grid = 400) {
  auto amp = [&](double f) { return tone_amplitude(t, x, constants::two_pi * f); };
  double best_f = f_lo, best = -1.0;
  const double df = (f_hi - f_lo) / grid;
  for (int i = 0; i <= grid; ++i) {
    const double fi = f_lo + i * df;
    const double a = amp(fi);
    if (a > best) {
      best = a;
      best_f = fi;
    }
  }
  double lo = std::max(f_lo, best_f - df), hi = std::min(f_hi, best_f + df);
  const double gr = (std::sqrt(5.0) - 1.0) / 2.0;
  double c = hi - gr * (hi - lo), d = lo + gr * (hi - lo);
  double fc = amp(c), fd = amp(d);
  for (int i = 0; i < 60; ++i) {
    if (fc > fd) {
      hi = d;
      d = c;
      fd = fc;
      c = hi - gr * (hi - lo);
      fc = amp(c);
    } else {
      lo = c;
      c = d;
      fc = fd;
      d = lo + gr * (hi - lo);
      fd = amp(d);
    }
  }
  return 0.5 * (lo + hi);
}

/// CSV columns: t_s,x,y,z,vx,vy,vz.
inline void write_trajectory_csv(std::ostream& os, const Trajectory& traj) {
  os << "t_s,x,y,z,vx,vy,vz\n";
  char buf[256];
  for (const auto& s : traj.states) {
    std::snprintf(buf, sizeof buf, "%.12g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g\n", s.time, s.position.x(), s.position.y(),
                  s.position.z(), s.velocity.x(), s.velocity.y(), s.velocity.z());
    os << buf;
  }
}

// ---------------------------------------------------------------------------
// Recooling thermometry

/// Settings of the 1D recooling forward model.
struct RecoolingModel {
  double mass_kg = constants::ca40_ion_mass;
  double detection_efficiency = 1e-3;  // detected photons per scattered photon
  Vec3 mode_axis = Vec3::UnitZ();      // direction of the cooled (weak) mode
  int phase_nodes = 48;                // oscillation-average quadrature order
  int substeps_per_bin = 4;            // RK4 steps per time bin (even)
  double bin_width = 50e-6;
};

struct RecoolingTrace {
  double bin_width = 0.0;
  std::vector<double> counts_per_bin;  // summed over runs
  int n_runs = 0;
  LaserParams laser;
  double trap_freq = 0.0;
  RecoolingModel model;
};

namespace detail {

// Oscillation averages over a harmonic orbit of energy E (joules) along the
// mode: returns {mean scatter rate, mean cooling power in W}.
inline std::pair<double, double> orbit_average(double energy_j, const LaserParams& laser, const RecoolingModel& m) {
  const Vec3 axis = m.mode_axis.normalized();
  const double k_mode = laser.wavenumber() * laser.direction.dot(axis);
  const double v0 = std::sqrt(2.0 * std::max(energy_j, 0.0) / m.mass_kg);
  double rate = 0.0, power = 0.0;
  const int n = m.phase_nodes;
  for (int i = 1; i <= n; ++i) {
    // Gauss-Chebyshev nodes: uniform oscillation phase maps to v = v0 cos(theta).
    const double v = v0 * std::cos((2.0 * i - 1.0) * constants::pi / (2.0 * n));
    const double r = scatter_rate(axis * v, laser);
    rate += r;
    power += constants::hbar * k_mode * v * r;
  }
  return {rate / n, power / n};
}

// dE/dt: Doppler cooling power plus recoil heating (absorption along the
// mode, isotropic emission).
inline double energy_rate(double energy_j, const LaserParams& laser, const RecoolingModel& m) {
  const auto [rate, cooling] = orbit_average(energy_j, laser, m);
  const double k = laser.wavenumber();
  const double k_mode = k * laser.direction.dot(m.mode_axis.normalized());
  const double recoil = rate * constants::hbar * constants::hbar * (k_mode * k_mode + k * k / 3.0) / (2.0 * m.mass_kg);
  return cooling + recoil;
}

}  // namespace detail

/// Mean scatter rate per bin (photons/s) for an ion starting at energy e0_mev.
inline std::vector<double> recooling_rates(double e0_mev, const LaserParams& laser, double duration,
                                           const RecoolingModel& m) {
  const int bins = static_cast<int>(std::llround(duration / m.bin_width));
  const int sub = std::max(2, m.substeps_per_bin + (m.substeps_per_bin % 2));
  const double h = m.bin_width / sub;
  double e = e0_mev * 1e-3 * constants::elementary_charge;
  auto rhs = [&](double en) { return detail::energy_rate(en, laser, m); };
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(bins));
  for (int b = 0; b < bins; ++b) {
    // Simpson average of the rate over the bin from the RK4 sub-step states.
    double acc = detail::orbit_average(e, laser, m).first;
    for (int s = 1; s <= sub; ++s) {
      const double k1 = rhs(e);
      const double k2 = rhs(e + 0.5 * h * k1);
      const double k3 = rhs(e + 0.5 * h * k2);
      const double k4 = rhs(e + h * k3);
      e = std::max(0.0, e + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4));
      const double r = detail::orbit_average(e, laser, m).first;
      acc += (s == sub ? 1.0 : (s % 2 == 1 ? 4.0 : 2.0)) * r;
    }
    out.push_back(acc / (3.0 * sub));
  }
  return out;
}

/// Synthetic recooling trace: expected counts per run from the 1D model,
/// Poisson noise drawn per run and bin, summed over runs.
inline RecoolingTrace simulate_recooling(double e0_mev, double trap_freq, const LaserParams& laser, double duration,
                                         int n_runs, std::uint64_t seed, const RecoolingModel& m = {}) {
  if (!(e0_mev >= 0.0)) throw ConfigError("simulate_recooling: E0 must be >= 0");
  if (n_runs < 1) throw ConfigError("simulate_recooling: n_runs must be >= 1");
  if (!(m.bin_width > 0.0)) throw ConfigError("simulate_recooling: bin_width must be > 0");
  laser.validate();
  const auto rates = recooling_rates(e0_mev, laser, duration, m);
  RecoolingTrace tr;
  tr.bin_width = m.bin_width;
  tr.n_runs = n_runs;
  tr.laser = laser;
  tr.trap_freq = trap_freq;
  tr.model = m;
  tr.counts_per_bin.assign(rates.size(), 0.0);
  std::mt19937_64 rng(seed);
  for (int run = 0; run < n_runs; ++run)
    for (std::size_t b = 0; b < rates.size(); ++b) {
      std::poisson_distribution<long> pois(m.detection_efficiency * rates[b] * m.bin_width);
      tr.counts_per_bin[b] += static_cast<double>(pois(rng));
    }
  return tr;
}

struct RecoolingFit {
  double e0_mev = 0.0;
  double ci_lo_mev = 0.0;
  double ci_hi_mev = 0.0;
  bool identifiable = true;
};

inline double recooling_log_likelihood(const RecoolingTrace& tr, double e0_mev) {
  const double duration = tr.bin_width * static_cast<double>(tr.counts_per_bin.size());
  RecoolingModel m = tr.model;
  m.bin_width = tr.bin_width;
  const auto rates = recooling_rates(e0_mev, tr.laser, duration, m);
  double ll = 0.0;
  for (std::size_t b = 0; b < rates.size() && b < tr.counts_per_bin.size(); ++b) {
    const double mu = tr.n_runs * m.detection_efficiency * rates[b] * tr.bin_width;
    if (mu > 0.0) ll += tr.counts_per_bin[b] * std::log(mu) - mu;
  }
  return ll;
}

/// Maximum-likelihood E0: coarse grid over [0, e_max], golden-section on the
/// best bracket, 68% interval from the log-likelihood curvature.
inline RecoolingFit fit_recooling(const RecoolingTrace& tr, double e_max_mev = 200.0, int grid = 41) {
  if (tr.counts_per_bin.size() < 20) throw ConfigError("fit_recooling: trace needs at least 20 bins");
  auto ll = [&](double e) { return recooling_log_likelihood(tr, e); };
  const double de = e_max_mev / (grid - 1);
  int best = 0;
  double best_ll = -std::numeric_limits<double>::infinity();
  for (int i = 0; i < grid; ++i) {
    const double v = ll(i * de);
    if (v > best_ll) {
      best_ll = v;
      best = i;
    }
  }
  double lo = std::max(0.0, (best - 1) * de), hi = std::min(e_max_mev, (best + 1) * de);
  const double gr = (std::sqrt(5.0) - 1.0) / 2.0;
  double c = hi - gr * (hi - lo), d = lo + gr * (hi - lo);
  double fc = ll(c), fd = ll(d);
  for (int i = 0; i < 50 && hi - lo > 1e-6; ++i) {
    if (fc > fd) {
      hi = d;
      d = c;
      fd = fc;
      c = hi - gr * (hi - lo);
      fc = ll(c);
    } else {
      lo = c;
      c = d;
      fc = fd;
      d = lo + gr * (hi - lo);
      fd = ll(d);
    }
  }
  RecoolingFit fit;
  fit.e0_mev = 0.5 * (lo + hi);
  if (ll(0.0) >= ll(fit.e0_mev)) fit.e0_mev = 0.0;

  const double h = std::max(0.02 * fit.e0_mev, 0.05);
  const double center = std::max(fit.e0_mev, h);
  const double curv = -(ll(center + h) - 2.0 * ll(center) + ll(center - h)) / (h * h);
  if (!(curv > 0.0) || !std::isfinite(curv)) {
    fit.identifiable = false;
    fit.ci_lo_mev = 0.0;
    fit.ci_hi_mev = e_max_mev;
    return fit;
  }
  const double sigma = 1.0 / std::sqrt(curv);
  fit.ci_lo_mev = std::max(0.0, fit.e0_mev - sigma);
  fit.ci_hi_mev = fit.e0_mev + sigma;
  return fit;
}

/// CSV columns: t_s,counts.
inline void write_trace_csv(std::ostream& os, const RecoolingTrace& tr) {
  os << "t_s,counts\n";
  char buf[96];
  for (std::size_t b = 0; b < tr.counts_per_bin.size(); ++b) {
    std::snprintf(buf, sizeof buf, "%.9g,%.9g\n", (static_cast<double>(b) + 0.5) * tr.bin_width, tr.counts_per_bin[b]);
    os << buf;
  }
}

// ---------------------------------------------------------------------------
// Heating rate and loss

struct HeatingPoint {
  double heat_time_s = 0.0;
  double energy_mev = 0.0;
};

struct HeatingRateFit {
  double rate_mev_s = 0.0;
  double sigma = 0.0;  // standard error of the slope
  double intercept_mev = 0.0;
};

/// Ordinary least squares with free intercept.
inline HeatingRateFit heating_rate_fit(std::span<const HeatingPoint> pts) {
  const std::size_t n = pts.size();
  if (n < 3) throw ConfigError("heating_rate_fit: at least 3 points required");
  double mt = 0.0, me = 0.0;
  for (const auto& p : pts) {
    mt += p.heat_time_s;
    me += p.energy_mev;
  }
  mt /= static_cast<double>(n);
  me /= static_cast<double>(n);
  double sxx = 0.0, sxy = 0.0;
  for (const auto& p : pts) {
    sxx += (p.heat_time_s - mt) * (p.heat_time_s - mt);
    sxy += (p.heat_time_s - mt) * (p.energy_mev - me);
  }
  if (!(sxx > 0.0)) throw ConfigError("heating_rate_fit: degenerate heat times");
  HeatingRateFit fit;
  fit.rate_mev_s = sxy / sxx;
  fit.intercept_mev = me - fit.rate_mev_s * mt;
  double rss = 0.0;
  for (const auto& p : pts) {
    const double r = p.energy_mev - fit.intercept_mev - fit.rate_mev_s * p.heat_time_s;
    rss += r * r;
  }
  fit.sigma = std::sqrt(rss / static_cast<double>(n - 2) / sxx);
  return fit;
}

/// Synthetic heating series E = rate t + N(0, sigma^2) at the given times.
inline std::vector<HeatingPoint> synthetic_heating_series(double rate_mev_s, double sigma_mev,
                                                          std::span<const double> times, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, sigma_mev);
  std::vector<HeatingPoint> out;
  for (double t : times) out.push_back({t, rate_mev_s * t + noise(rng)});
  return out;
}

/// P(E > D) for a 3D Maxwell-Boltzmann energy distribution at temperature
/// T = rate t: regularised upper incomplete gamma Q(3/2, D / k_B T).
inline double loss_probability(double depth_ev, double rate_k_s, double t) {
  if (!(depth_ev > 0.0 && rate_k_s > 0.0 && t >= 0.0))
    throw ConfigError("loss_probability: requires depth > 0, rate > 0, t >= 0");
  if (t == 0.0) return 0.0;
  const double kt_ev = constants::boltzmann_mev_per_k * 1e-3 * rate_k_s * t;
  const double x = depth_ev / kt_ev;
  return std::erfc(std::sqrt(x)) + 2.0 * std::sqrt(x / constants::pi) * std::exp(-x);
}

/// Waiting time at which the loss probability reaches p.
inline double loss_time(double depth_ev, double rate_k_s, double p = 0.5) {
  if (!(p > 0.0 && p < 1.0)) throw ConfigError("loss_time: p must be in (0, 1)");
  double lo = 0.0, hi = 1.0;
  while (loss_probability(depth_ev, rate_k_s, hi) < p) hi *= 2.0;
  for (int i = 0; i < 200; ++i) {
    const double mid = 0.5 * (lo + hi);
    (loss_probability(depth_ev, rate_k_s, mid) < p ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

/// Heating rate (K/s) for which the loss probability after time t equals p.
inline double invert_rate(double depth_ev, double p, double t) {
  if (!(p > 0.0 && p < 1.0 && t > 0.0)) throw ConfigError("invert_rate: requires 0 < p < 1 and t > 0");
  double lo = 1e-6, hi = 1.0;
  while (loss_probability(depth_ev, hi, t) < p) hi *= 2.0;
  for (int i = 0; i < 200; ++i) {
    const double mid = std::sqrt(lo * hi);
    (loss_probability(depth_ev, mid, t) < p ? lo : hi) = mid;
  }
  return std::sqrt(lo * hi);
}

}  // namespace planartrap
