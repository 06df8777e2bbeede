#pragma once

// Trap physics on top of the field model: pseudopotential, RF-null search,
// secular frequencies, Mathieu q, trap depth, micromotion, gate time and
// power scans.
//
// Energies are computed in joules internally and reported in eV. The RF
// amplitude convention is 0-pk: U = Q^2 |E|^2 / (4 m Omega^2) + Q phi_dc.

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <memory>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Eigenvalues>

#include "planartrap/errors.hpp"
#include "planartrap/fields.hpp"
#include "planartrap/layout.hpp"
#include "planartrap/units.hpp"

namespace planartrap {

/// Null search that ran out of iterations; carries the last iterate.
class NullSearchError : public SolverError {
 public:
  NullSearchError(const std::string& what, Vec3 last) : SolverError(what), last_iterate(std::move(last)) {}
  Vec3 last_iterate;
};

struct SecularModes {
  // Ascending. An anti-trapping axis is reported with a negative frequency
  // of magnitude sqrt(|lambda|/m) / 2pi and stable[i] = false.
  Vec3 freqs_hz = Vec3::Zero();
  std::array<Vec3, 3> axes{Vec3::UnitX(), Vec3::UnitY(), Vec3::UnitZ()};
  std::array<bool, 3> stable{true, true, true};

  bool all_stable() const { return stable[0] && stable[1] && stable[2]; }
};

struct MathieuReport {
  Vec3 q = Vec3::Zero();
  bool pseudopotential_valid = true;  // every q <= 0.4
  bool stable = true;                 // every q <= 0.9
};

inline constexpr double mathieu_validity_limit = 0.4;
inline constexpr double mathieu_stability_limit = 0.9;

struct DepthResult {
  double depth_ev = 0.0;
  bool trapped = false;
  Vec3 barrier_point = Vec3::Zero();
  bool saddle_refined = false;  // barrier point is a first-order saddle of U
};

struct TrapSite {
  Vec3 null_position = Vec3::Zero();
  Vec3 secular_freqs = Vec3::Zero();  // Hz, ascending
  std::array<Vec3, 3> principal_axes{Vec3::UnitX(), Vec3::UnitY(), Vec3::UnitZ()};
  std::array<bool, 3> axis_stable{true, true, true};
  Vec3 mathieu_q = Vec3::Zero();
  double depth = std::numeric_limits<double>::quiet_NaN();  // eV
  bool trapped = false;
  Vec3 micromotion_amp = Vec3::Zero();  // m
  double residual_field = 0.0;          // |e_rf| at the null, V/m
  bool saddle = false;                  // |e_rf|^2 Hessian not PSD at convergence
  int iterations = 0;

  bool stable() const { return axis_stable[0] && axis_stable[1] && axis_stable[2] && !saddle; }
};

struct GatePair {
  double separation_m = 0.0;
  double omega_rad_s = 0.0;
  double mass_kg = constants::ca40_ion_mass;
  double charge_c = constants::elementary_charge;
  double epsilon0 = constants::vacuum_permittivity;
};

/// T_gate = 4 pi eps0 m a^3 omega / q^2.
inline double gate_time(const GatePair& p) {
  if (!(p.separation_m > 0.0 && p.omega_rad_s > 0.0 && p.mass_kg > 0.0 && p.charge_c != 0.0))
    throw ConfigError("gate_time: requires a > 0, omega > 0, m > 0, q != 0");
  const double a3 = p.separation_m * p.separation_m * p.separation_m;
  return 4.0 * constants::pi * p.epsilon0 * p.mass_kg * a3 * p.omega_rad_s / (p.charge_c * p.charge_c);
}

/// q_i = 2 sqrt(2) omega_i / Omega for each secular frequency (magnitude).
inline MathieuReport mathieu_q(const Vec3& secular_freqs_hz, double rf_frequency_hz) {
  if (!(rf_frequency_hz > 0.0)) throw ConfigError("mathieu_q: rf frequency must be > 0");
  MathieuReport r;
  for (int i = 0; i < 3; ++i) r.q[i] = 2.0 * std::sqrt(2.0) * std::abs(secular_freqs_hz[i]) / rf_frequency_hz;
  const double qmax = r.q.maxCoeff();
  r.pseudopotential_valid = qmax <= mathieu_validity_limit;
  r.stable = qmax <= mathieu_stability_limit;
  return r;
}

inline MathieuReport mathieu_q(const TrapSite& site, const DriveState& drive) {
  return mathieu_q(site.secular_freqs, drive.rf_frequency_hz);
}

struct ScanPoint {
  double db = 0.0;
  Vec3 null_position = Vec3::Zero();
  Vec3 secular_freqs = Vec3::Zero();
  std::array<Vec3, 3> axes{Vec3::UnitX(), Vec3::UnitY(), Vec3::UnitZ()};
  bool stable = true;
  std::string note;
};

struct ScanCurve {
  std::string channel;
  std::vector<ScanPoint> points;
  bool truncated = false;
};

struct NullSearchOptions {
  double field_tolerance = 1e-3;  // V/m
  double step_tolerance = 1e-12;  // m
  int max_iterations = 200;
  double search_radius = 10.0;    // in units of the start height; the far field is not a null
};

struct DepthSearchOptions {
  double radius_factor = 10.0;       // search radius in units of null height
  int samples_per_ray = 120;
  double surface_floor_factor = 0.02;  // rays stop below this fraction of null height
  int saddle_iterations = 40;
};

/// Solver bound to one layout. Precomputes the field model once; every
/// method is const and safe to call concurrently.
class TrapSolver {
 public:
  explicit TrapSolver(ArrayLayout layout)
      : layout_(std::make_shared<const ArrayLayout>(std::move(layout))),
        model_(std::make_shared<const FieldModel>(*layout_)) {}

  const ArrayLayout& layout() const { return *layout_; }
  const FieldModel& model() const { return *model_; }
  const IonSpecies& ion() const { return layout_->ion; }

  DriveWeights weights(const DriveState& drive) const { return model_->weights(drive); }

  /// Prefactor c with U_rf = c |E|^2 (J m^2 / V^2).
  double rf_energy_factor(double omega) const {
    const double q = ion().charge_c;
    return q * q / (4.0 * ion().mass_kg * omega * omega);
  }

  double energy_j(const DriveWeights& w, const Vec3& p) const {
    CVec3 e_rf;
    Vec3 e_dc;
    model_->fields(w, p, e_rf, e_dc);
    double u = rf_energy_factor(w.omega) * e_rf.squaredNorm();
    if (has_dc(w)) u += ion().charge_c * model_->dc_potential(w, p);
    return u;
  }

  double pseudopotential_ev(const DriveState& drive, const Vec3& p) const {
    detail::require_above_plane(p);
    return energy_j(weights(drive), p) / constants::elementary_charge;
  }

  /// Local minimiser of |e_rf|^2 by damped Newton with backtracking.
  TrapSite find_null(const DriveState& drive, const Vec3& start, const NullSearchOptions& opt = {}) const {
    detail::require_above_plane(start);
    const DriveWeights w = weights(drive);
    Vec3 x = start;
    for (int it = 0; it < opt.max_iterations; ++it) {
      const FieldSample s = model_->sample(w, x, FieldDetail::SecondOrder);
      const double f = s.e_rf_norm2();
      if (std::sqrt(f) < opt.field_tolerance) return finish_null(s, it);

      Vec3 dir = newton_direction(s.hess_e2, s.grad_e2, s.jacobian_rf);
      const double max_step = 0.25 * x.z();
      if (dir.norm() > max_step) dir *= max_step / dir.norm();
      const double slope = s.grad_e2.dot(dir);

      double alpha = 1.0;
      Vec3 next = x;
      bool accepted = false;
      for (int ls = 0; ls < 40; ++ls, alpha *= 0.5) {
        next = x + alpha * dir;
        if (!(next.z() > 0.05 * x.z())) continue;
        const double fn = model_->rf_field(w, next).squaredNorm();
        if (fn <= f + 1e-4 * alpha * std::min(slope, 0.0)) {
          accepted = true;
          break;
        }
      }
      const double step = accepted ? (next - x).norm() : 0.0;
      if (accepted) x = next;
      if ((x - start).norm() > opt.search_radius * start.z())
        throw NullSearchError("find_null: iterate left the search region", x);
      if (step < opt.step_tolerance) return finish_null(model_->sample(w, x, FieldDetail::SecondOrder), it + 1);
    }
    throw NullSearchError("find_null: no convergence in " + std::to_string(opt.max_iterations) + " iterations", x);
  }

  /// Minimum of the total potential (pseudopotential plus Q phi_dc); differs
  /// from the RF null when DC biases are applied.
  Vec3 find_equilibrium(const DriveState& drive, const Vec3& start, int max_iterations = 200) const {
    detail::require_above_plane(start);
    const DriveWeights w = weights(drive);
    const double c = rf_energy_factor(w.omega);
    const double q = ion().charge_c;
    Vec3 x = start;
    for (int it = 0; it < max_iterations; ++it) {
      const FieldSample s = model_->sample(w, x, FieldDetail::SecondOrder);
      const Vec3 g = c * s.grad_e2 - q * s.e_dc;
      const Mat3 h = c * s.hess_e2 + q * s.hessian_dc;
      Vec3 dir;
      Eigen::LLT<Mat3> llt(h);
      if (llt.info() == Eigen::Success) {
        dir = -llt.solve(g);
      } else {
        dir = -g / (h.norm() + std::numeric_limits<double>::min());
      }
      const double max_step = 0.25 * x.z();
      if (dir.norm() > max_step) dir *= max_step / dir.norm();
      const double u0 = energy_j(w, x);
      double alpha = 1.0;
      bool accepted = false;
      Vec3 next = x;
      for (int ls = 0; ls < 40; ++ls, alpha *= 0.5) {
        next = x + alpha * dir;
        if (!(next.z() > 0.05 * x.z())) continue;
        if (energy_j(w, next) <= u0 + 1e-4 * alpha * std::min(g.dot(dir), 0.0)) {
          accepted = true;
          break;
        }
      }
      if (!accepted || (next - x).norm() < 1e-12) return accepted ? next : x;
      x = next;
    }
    throw NullSearchError("find_equilibrium: no convergence", x);
  }

  /// Secular modes from the Hessian of the total potential energy at `at`.
  SecularModes secular_frequencies(const DriveState& drive, const Vec3& at) const {
    const DriveWeights w = weights(drive);
    const FieldSample s = model_->sample(w, at, FieldDetail::SecondOrder);
    const Mat3 h = rf_energy_factor(w.omega) * s.hess_e2 + ion().charge_c * s.hessian_dc;
    return modes_from_hessian(h);
  }

  SecularModes modes_from_hessian(const Mat3& h) const {
    Eigen::SelfAdjointEigenSolver<Mat3> eig(0.5 * (h + h.transpose()));
    SecularModes m;
    for (int i = 0; i < 3; ++i) {
      const double lambda = eig.eigenvalues()[i];
      const double f = std::sqrt(std::abs(lambda) / ion().mass_kg) / constants::two_pi;
      m.stable[i] = lambda > 0.0;
      m.freqs_hz[i] = m.stable[i] ? f : -f;
      m.axes[i] = eig.eigenvectors().col(i).normalized();
    }
    return m;
  }

  /// Barrier height between the null and the lowest escape point, in eV.
  DepthResult trap_depth(const DriveState& drive, const Vec3& null_position, const DepthSearchOptions& opt = {}) const {
    const DriveWeights w = weights(drive);
    const Vec3 x0 = null_position;
    const double z0 = x0.z();
    const double u0 = energy_j(w, x0);
    const double radius = opt.radius_factor * z0;
    const double floor = opt.surface_floor_factor * z0;

    struct Ray {
      Vec3 dir;
      double t_max = 0.0, u_max = 0.0, dt = 0.0;
      bool open = false;
    };
    std::optional<Ray> best;
    for (int dx = -1; dx <= 1; ++dx)
      for (int dy = -1; dy <= 1; ++dy)
        for (int dz = -1; dz <= 1; ++dz) {
          if (dx == 0 && dy == 0 && dz == 0) continue;
          Ray r;
          r.dir = Vec3(dx, dy, dz).normalized();
          r.dt = radius / opt.samples_per_ray;
          int k_last = 0;
          r.u_max = u0;
          for (int k = 1; k <= opt.samples_per_ray; ++k) {
            const Vec3 p = x0 + (k * r.dt) * r.dir;
            if (p.z() < floor) break;
            const double u = energy_j(w, p);
            k_last = k;
            if (u > r.u_max) {
              r.u_max = u;
              r.t_max = k * r.dt;
            }
          }
          // Open when the profile has an interior maximum (the potential falls
          // after the barrier); a profile still rising at the end is closed.
          r.open = k_last > 0 && r.t_max < k_last * r.dt;
          if (r.open && (!best || r.u_max < best->u_max)) best = r;
        }

    DepthResult res;
    if (!best) return res;

    // Golden-section refinement of the maximum along the best ray.
    auto along = [&](double t) { return energy_j(w, x0 + t * best->dir); };
    double lo = std::max(best->t_max - best->dt, 0.0), hi = best->t_max + best->dt;
    const double gr = (std::sqrt(5.0) - 1.0) / 2.0;
    double c = hi - gr * (hi - lo), d = lo + gr * (hi - lo);
    double fc = along(c), fd = along(d);
    for (int i = 0; i < 60 && (hi - lo) > 1e-9 * z0; ++i) {
      if (fc > fd) {
        hi = d;
        d = c;
        fd = fc;
        c = hi - gr * (hi - lo);
        fc = along(c);
      } else {
        lo = c;
        c = d;
        fc = fd;
        d = lo + gr * (hi - lo);
        fd = along(d);
      }
    }
    const double t_star = 0.5 * (lo + hi);
    Vec3 barrier = x0 + t_star * best->dir;
    double u_barrier = std::max(along(t_star), best->u_max);

    // Newton refinement onto the nearby first-order saddle of U.
    if (auto saddle = refine_saddle(w, barrier, z0, opt.saddle_iterations)) {
      const double us = energy_j(w, *saddle);
      if (us > u0 && us <= u_barrier * (1.0 + 1e-9)) {
        barrier = *saddle;
        u_barrier = us;
        res.saddle_refined = true;
      }
    }
    res.trapped = true;
    res.barrier_point = barrier;
    res.depth_ev = (u_barrier - u0) / constants::elementary_charge;
    return res;
  }

  /// Driven-motion amplitude per axis from the residual RF field at `reference`
  /// (the equal-phase null) under the drive's actual phases.
  Vec3 excess_micromotion(const DriveState& drive, const Vec3& reference) const {
    const DriveWeights w = weights(drive);
    const CVec3 e = model_->rf_field(w, reference);
    const double k = ion().charge_c / (ion().mass_kg * w.omega * w.omega);
    return Vec3(std::abs(e[0]), std::abs(e[1]), std::abs(e[2])) * std::abs(k);
  }

  /// Null, modes, q, depth and micromotion. Micromotion is evaluated at the
  /// null of the phase-balanced drive.
  TrapSite solve_site(const DriveState& drive, const Vec3& seed, bool with_depth = true) const {
    const DriveState balanced = drive.phase_balanced();
    const bool has_phase = !(balanced == drive);
    TrapSite site = find_null(balanced, seed);
    fill_modes(site, balanced);
    if (with_depth && site.stable()) {
      const DepthResult d = trap_depth(balanced, site.null_position);
      site.depth = d.depth_ev;
      site.trapped = d.trapped;
    }
    site.micromotion_amp = has_phase ? excess_micromotion(drive, site.null_position) : Vec3::Zero();
    return site;
  }

  void fill_modes(TrapSite& site, const DriveState& drive) const {
    const SecularModes m = secular_frequencies(drive, site.null_position);
    site.secular_freqs = m.freqs_hz;
    site.principal_axes = m.axes;
    site.axis_stable = m.stable;
    site.mathieu_q = mathieu_q(m.freqs_hz, drive.rf_frequency_hz).q;
  }

  /// Power scan of one channel with continuation seeding. Values are processed
  /// in descending order; a failed or unstable solve truncates the curve.
  ScanCurve scan_power(const DriveState& drive, const std::string& channel, std::vector<double> db_values,
                       const Vec3& seed) const {
    (void)drive.channel(channel);
    std::sort(db_values.begin(), db_values.end(), std::greater<>());
    ScanCurve curve;
    curve.channel = channel;
    Vec3 x = seed;
    for (double db : db_values) {
      const DriveState d = drive.with_offset_db(channel, db);
      ScanPoint pt;
      pt.db = db;
      try {
        TrapSite site = find_null(d, x);
        fill_modes(site, d);
        pt.null_position = site.null_position;
        pt.secular_freqs = site.secular_freqs;
        pt.axes = site.principal_axes;
        pt.stable = site.stable();
        if (!pt.stable) pt.note = site.saddle ? "null is a saddle of |e_rf|^2" : "unstable secular axis";
        x = site.null_position;
      } catch (const NullSearchError& e) {
        pt.null_position = e.last_iterate;
        pt.stable = false;
        pt.note = e.what();
      }
      curve.points.push_back(pt);
      if (!pt.stable) {
        curve.truncated = true;
        break;
      }
    }
    return curve;
  }

 private:
  static bool has_dc(const DriveWeights& w) {
    for (auto k : w.active)
      if (w.dc[k] != 0.0) return true;
    return false;
  }

  static Vec3 newton_direction(const Mat3& h, const Vec3& g, const CMat3& j) {
    Eigen::LLT<Mat3> llt(h);
    if (llt.info() == Eigen::Success) {
      const Vec3 d = -llt.solve(g);
      if (d.allFinite()) return d;
    }
    // Gauss-Newton fallback: 2 Re(J^H J) is PSD; regularise for rank loss.
    Mat3 gn = 2.0 * (j.adjoint() * j).real();
    gn += (1e-10 * gn.trace() + std::numeric_limits<double>::min()) * Mat3::Identity();
    return -gn.ldlt().solve(g);
  }

  TrapSite finish_null(const FieldSample& s, int iterations) const {
    TrapSite site;
    site.null_position = s.point;
    site.residual_field = std::sqrt(s.e_rf_norm2());
    site.iterations = iterations;
    Eigen::SelfAdjointEigenSolver<Mat3> eig(s.hess_e2);
    const double scale = eig.eigenvalues().cwiseAbs().maxCoeff();
    site.saddle = eig.eigenvalues()[0] < -1e-6 * scale;
    return site;
  }

  std::optional<Vec3> refine_saddle(const DriveWeights& w, Vec3 x, double z0, int iterations) const {
    const double c = rf_energy_factor(w.omega);
    const double q = ion().charge_c;
    for (int it = 0; it < iterations; ++it) {
      if (!(x.z() > 0.0)) return std::nullopt;
      const FieldSample s = model_->sample(w, x, FieldDetail::SecondOrder);
      const Vec3 g = c * s.grad_e2 - q * s.e_dc;
      const Mat3 h = c * s.hess_e2 + q * s.hessian_dc;
      Eigen::FullPivLU<Mat3> lu(h);
      if (!lu.isInvertible()) return std::nullopt;
      Vec3 step = -lu.solve(g);
      const double max_step = 0.1 * z0;
      if (step.norm() > max_step) step *= max_step / step.norm();
      x += step;
      if (step.norm() < 1e-8 * z0) {
        const FieldSample f = model_->sample(w, x, FieldDetail::SecondOrder);
        Eigen::SelfAdjointEigenSolver<Mat3> eig(c * f.hess_e2 + q * f.hessian_dc);
        const auto& ev = eig.eigenvalues();
        if (ev[0] < 0.0 && ev[1] > 0.0) return x;
        return std::nullopt;
      }
    }
    return std::nullopt;
  }

  std::shared_ptr<const ArrayLayout> layout_;
  std::shared_ptr<const FieldModel> model_;
};

// Free-function forms taking the layout directly. Each builds a solver, so
// prefer a TrapSolver when making repeated calls.

inline double pseudopotential(const ArrayLayout& layout, const DriveState& drive, const Vec3& point) {
  return TrapSolver(layout).pseudopotential_ev(drive, point);
}

inline TrapSite find_null(const ArrayLayout& layout, const DriveState& drive, const Vec3& start) {
  return TrapSolver(layout).find_null(drive, start);
}

inline SecularModes secular_frequencies(const ArrayLayout& layout, const DriveState& drive, const TrapSite& site) {
  return TrapSolver(layout).secular_frequencies(drive, site.null_position);
}

inline DepthResult trap_depth(const ArrayLayout& layout, const DriveState& drive, const TrapSite& site) {
  return TrapSolver(layout).trap_depth(drive, site.null_position);
}

inline Vec3 excess_micromotion(const ArrayLayout& layout, const DriveState& drive, const TrapSite& site) {
  return TrapSolver(layout).excess_micromotion(drive, site.null_position);
}

inline ScanCurve scan_power(const ArrayLayout& layout, const DriveState& drive, const std::string& channel,
                            std::vector<double> db_values, const Vec3& seed) {
  return TrapSolver(layout).scan_power(drive, channel, std::move(db_values), seed);
}

/// CSV columns: db,x,y,z,f1,f2,f3,stable (metres, Hz ascending, 1/0).
inline void write_scan_csv(std::ostream& os, const ScanCurve& curve) {
  os << "db,x,y,z,f1,f2,f3,stable\n";
  char buf[320];
  for (const auto& p : curve.points) {
    std::snprintf(buf, sizeof buf, "%.6g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%d\n", p.db, p.null_position.x(),
                  p.null_position.y(), p.null_position.z(), p.secular_freqs[0], p.secular_freqs[1], p.secular_freqs[2],
                  p.stable ? 1 : 0);
    os << buf;
  }
}

}  // namespace planartrap
