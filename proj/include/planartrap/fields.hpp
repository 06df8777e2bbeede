#pragma once

// Gapless-plane electrostatics. A planar electrode held at 1 V with the rest of
// the z = 0 plane grounded produces the potential Omega(p) / 2pi, where Omega is
// the solid angle the electrode subtends at p. The gradient is the line integral
// of the electrode outline (Biot-Savart form, evaluated edge by edge); second
// derivatives are central differences of that gradient with one Richardson step.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "planartrap/errors.hpp"
#include "planartrap/geometry.hpp"
#include "planartrap/layout.hpp"
#include "planartrap/units.hpp"

namespace planartrap {

struct BasisDerivatives {
  Vec3 gradient = Vec3::Zero();  // 1/m
  Mat3 hessian = Mat3::Zero();   // 1/m^2
};

namespace detail {

struct Edge {
  double ax, ay, bx, by;
};

/// Sum over CCW edges of the solid-angle gradient kernel, scaled to Omega/2pi.
inline Vec3 edge_gradient_sum(std::span<const Edge> edges, const Vec3& p) {
  const double z = p.z();
  const double z2 = z * z;
  double gx = 0.0, gy = 0.0, gz = 0.0;
  for (const Edge& e : edges) {
    const double r1x = p.x() - e.ax, r1y = p.y() - e.ay;
    const double r2x = p.x() - e.bx, r2y = p.y() - e.by;
    const double n1 = std::sqrt(r1x * r1x + r1y * r1y + z2);
    const double n2 = std::sqrt(r2x * r2x + r2y * r2y + z2);
    const double dot = r1x * r2x + r1y * r2y + z2;
    const double f = (n1 + n2) / (n1 * n2 * (n1 * n2 + dot));
    gx += z * (e.by - e.ay) * f;
    gy += z * (e.ax - e.bx) * f;
    gz += (r1x * r2y - r1y * r2x) * f;
  }
  return Vec3(gx, gy, gz) * (-1.0 / constants::two_pi);
}

/// Omega/2pi of a CCW polygon by fan triangulation (Van Oosterom-Strackee).
inline double polygon_solid_fraction_ccw(const Polygon& poly, const Vec3& p) {
  const std::size_t n = poly.size();
  const Vec3 a(p.x() - poly[0].x(), p.y() - poly[0].y(), p.z());
  const double na = a.norm();
  double total = 0.0;
  for (std::size_t i = 1; i + 1 < n; ++i) {
    const Vec3 b(p.x() - poly[i].x(), p.y() - poly[i].y(), p.z());
    const Vec3 c(p.x() - poly[i + 1].x(), p.y() - poly[i + 1].y(), p.z());
    const double nb = b.norm(), nc = c.norm();
    const double num = a.dot(b.cross(c));
    const double den = na * nb * nc + a.dot(b) * nc + a.dot(c) * nb + b.dot(c) * na;
    total += 2.0 * std::atan2(num, den);
  }
  return total / constants::two_pi;
}

inline Polygon ccw(const Polygon& poly) { return signed_area(poly) > 0.0 ? poly : reversed(poly); }

inline std::vector<Edge> edges_of(const Polygon& poly_ccw) {
  std::vector<Edge> out;
  out.reserve(poly_ccw.size());
  for (std::size_t i = 0; i < poly_ccw.size(); ++i) {
    const Vec2& a = poly_ccw[i];
    const Vec2& b = poly_ccw[(i + 1) % poly_ccw.size()];
    out.push_back({a.x(), a.y(), b.x(), b.y()});
  }
  return out;
}

inline void require_above_plane(const Vec3& p) {
  if (!(p.z() > 0.0)) throw ConfigError("field point must lie above the electrode plane (z > 0)");
}

/// Hessian of a vector gradient field by central differences with one Richardson step.
template <typename GradFn>
Mat3 richardson_hessian(const GradFn& grad, const Vec3& p, double h) {
  Mat3 d1, d2;
  for (int a = 0; a < 3; ++a) {
    Vec3 e = Vec3::Zero();
    e[a] = h;
    d1.col(a) = (grad(p + e) - grad(p - e)) / (2.0 * h);
    e[a] = h / 2.0;
    d2.col(a) = (grad(p + e) - grad(p - e)) / h;
  }
  const Mat3 r = (4.0 * d2 - d1) / 3.0;
  return 0.5 * (r + r.transpose());
}

}  // namespace detail

/// Relative finite-difference step for Hessians (fraction of the point height).
inline constexpr double hessian_step_fraction = 1e-6;
/// Relative step for the third derivatives used in the |E_rf|^2 Hessian.
inline constexpr double third_derivative_step_fraction = 2e-3;

/// Fraction of an electrode's voltage seen at `point` (solid angle / 2pi), in [0, 1].
inline double basis_potential(const Electrode& electrode, const Vec3& point) {
  detail::require_above_plane(point);
  return detail::polygon_solid_fraction_ccw(detail::ccw(electrode.polygon), point);
}

inline Vec3 basis_gradient(const Electrode& electrode, const Vec3& point) {
  detail::require_above_plane(point);
  const auto edges = detail::edges_of(detail::ccw(electrode.polygon));
  return detail::edge_gradient_sum(edges, point);
}

inline BasisDerivatives basis_derivatives(const Electrode& electrode, const Vec3& point) {
  detail::require_above_plane(point);
  const auto edges = detail::edges_of(detail::ccw(electrode.polygon));
  auto grad = [&](const Vec3& q) { return detail::edge_gradient_sum(edges, q); };
  return {grad(point), detail::richardson_hessian(grad, point, hessian_step_fraction * point.z())};
}

// ---------------------------------------------------------------------------

struct FieldSample {
  Vec3 point = Vec3::Zero();
  double phi_dc = 0.0;               // V
  Vec3 e_dc = Vec3::Zero();          // V/m
  CVec3 e_rf = CVec3::Zero();        // V/m phasor, 0-pk
  CMat3 jacobian_rf = CMat3::Zero(); // d e_rf_j / d x_a, V/m^2
  Mat3 hessian_dc = Mat3::Zero();    // V/m^2
  Vec3 grad_e2 = Vec3::Zero();       // V^2/m^3
  Mat3 hess_e2 = Mat3::Zero();       // V^2/m^4

  double e_rf_norm2() const { return e_rf.squaredNorm(); }
};

enum class FieldDetail {
  Fields,       // phi_dc, e_dc, e_rf
  FirstOrder,   // + jacobian_rf, hessian_dc, grad_e2
  SecondOrder,  // + hess_e2
};

/// Per-channel complex RF weights and DC biases resolved against a layout.
struct DriveWeights {
  std::vector<Complex> rf;
  std::vector<double> dc;
  std::vector<std::size_t> active;  // channels with any nonzero weight
  double omega = 0.0;
};

/// Precomputed per-channel electrode outlines for fast superposition.
class FieldModel {
 public:
  explicit FieldModel(const ArrayLayout& layout)
      : channels_(layout.channels()), ground_plane_height_(layout.ground_plane_height) {
    edges_.resize(channels_.size());
    polygons_.resize(channels_.size());
    for (const auto& e : layout.electrodes) {
      const auto k = index_of(e.channel);
      const Polygon poly = detail::ccw(e.polygon);
      const auto ed = detail::edges_of(poly);
      edges_[k].insert(edges_[k].end(), ed.begin(), ed.end());
      polygons_[k].push_back(poly);
    }
  }

  const std::vector<std::string>& channels() const { return channels_; }
  const std::optional<double>& ground_plane_height() const { return ground_plane_height_; }

  std::size_t index_of(const std::string& channel) const {
    auto it = std::lower_bound(channels_.begin(), channels_.end(), channel);
    if (it == channels_.end() || *it != channel) throw ConfigError("unknown channel id '" + channel + "'");
    return static_cast<std::size_t>(it - channels_.begin());
  }

  /// Resolves a drive into per-channel weights. Throws ConfigError on unknown or missing channels.
  DriveWeights weights(const DriveState& drive) const {
    if (!(drive.rf_frequency_hz > 0.0)) throw ConfigError("drive: rf_frequency_hz must be > 0");
    DriveWeights w;
    w.rf.assign(channels_.size(), Complex{});
    w.dc.assign(channels_.size(), 0.0);
    w.omega = drive.omega();
    std::vector<bool> seen(channels_.size(), false);
    for (const auto& [id, c] : drive.channels) {
      const auto k = index_of(id);
      if (!(c.effective_amplitude() >= 0.0)) throw ConfigError("drive: channel '" + id + "' has negative amplitude");
      w.rf[k] = c.phasor();
      w.dc[k] = c.dc_v;
      seen[k] = true;
    }
    for (std::size_t k = 0; k < channels_.size(); ++k) {
      if (!seen[k]) throw ConfigError("drive: missing channel '" + channels_[k] + "'");
      if (w.rf[k] != Complex{} || w.dc[k] != 0.0) w.active.push_back(k);
    }
    return w;
  }

  /// Basis potential of channel k (image-corrected when a far ground plane is set).
  double channel_potential(std::size_t k, const Vec3& p) const {
    double v = raw_potential(k, p);
    if (ground_plane_height_) v -= raw_potential(k, mirror(p));
    return v;
  }

  Vec3 channel_gradient(std::size_t k, const Vec3& p) const {
    Vec3 g = detail::edge_gradient_sum(edges_[k], p);
    if (ground_plane_height_) {
      Vec3 gi = detail::edge_gradient_sum(edges_[k], mirror(p));
      gi.z() = -gi.z();
      g -= gi;
    }
    return g;
  }

  Mat3 channel_hessian(std::size_t k, const Vec3& p) const {
    auto grad = [&](const Vec3& q) { return channel_gradient(k, q); };
    return detail::richardson_hessian(grad, p, hessian_step_fraction * p.z());
  }

  /// RF phasor field only (fast path for line searches and depth scans).
  CVec3 rf_field(const DriveWeights& w, const Vec3& p) const {
    detail::require_above_plane(p);
    CVec3 e = CVec3::Zero();
    for (auto k : w.active)
      if (w.rf[k] != Complex{}) e -= w.rf[k] * channel_gradient(k, p).cast<Complex>();
    return e;
  }

  /// RF phasor and DC field together (trajectory integration).
  void fields(const DriveWeights& w, const Vec3& p, CVec3& e_rf, Vec3& e_dc) const {
    e_rf.setZero();
    e_dc.setZero();
    for (auto k : w.active) {
      const Vec3 g = channel_gradient(k, p);
      if (w.rf[k] != Complex{}) e_rf -= w.rf[k] * g.cast<Complex>();
      if (w.dc[k] != 0.0) e_dc -= w.dc[k] * g;
    }
  }

  double dc_potential(const DriveWeights& w, const Vec3& p) const {
    double phi = 0.0;
    for (auto k : w.active)
      if (w.dc[k] != 0.0) phi += w.dc[k] * channel_potential(k, p);
    return phi;
  }

  FieldSample sample(const DriveWeights& w, const Vec3& p, FieldDetail detail = FieldDetail::SecondOrder) const {
    detail::require_above_plane(p);
    FieldSample s;
    s.point = p;
    for (auto k : w.active) {
      const Vec3 g = channel_gradient(k, p);
      if (w.rf[k] != Complex{}) s.e_rf -= w.rf[k] * g.cast<Complex>();
      if (w.dc[k] != 0.0) {
        s.e_dc -= w.dc[k] * g;
        s.phi_dc += w.dc[k] * channel_potential(k, p);
      }
    }
    if (detail == FieldDetail::Fields) return s;

    Mat3 h_dc;
    s.jacobian_rf = rf_jacobian(w, p, &h_dc);
    s.hessian_dc = h_dc;
    s.grad_e2 = 2.0 * (s.jacobian_rf.transpose() * s.e_rf.conjugate()).real();
    if (detail == FieldDetail::FirstOrder) return s;

    // d^2|E|^2/dx_a dx_b = 2 Re sum_j [conj(J_ja) J_jb + conj(E_j) dJ_ja/dx_b]
    const double h3 = third_derivative_step_fraction * p.z();
    Mat3 curvature = Mat3::Zero();
    for (int b = 0; b < 3; ++b) {
      Vec3 e = Vec3::Zero();
      e[b] = h3;
      const CMat3 dj = (rf_jacobian(w, p + e, nullptr) - rf_jacobian(w, p - e, nullptr)) / (2.0 * h3);
      curvature.col(b) = (dj.transpose() * s.e_rf.conjugate()).real();
    }
    const Mat3 hess = 2.0 * (s.jacobian_rf.adjoint() * s.jacobian_rf).real() + 2.0 * curvature;
    s.hess_e2 = 0.5 * (hess + hess.transpose());
    return s;
  }

 private:
  Vec3 mirror(const Vec3& p) const { return {p.x(), p.y(), 2.0 * *ground_plane_height_ - p.z()}; }

  double raw_potential(std::size_t k, const Vec3& p) const {
    double v = 0.0;
    for (const auto& poly : polygons_[k]) v += detail::polygon_solid_fraction_ccw(poly, p);
    return v;
  }

  CMat3 rf_jacobian(const DriveWeights& w, const Vec3& p, Mat3* hessian_dc) const {
    CMat3 j = CMat3::Zero();
    if (hessian_dc) hessian_dc->setZero();
    for (auto k : w.active) {
      const bool rf = w.rf[k] != Complex{};
      const bool dc = hessian_dc && w.dc[k] != 0.0;
      if (!rf && !dc) continue;
      const Mat3 h = channel_hessian(k, p);
      if (rf) j -= w.rf[k] * h.cast<Complex>();
      if (dc) *hessian_dc += w.dc[k] * h;
    }
    return j;
  }

  std::vector<std::string> channels_;
  std::vector<std::vector<detail::Edge>> edges_;
  std::vector<std::vector<Polygon>> polygons_;
  std::optional<double> ground_plane_height_;
};

inline FieldSample sample(const ArrayLayout& layout, const DriveState& drive, const Vec3& point,
                          FieldDetail detail = FieldDetail::SecondOrder) {
  FieldModel model(layout);
  return model.sample(model.weights(drive), point, detail);
}

/// Total pseudopotential energy in eV (RF term plus Q*phi_dc), 0-pk amplitude convention.
inline double pseudopotential_ev(const IonSpecies& ion, double omega, double e_rf_norm2, double phi_dc) {
  const double q = ion.charge_c;
  const double rf = q * q * e_rf_norm2 / (4.0 * ion.mass_kg * omega * omega);
  return (rf + q * phi_dc) / constants::elementary_charge;
}

/// Writes x,y,z,phi_dc,|e_rf|,pseudopotential_eV rows for each point.
inline void write_grid_csv(std::ostream& os, const FieldModel& model, const DriveWeights& w, const IonSpecies& ion,
                           std::span<const Vec3> points) {
  os << "x,y,z,phi_dc,|e_rf|,pseudopotential_eV\n";
  char buf[256];
  for (const auto& p : points) {
    CVec3 e_rf;
    Vec3 e_dc;
    model.fields(w, p, e_rf, e_dc);
    const double phi = model.dc_potential(w, p);
    const double e2 = e_rf.squaredNorm();
    std::snprintf(buf, sizeof buf, "%.9g,%.9g,%.9g,%.9g,%.9g,%.9g\n", p.x(), p.y(), p.z(), phi, std::sqrt(e2),
                  pseudopotential_ev(ion, w.omega, e2, phi));
    os << buf;
  }
}

}  // namespace planartrap
