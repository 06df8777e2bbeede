#pragma once

// Electrode geometry, drive channels, and the two reference array designs.
//
// The array is a 4x4 grid of circular RF-ground trapping sites on a square
// pitch, embedded in a planar RF electrode. The RF plane is cut into
// half-pitch cells so every electrode is a simple polygon: each cell carries a
// quarter of one site circle in one corner and, next to the four inner sites,
// a rectangular notch where an adjuster strip sits. Anything outside the RF
// region is ground (gapless-plane model).

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "planartrap/errors.hpp"
#include "planartrap/geometry.hpp"
#include "planartrap/units.hpp"

namespace planartrap {

struct Electrode {
  std::string id;
  Polygon polygon;  // z = 0 plane, metres
  std::string channel;

  bool operator==(const Electrode&) const = default;
};

struct IonSpecies {
  double mass_kg = constants::ca40_ion_mass;
  double charge_c = constants::elementary_charge;

  bool operator==(const IonSpecies&) const = default;
};

/// Geometric trapping site: a circular RF-ground electrode and the height at
/// which its null is expected (used to seed the solvers).
struct SiteMarker {
  std::string id;
  Vec2 center = Vec2::Zero();
  bool inner = false;

  bool operator==(const SiteMarker&) const = default;
};

struct ArrayLayout {
  std::vector<Electrode> electrodes;
  std::vector<std::string> rf_channels;
  std::optional<double> ground_plane_height;  // far ground plane, metres
  IonSpecies ion;
  std::vector<SiteMarker> sites;
  double nominal_null_height = 0.0;

  bool operator==(const ArrayLayout&) const = default;

  /// Distinct channel ids referenced by the electrodes, sorted.
  std::vector<std::string> channels() const {
    std::set<std::string> ids;
    for (const auto& e : electrodes) ids.insert(e.channel);
    return {ids.begin(), ids.end()};
  }

  bool is_rf_channel(const std::string& ch) const {
    return std::find(rf_channels.begin(), rf_channels.end(), ch) != rf_channels.end();
  }

  const SiteMarker& site(const std::string& id) const {
    for (const auto& s : sites)
      if (s.id == id) return s;
    throw ConfigError("unknown site id '" + id + "'");
  }

  Vec3 site_seed(const std::string& id) const {
    const auto& s = site(id);
    return {s.center.x(), s.center.y(), nominal_null_height};
  }

  const Electrode& electrode(const std::string& id) const {
    for (const auto& e : electrodes)
      if (e.id == id) return e;
    throw ConfigError("unknown electrode id '" + id + "'");
  }
};

// ---------------------------------------------------------------------------
// Drive state

struct ChannelDrive {
  double amplitude_v = 0.0;  // 0-pk at 0 dB
  double offset_db = 0.0;    // power offset relative to home
  double phase_rad = 0.0;
  double dc_v = 0.0;

  double effective_amplitude() const { return amplitude_v * db_to_amplitude_ratio(offset_db); }
  Complex phasor() const { return std::polar(effective_amplitude(), phase_rad); }

  bool operator==(const ChannelDrive&) const = default;
};

struct DriveState {
  std::map<std::string, ChannelDrive> channels;
  double rf_frequency_hz = 0.0;

  bool operator==(const DriveState&) const = default;

  double omega() const { return constants::two_pi * rf_frequency_hz; }

  const ChannelDrive& channel(const std::string& id) const {
    auto it = channels.find(id);
    if (it == channels.end()) throw ConfigError("unknown channel id '" + id + "'");
    return it->second;
  }

  ChannelDrive& channel(const std::string& id) {
    auto it = channels.find(id);
    if (it == channels.end()) throw ConfigError("unknown channel id '" + id + "'");
    return it->second;
  }

  DriveState with_offset_db(const std::string& id, double db) const {
    DriveState d = *this;
    d.channel(id).offset_db = db;
    return d;
  }

  DriveState with_phase(const std::string& id, double phase_rad) const {
    DriveState d = *this;
    d.channel(id).phase_rad = phase_rad;
    return d;
  }

  DriveState with_dc(const std::string& id, double volts) const {
    DriveState d = *this;
    d.channel(id).dc_v = volts;
    return d;
  }

  DriveState with_frequency(double hz) const {
    DriveState d = *this;
    d.rf_frequency_hz = hz;
    return d;
  }

  /// Every RF amplitude multiplied by s (DC untouched).
  DriveState with_amplitude_scale(double s) const {
    DriveState d = *this;
    for (auto& [id, c] : d.channels) c.amplitude_v *= s;
    return d;
  }

  /// Same drive with every phase set to zero.
  DriveState phase_balanced() const {
    DriveState d = *this;
    for (auto& [id, c] : d.channels) c.phase_rad = 0.0;
    return d;
  }
};

/// Home configuration: every RF channel at `amplitude`, 0 dB, zero phase; all DC zero.
inline DriveState home_drive(const ArrayLayout& layout, double amplitude, double frequency) {
  if (!(amplitude >= 0.0)) throw ConfigError("home_drive: amplitude must be >= 0");
  if (!(frequency > 0.0)) throw ConfigError("home_drive: frequency must be > 0");
  DriveState d;
  d.rf_frequency_hz = frequency;
  for (const auto& ch : layout.channels()) {
    ChannelDrive c;
    if (layout.is_rf_channel(ch)) c.amplitude_v = amplitude;
    d.channels.emplace(ch, c);
  }
  return d;
}

/// Throws ConfigError unless the drive covers exactly the layout's channels
/// and has a positive frequency with nonnegative amplitudes.
inline void validate_drive(const ArrayLayout& layout, const DriveState& drive) {
  if (!(drive.rf_frequency_hz > 0.0)) throw ConfigError("drive: rf_frequency_hz must be > 0");
  const auto chans = layout.channels();
  for (const auto& ch : chans)
    if (!drive.channels.contains(ch)) throw ConfigError("drive: missing channel '" + ch + "'");
  for (const auto& [id, c] : drive.channels) {
    if (!std::binary_search(chans.begin(), chans.end(), id))
      throw ConfigError("drive: unknown channel id '" + id + "'");
    if (!(c.effective_amplitude() >= 0.0))
      throw ConfigError("drive: channel '" + id + "' has negative amplitude");
  }
}

/// Throws ConfigError if any electrode polygon is not simple or two electrodes overlap.
inline void validate_layout(const ArrayLayout& layout) {
  if (layout.ground_plane_height && !(*layout.ground_plane_height > 0.0))
    throw ConfigError("layout: ground_plane_height must be > 0");
  if (!(layout.ion.mass_kg > 0.0)) throw ConfigError("layout: ion mass must be > 0");
  if (layout.ion.charge_c == 0.0) throw ConfigError("layout: ion charge must be nonzero");
  std::vector<BoundingBox> boxes;
  std::vector<double> areas;
  for (const auto& e : layout.electrodes) {
    if (!is_simple_polygon(e.polygon))
      throw ConfigError("layout: electrode '" + e.id + "' is not a simple polygon");
    boxes.push_back(bounding_box(e.polygon));
    areas.push_back(std::abs(signed_area(e.polygon)));
  }
  for (std::size_t i = 0; i < layout.electrodes.size(); ++i) {
    for (std::size_t j = i + 1; j < layout.electrodes.size(); ++j) {
      if (!boxes[i].overlaps(boxes[j])) continue;
      const double a = intersection_area(layout.electrodes[i].polygon, layout.electrodes[j].polygon);
      if (a > 1e-9 * std::min(areas[i], areas[j]))
        throw ConfigError("layout: electrodes '" + layout.electrodes[i].id + "' and '" +
                          layout.electrodes[j].id + "' overlap");
    }
  }
}

// ---------------------------------------------------------------------------
// Reference arrays

struct ArrayParams {
  double pitch = 1.5e-3;
  double site_radius = 0.0;     // circumradius of the site polygons
  double rf_border = 1.0e-3;    // main-RF margin beyond the outermost cell ring
  double strip_length = 0.6e-3; // adjuster extent along the line joining its two sites
  double strip_width = 0.3e-3;
  double ground_margin = 5.0e-3;
  double nominal_null_height = 400e-6;
  int polygon_order = 64;

  /// Every length multiplied by s.
  ArrayParams scaled(double s) const {
    ArrayParams p = *this;
    p.pitch *= s;
    p.site_radius *= s;
    p.rf_border *= s;
    p.strip_length *= s;
    p.strip_width *= s;
    p.ground_margin *= s;
    p.nominal_null_height *= s;
    return p;
  }
};

namespace channel_ids {
inline const std::string rf_main = "rf_main";
inline const std::string x_adj = "x_adj";      // strip west of the NE inner site
inline const std::string y_adj = "y_adj";      // strip south of the NE inner site
inline const std::string x_adj_b = "x_adj_b";  // strip east of the SW inner site
inline const std::string y_adj_b = "y_adj_b";  // strip north of the SW inner site
inline const std::string ground = "gnd";
}  // namespace channel_ids

/// Site used to calibrate the Folsom site radius (outer corner site).
inline const std::string folsom_calibration_site = "site_3_3";
/// Inner site next to the x_adj and y_adj strips.
inline const std::string inner_experiment_site = "site_2_2";

// Calibrated site radii: the null above the calibration site sits at the
// nominal height (400 um Folsom, 50 um miniature). Re-derived by bisection in
// tests/layout_test.cpp.
inline constexpr double folsom_site_radius = 1.712698984e-4;
inline constexpr double miniature_site_radius = 2.886468763e-5;

namespace detail {

// Point where the ray from `center` at angle quarter*90deg meets the regular n-gon boundary.
inline Vec2 ngon_quarter_point(const Vec2& center, double radius, int n, int quarter) {
  const long num = static_cast<long>(quarter) * n;
  auto vertex = [&](long k) {
    const long kk = ((k % n) + n) % n;
    const double t = constants::two_pi * static_cast<double>(kk) / n;
    return Vec2(center.x() + radius * std::cos(t), center.y() + radius * std::sin(t));
  };
  if (num % 4 == 0) return vertex(num / 4);
  const long k = num / 4;
  const Vec2 a = vertex(k);
  const Vec2 b = vertex(k + 1);
  const double ang = constants::pi / 2.0 * quarter;
  const Vec2 dir(std::cos(ang), std::sin(ang));
  // Solve center + s*dir = a + u*(b - a).
  const Vec2 e = b - a;
  const Vec2 w = a - center;
  const double det = dir.x() * (-e.y()) - dir.y() * (-e.x());
  const double u = (dir.x() * w.y() - dir.y() * w.x()) / det;
  return a + u * e;
}

// N-gon boundary of a site from quarter qs clockwise to quarter qs-1.
inline void append_site_arc(Polygon& out, const Vec2& center, double radius, int n, int qs) {
  const int qe = qs - 1;
  out.push_back(ngon_quarter_point(center, radius, n, qs));
  const long hi = static_cast<long>(qs) * n;  // in quarter-index units (x4)
  const long lo = static_cast<long>(qe) * n;
  long k = (hi - 1) / 4;
  for (; 4 * k > lo; --k) {
    const long kk = ((k % n) + n) % n;
    const double t = constants::two_pi * static_cast<double>(kk) / n;
    out.emplace_back(center.x() + radius * std::cos(t), center.y() + radius * std::sin(t));
  }
  out.push_back(ngon_quarter_point(center, radius, n, qe));
}

inline bool is_odd(int v) { return (v % 2 + 2) % 2 == 1; }

struct StripSpec {
  int gx, gy;  // grid point (half-pitch units) at the strip centre
  bool horizontal;
  const std::string* channel;
  const char* id;
};

}  // namespace detail

/// Builds the 4x4 array described in the header comment from explicit parameters.
inline ArrayLayout build_array(const ArrayParams& p) {
  if (!(p.pitch > 0.0 && p.site_radius > 0.0)) throw ConfigError("build_array: pitch and site radius must be > 0");
  const double h = p.pitch / 2.0;
  const double half_len = p.strip_length / 2.0;
  const double half_w = p.strip_width / 2.0;
  if (!(p.site_radius < h)) throw ConfigError("build_array: site radius must be below half the pitch");
  if (!(half_len + p.site_radius < h && half_w < h))
    throw ConfigError("build_array: adjuster strips would touch the site electrodes");
  if (p.polygon_order < 8) throw ConfigError("build_array: polygon order must be >= 8");
  const int n = p.polygon_order;

  ArrayLayout layout;
  layout.rf_channels = {channel_ids::rf_main, channel_ids::x_adj, channel_ids::y_adj, channel_ids::x_adj_b,
                        channel_ids::y_adj_b};
  layout.nominal_null_height = p.nominal_null_height;

  // Sites: centres at odd multiples of the half pitch.
  for (int i = 0; i < 4; ++i) {
    for (int j = 0; j < 4; ++j) {
      const Vec2 c((2 * i - 3) * h, (2 * j - 3) * h);
      const bool inner = (i == 1 || i == 2) && (j == 1 || j == 2);
      const std::string id = "site_" + std::to_string(i) + "_" + std::to_string(j);
      const std::string ch = inner ? "dc_" + id : channel_ids::ground;
      layout.electrodes.push_back({id, regular_polygon(c, p.site_radius, n), ch});
      layout.sites.push_back({id, c, inner});
    }
  }

  const std::vector<detail::StripSpec> strips = {
      {0, 1, true, &channel_ids::x_adj, "strip_n"},
      {1, 0, false, &channel_ids::y_adj, "strip_e"},
      {0, -1, true, &channel_ids::x_adj_b, "strip_s"},
      {-1, 0, false, &channel_ids::y_adj_b, "strip_w"},
  };
  for (const auto& s : strips) {
    const double cx = s.gx * h, cy = s.gy * h;
    const double ex = s.horizontal ? half_len : half_w;
    const double ey = s.horizontal ? half_w : half_len;
    layout.electrodes.push_back({s.id, rectangle(cx - ex, cx + ex, cy - ey, cy + ey), *s.channel});
  }

  // Main RF: half-pitch cells over [-2p, 2p]^2.
  auto notch_at = [&](int gx, int gy) -> std::optional<Vec2> {
    for (const auto& s : strips)
      if (s.gx == gx && s.gy == gy) return s.horizontal ? Vec2(half_len, half_w) : Vec2(half_w, half_len);
    return std::nullopt;
  };
  const int corner_dx[4] = {0, 1, 1, 0};
  const int corner_dy[4] = {0, 0, 1, 1};
  const Vec2 d_in[4] = {Vec2(0, -1), Vec2(1, 0), Vec2(0, 1), Vec2(-1, 0)};
  const Vec2 d_out[4] = {Vec2(1, 0), Vec2(0, 1), Vec2(-1, 0), Vec2(0, -1)};
  for (int i = -4; i < 4; ++i) {
    for (int j = -4; j < 4; ++j) {
      Polygon poly;
      for (int m = 0; m < 4; ++m) {
        const int gx = i + corner_dx[m], gy = j + corner_dy[m];
        const Vec2 c(gx * h, gy * h);
        if (detail::is_odd(gx) && detail::is_odd(gy)) {
          detail::append_site_arc(poly, c, p.site_radius, n, m + 1);
        } else if (auto notch = notch_at(gx, gy)) {
          const double len_in = d_in[m].x() != 0.0 ? notch->x() : notch->y();
          const double len_out = d_out[m].x() != 0.0 ? notch->x() : notch->y();
          poly.push_back(c - d_in[m] * len_in);
          poly.push_back(c - d_in[m] * len_in + d_out[m] * len_out);
          poly.push_back(c + d_out[m] * len_out);
        } else {
          poly.push_back(c);
        }
      }
      layout.electrodes.push_back(
          {"rf_cell_" + std::to_string(i + 4) + "_" + std::to_string(j + 4), std::move(poly), channel_ids::rf_main});
    }
  }

  const double a = 2.0 * p.pitch;
  if (p.rf_border > 0.0) {
    const double b = a + p.rf_border;
    layout.electrodes.push_back({"rf_border_n", rectangle(-b, b, a, b), channel_ids::rf_main});
    layout.electrodes.push_back({"rf_border_s", rectangle(-b, b, -b, -a), channel_ids::rf_main});
    layout.electrodes.push_back({"rf_border_w", rectangle(-b, -a, -a, a), channel_ids::rf_main});
    layout.electrodes.push_back({"rf_border_e", rectangle(a, b, -a, a), channel_ids::rf_main});
  }
  if (p.ground_margin > 0.0) {
    const double b = a + p.rf_border;
    const double g = b + p.ground_margin;
    layout.electrodes.push_back({"ground_n", rectangle(-g, g, b, g), channel_ids::ground});
    layout.electrodes.push_back({"ground_s", rectangle(-g, g, -g, -b), channel_ids::ground});
    layout.electrodes.push_back({"ground_w", rectangle(-g, -b, -b, b), channel_ids::ground});
    layout.electrodes.push_back({"ground_e", rectangle(b, g, -b, b), channel_ids::ground});
  }
  return layout;
}

inline ArrayParams folsom_params(int polygon_order = 64) {
  ArrayParams p;
  p.site_radius = folsom_site_radius;
  p.polygon_order = polygon_order;
  return p;
}

/// Folsom-scale design: 1.5 mm pitch, site radius calibrated for a 400 um null
/// above the outer corner site. The far ground plane (7 mm) is attached only
/// when requested; the calibration is done without it.
inline ArrayLayout make_folsom(int polygon_order = 64, bool with_ground_plane = false) {
  ArrayLayout l = build_array(folsom_params(polygon_order));
  if (with_ground_plane) l.ground_plane_height = 7e-3;
  return l;
}

/// Miniaturised design: 100 um pitch (Folsom outline scaled by 1/15), site
/// radius recalibrated for a 50 um null above the inner experiment site.
inline ArrayParams miniature_params(int polygon_order = 64) {
  ArrayParams p = folsom_params(polygon_order).scaled(1.0 / 15.0);
  p.site_radius = miniature_site_radius;
  p.nominal_null_height = 50e-6;
  return p;
}

inline ArrayLayout make_miniature(int polygon_order = 64) { return build_array(miniature_params(polygon_order)); }

}  // namespace planartrap
