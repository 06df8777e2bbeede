#pragma once

// JSON serialisation of layouts, drives, sites, networks and fit results.
// Lengths in metres, voltages in volts, angles in radians, frequencies in Hz.

#include <fstream>
#include <sstream>
#include <string>

#include <json.hpp>

#include "planartrap/errors.hpp"
#include "planartrap/layout.hpp"
#include "planartrap/motion.hpp"
#include "planartrap/rfnetwork.hpp"
#include "planartrap/trapsolver.hpp"

namespace planartrap {

using json = nlohmann::ordered_json;

namespace detail {

inline json vec_json(const Vec3& v) { return json::array({v.x(), v.y(), v.z()}); }

// Reads `key` from an object with a typed error naming the field path.
template <typename T>
T field(const json& j, const std::string& key, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + ": expected an object");
  auto it = j.find(key);
  if (it == j.end()) throw ConfigError(where + "." + key + ": missing");
  try {
    return it->template get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ConfigError(where + "." + key + ": wrong type");
  }
}

template <typename T>
T field_or(const json& j, const std::string& key, T fallback, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + ": expected an object");
  if (!j.contains(key) || j.at(key).is_null()) return fallback;
  return field<T>(j, key, where);
}

inline Vec3 vec3_from(const json& j, const std::string& where) {
  if (!j.is_array() || j.size() != 3) throw ConfigError(where + ": expected [x, y, z]");
  try {
    return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
  } catch (const nlohmann::json::exception&) {
    throw ConfigError(where + ": expected numbers");
  }
}

}  // namespace detail

inline json parse_json(const std::string& text, const std::string& source = "input") {
  try {
    return json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(source + ": " + e.what());
  }
}

inline json load_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_json(ss.str(), path);
}

// ---------------------------------------------------------------------------
// Layout

inline json layout_to_json(const ArrayLayout& l) {
  json j;
  json electrodes = json::array();
  for (const auto& e : l.electrodes) {
    json verts = json::array();
    for (const auto& v : e.polygon) verts.push_back(json::array({v.x(), v.y()}));
    electrodes.push_back({{"id", e.id}, {"vertices", verts}, {"channel", e.channel}});
  }
  j["electrodes"] = electrodes;
  j["rf_channels"] = l.rf_channels;
  j["ground_plane_height_m"] = l.ground_plane_height ? json(*l.ground_plane_height) : json(nullptr);
  j["ion"] = {{"mass_kg", l.ion.mass_kg}, {"charge_c", l.ion.charge_c}};
  json sites = json::array();
  for (const auto& s : l.sites)
    sites.push_back({{"id", s.id}, {"center", json::array({s.center.x(), s.center.y()})}, {"inner", s.inner}});
  j["sites"] = sites;
  j["nominal_null_height_m"] = l.nominal_null_height;
  return j;
}

inline ArrayLayout layout_from_json(const json& j) {
  using detail::field;
  using detail::field_or;
  ArrayLayout l;
  const json& es = j.contains("electrodes") ? j.at("electrodes") : throw ConfigError("layout.electrodes: missing");
  if (!es.is_array()) throw ConfigError("layout.electrodes: expected an array");
  for (std::size_t i = 0; i < es.size(); ++i) {
    const std::string where = "layout.electrodes[" + std::to_string(i) + "]";
    Electrode e;
    e.id = field<std::string>(es[i], "id", where);
    e.channel = field<std::string>(es[i], "channel", where);
    const json& vs = es[i].contains("vertices") ? es[i].at("vertices") : throw ConfigError(where + ".vertices: missing");
    if (!vs.is_array() || vs.size() < 3) throw ConfigError(where + ".vertices: need at least 3 [x, y] pairs");
    for (const auto& v : vs) {
      if (!v.is_array() || v.size() != 2 || !v[0].is_number() || !v[1].is_number())
        throw ConfigError(where + ".vertices: expected [x, y] pairs");
      e.polygon.emplace_back(v[0].get<double>(), v[1].get<double>());
    }
    l.electrodes.push_back(std::move(e));
  }
  l.rf_channels = field_or<std::vector<std::string>>(j, "rf_channels", {}, "layout");
  if (j.contains("ground_plane_height_m") && !j.at("ground_plane_height_m").is_null())
    l.ground_plane_height = field<double>(j, "ground_plane_height_m", "layout");
  if (j.contains("ion")) {
    l.ion.mass_kg = field<double>(j.at("ion"), "mass_kg", "layout.ion");
    l.ion.charge_c = field<double>(j.at("ion"), "charge_c", "layout.ion");
  }
  if (j.contains("sites")) {
    for (const auto& s : j.at("sites")) {
      SiteMarker m;
      m.id = field<std::string>(s, "id", "layout.sites");
      const auto c = field<std::vector<double>>(s, "center", "layout.sites");
      if (c.size() != 2) throw ConfigError("layout.sites.center: expected [x, y]");
      m.center = Vec2(c[0], c[1]);
      m.inner = field_or<bool>(s, "inner", false, "layout.sites");
      l.sites.push_back(m);
    }
  }
  l.nominal_null_height = field_or<double>(j, "nominal_null_height_m", 0.0, "layout");
  validate_layout(l);
  return l;
}

// ---------------------------------------------------------------------------
// Drive

inline json channel_to_json(const ChannelDrive& c) {
  return {{"amplitude_v", c.amplitude_v}, {"offset_db", c.offset_db}, {"phase_rad", c.phase_rad}, {"dc_v", c.dc_v}};
}

inline json drive_to_json(const DriveState& d) {
  json chans = json::object();
  for (const auto& [id, c] : d.channels) chans[id] = channel_to_json(c);
  return {{"channels", chans}, {"rf_frequency_hz", d.rf_frequency_hz}};
}

/// Applies a partial channel setting: a bare number is an offset in dB, an
/// object may carry any of amplitude_v, offset_db, phase_rad, dc_v.
inline void apply_channel_patch(ChannelDrive& c, const json& patch, const std::string& where) {
  if (patch.is_number()) {
    c.offset_db = patch.get<double>();
    return;
  }
  if (!patch.is_object()) throw ConfigError(where + ": expected a number (dB) or an object");
  for (auto it = patch.begin(); it != patch.end(); ++it) {
    if (!it.value().is_number()) throw ConfigError(where + "." + it.key() + ": expected a number");
    const double v = it.value().get<double>();
    if (it.key() == "amplitude_v") c.amplitude_v = v;
    else if (it.key() == "offset_db") c.offset_db = v;
    else if (it.key() == "phase_rad") c.phase_rad = v;
    else if (it.key() == "dc_v") c.dc_v = v;
    else throw ConfigError(where + "." + it.key() + ": unknown field");
  }
}

inline DriveState apply_drive_patch(DriveState d, const json& patch, const std::string& where = "drive") {
  if (!patch.is_object()) throw ConfigError(where + ": expected an object of channel settings");
  for (auto it = patch.begin(); it != patch.end(); ++it) {
    auto ch = d.channels.find(it.key());
    if (ch == d.channels.end()) throw ConfigError(where + "." + it.key() + ": unknown channel id");
    apply_channel_patch(ch->second, it.value(), where + "." + it.key());
  }
  return d;
}

inline DriveState drive_from_json(const json& j) {
  DriveState d;
  d.rf_frequency_hz = detail::field<double>(j, "rf_frequency_hz", "drive");
  const json& chans = j.contains("channels") ? j.at("channels") : throw ConfigError("drive.channels: missing");
  if (!chans.is_object()) throw ConfigError("drive.channels: expected an object");
  for (auto it = chans.begin(); it != chans.end(); ++it) {
    ChannelDrive c;
    apply_channel_patch(c, it.value(), "drive.channels." + it.key());
    d.channels.emplace(it.key(), c);
  }
  return d;
}

/// Single document holding a layout and a drive (the layout keys at top level
/// plus "channels" and "rf_frequency_hz").
inline json system_to_json(const ArrayLayout& l, const DriveState& d) {
  json j = layout_to_json(l);
  const json dj = drive_to_json(d);
  j["channels"] = dj["channels"];
  j["rf_frequency_hz"] = dj["rf_frequency_hz"];
  return j;
}

inline std::pair<ArrayLayout, DriveState> system_from_json(const json& j) {
  ArrayLayout l = layout_from_json(j);
  DriveState d = drive_from_json(j);
  validate_drive(l, d);
  return {std::move(l), std::move(d)};
}

// ---------------------------------------------------------------------------
// Results

inline json site_to_json(const TrapSite& s) {
  json axes = json::array();
  for (const auto& a : s.principal_axes) axes.push_back(detail::vec_json(a));
  json j = {{"null_m", detail::vec_json(s.null_position)},
            {"freqs_hz", detail::vec_json(s.secular_freqs)},
            {"axes", axes},
            {"q", detail::vec_json(s.mathieu_q)},
            {"depth_ev", std::isfinite(s.depth) ? json(s.depth) : json(nullptr)},
            {"micromotion_m", detail::vec_json(s.micromotion_amp)}};
  j["stable"] = s.stable();
  j["trapped"] = s.trapped;
  j["residual_field_v_m"] = s.residual_field;
  return j;
}

inline json recooling_fit_to_json(const RecoolingFit& f) {
  return {{"e0_mev", f.e0_mev}, {"ci_mev", json::array({f.ci_lo_mev, f.ci_hi_mev})}, {"identifiable", f.identifiable}};
}

inline json heating_fit_to_json(const HeatingRateFit& f) {
  return {{"rate_mev_s", f.rate_mev_s}, {"sigma", f.sigma}};
}

// ---------------------------------------------------------------------------
// Network

inline Resonator resonator_from_json(const json& j, Resonator r = {}) {
  using detail::field_or;
  const std::string w = "resonator";
  r.L = field_or<double>(j, "L_h", r.L, w);
  r.C1 = field_or<double>(j, "C1_f", r.C1, w);
  r.C2 = field_or<double>(j, "C2_f", r.C2, w);
  r.C3 = field_or<double>(j, "C3_f", r.C3, w);
  r.CV = field_or<double>(j, "CV_f", r.CV, w);
  r.CA = field_or<double>(j, "CA_f", r.CA, w);
  r.CB = field_or<double>(j, "CB_f", r.CB, w);
  r.quality_factor = field_or<double>(j, "quality_factor", r.quality_factor, w);
  r.load_c_t = field_or<double>(j, "load_c_t_f", r.load_c_t, w);
  if (j.contains("varactor")) {
    const json& v = j.at("varactor");
    r.varactor.c_min = field_or<double>(v, "c_min_f", r.varactor.c_min, w + ".varactor");
    r.varactor.c_max = field_or<double>(v, "c_max_f", r.varactor.c_max, w + ".varactor");
    r.varactor.c_nominal = field_or<double>(v, "c_nominal_f", r.varactor.c_nominal, w + ".varactor");
    r.varactor.slope = field_or<double>(v, "slope_f_per_v", r.varactor.slope, w + ".varactor");
    r.varactor.v_ctrl = field_or<double>(v, "v_ctrl_v", r.varactor.v_ctrl, w + ".varactor");
  }
  validate_resonator(r);
  return r;
}

inline json resonator_to_json(const Resonator& r) {
  return {{"L_h", r.L},
          {"C1_f", r.C1},
          {"C2_f", r.C2},
          {"C3_f", r.C3},
          {"CV_f", r.CV},
          {"CA_f", r.CA},
          {"CB_f", r.CB},
          {"quality_factor", r.quality_factor},
          {"load_c_t_f", r.load_c_t},
          {"varactor",
           {{"c_min_f", r.varactor.c_min},
            {"c_max_f", r.varactor.c_max},
            {"c_nominal_f", r.varactor.c_nominal},
            {"slope_f_per_v", r.varactor.slope},
            {"v_ctrl_v", r.varactor.v_ctrl}}}};
}

inline LaserParams laser_from_json(const json& j, LaserParams l = {}) {
  using detail::field_or;
  const std::string w = "laser";
  l.wavelength = field_or<double>(j, "wavelength_m", l.wavelength, w);
  if (j.contains("detuning_hz")) l.detuning = constants::two_pi * detail::field<double>(j, "detuning_hz", w);
  if (j.contains("linewidth_hz")) l.natural_linewidth = constants::two_pi * detail::field<double>(j, "linewidth_hz", w);
  l.saturation_s = field_or<double>(j, "saturation_s", l.saturation_s, w);
  l.waist = field_or<double>(j, "waist_m", l.waist, w);
  if (j.contains("elevation_deg")) {
    const double a = detail::field<double>(j, "elevation_deg", w) * constants::pi / 180.0;
    l.direction = Vec3(std::cos(a), 0.0, std::sin(a));
  }
  l.validate();
  return l;
}

}  // namespace planartrap
