#pragma once

// HTTP front end for the console. One mutable drive history (revision ->
// DriveState) behind a shared mutex; solves read an immutable snapshot of the
// requested revision, so results depend only on (layout, revision, request).
//
//   GET  /layout                  layout JSON
//   GET  /drive                   {"revision", "drive"}
//   POST /drive                   channel settings -> {"revision"}
//   POST /solve                   SolveRequest -> SolveResult
//   GET  /scan?channel&from_db&to_db[&step_db&site&revision]   CSV
//
// Malformed requests answer 400, solver failures 422.

#include <cmath>
#include <map>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <sstream>
#include <string>

#include <httplib.h>

#include "planartrap/errors.hpp"
#include "planartrap/io.hpp"
#include "planartrap/layout.hpp"
#include "planartrap/trapsolver.hpp"

namespace planartrap {

class RequestError : public ConfigError {
 public:
  using ConfigError::ConfigError;
};

class TrapService {
 public:
  TrapService(ArrayLayout layout, DriveState home, std::string default_site)
      : solver_(std::move(layout)), default_site_(std::move(default_site)) {
    validate_drive(solver_.layout(), home);
    (void)solver_.layout().site(default_site_);
    history_.emplace(0, std::move(home));
  }

  const TrapSolver& solver() const { return solver_; }

  long revision() const {
    std::shared_lock lock(mutex_);
    return latest_;
  }

  DriveState drive_at(long rev) const {
    std::shared_lock lock(mutex_);
    auto it = history_.find(rev);
    if (it == history_.end()) throw RequestError("revision " + std::to_string(rev) + " is unknown");
    return it->second;
  }

  json layout_json() const { return layout_to_json(solver_.layout()); }

  json drive_json() const {
    std::shared_lock lock(mutex_);
    return {{"revision", latest_}, {"drive", drive_to_json(history_.at(latest_))}};
  }

  /// Applies channel settings on top of the latest drive and records a new
  /// revision. An empty object still creates a revision.
  long post_drive(const json& patch) {
    if (!patch.is_object()) throw RequestError("body: expected an object of channel settings");
    std::unique_lock lock(mutex_);
    DriveState next = apply_drive_patch(history_.at(latest_), patch, "body");
    validate_drive(solver_.layout(), next);
    history_.emplace(++latest_, std::move(next));
    return latest_;
  }

  /// SolveRequest: {"revision"?, "deltas"?, "site"? | "seed_m"?, "depth"?, "grid_n"?}.
  json solve(const json& req) const {
    if (!req.is_object()) throw RequestError("body: expected an object");
    const long rev = req.contains("revision") ? detail::field<long>(req, "revision", "body") : revision();
    DriveState d = drive_at(rev);
    if (req.contains("deltas")) d = apply_drive_patch(d, req.at("deltas"), "body.deltas");
    validate_drive(solver_.layout(), d);
    std::string site_id = default_site_;
    Vec3 seed;
    if (req.contains("seed_m")) {
      seed = detail::vec3_from(req.at("seed_m"), "body.seed_m");
      site_id.clear();
    } else {
      site_id = detail::field_or<std::string>(req, "site", default_site_, "body");
      seed = solver_.layout().site_seed(site_id);
    }
    const bool depth = detail::field_or<bool>(req, "depth", true, "body");
    const int grid_n = detail::field_or<int>(req, "grid_n", 11, "body");
    if (grid_n < 0 || grid_n > 101) throw RequestError("body.grid_n: expected 0..101");

    const TrapSite site = solver_.solve_site(d, seed, depth);
    json out = {{"revision", rev}, {"site_id", site_id}, {"site", site_to_json(site)}};
    if (grid_n > 0) out["grid"] = grid_slice(d, site.null_position, grid_n);
    return out;
  }

  std::string scan_csv(const std::string& channel, double from_db, double to_db, double step_db,
                       const std::string& site, std::optional<long> rev) const {
    if (!(step_db > 0.0)) throw RequestError("step_db must be > 0");
    const DriveState d = drive_at(rev ? *rev : revision());
    (void)d.channel(channel);
    std::ostringstream os;
    if (from_db == to_db) {
      write_scan_csv(os, ScanCurve{});
      return os.str();
    }
    std::vector<double> db;
    const double hi = std::max(from_db, to_db), lo = std::min(from_db, to_db);
    const auto n = static_cast<long>(std::floor((hi - lo) / step_db + 1e-9));
    if (n > 400) throw RequestError("scan: too many points");
    for (long i = 0; i <= n; ++i) db.push_back(hi - static_cast<double>(i) * step_db);
    const Vec3 seed = solver_.find_null(d.with_offset_db(channel, hi), solver_.layout().site_seed(site)).null_position;
    const ScanCurve curve = solver_.scan_power(d, channel, db, seed);
    write_scan_csv(os, curve);
    return os.str();
  }

  /// Registers every route on `srv`; optionally serves static files from `static_dir`.
  void mount(httplib::Server& srv, const std::optional<std::string>& static_dir = std::nullopt) {
    srv.Get("/layout", [this](const httplib::Request&, httplib::Response& res) {
      respond(res, [&] { return layout_json(); });
    });
    srv.Get("/drive", [this](const httplib::Request&, httplib::Response& res) {
      respond(res, [&] { return drive_json(); });
    });
    srv.Post("/drive", [this](const httplib::Request& req, httplib::Response& res) {
      respond(res, [&] { return json{{"revision", post_drive(body_json(req))}}; });
    });
    srv.Post("/solve", [this](const httplib::Request& req, httplib::Response& res) {
      respond(res, [&] { return solve(body_json(req)); });
    });
    srv.Get("/scan", [this](const httplib::Request& req, httplib::Response& res) {
      try {
        if (!req.has_param("channel")) throw RequestError("query: channel is required");
        if (!req.has_param("to_db")) throw RequestError("query: to_db is required");
        auto num = [&](const char* key, double fallback) {
          if (!req.has_param(key)) return fallback;
          try {
            return std::stod(req.get_param_value(key));
          } catch (const std::exception&) {
            throw RequestError(std::string("query: ") + key + " must be a number");
          }
        };
        std::optional<long> rev;
        if (req.has_param("revision")) rev = static_cast<long>(num("revision", 0));
        const std::string site = req.has_param("site") ? req.get_param_value("site") : default_site_;
        res.set_content(scan_csv(req.get_param_value("channel"), num("from_db", 0.0), num("to_db", 0.0),
                                 num("step_db", 0.5), site, rev),
                        "text/csv");
      } catch (...) {
        error_response(res, std::current_exception());
      }
    });
    if (static_dir) srv.set_mount_point("/", *static_dir);
  }

 private:
  static json body_json(const httplib::Request& req) {
    try {
      return json::parse(req.body.empty() ? std::string("{}") : req.body);
    } catch (const nlohmann::json::parse_error& e) {
      throw RequestError(std::string("body: ") + e.what());
    }
  }

  template <typename F>
  static void respond(httplib::Response& res, F&& f) {
    try {
      res.set_content(f().dump(), "application/json");
    } catch (...) {
      error_response(res, std::current_exception());
    }
  }

  static void error_response(httplib::Response& res, std::exception_ptr ep) {
    json body;
    try {
      std::rethrow_exception(ep);
    } catch (const NullSearchError& e) {
      res.status = 422;
      body = {{"error", e.what()}, {"last_iterate_m", detail::vec_json(e.last_iterate)}};
    } catch (const SolverError& e) {
      res.status = 422;
      body = {{"error", e.what()}};
    } catch (const ConfigError& e) {
      res.status = 400;
      body = {{"error", e.what()}};
    } catch (const nlohmann::json::exception& e) {
      res.status = 400;
      body = {{"error", e.what()}};
    } catch (const std::exception& e) {
      res.status = 500;
      body = {{"error", e.what()}};
    }
    res.set_content(body.dump(), "application/json");
  }

  json grid_slice(const DriveState& d, const Vec3& center, int n) const {
    const DriveWeights w = solver_.weights(d);
    const double half = std::max(solver_.layout().nominal_null_height, 1e-9);
    json xs = json::array(), ys = json::array(), values = json::array();
    for (int i = 0; i < n; ++i) {
      const double off = n == 1 ? 0.0 : -half + 2.0 * half * i / (n - 1);
      xs.push_back(center.x() + off);
      ys.push_back(center.y() + off);
    }
    for (int j = 0; j < n; ++j) {
      json row = json::array();
      for (int i = 0; i < n; ++i) {
        const Vec3 p(xs[static_cast<std::size_t>(i)].get<double>(), ys[static_cast<std::size_t>(j)].get<double>(),
                     center.z());
        row.push_back(solver_.energy_j(w, p) / constants::elementary_charge);
      }
      values.push_back(row);
    }
    return {{"plane", "xy"}, {"z_m", center.z()}, {"x_m", xs}, {"y_m", ys}, {"pseudopotential_ev", values}};
  }

  TrapSolver solver_;
  std::string default_site_;
  mutable std::shared_mutex mutex_;
  std::map<long, DriveState> history_;
  long latest_ = 0;
};

}  // namespace planartrap
