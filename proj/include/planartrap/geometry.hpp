#pragma once

// Planar polygon helpers. Validity checks (simplicity, pairwise overlap) go
// through Boost.Geometry; everything the field solver touches is plain math.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#include <boost/geometry.hpp>
#include <boost/geometry/geometries/point_xy.hpp>
#include <boost/geometry/geometries/polygon.hpp>

#include "planartrap/units.hpp"

namespace planartrap {

using Polygon = std::vector<Vec2>;

inline double signed_area(const Polygon& poly) {
  double twice = 0.0;
  const std::size_t n = poly.size();
  for (std::size_t i = 0; i < n; ++i) {
    const Vec2& a = poly[i];
    const Vec2& b = poly[(i + 1) % n];
    twice += a.x() * b.y() - b.x() * a.y();
  }
  return 0.5 * twice;
}

inline Vec2 centroid(const Polygon& poly) {
  double a6 = 0.0;
  Vec2 c = Vec2::Zero();
  const std::size_t n = poly.size();
  for (std::size_t i = 0; i < n; ++i) {
    const Vec2& p = poly[i];
    const Vec2& q = poly[(i + 1) % n];
    const double cr = p.x() * q.y() - q.x() * p.y();
    a6 += 3.0 * cr;
    c += (p + q) * cr;
  }
  return c / a6;
}

inline Polygon scaled(const Polygon& poly, double s) {
  Polygon out;
  out.reserve(poly.size());
  for (const auto& v : poly) out.push_back(v * s);
  return out;
}

inline Polygon reversed(Polygon poly) {
  std::reverse(poly.begin(), poly.end());
  return poly;
}

/// Regular n-gon inscribed in the circle (center, radius), first vertex at angle 0, CCW.
inline Polygon regular_polygon(const Vec2& center, double radius, int n) {
  Polygon poly;
  poly.reserve(static_cast<std::size_t>(n));
  for (int k = 0; k < n; ++k) {
    const double t = constants::two_pi * k / n;
    poly.emplace_back(center.x() + radius * std::cos(t), center.y() + radius * std::sin(t));
  }
  return poly;
}

inline Polygon rectangle(double x0, double x1, double y0, double y1) {
  return {Vec2(x0, y0), Vec2(x1, y0), Vec2(x1, y1), Vec2(x0, y1)};
}

namespace detail {

namespace bg = boost::geometry;
using BgPoint = bg::model::d2::point_xy<double>;
using BgPolygon = bg::model::polygon<BgPoint, /*ClockWise=*/false, /*Closed=*/false>;

inline BgPolygon to_bg(const Polygon& poly) {
  BgPolygon out;
  const bool ccw = signed_area(poly) > 0.0;
  for (std::size_t i = 0; i < poly.size(); ++i) {
    const Vec2& v = ccw ? poly[i] : poly[poly.size() - 1 - i];
    out.outer().emplace_back(v.x(), v.y());
  }
  return out;
}

}  // namespace detail

/// Simple (non-self-intersecting), at least three vertices and nonzero area.
inline bool is_simple_polygon(const Polygon& poly) {
  if (poly.size() < 3) return false;
  const double area = std::abs(signed_area(poly));
  if (!(area > 0.0)) return false;
  const auto bgp = detail::to_bg(poly);
  return boost::geometry::is_valid(bgp) && boost::geometry::is_simple(bgp);
}

/// Area of the intersection of two simple polygons.
inline double intersection_area(const Polygon& a, const Polygon& b) {
  namespace bg = boost::geometry;
  std::vector<detail::BgPolygon> out;
  bg::intersection(detail::to_bg(a), detail::to_bg(b), out);
  double total = 0.0;
  for (const auto& p : out) total += std::abs(bg::area(p));
  return total;
}

struct BoundingBox {
  Vec2 lo;
  Vec2 hi;
  bool overlaps(const BoundingBox& o) const {
    return lo.x() <= o.hi.x() && o.lo.x() <= hi.x() && lo.y() <= o.hi.y() && o.lo.y() <= hi.y();
  }
};

inline BoundingBox bounding_box(const Polygon& poly) {
  BoundingBox box{poly.front(), poly.front()};
  for (const auto& v : poly) {
    box.lo = box.lo.cwiseMin(v);
    box.hi = box.hi.cwiseMax(v);
  }
  return box;
}

}  // namespace planartrap
