#pragma once
//
// Polygonal world: a soup of wall segments plus the scenario start/goal.
//
// World file format (UTF-8, one directive per line, '#' starts a comment):
//   wall x1 y1 x2 y2
//   box  cx cy w h yaw
//   start x y yaw
//   goal  x y yaw
// Units are meters and radians.

#include <algorithm>
#include <array>
#include <fstream>
#include <istream>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "deskpilot/errors.hpp"
#include "deskpilot/geom.hpp"

namespace deskpilot::sim {

struct Segment {
  Point2D a;
  Point2D b;

  double length() const noexcept { return (b - a).norm(); }
};

struct WorldModel {
  std::vector<Segment> segments;
  Pose2D start_pose{};
  std::optional<Pose2D> goal_pose;

  void add_wall(Point2D a, Point2D b) {
    if ((b - a).norm() <= 0.0) throw InvalidArgument("wall segment has zero length");
    segments.push_back({a, b});
  }

  /// Axis-aligned (in its own frame) rectangle, expanded to four walls.
  void add_box(Point2D center, double width, double height, double yaw) {
    if (!(width > 0.0) || !(height > 0.0)) throw InvalidArgument("box size must be positive");
    const Pose2D frame{center.x, center.y, yaw};
    const double hw = width / 2.0, hh = height / 2.0;
    const std::array<Point2D, 4> c{transform_point(frame, {-hw, -hh}), transform_point(frame, {hw, -hh}),
                                   transform_point(frame, {hw, hh}), transform_point(frame, {-hw, hh})};
    for (std::size_t i = 0; i < 4; ++i) add_wall(c[i], c[(i + 1) % 4]);
  }

  /// Axis-aligned bounding box of all segments: {min, max}.
  std::pair<Point2D, Point2D> bounds() const {
    Point2D lo{1e300, 1e300}, hi{-1e300, -1e300};
    for (const auto& s : segments) {
      for (const auto& p : {s.a, s.b}) {
        lo.x = std::min(lo.x, p.x);
        lo.y = std::min(lo.y, p.y);
        hi.x = std::max(hi.x, p.x);
        hi.y = std::max(hi.y, p.y);
      }
    }
    return {lo, hi};
  }
};

/// Shortest distance from `p` to segment `s`.
inline double point_segment_distance(const Point2D& p, const Segment& s) {
  const Point2D d = s.b - s.a;
  const double len2 = d.dot(d);
  double t = len2 > 0.0 ? (p - s.a).dot(d) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  return (p - (s.a + d * t)).norm();
}

inline double distance_to_world(const WorldModel& world, const Point2D& p) {
  double best = std::numeric_limits<double>::infinity();
  for (const auto& s : world.segments) best = std::min(best, point_segment_distance(p, s));
  return best;
}

inline WorldModel parse_world(std::istream& in) {
  WorldModel world;
  std::string raw;
  std::size_t line_no = 0;
  auto read_numbers = [&](std::istringstream& ss, std::size_t count, const std::string& kw) {
    std::vector<double> v(count);
    for (auto& x : v) {
      if (!(ss >> x) || !std::isfinite(x)) throw ParseError("'" + kw + "' expects " + std::to_string(count) + " numbers", line_no);
    }
    std::string extra;
    if (ss >> extra) throw ParseError("trailing token '" + extra + "' after '" + kw + "'", line_no);
    return v;
  };
  while (std::getline(in, raw)) {
    ++line_no;
    if (auto hash = raw.find('#'); hash != std::string::npos) raw.erase(hash);
    std::istringstream ss(raw);
    std::string kw;
    if (!(ss >> kw)) continue;
    try {
      if (kw == "wall") {
        const auto v = read_numbers(ss, 4, kw);
        world.add_wall({v[0], v[1]}, {v[2], v[3]});
      } else if (kw == "box") {
        const auto v = read_numbers(ss, 5, kw);
        world.add_box({v[0], v[1]}, v[2], v[3], v[4]);
      } else if (kw == "start") {
        const auto v = read_numbers(ss, 3, kw);
        world.start_pose = {v[0], v[1], wrap_angle(v[2])};
      } else if (kw == "goal") {
        const auto v = read_numbers(ss, 3, kw);
        world.goal_pose = Pose2D{v[0], v[1], wrap_angle(v[2])};
      } else {
        throw ParseError("unknown directive '" + kw + "'", line_no);
      }
    } catch (const InvalidArgument& e) {
      throw ParseError(e.what(), line_no);
    }
  }
  return world;
}

inline WorldModel load_world(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open world file '" + path + "'", 0);
  return parse_world(in);
}

}  // namespace deskpilot::sim
