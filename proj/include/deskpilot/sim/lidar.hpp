#pragma once

#include <cmath>
#include <cstddef>
#include <limits>
#include <vector>

#include "deskpilot/errors.hpp"
#include "deskpilot/geom.hpp"
#include "deskpilot/sim/world.hpp"

namespace deskpilot::sim {

inline constexpr double kNoReturn = std::numeric_limits<double>::infinity();

/// Planar 360° scanner. Beam i points at angle_min + i * angle_increment in the sensor frame.
struct LidarSpec {
  std::size_t num_beams = 360;
  double angle_min = -kPi;
  double angle_increment = kTwoPi / 360.0;
  double range_min = 0.15;  // m
  double range_max = 12.0;  // m
  double rate = 7.0;        // Hz

  double angle(std::size_t i) const noexcept { return angle_min + static_cast<double>(i) * angle_increment; }
  double field_of_view() const noexcept { return static_cast<double>(num_beams - 1) * angle_increment; }
  /// True when the beams wrap around the full circle (beam N-1 neighbours beam 0).
  bool circular() const noexcept {
    return std::abs(static_cast<double>(num_beams) * angle_increment - kTwoPi) < 1e-6;
  }
  bool valid_range(double r) const noexcept { return std::isfinite(r) && r >= range_min && r <= range_max; }

  void validate() const {
    if (num_beams < 2) throw InvalidArgument("lidar: need at least 2 beams");
    if (!(range_min < range_max)) throw InvalidArgument("lidar: range_min must be below range_max");
    if (!(angle_increment > 0.0)) throw InvalidArgument("lidar: angle_increment must be positive");
    if (!(rate > 0.0)) throw InvalidArgument("lidar: rate must be positive");
  }

  friend bool operator==(const LidarSpec&, const LidarSpec&) = default;
};

/// One sweep. Ranges outside [range_min, range_max] hold +inf ("no return").
struct LaserScan {
  double stamp = 0.0;
  std::vector<double> ranges;
  LidarSpec spec;

  std::size_t size() const noexcept { return ranges.size(); }
  bool valid(std::size_t i) const noexcept { return spec.valid_range(ranges[i]); }
  std::size_t valid_count() const noexcept {
    std::size_t n = 0;
    for (std::size_t i = 0; i < ranges.size(); ++i) n += valid(i) ? 1 : 0;
    return n;
  }
  /// Beam endpoint in the sensor frame; only meaningful for valid beams.
  Point2D point(std::size_t i) const noexcept {
    const double a = spec.angle(i);
    return {ranges[i] * std::cos(a), ranges[i] * std::sin(a)};
  }

  friend bool operator==(const LaserScan&, const LaserScan&) = default;
};

/// Distance along the ray (origin, unit dir) to `s`, or +inf when missed.
inline double ray_segment_distance(const Point2D& origin, const Point2D& dir, const Segment& s) {
  const Point2D e = s.b - s.a;
  const double denom = dir.cross(e);
  if (std::abs(denom) < 1e-15) return kNoReturn;  // parallel
  const Point2D w = s.a - origin;
  const double t = w.cross(e) / denom;
  const double u = w.cross(dir) / denom;
  if (t < 0.0 || u < 0.0 || u > 1.0) return kNoReturn;
  return t;
}

inline LaserScan cast_scan(const WorldModel& world, const Pose2D& pose, const LidarSpec& spec, double stamp = 0.0) {
  if (!pose.finite()) throw InvalidArgument("cast_scan: non-finite pose");
  LaserScan scan{stamp, std::vector<double>(spec.num_beams, kNoReturn), spec};
  const Point2D origin = pose.position();
  for (std::size_t i = 0; i < spec.num_beams; ++i) {
    const double a = pose.yaw + spec.angle(i);
    const Point2D dir{std::cos(a), std::sin(a)};
    double best = kNoReturn;
    for (const auto& seg : world.segments) best = std::min(best, ray_segment_distance(origin, dir, seg));
    scan.ranges[i] = spec.valid_range(best) ? best : kNoReturn;
  }
  return scan;
}

}  // namespace deskpilot::sim
