#pragma once
//
// Scripted drivers: a polyline builder and a pure-pursuit follower that turns
// ground-truth pose into normalized throttle/steering commands. Used for
// repeatable teleop-style laps.

#include <algorithm>
#include <cmath>
#include <vector>

#include "deskpilot/errors.hpp"
#include "deskpilot/geom.hpp"
#include "deskpilot/sim/simulator.hpp"
#include "deskpilot/sim/vehicle.hpp"

namespace deskpilot::sim {

class PathBuilder {
 public:
  explicit PathBuilder(Pose2D start, double spacing = 0.02) : pose_(start), spacing_(spacing) {
    if (!(spacing > 0.0)) throw InvalidArgument("PathBuilder: spacing must be positive");
    points_.push_back(start.position());
  }

  PathBuilder& straight(double length) {
    const int n = std::max(1, static_cast<int>(std::ceil(std::abs(length) / spacing_)));
    const Pose2D p0 = pose_;
    for (int i = 1; i <= n; ++i) {
      pose_ = compose(p0, {length * i / n, 0.0, 0.0});
      points_.push_back(pose_.position());
    }
    return *this;
  }

  /// Arc of `radius` through `angle` (positive = left).
  PathBuilder& turn(double radius, double angle) {
    if (!(radius > 0.0)) throw InvalidArgument("PathBuilder: radius must be positive");
    const int n = std::max(1, static_cast<int>(std::ceil(radius * std::abs(angle) / spacing_)));
    const Pose2D p0 = pose_;
    const double sign = angle >= 0 ? 1.0 : -1.0;
    for (int i = 1; i <= n; ++i) {
      const double a = angle * i / n;
      pose_ = compose(p0, {radius * std::sin(std::abs(a)), sign * radius * (1.0 - std::cos(a)), a});
      points_.push_back(pose_.position());
    }
    return *this;
  }

  const std::vector<Point2D>& points() const noexcept { return points_; }
  const Pose2D& end_pose() const noexcept { return pose_; }

 private:
  Pose2D pose_;
  double spacing_;
  std::vector<Point2D> points_;
};

/// Pure pursuit along a polyline at constant speed.
class PurePursuit {
 public:
  PurePursuit(std::vector<Point2D> path, VehicleSpec spec, double speed = 0.2, double lookahead = 0.25)
      : path_(std::move(path)), spec_(spec), speed_(speed), lookahead_(lookahead) {
    if (path_.size() < 2) throw InvalidArgument("PurePursuit: path needs two points");
    if (!(lookahead > 0.0)) throw InvalidArgument("PurePursuit: lookahead must be positive");
  }

  Command command(const Pose2D& pose) {
    // Progress only moves forward so closed loops are followed once.
    const std::size_t window = std::min(path_.size(), progress_ + 40);
    double best = (path_[progress_] - pose.position()).norm();
    for (std::size_t i = progress_ + 1; i < window; ++i) {
      const double d = (path_[i] - pose.position()).norm();
      if (d < best) {
        best = d;
        progress_ = i;
      }
    }
    if (done(pose)) return {};
    std::size_t target = progress_;
    while (target + 1 < path_.size() && (path_[target] - pose.position()).norm() < lookahead_) ++target;
    const Point2D local = transform_point(inverse(pose), path_[target]);
    const double ld2 = std::max(local.x * local.x + local.y * local.y, 1e-9);
    const double curvature = 2.0 * local.y / ld2;
    const double delta = std::atan(curvature * spec_.wheelbase);
    return {speed_ / spec_.max_speed(), std::clamp(delta / spec_.steering_limit, -1.0, 1.0)};
  }

  bool done(const Pose2D& pose) const {
    return progress_ + 1 >= path_.size() || (progress_ + 3 >= path_.size() &&
                                             (path_.back() - pose.position()).norm() < 0.03);
  }

  std::size_t progress() const noexcept { return progress_; }

 private:
  std::vector<Point2D> path_;
  VehicleSpec spec_;
  double speed_;
  double lookahead_;
  std::size_t progress_ = 0;
};

/// Rounded-rectangle lap around the pillar in the sample parking world, back to the start pose.
inline std::vector<Point2D> parking_school_lap(const Pose2D& start = {}) {
  PathBuilder b(start);
  b.straight(1.0).turn(0.4, kPi / 2).straight(0.4).turn(0.4, kPi / 2).straight(1.0).turn(0.4, kPi / 2).straight(0.4)
      .turn(0.4, kPi / 2);
  return b.points();
}

/// Figure eight made of two tangent circles through the start pose.
inline std::vector<Point2D> figure_eight(double radius, const Pose2D& start = {}) {
  PathBuilder b(start);
  b.turn(radius, kTwoPi).turn(radius, -kTwoPi);
  return b.points();
}

}  // namespace deskpilot::sim
