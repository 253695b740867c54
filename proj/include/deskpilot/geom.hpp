#pragma once
//
// SE(2) geometry shared by every module: poses, planar twists, angle
// arithmetic and the twist exponential/logarithm.
//
// Conventions: yaw is counter-clockwise positive and normalized to (-pi, pi].

#include <cmath>
#include <numbers>

#include "deskpilot/errors.hpp"

namespace deskpilot {

inline constexpr double kPi = std::numbers::pi;
inline constexpr double kTwoPi = 2.0 * std::numbers::pi;

struct Point2D {
  double x{0.0};
  double y{0.0};

  friend bool operator==(const Point2D&, const Point2D&) = default;
  Point2D operator+(const Point2D& o) const noexcept { return {x + o.x, y + o.y}; }
  Point2D operator-(const Point2D& o) const noexcept { return {x - o.x, y - o.y}; }
  Point2D operator*(double s) const noexcept { return {x * s, y * s}; }
  double norm() const noexcept { return std::hypot(x, y); }
  double dot(const Point2D& o) const noexcept { return x * o.x + y * o.y; }
  double cross(const Point2D& o) const noexcept { return x * o.y - y * o.x; }
};

struct Pose2D {
  double x{0.0};    // m
  double y{0.0};    // m
  double yaw{0.0};  // rad

  friend bool operator==(const Pose2D&, const Pose2D&) = default;
  Point2D position() const noexcept { return {x, y}; }
  bool finite() const noexcept {
    return std::isfinite(x) && std::isfinite(y) && std::isfinite(yaw);
  }
};

/// Planar rigid-body velocity expressed in the body frame.
struct Twist2D {
  double vx{0.0};     // m/s
  double vy{0.0};     // m/s
  double omega{0.0};  // rad/s

  friend bool operator==(const Twist2D&, const Twist2D&) = default;
  bool finite() const noexcept {
    return std::isfinite(vx) && std::isfinite(vy) && std::isfinite(omega);
  }
  double norm() const noexcept { return std::sqrt(vx * vx + vy * vy + omega * omega); }
  Twist2D operator*(double s) const noexcept { return {vx * s, vy * s, omega * s}; }
  Twist2D operator+(const Twist2D& o) const noexcept {
    return {vx + o.vx, vy + o.vy, omega + o.omega};
  }
  Twist2D operator-() const noexcept { return {-vx, -vy, -omega}; }
};

/// Maps any finite angle to its representative in (-pi, pi].
inline double wrap_angle(double a) {
  if (!std::isfinite(a)) throw InvalidArgument("wrap_angle: non-finite angle");
  double r = std::remainder(a, kTwoPi);  // [-pi, pi]
  if (r <= -kPi) r += kTwoPi;
  return r;
}

/// Signed shortest rotation taking `from` onto `to`.
inline double angle_diff(double to, double from) { return wrap_angle(to - from); }

/// a ⊕ b: b expressed in a's frame, returned in a's parent frame.
inline Pose2D compose(const Pose2D& a, const Pose2D& b) {
  const double c = std::cos(a.yaw), s = std::sin(a.yaw);
  return {a.x + c * b.x - s * b.y, a.y + s * b.x + c * b.y, wrap_angle(a.yaw + b.yaw)};
}

inline Pose2D inverse(const Pose2D& a) {
  const double c = std::cos(a.yaw), s = std::sin(a.yaw);
  return {-c * a.x - s * a.y, s * a.x - c * a.y, wrap_angle(-a.yaw)};
}

/// Pose of `b` relative to `a` (inverse(a) ⊕ b).
inline Pose2D between(const Pose2D& a, const Pose2D& b) { return compose(inverse(a), b); }

inline Point2D transform_point(const Pose2D& a, const Point2D& p) noexcept {
  const double c = std::cos(a.yaw), s = std::sin(a.yaw);
  return {a.x + c * p.x - s * p.y, a.y + s * p.x + c * p.y};
}

namespace detail {
// Below this |omega*dt| the closed form loses precision; Taylor terms are used.
inline constexpr double kSmallAngle = 1e-6;
}  // namespace detail

/// Relative pose reached after moving with constant body twist `xi` for `dt` seconds.
inline Pose2D se2_exp(const Twist2D& xi, double dt) {
  if (!(dt >= 0.0)) throw InvalidArgument("se2_exp: dt must be non-negative");
  if (!xi.finite() || !std::isfinite(dt)) throw InvalidArgument("se2_exp: non-finite input");
  const double th = xi.omega * dt;
  double sin_over, one_minus_cos_over;  // sin(th)/th and (1-cos(th))/th
  if (std::abs(th) < detail::kSmallAngle) {
    const double th2 = th * th;
    sin_over = 1.0 - th2 / 6.0;
    one_minus_cos_over = th / 2.0 - th * th2 / 24.0;
  } else {
    sin_over = std::sin(th) / th;
    one_minus_cos_over = (1.0 - std::cos(th)) / th;
  }
  const double ux = xi.vx * dt, uy = xi.vy * dt;
  return {sin_over * ux - one_minus_cos_over * uy, one_minus_cos_over * ux + sin_over * uy,
          wrap_angle(th)};
}

/// Inverse of se2_exp: the constant twist that reaches `p` in time `dt`.
/// Only defined for |p.yaw| < pi.
inline Twist2D se2_log(const Pose2D& p, double dt) {
  if (!(dt > 0.0)) throw InvalidArgument("se2_log: dt must be positive");
  const double th = p.yaw;
  double a, b;  // same coefficients as se2_exp
  if (std::abs(th) < detail::kSmallAngle) {
    a = 1.0 - th * th / 6.0;
    b = th / 2.0 - th * th * th / 24.0;
  } else {
    a = std::sin(th) / th;
    b = (1.0 - std::cos(th)) / th;
  }
  // [x;y] = [a -b; b a] [ux;uy]
  const double det = a * a + b * b;
  const double ux = (a * p.x + b * p.y) / det;
  const double uy = (-b * p.x + a * p.y) / det;
  return {ux / dt, uy / dt, th / dt};
}

}  // namespace deskpilot
