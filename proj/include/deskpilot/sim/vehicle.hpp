#pragma once
//
// Ackermann (kinematic bicycle) vehicle model with first-order throttle lag,
// rate-limited steering and quadrature wheel encoders on the rear axle.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <utility>

#include "deskpilot/errors.hpp"
#include "deskpilot/geom.hpp"

namespace deskpilot::sim {

struct VehicleSpec {
  double wheelbase = 0.14154;             // m
  double steering_limit = 0.5236;         // rad (±30°)
  double wheel_diameter = 0.065;          // m
  double track_width = 0.12;              // m, rear axle
  double max_wheel_rpm = 130.0;           // rev/min at full throttle
  double encoder_cpr = 1920.0;            // counts per output-shaft revolution
  double throttle_time_constant = 0.15;   // s; 0 disables the lag
  double steering_slew_rate = 5.5;        // rad/s; +inf disables slewing

  double max_speed() const noexcept { return max_wheel_rpm / 60.0 * kPi * wheel_diameter; }
  double min_turning_radius() const { return wheelbase / std::tan(steering_limit); }

  void validate() const {
    if (!(wheelbase > 0.0)) throw InvalidArgument("vehicle: wheelbase must be positive");
    if (!(steering_limit > 0.0 && steering_limit < kPi / 2)) throw InvalidArgument("vehicle: steering_limit must lie in (0, pi/2)");
    if (!(encoder_cpr > 0.0)) throw InvalidArgument("vehicle: encoder_cpr must be positive");
    if (!(wheel_diameter > 0.0)) throw InvalidArgument("vehicle: wheel_diameter must be positive");
    if (!(throttle_time_constant >= 0.0)) throw InvalidArgument("vehicle: throttle_time_constant must be >= 0");
    if (!(steering_slew_rate > 0.0)) throw InvalidArgument("vehicle: steering_slew_rate must be positive");
  }
};

struct VehicleState {
  Pose2D pose{};
  double speed = 0.0;               // m/s, signed, rear-axle longitudinal
  double steering = 0.0;            // rad
  double commanded_throttle = 0.0;  // [-1, 1]
  double commanded_steering = 0.0;  // [-1, 1]
  std::int64_t encoder_ticks_left = 0;
  std::int64_t encoder_ticks_right = 0;
  double sim_time = 0.0;  // s
  // Signed wheel travel since start, integrated alongside the pose. Encoder
  // counts are the quantized image of these.
  double wheel_arc_left = 0.0;
  double wheel_arc_right = 0.0;

  friend bool operator==(const VehicleState&, const VehicleState&) = default;
};

struct ActuatorTargets {
  double speed = 0.0;     // m/s
  double steering = 0.0;  // rad
};

/// Normalized throttle/steering in [-1, 1] (clamped) to physical targets.
inline ActuatorTargets apply_actuation(double throttle, double steering, const VehicleSpec& spec) {
  if (!std::isfinite(throttle)) throttle = 0.0;
  if (!std::isfinite(steering)) steering = 0.0;
  return {std::clamp(throttle, -1.0, 1.0) * spec.max_speed(),
          std::clamp(steering, -1.0, 1.0) * spec.steering_limit};
}

struct EncoderDelta {
  std::int64_t left = 0;
  std::int64_t right = 0;
  friend bool operator==(const EncoderDelta&, const EncoderDelta&) = default;
};

/// Tick increments between two consecutive states of one run. Counts are the
/// rounded cumulative wheel travel, so quantization never accumulates.
inline EncoderDelta simulate_encoders(const VehicleState& prev, const VehicleState& next,
                                      const VehicleSpec& spec) {
  const double counts_per_m = spec.encoder_cpr / (kPi * spec.wheel_diameter);
  auto ticks = [&](double arc) { return static_cast<std::int64_t>(std::llround(arc * counts_per_m)); };
  return {ticks(next.wheel_arc_left) - ticks(prev.wheel_arc_left),
          ticks(next.wheel_arc_right) - ticks(prev.wheel_arc_right)};
}

namespace detail {

// Closed-form actuator trajectories over one step, t measured from step start.
struct ActuatorProfile {
  double v0, v_target, tau;
  double d0, d_target, slew;

  double speed(double t) const {
    if (tau <= 0.0) return t > 0.0 ? v_target : v0;
    return v_target + (v0 - v_target) * std::exp(-t / tau);
  }
  double steering(double t) const {
    const double gap = d_target - d0;
    if (!std::isfinite(slew)) return t > 0.0 ? d_target : d0;
    const double move = std::min(slew * t, std::abs(gap));
    return d0 + std::copysign(move, gap);
  }
  double slew_end() const {
    if (!std::isfinite(slew)) return 0.0;
    return std::abs(d_target - d0) / slew;
  }
};

struct KinState {
  double x, y, yaw, arc_l, arc_r;
};

inline KinState derivative(const KinState& s, double v, double delta, const VehicleSpec& spec) {
  const double curvature = std::tan(delta) / spec.wheelbase;
  const double half_track = spec.track_width / 2.0;
  return {v * std::cos(s.yaw), v * std::sin(s.yaw), v * curvature, v * (1.0 - half_track * curvature),
          v * (1.0 + half_track * curvature)};
}

inline KinState axpy(const KinState& s, double h, const KinState& k) {
  return {s.x + h * k.x, s.y + h * k.y, s.yaw + h * k.yaw, s.arc_l + h * k.arc_l, s.arc_r + h * k.arc_r};
}

// Classic RK4 over [t0, t1] with the actuator profile evaluated in time.
inline KinState rk4(KinState s, double t0, double t1, const ActuatorProfile& prof, const VehicleSpec& spec) {
  constexpr double kMaxSubstep = 0.01;
  const double span = t1 - t0;
  if (span <= 0.0) return s;
  const int n = std::max(1, static_cast<int>(std::ceil(span / kMaxSubstep - 1e-12)));
  const double h = span / n;
  // Evaluate actuators strictly inside the interval so the t=0 jump of a
  // disabled lag is attributed to the step, not to the previous one.
  auto eval = [&](const KinState& st, double t) {
    const double tt = std::clamp(t, t0 + 1e-12 * span, t1);
    return derivative(st, prof.speed(tt), prof.steering(tt), spec);
  };
  for (int i = 0; i < n; ++i) {
    const double t = t0 + i * h;
    const KinState k1 = eval(s, t);
    const KinState k2 = eval(axpy(s, h / 2, k1), t + h / 2);
    const KinState k3 = eval(axpy(s, h / 2, k2), t + h / 2);
    const KinState k4 = eval(axpy(s, h, k3), t + h);
    s = {s.x + h / 6 * (k1.x + 2 * k2.x + 2 * k3.x + k4.x), s.y + h / 6 * (k1.y + 2 * k2.y + 2 * k3.y + k4.y),
         s.yaw + h / 6 * (k1.yaw + 2 * k2.yaw + 2 * k3.yaw + k4.yaw),
         s.arc_l + h / 6 * (k1.arc_l + 2 * k2.arc_l + 2 * k3.arc_l + k4.arc_l),
         s.arc_r + h / 6 * (k1.arc_r + 2 * k2.arc_r + 2 * k3.arc_r + k4.arc_r)};
  }
  return s;
}

}  // namespace detail

inline constexpr double kMaxVehicleStep = 0.1;  // s

/// Advances the vehicle by `dt` seconds toward the commanded throttle/steering.
inline VehicleState step_vehicle(const VehicleState& state, const VehicleSpec& spec, double dt) {
  if (!(dt > 0.0 && dt <= kMaxVehicleStep)) throw InvalidArgument("step_vehicle: dt must lie in (0, 0.1]");
  const ActuatorTargets target = apply_actuation(state.commanded_throttle, state.commanded_steering, spec);
  const double d0 = std::clamp(state.steering, -spec.steering_limit, spec.steering_limit);
  const detail::ActuatorProfile prof{state.speed, target.speed, spec.throttle_time_constant,
                                     d0, target.steering, spec.steering_slew_rate};

  detail::KinState s{state.pose.x, state.pose.y, state.pose.yaw, state.wheel_arc_left, state.wheel_arc_right};
  // Split at the instant the steering reaches its target: the profile has a
  // kink there and RK4 should not straddle it.
  const double kink = prof.slew_end();
  if (kink > 0.0 && kink < dt) {
    s = detail::rk4(s, 0.0, kink, prof, spec);
    s = detail::rk4(s, kink, dt, prof, spec);
  } else {
    s = detail::rk4(s, 0.0, dt, prof, spec);
  }

  VehicleState next = state;
  next.pose = {s.x, s.y, wrap_angle(s.yaw)};
  next.speed = prof.speed(dt);
  next.steering = std::clamp(prof.steering(dt), -spec.steering_limit, spec.steering_limit);
  next.wheel_arc_left = s.arc_l;
  next.wheel_arc_right = s.arc_r;
  next.sim_time = state.sim_time + dt;
  const EncoderDelta ticks = simulate_encoders(state, next, spec);
  next.encoder_ticks_left += ticks.left;
  next.encoder_ticks_right += ticks.right;
  return next;
}

}  // namespace deskpilot::sim
