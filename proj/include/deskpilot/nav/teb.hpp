#pragma once
//
// Timed elastic band for a car-like robot.
//
// The band is a pose sequence s_1..s_n with time steps dT_1..dT_{n-1}. It is
// optimized as a soft-constrained least-squares problem: total squared time
// plus quadratic hinge penalties for velocity, acceleration, nonholonomic arc
// consistency, turning radius and obstacle clearance. Start and goal poses are
// held fixed. After optimization a retiming pass stretches the time steps so
// that the velocity and acceleration bounds hold exactly.

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include "deskpilot/errors.hpp"
#include "deskpilot/geom.hpp"

namespace deskpilot::nav {

struct TebConfig {
  double lin_vel_max = 0.2;            // m/s
  double ang_vel_max = 0.5236;         // rad/s
  double lin_acc_max = 0.15;           // m/s^2
  double ang_acc_max = 0.3927;         // rad/s^2
  double turning_radius_min = 0.24515; // m
  double wheelbase = 0.14154;          // m
  double steering_limit = 0.5236;      // rad
  double min_obstacle_dist = 0.2;      // m, from the rear axle centre
  int inner_iters = 3;
  int outer_iters = 3;
  double dt_ref = 0.3;                 // s
  double dt_hysteresis = 0.1;          // s
  double weight_velocity = 2.0;
  double weight_acceleration = 1.0;
  double weight_kinematics = 1000.0;
  double weight_obstacle = 50.0;
  double weight_time = 1.0;

  // Optimizer internals.
  double lambda0 = 1e-4;
  int max_lm_trials = 8;
  double band_spacing = 0.1;     // m, initial pose spacing
  double penalty_margin = 0.1;  // fraction by which kinematic bounds are tightened in the penalties
  double obstacle_margin = 0.05; // m added to min_obstacle_dist in the penalty
  double association_radius = 0.3;  // m beyond the clearance bound
  int max_associations = 6;      // obstacles tied to one pose
  double dt_min = 0.01;          // s
  std::size_t max_poses = 200;
  double max_nh_error = 0.1;     // rad, feasibility bound on arc consistency

  void validate() const {
    for (double v : {lin_vel_max, ang_vel_max, lin_acc_max, ang_acc_max, turning_radius_min, wheelbase, steering_limit,
                     min_obstacle_dist, dt_ref, dt_hysteresis, band_spacing, dt_min})
      if (!(v > 0.0)) throw ConfigError("teb: bounds and step sizes must be positive");
    if (dt_hysteresis >= dt_ref) throw ConfigError("teb: dt_hysteresis must be smaller than dt_ref");
    if (inner_iters < 1 || outer_iters < 1) throw ConfigError("teb: iteration counts must be >= 1");
    if (std::abs(turning_radius_min - wheelbase / std::tan(steering_limit)) > 1e-4)
      throw ConfigError("teb: turning_radius_min must equal wheelbase / tan(steering_limit)");
  }
};

struct GoalTolerance {
  double xy = 0.1;   // m
  double yaw = 0.1;  // rad
};

inline bool within_tolerance(const Pose2D& pose, const Pose2D& goal, const GoalTolerance& tol) {
  return std::hypot(pose.x - goal.x, pose.y - goal.y) <= tol.xy && std::abs(angle_diff(pose.yaw, goal.yaw)) <= tol.yaw;
}

struct Trajectory {
  std::vector<Pose2D> poses;
  std::vector<double> dts;

  std::size_t size() const noexcept { return poses.size(); }
  double duration() const noexcept {
    double t = 0.0;
    for (double d : dts) t += d;
    return t;
  }
  void validate() const {
    if (poses.size() < 2) throw InvalidArgument("trajectory: needs at least two poses");
    if (dts.size() + 1 != poses.size()) throw InvalidArgument("trajectory: dts must have n-1 entries");
    for (double d : dts)
      if (!(d > 0.0) || !std::isfinite(d)) throw InvalidArgument("trajectory: time steps must be positive");
  }
};

/// Per-segment kinematic quantities.
struct SegmentKinematics {
  double ds;     // chord length
  double dtheta; // wrapped heading change
  double dir;    // +1 forward, -1 reverse
  double v;      // signed linear velocity
  double omega;  // angular velocity
};

inline SegmentKinematics segment_kinematics(const Pose2D& a, const Pose2D& b, double dt) {
  const double dx = b.x - a.x, dy = b.y - a.y;
  const double ds = std::hypot(dx, dy);
  const double dir = dx * std::cos(a.yaw) + dy * std::sin(a.yaw) >= 0.0 ? 1.0 : -1.0;
  const double dth = angle_diff(b.yaw, a.yaw);
  return {ds, dth, dir, dir * ds / dt, dth / dt};
}

// ---------------------------------------------------------------------------
// Band construction

/// Samples the polyline every ~band_spacing; the first and last poses are
/// `start` and `goal`, interior headings follow the chord of their neighbours
/// (flipped when the whole band has to be driven in reverse).
enum class BandDirection { Auto, Forward, Reverse };

inline Trajectory init_band(const std::vector<Point2D>& path, const Pose2D& start, const Pose2D& goal,
                            const TebConfig& cfg, BandDirection direction = BandDirection::Auto) {
  if (path.empty()) throw InvalidArgument("init_band: empty path");
  std::vector<Point2D> pts{start.position()};
  for (std::size_t i = 1; i + 1 < path.size(); ++i) pts.push_back(path[i]);
  pts.push_back(goal.position());

  std::vector<double> cum{0.0};
  for (std::size_t i = 1; i < pts.size(); ++i) cum.push_back(cum.back() + (pts[i] - pts[i - 1]).norm());
  const double total = cum.back();
  const auto nseg = static_cast<std::size_t>(std::max(1.0, std::ceil(total / cfg.band_spacing - 1e-9)));

  std::vector<Point2D> samples;
  std::size_t seg = 1;
  for (std::size_t i = 0; i <= nseg; ++i) {
    const double s = total * static_cast<double>(i) / static_cast<double>(nseg);
    while (seg + 1 < pts.size() && cum[seg] < s) ++seg;
    const double len = cum[seg] - cum[seg - 1];
    const double u = len > 0.0 ? std::clamp((s - cum[seg - 1]) / len, 0.0, 1.0) : 0.0;
    samples.push_back(pts[seg - 1] + (pts[seg] - pts[seg - 1]) * u);
  }
  samples.front() = start.position();
  samples.back() = goal.position();

  // Drive the band backwards when both end headings point against the path.
  const Point2D d0 = samples[1] - samples[0], d1 = samples.back() - samples[samples.size() - 2];
  const bool reverse = direction == BandDirection::Reverse ||
                       (direction == BandDirection::Auto && d0.dot({std::cos(start.yaw), std::sin(start.yaw)}) < 0.0 &&
                        d1.dot({std::cos(goal.yaw), std::sin(goal.yaw)}) < 0.0);

  Trajectory band;
  band.poses.push_back(start);
  for (std::size_t i = 1; i + 1 < samples.size(); ++i) {
    const Point2D d = samples[i + 1] - samples[i - 1];
    const double heading = std::atan2(d.y, d.x);
    band.poses.push_back({samples[i].x, samples[i].y, reverse ? wrap_angle(heading + kPi) : heading});
  }
  band.poses.push_back(goal);
  for (std::size_t i = 0; i + 1 < band.poses.size(); ++i) {
    const double ds = (band.poses[i + 1].position() - band.poses[i].position()).norm();
    band.dts.push_back(std::max(ds / cfg.lin_vel_max, cfg.dt_min));
  }
  return band;
}

inline Pose2D interpolate_pose(const Pose2D& a, const Pose2D& b, double u) {
  return {a.x + (b.x - a.x) * u, a.y + (b.y - a.y) * u, wrap_angle(a.yaw + angle_diff(b.yaw, a.yaw) * u)};
}

/// One sweep: split intervals longer than dt_ref + hysteresis, drop poses
/// bounding intervals shorter than dt_ref - hysteresis. Endpoints stay.
inline Trajectory adjust_resolution(const Trajectory& band, const TebConfig& cfg) {
  band.validate();
  const double hi = cfg.dt_ref + cfg.dt_hysteresis, lo = cfg.dt_ref - cfg.dt_hysteresis;
  Trajectory out;
  out.poses.push_back(band.poses.front());
  double carry = 0.0;
  for (std::size_t k = 0; k + 1 < band.size(); ++k) {
    const double dt = band.dts[k] + carry;
    carry = 0.0;
    const Pose2D& q = band.poses[k + 1];
    const bool last = k + 2 == band.size();
    if (dt < lo && !last) {
      carry = dt;
      continue;
    }
    if (dt > hi && band.size() < cfg.max_poses) {
      out.poses.push_back(interpolate_pose(out.poses.back(), q, 0.5));
      out.dts.push_back(dt / 2);
      out.poses.push_back(q);
      out.dts.push_back(dt / 2);
    } else {
      out.poses.push_back(q);
      out.dts.push_back(dt);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Penalties

inline double hinge_above(double value, double bound) { return std::max(0.0, value - bound); }
inline double hinge_below(double value, double bound) { return std::max(0.0, bound - value); }

/// Bounds used inside the penalties.
struct PenaltyBounds {
  double vel, ang_vel, acc, ang_acc, radius, clearance;

  static PenaltyBounds exact(const TebConfig& c) {
    return {c.lin_vel_max, c.ang_vel_max, c.lin_acc_max, c.ang_acc_max, c.turning_radius_min, c.min_obstacle_dist};
  }
  static PenaltyBounds tightened(const TebConfig& c) {
    const double m = c.penalty_margin;
    return {c.lin_vel_max * (1 - m), c.ang_vel_max * (1 - m), c.lin_acc_max * (1 - m), c.ang_acc_max * (1 - m),
            c.turning_radius_min * (1 + m), c.min_obstacle_dist + c.obstacle_margin};
  }
};

/// Residual of the arc condition: both headings symmetric about the chord.
inline double nonholonomic_residual(const Pose2D& a, const Pose2D& b) {
  const double dx = b.x - a.x, dy = b.y - a.y;
  return (std::cos(a.yaw) + std::cos(b.yaw)) * dy - (std::sin(a.yaw) + std::sin(b.yaw)) * dx;
}

/// rmin * |dtheta| - ds > 0 means the segment turns tighter than rmin.
inline double turning_radius_penalty(const Pose2D& a, const Pose2D& b, double rmin) {
  const double ds = (b.position() - a.position()).norm();
  return hinge_above(rmin * std::abs(angle_diff(b.yaw, a.yaw)), ds);
}

struct PenaltySums {
  double velocity = 0, angular_velocity = 0, acceleration = 0, angular_acceleration = 0;
  double turning_radius = 0, obstacle = 0;

  double total() const noexcept {
    return velocity + angular_velocity + acceleration + angular_acceleration + turning_radius + obstacle;
  }
};

/// Sum of (unweighted) hinge magnitudes against `b`, obstacle term over all
/// poses except the fixed start.
inline PenaltySums hinge_penalties(const Trajectory& band, const std::vector<Point2D>& obstacles, const PenaltyBounds& b) {
  band.validate();
  PenaltySums s;
  std::vector<SegmentKinematics> seg;
  for (std::size_t k = 0; k + 1 < band.size(); ++k) seg.push_back(segment_kinematics(band.poses[k], band.poses[k + 1], band.dts[k]));
  for (std::size_t k = 0; k < seg.size(); ++k) {
    s.velocity += hinge_above(std::abs(seg[k].v), b.vel);
    s.angular_velocity += hinge_above(std::abs(seg[k].omega), b.ang_vel);
    s.turning_radius += turning_radius_penalty(band.poses[k], band.poses[k + 1], b.radius);
    if (k + 1 < seg.size()) {
      const double mean = 0.5 * (band.dts[k] + band.dts[k + 1]);
      s.acceleration += hinge_above(std::abs(seg[k + 1].v - seg[k].v) / mean, b.acc);
      s.angular_acceleration += hinge_above(std::abs(seg[k + 1].omega - seg[k].omega) / mean, b.ang_acc);
    }
  }
  for (std::size_t i = 1; i < band.size(); ++i)
    for (const auto& o : obstacles) s.obstacle += hinge_below((band.poses[i].position() - o).norm(), b.clearance);
  return s;
}

// ---------------------------------------------------------------------------
// Optimization

namespace detail {

struct Association {
  std::size_t pose;
  Point2D obstacle;
};

inline std::vector<Association> associate_obstacles(const Trajectory& band, const std::vector<Point2D>& obstacles,
                                                    const TebConfig& cfg, double clearance) {
  std::vector<Association> out;
  const double reach = clearance + cfg.association_radius;
  std::vector<std::pair<double, std::size_t>> near;
  for (std::size_t i = 1; i + 1 < band.size(); ++i) {
    near.clear();
    for (std::size_t j = 0; j < obstacles.size(); ++j) {
      const double d = (band.poses[i].position() - obstacles[j]).norm();
      if (d < reach) near.push_back({d, j});
    }
    const auto keep = std::min<std::size_t>(near.size(), static_cast<std::size_t>(cfg.max_associations));
    std::partial_sort(near.begin(), near.begin() + static_cast<std::ptrdiff_t>(keep), near.end());
    for (std::size_t m = 0; m < keep; ++m) out.push_back({i, obstacles[near[m].second]});
  }
  return out;
}

// Variables: interior poses (x, y, yaw) then every dT. Residual rows are laid
// out in blocks (5 per segment, 2 per segment pair, 1 per association) so the
// numeric Jacobian only re-evaluates the blocks a variable touches.
class TebProblem {
 public:
  TebProblem(const Trajectory& band, std::vector<Association> assoc, const TebConfig& cfg, PenaltyBounds b)
      : start_(band.poses.front()), goal_(band.poses.back()), n_(band.size()), assoc_(std::move(assoc)), cfg_(cfg), b_(b),
        by_pose_(band.size()) {
    for (std::size_t a = 0; a < assoc_.size(); ++a) by_pose_[assoc_[a].pose].push_back(a);
    wt_ = std::sqrt(cfg.weight_time);
    wv_ = std::sqrt(cfg.weight_velocity);
    wa_ = std::sqrt(cfg.weight_acceleration);
    wk_ = std::sqrt(cfg.weight_kinematics);
    wo_ = std::sqrt(cfg.weight_obstacle);
  }

  std::size_t num_vars() const noexcept { return 3 * (n_ - 2) + (n_ - 1); }
  std::size_t num_residuals() const noexcept { return 5 * (n_ - 1) + 2 * (n_ - 2) + assoc_.size(); }

  Eigen::VectorXd pack(const Trajectory& t) const {
    Eigen::VectorXd x(static_cast<Eigen::Index>(num_vars()));
    Eigen::Index j = 0;
    for (std::size_t i = 1; i + 1 < n_; ++i) {
      x[j++] = t.poses[i].x;
      x[j++] = t.poses[i].y;
      x[j++] = t.poses[i].yaw;
    }
    for (double d : t.dts) x[j++] = d;
    return x;
  }

  Trajectory unpack(const Eigen::VectorXd& x) const {
    Trajectory t;
    t.poses.reserve(n_);
    for (std::size_t i = 0; i < n_; ++i) t.poses.push_back(pose(x, i));
    for (std::size_t k = 0; k + 1 < n_; ++k) t.dts.push_back(dt(x, k));
    return t;
  }

  /// Keeps dT above dt_min and yaw wrapped.
  void project(Eigen::VectorXd& x) const {
    Eigen::Index j = 0;
    for (std::size_t i = 1; i + 1 < n_; ++i, j += 3) x[j + 2] = wrap_angle(x[j + 2]);
    for (std::size_t k = 0; k + 1 < n_; ++k, ++j) x[j] = std::max(x[j], cfg_.dt_min);
  }

  void residuals(const Eigen::VectorXd& x, Eigen::VectorXd& r) const {
    r.resize(static_cast<Eigen::Index>(num_residuals()));
    for (std::size_t k = 0; k + 1 < n_; ++k) segment_block(x, k, r.data() + seg_row(k));
    for (std::size_t p = 0; p + 2 < n_; ++p) pair_block(x, p, r.data() + pair_row(p));
    for (std::size_t a = 0; a < assoc_.size(); ++a) r[static_cast<Eigen::Index>(assoc_row(a))] = assoc_residual(x, a);
  }

  double objective(const Eigen::VectorXd& x) const {
    Eigen::VectorXd r;
    residuals(x, r);
    return r.squaredNorm();
  }

  Eigen::SparseMatrix<double> jacobian(const Eigen::VectorXd& x) const {
    std::vector<Eigen::Triplet<double>> trip;
    Eigen::VectorXd xp = x;
    const std::size_t pose_vars = 3 * (n_ - 2);
    double plus[5], minus[5];
    for (std::size_t j = 0; j < num_vars(); ++j) {
      const auto jj = static_cast<Eigen::Index>(j);
      const double h = 1e-6 * std::max(1.0, std::abs(x[jj]));
      // Blocks touched by this variable.
      std::size_t seg_lo, seg_hi, pair_lo, pair_hi;
      const std::size_t* assoc_begin = nullptr;
      std::size_t assoc_count = 0;
      if (j < pose_vars) {
        const std::size_t i = j / 3 + 1;
        seg_lo = i - 1, seg_hi = i;
        pair_lo = i >= 2 ? i - 2 : 0, pair_hi = i;
        assoc_begin = by_pose_[i].data();
        assoc_count = by_pose_[i].size();
      } else {
        const std::size_t k = j - pose_vars;
        seg_lo = seg_hi = k;
        pair_lo = k >= 1 ? k - 1 : 0, pair_hi = k;
      }
      auto diff = [&](auto&& eval, std::size_t count, std::size_t row) {
        xp[jj] = x[jj] + h;
        eval(plus);
        xp[jj] = x[jj] - h;
        eval(minus);
        xp[jj] = x[jj];
        for (std::size_t m = 0; m < count; ++m) {
          const double d = (plus[m] - minus[m]) / (2 * h);
          if (d != 0.0) trip.emplace_back(static_cast<int>(row + m), static_cast<int>(j), d);
        }
      };
      for (std::size_t k = seg_lo; k <= seg_hi && k + 1 < n_; ++k)
        diff([&](double* out) { segment_block(xp, k, out); }, 5, seg_row(k));
      for (std::size_t p = pair_lo; p <= pair_hi && p + 2 < n_; ++p)
        diff([&](double* out) { pair_block(xp, p, out); }, 2, pair_row(p));
      for (std::size_t m = 0; m < assoc_count; ++m) {
        const std::size_t a = assoc_begin[m];
        diff([&](double* out) { out[0] = assoc_residual(xp, a); }, 1, assoc_row(a));
      }
    }
    Eigen::SparseMatrix<double> J(static_cast<Eigen::Index>(num_residuals()), static_cast<Eigen::Index>(num_vars()));
    J.setFromTriplets(trip.begin(), trip.end());
    return J;
  }

 private:
  Pose2D pose(const Eigen::VectorXd& x, std::size_t i) const {
    if (i == 0) return start_;
    if (i + 1 == n_) return goal_;
    const auto j = static_cast<Eigen::Index>(3 * (i - 1));
    return {x[j], x[j + 1], x[j + 2]};
  }
  double dt(const Eigen::VectorXd& x, std::size_t k) const { return x[static_cast<Eigen::Index>(3 * (n_ - 2) + k)]; }

  std::size_t seg_row(std::size_t k) const noexcept { return 5 * k; }
  std::size_t pair_row(std::size_t p) const noexcept { return 5 * (n_ - 1) + 2 * p; }
  std::size_t assoc_row(std::size_t a) const noexcept { return 5 * (n_ - 1) + 2 * (n_ - 2) + a; }

  void segment_block(const Eigen::VectorXd& x, std::size_t k, double* out) const {
    const Pose2D a = pose(x, k), b = pose(x, k + 1);
    const double t = dt(x, k);
    const SegmentKinematics s = segment_kinematics(a, b, t);
    out[0] = wt_ * t;
    out[1] = wv_ * hinge_above(std::abs(s.v), b_.vel);
    out[2] = wv_ * hinge_above(std::abs(s.omega), b_.ang_vel);
    out[3] = wk_ * nonholonomic_residual(a, b);
    out[4] = wk_ * turning_radius_penalty(a, b, b_.radius);
  }

  void pair_block(const Eigen::VectorXd& x, std::size_t p, double* out) const {
    const double t0 = dt(x, p), t1 = dt(x, p + 1);
    const SegmentKinematics s0 = segment_kinematics(pose(x, p), pose(x, p + 1), t0);
    const SegmentKinematics s1 = segment_kinematics(pose(x, p + 1), pose(x, p + 2), t1);
    const double mean = 0.5 * (t0 + t1);
    out[0] = wa_ * hinge_above(std::abs(s1.v - s0.v) / mean, b_.acc);
    out[1] = wa_ * hinge_above(std::abs(s1.omega - s0.omega) / mean, b_.ang_acc);
  }

  double assoc_residual(const Eigen::VectorXd& x, std::size_t a) const {
    return wo_ * hinge_below((pose(x, assoc_[a].pose).position() - assoc_[a].obstacle).norm(), b_.clearance);
  }

  Pose2D start_, goal_;
  std::size_t n_;
  std::vector<Association> assoc_;
  TebConfig cfg_;
  PenaltyBounds b_;
  std::vector<std::vector<std::size_t>> by_pose_;
  double wt_, wv_, wa_, wk_, wo_;
};

}  // namespace detail

/// Stretches time steps until velocity and acceleration bounds hold.
/// With `end_at_rest` the final segment can decelerate to zero within bounds.
inline Trajectory retime(Trajectory band, const TebConfig& cfg, bool end_at_rest = true) {
  band.validate();
  const std::size_t m = band.dts.size();
  for (std::size_t k = 0; k < m; ++k) {
    const SegmentKinematics s = segment_kinematics(band.poses[k], band.poses[k + 1], 1.0);
    double dt = std::max({s.ds / cfg.lin_vel_max, std::abs(s.dtheta) / cfg.ang_vel_max, cfg.dt_min});
    if (end_at_rest && k + 1 == m)
      dt = std::max({dt, std::sqrt(s.ds / cfg.lin_acc_max), std::sqrt(std::abs(s.dtheta) / cfg.ang_acc_max)});
    band.dts[k] = dt;
  }
  // Scaling both steps of a pair by f divides its acceleration by f^2.
  for (int pass = 0; pass < 10000; ++pass) {
    bool changed = false;
    for (std::size_t k = 0; k + 1 < m; ++k) {
      const SegmentKinematics a = segment_kinematics(band.poses[k], band.poses[k + 1], band.dts[k]);
      const SegmentKinematics b = segment_kinematics(band.poses[k + 1], band.poses[k + 2], band.dts[k + 1]);
      const double mean = 0.5 * (band.dts[k] + band.dts[k + 1]);
      const double ratio = std::max(std::abs(b.v - a.v) / mean / cfg.lin_acc_max,
                                    std::abs(b.omega - a.omega) / mean / cfg.ang_acc_max);
      if (ratio > 1.0 + 1e-9) {
        const double f = std::sqrt(ratio) * (1.0 + 1e-6);
        band.dts[k] *= f;
        band.dts[k + 1] *= f;
        changed = true;
      }
    }
    if (!changed) break;
  }
  return band;
}

struct TebCheck {
  bool feasible = true;
  std::string reason;
  double max_vel_ratio = 0, max_ang_vel_ratio = 0, max_acc_ratio = 0, max_ang_acc_ratio = 0;
  double min_radius_ratio = std::numeric_limits<double>::infinity();
  double min_clearance = std::numeric_limits<double>::infinity();
  double max_nh_error = 0;
};

/// Hard post-check. Ratios are value / bound; `slack` is the allowed relative
/// excess. Clearance is checked on every pose except the fixed start.
inline TebCheck check_band(const Trajectory& band, const std::vector<Point2D>& obstacles, const TebConfig& cfg,
                           double slack = 0.01) {
  TebCheck c;
  try {
    band.validate();
  } catch (const InvalidArgument& e) {
    c.feasible = false;
    c.reason = e.what();
    return c;
  }
  std::vector<SegmentKinematics> seg;
  for (std::size_t k = 0; k + 1 < band.size(); ++k) seg.push_back(segment_kinematics(band.poses[k], band.poses[k + 1], band.dts[k]));
  for (std::size_t k = 0; k < seg.size(); ++k) {
    c.max_vel_ratio = std::max(c.max_vel_ratio, std::abs(seg[k].v) / cfg.lin_vel_max);
    c.max_ang_vel_ratio = std::max(c.max_ang_vel_ratio, std::abs(seg[k].omega) / cfg.ang_vel_max);
    if (std::abs(seg[k].dtheta) > 1e-12)
      c.min_radius_ratio = std::min(c.min_radius_ratio, seg[k].ds / std::abs(seg[k].dtheta) / cfg.turning_radius_min);
    if (seg[k].ds > 1e-9) {
      const Pose2D& a = band.poses[k];
      const Point2D d = band.poses[k + 1].position() - a.position();
      double chord = std::atan2(d.y, d.x);
      if (seg[k].dir < 0) chord = wrap_angle(chord + kPi);
      const double mid = a.yaw + 0.5 * seg[k].dtheta;
      c.max_nh_error = std::max(c.max_nh_error, std::abs(angle_diff(chord, mid)));
    }
    if (k + 1 < seg.size()) {
      const double mean = 0.5 * (band.dts[k] + band.dts[k + 1]);
      c.max_acc_ratio = std::max(c.max_acc_ratio, std::abs(seg[k + 1].v - seg[k].v) / mean / cfg.lin_acc_max);
      c.max_ang_acc_ratio = std::max(c.max_ang_acc_ratio, std::abs(seg[k + 1].omega - seg[k].omega) / mean / cfg.ang_acc_max);
    }
  }
  for (std::size_t i = 1; i < band.size(); ++i)
    for (const auto& o : obstacles) c.min_clearance = std::min(c.min_clearance, (band.poses[i].position() - o).norm());

  auto fail = [&](const char* why) {
    if (c.feasible) c.reason = why;
    c.feasible = false;
  };
  if (c.max_vel_ratio > 1 + slack) fail("velocity bound");
  if (c.max_ang_vel_ratio > 1 + slack) fail("angular velocity bound");
  if (c.max_acc_ratio > 1 + slack) fail("acceleration bound");
  if (c.max_ang_acc_ratio > 1 + slack) fail("angular acceleration bound");
  if (c.min_radius_ratio < 1 - slack) fail("turning radius");
  if (c.min_clearance < cfg.min_obstacle_dist) fail("obstacle clearance");
  if (c.max_nh_error > cfg.max_nh_error) fail("nonholonomic consistency");
  return c;
}

struct TebResult {
  Trajectory band;   // optimizer state; warm start for the next cycle
  Trajectory timed;  // band after retiming; what is checked and executed
  TebCheck check;
  double objective = 0.0;  // final penalized objective of the last outer iteration
  std::vector<std::vector<double>> accepted;  // objective after each accepted inner step, per outer iteration
  int lm_steps = 0;
};

/// Outer loop: adjust resolution, refresh obstacle associations, run damped
/// Gauss-Newton; then retime and post-check.
inline TebResult optimize_teb(Trajectory band, const std::vector<Point2D>& obstacles, const TebConfig& cfg,
                              bool end_at_rest = true) {
  cfg.validate();
  band.validate();
  const PenaltyBounds bounds = PenaltyBounds::tightened(cfg);
  TebResult res;
  double lambda = cfg.lambda0;
  for (int outer = 0; outer < cfg.outer_iters; ++outer) {
    band = adjust_resolution(band, cfg);
    res.accepted.emplace_back();
    if (band.size() < 3) {
      // Only fixed poses: nothing but the single time step to optimize.
      band.dts[0] = std::max(band.dts[0], cfg.dt_min);
      continue;
    }
    const detail::TebProblem prob(band, detail::associate_obstacles(band, obstacles, cfg, bounds.clearance), cfg, bounds);
    Eigen::VectorXd x = prob.pack(band);
    Eigen::VectorXd r;
    prob.residuals(x, r);
    double f = r.squaredNorm();
    if (!std::isfinite(f)) throw OptimizationFailed("optimize_teb: non-finite objective");
    for (int it = 0; it < cfg.inner_iters; ++it) {
      const Eigen::SparseMatrix<double> J = prob.jacobian(x);
      const Eigen::VectorXd g = J.transpose() * r;
      const Eigen::SparseMatrix<double> H = J.transpose() * J;
      Eigen::SparseMatrix<double> I(H.rows(), H.cols());
      I.setIdentity();
      bool accepted = false;
      for (int trial = 0; trial < cfg.max_lm_trials; ++trial) {
        Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> solver(H + lambda * I);
        if (solver.info() != Eigen::Success) {
          lambda *= 10.0;
          continue;
        }
        Eigen::VectorXd xn = x + solver.solve(-g);
        prob.project(xn);
        Eigen::VectorXd rn;
        prob.residuals(xn, rn);
        const double fn = rn.squaredNorm();
        if (std::isfinite(fn) && fn < f) {
          x = xn;
          r = rn;
          f = fn;
          lambda = std::max(lambda / 10.0, 1e-12);
          accepted = true;
          res.accepted.back().push_back(f);
          ++res.lm_steps;
          break;
        }
        lambda *= 10.0;
      }
      if (!accepted) break;
    }
    res.objective = f;
    band = prob.unpack(x);
  }
  res.band = band;
  res.timed = retime(band, cfg, end_at_rest);
  res.check = check_band(res.timed, obstacles, cfg);
  return res;
}

// ---------------------------------------------------------------------------
// Controls

struct Control {
  double v = 0.0;      // m/s, signed
  double delta = 0.0;  // rad
};

/// Controls that drive the bicycle model from pose k to pose k+1.
inline Control extract_controls_at(const Trajectory& band, std::size_t k, double wheelbase) {
  if (k + 1 >= band.size()) throw InvalidArgument("extract_controls: band needs two poses");
  if (!(band.dts[k] > 0.0)) throw InvalidArgument("extract_controls: time step must be positive");
  const SegmentKinematics s = segment_kinematics(band.poses[k], band.poses[k + 1], band.dts[k]);
  Control c{s.v, 0.0};
  if (std::abs(c.v) >= 1e-6) c.delta = std::atan(wheelbase * s.omega / c.v);
  return c;
}

inline Control extract_controls(const Trajectory& band, double wheelbase) { return extract_controls_at(band, 0, wheelbase); }

struct NormalizedCommand {
  double throttle = 0.0;
  double steering = 0.0;
};

inline NormalizedCommand normalize_command(double v, double delta, const TebConfig& cfg) {
  auto clamp1 = [](double x) { return std::isfinite(x) ? std::clamp(x, -1.0, 1.0) : 0.0; };
  return {clamp1(v / cfg.lin_vel_max), clamp1(delta / cfg.steering_limit)};
}

}  // namespace deskpilot::nav
