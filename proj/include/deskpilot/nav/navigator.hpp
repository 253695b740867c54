#pragma once
//
// Navigation stage: global A* on a costmap that accumulates observed
// obstacles, a timed elastic band optimized every cycle against the rolling
// local costmap, and command output.

#include <deque>
#include <optional>
#include <string>
#include <vector>

#include "deskpilot/errors.hpp"
#include "deskpilot/nav/astar.hpp"
#include "deskpilot/nav/costmap.hpp"
#include "deskpilot/nav/teb.hpp"
#include "deskpilot/sim/lidar.hpp"
#include "deskpilot/sim/simulator.hpp"
#include "deskpilot/sim/vehicle.hpp"

namespace deskpilot::nav {

struct NavConfig {
  TebConfig teb{};
  InflationParams inflation{};
  GoalTolerance tolerance{};
  // Arrival is declared inside this tighter box so that estimate error and
  // the stopping distance still leave the car within `tolerance`.
  GoalTolerance arrival{0.05, 0.07};
  double control_rate = 10.0;    // Hz
  int stuck_after = 5;           // consecutive infeasible cycles
  double plan_clearance = 0.15;  // m; the global path keeps this distance when it can
  int warmup_cycles = 20;        // optimizer cycles spent on a freshly initialized band
  // Closed-loop acceptance of a band is looser than the optimizer's own
  // check: the pinned first pose carries tracking error, and commands are
  // clamped anyway. Collision margin is what matters here.
  double exec_slack = 0.25;       // relative excess allowed on kinematic bounds
  double exec_clearance = 0.15;   // m
  double exec_nh_error = 0.3;     // rad
  // Close to the goal with the wrong heading the band cannot turn in place;
  // the navigator then detours through a pose `approach_distance` behind
  // (or ahead of) the goal along its heading.
  double approach_trigger = 0.35;   // m
  double approach_distance = 0.4;   // m
  GoalTolerance approach_tolerance{0.1, 0.25};

  void validate() const {
    teb.validate();
    inflation.validate();
    if (!(tolerance.xy > 0.0) || !(tolerance.yaw > 0.0)) throw ConfigError("nav: goal tolerances must be positive");
    if (!(arrival.xy > 0.0 && arrival.xy <= tolerance.xy) || !(arrival.yaw > 0.0 && arrival.yaw <= tolerance.yaw))
      throw ConfigError("nav: arrival box must be positive and inside the goal tolerance");
    if (!(control_rate > 0.0)) throw ConfigError("nav: control_rate must be positive");
    if (stuck_after < 1 || warmup_cycles < 1) throw ConfigError("nav: cycle counts must be >= 1");
    if (!(plan_clearance >= 0.0)) throw ConfigError("nav: plan_clearance must be >= 0");
    if (!(approach_trigger >= 0.0) || !(approach_distance > 0.0)) throw ConfigError("nav: approach distances must be positive");
    if (!(exec_slack >= 0.0) || !(exec_clearance >= 0.0) || !(exec_nh_error > 0.0))
      throw ConfigError("nav: execution tolerances must be non-negative");
  }
};

enum class NavStatus { Driving, Arrived, Unreachable, Stuck };

inline const char* to_string(NavStatus s) {
  switch (s) {
    case NavStatus::Driving: return "driving";
    case NavStatus::Arrived: return "arrived";
    case NavStatus::Unreachable: return "unreachable";
    case NavStatus::Stuck: return "stuck";
  }
  return "?";
}

struct NavOutput {
  NormalizedCommand command{};
  Control control{};
  NavStatus status = NavStatus::Driving;
  bool replanned = false;
  bool band_feasible = false;
  int infeasible_streak = 0;
  std::string reason;
  std::vector<Point2D> global_path;
  std::vector<Pose2D> band;
  Pose2D local_origin{};
  double local_size = 0.0;
};

/// Multi-start band solve: the automatically chosen direction first, then the
/// opposite one. Returns the first feasible result, else the last attempt.
inline TebResult solve_band(const std::vector<Point2D>& path, const Pose2D& start, const Pose2D& goal,
                            const std::vector<Point2D>& obstacles, const TebConfig& cfg, int cycles) {
  const Trajectory automatic = init_band(path, start, goal, cfg);
  const bool auto_reverse = automatic.size() > 2 &&
                            segment_kinematics(automatic.poses[1], automatic.poses[2], 1.0).dir < 0.0;
  TebResult last;
  for (const Trajectory& init : {automatic, init_band(path, start, goal, cfg,
                                                      auto_reverse ? BandDirection::Forward : BandDirection::Reverse)}) {
    Trajectory band = init;
    for (int c = 0; c < cycles; ++c) {
      last = optimize_teb(band, obstacles, cfg);
      band = last.band;
      if (last.check.feasible) return last;
    }
  }
  return last;
}

/// Normalized nav command to simulator actuation (throttle is relative to the
/// vehicle's top speed there, to lin_vel_max here).
inline sim::Command to_actuation(const NormalizedCommand& c, const TebConfig& teb, const sim::VehicleSpec& vehicle) {
  return {c.throttle * teb.lin_vel_max / vehicle.max_speed(), c.steering * teb.steering_limit / vehicle.steering_limit};
}

class Navigator {
 public:
  Navigator(OccupancyGrid static_map, NavConfig cfg) : map_(std::move(static_map)), cfg_(cfg) {
    cfg_.validate();
    observed_.assign(map_.size(), false);
    costmap_ = build_costmap(map_, cfg_.inflation);
  }

  void set_goal(const Pose2D& goal) {
    if (!goal.finite()) throw InvalidArgument("navigator: non-finite goal");
    goal_ = wrap(goal);
    via_.reset();
    arrived_ = false;
    need_replan_ = true;
    streak_ = 0;
  }
  void clear_goal() {
    goal_.reset();
    via_.reset();
  }
  const std::optional<Pose2D>& goal() const noexcept { return goal_; }
  const Costmap& global_costmap() const noexcept { return costmap_; }
  std::size_t replans() const noexcept { return replans_; }
  /// Intermediate approach pose currently targeted, if any.
  const std::optional<Pose2D>& via() const noexcept { return via_; }

  NavOutput step(const Pose2D& pose, const sim::LaserScan* scan) {
    if (!goal_) throw InvalidArgument("navigate_step: no goal set");
    NavOutput out;
    out.local_size = cfg_.inflation.local_size;
    if (arrived_ || within_tolerance(pose, *goal_, cfg_.arrival)) {
      arrived_ = true;
      out.status = NavStatus::Arrived;
      return out;
    }
    if (scan && mark_observed(pose, *scan)) costmap_ = build_costmap(map_, cfg_.inflation, observed_);
    if (via_ && within_tolerance(pose, *via_, cfg_.approach_tolerance)) {
      via_.reset();
      need_replan_ = true;
    }
    if (!need_replan_ && path_blocked()) need_replan_ = true;
    if (need_replan_) {
      if (!replan(pose)) {
        out.status = NavStatus::Unreachable;
        out.reason = "no global path to goal";
        return out;
      }
      out.replanned = true;
    }
    out.global_path = path_;

    const Costmap local = build_local_costmap(map_, pose, scan, cfg_.inflation);
    out.local_origin = local.origin();
    const std::vector<Point2D> obstacles = local.lethal_points();

    TebResult res;
    if (!band_) {
      res = solve_band(remaining_path(pose), pose, target(), obstacles, cfg_.teb, cfg_.warmup_cycles);
    } else {
      res = optimize_teb(advance_band(*band_, pose), obstacles, cfg_.teb);
    }
    band_ = res.band;
    out.band = res.timed.poses;
    TebConfig exec = cfg_.teb;
    exec.min_obstacle_dist = cfg_.exec_clearance;
    exec.max_nh_error = cfg_.exec_nh_error;
    const TebCheck check = check_band(res.timed, obstacles, exec, cfg_.exec_slack);
    out.band_feasible = check.feasible;
    if (!check.feasible && !via_ && near_goal_misaligned(pose)) {
      via_ = approach_pose(obstacles);
      if (via_) need_replan_ = true;
    }
    if (!check.feasible) {
      ++streak_;
      out.infeasible_streak = streak_;
      out.reason = check.reason;
      need_replan_ = true;
      out.status = streak_ >= cfg_.stuck_after ? NavStatus::Stuck : NavStatus::Driving;
      return out;
    }
    streak_ = 0;
    out.control = extract_controls(res.timed, cfg_.teb.wheelbase);
    out.command = normalize_command(out.control.v, out.control.delta, cfg_.teb);
    return out;
  }

 private:
  const Pose2D& target() const { return via_ ? *via_ : *goal_; }

  bool near_goal_misaligned(const Pose2D& pose) const {
    return (pose.position() - goal_->position()).norm() < cfg_.approach_trigger &&
           std::abs(angle_diff(pose.yaw, goal_->yaw)) > cfg_.arrival.yaw;
  }

  // First approach pose whose straight run to the goal keeps the band's
  // obstacle distance from both the costmap and the current obstacle points.
  std::optional<Pose2D> approach_pose(const std::vector<Point2D>& obstacles) const {
    const double keep = cfg_.teb.min_obstacle_dist + cfg_.teb.obstacle_margin;
    PlannerOptions o;
    o.max_passable_cost = inflation_cost(keep, cfg_.inflation);
    const double d = cfg_.approach_distance;
    for (const double off : {-d, d, -0.75 * d, 0.75 * d, -1.25 * d, 1.25 * d}) {
      const Pose2D p = compose(*goal_, Pose2D{off, 0.0, 0.0});
      if (!segment_passable(costmap_, p.position(), goal_->position(), o)) continue;
      bool clear = true;
      for (const auto& q : obstacles) {
        const Point2D ab = goal_->position() - p.position();
        const double u = std::clamp((q - p.position()).dot(ab) / ab.dot(ab), 0.0, 1.0);
        if ((q - (p.position() + ab * u)).norm() < keep) {
          clear = false;
          break;
        }
      }
      if (clear) return p;
    }
    return std::nullopt;
  }

  static Pose2D wrap(Pose2D p) {
    p.yaw = wrap_angle(p.yaw);
    return p;
  }

  // Marks scan returns within range_obstacle; clears cells the rays pass
  // through up to range_raytrace. Returns true if the layer changed.
  bool mark_observed(const Pose2D& pose, const sim::LaserScan& scan) {
    bool changed = false;
    const double step = 0.5 * map_.resolution();
    // Cells hit by any beam of this scan are never cleared by another beam.
    std::vector<char> hit(map_.size(), 0);
    for (std::size_t i = 0; i < scan.size(); ++i) {
      if (!scan.valid(i) || scan.ranges[i] > cfg_.inflation.range_obstacle) continue;
      const CellIndex c = map_.cell_of(transform_point(pose, scan.point(i)));
      if (map_.contains(c)) hit[map_.index(c)] = 1;
    }
    auto set = [&](const CellIndex& c, bool v) {
      if (!map_.contains(c) || observed_[map_.index(c)] == v) return;
      observed_[map_.index(c)] = v;
      changed = true;
    };
    for (std::size_t i = 0; i < scan.size(); ++i) {
      const double a = pose.yaw + scan.spec.angle(i);
      const Point2D dir{std::cos(a), std::sin(a)};
      const double reach = std::min(scan.valid(i) ? scan.ranges[i] : scan.spec.range_max, cfg_.inflation.range_raytrace);
      for (double s = 0.0; s < reach - step; s += step) {
        const CellIndex c = map_.cell_of(pose.position() + dir * s);
        if (map_.contains(c) && !hit[map_.index(c)]) set(c, false);
      }
    }
    for (std::size_t i = 0; i < hit.size(); ++i)
      if (hit[i] && !observed_[i]) {
        observed_[i] = true;
        changed = true;
      }
    return changed;
  }

  PlannerOptions clearance_options() const {
    PlannerOptions o;
    o.max_passable_cost = inflation_cost(cfg_.plan_clearance, cfg_.inflation);
    return o;
  }

  // A path planned with clearance is blocked once any of its cells loses it.
  bool path_blocked() const {
    for (const auto& c : cells_)
      if (!passable(costmap_, c, path_opts_)) return true;
    return false;
  }

  // Nearest cell passable under `o`, breadth first from `from`.
  std::optional<CellIndex> nearest_passable(const CellIndex& from, const PlannerOptions& o) const {
    if (passable(costmap_, from, o)) return from;
    std::vector<char> seen(costmap_.size(), 0);
    std::deque<CellIndex> q;
    if (!costmap_.contains(from)) return std::nullopt;
    q.push_back(from);
    seen[costmap_.index(from)] = 1;
    while (!q.empty()) {
      const CellIndex c = q.front();
      q.pop_front();
      if (passable(costmap_, c, o)) return c;
      for (const CellIndex n : {CellIndex{c.x + 1, c.y}, CellIndex{c.x - 1, c.y}, CellIndex{c.x, c.y + 1}, CellIndex{c.x, c.y - 1}}) {
        if (!costmap_.contains(n) || seen[costmap_.index(n)]) continue;
        seen[costmap_.index(n)] = 1;
        if ((costmap_.cell_center(n) - costmap_.cell_center(from)).norm() > 0.5) continue;
        q.push_back(n);
      }
    }
    return std::nullopt;
  }

  bool replan(const Pose2D& pose) {
    need_replan_ = false;
    band_.reset();
    ++replans_;
    // Prefer a path with clearance; fall back to anything not lethal.
    for (const PlannerOptions& o : {clearance_options(), PlannerOptions{}}) {
      const auto s = nearest_passable(costmap_.cell_of(pose.position()), o);
      const auto g = nearest_passable(costmap_.cell_of(target().position()), o);
      if (!s || !g) continue;
      const PlanResult plan = plan_global(costmap_, *s, *g, o);
      if (!plan.found) continue;
      cells_ = plan.path;
      path_opts_ = o;
      path_ = shortcut_path(costmap_, path_to_world(costmap_, plan.path), o);
      return true;
    }
    cells_.clear();
    path_.clear();
    return false;
  }

  // Global path from the point closest to the robot onwards.
  std::vector<Point2D> remaining_path(const Pose2D& pose) const {
    if (path_.size() < 2) return {pose.position(), target().position()};
    std::size_t best = 0;
    double bd = 1e300;
    for (std::size_t i = 0; i + 1 < path_.size(); ++i) {
      const Point2D a = path_[i], b = path_[i + 1];
      const Point2D ab = b - a;
      const double u = std::clamp((pose.position() - a).dot(ab) / std::max(ab.dot(ab), 1e-12), 0.0, 1.0);
      const double d = (pose.position() - (a + ab * u)).norm();
      if (d < bd) {
        bd = d;
        best = i;
      }
    }
    std::vector<Point2D> out{pose.position()};
    out.insert(out.end(), path_.begin() + static_cast<std::ptrdiff_t>(best) + 1, path_.end());
    return out;
  }

  // Drops band poses the robot has passed and pins the first pose to it.
  static Trajectory advance_band(Trajectory band, const Pose2D& pose) {
    const std::size_t look = std::min<std::size_t>(band.size() - 1, 10);
    std::size_t best = 0;
    double bd = (band.poses[0].position() - pose.position()).norm();
    for (std::size_t i = 1; i < look; ++i) {
      const double d = (band.poses[i].position() - pose.position()).norm();
      if (d < bd) {
        bd = d;
        best = i;
      }
    }
    band.poses.erase(band.poses.begin(), band.poses.begin() + static_cast<std::ptrdiff_t>(best));
    band.dts.erase(band.dts.begin(), band.dts.begin() + static_cast<std::ptrdiff_t>(best));
    band.poses.front() = pose;
    return band;
  }

  OccupancyGrid map_;
  NavConfig cfg_;
  std::vector<bool> observed_;
  Costmap costmap_;
  std::optional<Pose2D> goal_;
  std::optional<Pose2D> via_;
  std::optional<Trajectory> band_;
  std::vector<CellIndex> cells_;
  std::vector<Point2D> path_;
  PlannerOptions path_opts_{};
  bool need_replan_ = true;
  bool arrived_ = false;
  int streak_ = 0;
  std::size_t replans_ = 0;
};

}  // namespace deskpilot::nav
