#pragma once
//
// Incremental grid SLAM: Gauss-Newton scan-to-map matching on a bilinear map,
// coarse to fine over a grid pyramid, with log-odds map updates gated by
// linear/angular displacement since the last update. No loop closure.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "deskpilot/errors.hpp"
#include "deskpilot/geom.hpp"
#include "deskpilot/sim/lidar.hpp"
#include "deskpilot/slam/occupancy_grid.hpp"

namespace deskpilot::slam {

using sim::LaserScan;

/// Cells visited by the line from `a` to `b`, both included, 8-connected.
inline std::vector<CellIndex> bresenham(CellIndex a, CellIndex b) {
  std::vector<CellIndex> out;
  const int dx = std::abs(b.x - a.x), sx = a.x < b.x ? 1 : -1;
  const int dy = -std::abs(b.y - a.y), sy = a.y < b.y ? 1 : -1;
  int err = dx + dy;
  out.reserve(static_cast<std::size_t>(std::max(dx, -dy)) + 1);
  for (;;) {
    out.push_back(a);
    if (a == b) break;
    const int e2 = 2 * err;
    if (e2 >= dy) {
      err += dy;
      a.x += sx;
    }
    if (e2 <= dx) {
      err += dx;
      a.y += sy;
    }
  }
  return out;
}

/// Valid beam endpoints in the sensor frame.
inline std::vector<Point2D> scan_endpoints(const LaserScan& scan) {
  std::vector<Point2D> pts;
  pts.reserve(scan.size());
  for (std::size_t i = 0; i < scan.size(); ++i)
    if (scan.valid(i)) pts.push_back(scan.point(i));
  return pts;
}

struct MapUpdateOptions {
  bool clear_no_return = false;  // trace free space to range_max along +inf beams
};

/// Integrates rays from `origin` (world frame) to each endpoint; `hit` rays
/// mark their end cell occupied, the others only clear free space. Each
/// touched cell is updated once: a hit wins over a pass-through, so ray order
/// does not matter.
inline void update_map_rays(OccupancyGrid& grid, const Point2D& origin, const std::vector<Point2D>& hits,
                            const std::vector<Point2D>& clears = {}) {
  const CellIndex start = grid.cell_of(origin);
  if (!grid.contains(start)) throw InvalidArgument("update_map: pose outside grid");
  std::vector<std::uint8_t> mark(grid.size(), 0);  // 1 = miss, 2 = hit
  auto trace = [&](const Point2D& end_world, bool hit) {
    const CellIndex end = grid.cell_of(end_world);
    const auto cells = bresenham(start, end);
    for (std::size_t k = 0; k + 1 < cells.size(); ++k)
      if (grid.contains(cells[k])) {
        auto& m = mark[grid.index(cells[k])];
        m = std::max<std::uint8_t>(m, 1);
      }
    if (grid.contains(end)) {
      auto& m = mark[grid.index(end)];
      m = hit ? 2 : std::max<std::uint8_t>(m, 1);
    }
  };
  for (const auto& p : hits) trace(p, true);
  for (const auto& p : clears) trace(p, false);
  const double l_hit = logit(grid.p_occ()), l_miss = logit(grid.p_free());
  for (int y = 0; y < grid.height(); ++y)
    for (int x = 0; x < grid.width(); ++x) {
      const auto m = mark[grid.index({x, y})];
      if (m == 2) grid.add_log_odds({x, y}, l_hit);
      else if (m == 1) grid.add_log_odds({x, y}, l_miss);
    }
}

/// Integrates one scan taken at `pose`.
inline void update_map(OccupancyGrid& grid, const LaserScan& scan, const Pose2D& pose,
                       const MapUpdateOptions& opt = {}) {
  std::vector<Point2D> hits, clears;
  hits.reserve(scan.size());
  for (std::size_t i = 0; i < scan.size(); ++i) {
    if (scan.valid(i)) {
      hits.push_back(transform_point(pose, scan.point(i)));
    } else if (opt.clear_no_return && std::isinf(scan.ranges[i])) {
      const double a = scan.spec.angle(i);
      const double r = scan.spec.range_max;
      clears.push_back(transform_point(pose, {r * std::cos(a), r * std::sin(a)}));
    }
  }
  update_map_rays(grid, pose.position(), hits, clears);
}

/// Endpoint in the world frame for map pose `pose`.
inline Point2D project_point(const Pose2D& pose, const Point2D& s) { return transform_point(pose, s); }

/// d(project_point)/d(x, y, yaw).
inline Eigen::Matrix<double, 2, 3> endpoint_jacobian(const Point2D& s, double yaw) {
  const double c = std::cos(yaw), sn = std::sin(yaw);
  Eigen::Matrix<double, 2, 3> j;
  j << 1.0, 0.0, -sn * s.x - c * s.y, 0.0, 1.0, c * s.x - sn * s.y;
  return j;
}

struct MatchOptions {
  int max_iters = 10;
  double tol = 1e-4;
  double max_step_translation = 0.5;  // m
  double max_step_rotation = 0.2;     // rad
  double max_condition = 1e8;
  int max_backtracks = 10;
  std::size_t min_points = 30;
};

struct MatchResult {
  Pose2D pose{};
  int iterations = 0;
  bool converged = false;
  std::vector<double> objective;  // after each accepted step, starting with the seed
};

/// Sum of squared mismatches [1 - M(S_i)]^2.
inline double match_objective(const OccupancyGrid& grid, const std::vector<Point2D>& pts, const Pose2D& pose) {
  double f = 0.0;
  for (const auto& s : pts) {
    const double r = 1.0 - grid.interpolate(project_point(pose, s)).value;
    f += r * r;
  }
  return f;
}

inline MatchResult match_points(const OccupancyGrid& grid, const std::vector<Point2D>& pts, const Pose2D& init,
                                const MatchOptions& opt = {}) {
  if (pts.size() < opt.min_points)
    throw InsufficientData("match_scan: " + std::to_string(pts.size()) + " valid beams, need " +
                           std::to_string(opt.min_points));
  MatchResult out;
  out.pose = init;
  double f = match_objective(grid, pts, out.pose);
  out.objective.push_back(f);
  for (int it = 0; it < opt.max_iters; ++it) {
    Eigen::Matrix3d h = Eigen::Matrix3d::Zero();
    Eigen::Vector3d g = Eigen::Vector3d::Zero();
    for (const auto& s : pts) {
      const MapSample m = grid.interpolate(project_point(out.pose, s));
      if (!m.in_bounds) continue;
      const Eigen::RowVector3d row =
          Eigen::RowVector2d(m.gradient.x, m.gradient.y) * endpoint_jacobian(s, out.pose.yaw);
      h.noalias() += row.transpose() * row;
      g.noalias() += row.transpose() * (1.0 - m.value);
    }
    out.iterations = it + 1;
    if (g.norm() < 1e-12) {
      out.converged = true;  // flat neighbourhood around every endpoint
      break;
    }
    const Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> eig(h, Eigen::EigenvaluesOnly);
    const double lo = eig.eigenvalues()(0), hi = eig.eigenvalues()(2);
    const double cond = lo > 0.0 ? hi / lo : std::numeric_limits<double>::infinity();
    if (!(cond <= opt.max_condition)) throw DegenerateGeometry("match_scan: map gradient is rank deficient", cond);
    Eigen::Vector3d step = h.ldlt().solve(g);
    const double tn = std::hypot(step[0], step[1]);
    double scale = 1.0;
    if (tn > opt.max_step_translation) scale = std::min(scale, opt.max_step_translation / tn);
    if (std::abs(step[2]) > opt.max_step_rotation) scale = std::min(scale, opt.max_step_rotation / std::abs(step[2]));
    step *= scale;

    bool accepted = false;
    for (int b = 0; b <= opt.max_backtracks; ++b) {
      const Pose2D cand{out.pose.x + step[0], out.pose.y + step[1], wrap_angle(out.pose.yaw + step[2])};
      const double fc = match_objective(grid, pts, cand);
      if (fc <= f) {
        out.pose = cand;
        f = fc;
        out.objective.push_back(f);
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted || step.norm() < opt.tol) {
      out.converged = true;
      break;
    }
  }
  return out;
}

inline Pose2D match_scan(const OccupancyGrid& grid, const LaserScan& scan, const Pose2D& init, int iters = 10,
                         double tol = 1e-4) {
  MatchOptions opt;
  opt.max_iters = iters;
  opt.tol = tol;
  return match_points(grid, scan_endpoints(scan), init, opt).pose;
}

struct SlamConfig {
  int levels = 2;
  double linear_update_thresh = 0.4;    // m
  double angular_update_thresh = 0.06;  // rad
  int gn_iters_fine = 10;
  int gn_iters_coarse = 5;
  double gn_tol = 1e-4;
  int map_size = 80;           // cells per side at the finest level
  double map_resolution = 0.05;
  double map_start_x = 0.5;    // fraction of the map width left of the start pose
  double map_start_y = 0.5;
  double p_free = 0.4;
  double p_occ = 0.9;
  double trajectory_update_rate = 4.0;  // Hz
  std::size_t min_valid_beams = 30;

  void validate() const {
    if (levels < 1) throw ConfigError("slam: levels must be >= 1");
    if (map_size < (1 << levels)) throw ConfigError("slam: map too small for the level count");
    if (!(map_resolution > 0.0)) throw ConfigError("slam: map_resolution must be positive");
    if (!(linear_update_thresh >= 0.0) || !(angular_update_thresh >= 0.0))
      throw ConfigError("slam: update thresholds must be >= 0");
    if (!(0.0 < p_free && p_free < 0.5 && 0.5 < p_occ && p_occ < 1.0))
      throw ConfigError("slam: need 0 < p_free < 0.5 < p_occ < 1");
    if (!(trajectory_update_rate > 0.0)) throw ConfigError("slam: trajectory_update_rate must be positive");
    if (gn_iters_fine < 1 || gn_iters_coarse < 1) throw ConfigError("slam: iteration caps must be >= 1");
  }
};

struct TrajectoryPoint {
  double stamp = 0.0;
  Pose2D pose{};
};

struct SlamState {
  std::vector<OccupancyGrid> grids;  // [0] finest
  Pose2D pose{};
  Pose2D last_update_pose{};
  std::vector<TrajectoryPoint> trajectory;
  bool initialized = false;
  std::size_t map_updates = 0;
  double last_trajectory_stamp = -std::numeric_limits<double>::infinity();
};

inline SlamState make_slam_state(const SlamConfig& cfg) {
  cfg.validate();
  SlamState st;
  const double side = cfg.map_size * cfg.map_resolution;
  OccupancyGrid base(cfg.map_size, cfg.map_size, cfg.map_resolution,
                     {-cfg.map_start_x * side, -cfg.map_start_y * side, 0.0}, cfg.p_free, cfg.p_occ);
  st.grids.push_back(base);
  for (int l = 1; l < cfg.levels; ++l) st.grids.push_back(st.grids.back().coarser());
  return st;
}

enum class SlamStepStatus { Initialized, Tracked, MapUpdated, Degenerate, InsufficientBeams };

/// One scan through the pipeline. `motion_hint` (relative motion since the
/// previous scan, e.g. from odometry) seeds the coarsest match when given.
inline SlamStepStatus slam_step(SlamState& st, const LaserScan& scan, const SlamConfig& cfg,
                                const std::optional<Pose2D>& motion_hint = std::nullopt) {
  if (st.grids.empty()) throw InvalidArgument("slam_step: state has no grids (use make_slam_state)");
  auto record = [&] {
    if (scan.stamp - st.last_trajectory_stamp >= 1.0 / cfg.trajectory_update_rate - 1e-9) {
      st.trajectory.push_back({scan.stamp, st.pose});
      st.last_trajectory_stamp = scan.stamp;
    }
  };
  if (!st.initialized) {
    for (auto& g : st.grids) update_map(g, scan, st.pose);
    st.last_update_pose = st.pose;
    st.initialized = true;
    st.map_updates = 1;
    record();
    return SlamStepStatus::Initialized;
  }
  const auto pts = scan_endpoints(scan);
  if (pts.size() < cfg.min_valid_beams) {
    record();
    return SlamStepStatus::InsufficientBeams;
  }
  Pose2D estimate = motion_hint ? compose(st.pose, *motion_hint) : st.pose;
  try {
    for (int l = static_cast<int>(st.grids.size()) - 1; l >= 0; --l) {
      MatchOptions opt;
      opt.max_iters = l == 0 ? cfg.gn_iters_fine : cfg.gn_iters_coarse;
      opt.tol = cfg.gn_tol;
      opt.min_points = cfg.min_valid_beams;
      estimate = match_points(st.grids[static_cast<std::size_t>(l)], pts, estimate, opt).pose;
    }
  } catch (const DegenerateGeometry&) {
    record();
    return SlamStepStatus::Degenerate;
  }
  st.pose = estimate;
  record();
  const Pose2D d = between(st.last_update_pose, st.pose);
  if (std::hypot(d.x, d.y) > cfg.linear_update_thresh || std::abs(d.yaw) > cfg.angular_update_thresh) {
    for (auto& g : st.grids) update_map(g, scan, st.pose);
    st.last_update_pose = st.pose;
    ++st.map_updates;
    return SlamStepStatus::MapUpdated;
  }
  return SlamStepStatus::Tracked;
}

inline void write_trajectory_csv(std::ostream& os, const std::vector<TrajectoryPoint>& traj) {
  os << "stamp,x,y,yaw\n";
  char buf[160];
  for (const auto& p : traj) {
    std::snprintf(buf, sizeof buf, "%.6f,%.9g,%.9g,%.9g\n", p.stamp, p.pose.x, p.pose.y, p.pose.yaw);
    os << buf;
  }
}

}  // namespace deskpilot::slam
