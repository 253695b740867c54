#pragma once
//
// Planning costmap: lethal cells from the occupancy grid plus an exponential
// inflation layer computed from an exact distance transform.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "deskpilot/distance_transform.hpp"
#include "deskpilot/errors.hpp"
#include "deskpilot/geom.hpp"
#include "deskpilot/sim/lidar.hpp"
#include "deskpilot/slam/occupancy_grid.hpp"

namespace deskpilot::nav {

using slam::CellIndex;
using slam::OccupancyGrid;

inline constexpr std::uint8_t kFreeCost = 0;
inline constexpr std::uint8_t kMaxInflatedCost = 252;
inline constexpr std::uint8_t kInscribedCost = 253;
inline constexpr std::uint8_t kLethalCost = 254;
inline constexpr std::uint8_t kUnknownCost = 255;

struct InflationParams {
  double radius_inflation = 0.025;    // m
  double cost_scaling_factor = 10.0;  // 1/m
  double range_obstacle = 3.0;        // m, scan returns beyond this are not marked
  double range_raytrace = 3.5;        // m, scan rays clear marks up to this range
  double occupied_threshold = 0.65;
  double local_size = 1.5;            // m, side of the rolling local window

  void validate() const {
    if (!(radius_inflation >= 0.0)) throw ConfigError("inflation: radius_inflation must be >= 0");
    if (!(cost_scaling_factor > 0.0)) throw ConfigError("inflation: cost_scaling_factor must be positive");
    if (!(range_obstacle > 0.0) || !(range_raytrace > 0.0)) throw ConfigError("inflation: ranges must be positive");
    if (!(occupied_threshold > 0.5 && occupied_threshold < 1.0))
      throw ConfigError("inflation: occupied_threshold must lie in (0.5, 1)");
    if (!(local_size > 0.0)) throw ConfigError("inflation: local_size must be positive");
  }
};

/// Cost of a free cell at distance `d` (m) from the nearest obstacle cell.
inline std::uint8_t inflation_cost(double d, const InflationParams& p) {
  if (d <= 0.0) return kLethalCost;
  if (d <= p.radius_inflation) return kInscribedCost;
  const double c = std::round(static_cast<double>(kMaxInflatedCost) * std::exp(-p.cost_scaling_factor * (d - p.radius_inflation)));
  return static_cast<std::uint8_t>(std::clamp(c, 0.0, static_cast<double>(kMaxInflatedCost)));
}

class Costmap {
 public:
  Costmap() = default;
  Costmap(int width, int height, double resolution, Pose2D origin)
      : width_(width), height_(height), resolution_(resolution), origin_(origin),
        cost_(static_cast<std::size_t>(width) * static_cast<std::size_t>(height), kFreeCost) {
    if (width <= 0 || height <= 0) throw InvalidArgument("costmap: dimensions must be positive");
    if (!(resolution > 0.0)) throw InvalidArgument("costmap: resolution must be positive");
  }

  int width() const noexcept { return width_; }
  int height() const noexcept { return height_; }
  double resolution() const noexcept { return resolution_; }
  const Pose2D& origin() const noexcept { return origin_; }
  std::size_t size() const noexcept { return cost_.size(); }

  bool contains(const CellIndex& c) const noexcept { return c.x >= 0 && c.y >= 0 && c.x < width_ && c.y < height_; }
  std::size_t index(const CellIndex& c) const noexcept {
    return static_cast<std::size_t>(c.y) * static_cast<std::size_t>(width_) + static_cast<std::size_t>(c.x);
  }
  // Same cell convention as OccupancyGrid.
  CellIndex cell_of(const Point2D& p) const noexcept {
    const Point2D l = transform_point(inverse(origin_), p);
    return {static_cast<int>(std::floor(l.x / resolution_)), static_cast<int>(std::floor(l.y / resolution_))};
  }
  Point2D cell_center(const CellIndex& c) const noexcept {
    return transform_point(origin_, {(c.x + 0.5) * resolution_, (c.y + 0.5) * resolution_});
  }

  std::uint8_t at(const CellIndex& c) const {
    if (!contains(c)) throw InvalidArgument("costmap: cell out of bounds");
    return cost_[index(c)];
  }
  /// Cost at a world point; outside the map reads as unknown.
  std::uint8_t at_world(const Point2D& p) const {
    const CellIndex c = cell_of(p);
    return contains(c) ? cost_[index(c)] : kUnknownCost;
  }
  void set(const CellIndex& c, std::uint8_t v) {
    if (!contains(c)) throw InvalidArgument("costmap: cell out of bounds");
    cost_[index(c)] = v;
  }
  const std::vector<std::uint8_t>& raw() const noexcept { return cost_; }
  std::vector<std::uint8_t>& raw() noexcept { return cost_; }

  /// Centres of all lethal cells.
  std::vector<Point2D> lethal_points() const {
    std::vector<Point2D> pts;
    for (int y = 0; y < height_; ++y)
      for (int x = 0; x < width_; ++x)
        if (cost_[index({x, y})] == kLethalCost) pts.push_back(cell_center({x, y}));
    return pts;
  }

 private:
  int width_ = 0;
  int height_ = 0;
  double resolution_ = 0.05;
  Pose2D origin_{};
  std::vector<std::uint8_t> cost_;
};

/// Fill `cm` from lethal `sites` and an `unknown` mask (both row-major, may be empty).
inline void inflate(Costmap& cm, const std::vector<bool>& sites, const std::vector<bool>& unknown,
                    const InflationParams& p) {
  const auto dist = distance_transform(sites, cm.width(), cm.height());
  auto& cost = cm.raw();
  for (std::size_t i = 0; i < cost.size(); ++i) {
    if (sites[i]) cost[i] = kLethalCost;
    else if (!unknown.empty() && unknown[i]) cost[i] = kUnknownCost;
    else cost[i] = inflation_cost(dist[i] * cm.resolution(), p);
  }
}

/// Static costmap over the whole grid. Cells never observed are unknown.
/// `extra_lethal` (row-major, same size, optional) marks obstacles seen at runtime.
inline Costmap build_costmap(const OccupancyGrid& grid, const InflationParams& p = {},
                             const std::vector<bool>& extra_lethal = {}) {
  p.validate();
  Costmap cm(grid.width(), grid.height(), grid.resolution(), grid.origin());
  if (!extra_lethal.empty() && extra_lethal.size() != cm.size())
    throw InvalidArgument("build_costmap: extra_lethal size mismatch");
  std::vector<bool> sites(cm.size(), false), unknown(cm.size(), false);
  for (int y = 0; y < grid.height(); ++y)
    for (int x = 0; x < grid.width(); ++x) {
      const std::size_t i = grid.index({x, y});
      if (!grid.known({x, y})) unknown[i] = true;
      else if (grid.probability({x, y}) >= p.occupied_threshold) sites[i] = true;
      if (!extra_lethal.empty() && extra_lethal[i]) sites[i] = true;
    }
  inflate(cm, sites, unknown, p);
  return cm;
}

/// Rolling window of side `local_size` centred on the robot: occupied static
/// cells plus scan returns closer than range_obstacle. Cells the static map
/// has never seen are treated as free here; the scan is the authority locally.
inline Costmap build_local_costmap(const OccupancyGrid& grid, const Pose2D& pose, const sim::LaserScan* scan,
                                   const InflationParams& p = {}) {
  p.validate();
  const double res = grid.resolution();
  const int n = std::max(1, static_cast<int>(std::lround(p.local_size / res)));
  const double half = 0.5 * n * res;
  Costmap cm(n, n, res, {pose.x - half, pose.y - half, 0.0});
  std::vector<bool> sites(cm.size(), false);
  for (int y = 0; y < n; ++y)
    for (int x = 0; x < n; ++x) {
      const CellIndex g = grid.cell_of(cm.cell_center({x, y}));
      if (grid.contains(g) && grid.known(g) && grid.probability(g) >= p.occupied_threshold) sites[cm.index({x, y})] = true;
    }
  if (scan) {
    for (std::size_t i = 0; i < scan->size(); ++i) {
      if (!scan->valid(i) || scan->ranges[i] > p.range_obstacle) continue;
      const CellIndex c = cm.cell_of(transform_point(pose, scan->point(i)));
      if (cm.contains(c)) sites[cm.index(c)] = true;
    }
  }
  inflate(cm, sites, {}, p);
  return cm;
}

}  // namespace deskpilot::nav
