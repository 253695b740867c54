#pragma once
//
// 4-connected A* over a costmap with a Manhattan heuristic.
//
// Step cost is 1 + c/253 for entering a cell of cost c. Costs are accumulated
// in integer units of 1/253 so equal-cost paths compare exactly.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <queue>
#include <vector>

#include "deskpilot/errors.hpp"
#include "deskpilot/nav/costmap.hpp"

namespace deskpilot::nav {

inline constexpr std::int64_t kCostUnit = 253;

struct PlannerOptions {
  // Cells with a cost above this are impassable. The default lets the robot
  // centre cross inscribed cells but never lethal or unknown ones.
  std::uint8_t max_passable_cost = kInscribedCost;
};

struct PlanResult {
  bool found = false;
  std::vector<CellIndex> path;  // start .. goal
  std::int64_t cost_units = 0;  // in 1/253 steps
  std::size_t expanded = 0;

  double cost() const noexcept { return static_cast<double>(cost_units) / static_cast<double>(kCostUnit); }
};

inline std::int64_t step_cost_units(std::uint8_t c) noexcept { return kCostUnit + c; }

inline bool passable(const Costmap& cm, const CellIndex& c, const PlannerOptions& opt) {
  return cm.contains(c) && cm.at(c) <= opt.max_passable_cost;
}

inline PlanResult plan_global(const Costmap& cm, const CellIndex& start, const CellIndex& goal,
                              const PlannerOptions& opt = {}) {
  if (!passable(cm, start, opt)) throw InvalidArgument("plan_global: start cell is out of bounds or blocked");
  if (!passable(cm, goal, opt)) throw InvalidArgument("plan_global: goal cell is out of bounds or blocked");

  PlanResult res;
  if (start == goal) {
    res.found = true;
    res.path = {start};
    return res;
  }
  struct Node {
    std::int64_t f, g;
    std::uint64_t order;
    std::size_t idx;
  };
  // Smallest f first; on ties the larger g (deeper node), then FIFO.
  auto worse = [](const Node& a, const Node& b) {
    if (a.f != b.f) return a.f > b.f;
    if (a.g != b.g) return a.g < b.g;
    return a.order > b.order;
  };
  std::priority_queue<Node, std::vector<Node>, decltype(worse)> open(worse);
  constexpr std::int64_t kInf = std::numeric_limits<std::int64_t>::max();
  std::vector<std::int64_t> g(cm.size(), kInf);
  std::vector<std::size_t> parent(cm.size(), std::numeric_limits<std::size_t>::max());
  std::vector<char> closed(cm.size(), 0);
  const int w = cm.width();
  auto h = [&](int x, int y) { return kCostUnit * (std::abs(x - goal.x) + std::abs(y - goal.y)); };

  std::uint64_t order = 0;
  const std::size_t s = cm.index(start), t = cm.index(goal);
  g[s] = 0;
  open.push({h(start.x, start.y), 0, order++, s});
  constexpr int dx[4] = {1, -1, 0, 0}, dy[4] = {0, 0, 1, -1};
  while (!open.empty()) {
    const Node cur = open.top();
    open.pop();
    if (closed[cur.idx] || cur.g != g[cur.idx]) continue;
    closed[cur.idx] = 1;
    ++res.expanded;
    if (cur.idx == t) break;
    const int cx = static_cast<int>(cur.idx % static_cast<std::size_t>(w)), cy = static_cast<int>(cur.idx / static_cast<std::size_t>(w));
    for (int k = 0; k < 4; ++k) {
      const CellIndex n{cx + dx[k], cy + dy[k]};
      if (!passable(cm, n, opt)) continue;
      const std::size_t ni = cm.index(n);
      if (closed[ni]) continue;
      const std::int64_t ng = cur.g + step_cost_units(cm.raw()[ni]);
      if (ng < g[ni]) {
        g[ni] = ng;
        parent[ni] = cur.idx;
        open.push({ng + h(n.x, n.y), ng, order++, ni});
      }
    }
  }
  if (!closed[t]) return res;
  res.found = true;
  res.cost_units = g[t];
  for (std::size_t i = t;; i = parent[i]) {
    res.path.push_back({static_cast<int>(i % static_cast<std::size_t>(w)), static_cast<int>(i / static_cast<std::size_t>(w))});
    if (i == s) break;
  }
  std::reverse(res.path.begin(), res.path.end());
  return res;
}

/// Cell path to world-space polyline through cell centres.
inline std::vector<Point2D> path_to_world(const Costmap& cm, const std::vector<CellIndex>& path) {
  std::vector<Point2D> pts;
  pts.reserve(path.size());
  for (const auto& c : path) pts.push_back(cm.cell_center(c));
  return pts;
}

/// True if the segment a-b stays on passable cells (sampled at quarter-cell steps).
inline bool segment_passable(const Costmap& cm, const Point2D& a, const Point2D& b, const PlannerOptions& opt) {
  const double len = (b - a).norm();
  const int n = std::max(1, static_cast<int>(std::ceil(len / (0.25 * cm.resolution()))));
  for (int i = 0; i <= n; ++i) {
    const Point2D p = a + (b - a) * (static_cast<double>(i) / n);
    if (!passable(cm, cm.cell_of(p), opt)) return false;
  }
  return true;
}

/// Greedy line-of-sight shortcutting of a staircase path.
inline std::vector<Point2D> shortcut_path(const Costmap& cm, const std::vector<Point2D>& pts, const PlannerOptions& opt) {
  if (pts.size() <= 2) return pts;
  std::vector<Point2D> out{pts.front()};
  std::size_t i = 0;
  while (i + 1 < pts.size()) {
    std::size_t j = pts.size() - 1;
    while (j > i + 1 && !segment_passable(cm, pts[i], pts[j], opt)) --j;
    out.push_back(pts[j]);
    i = j;
  }
  return out;
}

}  // namespace deskpilot::nav
