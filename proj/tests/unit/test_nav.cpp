#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <queue>
#include <random>

#include "deskpilot/nav/astar.hpp"
#include "deskpilot/nav/costmap.hpp"
#include "deskpilot/nav/navigator.hpp"
#include "deskpilot/nav/teb.hpp"
#include "deskpilot/sim/lidar.hpp"
#include "deskpilot/sim/vehicle.hpp"
#include "deskpilot/sim/world.hpp"
#include "deskpilot/slam/evaluation.hpp"

using namespace deskpilot;
using namespace deskpilot::nav;

namespace {

OccupancyGrid room_grid(const sim::WorldModel& w, int n, double res, Point2D origin) {
  OccupancyGrid g(n, n, res, {origin.x, origin.y, 0.0});
  const auto occ = slam::rasterize_world(w, g);
  for (int y = 0; y < n; ++y)
    for (int x = 0; x < n; ++x) g.set_probability({x, y}, occ[g.index({x, y})] ? 0.9 : 0.4);
  return g;
}

sim::WorldModel square_room(double half) {
  sim::WorldModel w;
  w.add_box({0.0, 0.0}, 2 * half, 2 * half, 0.0);
  return w;
}

// Plain Dijkstra in the same integer cost units.
std::optional<std::int64_t> dijkstra(const Costmap& cm, CellIndex s, CellIndex t, const PlannerOptions& o) {
  std::vector<std::int64_t> d(cm.size(), std::numeric_limits<std::int64_t>::max());
  using Item = std::pair<std::int64_t, std::size_t>;
  std::priority_queue<Item, std::vector<Item>, std::greater<>> q;
  d[cm.index(s)] = 0;
  q.push({0, cm.index(s)});
  while (!q.empty()) {
    const auto [du, u] = q.top();
    q.pop();
    if (du != d[u]) continue;
    const int x = static_cast<int>(u % cm.width()), y = static_cast<int>(u / cm.width());
    for (const CellIndex n : {CellIndex{x + 1, y}, CellIndex{x - 1, y}, CellIndex{x, y + 1}, CellIndex{x, y - 1}}) {
      if (!cm.contains(n) || cm.at(n) > o.max_passable_cost) continue;
      const std::int64_t nd = du + 253 + cm.at(n);
      if (nd < d[cm.index(n)]) {
        d[cm.index(n)] = nd;
        q.push({nd, cm.index(n)});
      }
    }
  }
  if (d[cm.index(t)] == std::numeric_limits<std::int64_t>::max()) return std::nullopt;
  return d[cm.index(t)];
}

// Cumulative pose error of driving the band's controls through the vehicle
// model with actuator dynamics disabled.
std::pair<double, double> integrate_band(const Trajectory& b, const TebConfig& cfg) {
  sim::VehicleSpec spec;
  spec.throttle_time_constant = 0.0;
  spec.steering_slew_rate = std::numeric_limits<double>::infinity();
  sim::VehicleState st;
  st.pose = b.poses[0];
  double exy = 0.0, eyaw = 0.0;
  for (std::size_t k = 0; k + 1 < b.size(); ++k) {
    const Control c = extract_controls_at(b, k, cfg.wheelbase);
    st.commanded_throttle = c.v / spec.max_speed();
    st.commanded_steering = c.delta / spec.steering_limit;
    const int n = static_cast<int>(std::ceil(b.dts[k] / 0.05));
    for (int i = 0; i < n; ++i) st = sim::step_vehicle(st, spec, b.dts[k] / n);
    exy = std::max(exy, (st.pose.position() - b.poses[k + 1].position()).norm());
    eyaw = std::max(eyaw, std::abs(angle_diff(st.pose.yaw, b.poses[k + 1].yaw)));
  }
  return {exy, eyaw};
}

TebResult solve(const std::vector<Point2D>& path, Pose2D s, Pose2D g, const std::vector<Point2D>& obs, int cycles = 20) {
  return solve_band(path, s, g, obs, TebConfig{}, cycles);
}

}  // namespace

// ---------------------------------------------------------------------------
// Costmap

TEST(Inflation, Examples) {
  const InflationParams p;
  EXPECT_EQ(inflation_cost(0.0, p), kLethalCost);
  EXPECT_EQ(inflation_cost(0.025, p), kInscribedCost);
  EXPECT_EQ(inflation_cost(0.0250001, p), 252);
  const double d1 = 0.025 + std::log(252.0) / 10.0;
  EXPECT_EQ(inflation_cost(d1, p), 1);
  EXPECT_EQ(inflation_cost(d1 + 0.1, p), 0);
}

TEST(Inflation, MonotoneInDistance) {
  const InflationParams p;
  int prev = 255;
  for (double d = 0.0; d < 1.0; d += 0.001) {
    const int c = inflation_cost(d, p);
    EXPECT_LE(c, prev) << d;
    prev = c;
  }
}

TEST(BuildCostmap, LethalIffOccupiedAndMonotone) {
  const auto w = square_room(0.8);
  OccupancyGrid g = room_grid(w, 40, 0.05, {-1.0, -1.0});
  g.set_probability({5, 5}, 0.5);  // below threshold: not lethal
  g.set_probability({20, 30}, 0.65);
  const Costmap cm = build_costmap(g);
  for (int y = 0; y < 40; ++y)
    for (int x = 0; x < 40; ++x) {
      const bool occ = g.probability({x, y}) >= 0.65;
      EXPECT_EQ(cm.at({x, y}) == kLethalCost, occ) << x << "," << y;
    }
  // Moving away from the lone obstacle cell never raises the cost.
  for (int x = 21; x < 30; ++x) EXPECT_LE(cm.at({x + 1, 30}), cm.at({x, 30}));
}

TEST(BuildCostmap, UnknownAndExtraLethal) {
  OccupancyGrid g(10, 10, 0.05, {});
  for (int x = 0; x < 10; ++x)
    for (int y = 0; y < 5; ++y) g.set_probability({x, y}, 0.4);
  std::vector<bool> extra(100, false);
  extra[g.index({2, 2})] = true;
  const Costmap cm = build_costmap(g, {}, extra);
  EXPECT_EQ(cm.at({2, 2}), kLethalCost);
  EXPECT_EQ(cm.at({0, 7}), kUnknownCost);
  EXPECT_EQ(cm.at_world({-1.0, 0.0}), kUnknownCost);
  EXPECT_THROW(build_costmap(g, {}, std::vector<bool>(3, false)), InvalidArgument);
}

TEST(LocalCostmap, CentredWindowIgnoresFarReturns) {
  const auto w = square_room(2.0);
  const OccupancyGrid g = room_grid(w, 100, 0.05, {-2.5, -2.5});
  InflationParams p;
  p.range_obstacle = 0.5;
  sim::LidarSpec spec;
  sim::LaserScan scan{0.0, std::vector<double>(spec.num_beams, sim::kNoReturn), spec};
  scan.ranges[180] = 0.4;  // straight ahead
  scan.ranges[90] = 0.6;   // beyond range_obstacle
  const Costmap cm = build_local_costmap(g, {0.0, 0.0, 0.0}, &scan, p);
  EXPECT_EQ(cm.width(), 30);
  EXPECT_NEAR(cm.origin().x, -0.75, 1e-12);
  EXPECT_EQ(cm.at_world({0.4, 0.0}), kLethalCost);
  EXPECT_NE(cm.at_world({0.0, -0.6}), kLethalCost);
  EXPECT_EQ(cm.lethal_points().size(), 1u);
}

// ---------------------------------------------------------------------------
// A*

TEST(AStar, Examples) {
  Costmap cm(10, 10, 0.05, {});
  const PlanResult same = plan_global(cm, {3, 3}, {3, 3});
  ASSERT_TRUE(same.found);
  EXPECT_EQ(same.path.size(), 1u);
  EXPECT_EQ(same.cost_units, 0);

  const PlanResult r = plan_global(cm, {0, 0}, {9, 9});
  ASSERT_TRUE(r.found);
  EXPECT_EQ(r.path.size(), 19u);
  EXPECT_DOUBLE_EQ(r.cost(), 18.0);
  EXPECT_EQ(r.path.front(), (CellIndex{0, 0}));
  EXPECT_EQ(r.path.back(), (CellIndex{9, 9}));
  for (std::size_t i = 1; i < r.path.size(); ++i)
    EXPECT_EQ(std::abs(r.path[i].x - r.path[i - 1].x) + std::abs(r.path[i].y - r.path[i - 1].y), 1);
}

TEST(AStar, EnclosedGoalFailsAndBlockedEndpointsThrow) {
  Costmap cm(10, 10, 0.05, {});
  for (int x = 4; x <= 6; ++x)
    for (int y = 4; y <= 6; ++y)
      if (x != 5 || y != 5) cm.set({x, y}, kLethalCost);
  const PlanResult r = plan_global(cm, {0, 0}, {5, 5});
  EXPECT_FALSE(r.found);
  EXPECT_TRUE(r.path.empty());
  EXPECT_THROW(plan_global(cm, {4, 4}, {0, 0}), InvalidArgument);
  EXPECT_THROW(plan_global(cm, {0, 0}, {10, 0}), InvalidArgument);
  cm.set({0, 9}, kUnknownCost);
  EXPECT_THROW(plan_global(cm, {0, 0}, {0, 9}), InvalidArgument);
}

TEST(AStar, EqualsDijkstraOnRandomCostmaps) {
  std::mt19937_64 rng(7);
  std::uniform_int_distribution<int> cost(0, 252), cell(0, 49), pct(0, 99);
  int found = 0;
  for (int trial = 0; trial < 100; ++trial) {
    Costmap cm(50, 50, 0.05, {});
    for (int y = 0; y < 50; ++y)
      for (int x = 0; x < 50; ++x) {
        const int p = pct(rng);
        cm.set({x, y}, p < 20 ? kLethalCost : p < 25 ? kInscribedCost : static_cast<std::uint8_t>(cost(rng)));
      }
    CellIndex s{cell(rng), cell(rng)}, t{cell(rng), cell(rng)};
    cm.set(s, 0);
    cm.set(t, 0);
    const PlanResult r = plan_global(cm, s, t);
    const auto ref = dijkstra(cm, s, t, PlannerOptions{});
    ASSERT_EQ(r.found, ref.has_value()) << trial;
    if (!ref) continue;
    ++found;
    EXPECT_EQ(r.cost_units, *ref) << trial;
    // The returned path realizes the reported cost.
    std::int64_t sum = 0;
    for (std::size_t i = 1; i < r.path.size(); ++i) sum += step_cost_units(cm.at(r.path[i]));
    EXPECT_EQ(sum, r.cost_units);
  }
  EXPECT_GT(found, 50);
}

TEST(AStar, ShortcutKeepsPassability) {
  Costmap cm(40, 40, 0.05, {});
  for (int y = 0; y < 30; ++y) cm.set({20, y}, kLethalCost);
  const PlanResult r = plan_global(cm, {2, 2}, {37, 2});
  ASSERT_TRUE(r.found);
  const auto pts = shortcut_path(cm, path_to_world(cm, r.path), {});
  EXPECT_LT(pts.size(), r.path.size());
  for (std::size_t i = 1; i < pts.size(); ++i) EXPECT_TRUE(segment_passable(cm, pts[i - 1], pts[i], {}));
}

// ---------------------------------------------------------------------------
// Band construction

TEST(InitBand, Examples) {
  const TebConfig cfg;
  const Trajectory b = init_band({{0, 0}, {1, 0}}, {0, 0, 0}, {1, 0, 0}, cfg);
  EXPECT_NEAR(b.duration(), 5.0, 1e-9);
  EXPECT_EQ(b.size(), 11u);
  for (double dt : b.dts) EXPECT_GT(dt, 0.0);

  const Trajectory two = init_band({{0, 0}, {0.05, 0}}, {0, 0, 0}, {0.05, 0, 0}, cfg);
  EXPECT_EQ(two.size(), 2u);
  EXPECT_EQ(two.dts.size(), 1u);

  const Trajectory arc = init_band({{0, 0}, {0.5, 0}, {0.5, 0.5}}, {0, 0, 0}, {0.5, 0.5, kPi / 2}, cfg);
  for (std::size_t i = 1; i + 1 < arc.size(); ++i) {
    const Point2D d = arc.poses[i + 1].position() - arc.poses[i - 1].position();
    EXPECT_NEAR(angle_diff(arc.poses[i].yaw, std::atan2(d.y, d.x)), 0.0, 1e-12) << i;
  }
  EXPECT_EQ(arc.poses.front().yaw, 0.0);
  EXPECT_NEAR(arc.poses.back().yaw, kPi / 2, 1e-12);
}

TEST(InitBand, ReverseHeadingsFaceAwayFromTravel) {
  const TebConfig cfg;
  const Trajectory b = init_band({{0, 0}, {-1, 0}}, {0, 0, 0}, {-1, 0, 0}, cfg);
  for (std::size_t i = 1; i + 1 < b.size(); ++i) EXPECT_NEAR(b.poses[i].yaw, 0.0, 1e-12);
  EXPECT_LT(segment_kinematics(b.poses[0], b.poses[1], b.dts[0]).v, 0.0);
}

TEST(AdjustResolution, Examples) {
  const TebConfig cfg;
  Trajectory b;
  for (int i = 0; i < 5; ++i) b.poses.push_back({0.06 * i, 0, 0});
  b.dts.assign(4, cfg.dt_ref);
  const Trajectory same = adjust_resolution(b, cfg);
  EXPECT_EQ(same.size(), b.size());
  EXPECT_EQ(same.dts, b.dts);

  b.dts[1] = 1.0;
  const Trajectory split = adjust_resolution(b, cfg);
  ASSERT_EQ(split.size(), 6u);
  EXPECT_NEAR(split.dts[1], 0.5, 1e-12);
  EXPECT_NEAR(split.dts[2], 0.5, 1e-12);
  EXPECT_NEAR(split.duration(), b.duration(), 1e-12);

  Trajectory tiny;
  tiny.poses = {{0, 0, 0}, {0.01, 0, 0}, {0.02, 0, 0}};
  tiny.dts = {0.05, 0.05};
  const Trajectory merged = adjust_resolution(tiny, cfg);
  EXPECT_EQ(merged.size(), 2u);
  EXPECT_EQ(merged.poses.front().x, 0.0);
  EXPECT_EQ(merged.poses.back().x, 0.02);
  EXPECT_NEAR(merged.duration(), 0.1, 1e-12);
}

// ---------------------------------------------------------------------------
// Penalties and optimization

TEST(Penalties, NoLeakageOnFeasibleTrajectories) {
  const TebConfig cfg;
  const PenaltyBounds exact = PenaltyBounds::exact(cfg);
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 200; ++trial) {
    // Constant-speed arcs within every bound.
    const double v = 0.2 * u(rng), r = 0.25 + 2.0 * u(rng), dt = 0.1 + 0.3 * u(rng);
    const double w = std::min(v / r, 0.99 * cfg.ang_vel_max);
    Trajectory b;
    Pose2D p{};
    b.poses.push_back(p);
    for (int k = 0; k < 8; ++k) {
      p = compose(p, se2_exp({v, 0.0, w}, dt));
      b.poses.push_back(p);
      b.dts.push_back(dt);
    }
    const PenaltySums s = hinge_penalties(b, {{10.0, 10.0}}, exact);
    EXPECT_EQ(s.velocity, 0.0);
    EXPECT_EQ(s.angular_velocity, 0.0);
    EXPECT_EQ(s.turning_radius, 0.0);
    EXPECT_NEAR(s.acceleration, 0.0, 1e-9);
    EXPECT_NEAR(s.angular_acceleration, 0.0, 1e-9);
    EXPECT_EQ(s.obstacle, 0.0);
    for (std::size_t k = 0; k + 1 < b.size(); ++k)
      EXPECT_NEAR(nonholonomic_residual(b.poses[k], b.poses[k + 1]), 0.0, 1e-12);
  }
  EXPECT_EQ(hinge_above(1.0, 1.0), 0.0);
  EXPECT_EQ(hinge_below(1.0, 1.0), 0.0);
  EXPECT_EQ(hinge_above(1.5, 1.0), 0.5);
}

TEST(OptimizeTeb, StraightCorridor) {
  const TebConfig cfg;
  const TebResult r = solve({{0, 0}, {1, 0}}, {0, 0, 0}, {1, 0, 0}, {});
  ASSERT_TRUE(r.check.feasible) << r.check.reason;
  EXPECT_GE(r.timed.duration(), 5.0);
  EXPECT_LE(r.timed.duration(), 6.5);
  EXPECT_NEAR(hinge_penalties(r.timed, {}, PenaltyBounds::exact(cfg)).total(), 0.0, 1e-9);
  for (double dt : r.timed.dts) EXPECT_GT(dt, 0.0);
  EXPECT_EQ(r.timed.poses.front().x, 0.0);
  EXPECT_EQ(r.timed.poses.back().x, 1.0);
}

TEST(OptimizeTeb, ClearsObstacleNearStraightBand) {
  // Wall of points 0.1 m to the side of the straight line.
  std::vector<Point2D> obs;
  for (double x = 0.7; x <= 0.9; x += 0.05) obs.push_back({x, 0.1});
  const TebResult r = solve({{0, 0}, {1.6, 0}}, {0, 0, 0}, {1.6, 0, 0}, obs, 30);
  ASSERT_TRUE(r.check.feasible) << r.check.reason;
  EXPECT_GE(r.check.min_clearance, 0.2);
}

TEST(OptimizeTeb, ObjectiveNonIncreasingWithinOuterIterations) {
  const TebConfig cfg;
  Trajectory b = init_band({{0, 0}, {0.8, 0}, {0.8, 0.8}}, {0, 0, 0}, {0.8, 0.8, kPi / 2}, cfg);
  for (int cycle = 0; cycle < 5; ++cycle) {
    const TebResult r = optimize_teb(b, {{0.5, 0.3}}, cfg);
    for (const auto& seq : r.accepted)
      for (std::size_t i = 1; i < seq.size(); ++i) EXPECT_LE(seq[i], seq[i - 1]);
    b = r.band;
  }
}

TEST(OptimizeTeb, ForwardIntegrationReproducesBand) {
  struct Case {
    std::vector<Point2D> path;
    Pose2D s, g;
  };
  const std::vector<Case> cases = {
      {{{0, 0}, {1, 0}}, {0, 0, 0}, {1, 0, 0}},
      {{{0, 0}, {1.2, -0.6}}, {0, 0, 0}, {1.2, -0.6, 0}},
      {{{0, 0}, {0.6, 0}, {0.6, 0.6}}, {0, 0, 0}, {0.6, 0.6, kPi / 2}},
      {{{0, 0}, {-0.8, 0}}, {0, 0, 0}, {-0.8, 0, 0}},
  };
  for (const auto& c : cases) {
    const TebResult r = solve(c.path, c.s, c.g, {});
    ASSERT_TRUE(r.check.feasible) << r.check.reason;
    const auto [exy, eyaw] = integrate_band(r.timed, TebConfig{});
    EXPECT_LT(exy, 0.05);
    EXPECT_LT(eyaw, 0.1);
  }
}

TEST(OptimizeTeb, RejectsInvalidConfig) {
  TebConfig cfg;
  cfg.wheelbase = 0.2;
  EXPECT_THROW(cfg.validate(), ConfigError);
  Trajectory b = init_band({{0, 0}, {1, 0}}, {0, 0, 0}, {1, 0, 0}, TebConfig{});
  EXPECT_THROW(optimize_teb(b, {}, cfg), ConfigError);
}

// ---------------------------------------------------------------------------
// Controls

TEST(ExtractControls, Examples) {
  const TebConfig cfg;
  Trajectory b{{{0, 0, 0}, {0.1, 0, 0}}, {0.5}};
  const Control c = extract_controls(b, cfg.wheelbase);
  EXPECT_NEAR(c.v, 0.2, 1e-12);
  EXPECT_EQ(c.delta, 0.0);

  const double R = 0.24515, th = 0.02;
  Trajectory arc{{{0, 0, 0}, {R * std::sin(th), R * (1 - std::cos(th)), th}}, {0.3}};
  EXPECT_NEAR(extract_controls(arc, cfg.wheelbase).delta, std::atan(0.14154 / 0.24515), 1e-5);
  EXPECT_NEAR(extract_controls(arc, cfg.wheelbase).delta, 0.5236, 1e-4);

  Trajectory back{{{0, 0, 0}, {-0.05, 0, 0}}, {0.5}};
  EXPECT_LT(extract_controls(back, cfg.wheelbase).v, 0.0);

  Trajectory still{{{0, 0, 0}, {0, 0, 0.1}}, {0.5}};
  EXPECT_EQ(extract_controls(still, cfg.wheelbase).delta, 0.0);

  Trajectory bad{{{0, 0, 0}, {0.1, 0, 0}}, {0.0}};
  EXPECT_THROW(extract_controls(bad, cfg.wheelbase), InvalidArgument);
}

TEST(NormalizeCommand, Examples) {
  const TebConfig cfg;
  const auto a = normalize_command(0.2, 0.0, cfg);
  EXPECT_DOUBLE_EQ(a.throttle, 1.0);
  EXPECT_DOUBLE_EQ(a.steering, 0.0);
  const auto b = normalize_command(0.0, 0.5236, cfg);
  EXPECT_DOUBLE_EQ(b.steering, 1.0);
  const auto c = normalize_command(0.4, -1.2, cfg);
  EXPECT_DOUBLE_EQ(c.throttle, 1.0);
  EXPECT_DOUBLE_EQ(c.steering, -1.0);
  const auto d = normalize_command(std::nan(""), 0.1, cfg);
  EXPECT_EQ(d.throttle, 0.0);
}

TEST(NormalizeCommand, AlwaysInUnitBox) {
  const TebConfig cfg;
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(-10.0, 10.0);
  for (int i = 0; i < 1000; ++i) {
    const auto c = normalize_command(u(rng), u(rng), cfg);
    EXPECT_LE(std::abs(c.throttle), 1.0);
    EXPECT_LE(std::abs(c.steering), 1.0);
  }
}

TEST(ToActuation, RescalesToVehicleTopSpeed) {
  const sim::VehicleSpec v;
  const sim::Command c = to_actuation({1.0, -1.0}, TebConfig{}, v);
  EXPECT_NEAR(c.throttle * v.max_speed(), 0.2, 1e-12);
  EXPECT_NEAR(c.steering, -1.0, 1e-12);
}

// ---------------------------------------------------------------------------
// Navigator

TEST(Navigator, NoGoalIsAnError) {
  Navigator nav(room_grid(square_room(1.0), 50, 0.05, {-1.25, -1.25}), NavConfig{});
  EXPECT_THROW(nav.step({0, 0, 0}, nullptr), InvalidArgument);
  EXPECT_THROW(nav.set_goal({std::nan(""), 0, 0}), InvalidArgument);
}

TEST(Navigator, ArrivedWithinTolerance) {
  Navigator nav(room_grid(square_room(1.0), 50, 0.05, {-1.25, -1.25}), NavConfig{});
  nav.set_goal({0.5, 0.0, 0.0});
  const NavOutput out = nav.step({0.48, 0.01, 0.02}, nullptr);
  EXPECT_EQ(out.status, NavStatus::Arrived);
  EXPECT_EQ(out.command.throttle, 0.0);
  EXPECT_EQ(out.command.steering, 0.0);
}

TEST(Navigator, DrivesTowardGoalWithBoundedCommands) {
  Navigator nav(room_grid(square_room(1.5), 70, 0.05, {-1.75, -1.75}), NavConfig{});
  nav.set_goal({1.0, 0.0, 0.0});
  const NavOutput out = nav.step({0.0, 0.0, 0.0}, nullptr);
  EXPECT_EQ(out.status, NavStatus::Driving);
  EXPECT_TRUE(out.band_feasible);
  EXPECT_TRUE(out.replanned);
  EXPECT_GT(out.command.throttle, 0.0);
  EXPECT_LE(std::abs(out.command.throttle), 1.0);
  EXPECT_LE(std::abs(out.command.steering), 1.0);
  EXPECT_GE(out.global_path.size(), 2u);
}

TEST(Navigator, UnreachableGoal) {
  sim::WorldModel w = square_room(1.5);
  w.add_box({1.0, 0.0}, 0.4, 0.4, 0.0);  // goal sits inside a closed box
  Navigator nav(room_grid(w, 70, 0.05, {-1.75, -1.75}), NavConfig{});
  nav.set_goal({1.0, 0.0, 0.0});
  const NavOutput out = nav.step({-1.0, 0.0, 0.0}, nullptr);
  EXPECT_EQ(out.status, NavStatus::Unreachable);
  EXPECT_EQ(out.command.throttle, 0.0);
}

TEST(Navigator, InsertedObstacleTriggersReplanWithinTwoCycles) {
  const sim::WorldModel room = square_room(1.5);
  Navigator nav(room_grid(room, 70, 0.05, {-1.75, -1.75}), NavConfig{});
  const Pose2D pose{-1.0, 0.0, 0.0};
  nav.set_goal({1.0, 0.0, 0.0});
  const sim::LidarSpec spec;
  NavOutput out = nav.step(pose, nullptr);
  ASSERT_EQ(out.status, NavStatus::Driving);
  // The first plan runs straight along y = 0.
  for (const auto& p : out.global_path) EXPECT_NEAR(p.y, 0.0, 0.05);

  sim::WorldModel blocked = room;
  blocked.add_box({0.0, 0.0}, 0.2, 0.2, 0.0);
  bool replanned = false;
  for (int cycle = 0; cycle < 2 && !replanned; ++cycle) {
    const sim::LaserScan scan = sim::cast_scan(blocked, pose, spec);
    out = nav.step(pose, &scan);
    replanned = out.replanned;
  }
  ASSERT_TRUE(replanned);
  // The new path keeps clear of the box.
  for (std::size_t i = 1; i < out.global_path.size(); ++i) {
    const Point2D a = out.global_path[i - 1], b = out.global_path[i];
    for (int k = 0; k <= 20; ++k) {
      const Point2D q = a + (b - a) * (k / 20.0);
      EXPECT_GT(sim::distance_to_world(blocked, q), 0.05);
    }
  }
}
