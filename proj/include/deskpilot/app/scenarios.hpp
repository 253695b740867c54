#pragma once
//
// End-to-end scenario runners shared by the CLI and the acceptance suite:
// a mapping lap, and goal-directed parking with localization on a prior map.

#include <cmath>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "deskpilot/errors.hpp"
#include "deskpilot/geom.hpp"
#include "deskpilot/mcl/amcl.hpp"
#include "deskpilot/nav/navigator.hpp"
#include "deskpilot/odometry/range_flow.hpp"
#include "deskpilot/sim/drivers.hpp"
#include "deskpilot/sim/simulator.hpp"
#include "deskpilot/slam/evaluation.hpp"
#include "deskpilot/slam/hector.hpp"

namespace deskpilot::app {

/// Ground-truth raster of `world` on the layout of `like`: occupied cells get
/// p_occ, everything else p_free.
inline slam::OccupancyGrid truth_grid(const sim::WorldModel& world, const slam::OccupancyGrid& like) {
  slam::OccupancyGrid g = like;
  const auto occ = slam::rasterize_world(world, g);
  for (int y = 0; y < g.height(); ++y)
    for (int x = 0; x < g.width(); ++x) g.set_probability({x, y}, occ[g.index({x, y})] ? 0.9 : 0.4);
  return g;
}

struct LapReport {
  slam::SlamState slam;
  slam::MapAgreement agreement;
  Pose2D truth_end{};
  double loop_error_xy = 0.0;   // SLAM pose vs truth at the end of the lap
  double loop_error_yaw = 0.0;
  bool completed = false;
  int degenerate = 0;
};

/// Drives a closed lap with pure pursuit while running SLAM on every scan.
inline LapReport run_slam_lap(const sim::WorldModel& world, const std::vector<Point2D>& lap,
                              const slam::SlamConfig& cfg = {}, const sim::SimConfig& sim_cfg = {},
                              double time_limit = 120.0, const sim::VehicleSpec& vehicle = {},
                              const sim::LidarSpec& lidar = {}) {
  sim::Simulator sim(world, vehicle, lidar, sim_cfg);
  sim::PurePursuit driver(lap, sim.vehicle());
  LapReport rep;
  rep.slam = slam::make_slam_state(cfg);
  slam::slam_step(rep.slam, sim.scan_now(), cfg);
  const auto steps = static_cast<long>(time_limit / sim.dt());
  for (long i = 0; i < steps && !driver.done(sim.state().pose); ++i) {
    const auto c = driver.command(sim.state().pose);
    sim.set_command(c.throttle, c.steering);
    const auto out = sim.step();
    if (out.scan && slam::slam_step(rep.slam, *out.scan, cfg) == slam::SlamStepStatus::Degenerate) ++rep.degenerate;
  }
  rep.completed = driver.done(sim.state().pose);
  rep.truth_end = sim.state().pose;
  // The map frame is the start pose; express the truth in it.
  const Pose2D end_in_map = between(world.start_pose, rep.truth_end);
  rep.loop_error_xy = std::hypot(rep.slam.pose.x - end_in_map.x, rep.slam.pose.y - end_in_map.y);
  rep.loop_error_yaw = std::abs(angle_diff(rep.slam.pose.yaw, end_in_map.yaw));
  const auto& map = rep.slam.grids.front();
  sim::WorldModel in_map = world;
  for (auto& s : in_map.segments) {
    s.a = transform_point(inverse(world.start_pose), s.a);
    s.b = transform_point(inverse(world.start_pose), s.b);
  }
  rep.agreement = slam::compare_to_truth(map, slam::rasterize_world(in_map, map));
  return rep;
}

struct BoxObstacle {
  Point2D center;
  double size = 0.1;
};

/// Two small boxes placed across the straight line from start to goal at 35%
/// and 65% of the way, jittered by the seed.
inline std::vector<BoxObstacle> parking_obstacles(const Pose2D& start, const Pose2D& goal, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> along(-0.05, 0.05), across(0.1, 0.2);
  const Point2D d = goal.position() - start.position();
  const double len = d.norm();
  if (!(len > 0.0)) throw InvalidArgument("parking_obstacles: start and goal coincide");
  const Point2D u = d * (1.0 / len), n{-u.y, u.x};
  std::vector<BoxObstacle> out;
  const double side[2] = {1.0, -1.0};
  const double frac[2] = {0.35, 0.65};
  for (int k = 0; k < 2; ++k) {
    const Point2D c = start.position() + u * (frac[k] * len + along(rng)) + n * (side[k] * across(rng));
    out.push_back({c, 0.1});
  }
  return out;
}

struct ParkingOptions {
  std::uint64_t seed = 0;
  Pose2D goal{};
  std::vector<BoxObstacle> obstacles;  // inserted into the world at insert_time
  double insert_time = 1.0;            // s
  double time_limit = 90.0;            // s of simulated time
  double initial_spread_xy = 0.05;     // m, uniform half-width of the initial particle cloud
  double initial_spread_yaw = 0.05;    // rad
  std::size_t initial_particles = 1000;
  int settle_updates = 5;              // stationary filter updates before driving
  nav::NavConfig nav{};
  mcl::AmclConfig amcl{};
  sim::SimConfig sim{};
  sim::VehicleSpec vehicle{};
  sim::LidarSpec lidar{};
};

struct ParkingReport {
  bool arrived = false;        // navigator reported arrival
  bool success = false;        // truth pose within tolerance of the goal
  bool lethal_contact = false; // an axle entered a lethal cell of the true map
  nav::NavStatus status = nav::NavStatus::Driving;
  double error_xy = 0.0;       // final truth vs goal
  double error_yaw = 0.0;
  double localization_error = 0.0;  // final estimate vs truth
  double time = 0.0;           // simulated seconds
  std::size_t replans = 0;
  std::vector<Pose2D> truth_path;
};

/// Grid re-expressed with the map frame placed at `frame` (e.g. a SLAM map,
/// built in the start-pose frame, moved into world coordinates).
inline slam::OccupancyGrid reframe(const slam::OccupancyGrid& g, const Pose2D& frame) {
  slam::OccupancyGrid out(g.width(), g.height(), g.resolution(), compose(frame, g.origin()), g.p_free(), g.p_occ());
  for (int y = 0; y < g.height(); ++y)
    for (int x = 0; x < g.width(); ++x)
      if (g.known({x, y})) out.add_log_odds({x, y}, g.log_odds({x, y}));
  return out;
}

/// Localization on a prior map (AMCL fed by range-flow odometry) driving the
/// navigator. Scans go in through on_scan(); control() runs one navigator
/// cycle at the given sim time.
class LocalizedNavigator {
 public:
  LocalizedNavigator(const slam::OccupancyGrid& map, const nav::NavConfig& nav_cfg, const mcl::AmclConfig& amcl_cfg,
                     std::uint64_t seed)
      : navigator_(map, nav_cfg), amcl_(mcl::build_likelihood_field(map), amcl_cfg, seed), nav_cfg_(nav_cfg) {}

  /// Particle cloud around `start`, refined by a few stationary updates.
  void init(const Pose2D& start, const sim::LaserScan& scan, double spread_xy, double spread_yaw, std::size_t particles,
            int settle_updates) {
    amcl_.init_uniform(start, spread_xy, spread_yaw, particles);
    odom_ = odometry::RangeFlowOdometry{};
    odom_.update(scan);
    for (int i = 0; i < settle_updates; ++i) amcl_.force_update({}, scan);
    est_ = amcl_.estimate().pose;
    odom_at_est_ = odom_prev_ = odom_.pose();
    scan_time_ = scan.stamp;
    last_scan_ = scan;
  }

  void set_goal(const Pose2D& g) { navigator_.set_goal(g); }
  void clear_goal() { navigator_.clear_goal(); }
  bool has_goal() const { return navigator_.goal().has_value(); }

  void on_scan(const sim::LaserScan& scan) {
    odom_.update(scan);
    scan_time_ = scan.stamp;
    if (amcl_.process(between(odom_prev_, odom_.pose()), scan)) {
      est_ = amcl_.estimate().pose;
      odom_at_est_ = odom_.pose();
    }
    odom_prev_ = odom_.pose();
    last_scan_ = scan;
  }

  /// Last filter estimate carried forward by odometry and the last twist.
  Pose2D pose_at(double t) const {
    return compose(est_, compose(between(odom_at_est_, odom_prev_), se2_exp(odom_.state().last_twist, t - scan_time_)));
  }

  /// One navigator cycle; the newest scan not yet seen by the navigator is used.
  nav::NavOutput control(double t) {
    const nav::NavOutput out = navigator_.step(pose_at(t), last_scan_ ? &*last_scan_ : nullptr);
    last_scan_.reset();
    return out;
  }

  sim::Command actuation(const nav::NavOutput& out, const sim::VehicleSpec& vehicle) const {
    return nav::to_actuation(out.command, nav_cfg_.teb, vehicle);
  }

  const mcl::Amcl& amcl() const noexcept { return amcl_; }
  const nav::Navigator& navigator() const noexcept { return navigator_; }

 private:
  nav::Navigator navigator_;
  mcl::Amcl amcl_;
  nav::NavConfig nav_cfg_;
  odometry::RangeFlowOdometry odom_;
  Pose2D est_{}, odom_at_est_{}, odom_prev_{};
  double scan_time_ = 0.0;
  std::optional<sim::LaserScan> last_scan_;
};

/// Parks the simulated car at `opt.goal` using a prior map (frame = world).
inline ParkingReport run_parking(const sim::WorldModel& world, const slam::OccupancyGrid& map,
                                 const ParkingOptions& opt) {
  sim::SimConfig sc = opt.sim;
  sc.seed = opt.seed;
  sim::Simulator sim(world, opt.vehicle, opt.lidar, sc);
  LocalizedNavigator pilot(map, opt.nav, opt.amcl, opt.seed);
  pilot.set_goal(opt.goal);
  pilot.init(world.start_pose, sim.scan_now(), opt.initial_spread_xy, opt.initial_spread_yaw, opt.initial_particles,
             opt.settle_updates);

  ParkingReport rep;
  const auto steps_per_control = std::max<long>(1, std::lround(1.0 / (opt.nav.control_rate * sim.dt())));
  const auto max_steps = static_cast<long>(opt.time_limit / sim.dt());
  bool inserted = opt.obstacles.empty();
  sim::WorldModel truth_world = world;
  for (const auto& b : opt.obstacles) truth_world.add_box(b.center, b.size, b.size, 0.0);
  const nav::Costmap truth_cost = nav::build_costmap(truth_grid(truth_world, map), opt.nav.inflation);
  const double wheelbase = sim.vehicle().wheelbase;

  for (long step = 0; step < max_steps; ++step) {
    const double t = sim.state().sim_time;
    if (!inserted && t >= opt.insert_time) {
      for (const auto& b : opt.obstacles) sim.mutable_world().add_box(b.center, b.size, b.size, 0.0);
      inserted = true;
    }
    if (step % steps_per_control == 0) {
      const nav::NavOutput out = pilot.control(t);
      rep.status = out.status;
      const sim::Command c = pilot.actuation(out, sim.vehicle());
      sim.set_command(c.throttle, c.steering);
      if (out.status == nav::NavStatus::Arrived || out.status == nav::NavStatus::Unreachable) break;
    }
    const auto o = sim.step();
    const Pose2D& p = o.state.pose;
    rep.truth_path.push_back(p);
    const Point2D front = transform_point(p, {wheelbase, 0.0});
    for (const Point2D& q : {p.position(), front})
      if (truth_cost.at_world(q) == nav::kLethalCost) rep.lethal_contact = true;
    if (o.scan) pilot.on_scan(*o.scan);
  }
  // Let the car come to rest before judging the final pose.
  sim.set_command(0.0, 0.0);
  for (int i = 0; i < 100; ++i) {
    const Pose2D p = sim.step().state.pose;
    rep.truth_path.push_back(p);
    if (truth_cost.at_world(p.position()) == nav::kLethalCost) rep.lethal_contact = true;
  }

  const Pose2D fin = sim.state().pose;
  rep.time = sim.state().sim_time;
  rep.arrived = rep.status == nav::NavStatus::Arrived;
  rep.error_xy = (fin.position() - opt.goal.position()).norm();
  rep.error_yaw = std::abs(angle_diff(fin.yaw, opt.goal.yaw));
  rep.success = nav::within_tolerance(fin, opt.goal, opt.nav.tolerance) && !rep.lethal_contact;
  rep.localization_error = (pilot.amcl().estimate().pose.position() - fin.position()).norm();
  rep.replans = pilot.navigator().replans();
  return rep;
}

}  // namespace deskpilot::app
