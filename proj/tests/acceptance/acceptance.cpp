// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any fail.
// Tolerances and sample counts are fixed here; seeds are fixed so reruns are
// reproducible.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <limits>
#include <optional>
#include <queue>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <boost/math/distributions/chi_squared.hpp>

#include "deskpilot/app/params.hpp"
#include "deskpilot/app/recording.hpp"
#include "deskpilot/app/scenarios.hpp"
#include "deskpilot/mcl/amcl.hpp"
#include "deskpilot/nav/astar.hpp"
#include "deskpilot/nav/navigator.hpp"
#include "deskpilot/odometry/range_flow.hpp"

using namespace deskpilot;

namespace {

constexpr double kDeg = kPi / 180.0;

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

sim::WorldModel parking_world() { return sim::load_world(DESKPILOT_WORLDS_DIR "/parking_school.world"); }

slam::OccupancyGrid parking_layout() { return slam::OccupancyGrid(80, 80, 0.05, {-2.0, -2.0, 0.0}); }

// ---------------------------------------------------------------------------
// 1. Parameter fidelity

Outcome parameter_fidelity() {
  const app::Params p;
  // Published table values, keyed by registry name.
  const std::vector<std::pair<const char*, const char*>> table = {
      {"slam.map_size", "80"}, {"slam.map_resolution", "0.05"}, {"slam.map_start_x", "0.5"},
      {"slam.map_start_y", "0.5"}, {"slam.map_multi_res_levels", "2"}, {"slam.free_cell_prob_sat", "0.4"},
      {"slam.ocpd_cell_prob_sat", "0.9"}, {"slam.linear_distance_thresh", "0.4"},
      {"slam.angular_distance_thresh", "0.06"}, {"slam.lidar_min_thresh", "0.15"}, {"slam.lidar_max_range", "12"},
      {"slam.trajectory_update_rate", "4"}, {"slam.trajectory_publish_rate", "0.25"},
      {"amcl.min_particles", "500"}, {"amcl.max_particles", "3000"}, {"amcl.kld_err", "0.02"},
      {"amcl.min_dist_update", "0.01"}, {"amcl.min_angle_update", "0.2"}, {"amcl.resample_thresh", "1"},
      {"amcl.initial_x_coord", "0"}, {"amcl.initial_y_coord", "0"}, {"amcl.initial_orient", "0"},
      {"amcl.laser_min_range", "0.15"}, {"amcl.laser_max_range", "12"},
      {"nav.global_costmap_size", "80"}, {"nav.local_costmap_size", "1.5"}, {"nav.rolling_window", "true"},
      {"nav.range_obstacle", "3"}, {"nav.range_raytrace", "3.5"}, {"nav.radius_inflation", "0.025"},
      {"nav.cost_scaling_factor", "10"}, {"nav.lin_vel_max", "0.2"}, {"nav.ang_vel_max", "0.5236"},
      {"nav.lin_acc_max", "0.15"}, {"nav.ang_acc_max", "0.3927"}, {"nav.turning_radius_min", "0.24515"},
      {"nav.vehicle_wheelbase", "0.14154"}, {"nav.vehicle_footprint", "line"}, {"nav.xy_goal_tolerance", "0.1"},
      {"nav.yaw_goal_tolerance", "0.1"}, {"nav.min_obstacle_dist", "0.2"}, {"nav.num_inner_iterations", "3"},
      {"nav.num_outer_iterations", "3"},
  };
  std::vector<std::string> bad;
  for (const auto& [key, want] : table) {
    const std::string got = app::get_param(p, key);
    bool same = got == want;
    if (!same) {
      // Numeric keys compare by value so "2" and "2.0" agree.
      char* e1 = nullptr;
      char* e2 = nullptr;
      const double a = std::strtod(got.c_str(), &e1), b = std::strtod(want, &e2);
      same = *e1 == '\0' && *e2 == '\0' && a == b;
    }
    if (!same) bad.push_back(std::string(key) + "=" + got + " (want " + want + ")");
  }
  const double r = p.vehicle.wheelbase / std::tan(p.vehicle.steering_limit);
  const double diff = std::abs(r - p.nav.teb.turning_radius_min);
  const app::ParamReport report = app::validate_params(p);
  std::string detail = fmt("%zu/%zu table values match; L/tan(delta_max) = %.6f vs %.5f, |diff| = %.2e",
                           table.size() - bad.size(), table.size(), r, p.nav.teb.turning_radius_min, diff);
  for (const auto& b : bad) detail += "; " + b;
  if (!report.ok) detail += "; validate_params: " + report.failures();
  return {bad.empty() && diff < 1e-4 && report.ok, detail};
}

// ---------------------------------------------------------------------------
// 2. Odometry

Outcome odometry_runs() {
  const auto world = parking_world();
  const sim::VehicleSpec vs;
  sim::Simulator sim(world, vs, sim::LidarSpec{}, sim::SimConfig{});
  odometry::RangeFlowOdometry odo;
  odo.update(sim.scan_now());
  const Pose2D start = sim.state().pose;
  const double throttle = 0.2 / vs.max_speed();
  while ((sim.state().pose.position() - start.position()).norm() < 1.0) {
    sim.set_command(throttle, 0.0);
    if (const auto out = sim.step(); out.scan) odo.update(*out.scan);
  }
  sim.set_command(0.0, 0.0);
  for (int i = 0; i < 100; ++i)
    if (const auto out = sim.step(); out.scan) odo.update(*out.scan);
  const Pose2D truth = between(start, sim.state().pose);
  const double dist = truth.position().norm();
  const double exy = (odo.pose().position() - truth.position()).norm();
  const double eyaw = std::abs(angle_diff(odo.pose().yaw, truth.yaw));

  // The car cannot turn on the spot, so the spin renders scans at the
  // rotated poses directly: 0.5 rad/s sampled at 7 Hz.
  odometry::RangeFlowOdometry spin;
  const double rate = 0.5, hz = 7.0;
  const int n = static_cast<int>(std::ceil((kPi / 2) / (rate / hz)));
  for (int k = 0; k <= n; ++k)
    spin.update(sim::cast_scan(world, {0, 0, std::min(kPi / 2, k * rate / hz)}, sim::LidarSpec{}, k / hz));
  const double espin = std::abs(angle_diff(spin.pose().yaw, kPi / 2));

  const bool ok = exy < 0.02 * dist && eyaw < 2 * kDeg && espin < 3 * kDeg;
  return {ok, fmt("straight %.3f m: error %.4f m (%.2f%%), yaw %.3f deg; spin 90 deg: yaw error %.3f deg", dist, exy,
                  100 * exy / dist, eyaw / kDeg, espin / kDeg)};
}

// ---------------------------------------------------------------------------
// 3. SLAM lap

Outcome slam_lap(slam::OccupancyGrid* map_out) {
  const auto world = parking_world();
  const auto rep = app::run_slam_lap(world, sim::parking_school_lap(world.start_pose));
  if (map_out) *map_out = app::reframe(rep.slam.grids.front(), world.start_pose);
  const double ratio = rep.agreement.ratio();
  const bool ok = rep.completed && ratio >= 0.90 && rep.loop_error_xy < 0.05 && rep.loop_error_yaw < 3 * kDeg;
  return {ok, fmt("agreement %.4f over %zu known cells; loop return error %.4f m, %.3f deg%s", ratio,
                  rep.agreement.compared, rep.loop_error_xy, rep.loop_error_yaw / kDeg,
                  rep.completed ? "" : "; lap not completed")};
}

// ---------------------------------------------------------------------------
// 4. KLD sample bound vs chi-square quantile

Outcome kld_oracle() {
  mcl::KldConfig cfg;
  cfg.epsilon = 0.02;
  cfg.delta = 0.01;
  long worst = 0;
  std::size_t worst_k = 0;
  for (std::size_t k = 2; k <= 100; ++k) {
    boost::math::chi_squared dist(static_cast<double>(k - 1));
    double n = std::ceil(boost::math::quantile(dist, 1.0 - cfg.delta) / (2.0 * cfg.epsilon));
    n = std::clamp(n, static_cast<double>(cfg.min_particles), static_cast<double>(cfg.max_particles));
    const long d = std::abs(static_cast<long>(mcl::kld_required_samples(k, cfg)) - static_cast<long>(n));
    if (d > worst) {
      worst = d;
      worst_k = k;
    }
  }
  return {worst <= 1, fmt("k = 2..100: max |n - oracle| = %ld%s", worst,
                          worst ? fmt(" (k = %zu)", worst_k).c_str() : "")};
}

// ---------------------------------------------------------------------------
// 5. AMCL convergence

Outcome amcl_convergence() {
  const auto world = parking_world();
  const auto field = mcl::build_likelihood_field(app::truth_grid(world, parking_layout()));
  const mcl::AmclConfig cfg;
  const int seeds = 20, max_updates = 15;
  int converged = 0;
  bool invariants = true;
  std::string violation;
  std::vector<int> first_hit;
  for (int seed = 0; seed < seeds; ++seed) {
    // Noisy ranges; the filter starts at a different point of the lap per seed.
    sim::SimConfig sc;
    sc.seed = static_cast<std::uint64_t>(seed);
    sc.range_noise_sigma = 0.01;
    sim::Simulator sim(world, sim::VehicleSpec{}, sim::LidarSpec{}, sc);
    sim::PurePursuit driver(sim::parking_school_lap(world.start_pose), sim.vehicle());
    const double t0 = 1.2 * seed;
    auto drive = [&] {
      const auto c = driver.command(sim.state().pose);
      sim.set_command(c.throttle, c.steering);
      return sim.step();
    };
    while (sim.state().sim_time < t0) drive();

    std::mt19937_64 odo_rng(1000 + seed);
    std::normal_distribution<double> odo_noise(0.0, 0.05);
    // The initial estimate is off by 0.25 m and 15 deg in a random direction;
    // the cloud spans +-0.5 m and +-30 deg around it, so the truth is inside
    // but away from the centre.
    std::uniform_real_distribution<double> dir(-kPi, kPi);
    const double a = dir(odo_rng);
    const Pose2D truth0 = sim.state().pose;
    const Pose2D guess{truth0.x + 0.25 * std::cos(a), truth0.y + 0.25 * std::sin(a),
                       wrap_angle(truth0.yaw + (seed % 2 ? 15 : -15) * kDeg)};
    mcl::Amcl amcl(field, cfg, 77 + seed);
    amcl.init_uniform(guess, 0.5, 30 * kDeg, cfg.kld.max_particles);
    Pose2D last = sim.state().pose;
    int hit = -1;
    double exy = 0, eyaw = 0;
    while (amcl.updates() < static_cast<std::size_t>(max_updates)) {
      const auto out = drive();
      if (!out.scan) continue;
      // Wheel odometry with 5% multiplicative error on each component.
      Pose2D d = between(last, out.state.pose);
      last = out.state.pose;
      d = {d.x * (1 + odo_noise(odo_rng)), d.y * (1 + odo_noise(odo_rng)), d.yaw * (1 + odo_noise(odo_rng))};
      amcl.force_update(d, *out.scan);

      double wsum = 0;
      for (const auto& p : amcl.particles()) wsum += p.weight;
      const std::size_t n = amcl.particles().size();
      if (std::abs(wsum - 1.0) > 1e-9 || n < 500 || n > 3000) {
        invariants = false;
        violation = fmt("seed %d update %zu: sum w = %.12f, n = %zu", seed, amcl.updates(), wsum, n);
      }
      const Pose2D est = amcl.estimate().pose;
      exy = (est.position() - sim.state().pose.position()).norm();
      eyaw = std::abs(angle_diff(est.yaw, sim.state().pose.yaw));
      if (hit < 0 && exy < 0.05 && eyaw < 5 * kDeg) hit = static_cast<int>(amcl.updates());
    }
    if (hit >= 0 && exy < 0.05 && eyaw < 5 * kDeg) {
      ++converged;
      first_hit.push_back(hit);
    }
  }
  std::sort(first_hit.begin(), first_hit.end());
  const int median = first_hit.empty() ? -1 : first_hit[first_hit.size() / 2];
  std::string detail = fmt("%d/%d seeds within 0.05 m / 5 deg after %d updates (median first convergence at update %d); "
                           "weight sum and particle count invariants %s",
                           converged, seeds, max_updates, median, invariants ? "held" : "violated");
  if (!invariants) detail += ": " + violation;
  return {converged >= 18 && invariants, detail};
}

// ---------------------------------------------------------------------------
// 6. A* vs Dijkstra

std::optional<std::int64_t> dijkstra(const nav::Costmap& cm, slam::CellIndex s, slam::CellIndex t) {
  const nav::PlannerOptions o;
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
    for (const slam::CellIndex n : {slam::CellIndex{x + 1, y}, {x - 1, y}, {x, y + 1}, {x, y - 1}}) {
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

Outcome astar_vs_dijkstra() {
  std::mt19937_64 rng(2024);
  std::uniform_int_distribution<int> cost(0, 252), cell(0, 49), pct(0, 99);
  int equal = 0, reachable = 0;
  for (int trial = 0; trial < 100; ++trial) {
    nav::Costmap cm(50, 50, 0.05, {});
    for (int y = 0; y < 50; ++y)
      for (int x = 0; x < 50; ++x) {
        const int p = pct(rng);
        cm.set({x, y}, p < 20 ? nav::kLethalCost : p < 25 ? nav::kInscribedCost : static_cast<std::uint8_t>(cost(rng)));
      }
    const slam::CellIndex s{cell(rng), cell(rng)}, t{cell(rng), cell(rng)};
    cm.set(s, 0);
    cm.set(t, 0);
    const auto r = nav::plan_global(cm, s, t);
    const auto ref = dijkstra(cm, s, t);
    if (ref) ++reachable;
    std::int64_t realized = 0;
    for (std::size_t i = 1; i < r.path.size(); ++i) realized += nav::step_cost_units(cm.at(r.path[i]));
    if (r.found == ref.has_value() && (!ref || (r.cost_units == *ref && realized == *ref))) ++equal;
  }
  return {equal == 100, fmt("%d/100 maps agree exactly (%d with a path)", equal, reachable)};
}

// ---------------------------------------------------------------------------
// 7. TEB on random start/goal pairs

// Cumulative pose error of driving the band's controls through the vehicle
// model with actuator lag removed.
std::pair<double, double> integrate_band(const nav::Trajectory& b, const nav::TebConfig& cfg) {
  sim::VehicleSpec spec;
  spec.throttle_time_constant = 0.0;
  spec.steering_slew_rate = std::numeric_limits<double>::infinity();
  sim::VehicleState st;
  st.pose = b.poses[0];
  double exy = 0.0, eyaw = 0.0;
  for (std::size_t k = 0; k + 1 < b.size(); ++k) {
    const nav::Control c = nav::extract_controls_at(b, k, cfg.wheelbase);
    st.commanded_throttle = c.v / spec.max_speed();
    st.commanded_steering = c.delta / spec.steering_limit;
    const int n = static_cast<int>(std::ceil(b.dts[k] / 0.05));
    for (int i = 0; i < n; ++i) st = sim::step_vehicle(st, spec, b.dts[k] / n);
    exy = std::max(exy, (st.pose.position() - b.poses[k + 1].position()).norm());
    eyaw = std::max(eyaw, std::abs(angle_diff(st.pose.yaw, b.poses[k + 1].yaw)));
  }
  return {exy, eyaw};
}

Outcome teb_random_pairs() {
  const auto base = parking_world();
  const nav::NavConfig nc;
  const nav::TebConfig& tc = nc.teb;
  std::mt19937_64 rng(31);
  std::uniform_real_distribution<double> ux(-1.5, 1.5), uyaw(-kPi, kPi), u01(0.0, 1.0), tilt(-0.4, 0.4);
  int passed = 0;
  std::string first_fail;
  double worst_exy = 0, worst_eyaw = 0, min_clear = 1e9;
  for (int pair = 0; pair < 25; ++pair) {
    // One or two extra boxes on top of the lot, then a start/goal pair with
    // room around both.
    sim::WorldModel w = base;
    const int boxes = 1 + static_cast<int>(u01(rng) * 2);
    for (int b = 0; b < boxes; ++b) w.add_box({ux(rng), ux(rng)}, 0.1, 0.1, 0.0);
    const slam::OccupancyGrid grid = app::truth_grid(w, parking_layout());
    const nav::Costmap cm = nav::build_costmap(grid, nc.inflation);
    const auto lethal = cm.lethal_points();
    auto clearance = [&](const Point2D& p) {
      double d = 1e9;
      for (const auto& o : lethal) d = std::min(d, (o - p).norm());
      return d;
    };
    nav::PlannerOptions po;
    po.max_passable_cost = nav::inflation_cost(nc.plan_clearance, nc.inflation);
    Point2D s, g;
    nav::PlanResult plan;
    do {
      s = {ux(rng), ux(rng)};
      g = {ux(rng), ux(rng)};
      const double d = (g - s).norm();
      if (d < 0.6 || d > 1.6 || clearance(s) < 0.3 || clearance(g) < 0.3) continue;
      plan = nav::plan_global(cm, cm.cell_of(s), cm.cell_of(g), po);
    } while (!plan.found);
    auto path = nav::shortcut_path(cm, nav::path_to_world(cm, plan.path), po);
    path.front() = s;
    path.back() = g;
    // Headings follow the path ends with a random tilt.
    const Point2D d0 = path[1] - path[0], d1 = path[path.size() - 1] - path[path.size() - 2];
    const Pose2D start{s.x, s.y, wrap_angle(std::atan2(d0.y, d0.x) + tilt(rng))};
    const Pose2D goal{g.x, g.y, wrap_angle(std::atan2(d1.y, d1.x) + tilt(rng))};

    const nav::TebResult r = nav::solve_band(path, start, goal, lethal, tc, nc.warmup_cycles);
    const nav::Trajectory& band = r.timed;
    const bool dts_positive = std::all_of(band.dts.begin(), band.dts.end(), [](double t) { return t > 0.0; });
    const nav::TebCheck chk = nav::check_band(band, lethal, tc, 0.01);
    const auto [exy, eyaw] = integrate_band(band, tc);
    worst_exy = std::max(worst_exy, exy);
    worst_eyaw = std::max(worst_eyaw, eyaw);
    min_clear = std::min(min_clear, chk.min_clearance);
    const bool ok = dts_positive && chk.feasible && chk.min_clearance >= 0.2 && exy < 0.05 && eyaw < 0.1;
    if (ok) ++passed;
    else if (first_fail.empty())
      first_fail = fmt("pair %d (%.2f,%.2f,%.2f)->(%.2f,%.2f,%.2f): %s, replay %.3f m / %.3f rad", pair, start.x,
                       start.y, start.yaw, goal.x, goal.y, goal.yaw, chk.feasible ? "bounds ok" : chk.reason.c_str(),
                       exy, eyaw);
  }
  std::string detail = fmt("%d/25 bands valid; min clearance %.3f m; replay error max %.4f m / %.4f rad", passed,
                           min_clear, worst_exy, worst_eyaw);
  if (!first_fail.empty()) detail += "; first failure " + first_fail;
  return {passed == 25, detail};
}

// ---------------------------------------------------------------------------
// 8. End-to-end parking

Outcome parking(const slam::OccupancyGrid& map) {
  const auto world = parking_world();
  int ok = 0;
  std::string fails;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    app::ParkingOptions opt;
    opt.seed = seed;
    opt.goal = *world.goal_pose;
    opt.obstacles = app::parking_obstacles(world.start_pose, opt.goal, seed);
    const auto r = app::run_parking(world, map, opt);
    const bool good = r.success && !r.lethal_contact && r.error_xy < 0.1 && r.error_yaw < 0.1;
    if (good) ++ok;
    else
      fails += fmt(" seed %llu: %s, %.3f m / %.3f rad%s;", static_cast<unsigned long long>(seed),
                   nav::to_string(r.status), r.error_xy, r.error_yaw, r.lethal_contact ? ", lethal contact" : "");
  }
  std::string detail = fmt("%d/10 seeds parked within 0.1 m / 0.1 rad without lethal contact", ok);
  if (!fails.empty()) detail += ";" + fails.substr(0, fails.size() - 1);
  return {ok >= 8, detail};
}

// ---------------------------------------------------------------------------
// 9. Determinism

Outcome determinism() {
  const auto world = parking_world();
  app::Params p;
  p.sim.range_noise_sigma = 0.01;  // exercise the seeded noise path
  auto run = [&] {
    auto sim = app::make_simulator(world, p, 1234);
    bridge::BridgeConfig bc;
    const auto frames = app::run_headless_session(sim, bc, sim::parking_school_lap(world.start_pose), 30.0);
    const auto st = app::slam_over_frames(frames, p.slam);
    return std::pair{app::fnv1a(app::grid_bytes(st.grids.front())), app::fnv1a(app::dataset_bytes(frames, 15.0))};
  };
  const auto a = run(), b = run();
  return {a == b, fmt("grid %s / %s, csv %s / %s", app::hex64(a.first).c_str(), app::hex64(b.first).c_str(),
                      app::hex64(a.second).c_str(), app::hex64(b.second).c_str())};
}

}  // namespace

int main() {
  int failed = 0;
  auto report = [&](int id, const char* name, double limit_s, const std::function<Outcome()>& fn) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const bool in_time = limit_s <= 0 || secs < limit_s;
    const bool pass = o.pass && in_time;
    if (!pass) ++failed;
    std::string budget = limit_s > 0 ? fmt(", limit %.0f s", limit_s) : "";
    if (!in_time) budget += ", over time";
    std::printf("[%s] %d %s: %s (%.2f s%s)\n", pass ? "PASS" : "FAIL", id, name, o.detail.c_str(), secs,
                budget.c_str());
    std::fflush(stdout);
  };

  slam::OccupancyGrid lap_map = parking_layout();
  report(1, "parameter fidelity", 1, parameter_fidelity);
  report(2, "odometry", 10, odometry_runs);
  report(3, "slam lap", 60, [&] { return slam_lap(&lap_map); });
  report(4, "kld oracle", 1, kld_oracle);
  report(5, "amcl convergence", 60, amcl_convergence);
  report(6, "astar vs dijkstra", 10, astar_vs_dijkstra);
  report(7, "teb random pairs", 60, teb_random_pairs);
  report(8, "parking", 300, [&] { return parking(lap_map); });
  report(9, "determinism", 0, determinism);
  std::printf("%d/9 criteria passed\n", 9 - failed);
  return failed == 0 ? 0 : 1;
}
