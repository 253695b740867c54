#pragma once
//
// Run parameters addressable by name. Keys are `<table>.<name>` using the
// SLAM / localization / navigation table names; a bare name is accepted when
// it is unambiguous (e.g. `kld_err`).

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "deskpilot/errors.hpp"
#include "deskpilot/mcl/amcl.hpp"
#include "deskpilot/nav/navigator.hpp"
#include "deskpilot/sim/simulator.hpp"
#include "deskpilot/slam/hector.hpp"

namespace deskpilot::app {

struct Params {
  slam::SlamConfig slam{};
  double trajectory_publish_rate = 0.25;  // Hz, visualization only
  mcl::AmclConfig amcl{};
  Pose2D initial_pose{};
  nav::NavConfig nav{};
  int global_costmap_size = 80;
  bool rolling_window = true;
  std::string vehicle_footprint = "line";
  sim::VehicleSpec vehicle{};
  sim::LidarSpec lidar{};
  sim::SimConfig sim{};
};

struct ParamEntry {
  std::string key;
  std::function<std::string(const Params&)> get;
  std::function<void(Params&, const std::string&)> set;
};

namespace detail {

inline double parse_double(const std::string& key, const std::string& s) {
  double v = 0.0;
  const auto* end = s.data() + s.size();
  const auto r = std::from_chars(s.data(), end, v);
  if (r.ec != std::errc{} || r.ptr != end || !std::isfinite(v)) throw ConfigError(key + ": expected a number, got '" + s + "'");
  return v;
}

inline long long parse_int(const std::string& key, const std::string& s) {
  const double v = parse_double(key, s);
  if (v != std::floor(v)) throw ConfigError(key + ": expected an integer, got '" + s + "'");
  return static_cast<long long>(v);
}

inline std::size_t parse_count(const std::string& key, const std::string& s) {
  const long long v = parse_int(key, s);
  if (v < 0) throw ConfigError(key + ": must be >= 0");
  return static_cast<std::size_t>(v);
}

inline bool parse_bool(const std::string& key, const std::string& s) {
  if (s == "true" || s == "1") return true;
  if (s == "false" || s == "0") return false;
  throw ConfigError(key + ": expected true or false, got '" + s + "'");
}

inline std::string fmt(double v) {
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return {buf, r.ptr};
}

}  // namespace detail

/// Every addressable parameter, in table order.
inline const std::vector<ParamEntry>& param_registry() {
  using detail::fmt;
  static const std::vector<ParamEntry> reg = [] {
    std::vector<ParamEntry> r;
    auto num = [&r](std::string key, auto ref) {
      r.push_back({key, [ref](const Params& p) { return fmt(static_cast<double>(ref(const_cast<Params&>(p)))); },
                   [ref, key](Params& p, const std::string& s) {
                     auto& f = ref(p);
                     using T = std::decay_t<decltype(f)>;
                     if constexpr (std::is_same_v<T, double>) f = detail::parse_double(key, s);
                     else if constexpr (std::is_same_v<T, std::size_t>) f = detail::parse_count(key, s);
                     else f = static_cast<T>(detail::parse_int(key, s));
                   }});
    };
    // SLAM
    num("slam.map_size", [](Params& p) -> int& { return p.slam.map_size; });
    num("slam.map_resolution", [](Params& p) -> double& { return p.slam.map_resolution; });
    num("slam.map_start_x", [](Params& p) -> double& { return p.slam.map_start_x; });
    num("slam.map_start_y", [](Params& p) -> double& { return p.slam.map_start_y; });
    num("slam.map_multi_res_levels", [](Params& p) -> int& { return p.slam.levels; });
    num("slam.free_cell_prob_sat", [](Params& p) -> double& { return p.slam.p_free; });
    num("slam.ocpd_cell_prob_sat", [](Params& p) -> double& { return p.slam.p_occ; });
    num("slam.linear_distance_thresh", [](Params& p) -> double& { return p.slam.linear_update_thresh; });
    num("slam.angular_distance_thresh", [](Params& p) -> double& { return p.slam.angular_update_thresh; });
    num("slam.lidar_min_thresh", [](Params& p) -> double& { return p.lidar.range_min; });
    num("slam.lidar_max_range", [](Params& p) -> double& { return p.lidar.range_max; });
    num("slam.trajectory_update_rate", [](Params& p) -> double& { return p.slam.trajectory_update_rate; });
    num("slam.trajectory_publish_rate", [](Params& p) -> double& { return p.trajectory_publish_rate; });
    // Localization
    num("amcl.min_particles", [](Params& p) -> std::size_t& { return p.amcl.kld.min_particles; });
    num("amcl.max_particles", [](Params& p) -> std::size_t& { return p.amcl.kld.max_particles; });
    num("amcl.kld_err", [](Params& p) -> double& { return p.amcl.kld.epsilon; });
    num("amcl.min_dist_update", [](Params& p) -> double& { return p.amcl.update_min_trans; });
    num("amcl.min_angle_update", [](Params& p) -> double& { return p.amcl.update_min_rot; });
    num("amcl.resample_thresh", [](Params& p) -> int& { return p.amcl.kld.resample_interval; });
    num("amcl.initial_x_coord", [](Params& p) -> double& { return p.initial_pose.x; });
    num("amcl.initial_y_coord", [](Params& p) -> double& { return p.initial_pose.y; });
    num("amcl.initial_orient", [](Params& p) -> double& { return p.initial_pose.yaw; });
    num("amcl.laser_min_range", [](Params& p) -> double& { return p.amcl.sensor.range_min; });
    num("amcl.laser_max_range", [](Params& p) -> double& { return p.amcl.sensor.range_max; });
    // Navigation
    num("nav.global_costmap_size", [](Params& p) -> int& { return p.global_costmap_size; });
    num("nav.local_costmap_size", [](Params& p) -> double& { return p.nav.inflation.local_size; });
    r.push_back({"nav.rolling_window", [](const Params& p) { return std::string(p.rolling_window ? "true" : "false"); },
                 [](Params& p, const std::string& s) { p.rolling_window = detail::parse_bool("nav.rolling_window", s); }});
    num("nav.range_obstacle", [](Params& p) -> double& { return p.nav.inflation.range_obstacle; });
    num("nav.range_raytrace", [](Params& p) -> double& { return p.nav.inflation.range_raytrace; });
    num("nav.radius_inflation", [](Params& p) -> double& { return p.nav.inflation.radius_inflation; });
    num("nav.cost_scaling_factor", [](Params& p) -> double& { return p.nav.inflation.cost_scaling_factor; });
    num("nav.lin_vel_max", [](Params& p) -> double& { return p.nav.teb.lin_vel_max; });
    num("nav.ang_vel_max", [](Params& p) -> double& { return p.nav.teb.ang_vel_max; });
    num("nav.lin_acc_max", [](Params& p) -> double& { return p.nav.teb.lin_acc_max; });
    num("nav.ang_acc_max", [](Params& p) -> double& { return p.nav.teb.ang_acc_max; });
    num("nav.turning_radius_min", [](Params& p) -> double& { return p.nav.teb.turning_radius_min; });
    // One wheelbase for planner and vehicle model.
    r.push_back({"nav.vehicle_wheelbase", [](const Params& p) { return fmt(p.nav.teb.wheelbase); },
                 [](Params& p, const std::string& s) {
                   p.nav.teb.wheelbase = p.vehicle.wheelbase = detail::parse_double("nav.vehicle_wheelbase", s);
                 }});
    r.push_back({"nav.vehicle_footprint", [](const Params& p) { return p.vehicle_footprint; },
                 [](Params& p, const std::string& s) { p.vehicle_footprint = s; }});
    num("nav.xy_goal_tolerance", [](Params& p) -> double& { return p.nav.tolerance.xy; });
    num("nav.yaw_goal_tolerance", [](Params& p) -> double& { return p.nav.tolerance.yaw; });
    num("nav.min_obstacle_dist", [](Params& p) -> double& { return p.nav.teb.min_obstacle_dist; });
    num("nav.num_inner_iterations", [](Params& p) -> int& { return p.nav.teb.inner_iters; });
    num("nav.num_outer_iterations", [](Params& p) -> int& { return p.nav.teb.outer_iters; });
    // Vehicle and simulator
    r.push_back({"vehicle.steering_limit", [](const Params& p) { return fmt(p.vehicle.steering_limit); },
                 [](Params& p, const std::string& s) {
                   p.vehicle.steering_limit = p.nav.teb.steering_limit = detail::parse_double("vehicle.steering_limit", s);
                 }});
    num("vehicle.max_wheel_rpm", [](Params& p) -> double& { return p.vehicle.max_wheel_rpm; });
    num("vehicle.encoder_cpr", [](Params& p) -> double& { return p.vehicle.encoder_cpr; });
    num("sim.physics_rate", [](Params& p) -> double& { return p.sim.physics_rate; });
    num("sim.telemetry_rate", [](Params& p) -> double& { return p.sim.telemetry_rate; });
    num("sim.lidar_rate", [](Params& p) -> double& { return p.lidar.rate; });
    num("sim.range_noise_sigma", [](Params& p) -> double& { return p.sim.range_noise_sigma; });
    return r;
  }();
  return reg;
}

inline std::string valid_param_keys() {
  std::string out;
  for (const auto& e : param_registry()) out += (out.empty() ? "" : ", ") + e.key;
  return out;
}

/// Registry entry for `key`, full or bare.
inline const ParamEntry& find_param(const std::string& key) {
  const auto& reg = param_registry();
  for (const auto& e : reg)
    if (e.key == key) return e;
  const ParamEntry* hit = nullptr;
  for (const auto& e : reg) {
    const auto dot = e.key.find('.');
    if (e.key.compare(dot + 1, std::string::npos, key) == 0) {
      if (hit) throw ConfigError("ambiguous parameter '" + key + "'; qualify it with its table");
      hit = &e;
    }
  }
  if (!hit) throw ConfigError("unknown parameter '" + key + "'; valid keys: " + valid_param_keys());
  return *hit;
}

inline void set_param(Params& p, const std::string& key, const std::string& value) { find_param(key).set(p, value); }
inline std::string get_param(const Params& p, const std::string& key) { return find_param(key).get(p); }

/// Applies one `key=value` assignment.
inline void apply_override(Params& p, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("expected key=value, got '" + assignment + "'");
  auto trim = [](std::string s) {
    const auto b = s.find_first_not_of(" \t"), e = s.find_last_not_of(" \t\r");
    return b == std::string::npos ? std::string{} : s.substr(b, e - b + 1);
  };
  set_param(p, trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
}

/// key=value lines; `#` starts a comment. Later files and flags override earlier ones.
inline void load_params_file(Params& p, const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open parameter file " + path);
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (const auto h = line.find('#'); h != std::string::npos) line.erase(h);
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      apply_override(p, line);
    } catch (const ConfigError& e) {
      throw ConfigError(path + ":" + std::to_string(n) + ": " + e.what());
    }
  }
}

struct ParamCheck {
  std::string name;
  bool ok = true;
  std::string message;
};

struct ParamReport {
  bool ok = true;
  double turning_radius_expected = 0.0;  // wheelbase / tan(steering_limit)
  std::vector<ParamCheck> checks;

  std::string failures() const {
    std::string out;
    for (const auto& c : checks)
      if (!c.ok) out += c.name + ": " + c.message + "\n";
    return out;
  }
};

/// Cross-checks between parameters and each module's own validation.
inline ParamReport validate_params(const Params& p) {
  ParamReport rep;
  auto add = [&rep](std::string name, bool ok, std::string msg) {
    rep.ok = rep.ok && ok;
    rep.checks.push_back({std::move(name), ok, std::move(msg)});
  };
  auto module = [&add](const std::string& name, auto&& fn) {
    try {
      fn();
      add(name, true, "ok");
    } catch (const std::exception& e) {
      add(name, false, e.what());
    }
  };
  const auto& teb = p.nav.teb;
  rep.turning_radius_expected = teb.wheelbase / std::tan(teb.steering_limit);
  const double gap = std::abs(teb.turning_radius_min - rep.turning_radius_expected);
  std::ostringstream msg;
  msg << "turning_radius_min " << teb.turning_radius_min << " vs wheelbase/tan(steering_limit) "
      << rep.turning_radius_expected;
  add("nav.turning_radius_min", gap <= 1e-4, msg.str());
  add("nav.vehicle_footprint", p.vehicle_footprint == "line", "only the line footprint is supported");
  add("nav.rolling_window", p.rolling_window, "the local costmap is always vehicle-centric");
  add("nav.global_costmap_size", p.global_costmap_size == p.slam.map_size,
      "must equal slam.map_size (" + std::to_string(p.slam.map_size) + ")");
  add("amcl.laser_min_range", p.amcl.sensor.range_min < p.amcl.sensor.range_max, "must be below amcl.laser_max_range");
  module("slam", [&] { p.slam.validate(); });
  module("amcl", [&] {
    p.amcl.kld.validate();
    p.amcl.noise.validate();
  });
  module("nav", [&] {
    p.nav.validate();
    p.nav.inflation.validate();
  });
  module("vehicle", [&] { p.vehicle.validate(); });
  module("lidar", [&] { p.lidar.validate(); });
  module("sim", [&] { p.sim.validate(p.lidar); });
  return rep;
}

}  // namespace deskpilot::app
