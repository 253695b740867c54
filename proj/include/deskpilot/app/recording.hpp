#pragma once
//
// Headless bridge sessions and offline pipelines over telemetry streams.

#include <cstdint>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "deskpilot/app/params.hpp"
#include "deskpilot/bridge/dataset.hpp"
#include "deskpilot/bridge/session.hpp"
#include "deskpilot/sim/drivers.hpp"
#include "deskpilot/slam/hector.hpp"
#include "deskpilot/slam/occupancy_grid.hpp"

namespace deskpilot::app {

/// 64-bit FNV-1a; stable across platforms, used to compare output files.
inline std::uint64_t fnv1a(std::string_view data) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : data) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  static constexpr char digits[] = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i, v >>= 4) s[static_cast<std::size_t>(i)] = digits[v & 0xF];
  return s;
}

inline std::string grid_bytes(const slam::OccupancyGrid& g) {
  std::ostringstream os;
  slam::write_grid(os, g);
  return os.str();
}

/// Scripted routes relative to the start pose.
inline std::vector<Point2D> make_route(const std::string& name, const Pose2D& start) {
  if (name == "lap") return sim::parking_school_lap(start);
  if (name == "eight") return sim::figure_eight(0.675, start);
  if (name == "none") return {};
  throw ConfigError("unknown route '" + name + "' (expected lap, eight or none)");
}

inline sim::Simulator make_simulator(const sim::WorldModel& world, const Params& p, std::uint64_t seed) {
  sim::SimConfig sc = p.sim;
  sc.seed = seed;
  return sim::Simulator(world, p.vehicle, p.lidar, sc);
}

/// Runs a bridge session without a network endpoint for `duration` seconds.
/// A scripted client follows `route` with pure pursuit and sends drive
/// messages at 10 Hz; an empty route leaves the car parked.
inline std::vector<bridge::TelemetryFrame> run_headless_session(sim::Simulator& sim, const bridge::BridgeConfig& cfg,
                                                                 const std::vector<Point2D>& route, double duration) {
  bridge::BridgeSession session(sim, cfg);
  std::optional<sim::PurePursuit> driver;
  if (route.size() >= 2) driver.emplace(route, sim.vehicle());
  const auto steps = static_cast<long>(std::llround(duration / sim.dt()));
  const long teleop_every = std::max<long>(1, std::lround(0.1 / sim.dt()));
  std::vector<bridge::TelemetryFrame> frames;
  for (long k = 0; k < steps; ++k) {
    if (driver && k % teleop_every == 0) {
      const sim::Command c = driver->command(sim.state().pose);
      session.submit(bridge::to_json(bridge::Inbound{bridge::DriveCmd{c.throttle, c.steering}}).dump());
    }
    if (auto f = session.tick()) frames.push_back(std::move(*f));
  }
  return frames;
}

/// SLAM with one update per frame. The frame time stamps the scan so live
/// and replayed streams see identical inputs.
inline slam::SlamState slam_over_frames(const std::vector<bridge::TelemetryFrame>& frames, const slam::SlamConfig& cfg) {
  slam::SlamState st = slam::make_slam_state(cfg);
  for (const auto& f : frames) {
    sim::LaserScan scan = f.scan;
    scan.stamp = f.sim_time;
    slam::slam_step(st, scan, cfg);
  }
  return st;
}

inline std::vector<bridge::TelemetryFrame> frames_from_rows(const std::vector<bridge::DatasetRow>& rows,
                                                            const sim::LidarSpec& lidar) {
  std::vector<bridge::TelemetryFrame> out;
  bridge::replay(rows, [&out](const bridge::TelemetryFrame& f) { out.push_back(f); }, lidar);
  return out;
}

inline std::string dataset_bytes(const std::vector<bridge::TelemetryFrame>& frames, double rate) {
  std::ostringstream os;
  bridge::DatasetWriter w(os, rate);
  for (const auto& f : frames) w.offer(f);
  return os.str();
}

}  // namespace deskpilot::app
