#pragma once
//
// Fixed-step simulation loop. The simulator is the single writer of vehicle
// state; callers get value snapshots back from step().

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <vector>

#include "deskpilot/errors.hpp"
#include "deskpilot/sim/lidar.hpp"
#include "deskpilot/sim/vehicle.hpp"
#include "deskpilot/sim/world.hpp"

namespace deskpilot::sim {

struct SimConfig {
  double physics_rate = 100.0;    // Hz
  double telemetry_rate = 15.0;   // Hz
  double range_noise_sigma = 0.0; // m, Gaussian, off by default
  std::uint64_t seed = 0;

  void validate(const LidarSpec& lidar) const {
    if (!(physics_rate > 0.0) || !(telemetry_rate > 0.0)) throw InvalidArgument("sim: rates must be positive");
    if (physics_rate < lidar.rate) throw InvalidArgument("sim: physics rate must be >= lidar rate");
    if (1.0 / physics_rate > kMaxVehicleStep) throw InvalidArgument("sim: physics step exceeds 0.1 s");
    if (!(range_noise_sigma >= 0.0)) throw InvalidArgument("sim: range noise must be >= 0");
  }
};

struct StepOutput {
  VehicleState state;
  std::optional<LaserScan> scan;
  bool telemetry_due = false;
};

class Simulator {
 public:
  Simulator(WorldModel world, VehicleSpec vehicle, LidarSpec lidar, SimConfig config)
      : world_(std::move(world)), vehicle_(vehicle), lidar_(lidar), config_(config), rng_(config.seed) {
    vehicle_.validate();
    lidar_.validate();
    config_.validate(lidar_);
    reset();
  }

  void reset() { reset(world_.start_pose); }

  void reset(const Pose2D& pose) {
    state_ = VehicleState{};
    state_.pose = pose;
    step_index_ = 0;
    scans_emitted_ = 0;
    frames_emitted_ = 0;
    rng_.seed(config_.seed);
  }

  /// Normalized command, clamped to [-1, 1]; held until replaced.
  void set_command(double throttle, double steering) {
    state_.commanded_throttle = std::isfinite(throttle) ? std::clamp(throttle, -1.0, 1.0) : 0.0;
    state_.commanded_steering = std::isfinite(steering) ? std::clamp(steering, -1.0, 1.0) : 0.0;
  }

  StepOutput step() {
    ++step_index_;
    state_ = step_vehicle(state_, vehicle_, 1.0 / config_.physics_rate);
    // Anchor time to the step counter so long runs do not drift.
    state_.sim_time = static_cast<double>(step_index_) / config_.physics_rate;

    StepOutput out{state_, std::nullopt, false};
    if (step_index_ >= due_step(scans_emitted_ + 1, lidar_.rate)) {
      ++scans_emitted_;
      out.scan = scan_now();
    }
    if (step_index_ >= due_step(frames_emitted_ + 1, config_.telemetry_rate)) {
      ++frames_emitted_;
      out.telemetry_due = true;
    }
    return out;
  }

  /// Scan from the current pose, with configured range noise applied.
  LaserScan scan_now() {
    LaserScan scan = cast_scan(world_, state_.pose, lidar_, state_.sim_time);
    if (config_.range_noise_sigma > 0.0) {
      std::normal_distribution<double> noise(0.0, config_.range_noise_sigma);
      for (auto& r : scan.ranges) {
        if (!std::isfinite(r)) continue;
        const double noisy = r + noise(rng_);
        r = lidar_.valid_range(noisy) ? noisy : kNoReturn;
      }
    }
    return scan;
  }

  const VehicleState& state() const noexcept { return state_; }
  const WorldModel& world() const noexcept { return world_; }
  WorldModel& mutable_world() noexcept { return world_; }
  const VehicleSpec& vehicle() const noexcept { return vehicle_; }
  const LidarSpec& lidar() const noexcept { return lidar_; }
  const SimConfig& config() const noexcept { return config_; }
  double dt() const noexcept { return 1.0 / config_.physics_rate; }

 private:
  std::uint64_t due_step(std::uint64_t k, double rate) const {
    return static_cast<std::uint64_t>(std::ceil(static_cast<double>(k) * config_.physics_rate / rate - 1e-9));
  }

  WorldModel world_;
  VehicleSpec vehicle_;
  LidarSpec lidar_;
  SimConfig config_;
  VehicleState state_{};
  std::uint64_t step_index_ = 0;
  std::uint64_t scans_emitted_ = 0;
  std::uint64_t frames_emitted_ = 0;
  std::mt19937_64 rng_;
};

struct Command {
  double throttle = 0.0;
  double steering = 0.0;
};

/// Runs `duration` seconds; `commands(t)` supplies the command held over the next step.
inline std::vector<StepOutput> run_loop(const WorldModel& world, const VehicleSpec& vehicle, const LidarSpec& lidar,
                                        const SimConfig& config, double duration,
                                        const std::function<Command(double)>& commands) {
  Simulator sim(world, vehicle, lidar, config);
  std::vector<StepOutput> out;
  const auto steps = static_cast<std::uint64_t>(std::llround(duration * config.physics_rate));
  out.reserve(steps);
  for (std::uint64_t i = 0; i < steps; ++i) {
    const Command c = commands ? commands(sim.state().sim_time) : Command{};
    sim.set_command(c.throttle, c.steering);
    out.push_back(sim.step());
  }
  return out;
}

}  // namespace deskpilot::sim
