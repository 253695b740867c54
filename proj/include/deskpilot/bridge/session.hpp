#pragma once
//
// Simulation side of the bridge. Network threads only push parsed commands
// into the queue; the simulation loop drains it before every physics step,
// so a command takes effect on the next step and the simulator has a single
// writer.

#include <atomic>
#include <deque>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "deskpilot/bridge/protocol.hpp"
#include "deskpilot/sim/simulator.hpp"

namespace deskpilot::bridge {

class CommandQueue {
 public:
  void push(Inbound m) {
    std::lock_guard lock(mu_);
    q_.push_back(std::move(m));
  }
  std::vector<Inbound> drain() {
    std::lock_guard lock(mu_);
    std::vector<Inbound> out(std::make_move_iterator(q_.begin()), std::make_move_iterator(q_.end()));
    q_.clear();
    return out;
  }
  std::size_t size() const {
    std::lock_guard lock(mu_);
    return q_.size();
  }

 private:
  mutable std::mutex mu_;
  std::deque<Inbound> q_;
};

/// Hook for autonomous driving; called from the simulation loop only.
class Autopilot {
 public:
  virtual ~Autopilot() = default;
  virtual void set_goal(const Pose2D& goal) = 0;
  virtual void reset() {}
  /// Command to hold after this physics step, or nullopt to keep the current one.
  virtual std::optional<sim::Command> step(const sim::StepOutput& out) = 0;
  virtual std::optional<NavDiagnostics> diagnostics() const { return std::nullopt; }
};

class BridgeSession {
 public:
  BridgeSession(sim::Simulator& sim, BridgeConfig cfg, Autopilot* autopilot = nullptr)
      : sim_(sim), cfg_(std::move(cfg)), autopilot_(autopilot) {
    cfg_.validate();
  }

  /// Network entry point: parse, enqueue, and return the reply for the sender.
  std::string submit(const std::string& text) {
    try {
      Inbound m = parse_inbound(text);
      if (std::holds_alternative<DriveCmd>(m) && mode_.load() == DriveMode::Autonomous)
        return error_message("drive ignored in autonomous mode");
      const std::string type = type_name(m);
      if (std::holds_alternative<ModeCmd>(m)) mode_.store(std::get<ModeCmd>(m).mode);
      queue_.push(std::move(m));
      return ack_message(type);
    } catch (const ProtocolError& e) {
      return error_message(e.what());
    }
  }

  CommandQueue& queue() noexcept { return queue_; }

  /// Applies queued commands, advances one physics step and returns a frame
  /// when one is due at the telemetry rate.
  std::optional<TelemetryFrame> tick() {
    for (auto& m : queue_.drain()) apply(m);
    const double now = sim_.state().sim_time;
    if (applied_mode_ == DriveMode::Manual && driving_ && now - last_drive_ >= cfg_.deadman_timeout) {
      sim_.set_command(0.0, 0.0);
      driving_ = false;
    }
    const sim::StepOutput out = sim_.step();
    ++steps_;
    if (out.scan) last_scan_ = *out.scan;
    if (applied_mode_ == DriveMode::Autonomous && autopilot_)
      if (const auto c = autopilot_->step(out)) sim_.set_command(c->throttle, c->steering);
    if (steps_ < due_step(frames_ + 1)) return std::nullopt;
    ++frames_;
    return make_frame(out.state);
  }

  DriveMode mode() const noexcept { return applied_mode_; }
  const std::optional<Pose2D>& goal() const noexcept { return goal_; }
  std::uint64_t frames_emitted() const noexcept { return frames_; }
  const BridgeConfig& config() const noexcept { return cfg_; }
  sim::Simulator& simulator() noexcept { return sim_; }

 private:
  void apply(const Inbound& m) {
    const double now = sim_.state().sim_time;
    if (const auto* d = std::get_if<DriveCmd>(&m)) {
      if (applied_mode_ != DriveMode::Manual) return;
      sim_.set_command(d->throttle, d->steering);  // last writer wins
      last_drive_ = now;
      driving_ = true;
    } else if (const auto* g = std::get_if<GoalCmd>(&m)) {
      goal_ = g->goal;
      if (autopilot_) autopilot_->set_goal(g->goal);
    } else if (const auto* md = std::get_if<ModeCmd>(&m)) {
      if (md->mode != applied_mode_) sim_.set_command(0.0, 0.0);
      applied_mode_ = md->mode;
      driving_ = false;
    } else {
      sim_.reset();
      if (autopilot_) autopilot_->reset();
      applied_mode_ = DriveMode::Manual;
      mode_.store(DriveMode::Manual);
      goal_.reset();
      last_scan_.reset();
      driving_ = false;
      steps_ = 0;
      frames_base_ = frames_;
    }
  }

  std::uint64_t due_step(std::uint64_t k) const {
    // Frame k of the current episode; seq keeps counting across resets.
    const double per = sim_.config().physics_rate / cfg_.telemetry_rate;
    return static_cast<std::uint64_t>(std::ceil(static_cast<double>(k - frames_base_) * per - 1e-9));
  }

  TelemetryFrame make_frame(const sim::VehicleState& s) {
    TelemetryFrame f;
    f.seq = frames_;
    f.sim_time = s.sim_time;
    f.pose = s.pose;
    f.vel = s.speed;
    f.throttle = s.commanded_throttle;
    f.steering = s.steering;
    f.le_ticks = s.encoder_ticks_left;
    f.re_ticks = s.encoder_ticks_right;
    // Before the first scan: a noise-free cast that leaves the sim RNG alone.
    if (!last_scan_) last_scan_ = sim::cast_scan(sim_.world(), s.pose, sim_.lidar(), s.sim_time);
    f.scan = *last_scan_;
    f.mode = to_string(applied_mode_);
    f.goal = goal_;
    if (autopilot_ && applied_mode_ == DriveMode::Autonomous) f.nav = autopilot_->diagnostics();
    return f;
  }

  sim::Simulator& sim_;
  BridgeConfig cfg_;
  Autopilot* autopilot_;
  CommandQueue queue_;
  std::atomic<DriveMode> mode_{DriveMode::Manual};  // as seen by submit()
  DriveMode applied_mode_ = DriveMode::Manual;
  std::optional<Pose2D> goal_;
  std::optional<sim::LaserScan> last_scan_;
  double last_drive_ = 0.0;
  bool driving_ = false;
  std::uint64_t steps_ = 0;
  std::uint64_t frames_ = 0;
  std::uint64_t frames_base_ = 0;
};

}  // namespace deskpilot::bridge
