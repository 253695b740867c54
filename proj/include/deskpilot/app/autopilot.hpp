#pragma once
//
// Bridge autopilot: localization + navigation on a prior map, goals from the
// cockpit.

#include <optional>

#include "deskpilot/app/params.hpp"
#include "deskpilot/app/scenarios.hpp"
#include "deskpilot/bridge/session.hpp"

namespace deskpilot::app {

class NavAutopilot : public bridge::Autopilot {
 public:
  NavAutopilot(const slam::OccupancyGrid& map, const Params& p, const sim::Simulator& sim, std::uint64_t seed)
      : map_(map), params_(p), sim_(sim), seed_(seed) {
    reset();
  }

  void set_goal(const Pose2D& goal) override {
    pilot_->set_goal(goal);
    status_.reset();
  }

  void reset() override {
    pilot_.emplace(map_, params_.nav, params_.amcl, seed_);
    const auto& st = sim_.state();
    pilot_->init(st.pose, sim::cast_scan(sim_.world(), st.pose, sim_.lidar(), st.sim_time), 0.05, 0.05, 1000, 5);
    steps_ = 0;
    last_.reset();
    status_.reset();
  }

  std::optional<sim::Command> step(const sim::StepOutput& out) override {
    if (out.scan) pilot_->on_scan(*out.scan);
    const long every = std::max<long>(1, std::lround(1.0 / (params_.nav.control_rate * sim_.dt())));
    if (steps_++ % every != 0) return std::nullopt;
    if (!pilot_->has_goal()) return sim::Command{};
    last_ = pilot_->control(out.state.sim_time);
    status_ = last_->status;
    if (last_->status != nav::NavStatus::Driving) return sim::Command{};
    return pilot_->actuation(*last_, sim_.vehicle());
  }

  std::optional<bridge::NavDiagnostics> diagnostics() const override {
    if (!last_) return std::nullopt;
    bridge::NavDiagnostics d;
    d.status = nav::to_string(last_->status);
    d.global_path = last_->global_path;
    d.band = last_->band;
    d.local_origin = last_->local_origin.position();
    d.local_size = last_->local_size;
    d.throttle = last_->command.throttle;
    d.steering = last_->command.steering;
    d.band_feasible = last_->band_feasible;
    d.replanned = last_->replanned;
    return d;
  }

  std::optional<nav::NavStatus> status() const noexcept { return status_; }
  Pose2D estimate() const { return pilot_->amcl().estimate().pose; }

 private:
  slam::OccupancyGrid map_;
  Params params_;
  const sim::Simulator& sim_;
  std::uint64_t seed_;
  std::optional<LocalizedNavigator> pilot_;
  std::optional<nav::NavOutput> last_;
  std::optional<nav::NavStatus> status_;
  long steps_ = 0;
};

}  // namespace deskpilot::app
