// deskpilot: scenario runner and bridge host.
//
// Exit codes: 0 success, 1 scenario failed, 2 configuration error, 3 runtime error.

#include <atomic>
#include <csignal>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "deskpilot/app/autopilot.hpp"
#include "deskpilot/app/params.hpp"
#include "deskpilot/app/recording.hpp"
#include "deskpilot/app/scenarios.hpp"
#include "deskpilot/bridge/dataset.hpp"
#include "deskpilot/bridge/server.hpp"

using namespace deskpilot;
using json = nlohmann::json;
namespace fs = std::filesystem;

namespace {

std::atomic<bool> g_stop{false};

struct Options {
  std::string world;
  std::string mode = "sim";
  std::uint64_t seed = 0;
  bool bridge = false;
  std::string host = "127.0.0.1";
  int port = 4567;
  std::string out = "out";
  std::vector<std::string> sets;
  std::string config;
  bool headless = true;
  double duration = -1.0;  // mode default when negative
  std::string route = "lap";
  std::string replay;
  std::string map;
  std::string goal;
  bool validate = false;
  bool fast = false;
};

json pose_json(const Pose2D& p) { return {{"x", p.x}, {"y", p.y}, {"yaw", p.yaw}}; }

Pose2D parse_pose(const std::string& s) {
  std::stringstream ss(s);
  std::string tok;
  std::vector<double> v;
  while (std::getline(ss, tok, ',')) {
    try {
      std::size_t used = 0;
      v.push_back(std::stod(tok, &used));
      if (used != tok.size()) throw std::invalid_argument(tok);
    } catch (const std::exception&) {
      throw ConfigError("--goal expects x,y,yaw; got '" + s + "'");
    }
  }
  if (v.size() != 3) throw ConfigError("--goal expects x,y,yaw; got '" + s + "'");
  return {v[0], v[1], wrap_angle(v[2])};
}

std::string write_file(const fs::path& path, const std::string& bytes) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!os) throw std::runtime_error("cannot write " + path.string());
  return app::hex64(app::fnv1a(bytes));
}

sim::WorldModel need_world(const Options& o) {
  if (o.world.empty()) throw ConfigError("--world is required for mode " + o.mode);
  return sim::load_world(o.world);
}

/// Prior map in world coordinates. Grids from --map are in the start frame,
/// as written by `--mode slam`; otherwise a SLAM lap builds one.
slam::OccupancyGrid prior_map(const Options& o, const app::Params& p, const sim::WorldModel& world, json& report) {
  if (!o.map.empty()) {
    std::ifstream in(o.map, std::ios::binary);
    if (!in) throw ConfigError("cannot open map " + o.map);
    report["map"] = o.map;
    return app::reframe(slam::read_grid(in), world.start_pose);
  }
  sim::SimConfig sc = p.sim;
  sc.seed = o.seed;
  const auto lap = app::run_slam_lap(world, app::make_route("lap", world.start_pose), p.slam, sc, 120.0, p.vehicle, p.lidar);
  report["map"] = {{"source", "slam lap"}, {"agreement", lap.agreement.ratio()}, {"loop_error_xy", lap.loop_error_xy}};
  return app::reframe(lap.slam.grids.front(), world.start_pose);
}

/// Serves a session over WebSocket until the duration elapses or SIGINT.
void serve_bridge(const Options& o, bridge::BridgeSession& session, double duration,
                  const std::function<void(const bridge::TelemetryFrame&)>& on_frame) {
  bridge::WebSocketServer server(session.config(), [&session](const std::string& m) { return session.submit(m); });
  server.start();
  std::cerr << "bridge listening on ws://" << o.host << ":" << server.port() << "/\n";
  bridge::serve(session, server, duration, g_stop, on_frame, !o.fast);
  server.stop();
}

bridge::BridgeConfig bridge_config(const Options& o, const app::Params& p) {
  bridge::BridgeConfig c;
  c.host = o.host;
  c.port = o.port;
  c.telemetry_rate = p.sim.telemetry_rate;
  c.validate();
  return c;
}

int run_sim(const Options& o, const app::Params& p, json& report) {
  const auto world = need_world(o);
  auto sim = app::make_simulator(world, p, o.seed);
  const double duration = o.duration >= 0 ? o.duration : (o.bridge ? 0.0 : 30.0);
  std::size_t frames = 0;
  if (o.bridge) {
    bridge::BridgeSession session(sim, bridge_config(o, p));
    serve_bridge(o, session, duration, [&frames](const bridge::TelemetryFrame&) { ++frames; });
  } else {
    frames = app::run_headless_session(sim, bridge_config(o, p), app::make_route(o.route, world.start_pose), duration).size();
  }
  report["frames"] = frames;
  report["final_pose"] = pose_json(sim.state().pose);
  report["sim_time"] = sim.state().sim_time;
  return 0;
}

int run_record(const Options& o, const app::Params& p, json& report) {
  const auto world = need_world(o);
  auto sim = app::make_simulator(world, p, o.seed);
  const double duration = o.duration >= 0 ? o.duration : (o.bridge ? 0.0 : 10.0);
  std::vector<bridge::TelemetryFrame> frames;
  if (o.bridge) {
    bridge::BridgeSession session(sim, bridge_config(o, p));
    serve_bridge(o, session, duration, [&frames](const bridge::TelemetryFrame& f) { frames.push_back(f); });
  } else {
    frames = app::run_headless_session(sim, bridge_config(o, p), app::make_route(o.route, world.start_pose), duration);
  }
  const fs::path path = fs::path(o.out) / "run.csv";
  const std::string bytes = app::dataset_bytes(frames, p.sim.telemetry_rate);
  report["csv"] = path.string();
  report["csv_hash"] = write_file(path, bytes);
  report["rows"] = std::count(bytes.begin(), bytes.end(), '\n') - 1;
  return 0;
}

int run_slam(const Options& o, const app::Params& p, json& report) {
  std::vector<bridge::TelemetryFrame> frames;
  if (!o.replay.empty()) {
    frames = app::frames_from_rows(bridge::load_dataset(o.replay), p.lidar);
    report["replay"] = o.replay;
  } else {
    const auto world = need_world(o);
    auto sim = app::make_simulator(world, p, o.seed);
    const double duration = o.duration >= 0 ? o.duration : (o.bridge ? 0.0 : 35.0);
    if (o.bridge) {
      bridge::BridgeSession session(sim, bridge_config(o, p));
      serve_bridge(o, session, duration, [&frames](const bridge::TelemetryFrame& f) { frames.push_back(f); });
    } else {
      frames = app::run_headless_session(sim, bridge_config(o, p), app::make_route(o.route, world.start_pose), duration);
    }
  }
  const auto st = app::slam_over_frames(frames, p.slam);
  const fs::path path = fs::path(o.out) / "map.grid";
  report["frames"] = frames.size();
  report["map_updates"] = st.map_updates;
  report["final_pose"] = pose_json(st.pose);
  report["grid"] = path.string();
  report["grid_hash"] = write_file(path, app::grid_bytes(st.grids.front()));
  return 0;
}

int run_replay(const Options& o, const app::Params& p, json& report) {
  if (o.replay.empty()) throw ConfigError("mode replay needs --replay <file.csv>");
  const auto rows = bridge::load_dataset(o.replay);
  std::vector<bridge::TelemetryFrame> frames;
  if (o.bridge) {
    bridge::BridgeConfig cfg = bridge_config(o, p);
    bridge::WebSocketServer server(cfg, [](const std::string&) {
      return bridge::error_message("commands are not accepted during replay");
    });
    server.start();
    std::cerr << "bridge listening on ws://" << o.host << ":" << server.port() << "/\n";
    std::function<void(double)> sleep;
    if (!o.fast) sleep = [](double s) { std::this_thread::sleep_for(std::chrono::duration<double>(std::max(0.0, s))); };
    bridge::replay(
        rows,
        [&](const bridge::TelemetryFrame& f) {
          if (!g_stop) server.broadcast(bridge::serialize(f));
          frames.push_back(f);
        },
        p.lidar, sleep);
    server.stop();
  } else {
    frames = app::frames_from_rows(rows, p.lidar);
  }
  const fs::path path = fs::path(o.out) / "replay.csv";
  report["frames"] = frames.size();
  report["csv"] = path.string();
  report["csv_hash"] = write_file(path, app::dataset_bytes(frames, p.sim.telemetry_rate));
  return 0;
}

int run_localize(const Options& o, const app::Params& p, json& report) {
  const auto world = need_world(o);
  const auto map = prior_map(o, p, world, report);
  auto sim = app::make_simulator(world, p, o.seed);
  app::LocalizedNavigator loc(map, p.nav, p.amcl, o.seed);
  const Pose2D initial = compose(world.start_pose, p.initial_pose);
  loc.init(initial, sim.scan_now(), 0.1, 0.2, p.amcl.kld.max_particles, 0);
  const auto route = app::make_route(o.route, world.start_pose);
  std::optional<sim::PurePursuit> driver;
  if (route.size() >= 2) driver.emplace(route, sim.vehicle());
  const double duration = o.duration >= 0 ? o.duration : 30.0;
  const auto steps = static_cast<long>(std::llround(duration / sim.dt()));
  for (long k = 0; k < steps; ++k) {
    if (driver && k % 10 == 0) {
      const auto c = driver->command(sim.state().pose);
      sim.set_command(c.throttle, c.steering);
    }
    const auto out = sim.step();
    if (out.scan) loc.on_scan(*out.scan);
  }
  const Pose2D est = loc.pose_at(sim.state().sim_time), truth = sim.state().pose;
  const double exy = (est.position() - truth.position()).norm(), eyaw = std::abs(angle_diff(est.yaw, truth.yaw));
  report["estimate"] = pose_json(est);
  report["truth"] = pose_json(truth);
  report["error_xy"] = exy;
  report["error_yaw"] = eyaw;
  report["filter_updates"] = loc.amcl().updates();
  report["particles"] = loc.amcl().particles().size();
  const bool ok = exy < 0.05 && eyaw < 5.0 * kPi / 180.0;
  report["success"] = ok;
  return ok ? 0 : 1;
}

int run_navigate(const Options& o, const app::Params& p, json& report, bool park) {
  const auto world = need_world(o);
  std::optional<Pose2D> goal;
  if (!o.goal.empty()) goal = parse_pose(o.goal);
  else if (world.goal_pose) goal = world.goal_pose;
  if (!goal && !o.bridge) throw ConfigError("mode " + o.mode + " needs a goal: add one to the world file or pass --goal");
  const auto map = prior_map(o, p, world, report);

  if (o.bridge) {
    auto sim = app::make_simulator(world, p, o.seed);
    app::NavAutopilot pilot(map, p, sim, o.seed);
    bridge::BridgeSession session(sim, bridge_config(o, p), &pilot);
    if (goal) {
      session.submit(bridge::to_json(bridge::Inbound{bridge::GoalCmd{*goal}}).dump());
      session.submit(R"({"type":"mode","mode":"autonomous"})");
    }
    serve_bridge(o, session, o.duration >= 0 ? o.duration : 0.0, {});
    report["final_pose"] = pose_json(sim.state().pose);
    report["status"] = pilot.status() ? nav::to_string(*pilot.status()) : "idle";
    return 0;
  }

  app::ParkingOptions opt;
  opt.seed = o.seed;
  opt.goal = *goal;
  if (park) opt.obstacles = app::parking_obstacles(world.start_pose, *goal, o.seed);
  opt.nav = p.nav;
  opt.amcl = p.amcl;
  opt.sim = p.sim;
  opt.vehicle = p.vehicle;
  opt.lidar = p.lidar;
  if (o.duration > 0) opt.time_limit = o.duration;
  const auto r = app::run_parking(world, map, opt);
  json obstacles = json::array();
  for (const auto& b : opt.obstacles) obstacles.push_back({{"x", b.center.x}, {"y", b.center.y}, {"size", b.size}});
  report["goal"] = pose_json(*goal);
  report["obstacles"] = obstacles;
  report["status"] = nav::to_string(r.status);
  report["success"] = r.success;
  report["lethal_contact"] = r.lethal_contact;
  report["final_error_xy"] = r.error_xy;
  report["final_error_yaw"] = r.error_yaw;
  report["localization_error"] = r.localization_error;
  report["sim_time"] = r.time;
  report["replans"] = r.replans;
  return r.success ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App cli{"deskpilot: desk-scale autonomous driving workbench"};
  Options o;
  cli.add_option("--world", o.world, "World file");
  cli.add_option("--mode", o.mode, "sim | slam | localize | navigate | park | record | replay")
      ->check(CLI::IsMember({"sim", "slam", "localize", "navigate", "park", "record", "replay"}));
  cli.add_option("--seed", o.seed, "Random seed");
  cli.add_flag("--bridge", o.bridge, "Serve the WebSocket bridge");
  cli.add_option("--host", o.host, "Bridge address");
  cli.add_option("--port", o.port, "Bridge port");
  cli.add_option("--out", o.out, "Output directory");
  cli.add_option("--set", o.sets, "Parameter override key=value (repeatable)");
  cli.add_option("--config", o.config, "Parameter file with key=value lines");
  cli.add_option("--headless", o.headless, "No interactive front end (default true)");
  cli.add_option("--duration", o.duration, "Sim seconds to run (0 with --bridge: until interrupted)");
  cli.add_option("--route", o.route, "Scripted route for headless runs: lap | eight | none");
  cli.add_option("--replay", o.replay, "Recorded CSV to replay");
  cli.add_option("--map", o.map, "Prior grid file for localize/navigate/park");
  cli.add_option("--goal", o.goal, "Goal pose x,y,yaw (overrides the world file)");
  cli.add_flag("--validate", o.validate, "Check the parameter set and exit");
  cli.add_flag("--fast", o.fast, "Do not pace bridge sessions to wall-clock time");
  CLI11_PARSE(cli, argc, argv);

  std::signal(SIGINT, [](int) { g_stop = true; });
  std::signal(SIGTERM, [](int) { g_stop = true; });

  json report{{"mode", o.mode}, {"seed", o.seed}};
  try {
    app::Params params;
    if (!o.config.empty()) app::load_params_file(params, o.config);
    for (const auto& s : o.sets) app::apply_override(params, s);
    const app::ParamReport check = app::validate_params(params);
    if (o.validate) {
      json checks = json::array();
      for (const auto& c : check.checks) checks.push_back({{"name", c.name}, {"ok", c.ok}, {"message", c.message}});
      std::cout << json{{"ok", check.ok}, {"turning_radius", check.turning_radius_expected}, {"checks", checks}}.dump(2)
                << "\n";
      return check.ok ? 0 : 2;
    }
    if (!check.ok) {
      std::cerr << "invalid parameters:\n" << check.failures();
      return 2;
    }
    if (!o.headless && !o.bridge) std::cerr << "note: --headless false has no effect without --bridge\n";
    fs::create_directories(o.out);

    int code = 0;
    if (o.mode == "sim") code = run_sim(o, params, report);
    else if (o.mode == "record") code = run_record(o, params, report);
    else if (o.mode == "slam") code = run_slam(o, params, report);
    else if (o.mode == "replay") code = run_replay(o, params, report);
    else if (o.mode == "localize") code = run_localize(o, params, report);
    else code = run_navigate(o, params, report, o.mode == "park");
    std::cout << report.dump(2) << "\n";
    return code;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const ParseError& e) {
    std::cerr << "parse error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
}
