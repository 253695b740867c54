#pragma once
//
// Wire schema for the telemetry/command bridge. Every message is one JSON
// object with a "type" and "v":1. Infinite ranges travel as null since JSON
// has no infinity.

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "json.hpp"

#include "deskpilot/errors.hpp"
#include "deskpilot/geom.hpp"
#include "deskpilot/sim/lidar.hpp"

namespace deskpilot::bridge {

inline constexpr int kSchemaVersion = 1;

struct BridgeConfig {
  std::string host = "127.0.0.1";
  int port = 4567;
  double telemetry_rate = 15.0;  // Hz
  double deadman_timeout = 0.5;  // s without a drive refresh before throttle is zeroed

  void validate() const {
    if (port < 1 || port > 65535) throw ConfigError("bridge: port must be in [1, 65535]");
    if (!(telemetry_rate > 0.0)) throw ConfigError("bridge: telemetry_rate must be positive");
    if (!(deadman_timeout > 0.0)) throw ConfigError("bridge: deadman_timeout must be positive");
  }
};

enum class DriveMode { Manual, Autonomous };

inline const char* to_string(DriveMode m) { return m == DriveMode::Manual ? "manual" : "autonomous"; }

struct NavDiagnostics {
  std::string status;
  std::vector<Point2D> global_path;
  std::vector<Pose2D> band;
  Point2D local_origin{};
  double local_size = 0.0;
  double throttle = 0.0;  // normalized nav command
  double steering = 0.0;
  bool band_feasible = false;
  bool replanned = false;
};

struct TelemetryFrame {
  std::uint64_t seq = 0;
  double sim_time = 0.0;
  Pose2D pose{};
  double vel = 0.0;
  double throttle = 0.0;  // commanded, [-1, 1]
  double steering = 0.0;  // wheel angle, rad
  std::int64_t le_ticks = 0;
  std::int64_t re_ticks = 0;
  sim::LaserScan scan;
  std::string mode = "manual";
  std::optional<Pose2D> goal;
  std::optional<NavDiagnostics> nav;
};

// Inbound commands.
struct DriveCmd {
  double throttle = 0.0;
  double steering = 0.0;
};
struct GoalCmd {
  Pose2D goal{};
};
struct ModeCmd {
  DriveMode mode = DriveMode::Manual;
};
struct ResetCmd {};

using Inbound = std::variant<DriveCmd, GoalCmd, ModeCmd, ResetCmd>;

inline const char* type_name(const Inbound& m) {
  switch (m.index()) {
    case 0: return "drive";
    case 1: return "goal";
    case 2: return "mode";
    default: return "reset";
  }
}

/// Malformed inbound message.
class ProtocolError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

inline double finite_number(const nlohmann::json& j, const char* key) {
  const auto it = j.find(key);
  if (it == j.end()) throw ProtocolError(std::string("missing field '") + key + "'");
  if (!it->is_number()) throw ProtocolError(std::string("field '") + key + "' must be a number");
  const double v = it->get<double>();
  if (!std::isfinite(v)) throw ProtocolError(std::string("field '") + key + "' must be finite");
  return v;
}

inline nlohmann::json pose_json(const Pose2D& p) { return {{"x", p.x}, {"y", p.y}, {"yaw", p.yaw}}; }

}  // namespace detail

/// Parses one client message. A missing "v" is read as the current version.
inline Inbound parse_inbound(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ProtocolError(std::string("invalid JSON: ") + e.what());
  }
  if (!j.is_object()) throw ProtocolError("message must be a JSON object");
  if (const auto v = j.find("v"); v != j.end() && (!v->is_number_integer() || v->get<int>() != kSchemaVersion))
    throw ProtocolError("unsupported schema version");
  const auto t = j.find("type");
  if (t == j.end() || !t->is_string()) throw ProtocolError("missing string field 'type'");
  const std::string type = t->get<std::string>();
  if (type == "drive") {
    const double th = detail::finite_number(j, "throttle"), st = detail::finite_number(j, "steering");
    if (std::abs(th) > 1.0 || std::abs(st) > 1.0) throw ProtocolError("drive values must lie in [-1, 1]");
    return DriveCmd{th, st};
  }
  if (type == "goal") {
    return GoalCmd{{detail::finite_number(j, "x"), detail::finite_number(j, "y"),
                    wrap_angle(detail::finite_number(j, "yaw"))}};
  }
  if (type == "mode") {
    const auto m = j.find("mode");
    if (m == j.end() || !m->is_string()) throw ProtocolError("missing string field 'mode'");
    if (*m == "manual") return ModeCmd{DriveMode::Manual};
    if (*m == "autonomous") return ModeCmd{DriveMode::Autonomous};
    throw ProtocolError("mode must be \"manual\" or \"autonomous\"");
  }
  if (type == "reset") return ResetCmd{};
  throw ProtocolError("unknown message type '" + type + "'");
}

inline nlohmann::json to_json(const Inbound& m) {
  nlohmann::json j{{"type", type_name(m)}, {"v", kSchemaVersion}};
  if (const auto* d = std::get_if<DriveCmd>(&m)) {
    j["throttle"] = d->throttle;
    j["steering"] = d->steering;
  } else if (const auto* g = std::get_if<GoalCmd>(&m)) {
    j["x"] = g->goal.x;
    j["y"] = g->goal.y;
    j["yaw"] = g->goal.yaw;
  } else if (const auto* md = std::get_if<ModeCmd>(&m)) {
    j["mode"] = to_string(md->mode);
  }
  return j;
}

inline std::string ack_message(const std::string& of) {
  return nlohmann::json{{"type", "ack"}, {"v", kSchemaVersion}, {"of", of}}.dump();
}

inline std::string error_message(const std::string& what) {
  return nlohmann::json{{"type", "error"}, {"v", kSchemaVersion}, {"message", what}}.dump();
}

inline nlohmann::json to_json(const TelemetryFrame& f) {
  nlohmann::json ranges = nlohmann::json::array();
  for (double r : f.scan.ranges) ranges.push_back(std::isfinite(r) ? nlohmann::json(r) : nlohmann::json(nullptr));
  const auto& s = f.scan.spec;
  nlohmann::json j{
      {"type", "telemetry"},
      {"v", kSchemaVersion},
      {"seq", f.seq},
      {"sim_time", f.sim_time},
      {"pose", detail::pose_json(f.pose)},
      {"vel", f.vel},
      {"throttle", f.throttle},
      {"steering", f.steering},
      {"le_ticks", f.le_ticks},
      {"re_ticks", f.re_ticks},
      {"mode", f.mode},
      {"scan",
       {{"stamp", f.scan.stamp},
        {"angle_min", s.angle_min},
        {"angle_increment", s.angle_increment},
        {"range_min", s.range_min},
        {"range_max", s.range_max},
        {"ranges", std::move(ranges)}}},
  };
  j["goal"] = f.goal ? detail::pose_json(*f.goal) : nlohmann::json(nullptr);
  if (f.nav) {
    nlohmann::json path = nlohmann::json::array(), band = nlohmann::json::array();
    for (const auto& p : f.nav->global_path) path.push_back({p.x, p.y});
    for (const auto& p : f.nav->band) band.push_back({p.x, p.y, p.yaw});
    j["nav"] = {{"status", f.nav->status},
                {"global_path", std::move(path)},
                {"band", std::move(band)},
                {"local_origin", {f.nav->local_origin.x, f.nav->local_origin.y}},
                {"local_size", f.nav->local_size},
                {"command", {{"throttle", f.nav->throttle}, {"steering", f.nav->steering}}},
                {"band_feasible", f.nav->band_feasible},
                {"replanned", f.nav->replanned}};
  } else {
    j["nav"] = nullptr;
  }
  return j;
}

inline std::string serialize(const TelemetryFrame& f) { return to_json(f).dump(); }

/// Inverse of serialize for the core fields (nav diagnostics are not read back).
inline TelemetryFrame parse_telemetry(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ProtocolError(std::string("invalid JSON: ") + e.what());
  }
  if (!j.is_object() || j.value("type", "") != "telemetry") throw ProtocolError("not a telemetry frame");
  try {
    TelemetryFrame f;
    f.seq = j.at("seq").get<std::uint64_t>();
    f.sim_time = j.at("sim_time").get<double>();
    const auto& p = j.at("pose");
    f.pose = {p.at("x").get<double>(), p.at("y").get<double>(), p.at("yaw").get<double>()};
    f.vel = j.at("vel").get<double>();
    f.throttle = j.at("throttle").get<double>();
    f.steering = j.at("steering").get<double>();
    f.le_ticks = j.at("le_ticks").get<std::int64_t>();
    f.re_ticks = j.at("re_ticks").get<std::int64_t>();
    f.mode = j.at("mode").get<std::string>();
    const auto& s = j.at("scan");
    f.scan.stamp = s.at("stamp").get<double>();
    f.scan.spec.angle_min = s.at("angle_min").get<double>();
    f.scan.spec.angle_increment = s.at("angle_increment").get<double>();
    f.scan.spec.range_min = s.at("range_min").get<double>();
    f.scan.spec.range_max = s.at("range_max").get<double>();
    for (const auto& r : s.at("ranges")) f.scan.ranges.push_back(r.is_null() ? sim::kNoReturn : r.get<double>());
    f.scan.spec.num_beams = f.scan.ranges.size();
    if (const auto g = j.find("goal"); g != j.end() && !g->is_null())
      f.goal = Pose2D{g->at("x").get<double>(), g->at("y").get<double>(), g->at("yaw").get<double>()};
    return f;
  } catch (const nlohmann::json::exception& e) {
    throw ProtocolError(std::string("malformed telemetry frame: ") + e.what());
  }
}

}  // namespace deskpilot::bridge
