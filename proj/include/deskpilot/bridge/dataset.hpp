#pragma once
//
// Driving dataset in CSV: one row per telemetry frame, LIDAR ranges joined
// with ';' and missing returns written as `inf`. Numbers use the shortest
// representation that reads back to the same double, so a replayed file
// records to identical bytes.

#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <istream>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

#include "deskpilot/bridge/protocol.hpp"
#include "deskpilot/errors.hpp"

namespace deskpilot::bridge {

inline constexpr std::string_view kCsvHeader = "stamp,pos_x,pos_y,yaw,vel,throttle,steering,le_ticks,re_ticks,lidar_ranges";

struct DatasetRow {
  double stamp = 0.0;
  double pos_x = 0.0, pos_y = 0.0, yaw = 0.0;
  double vel = 0.0;
  double throttle = 0.0;
  double steering = 0.0;
  std::int64_t le_ticks = 0, re_ticks = 0;
  std::vector<double> ranges;

  friend bool operator==(const DatasetRow&, const DatasetRow&) = default;
};

/// Write failure. `partial()` is true when some rows already reached the file.
class RecordError : public std::runtime_error {
 public:
  RecordError(const std::string& what, bool partial) : std::runtime_error(what), partial_(partial) {}
  bool partial() const noexcept { return partial_; }

 private:
  bool partial_;
};

inline DatasetRow to_row(const TelemetryFrame& f) {
  return {f.sim_time, f.pose.x, f.pose.y, f.pose.yaw, f.vel, f.throttle, f.steering, f.le_ticks, f.re_ticks, f.scan.ranges};
}

namespace detail {

inline void put_number(std::string& out, double v) {
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);  // "inf" for +infinity
  out.append(buf, r.ptr);
}

inline double get_double(std::string_view s, std::size_t line, const char* col, bool allow_inf) {
  double v = 0.0;
  const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc{} || r.ptr != s.data() + s.size() || s.empty())
    throw ParseError(std::string("bad number in column ") + col + ": '" + std::string(s) + "'", line);
  if (std::isnan(v) || (std::isinf(v) && !(allow_inf && v > 0)))
    throw ParseError(std::string("non-finite value in column ") + col, line);
  return v;
}

inline std::int64_t get_int(std::string_view s, std::size_t line, const char* col) {
  std::int64_t v = 0;
  const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc{} || r.ptr != s.data() + s.size() || s.empty())
    throw ParseError(std::string("bad integer in column ") + col + ": '" + std::string(s) + "'", line);
  return v;
}

}  // namespace detail

inline std::string format_row(const DatasetRow& r) {
  std::string out;
  for (double v : {r.stamp, r.pos_x, r.pos_y, r.yaw, r.vel, r.throttle, r.steering}) {
    detail::put_number(out, v);
    out += ',';
  }
  out += std::to_string(r.le_ticks) + ',' + std::to_string(r.re_ticks) + ',';
  for (std::size_t i = 0; i < r.ranges.size(); ++i) {
    if (i) out += ';';
    detail::put_number(out, std::isfinite(r.ranges[i]) ? r.ranges[i] : sim::kNoReturn);
  }
  return out;
}

/// `line` is the 1-based line number reported in errors.
inline DatasetRow parse_row(std::string_view text, std::size_t line) {
  if (!text.empty() && text.back() == '\r') text.remove_suffix(1);
  std::vector<std::string_view> cols;
  std::size_t start = 0;
  for (std::size_t i = 0; i <= text.size(); ++i)
    if (i == text.size() || text[i] == ',') {
      cols.push_back(text.substr(start, i - start));
      start = i + 1;
    }
  if (cols.size() != 10) throw ParseError("expected 10 columns, got " + std::to_string(cols.size()), line);
  static constexpr const char* names[] = {"stamp", "pos_x", "pos_y", "yaw", "vel", "throttle", "steering"};
  DatasetRow r;
  double* dst[] = {&r.stamp, &r.pos_x, &r.pos_y, &r.yaw, &r.vel, &r.throttle, &r.steering};
  for (int c = 0; c < 7; ++c) *dst[c] = detail::get_double(cols[c], line, names[c], false);
  r.le_ticks = detail::get_int(cols[7], line, "le_ticks");
  r.re_ticks = detail::get_int(cols[8], line, "re_ticks");
  const std::string_view rs = cols[9];
  if (!rs.empty()) {
    std::size_t b = 0;
    for (std::size_t i = 0; i <= rs.size(); ++i)
      if (i == rs.size() || rs[i] == ';') {
        r.ranges.push_back(detail::get_double(rs.substr(b, i - b), line, "lidar_ranges", true));
        b = i + 1;
      }
  }
  return r;
}

/// Rows of a dataset. An empty stream yields no rows; otherwise the first
/// line must be the header.
inline std::vector<DatasetRow> read_dataset(std::istream& in) {
  std::vector<DatasetRow> rows;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (n == 1) {
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.empty()) continue;
      if (line != kCsvHeader) throw ParseError("unexpected header", 1);
      continue;
    }
    if (line.empty() || line == "\r") continue;
    rows.push_back(parse_row(line, n));
  }
  return rows;
}

inline std::vector<DatasetRow> load_dataset(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open dataset " + path);
  return read_dataset(in);
}

/// Writes frames at no more than `rate` rows per second of sim time.
class DatasetWriter {
 public:
  DatasetWriter(std::ostream& os, double rate) : os_(os), rate_(rate) {
    if (!(rate > 0.0)) throw ConfigError("dataset: rate must be positive");
    os_ << kCsvHeader << '\n';
    if (!os_) throw RecordError("dataset: write failed", false);
  }

  /// Returns true when the frame was written.
  bool offer(const TelemetryFrame& f) { return offer(to_row(f)); }

  bool offer(const DatasetRow& r) {
    if (rows_ > 0 && r.stamp < next_due_ - 1e-9) return false;
    if (rows_ == 0) first_ = r.stamp;
    os_ << format_row(r) << '\n';
    check();
    ++rows_;
    next_due_ = first_ + static_cast<double>(rows_) / rate_;
    return true;
  }

  std::size_t rows() const noexcept { return rows_; }
  void flush() {
    os_.flush();
    check();
  }

 private:
  void check() {
    // The header is already out, so anything left behind is a partial file.
    if (!os_) throw RecordError("dataset: write failed", true);
  }

  std::ostream& os_;
  double rate_;
  double first_ = 0.0;
  double next_due_ = 0.0;
  std::size_t rows_ = 0;
};

/// Records a frame stream to `path`; returns the number of rows.
inline std::size_t record_dataset(const std::vector<TelemetryFrame>& frames, const std::string& path, double rate) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw RecordError("dataset: cannot open " + path, false);
  DatasetWriter w(os, rate);
  for (const auto& f : frames) w.offer(f);
  w.flush();
  return w.rows();
}

/// Frame rebuilt from a row. The scan uses `lidar` for its geometry, with the
/// beam count taken from the row.
inline TelemetryFrame to_frame(const DatasetRow& r, std::uint64_t seq, const sim::LidarSpec& lidar = {}) {
  TelemetryFrame f;
  f.seq = seq;
  f.sim_time = r.stamp;
  f.pose = {r.pos_x, r.pos_y, r.yaw};
  f.vel = r.vel;
  f.throttle = r.throttle;
  f.steering = r.steering;
  f.le_ticks = r.le_ticks;
  f.re_ticks = r.re_ticks;
  f.scan.stamp = r.stamp;
  f.scan.ranges = r.ranges;
  f.scan.spec = lidar;
  if (r.ranges.size() != lidar.num_beams && !r.ranges.empty()) {
    f.scan.spec.num_beams = r.ranges.size();
    f.scan.spec.angle_increment = kTwoPi / static_cast<double>(r.ranges.size());
  }
  return f;
}

/// Re-emits the rows as frames in order. With `sleep` set, waits between
/// frames for the recorded stamp difference scaled by 1/speed.
inline std::size_t replay(const std::vector<DatasetRow>& rows, const std::function<void(const TelemetryFrame&)>& sink,
                          const sim::LidarSpec& lidar = {},
                          const std::function<void(double)>& sleep = {}, double speed = 1.0) {
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (sleep && i > 0) sleep((rows[i].stamp - rows[i - 1].stamp) / speed);
    sink(to_frame(rows[i], i + 1, lidar));
  }
  return rows.size();
}

}  // namespace deskpilot::bridge
