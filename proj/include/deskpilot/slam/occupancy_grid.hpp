#pragma once
//
// Log-odds occupancy grid with saturated probabilities, bilinear map access
// and a plain-text/bytes file format:
//
//   OGRID v1
//   <width> <height> <resolution> <origin_x> <origin_y> <origin_yaw>
//   <width*height bytes, row-major from cell (0,0)>
//
// Known cells store round(100 p); 255 marks unknown.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "deskpilot/errors.hpp"
#include "deskpilot/geom.hpp"

namespace deskpilot::slam {

inline double logit(double p) { return std::log(p / (1.0 - p)); }
inline double logistic(double l) { return 1.0 / (1.0 + std::exp(-l)); }

struct CellIndex {
  int x = 0;
  int y = 0;
  friend bool operator==(const CellIndex&, const CellIndex&) = default;
};

struct MapSample {
  double value = 0.5;
  Point2D gradient{};  // per meter, world frame
  bool in_bounds = false;
};

class OccupancyGrid {
 public:
  static constexpr double kUnknown = 0.5;
  static constexpr std::uint8_t kUnknownByte = 255;

  OccupancyGrid() = default;

  OccupancyGrid(int width, int height, double resolution, Pose2D origin, double p_free = 0.4, double p_occ = 0.9)
      : width_(width), height_(height), resolution_(resolution), origin_(origin), p_free_(p_free), p_occ_(p_occ) {
    if (width <= 0 || height <= 0) throw InvalidArgument("grid: dimensions must be positive");
    if (!(resolution > 0.0)) throw InvalidArgument("grid: resolution must be positive");
    if (!(0.0 < p_free && p_free < 0.5 && 0.5 < p_occ && p_occ < 1.0))
      throw InvalidArgument("grid: need 0 < p_free < 0.5 < p_occ < 1");
    if (!origin.finite()) throw InvalidArgument("grid: non-finite origin");
    log_odds_.assign(static_cast<std::size_t>(width) * height, 0.0);
    known_.assign(log_odds_.size(), 0);
  }

  /// Grid centred on `center` spanning size_cells x size_cells.
  static OccupancyGrid centered(int size_cells, double resolution, Point2D center = {}) {
    const double half = 0.5 * size_cells * resolution;
    return OccupancyGrid(size_cells, size_cells, resolution, {center.x - half, center.y - half, 0.0});
  }

  int width() const noexcept { return width_; }
  int height() const noexcept { return height_; }
  double resolution() const noexcept { return resolution_; }
  const Pose2D& origin() const noexcept { return origin_; }
  double p_free() const noexcept { return p_free_; }
  double p_occ() const noexcept { return p_occ_; }
  std::size_t size() const noexcept { return log_odds_.size(); }

  bool contains(const CellIndex& c) const noexcept { return c.x >= 0 && c.y >= 0 && c.x < width_ && c.y < height_; }
  std::size_t index(const CellIndex& c) const noexcept {
    return static_cast<std::size_t>(c.y) * static_cast<std::size_t>(width_) + static_cast<std::size_t>(c.x);
  }

  /// Continuous map coordinates: cell (i, j) has its centre at (i, j).
  Point2D world_to_map(const Point2D& p) const noexcept {
    const Point2D local = transform_point(inverse(origin_), p);
    return {local.x / resolution_ - 0.5, local.y / resolution_ - 0.5};
  }
  Point2D map_to_world(const Point2D& m) const noexcept {
    return transform_point(origin_, {(m.x + 0.5) * resolution_, (m.y + 0.5) * resolution_});
  }
  CellIndex cell_of(const Point2D& p) const noexcept {
    const Point2D m = world_to_map(p);
    return {static_cast<int>(std::floor(m.x + 0.5)), static_cast<int>(std::floor(m.y + 0.5))};
  }
  Point2D cell_center(const CellIndex& c) const noexcept {
    return map_to_world({static_cast<double>(c.x), static_cast<double>(c.y)});
  }

  bool known(const CellIndex& c) const { return known_[checked(c)] != 0; }
  double log_odds(const CellIndex& c) const { return log_odds_[checked(c)]; }
  double probability(const CellIndex& c) const {
    const std::size_t i = checked(c);
    return known_[i] ? logistic(log_odds_[i]) : kUnknown;
  }

  /// Adds `delta` in log-odds and saturates to [p_free, p_occ].
  void add_log_odds(const CellIndex& c, double delta) {
    const std::size_t i = checked(c);
    log_odds_[i] = std::clamp(log_odds_[i] + delta, logit(p_free_), logit(p_occ_));
    known_[i] = 1;
  }

  /// Sets a cell probability directly (clamped to the saturation limits).
  void set_probability(const CellIndex& c, double p) {
    const std::size_t i = checked(c);
    log_odds_[i] = std::clamp(logit(std::clamp(p, 1e-9, 1.0 - 1e-9)), logit(p_free_), logit(p_occ_));
    known_[i] = 1;
  }

  void set_unknown(const CellIndex& c) {
    const std::size_t i = checked(c);
    log_odds_[i] = 0.0;
    known_[i] = 0;
  }

  /// Bilinear probability and its world-frame gradient. Points whose four
  /// neighbouring cell centres are not all on the grid report (0.5, 0).
  MapSample interpolate(const Point2D& p) const {
    const Point2D m = world_to_map(p);
    MapSample s;
    if (!std::isfinite(m.x) || !std::isfinite(m.y)) return s;
    const double fx = std::floor(m.x), fy = std::floor(m.y);
    const int x0 = static_cast<int>(fx), y0 = static_cast<int>(fy);
    if (x0 < 0 || y0 < 0 || x0 + 1 >= width_ || y0 + 1 >= height_) return s;
    const double tx = m.x - fx, ty = m.y - fy;
    const double v00 = probability({x0, y0}), v10 = probability({x0 + 1, y0});
    const double v01 = probability({x0, y0 + 1}), v11 = probability({x0 + 1, y0 + 1});
    s.value = (1 - ty) * ((1 - tx) * v00 + tx * v10) + ty * ((1 - tx) * v01 + tx * v11);
    const double dmx = ((1 - ty) * (v10 - v00) + ty * (v11 - v01)) / resolution_;
    const double dmy = ((1 - tx) * (v01 - v00) + tx * (v11 - v10)) / resolution_;
    const double c = std::cos(origin_.yaw), sn = std::sin(origin_.yaw);
    s.gradient = {c * dmx - sn * dmy, sn * dmx + c * dmy};
    s.in_bounds = true;
    return s;
  }

  /// Same geometry, half the cells per side (resolution doubled), all unknown.
  OccupancyGrid coarser() const {
    return OccupancyGrid(std::max(1, width_ / 2), std::max(1, height_ / 2), resolution_ * 2.0, origin_, p_free_, p_occ_);
  }

  std::uint8_t quantized(const CellIndex& c) const {
    const std::size_t i = checked(c);
    if (!known_[i]) return kUnknownByte;
    return static_cast<std::uint8_t>(std::lround(100.0 * logistic(log_odds_[i])));
  }

  /// Cells equal after quantization and geometry identical.
  bool same_quantized(const OccupancyGrid& o) const {
    if (width_ != o.width_ || height_ != o.height_ || resolution_ != o.resolution_ || !(origin_ == o.origin_))
      return false;
    for (int y = 0; y < height_; ++y)
      for (int x = 0; x < width_; ++x)
        if (quantized({x, y}) != o.quantized({x, y})) return false;
    return true;
  }

  const std::vector<double>& raw_log_odds() const noexcept { return log_odds_; }
  const std::vector<std::uint8_t>& raw_known() const noexcept { return known_; }

 private:
  std::size_t checked(const CellIndex& c) const {
    if (!contains(c)) throw InvalidArgument("grid: cell out of bounds");
    return index(c);
  }

  int width_ = 0;
  int height_ = 0;
  double resolution_ = 0.05;
  Pose2D origin_{};
  double p_free_ = 0.4;
  double p_occ_ = 0.9;
  std::vector<double> log_odds_;
  std::vector<std::uint8_t> known_;
};

inline void write_grid(std::ostream& os, const OccupancyGrid& g) {
  std::ostringstream header;
  header.precision(17);
  header << "OGRID v1\n"
         << g.width() << ' ' << g.height() << ' ' << g.resolution() << ' ' << g.origin().x << ' ' << g.origin().y << ' '
         << g.origin().yaw << '\n';
  os << header.str();
  std::string bytes(g.size(), '\0');
  for (int y = 0; y < g.height(); ++y)
    for (int x = 0; x < g.width(); ++x) bytes[g.index({x, y})] = static_cast<char>(g.quantized({x, y}));
  os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!os) throw std::runtime_error("grid: write failed");
}

inline OccupancyGrid read_grid(std::istream& is) {
  std::string line;
  if (!std::getline(is, line)) throw ParseError("grid: empty input", 1);
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "OGRID v1") throw ParseError("grid: bad magic '" + line + "'", 1);
  if (!std::getline(is, line)) throw ParseError("grid: missing header", 2);
  std::istringstream hs(line);
  int w = 0, h = 0;
  double res = 0, ox = 0, oy = 0, oyaw = 0;
  if (!(hs >> w >> h >> res >> ox >> oy >> oyaw)) throw ParseError("grid: malformed header", 2);
  std::string extra;
  if (hs >> extra) throw ParseError("grid: trailing header token '" + extra + "'", 2);
  OccupancyGrid g;
  try {
    g = OccupancyGrid(w, h, res, {ox, oy, oyaw});
  } catch (const InvalidArgument& e) {
    throw ParseError(e.what(), 2);
  }
  std::string bytes(g.size(), '\0');
  is.read(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (static_cast<std::size_t>(is.gcount()) != bytes.size())
    throw ParseError("grid: expected " + std::to_string(bytes.size()) + " cell bytes, got " +
                         std::to_string(is.gcount()),
                     3);
  if (is.peek() != std::char_traits<char>::eof()) throw ParseError("grid: trailing data after cells", 3);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const auto v = static_cast<std::uint8_t>(bytes[g.index({x, y})]);
      if (v == OccupancyGrid::kUnknownByte) continue;
      if (v > 100) throw ParseError("grid: cell value " + std::to_string(v) + " out of range", 3);
      g.set_probability({x, y}, v / 100.0);
    }
  return g;
}

inline void export_grid(const OccupancyGrid& g, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("grid: cannot open " + path + " for writing");
  write_grid(os, g);
}

inline OccupancyGrid import_grid(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("grid: cannot open " + path);
  return read_grid(is);
}

}  // namespace deskpilot::slam
