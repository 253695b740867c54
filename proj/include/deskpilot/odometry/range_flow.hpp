#pragma once
//
// Dense planar range-flow odometry.
//
// Every beam valid in two consecutive scans contributes one linear constraint
// on the sensor twist (vx, vy, omega):
//
//   (cos t + La*ka*sin t / r) vx + (sin t - La*ka*cos t / r) vy
//     + (x sin t - y cos t - La*ka) omega + Lt = 0
//
// with Lt the temporal range derivative, La the derivative along the scan
// index and ka = d(index)/d(angle). The stacked system is solved with IRLS
// under a Cauchy M-estimator, coarse to fine over a bilateral pyramid; each
// finer level first warps the newer scan by the motion found so far.
//
// Sign convention: the twist solved for is the velocity of the sensor. Static
// points appear to move with the opposite twist, which is what the constraint
// encodes, so a sensor driving forward yields vx > 0 here and the vehicle pose
// integrates that twist directly.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "deskpilot/errors.hpp"
#include "deskpilot/geom.hpp"
#include "deskpilot/sim/lidar.hpp"

namespace deskpilot::odometry {

using sim::LaserScan;
using sim::LidarSpec;

struct RangeFlowConfig {
  int pyramid_levels = 3;
  double cauchy_k = 0.5;      // m/s, residual scale of the M-estimator
  int irls_max_iters = 20;
  double irls_tol = 1e-5;     // twist-norm change that ends IRLS
  std::size_t min_valid_points = 30;
  double bilateral_sigma_spatial = 1.0;  // beams
  double bilateral_sigma_range = 0.3;    // m
  double max_condition = 1e8;
  bool constant_velocity_prior = true;
  int finest_level_passes = 2;  // warp + re-solve passes on the full-resolution scan
  Pose2D sensor_mount{};        // sensor pose in the vehicle frame

  void validate() const {
    if (pyramid_levels < 1) throw InvalidArgument("range flow: pyramid_levels must be >= 1");
    if (!(cauchy_k > 0.0)) throw InvalidArgument("range flow: cauchy_k must be positive");
    if (irls_max_iters < 1) throw InvalidArgument("range flow: irls_max_iters must be >= 1");
    if (finest_level_passes < 1) throw InvalidArgument("range flow: finest_level_passes must be >= 1");
  }
};

/// Real-valued scan coordinate of a beam at angle `theta` from the scan centre,
/// for an N-beam scan spanning field of view `fov`.
inline double scan_index_of_angle(double theta, std::size_t n, double fov) {
  if (!(fov > 0.0)) throw InvalidArgument("scan_index_of_angle: field of view must be positive");
  const double k_alpha = static_cast<double>(n - 1) / fov;
  return k_alpha * theta + static_cast<double>(n - 1) / 2.0;
}

namespace detail {

inline std::size_t neighbour(const LidarSpec& spec, std::size_t i, int offset, bool& ok) {
  const auto n = static_cast<long>(spec.num_beams);
  long j = static_cast<long>(i) + offset;
  if (spec.circular()) {
    j = ((j % n) + n) % n;
  } else if (j < 0 || j >= n) {
    ok = false;
    return 0;
  }
  ok = true;
  return static_cast<std::size_t>(j);
}

/// Range step between two returns too large for them to lie on one surface.
inline bool depth_jump(double a, double b) { return std::abs(a - b) > 0.1 * std::min(a, b) + 0.02; }

}  // namespace detail

/// Edge-preserving smoothing followed by 2x decimation, repeated.
/// Level 0 is the input; level i has num_beams / 2^i beams.
inline std::vector<LaserScan> build_pyramid(const LaserScan& scan, int levels, double sigma_spatial = 1.0,
                                            double sigma_range = 0.3) {
  if (levels < 1) throw InvalidArgument("build_pyramid: levels must be >= 1");
  const std::size_t min_beams = (std::size_t{1} << (levels - 1)) * 8;
  if (scan.size() < min_beams) throw InvalidArgument("build_pyramid: scan too short for requested levels");
  if (scan.size() != scan.spec.num_beams) throw InvalidArgument("build_pyramid: range count does not match spec");

  std::vector<LaserScan> pyr{scan};
  const int radius = std::max(1, static_cast<int>(std::ceil(2.0 * sigma_spatial)));
  for (int l = 1; l < levels; ++l) {
    const LaserScan& fine = pyr.back();
    const LidarSpec& fs = fine.spec;
    LaserScan coarse;
    coarse.stamp = fine.stamp;
    coarse.spec = fs;
    coarse.spec.num_beams = fs.num_beams / 2;
    coarse.spec.angle_increment = fs.angle_increment * 2.0;
    coarse.ranges.assign(coarse.spec.num_beams, sim::kNoReturn);
    for (std::size_t j = 0; j < coarse.spec.num_beams; ++j) {
      const std::size_t c = 2 * j;
      if (!fine.valid(c)) continue;
      const double rc = fine.ranges[c];
      double wsum = 0.0, acc = 0.0;
      for (int o = -radius; o <= radius; ++o) {
        bool ok = false;
        const std::size_t k = detail::neighbour(fs, c, o, ok);
        if (!ok || !fine.valid(k)) continue;
        const double dr = fine.ranges[k] - rc;
        const double w = std::exp(-0.5 * (o * o) / (sigma_spatial * sigma_spatial)) *
                         std::exp(-0.5 * dr * dr / (sigma_range * sigma_range));
        wsum += w;
        acc += w * fine.ranges[k];
      }
      coarse.ranges[j] = acc / wsum;
    }
    pyr.push_back(std::move(coarse));
  }
  return pyr;
}

/// One jointly valid beam with its flow derivatives, evaluated on the mean of the two scans.
struct FlowPoint {
  std::size_t index = 0;
  double r = 0.0;      // m
  double theta = 0.0;  // rad, sensor frame
  double x = 0.0, y = 0.0;
  double lt = 0.0;     // dL/dt, m/s
  double la = 0.0;     // dL/d(index), m per beam
};

struct ScanGradients {
  std::vector<FlowPoint> points;
  double k_alpha = 1.0;  // beams per radian
  double dt = 0.0;
};

/// Temporal derivative by forward difference, index derivative by a
/// distance-weighted central difference over the mean scan (reduces to the
/// plain central difference on smooth data, and leans towards the nearer
/// neighbour). Beams invalid in either scan are skipped, as are beams on an
/// occlusion change or a corner, where neither derivative means anything.
inline ScanGradients compute_gradients(const LaserScan& prev, const LaserScan& curr, double dt,
                                       std::size_t min_valid_points = 30) {
  if (prev.size() != curr.size()) throw InvalidArgument("compute_gradients: scans differ in size");
  if (!(dt > 0.0)) throw InvalidArgument("compute_gradients: dt must be positive");
  const LidarSpec& spec = prev.spec;
  const std::size_t n = prev.size();
  std::vector<double> mean(n, sim::kNoReturn);
  for (std::size_t i = 0; i < n; ++i)
    if (prev.valid(i) && curr.valid(i)) mean[i] = 0.5 * (prev.ranges[i] + curr.ranges[i]);

  auto point_of = [&](std::size_t i) {
    const double a = spec.angle(i);
    return Point2D{mean[i] * std::cos(a), mean[i] * std::sin(a)};
  };

  ScanGradients g;
  g.k_alpha = 1.0 / spec.angle_increment;
  g.dt = dt;
  g.points.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (!std::isfinite(mean[i])) continue;
    bool okp = false, okn = false;
    const std::size_t ip = detail::neighbour(spec, i, -1, okp);
    const std::size_t in = detail::neighbour(spec, i, +1, okn);
    // Beams whose range changes abruptly between scans sit on an occlusion boundary.
    if (detail::depth_jump(prev.ranges[i], curr.ranges[i])) continue;
    okp = okp && std::isfinite(mean[ip]) && !detail::depth_jump(mean[ip], mean[i]);
    okn = okn && std::isfinite(mean[in]) && !detail::depth_jump(mean[in], mean[i]);
    double la;
    if (okp && okn) {
      const double dp = (point_of(i) - point_of(ip)).norm();
      const double dn = (point_of(in) - point_of(i)).norm();
      const double fwd = mean[in] - mean[i], bwd = mean[i] - mean[ip];
      if (std::abs(fwd - bwd) > 0.02 + 0.05 * mean[i]) continue;  // corner or spike: derivative undefined
      la = (dp + dn) > 0.0 ? (dp * fwd + dn * bwd) / (dp + dn) : 0.5 * (fwd + bwd);
    } else if (okn) {
      la = mean[in] - mean[i];
    } else if (okp) {
      la = mean[i] - mean[ip];
    } else {
      continue;  // isolated beam: no spatial derivative
    }
    FlowPoint p;
    p.index = i;
    p.r = mean[i];
    p.theta = spec.angle(i);
    p.x = p.r * std::cos(p.theta);
    p.y = p.r * std::sin(p.theta);
    p.lt = (curr.ranges[i] - prev.ranges[i]) / dt;
    p.la = la;
    g.points.push_back(p);
  }
  if (g.points.size() < min_valid_points)
    throw InsufficientData("compute_gradients: " + std::to_string(g.points.size()) + " jointly valid beams, need " +
                           std::to_string(min_valid_points));
  return g;
}

/// Row of the linear constraint: coefficients of (vx, vy, omega).
inline Eigen::Vector3d residual_jacobian(const FlowPoint& p, double k_alpha) {
  const double c = std::cos(p.theta), s = std::sin(p.theta);
  const double lak = p.la * k_alpha;
  return {c + lak * s / p.r, s - lak * c / p.r, p.x * s - p.y * c - lak};
}

/// Geometric residual of one point for a candidate sensor twist.
inline double point_residual(const FlowPoint& p, const Twist2D& xi, double k_alpha) {
  if (!(p.r > 0.0)) throw InvalidArgument("point_residual: range must be positive");
  const Eigen::Vector3d j = residual_jacobian(p, k_alpha);
  return p.lt + j[0] * xi.vx + j[1] * xi.vy + j[2] * xi.omega;
}

inline double cauchy_weight(double rho, double k) {
  if (!(k > 0.0)) throw InvalidArgument("cauchy_weight: k must be positive");
  const double u = rho / k;
  return 1.0 / (1.0 + u * u);
}

/// Cauchy loss k^2/2 * ln(1 + (rho/k)^2).
inline double cauchy_loss(double rho, double k) {
  const double u = rho / k;
  return 0.5 * k * k * std::log1p(u * u);
}

struct IrlsResult {
  Twist2D twist{};
  int iterations = 0;
  bool converged = false;
  double residual_rms = 0.0;
  double condition = 0.0;
  std::vector<double> objective;  // robust objective after each solve
};

/// Robust twist estimate from the stacked range-flow constraints.
inline IrlsResult solve_twist_irls(const ScanGradients& g, const RangeFlowConfig& cfg) {
  if (g.points.size() < cfg.min_valid_points)
    throw InsufficientData("solve_twist_irls: " + std::to_string(g.points.size()) + " points, need " +
                           std::to_string(cfg.min_valid_points));
  const std::size_t n = g.points.size();
  std::vector<Eigen::Vector3d> rows(n);
  for (std::size_t i = 0; i < n; ++i) rows[i] = residual_jacobian(g.points[i], g.k_alpha);

  auto residual = [&](std::size_t i, const Eigen::Vector3d& xi) { return g.points[i].lt + rows[i].dot(xi); };
  auto objective = [&](const Eigen::Vector3d& xi) {
    double f = 0.0;
    for (std::size_t i = 0; i < n; ++i) f += cauchy_loss(residual(i, xi), cfg.cauchy_k);
    return f;
  };

  IrlsResult out;
  std::vector<double> w(n, 1.0);
  Eigen::Vector3d xi = Eigen::Vector3d::Zero();
  for (int it = 0; it < cfg.irls_max_iters; ++it) {
    Eigen::Matrix3d h = Eigen::Matrix3d::Zero();
    Eigen::Vector3d b = Eigen::Vector3d::Zero();
    for (std::size_t i = 0; i < n; ++i) {
      h.noalias() += w[i] * rows[i] * rows[i].transpose();
      b.noalias() -= w[i] * rows[i] * g.points[i].lt;
    }
    const Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> eig(h, Eigen::EigenvaluesOnly);
    const double lo = eig.eigenvalues()(0), hi = eig.eigenvalues()(2);
    out.condition = lo > 0.0 ? hi / lo : std::numeric_limits<double>::infinity();
    if (!(out.condition <= cfg.max_condition))
      throw DegenerateGeometry("solve_twist_irls: normal matrix is rank deficient", out.condition);
    const Eigen::Vector3d next = h.ldlt().solve(b);
    const double step = (next - xi).norm();
    xi = next;
    out.objective.push_back(objective(xi));
    out.iterations = it + 1;
    if (it > 0 && step < cfg.irls_tol) {
      out.converged = true;
      break;
    }
    for (std::size_t i = 0; i < n; ++i) w[i] = cauchy_weight(residual(i, xi), cfg.cauchy_k);
  }
  double ss = 0.0;
  for (std::size_t i = 0; i < n; ++i) ss += residual(i, xi) * residual(i, xi);
  out.residual_rms = std::sqrt(ss / static_cast<double>(n));
  out.twist = {xi[0], xi[1], xi[2]};
  return out;
}

/// Re-expresses `scan`, taken from a sensor at pose `motion` relative to a
/// reference frame, as seen from that reference frame. Adjacent returns that lie on one surface are joined into a
/// segment and every beam crossing it is re-cast exactly; isolated returns fall
/// back to nearest-bin assignment. Colliding returns keep the nearer range.
inline LaserScan warp_scan_by(const LaserScan& scan, const Pose2D& motion) {
  const LidarSpec& spec = scan.spec;
  const std::size_t n = spec.num_beams;
  LaserScan out{scan.stamp, std::vector<double>(n, sim::kNoReturn), spec};
  std::vector<double> nearest(n, sim::kNoReturn);

  std::vector<Point2D> q(n);
  std::vector<double> bin(n, 0.0);
  const double span = static_cast<double>(n) * spec.angle_increment;
  for (std::size_t i = 0; i < n; ++i) {
    if (!scan.valid(i)) continue;
    q[i] = transform_point(motion, scan.point(i));
    double rel = std::atan2(q[i].y, q[i].x) - spec.angle_min;
    if (spec.circular()) rel = std::fmod(std::fmod(rel, kTwoPi) + kTwoPi, kTwoPi);
    bin[i] = rel / spec.angle_increment;
    const double r = q[i].norm();
    if (!spec.valid_range(r)) continue;
    long b = std::lround(bin[i]);
    if (spec.circular()) b %= static_cast<long>(n);
    if (b < 0 || b >= static_cast<long>(n)) continue;
    nearest[static_cast<std::size_t>(b)] = std::min(nearest[static_cast<std::size_t>(b)], r);
  }

  constexpr double kMaxStretch = 8.0;  // bins spanned by one joined pair
  for (std::size_t i = 0; i < n; ++i) {
    bool ok = false;
    const std::size_t j = detail::neighbour(spec, i, +1, ok);
    if (!ok || !scan.valid(i) || !scan.valid(j)) continue;
    const double ri = scan.ranges[i], rj = scan.ranges[j];
    if (detail::depth_jump(ri, rj)) continue;
    double lo = bin[i], hi = bin[j];
    if (spec.circular()) {
      double d = std::remainder(hi - lo, static_cast<double>(n));
      hi = lo + d;
    }
    if (lo > hi) std::swap(lo, hi);
    if (hi - lo > kMaxStretch) continue;
    const sim::Segment seg{q[i], q[j]};
    for (long k = static_cast<long>(std::ceil(lo - 1e-9)); k <= static_cast<long>(std::floor(hi + 1e-9)); ++k) {
      long kk = k;
      if (spec.circular()) {
        kk = ((k % static_cast<long>(n)) + static_cast<long>(n)) % static_cast<long>(n);
      } else if (k < 0 || k >= static_cast<long>(n)) {
        continue;
      }
      const double a = spec.angle(static_cast<std::size_t>(kk));
      double r = sim::ray_segment_distance({0.0, 0.0}, {std::cos(a), std::sin(a)}, seg);
      if (!std::isfinite(r)) {
        // Grazing at an endpoint: accept the endpoint that sits on this bin.
        if (std::abs(bin[i] - static_cast<double>(k)) < 1e-9 || std::abs(bin[i] + span / spec.angle_increment - k) < 1e-9)
          r = q[i].norm();
        else if (std::abs(bin[j] - static_cast<double>(k)) < 1e-9)
          r = q[j].norm();
      }
      if (!spec.valid_range(r)) continue;
      double& slot = out.ranges[static_cast<std::size_t>(kk)];
      slot = std::min(slot, r);
    }
  }
  for (std::size_t k = 0; k < n; ++k)
    if (!std::isfinite(out.ranges[k])) out.ranges[k] = nearest[k];
  return out;
}

/// Warp by the motion se2_exp(xi, dt).
inline LaserScan warp_scan(const LaserScan& scan, const Twist2D& xi, double dt) {
  if (!(dt >= 0.0)) throw InvalidArgument("warp_scan: dt must be non-negative");
  return warp_scan_by(scan, se2_exp(xi, dt));
}

struct OdometryState {
  Pose2D pose{};            // vehicle pose, starts at the origin
  Twist2D last_twist{};     // vehicle twist of the latest pair
  double residual_rms = 0.0;
};

/// Relative sensor motion between two scans (pose of the newer sensor frame in the older one).
inline Pose2D estimate_sensor_motion(const LaserScan& prev, const LaserScan& curr, double dt,
                                     const RangeFlowConfig& cfg, const Pose2D& seed = {},
                                     double* residual_rms = nullptr) {
  cfg.validate();
  if (prev.size() != curr.size() || !(prev.spec == curr.spec))
    throw InvalidArgument("estimate_odometry: scans must share one lidar spec");
  if (!(dt > 0.0)) throw InvalidArgument("estimate_odometry: dt must be positive");
  const auto pyr_prev = build_pyramid(prev, cfg.pyramid_levels, cfg.bilateral_sigma_spatial, cfg.bilateral_sigma_range);
  const auto pyr_curr = build_pyramid(curr, cfg.pyramid_levels, cfg.bilateral_sigma_spatial, cfg.bilateral_sigma_range);

  Pose2D motion = seed;
  double rms = 0.0;
  for (int level = cfg.pyramid_levels - 1; level >= 0; --level) {
    const int passes = level == 0 ? cfg.finest_level_passes : 1;
    for (int pass = 0; pass < passes; ++pass) {
      const LaserScan warped = warp_scan_by(pyr_curr[level], motion);
      // Coarse levels hold fewer beams; scale the point floor with them.
      const std::size_t floor = std::max<std::size_t>(4, cfg.min_valid_points >> level);
      RangeFlowConfig lcfg = cfg;
      lcfg.min_valid_points = floor;
      const ScanGradients g = compute_gradients(pyr_prev[level], warped, dt, floor);
      const IrlsResult r = solve_twist_irls(g, lcfg);
      motion = compose(se2_exp(r.twist, dt), motion);
      rms = r.residual_rms;
    }
  }
  if (residual_rms) *residual_rms = rms;
  return motion;
}

/// One odometry update: estimates the sensor motion between `prev` and
/// `curr`, maps it through the fixed sensor mount and integrates the vehicle pose.
inline OdometryState estimate_odometry(const LaserScan& prev, const LaserScan& curr, double dt,
                                       const RangeFlowConfig& cfg, const OdometryState& state) {
  const Pose2D& mount = cfg.sensor_mount;
  Pose2D seed{};
  if (cfg.constant_velocity_prior) {
    // Vehicle twist -> sensor motion: M^-1 * exp(xi dt) * M.
    seed = compose(inverse(mount), compose(se2_exp(state.last_twist, dt), mount));
  }
  double rms = 0.0;
  const Pose2D sensor_motion = estimate_sensor_motion(prev, curr, dt, cfg, seed, &rms);
  const Pose2D vehicle_motion = compose(mount, compose(sensor_motion, inverse(mount)));
  OdometryState next;
  next.last_twist = se2_log(vehicle_motion, dt);
  next.pose = compose(state.pose, se2_exp(next.last_twist, dt));
  next.residual_rms = rms;
  return next;
}

/// Stateful front end: feed scans in order, read back the integrated pose.
class RangeFlowOdometry {
 public:
  explicit RangeFlowOdometry(RangeFlowConfig cfg = {}) : cfg_(cfg) { cfg_.validate(); }

  /// Returns false when the pair was degenerate and a zero twist was substituted.
  bool update(const LaserScan& scan) {
    if (!prev_) {
      prev_ = scan;
      return true;
    }
    const double dt = scan.stamp - prev_->stamp;
    bool ok = true;
    if (dt > 0.0) {
      try {
        state_ = estimate_odometry(*prev_, scan, dt, cfg_, state_);
      } catch (const DegenerateGeometry&) {
        ok = false;
      } catch (const InsufficientData&) {
        ok = false;
      }
      if (!ok) state_.last_twist = {};
    }
    prev_ = scan;
    return ok;
  }

  void reset(const Pose2D& pose = {}) {
    state_ = OdometryState{};
    state_.pose = pose;
    prev_.reset();
  }

  const OdometryState& state() const noexcept { return state_; }
  const Pose2D& pose() const noexcept { return state_.pose; }
  const RangeFlowConfig& config() const noexcept { return cfg_; }

 private:
  RangeFlowConfig cfg_;
  OdometryState state_{};
  std::optional<LaserScan> prev_;
};

}  // namespace deskpilot::odometry
