#pragma once
//
// Adaptive Monte Carlo localization with KLD sampling.
//
// Each update draws particles from the previous weighted set (systematic
// resampling), moves them through a noisy odometry motion model, weights them
// against a likelihood field and keeps drawing until the sample count bounds
// the K-L error between the sample-based and true posterior.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <string>
#include <unordered_set>
#include <vector>

#include <Eigen/Dense>

#include "deskpilot/distance_transform.hpp"
#include "deskpilot/errors.hpp"
#include "deskpilot/geom.hpp"
#include "deskpilot/sim/lidar.hpp"
#include "deskpilot/slam/occupancy_grid.hpp"

namespace deskpilot::mcl {

using sim::LaserScan;
using slam::OccupancyGrid;

struct Particle {
  Pose2D pose{};
  double weight = 0.0;
};

using ParticleSet = std::vector<Particle>;

struct KldConfig {
  std::size_t min_particles = 500;
  std::size_t max_particles = 3000;
  double epsilon = 0.02;
  double delta = 0.01;
  double bin_x = 0.1;      // m
  double bin_y = 0.1;      // m
  double bin_yaw = 0.175;  // rad
  int resample_interval = 1;

  void validate() const {
    if (min_particles < 1 || min_particles > max_particles) throw ConfigError("kld: need 1 <= min <= max particles");
    if (!(epsilon > 0.0)) throw ConfigError("kld: epsilon must be positive");
    if (!(delta > 0.0 && delta < 1.0)) throw ConfigError("kld: delta must be in (0, 1)");
    if (!(bin_x > 0.0 && bin_y > 0.0 && bin_yaw > 0.0)) throw ConfigError("kld: bin sizes must be positive");
    if (resample_interval < 1) throw ConfigError("kld: resample_interval must be >= 1");
  }
};

struct MotionNoise {
  double alpha1 = 0.1;   // rotation from rotation
  double alpha2 = 0.1;   // rotation from translation
  double alpha3 = 0.05;  // translation from translation
  double alpha4 = 0.05;  // translation from rotation

  void validate() const {
    if (alpha1 < 0 || alpha2 < 0 || alpha3 < 0 || alpha4 < 0) throw ConfigError("motion noise: alphas must be >= 0");
  }
  bool zero() const noexcept { return alpha1 == 0 && alpha2 == 0 && alpha3 == 0 && alpha4 == 0; }
};

struct FieldParams {
  double max_dist = 0.5;       // m
  double sigma_hit = 0.05;     // m
  double z_hit = 0.95;
  double z_rand = 0.05;
  double occupied_threshold = 0.65;
};

class LikelihoodField {
 public:
  LikelihoodField() = default;
  LikelihoodField(const OccupancyGrid& layout, std::vector<double> dist, FieldParams params)
      : layout_(layout.width(), layout.height(), layout.resolution(), layout.origin()),
        dist_(std::move(dist)),
        params_(params) {}

  /// Truncated distance (m) from `p` to the nearest occupied cell; max_dist off the grid.
  double distance(const Point2D& p) const {
    const slam::CellIndex c = layout_.cell_of(p);
    if (!layout_.contains(c)) return params_.max_dist;
    return dist_[layout_.index(c)];
  }
  double distance(const slam::CellIndex& c) const { return dist_[layout_.index(c)]; }

  const FieldParams& params() const noexcept { return params_; }
  const OccupancyGrid& layout() const noexcept { return layout_; }

 private:
  OccupancyGrid layout_;
  std::vector<double> dist_;
  FieldParams params_;
};

inline LikelihoodField build_likelihood_field(const OccupancyGrid& grid, const FieldParams& params = {}) {
  std::vector<bool> sites(grid.size(), false);
  bool any = false;
  for (int y = 0; y < grid.height(); ++y)
    for (int x = 0; x < grid.width(); ++x)
      if (grid.known({x, y}) && grid.probability({x, y}) >= params.occupied_threshold) {
        sites[grid.index({x, y})] = true;
        any = true;
      }
  if (!any) throw InvalidArgument("build_likelihood_field: map has no occupied cells");
  std::vector<double> d = distance_transform(sites, grid.width(), grid.height());
  for (auto& v : d) v = std::min(v * grid.resolution(), params.max_dist);
  return LikelihoodField(grid, std::move(d), params);
}

/// Odometry motion model: the relative motion is split into an initial turn,
/// a straight move and a final turn, each perturbed by zero-mean Gaussian noise
/// whose standard deviation scales with the motion. Reverse motion is handled
/// by turning towards the backward direction and moving a negative distance.
template <class Rng>
Particle sample_motion(const Particle& p, const Pose2D& delta, const MotionNoise& noise, Rng& rng) {
  if (noise.zero()) return {compose(p.pose, delta), p.weight};
  double trans = std::hypot(delta.x, delta.y);
  double rot1 = trans < 1e-9 ? 0.0 : std::atan2(delta.y, delta.x);
  if (std::abs(rot1) > kPi / 2) {  // moving backwards
    rot1 = wrap_angle(rot1 + kPi);
    trans = -trans;
  }
  const double rot2 = wrap_angle(delta.yaw - rot1);
  const double at = std::abs(trans);
  const double s_rot1 = noise.alpha1 * std::abs(rot1) + noise.alpha2 * at;
  const double s_trans = noise.alpha3 * at + noise.alpha4 * (std::abs(rot1) + std::abs(rot2));
  const double s_rot2 = noise.alpha1 * std::abs(rot2) + noise.alpha2 * at;
  std::normal_distribution<double> n01(0.0, 1.0);
  const double r1 = rot1 + s_rot1 * n01(rng);
  const double tr = trans + s_trans * n01(rng);
  const double r2 = rot2 + s_rot2 * n01(rng);
  const double heading = p.pose.yaw + r1;
  return {{p.pose.x + tr * std::cos(heading), p.pose.y + tr * std::sin(heading), wrap_angle(heading + r2)}, p.weight};
}

struct SensorModel {
  std::size_t beam_stride = 10;
  double range_min = 0.15;  // m
  double range_max = 12.0;  // m
};

/// Log-likelihood of `scan` seen from `pose`.
inline double log_weight_particle(const Pose2D& pose, const LaserScan& scan, const LikelihoodField& field,
                                  const SensorModel& sm = {}) {
  const FieldParams& fp = field.params();
  const double norm = 1.0 / (std::sqrt(2.0 * kPi) * fp.sigma_hit);
  const double rand = fp.z_rand / sm.range_max;
  const double c = std::cos(pose.yaw), s = std::sin(pose.yaw);
  double lw = 0.0;
  for (std::size_t i = 0; i < scan.size(); i += std::max<std::size_t>(1, sm.beam_stride)) {
    const double r = scan.ranges[i];
    if (!std::isfinite(r) || r < sm.range_min || r > sm.range_max) continue;
    const double a = scan.spec.angle(i);
    const double lx = r * std::cos(a), ly = r * std::sin(a);
    const Point2D end{pose.x + c * lx - s * ly, pose.y + s * lx + c * ly};
    const double d = field.distance(end);
    lw += std::log(fp.z_hit * norm * std::exp(-0.5 * d * d / (fp.sigma_hit * fp.sigma_hit)) + rand);
  }
  return lw;
}

inline double weight_particle(const Particle& p, const LaserScan& scan, const LikelihoodField& field,
                              const SensorModel& sm = {}) {
  return std::exp(log_weight_particle(p.pose, scan, field, sm));
}

/// Chi-square quantile by the Wilson-Hilferty approximation.
inline double chi_square_quantile_wh(double dof, double z) {
  const double a = 2.0 / (9.0 * dof);
  const double t = 1.0 - a + std::sqrt(a) * z;
  return dof * t * t * t;
}

/// Upper standard-normal quantile z with P(Z > z) = delta (Acklam's rational approximation + one Newton step).
inline double normal_upper_quantile(double delta) {
  if (!(delta > 0.0 && delta < 1.0)) throw InvalidArgument("normal_upper_quantile: delta must be in (0, 1)");
  const double p = 1.0 - delta;
  static const double a[] = {-3.969683028665376e+01, 2.209460984245205e+02, -2.759285104469687e+02,
                             1.383577518672690e+02,  -3.066479806614716e+01, 2.506628277459239e+00};
  static const double b[] = {-5.447609879822406e+01, 1.615858368580409e+02, -1.556989798598866e+02,
                             6.680131188771972e+01,  -1.328068155288572e+01};
  static const double c[] = {-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e+00,
                             -2.549732539343734e+00, 4.374664141464968e+00,  2.938163982698783e+00};
  static const double d[] = {7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00,
                             3.754408661907416e+00};
  double x;
  if (p < 0.02425) {
    const double q = std::sqrt(-2 * std::log(p));
    x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1);
  } else if (p <= 1 - 0.02425) {
    const double q = p - 0.5, r = q * q;
    x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
        (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1);
  } else {
    const double q = std::sqrt(-2 * std::log1p(-p));
    x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1);
  }
  const double e = 0.5 * std::erfc(-x / std::sqrt(2.0)) - p;
  const double u = e * std::sqrt(2 * kPi) * std::exp(x * x / 2);
  return x - u / (1 + x * u / 2);
}

/// Samples needed so that, with probability 1 - delta, the K-L divergence
/// between the sample-based and true posterior stays below epsilon, given k
/// occupied histogram bins.
inline std::size_t kld_required_samples(std::size_t k, const KldConfig& cfg) {
  if (k <= 1) return cfg.min_particles;
  const double chi2 = chi_square_quantile_wh(static_cast<double>(k - 1), normal_upper_quantile(cfg.delta));
  const double n = std::ceil(chi2 / (2.0 * cfg.epsilon));
  return static_cast<std::size_t>(std::clamp(n, static_cast<double>(cfg.min_particles),
                                             static_cast<double>(cfg.max_particles)));
}

/// Systematic (low-variance) resampling: `n` indices drawn with one uniform
/// offset; index i appears floor(n w_i) or ceil(n w_i) times.
template <class Rng>
std::vector<std::size_t> systematic_resample(const std::vector<double>& weights, std::size_t n, Rng& rng) {
  if (weights.empty()) throw InvalidArgument("systematic_resample: no weights");
  double total = 0.0;
  for (double w : weights) {
    if (!(w >= 0.0) || !std::isfinite(w)) throw InvalidArgument("systematic_resample: weights must be finite, >= 0");
    total += w;
  }
  if (!(total > 0.0)) throw InvalidArgument("systematic_resample: weights sum to zero");
  std::vector<std::size_t> out;
  out.reserve(n);
  if (n == 0) return out;
  std::uniform_real_distribution<double> u(0.0, 1.0 / static_cast<double>(n));
  const double start = u(rng);
  double cum = weights[0] / total;
  std::size_t i = 0;
  for (std::size_t m = 0; m < n; ++m) {
    const double target = start + static_cast<double>(m) / static_cast<double>(n);
    while (target > cum && i + 1 < weights.size()) cum += weights[++i] / total;
    out.push_back(i);
  }
  return out;
}

inline bool should_update(const Pose2D& accumulated, double min_trans = 0.01, double min_rot = 0.20) {
  return std::hypot(accumulated.x, accumulated.y) >= min_trans || std::abs(accumulated.yaw) >= min_rot;
}

struct PoseEstimate {
  Pose2D pose{};
  Eigen::Matrix3d covariance = Eigen::Matrix3d::Zero();
};

inline PoseEstimate estimate_pose(const ParticleSet& ps) {
  if (ps.empty()) throw InvalidArgument("estimate_pose: empty particle set");
  double wsum = 0, mx = 0, my = 0, sc = 0, ss = 0;
  for (const auto& p : ps) {
    wsum += p.weight;
    mx += p.weight * p.pose.x;
    my += p.weight * p.pose.y;
    sc += p.weight * std::cos(p.pose.yaw);
    ss += p.weight * std::sin(p.pose.yaw);
  }
  if (!(wsum > 0.0)) throw InvalidArgument("estimate_pose: weights sum to zero");
  PoseEstimate e;
  e.pose = {mx / wsum, my / wsum, wrap_angle(std::atan2(ss, sc))};
  for (const auto& p : ps) {
    const Eigen::Vector3d d(p.pose.x - e.pose.x, p.pose.y - e.pose.y, angle_diff(p.pose.yaw, e.pose.yaw));
    e.covariance += (p.weight / wsum) * d * d.transpose();
  }
  return e;
}

inline std::int64_t bin_hash(const Pose2D& p, const KldConfig& cfg) {
  const auto ix = static_cast<std::int64_t>(std::floor(p.x / cfg.bin_x));
  const auto iy = static_cast<std::int64_t>(std::floor(p.y / cfg.bin_y));
  const auto ia = static_cast<std::int64_t>(std::floor(wrap_angle(p.yaw) / cfg.bin_yaw));
  return ((ix & 0x1FFFFF) << 42) | ((iy & 0x1FFFFF) << 21) | (ia & 0x1FFFFF);
}

struct UpdateStats {
  std::size_t particles = 0;
  std::size_t bins = 0;
  bool weights_reset = false;  // every weight underflowed or was zero
};

struct AmclConfig {
  KldConfig kld{};
  MotionNoise noise{};
  SensorModel sensor{};
  double update_min_trans = 0.01;  // m
  double update_min_rot = 0.20;    // rad
};

/// One filter update. Draws in systematic batches from the previous weighted
/// set until the KLD bound for the bins seen so far is met.
template <class Rng>
ParticleSet amcl_update(const ParticleSet& prev, const Pose2D& odom_delta, const LaserScan& scan,
                        const LikelihoodField& field, const AmclConfig& cfg, Rng& rng, UpdateStats* stats = nullptr) {
  if (prev.empty()) throw InvalidArgument("amcl_update: empty particle set");
  cfg.kld.validate();
  cfg.noise.validate();
  std::vector<double> w(prev.size());
  for (std::size_t i = 0; i < prev.size(); ++i) w[i] = prev[i].weight;

  ParticleSet next;
  next.reserve(cfg.kld.max_particles);
  std::vector<double> logw;
  logw.reserve(cfg.kld.max_particles);
  std::unordered_set<std::int64_t> bins;
  std::size_t required = cfg.kld.min_particles;
  while (next.size() < required && next.size() < cfg.kld.max_particles) {
    const std::size_t batch = std::min(required, cfg.kld.max_particles) - next.size();
    for (std::size_t j : systematic_resample(w, batch, rng)) {
      Particle p = sample_motion(prev[j], odom_delta, cfg.noise, rng);
      logw.push_back(log_weight_particle(p.pose, scan, field, cfg.sensor));
      if (bins.insert(bin_hash(p.pose, cfg.kld)).second)
        required = std::max(required, kld_required_samples(bins.size(), cfg.kld));
      next.push_back(p);
    }
  }
  // Normalize in log space; alpha is the sum of exp(logw - max).
  const double lmax = *std::max_element(logw.begin(), logw.end());
  double alpha = 0.0;
  for (std::size_t i = 0; i < next.size(); ++i) {
    next[i].weight = std::isfinite(lmax) ? std::exp(logw[i] - lmax) : 0.0;
    alpha += next[i].weight;
  }
  bool reset = false;
  if (!(alpha > 0.0) || !std::isfinite(alpha)) {
    reset = true;
    for (auto& p : next) p.weight = 1.0;
    alpha = static_cast<double>(next.size());
  }
  for (auto& p : next) p.weight /= alpha;
  if (stats) *stats = {next.size(), bins.size(), reset};
  return next;
}

/// `n` particles uniform in a box of half-widths (dx, dy, dyaw) around `center`.
template <class Rng>
ParticleSet init_uniform(const Pose2D& center, double dx, double dy, double dyaw, std::size_t n, Rng& rng) {
  if (n == 0) throw InvalidArgument("init_uniform: need at least one particle");
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  ParticleSet ps(n);
  for (auto& p : ps) {
    p.pose = {center.x + dx * u(rng), center.y + dy * u(rng), wrap_angle(center.yaw + dyaw * u(rng))};
    p.weight = 1.0 / static_cast<double>(n);
  }
  return ps;
}

template <class Rng>
ParticleSet init_gaussian(const Pose2D& center, double sx, double sy, double syaw, std::size_t n, Rng& rng) {
  if (n == 0) throw InvalidArgument("init_gaussian: need at least one particle");
  std::normal_distribution<double> g(0.0, 1.0);
  ParticleSet ps(n);
  for (auto& p : ps) {
    p.pose = {center.x + sx * g(rng), center.y + sy * g(rng), wrap_angle(center.yaw + syaw * g(rng))};
    p.weight = 1.0 / static_cast<double>(n);
  }
  return ps;
}

/// Uniform over free cells of `grid` (global localization).
template <class Rng>
ParticleSet init_global(const OccupancyGrid& grid, std::size_t n, Rng& rng, double free_below = 0.5) {
  std::vector<slam::CellIndex> free;
  for (int y = 0; y < grid.height(); ++y)
    for (int x = 0; x < grid.width(); ++x)
      if (grid.known({x, y}) && grid.probability({x, y}) <= free_below) free.push_back({x, y});
  if (free.empty()) throw InvalidArgument("init_global: map has no free cells");
  std::uniform_int_distribution<std::size_t> pick(0, free.size() - 1);
  std::uniform_real_distribution<double> jitter(-0.5, 0.5), yaw(-kPi, kPi);
  ParticleSet ps(n);
  for (auto& p : ps) {
    const Point2D c = grid.cell_center(free[pick(rng)]);
    p.pose = {c.x + jitter(rng) * grid.resolution(), c.y + jitter(rng) * grid.resolution(), wrap_angle(yaw(rng))};
    p.weight = 1.0 / static_cast<double>(n);
  }
  return ps;
}

/// Stateful wrapper: accumulates odometry and runs an update once the motion
/// gate opens.
class Amcl {
 public:
  Amcl(LikelihoodField field, AmclConfig cfg, std::uint64_t seed) : field_(std::move(field)), cfg_(cfg), rng_(seed) {
    cfg_.kld.validate();
    cfg_.noise.validate();
  }

  void init(ParticleSet ps) {
    if (ps.empty()) throw InvalidArgument("Amcl::init: empty particle set");
    particles_ = std::move(ps);
    pending_ = {};
  }
  void init_uniform(const Pose2D& c, double dxy, double dyaw, std::size_t n) {
    init(mcl::init_uniform(c, dxy, dxy, dyaw, n, rng_));
  }

  /// Accumulate odometry; update when the gate opens. Returns true if an update ran.
  bool process(const Pose2D& odom_delta, const LaserScan& scan) {
    pending_ = compose(pending_, odom_delta);
    if (!should_update(pending_, cfg_.update_min_trans, cfg_.update_min_rot)) return false;
    particles_ = amcl_update(particles_, pending_, scan, field_, cfg_, rng_, &last_stats_);
    pending_ = {};
    ++updates_;
    return true;
  }

  /// Unconditional update with an explicit motion.
  void force_update(const Pose2D& odom_delta, const LaserScan& scan) {
    particles_ = amcl_update(particles_, compose(pending_, odom_delta), scan, field_, cfg_, rng_, &last_stats_);
    pending_ = {};
    ++updates_;
  }

  PoseEstimate estimate() const { return estimate_pose(particles_); }
  const ParticleSet& particles() const noexcept { return particles_; }
  const UpdateStats& last_stats() const noexcept { return last_stats_; }
  std::size_t updates() const noexcept { return updates_; }
  const LikelihoodField& field() const noexcept { return field_; }

 private:
  LikelihoodField field_;
  AmclConfig cfg_;
  std::mt19937_64 rng_;
  ParticleSet particles_;
  Pose2D pending_{};
  UpdateStats last_stats_{};
  std::size_t updates_ = 0;
};

}  // namespace deskpilot::mcl
