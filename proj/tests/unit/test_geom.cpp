#include <gtest/gtest.h>

#include <random>

#include "deskpilot/geom.hpp"

using namespace deskpilot;

namespace {

// Independent reference: RK4 integration of a constant body twist.
Pose2D integrate_twist_rk4(const Twist2D& xi, double duration, double h) {
  auto f = [&](const Pose2D& p) {
    return Pose2D{xi.vx * std::cos(p.yaw) - xi.vy * std::sin(p.yaw),
                  xi.vx * std::sin(p.yaw) + xi.vy * std::cos(p.yaw), xi.omega};
  };
  auto add = [](const Pose2D& a, double s, const Pose2D& k) {
    return Pose2D{a.x + s * k.x, a.y + s * k.y, a.yaw + s * k.yaw};
  };
  Pose2D p{};
  const int n = static_cast<int>(std::round(duration / h));
  for (int i = 0; i < n; ++i) {
    const Pose2D k1 = f(p), k2 = f(add(p, h / 2, k1)), k3 = f(add(p, h / 2, k2)), k4 = f(add(p, h, k3));
    p = {p.x + h / 6 * (k1.x + 2 * k2.x + 2 * k3.x + k4.x), p.y + h / 6 * (k1.y + 2 * k2.y + 2 * k3.y + k4.y),
         p.yaw + h / 6 * (k1.yaw + 2 * k2.yaw + 2 * k3.yaw + k4.yaw)};
  }
  return p;
}

void expect_pose_near(const Pose2D& a, const Pose2D& b, double tol) {
  EXPECT_NEAR(a.x, b.x, tol);
  EXPECT_NEAR(a.y, b.y, tol);
  EXPECT_NEAR(angle_diff(a.yaw, b.yaw), 0.0, tol);
}

Pose2D random_pose(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-5.0, 5.0), a(-kPi, kPi);
  return {u(rng), u(rng), a(rng)};
}

}  // namespace

TEST(WrapAngle, Examples) {
  EXPECT_DOUBLE_EQ(wrap_angle(0.0), 0.0);
  EXPECT_NEAR(wrap_angle(3 * kPi / 2), -kPi / 2, 1e-15);
  EXPECT_DOUBLE_EQ(wrap_angle(-kPi), kPi);
  EXPECT_DOUBLE_EQ(wrap_angle(kPi), kPi);
  EXPECT_THROW(wrap_angle(std::nan("")), InvalidArgument);
  EXPECT_THROW(wrap_angle(INFINITY), InvalidArgument);
}

TEST(WrapAngle, RangeAndIdempotence) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(-100.0, 100.0);
  for (int i = 0; i < 10000; ++i) {
    const double a = u(rng);
    const double w = wrap_angle(a);
    EXPECT_GT(w, -kPi);
    EXPECT_LE(w, kPi);
    EXPECT_EQ(wrap_angle(w), w);
    EXPECT_NEAR(std::remainder(a - w, kTwoPi), 0.0, 1e-12);
  }
}

TEST(Se2Exp, Examples) {
  expect_pose_near(se2_exp({0, 0, 0}, 1.0), {0, 0, 0}, 0.0);
  expect_pose_near(se2_exp({1, 0, 0}, 1.0), {1, 0, 0}, 0.0);
  const Pose2D quarter = se2_exp({1, 0, kPi / 2}, 1.0);
  const Pose2D oracle = integrate_twist_rk4({1, 0, kPi / 2}, 1.0, 1e-4);
  expect_pose_near(quarter, oracle, 1e-12);
  EXPECT_NEAR(quarter.x, 2 / kPi, 1e-12);
  EXPECT_NEAR(quarter.y, 2 / kPi, 1e-12);
  EXPECT_NEAR(quarter.yaw, kPi / 2, 1e-15);
  EXPECT_THROW(se2_exp({1, 0, 0}, -0.1), InvalidArgument);
}

TEST(Se2Exp, MatchesRk4AcrossSmallAngleBranch) {
  for (double w : {0.0, 1e-9, 5e-7, 2e-6, 0.3, -2.0}) {
    const Twist2D xi{0.7, -0.2, w};
    expect_pose_near(se2_exp(xi, 0.8), integrate_twist_rk4(xi, 0.8, 1e-3), 1e-11);
  }
}

TEST(Se2Exp, OneParameterSubgroup) {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> v(-1.0, 1.0), t(0.0, 1.5);
  for (int i = 0; i < 1000; ++i) {
    const Twist2D xi{v(rng), v(rng), 2.0 * v(rng)};
    const double t1 = t(rng), t2 = t(rng);
    expect_pose_near(se2_exp(xi, t1 + t2), compose(se2_exp(xi, t1), se2_exp(xi, t2)), 1e-9);
  }
}

TEST(Se2Log, InvertsExp) {
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> v(-1.0, 1.0);
  for (int i = 0; i < 1000; ++i) {
    const Twist2D xi{v(rng), v(rng), 2.5 * v(rng)};
    const Twist2D back = se2_log(se2_exp(xi, 1.0), 1.0);
    EXPECT_NEAR(back.vx, xi.vx, 1e-9);
    EXPECT_NEAR(back.vy, xi.vy, 1e-9);
    EXPECT_NEAR(back.omega, xi.omega, 1e-9);
  }
}

TEST(Compose, Examples) {
  const Pose2D b{0.3, -1.2, 2.0};
  expect_pose_near(compose({}, b), b, 0.0);
  const Point2D p = transform_point({1, 0, kPi / 2}, {1, 0});
  EXPECT_NEAR(p.x, 1.0, 1e-15);
  EXPECT_NEAR(p.y, 1.0, 1e-15);
  const Pose2D a{1, 2, 0.3};
  expect_pose_near(compose(a, inverse(a)), {}, 1e-12);
  expect_pose_near(compose(inverse(a), a), {}, 1e-12);
}

TEST(Compose, AssociativeAndInverse) {
  std::mt19937_64 rng(3);
  for (int i = 0; i < 1000; ++i) {
    const Pose2D a = random_pose(rng), b = random_pose(rng), c = random_pose(rng);
    expect_pose_near(compose(compose(a, b), c), compose(a, compose(b, c)), 1e-9);
    expect_pose_near(compose(a, inverse(a)), {}, 1e-12);
    const Point2D q{0.4, -0.9};
    const Point2D via = transform_point(compose(a, b), q);
    const Point2D step = transform_point(a, transform_point(b, q));
    EXPECT_NEAR(via.x, step.x, 1e-9);
    EXPECT_NEAR(via.y, step.y, 1e-9);
  }
}
