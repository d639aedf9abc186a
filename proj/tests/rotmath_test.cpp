#include "retarget/rotmath.h"

#include <gtest/gtest.h>

#include <cmath>
#include <random>

namespace retarget {
namespace {

Vec3 random_vector(std::mt19937& rng, double max_norm) {
  std::normal_distribution<double> n(0.0, 1.0);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Vec3 v(n(rng), n(rng), n(rng));
  return v.normalized() * (max_norm * u(rng));
}

TEST(ExpMap, ZeroIsIdentity) {
  EXPECT_TRUE(exp_map(Vec3::Zero()).isApprox(Mat3::Identity(), 0.0));
}

TEST(ExpMap, QuarterTurnAboutX) {
  Mat3 expected;
  expected << 1, 0, 0, 0, 0, -1, 0, 1, 0;
  EXPECT_LT((exp_map(Vec3(M_PI / 2, 0, 0)) - expected).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(ExpMap, RejectsNonFinite) {
  EXPECT_THROW(exp_map(Vec3(NAN, 0, 0)), std::invalid_argument);
  EXPECT_THROW(exp_map(Vec3(0, INFINITY, 0)), std::invalid_argument);
}

TEST(ExpMap, SmallAngleBranchMatchesRodrigues) {
  const Vec3 v(3e-9, -2e-9, 1e-9);
  const Mat3 R = exp_map(v);
  EXPECT_TRUE(is_rotation(R, 1e-12));
  EXPECT_LT((R - (Mat3::Identity() + hat(v))).cwiseAbs().maxCoeff(), 1e-16);
}

TEST(LogMap, Identity) { EXPECT_EQ(log_map(Mat3::Identity()), Vec3::Zero()); }

TEST(LogMap, RoundTripAboutY) {
  EXPECT_LT((log_map(exp_map(Vec3(0, 1.2, 0))) - Vec3(0, 1.2, 0)).norm(), 1e-9);
}

TEST(LogMap, HalfTurnBranch) {
  const Mat3 R = Eigen::AngleAxisd(M_PI, Vec3::UnitZ()).toRotationMatrix();
  const Vec3 v = log_map(R);
  EXPECT_NEAR(v.norm(), M_PI, 1e-12);
  EXPECT_NEAR(std::abs(v.z()), M_PI, 1e-12);
  EXPECT_LT((exp_map(v) - R).cwiseAbs().maxCoeff(), 1e-8);
}

TEST(LogMap, RejectsNonRotation) {
  Mat3 bad = Mat3::Identity();
  bad(0, 0) = 1.1;
  EXPECT_THROW(log_map(bad), std::invalid_argument);
  EXPECT_THROW(log_map(-Mat3::Identity()), std::invalid_argument);  // det = -1
}

TEST(LogMap, RoundTripProperty) {
  std::mt19937 rng(7);
  for (int i = 0; i < 2000; ++i) {
    const Vec3 v = random_vector(rng, M_PI - 1e-6);
    const Mat3 R = exp_map(v);
    ASSERT_TRUE(is_rotation(R, 1e-9));
    ASSERT_LT((log_map(R) - v).norm(), 1e-9) << "v = " << v.transpose();
  }
  // Angles close to pi exercise the symmetric-part branch.
  for (int i = 0; i < 500; ++i) {
    Vec3 axis = random_vector(rng, 1.0).normalized();
    const double angle = M_PI - 1e-6 - 0.3 * std::uniform_real_distribution<double>(0, 1)(rng);
    const Vec3 v = axis * angle;
    ASSERT_LT((log_map(exp_map(v)) - v).norm(), 1e-9);
  }
}

TEST(LogMap, CanonicalNorm) {
  std::mt19937 rng(3);
  for (int i = 0; i < 500; ++i) {
    const Vec3 v = random_vector(rng, 3.0 * M_PI);
    const Vec3 w = log_map(exp_map(v));
    ASSERT_LE(w.norm(), M_PI + 1e-12);
    ASSERT_LT((exp_map(w) - exp_map(v)).cwiseAbs().maxCoeff(), 1e-9);
  }
}

TEST(GeodesicError, Cases) {
  const Mat3 A = exp_map(Vec3(0.3, -0.2, 0.5));
  EXPECT_LT(geodesic_error(A, A).norm(), 1e-12);
  EXPECT_LT((geodesic_error(Mat3::Identity(), exp_map(Vec3(0, 0, 0.3))) - Vec3(0, 0, 0.3)).norm(),
            1e-12);
  std::mt19937 rng(11);
  for (int i = 0; i < 100; ++i) {
    const Mat3 P = exp_map(random_vector(rng, 3.0));
    const Mat3 Q = exp_map(random_vector(rng, 3.0));
    EXPECT_NEAR(geodesic_error(P, Q).norm(), geodesic_error(Q, P).norm(), 1e-9);
  }
}

TEST(RightJacobian, MatchesFiniteDifferences) {
  std::mt19937 rng(5);
  const double h = 1e-6;
  for (int i = 0; i < 50; ++i) {
    const Vec3 v = random_vector(rng, 2.5);
    const Mat3 Jr = right_jacobian(v);
    for (int k = 0; k < 3; ++k) {
      const Vec3 dv = Vec3::Unit(k) * h;
      // Exp(v)^T Exp(v + dv) = Exp(Jr dv) to first order.
      const Vec3 col = (log_map(exp_map(v).transpose() * exp_map(v + dv)) -
                        log_map(exp_map(v).transpose() * exp_map(v - dv))) /
                       (2 * h);
      EXPECT_LT((col - Jr.col(k)).norm(), 1e-7);
    }
    EXPECT_LT((right_jacobian_inverse(v) * Jr - Mat3::Identity()).cwiseAbs().maxCoeff(), 1e-9);
  }
}

TEST(SwingTwist, PureTwist) {
  const Mat3 R = exp_map(Vec3(0, 0, 0.4));
  const auto st = swing_twist(R, Vec3::UnitZ());
  EXPECT_FALSE(st.degenerate);
  EXPECT_LT((st.swing - Mat3::Identity()).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LT((st.twist - R).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(SwingTwist, PureSwing) {
  const Mat3 R = exp_map(Vec3(0.4, 0, 0));
  const auto st = swing_twist(R, Vec3::UnitZ());
  EXPECT_LT((st.twist - Mat3::Identity()).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LT((st.swing - R).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(SwingTwist, DegenerateHalfTurnPerpendicular) {
  const Mat3 R = exp_map(Vec3(M_PI, 0, 0));
  const auto st = swing_twist(R, Vec3::UnitZ());
  EXPECT_TRUE(st.degenerate);
  EXPECT_TRUE(st.twist.isApprox(Mat3::Identity()));
}

TEST(SwingTwist, RejectsNonUnitAxis) {
  EXPECT_THROW(swing_twist(Mat3::Identity(), Vec3(0, 0, 2)), std::invalid_argument);
}

TEST(SwingTwist, ReconstructionProperty) {
  std::mt19937 rng(9);
  for (int i = 0; i < 1000; ++i) {
    const Mat3 R = exp_map(random_vector(rng, M_PI - 1e-3));
    const Vec3 axis = random_vector(rng, 1.0).normalized();
    const auto st = swing_twist(R, axis);
    ASSERT_FALSE(st.degenerate);
    ASSERT_LT((st.swing * st.twist - R).cwiseAbs().maxCoeff(), 1e-9);
    // Twist is a rotation about the axis; swing has no component about it.
    const Vec3 tw = log_map(st.twist);
    ASSERT_LT((tw - tw.dot(axis) * axis).norm(), 1e-9);
    ASSERT_LT(std::abs(log_map(st.swing).dot(axis)), 1e-9);
    // Swing carries the axis onto R * axis.
    ASSERT_LT((st.swing * axis - R * axis).norm(), 1e-9);
  }
}

}  // namespace
}  // namespace retarget
