#include "gazekit/pose.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <vector>

#include "gazekit/error.hpp"
#include "gazekit/random.hpp"

namespace gazekit {
namespace {

CameraIntrinsics camera() { return {960.0, 960.0, 640.0, 360.0, 1280, 720}; }

// Forward-projection oracle: independent pinhole evaluation of the model
// under a known pose.
Landmarks2D render_landmarks(const FaceModel& model, const Rotation& r, const Vec3& t,
                             const CameraIntrinsics& k) {
  Landmarks2D out;
  for (int i = 0; i < kNumLandmarks; ++i) {
    const Vec3 p = r.matrix() * model.points()[i] + t;
    out[i] = {k.fx * p.x() / p.z() + k.cx, k.fy * p.y() / p.z() + k.cy};
  }
  return out;
}

struct TruePose {
  Rotation r;
  Vec3 t;
};

TruePose random_pose(Rng& rng, double max_deg = 40.0) {
  const double yaw = deg2rad(rng.uniform(-max_deg, max_deg));
  const double pitch = deg2rad(rng.uniform(-max_deg, max_deg));
  const double roll = deg2rad(rng.uniform(-max_deg, max_deg));
  const double z = rng.uniform(400.0, 800.0);
  return {Rotation::from_euler_ypr(yaw, pitch, roll),
          Vec3(rng.uniform(-0.1, 0.1) * z, rng.uniform(-0.1, 0.1) * z, z)};
}

double rot_err_deg(const Rotation& a, const Rotation& b) { return rad2deg(a.geodesic_distance(b)); }

TEST(FaceModel, GenericModelIsAnchoredToTriangle) {
  const FaceModel m = FaceModel::generic();
  const Vec3 r = m.right_eye_center();
  const Vec3 l = m.left_eye_center();
  const Vec3 mouth = m.mouth_center();
  EXPECT_NEAR((r + l).norm(), 0.0, 1e-12);
  EXPECT_NEAR(r.y(), 0.0, 1e-12);
  EXPECT_NEAR(r.z(), 0.0, 1e-12);
  EXPECT_NEAR(l.x(), 32.5, 1e-12);
  EXPECT_NEAR(mouth.x(), 0.0, 1e-12);
  EXPECT_NEAR(mouth.z(), 0.0, 1e-12);
  EXPECT_GT(mouth.y(), 0.0);
  // Anchoring is rigid: pairwise distances survive.
  EXPECT_NEAR((m.point(Landmark::MouthLeft) - m.point(Landmark::LeftEyeOuter)).norm(),
              Vec3(20.0, 60.0, 10.0).norm(), 1e-12);
}

TEST(FaceModel, FileRoundTripAndMalformedInput) {
  const auto dir = std::filesystem::temp_directory_path() / "gazekit_pose_test";
  std::filesystem::create_directories(dir);
  const FaceModel m = FaceModel::generic();
  m.save(dir / "face.txt");
  const FaceModel back = FaceModel::load(dir / "face.txt");
  for (int i = 0; i < kNumLandmarks; ++i) EXPECT_LT((back.points()[i] - m.points()[i]).norm(), 1e-12);

  std::ofstream(dir / "bad.txt") << "a 1 2 3\nb 1 2\n";
  EXPECT_THROW(FaceModel::load(dir / "bad.txt"), Error);
  EXPECT_THROW(FaceModel::load(dir / "missing.txt"), Error);
}

TEST(Epnp, IdentityPose) {
  const FaceModel model = FaceModel::generic();
  const Vec3 t(0.0, 0.0, 600.0);
  const auto lm = render_landmarks(model, Rotation(), t, camera());
  const HeadPose pose = epnp_estimate(model, lm, camera());
  EXPECT_LT(rot_err_deg(pose.rotation, Rotation()), 0.5);
  EXPECT_LT((pose.translation - t).norm(), 0.01 * t.norm());
}

TEST(Epnp, RandomNoiseFreePoses) {
  const FaceModel model = FaceModel::generic();
  Rng rng(101);
  for (int i = 0; i < 200; ++i) {
    const TruePose truth = random_pose(rng);
    const auto lm = render_landmarks(model, truth.r, truth.t, camera());
    const HeadPose pose = epnp_estimate(model, lm, camera());
    ASSERT_LT(rot_err_deg(pose.rotation, truth.r), 0.5) << "pose " << i;
    ASSERT_LT((pose.translation - truth.t).norm(), 0.01 * truth.t.norm()) << "pose " << i;
  }
}

TEST(Epnp, NonPlanarModelUsesGeneralBranch) {
  Landmarks3D pts = FaceModel::generic().points();
  pts[static_cast<int>(Landmark::RightEyeOuter)].z() += 25.0;
  pts[static_cast<int>(Landmark::LeftEyeOuter)].z() += 25.0;
  pts[static_cast<int>(Landmark::MouthLeft)].z() -= 15.0;
  const FaceModel model = FaceModel::from_points(pts);
  Rng rng(3);
  for (int i = 0; i < 100; ++i) {
    const TruePose truth = random_pose(rng);
    const auto lm = render_landmarks(model, truth.r, truth.t, camera());
    const HeadPose pose = epnp_estimate(model, lm, camera());
    ASSERT_LT(rot_err_deg(pose.rotation, truth.r), 0.5);
    ASSERT_LT((pose.translation - truth.t).norm(), 0.01 * truth.t.norm());
  }
}

TEST(Epnp, NoisyLandmarksStayWithinLooseBound) {
  const FaceModel model = FaceModel::generic();
  Rng rng(202);
  int within = 0;
  const int trials = 500;
  for (int i = 0; i < trials; ++i) {
    const TruePose truth = random_pose(rng);
    auto lm = render_landmarks(model, truth.r, truth.t, camera());
    for (auto& p : lm) p += Vec2(rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0));
    const HeadPose pose = estimate_head_pose(model, lm, camera());
    if (rot_err_deg(pose.rotation, truth.r) < 3.0 && (pose.translation - truth.t).norm() < 0.05 * truth.t.norm())
      ++within;
  }
  EXPECT_GE(within, trials * 95 / 100);
}

TEST(Epnp, CollinearLandmarksAreDegenerate) {
  Landmarks2D lm;
  for (int i = 0; i < kNumLandmarks; ++i) lm[i] = {500.0 + 10.0 * i, 300.0 + 5.0 * i};
  try {
    epnp_estimate(FaceModel::generic(), lm, camera());
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::DegenerateConfiguration);
  }
}

TEST(Refine, NoiseFreeRecoversTruthExactly) {
  const FaceModel model = FaceModel::generic();
  Rng rng(9);
  for (int i = 0; i < 100; ++i) {
    const TruePose truth = random_pose(rng);
    const auto lm = render_landmarks(model, truth.r, truth.t, camera());
    const HeadPose pose = estimate_head_pose(model, lm, camera());
    ASSERT_LT(rot_err_deg(pose.rotation, truth.r), 1e-6);
    ASSERT_LT((pose.translation - truth.t).norm(), 1e-6);
  }
}

TEST(Refine, OptimalInitIsFixedPoint) {
  const FaceModel model = FaceModel::generic();
  const Rotation r = Rotation::from_euler_ypr(0.2, -0.1, 0.05);
  const Vec3 t(10.0, -20.0, 550.0);
  const auto lm = render_landmarks(model, r, t, camera());
  const HeadPose init = make_head_pose(r, t, model);
  const HeadPose refined = refine_pose(init, model, lm, camera());
  EXPECT_LE(reprojection_cost(refined, model, lm, camera()), reprojection_cost(init, model, lm, camera()));
  EXPECT_LT(rot_err_deg(refined.rotation, r), 1e-9);
  EXPECT_LT((refined.translation - t).norm(), 1e-9);
}

TEST(Refine, ConvergesFromFiveDegreesOff) {
  const FaceModel model = FaceModel::generic();
  Rng rng(33);
  for (int i = 0; i < 50; ++i) {
    const TruePose truth = random_pose(rng, 30.0);
    const auto lm = render_landmarks(model, truth.r, truth.t, camera());
    Vec3 axis(rng.normal(), rng.normal(), rng.normal());
    const Rotation off = Rotation::from_axis_angle(deg2rad(5.0) * axis.normalized()) * truth.r;
    const HeadPose refined = refine_pose(make_head_pose(off, truth.t, model), model, lm, camera());
    ASSERT_LT(rot_err_deg(refined.rotation, truth.r), 1e-4);
  }
}

TEST(Refine, NeverIncreasesCost) {
  const FaceModel model = FaceModel::generic();
  Rng rng(44);
  for (int i = 0; i < 200; ++i) {
    const TruePose truth = random_pose(rng);
    auto lm = render_landmarks(model, truth.r, truth.t, camera());
    for (auto& p : lm) p += Vec2(rng.normal(0.0, 2.0), rng.normal(0.0, 2.0));
    const HeadPose init = epnp_estimate(model, lm, camera());
    const HeadPose refined = refine_pose(init, model, lm, camera());
    ASSERT_LE(reprojection_cost(refined, model, lm, camera()), reprojection_cost(init, model, lm, camera()));
  }
}

TEST(Refine, ThousandPoseRecoveryRate) {
  const FaceModel model = FaceModel::generic();
  Rng rng(2024);
  int good = 0;
  for (int i = 0; i < 1000; ++i) {
    const TruePose truth = random_pose(rng);
    const auto lm = render_landmarks(model, truth.r, truth.t, camera());
    const HeadPose pose = estimate_head_pose(model, lm, camera());
    if (rot_err_deg(pose.rotation, truth.r) < 1e-4) ++good;
  }
  EXPECT_GE(good, 990);
}

TEST(HeadPose, EyeCentersAreTransformedCornerMidpoints) {
  const FaceModel model = FaceModel::generic();
  const Rotation r = Rotation::from_euler_ypr(0.3, 0.1, -0.2);
  const Vec3 t(5.0, 6.0, 500.0);
  const HeadPose pose = make_head_pose(r, t, model);
  const Vec3 expected_left = 0.5 * ((r * model.point(Landmark::LeftEyeInner) + t) +
                                    (r * model.point(Landmark::LeftEyeOuter) + t));
  EXPECT_LT((pose.eye_center_left - expected_left).norm(), 1e-12);
}

}  // namespace
}  // namespace gazekit
