#pragma once

#include <array>
#include <filesystem>
#include <string>

#include "gazekit/geometry.hpp"

namespace gazekit {

// Landmark order shared by face model files, manifests and the synthesizer.
enum class Landmark : int {
  RightEyeOuter = 0,
  RightEyeInner = 1,
  LeftEyeInner = 2,
  LeftEyeOuter = 3,
  MouthRight = 4,
  MouthLeft = 5,
};

inline constexpr int kNumLandmarks = 6;

using Landmarks2D = std::array<Vec2, kNumLandmarks>;
using Landmarks3D = std::array<Vec3, kNumLandmarks>;

// Rigid six-point face shape in millimetres, expressed in the head frame
// spanned by the eye-midpoint / mouth-midpoint triangle:
//   origin  midpoint of the two eye midpoints
//   x       right-eye midpoint -> left-eye midpoint
//   y       toward the mouth midpoint, orthogonalised against x
//   z       x cross y, pointing into the head
// A frontal face therefore has head->camera rotation = identity and its
// facing direction is the head's -z axis.
class FaceModel {
 public:
  // Re-expresses arbitrary points in the triangle-anchored frame.
  static FaceModel from_points(const Landmarks3D& points);

  // Generic mean shape: eye corners at x = +-45 / +-20 mm, mouth corners at
  // (+-25, 60) mm sitting 10 mm behind the eye plane.
  static FaceModel generic();

  // Six lines "name x y z" in the Landmark order.
  static FaceModel load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;

  const Landmarks3D& points() const { return points_; }
  const Vec3& point(Landmark l) const { return points_[static_cast<int>(l)]; }
  Vec3 right_eye_center() const;
  Vec3 left_eye_center() const;
  Vec3 mouth_center() const;

  static const std::array<std::string, kNumLandmarks>& landmark_names();

 private:
  Landmarks3D points_{};
};

struct HeadPose {
  Rotation rotation;  // head -> camera
  Vec3 translation = Vec3::Zero();
  Vec3 eye_center_left = Vec3::Zero();
  Vec3 eye_center_right = Vec3::Zero();

  Vec3 to_camera(const Vec3& head_point) const { return rotation * head_point + translation; }
};

// Fills the eye centres from rotation/translation.
HeadPose make_head_pose(const Rotation& rotation, const Vec3& translation, const FaceModel& model);

Landmarks2D project_model(const HeadPose& pose, const FaceModel& model, const CameraIntrinsics& k);

// Sum of squared pixel reprojection errors.
double reprojection_cost(const HeadPose& pose, const FaceModel& model, const Landmarks2D& landmarks,
                         const CameraIntrinsics& k);

HeadPose epnp_estimate(const FaceModel& model, const Landmarks2D& landmarks, const CameraIntrinsics& k);

struct RefineOptions {
  int max_iterations = 50;
  double relative_tolerance = 1e-10;
  double initial_damping = 1e-3;
  int max_damping_retries = 10;
};

HeadPose refine_pose(const HeadPose& init, const FaceModel& model, const Landmarks2D& landmarks,
                     const CameraIntrinsics& k, const RefineOptions& options = {});

// EPnP initialisation followed by Levenberg-Marquardt refinement.
HeadPose estimate_head_pose(const FaceModel& model, const Landmarks2D& landmarks,
                            const CameraIntrinsics& k);

}  // namespace gazekit
