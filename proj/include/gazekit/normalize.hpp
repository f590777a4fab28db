#pragma once

#include <cstdint>

#include "gazekit/geometry.hpp"
#include "gazekit/image.hpp"
#include "gazekit/pose.hpp"

namespace gazekit {

// Virtual camera used for every normalised eye crop.
struct NormalizationParams {
  double distance_mm = 600.0;
  double focal_px = 960.0;
  int width = 60;
  int height = 36;

  void validate() const;
  // Principal point at (W/2, H/2).
  Mat3 camera_matrix() const;
};

struct NormalizationTransform {
  Rotation rotation;    // camera -> normalised camera
  double scale = 1.0;   // distance / |t|
  Mat3 homography = Mat3::Identity();  // normalised crop pixel -> source pixel
};

enum class EyeSide : std::uint8_t { Left = 0, Right = 1 };

EyeSide opposite(EyeSide side);

// One (e, h, g) training triple. eye_side names the physical eye the crop came
// from; right-eye crops produced by normalize_record are already mirrored into
// the left-eye space.
struct NormalizedSample {
  GrayImage eye;
  GazeAngles head;
  GazeAngles gaze;
  std::uint64_t person_id = 0;
  EyeSide eye_side = EyeSide::Left;

  friend bool operator==(const NormalizedSample&, const NormalizedSample&) = default;
};

// Rotation rows: z = t/|t|, y = normalize(z x head_x), x = y x z.
NormalizationTransform compute_normalization(const Vec3& eye_center, const Rotation& head_rotation,
                                             const CameraIntrinsics& k, const NormalizationParams& p);

struct WarpResult {
  GrayImage image;
  double clipped_fraction = 0.0;  // share of samples that fell outside the frame
};

// Bilinear perspective warp into the W x H crop; outside samples are 0.
// Throws FullyOutOfBounds when more than half the crop is outside.
WarpResult warp_eye(const GrayImage& frame, const NormalizationTransform& tf, const NormalizationParams& p);

// 256-bin histogram equalisation. Constant images are returned unchanged.
GrayImage equalize(const GrayImage& img);

// Yaw/pitch of the facing direction (head -z axis) in the normalised camera.
GazeAngles normalize_head(const Rotation& head_rotation, const NormalizationTransform& tf);

GazeAngles normalize_gaze(const Vec3& gaze_vec, const NormalizationTransform& tf);

// Horizontal flip of the crop with yaw negation of h and g; swaps eye_side.
NormalizedSample mirror_sample(const NormalizedSample& s);

struct NormalizedRecord {
  HeadPose pose;
  NormalizedSample left;
  NormalizedSample right;  // mirrored, eye_side = Right
  NormalizationTransform left_transform;
  NormalizationTransform right_transform;
};

// Full per-frame pipeline: head pose, then for each eye normalisation, warp,
// equalisation and angle labels. gaze_target is in camera coordinates (mm).
NormalizedRecord normalize_record(const GrayImage& frame, const Landmarks2D& landmarks, const Vec3& gaze_target,
                                  const CameraIntrinsics& k, const FaceModel& model,
                                  const NormalizationParams& p, std::uint64_t person_id = 0);

}  // namespace gazekit
