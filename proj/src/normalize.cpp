#include "gazekit/normalize.hpp"

#include <array>
#include <cmath>
#include <sstream>

#include "gazekit/error.hpp"

namespace gazekit {

void NormalizationParams::validate() const {
  if (!(distance_mm > 0.0) || !(focal_px > 0.0) || width <= 0 || height <= 0) {
    std::ostringstream os;
    os << "invalid normalisation params d=" << distance_mm << " f=" << focal_px << " size=" << width << "x"
       << height;
    fail(ErrorKind::InvalidArgument, os.str());
  }
}

Mat3 NormalizationParams::camera_matrix() const {
  Mat3 c;
  c << focal_px, 0.0, width / 2.0, 0.0, focal_px, height / 2.0, 0.0, 0.0, 1.0;
  return c;
}

EyeSide opposite(EyeSide side) { return side == EyeSide::Left ? EyeSide::Right : EyeSide::Left; }

NormalizationTransform compute_normalization(const Vec3& eye_center, const Rotation& head_rotation,
                                             const CameraIntrinsics& k, const NormalizationParams& p) {
  p.validate();
  const double dist = eye_center.norm();
  if (!(dist > 0.0) || !(eye_center.z() > 0.0)) {
    fail(ErrorKind::NonPositiveDepth, "eye centre must lie in front of the camera");
  }
  const Vec3 z_axis = eye_center / dist;
  const Vec3 head_x = head_rotation.column(0);
  const Vec3 y_raw = z_axis.cross(head_x);
  if (y_raw.norm() < 1e-6) fail(ErrorKind::DegenerateAxes, "viewing axis is parallel to the head x axis");
  const Vec3 y_axis = y_raw.normalized();
  const Vec3 x_axis = y_axis.cross(z_axis);

  Mat3 r;
  r.row(0) = x_axis.transpose();
  r.row(1) = y_axis.transpose();
  r.row(2) = z_axis.transpose();

  NormalizationTransform tf;
  tf.rotation = Rotation::from_matrix(r);
  tf.scale = p.distance_mm / dist;
  const Mat3 scale_inv = Eigen::Vector3d(1.0, 1.0, 1.0 / tf.scale).asDiagonal();
  tf.homography = k.matrix() * tf.rotation.matrix().transpose() * scale_inv * p.camera_matrix().inverse();
  return tf;
}

WarpResult warp_eye(const GrayImage& frame, const NormalizationTransform& tf, const NormalizationParams& p) {
  if (frame.empty()) fail(ErrorKind::InvalidArgument, "empty source frame");
  p.validate();
  WarpResult out{GrayImage(p.width, p.height), 0.0};
  const Mat3& h = tf.homography;
  const double max_x = frame.width - 1;
  const double max_y = frame.height - 1;
  int clipped = 0;
  for (int v = 0; v < p.height; ++v) {
    for (int u = 0; u < p.width; ++u) {
      const Vec3 src = h * Vec3(u, v, 1.0);
      const double x = src.x() / src.z();
      const double y = src.y() / src.z();
      if (!(src.z() > 0.0) || !(x >= 0.0 && x <= max_x && y >= 0.0 && y <= max_y)) {
        ++clipped;
        continue;
      }
      out.image.at(u, v) = clamp_to_byte(sample_bilinear(frame, x, y));
    }
  }
  out.clipped_fraction = static_cast<double>(clipped) / (p.width * p.height);
  if (out.clipped_fraction > 0.5) {
    std::ostringstream os;
    os << out.clipped_fraction * 100.0 << "% of the eye crop lies outside the frame";
    fail(ErrorKind::FullyOutOfBounds, os.str());
  }
  return out;
}

GrayImage equalize(const GrayImage& img) {
  std::array<std::int64_t, 256> hist{};
  for (const auto v : img.pixels) ++hist[v];
  std::array<std::int64_t, 256> cdf{};
  std::int64_t running = 0;
  std::int64_t cdf_min = -1;
  for (int v = 0; v < 256; ++v) {
    running += hist[v];
    cdf[v] = running;
    if (cdf_min < 0 && hist[v] > 0) cdf_min = running;
  }
  const std::int64_t n = static_cast<std::int64_t>(img.pixels.size());
  const std::int64_t denom = n - cdf_min;
  if (img.pixels.empty() || denom == 0) return img;

  std::array<std::uint8_t, 256> lut{};
  for (int v = 0; v < 256; ++v) {
    const std::int64_t num = std::max<std::int64_t>(cdf[v] - cdf_min, 0);
    // round half up of 255 * num / denom
    lut[v] = static_cast<std::uint8_t>((2 * 255 * num + denom) / (2 * denom));
  }
  GrayImage out = img;
  for (auto& v : out.pixels) v = lut[v];
  return out;
}

GazeAngles normalize_head(const Rotation& head_rotation, const NormalizationTransform& tf) {
  const Rotation normalized = tf.rotation * head_rotation;
  return vector_to_angles(normalized * Vec3(0.0, 0.0, -1.0));
}

GazeAngles normalize_gaze(const Vec3& gaze_vec, const NormalizationTransform& tf) {
  return vector_to_angles(tf.rotation * gaze_vec);
}

NormalizedSample mirror_sample(const NormalizedSample& s) {
  NormalizedSample m = s;
  const int w = s.eye.width;
  for (int y = 0; y < s.eye.height; ++y)
    for (int x = 0; x < w; ++x) m.eye.at(x, y) = s.eye.at(w - 1 - x, y);
  m.head.yaw = -s.head.yaw;
  m.gaze.yaw = -s.gaze.yaw;
  m.eye_side = opposite(s.eye_side);
  return m;
}

NormalizedRecord normalize_record(const GrayImage& frame, const Landmarks2D& landmarks, const Vec3& gaze_target,
                                  const CameraIntrinsics& k, const FaceModel& model,
                                  const NormalizationParams& p, std::uint64_t person_id) {
  NormalizedRecord rec;
  rec.pose = estimate_head_pose(model, landmarks, k);

  auto one_eye = [&](const Vec3& center, EyeSide side, NormalizationTransform& tf) {
    tf = compute_normalization(center, rec.pose.rotation, k, p);
    NormalizedSample s;
    s.eye = equalize(warp_eye(frame, tf, p).image);
    s.head = normalize_head(rec.pose.rotation, tf);
    const Vec3 gaze = gaze_target - center;
    if (!(gaze.norm() > 0.0)) fail(ErrorKind::InvalidGazeDirection, "gaze target coincides with the eye");
    s.gaze = normalize_gaze(gaze.normalized(), tf);
    s.person_id = person_id;
    s.eye_side = side;
    return s;
  };

  rec.left = one_eye(rec.pose.eye_center_left, EyeSide::Left, rec.left_transform);
  NormalizedSample right = one_eye(rec.pose.eye_center_right, EyeSide::Right, rec.right_transform);
  rec.right = mirror_sample(right);
  rec.right.eye_side = EyeSide::Right;
  return rec;
}

}  // namespace gazekit
