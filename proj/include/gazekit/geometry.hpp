#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

namespace gazekit {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

// Pinhole intrinsics. Camera coordinates are x-right, y-down, z-forward,
// lengths in millimetres.
struct CameraIntrinsics {
  double fx = 0.0;
  double fy = 0.0;
  double cx = 0.0;
  double cy = 0.0;
  int image_width = 0;
  int image_height = 0;

  // Throws InvalidArgument when the invariants do not hold.
  void validate() const;
  Mat3 matrix() const;
  bool contains(const Vec2& pixel) const;
};

class Rotation {
 public:
  Rotation() : m_(Mat3::Identity()) {}

  // Re-orthonormalises the input (nearest rotation in the Frobenius sense).
  static Rotation from_matrix(const Mat3& m);
  static Rotation from_axis_angle(const Vec3& axis_angle);
  static Rotation about_x(double radians);
  static Rotation about_y(double radians);
  static Rotation about_z(double radians);
  // Intrinsic yaw (y) then pitch (x) then roll (z).
  static Rotation from_euler_ypr(double yaw, double pitch, double roll);

  const Mat3& matrix() const { return m_; }
  Vec3 to_axis_angle() const;
  Vec3 column(int i) const { return m_.col(i); }

  Rotation inverse() const;
  Rotation operator*(const Rotation& rhs) const;
  Vec3 operator*(const Vec3& v) const { return m_ * v; }

  // Angle of the relative rotation, radians in [0, pi].
  double geodesic_distance(const Rotation& other) const;

 private:
  explicit Rotation(const Mat3& m) : m_(m) {}
  Mat3 m_;
};

// Yaw/pitch of a gaze or head direction, radians.
struct GazeAngles {
  double yaw = 0.0;
  double pitch = 0.0;

  friend bool operator==(const GazeAngles&, const GazeAngles&) = default;
};

Vec2 project(const Vec3& p, const CameraIntrinsics& k);

// v = (-cos(pitch) sin(yaw), -sin(pitch), -cos(pitch) cos(yaw)).
Vec3 angles_to_vector(const GazeAngles& g);

// Inverse of angles_to_vector on unit vectors pointing back toward the camera
// (v.z < 0); throws InvalidGazeDirection otherwise.
GazeAngles vector_to_angles(const Vec3& v);

// Angle between two unit vectors in degrees.
double angular_error_deg(const Vec3& a, const Vec3& b);
double angular_error_deg(const GazeAngles& a, const GazeAngles& b);

double deg2rad(double deg);
double rad2deg(double rad);

}  // namespace gazekit
