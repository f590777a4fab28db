#include "gazekit/geometry.hpp"

#include <Eigen/SVD>
#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

#include "gazekit/error.hpp"

namespace gazekit {

void CameraIntrinsics::validate() const {
  const bool ok = fx > 0.0 && fy > 0.0 && image_width > 0 && image_height > 0 && cx >= 0.0 &&
                  cx < image_width && cy >= 0.0 && cy < image_height;
  if (!ok) {
    std::ostringstream os;
    os << "invalid intrinsics fx=" << fx << " fy=" << fy << " cx=" << cx << " cy=" << cy
       << " size=" << image_width << "x" << image_height;
    fail(ErrorKind::InvalidArgument, os.str());
  }
}

Mat3 CameraIntrinsics::matrix() const {
  Mat3 k;
  k << fx, 0.0, cx, 0.0, fy, cy, 0.0, 0.0, 1.0;
  return k;
}

bool CameraIntrinsics::contains(const Vec2& pixel) const {
  return pixel.x() >= 0.0 && pixel.y() >= 0.0 && pixel.x() <= image_width - 1 &&
         pixel.y() <= image_height - 1;
}

Rotation Rotation::from_matrix(const Mat3& m) {
  Eigen::JacobiSVD<Mat3> svd(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 d = Mat3::Identity();
  d(2, 2) = (svd.matrixU() * svd.matrixV().transpose()).determinant() < 0.0 ? -1.0 : 1.0;
  return Rotation(svd.matrixU() * d * svd.matrixV().transpose());
}

Rotation Rotation::from_axis_angle(const Vec3& axis_angle) {
  const double angle = axis_angle.norm();
  if (angle < 1e-300) return Rotation();
  return Rotation(Eigen::AngleAxisd(angle, axis_angle / angle).toRotationMatrix());
}

Rotation Rotation::about_x(double radians) {
  return Rotation(Eigen::AngleAxisd(radians, Vec3::UnitX()).toRotationMatrix());
}

Rotation Rotation::about_y(double radians) {
  return Rotation(Eigen::AngleAxisd(radians, Vec3::UnitY()).toRotationMatrix());
}

Rotation Rotation::about_z(double radians) {
  return Rotation(Eigen::AngleAxisd(radians, Vec3::UnitZ()).toRotationMatrix());
}

Rotation Rotation::from_euler_ypr(double yaw, double pitch, double roll) {
  return about_y(yaw) * about_x(pitch) * about_z(roll);
}

Vec3 Rotation::to_axis_angle() const {
  const Eigen::AngleAxisd aa(m_);
  return aa.axis() * aa.angle();
}

Rotation Rotation::inverse() const { return Rotation(Mat3(m_.transpose())); }

Rotation Rotation::operator*(const Rotation& rhs) const { return Rotation(Mat3(m_ * rhs.m_)); }

double Rotation::geodesic_distance(const Rotation& other) const {
  // atan2 form stays accurate for tiny angles where acos((tr-1)/2) does not.
  const Mat3 rel = m_.transpose() * other.m_;
  const Vec3 skew(rel(2, 1) - rel(1, 2), rel(0, 2) - rel(2, 0), rel(1, 0) - rel(0, 1));
  return std::atan2(0.5 * skew.norm(), 0.5 * (rel.trace() - 1.0));
}

Vec2 project(const Vec3& p, const CameraIntrinsics& k) {
  if (!(p.z() > 0.0)) {
    std::ostringstream os;
    os << "point depth " << p.z() << " is not positive";
    fail(ErrorKind::NonPositiveDepth, os.str());
  }
  return {k.fx * p.x() / p.z() + k.cx, k.fy * p.y() / p.z() + k.cy};
}

Vec3 angles_to_vector(const GazeAngles& g) {
  const double cp = std::cos(g.pitch);
  return {-cp * std::sin(g.yaw), -std::sin(g.pitch), -cp * std::cos(g.yaw)};
}

GazeAngles vector_to_angles(const Vec3& v) {
  if (!(v.z() < 0.0)) {
    std::ostringstream os;
    os << "direction (" << v.x() << ", " << v.y() << ", " << v.z()
       << ") does not point toward the camera";
    fail(ErrorKind::InvalidGazeDirection, os.str());
  }
  const Vec3 u = v.normalized();
  return {std::atan2(-u.x(), -u.z()), std::asin(std::clamp(-u.y(), -1.0, 1.0))};
}

double angular_error_deg(const Vec3& a, const Vec3& b) {
  // Same value as acos(clamp(a.b)) for unit inputs, without the loss of
  // precision near 0 and 180 degrees.
  return rad2deg(std::atan2(a.cross(b).norm(), a.dot(b)));
}

double angular_error_deg(const GazeAngles& a, const GazeAngles& b) {
  return angular_error_deg(angles_to_vector(a), angles_to_vector(b));
}

double deg2rad(double deg) { return deg * std::numbers::pi / 180.0; }
double rad2deg(double rad) { return rad * 180.0 / std::numbers::pi; }

}  // namespace gazekit
