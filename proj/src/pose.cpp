#include "gazekit/pose.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>
#include <vector>

#include "gazekit/error.hpp"

namespace gazekit {

namespace {

int idx(Landmark l) { return static_cast<int>(l); }

// Below this out-of-plane to in-plane spread ratio the model is treated as
// planar and three control points are used.
constexpr double kPlanarRatio = 0.05;

}  // namespace

// --- FaceModel ---------------------------------------------------------------

const std::array<std::string, kNumLandmarks>& FaceModel::landmark_names() {
  static const std::array<std::string, kNumLandmarks> names = {
      "right_eye_outer", "right_eye_inner", "left_eye_inner",
      "left_eye_outer",  "mouth_right",     "mouth_left"};
  return names;
}

FaceModel FaceModel::from_points(const Landmarks3D& points) {
  const Vec3 right = 0.5 * (points[idx(Landmark::RightEyeOuter)] + points[idx(Landmark::RightEyeInner)]);
  const Vec3 left = 0.5 * (points[idx(Landmark::LeftEyeInner)] + points[idx(Landmark::LeftEyeOuter)]);
  const Vec3 mouth = 0.5 * (points[idx(Landmark::MouthRight)] + points[idx(Landmark::MouthLeft)]);
  const Vec3 origin = 0.5 * (right + left);

  Vec3 x = left - right;
  if (x.norm() < 1e-9) fail(ErrorKind::DegenerateConfiguration, "face model eye midpoints coincide");
  x.normalize();
  Vec3 y = mouth - origin;
  y -= y.dot(x) * x;
  if (y.norm() < 1e-9) fail(ErrorKind::DegenerateConfiguration, "face model mouth lies on the eye line");
  y.normalize();
  const Vec3 z = x.cross(y);

  Mat3 basis;
  basis.col(0) = x;
  basis.col(1) = y;
  basis.col(2) = z;

  FaceModel model;
  for (int i = 0; i < kNumLandmarks; ++i) model.points_[i] = basis.transpose() * (points[i] - origin);
  return model;
}

FaceModel FaceModel::generic() {
  Landmarks3D p;
  p[idx(Landmark::RightEyeOuter)] = {-45.0, 0.0, 0.0};
  p[idx(Landmark::RightEyeInner)] = {-20.0, 0.0, 0.0};
  p[idx(Landmark::LeftEyeInner)] = {20.0, 0.0, 0.0};
  p[idx(Landmark::LeftEyeOuter)] = {45.0, 0.0, 0.0};
  p[idx(Landmark::MouthRight)] = {-25.0, 60.0, 10.0};
  p[idx(Landmark::MouthLeft)] = {25.0, 60.0, 10.0};
  return from_points(p);
}

FaceModel FaceModel::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::Io, "cannot open face model " + path.string());
  Landmarks3D p;
  int count = 0;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::istringstream ls(line);
    std::string name;
    double x, y, z;
    if (!(ls >> name >> x >> y >> z) || count >= kNumLandmarks) {
      fail(ErrorKind::MalformedRecord,
           path.string() + ":" + std::to_string(line_no) + ": expected 'name x y z' (six lines)");
    }
    p[count++] = {x, y, z};
  }
  if (count != kNumLandmarks) {
    fail(ErrorKind::MalformedRecord, path.string() + ": expected six landmarks, found " + std::to_string(count));
  }
  return from_points(p);
}

void FaceModel::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) fail(ErrorKind::Io, "cannot write face model " + path.string());
  out.precision(17);
  for (int i = 0; i < kNumLandmarks; ++i) {
    out << landmark_names()[i] << ' ' << points_[i].x() << ' ' << points_[i].y() << ' ' << points_[i].z()
        << '\n';
  }
}

Vec3 FaceModel::right_eye_center() const {
  return 0.5 * (point(Landmark::RightEyeOuter) + point(Landmark::RightEyeInner));
}

Vec3 FaceModel::left_eye_center() const {
  return 0.5 * (point(Landmark::LeftEyeInner) + point(Landmark::LeftEyeOuter));
}

Vec3 FaceModel::mouth_center() const {
  return 0.5 * (point(Landmark::MouthRight) + point(Landmark::MouthLeft));
}

// --- pose helpers --------------------------------------------------------------

HeadPose make_head_pose(const Rotation& rotation, const Vec3& translation, const FaceModel& model) {
  HeadPose pose;
  pose.rotation = rotation;
  pose.translation = translation;
  pose.eye_center_left = pose.to_camera(model.left_eye_center());
  pose.eye_center_right = pose.to_camera(model.right_eye_center());
  return pose;
}

Landmarks2D project_model(const HeadPose& pose, const FaceModel& model, const CameraIntrinsics& k) {
  Landmarks2D out;
  for (int i = 0; i < kNumLandmarks; ++i) out[i] = project(pose.to_camera(model.points()[i]), k);
  return out;
}

double reprojection_cost(const HeadPose& pose, const FaceModel& model, const Landmarks2D& landmarks,
                         const CameraIntrinsics& k) {
  double cost = 0.0;
  for (int i = 0; i < kNumLandmarks; ++i) {
    const Vec3 pc = pose.to_camera(model.points()[i]);
    if (!(pc.z() > 0.0)) return std::numeric_limits<double>::infinity();
    cost += (project(pc, k) - landmarks[i]).squaredNorm();
  }
  return cost;
}

// --- EPnP ----------------------------------------------------------------------

namespace {

struct ControlPoints {
  int count = 0;  // 4 general, 3 planar
  std::array<Vec3, 4> world{};
  // alphas(i, j): barycentric weight of control point j for model point i
  Eigen::Matrix<double, kNumLandmarks, 4> alphas = Eigen::Matrix<double, kNumLandmarks, 4>::Zero();
};

ControlPoints choose_control_points(const Landmarks3D& pts) {
  Vec3 centroid = Vec3::Zero();
  for (const auto& p : pts) centroid += p;
  centroid /= kNumLandmarks;

  Mat3 cov = Mat3::Zero();
  for (const auto& p : pts) cov += (p - centroid) * (p - centroid).transpose();
  Eigen::SelfAdjointEigenSolver<Mat3> eig(cov);
  const Vec3 evals = eig.eigenvalues();  // ascending
  const Mat3 evecs = eig.eigenvectors();
  if (evals(1) <= 1e-12 * evals(2)) {
    fail(ErrorKind::DegenerateConfiguration, "face model points are collinear");
  }

  ControlPoints cp;
  cp.count = std::sqrt(std::max(evals(0), 0.0) / evals(2)) < kPlanarRatio ? 3 : 4;
  cp.world[0] = centroid;
  std::array<Vec3, 3> axes;
  std::array<double, 3> scales;
  for (int j = 1; j < cp.count; ++j) {
    const int e = 3 - j;  // largest spread first
    scales[j - 1] = std::sqrt(evals(e) / kNumLandmarks);
    axes[j - 1] = evecs.col(e);
    cp.world[j] = centroid + scales[j - 1] * axes[j - 1];
  }

  for (int i = 0; i < kNumLandmarks; ++i) {
    const Vec3 d = pts[i] - centroid;
    double sum = 0.0;
    for (int j = 1; j < cp.count; ++j) {
      // Axes are orthonormal, so the (least-squares in the planar case)
      // coordinates are plain projections.
      const double a = axes[j - 1].dot(d) / scales[j - 1];
      cp.alphas(i, j) = a;
      sum += a;
    }
    cp.alphas(i, 0) = 1.0 - sum;
  }
  return cp;
}

void check_landmark_spread(const Landmarks2D& landmarks) {
  Vec2 mean = Vec2::Zero();
  for (const auto& l : landmarks) mean += l;
  mean /= kNumLandmarks;
  Eigen::Matrix2d cov = Eigen::Matrix2d::Zero();
  for (const auto& l : landmarks) cov += (l - mean) * (l - mean).transpose();
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> eig(cov);
  if (!(eig.eigenvalues()(1) > 0.0) || eig.eigenvalues()(0) <= 1e-9 * eig.eigenvalues()(1)) {
    fail(ErrorKind::DegenerateConfiguration, "landmarks are collinear or coincident");
  }
}

// Rigid alignment camera_pts ~ R * model_pts + t.
std::pair<Mat3, Vec3> absolute_orientation(const Landmarks3D& model_pts, const Landmarks3D& camera_pts) {
  Vec3 mc = Vec3::Zero(), cc = Vec3::Zero();
  for (int i = 0; i < kNumLandmarks; ++i) {
    mc += model_pts[i];
    cc += camera_pts[i];
  }
  mc /= kNumLandmarks;
  cc /= kNumLandmarks;
  Mat3 h = Mat3::Zero();
  for (int i = 0; i < kNumLandmarks; ++i) h += (camera_pts[i] - cc) * (model_pts[i] - mc).transpose();
  Eigen::JacobiSVD<Mat3> svd(h, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 d = Mat3::Identity();
  d(2, 2) = (svd.matrixU() * svd.matrixV().transpose()).determinant() < 0.0 ? -1.0 : 1.0;
  const Mat3 r = svd.matrixU() * d * svd.matrixV().transpose();
  return {r, cc - r * mc};
}

class EpnpSolver {
 public:
  EpnpSolver(const FaceModel& model, const Landmarks2D& landmarks, const CameraIntrinsics& k)
      : model_(model), landmarks_(landmarks), k_(k), cp_(choose_control_points(model.points())) {
    const int nc = cp_.count;
    const int dim = 3 * nc;
    Eigen::MatrixXd m = Eigen::MatrixXd::Zero(2 * kNumLandmarks, dim);
    for (int i = 0; i < kNumLandmarks; ++i) {
      const double xn = (landmarks[i].x() - k.cx) / k.fx;
      const double yn = (landmarks[i].y() - k.cy) / k.fy;
      for (int j = 0; j < nc; ++j) {
        const double a = cp_.alphas(i, j);
        m(2 * i, 3 * j) = a;
        m(2 * i, 3 * j + 2) = -a * xn;
        m(2 * i + 1, 3 * j + 1) = a;
        m(2 * i + 1, 3 * j + 2) = -a * yn;
      }
    }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(m.transpose() * m);
    null_ = eig.eigenvectors().leftCols(nc);

    for (int a = 0; a < nc; ++a) {
      for (int b = a + 1; b < nc; ++b) {
        pairs_.emplace_back(a, b);
        rho_.push_back((cp_.world[a] - cp_.world[b]).squaredNorm());
      }
    }
  }

  HeadPose solve() {
    const int max_n = cp_.count == 4 ? 3 : 2;
    double best_cost = std::numeric_limits<double>::infinity();
    HeadPose best;
    for (int n = 1; n <= max_n; ++n) {
      Eigen::VectorXd betas = approximate_betas(n);
      gauss_newton(betas);
      HeadPose candidate;
      if (!pose_from_betas(betas, candidate)) continue;
      const double cost = reprojection_cost(candidate, model_, landmarks_, k_);
      if (cost < best_cost) {
        best_cost = cost;
        best = candidate;
      }
    }
    if (!std::isfinite(best_cost)) {
      fail(ErrorKind::DegenerateConfiguration, "EPnP produced no pose in front of the camera");
    }
    return best;
  }

 private:
  // Difference of null vector k between control points a and b.
  Vec3 diff(int k, int a, int b) const {
    return null_.col(k).segment<3>(3 * a) - null_.col(k).segment<3>(3 * b);
  }

  // Linearised distance constraints over products beta_k * beta_l of the
  // first n null vectors.
  Eigen::VectorXd approximate_betas(int n) const {
    const int unknowns = n * (n + 1) / 2;
    Eigen::MatrixXd l(pairs_.size(), unknowns);
    Eigen::VectorXd rho(pairs_.size());
    for (std::size_t p = 0; p < pairs_.size(); ++p) {
      const auto [a, b] = pairs_[p];
      int col = 0;
      for (int i = 0; i < n; ++i) {
        for (int j = i; j < n; ++j) {
          const double dot = diff(i, a, b).dot(diff(j, a, b));
          l(p, col++) = i == j ? dot : 2.0 * dot;
        }
      }
      rho(p) = rho_[p];
    }
    const Eigen::VectorXd prod = l.colPivHouseholderQr().solve(rho);

    Eigen::VectorXd betas = Eigen::VectorXd::Zero(cp_.count);
    // prod layout: (0,0), (0,1), ..., (1,1), ...
    auto at = [&](int i, int j) {
      int col = 0;
      for (int a = 0; a < n; ++a)
        for (int b = a; b < n; ++b, ++col)
          if (a == i && b == j) return prod(col);
      return 0.0;
    };
    const double b00 = at(0, 0);
    betas(0) = std::sqrt(std::abs(b00));
    for (int i = 1; i < n; ++i) {
      const double sign = (at(0, i) < 0.0) == (b00 < 0.0) ? 1.0 : -1.0;
      betas(i) = sign * std::sqrt(std::abs(at(i, i)));
    }
    return betas;
  }

  void gauss_newton(Eigen::VectorXd& betas) const {
    const int nc = cp_.count;
    const int np = static_cast<int>(pairs_.size());
    for (int iter = 0; iter < 10; ++iter) {
      Eigen::MatrixXd jac(np, nc);
      Eigen::VectorXd res(np);
      for (int p = 0; p < np; ++p) {
        const auto [a, b] = pairs_[p];
        Vec3 sum = Vec3::Zero();
        for (int k = 0; k < nc; ++k) sum += betas(k) * diff(k, a, b);
        res(p) = sum.squaredNorm() - rho_[p];
        for (int k = 0; k < nc; ++k) jac(p, k) = 2.0 * sum.dot(diff(k, a, b));
      }
      const Eigen::VectorXd step = jac.colPivHouseholderQr().solve(-res);
      if (!step.allFinite()) break;
      betas += step;
      if (step.norm() <= 1e-14 * (1.0 + betas.norm())) break;
    }
  }

  bool pose_from_betas(const Eigen::VectorXd& betas, HeadPose& pose) const {
    const int nc = cp_.count;
    std::array<Vec3, 4> cam{};
    for (int j = 0; j < nc; ++j) {
      cam[j] = Vec3::Zero();
      for (int k = 0; k < nc; ++k) cam[j] += betas(k) * null_.col(k).segment<3>(3 * j);
    }
    Landmarks3D pts;
    double depth = 0.0;
    for (int i = 0; i < kNumLandmarks; ++i) {
      pts[i] = Vec3::Zero();
      for (int j = 0; j < nc; ++j) pts[i] += cp_.alphas(i, j) * cam[j];
      depth += pts[i].z();
    }
    if (depth < 0.0)
      for (auto& p : pts) p = -p;
    if (!std::isfinite(depth) || depth == 0.0) return false;

    const auto [r, t] = absolute_orientation(model_.points(), pts);
    if (!r.allFinite() || !t.allFinite()) return false;
    pose = make_head_pose(Rotation::from_matrix(r), t, model_);
    return true;
  }

  const FaceModel& model_;
  const Landmarks2D& landmarks_;
  const CameraIntrinsics& k_;
  ControlPoints cp_;
  Eigen::MatrixXd null_;
  std::vector<std::pair<int, int>> pairs_;
  std::vector<double> rho_;
};

}  // namespace

HeadPose epnp_estimate(const FaceModel& model, const Landmarks2D& landmarks, const CameraIntrinsics& k) {
  k.validate();
  check_landmark_spread(landmarks);
  return EpnpSolver(model, landmarks, k).solve();
}

// --- Levenberg-Marquardt refinement ---------------------------------------------

HeadPose refine_pose(const HeadPose& init, const FaceModel& model, const Landmarks2D& landmarks,
                     const CameraIntrinsics& k, const RefineOptions& options) {
  using Mat12x6 = Eigen::Matrix<double, 2 * kNumLandmarks, 6>;
  using Vec12 = Eigen::Matrix<double, 2 * kNumLandmarks, 1>;
  using Vec6 = Eigen::Matrix<double, 6, 1>;
  using Mat6 = Eigen::Matrix<double, 6, 6>;

  Rotation rot = init.rotation;
  Vec3 trans = init.translation;
  HeadPose current = make_head_pose(rot, trans, model);
  double cost = reprojection_cost(current, model, landmarks, k);
  if (!std::isfinite(cost)) {
    fail(ErrorKind::NonPositiveDepth, "initial pose places model points behind the camera");
  }

  double lambda = options.initial_damping;
  for (int iter = 0; iter < options.max_iterations; ++iter) {
    Mat12x6 jac;
    Vec12 res;
    for (int i = 0; i < kNumLandmarks; ++i) {
      const Vec3 rotated = rot * model.points()[i];
      const Vec3 pc = rotated + trans;
      const double iz = 1.0 / pc.z();
      res(2 * i) = k.fx * pc.x() * iz + k.cx - landmarks[i].x();
      res(2 * i + 1) = k.fy * pc.y() * iz + k.cy - landmarks[i].y();

      Eigen::Matrix<double, 2, 3> dproj;
      dproj << k.fx * iz, 0.0, -k.fx * pc.x() * iz * iz, 0.0, k.fy * iz, -k.fy * pc.y() * iz * iz;
      Mat3 skew;
      skew << 0.0, -rotated.z(), rotated.y(), rotated.z(), 0.0, -rotated.x(), -rotated.y(), rotated.x(), 0.0;
      // Left-multiplied increment: d(exp(w) R X)/dw = -[R X]x.
      jac.block<2, 3>(2 * i, 0) = -dproj * skew;
      jac.block<2, 3>(2 * i, 3) = dproj;
    }
    const Mat6 jtj = jac.transpose() * jac;
    const Vec6 grad = jac.transpose() * res;

    bool improved = false;
    double new_cost = cost;
    for (int retry = 0; retry < options.max_damping_retries; ++retry) {
      Mat6 aug = jtj;
      for (int d = 0; d < 6; ++d) aug(d, d) += lambda * std::max(jtj(d, d), 1e-12);
      const Vec6 step = aug.ldlt().solve(-grad);
      const Rotation cand_rot = Rotation::from_axis_angle(step.head<3>()) * rot;
      const Vec3 cand_trans = trans + step.tail<3>();
      const HeadPose cand = make_head_pose(cand_rot, cand_trans, model);
      const double c = step.allFinite() ? reprojection_cost(cand, model, landmarks, k)
                                        : std::numeric_limits<double>::infinity();
      if (c < cost) {
        rot = cand_rot;
        trans = cand_trans;
        new_cost = c;
        lambda = std::max(lambda / 10.0, 1e-12);
        improved = true;
        break;
      }
      lambda *= 10.0;
    }

    if (!improved) {
      // No damping level reduces the cost: either we sit at a stationary point
      // (residual orthogonal to the Jacobian's range) or the problem diverged.
      const double scale = jac.norm() * res.norm();
      if (cost <= 1e-20 || grad.norm() <= 1e-4 * scale) break;
      fail(ErrorKind::DivergedRefinement,
           "reprojection cost did not decrease for any damping (cost=" + std::to_string(cost) + ")");
    }
    const double rel = (cost - new_cost) / cost;
    cost = new_cost;
    if (rel < options.relative_tolerance || cost == 0.0) break;
  }
  return make_head_pose(rot, trans, model);
}

HeadPose estimate_head_pose(const FaceModel& model, const Landmarks2D& landmarks, const CameraIntrinsics& k) {
  return refine_pose(epnp_estimate(model, landmarks, k), model, landmarks, k);
}

}  // namespace gazekit
