#include <cmath>
#include <cstdio>
#include <fstream>
#include <json.hpp>

#include "gazekit/data.hpp"
#include "gazekit/error.hpp"
#include "gazekit/random.hpp"

namespace gazekit {

namespace {

using nlohmann::json;

constexpr double kEyeHalfHeightMm = 5.0;
constexpr double kEyeballDepthRatio = 0.5;  // sphere centre behind the lid plane, in radii
constexpr double kBackground = 25.0;
constexpr double kPupil = 12.0;

// Skin ellipse on the face plane (head frame, mm).
constexpr double kFaceCenterY = 20.0;
constexpr double kFaceHalfWidth = 70.0;
constexpr double kFaceHalfHeight = 90.0;
constexpr double kFaceCurvatureMm = 80.0;

struct Appearance {
  double iris, skin, sclera, aperture, radius;
  double kappa_yaw, kappa_pitch;  // radians
};

struct Eye {
  Vec3 lid_center;  // head frame, on the z = 0 plane
  double half_width;
  Vec3 ball_center;  // head frame
  Vec3 gaze_head;    // unit, head frame
};

double draw(Rng& rng, const Range& r) { return r.lo == r.hi ? r.lo : rng.uniform(r.lo, r.hi); }

std::uint64_t person_stream(const SynthConfig& cfg, int person) {
  return derive_seed(cfg.seed, cfg.first_person_id + static_cast<std::uint64_t>(person));
}

Appearance sample_appearance(const SynthConfig& cfg, int person) {
  Rng rng(derive_seed(person_stream(cfg, person), ~std::uint64_t{0}));
  Appearance a;
  a.iris = draw(rng, cfg.iris_intensity);
  a.skin = draw(rng, cfg.skin_intensity);
  a.sclera = draw(rng, cfg.sclera_intensity);
  a.aperture = draw(rng, cfg.eyelid_aperture);
  a.radius = draw(rng, cfg.eyeball_radius);
  a.kappa_yaw = deg2rad(draw(rng, cfg.kappa_yaw));
  a.kappa_pitch = deg2rad(draw(rng, cfg.kappa_pitch));
  return a;
}

class Renderer {
 public:
  Renderer(const SynthConfig& cfg, const Appearance& look, const HeadPose& pose, const CameraIntrinsics& k,
           const std::array<Eye, 2>& eyes, double gain, double gradient, const FaceRegion& region,
           const std::array<FaceRegion, 2>& eye_boxes)
      : cfg_(cfg), look_(look), pose_(pose), k_(k), eyes_(eyes), gain_(gain), gradient_(gradient),
        region_(region), eye_boxes_(eye_boxes) {
    rt_ = pose.rotation.matrix().transpose();
    origin_head_ = -(rt_ * pose.translation);
    light_ = Vec3(0.25, -0.35, -1.0).normalized();
    cos_iris_ = std::cos(deg2rad(cfg.iris_half_angle_deg));
    cos_pupil_ = std::cos(deg2rad(cfg.pupil_half_angle_deg));
  }

  GrayImage render(Rng& noise) const {
    GrayImage img(k_.image_width, k_.image_height);
    const int ss = cfg_.eye_supersampling;
    const double center_u = 0.5 * (region_.x0 + region_.x1 - 1);
    const double width_u = std::max(1, region_.x1 - region_.x0);
    for (int v = 0; v < img.height; ++v) {
      for (int u = 0; u < img.width; ++u) {
        double value;
        if (in_eye_box(u, v) && ss > 1) {
          double acc = 0.0;
          for (int sy = 0; sy < ss; ++sy)
            for (int sx = 0; sx < ss; ++sx) acc += shade(u + (sx + 0.5) / ss - 0.5, v + (sy + 0.5) / ss - 0.5);
          value = acc / (ss * ss);
        } else {
          value = shade(u, v);
        }
        value = value * gain_ + gradient_ * (u - center_u) / width_u;
        if (cfg_.pixel_noise > 0.0) value += noise.normal(0.0, cfg_.pixel_noise);
        img.at(u, v) = clamp_to_byte(value);
      }
    }
    return img;
  }

 private:
  bool in_eye_box(int u, int v) const {
    for (const auto& b : eye_boxes_)
      if (u >= b.x0 && u < b.x1 && v >= b.y0 && v < b.y1) return true;
    return false;
  }

  double lambert(const Vec3& normal_head) const {
    const Vec3 n = pose_.rotation * normal_head;
    return 0.6 + 0.4 * std::max(0.0, n.dot(light_));
  }

  // Unlit-by-gain intensity seen through pixel (x, y).
  double shade(double x, double y) const {
    const Vec3 dir_cam((x - k_.cx) / k_.fx, (y - k_.cy) / k_.fy, 1.0);
    const Vec3 dir = (rt_ * dir_cam).normalized();
    if (std::abs(dir.z()) < 1e-12) return kBackground;
    const double s = -origin_head_.z() / dir.z();
    if (s <= 0.0) return kBackground;
    const Vec3 p = origin_head_ + s * dir;

    for (const Eye& e : eyes_) {
      const double dx = p.x() - e.lid_center.x();
      const double dy = p.y() - e.lid_center.y();
      if (std::abs(dx) >= e.half_width) continue;
      const double t = dx / e.half_width;
      if (std::abs(dy) >= kEyeHalfHeightMm * look_.aperture * (1.0 - t * t)) continue;
      return shade_eyeball(e, dir);
    }

    const double ex = p.x() / kFaceHalfWidth;
    const double ey = (p.y() - kFaceCenterY) / kFaceHalfHeight;
    if (ex * ex + ey * ey > 1.0) return kBackground;
    // Gently convex face so directional light leaves a smooth ramp on skin.
    const Vec3 normal(p.x() / kFaceCurvatureMm, (p.y() - kFaceCenterY) / kFaceCurvatureMm, -1.0);
    return look_.skin * lambert(normal.normalized());
  }

  double shade_eyeball(const Eye& e, const Vec3& dir) const {
    const Vec3 oc = origin_head_ - e.ball_center;
    const double b = oc.dot(dir);
    const double c = oc.squaredNorm() - look_.radius * look_.radius;
    const double disc = b * b - c;
    if (disc < 0.0) return 0.3 * look_.skin;  // socket shadow at grazing rays
    const double s = -b - std::sqrt(disc);
    const Vec3 n = (origin_head_ + s * dir - e.ball_center) / look_.radius;
    const double cos_a = n.dot(e.gaze_head);
    double base = look_.sclera;
    if (cos_a > cos_pupil_) base = kPupil;
    else if (cos_a > cos_iris_) base = look_.iris;
    return base * lambert(n);
  }

  const SynthConfig& cfg_;
  Appearance look_;
  HeadPose pose_;
  CameraIntrinsics k_;
  std::array<Eye, 2> eyes_;
  double gain_, gradient_;
  FaceRegion region_;
  std::array<FaceRegion, 2> eye_boxes_;
  Mat3 rt_;
  Vec3 origin_head_;
  Vec3 light_;
  double cos_iris_, cos_pupil_;
};

FaceRegion eye_box(const Vec2& a, const Vec2& b, int w, int h) {
  const double span = (a - b).norm();
  const double pad = 0.6 * span;
  FaceRegion r;
  r.x0 = std::max(0, static_cast<int>(std::floor(std::min(a.x(), b.x()) - pad)));
  r.x1 = std::min(w, static_cast<int>(std::ceil(std::max(a.x(), b.x()) + pad)) + 1);
  r.y0 = std::max(0, static_cast<int>(std::floor(std::min(a.y(), b.y()) - pad)));
  r.y1 = std::min(h, static_cast<int>(std::ceil(std::max(a.y(), b.y()) + pad)) + 1);
  return r;
}

json vec_json(const Vec3& v) { return {v.x(), v.y(), v.z()}; }

Vec3 json_vec(const json& j) {
  if (!j.is_array() || j.size() != 3) fail(ErrorKind::MalformedRecord, "expected a 3-vector");
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

}  // namespace

void SynthConfig::validate() const {
  auto bad = [](const std::string& what) { fail(ErrorKind::ConfigOutOfRange, "synth config: " + what); };
  if (persons < 1 || records_per_person < 1) bad("persons and records_per_person must be >= 1");
  if (image_width < 16 || image_height < 16 || !(focal_px > 0.0)) bad("image size or focal length");
  for (const Range* r : {&head_yaw, &head_pitch, &head_roll, &head_x, &head_y, &depth, &screen_x, &screen_y,
                         &iris_intensity, &skin_intensity, &sclera_intensity, &eyelid_aperture, &eyeball_radius,
                         &kappa_yaw, &kappa_pitch, &gain, &gradient}) {
    if (!r->valid() || !std::isfinite(r->lo) || !std::isfinite(r->hi)) bad("empty or non-finite range");
  }
  if (std::max(std::abs(head_yaw.lo), std::abs(head_yaw.hi)) >= 80.0 ||
      std::max(std::abs(head_pitch.lo), std::abs(head_pitch.hi)) >= 80.0) {
    bad("head yaw/pitch must stay below 80 degrees");
  }
  if (!(depth.lo > 100.0)) bad("depth must exceed 100 mm");
  for (const Range* r : {&kappa_yaw, &kappa_pitch}) {
    if (std::max(std::abs(r->lo), std::abs(r->hi)) > 20.0) bad("kappa must stay within 20 degrees");
  }
  if (!(eyelid_aperture.lo > 0.0) || !(eyeball_radius.lo > 5.0) || !(gain.lo > 0.0)) {
    bad("aperture, eyeball radius (> 5 mm) and gain must be positive");
  }
  if (!(pupil_half_angle_deg > 0.0) || !(iris_half_angle_deg > pupil_half_angle_deg) || iris_half_angle_deg >= 90.0) {
    bad("need 0 < pupil angle < iris angle < 90");
  }
  if (pixel_noise < 0.0 || landmark_noise < 0.0 || eye_supersampling < 1) bad("noise >= 0, supersampling >= 1");
}

SynthRecord synth_record(const SynthConfig& cfg, int person, int index) {
  cfg.validate();
  if (person < 0 || person >= cfg.persons || index < 0 || index >= cfg.records_per_person) {
    fail(ErrorKind::ConfigOutOfRange, "record index outside the configured set");
  }
  const Appearance look = sample_appearance(cfg, person);
  Rng rng(derive_seed(person_stream(cfg, person), static_cast<std::uint64_t>(index)));

  const double yaw = deg2rad(draw(rng, cfg.head_yaw));
  const double pitch = deg2rad(draw(rng, cfg.head_pitch));
  const double roll = deg2rad(draw(rng, cfg.head_roll));
  const Vec3 position(draw(rng, cfg.head_x), draw(rng, cfg.head_y), draw(rng, cfg.depth));
  const Vec3 target(draw(rng, cfg.screen_x), draw(rng, cfg.screen_y), 0.0);
  const double gain = draw(rng, cfg.gain);
  const double gradient = draw(rng, cfg.gradient);
  const int hour = static_cast<int>(rng.index(24));

  const FaceModel model = FaceModel::generic();
  const HeadPose pose = make_head_pose(Rotation::from_euler_ypr(yaw, pitch, roll), position, model);

  CameraIntrinsics k;
  k.fx = k.fy = cfg.focal_px;
  k.cx = cfg.image_width / 2.0;
  k.cy = cfg.image_height / 2.0;
  k.image_width = cfg.image_width;
  k.image_height = cfg.image_height;

  SynthRecord out;
  out.record.person_id = cfg.first_person_id + static_cast<std::uint64_t>(person);
  out.record.intrinsics = k;
  out.record.gaze_target = target;
  out.record.hour = hour;
  const Landmarks2D exact = project_model(pose, model, k);

  const Mat3 rt = pose.rotation.matrix().transpose();
  // The nose lies toward -x from the left eye and +x from the right eye.
  auto make_eye = [&](Landmark outer, Landmark inner, double nasal_sign) {
    Eye e;
    e.lid_center = 0.5 * (model.point(outer) + model.point(inner));
    e.half_width = 0.5 * (model.point(outer) - model.point(inner)).norm();
    e.ball_center = e.lid_center + Vec3(0.0, 0.0, kEyeballDepthRatio * look.radius);
    const Vec3 ball_cam = pose.to_camera(e.ball_center);
    e.gaze_head = rt * (target - ball_cam).normalized();
    if (look.kappa_yaw != 0.0 || look.kappa_pitch != 0.0) {
      e.gaze_head = (Rotation::about_y(nasal_sign * look.kappa_yaw) * Rotation::about_x(look.kappa_pitch)) * e.gaze_head;
    }
    return e;
  };
  const std::array<Eye, 2> eyes{make_eye(Landmark::RightEyeOuter, Landmark::RightEyeInner, -1.0),
                                make_eye(Landmark::LeftEyeOuter, Landmark::LeftEyeInner, 1.0)};
  const FaceRegion region = face_region(exact, k.image_width, k.image_height);
  const std::array<FaceRegion, 2> boxes{
      eye_box(exact[static_cast<int>(Landmark::RightEyeOuter)], exact[static_cast<int>(Landmark::RightEyeInner)],
              k.image_width, k.image_height),
      eye_box(exact[static_cast<int>(Landmark::LeftEyeOuter)], exact[static_cast<int>(Landmark::LeftEyeInner)],
              k.image_width, k.image_height)};

  Rng noise(derive_seed(rng.next_u64(), 0));
  out.frame = Renderer(cfg, look, pose, k, eyes, gain, gradient, region, boxes).render(noise);

  for (int i = 0; i < kNumLandmarks; ++i) {
    Vec2 p = exact[i];
    if (cfg.landmark_noise > 0.0) p += Vec2(noise.normal(0.0, cfg.landmark_noise), noise.normal(0.0, cfg.landmark_noise));
    p.x() = std::clamp(p.x(), 0.0, k.image_width - 1.0);
    p.y() = std::clamp(p.y(), 0.0, k.image_height - 1.0);
    out.record.landmarks[i] = p;
  }

  SynthTruth& t = out.truth;
  t.person_id = out.record.person_id;
  t.rotation = pose.rotation;
  t.translation = pose.translation;
  t.eye_center_left = pose.eye_center_left;
  t.eye_center_right = pose.eye_center_right;
  t.gaze_left = (target - pose.eye_center_left).normalized();
  t.gaze_right = (target - pose.eye_center_right).normalized();
  t.gain = gain;
  t.gradient = gradient;
  return out;
}

std::string format_truth_line(const SynthTruth& t) {
  json j;
  j["person_id"] = t.person_id;
  json r = json::array();
  for (int i = 0; i < 3; ++i)
    for (int c = 0; c < 3; ++c) r.push_back(t.rotation.matrix()(i, c));
  j["rotation"] = r;
  j["translation"] = vec_json(t.translation);
  j["eye_center_left"] = vec_json(t.eye_center_left);
  j["eye_center_right"] = vec_json(t.eye_center_right);
  j["gaze_left"] = vec_json(t.gaze_left);
  j["gaze_right"] = vec_json(t.gaze_right);
  j["gain"] = t.gain;
  j["gradient"] = t.gradient;
  return j.dump();
}

SynthTruth parse_truth_line(const std::string& line) {
  try {
    const json j = json::parse(line);
    SynthTruth t;
    t.person_id = j.at("person_id").get<std::uint64_t>();
    const json& r = j.at("rotation");
    if (!r.is_array() || r.size() != 9) fail(ErrorKind::MalformedRecord, "rotation must hold 9 numbers");
    Mat3 m;
    for (int i = 0; i < 3; ++i)
      for (int c = 0; c < 3; ++c) m(i, c) = r[i * 3 + c].get<double>();
    t.rotation = Rotation::from_matrix(m);
    t.translation = json_vec(j.at("translation"));
    t.eye_center_left = json_vec(j.at("eye_center_left"));
    t.eye_center_right = json_vec(j.at("eye_center_right"));
    t.gaze_left = json_vec(j.at("gaze_left"));
    t.gaze_right = json_vec(j.at("gaze_right"));
    t.gain = j.at("gain").get<double>();
    t.gradient = j.at("gradient").get<double>();
    return t;
  } catch (const json::exception& e) {
    fail(ErrorKind::MalformedRecord, std::string("truth line: ") + e.what());
  }
}

std::vector<SynthTruth> load_truth(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::Io, "cannot open " + path.string());
  std::vector<SynthTruth> out;
  std::string line;
  while (std::getline(in, line))
    if (!line.empty()) out.push_back(parse_truth_line(line));
  return out;
}

SynthOutput synth_generate(const SynthConfig& cfg, const std::filesystem::path& out_dir) {
  cfg.validate();
  std::error_code ec;
  std::filesystem::create_directories(out_dir / "frames", ec);
  if (ec) fail(ErrorKind::Io, "cannot create " + (out_dir / "frames").string() + ": " + ec.message());

  SynthOutput out;
  out.manifest = out_dir / "manifest.jsonl";
  out.truth = out_dir / "truth.jsonl";
  std::ofstream manifest(out.manifest), truth(out.truth);
  if (!manifest || !truth) fail(ErrorKind::Io, "cannot write manifest/truth in " + out_dir.string());

  for (int p = 0; p < cfg.persons; ++p) {
    for (int i = 0; i < cfg.records_per_person; ++i) {
      SynthRecord rec = synth_record(cfg, p, i);
      char name[64];
      std::snprintf(name, sizeof name, "p%04llu_r%05d.pgm", static_cast<unsigned long long>(rec.record.person_id), i);
      const std::filesystem::path rel = std::filesystem::path("frames") / name;
      write_pgm(out_dir / rel, rec.frame);
      rec.record.image = rel;
      manifest << format_manifest_line(rec.record) << '\n';
      truth << format_truth_line(rec.truth) << '\n';
      ++out.records;
    }
  }
  if (!manifest || !truth) fail(ErrorKind::Io, "write failed in " + out_dir.string());
  return out;
}

}  // namespace gazekit
