#include <cmath>
#include <fstream>
#include <json.hpp>

#include "gazekit/data.hpp"
#include "gazekit/error.hpp"

namespace gazekit {

namespace {

using nlohmann::json;

double finite_number(const json& j, const char* what) {
  if (!j.is_number()) fail(ErrorKind::MalformedRecord, std::string(what) + " is not a number");
  const double v = j.get<double>();
  if (!std::isfinite(v)) fail(ErrorKind::MalformedRecord, std::string(what) + " is not finite");
  return v;
}

const json& field(const json& obj, const char* name) {
  const auto it = obj.find(name);
  if (it == obj.end()) fail(ErrorKind::MalformedRecord, std::string("missing field '") + name + "'");
  return *it;
}

}  // namespace

RawRecord parse_manifest_line(const std::string& line) {
  json j;
  try {
    j = json::parse(line);
  } catch (const json::parse_error& e) {
    fail(ErrorKind::MalformedRecord, std::string("invalid JSON: ") + e.what());
  }
  if (!j.is_object()) fail(ErrorKind::MalformedRecord, "record is not a JSON object");

  RawRecord r;
  const json& pid = field(j, "person_id");
  if (!pid.is_number_integer() || (pid.is_number_integer() && !pid.is_number_unsigned() && pid.get<long long>() < 0)) {
    fail(ErrorKind::MalformedRecord, "person_id must be a non-negative integer");
  }
  r.person_id = pid.get<std::uint64_t>();

  const json& image = field(j, "image");
  if (!image.is_string() || image.get<std::string>().empty()) fail(ErrorKind::MalformedRecord, "image must be a path");
  r.image = image.get<std::string>();

  const json& k = field(j, "intrinsics");
  if (!k.is_object()) fail(ErrorKind::MalformedRecord, "intrinsics must be an object");
  r.intrinsics.fx = finite_number(field(k, "fx"), "fx");
  r.intrinsics.fy = finite_number(field(k, "fy"), "fy");
  r.intrinsics.cx = finite_number(field(k, "cx"), "cx");
  r.intrinsics.cy = finite_number(field(k, "cy"), "cy");
  const json& w = field(k, "width");
  const json& h = field(k, "height");
  if (!w.is_number_integer() || !h.is_number_integer()) fail(ErrorKind::MalformedRecord, "image size must be integers");
  r.intrinsics.image_width = w.get<int>();
  r.intrinsics.image_height = h.get<int>();
  try {
    r.intrinsics.validate();
  } catch (const Error& e) {
    fail(ErrorKind::MalformedRecord, e.what());
  }

  const json& lm = field(j, "landmarks");
  if (!lm.is_array() || lm.size() != kNumLandmarks) fail(ErrorKind::MalformedRecord, "landmarks must hold six points");
  for (int i = 0; i < kNumLandmarks; ++i) {
    if (!lm[i].is_array() || lm[i].size() != 2) fail(ErrorKind::MalformedRecord, "landmark must be [x, y]");
    r.landmarks[i] = {finite_number(lm[i][0], "landmark x"), finite_number(lm[i][1], "landmark y")};
    if (!r.intrinsics.contains(r.landmarks[i])) {
      fail(ErrorKind::MalformedRecord, "landmark " + FaceModel::landmark_names()[i] + " lies outside the image");
    }
  }

  const json& target = field(j, "gaze_target");
  if (!target.is_array() || target.size() != 3) fail(ErrorKind::MalformedRecord, "gaze_target must be [x, y, z]");
  r.gaze_target = {finite_number(target[0], "gaze_target"), finite_number(target[1], "gaze_target"),
                   finite_number(target[2], "gaze_target")};

  if (const auto it = j.find("hour"); it != j.end() && !it->is_null()) {
    if (!it->is_number_integer() || it->get<int>() < 0 || it->get<int>() > 23) {
      fail(ErrorKind::MalformedRecord, "hour must be an integer in 0..23");
    }
    r.hour = it->get<int>();
  }
  return r;
}

std::string format_manifest_line(const RawRecord& r) {
  json j;
  j["person_id"] = r.person_id;
  j["image"] = r.image.generic_string();
  json lm = json::array();
  for (const auto& p : r.landmarks) lm.push_back({p.x(), p.y()});
  j["landmarks"] = lm;
  j["intrinsics"] = {{"fx", r.intrinsics.fx},
                     {"fy", r.intrinsics.fy},
                     {"cx", r.intrinsics.cx},
                     {"cy", r.intrinsics.cy},
                     {"width", r.intrinsics.image_width},
                     {"height", r.intrinsics.image_height}};
  j["gaze_target"] = {r.gaze_target.x(), r.gaze_target.y(), r.gaze_target.z()};
  if (r.hour) j["hour"] = *r.hour;
  return j.dump();
}

ManifestLoad load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::Io, "cannot open manifest " + path.string());
  const std::filesystem::path base = path.parent_path();
  ManifestLoad out;
  std::string line;
  std::size_t line_no = 0, nonblank = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    ++nonblank;
    try {
      RawRecord r = parse_manifest_line(line);
      if (r.image.is_relative()) r.image = base / r.image;
      out.records.push_back(std::move(r));
      out.line_numbers.push_back(line_no);
    } catch (const Error& e) {
      ++out.skipped;
      out.problems.push_back("line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  if (out.skipped * 10 > nonblank) {
    fail(ErrorKind::MalformedRecord, path.string() + ": " + std::to_string(out.skipped) + " of " +
                                         std::to_string(nonblank) + " lines are malformed (first: " +
                                         out.problems.front() + ")");
  }
  return out;
}

void save_manifest(const std::filesystem::path& path, std::span<const RawRecord> records) {
  std::ofstream out(path);
  if (!out) fail(ErrorKind::Io, "cannot write " + path.string());
  for (const auto& r : records) out << format_manifest_line(r) << '\n';
  if (!out) fail(ErrorKind::Io, "write failed for " + path.string());
}

}  // namespace gazekit
