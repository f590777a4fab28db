#include <fstream>
#include <sstream>

#include "gazekit/binio.hpp"
#include "gazekit/data.hpp"
#include "gazekit/error.hpp"

namespace gazekit {

namespace {

constexpr std::string_view kMagic = "GZNRM1";

}  // namespace

void write_store(std::ostream& out, std::span<const NormalizedSample> samples) {
  const int width = samples.empty() ? 60 : samples.front().eye.width;
  const int height = samples.empty() ? 36 : samples.front().eye.height;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (samples[i].eye.width != width || samples[i].eye.height != height) {
      fail(ErrorKind::ShapeMismatch, "sample " + std::to_string(i) + " has a different crop size");
    }
  }
  binio::write_magic(out, kMagic);
  binio::write<std::uint32_t>(out, static_cast<std::uint32_t>(width));
  binio::write<std::uint32_t>(out, static_cast<std::uint32_t>(height));
  binio::write<std::uint64_t>(out, samples.size());
  for (const auto& s : samples) {
    binio::write<std::uint64_t>(out, s.person_id);
    binio::write<std::uint8_t>(out, static_cast<std::uint8_t>(s.eye_side));
    out.write(reinterpret_cast<const char*>(s.eye.pixels.data()), static_cast<std::streamsize>(s.eye.pixels.size()));
    const double angles[4] = {s.head.yaw, s.head.pitch, s.gaze.yaw, s.gaze.pitch};
    binio::write_doubles(out, angles, 4);
  }
}

std::vector<NormalizedSample> read_store(std::istream& in) {
  if (!binio::read_magic(in, kMagic)) fail(ErrorKind::BadMagic, "not a GZNRM1 store");
  std::uint32_t width = 0, height = 0;
  std::uint64_t count = 0;
  if (!binio::read(in, width) || !binio::read(in, height) || !binio::read(in, count)) {
    fail(ErrorKind::TruncatedRecord, "truncated GZNRM1 header");
  }
  std::vector<NormalizedSample> out;
  out.reserve(static_cast<std::size_t>(std::min<std::uint64_t>(count, 1u << 20)));
  for (std::uint64_t i = 0; i < count; ++i) {
    NormalizedSample s;
    s.eye = GrayImage(static_cast<int>(width), static_cast<int>(height));
    std::uint8_t side = 0;
    double angles[4];
    bool ok = binio::read(in, s.person_id) && binio::read(in, side);
    if (ok) {
      in.read(reinterpret_cast<char*>(s.eye.pixels.data()), static_cast<std::streamsize>(s.eye.pixels.size()));
      ok = in.gcount() == static_cast<std::streamsize>(s.eye.pixels.size()) && binio::read_doubles(in, angles, 4);
    }
    if (!ok) {
      fail(ErrorKind::TruncatedRecord, "GZNRM1 record " + std::to_string(i) + " of " + std::to_string(count) +
                                           " is truncated");
    }
    if (side > 1) fail(ErrorKind::MalformedRecord, "GZNRM1 record " + std::to_string(i) + " has eye side " +
                                                       std::to_string(side));
    s.eye_side = static_cast<EyeSide>(side);
    s.head = {angles[0], angles[1]};
    s.gaze = {angles[2], angles[3]};
    out.push_back(std::move(s));
  }
  return out;
}

void write_store(const std::filesystem::path& path, std::span<const NormalizedSample> samples) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorKind::Io, "cannot write " + path.string());
  write_store(out, samples);
  if (!out) fail(ErrorKind::Io, "write failed for " + path.string());
}

std::vector<NormalizedSample> read_store(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::Io, "cannot open " + path.string());
  return read_store(in);
}

void write_store_index(const std::filesystem::path& path, std::span<const StoreIndexEntry> index) {
  std::ofstream out(path);
  if (!out) fail(ErrorKind::Io, "cannot write " + path.string());
  out << "sample,record,person_id,eye_side\n";
  for (std::size_t i = 0; i < index.size(); ++i) {
    out << i << ',' << index[i].record << ',' << index[i].person_id << ','
        << (index[i].eye_side == EyeSide::Left ? "left" : "right") << '\n';
  }
}

std::vector<StoreIndexEntry> read_store_index(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::Io, "cannot open " + path.string());
  std::string line;
  std::getline(in, line);  // header
  std::vector<StoreIndexEntry> out;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::string sample, record, pid, side;
    if (!std::getline(ss, sample, ',') || !std::getline(ss, record, ',') || !std::getline(ss, pid, ',') ||
        !std::getline(ss, side) || (side != "left" && side != "right")) {
      fail(ErrorKind::MalformedRecord, path.string() + " line " + std::to_string(line_no));
    }
    try {
      out.push_back({std::stoull(record), std::stoull(pid), side == "left" ? EyeSide::Left : EyeSide::Right});
    } catch (const std::exception&) {
      fail(ErrorKind::MalformedRecord, path.string() + " line " + std::to_string(line_no));
    }
  }
  return out;
}

}  // namespace gazekit
