#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>

#include "gazekit/data.hpp"
#include "gazekit/error.hpp"
#include "gazekit/random.hpp"

namespace gazekit {

namespace {

// Failures that discard one record instead of stopping the run.
bool is_record_failure(ErrorKind k) {
  switch (k) {
    case ErrorKind::NonPositiveDepth:
    case ErrorKind::InvalidGazeDirection:
    case ErrorKind::DegenerateConfiguration:
    case ErrorKind::DivergedRefinement:
    case ErrorKind::DegenerateAxes:
    case ErrorKind::FullyOutOfBounds:
      return true;
    default:
      return false;
  }
}

bool canonical_less(const NormalizedSample* a, const NormalizedSample* b) {
  return std::tie(a->gaze.yaw, a->gaze.pitch, a->head.yaw, a->head.pitch, a->eye.width, a->eye.height,
                  a->eye.pixels) < std::tie(b->gaze.yaw, b->gaze.pitch, b->head.yaw, b->head.pitch, b->eye.width,
                                            b->eye.height, b->eye.pixels);
}

void draw_quota(std::vector<const NormalizedSample*>& pool, int quota, std::uint64_t seed,
                std::vector<NormalizedSample>& out) {
  if (pool.empty() || quota <= 0) return;
  std::sort(pool.begin(), pool.end(), canonical_less);
  Rng rng(seed);
  const std::size_t n = static_cast<std::size_t>(quota);
  if (pool.size() >= n) {
    for (std::size_t i = 0; i < n; ++i) {
      std::swap(pool[i], pool[i + rng.index(pool.size() - i)]);
      out.push_back(*pool[i]);
    }
  } else {
    for (std::size_t i = 0; i < n; ++i) out.push_back(*pool[rng.index(pool.size())]);
  }
}

std::pair<double, double> region_mean(const GrayImage& frame, int x0, int x1, int y0, int y1) {
  double sum = 0.0;
  std::size_t n = 0;
  for (int y = y0; y < y1; ++y)
    for (int x = x0; x < x1; ++x) {
      sum += frame.at(x, y);
      ++n;
    }
  return {n ? sum / n : 0.0, static_cast<double>(n)};
}

void write_histogram(const std::filesystem::path& path, std::span<const std::size_t> counts,
                     const std::function<std::pair<double, double>(int)>& range) {
  std::ofstream out(path);
  if (!out) fail(ErrorKind::Io, "cannot write " + path.string());
  out << "bin_start,bin_end,count\n";
  for (std::size_t b = 0; b < counts.size(); ++b) {
    const auto [lo, hi] = range(static_cast<int>(b));
    out << lo << ',' << hi << ',' << counts[b] << '\n';
  }
}

}  // namespace

NormalizedSet normalize_records(std::span<const RawRecord> records,
                                const std::function<GrayImage(std::size_t)>& frame_of, const FaceModel& model,
                                const NormalizationParams& params) {
  NormalizedSet out;
  for (std::size_t i = 0; i < records.size(); ++i) {
    const RawRecord& r = records[i];
    try {
      const GrayImage frame = frame_of(i);
      const NormalizedRecord n =
          normalize_record(frame, r.landmarks, r.gaze_target, r.intrinsics, model, params, r.person_id);
      out.samples.push_back(n.left);
      out.index.push_back({i, r.person_id, EyeSide::Left});
      out.samples.push_back(n.right);
      out.index.push_back({i, r.person_id, EyeSide::Right});
    } catch (const Error& e) {
      if (!is_record_failure(e.kind())) throw;
      out.drops.push_back("record " + std::to_string(i) + ": " + std::string(to_string(e.kind())) + ": " + e.what());
    }
  }
  return out;
}

std::vector<NormalizedSample> subsample_per_person(std::span<const NormalizedSample> samples, int n_left,
                                                   int n_right, std::uint64_t seed) {
  if (n_left < 1 || n_right < 1) fail(ErrorKind::InvalidArgument, "per-eye quotas must be >= 1");
  std::map<std::uint64_t, std::array<std::vector<const NormalizedSample*>, 2>> by_person;
  for (const auto& s : samples) by_person[s.person_id][static_cast<int>(s.eye_side)].push_back(&s);
  std::vector<NormalizedSample> out;
  for (auto& [pid, sides] : by_person) {
    const std::uint64_t person_seed = derive_seed(seed, pid);
    draw_quota(sides[static_cast<int>(EyeSide::Left)], n_left, derive_seed(person_seed, 0), out);
    draw_quota(sides[static_cast<int>(EyeSide::Right)], n_right, derive_seed(person_seed, 1), out);
  }
  return out;
}

std::vector<NormalizedSample> with_mirrored_twins(std::span<const NormalizedSample> samples) {
  std::vector<NormalizedSample> out(samples.begin(), samples.end());
  out.reserve(2 * samples.size());
  for (const auto& s : samples) out.push_back(mirror_sample(s));
  return out;
}

std::vector<std::uint64_t> person_ids(std::span<const NormalizedSample> samples) {
  std::set<std::uint64_t> ids;
  for (const auto& s : samples) ids.insert(s.person_id);
  return {ids.begin(), ids.end()};
}

FaceRegion face_region(const Landmarks2D& landmarks, int image_width, int image_height) {
  double min_x = landmarks[0].x(), max_x = min_x, min_y = landmarks[0].y(), max_y = min_y;
  for (const auto& p : landmarks) {
    min_x = std::min(min_x, p.x());
    max_x = std::max(max_x, p.x());
    min_y = std::min(min_y, p.y());
    max_y = std::max(max_y, p.y());
  }
  const double pad_x = 0.25 * (max_x - min_x), pad_y = 0.25 * (max_y - min_y);
  FaceRegion r;
  r.x0 = std::clamp(static_cast<int>(std::floor(min_x - pad_x)), 0, image_width);
  r.x1 = std::clamp(static_cast<int>(std::floor(max_x + pad_x)) + 1, 0, image_width);
  r.y0 = std::clamp(static_cast<int>(std::floor(min_y - pad_y)), 0, image_height);
  r.y1 = std::clamp(static_cast<int>(std::floor(max_y + pad_y)) + 1, 0, image_height);
  return r;
}

IlluminationMeasure measure_illumination(const GrayImage& frame, const Landmarks2D& landmarks) {
  const FaceRegion r = face_region(landmarks, frame.width, frame.height);
  IlluminationMeasure m;
  m.mean = region_mean(frame, r.x0, r.x1, r.y0, r.y1).first;
  const int mid = r.x0 + (r.x1 - r.x0) / 2;
  const double left = region_mean(frame, r.x0, mid, r.y0, r.y1).first;
  const double right = region_mean(frame, mid, r.x1, r.y0, r.y1).first;
  m.difference = right - left;
  return m;
}

int intensity_bin(double mean) {
  return std::clamp(static_cast<int>(std::floor(mean / (256.0 / kIntensityBins))), 0, kIntensityBins - 1);
}

int difference_bin(double difference) {
  return std::clamp(static_cast<int>(std::floor((difference + 128.0) / (256.0 / kDifferenceBins))), 0,
                    kDifferenceBins - 1);
}

std::pair<double, double> intensity_bin_range(int bin) {
  const double w = 256.0 / kIntensityBins;
  return {bin * w, (bin + 1) * w};
}

std::pair<double, double> difference_bin_range(int bin) {
  const double w = 256.0 / kDifferenceBins;
  return {-128.0 + bin * w, -128.0 + (bin + 1) * w};
}

void DatasetStats::add(const IlluminationMeasure& m, std::optional<int> h) {
  ++intensity[intensity_bin(m.mean)];
  ++difference[difference_bin(m.difference)];
  if (h && *h >= 0 && *h < kHourBins) ++hour[*h];
  else ++hour_unknown;
  ++records;
}

DatasetStats compute_stats(std::span<const RawRecord> records,
                           const std::function<GrayImage(std::size_t)>& frame_of) {
  DatasetStats stats;
  for (std::size_t i = 0; i < records.size(); ++i) {
    stats.add(measure_illumination(frame_of(i), records[i].landmarks), records[i].hour);
  }
  return stats;
}

DatasetStats compute_stats(std::span<const RawRecord> records) {
  return compute_stats(records, [&](std::size_t i) { return read_pgm(records[i].image); });
}

void write_stats_csv(const std::filesystem::path& dir, const DatasetStats& stats) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) fail(ErrorKind::Io, "cannot create " + dir.string());
  write_histogram(dir / "intensity.csv", stats.intensity, intensity_bin_range);
  write_histogram(dir / "lr_difference.csv", stats.difference, difference_bin_range);
  write_histogram(dir / "hour.csv", stats.hour, [](int b) { return std::pair<double, double>(b, b + 1); });
}

}  // namespace gazekit
