#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "gazekit/geometry.hpp"
#include "gazekit/image.hpp"
#include "gazekit/normalize.hpp"
#include "gazekit/pose.hpp"

namespace gazekit {

// manifest

// One captured frame. JSON-lines field names:
//   person_id    unsigned integer
//   image        PGM path, relative to the manifest's directory
//   landmarks    [[x, y] x 6] pixels, Landmark order
//   intrinsics   {fx, fy, cx, cy, width, height}
//   gaze_target  [x, y, z] mm, camera coordinates
//   hour         optional integer 0-23
struct RawRecord {
  std::uint64_t person_id = 0;
  std::filesystem::path image;  // resolved against the manifest directory on load
  Landmarks2D landmarks{};
  CameraIntrinsics intrinsics;
  Vec3 gaze_target = Vec3::Zero();
  std::optional<int> hour;
};

struct ManifestLoad {
  std::vector<RawRecord> records;
  std::vector<std::size_t> line_numbers;  // 1-based source line of each record
  std::size_t skipped = 0;
  std::vector<std::string> problems;  // "line N: reason"
};

// Blank lines are ignored. Malformed lines are skipped and reported; more
// than 10% malformed raises MalformedRecord.
ManifestLoad load_manifest(const std::filesystem::path& path);

// Parses one manifest line; image paths stay as written.
RawRecord parse_manifest_line(const std::string& line);
std::string format_manifest_line(const RawRecord& record);

void save_manifest(const std::filesystem::path& path, std::span<const RawRecord> records);

// synthetic scenes

struct Range {
  double lo = 0.0;
  double hi = 0.0;
  bool valid() const { return lo <= hi; }
};

struct SynthConfig {
  int persons = 4;
  int records_per_person = 200;
  std::uint64_t first_person_id = 0;

  int image_width = 640;
  int image_height = 480;
  double focal_px = 700.0;

  // Head pose in degrees (yaw, pitch, roll) and position in mm.
  Range head_yaw{-25.0, 25.0};
  Range head_pitch{-15.0, 15.0};
  Range head_roll{-10.0, 10.0};
  Range head_x{-40.0, 40.0};
  Range head_y{-20.0, 30.0};
  Range depth{450.0, 650.0};

  // Screen plane z = 0 below the camera (y down); targets uniform on it.
  Range screen_x{-165.0, 165.0};
  Range screen_y{15.0, 215.0};

  // Per-person appearance, sampled once per person.
  Range iris_intensity{40.0, 90.0};
  Range skin_intensity{150.0, 205.0};
  Range sclera_intensity{205.0, 240.0};
  Range eyelid_aperture{0.85, 1.15};  // scale of the 5 mm half-opening
  Range eyeball_radius{11.5, 12.5};
  double iris_half_angle_deg = 30.0;
  double pupil_half_angle_deg = 12.0;

  // Per-record illumination: multiplicative gain and a left-to-right
  // intensity ramp (gray levels across the face region).
  // Per-person angle (degrees) between the optical axis the iris follows and
  // the labelled visual axis; positive yaw turns toward the nose.
  Range kappa_yaw{0.0, 0.0};
  Range kappa_pitch{0.0, 0.0};
  Range gain{0.75, 1.15};
  Range gradient{-30.0, 30.0};

  double pixel_noise = 0.0;     // Gaussian sigma, gray levels
  double landmark_noise = 0.0;  // Gaussian sigma, pixels
  int eye_supersampling = 3;

  std::uint64_t seed = 1;

  void validate() const;
};

// Ground truth for one rendered record.
struct SynthTruth {
  std::uint64_t person_id = 0;
  Rotation rotation;
  Vec3 translation = Vec3::Zero();
  Vec3 eye_center_left = Vec3::Zero();
  Vec3 eye_center_right = Vec3::Zero();
  Vec3 gaze_left = Vec3::Zero();   // unit, eye centre -> target, camera coords
  Vec3 gaze_right = Vec3::Zero();
  double gain = 1.0;
  double gradient = 0.0;
};

struct SynthRecord {
  RawRecord record;  // image path left empty by synth_record
  GrayImage frame;
  SynthTruth truth;
};

// Renders record `index` of person `person` (0-based). Depends only on the
// config and the two indices.
SynthRecord synth_record(const SynthConfig& cfg, int person, int index);

struct SynthOutput {
  std::filesystem::path manifest;
  std::filesystem::path truth;
  std::size_t records = 0;
};

// Writes frames/<person>_<index>.pgm, manifest.jsonl and truth.jsonl.
SynthOutput synth_generate(const SynthConfig& cfg, const std::filesystem::path& out_dir);

std::string format_truth_line(const SynthTruth& truth);
SynthTruth parse_truth_line(const std::string& line);
std::vector<SynthTruth> load_truth(const std::filesystem::path& path);

// normalisation of a record set

struct StoreIndexEntry {
  std::size_t record = 0;  // position in the record sequence
  std::uint64_t person_id = 0;
  EyeSide eye_side = EyeSide::Left;
};

struct NormalizedSet {
  std::vector<NormalizedSample> samples;
  std::vector<StoreIndexEntry> index;  // parallel to samples
  std::vector<std::string> drops;      // "record N: reason"
};

// Runs normalize_record on every record. Records whose pose or crop fails
// are dropped and reported, never fatal.
NormalizedSet normalize_records(std::span<const RawRecord> records,
                                const std::function<GrayImage(std::size_t)>& frame_of, const FaceModel& model,
                                const NormalizationParams& params);

// sample sets

// Per person: n_left samples with eye_side Left and n_right with eye_side
// Right, without replacement when the supply suffices and with replacement
// otherwise. Output is grouped by ascending person id, left before right,
// and does not depend on the input order.
std::vector<NormalizedSample> subsample_per_person(std::span<const NormalizedSample> samples, int n_left,
                                                   int n_right, std::uint64_t seed);

// Appends the mirror_sample() twin of every sample.
std::vector<NormalizedSample> with_mirrored_twins(std::span<const NormalizedSample> samples);

std::vector<std::uint64_t> person_ids(std::span<const NormalizedSample> samples);

// intensity statistics

struct FaceRegion {
  int x0 = 0, y0 = 0, x1 = 0, y1 = 0;  // half-open pixel box
};

// Landmark bounding box padded by 25% of its size on every side, clipped.
FaceRegion face_region(const Landmarks2D& landmarks, int image_width, int image_height);

struct IlluminationMeasure {
  double mean = 0.0;        // mean intensity in the face region
  double difference = 0.0;  // right-half mean minus left-half mean
};

IlluminationMeasure measure_illumination(const GrayImage& frame, const Landmarks2D& landmarks);

inline constexpr int kIntensityBins = 8;   // over [0, 256)
inline constexpr int kDifferenceBins = 8;  // over [-128, 128], clamped
inline constexpr int kHourBins = 24;

int intensity_bin(double mean);
int difference_bin(double difference);
std::pair<double, double> intensity_bin_range(int bin);
std::pair<double, double> difference_bin_range(int bin);

struct DatasetStats {
  std::array<std::size_t, kIntensityBins> intensity{};
  std::array<std::size_t, kDifferenceBins> difference{};
  std::array<std::size_t, kHourBins> hour{};
  std::size_t hour_unknown = 0;
  std::size_t records = 0;

  void add(const IlluminationMeasure& m, std::optional<int> hour);
};

DatasetStats compute_stats(std::span<const RawRecord> records,
                           const std::function<GrayImage(std::size_t)>& frame_of);
DatasetStats compute_stats(std::span<const RawRecord> records);

// intensity.csv, lr_difference.csv, hour.csv with bin_start,bin_end,count.
void write_stats_csv(const std::filesystem::path& dir, const DatasetStats& stats);

// normalised sample store

// Layout: magic "GZNRM1\0\0", u32 width, u32 height, u64 count, then per
// record u64 person_id, u8 eye_side, width*height pixel bytes, f64 head yaw,
// head pitch, gaze yaw, gaze pitch. Little-endian.
void write_store(const std::filesystem::path& path, std::span<const NormalizedSample> samples);
std::vector<NormalizedSample> read_store(const std::filesystem::path& path);
void write_store(std::ostream& out, std::span<const NormalizedSample> samples);
std::vector<NormalizedSample> read_store(std::istream& in);

// CSV sidecar "sample,record,person_id,eye_side" linking store samples back
// to manifest records.
void write_store_index(const std::filesystem::path& path, std::span<const StoreIndexEntry> index);
std::vector<StoreIndexEntry> read_store_index(const std::filesystem::path& path);

}  // namespace gazekit
