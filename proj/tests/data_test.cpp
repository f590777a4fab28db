#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "gazekit/data.hpp"
#include "gazekit/error.hpp"
#include "gazekit/random.hpp"

using namespace gazekit;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("gazekit_data_test_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

RawRecord sample_record() {
  RawRecord r;
  r.person_id = 7;
  r.image = "frames/a.pgm";
  r.intrinsics = {700.0, 710.0, 320.0, 240.0, 640, 480};
  for (int i = 0; i < kNumLandmarks; ++i) r.landmarks[i] = {100.0 + 10.3 * i, 200.0 - 3.7 * i};
  r.gaze_target = {12.5, 100.25, -0.125};
  r.hour = 14;
  return r;
}

SynthConfig quiet_config() {
  SynthConfig c;
  c.persons = 2;
  c.records_per_person = 10;
  c.seed = 21;
  return c;
}

NormalizedSample random_sample(Rng& rng, std::uint64_t person, EyeSide side) {
  NormalizedSample s;
  s.eye = GrayImage(60, 36);
  for (auto& p : s.eye.pixels) p = static_cast<std::uint8_t>(rng.index(256));
  s.head = {rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5)};
  s.gaze = {rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5)};
  s.person_id = person;
  s.eye_side = side;
  return s;
}

}  // namespace

TEST(Manifest, EmptyFile) {
  const fs::path dir = scratch_dir("empty");
  std::ofstream(dir / "m.jsonl").close();
  const auto m = load_manifest(dir / "m.jsonl");
  EXPECT_TRUE(m.records.empty());
  EXPECT_EQ(m.skipped, 0u);
}

TEST(Manifest, LineRoundTrip) {
  const RawRecord r = sample_record();
  const RawRecord back = parse_manifest_line(format_manifest_line(r));
  EXPECT_EQ(back.person_id, r.person_id);
  EXPECT_EQ(back.image, r.image);
  for (int i = 0; i < kNumLandmarks; ++i) EXPECT_EQ(back.landmarks[i], r.landmarks[i]);
  EXPECT_EQ(back.intrinsics.fx, r.intrinsics.fx);
  EXPECT_EQ(back.intrinsics.fy, r.intrinsics.fy);
  EXPECT_EQ(back.intrinsics.cx, r.intrinsics.cx);
  EXPECT_EQ(back.intrinsics.cy, r.intrinsics.cy);
  EXPECT_EQ(back.intrinsics.image_width, 640);
  EXPECT_EQ(back.intrinsics.image_height, 480);
  EXPECT_EQ(back.gaze_target, r.gaze_target);
  EXPECT_EQ(back.hour, r.hour);

  RawRecord no_hour = r;
  no_hour.hour.reset();
  EXPECT_FALSE(parse_manifest_line(format_manifest_line(no_hour)).hour.has_value());
}

TEST(Manifest, ResolvesImagesAgainstManifestDirectory) {
  const fs::path dir = scratch_dir("resolve");
  save_manifest(dir / "m.jsonl", std::vector<RawRecord>{sample_record()});
  const auto m = load_manifest(dir / "m.jsonl");
  ASSERT_EQ(m.records.size(), 1u);
  EXPECT_EQ(m.records[0].image, dir / "frames/a.pgm");
}

TEST(Manifest, SkipsOneBadLineInHundred) {
  const fs::path dir = scratch_dir("bad1");
  std::ofstream out(dir / "m.jsonl");
  for (int i = 0; i < 100; ++i) out << (i == 41 ? std::string("{\"person_id\": 1, \"image\": ") : format_manifest_line(sample_record())) << "\n";
  out.close();
  const auto m = load_manifest(dir / "m.jsonl");
  EXPECT_EQ(m.records.size(), 99u);
  EXPECT_EQ(m.skipped, 1u);
  ASSERT_EQ(m.problems.size(), 1u);
  EXPECT_EQ(m.problems[0].rfind("line 42:", 0), 0u) << m.problems[0];
  EXPECT_EQ(m.line_numbers[41], 43u);
}

TEST(Manifest, RejectsInvalidFields) {
  auto bad = [](const std::function<void(RawRecord&)>& edit) {
    RawRecord r = sample_record();
    edit(r);
    EXPECT_THROW(parse_manifest_line(format_manifest_line(r)), Error);
  };
  bad([](RawRecord& r) { r.landmarks[2] = {700.0, 10.0}; });
  bad([](RawRecord& r) { r.intrinsics.fx = -1.0; });
  bad([](RawRecord& r) { r.hour = 24; });
  bad([](RawRecord& r) { r.image.clear(); });
  EXPECT_THROW(parse_manifest_line("[1, 2]"), Error);
  EXPECT_THROW(parse_manifest_line(R"({"person_id": -3})"), Error);
}

TEST(Manifest, TooManyBadLinesIsFatal) {
  const fs::path dir = scratch_dir("bad20");
  std::ofstream out(dir / "m.jsonl");
  for (int i = 0; i < 10; ++i) out << (i < 2 ? std::string("nonsense") : format_manifest_line(sample_record())) << "\n";
  out.close();
  try {
    load_manifest(dir / "m.jsonl");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::MalformedRecord);
  }
  EXPECT_THROW(load_manifest(dir / "missing.jsonl"), Error);
}

TEST(Synth, SameSeedGivesIdenticalFiles) {
  SynthConfig c = quiet_config();
  c.pixel_noise = 3.0;
  c.landmark_noise = 0.5;
  const fs::path a = scratch_dir("synth_a"), b = scratch_dir("synth_b");
  const auto ra = synth_generate(c, a);
  synth_generate(c, b);
  EXPECT_EQ(ra.records, 20u);
  EXPECT_EQ(slurp(a / "manifest.jsonl"), slurp(b / "manifest.jsonl"));
  EXPECT_EQ(slurp(a / "truth.jsonl"), slurp(b / "truth.jsonl"));
  for (const auto& entry : fs::directory_iterator(a / "frames")) {
    EXPECT_EQ(slurp(entry.path()), slurp(b / "frames" / entry.path().filename()));
  }
  const auto m = load_manifest(ra.manifest);
  EXPECT_EQ(m.records.size(), 20u);
  EXPECT_EQ(m.skipped, 0u);
  const auto truth = load_truth(ra.truth);
  ASSERT_EQ(truth.size(), 20u);
  EXPECT_EQ(read_pgm(m.records[3].image), synth_record(c, 0, 3).frame);

  SynthConfig other = c;
  other.seed = 22;
  EXPECT_FALSE(synth_record(other, 0, 0).frame == synth_record(c, 0, 0).frame);
}

TEST(Synth, TruthLineRoundTrip) {
  const SynthTruth t = synth_record(quiet_config(), 1, 4).truth;
  const SynthTruth back = parse_truth_line(format_truth_line(t));
  EXPECT_EQ(back.person_id, t.person_id);
  EXPECT_LT(back.rotation.geodesic_distance(t.rotation), 1e-12);
  EXPECT_EQ(back.translation, t.translation);
  EXPECT_EQ(back.gaze_left, t.gaze_left);
  EXPECT_EQ(back.gaze_right, t.gaze_right);
  EXPECT_EQ(back.gain, t.gain);
  EXPECT_EQ(back.gradient, t.gradient);
}

TEST(Synth, InvalidConfigRejected) {
  SynthConfig c;
  c.persons = 0;
  EXPECT_THROW(c.validate(), Error);
  c = SynthConfig{};
  c.depth = {600, 500};
  EXPECT_THROW(c.validate(), Error);
  c = SynthConfig{};
  c.iris_half_angle_deg = 5.0;
  try {
    c.validate();
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::ConfigOutOfRange);
  }
}

TEST(Synth, FrontalTargetAtCameraGivesZeroGaze) {
  SynthConfig c = quiet_config();
  c.head_yaw = c.head_pitch = c.head_roll = {0.0, 0.0};
  c.head_x = c.head_y = {0.0, 0.0};
  c.screen_x = c.screen_y = {0.0, 0.0};
  const SynthRecord r = synth_record(c, 0, 0);
  const auto n = normalize_record(r.frame, r.record.landmarks, r.record.gaze_target, r.record.intrinsics,
                                  FaceModel::generic(), NormalizationParams{});
  for (const auto& s : {n.left, n.right}) {
    EXPECT_LT(angular_error_deg(s.gaze, GazeAngles{0.0, 0.0}), 0.2);
  }
}

TEST(Synth, PipelineReproducesTruthOnNoiseFreeRecords) {
  const SynthConfig c = quiet_config();
  const NormalizationParams p;
  for (int person = 0; person < c.persons; ++person) {
    for (int i = 0; i < c.records_per_person; ++i) {
      const SynthRecord r = synth_record(c, person, i);
      const auto n = normalize_record(r.frame, r.record.landmarks, r.record.gaze_target, r.record.intrinsics,
                                      FaceModel::generic(), p, r.record.person_id);
      EXPECT_LT(n.pose.rotation.geodesic_distance(r.truth.rotation), deg2rad(0.5));
      const auto tl = compute_normalization(r.truth.eye_center_left, r.truth.rotation, r.record.intrinsics, p);
      const auto tr = compute_normalization(r.truth.eye_center_right, r.truth.rotation, r.record.intrinsics, p);
      EXPECT_LT(angular_error_deg(n.left.gaze, normalize_gaze(r.truth.gaze_left, tl)), 0.2);
      GazeAngles right = normalize_gaze(r.truth.gaze_right, tr);
      right.yaw = -right.yaw;  // stored mirrored
      EXPECT_LT(angular_error_deg(n.right.gaze, right), 0.2);
    }
  }
}

// Mean column of the darkest pixels of an equalized crop: the iris and pupil.
double dark_centroid_u(const GrayImage& img) {
  double su = 0.0, n = 0.0;
  for (int v = 0; v < img.height; ++v)
    for (int u = 0; u < img.width; ++u)
      if (img.at(u, v) < 26) {
        su += u;
        n += 1.0;
      }
  return su / n;
}

TEST(Synth, KappaTurnsBothIrisesNasallyWithoutChangingLabels) {
  SynthConfig c = quiet_config();
  c.head_yaw = c.head_pitch = c.head_roll = {0.0, 0.0};
  c.head_x = c.head_y = {0.0, 0.0};
  c.screen_x = c.screen_y = {0.0, 0.0};
  SynthConfig turned = c;
  turned.kappa_yaw = {12.0, 12.0};
  const SynthRecord a = synth_record(c, 0, 0), b = synth_record(turned, 0, 0);
  EXPECT_EQ(a.record.landmarks, b.record.landmarks);
  EXPECT_EQ(a.truth.gaze_left, b.truth.gaze_left);
  EXPECT_NE(a.frame, b.frame);
  const NormalizationParams p;
  const auto na = normalize_record(a.frame, a.record.landmarks, a.record.gaze_target, a.record.intrinsics,
                                   FaceModel::generic(), p);
  const auto nb = normalize_record(b.frame, b.record.landmarks, b.record.gaze_target, b.record.intrinsics,
                                   FaceModel::generic(), p);
  EXPECT_EQ(na.left.gaze, nb.left.gaze);
  // In the left-eye frame the nose is toward smaller u; the right crop is
  // stored mirrored into that frame.
  EXPECT_LT(dark_centroid_u(nb.left.eye), dark_centroid_u(na.left.eye) - 1.0);
  EXPECT_LT(dark_centroid_u(nb.right.eye), dark_centroid_u(na.right.eye) - 1.0);
}

TEST(Synth, GradientSignShowsInDifferenceStatistic) {
  SynthConfig c = quiet_config();
  c.head_yaw = c.head_roll = {0.0, 0.0};
  for (double g : {40.0, -40.0}) {
    c.gradient = {g, g};
    DatasetStats stats;
    for (int i = 0; i < 5; ++i) {
      const SynthRecord r = synth_record(c, 0, i);
      const auto m = measure_illumination(r.frame, r.record.landmarks);
      EXPECT_GT(m.difference * g, 0.0) << "gradient " << g << " diff " << m.difference;
      stats.add(m, r.record.hour);
    }
    std::size_t positive = 0, negative = 0;
    for (int b = 0; b < kDifferenceBins; ++b) (difference_bin_range(b).first >= 0 ? positive : negative) += stats.difference[b];
    EXPECT_EQ(g > 0 ? positive : negative, 5u);
  }
}

TEST(Synth, IntensityHistogramFollowsSampledGains) {
  // Only the gain varies, so the face-region mean scales with it exactly
  // (up to byte rounding) and the histogram can be predicted from the
  // sidecar gains and one reference frame.
  SynthConfig c = quiet_config();
  c.records_per_person = 40;
  c.head_yaw = c.head_pitch = c.head_roll = {0.0, 0.0};
  c.head_x = c.head_y = {0.0, 0.0};
  c.depth = {550.0, 550.0};
  c.screen_x = c.screen_y = {0.0, 0.0};
  c.gradient = {0.0, 0.0};
  c.gain = {0.3, 1.2};
  SynthConfig unit = c;
  unit.gain = {1.0, 1.0};
  const SynthRecord ref = synth_record(unit, 0, 0);
  const double base = measure_illumination(ref.frame, ref.record.landmarks).mean;

  std::vector<RawRecord> records;
  std::vector<GrayImage> frames;
  std::array<std::size_t, kIntensityBins> predicted{};
  for (int i = 0; i < c.records_per_person; ++i) {
    SynthRecord r = synth_record(c, 0, i);
    const double expected = base * r.truth.gain;
    EXPECT_NEAR(measure_illumination(r.frame, r.record.landmarks).mean, expected, 0.5);
    ++predicted[intensity_bin(expected)];
    records.push_back(r.record);
    frames.push_back(std::move(r.frame));
  }
  const DatasetStats stats = compute_stats(records, [&](std::size_t i) { return frames[i]; });
  EXPECT_EQ(stats.intensity, predicted);
}

TEST(Stats, UniformAndSplitFrames) {
  RawRecord r = sample_record();
  r.intrinsics.image_width = 200;
  r.intrinsics.image_height = 100;
  r.landmarks = {Vec2{60, 40}, Vec2{80, 40}, Vec2{120, 40}, Vec2{140, 40}, Vec2{80, 70}, Vec2{120, 70}};
  const GrayImage gray(200, 100, 128);
  GrayImage split(200, 100, 0);
  for (int y = 0; y < 100; ++y)
    for (int x = 100; x < 200; ++x) split.at(x, y) = 255;

  const FaceRegion region = face_region(r.landmarks, 200, 100);
  EXPECT_EQ(region.x0, 40);
  EXPECT_EQ(region.x1, 161);
  EXPECT_EQ(region.y0, 32);
  EXPECT_EQ(region.y1, 78);

  std::vector<RawRecord> records{r, r, r};
  records[2].hour.reset();
  const std::vector<GrayImage> frames{gray, split, split};
  const DatasetStats s = compute_stats(records, [&](std::size_t i) { return frames[i]; });
  EXPECT_EQ(s.records, 3u);
  EXPECT_EQ(s.intensity[4], 3u);  // 128 and ~127.5 both land in [96,128) or [128,160)
  EXPECT_EQ(s.difference[kDifferenceBins - 1], 2u);
  EXPECT_EQ(s.difference[difference_bin(0.0)], 1u);
  EXPECT_EQ(s.hour[14], 2u);
  EXPECT_EQ(s.hour_unknown, 1u);
  std::size_t total = 0;
  for (auto v : s.intensity) total += v;
  EXPECT_EQ(total, 3u);
  total = 0;
  for (auto v : s.difference) total += v;
  EXPECT_EQ(total, 3u);

  const fs::path dir = scratch_dir("stats");
  write_stats_csv(dir, s);
  std::ifstream in(dir / "lr_difference.csv");
  std::string header, first;
  std::getline(in, header);
  std::getline(in, first);
  EXPECT_EQ(header, "bin_start,bin_end,count");
  EXPECT_EQ(first, "-128,-96,0");
  EXPECT_TRUE(fs::exists(dir / "intensity.csv"));
  EXPECT_TRUE(fs::exists(dir / "hour.csv"));
}

TEST(Stats, BinEdges) {
  EXPECT_EQ(intensity_bin(0.0), 0);
  EXPECT_EQ(intensity_bin(31.99), 0);
  EXPECT_EQ(intensity_bin(32.0), 1);
  EXPECT_EQ(intensity_bin(255.0), 7);
  EXPECT_EQ(difference_bin(-255.0), 0);
  EXPECT_EQ(difference_bin(-128.0), 0);
  EXPECT_EQ(difference_bin(-0.01), 3);
  EXPECT_EQ(difference_bin(0.0), 4);
  EXPECT_EQ(difference_bin(128.0), 7);
  EXPECT_EQ(difference_bin(255.0), 7);
}

TEST(Subsample, ExactSupplyReturnsEverySampleOnce) {
  Rng rng(1);
  std::vector<NormalizedSample> v;
  for (int i = 0; i < 5; ++i) v.push_back(random_sample(rng, 3, EyeSide::Left));
  for (int i = 0; i < 4; ++i) v.push_back(random_sample(rng, 3, EyeSide::Right));
  const auto out = subsample_per_person(v, 5, 4, 9);
  ASSERT_EQ(out.size(), 9u);
  for (const auto& s : v) EXPECT_EQ(std::count(out.begin(), out.end(), s), 1);
}

TEST(Subsample, ShortSupplyIsOversampled) {
  Rng rng(2);
  std::vector<NormalizedSample> v;
  for (int i = 0; i < 3; ++i) v.push_back(random_sample(rng, 1, EyeSide::Left));
  for (int i = 0; i < 3; ++i) v.push_back(random_sample(rng, 1, EyeSide::Right));
  const auto out = subsample_per_person(v, 10, 2, 4);
  ASSERT_EQ(out.size(), 12u);
  EXPECT_EQ(std::count_if(out.begin(), out.end(), [](const auto& s) { return s.eye_side == EyeSide::Left; }), 10);
  for (const auto& s : out) EXPECT_NE(std::find(v.begin(), v.end(), s), v.end());
}

TEST(Subsample, SeededAndOrderInvariant) {
  Rng rng(3);
  std::vector<NormalizedSample> v;
  for (std::uint64_t p : {5u, 2u, 9u})
    for (int i = 0; i < 30; ++i) v.push_back(random_sample(rng, p, i % 2 ? EyeSide::Right : EyeSide::Left));
  const auto a = subsample_per_person(v, 6, 7, 11);
  EXPECT_EQ(a, subsample_per_person(v, 6, 7, 11));
  EXPECT_NE(a, subsample_per_person(v, 6, 7, 12));
  ASSERT_EQ(a.size(), 3u * 13u);
  EXPECT_EQ(a.front().person_id, 2u);
  EXPECT_EQ(a.back().person_id, 9u);

  std::vector<NormalizedSample> shuffled = v;
  Rng shuffle(77);
  for (std::size_t i = shuffled.size(); i > 1; --i) std::swap(shuffled[i - 1], shuffled[shuffle.index(i)]);
  EXPECT_EQ(subsample_per_person(shuffled, 6, 7, 11), a);
  EXPECT_THROW(subsample_per_person(v, 0, 1, 1), Error);
}

TEST(Subsample, MirroredTwinsPresentForEverySample) {
  Rng rng(4);
  std::vector<NormalizedSample> v;
  for (int i = 0; i < 20; ++i) v.push_back(random_sample(rng, 1, i % 2 ? EyeSide::Right : EyeSide::Left));
  const auto aug = with_mirrored_twins(v);
  ASSERT_EQ(aug.size(), 40u);
  for (const auto& s : v) {
    const auto twin = std::find_if(aug.begin(), aug.end(), [&](const NormalizedSample& t) {
      return t.gaze.yaw == -s.gaze.yaw && t.gaze.pitch == s.gaze.pitch && t.head.yaw == -s.head.yaw &&
             t.eye_side != s.eye_side;
    });
    EXPECT_NE(twin, aug.end());
  }
}

TEST(Store, RoundTripThousandSamples) {
  Rng rng(5);
  std::vector<NormalizedSample> v;
  for (int i = 0; i < 1000; ++i) v.push_back(random_sample(rng, rng.index(50), i % 3 ? EyeSide::Left : EyeSide::Right));
  const fs::path dir = scratch_dir("store");
  write_store(dir / "s.gznrm", v);
  EXPECT_EQ(read_store(dir / "s.gznrm"), v);
  EXPECT_EQ(fs::file_size(dir / "s.gznrm"), 8u + 4 + 4 + 8 + 1000u * (8 + 1 + 2160 + 32));
}

TEST(Store, TruncatedAndBadMagic) {
  Rng rng(6);
  std::vector<NormalizedSample> v;
  for (int i = 0; i < 4; ++i) v.push_back(random_sample(rng, 1, EyeSide::Left));
  std::stringstream ss;
  write_store(ss, v);
  const std::string bytes = ss.str();
  std::stringstream cut(bytes.substr(0, bytes.size() - 10));
  try {
    read_store(cut);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::TruncatedRecord);
    EXPECT_NE(std::string(e.what()).find("record 3"), std::string::npos) << e.what();
  }
  std::string wrong = bytes;
  wrong[2] = 'X';
  std::stringstream bad(wrong);
  try {
    read_store(bad);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::BadMagic);
  }
  std::stringstream empty_out;
  write_store(empty_out, std::vector<NormalizedSample>{});
  EXPECT_TRUE(read_store(empty_out).empty());
}

TEST(Store, IndexRoundTrip) {
  const fs::path dir = scratch_dir("index");
  const std::vector<StoreIndexEntry> idx{{0, 4, EyeSide::Left}, {0, 4, EyeSide::Right}, {7, 9, EyeSide::Left}};
  write_store_index(dir / "i.csv", idx);
  const auto back = read_store_index(dir / "i.csv");
  ASSERT_EQ(back.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(back[i].record, idx[i].record);
    EXPECT_EQ(back[i].person_id, idx[i].person_id);
    EXPECT_EQ(back[i].eye_side, idx[i].eye_side);
  }
}

TEST(NormalizeRecords, DegenerateRecordIsDropped) {
  const SynthConfig c = quiet_config();
  std::vector<RawRecord> records;
  std::vector<GrayImage> frames;
  for (int i = 0; i < 3; ++i) {
    SynthRecord r = synth_record(c, 0, i);
    records.push_back(r.record);
    frames.push_back(std::move(r.frame));
  }
  for (int i = 0; i < kNumLandmarks; ++i) records[1].landmarks[i] = {100.0 + 20.0 * i, 200.0};
  const auto set =
      normalize_records(records, [&](std::size_t i) { return frames[i]; }, FaceModel::generic(), NormalizationParams{});
  EXPECT_EQ(set.samples.size(), 4u);
  ASSERT_EQ(set.drops.size(), 1u);
  EXPECT_EQ(set.drops[0].rfind("record 1:", 0), 0u) << set.drops[0];
  EXPECT_EQ(set.index[2].record, 2u);
  EXPECT_EQ(set.index[3].eye_side, EyeSide::Right);
  EXPECT_EQ(set.samples[0].person_id, records[0].person_id);
}
