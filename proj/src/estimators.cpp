#include "gazekit/estimators.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <numeric>

#include "gazekit/binio.hpp"
#include "gazekit/error.hpp"
#include "gazekit/random.hpp"

namespace gazekit {

namespace {

constexpr std::string_view kKnnMagic = "GZKNN1";
constexpr std::string_view kMeanMagic = "GZMEAN1";
constexpr std::string_view kCnnMagic = "GZCNN1";
constexpr int kPredictChunk = 64;

void check_sample(const NormalizedSample& s, std::size_t index) {
  if (!std::isfinite(s.head.yaw) || !std::isfinite(s.head.pitch) || !std::isfinite(s.gaze.yaw) ||
      !std::isfinite(s.gaze.pitch)) {
    fail(ErrorKind::NonFiniteSample, "training sample " + std::to_string(index) + " has non-finite angles");
  }
}

double sq_dist(const std::array<double, 2>& a, const std::array<double, 2>& b) {
  const double dx = a[0] - b[0], dy = a[1] - b[1];
  return dx * dx + dy * dy;
}

int nearest_center(const std::vector<std::array<double, 2>>& centers, const std::array<double, 2>& p,
                   const std::vector<bool>* usable = nullptr) {
  int best = -1;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t c = 0; c < centers.size(); ++c) {
    if (usable && !(*usable)[c]) continue;
    const double d = sq_dist(centers[c], p);
    if (d < best_d) {
      best_d = d;
      best = static_cast<int>(c);
    }
  }
  return best;
}

void image_to_unit(const GrayImage& eye, double* out) {
  for (std::size_t i = 0; i < eye.pixels.size(); ++i) out[i] = eye.pixels[i] / 255.0;
}

void check_eye(const GrayImage& eye, int width, int height) {
  if (eye.width != width || eye.height != height) {
    fail(ErrorKind::ShapeMismatch, "eye image is " + std::to_string(eye.width) + "x" + std::to_string(eye.height) +
                                       ", model expects " + std::to_string(width) + "x" + std::to_string(height));
  }
}

int parse_int(const std::string& key, const std::string& value) {
  try {
    std::size_t used = 0;
    const int v = std::stoi(value, &used);
    if (used == value.size()) return v;
  } catch (const std::exception&) {
  }
  fail(ErrorKind::InvalidArgument, "parameter " + key + " expects an integer, got '" + value + "'");
}

double parse_double(const std::string& key, const std::string& value) {
  try {
    std::size_t used = 0;
    const double v = std::stod(value, &used);
    if (used == value.size()) return v;
  } catch (const std::exception&) {
  }
  fail(ErrorKind::InvalidArgument, "parameter " + key + " expects a number, got '" + value + "'");
}

}  // namespace

std::string to_string(EstimatorKind kind) {
  switch (kind) {
    case EstimatorKind::Cnn: return "cnn";
    case EstimatorKind::Knn: return "knn";
    case EstimatorKind::Mean: return "mean";
  }
  return "unknown";
}

EstimatorKind parse_estimator_kind(const std::string& name) {
  if (name == "cnn") return EstimatorKind::Cnn;
  if (name == "knn") return EstimatorKind::Knn;
  if (name == "mean") return EstimatorKind::Mean;
  fail(ErrorKind::InvalidArgument, "unknown estimator '" + name + "' (expected cnn, knn or mean)");
}

void EstimatorSpec::validate() const {
  if (knn.k < 1 || knn.clusters < 1 || knn.max_iterations < 1 || knn.feature_width < 1 || knn.feature_height < 1) {
    fail(ErrorKind::ConfigOutOfRange, "kNN needs k, clusters, iterations and feature size >= 1");
  }
  if (!(train.learning_rate > 0.0) || train.momentum < 0.0 || train.momentum >= 1.0 || train.batch_size < 1 ||
      train.epochs < 0 || train.chunk_size < 1 || train.threads < 1) {
    fail(ErrorKind::ConfigOutOfRange, "CNN training parameters out of range");
  }
  net.validate();
}

EstimatorSpec EstimatorSpec::from_params(EstimatorKind kind, const std::map<std::string, std::string>& params,
                                         std::uint64_t seed) {
  EstimatorSpec spec;
  spec.kind = kind;
  spec.seed = seed;
  for (const auto& [key, value] : params) {
    if (key == "lr") spec.train.learning_rate = parse_double(key, value);
    else if (key == "momentum") spec.train.momentum = parse_double(key, value);
    else if (key == "batch") spec.train.batch_size = parse_int(key, value);
    else if (key == "epochs") spec.train.epochs = parse_int(key, value);
    else if (key == "lr_step") spec.train.lr_step_epoch = parse_int(key, value);
    else if (key == "lr_gamma") spec.train.lr_gamma = parse_double(key, value);
    else if (key == "chunk") spec.train.chunk_size = parse_int(key, value);
    else if (key == "threads") spec.train.threads = parse_int(key, value);
    else if (key == "conv_relu") spec.net.conv_relu = parse_int(key, value) != 0;
    else if (key == "k") spec.knn.k = parse_int(key, value);
    else if (key == "clusters") spec.knn.clusters = parse_int(key, value);
    else if (key == "iterations") spec.knn.max_iterations = parse_int(key, value);
    else if (key == "feature_width") spec.knn.feature_width = parse_int(key, value);
    else if (key == "feature_height") spec.knn.feature_height = parse_int(key, value);
    else fail(ErrorKind::InvalidArgument, "unknown parameter '" + key + "'");
  }
  spec.validate();
  return spec;
}

KMeansResult kmeans(std::span<const std::array<double, 2>> points, int clusters, int max_iterations,
                    std::uint64_t seed) {
  if (points.empty()) fail(ErrorKind::EmptyTrainingSet, "k-means on an empty set");
  if (clusters < 1) fail(ErrorKind::ConfigOutOfRange, "k-means needs at least one cluster");
  Rng rng(seed);
  KMeansResult r;
  const std::size_t n = points.size();
  r.centers.push_back(points[rng.index(n)]);
  std::vector<double> d2(n);
  while (static_cast<int>(r.centers.size()) < clusters) {
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      d2[i] = sq_dist(points[i], r.centers[nearest_center(r.centers, points[i])]);
      total += d2[i];
    }
    std::size_t pick = 0;
    if (total > 0.0) {
      const double target = rng.uniform() * total;
      double running = 0.0;
      pick = n - 1;
      for (std::size_t i = 0; i < n; ++i) {
        running += d2[i];
        if (running > target && d2[i] > 0.0) {
          pick = i;
          break;
        }
      }
    } else {
      pick = rng.index(n);
    }
    r.centers.push_back(points[pick]);
  }

  r.assignment.assign(n, 0);
  for (int it = 0; it < max_iterations; ++it) {
    bool changed = it == 0;
    for (std::size_t i = 0; i < n; ++i) {
      const int c = nearest_center(r.centers, points[i]);
      if (c != r.assignment[i]) changed = true;
      r.assignment[i] = c;
    }
    std::vector<std::array<double, 2>> sum(r.centers.size(), {0.0, 0.0});
    std::vector<std::size_t> count(r.centers.size(), 0);
    for (std::size_t i = 0; i < n; ++i) {
      sum[r.assignment[i]][0] += points[i][0];
      sum[r.assignment[i]][1] += points[i][1];
      ++count[r.assignment[i]];
    }
    for (std::size_t c = 0; c < r.centers.size(); ++c) {
      if (count[c] > 0) r.centers[c] = {sum[c][0] / count[c], sum[c][1] / count[c]};
    }
    if (!changed) break;
  }
  // Final assignment against the final centers.
  for (std::size_t i = 0; i < n; ++i) r.assignment[i] = nearest_center(r.centers, points[i]);
  return r;
}

std::vector<double> knn_features(const GrayImage& eye, const KnnOptions& options) {
  return resize_area(eye, options.feature_width, options.feature_height);
}

TrainedModel train(const EstimatorSpec& spec, std::span<const NormalizedSample> data) {
  spec.validate();
  if (data.empty()) fail(ErrorKind::EmptyTrainingSet, "no training samples");
  for (std::size_t i = 0; i < data.size(); ++i) check_sample(data[i], i);

  TrainedModel model;
  model.kind = spec.kind;
  switch (spec.kind) {
    case EstimatorKind::Mean: {
      double yaw = 0.0, pitch = 0.0;
      for (const auto& s : data) {
        yaw += s.gaze.yaw;
        pitch += s.gaze.pitch;
      }
      model.mean = {yaw / data.size(), pitch / data.size()};
      break;
    }
    case EstimatorKind::Knn: {
      std::vector<std::array<double, 2>> heads;
      heads.reserve(data.size());
      for (const auto& s : data) heads.push_back({s.head.yaw, s.head.pitch});
      const KMeansResult km = kmeans(heads, spec.knn.clusters, spec.knn.max_iterations, spec.seed);
      KnnModel knn;
      knn.options = spec.knn;
      knn.centers = km.centers;
      knn.members.resize(km.centers.size());
      for (std::size_t i = 0; i < data.size(); ++i) {
        knn.members[km.assignment[i]].push_back({knn_features(data[i].eye, spec.knn), data[i].gaze});
      }
      model.knn = std::move(knn);
      break;
    }
    case EstimatorKind::Cnn: {
      const NetConfig& net = spec.net;
      for (const auto& s : data) check_eye(s.eye, net.input_width, net.input_height);
      CnnParams params = init_params(derive_seed(spec.seed, 0), net);
      TrainConfig tc = spec.train;
      tc.seed = derive_seed(spec.seed, 1);
      TrainingView view;
      view.count = data.size();
      view.fetch = [&](std::size_t i, double* image, double* aux, double* target) {
        image_to_unit(data[i].eye, image);
        aux[0] = data[i].head.yaw;
        aux[1] = data[i].head.pitch;
        target[0] = data[i].gaze.yaw;
        target[1] = data[i].gaze.pitch;
      };
      train_network(params, view, tc);
      model.cnn = std::move(params);
      break;
    }
  }
  return model;
}

namespace {

GazeAngles predict_knn(const KnnModel& knn, const GrayImage& eye, const GazeAngles& head) {
  std::vector<bool> usable(knn.centers.size());
  for (std::size_t c = 0; c < usable.size(); ++c) usable[c] = !knn.members[c].empty();
  const int cluster = nearest_center(knn.centers, {head.yaw, head.pitch}, &usable);
  if (cluster < 0) fail(ErrorKind::EmptyTrainingSet, "kNN model has no members");
  const auto& members = knn.members[cluster];
  const std::vector<double> f = knn_features(eye, knn.options);
  if (f.size() != members.front().features.size()) fail(ErrorKind::ShapeMismatch, "kNN feature size mismatch");

  std::vector<std::pair<double, std::size_t>> dist(members.size());
  for (std::size_t m = 0; m < members.size(); ++m) {
    double d = 0.0;
    for (std::size_t j = 0; j < f.size(); ++j) {
      const double diff = f[j] - members[m].features[j];
      d += diff * diff;
    }
    dist[m] = {d, m};
  }
  const std::size_t k = std::min<std::size_t>(knn.options.k, members.size());
  std::partial_sort(dist.begin(), dist.begin() + k, dist.end());
  double yaw = 0.0, pitch = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    yaw += members[dist[i].second].gaze.yaw;
    pitch += members[dist[i].second].gaze.pitch;
  }
  return {yaw / k, pitch / k};
}

}  // namespace

GazeAngles predict(const TrainedModel& model, const GrayImage& eye, const GazeAngles& head) {
  switch (model.kind) {
    case EstimatorKind::Mean:
      return model.mean;
    case EstimatorKind::Knn:
      return predict_knn(*model.knn, eye, head);
    case EstimatorKind::Cnn: {
      const NetConfig& net = model.cnn->config;
      check_eye(eye, net.input_width, net.input_height);
      std::vector<double> image(eye.pixels.size());
      image_to_unit(eye, image.data());
      const double aux[2] = {head.yaw, head.pitch};
      const auto out = forward(*model.cnn, image, std::span<const double, 2>(aux, 2));
      return {out[0], out[1]};
    }
  }
  fail(ErrorKind::InvalidArgument, "unknown estimator kind");
}

BatchPrediction predict_batch(const TrainedModel& model, std::span<const NormalizedSample> samples) {
  if (samples.empty()) fail(ErrorKind::InvalidArgument, "predict_batch on an empty set");
  BatchPrediction out;
  out.predicted.resize(samples.size());
  if (model.kind == EstimatorKind::Cnn) {
    const NetConfig& net = model.cnn->config;
    const std::size_t hw = static_cast<std::size_t>(net.input_width) * net.input_height;
    for (std::size_t start = 0; start < samples.size(); start += kPredictChunk) {
      const std::size_t n = std::min<std::size_t>(kPredictChunk, samples.size() - start);
      std::vector<double> images(n * hw), aux(2 * n);
      for (std::size_t i = 0; i < n; ++i) {
        const auto& s = samples[start + i];
        check_eye(s.eye, net.input_width, net.input_height);
        image_to_unit(s.eye, images.data() + i * hw);
        aux[2 * i] = s.head.yaw;
        aux[2 * i + 1] = s.head.pitch;
      }
      const ForwardCache cache = forward_batch(*model.cnn, images, aux);
      for (std::size_t i = 0; i < n; ++i) out.predicted[start + i] = {cache.output[2 * i], cache.output[2 * i + 1]};
    }
  } else {
    for (std::size_t i = 0; i < samples.size(); ++i) out.predicted[i] = predict(model, samples[i].eye, samples[i].head);
  }
  out.error_deg.resize(samples.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    out.error_deg[i] = angular_error_deg(out.predicted[i], samples[i].gaze);
    sum += out.error_deg[i];
  }
  out.mean_error_deg = sum / samples.size();
  return out;
}

void write_model(std::ostream& out, const TrainedModel& model) {
  switch (model.kind) {
    case EstimatorKind::Cnn:
      write_params(out, *model.cnn);
      break;
    case EstimatorKind::Mean:
      binio::write_magic(out, kMeanMagic);
      binio::write(out, model.mean.yaw);
      binio::write(out, model.mean.pitch);
      break;
    case EstimatorKind::Knn: {
      const KnnModel& knn = *model.knn;
      binio::write_magic(out, kKnnMagic);
      for (int v : {knn.options.k, knn.options.feature_width, knn.options.feature_height,
                    static_cast<int>(knn.centers.size())}) {
        binio::write<std::uint32_t>(out, static_cast<std::uint32_t>(v));
      }
      for (const auto& c : knn.centers) binio::write_doubles(out, c.data(), 2);
      for (const auto& cluster : knn.members) {
        binio::write<std::uint32_t>(out, static_cast<std::uint32_t>(cluster.size()));
        for (const auto& m : cluster) {
          binio::write_doubles(out, m.features.data(), m.features.size());
          binio::write(out, m.gaze.yaw);
          binio::write(out, m.gaze.pitch);
        }
      }
      break;
    }
  }
}

TrainedModel read_model(std::istream& in) {
  char magic[binio::kMagicSize] = {};
  in.read(magic, binio::kMagicSize);
  if (in.gcount() != static_cast<std::streamsize>(binio::kMagicSize)) fail(ErrorKind::BadMagic, "model file too short");
  const std::string tag(magic, strnlen(magic, binio::kMagicSize));
  TrainedModel model;
  auto truncated = [] { fail(ErrorKind::TruncatedRecord, "truncated model file"); };

  if (tag == kCnnMagic) {
    in.seekg(-static_cast<std::streamoff>(binio::kMagicSize), std::ios::cur);
    model.kind = EstimatorKind::Cnn;
    model.cnn = read_params(in);
  } else if (tag == kMeanMagic) {
    model.kind = EstimatorKind::Mean;
    if (!binio::read(in, model.mean.yaw) || !binio::read(in, model.mean.pitch)) truncated();
  } else if (tag == kKnnMagic) {
    model.kind = EstimatorKind::Knn;
    std::array<std::uint32_t, 4> h{};
    for (auto& v : h)
      if (!binio::read(in, v)) truncated();
    KnnModel knn;
    knn.options.k = static_cast<int>(h[0]);
    knn.options.feature_width = static_cast<int>(h[1]);
    knn.options.feature_height = static_cast<int>(h[2]);
    knn.options.clusters = static_cast<int>(h[3]);
    knn.centers.resize(h[3]);
    for (auto& c : knn.centers)
      if (!binio::read_doubles(in, c.data(), 2)) truncated();
    knn.members.resize(h[3]);
    const std::size_t feat = static_cast<std::size_t>(h[1]) * h[2];
    for (auto& cluster : knn.members) {
      std::uint32_t count = 0;
      if (!binio::read(in, count)) truncated();
      cluster.resize(count);
      for (auto& m : cluster) {
        m.features.resize(feat);
        if (!binio::read_doubles(in, m.features.data(), feat) || !binio::read(in, m.gaze.yaw) ||
            !binio::read(in, m.gaze.pitch)) {
          truncated();
        }
      }
    }
    model.knn = std::move(knn);
  } else {
    fail(ErrorKind::BadMagic, "unrecognised model magic '" + tag + "'");
  }
  return model;
}

void save_model(const std::filesystem::path& path, const TrainedModel& model) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorKind::Io, "cannot write " + path.string());
  write_model(out, model);
  if (!out) fail(ErrorKind::Io, "write failed for " + path.string());
}

TrainedModel load_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::Io, "cannot open " + path.string());
  return read_model(in);
}

}  // namespace gazekit
