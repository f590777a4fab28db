#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "gazekit/cnn.hpp"
#include "gazekit/geometry.hpp"
#include "gazekit/normalize.hpp"

namespace gazekit {

enum class EstimatorKind { Cnn, Knn, Mean };

std::string to_string(EstimatorKind kind);
EstimatorKind parse_estimator_kind(const std::string& name);

struct KnnOptions {
  int k = 7;
  int clusters = 16;
  int max_iterations = 100;
  int feature_width = 16;
  int feature_height = 9;
};

struct EstimatorSpec {
  EstimatorKind kind = EstimatorKind::Mean;
  NetConfig net;
  TrainConfig train;
  KnnOptions knn;
  std::uint64_t seed = 1;

  void validate() const;

  // Builds a spec from "key=value" overrides. Keys: lr, momentum, batch,
  // epochs, lr_step, lr_gamma, chunk, threads, conv_relu, k, clusters,
  // iterations, feature_width, feature_height.
  static EstimatorSpec from_params(EstimatorKind kind, const std::map<std::string, std::string>& params,
                                   std::uint64_t seed);
};

struct KnnMember {
  std::vector<double> features;  // area-resized crop, row-major
  GazeAngles gaze;

  friend bool operator==(const KnnMember&, const KnnMember&) = default;
};

struct KnnModel {
  KnnOptions options;
  std::vector<std::array<double, 2>> centers;  // (yaw, pitch) of h
  std::vector<std::vector<KnnMember>> members;

  friend bool operator==(const KnnModel& a, const KnnModel& b) {
    return a.options.k == b.options.k && a.options.feature_width == b.options.feature_width &&
           a.options.feature_height == b.options.feature_height && a.centers == b.centers &&
           a.members == b.members;
  }
};

struct TrainedModel {
  EstimatorKind kind = EstimatorKind::Mean;
  std::optional<CnnParams> cnn;
  std::optional<KnnModel> knn;
  GazeAngles mean{};

  friend bool operator==(const TrainedModel&, const TrainedModel&) = default;
};

// Seeded k-means with ++ seeding over 2D points. Returns centers and the
// cluster index of every point; distance ties go to the lowest index.
struct KMeansResult {
  std::vector<std::array<double, 2>> centers;
  std::vector<int> assignment;
};
KMeansResult kmeans(std::span<const std::array<double, 2>> points, int clusters, int max_iterations,
                    std::uint64_t seed);

std::vector<double> knn_features(const GrayImage& eye, const KnnOptions& options);

TrainedModel train(const EstimatorSpec& spec, std::span<const NormalizedSample> data);

GazeAngles predict(const TrainedModel& model, const GrayImage& eye, const GazeAngles& head);

struct BatchPrediction {
  std::vector<GazeAngles> predicted;
  std::vector<double> error_deg;
  double mean_error_deg = 0.0;
};

BatchPrediction predict_batch(const TrainedModel& model, std::span<const NormalizedSample> samples);

void save_model(const std::filesystem::path& path, const TrainedModel& model);
TrainedModel load_model(const std::filesystem::path& path);
void write_model(std::ostream& out, const TrainedModel& model);
TrainedModel read_model(std::istream& in);

}  // namespace gazekit
