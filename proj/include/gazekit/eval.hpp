#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "gazekit/data.hpp"
#include "gazekit/estimators.hpp"

namespace gazekit {

enum class ProtocolKind { CrossDataset, LeaveOnePersonOut, PersonSpecific };

// CLI names: "cross", "lopo", "person".
std::string to_string(ProtocolKind kind);
ProtocolKind parse_protocol_kind(const std::string& name);

// Per-person, per-eye training quota applied before mirroring.
struct Quota {
  int left = 1500;
  int right = 1500;
};

struct EvalOptions {
  Quota quota;
  bool mirror = true;  // append yaw-negated twins to every training set
  std::uint64_t seed = 1;
  std::function<void(const std::string&)> log;  // progress and warnings, may be empty
};

struct SampleError {
  std::uint64_t person_id = 0;
  std::size_t index = 0;  // position in the evaluated store
  GazeAngles truth{};
  GazeAngles predicted{};
  double error_deg = 0.0;
};

struct PersonError {
  std::uint64_t id = 0;
  std::size_t n = 0;
  double mean_deg = 0.0;
};

struct EvalReport {
  ProtocolKind protocol = ProtocolKind::LeaveOnePersonOut;
  EstimatorKind estimator = EstimatorKind::Mean;
  std::uint64_t seed = 0;
  std::vector<PersonError> per_person;  // ascending id
  double grand_mean_deg = 0.0;          // mean of per-person means
  std::vector<SampleError> samples;     // ordered by person, then index
  std::vector<std::string> warnings;

  double std_deg() const;  // population std of per-person means
};

// Subsamples `store` per person by the quota, appends mirrored twins if
// enabled and trains. Used by run_cross and the CLI train command.
TrainedModel train_on_store(std::span<const NormalizedSample> store, const EstimatorSpec& spec,
                            const EvalOptions& options);

// Cross-dataset style report of an already trained model on `store`.
EvalReport evaluate_model(const TrainedModel& model, std::span<const NormalizedSample> store, std::uint64_t seed);

// Groups per-sample errors by person and fills per_person and grand_mean_deg.
void assemble_report(EvalReport& report);

// One LOPO fold: train on every other person, test on `person`. The fold's
// randomness depends only on (options.seed, person), so a fold gives the same
// result standalone and inside run_lopo.
std::vector<SampleError> run_lopo_fold(std::span<const NormalizedSample> store, std::uint64_t person,
                                       const EstimatorSpec& spec, const EvalOptions& options);

EvalReport run_lopo(std::span<const NormalizedSample> store, const EstimatorSpec& spec, const EvalOptions& options);

EvalReport run_cross(std::span<const NormalizedSample> train_store, std::span<const NormalizedSample> test_store,
                     const EstimatorSpec& spec, const EvalOptions& options);

// Per person: the first floor(0.75 n) samples in store order train a private
// model, the rest test it. The quota is ignored.
EvalReport run_person_specific(std::span<const NormalizedSample> store, const EstimatorSpec& spec,
                               const EvalOptions& options);

std::size_t person_specific_train_count(std::size_t n);

// report.json and per-sample CSV
void write_report_json(const std::filesystem::path& path, const EvalReport& report);
EvalReport read_report_json(const std::filesystem::path& path);
void write_sample_csv(const std::filesystem::path& path, std::span<const SampleError> samples);
std::vector<SampleError> read_sample_csv(const std::filesystem::path& path);

// error vs illumination
struct ErrorBin {
  double lo = 0.0, hi = 0.0;
  std::size_t count = 0;
  double mean_error_deg = 0.0;  // 0 when count is 0
};

struct IlluminationErrorTable {
  std::vector<ErrorBin> intensity;
  std::vector<ErrorBin> difference;
};

IlluminationErrorTable error_vs_illumination(std::span<const double> errors,
                                             std::span<const IlluminationMeasure> measures);

// Looks each sample's frame up through the store index. Samples whose record
// or frame cannot be found raise MissingFrames.
IlluminationErrorTable error_vs_illumination(std::span<const SampleError> samples,
                                             std::span<const StoreIndexEntry> index,
                                             std::span<const RawRecord> records,
                                             const std::function<GrayImage(std::size_t)>& frame_of);

// Columns: statistic,bin_start,bin_end,count,mean_error_deg
void write_illumination_csv(const std::filesystem::path& path, const IlluminationErrorTable& table);

// paired Wilcoxon signed-rank test over per-person means
struct WilcoxonResult {
  std::size_t pairs = 0;    // persons present in both reports
  std::size_t nonzero = 0;  // pairs with a nonzero difference
  double w_plus = 0.0;      // rank sum of positive differences (a - b)
  double w_minus = 0.0;
  double p_value = 1.0;     // two-sided
  bool exact = true;
};

// Exact null distribution up to 25 nonzero differences, normal approximation
// with tie and continuity correction above.
WilcoxonResult wilcoxon_signed_rank(std::span<const double> differences);
WilcoxonResult compare_reports(const EvalReport& a, const EvalReport& b);

}  // namespace gazekit
