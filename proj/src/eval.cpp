#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <json.hpp>
#include <map>
#include <set>
#include <sstream>

#include "gazekit/error.hpp"
#include "gazekit/eval.hpp"
#include "gazekit/random.hpp"

namespace gazekit {

namespace {

using nlohmann::ordered_json;

// Shortest text that reads back to the same double.
std::string exact(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

template <typename T>
T parse_number(const std::string& s, const std::string& where) {
  T v{};
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) fail(ErrorKind::MalformedRecord, where);
  return v;
}

std::vector<SampleError> evaluate(const TrainedModel& model, std::span<const NormalizedSample> store,
                                  std::span<const std::size_t> test) {
  std::vector<NormalizedSample> batch;
  batch.reserve(test.size());
  for (std::size_t i : test) batch.push_back(store[i]);
  const BatchPrediction pred = predict_batch(model, batch);
  std::vector<SampleError> out(test.size());
  for (std::size_t j = 0; j < test.size(); ++j) {
    out[j] = {batch[j].person_id, test[j], batch[j].gaze, pred.predicted[j], pred.error_deg[j]};
  }
  return out;
}

std::vector<NormalizedSample> training_set(std::span<const NormalizedSample> pool, const EvalOptions& options,
                                           std::uint64_t seed) {
  std::vector<NormalizedSample> train = subsample_per_person(pool, options.quota.left, options.quota.right, seed);
  return options.mirror ? with_mirrored_twins(train) : train;
}

void log(const EvalOptions& options, const std::string& msg) {
  if (options.log) options.log(msg);
}

std::vector<ErrorBin> empty_bins(int count, const std::function<std::pair<double, double>(int)>& range) {
  std::vector<ErrorBin> bins(count);
  for (int b = 0; b < count; ++b) std::tie(bins[b].lo, bins[b].hi) = range(b);
  return bins;
}

// Average ranks of |d|, ties sharing the mean of their positions.
std::vector<double> abs_ranks(std::span<const double> d) {
  std::vector<std::size_t> order(d.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return std::abs(d[a]) < std::abs(d[b]); });
  std::vector<double> rank(d.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && std::abs(d[order[j + 1]]) == std::abs(d[order[i]])) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) rank[order[k]] = r;
    i = j + 1;
  }
  return rank;
}

}  // namespace

std::string to_string(ProtocolKind kind) {
  switch (kind) {
    case ProtocolKind::CrossDataset:
      return "cross";
    case ProtocolKind::LeaveOnePersonOut:
      return "lopo";
    case ProtocolKind::PersonSpecific:
      return "person";
  }
  return "?";
}

ProtocolKind parse_protocol_kind(const std::string& name) {
  if (name == "cross") return ProtocolKind::CrossDataset;
  if (name == "lopo") return ProtocolKind::LeaveOnePersonOut;
  if (name == "person") return ProtocolKind::PersonSpecific;
  fail(ErrorKind::InvalidArgument, "unknown protocol '" + name + "' (expected cross, lopo or person)");
}

double EvalReport::std_deg() const {
  if (per_person.empty()) return 0.0;
  double ss = 0.0;
  for (const auto& p : per_person) ss += (p.mean_deg - grand_mean_deg) * (p.mean_deg - grand_mean_deg);
  return std::sqrt(ss / static_cast<double>(per_person.size()));
}

void assemble_report(EvalReport& report) {
  std::sort(report.samples.begin(), report.samples.end(), [](const SampleError& a, const SampleError& b) {
    return std::tie(a.person_id, a.index) < std::tie(b.person_id, b.index);
  });
  report.per_person.clear();
  for (const auto& s : report.samples) {
    if (report.per_person.empty() || report.per_person.back().id != s.person_id) {
      report.per_person.push_back({s.person_id, 0, 0.0});
    }
    auto& p = report.per_person.back();
    ++p.n;
    p.mean_deg += s.error_deg;
  }
  double total = 0.0;
  for (auto& p : report.per_person) {
    p.mean_deg /= static_cast<double>(p.n);
    total += p.mean_deg;
  }
  report.grand_mean_deg = report.per_person.empty() ? 0.0 : total / static_cast<double>(report.per_person.size());
}

std::vector<SampleError> run_lopo_fold(std::span<const NormalizedSample> store, std::uint64_t person,
                                       const EstimatorSpec& spec, const EvalOptions& options) {
  std::vector<NormalizedSample> pool;
  std::vector<std::size_t> test;
  for (std::size_t i = 0; i < store.size(); ++i) {
    if (store[i].person_id == person) test.push_back(i);
    else pool.push_back(store[i]);
  }
  if (test.empty()) fail(ErrorKind::InvalidArgument, "person " + std::to_string(person) + " is not in the store");
  if (pool.empty()) fail(ErrorKind::InsufficientPersons, "no training persons left for fold " + std::to_string(person));
  const std::uint64_t fold_seed = derive_seed(options.seed, person);
  EstimatorSpec fold_spec = spec;
  fold_spec.seed = derive_seed(fold_seed, 1);
  const TrainedModel model = train(fold_spec, training_set(pool, options, derive_seed(fold_seed, 0)));
  return evaluate(model, store, test);
}

EvalReport run_lopo(std::span<const NormalizedSample> store, const EstimatorSpec& spec, const EvalOptions& options) {
  const auto ids = person_ids(store);
  if (ids.size() < 2) {
    fail(ErrorKind::InsufficientPersons, "LOPO needs at least 2 persons, store has " + std::to_string(ids.size()));
  }
  EvalReport report;
  report.protocol = ProtocolKind::LeaveOnePersonOut;
  report.estimator = spec.kind;
  report.seed = options.seed;
  for (std::size_t f = 0; f < ids.size(); ++f) {
    auto fold = run_lopo_fold(store, ids[f], spec, options);
    double sum = 0.0;
    for (const auto& s : fold) sum += s.error_deg;
    log(options, "fold " + std::to_string(f + 1) + "/" + std::to_string(ids.size()) + " person " +
                     std::to_string(ids[f]) + ": " + exact(sum / static_cast<double>(fold.size())) + " deg");
    report.samples.insert(report.samples.end(), fold.begin(), fold.end());
  }
  assemble_report(report);
  return report;
}

EvalReport run_cross(std::span<const NormalizedSample> train_store, std::span<const NormalizedSample> test_store,
                     const EstimatorSpec& spec, const EvalOptions& options) {
  if (train_store.empty()) fail(ErrorKind::EmptyStore, "training store is empty");
  if (test_store.empty()) fail(ErrorKind::EmptyStore, "test store is empty");
  EvalReport report;
  report.protocol = ProtocolKind::CrossDataset;
  report.estimator = spec.kind;
  report.seed = options.seed;

  const auto train_ids = person_ids(train_store), test_ids = person_ids(test_store);
  std::vector<std::uint64_t> shared;
  std::set_intersection(train_ids.begin(), train_ids.end(), test_ids.begin(), test_ids.end(),
                        std::back_inserter(shared));
  if (!shared.empty()) {
    report.warnings.push_back(std::to_string(shared.size()) + " person id(s) occur in both stores, first " +
                              std::to_string(shared.front()));
    log(options, "warning: " + report.warnings.back());
  }

  report.samples = evaluate_model(train_on_store(train_store, spec, options), test_store, options.seed).samples;
  assemble_report(report);
  return report;
}

TrainedModel train_on_store(std::span<const NormalizedSample> store, const EstimatorSpec& spec,
                            const EvalOptions& options) {
  if (store.empty()) fail(ErrorKind::EmptyStore, "training store is empty");
  EstimatorSpec seeded = spec;
  seeded.seed = derive_seed(options.seed, 1);
  return train(seeded, training_set(store, options, derive_seed(options.seed, 0)));
}

EvalReport evaluate_model(const TrainedModel& model, std::span<const NormalizedSample> store, std::uint64_t seed) {
  if (store.empty()) fail(ErrorKind::EmptyStore, "test store is empty");
  EvalReport report;
  report.protocol = ProtocolKind::CrossDataset;
  report.estimator = model.kind;
  report.seed = seed;
  std::vector<std::size_t> test(store.size());
  for (std::size_t i = 0; i < test.size(); ++i) test[i] = i;
  report.samples = evaluate(model, store, test);
  assemble_report(report);
  return report;
}

std::size_t person_specific_train_count(std::size_t n) { return n * 3 / 4; }

EvalReport run_person_specific(std::span<const NormalizedSample> store, const EstimatorSpec& spec,
                               const EvalOptions& options) {
  if (store.empty()) fail(ErrorKind::EmptyStore, "store is empty");
  std::map<std::uint64_t, std::vector<std::size_t>> by_person;
  for (std::size_t i = 0; i < store.size(); ++i) by_person[store[i].person_id].push_back(i);
  for (const auto& [pid, idx] : by_person) {
    if (idx.size() < 4) {
      fail(ErrorKind::InsufficientSamples,
           "person " + std::to_string(pid) + " has " + std::to_string(idx.size()) + " samples, need at least 4");
    }
  }
  EvalReport report;
  report.protocol = ProtocolKind::PersonSpecific;
  report.estimator = spec.kind;
  report.seed = options.seed;
  for (const auto& [pid, idx] : by_person) {
    const std::size_t n_train = person_specific_train_count(idx.size());
    std::vector<NormalizedSample> train_set;
    for (std::size_t j = 0; j < n_train; ++j) train_set.push_back(store[idx[j]]);
    if (options.mirror) train_set = with_mirrored_twins(train_set);
    EstimatorSpec person_spec = spec;
    person_spec.seed = derive_seed(derive_seed(options.seed, pid), 1);
    const TrainedModel model = train(person_spec, train_set);
    const std::vector<std::size_t> test(idx.begin() + static_cast<std::ptrdiff_t>(n_train), idx.end());
    auto errs = evaluate(model, store, test);
    log(options, "person " + std::to_string(pid) + ": trained on " + std::to_string(n_train) + ", tested on " +
                     std::to_string(test.size()));
    report.samples.insert(report.samples.end(), errs.begin(), errs.end());
  }
  assemble_report(report);
  return report;
}

void write_report_json(const std::filesystem::path& path, const EvalReport& report) {
  ordered_json j;
  j["protocol"] = to_string(report.protocol);
  j["estimator"] = to_string(report.estimator);
  j["seed"] = report.seed;
  ordered_json persons = ordered_json::array();
  for (const auto& p : report.per_person) {
    ordered_json e;
    e["id"] = p.id;
    e["n"] = p.n;
    e["mean_deg"] = p.mean_deg;
    persons.push_back(e);
  }
  j["per_person"] = persons;
  j["grand_mean_deg"] = report.grand_mean_deg;
  j["std_deg"] = report.std_deg();
  std::ofstream out(path);
  if (!out) fail(ErrorKind::Io, "cannot write " + path.string());
  out << j.dump(2) << '\n';
  if (!out) fail(ErrorKind::Io, "write failed for " + path.string());
}

EvalReport read_report_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::Io, "cannot open " + path.string());
  EvalReport r;
  try {
    const auto j = nlohmann::json::parse(in);
    r.protocol = parse_protocol_kind(j.at("protocol").get<std::string>());
    r.estimator = parse_estimator_kind(j.at("estimator").get<std::string>());
    r.seed = j.at("seed").get<std::uint64_t>();
    for (const auto& e : j.at("per_person")) {
      r.per_person.push_back({e.at("id").get<std::uint64_t>(), e.at("n").get<std::size_t>(),
                              e.at("mean_deg").get<double>()});
    }
    r.grand_mean_deg = j.at("grand_mean_deg").get<double>();
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::MalformedRecord, path.string() + ": " + e.what());
  } catch (const Error& e) {
    fail(ErrorKind::MalformedRecord, path.string() + ": " + e.what());
  }
  return r;
}

void write_sample_csv(const std::filesystem::path& path, std::span<const SampleError> samples) {
  std::ofstream out(path);
  if (!out) fail(ErrorKind::Io, "cannot write " + path.string());
  out << "person,index,true_yaw,true_pitch,pred_yaw,pred_pitch,error_deg\n";
  for (const auto& s : samples) {
    out << s.person_id << ',' << s.index << ',' << exact(s.truth.yaw) << ',' << exact(s.truth.pitch) << ','
        << exact(s.predicted.yaw) << ',' << exact(s.predicted.pitch) << ',' << exact(s.error_deg) << '\n';
  }
  if (!out) fail(ErrorKind::Io, "write failed for " + path.string());
}

std::vector<SampleError> read_sample_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::Io, "cannot open " + path.string());
  std::string line;
  std::getline(in, line);  // header
  std::vector<SampleError> out;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::istringstream ss(line);
    for (std::string cell; std::getline(ss, cell, ',');) f.push_back(cell);
    const std::string where = path.string() + " line " + std::to_string(line_no);
    if (f.size() != 7) fail(ErrorKind::MalformedRecord, where);
    SampleError s;
    s.person_id = parse_number<std::uint64_t>(f[0], where);
    s.index = parse_number<std::size_t>(f[1], where);
    s.truth = {parse_number<double>(f[2], where), parse_number<double>(f[3], where)};
    s.predicted = {parse_number<double>(f[4], where), parse_number<double>(f[5], where)};
    s.error_deg = parse_number<double>(f[6], where);
    out.push_back(s);
  }
  return out;
}

IlluminationErrorTable error_vs_illumination(std::span<const double> errors,
                                             std::span<const IlluminationMeasure> measures) {
  if (errors.size() != measures.size()) {
    fail(ErrorKind::InvalidArgument, "error and illumination counts differ");
  }
  IlluminationErrorTable t;
  t.intensity = empty_bins(kIntensityBins, intensity_bin_range);
  t.difference = empty_bins(kDifferenceBins, difference_bin_range);
  for (std::size_t i = 0; i < errors.size(); ++i) {
    auto& a = t.intensity[intensity_bin(measures[i].mean)];
    auto& b = t.difference[difference_bin(measures[i].difference)];
    ++a.count;
    a.mean_error_deg += errors[i];
    ++b.count;
    b.mean_error_deg += errors[i];
  }
  for (auto* bins : {&t.intensity, &t.difference}) {
    for (auto& b : *bins) {
      if (b.count) b.mean_error_deg /= static_cast<double>(b.count);
    }
  }
  return t;
}

IlluminationErrorTable error_vs_illumination(std::span<const SampleError> samples,
                                             std::span<const StoreIndexEntry> index,
                                             std::span<const RawRecord> records,
                                             const std::function<GrayImage(std::size_t)>& frame_of) {
  std::map<std::size_t, IlluminationMeasure> cache;
  std::vector<double> errors;
  std::vector<IlluminationMeasure> measures;
  for (const auto& s : samples) {
    if (s.index >= index.size()) {
      fail(ErrorKind::MissingFrames, "sample " + std::to_string(s.index) + " has no store index entry");
    }
    const std::size_t rec = index[s.index].record;
    if (rec >= records.size()) {
      fail(ErrorKind::MissingFrames,
           "sample " + std::to_string(s.index) + " refers to record " + std::to_string(rec) + " outside the manifest");
    }
    auto it = cache.find(rec);
    if (it == cache.end()) {
      GrayImage frame;
      try {
        frame = frame_of(rec);
      } catch (const Error& e) {
        fail(ErrorKind::MissingFrames, "frame of record " + std::to_string(rec) + ": " + e.what());
      }
      it = cache.emplace(rec, measure_illumination(frame, records[rec].landmarks)).first;
    }
    errors.push_back(s.error_deg);
    measures.push_back(it->second);
  }
  return error_vs_illumination(errors, measures);
}

void write_illumination_csv(const std::filesystem::path& path, const IlluminationErrorTable& table) {
  std::ofstream out(path);
  if (!out) fail(ErrorKind::Io, "cannot write " + path.string());
  out << "statistic,bin_start,bin_end,count,mean_error_deg\n";
  auto emit = [&](const char* name, const std::vector<ErrorBin>& bins) {
    for (const auto& b : bins) {
      out << name << ',' << b.lo << ',' << b.hi << ',' << b.count << ',' << exact(b.mean_error_deg) << '\n';
    }
  };
  emit("intensity", table.intensity);
  emit("lr_difference", table.difference);
  if (!out) fail(ErrorKind::Io, "write failed for " + path.string());
}

WilcoxonResult wilcoxon_signed_rank(std::span<const double> differences) {
  WilcoxonResult r;
  r.pairs = differences.size();
  std::vector<double> d;
  for (double v : differences) {
    if (!std::isfinite(v)) fail(ErrorKind::InvalidArgument, "non-finite difference");
    if (v != 0.0) d.push_back(v);
  }
  r.nonzero = d.size();
  if (d.empty()) return r;
  const std::vector<double> rank = abs_ranks(d);
  for (std::size_t i = 0; i < d.size(); ++i) (d[i] > 0 ? r.w_plus : r.w_minus) += rank[i];
  const double n = static_cast<double>(d.size());

  if (d.size() <= 25) {
    // Doubled ranks are integers even with ties; count sign assignments per sum.
    std::vector<int> r2(d.size());
    int total = 0;
    for (std::size_t i = 0; i < d.size(); ++i) {
      r2[i] = static_cast<int>(std::lround(2.0 * rank[i]));
      total += r2[i];
    }
    std::vector<double> ways(static_cast<std::size_t>(total) + 1, 0.0);
    ways[0] = 1.0;
    int reach = 0;
    for (int v : r2) {
      for (int s = reach; s >= 0; --s) ways[s + v] += ways[s];
      reach += v;
    }
    const int w = static_cast<int>(std::lround(2.0 * r.w_plus));
    double below = 0.0, above = 0.0, all = 0.0;
    for (int s = 0; s <= total; ++s) {
      all += ways[s];
      if (s <= w) below += ways[s];
      if (s >= w) above += ways[s];
    }
    r.p_value = std::min(1.0, 2.0 * std::min(below, above) / all);
    r.exact = true;
  } else {
    std::vector<double> sorted = rank;
    std::sort(sorted.begin(), sorted.end());
    double tie_term = 0.0;
    for (std::size_t i = 0; i < sorted.size();) {
      std::size_t j = i;
      while (j < sorted.size() && sorted[j] == sorted[i]) ++j;
      const double t = static_cast<double>(j - i);
      tie_term += t * t * t - t;
      i = j;
    }
    const double mean = n * (n + 1) / 4.0;
    const double var = n * (n + 1) * (2 * n + 1) / 24.0 - tie_term / 48.0;
    const double z = std::max(0.0, std::abs(r.w_plus - mean) - 0.5) / std::sqrt(var);
    r.p_value = std::min(1.0, std::erfc(z / std::sqrt(2.0)));
    r.exact = false;
  }
  return r;
}

WilcoxonResult compare_reports(const EvalReport& a, const EvalReport& b) {
  std::map<std::uint64_t, double> bmeans;
  for (const auto& p : b.per_person) bmeans[p.id] = p.mean_deg;
  std::vector<double> diffs;
  for (const auto& p : a.per_person) {
    if (const auto it = bmeans.find(p.id); it != bmeans.end()) diffs.push_back(p.mean_deg - it->second);
  }
  if (diffs.empty()) fail(ErrorKind::InvalidArgument, "reports share no person ids");
  return wilcoxon_signed_rank(diffs);
}

}  // namespace gazekit
