#include "gazekit/cli.hpp"

#include <CLI11.hpp>
#include <charconv>
#include <fstream>
#include <json.hpp>
#include <map>
#include <optional>

#include "gazekit/data.hpp"
#include "gazekit/error.hpp"
#include "gazekit/eval.hpp"
#include "gazekit/pose.hpp"

namespace gazekit {

namespace {

namespace fs = std::filesystem;
using Params = std::map<std::string, std::string>;

// "k=v" items, each possibly holding several comma-separated pairs.
Params parse_params(const std::vector<std::string>& items) {
  Params out;
  for (const auto& item : items) {
    std::size_t start = 0;
    while (start <= item.size()) {
      const std::size_t end = std::min(item.find(',', start), item.size());
      const std::string pair = item.substr(start, end - start);
      if (!pair.empty()) {
        const auto eq = pair.find('=');
        if (eq == std::string::npos || eq == 0) fail(ErrorKind::InvalidArgument, "expected key=value, got '" + pair + "'");
        out[pair.substr(0, eq)] = pair.substr(eq + 1);
      }
      start = end + 1;
    }
  }
  return out;
}

double to_double(const std::string& key, const std::string& v) {
  double d = 0.0;
  const auto res = std::from_chars(v.data(), v.data() + v.size(), d);
  if (res.ec != std::errc() || res.ptr != v.data() + v.size()) {
    fail(ErrorKind::InvalidArgument, "parameter " + key + ": '" + v + "' is not a number");
  }
  return d;
}

long long to_integer(const std::string& key, const std::string& v) {
  long long i = 0;
  const auto res = std::from_chars(v.data(), v.data() + v.size(), i);
  if (res.ec != std::errc() || res.ptr != v.data() + v.size()) {
    fail(ErrorKind::InvalidArgument, "parameter " + key + ": '" + v + "' is not an integer");
  }
  return i;
}

// "lo:hi", or a single value for a degenerate range.
Range to_range(const std::string& key, const std::string& v) {
  const auto colon = v.find(':');
  if (colon == std::string::npos) {
    const double x = to_double(key, v);
    return {x, x};
  }
  return {to_double(key, v.substr(0, colon)), to_double(key, v.substr(colon + 1))};
}

SynthConfig synth_config(const Params& params, std::uint64_t seed) {
  SynthConfig c;
  c.seed = seed;
  const std::map<std::string, Range SynthConfig::*> ranges{
      {"yaw", &SynthConfig::head_yaw},          {"pitch", &SynthConfig::head_pitch},
      {"roll", &SynthConfig::head_roll},        {"head_x", &SynthConfig::head_x},
      {"head_y", &SynthConfig::head_y},         {"depth", &SynthConfig::depth},
      {"screen_x", &SynthConfig::screen_x},     {"screen_y", &SynthConfig::screen_y},
      {"iris", &SynthConfig::iris_intensity},   {"skin", &SynthConfig::skin_intensity},
      {"sclera", &SynthConfig::sclera_intensity}, {"aperture", &SynthConfig::eyelid_aperture},
      {"eyeball_radius", &SynthConfig::eyeball_radius}, {"gain", &SynthConfig::gain},
      {"gradient", &SynthConfig::gradient}, {"kappa_yaw", &SynthConfig::kappa_yaw},
      {"kappa_pitch", &SynthConfig::kappa_pitch}};
  const std::map<std::string, double SynthConfig::*> reals{{"focal", &SynthConfig::focal_px},
                                                           {"iris_angle", &SynthConfig::iris_half_angle_deg},
                                                           {"pupil_angle", &SynthConfig::pupil_half_angle_deg},
                                                           {"pixel_noise", &SynthConfig::pixel_noise},
                                                           {"landmark_noise", &SynthConfig::landmark_noise}};
  const std::map<std::string, int SynthConfig::*> ints{{"persons", &SynthConfig::persons},
                                                       {"records", &SynthConfig::records_per_person},
                                                       {"width", &SynthConfig::image_width},
                                                       {"height", &SynthConfig::image_height},
                                                       {"supersampling", &SynthConfig::eye_supersampling}};
  for (const auto& [key, value] : params) {
    if (auto it = ranges.find(key); it != ranges.end()) c.*(it->second) = to_range(key, value);
    else if (auto r = reals.find(key); r != reals.end()) c.*(r->second) = to_double(key, value);
    else if (auto i = ints.find(key); i != ints.end()) c.*(i->second) = static_cast<int>(to_integer(key, value));
    else if (key == "first_person") c.first_person_id = static_cast<std::uint64_t>(to_integer(key, value));
    else fail(ErrorKind::InvalidArgument, "unknown synth parameter '" + key + "'");
  }
  c.validate();
  return c;
}

NormalizationParams normalization_params(const Params& params) {
  NormalizationParams p;
  for (const auto& [key, value] : params) {
    if (key == "distance") p.distance_mm = to_double(key, value);
    else if (key == "focal") p.focal_px = to_double(key, value);
    else if (key == "width") p.width = static_cast<int>(to_integer(key, value));
    else if (key == "height") p.height = static_cast<int>(to_integer(key, value));
    else fail(ErrorKind::InvalidArgument, "unknown normalize parameter '" + key + "'");
  }
  p.validate();
  return p;
}

Quota parse_quota(const std::string& text) {
  const auto colon = text.find(':');
  Quota q;
  q.left = static_cast<int>(to_integer("quota", text.substr(0, colon)));
  q.right = colon == std::string::npos ? q.left : static_cast<int>(to_integer("quota", text.substr(colon + 1)));
  if (q.left < 1 || q.right < 1) fail(ErrorKind::InvalidArgument, "quota must be >= 1 per eye");
  return q;
}

fs::path index_path(const fs::path& store) { return fs::path(store.string() + ".index.csv"); }

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) fail(ErrorKind::Io, "cannot create " + dir.string());
}

void ensure_parent(const fs::path& file) {
  if (file.has_parent_path()) ensure_dir(file.parent_path());
}

FaceModel face_model(const std::string& path) { return path.empty() ? FaceModel::generic() : FaceModel::load(path); }

ManifestLoad load_logged(const fs::path& path, std::ostream& log) {
  ManifestLoad m = load_manifest(path);
  for (const auto& p : m.problems) log << "skipped " << p << '\n';
  return m;
}

std::string fixed(double v, int digits = 3) {
  std::ostringstream ss;
  ss.setf(std::ios::fixed);
  ss.precision(digits);
  ss << v;
  return ss.str();
}

struct Shared {
  std::uint64_t seed = 1;
  std::vector<std::string> params;
  std::string model_file;
  std::string out;
  bool quiet = false;
};

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"gazekit: appearance-based gaze estimation toolkit", "gazekit"};
  app.require_subcommand(1);
  Shared opt;
  std::ostringstream sink;

  auto common = [&](CLI::App* sub) {
    sub->add_option("--seed", opt.seed, "Master seed")->capture_default_str();
    sub->add_option("--params", opt.params, "key=value overrides, comma separated or repeated");
    sub->add_flag("--quiet", opt.quiet, "Suppress progress output");
  };

  // synth
  auto* synth = app.add_subcommand("synth", "Render a synthetic dataset (frames, manifest.jsonl, truth.jsonl)");
  common(synth);
  synth->add_option("--out", opt.out, "Output directory")->required();

  // normalize
  std::string manifest, face_model_path;
  auto* normalize = app.add_subcommand("normalize", "Estimate pose and write normalized eye samples");
  common(normalize);
  normalize->add_option("--manifest", manifest, "Manifest (JSON lines)")->required()->check(CLI::ExistingFile);
  normalize->add_option("--out", opt.out, "Output store (.gznrm); index written to <out>.index.csv")->required();
  normalize->add_option("--face-model", face_model_path, "Face model file (defaults to the generic model)");

  // train
  std::string store, test_store, estimator = "cnn", quota_text = "1500:1500", protocol = "lopo";
  bool no_mirror = false;
  auto* train_cmd = app.add_subcommand("train", "Train an estimator on a store");
  common(train_cmd);
  train_cmd->add_option("--store", store, "Normalized store")->required()->check(CLI::ExistingFile);
  train_cmd->add_option("--estimator", estimator, "cnn, knn or mean")->capture_default_str();
  train_cmd->add_option("--model-file", opt.model_file, "Output model file")->required();
  train_cmd->add_option("--quota", quota_text, "Per-person eye quota LEFT[:RIGHT]")->capture_default_str();
  train_cmd->add_flag("--no-mirror", no_mirror, "Skip mirrored training twins");

  // eval
  std::string eval_manifest;
  auto* eval_cmd = app.add_subcommand("eval", "Run an evaluation protocol and write report.json and samples.csv");
  common(eval_cmd);
  eval_cmd->add_option("--protocol", protocol, "lopo, cross or person")->capture_default_str();
  eval_cmd->add_option("--store", store, "Store to evaluate (training store for cross)")
      ->required()
      ->check(CLI::ExistingFile);
  eval_cmd->add_option("--test-store", test_store, "Test store for cross")->check(CLI::ExistingFile);
  eval_cmd->add_option("--estimator", estimator, "cnn, knn or mean")->capture_default_str();
  eval_cmd->add_option("--model-file", opt.model_file, "Evaluate this trained model on --store instead of training");
  eval_cmd->add_option("--quota", quota_text, "Per-person eye quota LEFT[:RIGHT]")->capture_default_str();
  eval_cmd->add_flag("--no-mirror", no_mirror, "Skip mirrored training twins");
  eval_cmd->add_option("--manifest", eval_manifest,
                       "Manifest of the evaluated store; adds illumination.csv (error vs illumination)");
  eval_cmd->add_option("--out", opt.out, "Output directory")->required();

  // stats
  auto* stats = app.add_subcommand("stats", "Face-region illumination and hour-of-day histograms");
  common(stats);
  stats->add_option("--manifest", manifest, "Manifest (JSON lines)")->required()->check(CLI::ExistingFile);
  stats->add_option("--out", opt.out, "Output directory")->required();

  // pose
  auto* pose = app.add_subcommand("pose", "Estimate head pose for every manifest record");
  common(pose);
  pose->add_option("--manifest", manifest, "Manifest (JSON lines)")->required()->check(CLI::ExistingFile);
  pose->add_option("--out", opt.out, "Output CSV")->required();
  pose->add_option("--face-model", face_model_path, "Face model file (defaults to the generic model)");

  // compare
  std::string report_a, report_b;
  auto* compare = app.add_subcommand("compare", "Paired Wilcoxon signed-rank test on two report files");
  compare->add_option("a", report_a, "First report.json")->required()->check(CLI::ExistingFile);
  compare->add_option("b", report_b, "Second report.json")->required()->check(CLI::ExistingFile);
  compare->add_option("--out", opt.out, "Write the result as JSON");

  if (argc <= 1) {
    err << app.help();
    return 1;
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      out << app.help();  // shows the selected subcommand's help when there is one
      return 0;
    }
    err << "error: " << e.what() << "\n\n";
    if (app.get_subcommands().empty()) err << app.help();
    else err << app.get_subcommands().front()->help();
    return 1;
  }
  std::ostream& log = opt.quiet ? static_cast<std::ostream&>(sink) : err;

  try {
    const Params params = parse_params(opt.params);
    if (synth->parsed()) {
      const SynthConfig c = synth_config(params, opt.seed);
      const SynthOutput o = synth_generate(c, opt.out);
      log << "wrote " << o.records << " records to " << opt.out << '\n';
    } else if (normalize->parsed()) {
      const NormalizationParams p = normalization_params(params);
      const ManifestLoad m = load_logged(manifest, log);
      const NormalizedSet set = normalize_records(
          m.records, [&](std::size_t i) { return read_pgm(m.records[i].image); }, face_model(face_model_path), p);
      for (const auto& d : set.drops) log << "dropped " << d << '\n';
      ensure_parent(opt.out);
      write_store(fs::path(opt.out), set.samples);
      write_store_index(index_path(opt.out), set.index);
      log << "normalized " << m.records.size() - set.drops.size() << " of " << m.records.size() << " records, "
          << set.samples.size() << " samples, " << set.drops.size() << " dropped\n";
    } else if (train_cmd->parsed()) {
      const EstimatorSpec spec = EstimatorSpec::from_params(parse_estimator_kind(estimator), params, opt.seed);
      EvalOptions eo;
      eo.quota = parse_quota(quota_text);
      eo.mirror = !no_mirror;
      eo.seed = opt.seed;
      const auto samples = read_store(fs::path(store));
      const TrainedModel model = train_on_store(samples, spec, eo);
      ensure_parent(opt.model_file);
      save_model(opt.model_file, model);
      log << "trained " << estimator << " on " << samples.size() << " samples -> " << opt.model_file << '\n';
    } else if (eval_cmd->parsed()) {
      const ProtocolKind kind = parse_protocol_kind(protocol);
      EvalOptions eo;
      eo.quota = parse_quota(quota_text);
      eo.mirror = !no_mirror;
      eo.seed = opt.seed;
      eo.log = [&](const std::string& msg) { log << msg << '\n'; };
      const auto samples = read_store(fs::path(store));
      EvalReport report;
      fs::path evaluated = store;
      if (!opt.model_file.empty()) {
        if (kind != ProtocolKind::CrossDataset) {
          fail(ErrorKind::InvalidArgument, "--model-file requires --protocol cross");
        }
        if (!test_store.empty()) fail(ErrorKind::InvalidArgument, "--model-file evaluates --store; drop --test-store");
        report = evaluate_model(load_model(opt.model_file), samples, opt.seed);
      } else {
        const EstimatorSpec spec = EstimatorSpec::from_params(parse_estimator_kind(estimator), params, opt.seed);
        if (kind == ProtocolKind::CrossDataset) {
          if (test_store.empty()) fail(ErrorKind::InvalidArgument, "cross protocol needs --test-store");
          report = run_cross(samples, read_store(fs::path(test_store)), spec, eo);
          evaluated = test_store;
        } else if (kind == ProtocolKind::LeaveOnePersonOut) {
          report = run_lopo(samples, spec, eo);
        } else {
          report = run_person_specific(samples, spec, eo);
        }
      }
      ensure_dir(opt.out);
      write_report_json(fs::path(opt.out) / "report.json", report);
      write_sample_csv(fs::path(opt.out) / "samples.csv", report.samples);
      if (!eval_manifest.empty()) {
        const ManifestLoad m = load_logged(eval_manifest, log);
        const auto index = read_store_index(index_path(evaluated));
        const auto table = error_vs_illumination(report.samples, index, m.records,
                                                 [&](std::size_t i) { return read_pgm(m.records[i].image); });
        write_illumination_csv(fs::path(opt.out) / "illumination.csv", table);
      }
      out << to_string(report.protocol) << ' ' << to_string(report.estimator) << ": grand mean "
          << fixed(report.grand_mean_deg) << " deg, std " << fixed(report.std_deg()) << " deg over "
          << report.per_person.size() << " persons\n";
    } else if (stats->parsed()) {
      if (!params.empty()) fail(ErrorKind::InvalidArgument, "stats takes no --params");
      const ManifestLoad m = load_logged(manifest, log);
      const DatasetStats s = compute_stats(m.records);
      write_stats_csv(opt.out, s);
      log << "stats over " << s.records << " records written to " << opt.out << '\n';
    } else if (pose->parsed()) {
      if (!params.empty()) fail(ErrorKind::InvalidArgument, "pose takes no --params");
      const ManifestLoad m = load_logged(manifest, log);
      const FaceModel model = face_model(face_model_path);
      ensure_parent(opt.out);
      std::ofstream csv(opt.out);
      if (!csv) fail(ErrorKind::Io, "cannot write " + opt.out);
      csv << "record,person_id,rot_x,rot_y,rot_z,t_x,t_y,t_z,reprojection_cost\n";
      csv.precision(17);
      std::size_t dropped = 0;
      for (std::size_t i = 0; i < m.records.size(); ++i) {
        const RawRecord& r = m.records[i];
        try {
          const HeadPose hp = estimate_head_pose(model, r.landmarks, r.intrinsics);
          const Vec3 aa = hp.rotation.to_axis_angle();
          csv << i << ',' << r.person_id << ',' << aa.x() << ',' << aa.y() << ',' << aa.z() << ','
              << hp.translation.x() << ',' << hp.translation.y() << ',' << hp.translation.z() << ','
              << reprojection_cost(hp, model, r.landmarks, r.intrinsics) << '\n';
        } catch (const Error& e) {
          if (e.kind() != ErrorKind::DegenerateConfiguration && e.kind() != ErrorKind::DivergedRefinement &&
              e.kind() != ErrorKind::NonPositiveDepth) {
            throw;
          }
          ++dropped;
          log << "dropped record " << i << ": " << to_string(e.kind()) << ": " << e.what() << '\n';
        }
      }
      log << "estimated " << m.records.size() - dropped << " poses, " << dropped << " dropped\n";
    } else if (compare->parsed()) {
      const WilcoxonResult w = compare_reports(read_report_json(report_a), read_report_json(report_b));
      nlohmann::ordered_json j;
      j["pairs"] = w.pairs;
      j["nonzero"] = w.nonzero;
      j["w_plus"] = w.w_plus;
      j["w_minus"] = w.w_minus;
      j["p_value"] = w.p_value;
      j["exact"] = w.exact;
      out << j.dump() << '\n';
      if (!opt.out.empty()) {
        ensure_parent(opt.out);
        std::ofstream f(opt.out);
        if (!(f << j.dump(2) << '\n')) fail(ErrorKind::Io, "cannot write " + opt.out);
      }
    }
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return e.kind() == ErrorKind::InvalidArgument || e.kind() == ErrorKind::ConfigOutOfRange ? 1 : 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}

}  // namespace gazekit
