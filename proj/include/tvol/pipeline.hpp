#pragma once

// Batch driver behind the command-line subcommands. Per-subject work runs on
// a worker pool; each subject leaves a mask and a small JSON record under the
// output directory, so an interrupted `infer` resumes where it stopped.

#include <spdlog/spdlog.h>

#include <algorithm>
#include <atomic>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "tvol/cohort.hpp"
#include "tvol/error.hpp"
#include "tvol/inference.hpp"
#include "tvol/metrics.hpp"
#include "tvol/nifti.hpp"
#include "tvol/onnx_model.hpp"
#include "tvol/parallel.hpp"
#include "tvol/phantom.hpp"
#include "tvol/popstats.hpp"
#include "tvol/postprocess.hpp"
#include "tvol/preprocess.hpp"

namespace tvol::pipeline {

namespace fs = std::filesystem;

struct SplitOptions {
  std::optional<fs::path> ids_file;  // one annotated id per line; default: all valid subjects
  cohort::SplitSizes sizes{};
  std::size_t folds = 5;
};

struct StatsOptions {
  popstats::SummaryOptions summary{};
  double bin_width_ml = 2.0;
};

struct PipelineConfig {
  fs::path catalog_root;
  Dims expected_dims = cohort::kDefaultWindowDims;
  cohort::ChannelPatterns patterns{};
  std::optional<fs::path> allowlist_file;
  preprocess::NormalizationSpec normalization{};
  /// "stub:<t>" and "stub3d:<t>" select the built-in threshold model; anything else is a graph file.
  std::string model = "stub:0";
  std::optional<int> slice_axis;
  std::optional<std::string> decision;
  postprocess::MarginPolicy margin{};
  std::size_t workers = 1;
  std::size_t batch_size = 128;
  fs::path output_dir = "out";
  std::uint64_t seed = 42;
  bool compress_masks = true;
  SplitOptions split{};
  StatsOptions stats{};
  std::optional<fs::path> truth_dir;
  std::optional<fs::path> rater_a;
  std::optional<fs::path> rater_b;

  bool stub_model() const { return model.rfind("stub:", 0) == 0 || model.rfind("stub3d:", 0) == 0; }
};

// ---------------------------------------------------------------------------
// Config file

namespace detail {

inline fs::path resolve(const fs::path& base, const std::string& p) {
  const fs::path path(p);
  return path.is_absolute() || base.empty() ? path : base / path;
}

inline cohort::Channel channel_from_string(const std::string& s) {
  for (cohort::Channel c : cohort::kChannels)
    if (cohort::to_string(c) == s) return c;
  throw Error(ErrorKind::InvalidConfig, "unknown channel '" + s + "' (expected water, fat, in_phase)");
}

template <typename T>
T get_or(const nlohmann::json& j, const char* key, T def) {
  return j.contains(key) ? j.at(key).get<T>() : def;
}

}  // namespace detail

/// Relative paths in `j` resolve against `base_dir` (the config file's directory).
inline PipelineConfig config_from_json(const nlohmann::json& j, const fs::path& base_dir = {}) {
  PipelineConfig c;
  try {
    if (!j.is_object()) throw Error(ErrorKind::InvalidConfig, "config must be a JSON object");
    static const std::set<std::string> known{
        "catalog_root", "expected_dims", "channel_patterns", "allowlist", "normalization", "model",
        "slice_axis",   "decision",      "margin_faces",     "workers",   "batch_size",    "output_dir",
        "seed",         "compress_masks", "split",           "stats",     "truth_dir",     "rater_a",
        "rater_b"};
    for (const auto& [k, v] : j.items())
      if (!known.count(k)) throw Error(ErrorKind::InvalidConfig, "unknown config key '" + k + "'");

    if (j.contains("catalog_root")) c.catalog_root = detail::resolve(base_dir, j["catalog_root"].get<std::string>());
    if (j.contains("expected_dims")) c.expected_dims = j["expected_dims"].get<Dims>();
    if (j.contains("channel_patterns")) {
      for (const auto& [k, v] : j["channel_patterns"].items())
        c.patterns[detail::channel_from_string(k)] = v.get<std::string>();
    }
    if (j.contains("allowlist")) c.allowlist_file = detail::resolve(base_dir, j["allowlist"].get<std::string>());
    if (j.contains("normalization")) {
      const auto& n = j["normalization"];
      c.normalization.mean = detail::get_or(n, "mean", c.normalization.mean);
      c.normalization.std = detail::get_or(n, "std", c.normalization.std);
    }
    if (j.contains("model")) {
      c.model = j["model"].get<std::string>();
      if (!c.stub_model()) c.model = detail::resolve(base_dir, c.model).string();
    }
    if (j.contains("slice_axis")) c.slice_axis = j["slice_axis"].get<int>();
    if (j.contains("decision")) c.decision = j["decision"].get<std::string>();
    if (j.contains("margin_faces")) {
      c.margin.faces.clear();
      for (const auto& f : j["margin_faces"]) c.margin.faces.push_back(face_from_string(f.get<std::string>()));
    }
    c.workers = detail::get_or<std::size_t>(j, "workers", c.workers);
    c.batch_size = detail::get_or<std::size_t>(j, "batch_size", c.batch_size);
    if (j.contains("output_dir")) c.output_dir = detail::resolve(base_dir, j["output_dir"].get<std::string>());
    else c.output_dir = detail::resolve(base_dir, c.output_dir.string());
    c.seed = detail::get_or<std::uint64_t>(j, "seed", c.seed);
    c.compress_masks = detail::get_or(j, "compress_masks", c.compress_masks);
    if (j.contains("split")) {
      const auto& s = j["split"];
      if (s.contains("ids_file")) c.split.ids_file = detail::resolve(base_dir, s["ids_file"].get<std::string>());
      c.split.sizes.train = detail::get_or(s, "train", c.split.sizes.train);
      c.split.sizes.test = detail::get_or(s, "test", c.split.sizes.test);
      c.split.sizes.rt = detail::get_or(s, "rt", c.split.sizes.rt);
      c.split.folds = detail::get_or(s, "folds", c.split.folds);
    }
    if (j.contains("stats")) {
      const auto& s = j["stats"];
      c.stats.summary.include_flagged = detail::get_or(s, "include_flagged", false);
      c.stats.summary.inclusive_bounds = detail::get_or(s, "inclusive_bounds", false);
      c.stats.bin_width_ml = detail::get_or(s, "bin_width_ml", c.stats.bin_width_ml);
    }
    if (j.contains("truth_dir")) c.truth_dir = detail::resolve(base_dir, j["truth_dir"].get<std::string>());
    if (j.contains("rater_a")) c.rater_a = detail::resolve(base_dir, j["rater_a"].get<std::string>());
    if (j.contains("rater_b")) c.rater_b = detail::resolve(base_dir, j["rater_b"].get<std::string>());
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::InvalidConfig, std::string("config: ") + e.what());
  }
  if (c.workers < 1) throw Error(ErrorKind::InvalidConfig, "workers must be >= 1");
  if (c.batch_size < 1) throw Error(ErrorKind::InvalidConfig, "batch_size must be >= 1");
  if (c.slice_axis && (*c.slice_axis < 0 || *c.slice_axis > 2))
    throw Error(ErrorKind::InvalidConfig, "slice_axis must be 0, 1 or 2");
  if (!(c.stats.bin_width_ml > 0.0)) throw Error(ErrorKind::InvalidConfig, "stats.bin_width_ml must be > 0");
  c.normalization.validate();
  c.margin.validate();
  return c;
}

inline PipelineConfig load_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::IoFailure, "cannot read config " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::InvalidConfig, path.string() + ": " + e.what());
  }
  return config_from_json(j, path.parent_path());
}

enum class Command { Scan, Split, Infer, Evaluate, Agreement, Stats };

/// Paths the subcommand reads must exist before any work starts.
inline void validate_for(const PipelineConfig& c, Command cmd) {
  auto need = [](const std::optional<fs::path>& p, const std::string& what) {
    if (!p || p->empty()) throw Error(ErrorKind::InvalidConfig, what + " is not set");
    if (!fs::exists(*p)) throw Error(ErrorKind::InvalidConfig, what + " does not exist: " + p->string());
  };
  const bool uses_catalog = cmd == Command::Scan || cmd == Command::Infer ||
                            (cmd == Command::Split && !c.split.ids_file);
  if (uses_catalog) {
    need(c.catalog_root.empty() ? std::nullopt : std::optional<fs::path>(c.catalog_root), "catalog_root");
    if (c.allowlist_file) need(c.allowlist_file, "allowlist");
  }
  if (cmd == Command::Split && c.split.ids_file) need(c.split.ids_file, "split.ids_file");
  if (cmd == Command::Infer && !c.stub_model()) need(fs::path(c.model), "model");
  if (cmd == Command::Evaluate) need(c.truth_dir, "truth_dir");
  if (cmd == Command::Agreement) {
    need(c.rater_a, "rater_a");
    need(c.rater_b, "rater_b");
  }
}

// ---------------------------------------------------------------------------
// Output layout

struct OutputLayout {
  fs::path root;
  fs::path masks() const { return root / "masks"; }
  fs::path records() const { return root / "records"; }
  fs::path catalog_json() const { return root / "catalog.json"; }
  fs::path splits_json() const { return root / "splits.json"; }
  fs::path volumes_csv() const { return root / "volumes.csv"; }
  fs::path errors_jsonl() const { return root / "errors.jsonl"; }
  fs::path dice_csv() const { return root / "dice.csv"; }
  fs::path agreement_csv() const { return root / "agreement.csv"; }
  fs::path summary_json() const { return root / "summary.json"; }
  fs::path summary_csv() const { return root / "summary.csv"; }
  fs::path histogram_csv() const { return root / "histogram.csv"; }
  fs::path histogram_all_csv() const { return root / "histogram_with_flagged.csv"; }
  fs::path mask_path(const std::string& id, bool compressed) const {
    return masks() / (id + (compressed ? ".nii.gz" : ".nii"));
  }
  fs::path record_path(const std::string& id) const { return records() / (id + ".json"); }
};

/// Write to a sibling temp file, then rename over the target.
inline void write_atomic(const fs::path& path, const std::string& text) {
  fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorKind::IoFailure, "cannot write " + tmp.string());
    out << text;
    if (!out.flush()) throw Error(ErrorKind::IoFailure, "short write to " + tmp.string());
  }
  fs::rename(tmp, path);
}

inline std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::IoFailure, "cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// ---------------------------------------------------------------------------
// scan

inline cohort::ScanOptions scan_options(const PipelineConfig& c) {
  cohort::ScanOptions o;
  o.expected_dims = c.expected_dims;
  o.patterns = c.patterns;
  if (c.allowlist_file) o.allowlist = cohort::read_id_list(*c.allowlist_file);
  o.workers = c.workers;
  return o;
}

inline nlohmann::ordered_json catalog_json(const std::vector<cohort::SubjectRecord>& records) {
  const auto counts = cohort::count(records);
  nlohmann::ordered_json j;
  j["total"] = counts.total;
  j["valid"] = counts.valid;
  nlohmann::ordered_json ex;
  for (const auto& [kind, n] : counts.excluded) ex[cohort::to_string(kind)] = n;
  j["excluded"] = ex;
  nlohmann::ordered_json subjects = nlohmann::ordered_json::array();
  for (const auto& r : records) {
    nlohmann::ordered_json s;
    s["subject_id"] = r.subject_id;
    s["status"] = r.valid() ? "Valid" : cohort::to_string(r.exclusion->kind);
    if (!r.valid()) s["detail"] = r.exclusion->detail;
    subjects.push_back(s);
  }
  j["subjects"] = subjects;
  return j;
}

inline std::vector<cohort::SubjectRecord> run_scan(const PipelineConfig& c) {
  validate_for(c, Command::Scan);
  auto records = cohort::scan_catalog(c.catalog_root, scan_options(c));
  write_atomic(OutputLayout{c.output_dir}.catalog_json(), catalog_json(records).dump(2) + "\n");
  return records;
}

// ---------------------------------------------------------------------------
// split

inline cohort::SplitManifest run_split(const PipelineConfig& c) {
  validate_for(c, Command::Split);
  std::vector<std::string> ids;
  if (c.split.ids_file) {
    const auto set = cohort::read_id_list(*c.split.ids_file);
    ids.assign(set.begin(), set.end());
  } else {
    for (const auto& r : cohort::scan_catalog(c.catalog_root, scan_options(c)))
      if (r.valid()) ids.push_back(r.subject_id);
  }
  auto m = cohort::make_splits(ids, c.split.sizes, c.split.folds, c.seed);
  fs::create_directories(c.output_dir);
  cohort::write_manifest(m, OutputLayout{c.output_dir}.splits_json());
  return m;
}

// ---------------------------------------------------------------------------
// infer

/// Loads the configured model and reconciles it with the config.
inline inference::ModelHandle resolve_model(const PipelineConfig& c) {
  inference::ModelHandle m;
  if (c.stub_model()) {
    const bool volumetric = c.model.rfind("stub3d:", 0) == 0;
    const std::string t = c.model.substr(c.model.find(':') + 1);
    double threshold = 0.0;
    try {
      threshold = parse_real(t);
    } catch (const std::exception&) {
      throw Error(ErrorKind::InvalidConfig, "stub model threshold '" + t + "' is not a number");
    }
    m = inference::stub_threshold_model(threshold, volumetric);
  } else {
    m = onnx::load_model(c.model);
  }
  if (c.slice_axis && *c.slice_axis != m.metadata.slice_axis) {
    if (!c.stub_model())
      spdlog::warn("config slice_axis {} overrides model metadata slice_axis {}", *c.slice_axis, m.metadata.slice_axis);
    m.metadata.slice_axis = *c.slice_axis;
  }
  if (c.decision) {
    m.metadata.decision = inference::parse_decision(*c.decision);
    const bool argmax = std::holds_alternative<inference::ArgmaxTwoClass>(m.metadata.decision);
    if (argmax != (m.output_classes == 2))
      throw Error(ErrorKind::DecisionMismatch, "decision " + *c.decision + " does not fit a model with " +
                                                   std::to_string(m.output_classes) + " output classes");
  }
  const std::string hash = c.normalization.hash();
  if (!m.metadata.normalization_hash.empty() && m.metadata.normalization_hash != hash)
    throw Error(ErrorKind::InvalidConfig, "model expects normalization " + m.metadata.normalization_hash +
                                              " but config normalization hashes to " + hash);
  std::set<std::string> names(m.metadata.channel_order.begin(), m.metadata.channel_order.end());
  for (const auto& n : m.metadata.channel_order) detail::channel_from_string(n);
  if (names.size() != 3) throw Error(ErrorKind::InvalidConfig, "model channel_order must name each channel once");
  return m;
}

/// Reorders the stack so channel k is the model's k-th input channel.
inline cohort::ChannelStack to_model_order(cohort::ChannelStack stack, const inference::ModelMetadata& meta) {
  std::array<VoxelVolume, 3> ordered;
  for (int k = 0; k < 3; ++k)
    ordered[k] = stack.channels[static_cast<int>(detail::channel_from_string(meta.channel_order[k]))];
  stack.channels = std::move(ordered);
  return stack;
}

struct SubjectResult {
  metrics::VolumeReport report;
  std::optional<SegmentationMask> mask;
  std::string error_kind;
  std::string error;
};

/// Load, normalize, predict, threshold, apply the margin rule, measure.
inline SubjectResult segment_subject(const cohort::SubjectRecord& rec, const inference::ModelHandle& model,
                                     const PipelineConfig& c) {
  SubjectResult out;
  out.report.subject_id = rec.subject_id;
  out.report.model_id = model.model_id;
  out.report.normalization_hash = c.normalization.hash();
  try {
    const auto stack = preprocess::normalize(to_model_order(cohort::load_stack(rec), model.metadata), c.normalization);
    const auto pred = model.is_3d()
                          ? inference::predict_volume(model, stack)
                          : inference::predict_subject(model, preprocess::extract_slices(stack, model.metadata.slice_axis),
                                                       c.batch_size);
    const auto flagged = postprocess::apply_margin_rule(inference::to_mask(pred, model.metadata.decision), c.margin);
    out.report = metrics::volume_ml(flagged, rec.subject_id, model.model_id);
    out.report.normalization_hash = c.normalization.hash();
    out.mask = flagged.mask;
  } catch (const Error& e) {
    out.report.failed = true;
    out.error_kind = std::string(to_string(e.kind()));
    out.error = e.what();
  } catch (const std::exception& e) {
    out.report.failed = true;
    out.error_kind = "Unexpected";
    out.error = e.what();
  }
  return out;
}

inline nlohmann::ordered_json record_json(const SubjectResult& r) {
  const auto& v = r.report;
  nlohmann::ordered_json j;
  j["subject_id"] = v.subject_id;
  j["status"] = v.failed ? "failed" : "ok";
  if (!v.failed) {
    j["volume_ml"] = v.volume_ml;
    j["voxel_count"] = v.voxel_count;
    j["voxel_volume_mm3"] = v.voxel_volume_mm3;
    j["margin_flagged"] = v.margin_flagged;
    std::vector<std::string> faces;
    for (Face f : v.touched_faces) faces.push_back(to_string(f));
    j["touched_faces"] = faces;
  } else {
    j["error_kind"] = r.error_kind;
    j["error"] = r.error;
  }
  j["model_id"] = v.model_id;
  j["normalization_hash"] = v.normalization_hash;
  return j;
}

inline SubjectResult record_from_json(const nlohmann::json& j) {
  SubjectResult r;
  auto& v = r.report;
  v.subject_id = j.at("subject_id").get<std::string>();
  v.failed = j.at("status").get<std::string>() != "ok";
  v.model_id = j.at("model_id").get<std::string>();
  v.normalization_hash = j.at("normalization_hash").get<std::string>();
  if (!v.failed) {
    v.volume_ml = j.at("volume_ml").get<double>();
    v.voxel_count = j.at("voxel_count").get<std::size_t>();
    v.voxel_volume_mm3 = j.at("voxel_volume_mm3").get<double>();
    v.margin_flagged = j.at("margin_flagged").get<bool>();
    for (const auto& f : j.at("touched_faces")) v.touched_faces.push_back(face_from_string(f.get<std::string>()));
  } else {
    r.error_kind = j.value("error_kind", "");
    r.error = j.value("error", "");
  }
  return r;
}

inline std::optional<SubjectResult> read_record(const fs::path& path) {
  std::error_code ec;
  if (!fs::exists(path, ec)) return std::nullopt;
  try {
    return record_from_json(nlohmann::json::parse(read_text(path)));
  } catch (const std::exception& e) {
    spdlog::warn("ignoring unreadable record {}: {}", path.string(), e.what());
    return std::nullopt;
  }
}

struct InferOptions {
  bool force = false;
  /// Stop after this many subjects have been processed in this run (0 = no limit).
  std::size_t limit = 0;
};

struct InferSummary {
  std::size_t total = 0;
  std::size_t valid = 0;
  std::size_t processed = 0;
  std::size_t skipped = 0;
  std::size_t failed = 0;
  std::size_t pending = 0;  // valid subjects left without a result (limit reached)
};

inline InferSummary run_infer(const PipelineConfig& c, const InferOptions& opt = {}) {
  validate_for(c, Command::Infer);
  const OutputLayout out{c.output_dir};
  const auto model = resolve_model(c);
  const auto records = cohort::scan_catalog(c.catalog_root, scan_options(c));
  write_atomic(out.catalog_json(), catalog_json(records).dump(2) + "\n");
  fs::create_directories(out.masks());
  fs::create_directories(out.records());

  InferSummary sum;
  sum.total = records.size();
  std::vector<const cohort::SubjectRecord*> todo;
  const std::string norm_hash = c.normalization.hash();
  for (const auto& r : records) {
    if (!r.valid()) continue;
    ++sum.valid;
    if (!opt.force) {
      const auto prev = read_record(out.record_path(r.subject_id));
      if (prev && !prev->report.failed && prev->report.model_id == model.model_id &&
          prev->report.normalization_hash == norm_hash && fs::exists(out.mask_path(r.subject_id, c.compress_masks))) {
        ++sum.skipped;
        continue;
      }
    }
    todo.push_back(&r);
  }
  if (opt.limit > 0 && todo.size() > opt.limit) {
    sum.pending = todo.size() - opt.limit;
    todo.resize(opt.limit);
  }

  std::mutex log_mutex;
  std::atomic<std::size_t> failed{0};
  parallel_for(todo.size(), c.workers, [&](std::size_t i) {
    const auto& rec = *todo[i];
    auto res = segment_subject(rec, model, c);
    if (res.mask) {
      const auto mask_path = out.mask_path(rec.subject_id, c.compress_masks);
      const fs::path tmp = mask_path.string() + ".tmp";
      try {
        nifti::write_nifti(*res.mask, tmp, c.compress_masks);
        fs::rename(tmp, mask_path);
      } catch (const std::exception& e) {
        res.report = metrics::VolumeReport{rec.subject_id, 0.0, 0, 0.0, false, {}, model.model_id, norm_hash, true};
        res.error_kind = std::string(to_string(ErrorKind::IoFailure));
        res.error = e.what();
      }
    }
    write_atomic(out.record_path(rec.subject_id), record_json(res).dump(2) + "\n");
    std::lock_guard lock(log_mutex);
    if (res.report.failed) {
      ++failed;
      spdlog::error("{}: {}", rec.subject_id, res.error);
    } else {
      spdlog::info("{}: {} ml ({} voxels){}", rec.subject_id, format_real(res.report.volume_ml),
                   res.report.voxel_count, res.report.margin_flagged ? ", margin-flagged" : "");
    }
  });
  sum.processed = todo.size();
  sum.failed = failed;

  // Aggregate tables come from the records of currently valid subjects only.
  std::vector<metrics::VolumeReport> reports;
  std::vector<std::string> error_lines;
  for (const auto& r : records) {
    if (!r.valid()) continue;
    const auto rec = read_record(out.record_path(r.subject_id));
    if (!rec) continue;
    reports.push_back(rec->report);
    if (rec->report.failed) {
      nlohmann::ordered_json e;
      e["subject_id"] = rec->report.subject_id;
      e["error_kind"] = rec->error_kind;
      e["error"] = rec->error;
      error_lines.push_back(e.dump());
    }
  }
  write_atomic(out.volumes_csv(), metrics::volumes_csv(reports));
  std::string errors;
  for (const auto& l : error_lines) errors += l + "\n";
  write_atomic(out.errors_jsonl(), errors);
  return sum;
}

// ---------------------------------------------------------------------------
// evaluate / agreement

namespace detail {

/// Subject id to mask file for every .nii / .nii.gz in `dir`.
inline std::map<std::string, fs::path> mask_files(const fs::path& dir) {
  std::map<std::string, fs::path> out;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    std::string name = e.path().filename().string();
    for (const std::string ext : {".nii.gz", ".nii"}) {
      if (name.size() > ext.size() && name.compare(name.size() - ext.size(), ext.size(), ext) == 0) {
        out.emplace(name.substr(0, name.size() - ext.size()), e.path());
        break;
      }
    }
  }
  return out;
}

inline metrics::AgreementReport compare_dirs(const fs::path& dir_a, const fs::path& dir_b, std::size_t workers) {
  const auto a = mask_files(dir_a);
  const auto b = mask_files(dir_b);
  std::vector<std::string> ids;
  std::vector<std::pair<std::string, std::string>> missing;
  for (const auto& [id, p] : a) {
    if (b.count(id))
      ids.push_back(id);
    else
      missing.emplace_back(id, "no mask in " + dir_b.string());
  }
  for (const auto& [id, p] : b)
    if (!a.count(id)) missing.emplace_back(id, "no mask in " + dir_a.string());

  std::vector<std::optional<metrics::MaskPair>> loaded(ids.size());
  std::vector<std::string> load_errors(ids.size());
  parallel_for(ids.size(), workers, [&](std::size_t i) {
    try {
      loaded[i] = metrics::MaskPair{ids[i], nifti::read_mask(a.at(ids[i])), nifti::read_mask(b.at(ids[i]))};
    } catch (const Error& e) {
      load_errors[i] = e.what();
    }
  });
  std::vector<metrics::MaskPair> pairs;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (loaded[i])
      pairs.push_back(std::move(*loaded[i]));
    else
      missing.emplace_back(ids[i], load_errors[i]);
  }
  metrics::AgreementReport rep;
  if (!pairs.empty()) rep = metrics::agreement(std::move(pairs));
  rep.skipped.insert(rep.skipped.end(), missing.begin(), missing.end());
  return rep;
}

}  // namespace detail

/// Dice of each inferred mask against the reference mask of the same subject.
inline metrics::AgreementReport run_evaluate(const PipelineConfig& c) {
  validate_for(c, Command::Evaluate);
  const OutputLayout out{c.output_dir};
  if (!fs::is_directory(out.masks()))
    throw Error(ErrorKind::PreconditionViolation, "no masks under " + out.masks().string() + "; run infer first");
  auto rep = detail::compare_dirs(out.masks(), *c.truth_dir, c.workers);
  write_atomic(out.dice_csv(), metrics::agreement_csv(rep));
  return rep;
}

inline metrics::AgreementReport run_agreement(const PipelineConfig& c) {
  validate_for(c, Command::Agreement);
  auto rep = detail::compare_dirs(*c.rater_a, *c.rater_b, c.workers);
  write_atomic(OutputLayout{c.output_dir}.agreement_csv(), metrics::agreement_csv(rep));
  return rep;
}

// ---------------------------------------------------------------------------
// stats

inline popstats::PopulationSummary run_stats(const PipelineConfig& c) {
  validate_for(c, Command::Stats);
  const OutputLayout out{c.output_dir};
  std::vector<metrics::VolumeReport> reports;
  for (auto& r : metrics::parse_volumes_csv(read_text(out.volumes_csv())))
    if (!r.failed) reports.push_back(std::move(r));
  const auto s = popstats::summarize(reports, c.stats.summary);
  write_atomic(out.summary_json(), popstats::to_json(s, c.stats.summary).dump(2) + "\n");
  write_atomic(out.summary_csv(), popstats::summary_csv(s));
  write_atomic(out.histogram_csv(),
               popstats::histogram_csv(popstats::histogram(reports, c.stats.bin_width_ml, false)));
  write_atomic(out.histogram_all_csv(),
               popstats::histogram_csv(popstats::histogram(reports, c.stats.bin_width_ml, true)));
  return s;
}

// ---------------------------------------------------------------------------
// phantom

/// Writes a phantom cohort plus a config that runs the stub model on it.
inline phantom::Layout run_phantom(const phantom::CohortDesign& design, const fs::path& root,
                                   const std::vector<std::pair<std::size_t, phantom::Defect>>& defects = {}) {
  auto subjects = phantom::design_cohort(design);
  for (const auto& [i, d] : defects) {
    if (i >= subjects.size()) throw Error(ErrorKind::InvalidConfig, "defect index out of range");
    subjects[i].defect = d;
  }
  const auto layout = phantom::write_cohort(subjects, root);
  nlohmann::ordered_json cfg;
  cfg["catalog_root"] = "catalog";
  cfg["expected_dims"] = design.dims;
  cfg["model"] = "stub:0";
  cfg["truth_dir"] = "truth";
  cfg["output_dir"] = "out";
  cfg["workers"] = 1;
  cfg["seed"] = design.seed;
  write_atomic(root / "pipeline.json", cfg.dump(2) + "\n");
  return layout;
}

}  // namespace tvol::pipeline
