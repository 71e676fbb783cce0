#pragma once

#include <fnmatch.h>

#include <algorithm>
#include <array>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"
#include "tvol/error.hpp"
#include "tvol/geometry.hpp"
#include "tvol/nifti.hpp"
#include "tvol/parallel.hpp"

namespace tvol::cohort {

/// DIXON channels used by the pipeline, in model input order.
enum class Channel : int { Water = 0, Fat = 1, InPhase = 2 };

inline constexpr std::array<Channel, 3> kChannels{Channel::Water, Channel::Fat, Channel::InPhase};

inline std::string to_string(Channel c) {
  switch (c) {
    case Channel::Water: return "water";
    case Channel::Fat: return "fat";
    case Channel::InPhase: return "in_phase";
  }
  return "?";
}

/// Window shape of the pelvic DIXON block.
inline constexpr Dims kDefaultWindowDims{224, 162, 72};

/// fnmatch patterns applied to file names inside a subject directory.
struct ChannelPatterns {
  std::array<std::string, 3> patterns{"*_water.nii*", "*_fat.nii*", "*_in_phase.nii*"};

  const std::string& operator[](Channel c) const { return patterns[static_cast<int>(c)]; }
  std::string& operator[](Channel c) { return patterns[static_cast<int>(c)]; }
};

enum class ExclusionKind { MissingAllData, MissingWindowFile, DimensionMismatch };

inline std::string to_string(ExclusionKind k) {
  switch (k) {
    case ExclusionKind::MissingAllData: return "MissingAllData";
    case ExclusionKind::MissingWindowFile: return "MissingWindowFile";
    case ExclusionKind::DimensionMismatch: return "DimensionMismatch";
  }
  return "?";
}

struct ExclusionReason {
  ExclusionKind kind;
  std::string detail;
};

struct SubjectRecord {
  std::string subject_id;
  std::map<Channel, std::filesystem::path> channel_paths;
  std::optional<ExclusionReason> exclusion;

  bool valid() const { return !exclusion.has_value(); }
};

struct CatalogCounts {
  std::size_t total = 0;
  std::size_t valid = 0;
  std::map<ExclusionKind, std::size_t> excluded{
      {ExclusionKind::MissingAllData, 0}, {ExclusionKind::MissingWindowFile, 0}, {ExclusionKind::DimensionMismatch, 0}};
};

inline CatalogCounts count(const std::vector<SubjectRecord>& records) {
  CatalogCounts c;
  c.total = records.size();
  for (const auto& r : records) {
    if (r.valid())
      ++c.valid;
    else
      ++c.excluded[r.exclusion->kind];
  }
  return c;
}

struct ScanOptions {
  Dims expected_dims = kDefaultWindowDims;
  ChannelPatterns patterns{};
  /// Upstream cohort filter (e.g. sex); subjects not listed are not scanned at all.
  std::optional<std::set<std::string>> allowlist;
  std::size_t workers = 1;
};

/// Classifies one subject directory. Only headers are read.
inline SubjectRecord classify_subject(const std::filesystem::path& dir, const ScanOptions& options) {
  SubjectRecord rec;
  rec.subject_id = dir.filename().string();

  std::vector<std::string> names;
  for (const auto& entry : std::filesystem::directory_iterator(dir))
    if (entry.is_regular_file()) names.push_back(entry.path().filename().string());
  std::sort(names.begin(), names.end());

  std::vector<std::string> missing;
  for (Channel c : kChannels) {
    const auto it = std::find_if(names.begin(), names.end(), [&](const std::string& n) {
      return fnmatch(options.patterns[c].c_str(), n.c_str(), 0) == 0;
    });
    if (it == names.end())
      missing.push_back(to_string(c));
    else
      rec.channel_paths[c] = dir / *it;
  }

  if (rec.channel_paths.empty()) {
    rec.exclusion = ExclusionReason{ExclusionKind::MissingAllData, "no channel files present"};
    return rec;
  }
  if (!missing.empty()) {
    std::string detail = "missing:";
    for (const auto& m : missing) detail += " " + m;
    rec.exclusion = ExclusionReason{ExclusionKind::MissingWindowFile, detail};
    return rec;
  }

  for (Channel c : kChannels) {
    nifti::HeaderInfo info;
    try {
      info = nifti::read_header(rec.channel_paths[c]);
    } catch (const Error& e) {
      // An unreadable header is as good as a missing window file.
      rec.exclusion = ExclusionReason{ExclusionKind::MissingWindowFile, to_string(c) + " unreadable: " + e.what()};
      return rec;
    }
    const Dims& d = info.geometry.dims;
    if (d != options.expected_dims) {
      rec.exclusion = ExclusionReason{
          ExclusionKind::DimensionMismatch,
          to_string(c) + " dims (" + std::to_string(d[0]) + "," + std::to_string(d[1]) + "," + std::to_string(d[2]) +
              ")"};
      return rec;
    }
  }
  return rec;
}

/// One record per subject directory under `root`, sorted by subject id.
/// Per-subject problems become exclusions; only an unreadable root throws.
inline std::vector<SubjectRecord> scan_catalog(const std::filesystem::path& root, const ScanOptions& options = {}) {
  std::error_code ec;
  if (!std::filesystem::is_directory(root, ec))
    throw Error(ErrorKind::IoFailure, "catalog root is not a readable directory: " + root.string());

  std::vector<std::filesystem::path> dirs;
  try {
    for (const auto& entry : std::filesystem::directory_iterator(root)) {
      if (!entry.is_directory()) continue;
      const std::string id = entry.path().filename().string();
      if (options.allowlist && !options.allowlist->contains(id)) continue;
      dirs.push_back(entry.path());
    }
  } catch (const std::filesystem::filesystem_error& e) {
    throw Error(ErrorKind::IoFailure, e.what());
  }
  std::sort(dirs.begin(), dirs.end());

  std::vector<SubjectRecord> records(dirs.size());
  parallel_for(dirs.size(), options.workers, [&](std::size_t i) {
    try {
      records[i] = classify_subject(dirs[i], options);
    } catch (const std::filesystem::filesystem_error& e) {
      records[i].subject_id = dirs[i].filename().string();
      records[i].exclusion = ExclusionReason{ExclusionKind::MissingAllData, e.what()};
    }
  });
  return records;
}

/// One id per line; blank lines and '#' comments ignored.
inline std::set<std::string> read_id_list(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::IoFailure, "cannot read id list " + path.string());
  std::set<std::string> ids;
  std::string line;
  while (std::getline(in, line)) {
    const auto b = line.find_first_not_of(" \t\r");
    if (b == std::string::npos || line[b] == '#') continue;
    const auto e = line.find_last_not_of(" \t\r");
    ids.insert(line.substr(b, e - b + 1));
  }
  return ids;
}

/// Water, fat and in-phase volumes of one subject on a shared grid.
struct ChannelStack {
  std::string subject_id;
  std::array<VoxelVolume, 3> channels;

  const VolumeGeometry& geometry() const { return channels[0].geometry(); }
  const VoxelVolume& operator[](Channel c) const { return channels[static_cast<int>(c)]; }
};

inline ChannelStack make_stack(std::string subject_id, std::array<VoxelVolume, 3> channels) {
  for (int c = 1; c < 3; ++c) {
    if (!channels[c].geometry().same_grid(channels[0].geometry()))
      throw Error(ErrorKind::GeometryMismatch, subject_id + ": " + to_string(static_cast<Channel>(c)) +
                                                   " grid differs from water channel");
  }
  return ChannelStack{std::move(subject_id), std::move(channels)};
}

inline ChannelStack load_stack(const SubjectRecord& record) {
  if (!record.valid())
    throw Error(ErrorKind::PreconditionViolation, record.subject_id + " is excluded (" +
                                                      to_string(record.exclusion->kind) + ")");
  std::array<VoxelVolume, 3> channels;
  for (Channel c : kChannels) {
    const auto it = record.channel_paths.find(c);
    if (it == record.channel_paths.end())
      throw Error(ErrorKind::PreconditionViolation, record.subject_id + " has no " + to_string(c) + " path");
    channels[static_cast<int>(c)] = nifti::read_nifti(it->second);
  }
  return make_stack(record.subject_id, std::move(channels));
}

// ---------------------------------------------------------------------------
// Splits

struct SplitSizes {
  std::size_t train = 313;
  std::size_t test = 37;
  std::size_t rt = 12;
};

struct SplitManifest {
  std::uint64_t seed = 0;
  std::vector<std::string> train_ids;
  std::vector<std::string> test_ids;
  std::vector<std::string> rt_ids;
  std::vector<std::vector<std::string>> folds;

  bool operator==(const SplitManifest&) const = default;
};

namespace detail {

// Uniform draw in [0, bound) by rejection, so the sequence depends only on the
// mt19937_64 stream and not on a standard library's distribution code.
inline std::uint64_t bounded(std::mt19937_64& rng, std::uint64_t bound) {
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                              std::numeric_limits<std::uint64_t>::max() % bound;
  for (;;) {
    const std::uint64_t r = rng();
    if (r < limit) return r % bound;
  }
}

template <typename T>
void shuffle(std::vector<T>& v, std::mt19937_64& rng) {
  for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[bounded(rng, i)]);
}

}  // namespace detail

/// Seeded train/test split, RT subset of test, and round-robin folds over the
/// shuffled training ids. A pure function of (id set, sizes, n_folds, seed).
inline SplitManifest make_splits(const std::vector<std::string>& annotated_ids, const SplitSizes& sizes,
                                 std::size_t n_folds, std::uint64_t seed) {
  std::vector<std::string> ids = annotated_ids;
  std::sort(ids.begin(), ids.end());
  if (std::adjacent_find(ids.begin(), ids.end()) != ids.end())
    throw Error(ErrorKind::SizeMismatch, "annotated ids contain duplicates");
  if (sizes.train + sizes.test != ids.size())
    throw Error(ErrorKind::SizeMismatch, "train + test = " + std::to_string(sizes.train + sizes.test) +
                                             " but " + std::to_string(ids.size()) + " ids given");
  if (sizes.rt > sizes.test) throw Error(ErrorKind::SizeMismatch, "rt size exceeds test size");
  if (n_folds < 2) throw Error(ErrorKind::SizeMismatch, "need at least 2 folds");
  if (n_folds > sizes.train) throw Error(ErrorKind::SizeMismatch, "more folds than training ids");

  std::mt19937_64 rng(seed);
  detail::shuffle(ids, rng);

  SplitManifest m;
  m.seed = seed;
  m.test_ids.assign(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(sizes.test));
  std::vector<std::string> train(ids.begin() + static_cast<std::ptrdiff_t>(sizes.test), ids.end());

  std::vector<std::string> rt_pool = m.test_ids;
  detail::shuffle(rt_pool, rng);
  m.rt_ids.assign(rt_pool.begin(), rt_pool.begin() + static_cast<std::ptrdiff_t>(sizes.rt));

  m.folds.assign(n_folds, {});
  for (std::size_t i = 0; i < train.size(); ++i) m.folds[i % n_folds].push_back(train[i]);

  m.train_ids = std::move(train);
  std::sort(m.train_ids.begin(), m.train_ids.end());
  std::sort(m.test_ids.begin(), m.test_ids.end());
  std::sort(m.rt_ids.begin(), m.rt_ids.end());
  for (auto& f : m.folds) std::sort(f.begin(), f.end());
  return m;
}

inline nlohmann::ordered_json to_json(const SplitManifest& m) {
  nlohmann::ordered_json j;
  j["seed"] = m.seed;
  j["train"] = m.train_ids;
  j["test"] = m.test_ids;
  j["rt"] = m.rt_ids;
  j["folds"] = m.folds;
  return j;
}

inline SplitManifest manifest_from_json(const nlohmann::json& j) {
  SplitManifest m;
  try {
    m.seed = j.at("seed").get<std::uint64_t>();
    m.train_ids = j.at("train").get<std::vector<std::string>>();
    m.test_ids = j.at("test").get<std::vector<std::string>>();
    m.rt_ids = j.at("rt").get<std::vector<std::string>>();
    m.folds = j.at("folds").get<std::vector<std::vector<std::string>>>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::InvalidConfig, std::string("manifest: ") + e.what());
  }
  return m;
}

inline void write_manifest(const SplitManifest& m, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(ErrorKind::IoFailure, "cannot write " + path.string());
  out << to_json(m).dump(2) << '\n';
}

inline SplitManifest read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::IoFailure, "cannot read " + path.string());
  try {
    return manifest_from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorKind::InvalidConfig, path.string() + ": " + e.what());
  }
}

}  // namespace tvol::cohort
