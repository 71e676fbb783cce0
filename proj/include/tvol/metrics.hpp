#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numeric>
#include <string>
#include <string_view>
#include <vector>

#include "tvol/error.hpp"
#include "tvol/format.hpp"
#include "tvol/geometry.hpp"
#include "tvol/postprocess.hpp"

namespace tvol::metrics {

struct DiceResult {
  double value = 0.0;
  std::size_t n_a = 0;
  std::size_t n_b = 0;
  std::size_t n_intersection = 0;
};

/// 2|A n B| / (|A| + |B|). Two empty masks have no defined overlap and raise BothEmpty.
inline DiceResult dice(const SegmentationMask& a, const SegmentationMask& b) {
  if (a.dims() != b.dims()) throw Error(ErrorKind::GeometryMismatch, "dice: masks have different dims");
  DiceResult r;
  const auto& da = a.data();
  const auto& db = b.data();
  for (std::size_t i = 0; i < da.size(); ++i) {
    const bool in_a = da[i] != 0;
    const bool in_b = db[i] != 0;
    r.n_a += in_a;
    r.n_b += in_b;
    r.n_intersection += in_a && in_b;
  }
  if (r.n_a + r.n_b == 0) throw Error(ErrorKind::BothEmpty, "dice undefined for two empty masks");
  r.value = 2.0 * static_cast<double>(r.n_intersection) / static_cast<double>(r.n_a + r.n_b);
  return r;
}

/// Per-subject volumetry row. volume_ml = voxel_count * voxel_volume_mm3 / 1000.
struct VolumeReport {
  std::string subject_id;
  double volume_ml = 0.0;
  std::size_t voxel_count = 0;
  double voxel_volume_mm3 = 0.0;
  bool margin_flagged = false;
  std::vector<Face> touched_faces;
  std::string model_id;
  std::string normalization_hash;
  bool failed = false;
};

inline VolumeReport volume_ml(const SegmentationMask& mask) {
  VolumeReport r;
  r.voxel_count = mask.foreground_count();
  r.voxel_volume_mm3 = voxel_volume_mm3(mask.geometry());
  r.volume_ml = static_cast<double>(r.voxel_count) * r.voxel_volume_mm3 / 1000.0;
  return r;
}

inline VolumeReport volume_ml(const postprocess::FlaggedMask& flagged, std::string subject_id, std::string model_id) {
  VolumeReport r = volume_ml(flagged.mask);
  r.subject_id = std::move(subject_id);
  r.model_id = std::move(model_id);
  r.margin_flagged = flagged.margin_flagged;
  r.touched_faces = flagged.touched_faces;
  return r;
}

inline double median(std::vector<double> values) {
  if (values.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(values.begin(), values.end());
  const std::size_t m = values.size() / 2;
  return values.size() % 2 ? values[m] : 0.5 * (values[m - 1] + values[m]);
}

inline double mean(const std::vector<double>& values) {
  if (values.empty()) return std::numeric_limits<double>::quiet_NaN();
  return std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
}

struct MaskPair {
  std::string subject_id;
  SegmentationMask a;
  SegmentationMask b;
};

struct AgreementReport {
  std::vector<std::pair<std::string, DiceResult>> pairs;
  std::vector<std::pair<std::string, std::string>> skipped;  // (subject_id, reason)
  double median = std::numeric_limits<double>::quiet_NaN();
  double mean = std::numeric_limits<double>::quiet_NaN();
};

/// Dice per subject plus median and mean over the pairs that have one.
/// Pairs whose dice is undefined are listed in `skipped` with the reason.
inline AgreementReport agreement(std::vector<MaskPair> inputs) {
  if (inputs.empty()) throw Error(ErrorKind::PreconditionViolation, "agreement needs at least one pair");
  std::sort(inputs.begin(), inputs.end(),
            [](const MaskPair& x, const MaskPair& y) { return x.subject_id < y.subject_id; });
  AgreementReport rep;
  std::vector<double> values;
  for (const auto& p : inputs) {
    try {
      const DiceResult d = dice(p.a, p.b);
      rep.pairs.emplace_back(p.subject_id, d);
      values.push_back(d.value);
    } catch (const Error& e) {
      rep.skipped.emplace_back(p.subject_id, e.what());
    }
  }
  rep.median = median(values);
  rep.mean = mean(values);
  return rep;
}

inline constexpr std::string_view kVolumesHeader =
    "subject_id,volume_ml,voxel_count,voxel_volume_mm3,margin_flagged,touched_faces,model_id,normalization,status";

inline std::string volumes_csv_row(const VolumeReport& r) {
  std::string row = csv_field(r.subject_id) + ",";
  if (r.failed) return row + ",,,,," + csv_field(r.model_id) + "," + r.normalization_hash + ",failed";
  row += format_real(r.volume_ml) + "," + std::to_string(r.voxel_count) + "," + format_real(r.voxel_volume_mm3) + ",";
  row += std::string(r.margin_flagged ? "1" : "0") + "," + postprocess::join_faces(r.touched_faces) + ",";
  row += csv_field(r.model_id) + "," + r.normalization_hash + ",ok";
  return row;
}

/// Rows are written in subject-id order regardless of input order.
inline std::string volumes_csv(std::vector<VolumeReport> reports) {
  std::sort(reports.begin(), reports.end(),
            [](const VolumeReport& a, const VolumeReport& b) { return a.subject_id < b.subject_id; });
  std::string out = std::string(kVolumesHeader) + "\n";
  for (const auto& r : reports) out += volumes_csv_row(r) + "\n";
  return out;
}

/// Parses a volumes CSV written by volumes_csv.
inline std::vector<VolumeReport> parse_volumes_csv(const std::string& text) {
  std::vector<VolumeReport> out;
  const auto lines = split_lines(text);
  if (lines.empty() || lines[0] != kVolumesHeader)
    throw Error(ErrorKind::InvalidConfig, "volumes table has an unexpected header");
  for (std::size_t i = 1; i < lines.size(); ++i) {
    if (lines[i].empty()) continue;
    const auto f = split_csv_row(lines[i]);
    if (f.size() != 9) throw Error(ErrorKind::InvalidConfig, "volumes row " + std::to_string(i) + " has wrong arity");
    VolumeReport r;
    r.subject_id = f[0];
    r.model_id = f[6];
    r.normalization_hash = f[7];
    r.failed = f[8] != "ok";
    if (!r.failed) {
      r.volume_ml = parse_real(f[1]);
      r.voxel_count = static_cast<std::size_t>(std::stoull(f[2]));
      r.voxel_volume_mm3 = parse_real(f[3]);
      r.margin_flagged = f[4] == "1";
      if (!f[5].empty())
        for (const auto& face : split(f[5], ';')) r.touched_faces.push_back(face_from_string(face));
    }
    out.push_back(std::move(r));
  }
  return out;
}

inline std::string agreement_csv(const AgreementReport& rep) {
  std::string out = "subject_id,dice,n_a,n_b,n_intersection,status\n";
  std::vector<std::string> rows;
  for (const auto& [id, d] : rep.pairs)
    rows.push_back(csv_field(id) + "," + format_real(d.value) + "," + std::to_string(d.n_a) + "," +
                   std::to_string(d.n_b) + "," + std::to_string(d.n_intersection) + ",ok");
  for (const auto& [id, reason] : rep.skipped) rows.push_back(csv_field(id) + ",,,,," + csv_field("skipped: " + reason));
  std::sort(rows.begin(), rows.end());
  for (const auto& r : rows) out += r + "\n";
  const std::string counts = "n=" + std::to_string(rep.pairs.size()) + ";skipped=" + std::to_string(rep.skipped.size());
  out += "summary:median," + format_real(rep.median) + ",,,," + counts + "\n";
  out += "summary:mean," + format_real(rep.mean) + ",,,," + counts + "\n";
  return out;
}

}  // namespace tvol::metrics
