#pragma once

// Synthetic DIXON-like cohorts with analytically known segmentations.
//
// Each subject is a noisy background with one or more bright (water) ellipsoids.
// The ellipsoid voxel list is the ground truth; it is enumerated directly from
// the ellipsoid inequality and never derived from pipeline code.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include "json.hpp"
#include "tvol/cohort.hpp"
#include "tvol/geometry.hpp"
#include "tvol/nifti.hpp"

namespace tvol::phantom {

using Voxel = std::array<std::int64_t, 3>;

struct Ellipsoid {
  std::array<double, 3> center{};
  std::array<double, 3> radii{1, 1, 1};

  bool contains(double x, double y, double z) const {
    const double dx = (x - center[0]) / radii[0];
    const double dy = (y - center[1]) / radii[1];
    const double dz = (z - center[2]) / radii[2];
    return dx * dx + dy * dy + dz * dz <= 1.0;
  }
};

/// Injected catalog problems used to exercise exclusion and failure handling.
enum class Defect { None, EmptyDirectory, MissingFat, WrongDims, CorruptWater };

inline std::string to_string(Defect d) {
  switch (d) {
    case Defect::None: return "none";
    case Defect::EmptyDirectory: return "empty_directory";
    case Defect::MissingFat: return "missing_fat";
    case Defect::WrongDims: return "wrong_dims";
    case Defect::CorruptWater: return "corrupt_water";
  }
  return "?";
}

inline Defect defect_from_string(const std::string& s) {
  for (Defect d : {Defect::None, Defect::EmptyDirectory, Defect::MissingFat, Defect::WrongDims, Defect::CorruptWater})
    if (to_string(d) == s) return d;
  throw Error(ErrorKind::InvalidConfig, "unknown defect '" + s + "'");
}

struct Subject {
  std::string id;
  Dims dims = cohort::kDefaultWindowDims;
  Spacing spacing{2.232, 2.232, 3.0};
  std::vector<Ellipsoid> ellipsoids;
  std::uint64_t noise_seed = 0;
  Defect defect = Defect::None;
};

/// Every in-grid voxel whose centre satisfies some ellipsoid inequality,
/// sorted and unique.
inline std::vector<Voxel> voxel_list(const Subject& s) {
  std::vector<Voxel> out;
  for (const auto& e : s.ellipsoids) {
    std::array<std::int64_t, 3> lo{}, hi{};
    for (int a = 0; a < 3; ++a) {
      lo[a] = std::max<std::int64_t>(0, static_cast<std::int64_t>(std::floor(e.center[a] - e.radii[a])));
      hi[a] = std::min<std::int64_t>(s.dims[a] - 1, static_cast<std::int64_t>(std::ceil(e.center[a] + e.radii[a])));
    }
    for (std::int64_t z = lo[2]; z <= hi[2]; ++z)
      for (std::int64_t y = lo[1]; y <= hi[1]; ++y)
        for (std::int64_t x = lo[0]; x <= hi[0]; ++x)
          if (e.contains(static_cast<double>(x), static_cast<double>(y), static_cast<double>(z))) out.push_back({x, y, z});
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

/// Faces reached by the voxel list, from its coordinate extremes.
inline std::vector<Face> touched_faces(const std::vector<Voxel>& voxels, const Dims& dims) {
  std::vector<Face> faces;
  for (int a = 0; a < 3; ++a) {
    bool lo = false, hi = false;
    for (const auto& v : voxels) {
      lo = lo || v[a] == 0;
      hi = hi || v[a] == dims[a] - 1;
    }
    if (lo) faces.push_back(static_cast<Face>(2 * a));
    if (hi) faces.push_back(static_cast<Face>(2 * a + 1));
  }
  return faces;
}

inline SegmentationMask truth_mask(const Subject& s) {
  SegmentationMask m(VolumeGeometry(s.dims, s.spacing), 0);
  for (const auto& v : voxel_list(s)) m(v[0], v[1], v[2]) = 1;
  return m;
}

namespace detail {

inline double unit(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

}  // namespace detail

/// Intensity model per channel (background level, foreground level); uniform
/// noise of +/- 20 keeps background and foreground ranges disjoint.
inline constexpr std::array<std::array<double, 2>, 3> kLevels{{{80.0, 800.0}, {600.0, 120.0}, {680.0, 920.0}}};
inline constexpr double kNoise = 20.0;

inline cohort::ChannelStack render(const Subject& s) {
  const VolumeGeometry g(s.dims, s.spacing);
  SegmentationMask truth = truth_mask(s);
  std::mt19937_64 rng(s.noise_seed);
  std::array<VoxelVolume, 3> channels;
  for (int c = 0; c < 3; ++c) {
    std::vector<float> v(g.voxel_count());
    for (std::size_t i = 0; i < v.size(); ++i) {
      const double level = kLevels[c][truth.data()[i] ? 1 : 0];
      v[i] = static_cast<float>(std::round(level + (2.0 * detail::unit(rng) - 1.0) * kNoise));
    }
    channels[c] = VoxelVolume(g, std::move(v));
    channels[c].stored_type = Datatype::Int16;
  }
  return cohort::ChannelStack{s.id, std::move(channels)};
}

struct CohortDesign {
  std::size_t subjects = 6;
  Dims dims = cohort::kDefaultWindowDims;
  std::uint64_t seed = 1;
  /// Every k-th subject (k > 0) gets one ellipsoid pushed against a face; faces cycle.
  std::size_t margin_every = 3;
  std::string id_prefix = "sub";
};

/// Two ellipsoids per subject (left and right), spacing cycling over three
/// scanner-like settings, a subset designed to reach the window boundary.
inline std::vector<Subject> design_cohort(const CohortDesign& d) {
  // float32 values, as NIfTI pixdim stores them, so the manifest equals what is read back
  static const std::array<std::array<float, 3>, 3> spacings{
      {{2.232f, 2.232f, 3.0f}, {2.0f, 2.0f, 3.0f}, {1.5f, 1.5f, 2.5f}}};
  std::mt19937_64 rng(d.seed);
  std::vector<Subject> out;
  std::size_t face_cursor = 0;
  for (std::size_t i = 0; i < d.subjects; ++i) {
    Subject s;
    char id[64];
    std::snprintf(id, sizeof id, "%s%04zu", d.id_prefix.c_str(), i + 1);
    s.id = id;
    s.dims = d.dims;
    for (int a = 0; a < 3; ++a) s.spacing[a] = spacings[i % spacings.size()][a];
    s.noise_seed = rng();

    const double sx = static_cast<double>(d.dims[0]);
    const double sy = static_cast<double>(d.dims[1]);
    const double sz = static_cast<double>(d.dims[2]);
    const double scale = std::min({sx / 224.0, sy / 162.0, sz / 72.0});
    for (int side = 0; side < 2; ++side) {
      Ellipsoid e;
      e.radii = {std::max(1.5, (6.0 + 4.0 * detail::unit(rng)) * scale), std::max(1.5, (5.0 + 4.0 * detail::unit(rng)) * scale),
                 std::max(1.5, (3.0 + 2.0 * detail::unit(rng)) * scale)};
      e.center = {sx * (side == 0 ? 0.38 : 0.62) + (detail::unit(rng) - 0.5) * 4.0 * scale,
                  sy * 0.5 + (detail::unit(rng) - 0.5) * 6.0 * scale,
                  sz * (side == 0 ? 0.45 : 0.55) + (detail::unit(rng) - 0.5) * 4.0 * scale};
      s.ellipsoids.push_back(e);
    }
    if (d.margin_every > 0 && i % d.margin_every == d.margin_every - 1) {
      // Push the first ellipsoid so it crosses exactly one face.
      const Face f = kAllFaces[face_cursor++ % kAllFaces.size()];
      const int a = static_cast<int>(f) / 2;
      const bool is_max = static_cast<int>(f) % 2 == 1;
      auto& e = s.ellipsoids[0];
      const double extent = static_cast<double>(d.dims[a]);
      e.center[a] = is_max ? extent - e.radii[a] * 0.5 : e.radii[a] * 0.5 - 1.0;
    }
    out.push_back(std::move(s));
  }
  return out;
}

/// Ground truth for one subject as recorded in the phantom manifest.
struct Truth {
  std::size_t voxel_count = 0;
  double voxel_volume_mm3 = 0.0;
  double raw_volume_ml = 0.0;
  std::vector<Face> touched_faces;
  bool expect_flag = false;
  double expected_volume_ml = 0.0;
};

inline Truth truth_for(const Subject& s) {
  const auto voxels = voxel_list(s);
  Truth t;
  t.voxel_count = voxels.size();
  t.voxel_volume_mm3 = s.spacing[0] * s.spacing[1] * s.spacing[2];
  t.raw_volume_ml = static_cast<double>(t.voxel_count) * t.voxel_volume_mm3 / 1000.0;
  t.touched_faces = touched_faces(voxels, s.dims);
  t.expect_flag = !t.touched_faces.empty();
  t.expected_volume_ml = t.expect_flag ? 0.0 : t.raw_volume_ml;
  return t;
}

inline nlohmann::ordered_json to_json(const Subject& s) {
  nlohmann::ordered_json j;
  const Truth t = truth_for(s);
  j["subject_id"] = s.id;
  j["defect"] = to_string(s.defect);
  j["dims"] = s.dims;
  j["spacing"] = s.spacing;
  nlohmann::ordered_json es = nlohmann::ordered_json::array();
  for (const auto& e : s.ellipsoids) es.push_back({{"center", e.center}, {"radii", e.radii}});
  j["ellipsoids"] = es;
  j["voxel_count"] = t.voxel_count;
  j["voxel_volume_mm3"] = t.voxel_volume_mm3;
  j["raw_volume_ml"] = t.raw_volume_ml;
  std::vector<std::string> faces;
  for (Face f : t.touched_faces) faces.push_back(to_string(f));
  j["touched_faces"] = faces;
  j["expect_margin_flag"] = t.expect_flag;
  j["expected_volume_ml"] = t.expected_volume_ml;
  return j;
}

struct Layout {
  std::filesystem::path catalog;   // <root>/catalog/<id>/<id>_<channel>.nii.gz
  std::filesystem::path truth;     // <root>/truth/<id>.nii.gz
  std::filesystem::path manifest;  // <root>/phantom_manifest.json

  explicit Layout(const std::filesystem::path& root)
      : catalog(root / "catalog"), truth(root / "truth"), manifest(root / "phantom_manifest.json") {}
};

inline std::string channel_file(const std::string& id, cohort::Channel c) {
  return id + "_" + cohort::to_string(c) + ".nii.gz";
}

/// Writes catalog, truth masks and manifest; defects are applied on disk.
inline Layout write_cohort(const std::vector<Subject>& subjects, const std::filesystem::path& root) {
  Layout layout(root);
  std::filesystem::create_directories(layout.catalog);
  std::filesystem::create_directories(layout.truth);
  nlohmann::ordered_json manifest;
  manifest["subjects"] = nlohmann::ordered_json::array();
  for (const auto& s : subjects) {
    const auto dir = layout.catalog / s.id;
    std::filesystem::create_directories(dir);
    manifest["subjects"].push_back(to_json(s));
    if (s.defect == Defect::EmptyDirectory) continue;

    Subject rendered = s;
    if (s.defect == Defect::WrongDims) rendered.dims[2] -= 1;
    const cohort::ChannelStack stack = render(rendered);
    for (cohort::Channel c : cohort::kChannels) {
      if (s.defect == Defect::MissingFat && c == cohort::Channel::Fat) continue;
      nifti::write_nifti(stack[c], dir / channel_file(s.id, c), true);
    }
    if (s.defect == Defect::CorruptWater) {
      // keep the header, drop most of the payload
      const auto path = dir / channel_file(s.id, cohort::Channel::Water);
      auto bytes = nifti::detail::read_bytes(path);
      bytes.resize(nifti::kSingleFileOffset + 16);
      nifti::detail::write_bytes(path, bytes, true);
    }
    if (s.defect == Defect::None) nifti::write_nifti(truth_mask(s), layout.truth / (s.id + ".nii.gz"), true);
  }
  std::ofstream out(layout.manifest, std::ios::trunc);
  if (!out) throw Error(ErrorKind::IoFailure, "cannot write " + layout.manifest.string());
  out << manifest.dump(2) << '\n';
  return layout;
}

}  // namespace tvol::phantom
