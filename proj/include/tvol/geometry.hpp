#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "tvol/error.hpp"

namespace tvol {

using Dims = std::array<std::int64_t, 3>;
using Spacing = std::array<double, 3>;
using Affine = std::array<std::array<double, 4>, 4>;

inline Affine diagonal_affine(const Spacing& spacing) {
  Affine a{};
  for (int i = 0; i < 3; ++i) a[i][i] = spacing[i];
  a[3][3] = 1.0;
  return a;
}

/// Voxel grid extent plus the physical size of one voxel.
///
/// The affine is carried for provenance only; nothing in the library
/// resamples or reorients, all processing happens in voxel space.
struct VolumeGeometry {
  Dims dims{1, 1, 1};
  Spacing spacing{1.0, 1.0, 1.0};
  Affine affine = diagonal_affine({1.0, 1.0, 1.0});

  VolumeGeometry() = default;
  VolumeGeometry(Dims d, Spacing s) : dims(d), spacing(s), affine(diagonal_affine(s)) { validate(); }
  VolumeGeometry(Dims d, Spacing s, const Affine& a) : dims(d), spacing(s), affine(a) { validate(); }

  std::size_t voxel_count() const {
    return static_cast<std::size_t>(dims[0]) * static_cast<std::size_t>(dims[1]) *
           static_cast<std::size_t>(dims[2]);
  }

  std::size_t index(std::int64_t x, std::int64_t y, std::int64_t z) const {
    return static_cast<std::size_t>(x + dims[0] * (y + dims[1] * z));
  }

  void validate() const {
    for (int i = 0; i < 3; ++i) {
      if (dims[i] < 1)
        throw Error(ErrorKind::PreconditionViolation, "dimension " + std::to_string(i) + " must be >= 1");
      if (!(spacing[i] > 0.0) || !std::isfinite(spacing[i]))
        throw Error(ErrorKind::PreconditionViolation, "spacing " + std::to_string(i) + " must be > 0");
    }
  }

  bool operator==(const VolumeGeometry&) const = default;

  /// Same grid: identical dims and spacing. The affine is not compared.
  bool same_grid(const VolumeGeometry& other, double tolerance = 1e-6) const {
    if (dims != other.dims) return false;
    for (int i = 0; i < 3; ++i)
      if (std::abs(spacing[i] - other.spacing[i]) > tolerance) return false;
    return true;
  }
};

inline double voxel_volume_mm3(const VolumeGeometry& geometry) {
  return geometry.spacing[0] * geometry.spacing[1] * geometry.spacing[2];
}

/// Dense x-fastest grid of values sharing one geometry.
template <typename T>
class Grid {
 public:
  using value_type = T;

  Grid() = default;
  explicit Grid(VolumeGeometry geometry, T fill = T{})
      : geometry_(std::move(geometry)), data_(geometry_.voxel_count(), fill) {}
  Grid(VolumeGeometry geometry, std::vector<T> data) : geometry_(std::move(geometry)), data_(std::move(data)) {
    if (data_.size() != geometry_.voxel_count())
      throw Error(ErrorKind::SizeMismatch, "grid payload length " + std::to_string(data_.size()) +
                                               " != product of dims " + std::to_string(geometry_.voxel_count()));
  }

  const VolumeGeometry& geometry() const { return geometry_; }
  const Dims& dims() const { return geometry_.dims; }
  std::size_t size() const { return data_.size(); }

  const std::vector<T>& data() const { return data_; }
  std::vector<T>& data() { return data_; }

  T& operator()(std::int64_t x, std::int64_t y, std::int64_t z) { return data_[geometry_.index(x, y, z)]; }
  const T& operator()(std::int64_t x, std::int64_t y, std::int64_t z) const {
    return data_[geometry_.index(x, y, z)];
  }

  bool operator==(const Grid& other) const = default;

 protected:
  VolumeGeometry geometry_;
  std::vector<T> data_;
};

/// On-disk voxel encodings understood by the NIfTI reader and writer.
enum class Datatype : std::int16_t {
  UInt8 = 2,
  Int16 = 4,
  Int32 = 8,
  Float32 = 16,
  Float64 = 64,
};

/// Linear intensity scale stored = raw * slope + intercept.
struct IntensityScale {
  double slope = 1.0;
  double intercept = 0.0;
  bool operator==(const IntensityScale&) const = default;
};

/// Scalar image volume. Intensities are already scaled; `scale` and
/// `stored_type` remember how the source file encoded them so a rewrite
/// reproduces the same payload.
class VoxelVolume : public Grid<float> {
 public:
  using Grid<float>::Grid;

  Datatype stored_type = Datatype::Float32;
  IntensityScale scale{};
};

/// Binary segmentation, 0 = background, 1 = foreground.
class SegmentationMask : public Grid<std::uint8_t> {
 public:
  using Grid<std::uint8_t>::Grid;

  std::size_t foreground_count() const {
    std::size_t n = 0;
    for (auto v : data_) n += (v != 0);
    return n;
  }

  void validate_binary() const {
    for (auto v : data_)
      if (v > 1) throw Error(ErrorKind::PreconditionViolation, "mask value outside {0,1}");
  }
};

/// The six boundary planes of a grid.
enum class Face : int { XMin, XMax, YMin, YMax, ZMin, ZMax };

inline constexpr std::array<Face, 6> kAllFaces{Face::XMin, Face::XMax, Face::YMin,
                                               Face::YMax, Face::ZMin, Face::ZMax};

inline std::string to_string(Face f) {
  switch (f) {
    case Face::XMin: return "x-min";
    case Face::XMax: return "x-max";
    case Face::YMin: return "y-min";
    case Face::YMax: return "y-max";
    case Face::ZMin: return "z-min";
    case Face::ZMax: return "z-max";
  }
  return "?";
}

inline Face face_from_string(const std::string& s) {
  for (Face f : kAllFaces)
    if (to_string(f) == s) return f;
  throw Error(ErrorKind::InvalidConfig, "unknown face '" + s + "' (expected x-min, x-max, y-min, y-max, z-min, z-max)");
}

}  // namespace tvol
