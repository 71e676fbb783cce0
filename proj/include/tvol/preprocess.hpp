#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <cstdio>
#include <string>
#include <utility>
#include <vector>

#include "tvol/cohort.hpp"
#include "tvol/error.hpp"
#include "tvol/geometry.hpp"

namespace tvol::preprocess {

/// Per-volume min-max rescale to [0,1] followed by per-channel
/// standardization. Defaults are the usual ImageNet statistics.
struct NormalizationSpec {
  std::array<double, 3> mean{0.485, 0.456, 0.406};
  std::array<double, 3> std{0.229, 0.224, 0.225};

  void validate() const {
    for (double s : std)
      if (!(s > 0.0)) throw Error(ErrorKind::InvalidConfig, "normalization std must be > 0");
  }

  std::string canonical() const {
    char buf[256];
    std::snprintf(buf, sizeof buf, "minmax;mean=%.17g,%.17g,%.17g;std=%.17g,%.17g,%.17g", mean[0], mean[1], mean[2],
                  std[0], std[1], std[2]);
    return buf;
  }

  /// Stable 64-bit FNV-1a digest of the canonical form, as 16 hex digits.
  std::string hash() const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : canonical()) {
      h ^= c;
      h *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
  }

  bool operator==(const NormalizationSpec&) const = default;
};

inline VoxelVolume normalize_channel(const VoxelVolume& in, double mean, double std) {
  const auto& d = in.data();
  const auto [lo_it, hi_it] = std::minmax_element(d.begin(), d.end());
  const double lo = d.empty() ? 0.0 : *lo_it;
  const double hi = d.empty() ? 0.0 : *hi_it;
  const double range = hi - lo;
  std::vector<float> out(d.size());
  for (std::size_t i = 0; i < d.size(); ++i) {
    // constant channels rescale to 0
    const double unit = range > 0.0 ? (static_cast<double>(d[i]) - lo) / range : 0.0;
    out[i] = static_cast<float>((unit - mean) / std);
  }
  VoxelVolume v(in.geometry(), std::move(out));
  v.stored_type = Datatype::Float32;
  return v;
}

inline cohort::ChannelStack normalize(const cohort::ChannelStack& stack, const NormalizationSpec& spec) {
  spec.validate();
  std::array<VoxelVolume, 3> channels;
  for (int c = 0; c < 3; ++c) channels[c] = normalize_channel(stack.channels[c], spec.mean[c], spec.std[c]);
  return cohort::ChannelStack{stack.subject_id, std::move(channels)};
}

/// In-plane axes for a slice taken along `axis`, in increasing order:
/// rows run along the first, columns along the second.
inline std::pair<int, int> plane_axes(int axis) {
  switch (axis) {
    case 0: return {1, 2};
    case 1: return {0, 2};
    case 2: return {0, 1};
    default: throw Error(ErrorKind::PreconditionViolation, "slice axis must be 0, 1 or 2");
  }
}

/// Flat index of in-plane (row, col) on slice `s` along `axis`.
inline std::size_t voxel_index(const VolumeGeometry& g, int axis, std::int64_t s, std::int64_t row, std::int64_t col) {
  std::array<std::int64_t, 3> c{};
  const auto [p, q] = plane_axes(axis);
  c[axis] = s;
  c[p] = row;
  c[q] = col;
  return g.index(c[0], c[1], c[2]);
}

/// 2D slices of a channel stack, each stored channel-planar as
/// (3, height, width) with row-major planes. Channel order is water, fat, in-phase.
struct SliceBatch {
  std::string subject_id;
  VolumeGeometry geometry;
  int slice_axis = 2;
  std::int64_t height = 0;
  std::int64_t width = 0;
  std::vector<std::int64_t> slice_indices;
  std::vector<std::vector<float>> slices;

  std::size_t plane_size() const { return static_cast<std::size_t>(height * width); }
};

inline SliceBatch extract_slices(const cohort::ChannelStack& stack, int axis = 2) {
  const auto [p, q] = plane_axes(axis);
  const VolumeGeometry& g = stack.geometry();
  SliceBatch b;
  b.subject_id = stack.subject_id;
  b.geometry = g;
  b.slice_axis = axis;
  b.height = g.dims[p];
  b.width = g.dims[q];
  const std::int64_t count = g.dims[axis];
  const std::size_t plane = b.plane_size();
  b.slices.assign(static_cast<std::size_t>(count), std::vector<float>(3 * plane));
  b.slice_indices.resize(static_cast<std::size_t>(count));
  for (std::int64_t s = 0; s < count; ++s) {
    auto& out = b.slices[static_cast<std::size_t>(s)];
    b.slice_indices[static_cast<std::size_t>(s)] = s;
    for (int c = 0; c < 3; ++c) {
      const auto& src = stack.channels[c].data();
      float* dst = out.data() + static_cast<std::size_t>(c) * plane;
      for (std::int64_t r = 0; r < b.height; ++r)
        for (std::int64_t col = 0; col < b.width; ++col)
          dst[static_cast<std::size_t>(r * b.width + col)] = src[voxel_index(g, axis, s, r, col)];
    }
  }
  return b;
}

}  // namespace tvol::preprocess
