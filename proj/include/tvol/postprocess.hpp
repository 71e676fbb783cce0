#pragma once

#include <algorithm>
#include <cstdint>
#include <string>
#include <vector>

#include "tvol/error.hpp"
#include "tvol/geometry.hpp"

namespace tvol::postprocess {

/// Boundary faces checked by the margin rule.
struct MarginPolicy {
  std::vector<Face> faces{kAllFaces.begin(), kAllFaces.end()};

  void validate() const {
    if (faces.empty()) throw Error(ErrorKind::InvalidConfig, "margin policy needs at least one face");
  }
};

struct FlaggedMask {
  SegmentationMask mask;
  bool margin_flagged = false;
  std::vector<Face> touched_faces;
};

namespace detail {

inline bool plane_has_foreground(const SegmentationMask& mask, int axis, std::int64_t at) {
  const Dims& d = mask.dims();
  std::int64_t lo[3] = {0, 0, 0};
  std::int64_t hi[3] = {d[0], d[1], d[2]};
  lo[axis] = at;
  hi[axis] = at + 1;
  for (std::int64_t z = lo[2]; z < hi[2]; ++z)
    for (std::int64_t y = lo[1]; y < hi[1]; ++y)
      for (std::int64_t x = lo[0]; x < hi[0]; ++x)
        if (mask(x, y, z)) return true;
  return false;
}

}  // namespace detail

/// Policy faces (in policy order, duplicates removed) whose boundary plane
/// holds at least one foreground voxel.
inline std::vector<Face> touches_margin(const SegmentationMask& mask, const MarginPolicy& policy = {}) {
  policy.validate();
  std::vector<Face> touched;
  for (Face f : policy.faces) {
    if (std::find(touched.begin(), touched.end(), f) != touched.end()) continue;
    const int axis = static_cast<int>(f) / 2;
    const bool is_max = static_cast<int>(f) % 2 == 1;
    if (detail::plane_has_foreground(mask, axis, is_max ? mask.dims()[axis] - 1 : 0)) touched.push_back(f);
  }
  return touched;
}

/// Masks that reach a checked boundary are zeroed and flagged; volume 0 follows.
inline FlaggedMask apply_margin_rule(const SegmentationMask& mask, const MarginPolicy& policy = {}) {
  FlaggedMask out{mask, false, touches_margin(mask, policy)};
  if (!out.touched_faces.empty()) {
    out.margin_flagged = true;
    std::fill(out.mask.data().begin(), out.mask.data().end(), std::uint8_t{0});
  }
  return out;
}

inline std::string join_faces(const std::vector<Face>& faces, char sep = ';') {
  std::string s;
  for (std::size_t i = 0; i < faces.size(); ++i) {
    if (i) s += sep;
    s += to_string(faces[i]);
  }
  return s;
}

}  // namespace tvol::postprocess
