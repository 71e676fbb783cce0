#pragma once

// NIfTI-1 reader/writer for single 3D volumes, plain or gzip-compressed.
//
// Consumed header fields: sizeof_hdr, dim, datatype, bitpix, pixdim,
// scl_slope, scl_inter, vox_offset, xyzt_units, sform_code, srow_x/y/z, magic.
// Extensions between byte 348 and vox_offset are skipped.

#include <zlib.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <string>
#include <type_traits>
#include <vector>

#include "tvol/error.hpp"
#include "tvol/geometry.hpp"

namespace tvol::nifti {

inline constexpr std::int32_t kHeaderSize = 348;
inline constexpr std::int32_t kSingleFileOffset = 352;

namespace offset {
inline constexpr std::size_t sizeof_hdr = 0;
inline constexpr std::size_t dim = 40;
inline constexpr std::size_t datatype = 70;
inline constexpr std::size_t bitpix = 72;
inline constexpr std::size_t pixdim = 76;
inline constexpr std::size_t vox_offset = 108;
inline constexpr std::size_t scl_slope = 112;
inline constexpr std::size_t scl_inter = 116;
inline constexpr std::size_t xyzt_units = 123;
inline constexpr std::size_t descrip = 148;
inline constexpr std::size_t qform_code = 252;
inline constexpr std::size_t sform_code = 254;
inline constexpr std::size_t srow_x = 280;
inline constexpr std::size_t magic = 344;
}  // namespace offset

/// Header fields relevant to volumetry, decoded to host order.
struct HeaderInfo {
  VolumeGeometry geometry;
  Datatype datatype = Datatype::Float32;
  std::int16_t bitpix = 32;
  IntensityScale scale{};
  bool has_scale = false;
  std::int64_t vox_offset = kSingleFileOffset;
  bool byte_swapped = false;
  bool single_file = true;
};

namespace detail {

template <typename T>
T byteswap(T value) {
  static_assert(std::is_trivially_copyable_v<T>);
  std::array<unsigned char, sizeof(T)> bytes;
  std::memcpy(bytes.data(), &value, sizeof(T));
  std::reverse(bytes.begin(), bytes.end());
  std::memcpy(&value, bytes.data(), sizeof(T));
  return value;
}

template <typename T>
T load(const unsigned char* base, std::size_t off, bool swap) {
  T v;
  std::memcpy(&v, base + off, sizeof(T));
  return swap ? byteswap(v) : v;
}

template <typename T>
void store(unsigned char* base, std::size_t off, T v) {
  std::memcpy(base + off, &v, sizeof(T));
}

inline bool has_gzip_magic(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  unsigned char m[2] = {0, 0};
  in.read(reinterpret_cast<char*>(m), 2);
  return in.gcount() == 2 && m[0] == 0x1F && m[1] == 0x8B;
}

// Reads up to max_bytes (all when max_bytes == 0) of the decompressed stream.
// gzread passes non-gzip files through unchanged.
inline std::vector<unsigned char> read_bytes(const std::filesystem::path& path, std::size_t max_bytes = 0) {
  gzFile f = gzopen(path.string().c_str(), "rb");
  if (!f) throw Error(ErrorKind::IoFailure, "cannot open " + path.string());
  std::vector<unsigned char> out;
  constexpr std::size_t chunk = 1 << 20;
  for (;;) {
    std::size_t want = chunk;
    if (max_bytes) {
      if (out.size() >= max_bytes) break;
      want = std::min(chunk, max_bytes - out.size());
    }
    const std::size_t old = out.size();
    out.resize(old + want);
    const int got = gzread(f, out.data() + old, static_cast<unsigned>(want));
    if (got < 0) {
      int errnum = 0;
      std::string msg = gzerror(f, &errnum);
      gzclose(f);
      throw Error(ErrorKind::TruncatedData, path.string() + ": " + msg);
    }
    out.resize(old + static_cast<std::size_t>(got));
    if (static_cast<std::size_t>(got) < want) break;
  }
  gzclose(f);
  return out;
}

inline void write_bytes(const std::filesystem::path& path, const std::vector<unsigned char>& bytes, bool compress) {
  if (compress) {
    gzFile f = gzopen(path.string().c_str(), "wb1");
    if (!f) throw Error(ErrorKind::IoFailure, "cannot create " + path.string());
    std::size_t done = 0;
    while (done < bytes.size()) {
      const auto n = static_cast<unsigned>(std::min<std::size_t>(bytes.size() - done, 1u << 30));
      if (gzwrite(f, bytes.data() + done, n) != static_cast<int>(n)) {
        gzclose(f);
        throw Error(ErrorKind::IoFailure, "write failed: " + path.string());
      }
      done += n;
    }
    if (gzclose(f) != Z_OK) throw Error(ErrorKind::IoFailure, "close failed: " + path.string());
    return;
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::IoFailure, "cannot create " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorKind::IoFailure, "write failed: " + path.string());
}

inline std::int16_t bits_for(Datatype t) {
  switch (t) {
    case Datatype::UInt8: return 8;
    case Datatype::Int16: return 16;
    case Datatype::Int32: return 32;
    case Datatype::Float32: return 32;
    case Datatype::Float64: return 64;
  }
  return 0;
}

inline bool is_supported(std::int16_t code) {
  switch (code) {
    case 2: case 4: case 8: case 16: case 64: return true;
    default: return false;
  }
}

// Metres and microns are converted to millimetres; unknown units are taken as mm.
inline double spatial_unit_to_mm(unsigned char xyzt_units) {
  switch (xyzt_units & 0x07) {
    case 1: return 1000.0;
    case 3: return 0.001;
    default: return 1.0;
  }
}

inline std::filesystem::path image_file_for(const std::filesystem::path& header_path) {
  std::string s = header_path.string();
  for (const char* ext : {".hdr.gz", ".hdr"}) {
    const std::string e(ext);
    if (s.size() > e.size() && s.compare(s.size() - e.size(), e.size(), e) == 0) {
      std::string base = s.substr(0, s.size() - e.size());
      if (std::filesystem::exists(base + ".img")) return base + ".img";
      if (std::filesystem::exists(base + ".img.gz")) return base + ".img.gz";
      return base + ".img";
    }
  }
  return std::filesystem::path(s).replace_extension(".img");
}

template <typename Raw>
void decode_payload(const unsigned char* src, std::size_t n, bool swap, const IntensityScale& scale, bool apply,
                    std::vector<float>& dst) {
  dst.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    Raw r;
    std::memcpy(&r, src + i * sizeof(Raw), sizeof(Raw));
    if (swap) r = byteswap(r);
    const double v = apply ? static_cast<double>(r) * scale.slope + scale.intercept : static_cast<double>(r);
    dst[i] = static_cast<float>(v);
  }
}

template <typename Raw>
void encode_payload(const std::vector<float>& src, const IntensityScale& scale, unsigned char* dst) {
  for (std::size_t i = 0; i < src.size(); ++i) {
    Raw r;
    if constexpr (std::is_floating_point_v<Raw>) {
      r = static_cast<Raw>(src[i]);
    } else {
      const double raw = std::nearbyint((static_cast<double>(src[i]) - scale.intercept) / scale.slope);
      const double lo = static_cast<double>(std::numeric_limits<Raw>::min());
      const double hi = static_cast<double>(std::numeric_limits<Raw>::max());
      r = static_cast<Raw>(std::clamp(raw, lo, hi));
    }
    std::memcpy(dst + i * sizeof(Raw), &r, sizeof(Raw));
  }
}

}  // namespace detail

/// Decodes and validates the 348-byte header in `bytes`.
inline HeaderInfo parse_header(const std::vector<unsigned char>& bytes, const std::string& origin = "<buffer>") {
  if (bytes.size() < static_cast<std::size_t>(kHeaderSize))
    throw Error(ErrorKind::MalformedHeader, origin + ": file shorter than 348-byte header");
  const unsigned char* h = bytes.data();
  using detail::load;

  HeaderInfo info;
  // dim[0] must be 1..7; anything else means the file was written with the other byte order.
  const auto dim0 = load<std::int16_t>(h, offset::dim, false);
  if (dim0 < 1 || dim0 > 7) {
    info.byte_swapped = true;
    const auto swapped = load<std::int16_t>(h, offset::dim, true);
    if (swapped < 1 || swapped > 7) throw Error(ErrorKind::MalformedHeader, origin + ": dim[0] out of range");
  }
  const bool sw = info.byte_swapped;

  if (load<std::int32_t>(h, offset::sizeof_hdr, sw) != kHeaderSize)
    throw Error(ErrorKind::MalformedHeader, origin + ": sizeof_hdr != 348");

  const char* magic = reinterpret_cast<const char*>(h + offset::magic);
  if (std::memcmp(magic, "n+1\0", 4) == 0)
    info.single_file = true;
  else if (std::memcmp(magic, "ni1\0", 4) == 0)
    info.single_file = false;
  else
    throw Error(ErrorKind::MalformedHeader, origin + ": magic is neither n+1 nor ni1");

  std::array<std::int16_t, 8> dim{};
  for (int i = 0; i < 8; ++i) dim[i] = load<std::int16_t>(h, offset::dim + 2 * i, sw);
  Dims dims{1, 1, 1};
  for (int i = 1; i <= dim[0]; ++i) {
    if (dim[i] < 1) throw Error(ErrorKind::MalformedHeader, origin + ": dim[" + std::to_string(i) + "] < 1");
    if (i <= 3)
      dims[i - 1] = dim[i];
    else if (dim[i] != 1)
      throw Error(ErrorKind::MalformedHeader, origin + ": only single 3D volumes are supported");
  }

  const auto dt = load<std::int16_t>(h, offset::datatype, sw);
  if (!detail::is_supported(dt))
    throw Error(ErrorKind::UnsupportedDatatype, origin + ": datatype code " + std::to_string(dt));
  info.datatype = static_cast<Datatype>(dt);
  info.bitpix = load<std::int16_t>(h, offset::bitpix, sw);
  if (info.bitpix != detail::bits_for(info.datatype))
    throw Error(ErrorKind::MalformedHeader, origin + ": bitpix inconsistent with datatype");

  const double to_mm = detail::spatial_unit_to_mm(h[offset::xyzt_units]);
  Spacing spacing{};
  for (int i = 0; i < 3; ++i) {
    double p = std::abs(static_cast<double>(load<float>(h, offset::pixdim + 4 * (i + 1), sw)));
    if (i + 1 > dim[0] && !(p > 0.0)) p = 1.0;
    if (!(p > 0.0) || !std::isfinite(p))
      throw Error(ErrorKind::MalformedHeader, origin + ": pixdim[" + std::to_string(i + 1) + "] must be > 0");
    spacing[i] = p * to_mm;
  }

  Affine affine = diagonal_affine(spacing);
  if (load<std::int16_t>(h, offset::sform_code, sw) > 0) {
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 4; ++c)
        affine[r][c] = static_cast<double>(load<float>(h, offset::srow_x + 16 * r + 4 * c, sw)) * to_mm;
  }
  info.geometry = VolumeGeometry(dims, spacing, affine);

  const double vox = load<float>(h, offset::vox_offset, sw);
  if (!std::isfinite(vox) || vox < 0.0) throw Error(ErrorKind::MalformedHeader, origin + ": bad vox_offset");
  info.vox_offset = static_cast<std::int64_t>(vox);
  if (info.single_file && info.vox_offset < kHeaderSize)
    throw Error(ErrorKind::MalformedHeader, origin + ": vox_offset inside header");

  const double slope = load<float>(h, offset::scl_slope, sw);
  const double inter = load<float>(h, offset::scl_inter, sw);
  if (slope != 0.0 && std::isfinite(slope) && std::isfinite(inter)) {
    info.scale = {slope, inter};
    info.has_scale = true;
  }
  return info;
}

/// Reads only the header; cheap enough to validate whole catalogs.
inline HeaderInfo read_header(const std::filesystem::path& path) {
  return parse_header(detail::read_bytes(path, kHeaderSize), path.string());
}

inline VoxelVolume read_nifti(const std::filesystem::path& path) {
  if (!std::filesystem::is_regular_file(path)) throw Error(ErrorKind::IoFailure, "no such file: " + path.string());
  std::vector<unsigned char> bytes = detail::read_bytes(path);
  const HeaderInfo info = parse_header(bytes, path.string());

  std::size_t start = static_cast<std::size_t>(info.vox_offset);
  if (!info.single_file) {
    const auto img = detail::image_file_for(path);
    if (!std::filesystem::is_regular_file(img))
      throw Error(ErrorKind::TruncatedData, path.string() + ": missing image file " + img.string());
    bytes = detail::read_bytes(img);
  }

  const std::size_t n = info.geometry.voxel_count();
  const std::size_t need = n * static_cast<std::size_t>(info.bitpix / 8);
  if (bytes.size() < start || bytes.size() - start < need)
    throw Error(ErrorKind::TruncatedData, path.string() + ": payload has " +
                                              std::to_string(bytes.size() > start ? bytes.size() - start : 0) +
                                              " bytes, dims imply " + std::to_string(need));

  std::vector<float> data;
  const unsigned char* src = bytes.data() + start;
  const bool sw = info.byte_swapped;
  const bool apply = info.has_scale;
  switch (info.datatype) {
    case Datatype::UInt8: detail::decode_payload<std::uint8_t>(src, n, sw, info.scale, apply, data); break;
    case Datatype::Int16: detail::decode_payload<std::int16_t>(src, n, sw, info.scale, apply, data); break;
    case Datatype::Int32: detail::decode_payload<std::int32_t>(src, n, sw, info.scale, apply, data); break;
    case Datatype::Float32: detail::decode_payload<float>(src, n, sw, info.scale, apply, data); break;
    case Datatype::Float64: detail::decode_payload<double>(src, n, sw, info.scale, apply, data); break;
  }
  for (float v : data)
    if (!std::isfinite(v)) throw Error(ErrorKind::NonFiniteData, path.string() + ": non-finite intensity");

  VoxelVolume volume(info.geometry, std::move(data));
  volume.stored_type = info.datatype;
  volume.scale = info.has_scale ? info.scale : IntensityScale{};
  return volume;
}

/// Serializes header + payload. Integer encodings invert the volume's
/// intensity scale and round to nearest; float encodings store values as is.
inline std::vector<unsigned char> encode(const VolumeGeometry& geometry, const std::vector<float>& values,
                                         Datatype type, IntensityScale scale) {
  geometry.validate();
  if (values.size() != geometry.voxel_count())
    throw Error(ErrorKind::SizeMismatch, "payload length does not match dims");
  const bool is_float = type == Datatype::Float32 || type == Datatype::Float64;
  if (is_float || scale.slope == 0.0) scale = {};

  const std::int16_t bits = detail::bits_for(type);
  std::vector<unsigned char> out(kSingleFileOffset + values.size() * static_cast<std::size_t>(bits / 8), 0);
  unsigned char* h = out.data();
  using detail::store;
  store<std::int32_t>(h, offset::sizeof_hdr, kHeaderSize);
  const std::array<std::int16_t, 8> dim{3,
                                         static_cast<std::int16_t>(geometry.dims[0]),
                                         static_cast<std::int16_t>(geometry.dims[1]),
                                         static_cast<std::int16_t>(geometry.dims[2]),
                                         1, 1, 1, 1};
  for (int i = 0; i < 8; ++i) store<std::int16_t>(h, offset::dim + 2 * i, dim[i]);
  store<std::int16_t>(h, offset::datatype, static_cast<std::int16_t>(type));
  store<std::int16_t>(h, offset::bitpix, bits);
  store<float>(h, offset::pixdim, 1.0f);
  for (int i = 0; i < 3; ++i) store<float>(h, offset::pixdim + 4 * (i + 1), static_cast<float>(geometry.spacing[i]));
  store<float>(h, offset::vox_offset, static_cast<float>(kSingleFileOffset));
  store<float>(h, offset::scl_slope, static_cast<float>(scale.slope));
  store<float>(h, offset::scl_inter, static_cast<float>(scale.intercept));
  h[offset::xyzt_units] = 2;  // mm
  std::memcpy(h + offset::descrip, "tvol", 4);
  store<std::int16_t>(h, offset::qform_code, 0);
  store<std::int16_t>(h, offset::sform_code, 1);
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 4; ++c)
      store<float>(h, offset::srow_x + 16 * r + 4 * c, static_cast<float>(geometry.affine[r][c]));
  std::memcpy(h + offset::magic, "n+1\0", 4);

  unsigned char* payload = h + kSingleFileOffset;
  switch (type) {
    case Datatype::UInt8: detail::encode_payload<std::uint8_t>(values, scale, payload); break;
    case Datatype::Int16: detail::encode_payload<std::int16_t>(values, scale, payload); break;
    case Datatype::Int32: detail::encode_payload<std::int32_t>(values, scale, payload); break;
    case Datatype::Float32: detail::encode_payload<float>(values, scale, payload); break;
    case Datatype::Float64: detail::encode_payload<double>(values, scale, payload); break;
  }
  return out;
}

inline void write_nifti(const VoxelVolume& volume, const std::filesystem::path& path, bool compress) {
  detail::write_bytes(path, encode(volume.geometry(), volume.data(), volume.stored_type, volume.scale), compress);
}

/// Masks are always stored as uint8 with the mask's own geometry.
inline void write_nifti(const SegmentationMask& mask, const std::filesystem::path& path, bool compress) {
  std::vector<float> values(mask.data().begin(), mask.data().end());
  detail::write_bytes(path, encode(mask.geometry(), values, Datatype::UInt8, {}), compress);
}

/// Loads a label image as a mask; every non-zero voxel is foreground.
inline SegmentationMask read_mask(const std::filesystem::path& path) {
  const VoxelVolume v = read_nifti(path);
  std::vector<std::uint8_t> bits(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) bits[i] = v.data()[i] != 0.0f ? 1 : 0;
  return SegmentationMask(v.geometry(), std::move(bits));
}

}  // namespace tvol::nifti
