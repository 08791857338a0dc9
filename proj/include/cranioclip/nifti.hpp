#pragma once

// NIfTI-1 single-file (.nii, optionally gzip-compressed) and header/image pair
// reader/writer. Orientation fields are carried through verbatim and never
// interpreted; everything downstream works in voxel index space.

#include <zlib.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <limits>
#include <string>
#include <vector>

#include "cranioclip/error.hpp"
#include "cranioclip/volume.hpp"

namespace cranioclip::nifti {

inline constexpr std::size_t kHeaderSize = 348;
inline constexpr std::int32_t kDefaultVoxOffset = 352;

enum Datatype : std::int16_t {
  kUint8 = 2,
  kInt16 = 4,
  kInt32 = 8,
  kFloat32 = 16,
  kFloat64 = 64,
};

inline int bytes_per_voxel(std::int16_t datatype) {
  switch (datatype) {
    case kUint8: return 1;
    case kInt16: return 2;
    case kInt32: return 4;
    case kFloat32: return 4;
    case kFloat64: return 8;
    default: return 0;
  }
}

namespace detail {

// Header field offsets.
inline constexpr std::size_t kOffSizeofHdr = 0;
inline constexpr std::size_t kOffDim = 40;
inline constexpr std::size_t kOffDatatype = 70;
inline constexpr std::size_t kOffBitpix = 72;
inline constexpr std::size_t kOffPixdim = 76;
inline constexpr std::size_t kOffVoxOffset = 108;
inline constexpr std::size_t kOffSclSlope = 112;
inline constexpr std::size_t kOffSclInter = 116;
inline constexpr std::size_t kOffMagic = 344;

template <typename T>
T byteswap_value(T v) {
  std::array<std::uint8_t, sizeof(T)> b;
  std::memcpy(b.data(), &v, sizeof(T));
  std::reverse(b.begin(), b.end());
  std::memcpy(&v, b.data(), sizeof(T));
  return v;
}

template <typename T>
T load(const std::uint8_t* p, bool swap) {
  T v;
  std::memcpy(&v, p, sizeof(T));
  return swap ? byteswap_value(v) : v;
}

template <typename T>
void store(std::uint8_t* p, T v) {
  static_assert(std::endian::native == std::endian::little, "writer assumes little-endian host");
  std::memcpy(p, &v, sizeof(T));
}

inline bool is_gzip(const std::vector<std::uint8_t>& bytes) {
  return bytes.size() >= 2 && bytes[0] == 0x1f && bytes[1] == 0x8b;
}

inline std::vector<std::uint8_t> gunzip(const std::vector<std::uint8_t>& in) {
  z_stream zs{};
  if (inflateInit2(&zs, 16 + MAX_WBITS) != Z_OK) fail(ErrorCode::Io, "inflateInit2 failed");
  std::vector<std::uint8_t> out;
  std::vector<std::uint8_t> chunk(1 << 16);
  zs.next_in = const_cast<Bytef*>(in.data());
  zs.avail_in = static_cast<uInt>(in.size());
  int rc = Z_OK;
  while (rc != Z_STREAM_END) {
    zs.next_out = chunk.data();
    zs.avail_out = static_cast<uInt>(chunk.size());
    rc = inflate(&zs, Z_NO_FLUSH);
    if (rc != Z_OK && rc != Z_STREAM_END) {
      inflateEnd(&zs);
      fail(ErrorCode::TruncatedPayload, "corrupt or truncated gzip stream");
    }
    out.insert(out.end(), chunk.data(), chunk.data() + (chunk.size() - zs.avail_out));
    if (rc == Z_OK && zs.avail_in == 0 && zs.avail_out != 0) {
      inflateEnd(&zs);
      fail(ErrorCode::TruncatedPayload, "gzip stream ended early");
    }
  }
  inflateEnd(&zs);
  return out;
}

inline std::vector<std::uint8_t> gzip(const std::vector<std::uint8_t>& in) {
  z_stream zs{};
  if (deflateInit2(&zs, Z_DEFAULT_COMPRESSION, Z_DEFLATED, 16 + MAX_WBITS, 8,
                   Z_DEFAULT_STRATEGY) != Z_OK)
    fail(ErrorCode::Io, "deflateInit2 failed");
  std::vector<std::uint8_t> out(deflateBound(&zs, static_cast<uLong>(in.size())));
  zs.next_in = const_cast<Bytef*>(in.data());
  zs.avail_in = static_cast<uInt>(in.size());
  zs.next_out = out.data();
  zs.avail_out = static_cast<uInt>(out.size());
  const int rc = deflate(&zs, Z_FINISH);
  deflateEnd(&zs);
  if (rc != Z_STREAM_END) fail(ErrorCode::Io, "gzip compression failed");
  out.resize(zs.total_out);
  return out;
}

inline std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::Io, "cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
  if (std::filesystem::is_directory(path)) fail(ErrorCode::Io, path.string() + " is a directory");
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCode::Io, "cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) fail(ErrorCode::Io, "write failed for " + path.string());
}

inline bool has_suffix(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

struct Decoded {
  Dims3 dims{};
  std::array<float, 3> spacing{};
  std::int16_t datatype = 0;
  std::vector<float> values;
  NiftiHeaderBytes header{};
  bool scaled = false;
};

inline Decoded decode(const std::filesystem::path& path) {
  std::vector<std::uint8_t> bytes = read_file(path);
  if (is_gzip(bytes)) bytes = gunzip(bytes);
  if (bytes.size() < kHeaderSize) fail(ErrorCode::MalformedHeader, "file shorter than 348 bytes");

  bool swap = false;
  auto sizeof_hdr = load<std::int32_t>(&bytes[kOffSizeofHdr], false);
  if (sizeof_hdr != 348) {
    swap = true;
    sizeof_hdr = load<std::int32_t>(&bytes[kOffSizeofHdr], true);
  }
  if (sizeof_hdr != 348) fail(ErrorCode::MalformedHeader, "sizeof_hdr is not 348");

  const char* magic = reinterpret_cast<const char*>(&bytes[kOffMagic]);
  const bool single = std::memcmp(magic, "n+1\0", 4) == 0;
  const bool paired = std::memcmp(magic, "ni1\0", 4) == 0;
  if (!single && !paired) fail(ErrorCode::MalformedHeader, "bad magic string");

  Decoded out;
  std::copy_n(bytes.begin(), kHeaderSize, out.header.begin());

  std::array<std::int16_t, 8> dim{};
  for (int i = 0; i < 8; ++i) dim[i] = load<std::int16_t>(&bytes[kOffDim + 2 * i], swap);
  if (dim[0] < 1 || dim[0] > 7) fail(ErrorCode::MalformedHeader, "dim[0] out of range");
  for (int i = 1; i <= dim[0]; ++i)
    if (dim[i] < 1) fail(ErrorCode::MalformedHeader, "non-positive dimension");
  for (int i = 4; i <= dim[0]; ++i)
    if (dim[i] != 1) fail(ErrorCode::MalformedHeader, "only single-frame 3D volumes are supported");
  for (int i = 0; i < 3; ++i)
    out.dims[i] = (i + 1 <= dim[0]) ? static_cast<std::size_t>(dim[i + 1]) : 1;

  for (int i = 0; i < 3; ++i) {
    const float s = load<float>(&bytes[kOffPixdim + 4 * (i + 1)], swap);
    out.spacing[i] = (std::isfinite(s) && s > 0.0f) ? s : 1.0f;
  }

  out.datatype = load<std::int16_t>(&bytes[kOffDatatype], swap);
  const int bpv = bytes_per_voxel(out.datatype);
  if (bpv == 0)
    fail(ErrorCode::UnsupportedDatatype, "datatype code " + std::to_string(out.datatype));

  const float vox_offset_f = load<float>(&bytes[kOffVoxOffset], swap);
  if (!(vox_offset_f >= 0.0f)) fail(ErrorCode::MalformedHeader, "negative vox_offset");
  auto vox_offset = static_cast<std::size_t>(vox_offset_f);

  std::vector<std::uint8_t> image_bytes;
  const std::uint8_t* payload = nullptr;
  std::size_t available = 0;
  if (single) {
    if (vox_offset < kHeaderSize) fail(ErrorCode::MalformedHeader, "vox_offset inside header");
    payload = bytes.data() + std::min(vox_offset, bytes.size());
    available = bytes.size() > vox_offset ? bytes.size() - vox_offset : 0;
  } else {
    auto img = path;
    std::string name = img.string();
    if (has_suffix(name, ".gz")) name.resize(name.size() - 3);
    img = std::filesystem::path(name).replace_extension(".img");
    image_bytes = read_file(img);
    if (is_gzip(image_bytes)) image_bytes = gunzip(image_bytes);
    payload = image_bytes.data() + std::min(vox_offset, image_bytes.size());
    available = image_bytes.size() > vox_offset ? image_bytes.size() - vox_offset : 0;
  }

  const std::size_t n = Grid3<float>::count(out.dims);
  if (available < n * static_cast<std::size_t>(bpv))
    fail(ErrorCode::TruncatedPayload, "expected " + std::to_string(n * bpv) + " voxel bytes, found " +
                                          std::to_string(available));

  out.values.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::uint8_t* p = payload + i * bpv;
    switch (out.datatype) {
      case kUint8: out.values[i] = static_cast<float>(*p); break;
      case kInt16: out.values[i] = static_cast<float>(load<std::int16_t>(p, swap)); break;
      case kInt32: out.values[i] = static_cast<float>(load<std::int32_t>(p, swap)); break;
      case kFloat32: out.values[i] = load<float>(p, swap); break;
      case kFloat64: out.values[i] = static_cast<float>(load<double>(p, swap)); break;
    }
  }

  const float slope = load<float>(&bytes[kOffSclSlope], swap);
  const float inter = load<float>(&bytes[kOffSclInter], swap);
  if (std::isfinite(slope) && slope != 0.0f && std::isfinite(inter) &&
      !(slope == 1.0f && inter == 0.0f)) {
    for (auto& v : out.values) v = v * slope + inter;
    out.scaled = true;
  }

  if (swap) {
    // Keep the preserved header in host order so a rewrite is self-consistent.
    out.header = {};
  }
  return out;
}

template <typename T>
T clamp_round(float v) {
  const double lo = static_cast<double>(std::numeric_limits<T>::lowest());
  const double hi = static_cast<double>(std::numeric_limits<T>::max());
  return static_cast<T>(std::clamp(std::nearbyint(static_cast<double>(v)), lo, hi));
}

inline void encode(const std::filesystem::path& path, const Dims3& dims,
                   const std::array<float, 3>& spacing, std::int16_t datatype,
                   const std::optional<NiftiHeaderBytes>& preserved,
                   const std::vector<float>& values) {
  const int bpv = bytes_per_voxel(datatype);
  if (bpv == 0) fail(ErrorCode::UnsupportedDatatype, "datatype code " + std::to_string(datatype));
  for (auto d : dims)
    require(d >= 1 && d <= 32767, ErrorCode::InvalidArgument, "dimension not representable");

  std::vector<std::uint8_t> bytes(kDefaultVoxOffset + values.size() * bpv, 0);
  bool keep = preserved.has_value() &&
              load<std::int32_t>(preserved->data() + kOffSizeofHdr, false) == 348;
  if (keep) std::copy(preserved->begin(), preserved->end(), bytes.begin());

  store<std::int32_t>(&bytes[kOffSizeofHdr], 348);
  const std::int16_t dim[8] = {3,
                               static_cast<std::int16_t>(dims[0]),
                               static_cast<std::int16_t>(dims[1]),
                               static_cast<std::int16_t>(dims[2]),
                               1, 1, 1, 1};
  for (int i = 0; i < 8; ++i) store<std::int16_t>(&bytes[kOffDim + 2 * i], dim[i]);
  store<std::int16_t>(&bytes[kOffDatatype], datatype);
  store<std::int16_t>(&bytes[kOffBitpix], static_cast<std::int16_t>(8 * bpv));
  if (!keep) store<float>(&bytes[kOffPixdim], 1.0f);  // qfac
  for (int i = 0; i < 3; ++i) store<float>(&bytes[kOffPixdim + 4 * (i + 1)], spacing[i]);
  store<float>(&bytes[kOffVoxOffset], static_cast<float>(kDefaultVoxOffset));
  store<float>(&bytes[kOffSclSlope], 1.0f);
  store<float>(&bytes[kOffSclInter], 0.0f);
  std::memcpy(&bytes[kOffMagic], "n+1\0", 4);
  // 4-byte extension flag at 348..351 stays zero.

  std::uint8_t* p = bytes.data() + kDefaultVoxOffset;
  for (std::size_t i = 0; i < values.size(); ++i, p += bpv) {
    switch (datatype) {
      case kUint8: *p = clamp_round<std::uint8_t>(values[i]); break;
      case kInt16: store(p, clamp_round<std::int16_t>(values[i])); break;
      case kInt32: store(p, clamp_round<std::int32_t>(values[i])); break;
      case kFloat32: store(p, values[i]); break;
      case kFloat64: store(p, static_cast<double>(values[i])); break;
    }
  }

  if (has_suffix(path.string(), ".gz")) bytes = gzip(bytes);
  write_file(path, bytes);
}

}  // namespace detail

/// Reads a NIfTI-1 volume. Applies scl_slope/scl_inter when the slope is non-zero.
inline Volume read_nifti(const std::filesystem::path& path) {
  auto d = detail::decode(path);
  Volume v(d.dims, std::move(d.values));
  v.spacing = d.spacing;
  // Scaled integers are no longer integers; keep them as float on rewrite.
  v.datatype_code = d.scaled ? std::int16_t{kFloat32} : d.datatype;
  v.header = d.header;
  return v;
}

/// Reads a NIfTI-1 file as a binary mask; any non-zero voxel is foreground.
inline Mask read_nifti_mask(const std::filesystem::path& path) {
  auto d = detail::decode(path);
  Mask m(d.dims);
  for (std::size_t i = 0; i < d.values.size(); ++i) m.data()[i] = d.values[i] != 0.0f ? 1 : 0;
  m.spacing = d.spacing;
  m.header = d.header;
  return m;
}

/// Writes using the volume's own datatype code; integer codes round to nearest.
/// A path ending in ".gz" is gzip-compressed.
inline void write_nifti(const Volume& v, const std::filesystem::path& path) {
  detail::encode(path, v.dims(), v.spacing, v.datatype_code, v.header, v.data());
}

inline void write_nifti(const Mask& m, const std::filesystem::path& path) {
  std::vector<float> values(m.data().begin(), m.data().end());
  detail::encode(path, m.dims(), m.spacing, kUint8, m.header, values);
}

}  // namespace cranioclip::nifti
