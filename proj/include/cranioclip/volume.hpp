#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "cranioclip/error.hpp"

namespace cranioclip {

using Dims3 = std::array<std::size_t, 3>;

/// Row-major 2D grid. Used for image slices (float) and mask slices (uint8).
template <typename T>
class Grid2 {
 public:
  Grid2() = default;
  Grid2(std::size_t rows, std::size_t cols, T fill = T{})
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Grid2(std::size_t rows, std::size_t cols, std::vector<T> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    require(data_.size() == rows_ * cols_, ErrorCode::ShapeMismatch, "grid data length");
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }

  T& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  const T& operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::vector<T>& data() noexcept { return data_; }
  const std::vector<T>& data() const noexcept { return data_; }

  bool operator==(const Grid2&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<T> data_;
};

using Image2D = Grid2<float>;
using MaskSlice = Grid2<std::uint8_t>;

/// 3D grid with x varying fastest (NIfTI voxel order).
template <typename T>
class Grid3 {
 public:
  Grid3() = default;
  explicit Grid3(Dims3 dims, T fill = T{}) : dims_(dims), data_(count(dims), fill) {
    check_dims(dims);
  }
  Grid3(Dims3 dims, std::vector<T> data) : dims_(dims), data_(std::move(data)) {
    check_dims(dims);
    require(data_.size() == count(dims_), ErrorCode::ShapeMismatch, "volume data length");
  }

  const Dims3& dims() const noexcept { return dims_; }
  std::size_t nx() const noexcept { return dims_[0]; }
  std::size_t ny() const noexcept { return dims_[1]; }
  std::size_t nz() const noexcept { return dims_[2]; }
  std::size_t size() const noexcept { return data_.size(); }

  std::size_t index(std::size_t x, std::size_t y, std::size_t z) const noexcept {
    return x + dims_[0] * (y + dims_[1] * z);
  }
  T& operator()(std::size_t x, std::size_t y, std::size_t z) { return data_[index(x, y, z)]; }
  const T& operator()(std::size_t x, std::size_t y, std::size_t z) const {
    return data_[index(x, y, z)];
  }

  std::vector<T>& data() noexcept { return data_; }
  const std::vector<T>& data() const noexcept { return data_; }

  static std::size_t count(const Dims3& d) { return d[0] * d[1] * d[2]; }

 private:
  static void check_dims(const Dims3& d) {
    require(d[0] >= 1 && d[1] >= 1 && d[2] >= 1, ErrorCode::InvalidArgument,
            "volume dims must be >= 1");
  }

  Dims3 dims_{0, 0, 0};
  std::vector<T> data_;
};

/// Raw 348-byte NIfTI-1 header kept so orientation fields survive a rewrite.
using NiftiHeaderBytes = std::array<std::uint8_t, 348>;

struct Volume : Grid3<float> {
  Volume() = default;
  explicit Volume(Dims3 dims, float fill = 0.0f) : Grid3<float>(dims, fill) {}
  Volume(Dims3 dims, std::vector<float> data) : Grid3<float>(dims, std::move(data)) {}

  std::array<float, 3> spacing{1.0f, 1.0f, 1.0f};
  std::int16_t datatype_code = 16;
  std::optional<NiftiHeaderBytes> header;
};

struct Mask : Grid3<std::uint8_t> {
  Mask() = default;
  explicit Mask(Dims3 dims, std::uint8_t fill = 0) : Grid3<std::uint8_t>(dims, fill) {}
  Mask(Dims3 dims, std::vector<std::uint8_t> data) : Grid3<std::uint8_t>(dims, std::move(data)) {
    for (auto v : this->data())
      require(v <= 1, ErrorCode::InvalidArgument, "mask values must be 0 or 1");
  }

  std::array<float, 3> spacing{1.0f, 1.0f, 1.0f};
  std::optional<NiftiHeaderBytes> header;

  std::size_t count_ones() const {
    std::size_t n = 0;
    for (auto v : data()) n += v;
    return n;
  }
};

/// Slicing axis; the value is the index of the voxel coordinate held fixed.
enum class Axis : int { Sagittal = 0, Coronal = 1, Axial = 2 };

inline constexpr std::array<Axis, 3> kAllAxes{Axis::Sagittal, Axis::Coronal, Axis::Axial};

inline std::string_view to_string(Axis a) {
  switch (a) {
    case Axis::Sagittal: return "sagittal";
    case Axis::Coronal: return "coronal";
    case Axis::Axial: return "axial";
  }
  return "?";
}

inline Axis parse_axis(std::string_view s) {
  if (s == "sagittal") return Axis::Sagittal;
  if (s == "coronal") return Axis::Coronal;
  if (s == "axial") return Axis::Axial;
  fail(ErrorCode::InvalidArgument, "unknown axis '" + std::string(s) + "'");
}

// Plane layout per axis (rows, cols):
//   sagittal x=k -> (z, y);  coronal y=k -> (z, x);  axial z=k -> (y, x)
struct PlaneLayout {
  int row_dim;
  int col_dim;
};

inline PlaneLayout plane_layout(Axis axis) {
  switch (axis) {
    case Axis::Sagittal: return {2, 1};
    case Axis::Coronal: return {2, 0};
    case Axis::Axial: return {1, 0};
  }
  return {1, 0};
}

inline std::size_t slice_count(const Dims3& dims, Axis axis) {
  return dims[static_cast<int>(axis)];
}

/// Voxel coordinates of plane pixel (r, c) of slice k along `axis`.
inline std::array<std::size_t, 3> plane_voxel(Axis axis, std::size_t k, std::size_t r,
                                              std::size_t c) {
  std::array<std::size_t, 3> p{};
  const auto layout = plane_layout(axis);
  p[static_cast<int>(axis)] = k;
  p[layout.row_dim] = r;
  p[layout.col_dim] = c;
  return p;
}

template <typename T>
Grid2<T> extract_plane(const Grid3<T>& g, Axis axis, std::size_t k) {
  const auto layout = plane_layout(axis);
  require(k < g.dims()[static_cast<int>(axis)], ErrorCode::InvalidArgument,
          "slice index out of range");
  Grid2<T> out(g.dims()[layout.row_dim], g.dims()[layout.col_dim]);
  for (std::size_t r = 0; r < out.rows(); ++r)
    for (std::size_t c = 0; c < out.cols(); ++c) {
      const auto p = plane_voxel(axis, k, r, c);
      out(r, c) = g(p[0], p[1], p[2]);
    }
  return out;
}

template <typename T>
void insert_plane(Grid3<T>& g, Axis axis, std::size_t k, const Grid2<T>& plane) {
  const auto layout = plane_layout(axis);
  require(plane.rows() == g.dims()[layout.row_dim] && plane.cols() == g.dims()[layout.col_dim],
          ErrorCode::ShapeMismatch, "plane does not match volume");
  for (std::size_t r = 0; r < plane.rows(); ++r)
    for (std::size_t c = 0; c < plane.cols(); ++c) {
      const auto p = plane_voxel(axis, k, r, c);
      g(p[0], p[1], p[2]) = plane(r, c);
    }
}

/// Geometry of a slice padded up to a network-compatible size.
struct SlicePad {
  std::size_t height = 0;  // original
  std::size_t width = 0;
  std::size_t padded_height = 0;
  std::size_t padded_width = 0;
  std::size_t top = 0;
  std::size_t left = 0;

  bool operator==(const SlicePad&) const = default;
};

inline constexpr std::size_t kSizeMultiple = 32;

inline std::size_t round_up_multiple(std::size_t n, std::size_t m = kSizeMultiple) {
  return ((n + m - 1) / m) * m;
}

/// Centers `slice` in an H x W canvas filled with `fill`.
template <typename T>
std::pair<Grid2<T>, SlicePad> pad_slice_to(const Grid2<T>& slice, std::size_t H, std::size_t W,
                                           T fill = T{}) {
  require(slice.rows() >= 1 && slice.cols() >= 1, ErrorCode::InvalidArgument, "empty slice");
  require(H >= slice.rows() && W >= slice.cols(), ErrorCode::InvalidArgument,
          "pad target smaller than slice");
  SlicePad pad{slice.rows(), slice.cols(), H, W, (H - slice.rows()) / 2, (W - slice.cols()) / 2};
  Grid2<T> out(H, W, fill);
  for (std::size_t r = 0; r < slice.rows(); ++r)
    for (std::size_t c = 0; c < slice.cols(); ++c) out(r + pad.top, c + pad.left) = slice(r, c);
  return {std::move(out), pad};
}

/// Pads to the smallest multiples of 32 that contain the slice.
template <typename T>
std::pair<Grid2<T>, SlicePad> pad_slice(const Grid2<T>& slice, T fill = T{}) {
  return pad_slice_to(slice, round_up_multiple(slice.rows()), round_up_multiple(slice.cols()),
                      fill);
}

template <typename T>
Grid2<T> crop_slice(const Grid2<T>& padded, const SlicePad& pad) {
  require(padded.rows() == pad.padded_height && padded.cols() == pad.padded_width,
          ErrorCode::ShapeMismatch, "crop geometry does not match padded slice");
  Grid2<T> out(pad.height, pad.width);
  for (std::size_t r = 0; r < pad.height; ++r)
    for (std::size_t c = 0; c < pad.width; ++c) out(r, c) = padded(r + pad.top, c + pad.left);
  return out;
}

/// Whole-volume z-score with the population standard deviation.
inline Volume standardize(const Volume& v) {
  const auto& d = v.data();
  require(!d.empty(), ErrorCode::EmptyInput, "empty volume");
  double mean = 0.0;
  for (float x : d) mean += x;
  mean /= static_cast<double>(d.size());
  double ss = 0.0;
  for (float x : d) ss += (x - mean) * (x - mean);
  const double sigma = std::sqrt(ss / static_cast<double>(d.size()));
  if (!(sigma >= 1e-8)) fail(ErrorCode::DegenerateInput, "volume is (near) constant");
  Volume out = v;
  for (auto& x : out.data()) x = static_cast<float>((x - mean) / sigma);
  return out;
}

}  // namespace cranioclip
