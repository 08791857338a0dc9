#pragma once

// Stochastic training-time transforms: volume-level 3D rotation, in-plane
// roto-translation + shear, flips, a two-ramp multiplicative bias field and
// uniform additive noise. Geometric transforms act on image and mask with
// the same parameters; intensity transforms touch the image only.

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <utility>

#include "cranioclip/error.hpp"
#include "cranioclip/volume.hpp"

namespace cranioclip::augment {

enum class Transform : unsigned {
  Rot3d = 1u << 0,
  Rot2d = 1u << 1,
  Translate = 1u << 2,
  Shear = 1u << 3,
  FlipLR = 1u << 4,
  FlipUD = 1u << 5,
  Bias = 1u << 6,
  Noise = 1u << 7,
};

class TransformSet {
 public:
  constexpr TransformSet() = default;
  constexpr TransformSet(std::initializer_list<Transform> ts) {
    for (auto t : ts) bits_ |= static_cast<unsigned>(t);
  }
  constexpr bool has(Transform t) const { return (bits_ & static_cast<unsigned>(t)) != 0; }
  constexpr void set(Transform t, bool on = true) {
    if (on)
      bits_ |= static_cast<unsigned>(t);
    else
      bits_ &= ~static_cast<unsigned>(t);
  }
  constexpr bool empty() const { return bits_ == 0; }
  constexpr unsigned bits() const { return bits_; }
  constexpr bool operator==(const TransformSet&) const = default;

 private:
  unsigned bits_ = 0;
};

/// Rows of the ablation table: which transforms each training run enables.
enum class AblationLabel { L0, L1, L2, L3, L4, All };

inline TransformSet transforms_for(AblationLabel label) {
  using T = Transform;
  switch (label) {
    case AblationLabel::L0: return {};
    case AblationLabel::L1: return {T::Rot3d};
    case AblationLabel::L2: return {T::Rot2d, T::Translate, T::FlipLR, T::FlipUD};
    case AblationLabel::L3: return {T::Shear};
    case AblationLabel::L4: return {T::Bias};
    case AblationLabel::All:
      return {T::Rot3d, T::Rot2d, T::Translate, T::Shear, T::FlipLR, T::FlipUD, T::Bias, T::Noise};
  }
  return {};
}

inline AblationLabel parse_ablation(std::string_view token) {
  if (token == "0") return AblationLabel::L0;
  if (token == "1") return AblationLabel::L1;
  if (token == "2") return AblationLabel::L2;
  if (token == "3") return AblationLabel::L3;
  if (token == "4") return AblationLabel::L4;
  if (token == "all" || token == "ALL") return AblationLabel::All;
  fail(ErrorCode::InvalidArgument,
       "ablation label must be one of 0,1,2,3,4,all (got '" + std::string(token) + "')");
}

inline std::string_view to_string(AblationLabel label) {
  switch (label) {
    case AblationLabel::L0: return "0";
    case AblationLabel::L1: return "1";
    case AblationLabel::L2: return "2";
    case AblationLabel::L3: return "3";
    case AblationLabel::L4: return "4";
    case AblationLabel::All: return "all";
  }
  return "?";
}

struct Range {
  double lo = 0.0;
  double hi = 0.0;
  bool contains(double v) const { return v >= lo && v <= hi; }
  bool operator==(const Range&) const = default;
};

/// Sampling ranges and the enabled transform set.
struct AugmentationConfig {
  std::array<double, 3> rot3d_deg{5.0, 5.0, 15.0};  // symmetric +- bound per axis
  Range rot2d_deg{0.0, 360.0};                       // half-open upper end
  int translate_px = 20;                             // integer shift in [-t, t]
  double shear = 0.10;                               // per-axis factor in [-s, s]
  Range bias_gain{0.5, 1.5};
  Range noise_amp{0.0, 0.02};
  /// Chance that an enabled transform fires on a given slice (flips are 50/50 on top).
  double probability = 1.0;
  TransformSet enabled{};

  static AugmentationConfig for_label(AblationLabel label) {
    AugmentationConfig cfg;
    cfg.enabled = transforms_for(label);
    return cfg;
  }

  void validate() const {
    for (double r : rot3d_deg)
      require(r >= 0.0 && std::isfinite(r), ErrorCode::InvalidArgument, "rot3d bound must be >= 0");
    require(rot2d_deg.lo <= rot2d_deg.hi, ErrorCode::InvalidArgument, "rot2d range min > max");
    require(translate_px >= 0, ErrorCode::InvalidArgument, "translate bound must be >= 0");
    require(shear >= 0.0 && shear < 1.0, ErrorCode::InvalidArgument, "shear bound must be in [0,1)");
    require(bias_gain.lo <= bias_gain.hi && bias_gain.lo > 0.0, ErrorCode::InvalidArgument,
            "bias gain range invalid");
    require(noise_amp.lo <= noise_amp.hi && noise_amp.lo >= 0.0, ErrorCode::InvalidArgument,
            "noise amplitude range invalid");
    require(probability >= 0.0 && probability <= 1.0, ErrorCode::InvalidArgument,
            "probability must be in [0,1]");
  }
};

/// Planar gain ramp: gain varies linearly from `gain_start` to `gain_end`
/// along direction `theta` across the slice's bounding box.
struct LinearMesh {
  double theta = 0.0;
  double gain_start = 1.0;
  double gain_end = 1.0;

  static LinearMesh unit() { return {}; }

  static LinearMesh make(double theta, double g0, double g1, Range allowed = {0.5, 1.5}) {
    require(allowed.contains(g0) && allowed.contains(g1), ErrorCode::InvalidArgument,
            "mesh gain outside [" + std::to_string(allowed.lo) + ", " + std::to_string(allowed.hi) +
                "]");
    return {theta, g0, g1};
  }

  Image2D render(std::size_t rows, std::size_t cols) const {
    const double ux = std::cos(theta);
    const double uy = std::sin(theta);
    // Projection extremes over the four corner pixel centres.
    double lo = 0.0, hi = 0.0;
    bool first = true;
    for (double y : {0.0, static_cast<double>(rows - 1)})
      for (double x : {0.0, static_cast<double>(cols - 1)}) {
        const double s = ux * x + uy * y;
        if (first || s < lo) lo = s;
        if (first || s > hi) hi = s;
        first = false;
      }
    const double span = hi - lo;
    Image2D out(rows, cols);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < cols; ++c) {
        const double s = ux * static_cast<double>(c) + uy * static_cast<double>(r);
        const double t = span > 1e-12 ? (s - lo) / span : 0.0;
        out(r, c) = static_cast<float>(gain_start + (gain_end - gain_start) * t);
      }
    return out;
  }

  bool operator==(const LinearMesh&) const = default;
};

/// Parameters drawn for one training slice.
struct AugmentationPlan {
  std::array<double, 3> rot3d_deg{0.0, 0.0, 0.0};
  double rot2d_deg = 0.0;
  int shift_y = 0;
  int shift_x = 0;
  double shear_x = 0.0;  // x' = x + shear_x * y
  double shear_y = 0.0;  // y' = y + shear_y * x
  bool flip_lr = false;
  bool flip_ud = false;
  bool bias = false;
  LinearMesh mesh1;
  LinearMesh mesh2;
  double noise_amp = 0.0;
  std::uint64_t rng_seed = 0;
  std::uint64_t noise_seed = 0;

  bool has_rot3d() const { return rot3d_deg != std::array<double, 3>{0.0, 0.0, 0.0}; }
  bool operator==(const AugmentationPlan&) const = default;
};

inline AugmentationPlan sample_plan(const AugmentationConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * unit(rng); };
  auto fires = [&](Transform t) {
    // Always consume the draw so plans stay aligned across enabled sets.
    const bool coin = unit(rng) < cfg.probability;
    return cfg.enabled.has(t) && coin;
  };

  AugmentationPlan plan;
  plan.rng_seed = seed;

  const bool rot3d = fires(Transform::Rot3d);
  std::array<double, 3> angles{};
  for (int i = 0; i < 3; ++i) angles[i] = uniform(-cfg.rot3d_deg[i], cfg.rot3d_deg[i]);
  if (rot3d) plan.rot3d_deg = angles;

  const bool rot2d = fires(Transform::Rot2d);
  double a = uniform(cfg.rot2d_deg.lo, cfg.rot2d_deg.hi);
  if (a >= cfg.rot2d_deg.hi && cfg.rot2d_deg.hi > cfg.rot2d_deg.lo) a = cfg.rot2d_deg.lo;
  if (rot2d) plan.rot2d_deg = a;

  const bool translate = fires(Transform::Translate);
  std::uniform_int_distribution<int> shift(-cfg.translate_px, cfg.translate_px);
  const int sy = shift(rng);
  const int sx = shift(rng);
  if (translate) {
    plan.shift_y = sy;
    plan.shift_x = sx;
  }

  const bool shear = fires(Transform::Shear);
  const double hx = uniform(-cfg.shear, cfg.shear);
  const double hy = uniform(-cfg.shear, cfg.shear);
  if (shear) {
    plan.shear_x = hx;
    plan.shear_y = hy;
  }

  const bool lr = fires(Transform::FlipLR);
  const bool lr_coin = unit(rng) < 0.5;
  const bool ud = fires(Transform::FlipUD);
  const bool ud_coin = unit(rng) < 0.5;
  plan.flip_lr = lr && lr_coin;
  plan.flip_ud = ud && ud_coin;

  const bool bias = fires(Transform::Bias);
  const double t1 = uniform(0.0, 2.0 * std::numbers::pi);
  const double g10 = uniform(cfg.bias_gain.lo, cfg.bias_gain.hi);
  const double g11 = uniform(cfg.bias_gain.lo, cfg.bias_gain.hi);
  const double t2 = uniform(0.0, 2.0 * std::numbers::pi);
  const double g20 = uniform(cfg.bias_gain.lo, cfg.bias_gain.hi);
  const double g21 = uniform(cfg.bias_gain.lo, cfg.bias_gain.hi);
  if (bias) {
    plan.bias = true;
    plan.mesh1 = LinearMesh::make(t1, g10, g11, cfg.bias_gain);
    plan.mesh2 = LinearMesh::make(t2, g20, g21, cfg.bias_gain);
  }

  const bool noise = fires(Transform::Noise);
  const double amp = uniform(cfg.noise_amp.lo, cfg.noise_amp.hi);
  if (noise) plan.noise_amp = amp;
  plan.noise_seed = rng();
  return plan;
}

// ---------------------------------------------------------------------------
// Resampling primitives. Coordinates are (row, col) in pixel units; anything
// outside the grid reads as zero.

template <typename T>
float sample_bilinear(const Grid2<T>& g, double r, double c) {
  const double r0f = std::floor(r), c0f = std::floor(c);
  const auto r0 = static_cast<long>(r0f), c0 = static_cast<long>(c0f);
  const double fr = r - r0f, fc = c - c0f;
  const long rows = static_cast<long>(g.rows()), cols = static_cast<long>(g.cols());
  auto at = [&](long rr, long cc) -> double {
    if (rr < 0 || cc < 0 || rr >= rows || cc >= cols) return 0.0;
    return static_cast<double>(g(static_cast<std::size_t>(rr), static_cast<std::size_t>(cc)));
  };
  const double v = (1 - fr) * ((1 - fc) * at(r0, c0) + fc * at(r0, c0 + 1)) +
                   fr * ((1 - fc) * at(r0 + 1, c0) + fc * at(r0 + 1, c0 + 1));
  return static_cast<float>(v);
}

template <typename T>
T sample_nearest(const Grid2<T>& g, double r, double c) {
  const auto rr = static_cast<long>(std::floor(r + 0.5));
  const auto cc = static_cast<long>(std::floor(c + 0.5));
  if (rr < 0 || cc < 0 || rr >= static_cast<long>(g.rows()) || cc >= static_cast<long>(g.cols()))
    return T{};
  return g(static_cast<std::size_t>(rr), static_cast<std::size_t>(cc));
}

/// Forward map about the slice centre c: p' = c + S * (R * (p - c) + t), with
/// R a rotation and S the unit-diagonal shear. Stores what the pull-back needs.
struct Affine2 {
  // (x, y) = (col, row) convention.
  double shear_inv[2][2];
  double rot_t[2][2];
  double tx, ty;
  double cx, cy;

  static Affine2 make(std::size_t rows, std::size_t cols, double rot_deg, double dy, double dx,
                      double shear_x, double shear_y) {
    const double th = rot_deg * std::numbers::pi / 180.0;
    const double ct = std::cos(th), st = std::sin(th);
    const double det = 1.0 - shear_x * shear_y;
    require(std::abs(det) > 1e-9, ErrorCode::InvalidArgument, "singular shear");
    Affine2 a{};
    a.shear_inv[0][0] = 1.0 / det;
    a.shear_inv[0][1] = -shear_x / det;
    a.shear_inv[1][0] = -shear_y / det;
    a.shear_inv[1][1] = 1.0 / det;
    a.rot_t[0][0] = ct;
    a.rot_t[0][1] = st;
    a.rot_t[1][0] = -st;
    a.rot_t[1][1] = ct;
    a.tx = dx;
    a.ty = dy;
    a.cx = (static_cast<double>(cols) - 1.0) / 2.0;
    a.cy = (static_cast<double>(rows) - 1.0) / 2.0;
    return a;
  }

  /// Source (row, col) for destination pixel (r, c): p = c + R^T (S^-1 (p' - c) - t).
  std::pair<double, double> source(double r, double c) const {
    const double x = c - cx, y = r - cy;
    const double qx = shear_inv[0][0] * x + shear_inv[0][1] * y - tx;
    const double qy = shear_inv[1][0] * x + shear_inv[1][1] * y - ty;
    const double px = rot_t[0][0] * qx + rot_t[0][1] * qy;
    const double py = rot_t[1][0] * qx + rot_t[1][1] * qy;
    return {py + cy, px + cx};
  }
};

/// Rotation, translation and shear in one resampling pass about the slice
/// centre. Images are bilinear, masks (is_mask) nearest-neighbour.
inline Image2D affine2d(const Image2D& slice, double rot_deg, std::pair<double, double> shift,
                        std::pair<double, double> shear, bool is_mask = false) {
  const auto a = Affine2::make(slice.rows(), slice.cols(), rot_deg, shift.first, shift.second,
                               shear.first, shear.second);
  Image2D out(slice.rows(), slice.cols());
  for (std::size_t r = 0; r < out.rows(); ++r)
    for (std::size_t c = 0; c < out.cols(); ++c) {
      const auto [sr, sc] = a.source(static_cast<double>(r), static_cast<double>(c));
      out(r, c) = is_mask ? sample_nearest(slice, sr, sc) : sample_bilinear(slice, sr, sc);
    }
  return out;
}

inline MaskSlice affine2d(const MaskSlice& mask, double rot_deg, std::pair<double, double> shift,
                          std::pair<double, double> shear) {
  const auto a = Affine2::make(mask.rows(), mask.cols(), rot_deg, shift.first, shift.second,
                               shear.first, shear.second);
  MaskSlice out(mask.rows(), mask.cols());
  for (std::size_t r = 0; r < out.rows(); ++r)
    for (std::size_t c = 0; c < out.cols(); ++c) {
      const auto [sr, sc] = a.source(static_cast<double>(r), static_cast<double>(c));
      out(r, c) = sample_nearest(mask, sr, sc);
    }
  return out;
}

template <typename T>
Grid2<T> flip(const Grid2<T>& slice, bool lr, bool ud) {
  Grid2<T> out(slice.rows(), slice.cols());
  const std::size_t R = slice.rows(), C = slice.cols();
  for (std::size_t r = 0; r < R; ++r)
    for (std::size_t c = 0; c < C; ++c)
      out(ud ? R - 1 - r : r, lr ? C - 1 - c : c) = slice(r, c);
  return out;
}

inline Image2D bias_field(const Image2D& slice, const LinearMesh& m1, const LinearMesh& m2) {
  const auto g1 = m1.render(slice.rows(), slice.cols());
  const auto g2 = m2.render(slice.rows(), slice.cols());
  Image2D out(slice.rows(), slice.cols());
  for (std::size_t i = 0; i < slice.size(); ++i)
    out.data()[i] = slice.data()[i] * g1.data()[i] * g2.data()[i];
  return out;
}

/// Adds i.i.d. U[-amplitude, +amplitude] noise.
template <typename Rng>
Image2D add_noise(const Image2D& slice, double amplitude, Rng& rng) {
  require(amplitude >= 0.0 && std::isfinite(amplitude), ErrorCode::InvalidArgument,
          "noise amplitude must be >= 0");
  Image2D out = slice;
  if (amplitude == 0.0) return out;
  std::uniform_real_distribution<double> u(-amplitude, amplitude);
  for (auto& v : out.data()) v = static_cast<float>(v + u(rng));
  return out;
}

/// Applies the slice-stage part of a plan: affine -> flip -> bias -> noise.
/// The 3D rotation belongs to the volume stage (see rotate3d / rotated_plane).
inline std::pair<Image2D, MaskSlice> apply_plan(const Image2D& slice, const MaskSlice& mask,
                                                const AugmentationPlan& plan) {
  require(slice.rows() == mask.rows() && slice.cols() == mask.cols(), ErrorCode::ShapeMismatch,
          "slice and mask shapes differ");
  Image2D img = slice;
  MaskSlice msk = mask;
  const bool geometric = plan.rot2d_deg != 0.0 || plan.shift_x != 0 || plan.shift_y != 0 ||
                         plan.shear_x != 0.0 || plan.shear_y != 0.0;
  if (geometric) {
    const std::pair<double, double> shift{plan.shift_y, plan.shift_x};
    const std::pair<double, double> shear{plan.shear_x, plan.shear_y};
    img = affine2d(img, plan.rot2d_deg, shift, shear);
    msk = affine2d(msk, plan.rot2d_deg, shift, shear);
  }
  if (plan.flip_lr || plan.flip_ud) {
    img = flip(img, plan.flip_lr, plan.flip_ud);
    msk = flip(msk, plan.flip_lr, plan.flip_ud);
  }
  if (plan.bias) img = bias_field(img, plan.mesh1, plan.mesh2);
  if (plan.noise_amp > 0.0) {
    std::mt19937_64 rng(plan.noise_seed);
    img = add_noise(img, plan.noise_amp, rng);
  }
  return {std::move(img), std::move(msk)};
}

// ---------------------------------------------------------------------------
// Volume stage.

/// Rotation matrix for intrinsic x, then y', then z'' rotations (degrees).
struct Rotation3 {
  std::array<std::array<double, 3>, 3> m{};

  static Rotation3 identity() {
    Rotation3 r;
    for (int i = 0; i < 3; ++i) r.m[i][i] = 1.0;
    return r;
  }

  static Rotation3 from_degrees(const std::array<double, 3>& deg) {
    const double k = std::numbers::pi / 180.0;
    const double a = deg[0] * k, b = deg[1] * k, c = deg[2] * k;
    const double ca = std::cos(a), sa = std::sin(a);
    const double cb = std::cos(b), sb = std::sin(b);
    const double cc = std::cos(c), sc = std::sin(c);
    Rotation3 rx, ry, rz;
    rx.m = {{{1, 0, 0}, {0, ca, -sa}, {0, sa, ca}}};
    ry.m = {{{cb, 0, sb}, {0, 1, 0}, {-sb, 0, cb}}};
    rz.m = {{{cc, -sc, 0}, {sc, cc, 0}, {0, 0, 1}}};
    return rx * ry * rz;
  }

  Rotation3 transposed() const {
    Rotation3 t;
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) t.m[i][j] = m[j][i];
    return t;
  }

  friend Rotation3 operator*(const Rotation3& a, const Rotation3& b) {
    Rotation3 r;
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j)
        for (int k = 0; k < 3; ++k) r.m[i][j] += a.m[i][k] * b.m[k][j];
    return r;
  }
};

namespace detail {

inline float sample_trilinear(const Grid3<float>& v, double x, double y, double z) {
  const double x0f = std::floor(x), y0f = std::floor(y), z0f = std::floor(z);
  const long x0 = static_cast<long>(x0f), y0 = static_cast<long>(y0f), z0 = static_cast<long>(z0f);
  const double fx = x - x0f, fy = y - y0f, fz = z - z0f;
  const long nx = static_cast<long>(v.nx()), ny = static_cast<long>(v.ny()),
             nz = static_cast<long>(v.nz());
  double acc = 0.0;
  for (int dz = 0; dz < 2; ++dz) {
    const long zz = z0 + dz;
    if (zz < 0 || zz >= nz) continue;
    const double wz = dz ? fz : 1 - fz;
    for (int dy = 0; dy < 2; ++dy) {
      const long yy = y0 + dy;
      if (yy < 0 || yy >= ny) continue;
      const double wy = dy ? fy : 1 - fy;
      for (int dx = 0; dx < 2; ++dx) {
        const long xx = x0 + dx;
        if (xx < 0 || xx >= nx) continue;
        const double wx = dx ? fx : 1 - fx;
        acc += wz * wy * wx *
               v(static_cast<std::size_t>(xx), static_cast<std::size_t>(yy),
                 static_cast<std::size_t>(zz));
      }
    }
  }
  return static_cast<float>(acc);
}

template <typename T>
T sample_nearest3(const Grid3<T>& v, double x, double y, double z) {
  const long xx = static_cast<long>(std::floor(x + 0.5));
  const long yy = static_cast<long>(std::floor(y + 0.5));
  const long zz = static_cast<long>(std::floor(z + 0.5));
  if (xx < 0 || yy < 0 || zz < 0 || xx >= static_cast<long>(v.nx()) ||
      yy >= static_cast<long>(v.ny()) || zz >= static_cast<long>(v.nz()))
    return T{};
  return v(static_cast<std::size_t>(xx), static_cast<std::size_t>(yy),
           static_cast<std::size_t>(zz));
}

/// Pull-back of output voxel p under rotation R about the centre: c + R^T (p - c).
struct RotationPullback {
  Rotation3 rt;
  std::array<double, 3> centre;

  RotationPullback(const Rotation3& r, const Dims3& dims)
      : rt(r.transposed()),
        centre{(static_cast<double>(dims[0]) - 1) / 2, (static_cast<double>(dims[1]) - 1) / 2,
               (static_cast<double>(dims[2]) - 1) / 2} {}

  std::array<double, 3> operator()(std::size_t x, std::size_t y, std::size_t z) const {
    const double d[3] = {static_cast<double>(x) - centre[0], static_cast<double>(y) - centre[1],
                         static_cast<double>(z) - centre[2]};
    std::array<double, 3> s{};
    for (int i = 0; i < 3; ++i)
      s[i] = centre[i] + rt.m[i][0] * d[0] + rt.m[i][1] * d[1] + rt.m[i][2] * d[2];
    return s;
  }
};

}  // namespace detail

/// Rotates a volume (trilinear) and optional mask (nearest) by R about the volume centre.
inline std::pair<Volume, std::optional<Mask>> rotate3d(const Volume& v, const Rotation3& rotation,
                                                       const Mask* mask = nullptr) {
  if (mask)
    require(mask->dims() == v.dims(), ErrorCode::ShapeMismatch, "volume and mask dims differ");
  const detail::RotationPullback pull(rotation, v.dims());
  Volume out = v;
  std::optional<Mask> out_mask;
  if (mask) out_mask = *mask;
  for (std::size_t z = 0; z < v.nz(); ++z)
    for (std::size_t y = 0; y < v.ny(); ++y)
      for (std::size_t x = 0; x < v.nx(); ++x) {
        const auto s = pull(x, y, z);
        out(x, y, z) = detail::sample_trilinear(v, s[0], s[1], s[2]);
        if (mask) (*out_mask)(x, y, z) = detail::sample_nearest3(*mask, s[0], s[1], s[2]);
      }
  return {std::move(out), std::move(out_mask)};
}

inline std::pair<Volume, std::optional<Mask>> rotate3d(const Volume& v,
                                                       const std::array<double, 3>& angles_deg,
                                                       const Mask* mask = nullptr) {
  for (double a : angles_deg)
    require(std::isfinite(a), ErrorCode::InvalidArgument, "non-finite rotation angle");
  return rotate3d(v, Rotation3::from_degrees(angles_deg), mask);
}

/// Slice k along `axis` of rotate3d(v, R), computed without rotating the
/// whole volume. Bit-identical to extract_plane(rotate3d(...)).
inline Image2D rotated_plane(const Volume& v, const Rotation3& rotation, Axis axis, std::size_t k) {
  const detail::RotationPullback pull(rotation, v.dims());
  const auto layout = plane_layout(axis);
  Image2D out(v.dims()[layout.row_dim], v.dims()[layout.col_dim]);
  for (std::size_t r = 0; r < out.rows(); ++r)
    for (std::size_t c = 0; c < out.cols(); ++c) {
      const auto p = plane_voxel(axis, k, r, c);
      const auto s = pull(p[0], p[1], p[2]);
      out(r, c) = detail::sample_trilinear(v, s[0], s[1], s[2]);
    }
  return out;
}

inline MaskSlice rotated_plane(const Mask& m, const Rotation3& rotation, Axis axis, std::size_t k) {
  const detail::RotationPullback pull(rotation, m.dims());
  const auto layout = plane_layout(axis);
  MaskSlice out(m.dims()[layout.row_dim], m.dims()[layout.col_dim]);
  for (std::size_t r = 0; r < out.rows(); ++r)
    for (std::size_t c = 0; c < out.cols(); ++c) {
      const auto p = plane_voxel(axis, k, r, c);
      const auto s = pull(p[0], p[1], p[2]);
      out(r, c) = detail::sample_nearest3(m, s[0], s[1], s[2]);
    }
  return out;
}

}  // namespace cranioclip::augment
