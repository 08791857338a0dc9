#pragma once

// Whole-volume brain extraction: slice-wise prediction along the three
// axes, per-voxel weighted fusion, thresholding and morphological cleanup.

#include <array>
#include <chrono>
#include <cstddef>
#include <optional>
#include <vector>

#include "cranioclip/autodiff/tensor.hpp"
#include "cranioclip/error.hpp"
#include "cranioclip/morphology.hpp"
#include "cranioclip/unet.hpp"
#include "cranioclip/volume.hpp"

namespace cranioclip::inference {

/// Binary mask predicted slice-by-slice along one axis, with the number of
/// foreground voxels in each of its slices.
struct ProjectionMask {
  Axis axis = Axis::Axial;
  Mask mask;
  std::vector<std::size_t> slice_counts;

  static ProjectionMask from_mask(Axis axis, Mask mask) {
    ProjectionMask p{axis, std::move(mask), {}};
    p.slice_counts = count_slices(p.mask, axis);
    return p;
  }

  static std::vector<std::size_t> count_slices(const Mask& m, Axis axis) {
    std::vector<std::size_t> counts(slice_count(m.dims(), axis), 0);
    const int a = static_cast<int>(axis);
    for (std::size_t z = 0; z < m.nz(); ++z)
      for (std::size_t y = 0; y < m.ny(); ++y)
        for (std::size_t x = 0; x < m.nx(); ++x) {
          const std::size_t k = a == 0 ? x : a == 1 ? y : z;
          counts[k] += m(x, y, z);
        }
    return counts;
  }

  bool consistent() const { return slice_counts == count_slices(mask, axis); }
};

struct FusedProbability {
  Dims3 dims{};
  std::vector<double> data;

  double operator()(std::size_t x, std::size_t y, std::size_t z) const {
    return data[x + dims[0] * (y + dims[1] * z)];
  }
};

/// Predicts one axis. `volume` must already be standardized.
template <typename T>
ProjectionMask predict_projection(unet::ModelParams<T>& model, const Volume& volume, Axis axis,
                                  std::size_t batch_slices = 8) {
  require(batch_slices >= 1, ErrorCode::InvalidArgument, "batch_slices must be >= 1");
  ad::NoGradGuard no_grad;
  const std::size_t n = slice_count(volume.dims(), axis);
  Mask out(volume.dims());
  out.spacing = volume.spacing;
  out.header = volume.header;

  for (std::size_t start = 0; start < n; start += batch_slices) {
    const std::size_t count = std::min(batch_slices, n - start);
    std::vector<Image2D> padded;
    SlicePad pad{};
    for (std::size_t i = 0; i < count; ++i) {
      auto [p, geometry] = pad_slice(extract_plane<float>(volume, axis, start + i), 0.0f);
      pad = geometry;
      padded.push_back(std::move(p));
    }
    const std::size_t H = pad.padded_height, W = pad.padded_width;
    std::vector<T> xs(count * H * W);
    for (std::size_t i = 0; i < count; ++i)
      std::copy(padded[i].data().begin(), padded[i].data().end(), xs.begin() + i * H * W);
    ad::Tensor<T> x({count, 1, H, W}, std::move(xs));
    const auto p = unet::forward(model, x, ad::Mode::Infer);
    const auto pv = p.values();
    for (std::size_t i = 0; i < count; ++i) {
      MaskSlice full(H, W);
      for (std::size_t j = 0; j < H * W; ++j)
        full.data()[j] = pv[(i * 2 + 1) * H * W + j] > pv[(i * 2) * H * W + j] ? 1 : 0;
      insert_plane<std::uint8_t>(out, axis, start + i, crop_slice(full, pad));
    }
  }
  return ProjectionMask::from_mask(axis, std::move(out));
}

/// Per-voxel convex combination of three projection masks, each weighted by
/// the foreground count N_i of the voxel's slice along that projection:
/// fused = sum_i (N_i / N_tot) * mask_i with N_tot = N_1 + N_2 + N_3 (0 if N_tot = 0).
inline FusedProbability fuse(const ProjectionMask& p1, const ProjectionMask& p2,
                             const ProjectionMask& p3) {
  const std::array<const ProjectionMask*, 3> ps{&p1, &p2, &p3};
  const Dims3 dims = p1.mask.dims();
  for (const auto* p : ps) {
    require(p->mask.dims() == dims, ErrorCode::ShapeMismatch, "fuse: projection dims differ");
    require(p->slice_counts.size() == slice_count(dims, p->axis), ErrorCode::ShapeMismatch,
            "fuse: slice_counts length does not match axis");
  }
  FusedProbability out{dims, std::vector<double>(Grid3<std::uint8_t>::count(dims), 0.0)};
  for (std::size_t z = 0; z < dims[2]; ++z)
    for (std::size_t y = 0; y < dims[1]; ++y)
      for (std::size_t x = 0; x < dims[0]; ++x) {
        const std::array<std::size_t, 3> coord{x, y, z};
        double counts[3];
        double total = 0.0;
        for (int i = 0; i < 3; ++i) {
          counts[i] = double(ps[i]->slice_counts[coord[static_cast<int>(ps[i]->axis)]]);
          total += counts[i];
        }
        if (total == 0.0) continue;
        double v = 0.0;
        for (int i = 0; i < 3; ++i) v += (counts[i] / total) * ps[i]->mask(x, y, z);
        out.data[p1.mask.index(x, y, z)] = std::min(1.0, v);
      }
  return out;
}

/// mask = fused >= tau.
inline Mask threshold(const FusedProbability& f, double tau = 0.5) {
  require(tau > 0.0 && tau < 1.0, ErrorCode::InvalidArgument, "threshold must be in (0,1)");
  Mask out(f.dims);
  for (std::size_t i = 0; i < f.data.size(); ++i) out.data()[i] = f.data[i] >= tau ? 1 : 0;
  return out;
}

struct RefineResult {
  Mask mask;
  bool empty = false;  // input had no foreground; returned unchanged
};

/// Largest 26-connected component, interior hole filling, then closing and
/// opening with a 3x3x3 cube. Component selection and hole filling are run
/// once more after smoothing, since opening can split and closing can enclose.
inline RefineResult refine(const Mask& m) {
  if (m.count_ones() == 0) return {m, true};
  using namespace morphology;
  Mask r = fill_holes(largest_component(m, Connectivity::Full));
  r = opening(closing(r));
  if (r.count_ones() == 0) {
    // Smoothing erased a tiny mask; fall back to the unsmoothed cleanup.
    r = fill_holes(largest_component(m, Connectivity::Full));
  } else {
    r = fill_holes(largest_component(r, Connectivity::Full));
  }
  r.spacing = m.spacing;
  r.header = m.header;
  return {std::move(r), false};
}

struct ExtractOptions {
  std::optional<Axis> single_projection;  // bypasses fusion when set
  double tau = 0.5;
  bool refine = true;
  std::size_t batch_slices = 8;
};

struct ExtractResult {
  Mask mask;
  double seconds_total = 0.0;
  std::array<double, 3> seconds_per_projection{0.0, 0.0, 0.0};  // sagittal, coronal, axial
  std::size_t voxels_brain = 0;
  bool empty_warning = false;
};

/// standardize -> three projections -> fuse -> threshold -> refine.
template <typename T>
ExtractResult extract(unet::ModelParams<T>& model, const Volume& volume,
                      const ExtractOptions& opts = {}) {
  using clock = std::chrono::steady_clock;
  const auto t0 = clock::now();
  const Volume v = standardize(volume);
  ExtractResult result;

  Mask raw;
  if (opts.single_projection) {
    const auto ts = clock::now();
    raw = predict_projection(model, v, *opts.single_projection, opts.batch_slices).mask;
    result.seconds_per_projection[static_cast<int>(*opts.single_projection)] =
        std::chrono::duration<double>(clock::now() - ts).count();
  } else {
    std::array<ProjectionMask, 3> ps;
    for (Axis axis : kAllAxes) {
      const auto ts = clock::now();
      ps[static_cast<int>(axis)] = predict_projection(model, v, axis, opts.batch_slices);
      result.seconds_per_projection[static_cast<int>(axis)] =
          std::chrono::duration<double>(clock::now() - ts).count();
    }
    raw = threshold(fuse(ps[0], ps[1], ps[2]), opts.tau);
  }

  if (opts.refine) {
    auto r = refine(raw);
    result.mask = std::move(r.mask);
    result.empty_warning = r.empty;
  } else {
    result.mask = std::move(raw);
    result.empty_warning = result.mask.count_ones() == 0;
  }
  result.mask.spacing = volume.spacing;
  result.mask.header = volume.header;
  result.voxels_brain = result.mask.count_ones();
  result.seconds_total = std::chrono::duration<double>(clock::now() - t0).count();
  return result;
}

}  // namespace cranioclip::inference
