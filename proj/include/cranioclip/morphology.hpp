#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <numeric>
#include <vector>

#include "cranioclip/error.hpp"
#include "cranioclip/volume.hpp"

namespace cranioclip::morphology {

enum class Connectivity { Face = 6, Full = 26 };

struct Labeling {
  std::vector<std::int32_t> labels;  // 0 = not in the labelled set, else 1..count
  std::vector<std::size_t> sizes;    // sizes[l - 1]
  std::size_t count() const { return sizes.size(); }
};

namespace detail {

struct UnionFind {
  std::vector<std::int32_t> parent;
  std::int32_t make() {
    parent.push_back(static_cast<std::int32_t>(parent.size()));
    return parent.back();
  }
  std::int32_t find(std::int32_t a) {
    while (parent[a] != a) {
      parent[a] = parent[parent[a]];
      a = parent[a];
    }
    return a;
  }
  void unite(std::int32_t a, std::int32_t b) {
    a = find(a);
    b = find(b);
    if (a == b) return;
    if (b < a) std::swap(a, b);
    parent[b] = a;  // smaller root wins so labels follow scan order
  }
};

// Neighbours already visited in x-fastest raster order.
inline std::vector<std::array<int, 3>> backward_offsets(Connectivity conn) {
  std::vector<std::array<int, 3>> out;
  for (int dz = -1; dz <= 0; ++dz)
    for (int dy = -1; dy <= 1; ++dy)
      for (int dx = -1; dx <= 1; ++dx) {
        if (dz == 0 && (dy > 0 || (dy == 0 && dx >= 0))) continue;
        const int manhattan = std::abs(dx) + std::abs(dy) + std::abs(dz);
        if (conn == Connectivity::Face && manhattan != 1) continue;
        out.push_back({dx, dy, dz});
      }
  return out;
}

}  // namespace detail

/// Two-pass union-find labelling of voxels whose value equals `value`.
/// Labels are numbered in order of each component's first voxel in raster order.
inline Labeling label_components(const Mask& m, Connectivity conn, std::uint8_t value = 1) {
  const auto [nx, ny, nz] = m.dims();
  const auto offsets = detail::backward_offsets(conn);
  detail::UnionFind uf;
  std::vector<std::int32_t> provisional(m.size(), -1);
  for (std::size_t z = 0; z < nz; ++z)
    for (std::size_t y = 0; y < ny; ++y)
      for (std::size_t x = 0; x < nx; ++x) {
        const std::size_t i = m.index(x, y, z);
        if (m.data()[i] != value) continue;
        std::int32_t lab = -1;
        for (const auto& o : offsets) {
          const long xx = long(x) + o[0], yy = long(y) + o[1], zz = long(z) + o[2];
          if (xx < 0 || yy < 0 || zz < 0 || xx >= long(nx) || yy >= long(ny)) continue;
          const std::int32_t nl = provisional[m.index(std::size_t(xx), std::size_t(yy), std::size_t(zz))];
          if (nl < 0) continue;
          if (lab < 0)
            lab = nl;
          else
            uf.unite(lab, nl);
        }
        provisional[i] = lab < 0 ? uf.make() : lab;
      }

  Labeling out;
  out.labels.assign(m.size(), 0);
  std::vector<std::int32_t> final_label(uf.parent.size(), 0);
  for (std::size_t i = 0; i < m.size(); ++i) {
    if (provisional[i] < 0) continue;
    const auto root = uf.find(provisional[i]);
    if (final_label[root] == 0) {
      out.sizes.push_back(0);
      final_label[root] = static_cast<std::int32_t>(out.sizes.size());
    }
    out.labels[i] = final_label[root];
    ++out.sizes[final_label[root] - 1];
  }
  return out;
}

/// Keeps the largest foreground component; ties go to the one met first in raster order.
inline Mask largest_component(const Mask& m, Connectivity conn = Connectivity::Full) {
  const auto lab = label_components(m, conn, 1);
  Mask out = m;
  std::fill(out.data().begin(), out.data().end(), 0);
  if (lab.count() == 0) return out;
  const auto best = std::max_element(lab.sizes.begin(), lab.sizes.end()) - lab.sizes.begin() + 1;
  for (std::size_t i = 0; i < m.size(); ++i) out.data()[i] = lab.labels[i] == best ? 1 : 0;
  return out;
}

/// Background components (6-connected) that never touch the volume border become foreground.
inline Mask fill_holes(const Mask& m) {
  const auto lab = label_components(m, Connectivity::Face, 0);
  std::vector<bool> touches(lab.count() + 1, false);
  const auto [nx, ny, nz] = m.dims();
  for (std::size_t z = 0; z < nz; ++z)
    for (std::size_t y = 0; y < ny; ++y)
      for (std::size_t x = 0; x < nx; ++x) {
        if (x != 0 && y != 0 && z != 0 && x + 1 != nx && y + 1 != ny && z + 1 != nz) continue;
        touches[lab.labels[m.index(x, y, z)]] = true;
      }
  Mask out = m;
  for (std::size_t i = 0; i < m.size(); ++i)
    if (lab.labels[i] > 0 && !touches[lab.labels[i]]) out.data()[i] = 1;
  return out;
}

namespace detail {

// 3-tap max (dilate) or min (erode) along one axis; out-of-range taps are ignored.
inline void pass(const Mask& in, Mask& out, int axis, bool dilate) {
  const auto d = in.dims();
  const std::size_t stride = axis == 0 ? 1 : axis == 1 ? d[0] : d[0] * d[1];
  const std::size_t len = d[axis];
  for (std::size_t z = 0; z < d[2]; ++z)
    for (std::size_t y = 0; y < d[1]; ++y)
      for (std::size_t x = 0; x < d[0]; ++x) {
        const std::size_t i = in.index(x, y, z);
        const std::size_t pos = axis == 0 ? x : axis == 1 ? y : z;
        std::uint8_t v = in.data()[i];
        if (pos > 0) v = dilate ? std::max(v, in.data()[i - stride]) : std::min(v, in.data()[i - stride]);
        if (pos + 1 < len)
          v = dilate ? std::max(v, in.data()[i + stride]) : std::min(v, in.data()[i + stride]);
        out.data()[i] = v;
      }
}

inline Mask cube_filter(const Mask& m, bool dilate) {
  Mask a = m, b = m;
  pass(m, a, 0, dilate);
  pass(a, b, 1, dilate);
  pass(b, a, 2, dilate);
  return a;
}

}  // namespace detail

inline Mask dilate(const Mask& m) { return detail::cube_filter(m, true); }
inline Mask erode(const Mask& m) { return detail::cube_filter(m, false); }
inline Mask closing(const Mask& m) { return erode(dilate(m)); }
inline Mask opening(const Mask& m) { return dilate(erode(m)); }

}  // namespace cranioclip::morphology
