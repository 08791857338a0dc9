#pragma once

// Synthetic head phantoms with a known brain mask: a textured ellipsoidal
// brain, a dark CSF gap, a bright skull shell and empty background, with
// optional multiplicative bias, Gaussian noise and a random 3D rotation.

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <string>
#include <utility>

#include "cranioclip/augment.hpp"
#include "cranioclip/error.hpp"
#include "cranioclip/volume.hpp"

namespace cranioclip::phantom {

struct PhantomOptions {
  Dims3 dims{96, 96, 96};
  double bias = 0.0;          // gain range [1 - bias, 1 + bias] for each of two ramps
  double noise = 0.02;        // Gaussian sigma, in units of skull intensity
  double rotation_deg = 0.0;  // per-axis bound of a random rotation (z gets twice this)
  double center_jitter = 4.0;

  void validate() const {
    require(bias >= 0.0 && bias < 1.0, ErrorCode::InvalidArgument, "bias must be in [0,1)");
    require(noise >= 0.0, ErrorCode::InvalidArgument, "noise must be >= 0");
    require(rotation_deg >= 0.0 && rotation_deg <= 45.0, ErrorCode::InvalidArgument,
            "rotation must be in [0,45] degrees");
    for (auto d : dims) require(d >= 16, ErrorCode::InvalidArgument, "phantom dims must be >= 16");
  }
};

struct Phantom {
  Volume volume;
  Mask mask;
};

inline Phantom generate(const PhantomOptions& opts, std::uint64_t seed) {
  opts.validate();
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * unit(rng); };

  const auto [nx, ny, nz] = opts.dims;
  const double n = double(std::min({nx, ny, nz}));
  const std::array<double, 3> center{(double(nx) - 1) / 2 + uniform(-1, 1) * opts.center_jitter,
                                     (double(ny) - 1) / 2 + uniform(-1, 1) * opts.center_jitter,
                                     (double(nz) - 1) / 2 + uniform(-1, 1) * opts.center_jitter};
  const std::array<double, 3> radius{n * uniform(0.26, 0.32), n * uniform(0.28, 0.34),
                                     n * uniform(0.24, 0.30)};
  const double csf = 1.0 + uniform(0.08, 0.12);
  const double skull = csf + uniform(0.12, 0.16);
  const double brain_level = uniform(0.5, 0.6);
  const std::array<double, 3> freq{uniform(0.2, 0.4), uniform(0.2, 0.4), uniform(0.2, 0.4)};
  const std::array<double, 3> phase{uniform(0, 6.3), uniform(0, 6.3), uniform(0, 6.3)};

  // Two ramps along random unit directions; their product is the bias field.
  auto direction = [&] {
    const double th = uniform(0.0, 2 * std::numbers::pi), u = uniform(-1.0, 1.0);
    const double s = std::sqrt(1 - u * u);
    return std::array<double, 3>{s * std::cos(th), s * std::sin(th), u};
  };
  const auto d1 = direction(), d2 = direction();
  const double g1 = uniform(-1, 1) * opts.bias, g2 = uniform(-1, 1) * opts.bias;
  const double half = 0.5 * std::sqrt(double(nx * nx + ny * ny + nz * nz));

  Volume v(opts.dims);
  Mask m(opts.dims);
  std::normal_distribution<double> noise(0.0, 1.0);
  for (std::size_t z = 0; z < nz; ++z)
    for (std::size_t y = 0; y < ny; ++y)
      for (std::size_t x = 0; x < nx; ++x) {
        const std::array<double, 3> p{double(x) - center[0], double(y) - center[1],
                                      double(z) - center[2]};
        double r2 = 0;
        for (int i = 0; i < 3; ++i) r2 += (p[i] / radius[i]) * (p[i] / radius[i]);
        const double r = std::sqrt(r2);
        double value = 0.0;
        if (r <= 1.0) {
          value = brain_level + 0.08 * std::sin(freq[0] * double(x) + phase[0]) *
                                    std::sin(freq[1] * double(y) + phase[1]) +
                  0.05 * std::sin(freq[2] * double(z) + phase[2]);
          m(x, y, z) = 1;
        } else if (r <= csf) {
          value = 0.15;
        } else if (r <= skull) {
          value = 1.0;
        }
        if (opts.bias > 0.0) {
          const double s1 = (p[0] * d1[0] + p[1] * d1[1] + p[2] * d1[2]) / half;
          const double s2 = (p[0] * d2[0] + p[1] * d2[1] + p[2] * d2[2]) / half;
          value *= (1.0 + g1 * s1) * (1.0 + g2 * s2);
        }
        if (opts.noise > 0.0) value += opts.noise * noise(rng);
        v(x, y, z) = static_cast<float>(value);
      }

  if (opts.rotation_deg > 0.0) {
    const double a = opts.rotation_deg;
    const auto R = augment::Rotation3::from_degrees(
        {uniform(-a, a), uniform(-a, a), uniform(-2 * a, 2 * a)});
    auto [rv, rm] = augment::rotate3d(v, R, &m);
    v = std::move(rv);
    m = std::move(*rm);
  }
  return {std::move(v), std::move(m)};
}

}  // namespace cranioclip::phantom
