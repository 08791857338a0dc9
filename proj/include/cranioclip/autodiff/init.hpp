#pragma once

#include <cmath>
#include <random>

#include "cranioclip/autodiff/tensor.hpp"
#include "cranioclip/error.hpp"

namespace cranioclip::ad {

/// He-normal initialization: i.i.d. N(0, 2 / fan_in).
template <typename T, typename Rng>
Tensor<T> he_init(Shape shape, std::size_t fan_in, Rng& rng) {
  require(fan_in >= 1, ErrorCode::InvalidArgument, "fan_in must be >= 1");
  std::normal_distribution<double> normal(0.0, std::sqrt(2.0 / double(fan_in)));
  std::vector<T> values(numel(shape));
  for (auto& v : values) v = static_cast<T>(normal(rng));
  return Tensor<T>(std::move(shape), std::move(values), true);
}

}  // namespace cranioclip::ad
