#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "cranioclip/autodiff/parameters.hpp"
#include "cranioclip/error.hpp"

namespace cranioclip::ad {

template <typename T>
struct AdamMoments {
  std::vector<T> m;
  std::vector<T> v;
};

template <typename T>
struct AdamState {
  double lr = 5e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::uint64_t t = 0;
  std::map<std::string, AdamMoments<T>> moments;
};

/// One bias-corrected Adam update of every parameter from its accumulated
/// gradient. A non-finite gradient aborts the step before anything changes.
template <typename T>
void adam_step(ParameterSet<T>& params, AdamState<T>& state) {
  for (const auto& [name, p] : params.tensors())
    for (T g : p.grad())
      if (!std::isfinite(static_cast<double>(g)))
        fail(ErrorCode::NonFinite, "gradient of " + name + " is not finite");

  state.t += 1;
  const double c1 = 1.0 - std::pow(state.beta1, double(state.t));
  const double c2 = 1.0 - std::pow(state.beta2, double(state.t));
  for (auto& [name, p] : params.tensors()) {
    auto& mom = state.moments[name];
    if (mom.m.size() != p.numel()) {
      require(mom.m.empty(), ErrorCode::ShapeMismatch, "adam moments do not match " + name);
      mom.m.assign(p.numel(), T{0});
      mom.v.assign(p.numel(), T{0});
    }
    const auto grad = p.grad();
    auto values = p.values();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double g = grad.empty() ? 0.0 : double(grad[i]);
      const double m = state.beta1 * double(mom.m[i]) + (1.0 - state.beta1) * g;
      const double v = state.beta2 * double(mom.v[i]) + (1.0 - state.beta2) * g * g;
      mom.m[i] = static_cast<T>(m);
      mom.v[i] = static_cast<T>(v);
      const double mhat = c1 > 0.0 ? m / c1 : m;
      const double vhat = c2 > 0.0 ? v / c2 : v;
      values[i] = static_cast<T>(double(values[i]) - state.lr * mhat / (std::sqrt(vhat) + state.eps));
    }
  }
}

}  // namespace cranioclip::ad
