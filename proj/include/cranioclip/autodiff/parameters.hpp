#pragma once

#include <map>
#include <string>
#include <utility>

#include "cranioclip/autodiff/layers.hpp"
#include "cranioclip/autodiff/tensor.hpp"
#include "cranioclip/error.hpp"

namespace cranioclip::ad {

/// Named trainable tensors plus batch-norm running statistics. Iteration is
/// in name order, which fixes the order of every per-parameter loop.
template <typename T>
class ParameterSet {
 public:
  Tensor<T>& add(const std::string& name, Tensor<T> t) {
    require(!tensors_.contains(name), ErrorCode::InvalidArgument, "duplicate parameter " + name);
    t.set_requires_grad(true);
    return tensors_.emplace(name, std::move(t)).first->second;
  }

  BatchNormStats<T>& add_stats(const std::string& name, std::size_t channels) {
    require(!stats_.contains(name), ErrorCode::InvalidArgument, "duplicate bn stats " + name);
    return stats_.emplace(name, BatchNormStats<T>(channels)).first->second;
  }

  Tensor<T>& at(const std::string& name) {
    auto it = tensors_.find(name);
    if (it == tensors_.end()) fail(ErrorCode::InvalidArgument, "no parameter named " + name);
    return it->second;
  }
  const Tensor<T>& at(const std::string& name) const {
    auto it = tensors_.find(name);
    if (it == tensors_.end()) fail(ErrorCode::InvalidArgument, "no parameter named " + name);
    return it->second;
  }

  BatchNormStats<T>& stats(const std::string& name) {
    auto it = stats_.find(name);
    if (it == stats_.end()) fail(ErrorCode::InvalidArgument, "no bn stats named " + name);
    return it->second;
  }
  const BatchNormStats<T>& stats(const std::string& name) const {
    auto it = stats_.find(name);
    if (it == stats_.end()) fail(ErrorCode::InvalidArgument, "no bn stats named " + name);
    return it->second;
  }

  std::map<std::string, Tensor<T>>& tensors() noexcept { return tensors_; }
  const std::map<std::string, Tensor<T>>& tensors() const noexcept { return tensors_; }
  std::map<std::string, BatchNormStats<T>>& all_stats() noexcept { return stats_; }
  const std::map<std::string, BatchNormStats<T>>& all_stats() const noexcept { return stats_; }

  std::size_t count() const {
    std::size_t n = 0;
    for (const auto& [_, t] : tensors_) n += t.numel();
    return n;
  }

  void zero_grad() {
    for (auto& [_, t] : tensors_) t.zero_grad();
  }

  /// Deep copy: fresh nodes, no gradients.
  ParameterSet clone() const { return cast<T>(); }

  template <typename U>
  ParameterSet<U> cast() const {
    ParameterSet<U> out;
    for (const auto& [name, t] : tensors_) {
      std::vector<U> v(t.values().begin(), t.values().end());
      out.add(name, Tensor<U>(t.shape(), std::move(v), true));
    }
    for (const auto& [name, s] : stats_) {
      auto& dst = out.add_stats(name, s.mean.size());
      dst.mean.assign(s.mean.begin(), s.mean.end());
      dst.var.assign(s.var.begin(), s.var.end());
    }
    return out;
  }

 private:
  std::map<std::string, Tensor<T>> tensors_;
  std::map<std::string, BatchNormStats<T>> stats_;
};

}  // namespace cranioclip::ad
