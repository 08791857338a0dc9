#pragma once

// Modified U-Net for 2D brain/background segmentation.
//
//   input block   3x3 conv (stride 1) -> 3x3 conv (stride 2)            b ch
//   encoder       4 x [3x3 conv, 3x3 conv, 2x2 max-pool]        2b, 4b, 8b, 16b
//   compression   3 x [3x3 conv to 32b, 1x1 conv back to 16b]
//   decoder       4 x [2x2/2 deconv, concat skip, 1x1 squeeze, 3x3, 3x3]
//                                                               16b, 8b, 4b, 2b
//   output block  1x1 to b, 2x2/2 deconv to full size, concat first-conv
//                 features, 1x1 squeeze to b, 1x1 classifier to 2, softmax
//
// Every layer except the classifier is conv -> batchnorm -> ReLU and carries
// no bias of its own (batch-norm's beta provides the offset). Skip
// concatenations put decoder features first, encoder features second.

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cranioclip/autodiff/init.hpp"
#include "cranioclip/autodiff/layers.hpp"
#include "cranioclip/autodiff/parameters.hpp"
#include "cranioclip/autodiff/tensor.hpp"
#include "cranioclip/error.hpp"

namespace cranioclip::unet {

struct ModelSpec {
  int base_channels = 16;
  int depth = 4;
  int cm_pairs = 3;
  int in_channels = 1;
  int out_classes = 2;

  void validate() const {
    require(base_channels >= 1, ErrorCode::InvalidArgument, "base_channels must be >= 1");
    require(depth == 4, ErrorCode::InvalidArgument, "encoder depth is fixed at 4");
    require(cm_pairs == 3, ErrorCode::InvalidArgument, "compression module has exactly 3 pairs");
    require(in_channels == 1, ErrorCode::InvalidArgument, "input is single-channel");
    require(out_classes == 2, ErrorCode::InvalidArgument, "output is two-class");
  }

  bool operator==(const ModelSpec&) const = default;
};

inline void to_json(nlohmann::json& j, const ModelSpec& s) {
  j = nlohmann::json{{"base_channels", s.base_channels},
                     {"depth", s.depth},
                     {"cm_pairs", s.cm_pairs},
                     {"in_channels", s.in_channels},
                     {"out_classes", s.out_classes}};
}

inline void from_json(const nlohmann::json& j, ModelSpec& s) {
  for (const auto& [key, _] : j.items())
    if (key != "base_channels" && key != "depth" && key != "cm_pairs" && key != "in_channels" &&
        key != "out_classes")
      fail(ErrorCode::InvalidArgument, "unknown model key '" + key + "'");
  s = ModelSpec{};
  s.base_channels = j.value("base_channels", s.base_channels);
  s.depth = j.value("depth", s.depth);
  s.cm_pairs = j.value("cm_pairs", s.cm_pairs);
  s.in_channels = j.value("in_channels", s.in_channels);
  s.out_classes = j.value("out_classes", s.out_classes);
  s.validate();
}

/// Required divisor of input height/width: stride-2 input block and four poolings.
inline constexpr std::size_t kSpatialDivisor = 32;

template <typename T>
struct ModelParams {
  ModelSpec spec;
  ad::ParameterSet<T> params;

  ModelParams clone() const { return {spec, params.clone()}; }
};

namespace detail {

template <typename T, typename Rng>
void add_conv_bn(ad::ParameterSet<T>& ps, const std::string& name, std::size_t in, std::size_t out,
                 std::size_t k, Rng& rng) {
  ps.add(name + ".weight", ad::he_init<T>({out, in, k, k}, k * k * in, rng));
  ps.add(name + ".bn.gamma", ad::Tensor<T>({out}, T{1}, true));
  ps.add(name + ".bn.beta", ad::Tensor<T>({out}, T{0}, true));
  ps.add_stats(name, out);
}

template <typename T, typename Rng>
void add_deconv_bn(ad::ParameterSet<T>& ps, const std::string& name, std::size_t in,
                   std::size_t out, Rng& rng) {
  ps.add(name + ".weight", ad::he_init<T>({in, out, 2, 2}, 4 * in, rng));
  ps.add(name + ".bn.gamma", ad::Tensor<T>({out}, T{1}, true));
  ps.add(name + ".bn.beta", ad::Tensor<T>({out}, T{0}, true));
  ps.add_stats(name, out);
}

template <typename T>
ad::Tensor<T> bn_relu(ad::ParameterSet<T>& ps, const std::string& name, const ad::Tensor<T>& x,
                      ad::Mode mode) {
  auto y = ad::batchnorm(x, ps.at(name + ".bn.gamma"), ps.at(name + ".bn.beta"), ps.stats(name),
                         mode);
  return ad::relu(y);
}

template <typename T>
ad::Tensor<T> conv_block(ad::ParameterSet<T>& ps, const std::string& name, const ad::Tensor<T>& x,
                         ad::Mode mode, std::size_t stride = 1) {
  return bn_relu(ps, name, ad::conv2d(x, ps.at(name + ".weight"), stride), mode);
}

template <typename T>
ad::Tensor<T> deconv_block(ad::ParameterSet<T>& ps, const std::string& name,
                           const ad::Tensor<T>& x, ad::Mode mode) {
  return bn_relu(ps, name, ad::conv_transpose2(x, ps.at(name + ".weight")), mode);
}

}  // namespace detail

/// Instantiates every layer with He-normal weights, gamma = 1, beta = 0.
template <typename T>
ModelParams<T> build(const ModelSpec& spec, std::uint64_t seed) {
  spec.validate();
  std::mt19937_64 rng(seed);
  const std::size_t b = static_cast<std::size_t>(spec.base_channels);
  ModelParams<T> model{spec, {}};
  auto& ps = model.params;

  detail::add_conv_bn(ps, "in.conv1", 1, b, 3, rng);
  detail::add_conv_bn(ps, "in.conv2", b, b, 3, rng);

  std::size_t prev = b;
  for (int level = 1; level <= 4; ++level) {
    const std::size_t c = b << level;
    const std::string name = "enc" + std::to_string(level);
    detail::add_conv_bn(ps, name + ".conv1", prev, c, 3, rng);
    detail::add_conv_bn(ps, name + ".conv2", c, c, 3, rng);
    prev = c;
  }

  const std::size_t bottleneck = b << 4;
  for (int pair = 1; pair <= 3; ++pair) {
    const std::string name = "cm" + std::to_string(pair);
    detail::add_conv_bn(ps, name + ".expand", bottleneck, 2 * bottleneck, 3, rng);
    detail::add_conv_bn(ps, name + ".compress", 2 * bottleneck, bottleneck, 1, rng);
  }

  prev = bottleneck;
  for (int level = 1; level <= 4; ++level) {
    const std::size_t c = b << (5 - level);
    const std::string name = "dec" + std::to_string(level);
    detail::add_deconv_bn(ps, name + ".up", prev, c, rng);
    detail::add_conv_bn(ps, name + ".squeeze", 2 * c, c, 1, rng);
    detail::add_conv_bn(ps, name + ".conv1", c, c, 3, rng);
    detail::add_conv_bn(ps, name + ".conv2", c, c, 3, rng);
    prev = c;
  }

  detail::add_conv_bn(ps, "out.reduce", 2 * b, b, 1, rng);
  detail::add_deconv_bn(ps, "out.up", b, b, rng);
  detail::add_conv_bn(ps, "out.squeeze", 2 * b, b, 1, rng);
  ps.add("out.classifier.weight", ad::he_init<T>({2, b, 1, 1}, b, rng));
  ps.add("out.classifier.bias", ad::Tensor<T>({2}, T{0}, true));
  return model;
}

/// Raw class scores [N, 2, H, W] before the softmax.
template <typename T>
ad::Tensor<T> forward_scores(ModelParams<T>& model, const ad::Tensor<T>& x, ad::Mode mode) {
  require(x.rank() == 4 && x.dim(1) == 1, ErrorCode::ShapeMismatch,
          "network input must be [N,1,H,W], got " + ad::to_string(x.shape()));
  require(x.dim(2) % kSpatialDivisor == 0 && x.dim(3) % kSpatialDivisor == 0 && x.dim(2) > 0 &&
              x.dim(3) > 0,
          ErrorCode::ShapeMismatch,
          "input height and width must be multiples of 32, got " + ad::to_string(x.shape()));
  auto& ps = model.params;
  using detail::conv_block;
  using detail::deconv_block;

  const auto first = conv_block(ps, "in.conv1", x, mode);
  auto h = conv_block(ps, "in.conv2", first, mode, 2);

  std::vector<ad::Tensor<T>> skips;
  for (int level = 1; level <= 4; ++level) {
    const std::string name = "enc" + std::to_string(level);
    h = conv_block(ps, name + ".conv1", h, mode);
    h = conv_block(ps, name + ".conv2", h, mode);
    skips.push_back(h);
    h = ad::maxpool2(h);
  }

  for (int pair = 1; pair <= 3; ++pair) {
    const std::string name = "cm" + std::to_string(pair);
    h = conv_block(ps, name + ".expand", h, mode);
    h = conv_block(ps, name + ".compress", h, mode);
  }

  for (int level = 1; level <= 4; ++level) {
    const std::string name = "dec" + std::to_string(level);
    h = deconv_block(ps, name + ".up", h, mode);
    const auto& skip = skips[static_cast<std::size_t>(4 - level)];
    require(h.dim(2) == skip.dim(2) && h.dim(3) == skip.dim(3), ErrorCode::ShapeMismatch,
            "skip connection shape mismatch at " + name);
    h = ad::concat_channels(h, skip);
    h = conv_block(ps, name + ".squeeze", h, mode);
    h = conv_block(ps, name + ".conv1", h, mode);
    h = conv_block(ps, name + ".conv2", h, mode);
  }

  h = conv_block(ps, "out.reduce", h, mode);
  h = deconv_block(ps, "out.up", h, mode);
  require(h.dim(2) == first.dim(2) && h.dim(3) == first.dim(3), ErrorCode::ShapeMismatch,
          "output skip connection shape mismatch");
  h = ad::concat_channels(h, first);
  h = conv_block(ps, "out.squeeze", h, mode);
  return ad::conv1x1(h, ps.at("out.classifier.weight"),
                     std::optional<ad::Tensor<T>>(ps.at("out.classifier.bias")));
}

/// Per-pixel class posteriors [N, 2, H, W].
template <typename T>
ad::Tensor<T> forward(ModelParams<T>& model, const ad::Tensor<T>& x, ad::Mode mode) {
  return ad::softmax2(forward_scores(model, x, mode));
}

}  // namespace cranioclip::unet
