#pragma once

// Binary checkpoint container.
//
//   magic    8 bytes  "CRCLIPCK"
//   version  u32 LE
//   count    u32 LE
//   count x { name_len u32, name (UTF-8), ndim u32, dims u64 x ndim, float32 LE data }
//
// Reserved name prefixes: "bn_running/<layer>/{mean,var}" for batch-norm
// statistics, "adam/m/<param>", "adam/v/<param>", "adam/hyper" and
// "adam/t" for optimizer state, "train/step" for the step counter. Counters
// are split into 16-bit halves so float32 storage stays exact.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "cranioclip/autodiff/adam.hpp"
#include "cranioclip/autodiff/parameters.hpp"
#include "cranioclip/error.hpp"

namespace cranioclip::ad {

inline constexpr char kCheckpointMagic[8] = {'C', 'R', 'C', 'L', 'I', 'P', 'C', 'K'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct NamedArray {
  std::string name;
  std::vector<std::uint64_t> shape;
  std::vector<float> data;
};

namespace detail {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes little-endian");

template <typename V>
void put(std::ofstream& out, V v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(V));
}

template <typename V>
V get(std::ifstream& in, const std::string& what) {
  V v;
  in.read(reinterpret_cast<char*>(&v), sizeof(V));
  if (!in) fail(ErrorCode::TruncatedPayload, "checkpoint ended while reading " + what);
  return v;
}

inline std::vector<float> encode_counter(std::uint64_t n) {
  require(n < (1ull << 48), ErrorCode::InvalidArgument, "counter too large for checkpoint");
  return {float((n >> 32) & 0xffff), float((n >> 16) & 0xffff), float(n & 0xffff)};
}

inline std::uint64_t decode_counter(const std::vector<float>& v) {
  require(v.size() == 3, ErrorCode::IncompatibleCheckpoint, "bad counter encoding");
  return (std::uint64_t(v[0]) << 32) | (std::uint64_t(v[1]) << 16) | std::uint64_t(v[2]);
}

}  // namespace detail

inline void write_checkpoint(const std::filesystem::path& path, const std::vector<NamedArray>& arrays) {
  if (std::filesystem::is_directory(path)) fail(ErrorCode::Io, path.string() + " is a directory");
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorCode::Io, "cannot write " + tmp);
    out.write(kCheckpointMagic, sizeof(kCheckpointMagic));
    detail::put<std::uint32_t>(out, kCheckpointVersion);
    detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(arrays.size()));
    for (const auto& a : arrays) {
      std::uint64_t n = 1;
      for (auto d : a.shape) n *= d;
      require(n == a.data.size(), ErrorCode::ShapeMismatch, "array " + a.name + " shape/data");
      detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(a.name.size()));
      out.write(a.name.data(), static_cast<std::streamsize>(a.name.size()));
      detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(a.shape.size()));
      for (auto d : a.shape) detail::put<std::uint64_t>(out, d);
      out.write(reinterpret_cast<const char*>(a.data.data()),
                static_cast<std::streamsize>(a.data.size() * sizeof(float)));
    }
    if (!out) fail(ErrorCode::Io, "write failed for " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

inline std::vector<NamedArray> read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::Io, "cannot open checkpoint " + path.string());
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, kCheckpointMagic, 8) != 0)
    fail(ErrorCode::MalformedHeader, path.string() + " is not a checkpoint");
  const auto version = detail::get<std::uint32_t>(in, "version");
  if (version != kCheckpointVersion)
    fail(ErrorCode::IncompatibleCheckpoint, "unsupported checkpoint version " + std::to_string(version));
  const auto count = detail::get<std::uint32_t>(in, "count");
  std::vector<NamedArray> arrays(count);
  for (auto& a : arrays) {
    const auto len = detail::get<std::uint32_t>(in, "name length");
    require(len < (1u << 16), ErrorCode::MalformedHeader, "implausible name length");
    a.name.resize(len);
    in.read(a.name.data(), len);
    const auto ndim = detail::get<std::uint32_t>(in, "ndim");
    require(ndim <= 8, ErrorCode::MalformedHeader, "implausible rank");
    std::uint64_t n = 1;
    for (std::uint32_t i = 0; i < ndim; ++i) {
      a.shape.push_back(detail::get<std::uint64_t>(in, "dims"));
      n *= a.shape.back();
    }
    require(n < (1ull << 32), ErrorCode::MalformedHeader, "implausible array size");
    a.data.resize(n);
    in.read(reinterpret_cast<char*>(a.data.data()), static_cast<std::streamsize>(n * sizeof(float)));
    if (!in) fail(ErrorCode::TruncatedPayload, "checkpoint ended inside " + a.name);
  }
  return arrays;
}

/// Everything a training run needs to continue where it stopped.
template <typename T>
struct TrainingSnapshot {
  ParameterSet<T> params;
  std::optional<AdamState<T>> adam;
  std::uint64_t step = 0;
};

template <typename T>
std::vector<NamedArray> pack(const ParameterSet<T>& params, const AdamState<T>* adam,
                             std::uint64_t step) {
  std::vector<NamedArray> out;
  auto push = [&](std::string name, std::vector<std::uint64_t> shape, auto begin, auto end) {
    out.push_back({std::move(name), std::move(shape), std::vector<float>(begin, end)});
  };
  for (const auto& [name, t] : params.tensors()) {
    std::vector<std::uint64_t> shape(t.shape().begin(), t.shape().end());
    push(name, shape, t.values().begin(), t.values().end());
  }
  for (const auto& [name, s] : params.all_stats()) {
    push("bn_running/" + name + "/mean", {s.mean.size()}, s.mean.begin(), s.mean.end());
    push("bn_running/" + name + "/var", {s.var.size()}, s.var.begin(), s.var.end());
  }
  if (adam) {
    for (const auto& [name, m] : adam->moments) {
      push("adam/m/" + name, {m.m.size()}, m.m.begin(), m.m.end());
      push("adam/v/" + name, {m.v.size()}, m.v.begin(), m.v.end());
    }
    const std::vector<float> hyper{float(adam->lr), float(adam->beta1), float(adam->beta2),
                                   float(adam->eps)};
    out.push_back({"adam/hyper", {4}, hyper});
    out.push_back({"adam/t", {3}, detail::encode_counter(adam->t)});
  }
  out.push_back({"train/step", {3}, detail::encode_counter(step)});
  return out;
}

template <typename T>
TrainingSnapshot<T> unpack(const std::vector<NamedArray>& arrays) {
  TrainingSnapshot<T> snap;
  auto starts = [](const std::string& s, const char* p) { return s.rfind(p, 0) == 0; };
  std::map<std::string, std::pair<std::vector<float>, std::vector<float>>> bn;
  bool has_adam = false;
  AdamState<T> adam;
  for (const auto& a : arrays) {
    if (starts(a.name, "bn_running/")) {
      const auto rest = a.name.substr(11);
      const auto slash = rest.rfind('/');
      require(slash != std::string::npos, ErrorCode::IncompatibleCheckpoint, "bad bn entry " + a.name);
      const auto layer = rest.substr(0, slash);
      const auto field = rest.substr(slash + 1);
      if (field == "mean")
        bn[layer].first = a.data;
      else if (field == "var")
        bn[layer].second = a.data;
      else
        fail(ErrorCode::IncompatibleCheckpoint, "bad bn entry " + a.name);
    } else if (starts(a.name, "adam/m/")) {
      has_adam = true;
      adam.moments[a.name.substr(7)].m.assign(a.data.begin(), a.data.end());
    } else if (starts(a.name, "adam/v/")) {
      has_adam = true;
      adam.moments[a.name.substr(7)].v.assign(a.data.begin(), a.data.end());
    } else if (a.name == "adam/hyper") {
      has_adam = true;
      require(a.data.size() == 4, ErrorCode::IncompatibleCheckpoint, "bad adam/hyper");
      adam.lr = a.data[0];
      adam.beta1 = a.data[1];
      adam.beta2 = a.data[2];
      adam.eps = a.data[3];
    } else if (a.name == "adam/t") {
      has_adam = true;
      adam.t = detail::decode_counter(a.data);
    } else if (a.name == "train/step") {
      snap.step = detail::decode_counter(a.data);
    } else {
      Shape shape(a.shape.begin(), a.shape.end());
      snap.params.add(a.name, Tensor<T>(shape, std::vector<T>(a.data.begin(), a.data.end()), true));
    }
  }
  for (auto& [layer, mv] : bn) {
    require(mv.first.size() == mv.second.size() && !mv.first.empty(),
            ErrorCode::IncompatibleCheckpoint, "incomplete bn stats for " + layer);
    auto& s = snap.params.add_stats(layer, mv.first.size());
    s.mean.assign(mv.first.begin(), mv.first.end());
    s.var.assign(mv.second.begin(), mv.second.end());
  }
  if (has_adam) snap.adam = std::move(adam);
  return snap;
}

}  // namespace cranioclip::ad
