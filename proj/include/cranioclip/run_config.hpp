#pragma once

// JSON run configuration for the command-line tool. Unknown keys are
// rejected; missing keys keep their defaults.

#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <string>

#include <nlohmann/json.hpp>

#include "cranioclip/augment.hpp"
#include "cranioclip/error.hpp"
#include "cranioclip/trainer.hpp"
#include "cranioclip/unet.hpp"

namespace cranioclip::config {

inline void reject_unknown(const nlohmann::json& j, std::initializer_list<const char*> keys,
                           const std::string& where) {
  if (!j.is_object()) fail(ErrorCode::InvalidArgument, where + " must be a JSON object");
  for (const auto& [key, _] : j.items()) {
    bool known = false;
    for (const char* k : keys) known = known || key == k;
    if (!known) fail(ErrorCode::InvalidArgument, "unknown key '" + key + "' in " + where);
  }
}

}  // namespace cranioclip::config

namespace cranioclip::augment {

inline void to_json(nlohmann::json& j, const Range& r) { j = nlohmann::json::array({r.lo, r.hi}); }

inline void from_json(const nlohmann::json& j, Range& r) {
  if (!j.is_array() || j.size() != 2)
    fail(ErrorCode::InvalidArgument, "a range must be a two-element array");
  r = {j[0].get<double>(), j[1].get<double>()};
}

inline void to_json(nlohmann::json& j, const AugmentationConfig& a) {
  j = nlohmann::json{{"rot3d_deg", a.rot3d_deg},   {"rot2d_deg", a.rot2d_deg},
                     {"translate_px", a.translate_px}, {"shear", a.shear},
                     {"bias_gain", a.bias_gain},   {"noise_amp", a.noise_amp},
                     {"probability", a.probability}};
}

inline void from_json(const nlohmann::json& j, AugmentationConfig& a) {
  config::reject_unknown(j,
                         {"rot3d_deg", "rot2d_deg", "translate_px", "shear", "bias_gain",
                          "noise_amp", "probability"},
                         "augmentation");
  a = AugmentationConfig{};
  a.rot3d_deg = j.value("rot3d_deg", a.rot3d_deg);
  a.rot2d_deg = j.value("rot2d_deg", a.rot2d_deg);
  a.translate_px = j.value("translate_px", a.translate_px);
  a.shear = j.value("shear", a.shear);
  a.bias_gain = j.value("bias_gain", a.bias_gain);
  a.noise_amp = j.value("noise_amp", a.noise_amp);
  a.probability = j.value("probability", a.probability);
  a.validate();
}

}  // namespace cranioclip::augment

namespace cranioclip::trainer {

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = nlohmann::json{{"batch_size", c.batch_size},
                     {"lr", c.lr},
                     {"ablation", std::string(augment::to_string(c.ablation))},
                     {"max_steps", c.max_steps},
                     {"eval_every", c.eval_every},
                     {"patience", c.patience},
                     {"seed", c.seed},
                     {"brain_slice_fraction", c.brain_slice_fraction}};
}

/// Reads the training block; augmentation ranges live in their own block.
inline void from_json(const nlohmann::json& j, TrainConfig& c) {
  config::reject_unknown(j,
                         {"batch_size", "lr", "ablation", "max_steps", "eval_every", "patience",
                          "seed", "brain_slice_fraction"},
                         "train");
  const auto keep = c.augmentation;
  c = TrainConfig{};
  c.augmentation = keep;
  c.batch_size = j.value("batch_size", c.batch_size);
  c.lr = j.value("lr", c.lr);
  if (j.contains("ablation")) c.ablation = augment::parse_ablation(j.at("ablation").get<std::string>());
  c.max_steps = j.value("max_steps", c.max_steps);
  c.eval_every = j.value("eval_every", c.eval_every);
  c.patience = j.value("patience", c.patience);
  c.seed = j.value("seed", c.seed);
  c.brain_slice_fraction = j.value("brain_slice_fraction", c.brain_slice_fraction);
}

}  // namespace cranioclip::trainer

namespace cranioclip::config {

struct Paths {
  std::filesystem::path images;      // <id>.nii[.gz]
  std::filesystem::path masks;       // <id>.nii[.gz]
  std::filesystem::path scores;      // score matrix CSV
  std::filesystem::path split;       // split JSON
  std::filesystem::path checkpoint;  // best model
  std::filesystem::path log;         // training log CSV
  std::filesystem::path output;      // output directory
};

struct RunConfig {
  unet::ModelSpec model{};
  trainer::TrainConfig train{};
  Paths paths{};
};

inline void to_json(nlohmann::json& j, const RunConfig& r) {
  j = nlohmann::json{{"model", r.model},
                     {"train", r.train},
                     {"augmentation", r.train.augmentation},
                     {"paths",
                      {{"images", r.paths.images.string()},
                       {"masks", r.paths.masks.string()},
                       {"scores", r.paths.scores.string()},
                       {"split", r.paths.split.string()},
                       {"checkpoint", r.paths.checkpoint.string()},
                       {"log", r.paths.log.string()},
                       {"output", r.paths.output.string()}}}};
}

inline RunConfig parse_run_config(const nlohmann::json& j) {
  reject_unknown(j, {"model", "train", "augmentation", "paths"}, "run config");
  RunConfig r;
  try {
    if (j.contains("model")) r.model = j.at("model").get<unet::ModelSpec>();
    if (j.contains("augmentation"))
      r.train.augmentation = j.at("augmentation").get<augment::AugmentationConfig>();
    if (j.contains("train")) {
      trainer::from_json(j.at("train"), r.train);
    }
    if (j.contains("paths")) {
      const auto& p = j.at("paths");
      reject_unknown(p, {"images", "masks", "scores", "split", "checkpoint", "log", "output"},
                     "paths");
      auto get = [&](const char* key) { return std::filesystem::path(p.value(key, std::string())); };
      r.paths = {get("images"), get("masks"),      get("scores"), get("split"),
                 get("checkpoint"), get("log"), get("output")};
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::InvalidArgument, std::string("run config: ") + e.what());
  }
  r.train.validate();
  return r;
}

inline RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::Io, "cannot open config " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::InvalidArgument, path.string() + ": " + e.what());
  }
  return parse_run_config(j);
}

}  // namespace cranioclip::config
