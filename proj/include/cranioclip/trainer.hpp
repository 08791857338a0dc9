#pragma once

// Dataset split by rank aggregation, slice sampling over the three
// projections, and the augmentation-driven training loop.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cranioclip/augment.hpp"
#include "cranioclip/autodiff/adam.hpp"
#include "cranioclip/autodiff/checkpoint.hpp"
#include "cranioclip/autodiff/layers.hpp"
#include "cranioclip/error.hpp"
#include "cranioclip/inference.hpp"
#include "cranioclip/metrics.hpp"
#include "cranioclip/nifti.hpp"
#include "cranioclip/unet.hpp"
#include "cranioclip/volume.hpp"

namespace cranioclip::trainer {

// ---------------------------------------------------------------------------
// Score matrix and split.

/// Per-method Dice of each volume; score[m][v].
struct ScoreMatrix {
  std::vector<std::string> methods;
  std::vector<std::string> volumes;
  std::vector<std::vector<double>> score;

  void validate() const {
    require(!methods.empty(), ErrorCode::InvalidArgument, "score matrix has no methods");
    require(score.size() == methods.size(), ErrorCode::InvalidArgument, "score matrix not rectangular");
    std::set<std::string> seen;
    for (const auto& id : volumes)
      require(seen.insert(id).second, ErrorCode::InvalidArgument, "duplicate volume id '" + id + "'");
    for (std::size_t m = 0; m < methods.size(); ++m) {
      require(score[m].size() == volumes.size(), ErrorCode::InvalidArgument,
              "score matrix not rectangular");
      for (std::size_t v = 0; v < volumes.size(); ++v)
        require(score[m][v] >= 0.0 && score[m][v] <= 1.0, ErrorCode::InvalidArgument,
                "score for " + volumes[v] + "/" + methods[m] + " outside [0,1]");
    }
  }
};

namespace detail {

inline std::string trim(std::string s) {
  const auto ws = " \t\r\n";
  const auto b = s.find_first_not_of(ws);
  if (b == std::string::npos) return {};
  return s.substr(b, s.find_last_not_of(ws) - b + 1);
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) out.push_back(trim(cell));
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

}  // namespace detail

/// CSV with header `volume_id,<method1>,...`; diagnostics carry line numbers.
inline ScoreMatrix parse_scores(std::istream& in, const std::string& source = "<scores>") {
  ScoreMatrix sm;
  std::string line;
  std::size_t lineno = 0;
  auto bad = [&](const std::string& msg) {
    fail(ErrorCode::InvalidArgument, source + ":" + std::to_string(lineno) + ": " + msg);
  };
  while (std::getline(in, line)) {
    ++lineno;
    if (detail::trim(line).empty()) continue;
    const auto cells = detail::split_csv_line(line);
    if (sm.methods.empty()) {
      if (cells.size() < 2 || cells[0] != "volume_id")
        bad("header must be volume_id,<method>,...");
      sm.methods.assign(cells.begin() + 1, cells.end());
      sm.score.assign(sm.methods.size(), {});
      continue;
    }
    if (cells.size() != sm.methods.size() + 1)
      bad("expected " + std::to_string(sm.methods.size() + 1) + " fields, got " +
          std::to_string(cells.size()));
    if (cells[0].empty()) bad("empty volume id");
    if (std::find(sm.volumes.begin(), sm.volumes.end(), cells[0]) != sm.volumes.end())
      bad("duplicate volume id '" + cells[0] + "'");
    sm.volumes.push_back(cells[0]);
    for (std::size_t m = 0; m < sm.methods.size(); ++m) {
      const auto& cell = cells[m + 1];
      double v = 0.0;
      std::size_t used = 0;
      try {
        v = std::stod(cell, &used);
      } catch (const std::exception&) {
        bad("'" + cell + "' is not a number");
      }
      if (used != cell.size()) bad("'" + cell + "' is not a number");
      if (!(v >= 0.0 && v <= 1.0)) bad("score " + cell + " outside [0,1]");
      sm.score[m].push_back(v);
    }
  }
  if (sm.methods.empty()) fail(ErrorCode::InvalidArgument, source + ": missing header");
  return sm;
}

inline ScoreMatrix read_scores(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::Io, "cannot open " + path.string());
  return parse_scores(in, path.string());
}

struct SplitAssignment {
  std::vector<std::string> train;
  std::vector<std::string> validation;
  std::vector<std::string> test;

  bool operator==(const SplitAssignment&) const = default;
};

inline void to_json(nlohmann::json& j, const SplitAssignment& s) {
  j = nlohmann::json{{"train", s.train}, {"validation", s.validation}, {"test", s.test}};
}

inline void from_json(const nlohmann::json& j, SplitAssignment& s) {
  for (const auto& [key, _] : j.items())
    if (key != "train" && key != "validation" && key != "test")
      fail(ErrorCode::InvalidArgument, "unknown split key '" + key + "'");
  s.train = j.at("train").get<std::vector<std::string>>();
  s.validation = j.at("validation").get<std::vector<std::string>>();
  s.test = j.at("test").get<std::vector<std::string>>();
}

inline void write_split(const std::filesystem::path& path, const SplitAssignment& s) {
  std::ofstream out(path);
  if (!out) fail(ErrorCode::Io, "cannot write " + path.string());
  out << nlohmann::json(s).dump(2) << '\n';
}

inline SplitAssignment read_split(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::Io, "cannot open " + path.string());
  try {
    return nlohmann::json::parse(in).get<SplitAssignment>();
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::InvalidArgument, path.string() + ": " + e.what());
  }
}

/// Fractional (average) ranks, 1-based, ascending by value.
inline std::vector<double> average_ranks(const std::vector<double>& values) {
  std::vector<std::size_t> order(values.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  std::vector<double> ranks(values.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && values[order[j + 1]] == values[order[i]]) ++j;
    const double r = 0.5 * double(i + j) + 1.0;
    for (std::size_t t = i; t <= j; ++t) ranks[order[t]] = r;
    i = j + 1;
  }
  return ranks;
}

/// Sums per-method ranks (rank 1 = lowest Dice); the lowest totals are the
/// hardest volumes and go to test, the next ones to validation.
inline SplitAssignment rank_split(const ScoreMatrix& sm, std::size_t n_test, std::size_t n_val) {
  sm.validate();
  const std::size_t n = sm.volumes.size();
  require(n_test + n_val < n, ErrorCode::InvalidArgument,
          "n_test + n_val must be smaller than the number of volumes (" + std::to_string(n) + ")");
  std::vector<double> total(n, 0.0);
  for (const auto& method_scores : sm.score) {
    const auto r = average_ranks(method_scores);
    for (std::size_t v = 0; v < n; ++v) total[v] += r[v];
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (total[a] != total[b]) return total[a] < total[b];
    return sm.volumes[a] < sm.volumes[b];
  });
  SplitAssignment s;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& id = sm.volumes[order[i]];
    if (i < n_test)
      s.test.push_back(id);
    else if (i < n_test + n_val)
      s.validation.push_back(id);
    else
      s.train.push_back(id);
  }
  return s;
}

// ---------------------------------------------------------------------------
// Data.

/// Standardized volume with its mask and, per axis, the slices holding brain.
struct Sample {
  std::string id;
  Volume volume;
  Mask mask;
  std::array<std::vector<std::size_t>, 3> brain_slices;

  static Sample make(std::string id, const Volume& raw, Mask mask) {
    require(raw.dims() == mask.dims(), ErrorCode::ShapeMismatch, id + ": volume and mask dims differ");
    Sample s{std::move(id), standardize(raw), std::move(mask), {}};
    for (Axis axis : kAllAxes) {
      const auto counts = inference::ProjectionMask::count_slices(s.mask, axis);
      for (std::size_t k = 0; k < counts.size(); ++k)
        if (counts[k] > 0) s.brain_slices[static_cast<int>(axis)].push_back(k);
    }
    return s;
  }
};

using Dataset = std::vector<Sample>;

/// Looks for `<id>.nii.gz`, then `<id>.nii`.
inline std::filesystem::path find_volume(const std::filesystem::path& dir, const std::string& id) {
  for (const char* ext : {".nii.gz", ".nii"}) {
    auto p = dir / (id + ext);
    if (std::filesystem::exists(p)) return p;
  }
  fail(ErrorCode::Io, "no NIfTI file for '" + id + "' in " + dir.string());
}

inline Dataset load_dataset(const std::vector<std::string>& ids, const std::filesystem::path& images,
                            const std::filesystem::path& masks) {
  Dataset out;
  for (const auto& id : ids)
    out.push_back(Sample::make(id, nifti::read_nifti(find_volume(images, id)),
                               nifti::read_nifti_mask(find_volume(masks, id))));
  return out;
}

/// w_l = 1 - n_l / N over every voxel of every training mask.
inline ad::ClassWeights compute_class_weights(const std::vector<const Mask*>& masks) {
  require(!masks.empty(), ErrorCode::EmptyInput, "class weights need at least one mask");
  std::uint64_t ones = 0, total = 0;
  for (const Mask* m : masks) {
    ones += m->count_ones();
    total += m->size();
  }
  return ad::ClassWeights::from_counts(total - ones, ones);
}

inline ad::ClassWeights compute_class_weights(const Dataset& data) {
  std::vector<const Mask*> masks;
  for (const auto& s : data) masks.push_back(&s.mask);
  return compute_class_weights(masks);
}

// ---------------------------------------------------------------------------
// Configuration.

struct TrainConfig {
  std::size_t batch_size = 16;
  double lr = 5e-4;
  augment::AblationLabel ablation = augment::AblationLabel::All;
  std::uint64_t max_steps = 5000;
  std::uint64_t eval_every = 500;
  std::size_t patience = 10;  // non-improving evaluations tolerated
  std::uint64_t seed = 0;
  double brain_slice_fraction = 0.9;
  augment::AugmentationConfig augmentation{};  // ranges; `enabled` comes from `ablation`

  augment::AugmentationConfig augmentation_for_run() const {
    auto a = augmentation;
    a.enabled = augment::transforms_for(ablation);
    return a;
  }

  void validate() const {
    require(batch_size >= 1, ErrorCode::InvalidArgument, "batch_size must be >= 1");
    require(lr > 0.0 && std::isfinite(lr), ErrorCode::InvalidArgument, "lr must be > 0");
    require(eval_every >= 1, ErrorCode::InvalidArgument, "eval_every must be >= 1");
    require(brain_slice_fraction >= 0.0 && brain_slice_fraction <= 1.0,
            ErrorCode::InvalidArgument, "brain_slice_fraction must be in [0,1]");
    augmentation.validate();
  }
};

// ---------------------------------------------------------------------------
// Batches.

template <typename T>
struct Batch {
  ad::Tensor<T> x;  // [N,1,H,W]
  ad::Tensor<T> y;  // [N,2,H,W] one-hot, channel 1 = brain
  std::vector<Axis> axes;
  std::vector<std::size_t> volume_index;
  std::vector<std::size_t> slice_index;
};

namespace detail {

inline bool any_ones(const MaskSlice& m) {
  return std::any_of(m.data().begin(), m.data().end(), [](std::uint8_t v) { return v != 0; });
}

}  // namespace detail

/// Draws one training batch. Each slot picks a volume, an optional 3D
/// rotation, a projection axis, and a slice (brain-bearing with probability
/// `brain_fraction`), then applies the remaining plan transforms.
template <typename T, typename Rng>
Batch<T> sample_batch(const Dataset& data, const augment::AugmentationConfig& aug,
                      std::size_t batch_size, double brain_fraction, Rng& rng) {
  require(!data.empty(), ErrorCode::EmptyInput, "training set is empty");
  require(batch_size >= 1, ErrorCode::InvalidArgument, "batch_size must be >= 1");
  std::uniform_int_distribution<std::size_t> pick_volume(0, data.size() - 1);
  std::uniform_int_distribution<int> pick_axis(0, 2);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  struct Slot {
    Image2D img;
    MaskSlice mask;
    augment::AugmentationPlan plan;
  };
  std::vector<Slot> slots;
  Batch<T> batch;
  std::size_t H = 0, W = 0;
  for (std::size_t s = 0; s < batch_size; ++s) {
    const std::size_t vi = pick_volume(rng);
    const Sample& sample = data[vi];
    const auto plan = augment::sample_plan(aug, rng());
    const Axis axis = static_cast<Axis>(pick_axis(rng));
    const bool want_brain = unit(rng) < brain_fraction;
    const std::size_t n_slices = slice_count(sample.volume.dims(), axis);
    const auto& brain = sample.brain_slices[static_cast<int>(axis)];
    std::uniform_int_distribution<std::size_t> any_slice(0, n_slices - 1);

    const bool rotated = plan.has_rot3d();
    const auto R = rotated ? augment::Rotation3::from_degrees(plan.rot3d_deg)
                           : augment::Rotation3::identity();
    auto mask_plane = [&](std::size_t k) {
      return rotated ? augment::rotated_plane(sample.mask, R, axis, k)
                     : extract_plane<std::uint8_t>(sample.mask, axis, k);
    };

    std::size_t k = 0;
    MaskSlice m;
    if (!want_brain || brain.empty()) {
      k = any_slice(rng);
      m = mask_plane(k);
    } else {
      // Rejection sampling: the unrotated brain slices are the proposal.
      std::uniform_int_distribution<std::size_t> pick_brain(0, brain.size() - 1);
      for (int attempt = 0; attempt < 32; ++attempt) {
        k = brain[pick_brain(rng)];
        m = mask_plane(k);
        if (detail::any_ones(m)) break;
      }
    }
    Image2D img = rotated ? augment::rotated_plane(sample.volume, R, axis, k)
                          : extract_plane<float>(sample.volume, axis, k);
    H = std::max(H, round_up_multiple(img.rows()));
    W = std::max(W, round_up_multiple(img.cols()));
    slots.push_back({std::move(img), std::move(m), plan});
    batch.axes.push_back(axis);
    batch.volume_index.push_back(vi);
    batch.slice_index.push_back(k);
  }

  const std::size_t N = batch_size, P = H * W;
  std::vector<T> xs(N * P), ys(N * 2 * P);
  for (std::size_t s = 0; s < N; ++s) {
    const auto img = pad_slice_to(slots[s].img, H, W, 0.0f).first;
    const auto msk = pad_slice_to(slots[s].mask, H, W, std::uint8_t{0}).first;
    const auto [ai, am] = augment::apply_plan(img, msk, slots[s].plan);
    for (std::size_t p = 0; p < P; ++p) {
      xs[s * P + p] = static_cast<T>(ai.data()[p]);
      const T brain = am.data()[p] ? T{1} : T{0};
      ys[(s * 2 + 1) * P + p] = brain;
      ys[(s * 2) * P + p] = T{1} - brain;
    }
  }
  batch.x = ad::Tensor<T>({N, 1, H, W}, std::move(xs));
  batch.y = ad::Tensor<T>({N, 2, H, W}, std::move(ys));
  return batch;
}

// ---------------------------------------------------------------------------
// Training loop.

struct LogRow {
  std::uint64_t step = 0;
  double loss = 0.0;  // mean training loss since the previous row
  std::optional<double> val_dice;
};

/// Mean single-projection (axial) Dice over a validation set.
template <typename T>
double validation_dice(unet::ModelParams<T>& model, const Dataset& val) {
  require(!val.empty(), ErrorCode::EmptyInput, "validation set is empty");
  double sum = 0.0;
  for (const auto& s : val)
    sum += metrics::dice(inference::predict_projection(model, s.volume, Axis::Axial).mask, s.mask);
  return sum / double(val.size());
}

inline std::string format_real(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t step) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ull * (step + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

/// State needed to continue an interrupted run.
template <typename T>
struct ResumeState {
  ad::TrainingSnapshot<T> snapshot;
  double best_val_dice = -1.0;
  std::size_t stale_evals = 0;
};

template <typename T>
struct TrainOptions {
  std::filesystem::path checkpoint;  // best model; "<checkpoint>.last" holds the resumable state
  std::filesystem::path log;         // CSV step,loss,val_dice
  std::optional<ResumeState<T>> resume;
  std::function<void(const LogRow&)> on_eval;
};

template <typename T>
struct TrainResult {
  unet::ModelParams<T> best;
  unet::ModelParams<T> last;
  double best_val_dice = -1.0;
  std::uint64_t final_step = 0;
  bool early_stopped = false;
  std::vector<LogRow> log;
  std::vector<double> saved_val_dice;  // one entry per best-checkpoint write
};

inline std::filesystem::path last_path(const std::filesystem::path& checkpoint) {
  return checkpoint.string() + ".last";
}

inline std::filesystem::path sidecar_path(const std::filesystem::path& checkpoint) {
  return checkpoint.string() + ".json";
}

template <typename T>
void save_model(const std::filesystem::path& path, const unet::ModelParams<T>& model,
                const nlohmann::json& extra = nlohmann::json::object()) {
  ad::write_checkpoint(path, ad::pack<T>(model.params, nullptr, 0));
  nlohmann::json side = extra;
  side["model"] = model.spec;
  std::ofstream out(sidecar_path(path));
  if (!out) fail(ErrorCode::Io, "cannot write " + sidecar_path(path).string());
  out << side.dump(2) << '\n';
}

/// Reads a checkpoint and its JSON sidecar; the parameter set must match its ModelSpec.
template <typename T>
unet::ModelParams<T> load_model(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) fail(ErrorCode::Io, "checkpoint " + path.string() + " not found");
  std::ifstream in(sidecar_path(path));
  if (!in) fail(ErrorCode::IncompatibleCheckpoint, "missing sidecar " + sidecar_path(path).string());
  unet::ModelSpec spec;
  try {
    spec = nlohmann::json::parse(in).at("model").get<unet::ModelSpec>();
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::IncompatibleCheckpoint, sidecar_path(path).string() + ": " + e.what());
  }
  auto snap = ad::unpack<T>(ad::read_checkpoint(path));
  auto model = unet::build<T>(spec, 0);
  for (auto& [name, t] : model.params.tensors()) {
    auto it = snap.params.tensors().find(name);
    if (it == snap.params.tensors().end())
      fail(ErrorCode::IncompatibleCheckpoint, "checkpoint lacks parameter " + name);
    if (it->second.shape() != t.shape())
      fail(ErrorCode::IncompatibleCheckpoint, "shape mismatch for " + name);
    std::copy(it->second.values().begin(), it->second.values().end(), t.values().begin());
  }
  for (auto& [name, s] : model.params.all_stats()) {
    auto it = snap.params.all_stats().find(name);
    if (it == snap.params.all_stats().end() || it->second.mean.size() != s.mean.size())
      fail(ErrorCode::IncompatibleCheckpoint, "checkpoint lacks bn stats for " + name);
    s = it->second;
  }
  if (snap.params.tensors().size() != model.params.tensors().size())
    fail(ErrorCode::IncompatibleCheckpoint, "checkpoint has parameters the model does not");
  return model;
}

template <typename T>
ResumeState<T> load_resume(const std::filesystem::path& checkpoint) {
  const auto path = last_path(checkpoint);
  if (!std::filesystem::exists(path)) fail(ErrorCode::Io, "no resumable state at " + path.string());
  ResumeState<T> r{ad::unpack<T>(ad::read_checkpoint(path)), -1.0, 0};
  std::ifstream in(sidecar_path(path));
  if (in) {
    const auto j = nlohmann::json::parse(in);
    r.best_val_dice = j.value("best_val_dice", -1.0);
    r.stale_evals = j.value("stale_evals", std::size_t{0});
  }
  return r;
}

/// sample_batch -> forward -> weighted cross-entropy -> backward -> Adam,
/// evaluating every `eval_every` steps and at the last step. Stops at
/// `max_steps` or once more than `patience` evaluations in a row fail to
/// improve the best validation Dice.
template <typename T>
TrainResult<T> train(const Dataset& train_set, const Dataset& val_set, const TrainConfig& cfg,
                     const unet::ModelSpec& spec, const TrainOptions<T>& opts = {}) {
  cfg.validate();
  require(!train_set.empty(), ErrorCode::EmptyInput, "training set is empty");
  const auto aug = cfg.augmentation_for_run();
  const auto weights = compute_class_weights(train_set);

  auto model = unet::build<T>(spec, cfg.seed);
  ad::AdamState<T> adam;
  adam.lr = static_cast<T>(cfg.lr);
  std::uint64_t step = 0;
  double best = -1.0;
  std::size_t stale = 0;
  if (opts.resume) {
    const auto& snap = opts.resume->snapshot;
    for (auto& [name, t] : model.params.tensors()) {
      auto it = snap.params.tensors().find(name);
      if (it == snap.params.tensors().end() || it->second.shape() != t.shape())
        fail(ErrorCode::IncompatibleCheckpoint, "resume state does not match model at " + name);
      std::copy(it->second.values().begin(), it->second.values().end(), t.values().begin());
    }
    for (auto& [name, s] : model.params.all_stats()) {
      auto it = snap.params.all_stats().find(name);
      if (it == snap.params.all_stats().end())
        fail(ErrorCode::IncompatibleCheckpoint, "resume state lacks bn stats for " + name);
      s = it->second;
    }
    // Hyperparameters come from the run config; the checkpoint stores them as float32.
    if (snap.adam) {
      adam.moments = snap.adam->moments;
      adam.t = snap.adam->t;
    }
    step = snap.step;
    best = opts.resume->best_val_dice;
    stale = opts.resume->stale_evals;
  }

  TrainResult<T> result{model.clone(), model.clone(), best, step, false, {}, {}};
  std::ofstream log;
  if (!opts.log.empty()) {
    const bool append = opts.resume.has_value() && std::filesystem::exists(opts.log);
    log.open(opts.log, append ? std::ios::app : std::ios::trunc);
    if (!log) fail(ErrorCode::Io, "cannot write " + opts.log.string());
    if (!append) log << "step,loss,val_dice\n";
  }

  auto save_last = [&] {
    if (opts.checkpoint.empty()) return;
    const auto path = last_path(opts.checkpoint);
    ad::write_checkpoint(path, ad::pack(model.params, &adam, step));
    std::ofstream side(sidecar_path(path));
    side << nlohmann::json{{"model", spec}, {"best_val_dice", best}, {"stale_evals", stale}}.dump(2)
         << '\n';
  };

  double loss_sum = 0.0;
  std::uint64_t loss_count = 0;
  while (step < cfg.max_steps) {
    ++step;
    std::mt19937_64 rng(mix_seed(cfg.seed, step));
    auto batch = sample_batch<T>(train_set, aug, cfg.batch_size, cfg.brain_slice_fraction, rng);
    model.params.zero_grad();
    const auto p = unet::forward(model, batch.x, ad::Mode::Train);
    const auto loss = ad::weighted_cross_entropy(p, batch.y, weights);
    const double lv = static_cast<double>(loss.item());
    if (!std::isfinite(lv))
      fail(ErrorCode::NonFinite, "training loss became non-finite at step " + std::to_string(step));
    ad::backward(loss);
    ad::adam_step(model.params, adam);
    loss_sum += lv;
    ++loss_count;

    if (step % cfg.eval_every != 0 && step != cfg.max_steps) continue;

    LogRow row{step, loss_sum / double(loss_count), std::nullopt};
    loss_sum = 0.0;
    loss_count = 0;
    bool improved = true;
    if (!val_set.empty()) {
      row.val_dice = validation_dice(model, val_set);
      improved = *row.val_dice > best;
    }
    if (improved) {
      if (row.val_dice) best = *row.val_dice;
      stale = 0;
      result.best = model.clone();
      result.saved_val_dice.push_back(row.val_dice.value_or(0.0));
      if (!opts.checkpoint.empty())
        save_model(opts.checkpoint, model, {{"step", step}, {"val_dice", row.val_dice.value_or(-1.0)}});
    } else {
      ++stale;
    }
    result.log.push_back(row);
    if (log) {
      log << row.step << ',' << format_real(row.loss) << ','
          << (row.val_dice ? format_real(*row.val_dice) : std::string()) << '\n';
      log.flush();
    }
    if (opts.on_eval) opts.on_eval(row);
    save_last();
    if (stale > cfg.patience) {
      result.early_stopped = true;
      break;
    }
  }

  result.last = std::move(model);
  result.best_val_dice = best;
  result.final_step = step;
  return result;
}

}  // namespace cranioclip::trainer
