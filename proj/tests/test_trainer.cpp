#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>
#include <sstream>

#include "cranioclip/phantom.hpp"
#include "cranioclip/run_config.hpp"
#include "cranioclip/trainer.hpp"

using namespace cranioclip;
using namespace cranioclip::trainer;
namespace fs = std::filesystem;

namespace {

ScoreMatrix matrix(std::vector<std::vector<double>> score) {
  ScoreMatrix sm;
  for (std::size_t m = 0; m < score.size(); ++m) sm.methods.push_back("m" + std::to_string(m + 1));
  for (std::size_t v = 0; v < score[0].size(); ++v) sm.volumes.push_back("v" + std::to_string(v + 1));
  sm.score = std::move(score);
  return sm;
}

ScoreMatrix random_matrix(std::size_t methods, std::size_t volumes, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.7, 0.99);
  ScoreMatrix sm;
  for (std::size_t m = 0; m < methods; ++m) sm.methods.push_back("method" + std::to_string(m));
  char buf[16];
  for (std::size_t v = 0; v < volumes; ++v) {
    std::snprintf(buf, sizeof(buf), "vol%03zu", v);
    sm.volumes.push_back(buf);
  }
  sm.score.assign(methods, std::vector<double>(volumes));
  for (auto& row : sm.score)
    for (auto& x : row) x = std::round(u(rng) * 1000) / 1000;  // coarse grid forces ties
  return sm;
}

std::string parse_error(const std::string& csv) {
  std::istringstream in(csv);
  try {
    parse_scores(in, "scores.csv");
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::InvalidArgument);
    return e.what();
  }
  ADD_FAILURE() << "no error for:\n" << csv;
  return {};
}

Dataset tiny_dataset(std::size_t count, std::uint64_t seed, Dims3 dims = {32, 32, 32}) {
  Dataset out;
  phantom::PhantomOptions opts;
  opts.dims = dims;
  for (std::size_t i = 0; i < count; ++i) {
    const auto ph = phantom::generate(opts, seed + i);
    out.push_back(Sample::make("p" + std::to_string(i), ph.volume, ph.mask));
  }
  return out;
}

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("cranioclip_trainer_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

TrainConfig small_config() {
  TrainConfig cfg;
  cfg.batch_size = 4;
  cfg.lr = 2e-3;
  cfg.max_steps = 12;
  cfg.eval_every = 4;
  cfg.patience = 100;
  cfg.seed = 3;
  return cfg;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

// ---------------------------------------------------------------------------
// Split.

TEST(Split, WorkedExample) {
  const auto s = rank_split(matrix({{0.9, 0.5, 0.7}, {0.8, 0.6, 0.7}}), 1, 1);
  EXPECT_EQ(s.test, std::vector<std::string>{"v2"});
  EXPECT_EQ(s.validation, std::vector<std::string>{"v3"});
  EXPECT_EQ(s.train, std::vector<std::string>{"v1"});
}

TEST(Split, AverageRanksForTies) {
  EXPECT_EQ(average_ranks({0.5, 0.5, 0.7}), (std::vector<double>{1.5, 1.5, 3.0}));
  EXPECT_EQ(average_ranks({0.9, 0.1, 0.9, 0.9}), (std::vector<double>{3.0, 1.0, 3.0, 3.0}));
}

TEST(Split, TieBreakIsVolumeId) {
  const auto s = rank_split(matrix({{0.8, 0.8, 0.8}}), 1, 1);
  EXPECT_EQ(s.test, std::vector<std::string>{"v1"});
  EXPECT_EQ(s.validation, std::vector<std::string>{"v2"});
}

TEST(Split, DefaultSizesOn125Volumes) {
  const auto s = rank_split(random_matrix(8, 125, 1), 30, 5);
  EXPECT_EQ(s.train.size(), 90u);
  EXPECT_EQ(s.validation.size(), 5u);
  EXPECT_EQ(s.test.size(), 30u);
}

TEST(Split, PartitionAndHardestFirstProperties) {
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    const auto sm = random_matrix(1 + seed % 5, 20 + seed, seed);
    const std::size_t nt = seed % 7, nv = seed % 4;
    const auto s = rank_split(sm, nt, nv);
    std::multiset<std::string> all(s.train.begin(), s.train.end());
    all.insert(s.validation.begin(), s.validation.end());
    all.insert(s.test.begin(), s.test.end());
    EXPECT_EQ(all, std::multiset<std::string>(sm.volumes.begin(), sm.volumes.end()));
    EXPECT_EQ(s.test.size(), nt);
    EXPECT_EQ(s.validation.size(), nv);

    // Rank totals of test <= validation <= train.
    std::map<std::string, double> total;
    for (const auto& row : sm.score) {
      const auto r = average_ranks(row);
      for (std::size_t v = 0; v < r.size(); ++v) total[sm.volumes[v]] += r[v];
    }
    auto max_of = [&](const std::vector<std::string>& ids) {
      double m = -1;
      for (const auto& id : ids) m = std::max(m, total[id]);
      return m;
    };
    auto min_of = [&](const std::vector<std::string>& ids) {
      double m = 1e300;
      for (const auto& id : ids) m = std::min(m, total[id]);
      return m;
    };
    if (!s.test.empty() && !s.validation.empty()) EXPECT_LE(max_of(s.test), min_of(s.validation));
    if (!s.validation.empty()) EXPECT_LE(max_of(s.validation), min_of(s.train));
  }
}

TEST(Split, InvariantUnderMonotoneRescaling) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    auto sm = random_matrix(4, 40, 100 + seed);
    const auto before = rank_split(sm, 10, 3);
    for (auto& x : sm.score[seed % 4]) x = x * x * x;
    EXPECT_EQ(rank_split(sm, 10, 3), before);
  }
}

TEST(Split, TooFewVolumesRejected) {
  const auto sm = random_matrix(2, 10, 4);
  EXPECT_THROW(rank_split(sm, 8, 2), Error);
  EXPECT_NO_THROW(rank_split(sm, 8, 1));
  EXPECT_EQ(rank_split(sm, 0, 0).train.size(), 10u);
}

TEST(Split, JsonRoundTripAndUnknownKeys) {
  const auto dir = scratch("split");
  const SplitAssignment s{{"a", "b"}, {"c"}, {"d"}};
  write_split(dir / "split.json", s);
  EXPECT_EQ(read_split(dir / "split.json"), s);
  std::ofstream(dir / "bad.json") << R"({"train":[],"validation":[],"test":[],"extra":1})";
  EXPECT_THROW(read_split(dir / "bad.json"), Error);
}

TEST(Scores, ParsesWellFormedCsv) {
  std::istringstream in("volume_id,bet,robex\n\nv1, 0.9 ,0.8\nv2,1,0\n");
  const auto sm = parse_scores(in);
  EXPECT_EQ(sm.methods, (std::vector<std::string>{"bet", "robex"}));
  EXPECT_EQ(sm.volumes, (std::vector<std::string>{"v1", "v2"}));
  EXPECT_EQ(sm.score[0], (std::vector<double>{0.9, 1.0}));
}

TEST(Scores, ErrorsCarryLineNumbers) {
  EXPECT_NE(parse_error("volume_id,a\nv1,0.5\nv2,abc\n").find("scores.csv:3:"), std::string::npos);
  EXPECT_NE(parse_error("volume_id,a\nv1,1.5\n").find(":2:"), std::string::npos);
  EXPECT_NE(parse_error("volume_id,a,b\nv1,0.5\n").find(":2:"), std::string::npos);
  EXPECT_NE(parse_error("volume_id,a\nv1,0.5\nv1,0.6\n").find("duplicate"), std::string::npos);
  EXPECT_NE(parse_error("id,a\nv1,0.5\n").find(":1:"), std::string::npos);
  EXPECT_NE(parse_error("").find("missing header"), std::string::npos);
  EXPECT_NE(parse_error("volume_id,a\nv1,0.5x\n").find(":2:"), std::string::npos);
}

// ---------------------------------------------------------------------------
// Data and batches.

TEST(Data, ClassWeightsFromAllTrainingVoxels) {
  Mask a({2, 2, 2}), b({2, 2, 1});
  a.data()[0] = a.data()[1] = 1;
  b.data()[3] = 1;
  const auto w = compute_class_weights(std::vector<const Mask*>{&a, &b});
  // 3 brain voxels of 12.
  EXPECT_DOUBLE_EQ(w.w[1], 1.0 - 3.0 / 12.0);
  EXPECT_DOUBLE_EQ(w.w[0], 3.0 / 12.0);
  EXPECT_THROW(compute_class_weights(std::vector<const Mask*>{}), Error);
}

TEST(Data, SampleListsBrainSlices) {
  Mask m({4, 5, 6});
  m(1, 2, 3) = 1;
  Volume v({4, 5, 6});
  for (std::size_t i = 0; i < v.size(); ++i) v.data()[i] = float(i % 7);
  const auto s = Sample::make("x", v, m);
  EXPECT_EQ(s.brain_slices[0], std::vector<std::size_t>{1});
  EXPECT_EQ(s.brain_slices[1], std::vector<std::size_t>{2});
  EXPECT_EQ(s.brain_slices[2], std::vector<std::size_t>{3});
  EXPECT_THROW(Sample::make("y", Volume({4, 5, 5}), m), Error);
}

TEST(Batch, ProjectionFrequencyAndBrainFraction) {
  const auto data = tiny_dataset(3, 10, {20, 24, 28});
  const auto aug = augment::AugmentationConfig::for_label(augment::AblationLabel::L0);
  std::mt19937_64 rng(5);
  std::array<std::size_t, 3> axis_count{};
  std::size_t with_brain = 0, total = 0;
  for (int b = 0; b < 625; ++b) {
    const auto batch = sample_batch<float>(data, aug, 16, 0.9, rng);
    const std::size_t P = batch.x.dim(2) * batch.x.dim(3);
    for (std::size_t s = 0; s < 16; ++s) {
      ++axis_count[static_cast<int>(batch.axes[s])];
      bool any = false;
      for (std::size_t p = 0; p < P; ++p) any = any || batch.y.values()[(s * 2 + 1) * P + p] > 0;
      with_brain += any;
      ++total;
    }
  }
  for (auto c : axis_count) EXPECT_NEAR(double(c) / double(total), 1.0 / 3.0, 0.02);
  EXPECT_GE(double(with_brain) / double(total), 0.9 - 0.02);
}

TEST(Batch, L0SlotsAreRawPaddedSlicesWithOneHotTargets) {
  const auto data = tiny_dataset(2, 20, {20, 24, 28});
  const auto aug = augment::AugmentationConfig::for_label(augment::AblationLabel::L0);
  std::mt19937_64 rng(6);
  const auto batch = sample_batch<float>(data, aug, 8, 0.5, rng);
  const std::size_t H = batch.x.dim(2), W = batch.x.dim(3);
  EXPECT_EQ(H % 32, 0u);
  EXPECT_EQ(W % 32, 0u);
  for (std::size_t s = 0; s < 8; ++s) {
    const auto& sample = data[batch.volume_index[s]];
    const auto img = pad_slice_to(extract_plane(sample.volume, batch.axes[s], batch.slice_index[s]), H, W, 0.0f).first;
    const auto msk =
        pad_slice_to(extract_plane(sample.mask, batch.axes[s], batch.slice_index[s]), H, W, std::uint8_t{0}).first;
    for (std::size_t p = 0; p < H * W; ++p) {
      ASSERT_EQ(batch.x.values()[s * H * W + p], img.data()[p]);
      const float y0 = batch.y.values()[(s * 2) * H * W + p], y1 = batch.y.values()[(s * 2 + 1) * H * W + p];
      ASSERT_EQ(y1, float(msk.data()[p]));
      ASSERT_EQ(y0 + y1, 1.0f);
    }
  }
}

TEST(Batch, SameRngStateGivesSameBatch) {
  const auto data = tiny_dataset(2, 30);
  TrainConfig cfg;
  const auto aug = cfg.augmentation_for_run();
  std::mt19937_64 a(9), b(9);
  const auto x = sample_batch<float>(data, aug, 4, 0.9, a), y = sample_batch<float>(data, aug, 4, 0.9, b);
  EXPECT_TRUE(std::equal(x.x.values().begin(), x.x.values().end(), y.x.values().begin()));
  EXPECT_EQ(x.slice_index, y.slice_index);
}

// ---------------------------------------------------------------------------
// Optimisation.

TEST(Training, OverfitsOneRepeatedSlice) {
  const auto data = tiny_dataset(1, 40, {64, 64, 64});
  std::mt19937_64 rng(1);
  const auto batch = sample_batch<float>(data, augment::AugmentationConfig::for_label(augment::AblationLabel::L0), 1,
                                         1.0, rng);
  auto model = unet::build<float>({4}, 1);
  ad::AdamState<float> adam;
  adam.lr = 5e-3;  // 5e-4 is too slow to reach the bound in 200 steps
  const auto w = compute_class_weights(data);
  std::vector<double> losses;
  for (int step = 0; step < 200; ++step) {
    model.params.zero_grad();
    const auto loss = ad::weighted_cross_entropy(unet::forward(model, batch.x, ad::Mode::Train), batch.y, w);
    losses.push_back(loss.item());
    ad::backward(loss);
    ad::adam_step(model.params, adam);
  }
  EXPECT_LT(losses.back(), 0.05 * losses.front()) << "first " << losses.front() << " last " << losses.back();

  // 10-step moving average must drop across every 50-step window after step 50.
  std::vector<double> smooth(losses.size(), 0.0);
  for (std::size_t i = 9; i < losses.size(); ++i)
    for (std::size_t k = i - 9; k <= i; ++k) smooth[i] += losses[k] / 10.0;
  int violations = 0;
  for (std::size_t t = 50; t + 50 < smooth.size(); ++t) violations += !(smooth[t + 50] < smooth[t]);
  EXPECT_LE(violations, 5);
}

TEST(Training, EarlyStopsAfterPatienceRunsOut) {
  const auto data = tiny_dataset(3, 50);
  const Dataset train_set(data.begin(), data.begin() + 2), val(data.begin() + 2, data.end());
  auto cfg = small_config();
  cfg.max_steps = 60;
  cfg.eval_every = 1;
  cfg.patience = 0;
  const auto r = train<float>(train_set, val, cfg, {2});
  ASSERT_FALSE(r.log.empty());
  double best = -1;
  for (std::size_t i = 0; i < r.log.size(); ++i) {
    const double d = *r.log[i].val_dice;
    if (i + 1 < r.log.size()) {
      EXPECT_GT(d, best) << "row " << i;
    } else if (r.early_stopped) {
      EXPECT_LE(d, best);
    }
    best = std::max(best, d);
  }
  if (r.early_stopped) EXPECT_LT(r.final_step, 60u);
  EXPECT_DOUBLE_EQ(r.best_val_dice, best);
}

TEST(Training, SavedDiceNeverDecreases) {
  const auto data = tiny_dataset(3, 60);
  const Dataset train_set(data.begin(), data.begin() + 2), val(data.begin() + 2, data.end());
  auto cfg = small_config();
  cfg.max_steps = 40;
  cfg.eval_every = 2;
  const auto dir = scratch("saved");
  TrainOptions<float> opts;
  opts.checkpoint = dir / "best.ckpt";
  const auto r = train<float>(train_set, val, cfg, {2}, opts);
  ASSERT_FALSE(r.saved_val_dice.empty());
  for (std::size_t i = 1; i < r.saved_val_dice.size(); ++i) EXPECT_GT(r.saved_val_dice[i], r.saved_val_dice[i - 1]);
  EXPECT_DOUBLE_EQ(r.saved_val_dice.back(), r.best_val_dice);
  // The stored best model reproduces the best validation Dice.
  auto best = load_model<float>(opts.checkpoint);
  EXPECT_NEAR(validation_dice(best, val), r.best_val_dice, 1e-12);
}

TEST(Training, DeterministicTrajectory) {
  const auto data = tiny_dataset(2, 70);
  const Dataset train_set(data.begin(), data.begin() + 1), val(data.begin() + 1, data.end());
  const auto cfg = small_config();
  const auto a = train<float>(train_set, val, cfg, {2});
  const auto b = train<float>(train_set, val, cfg, {2});
  ASSERT_EQ(a.log.size(), b.log.size());
  for (std::size_t i = 0; i < a.log.size(); ++i) {
    EXPECT_EQ(a.log[i].loss, b.log[i].loss);
    EXPECT_EQ(a.log[i].val_dice, b.log[i].val_dice);
  }
  auto c_cfg = cfg;
  c_cfg.seed = 4;
  const auto c = train<float>(train_set, val, c_cfg, {2});
  EXPECT_NE(a.log[0].loss, c.log[0].loss);
}

TEST(Training, ResumeContinuesStepCounterAndMatchesUninterruptedRun) {
  const auto data = tiny_dataset(2, 80);
  const Dataset train_set(data.begin(), data.begin() + 1), val(data.begin() + 1, data.end());
  auto cfg = small_config();
  cfg.max_steps = 12;
  const auto straight = train<float>(train_set, val, cfg, {2});

  const auto dir = scratch("resume");
  TrainOptions<float> opts;
  opts.checkpoint = dir / "best.ckpt";
  opts.log = dir / "log.csv";
  auto first_cfg = cfg;
  first_cfg.max_steps = 8;
  const auto first = train<float>(train_set, val, first_cfg, {2}, opts);
  EXPECT_EQ(first.final_step, 8u);

  opts.resume = load_resume<float>(opts.checkpoint);
  EXPECT_EQ(opts.resume->snapshot.step, 8u);
  const auto second = train<float>(train_set, val, cfg, {2}, opts);
  EXPECT_EQ(second.final_step, 12u);
  ASSERT_EQ(second.log.size(), 1u);
  EXPECT_EQ(second.log[0].step, 12u);
  EXPECT_EQ(second.log[0].loss, straight.log.back().loss);
  EXPECT_EQ(second.log[0].val_dice, straight.log.back().val_dice);
  for (const auto& [name, t] : straight.last.params.tensors()) {
    const auto& u = second.last.params.at(name);
    ASSERT_TRUE(std::equal(t.values().begin(), t.values().end(), u.values().begin())) << name;
  }

  const auto log = slurp(opts.log);
  EXPECT_EQ(log.rfind("step,loss,val_dice\n", 0), 0u);
  EXPECT_EQ(log.find("step,", 1), std::string::npos);
  EXPECT_EQ(std::count(log.begin(), log.end(), '\n'), 4);  // header + steps 4, 8, 12
}

TEST(Training, NonFiniteLossAborts) {
  const auto data = tiny_dataset(1, 90);
  auto cfg = small_config();
  cfg.lr = 1e30;
  cfg.max_steps = 20;
  try {
    train<float>(data, {}, cfg, {2});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::NonFinite);
  }
}

TEST(Training, ConfigValidation) {
  TrainConfig cfg;
  cfg.batch_size = 0;
  EXPECT_THROW(cfg.validate(), Error);
  cfg = {};
  cfg.lr = -1;
  EXPECT_THROW(cfg.validate(), Error);
  cfg = {};
  cfg.brain_slice_fraction = 1.5;
  EXPECT_THROW(cfg.validate(), Error);
  EXPECT_THROW(train<float>({}, {}, TrainConfig{}, {2}), Error);
  EXPECT_NE(mix_seed(0, 1), mix_seed(0, 2));
  EXPECT_NE(mix_seed(0, 1), mix_seed(1, 1));
}

TEST(Checkpoint, ModelSpecMismatchIsIncompatible) {
  const auto dir = scratch("compat");
  const auto model = unet::build<float>({2}, 1);
  save_model(dir / "m.ckpt", model);
  auto loaded = load_model<float>(dir / "m.ckpt");
  EXPECT_EQ(loaded.spec, model.spec);
  std::ofstream(sidecar_path(dir / "m.ckpt")) << R"({"model":{"base_channels":4}})";
  try {
    load_model<float>(dir / "m.ckpt");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::IncompatibleCheckpoint);
  }
}

TEST(RunConfig, ParsesAndRejectsUnknownKeys) {
  const auto j = nlohmann::json::parse(R"({
    "model": {"base_channels": 8},
    "train": {"batch_size": 4, "ablation": "2", "max_steps": 10},
    "augmentation": {"rot2d_deg": [0, 90], "translate_px": 5},
    "paths": {"images": "img", "checkpoint": "m.ckpt"}
  })");
  const auto rc = config::parse_run_config(j);
  EXPECT_EQ(rc.model.base_channels, 8);
  EXPECT_EQ(rc.train.batch_size, 4u);
  EXPECT_EQ(rc.train.ablation, augment::AblationLabel::L2);
  EXPECT_EQ(rc.train.augmentation.translate_px, 5);
  EXPECT_EQ(rc.train.augmentation.rot2d_deg, (augment::Range{0, 90}));
  EXPECT_EQ(rc.paths.checkpoint, fs::path("m.ckpt"));
  EXPECT_EQ(rc.train.lr, 5e-4);
  EXPECT_THROW(config::parse_run_config(nlohmann::json::parse(R"({"trian": {}})")), Error);
  EXPECT_THROW(config::parse_run_config(nlohmann::json::parse(R"({"train": {"lr": 1, "x": 2}})")), Error);
  EXPECT_THROW(config::parse_run_config(nlohmann::json::parse(R"({"augmentation": {"shear": 2}})")), Error);
  EXPECT_THROW(config::parse_run_config(nlohmann::json::parse(R"({"train": {"batch_size": "big"}})")), Error);
}
