// cranioclip: brain extraction toolkit.
//
//   cranioclip split    --scores scores.csv --out split.json [--n-test 30 --n-val 5]
//   cranioclip train    [--config run.json] [--images DIR --masks DIR --split FILE
//                       --checkpoint FILE ...] [--ablation 0|1|2|3|4|all] [--resume]
//   cranioclip extract  CHECKPOINT VOLUME OUTPUT [--single-projection axial]
//   cranioclip evaluate PRED_DIR TRUTH_DIR [--csv FILE]
//   cranioclip phantom  --out DIR [--count 40 --size 96 --bias 0.3 ...]
//
// Exit status: 0 success, 2 usage or validation error, 3 runtime failure.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cranioclip/cranioclip.hpp"

namespace fs = std::filesystem;
using namespace cranioclip;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 2;
constexpr int kExitRuntime = 3;

/// Thrown for bad user input detected by the tool itself.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

int exit_code_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::MalformedHeader:
    case ErrorCode::UnsupportedDatatype:
    case ErrorCode::TruncatedPayload:
    case ErrorCode::DegenerateInput:
    case ErrorCode::ShapeMismatch:
    case ErrorCode::InvalidArgument:
    case ErrorCode::IncompatibleCheckpoint:
    case ErrorCode::EmptyInput:
      return kExitUsage;
    default:
      return kExitRuntime;
  }
}

void require_file(const fs::path& p, const std::string& what) {
  if (p.empty()) throw UsageError(what + " is required");
  if (!fs::is_regular_file(p)) throw UsageError(what + " '" + p.string() + "' does not exist");
}

void require_dir(const fs::path& p, const std::string& what) {
  if (p.empty()) throw UsageError(what + " is required");
  if (!fs::is_directory(p)) throw UsageError(what + " '" + p.string() + "' is not a directory");
}

/// "dir/v001.nii.gz" -> "v001"; empty for non-NIfTI names.
std::string volume_id(const fs::path& p) {
  const std::string name = p.filename().string();
  for (const std::string ext : {".nii.gz", ".nii"})
    if (name.size() > ext.size() && name.compare(name.size() - ext.size(), ext.size(), ext) == 0)
      return name.substr(0, name.size() - ext.size());
  return {};
}

std::map<std::string, fs::path> list_volumes(const fs::path& dir) {
  std::map<std::string, fs::path> out;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    const auto id = volume_id(e.path());
    if (id.empty()) continue;
    if (!out.emplace(id, e.path()).second)
      throw UsageError("volume id '" + id + "' appears twice in " + dir.string());
  }
  return out;
}

fs::path report_path(const fs::path& mask_path) {
  const auto id = volume_id(mask_path);
  return mask_path.parent_path() / ((id.empty() ? mask_path.filename().string() : id) + ".json");
}

// ---------------------------------------------------------------------------

struct SplitArgs {
  fs::path scores, out;
  std::size_t n_test = 30, n_val = 5;
};

int run_split(const SplitArgs& a) {
  require_file(a.scores, "--scores");
  if (a.out.empty()) throw UsageError("--out is required");
  const auto split = trainer::rank_split(trainer::read_scores(a.scores), a.n_test, a.n_val);
  trainer::write_split(a.out, split);
  std::printf("split: %zu train, %zu validation, %zu test -> %s\n", split.train.size(),
              split.validation.size(), split.test.size(), a.out.string().c_str());
  return kExitOk;
}

struct TrainArgs {
  fs::path config;
  config::Paths paths;
  std::optional<std::string> ablation;
  std::optional<std::uint64_t> max_steps, eval_every, seed;
  std::optional<std::size_t> patience, batch_size;
  std::optional<double> lr;
  std::optional<int> base_channels;
  bool resume = false;
};

int run_train(const TrainArgs& a) {
  config::RunConfig rc;
  if (!a.config.empty()) {
    require_file(a.config, "--config");
    rc = config::load_run_config(a.config);
  }
  auto over = [](fs::path& dst, const fs::path& src) {
    if (!src.empty()) dst = src;
  };
  over(rc.paths.images, a.paths.images);
  over(rc.paths.masks, a.paths.masks);
  over(rc.paths.split, a.paths.split);
  over(rc.paths.checkpoint, a.paths.checkpoint);
  over(rc.paths.log, a.paths.log);
  if (a.ablation) rc.train.ablation = augment::parse_ablation(*a.ablation);
  if (a.max_steps) rc.train.max_steps = *a.max_steps;
  if (a.eval_every) rc.train.eval_every = *a.eval_every;
  if (a.seed) rc.train.seed = *a.seed;
  if (a.patience) rc.train.patience = *a.patience;
  if (a.batch_size) rc.train.batch_size = *a.batch_size;
  if (a.lr) rc.train.lr = *a.lr;
  if (a.base_channels) rc.model.base_channels = *a.base_channels;
  rc.model.validate();
  rc.train.validate();

  require_dir(rc.paths.images, "images directory");
  require_dir(rc.paths.masks, "masks directory");
  require_file(rc.paths.split, "split file");
  if (rc.paths.checkpoint.empty()) throw UsageError("checkpoint path is required");
  if (rc.paths.log.empty()) rc.paths.log = rc.paths.checkpoint.string() + ".log.csv";

  const auto split = trainer::read_split(rc.paths.split);
  if (split.train.empty()) throw UsageError("split has no training volumes");
  const auto train_set = trainer::load_dataset(split.train, rc.paths.images, rc.paths.masks);
  const auto val_set = trainer::load_dataset(split.validation, rc.paths.images, rc.paths.masks);

  trainer::TrainOptions<float> opts;
  opts.checkpoint = rc.paths.checkpoint;
  opts.log = rc.paths.log;
  if (a.resume) opts.resume = trainer::load_resume<float>(rc.paths.checkpoint);
  opts.on_eval = [](const trainer::LogRow& row) {
    if (row.val_dice)
      std::printf("step %llu  loss %.5f  val_dice %.4f\n", (unsigned long long)row.step, row.loss,
                  *row.val_dice);
    else
      std::printf("step %llu  loss %.5f\n", (unsigned long long)row.step, row.loss);
    std::fflush(stdout);
  };
  const auto result = trainer::train<float>(train_set, val_set, rc.train, rc.model, opts);
  std::printf("finished at step %llu%s; best val_dice %.4f; checkpoint %s\n",
              (unsigned long long)result.final_step, result.early_stopped ? " (early stop)" : "",
              result.best_val_dice, rc.paths.checkpoint.string().c_str());
  return kExitOk;
}

struct ExtractArgs {
  fs::path checkpoint, input, output, report;
  std::optional<std::string> single;
  double tau = 0.5;
  bool no_refine = false;
  std::size_t batch = 8;
};

int run_extract(const ExtractArgs& a) {
  require_file(a.checkpoint, "checkpoint");
  require_file(a.input, "input volume");
  if (a.output.empty()) throw UsageError("output path is required");
  inference::ExtractOptions opts;
  if (a.single) opts.single_projection = parse_axis(*a.single);
  opts.tau = a.tau;
  opts.refine = !a.no_refine;
  opts.batch_slices = a.batch;

  auto model = trainer::load_model<float>(a.checkpoint);
  const auto volume = nifti::read_nifti(a.input);
  const auto result = inference::extract(model, volume, opts);
  nifti::write_nifti(result.mask, a.output);

  const auto id = volume_id(a.input).empty() ? a.input.stem().string() : volume_id(a.input);
  nlohmann::json report{{"volume_id", id},
                        {"seconds_total", result.seconds_total},
                        {"seconds_per_projection",
                         {{"sagittal", result.seconds_per_projection[0]},
                          {"coronal", result.seconds_per_projection[1]},
                          {"axial", result.seconds_per_projection[2]}}},
                        {"voxels_brain", result.voxels_brain}};
  if (opts.single_projection) report["single_projection"] = std::string(to_string(*opts.single_projection));
  if (result.empty_warning) report["warning"] = "empty mask";
  const auto rp = a.report.empty() ? report_path(a.output) : a.report;
  std::ofstream(rp) << report.dump(2) << '\n';
  if (result.empty_warning) std::fprintf(stderr, "warning: %s produced an empty mask\n", id.c_str());
  std::printf("%s: %zu brain voxels in %.2f s -> %s\n", id.c_str(), result.voxels_brain,
              result.seconds_total, a.output.string().c_str());
  return kExitOk;
}

struct EvaluateArgs {
  fs::path pred, truth, csv;
  std::string label = "cranioclip";
};

int run_evaluate(const EvaluateArgs& a) {
  require_dir(a.pred, "prediction directory");
  require_dir(a.truth, "truth directory");
  const auto preds = list_volumes(a.pred);
  const auto truths = list_volumes(a.truth);
  std::vector<std::string> orphans;
  for (const auto& [id, _] : preds)
    if (!truths.contains(id)) orphans.push_back("prediction " + id);
  for (const auto& [id, _] : truths)
    if (!preds.contains(id)) orphans.push_back("truth " + id);
  if (!orphans.empty()) {
    std::string msg = "unmatched volume ids:";
    for (const auto& o : orphans) msg += "\n  " + o;
    throw UsageError(msg);
  }
  if (preds.empty()) throw UsageError("no NIfTI volumes in " + a.pred.string());

  std::vector<metrics::VolumeMetrics> rows;
  for (const auto& [id, path] : preds) {
    double seconds = 0.0;
    if (std::ifstream rin(a.pred / (id + ".json")); rin) {
      const auto j = nlohmann::json::parse(rin, nullptr, false);
      if (j.is_object()) seconds = j.value("seconds_total", 0.0);
    }
    rows.push_back(metrics::evaluate(id, nifti::read_nifti_mask(path),
                                     nifti::read_nifti_mask(truths.at(id)), seconds));
  }
  const auto report = metrics::aggregate(rows);
  const auto csv = a.csv.empty() ? a.pred / "metrics.csv" : a.csv;
  std::ofstream out(csv);
  if (!out) throw Error(ErrorCode::Io, "cannot write " + csv.string());
  metrics::write_csv(out, report);
  metrics::write_table(std::cout, report, a.label);
  return kExitOk;
}

struct PhantomArgs {
  fs::path out;
  std::size_t count = 40, size = 96;
  std::uint64_t seed = 0;
  std::string prefix = "phantom";
  phantom::PhantomOptions opts;
};

int run_phantom(PhantomArgs a) {
  if (a.out.empty()) throw UsageError("--out is required");
  if (a.count == 0) throw UsageError("--count must be >= 1");
  a.opts.dims = {a.size, a.size, a.size};
  a.opts.validate();
  fs::create_directories(a.out / "images");
  fs::create_directories(a.out / "masks");
  std::ofstream scores(a.out / "scores.csv");
  scores << "volume_id,method_a,method_b,method_c\n";
  std::mt19937_64 score_rng(a.seed ^ 0x5c0e5ull);
  std::uniform_real_distribution<double> dice(0.80, 0.98);
  for (std::size_t i = 0; i < a.count; ++i) {
    char id[64];
    std::snprintf(id, sizeof(id), "%s%03zu", a.prefix.c_str(), i);
    const auto ph = phantom::generate(a.opts, a.seed * 1000003ull + i);
    nifti::write_nifti(ph.volume, a.out / "images" / (std::string(id) + ".nii.gz"));
    nifti::write_nifti(ph.mask, a.out / "masks" / (std::string(id) + ".nii.gz"));
    char line[160];
    std::snprintf(line, sizeof(line), "%s,%.4f,%.4f,%.4f\n", id, dice(score_rng), dice(score_rng),
                  dice(score_rng));
    scores << line;
  }
  std::printf("wrote %zu phantoms to %s\n", a.count, a.out.string().c_str());
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"cranioclip: CNN brain extraction for T1-weighted MR volumes"};
  app.require_subcommand(1);
  int threads = 0;
  app.add_option("--threads", threads, "Cap on BLAS worker threads (0 = library default)")
      ->check(CLI::NonNegativeNumber);

  SplitArgs split;
  auto* split_cmd = app.add_subcommand("split", "Rank-aggregation train/validation/test split");
  split_cmd->add_option("--scores", split.scores, "Score matrix CSV")->required();
  split_cmd->add_option("--out", split.out, "Output split JSON")->required();
  split_cmd->add_option("--n-test", split.n_test, "Volumes assigned to test");
  split_cmd->add_option("--n-val", split.n_val, "Volumes assigned to validation");

  TrainArgs train;
  auto* train_cmd = app.add_subcommand("train", "Train the network");
  train_cmd->add_option("--config", train.config, "Run configuration JSON");
  train_cmd->add_option("--images", train.paths.images, "Directory of <id>.nii[.gz] volumes");
  train_cmd->add_option("--masks", train.paths.masks, "Directory of <id>.nii[.gz] masks");
  train_cmd->add_option("--split", train.paths.split, "Split JSON");
  train_cmd->add_option("--checkpoint", train.paths.checkpoint, "Best-model checkpoint path");
  train_cmd->add_option("--log", train.paths.log, "Training log CSV");
  train_cmd->add_option("--ablation", train.ablation, "Augmentation set: 0,1,2,3,4 or all");
  train_cmd->add_option("--max-steps", train.max_steps, "Total optimizer steps");
  train_cmd->add_option("--eval-every", train.eval_every, "Steps between validations");
  train_cmd->add_option("--patience", train.patience, "Non-improving validations tolerated");
  train_cmd->add_option("--seed", train.seed, "Random seed");
  train_cmd->add_option("--batch-size", train.batch_size, "Slices per batch");
  train_cmd->add_option("--lr", train.lr, "Adam learning rate");
  train_cmd->add_option("--base-channels", train.base_channels, "Width of the first layer");
  train_cmd->add_flag("--resume", train.resume, "Continue from <checkpoint>.last");

  ExtractArgs extract;
  auto* extract_cmd = app.add_subcommand("extract", "Extract the brain mask of one volume");
  extract_cmd->add_option("checkpoint", extract.checkpoint, "Model checkpoint")->required();
  extract_cmd->add_option("volume", extract.input, "Input NIfTI volume")->required();
  extract_cmd->add_option("output", extract.output, "Output NIfTI mask")->required();
  extract_cmd->add_option("--single-projection", extract.single,
                          "Use one projection only: sagittal, coronal or axial");
  extract_cmd->add_option("--threshold", extract.tau, "Fusion threshold in (0,1)");
  extract_cmd->add_flag("--no-refine", extract.no_refine, "Skip morphological cleanup");
  extract_cmd->add_option("--batch-slices", extract.batch, "Slices per forward pass");
  extract_cmd->add_option("--report", extract.report, "Timing report JSON (default <id>.json)");

  EvaluateArgs evaluate;
  auto* evaluate_cmd = app.add_subcommand("evaluate", "Score predicted masks against ground truth");
  evaluate_cmd->add_option("pred", evaluate.pred, "Directory of predicted masks")->required();
  evaluate_cmd->add_option("truth", evaluate.truth, "Directory of ground-truth masks")->required();
  evaluate_cmd->add_option("--csv", evaluate.csv, "Per-volume CSV (default PRED/metrics.csv)");
  evaluate_cmd->add_option("--label", evaluate.label, "Method name in the summary table");

  PhantomArgs ph;
  auto* phantom_cmd = app.add_subcommand("phantom", "Generate synthetic head phantoms");
  phantom_cmd->add_option("--out", ph.out, "Output directory")->required();
  phantom_cmd->add_option("--count", ph.count, "Number of phantoms");
  phantom_cmd->add_option("--size", ph.size, "Edge length in voxels");
  phantom_cmd->add_option("--seed", ph.seed, "Random seed");
  phantom_cmd->add_option("--prefix", ph.prefix, "Volume id prefix");
  phantom_cmd->add_option("--bias", ph.opts.bias, "Bias field strength in [0,1)");
  phantom_cmd->add_option("--noise", ph.opts.noise, "Gaussian noise sigma");
  phantom_cmd->add_option("--rotation", ph.opts.rotation_deg, "Random rotation bound (degrees)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitUsage;
  }

  try {
    runtime::configure_threads(threads);
    if (*split_cmd) return run_split(split);
    if (*train_cmd) return run_train(train);
    if (*extract_cmd) return run_extract(extract);
    if (*evaluate_cmd) return run_evaluate(evaluate);
    if (*phantom_cmd) return run_phantom(ph);
  } catch (const UsageError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitUsage;
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return exit_code_for(e.code());
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitRuntime;
  }
  return kExitUsage;
}
