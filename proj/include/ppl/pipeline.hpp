#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "ppl/eval.hpp"
#include "ppl/trainer.hpp"

namespace ppl {

inline const std::vector<double> kDefaultScales{0.5, 1.0, 1.5, 2.0};

/// Multi-scale, branch-averaged CAMs for every sample, at image resolution.
std::vector<CamStack> infer_cams(const PatchNetwork& net, const Dataset& ds, const std::vector<double>& scales);

/// CAMs scored against the dataset masks over `thresholds`.
SweepTable evaluate_cams(const std::vector<CamStack>& cams, const Dataset& ds, const std::vector<double>& thresholds);

enum class TrainMode { baseline, pl_single, implicit, explicit_fusion };

/// "baseline", "pl-single", "implicit", "explicit".
std::string mode_name(TrainMode mode);
TrainMode parse_mode(const std::string& text);

/// Parses "stage:K,stage:K" into branch specs (an empty string gives none).
std::vector<BranchSpec> parse_branches(const std::string& text);
std::string branches_string(const std::vector<BranchSpec>& specs);

/// Hyperparameters shared by every training mode. All modes start from the
/// same warmed-up plain classifier; each later phase draws from its own seed
/// stream so that the arms of an experiment are comparable.
struct Recipe {
  std::uint64_t seed = 0;
  std::size_t warmup_epochs = 10;
  std::size_t step_epochs = 5;
  std::size_t batch_size = 16;
  std::size_t crop_side = 96;
  double warmup_lr = 0.3;
  double lr = 0.1;           // baseline continuation, pl-single, first implicit step, explicit
  double finetune_lr = 0.01;  // later implicit steps
  double momentum = 0.9;
  double weight_decay = 1e-4;
  bool boost_new_layers = false;
  bool augment = true;

  void validate() const;
  nlohmann::json to_json() const;
  TrainConfig train_config(std::size_t epochs, double lr) const;
};

/// Plain classifier trained for warmup_epochs at warmup_lr.
PatchNetwork warmup_model(const BackboneConfig& cfg, const TrainingView& data, const Recipe& r,
                          TrainLog* log = nullptr);
/// The warmed model trained for step_epochs more, without branches.
PatchNetwork train_baseline(const PatchNetwork& warm, const TrainingView& data, const Recipe& r,
                            TrainLog* log = nullptr);
/// Implicit schedule from the warmed model. A one-step schedule is single
/// patch learning; pl-single and implicit share a seed stream, so a single
/// arm equals the first step of a schedule that starts with it.
PatchNetwork train_progressive(const PatchNetwork& warm, const ProgressiveSchedule& schedule,
                               const TrainingView& data, const Recipe& r, TrainLog* log = nullptr,
                               const StepSink& sink = {}, std::size_t resume_after = 0);
/// Explicit fusion of detached branches on the warmed model.
PatchNetwork train_explicit(const PatchNetwork& warm, const std::vector<BranchSpec>& specs,
                            const TrainingView& data, const Recipe& r, TrainLog* log = nullptr);

/// Schedule of the given mode: the branch list as one step for pl-single,
/// or `schedule` parsed with step_epochs / lr / finetune_lr for implicit.
ProgressiveSchedule make_schedule(const Recipe& r, const std::string& schedule);
ProgressiveSchedule single_step(const Recipe& r, BranchSpec spec);

struct BenchmarkConfig {
  Recipe recipe;
  std::size_t n_train = 2000;
  std::size_t n_eval = 400;
  std::size_t image_side = 96;
  std::size_t num_classes = 6;
  bool wide = false;  // wider backbone instead of the tiny one
  std::vector<double> scales = kDefaultScales;
  std::vector<double> thresholds = threshold_range(0.05, 0.95, 0.05);
  std::vector<BranchSpec> single_arms{{2, 2}, {3, 4}, {4, 6}};
  std::string schedule = "2:2,3:4,4:6";
  std::vector<BranchSpec> explicit_branches{{2, 2}, {3, 4}, {4, 6}};

  nlohmann::json to_json() const;
};

struct ArmResult {
  std::string name;
  SweepTable sweep;
};

struct BenchmarkResult {
  std::vector<ArmResult> arms;
  const ArmResult& arm(const std::string& name) const;
};

/// Generates the train/eval sets for `recipe.seed`, trains the baseline, each
/// single patch-learning arm, the implicit schedule and the explicit fusion,
/// and scores the CAMs of each. Writes metrics.csv, per-arm sweep CSVs and
/// training logs into `out_dir`. Progress lines go to `progress` when set.
BenchmarkResult run_benchmark(const BenchmarkConfig& cfg, const std::filesystem::path& out_dir,
                              std::ostream* progress = nullptr);

/// "arm,best_tau,precision,recall,miou" with one row per arm.
void write_metrics_csv(const std::filesystem::path& path, const BenchmarkResult& result);

}  // namespace ppl
