#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "ppl/container.hpp"
#include "ppl/data.hpp"
#include "ppl/patchlearn.hpp"

namespace ppl {

/// Per-image loss −(1/C)·Σ_c [y log σ(ŷ) + (1−y) log(1−σ(ŷ))], mean over the
/// batch. logits N×C or C; labels one vector per row.
Tensor multilabel_loss(const Tensor& logits, const std::vector<LabelVector>& labels);

struct TrainConfig {
  OptimizerConfig optim;  // max_iter is derived from epochs and the batch count
  std::size_t epochs = 5;
  std::size_t batch_size = 16;
  std::size_t crop_side = 96;
  double scale_min = 0.625;  // random rescale range, relative to crop_side
  double scale_max = 1.25;
  double pad_value = 0.5;  // canvas value where a shrunken image is padded
  bool augment = true;
  /// Apply optim.new_layer_lr_multiplier to parameters flagged new_layer.
  bool boost_new_layers = true;
  std::uint64_t seed = 0;

  void validate() const;
};

struct EpochRecord {
  std::size_t step = 0;
  std::size_t epoch = 0;
  double mean_loss = 0;
  double lr = 0;  // base rate at the first iteration of the epoch
};

using TrainLog = std::vector<EpochRecord>;

void write_log_csv(const std::filesystem::path& path, const TrainLog& log);

/// Seeded shuffled epochs with flip / rescale / crop augmentation and the
/// poly schedule. Updates `net` in place and appends one record per epoch.
void train_epochs(PatchNetwork& net, const TrainingView& data, const TrainConfig& cfg, TrainLog* log = nullptr,
                  std::size_t step_index = 0);

/// Augmented copy of one image (used by train_epochs).
Tensor augment_image(const Tensor& image, const TrainConfig& cfg, Rng& rng);

// ---------------------------------------------------------------------------
// Checkpoints

struct CheckpointInfo {
  std::size_t step = 0;
  std::string config_hash;
  nlohmann::json extra = nlohmann::json::object();
};

nlohmann::json backbone_to_json(const BackboneConfig& cfg);
BackboneConfig backbone_from_json(const nlohmann::json& j);

/// Parameters, optional optimizer velocity, network topology and `info`.
TensorBundle make_checkpoint(const PatchNetwork& net, const CheckpointInfo& info, const Sgd* optimizer = nullptr);
/// Rebuilds a network with freshly allocated parameters.
PatchNetwork restore_network(const TensorBundle& bundle);
/// Deep copy (no shared parameter storage).
PatchNetwork clone_network(const PatchNetwork& net);

void save_checkpoint(const std::filesystem::path& path, const PatchNetwork& net, const CheckpointInfo& info);
PatchNetwork load_checkpoint(const std::filesystem::path& path, CheckpointInfo* info = nullptr);

// ---------------------------------------------------------------------------
// Schedules

/// Plain classifier from scratch (the baseline, and the warmup of both
/// progressive modes).
PatchNetwork train_plain(const BackboneConfig& cfg, const TrainingView& data, const TrainConfig& tc,
                         TrainLog* log = nullptr);

/// Network with `specs` branches on top of the backbone of `init`. The first
/// C2 columns of the classifier (the global segment) are carried over; branch
/// layers and the remaining columns are freshly initialized from `seed`.
PatchNetwork attach_branches(const PatchNetwork& init, const std::vector<BranchSpec>& specs, bool detach,
                             std::uint64_t seed);

struct ScheduleStep {
  BranchSpec branch;
  std::size_t epochs = 5;
  double lr = 0.1;
};

struct ProgressiveSchedule {
  std::vector<ScheduleStep> steps;
  /// Destruct every scheduled stage at once in the first step, then continue
  /// with the later steps as usual.
  bool multi_stage_first_step = false;

  /// (2,2) (3,4) (4,6); first step at 0.1, later steps at 0.01.
  static ProgressiveSchedule standard(std::size_t epochs_per_step = 5);
  /// Parses "stage:K,stage:K,...".
  static ProgressiveSchedule parse(const std::string& text, std::size_t epochs_per_step, double first_lr,
                                   double later_lr);
  std::string to_string() const;

  void validate(const BackboneConfig& cfg, std::optional<std::size_t> input_side = std::nullopt) const;
};

/// Called after each schedule step with the step index (1-based) and model.
using StepSink = std::function<void(std::size_t step, const PatchNetwork& net)>;

/// Step 1 trains from `init` with every layer trainable; each later step
/// starts from the previous model, freezes the stages below its destruct
/// stage and installs a fresh branch there. Returns the last step's model.
/// With `resume_after` > 0, `init` is the model produced by that many steps
/// and training continues from the next one.
PatchNetwork run_implicit(const PatchNetwork& init, const ProgressiveSchedule& schedule, const TrainingView& data,
                          const TrainConfig& tc, TrainLog* log = nullptr, const StepSink& sink = {},
                          std::size_t resume_after = 0);

/// Detached branches on the weights of `init` (the warmed-up plain model),
/// trained jointly under one loss on the fused classifier.
PatchNetwork run_explicit(const PatchNetwork& init, const std::vector<BranchSpec>& specs, const TrainingView& data,
                          const TrainConfig& tc, TrainLog* log = nullptr);

}  // namespace ppl
