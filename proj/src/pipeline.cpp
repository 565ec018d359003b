#include "ppl/pipeline.hpp"

#include <chrono>
#include <fstream>
#include <optional>
#include <ostream>

namespace ppl {

std::vector<CamStack> infer_cams(const PatchNetwork& net, const Dataset& ds, const std::vector<double>& scales) {
  std::vector<CamStack> out;
  out.reserve(ds.samples.size());
  for (const auto& s : ds.samples) out.push_back(infer_cam(net, s.image, s.labels, scales));
  return out;
}

SweepTable evaluate_cams(const std::vector<CamStack>& cams, const Dataset& ds, const std::vector<double>& thresholds) {
  ds.require_masks("evaluation");
  std::vector<LabelImage> gts;
  gts.reserve(ds.samples.size());
  for (const auto& s : ds.samples) gts.push_back(s.gt_mask);
  return pr_sweep(cams, gts, thresholds, ds.num_classes);
}

std::string mode_name(TrainMode mode) {
  switch (mode) {
    case TrainMode::baseline: return "baseline";
    case TrainMode::pl_single: return "pl-single";
    case TrainMode::implicit: return "implicit";
    case TrainMode::explicit_fusion: return "explicit";
  }
  return "?";
}

TrainMode parse_mode(const std::string& text) {
  for (auto m : {TrainMode::baseline, TrainMode::pl_single, TrainMode::implicit, TrainMode::explicit_fusion}) {
    if (text == mode_name(m)) return m;
  }
  throw std::invalid_argument("unknown mode '" + text + "' (baseline, pl-single, implicit, explicit)");
}

std::vector<BranchSpec> parse_branches(const std::string& text) {
  if (text.empty()) return {};
  std::vector<BranchSpec> out;
  for (const auto& st : ProgressiveSchedule::parse(text, 1, 1, 1).steps) out.push_back(st.branch);
  return out;
}

std::string branches_string(const std::vector<BranchSpec>& specs) {
  std::string out;
  for (const auto& s : specs) {
    if (!out.empty()) out += ',';
    out += std::to_string(s.stage) + ":" + std::to_string(s.grid);
  }
  return out;
}

void Recipe::validate() const {
  if (batch_size == 0) throw std::invalid_argument("recipe: batch_size must be positive");
  if (crop_side == 0) throw std::invalid_argument("recipe: crop_side must be positive");
  for (double v : {warmup_lr, lr, finetune_lr}) {
    if (!(v > 0)) throw std::invalid_argument("recipe: learning rates must be positive");
  }
  train_config(1, lr).validate();
}

nlohmann::json Recipe::to_json() const {
  return {{"seed", seed},           {"warmup_epochs", warmup_epochs}, {"step_epochs", step_epochs},
          {"batch_size", batch_size}, {"crop_side", crop_side},       {"warmup_lr", warmup_lr},
          {"lr", lr},               {"finetune_lr", finetune_lr},     {"momentum", momentum},
          {"weight_decay", weight_decay}, {"boost_new_layers", boost_new_layers}, {"augment", augment}};
}

TrainConfig Recipe::train_config(std::size_t epochs, double rate) const {
  TrainConfig tc;
  tc.epochs = epochs;
  tc.batch_size = batch_size;
  tc.crop_side = crop_side;
  tc.augment = augment;
  tc.boost_new_layers = boost_new_layers;
  tc.optim.lr_init = rate;
  tc.optim.momentum = momentum;
  tc.optim.weight_decay = weight_decay;
  return tc;
}

PatchNetwork warmup_model(const BackboneConfig& cfg, const TrainingView& data, const Recipe& r, TrainLog* log) {
  r.validate();
  TrainConfig tc = r.train_config(r.warmup_epochs, r.warmup_lr);
  // The classifier is not a late addition here.
  tc.boost_new_layers = false;
  tc.seed = derive_seed(r.seed, 10);
  return train_plain(cfg, data, tc, log);
}

PatchNetwork train_baseline(const PatchNetwork& warm, const TrainingView& data, const Recipe& r, TrainLog* log) {
  if (!warm.branches().empty()) throw std::invalid_argument("baseline: initial model must be a plain classifier");
  PatchNetwork net = clone_network(warm);
  TrainConfig tc = r.train_config(r.step_epochs, r.lr);
  tc.seed = derive_seed(r.seed, 11);
  train_epochs(net, data, tc, log, 1);
  return net;
}

ProgressiveSchedule make_schedule(const Recipe& r, const std::string& schedule) {
  return ProgressiveSchedule::parse(schedule, r.step_epochs, r.lr, r.finetune_lr);
}

ProgressiveSchedule single_step(const Recipe& r, BranchSpec spec) {
  ProgressiveSchedule s;
  s.steps.push_back({spec, r.step_epochs, r.lr});
  return s;
}

PatchNetwork train_progressive(const PatchNetwork& warm, const ProgressiveSchedule& schedule,
                               const TrainingView& data, const Recipe& r, TrainLog* log, const StepSink& sink,
                               std::size_t resume_after) {
  TrainConfig tc = r.train_config(r.step_epochs, r.lr);
  tc.seed = derive_seed(r.seed, 30);
  return run_implicit(warm, schedule, data, tc, log, sink, resume_after);
}

PatchNetwork train_explicit(const PatchNetwork& warm, const std::vector<BranchSpec>& specs,
                            const TrainingView& data, const Recipe& r, TrainLog* log) {
  TrainConfig tc = r.train_config(r.step_epochs, r.lr);
  tc.seed = derive_seed(r.seed, 40);
  return run_explicit(warm, specs, data, tc, log);
}

nlohmann::json BenchmarkConfig::to_json() const {
  return {{"recipe", recipe.to_json()},
          {"n_train", n_train},
          {"n_eval", n_eval},
          {"image_side", image_side},
          {"num_classes", num_classes},
          {"wide", wide},
          {"scales", scales},
          {"thresholds", thresholds},
          {"single_arms", branches_string(single_arms)},
          {"schedule", schedule},
          {"explicit_branches", branches_string(explicit_branches)}};
}

const ArmResult& BenchmarkResult::arm(const std::string& name) const {
  for (const auto& a : arms) {
    if (a.name == name) return a;
  }
  throw std::out_of_range("benchmark: no arm named " + name);
}

void write_metrics_csv(const std::filesystem::path& path, const BenchmarkResult& result) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << "arm,best_tau,precision,recall,miou\n";
  for (const auto& a : result.arms) {
    const auto& r = a.sweep.best_row();
    os << a.name << ',' << format_fixed(r.tau, 4) << ',' << format_fixed(r.precision) << ','
       << format_fixed(r.recall) << ',' << format_fixed(r.miou) << '\n';
  }
}

BenchmarkResult run_benchmark(const BenchmarkConfig& cfg, const std::filesystem::path& out_dir,
                              std::ostream* progress) {
  const auto t0 = std::chrono::steady_clock::now();
  const Recipe& r = cfg.recipe;
  auto note = [&](const std::string& msg) {
    if (!progress) return;
    const auto secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    *progress << "[seed " << r.seed << " +" << format_fixed(secs, 0) << "s] " << msg << std::endl;
  };

  SynthConfig train_cfg;
  train_cfg.seed = derive_seed(r.seed, 1);
  train_cfg.n_images = cfg.n_train;
  train_cfg.image_side = cfg.image_side;
  train_cfg.n_classes = cfg.num_classes;
  SynthConfig eval_cfg = train_cfg;
  eval_cfg.seed = derive_seed(r.seed, 2);
  eval_cfg.n_images = cfg.n_eval;
  const TrainingView train = generate(train_cfg).training_view();
  const Dataset eval = generate(eval_cfg);
  note("generated " + std::to_string(train.size()) + " train / " + std::to_string(eval.samples.size()) +
       " eval images");

  const BackboneConfig bb = cfg.wide ? BackboneConfig::wide(cfg.num_classes) : BackboneConfig::tiny(cfg.num_classes);
  Recipe recipe = r;
  recipe.crop_side = cfg.image_side;
  const ProgressiveSchedule sched = make_schedule(recipe, cfg.schedule);
  sched.validate(bb, cfg.image_side);
  validate_branches(cfg.explicit_branches, bb, cfg.image_side);
  for (const auto& s : cfg.single_arms) validate_branches({s}, bb, cfg.image_side);

  std::filesystem::create_directories(out_dir);
  BenchmarkResult result;
  auto score = [&](const std::string& name, const PatchNetwork& net, const TrainLog& log) {
    const SweepTable t = evaluate_cams(infer_cams(net, eval, cfg.scales), eval, cfg.thresholds);
    write_sweep_csv(out_dir / ("sweep_" + name + ".csv"), t);
    write_log_csv(out_dir / ("train_" + name + ".csv"), log);
    result.arms.push_back({name, t});
    note(name + ": best tau " + format_fixed(t.best_row().tau, 2) + " mIoU " + format_fixed(t.best_row().miou, 4));
  };

  TrainLog warm_log;
  const PatchNetwork warmed = warmup_model(bb, train, recipe, &warm_log);
  note("warmup done, final loss " + format_fixed(warm_log.empty() ? 0.0 : warm_log.back().mean_loss, 4));

  {
    TrainLog log = warm_log;
    score("baseline", train_baseline(warmed, train, recipe, &log), log);
  }

  // The single arm that matches the first implicit step is that step.
  std::optional<PatchNetwork> first_step;
  TrainLog first_log;
  for (const auto& spec : cfg.single_arms) {
    TrainLog log = warm_log;
    PatchNetwork net = train_progressive(warmed, single_step(recipe, spec), train, recipe, &log);
    score("pl_s" + std::to_string(spec.stage) + "_k" + std::to_string(spec.grid), net, log);
    if (!first_step && !sched.multi_stage_first_step && spec == sched.steps.front().branch) {
      first_step = std::move(net);
      first_log = std::move(log);
    }
  }

  {
    TrainLog log = first_step ? first_log : warm_log;
    const PatchNetwork net = first_step ? train_progressive(*first_step, sched, train, recipe, &log, {}, 1)
                                        : train_progressive(warmed, sched, train, recipe, &log);
    score("implicit", net, log);
  }

  {
    TrainLog log = warm_log;
    score("explicit", train_explicit(warmed, cfg.explicit_branches, train, recipe, &log), log);
  }

  write_metrics_csv(out_dir / "metrics.csv", result);
  return result;
}

}  // namespace ppl
