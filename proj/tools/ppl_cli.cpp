// ppl: dataset generation, training, CAM export and evaluation.

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <iostream>
#include <optional>

#include "CLI11.hpp"
#include "ppl/hash.hpp"
#include "ppl/png_io.hpp"
#include "run_config.hpp"

namespace fs = std::filesystem;
using namespace ppl;
using namespace ppl::cli;

namespace {

constexpr const char* kRootEnv = "PPL_RUNS_ROOT";

struct Run {
  std::string command;
  RunConfig cfg;
  std::string hash;
  fs::path dir;
};

std::string timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y%m%d-%H%M%S", &tm);
  return buf;
}

void write_json(const fs::path& path, const nlohmann::json& j) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << j.dump(2) << '\n';
}

Run open_run(const std::string& command, const RunConfig& cfg, const std::string& out_root,
             const std::string& run_dir, bool force, bool resume) {
  Run run{command, cfg, config_hash(command, cfg), {}};
  if (!run_dir.empty()) {
    run.dir = run_dir;
  } else {
    const char* env = std::getenv(kRootEnv);
    const fs::path root = !out_root.empty() ? fs::path(out_root) : fs::path(env && *env ? env : "runs");
    run.dir = root / (command + "-" + timestamp() + "-" + run.hash.substr(0, 12));
  }
  if (fs::exists(run.dir) && !fs::is_empty(run.dir) && !force && !resume) {
    throw std::invalid_argument("output directory " + run.dir.string() + " exists and is not empty (use --force)");
  }
  fs::create_directories(run.dir);
  write_json(run.dir / "run.json", {{"command", command},
                                    {"config_hash", run.hash},
                                    {"created", timestamp()},
                                    {"config", cfg.to_json()}});
  return run;
}

// Hash of every file below the run directory except the run record itself.
void close_run(const Run& run) {
  std::vector<std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(run.dir)) {
    if (!e.is_regular_file()) continue;
    const std::string rel = fs::relative(e.path(), run.dir).generic_string();
    if (rel == "run.json" || rel == "manifest.json") continue;
    files.push_back(rel);
  }
  std::sort(files.begin(), files.end());
  nlohmann::json entries = nlohmann::json::object();
  Fnv1a all;
  for (const auto& f : files) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(hash_file(run.dir / f)));
    entries[f] = buf;
    all.update(f + " " + buf + "\n");
  }
  write_json(run.dir / "manifest.json",
             {{"config_hash", run.hash}, {"manifest_hash", all.hex()}, {"files", entries}});
  std::cout << "manifest " << all.hex() << "\n";
  std::cout << "run directory " << run.dir.string() << "\n";
}

Dataset load_required(const std::string& path, const char* what) {
  if (path.empty()) throw std::invalid_argument(std::string("missing --") + what);
  if (!fs::is_directory(path)) throw DataError(std::string(what) + " directory " + path + " not found");
  return load_dataset(path);
}

PatchNetwork load_model(const std::string& path, CheckpointInfo* info = nullptr) {
  if (path.empty()) throw std::invalid_argument("missing --checkpoint");
  if (!fs::is_regular_file(path)) throw DataError("checkpoint " + path + " not found");
  try {
    return load_checkpoint(path, info);
  } catch (const std::runtime_error& e) {
    throw DataError(e.what());
  }
}

nlohmann::json log_json(const TrainLog& log) {
  nlohmann::json a = nlohmann::json::array();
  for (const auto& r : log) a.push_back({r.step, r.epoch, r.mean_loss, r.lr});
  return a;
}

TrainLog log_from_json(const nlohmann::json& a) {
  TrainLog log;
  for (const auto& r : a) {
    log.push_back({r.at(0).get<std::size_t>(), r.at(1).get<std::size_t>(), r.at(2).get<double>(),
                   r.at(3).get<double>()});
  }
  return log;
}

void save_step(const Run& run, const fs::path& path, const PatchNetwork& net, std::size_t step,
               const TrainLog& log) {
  CheckpointInfo info;
  info.step = step;
  info.config_hash = run.hash;
  info.extra = {{"mode", mode_name(run.cfg.mode)}, {"log", log_json(log)}};
  save_checkpoint(path, net, info);
}

// A checkpoint left by an earlier run of the same configuration.
std::optional<PatchNetwork> resume_from(const Run& run, const fs::path& path, TrainLog& log) {
  if (!fs::is_regular_file(path)) return std::nullopt;
  CheckpointInfo info;
  PatchNetwork net = load_model(path.string(), &info);
  if (info.config_hash != run.hash) return std::nullopt;
  log = log_from_json(info.extra.value("log", nlohmann::json::array()));
  return net;
}

// ---------------------------------------------------------------------------

void cmd_gen(const Run& run) {
  SynthConfig sc;
  sc.seed = run.cfg.recipe.seed;
  sc.n_images = run.cfg.n_images;
  sc.image_side = run.cfg.image_side;
  sc.n_classes = run.cfg.n_classes;
  GenerationReport report;
  const Dataset ds = generate(sc, &report);
  write_dataset(ds, run.dir);
  nlohmann::json meta = sc.to_json();
  meta["config_hash"] = run.hash;
  meta["regenerated"] = report.regenerated;
  write_json(run.dir / "synth.json", meta);
  std::cout << "generated " << ds.samples.size() << " images (" << report.regenerated << " redrawn)\n";
}

void cmd_train(const Run& run, bool resume) {
  const RunConfig& cfg = run.cfg;
  const Recipe& r = cfg.recipe;
  const Dataset ds = load_required(cfg.data, "data");
  const BackboneConfig bb = cfg.backbone_config(ds.num_classes);
  r.validate();

  // Everything is checked before the first epoch.
  ProgressiveSchedule sched;
  std::vector<BranchSpec> fused;
  switch (cfg.mode) {
    case TrainMode::baseline: break;
    case TrainMode::pl_single: {
      const auto specs = cfg.pl_branches();
      if (specs.size() != 1) throw std::invalid_argument("pl-single needs exactly one branch, got '" + cfg.branches + "'");
      sched = single_step(r, specs.front());
      sched.validate(bb, r.crop_side);
      break;
    }
    case TrainMode::implicit:
      sched = make_schedule(r, cfg.schedule);
      sched.multi_stage_first_step = cfg.multi_stage_first_step;
      sched.validate(bb, r.crop_side);
      break;
    case TrainMode::explicit_fusion:
      fused = cfg.fused_branches();
      validate_branches(fused, bb, r.crop_side);
      break;
  }

  const TrainingView view = ds.training_view();
  const fs::path ck = run.dir / "checkpoints";
  fs::create_directories(ck);
  TrainLog log;
  std::optional<PatchNetwork> warm = resume ? resume_from(run, ck / "warmup.ckpt", log) : std::nullopt;
  if (warm) {
    std::cout << "resumed warmup\n";
  } else {
    warm = warmup_model(bb, view, r, &log);
    save_step(run, ck / "warmup.ckpt", *warm, 0, log);
  }
  std::cout << "warmup: " << r.warmup_epochs << " epochs, final loss "
            << format_fixed(log.empty() ? 0.0 : log.back().mean_loss, 4) << "\n";

  std::optional<PatchNetwork> final_net;
  switch (cfg.mode) {
    case TrainMode::baseline:
      final_net = train_baseline(*warm, view, r, &log);
      break;
    case TrainMode::explicit_fusion:
      final_net = train_explicit(*warm, fused, view, r, &log);
      break;
    case TrainMode::pl_single:
    case TrainMode::implicit: {
      std::size_t done = 0;
      std::optional<PatchNetwork> start;
      for (std::size_t s = sched.steps.size(); resume && s >= 1 && !start; --s) {
        TrainLog step_log;
        if ((start = resume_from(run, ck / ("step_" + std::to_string(s) + ".ckpt"), step_log))) {
          done = s;
          log = step_log;
        }
      }
      if (done > 0) std::cout << "resumed after step " << done << "\n";
      auto sink = [&](std::size_t step, const PatchNetwork& net) {
        save_step(run, ck / ("step_" + std::to_string(step) + ".ckpt"), net, step, log);
        std::cout << "step " << step << " (" << sched.steps[step - 1].branch.stage << ":"
                  << sched.steps[step - 1].branch.grid << ") done\n";
      };
      final_net = done == sched.steps.size() ? std::move(*start)
                                             : train_progressive(done ? *start : *warm, sched, view, r, &log, sink, done);
      break;
    }
  }
  save_step(run, ck / "final.ckpt", *final_net, sched.steps.size(), log);
  write_log_csv(run.dir / "train.csv", log);
  std::cout << mode_name(cfg.mode) << ": final loss " << format_fixed(log.empty() ? 0.0 : log.back().mean_loss, 4)
            << "\n";
}

void cmd_cam(const Run& run) {
  const RunConfig& cfg = run.cfg;
  const PatchNetwork net = load_model(cfg.checkpoint);
  const Dataset ds = load_required(cfg.data, "data");
  const std::string ckpt_hash = [&] {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(hash_file(cfg.checkpoint)));
    return std::string(buf);
  }();
  fs::create_directories(run.dir / "cams");
  fs::create_directories(run.dir / "heatmaps");
  fs::create_directories(run.dir / "masks");
  for (const auto& s : ds.samples) {
    const CamStack stack = infer_cam(net, s.image, s.labels, cfg.scales);
    write_cam_file(run.dir / "cams" / (s.name + ".cam"), stack,
                   {{"config_hash", run.hash}, {"checkpoint_hash", ckpt_hash}, {"image", s.name}});
    write_cam_heatmap(run.dir / "heatmaps" / (s.name + ".png"), stack);
    write_label_png(run.dir / "masks" / (s.name + ".png"), threshold_to_mask(stack, cfg.tau).mask);
  }
  std::cout << "wrote CAMs for " << ds.samples.size() << " images (tau " << format_fixed(cfg.tau, 3) << ")\n";
}

fs::path cam_dir(const std::string& path) {
  if (path.empty()) throw std::invalid_argument("missing --cams");
  const fs::path p(path);
  if (fs::is_directory(p / "cams")) return p / "cams";
  if (fs::is_directory(p)) return p;
  throw DataError("CAM directory " + path + " not found");
}

std::vector<CamStack> load_cams(const fs::path& dir, const Dataset& ds) {
  std::vector<CamStack> cams;
  for (const auto& s : ds.samples) {
    const fs::path f = dir / (s.name + ".cam");
    if (!fs::is_regular_file(f)) throw DataError("no CAM file for " + s.name + " in " + dir.string());
    try {
      cams.push_back(read_cam_file(f));
    } catch (const std::runtime_error& e) {
      throw DataError(e.what());
    }
    const CamStack& c = cams.back();
    if (!c.maps.empty() && (c.height() != s.gt_mask.height || c.width() != s.gt_mask.width)) {
      throw DataError(f.string() + ": CAM grid differs from the mask size");
    }
  }
  return cams;
}

void cmd_eval(const Run& run) {
  const RunConfig& cfg = run.cfg;
  const Dataset ds = load_required(cfg.data, "data");
  ds.require_masks("eval");
  ConfusionMatrix cm(ds.num_classes + 1);
  if (!cfg.masks.empty()) {
    if (!fs::is_directory(cfg.masks)) throw DataError("mask directory " + cfg.masks + " not found");
    for (const auto& s : ds.samples) {
      const fs::path f = fs::path(cfg.masks) / (s.name + ".png");
      if (!fs::is_regular_file(f)) throw DataError("no predicted mask for " + s.name);
      cm.accumulate(read_label_png(f), s.gt_mask);
    }
  } else {
    const auto cams = load_cams(cam_dir(cfg.cams), ds);
    for (std::size_t i = 0; i < cams.size(); ++i) {
      const LabelImage& gt = ds.samples[i].gt_mask;
      LabelImage pred = threshold_to_mask(cams[i], cfg.tau).mask;
      if (cams[i].maps.empty()) pred = {gt.height, gt.width, std::vector<std::uint8_t>(gt.labels.size(), 0)};
      cm.accumulate(pred, gt);
    }
  }
  const IouReport rep = miou(cm);
  const ForegroundScore fg = foreground_score(cm);
  write_iou_csv(run.dir / "iou.csv", rep);
  write_json(run.dir / "summary.json", {{"config_hash", run.hash},
                                        {"miou", rep.mean},
                                        {"precision", fg.precision},
                                        {"recall", fg.recall},
                                        {"tau", cfg.masks.empty() ? nlohmann::json(cfg.tau) : nlohmann::json()}});
  std::cout << "mIoU " << format_fixed(rep.mean, 4) << " precision " << format_fixed(fg.precision, 4) << " recall "
            << format_fixed(fg.recall, 4) << "\n";
}

void cmd_sweep(const Run& run) {
  const RunConfig& cfg = run.cfg;
  const auto taus = cfg.thresholds();
  const Dataset ds = load_required(cfg.data, "data");
  ds.require_masks("sweep");
  const auto cams = load_cams(cam_dir(cfg.cams), ds);
  const SweepTable t = evaluate_cams(cams, ds, taus);
  write_sweep_csv(run.dir / "sweep.csv", t);
  write_sweep_svg(run.dir / "sweep.svg", t, "threshold sweep " + run.hash.substr(0, 12));
  const auto& b = t.best_row();
  std::cout << t.rows.size() << " thresholds, best tau " << format_fixed(b.tau, 3) << " mIoU "
            << format_fixed(b.miou, 4) << "\n";
}

void cmd_ablate(const Run& run) {
  const RunConfig& cfg = run.cfg;
  const Recipe& r = cfg.recipe;
  r.validate();
  const auto taus = cfg.thresholds();
  const Dataset train = load_required(cfg.data, "data");
  const Dataset eval = load_required(cfg.eval_data, "eval-data");
  eval.require_masks("ablate");
  if (eval.num_classes != train.num_classes) throw DataError("train and eval sets have different class counts");
  const BackboneConfig bb = cfg.backbone_config(train.num_classes);
  const auto grid = cfg.ablation_grid();
  for (const auto& spec : grid) single_step(r, spec).validate(bb, r.crop_side);

  const TrainingView view = train.training_view();
  const PatchNetwork warm = warmup_model(bb, view, r);
  struct Row {
    BranchSpec spec;
    SweepRow best;
  };
  std::vector<Row> rows;
  for (const auto& spec : grid) {
    const PatchNetwork net = train_progressive(warm, single_step(r, spec), view, r);
    const SweepTable t = evaluate_cams(infer_cams(net, eval, cfg.scales), eval, taus);
    write_sweep_csv(run.dir / ("sweep_s" + std::to_string(spec.stage) + "_k" + std::to_string(spec.grid) + ".csv"), t);
    rows.push_back({spec, t.best_row()});
    std::cout << "stage " << spec.stage << " K=" << spec.grid << ": mIoU " << format_fixed(t.best_row().miou, 4)
              << "\n";
  }
  std::stable_sort(rows.begin(), rows.end(), [](const Row& a, const Row& b) { return a.best.miou > b.best.miou; });
  std::ofstream os(run.dir / "ablation.csv", std::ios::binary);
  os << "rank,stage,grid,best_tau,precision,recall,miou\n";
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& b = rows[i].best;
    os << i + 1 << ',' << rows[i].spec.stage << ',' << rows[i].spec.grid << ',' << format_fixed(b.tau, 4) << ','
       << format_fixed(b.precision) << ',' << format_fixed(b.recall) << ',' << format_fixed(b.miou) << '\n';
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Patch-learning CAM toolkit: synthetic data, training, CAM export and evaluation"};
  app.require_subcommand(1);

  std::string config_path;
  std::string out_root;
  std::string run_dir;
  bool force = false;
  bool resume = false;
  std::vector<std::pair<std::string, std::string>> overrides;
  std::vector<std::string> sets;

  auto key_option = [&](CLI::App* sub, const std::string& flag, const std::string& key, const std::string& help) {
    sub->add_option_function<std::string>(flag, [&overrides, key](const std::string& v) { overrides.emplace_back(key, v); },
                                          help);
  };
  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "flat key = value config file");
    sub->add_option("--out", out_root, std::string("output root (default $") + kRootEnv + " or ./runs)");
    sub->add_option("--run-dir", run_dir, "exact run directory instead of <out>/<command>-<time>-<hash>");
    sub->add_flag("--force", force, "write into an existing non-empty run directory");
    sub->add_option("--set", sets, "extra key=value override (repeatable)");
    key_option(sub, "--seed", "seed", "random seed");
  };

  auto* gen = app.add_subcommand("gen", "generate the synthetic shapes dataset");
  common(gen);
  key_option(gen, "--n-images", "n_images", "number of images");
  key_option(gen, "--image-side", "image_side", "image side in pixels");
  key_option(gen, "--classes", "n_classes", "number of classes");

  auto* train = app.add_subcommand("train", "train a classifier (baseline, pl-single, implicit, explicit)");
  common(train);
  key_option(train, "--data", "data", "dataset directory");
  key_option(train, "--mode", "mode", "baseline | pl-single | implicit | explicit");
  key_option(train, "--schedule", "schedule", "implicit schedule, e.g. 2:2,3:4,4:6");
  key_option(train, "--branches", "branches", "pl-single branch, e.g. 4:6");
  key_option(train, "--explicit-branches", "explicit_branches", "explicit branches, e.g. 2:2,3:4,4:6");
  train->add_flag("--resume", resume, "continue from checkpoints in --run-dir written by the same config");

  auto* cam = app.add_subcommand("cam", "export CAMs, heatmaps and pseudo-masks");
  common(cam);
  key_option(cam, "--checkpoint", "checkpoint", "checkpoint file");
  key_option(cam, "--data", "data", "dataset directory");
  key_option(cam, "--scales", "scales", "comma-separated inference scales");
  key_option(cam, "--tau", "tau", "pseudo-mask threshold");

  auto* eval = app.add_subcommand("eval", "mIoU of CAM pseudo-masks or predicted masks");
  common(eval);
  key_option(eval, "--data", "data", "dataset directory with masks");
  key_option(eval, "--cams", "cams", "CAM directory (or cam run directory)");
  key_option(eval, "--masks", "masks", "directory of predicted label PNGs (instead of --cams)");
  key_option(eval, "--tau", "tau", "threshold");

  auto* sweep = app.add_subcommand("sweep", "precision / recall / mIoU over a threshold range");
  common(sweep);
  key_option(sweep, "--data", "data", "dataset directory with masks");
  key_option(sweep, "--cams", "cams", "CAM directory (or cam run directory)");

  auto* ablate = app.add_subcommand("ablate", "stage x K grid of single patch-learning runs");
  common(ablate);
  key_option(ablate, "--data", "data", "training dataset directory");
  key_option(ablate, "--eval-data", "eval_data", "evaluation dataset directory with masks");
  key_option(ablate, "--stages", "ablate_stages", "destruct stages, e.g. 3 or 2,3,4");
  key_option(ablate, "--grids", "ablate_grids", "grid sizes, e.g. 2-8");
  key_option(ablate, "--scales", "scales", "comma-separated inference scales");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfigError;
  }

  CLI::App* sub = app.get_subcommands().front();
  const std::string command = sub->get_name();
  int stage = kConfigError;
  fs::path opened;
  // A run that failed before writing anything leaves no directory behind.
  auto discard_empty = [&] {
    if (opened.empty()) return;
    std::error_code ec;
    auto it = fs::directory_iterator(opened, ec);
    if (ec) return;
    for (const auto& e : it) {
      if (e.path().filename() != "run.json") return;
    }
    fs::remove_all(opened, ec);
  };
  try {
    RunConfig cfg;
    if (!config_path.empty()) apply_config_file(cfg, config_path);
    for (const auto& s : sets) {
      const auto eq = s.find('=');
      if (eq == std::string::npos) throw std::invalid_argument("--set expects key=value, got '" + s + "'");
      cfg.set(s.substr(0, eq), s.substr(eq + 1));
    }
    for (const auto& [k, v] : overrides) cfg.set(k, v);
    cfg.recipe.validate();
    if (resume && run_dir.empty()) throw std::invalid_argument("--resume needs --run-dir");

    const Run run = open_run(command, cfg, out_root, run_dir, force, resume);
    opened = run.dir;
    stage = kRuntimeError;
    std::cout << command << " config " << run.hash << "\n";
    if (command == "gen") cmd_gen(run);
    if (command == "train") cmd_train(run, resume);
    if (command == "cam") cmd_cam(run);
    if (command == "eval") cmd_eval(run);
    if (command == "sweep") cmd_sweep(run);
    if (command == "ablate") cmd_ablate(run);
    close_run(run);
    return kOk;
  } catch (const DataError& e) {
    discard_empty();
    std::cerr << "ppl " << command << ": data error: " << e.what() << "\n";
    return kDataError;
  } catch (const std::invalid_argument& e) {
    discard_empty();
    std::cerr << "ppl " << command << ": config error: " << e.what() << "\n";
    return kConfigError;
  } catch (const std::exception& e) {
    discard_empty();
    std::cerr << "ppl " << command << ": " << (stage == kConfigError ? "config error: " : "error: ") << e.what()
              << "\n";
    return stage;
  }
}
