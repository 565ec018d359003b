#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"
#include "ppl/pipeline.hpp"

namespace ppl::cli {

/// Exit codes of the command-line tool.
enum ExitCode : int { kOk = 0, kConfigError = 2, kDataError = 3, kRuntimeError = 4 };

/// Everything a command may read. Defaults are overridden by a flat
/// "key = value" file, which is overridden by flags.
struct RunConfig {
  Recipe recipe;
  TrainMode mode = TrainMode::implicit;
  std::string branches = "4:6";  // pl-single uses the first, explicit uses all
  std::string explicit_branches = "2:2,3:4,4:6";
  std::string schedule = "2:2,3:4,4:6";
  bool multi_stage_first_step = false;
  std::string backbone = "tiny";

  double tau = kDefaultTau;
  std::vector<double> scales = kDefaultScales;
  double tau_min = 0.05;
  double tau_max = 0.95;
  double tau_step = 0.05;

  std::size_t n_images = 200;
  std::size_t image_side = 96;
  std::size_t n_classes = 6;

  std::string data;
  std::string eval_data;
  std::string checkpoint;
  std::string cams;
  std::string masks;

  std::string ablate_stages = "3";
  std::string ablate_grids = "2-8";

  /// Sets one key from its text form; throws std::invalid_argument naming the
  /// key on unknown keys or malformed values.
  void set(const std::string& key, const std::string& value);
  nlohmann::json to_json() const;
  static const std::vector<std::string>& keys();

  std::vector<BranchSpec> pl_branches() const;
  std::vector<BranchSpec> fused_branches() const;
  BackboneConfig backbone_config(std::size_t classes) const;
  std::vector<double> thresholds() const;
  /// Branches of the ablation grid in (stage, K) order.
  std::vector<BranchSpec> ablation_grid() const;
};

/// Applies "key = value" lines. '#' starts a comment; blank lines are skipped.
/// Errors name the file and line.
void apply_config_file(RunConfig& cfg, const std::filesystem::path& path);

std::vector<double> parse_scales(const std::string& text);
/// "2-8" or "2,4,6".
std::vector<std::size_t> parse_index_list(const std::string& text);

/// Stable hash of the command name and the effective configuration.
std::string config_hash(const std::string& command, const RunConfig& cfg);

}  // namespace ppl::cli
