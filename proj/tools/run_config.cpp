#include "run_config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

#include "ppl/hash.hpp"

namespace ppl::cli {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

[[noreturn]] void bad(const std::string& key, const std::string& value, const std::string& why) {
  throw std::invalid_argument("config key '" + key + "': value '" + value + "' " + why);
}

double to_double(const std::string& key, const std::string& v) {
  double out = 0;
  const auto r = std::from_chars(v.data(), v.data() + v.size(), out);
  if (r.ec != std::errc() || r.ptr != v.data() + v.size()) bad(key, v, "is not a number");
  return out;
}

std::size_t to_size(const std::string& key, const std::string& v) {
  std::size_t out = 0;
  const auto r = std::from_chars(v.data(), v.data() + v.size(), out);
  if (r.ec != std::errc() || r.ptr != v.data() + v.size()) bad(key, v, "is not a non-negative integer");
  return out;
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "1" || v == "true" || v == "yes" || v == "on") return true;
  if (v == "0" || v == "false" || v == "no" || v == "off") return false;
  bad(key, v, "is not a boolean");
}

using Setter = std::function<void(RunConfig&, const std::string&, const std::string&)>;

const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> table = {
      {"seed", [](RunConfig& c, const auto& k, const auto& v) { c.recipe.seed = to_size(k, v); }},
      {"mode", [](RunConfig& c, const auto&, const auto& v) { c.mode = parse_mode(v); }},
      {"branches", [](RunConfig& c, const auto&, const auto& v) { parse_branches(v), c.branches = v; }},
      {"explicit_branches",
       [](RunConfig& c, const auto&, const auto& v) { parse_branches(v), c.explicit_branches = v; }},
      {"schedule", [](RunConfig& c, const auto&, const auto& v) { parse_branches(v), c.schedule = v; }},
      {"multi_stage_first_step",
       [](RunConfig& c, const auto& k, const auto& v) { c.multi_stage_first_step = to_bool(k, v); }},
      {"backbone",
       [](RunConfig& c, const auto& k, const auto& v) {
         if (v != "tiny" && v != "wide") bad(k, v, "must be tiny or wide");
         c.backbone = v;
       }},
      {"warmup_epochs", [](RunConfig& c, const auto& k, const auto& v) { c.recipe.warmup_epochs = to_size(k, v); }},
      {"step_epochs", [](RunConfig& c, const auto& k, const auto& v) { c.recipe.step_epochs = to_size(k, v); }},
      {"batch_size", [](RunConfig& c, const auto& k, const auto& v) { c.recipe.batch_size = to_size(k, v); }},
      {"crop_side", [](RunConfig& c, const auto& k, const auto& v) { c.recipe.crop_side = to_size(k, v); }},
      {"warmup_lr", [](RunConfig& c, const auto& k, const auto& v) { c.recipe.warmup_lr = to_double(k, v); }},
      {"lr", [](RunConfig& c, const auto& k, const auto& v) { c.recipe.lr = to_double(k, v); }},
      {"finetune_lr", [](RunConfig& c, const auto& k, const auto& v) { c.recipe.finetune_lr = to_double(k, v); }},
      {"momentum", [](RunConfig& c, const auto& k, const auto& v) { c.recipe.momentum = to_double(k, v); }},
      {"weight_decay", [](RunConfig& c, const auto& k, const auto& v) { c.recipe.weight_decay = to_double(k, v); }},
      {"boost_new_layers",
       [](RunConfig& c, const auto& k, const auto& v) { c.recipe.boost_new_layers = to_bool(k, v); }},
      {"augment", [](RunConfig& c, const auto& k, const auto& v) { c.recipe.augment = to_bool(k, v); }},
      {"tau",
       [](RunConfig& c, const auto& k, const auto& v) {
         const double t = to_double(k, v);
         if (!(t > 0 && t < 1)) bad(k, v, "must lie in (0,1)");
         c.tau = t;
       }},
      {"scales", [](RunConfig& c, const auto&, const auto& v) { c.scales = parse_scales(v); }},
      {"tau_min", [](RunConfig& c, const auto& k, const auto& v) { c.tau_min = to_double(k, v); }},
      {"tau_max", [](RunConfig& c, const auto& k, const auto& v) { c.tau_max = to_double(k, v); }},
      {"tau_step", [](RunConfig& c, const auto& k, const auto& v) { c.tau_step = to_double(k, v); }},
      {"n_images", [](RunConfig& c, const auto& k, const auto& v) { c.n_images = to_size(k, v); }},
      {"image_side", [](RunConfig& c, const auto& k, const auto& v) { c.image_side = to_size(k, v); }},
      {"n_classes", [](RunConfig& c, const auto& k, const auto& v) { c.n_classes = to_size(k, v); }},
      {"data", [](RunConfig& c, const auto&, const auto& v) { c.data = v; }},
      {"eval_data", [](RunConfig& c, const auto&, const auto& v) { c.eval_data = v; }},
      {"checkpoint", [](RunConfig& c, const auto&, const auto& v) { c.checkpoint = v; }},
      {"cams", [](RunConfig& c, const auto&, const auto& v) { c.cams = v; }},
      {"masks", [](RunConfig& c, const auto&, const auto& v) { c.masks = v; }},
      {"ablate_stages", [](RunConfig& c, const auto&, const auto& v) { parse_index_list(v), c.ablate_stages = v; }},
      {"ablate_grids", [](RunConfig& c, const auto&, const auto& v) { parse_index_list(v), c.ablate_grids = v; }},
  };
  return table;
}

}  // namespace

void RunConfig::set(const std::string& key, const std::string& value) {
  const auto it = setters().find(key);
  if (it == setters().end()) throw std::invalid_argument("unknown config key '" + key + "'");
  try {
    it->second(*this, key, value);
  } catch (const std::invalid_argument& e) {
    const std::string msg = e.what();
    if (msg.rfind("config key", 0) == 0) throw;
    throw std::invalid_argument("config key '" + key + "': " + msg);
  }
}

const std::vector<std::string>& RunConfig::keys() {
  static const std::vector<std::string> k = [] {
    std::vector<std::string> out;
    for (const auto& [name, fn] : setters()) out.push_back(name);
    return out;
  }();
  return k;
}

nlohmann::json RunConfig::to_json() const {
  nlohmann::json j = recipe.to_json();
  j["mode"] = mode_name(mode);
  j["branches"] = branches;
  j["explicit_branches"] = explicit_branches;
  j["schedule"] = schedule;
  j["multi_stage_first_step"] = multi_stage_first_step;
  j["backbone"] = backbone;
  j["tau"] = tau;
  j["scales"] = scales;
  j["tau_min"] = tau_min;
  j["tau_max"] = tau_max;
  j["tau_step"] = tau_step;
  j["n_images"] = n_images;
  j["image_side"] = image_side;
  j["n_classes"] = n_classes;
  j["data"] = data;
  j["eval_data"] = eval_data;
  j["checkpoint"] = checkpoint;
  j["cams"] = cams;
  j["masks"] = masks;
  j["ablate_stages"] = ablate_stages;
  j["ablate_grids"] = ablate_grids;
  return j;
}

std::vector<BranchSpec> RunConfig::pl_branches() const { return parse_branches(branches); }
std::vector<BranchSpec> RunConfig::fused_branches() const { return parse_branches(explicit_branches); }

BackboneConfig RunConfig::backbone_config(std::size_t classes) const {
  return backbone == "wide" ? BackboneConfig::wide(classes) : BackboneConfig::tiny(classes);
}

std::vector<double> RunConfig::thresholds() const {
  auto t = threshold_range(tau_min, tau_max, tau_step);
  for (double v : t) {
    if (!(v > 0 && v < 1)) throw std::invalid_argument("sweep thresholds must lie in (0,1)");
  }
  return t;
}

std::vector<BranchSpec> RunConfig::ablation_grid() const {
  std::vector<BranchSpec> out;
  for (auto s : parse_index_list(ablate_stages)) {
    for (auto k : parse_index_list(ablate_grids)) out.push_back({static_cast<int>(s), k});
  }
  return out;
}

void apply_config_file(RunConfig& cfg, const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot read config file " + path.string());
  std::string line;
  std::size_t no = 0;
  while (std::getline(in, line)) {
    ++no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    const std::string where = path.string() + ":" + std::to_string(no) + ": ";
    if (eq == std::string::npos) throw std::invalid_argument(where + "expected key = value");
    try {
      cfg.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    } catch (const std::invalid_argument& e) {
      throw std::invalid_argument(where + e.what());
    }
  }
}

std::vector<double> parse_scales(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const double v = to_double("scales", trim(item));
    if (!(v > 0)) bad("scales", text, "must be positive");
    out.push_back(v);
  }
  if (out.empty()) bad("scales", text, "is empty");
  return out;
}

std::vector<std::size_t> parse_index_list(const std::string& text) {
  std::vector<std::size_t> out;
  const auto dash = text.find('-');
  if (dash != std::string::npos) {
    const auto lo = to_size("range", trim(text.substr(0, dash)));
    const auto hi = to_size("range", trim(text.substr(dash + 1)));
    if (lo > hi) bad("range", text, "is empty");
    for (auto i = lo; i <= hi; ++i) out.push_back(i);
    return out;
  }
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(to_size("list", trim(item)));
  if (out.empty()) bad("list", text, "is empty");
  return out;
}

std::string config_hash(const std::string& command, const RunConfig& cfg) {
  return hash_hex(command + "\n" + cfg.to_json().dump());
}

}  // namespace ppl::cli
