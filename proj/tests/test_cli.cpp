#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "run_config.hpp"

using namespace ppl;
using namespace ppl::cli;
namespace fs = std::filesystem;

namespace {

fs::path write_file(const std::string& name, const std::string& text) {
  const fs::path p = fs::temp_directory_path() / name;
  std::ofstream(p) << text;
  return p;
}

std::string error_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const std::invalid_argument& e) {
    return e.what();
  }
  return {};
}

}  // namespace

TEST_SUITE("cli") {

TEST_CASE("defaults, file, then flags") {
  RunConfig cfg;
  CHECK(cfg.mode == TrainMode::implicit);
  CHECK(cfg.tau == doctest::Approx(0.2));
  const fs::path f = write_file("ppl_cfg_a.cfg", "# comment\nlr = 0.05\n\nmode = explicit  # trailing\nseed=7\n");
  apply_config_file(cfg, f);
  CHECK(cfg.recipe.lr == doctest::Approx(0.05));
  CHECK(cfg.mode == TrainMode::explicit_fusion);
  CHECK(cfg.recipe.seed == 7);
  cfg.set("seed", "9");
  CHECK(cfg.recipe.seed == 9);
  CHECK(cfg.recipe.lr == doctest::Approx(0.05));
  fs::remove(f);
}

TEST_CASE("config errors name the key and line") {
  RunConfig cfg;
  CHECK(error_of([&] { cfg.set("nope", "1"); }).find("'nope'") != std::string::npos);
  CHECK(error_of([&] { cfg.set("lr", "fast"); }).find("'lr'") != std::string::npos);
  CHECK(error_of([&] { cfg.set("tau", "1.5"); }).find("(0,1)") != std::string::npos);
  CHECK_THROWS_AS(cfg.set("augment", "maybe"), std::invalid_argument);
  CHECK_THROWS_AS(cfg.set("schedule", "2:x"), std::invalid_argument);
  CHECK_THROWS_AS(cfg.set("scales", "1,-2"), std::invalid_argument);
  const fs::path f = write_file("ppl_cfg_b.cfg", "lr = 0.1\nbatch_size = many\n");
  const std::string msg = error_of([&] { apply_config_file(cfg, f); });
  CHECK(msg.find("ppl_cfg_b.cfg:2:") != std::string::npos);
  const fs::path g = write_file("ppl_cfg_c.cfg", "lr 0.1\n");
  CHECK(error_of([&] { apply_config_file(cfg, g); }).find(":1:") != std::string::npos);
  fs::remove(f);
  fs::remove(g);
}

TEST_CASE("every key round-trips through to_json") {
  RunConfig cfg;
  const auto j = cfg.to_json();
  for (const auto& k : RunConfig::keys()) CHECK_MESSAGE(j.contains(k), k);
}

TEST_CASE("hash follows command and config") {
  RunConfig a, b;
  CHECK(config_hash("train", a) == config_hash("train", b));
  CHECK(config_hash("train", a) != config_hash("cam", a));
  b.set("lr", "0.2");
  CHECK(config_hash("train", a) != config_hash("train", b));
}

TEST_CASE("lists and grids") {
  CHECK(parse_index_list("2-8").size() == 7);
  CHECK(parse_index_list("2,4,6") == std::vector<std::size_t>{2, 4, 6});
  CHECK_THROWS_AS(parse_index_list("5-2"), std::invalid_argument);
  CHECK(parse_scales("0.5, 1,2") == std::vector<double>{0.5, 1.0, 2.0});
  RunConfig cfg;
  const auto grid = cfg.ablation_grid();
  REQUIRE(grid.size() == 7);
  CHECK(grid.front().stage == 3);
  CHECK(grid.front().grid == 2);
  CHECK(grid.back().grid == 8);
  CHECK(cfg.thresholds().size() == 19);
}

}
