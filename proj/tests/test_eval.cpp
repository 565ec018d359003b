#include <algorithm>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "helpers.hpp"
#include "ppl/eval.hpp"

using namespace ppl;
namespace fs = std::filesystem;

namespace {

LabelImage mask(std::size_t h, std::size_t w, std::vector<std::uint8_t> v) { return {h, w, std::move(v)}; }

LabelImage random_mask(Rng& rng, std::size_t labels, double ignore = 0.0) {
  LabelImage m{8, 8, std::vector<std::uint8_t>(64)};
  for (auto& v : m.labels) {
    v = rng.bernoulli(ignore) ? kIgnoreLabel : static_cast<std::uint8_t>(rng.below(labels));
  }
  return m;
}

// Pooled per-label pixel sets: |pred ∩ gt| / |pred ∪ gt|, averaged over labels
// with a non-empty union.
double naive_miou(const std::vector<LabelImage>& preds, const std::vector<LabelImage>& gts, std::size_t labels) {
  double sum = 0;
  int used = 0;
  for (std::size_t c = 0; c < labels; ++c) {
    long inter = 0, uni = 0;
    for (std::size_t i = 0; i < gts.size(); ++i) {
      for (std::size_t p = 0; p < gts[i].labels.size(); ++p) {
        if (gts[i].labels[p] == kIgnoreLabel) continue;
        const bool in_p = preds[i].labels[p] == c, in_g = gts[i].labels[p] == c;
        inter += in_p && in_g;
        uni += in_p || in_g;
      }
    }
    if (uni == 0) continue;
    sum += static_cast<double>(inter) / static_cast<double>(uni);
    ++used;
  }
  return sum / used;
}

CamStack random_stack(Rng& rng, std::size_t classes) {
  CamStack s;
  for (std::size_t c = 0; c < classes; ++c) {
    if (!rng.bernoulli(0.6) && !(c + 1 == classes && s.classes.empty())) continue;
    s.classes.push_back(c);
    Map2d m(8, 8);
    for (auto& v : m.values) v = static_cast<Real>(rng.uniform());
    s.maps.push_back(m);
  }
  s.normalized = true;
  return s;
}

}  // namespace

TEST_SUITE("eval") {

TEST_CASE("2x2 fixture") {
  ConfusionMatrix cm(2);
  cm.accumulate(mask(2, 2, {0, 1, 1, 1}), mask(2, 2, {0, 0, 1, 1}));
  CHECK(cm.at(0, 0) == 1);
  CHECK(cm.at(0, 1) == 1);
  CHECK(cm.at(1, 1) == 2);
  CHECK(cm.at(1, 0) == 0);
  CHECK(cm.total() == 4);
  const IouReport r = miou(cm);
  CHECK(*r.per_class[0] == doctest::Approx(0.5));
  CHECK(*r.per_class[1] == doctest::Approx(2.0 / 3.0));
  CHECK(r.mean == doctest::Approx(7.0 / 12.0));
}

TEST_CASE("basic confusion cases") {
  SUBCASE("perfect prediction") {
    ConfusionMatrix cm(4);
    const LabelImage m = mask(2, 3, {0, 1, 2, 3, 3, 0});
    cm.accumulate(m, m);
    for (std::size_t g = 0; g < 4; ++g)
      for (std::size_t p = 0; p < 4; ++p)
        if (g != p) CHECK(cm.at(g, p) == 0);
    CHECK(miou(cm).mean == 1.0);
    const auto fg = foreground_score(cm);
    CHECK(fg.precision == 1.0);
    CHECK(fg.recall == 1.0);
  }
  SUBCASE("all background against all class 1") {
    ConfusionMatrix cm(3);
    cm.accumulate(mask(2, 2, {0, 0, 0, 0}), mask(2, 2, {1, 1, 1, 1}));
    CHECK(cm.at(1, 0) == 4);
    CHECK(cm.total() == 4);
    const IouReport r = miou(cm);
    CHECK(*r.per_class[0] == 0);
    CHECK(*r.per_class[1] == 0);
    CHECK_FALSE(r.per_class[2].has_value());
    CHECK(r.mean == 0);
    const auto fg = foreground_score(cm);
    CHECK(fg.precision == 1.0);  // nothing predicted
    CHECK(fg.recall == 0.0);
  }
  SUBCASE("wrong foreground class counts against precision and recall") {
    ConfusionMatrix cm(3);
    cm.accumulate(mask(1, 4, {2, 2, 1, 0}), mask(1, 4, {1, 1, 1, 0}));
    const auto fg = foreground_score(cm);
    CHECK(fg.precision == doctest::Approx(1.0 / 3.0));
    CHECK(fg.recall == doctest::Approx(1.0 / 3.0));
  }
  SUBCASE("ignore pixels are skipped") {
    ConfusionMatrix cm(2);
    cm.accumulate(mask(1, 3, {1, 1, 0}), mask(1, 3, {255, 1, 255}));
    CHECK(cm.total() == 1);
    CHECK(cm.at(1, 1) == 1);
  }
  SUBCASE("errors") {
    ConfusionMatrix cm(2);
    CHECK_THROWS_AS(miou(cm), std::invalid_argument);
    CHECK_THROWS_AS(cm.accumulate(mask(1, 2, {0, 0}), mask(2, 1, {0, 0})), ShapeError);
    CHECK_THROWS_AS(cm.accumulate(mask(1, 2, {0, 2}), mask(1, 2, {0, 0})), std::invalid_argument);
    CHECK_THROWS_AS(ConfusionMatrix(1), std::invalid_argument);
    CHECK_THROWS_AS(cm.merge(ConfusionMatrix(3)), std::invalid_argument);
  }
}

TEST_CASE("mIoU matches a per-pixel oracle") {
  Rng rng(31);
  for (int t = 0; t < 50; ++t) {
    const std::size_t labels = 2 + rng.below(5);
    const LabelImage pred = random_mask(rng, labels);
    const LabelImage gt = random_mask(rng, labels, t % 2 ? 0.1 : 0.0);
    ConfusionMatrix cm(labels);
    cm.accumulate(pred, gt);
    CHECK(miou(cm).mean == naive_miou({pred}, {gt}, labels));
  }
  const double fixture = naive_miou({mask(2, 2, {0, 1, 1, 1})}, {mask(2, 2, {0, 0, 1, 1})}, 2);
  CHECK(fixture == doctest::Approx(7.0 / 12.0));
}

TEST_CASE("accumulation order does not matter") {
  Rng rng(32);
  std::vector<LabelImage> preds, gts;
  for (int i = 0; i < 10; ++i) {
    preds.push_back(random_mask(rng, 4));
    gts.push_back(random_mask(rng, 4, 0.05));
  }
  ConfusionMatrix fwd(4), rev(4), halves(4), second(4);
  for (std::size_t i = 0; i < 10; ++i) fwd.accumulate(preds[i], gts[i]);
  for (std::size_t i = 10; i-- > 0;) rev.accumulate(preds[i], gts[i]);
  for (std::size_t i = 0; i < 5; ++i) halves.accumulate(preds[i], gts[i]);
  for (std::size_t i = 5; i < 10; ++i) second.accumulate(preds[i], gts[i]);
  halves.merge(second);
  CHECK(fwd == rev);
  CHECK(fwd == halves);
  CHECK(miou(fwd).mean == naive_miou(preds, gts, 4));
}

TEST_CASE("threshold sweep") {
  Rng rng(33);
  std::vector<CamStack> cams;
  std::vector<LabelImage> gts;
  for (int i = 0; i < 6; ++i) {
    cams.push_back(random_stack(rng, 3));
    gts.push_back(random_mask(rng, 4, 0.05));
  }
  const auto taus = threshold_range(0.05, 0.95, 0.05);
  CHECK(taus.size() == 19);
  CHECK(taus.front() == 0.05);
  CHECK(taus.back() == 0.95);
  const SweepTable t = pr_sweep(cams, gts, taus, 3);
  REQUIRE(t.rows.size() == taus.size());
  for (std::size_t i = 1; i < t.rows.size(); ++i) {
    CHECK(t.rows[i].recall <= t.rows[i - 1].recall);
    CHECK(t.rows[i].tau > t.rows[i - 1].tau);
  }
  for (const auto& r : t.rows) CHECK(r.miou <= t.best_row().miou);
  for (std::size_t i = 0; i < t.best; ++i) CHECK(t.rows[i].miou < t.best_row().miou);

  SUBCASE("a single tau equals direct scoring") {
    const SweepTable one = pr_sweep(cams, gts, {0.4}, 3);
    ConfusionMatrix cm(4);
    for (std::size_t i = 0; i < cams.size(); ++i) cm.accumulate(threshold_to_mask(cams[i], 0.4).mask, gts[i]);
    REQUIRE(one.rows.size() == 1);
    CHECK(one.rows[0].miou == miou(cm).mean);
    CHECK(one.rows[0].precision == foreground_score(cm).precision);
    CHECK(one.rows[0].recall == foreground_score(cm).recall);
  }
  SUBCASE("bad inputs") {
    CHECK_THROWS_AS(pr_sweep(cams, {}, taus, 3), std::invalid_argument);
    CHECK_THROWS_AS(pr_sweep({}, {}, taus, 3), std::invalid_argument);
    CHECK_THROWS_AS(pr_sweep(cams, gts, {0.3, 0.2}, 3), std::invalid_argument);
    CHECK_THROWS_AS(pr_sweep(cams, gts, {0.0, 0.2}, 3), std::invalid_argument);
    CHECK_THROWS_AS(pr_sweep(cams, gts, {0.2, 1.0}, 3), std::invalid_argument);
    CHECK_THROWS_AS(threshold_range(0.5, 0.1, 0.1), std::invalid_argument);
  }
}

TEST_CASE("sweep csv round trip") {
  SweepTable t;
  t.rows = {{0.1, 0.5, 0.9, 0.25}, {0.2, 0.625, 0.75, 0.5}, {0.3, 0.75, 0.5, 0.375}};
  t.best = 1;
  const fs::path dir = fs::temp_directory_path() / "ppl_test_eval";
  fs::create_directories(dir);
  write_sweep_csv(dir / "s.csv", t);
  std::ifstream is(dir / "s.csv");
  std::string first, second;
  std::getline(is, first);
  std::getline(is, second);
  CHECK(first == "# ppl-sweep v1");
  CHECK(second == "tau,precision,recall,miou");
  const SweepTable back = read_sweep_csv(dir / "s.csv");
  REQUIRE(back.rows.size() == 3);
  CHECK(back.best == 1);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(back.rows[i].tau == doctest::Approx(t.rows[i].tau));
    CHECK(back.rows[i].miou == doctest::Approx(t.rows[i].miou));
  }
  {
    std::ofstream os(dir / "bad.csv");
    os << "# ppl-sweep v9\ntau,precision,recall,miou\n";
  }
  CHECK_THROWS(read_sweep_csv(dir / "bad.csv"));
  write_sweep_svg(dir / "s.svg", t, "demo");
  std::ifstream svg(dir / "s.svg");
  std::string head;
  std::getline(svg, head);
  CHECK(head.find("<svg") != std::string::npos);

  IouReport r;
  r.per_class = {0.5, std::nullopt, 1.0};
  r.mean = 0.75;
  write_iou_csv(dir / "iou.csv", r);
  CHECK(fs::file_size(dir / "iou.csv") > 0);
  fs::remove_all(dir);
}

}
