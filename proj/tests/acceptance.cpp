// Acceptance run: one PASS/FAIL line per criterion. The exit status follows
// the contract criteria (1-5, 8). The benchmark outcome (6) and the tau
// stability check (7) are empirical results: printed as measured, never
// turned into a process failure.

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "ppl/hash.hpp"
#include "ppl/ops.hpp"
#include "ppl/pipeline.hpp"

using namespace ppl;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(double v, int digits) { return format_fixed(v, digits); }

struct Verdict {
  bool hard = true;   // false: a miss is printed as a reported divergence
  bool gate = true;   // counts toward the exit status
  bool pass = false;
  std::string detail;
};

void report(int id, const Verdict& v) {
  const char* tag = v.pass ? "PASS" : (v.hard ? "FAIL" : "DIVERGENCE (reported)");
  std::cout << "criterion " << id << ": " << tag << "  " << v.detail << std::endl;
}

// Runs a doctest binary with a test-case filter, output captured to `log`.
bool run_suite(const std::string& binary, const std::string& filter, const fs::path& log) {
  std::string cmd = "\"" + binary + "\"";
  if (!filter.empty()) cmd += " \"--test-case=" + filter + "\"";
  cmd += " > \"" + log.string() + "\" 2>&1";
  return std::system(cmd.c_str()) == 0;
}

Verdict suite_criterion(const std::string& binary, const std::string& filter, const fs::path& log,
                        double budget_s, const std::string& what) {
  const auto t0 = Clock::now();
  const bool ok = run_suite(binary, filter, log);
  const double t = seconds_since(t0);
  Verdict v;
  v.pass = ok && t < budget_s;
  v.detail = what + (ok ? " passed" : " failed (see " + log.string() + ")") + ", " + fmt(t, 1) + " s (limit " +
             fmt(budget_s, 0) + " s)";
  return v;
}

std::string prefix_hash(PatchNetwork& net, const std::string& prefix) {
  Fnv1a h;
  for (Parameter* p : net.parameters()) {
    if (p->name.rfind(prefix, 0) != 0) continue;
    h.update(p->name);
    const auto d = p->value.data();
    h.update(std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>(d.data()), d.size_bytes()));
  }
  return h.hex();
}

double abs_grad(const std::vector<Parameter*>& params) {
  double s = 0;
  for (const Parameter* p : params) {
    for (Real g : p->value.grad()) s += std::abs(static_cast<double>(g));
  }
  return s;
}

// Freeze and detach contracts on the default implicit schedule and the
// default explicit branch set, at the default crop size.
Verdict freeze_detach(const Recipe& base) {
  const auto t0 = Clock::now();
  SynthConfig sc;
  sc.seed = 77;
  sc.n_images = 8;
  sc.n_classes = 6;
  sc.image_side = base.crop_side;
  const Dataset ds = generate(sc);
  const TrainingView view = ds.training_view();
  Recipe r = base;
  r.warmup_epochs = 1;
  r.step_epochs = 1;
  r.batch_size = 4;
  const BackboneConfig bb = BackboneConfig::tiny(sc.n_classes);
  const PatchNetwork warm = warmup_model(bb, view, r);

  const ProgressiveSchedule sched = make_schedule(r, BenchmarkConfig{}.schedule);
  sched.validate(bb, r.crop_side);
  const char* blocks[] = {"stem.", "stage1.", "stage2.", "stage3.", "stage4."};
  std::vector<PatchNetwork> models;
  models.push_back(clone_network(warm));
  train_progressive(warm, sched, view, r, nullptr,
                    [&](std::size_t, const PatchNetwork& net) { models.push_back(clone_network(net)); });
  std::size_t checked = 0, violations = 0;
  for (std::size_t s = 2; s < models.size(); ++s) {
    const int stage = sched.steps[s - 1].branch.stage;
    for (int b = 0; b < stage; ++b) {
      ++checked;
      if (prefix_hash(models[s], blocks[b]) != prefix_hash(models[s - 1], blocks[b])) ++violations;
    }
  }

  const auto specs = BenchmarkConfig{}.explicit_branches;
  PatchNetwork net = attach_branches(warm, specs, true, 5);
  const Tensor x = ds.samples[0].image.reshaped({1, 3, r.crop_side, r.crop_side});
  std::size_t leaks = 0, dead = 0;
  for (std::size_t j = 0; j < specs.size(); ++j) {
    std::vector<bool> live(1 + specs.size(), false);
    live[1 + j] = true;
    for (Parameter* p : net.parameters()) p->value.zero_grad();
    GradTape tape;
    {
      TapeScope scope(tape);
      const BranchOutputs out = explicit_forward(x, net, &live);
      tape.backward(ops::sum(ops::mul(out.logits, out.logits)));
    }
    for (int b = 0; b <= 4; ++b) {
      const double g = abs_grad(net.backbone().block_parameters(b));
      if (b < specs[j].stage && g != 0) ++leaks;
      if (b >= specs[j].stage && g == 0) ++dead;
    }
  }
  const double t = seconds_since(t0);
  Verdict v;
  v.pass = violations == 0 && leaks == 0 && dead == 0 && checked > 0 && t < 60;
  v.detail = "implicit " + sched.to_string() + ": " + std::to_string(checked - violations) + "/" +
             std::to_string(checked) + " frozen blocks byte-identical; explicit " + branches_string(specs) + ": " +
             std::to_string(leaks) + " blocks below a patch operation with gradient, " + std::to_string(dead) +
             " trainable blocks without; " + fmt(t, 1) + " s (limit 60 s)";
  return v;
}

struct SeedRun {
  std::uint64_t seed;
  BenchmarkResult result;
  double seconds;
};

double best(const BenchmarkResult& r, const std::string& arm) { return r.arm(arm).sweep.best_row().miou; }

std::string read_bytes(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance run"};
  std::string work = "acceptance";
  std::size_t seeds = 3;
  bool skip_benchmark = false;
  BenchmarkConfig bc;
  app.add_option("--work", work, "scratch directory for logs and benchmark output");
  app.add_option("--seeds", seeds, "benchmark seeds 0..n-1");
  app.add_option("--n-train", bc.n_train, "training images per seed");
  app.add_option("--n-eval", bc.n_eval, "evaluation images per seed");
  app.add_flag("--skip-benchmark", skip_benchmark, "criteria 1-5 only");
  CLI11_PARSE(app, argc, argv);

  const fs::path dir(work);
  fs::create_directories(dir);
  bool all = true;
  auto record = [&](int id, const Verdict& v) {
    report(id, v);
    if (v.gate && !v.pass) all = false;
  };

  record(1, suite_criterion(PPL_GRADCHECK_BIN, "", dir / "gradcheck.log", 120,
                            "finite differences (double, 20 instances per primitive and graph, rel. err < 1e-4)"));
  record(2, suite_criterion(PPL_TESTS_BIN,
                            "merging the slices restores the map,K=1 branch processes the whole map,"
                            "tiles are processed in isolation,split extents,tile extents",
                            dir / "patch_algebra.log", 10, "splice/slice identity K=1..6, K=1 equivalence, isolation"));
  record(3, freeze_detach(bc.recipe));
  record(4, suite_criterion(PPL_TESTS_BIN,
                            "loss fixtures,loss matches a scalar oracle on random cases,"
                            "2x2 fixture,mIoU matches a per-pixel oracle",
                            dir / "oracles.log", 600, "loss oracle (100 cases, 1e-6) and mIoU oracle (50 pairs)"));
  record(5, suite_criterion(PPL_TESTS_BIN,
                            "raw cam matches a triple loop,normalization,positive scaling keeps the argmax,"
                            "foreground shrinks as tau grows",
                            dir / "cam.log", 60, "CAM oracle, idempotence, argmax invariance, tau monotonicity"));

  if (skip_benchmark) {
    std::cout << "criteria 6-8 skipped\n";
    return all ? 0 : 1;
  }

  // Criterion 6: directional benchmark over seeds 0..seeds-1.
  std::vector<SeedRun> runs;
  const auto t6 = Clock::now();
  for (std::uint64_t s = 0; s < seeds; ++s) {
    BenchmarkConfig c = bc;
    c.recipe.seed = s;
    const auto t0 = Clock::now();
    std::ofstream progress(dir / ("seed_" + std::to_string(s) + ".log"));
    runs.push_back({s, run_benchmark(c, dir / ("seed_" + std::to_string(s)), &progress), seconds_since(t0)});
    const auto& r = runs.back().result;
    std::cout << "  seed " << s << ":";
    for (const auto& a : r.arms) std::cout << " " << a.name << "=" << fmt(a.sweep.best_row().miou * 100, 2);
    std::cout << "  (" << fmt(runs.back().seconds / 60, 1) << " min)" << std::endl;
  }
  const double bench_min = seconds_since(t6) / 60;
  {
    double base = 0, impl = 0, expl = 0;
    std::size_t single_wins = 0;
    for (const auto& run : runs) {
      base += best(run.result, "baseline");
      impl += best(run.result, "implicit");
      expl += best(run.result, "explicit");
      double best_single = 0;
      for (const auto& spec : bc.single_arms) {
        best_single = std::max(best_single, best(run.result, "pl_s" + std::to_string(spec.stage) + "_k" +
                                                                  std::to_string(spec.grid)));
      }
      if (best(run.result, "baseline") < best_single) ++single_wins;
    }
    const double n = static_cast<double>(runs.size());
    base = base / n * 100;
    impl = impl / n * 100;
    expl = expl / n * 100;
    const std::size_t need = (2 * runs.size() + 2) / 3;
    Verdict v;
    v.gate = false;
    v.pass = impl >= base + 1.0 && expl >= base + 1.0 && single_wins >= need && bench_min <= 45.0;
    v.detail = "mean best-tau mIoU over " + std::to_string(runs.size()) + " seeds: baseline " + fmt(base, 2) +
               ", implicit " + fmt(impl, 2) + " (" + (impl >= base + 1.0 ? "+" : "short of +") + "1.0), explicit " +
               fmt(expl, 2) + " (" + (expl >= base + 1.0 ? "+" : "short of +") + "1.0); best single arm beats baseline in " +
               std::to_string(single_wins) + "/" + std::to_string(runs.size()) + " seeds (need " +
               std::to_string(need) + "); " + std::to_string(bc.n_train) + "/" + std::to_string(bc.n_eval) +
               " images, " + fmt(bench_min, 1) + " min (limit 45)";
    if (bc.n_train != 2000 || bc.n_eval != 400 || seeds != 3) v.detail += " [reduced run, not the 3 x 2000/400 benchmark]";
    record(6, v);
  }

  // Criterion 7: implicit-arm mIoU across tau in [0.1, 0.3].
  {
    Verdict v;
    v.hard = false;
    v.gate = false;
    v.pass = true;
    std::string per_seed;
    for (const auto& run : runs) {
      double lo = 1, hi = 0;
      for (const auto& row : run.result.arm("implicit").sweep.rows) {
        if (row.tau < 0.1 - 1e-9 || row.tau > 0.3 + 1e-9) continue;
        lo = std::min(lo, row.miou);
        hi = std::max(hi, row.miou);
      }
      const double spread = hi > 0 ? (hi - lo) / hi : 1.0;
      if (spread >= 0.25) v.pass = false;
      per_seed += " seed " + std::to_string(run.seed) + " " + fmt(spread * 100, 1) + "%";
    }
    v.detail = "implicit mIoU spread over tau 0.10-0.30 relative to band max (limit 25%):" + per_seed;
    record(7, v);
  }

  // Criterion 8: seed 0 again, metrics byte-for-byte.
  {
    BenchmarkConfig c = bc;
    c.recipe.seed = runs.front().seed;
    std::ofstream progress(dir / "seed_0_rerun.log");
    run_benchmark(c, dir / "seed_0_rerun", &progress);
    const std::string a = read_bytes(dir / "seed_0" / "metrics.csv");
    const std::string b = read_bytes(dir / "seed_0_rerun" / "metrics.csv");
    Verdict v;
    v.pass = !a.empty() && a == b;
    v.detail = "seed 0 rerun metrics.csv " + std::string(a == b ? "identical" : "differs") + " (" +
               std::to_string(a.size()) + " bytes, hash " + hash_hex(a) + ")";
    record(8, v);
  }
  std::cout << "contract criteria (1-5, 8): " << (all ? "all pass" : "FAILURES") << std::endl;
  return all ? 0 : 1;
}
