#include <cmath>

#include "doctest.h"
#include "helpers.hpp"
#include "ppl/patchlearn.hpp"

using namespace ppl;
using ppl::test::bitwise_equal;
using ppl::test::random_tensor;

namespace {

BackboneConfig one_block() {
  BackboneConfig cfg = BackboneConfig::tiny(3);
  for (auto& s : cfg.stages) s.blocks = 1;
  return cfg;
}

PatchNetwork make_net(const std::vector<BranchSpec>& specs, bool detach, std::uint64_t seed = 1) {
  const BackboneConfig cfg = one_block();
  Rng rng(seed);
  StagedBackbone bb(cfg, seed);
  bb.reset_head(cfg.head_channels() * (1 + specs.size()), rng);
  std::vector<PatchBranch> branches;
  for (const auto& s : specs) branches.push_back(PatchBranch::make(s, cfg, rng));
  return PatchNetwork(std::move(bb), std::move(branches), detach);
}

Tensor iota(Shape shape) {
  Tensor t(shape);
  Real v = 0;
  for (auto& x : t.mutable_data()) x = v++;
  return t;
}

double abs_grad(const std::vector<Parameter*>& ps) {
  double s = 0;
  for (auto* p : ps)
    for (Real g : p->value.grad()) s += std::abs(g);
  return s;
}

}  // namespace

TEST_SUITE("patchlearn") {

TEST_CASE("split extents") {
  CHECK(split_extent(8, 2) == std::vector<std::size_t>{4, 4});
  CHECK(split_extent(7, 2) == std::vector<std::size_t>{4, 3});
  CHECK(split_extent(7, 3) == std::vector<std::size_t>{3, 3, 1});
  CHECK(split_extent(6, 4) == std::vector<std::size_t>{2, 2, 1, 1});
  CHECK(split_extent(12, 5) == std::vector<std::size_t>{3, 3, 2, 2, 2});
  CHECK(split_extent(5, 1) == std::vector<std::size_t>{5});
  CHECK_THROWS_AS(split_extent(4, 5), ShapeError);
  CHECK_THROWS_AS(split_extent(4, 0), ShapeError);
  for (std::size_t n = 1; n <= 20; ++n) {
    for (std::size_t k = 1; k <= n; ++k) {
      const auto parts = split_extent(n, k);
      std::size_t total = 0;
      for (auto p : parts) {
        CHECK(p > 0);
        total += p;
      }
      CHECK(parts.size() == k);
      CHECK(total == n);
    }
  }
}

TEST_CASE("tile extents") {
  SUBCASE("8x8, K=2") {
    const PatchSet s = patch_op(Tensor({1, 2, 8, 8}), 2, std::nullopt);
    REQUIRE(s.patches.size() == 4);
    for (const auto& p : s.patches) CHECK(p.shape() == Shape{1, 2, 4, 4});
    CHECK(s.tiles[3].row0 == 4);
    CHECK(s.tiles[3].col0 == 4);
  }
  SUBCASE("7x7, K=2") {
    const PatchSet s = patch_op(Tensor({2, 7, 7}), 2, std::nullopt);
    REQUIRE(s.patches.size() == 4);
    CHECK(s.patches[0].shape() == Shape{2, 4, 4});
    CHECK(s.patches[1].shape() == Shape{2, 4, 3});
    CHECK(s.patches[2].shape() == Shape{2, 3, 4});
    CHECK(s.patches[3].shape() == Shape{2, 3, 3});
    CHECK(s.tiles[1].col0 == 4);
    CHECK(s.tiles[2].row0 == 4);
  }
  CHECK_THROWS_AS(patch_op(Tensor({1, 2, 4, 6}), 5, std::nullopt), ShapeError);
  CHECK_THROWS_AS(patch_op(Tensor({4, 6}), 2, std::nullopt), ShapeError);
}

TEST_CASE("2x2 slice order is row-major") {
  const Tensor x = iota({1, 4, 4});
  const PatchSet s = patch_op(x, 2, std::nullopt);
  CHECK(ppl::test::values(s.patches[0]) == std::vector<Real>{0, 1, 4, 5});
  CHECK(ppl::test::values(s.patches[1]) == std::vector<Real>{2, 3, 6, 7});
  CHECK(ppl::test::values(s.patches[2]) == std::vector<Real>{8, 9, 12, 13});
  CHECK(ppl::test::values(s.patches[3]) == std::vector<Real>{10, 11, 14, 15});
}

TEST_CASE("merging the slices restores the map") {
  Rng rng(3);
  for (std::size_t side : {6, 7, 12}) {
    const Tensor x = random_tensor({2, 3, side, side + 1}, rng);
    for (std::size_t k = 1; k <= 6; ++k) {
      CAPTURE(side);
      CAPTURE(k);
      const PatchSet s = patch_op(x, k, std::nullopt);
      CHECK(bitwise_equal(merge_op(s, std::nullopt), x));
    }
  }
}

TEST_CASE("merge rejects inconsistent layouts") {
  PatchSet s = patch_op(Tensor({1, 1, 6, 6}), 2, std::nullopt);
  PatchSet wrong = s;
  wrong.patches.pop_back();
  CHECK_THROWS_AS(merge_op(wrong, std::nullopt), ShapeError);
  wrong = s;
  wrong.patches[1] = Tensor({1, 1, 3, 2});
  CHECK_THROWS_AS(merge_op(wrong, std::nullopt), ShapeError);
  wrong = s;
  wrong.height = 7;
  CHECK_THROWS_AS(merge_op(wrong, std::nullopt), ShapeError);
}

TEST_CASE("K=1 branch processes the whole map") {
  PatchNetwork net = make_net({{3, 1}}, false);
  const auto& bb = net.backbone();
  Rng rng(5);
  const Tensor feat = random_tensor({2, 24, 8, 8}, rng);
  auto stages = [&](const Tensor& t) { return bb.run_blocks(t, 3, 4); };
  PatchSet s = process_patches(patch_op(feat, 1, std::nullopt), stages);
  CHECK(bitwise_equal(merge_op(s, std::nullopt), stages(feat)));
}

TEST_CASE("tiles are processed in isolation") {
  PatchNetwork net = make_net({{3, 2}}, false);
  const auto& bb = net.backbone();
  auto stages = [&](const Tensor& t) { return bb.run_blocks(t, 3, 4); };
  Rng rng(6);
  Tensor feat = random_tensor({1, 24, 8, 8}, rng);
  const Tensor base = merge_op(process_patches(patch_op(feat, 2, std::nullopt), stages), std::nullopt);
  Tensor bumped = feat.clone();
  bumped.mutable_data()[3 * 8 + 3] += Real(5);  // channel 0, row 3, col 3: inside tile 0
  const Tensor moved = merge_op(process_patches(patch_op(bumped, 2, std::nullopt), stages), std::nullopt);
  const std::size_t c = base.dim(1);
  bool tile0_changed = false;
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t y = 0; y < 8; ++y) {
      for (std::size_t x = 0; x < 8; ++x) {
        const std::size_t i = (ch * 8 + y) * 8 + x;
        if (y < 4 && x < 4) {
          if (base[i] != moved[i]) tile0_changed = true;
        } else {
          CHECK(base[i] == moved[i]);
        }
      }
    }
  }
  CHECK(tile0_changed);
  // The whole-map pass lets the change leak across the tile border.
  CHECK_FALSE(bitwise_equal(stages(feat), base));
}

TEST_CASE("weights are shared across tiles") {
  PatchNetwork net = make_net({{2, 3}}, false);
  const auto& br = net.branches()[0];
  Rng rng(7);
  const Tensor feat = random_tensor({2, 16, 12, 12}, rng);
  const PatchSet s = patch_op(feat, 3, br.phi1);
  const PatchSet raw = patch_op(feat, 3, std::nullopt);
  for (std::size_t j = 0; j < s.patches.size(); ++j) {
    const Tensor alone = br.phi1(raw.patches[j]);
    REQUIRE(alone.shape() == s.patches[j].shape());
    for (std::size_t i = 0; i < alone.numel(); ++i) CHECK(alone[i] == doctest::Approx(s.patches[j][i]).epsilon(1e-5));
  }
  std::size_t phi_params = 0;
  for (Parameter* p : net.parameters())
    if (p->name.rfind("branch2.", 0) == 0) ++phi_params;
  CHECK(phi_params == 4);
}

TEST_CASE("fused feature widths") {
  Rng rng(8);
  const Tensor x = random_tensor({2, 3, 32, 32}, rng, 0.0, 1.0);
  const std::size_t c2 = one_block().head_channels();
  PatchNetwork plain = make_net({}, false);
  CHECK(plain.forward(x).fused.dim(1) == c2);
  PatchNetwork dual = make_net({{4, 2}}, false);
  const BranchOutputs d = dual_branch_forward(x, dual);
  CHECK(d.fused.dim(1) == 2 * c2);
  CHECK(d.f_tilde[0].shape() == d.f_hat.shape());
  CHECK(d.logits.shape() == Shape{2, 3});
  PatchNetwork three = make_net({{2, 2}, {3, 4}, {4, 4}}, true);
  const BranchOutputs e = explicit_forward(x, three);
  CHECK(e.fused.dim(1) == 4 * c2);
  CHECK(e.f_tilde.size() == 3);
  CHECK_THROWS_AS(dual_branch_forward(x, three), ShapeError);
  CHECK_THROWS_AS(explicit_forward(x, make_net({{3, 2}}, false)), ShapeError);
}

TEST_CASE("branch validation") {
  const BackboneConfig cfg = one_block();
  CHECK_THROWS_AS(validate_branches({{3, 2}, {3, 4}}, cfg), ShapeError);
  CHECK_THROWS_AS(validate_branches({{1, 2}}, cfg), ShapeError);
  CHECK_THROWS_AS(validate_branches({{5, 2}}, cfg), ShapeError);
  CHECK_THROWS_AS(validate_branches({{3, 0}}, cfg), ShapeError);
  CHECK_THROWS_AS(validate_branches({{4, 13}}, cfg, 96), ShapeError);
  CHECK_NOTHROW(validate_branches({{2, 2}, {3, 4}, {4, 6}}, cfg, 96));

  SUBCASE("stride alignment") {
    BackboneConfig strided = cfg;
    strided.stages[2].stride = 2;  // stage-2 input is 12×12 at 96, stride 2 below it
    CHECK_NOTHROW(validate_branches({{2, 3}}, strided, 96));
    CHECK_NOTHROW(validate_branches({{2, 6}}, strided, 96));
    CHECK_THROWS_AS(validate_branches({{2, 4}}, strided, 96), ShapeError);
    CHECK_THROWS_AS(validate_branches({{2, 5}}, strided, 96), ShapeError);
    CHECK_THROWS_AS(process_patches(patch_op(Tensor({1, 1, 6, 6}), 2, std::nullopt), {}, 2), ShapeError);
  }
  CHECK_THROWS_AS(make_net({{3, 2}, {3, 2}}, true), ShapeError);
}

TEST_CASE("detached branch with a dead global segment leaves the early blocks alone") {
  PatchNetwork net = make_net({{3, 2}}, true);
  Rng rng(9);
  const Tensor x = random_tensor({2, 3, 32, 32}, rng, 0.0, 1.0);
  const std::vector<bool> live{false, true};
  GradTape tape;
  {
    TapeScope scope(tape);
    const BranchOutputs out = explicit_forward(x, net, &live);
    tape.backward(ops::sum(ops::mul(out.logits, out.logits)));
  }
  auto& bb = net.backbone();
  CHECK(abs_grad(bb.block_parameters(0)) == 0);
  CHECK(abs_grad(bb.block_parameters(1)) == 0);
  CHECK(abs_grad(bb.block_parameters(2)) == 0);
  CHECK(abs_grad(bb.block_parameters(3)) > 0);
  CHECK(abs_grad(bb.block_parameters(4)) > 0);
  CHECK(abs_grad(net.branches()[0].parameters()) > 0);

  // Forward values do not depend on the mask.
  const std::vector<bool> all{true, true};
  CHECK(bitwise_equal(net.forward(x, &live).logits, net.forward(x, &all).logits));
  const std::vector<bool> bad{true};
  CHECK_THROWS_AS(net.forward(x, &bad), ShapeError);
}

TEST_CASE("undetached branch reaches the stem") {
  PatchNetwork net = make_net({{3, 2}}, false);
  Rng rng(10);
  const Tensor x = random_tensor({1, 3, 32, 32}, rng, 0.0, 1.0);
  const std::vector<bool> live{false, true};
  GradTape tape;
  {
    TapeScope scope(tape);
    tape.backward(ops::sum(net.forward(x, &live).logits));
  }
  CHECK(abs_grad(net.backbone().block_parameters(0)) > 0);
}

}
