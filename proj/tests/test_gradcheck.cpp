// Central finite differences against the tape, double precision only.
#include <cmath>
#include <functional>

#include "doctest.h"
#include "helpers.hpp"
#include "ppl/layers.hpp"
#include "ppl/ops.hpp"
#include "ppl/patchlearn.hpp"

static_assert(sizeof(ppl::Real) == sizeof(double), "gradient checks need the double build");

using namespace ppl;
using ppl::test::random_tensor;

namespace {

constexpr double kStep = 1e-5;
constexpr double kTol = 1e-4;
constexpr int kInstances = 20;

using Fn = std::function<Tensor(const std::vector<Tensor>&)>;

// ||analytic - numeric|| / max(||analytic||, ||numeric||) over the checked
// coordinates of every input. `max_coords` > 0 samples that many coordinates.
double grad_check(const Fn& f, std::vector<Tensor> inputs, Rng& rng, std::size_t max_coords = 0) {
  const Tensor probe = f(inputs);
  const Tensor proj = random_tensor(probe.shape(), rng);
  auto loss_of = [&] { return ops::sum(ops::mul(f(inputs), proj)); };

  for (auto& t : inputs) {
    t.zero_grad();
    t.set_requires_grad(true);
  }
  GradTape tape;
  {
    TapeScope s(tape);
    tape.backward(loss_of());
  }
  for (auto& t : inputs) t.set_requires_grad(false);

  double diff2 = 0, a2 = 0, n2 = 0;
  for (auto& t : inputs) {
    const auto grad = t.grad();
    std::vector<std::size_t> coords;
    if (max_coords == 0 || max_coords >= t.numel()) {
      for (std::size_t i = 0; i < t.numel(); ++i) coords.push_back(i);
    } else {
      for (std::size_t i = 0; i < max_coords; ++i) coords.push_back(rng.below(t.numel()));
    }
    for (auto i : coords) {
      auto data = t.mutable_data();
      const Real keep = data[i];
      data[i] = keep + kStep;
      const double up = loss_of().item();
      data[i] = keep - kStep;
      const double down = loss_of().item();
      data[i] = keep;
      const double num = (up - down) / (2 * kStep);
      diff2 += (grad[i] - num) * (grad[i] - num);
      a2 += grad[i] * grad[i];
      n2 += num * num;
    }
  }
  const double denom = std::max({std::sqrt(a2), std::sqrt(n2), 1e-12});
  return std::sqrt(diff2) / denom;
}

// Keeps inputs away from the ReLU kink so the difference quotient is smooth.
Tensor away_from_zero(Shape shape, Rng& rng) {
  Tensor t(shape);
  for (auto& v : t.mutable_data()) v = static_cast<Real>((rng.bernoulli(0.5) ? 1 : -1) * rng.uniform(0.05, 1.0));
  return t;
}

std::size_t pick(Rng& rng, std::size_t lo, std::size_t hi) { return lo + rng.below(hi - lo + 1); }

BackboneConfig small_backbone() {
  BackboneConfig cfg = BackboneConfig::tiny(3);
  cfg.stem_channels = 8;
  const std::size_t widths[] = {8, 8, 16, 16};
  std::size_t in = 8;
  for (std::size_t s = 0; s < 4; ++s) {
    cfg.stages[s].in_channels = in;
    cfg.stages[s].out_channels = widths[s];
    cfg.stages[s].blocks = 1;
    in = widths[s];
  }
  cfg.validate();
  return cfg;
}

}  // namespace

TEST_SUITE("gradcheck") {

TEST_CASE("conv2d") {
  Rng rng(101);
  for (int i = 0; i < kInstances; ++i) {
    const std::size_t cin = pick(rng, 1, 3), cout = pick(rng, 1, 3), k = pick(rng, 1, 3);
    const std::size_t stride = pick(rng, 1, 2), pad = pick(rng, 0, 1);
    const std::size_t h = pick(rng, k, 6), w = pick(rng, k, 6);
    const bool batched = rng.bernoulli(0.5);
    Shape xs = batched ? Shape{2, cin, h, w} : Shape{cin, h, w};
    const double err = grad_check(
        [&](const std::vector<Tensor>& in) { return ops::conv2d(in[0], in[1], in[2], stride, pad); },
        {random_tensor(xs, rng), random_tensor({cout, cin, k, k}, rng), random_tensor({cout}, rng)}, rng);
    CHECK(err < kTol);
  }
}

TEST_CASE("group_norm") {
  Rng rng(102);
  for (int i = 0; i < kInstances; ++i) {
    const std::size_t groups = pick(rng, 1, 3), per = pick(rng, 1, 3);
    const std::size_t c = groups * per;
    Shape xs{pick(rng, 1, 2), c, pick(rng, 1, 4), pick(rng, 2, 4)};
    const double err = grad_check(
        [&](const std::vector<Tensor>& in) { return ops::group_norm(in[0], in[1], in[2], groups); },
        {random_tensor(xs, rng, -2, 2), random_tensor({c}, rng), random_tensor({c}, rng)}, rng);
    CHECK(err < kTol);
  }
}

TEST_CASE("relu") {
  Rng rng(103);
  for (int i = 0; i < kInstances; ++i) {
    const double err = grad_check([](const std::vector<Tensor>& in) { return ops::relu(in[0]); },
                                  {away_from_zero({pick(rng, 1, 3), pick(rng, 1, 5), pick(rng, 1, 5)}, rng)}, rng);
    CHECK(err < kTol);
  }
}

TEST_CASE("average pooling") {
  Rng rng(104);
  for (int i = 0; i < kInstances; ++i) {
    const std::size_t k = pick(rng, 1, 3);
    const double err =
        grad_check([&](const std::vector<Tensor>& in) { return ops::avg_pool2d(in[0], k); },
                   {random_tensor({pick(rng, 1, 2), pick(rng, 1, 3), pick(rng, k, 7), pick(rng, k, 7)}, rng)}, rng);
    CHECK(err < kTol);
    const double err2 = grad_check([](const std::vector<Tensor>& in) { return ops::global_avg_pool(in[0]); },
                                   {random_tensor({pick(rng, 1, 3), pick(rng, 1, 4), pick(rng, 1, 4)}, rng)}, rng);
    CHECK(err2 < kTol);
  }
}

TEST_CASE("linear") {
  Rng rng(105);
  for (int i = 0; i < kInstances; ++i) {
    const std::size_t n = pick(rng, 1, 3), cin = pick(rng, 1, 5), cout = pick(rng, 1, 4);
    const double err = grad_check(
        [](const std::vector<Tensor>& in) { return ops::linear(in[0], in[1], in[2]); },
        {random_tensor({n, cin}, rng), random_tensor({cout, cin}, rng), random_tensor({cout}, rng)}, rng);
    CHECK(err < kTol);
  }
}

TEST_CASE("elementwise arithmetic") {
  Rng rng(106);
  for (int i = 0; i < kInstances; ++i) {
    const Shape s{pick(rng, 1, 3), pick(rng, 1, 4)};
    const double err = grad_check(
        [](const std::vector<Tensor>& in) {
          return ops::reshape(ops::add(ops::mul(in[0], in[1]), ops::scale(in[0], Real(0.7))),
                              {in[0].numel()});
        },
        {random_tensor(s, rng), random_tensor(s, rng)}, rng);
    CHECK(err < kTol);
  }
}

TEST_CASE("concatenation") {
  Rng rng(107);
  for (int i = 0; i < kInstances; ++i) {
    const std::size_t axis = pick(rng, 0, 2);
    Shape a{2, 3, 4};
    Shape b = a;
    b[axis] = pick(rng, 1, 3);
    const double err = grad_check([&](const std::vector<Tensor>& in) { return ops::concat({in[0], in[1]}, axis); },
                                  {random_tensor(a, rng), random_tensor(b, rng)}, rng);
    CHECK(err < kTol);
  }
}

TEST_CASE("slicing") {
  Rng rng(108);
  for (int i = 0; i < kInstances; ++i) {
    const std::size_t axis = pick(rng, 0, 2);
    const Shape s{3, 5, 4};
    const std::size_t start = pick(rng, 0, s[axis] - 1);
    const std::size_t len = pick(rng, 1, s[axis] - start);
    const double err =
        grad_check([&](const std::vector<Tensor>& in) { return ops::narrow(in[0], axis, start, len); },
                   {random_tensor(s, rng)}, rng);
    CHECK(err < kTol);
  }
}

TEST_CASE("slice and splice through patch and merge") {
  Rng rng(109);
  for (int i = 0; i < kInstances; ++i) {
    const std::size_t h = pick(rng, 2, 7), w = pick(rng, 2, 7);
    const std::size_t k = pick(rng, 1, std::min(h, w));
    const double err = grad_check(
        [&](const std::vector<Tensor>& in) {
          PatchSet p = patch_op(in[0], k, std::nullopt);
          p = process_patches(p, [&](const Tensor& t) { return ops::mul(t, t); });
          return merge_op(p, std::nullopt);
        },
        {random_tensor({1, 2, h, w}, rng)}, rng);
    CHECK(err < kTol);
  }
}

TEST_CASE("multi-label loss") {
  Rng rng(110);
  for (int i = 0; i < kInstances; ++i) {
    const std::size_t n = pick(rng, 1, 4), c = pick(rng, 1, 6);
    Tensor y({n, c});
    for (auto& v : y.mutable_data()) v = rng.bernoulli(0.5) ? 1 : 0;
    const double err = grad_check(
        [&](const std::vector<Tensor>& in) { return ops::multilabel_soft_margin_loss(in[0], y); },
        {random_tensor({n, c}, rng, -4, 4)}, rng);
    CHECK(err < kTol);
  }
}

TEST_CASE("dual-branch graph") {
  Rng rng(111);
  const BackboneConfig cfg = small_backbone();
  for (int i = 0; i < kInstances; ++i) {
    StagedBackbone bb(cfg, rng.next());
    const BranchSpec spec{static_cast<int>(pick(rng, 2, 4)), 2};
    Rng brng(rng.next());
    std::vector<PatchBranch> branches{PatchBranch::make(spec, cfg, brng)};
    bb.reset_head(2 * cfg.head_channels(), brng);
    PatchNetwork net(std::move(bb), std::move(branches), false);
    const Tensor image = random_tensor({1, 3, 32, 32}, rng, 0, 1);
    std::vector<Tensor> params;
    for (Parameter* p : net.parameters()) params.push_back(p->value);
    const double err = grad_check(
        [&](const std::vector<Tensor>&) { return dual_branch_forward(image, net).logits; }, params, rng, 4);
    CHECK(err < kTol);
  }
}

TEST_CASE("explicit multi-branch graph") {
  // With detachment the forward function is unchanged but the tape omits the
  // cut edges, so finite differences are compared on the same assembly with
  // the cuts removed; the cuts themselves are covered by the zero-gradient
  // contract tests.
  Rng rng(112);
  const BackboneConfig cfg = small_backbone();
  for (int i = 0; i < kInstances; ++i) {
    StagedBackbone bb(cfg, rng.next());
    Rng brng(rng.next());
    std::vector<PatchBranch> branches;
    for (int s = 2; s <= 4; ++s) branches.push_back(PatchBranch::make({s, 2}, cfg, brng));
    bb.reset_head(4 * cfg.head_channels(), brng);
    PatchNetwork net(std::move(bb), std::move(branches), false);
    const Tensor image = random_tensor({1, 3, 32, 32}, rng, 0, 1);
    std::vector<Tensor> params;
    for (Parameter* p : net.parameters()) params.push_back(p->value);
    const double err =
        grad_check([&](const std::vector<Tensor>&) { return net.forward(image).logits; }, params, rng, 3);
    CHECK(err < kTol);
  }
}

}  // TEST_SUITE
