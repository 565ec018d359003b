#include "ppl/backbone.hpp"

#include <cmath>
#include <string>

namespace ppl {

BackboneConfig BackboneConfig::tiny(std::size_t num_classes) {
  BackboneConfig cfg;
  cfg.num_classes = num_classes;
  cfg.stages = {StageConfig{1, 16, 16, 2, 2}, StageConfig{2, 16, 24, 2, 1},
                StageConfig{3, 24, 32, 2, 1}, StageConfig{4, 32, 64, 2, 1}};
  return cfg;
}

BackboneConfig BackboneConfig::wide(std::size_t num_classes) {
  BackboneConfig cfg = tiny(num_classes);
  cfg.stages = {StageConfig{1, 16, 16, 2, 2}, StageConfig{2, 16, 32, 2, 1},
                StageConfig{3, 32, 64, 2, 1}, StageConfig{4, 64, 128, 2, 1}};
  return cfg;
}

void BackboneConfig::validate() const {
  if (in_channels == 0 || stem_channels == 0 || num_classes == 0) {
    throw ShapeError("backbone: channel and class counts must be positive");
  }
  if (stem_stride == 0) throw ShapeError("backbone: stem stride must be positive");
  if (!(input_scale > 0)) throw ShapeError("backbone: input_scale must be positive");
  std::size_t prev = stem_channels;
  for (int s = 0; s < kNumStages; ++s) {
    const auto& st = stages[s];
    if (st.stage_index != s + 1) throw ShapeError("backbone: stage indices must be 1..4 in order");
    if (st.in_channels != prev) {
      throw ShapeError("backbone: stage " + std::to_string(s + 1) + " in_channels " +
                       std::to_string(st.in_channels) + " does not match previous output " +
                       std::to_string(prev));
    }
    if (st.out_channels == 0 || st.blocks == 0) {
      throw ShapeError("backbone: stage " + std::to_string(s + 1) + " needs channels and blocks");
    }
    if (st.stride != 1 && st.stride != 2) {
      throw ShapeError("backbone: stage " + std::to_string(s + 1) + " stride must be 1 or 2");
    }
    prev = st.out_channels;
  }
  if (stages[3].stride != 1) throw ShapeError("backbone: stage 4 stride must be 1");
}

std::size_t BackboneConfig::channels_after(int block) const {
  if (block == kStem) return stem_channels;
  return stages.at(static_cast<std::size_t>(block - 1)).out_channels;
}

std::size_t BackboneConfig::stride_between(int first, int last) const {
  std::size_t s = 1;
  for (int b = first; b <= last; ++b) {
    if (b == kStem) {
      s *= stem_stride * (stem_pool ? 2 : 1);
    } else {
      s *= stages.at(static_cast<std::size_t>(b - 1)).stride;
    }
  }
  return s;
}

std::size_t BackboneConfig::extent_after(int block, std::size_t input) const {
  // 3×3 pad-1 convolutions: out = floor((n - 1) / stride) + 1
  std::size_t n = (input - 1) / stem_stride + 1;
  if (stem_pool) n /= 2;
  for (int b = 1; b <= block; ++b) n = (n - 1) / stages[static_cast<std::size_t>(b - 1)].stride + 1;
  return n;
}

Tensor ResidualBlock::operator()(const Tensor& x) const {
  Tensor y = ops::relu(norm1(conv1(x)));
  y = norm2(conv2(y));
  Tensor shortcut = has_projection ? projection(x) : x;
  return ops::relu(ops::add(y, shortcut));
}

std::vector<Parameter*> ResidualBlock::parameters() {
  std::vector<Parameter*> p{&conv1.weight, &conv1.bias, &norm1.gamma, &norm1.beta,
                            &conv2.weight, &conv2.bias, &norm2.gamma, &norm2.beta};
  if (has_projection) {
    p.push_back(&projection.weight);
    p.push_back(&projection.bias);
  }
  return p;
}

ClassifierHead ClassifierHead::make(std::size_t in_channels, std::size_t classes, Rng& rng) {
  ClassifierHead h;
  h.weight = {"head.weight", Tensor({classes, in_channels}), Real(1), true};
  h.bias = {"head.bias", Tensor({classes}), Real(1), true};
  const double bound = 1.0 / std::sqrt(static_cast<double>(in_channels));
  for (auto& v : h.weight.value.mutable_data()) v = static_cast<Real>(rng.uniform(-bound, bound));
  h.weight.value.set_requires_grad(true);
  h.bias.value.set_requires_grad(true);
  return h;
}

Tensor ClassifierHead::classify(const Tensor& feature) const {
  const std::size_t channels = feature.rank() == 4 ? feature.dim(1) : feature.dim(0);
  if (channels != in_channels()) {
    throw ShapeError("classify: feature has " + std::to_string(channels) +
                     " channels but the classifier expects " + std::to_string(in_channels()));
  }
  Tensor pooled = ops::global_avg_pool(feature);
  if (pooled.rank() == 1) pooled = ops::reshape(pooled, {1, channels});
  return ops::linear(pooled, weight.value, bias.value);
}

StagedBackbone::StagedBackbone(BackboneConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)) {
  cfg_.validate();
  Rng rng(derive_seed(seed, 0xBAC4B0));
  stem_conv_ = Conv2d::make("stem.conv", cfg_.in_channels, cfg_.stem_channels, 3,
                            cfg_.stem_stride, 1, rng);
  stem_norm_ = GroupNorm::make("stem.norm", cfg_.stem_channels, cfg_.norm_group_size);
  for (int s = 0; s < kNumStages; ++s) {
    const auto& sc = cfg_.stages[s];
    for (std::size_t b = 0; b < sc.blocks; ++b) {
      const std::string name = "stage" + std::to_string(s + 1) + ".block" + std::to_string(b);
      const std::size_t cin = b == 0 ? sc.in_channels : sc.out_channels;
      const std::size_t stride = b == 0 ? sc.stride : 1;
      ResidualBlock blk;
      blk.conv1 = Conv2d::make(name + ".conv1", cin, sc.out_channels, 3, stride, 1, rng);
      blk.norm1 = GroupNorm::make(name + ".norm1", sc.out_channels, cfg_.norm_group_size);
      blk.conv2 = Conv2d::make(name + ".conv2", sc.out_channels, sc.out_channels, 3, 1, 1, rng);
      blk.norm2 = GroupNorm::make(name + ".norm2", sc.out_channels, cfg_.norm_group_size);
      // Residual branch ends near zero so each block starts close to identity.
      for (auto& v : blk.norm2.gamma.value.mutable_data()) v = Real(0.5);
      if (cin != sc.out_channels || stride != 1) {
        blk.has_projection = true;
        blk.projection = Conv2d::make(name + ".proj", cin, sc.out_channels, 1, stride, 0, rng);
      }
      stages_[s].push_back(std::move(blk));
    }
  }
  head_ = ClassifierHead::make(cfg_.head_channels(), cfg_.num_classes, rng);
}

void StagedBackbone::check_image(const Tensor& image) const {
  const std::size_t rank = image.rank();
  if (rank != 3 && rank != 4) {
    throw ShapeError("forward: expected a 3×H×W image or N×3×H×W batch, got " +
                     shape_str(image.shape()));
  }
  const std::size_t c = rank == 4 ? image.dim(1) : image.dim(0);
  if (c != cfg_.in_channels) {
    throw ShapeError("forward: image has " + std::to_string(c) + " channels, expected " +
                     std::to_string(cfg_.in_channels));
  }
  const std::size_t h = image.dim(rank - 2);
  const std::size_t w = image.dim(rank - 1);
  if (h < cfg_.min_input || w < cfg_.min_input) {
    throw ShapeError("forward: image " + std::to_string(h) + "×" + std::to_string(w) +
                     " is below the minimum input side " + std::to_string(cfg_.min_input));
  }
}

Tensor StagedBackbone::run_blocks(const Tensor& feature, int first, int last) const {
  Tensor x = feature;
  for (int b = first; b <= last; ++b) {
    if (b == kStem) {
      x = ops::scale(ops::add(x, Tensor(x.shape(), static_cast<Real>(-cfg_.input_mean))),
                     static_cast<Real>(cfg_.input_scale));
      x = ops::relu(stem_norm_(stem_conv_(x)));
      if (cfg_.stem_pool) x = ops::avg_pool2d(x, 2);
    } else {
      for (const auto& blk : stages_.at(static_cast<std::size_t>(b - 1))) x = blk(x);
    }
  }
  return x;
}

Tensor StagedBackbone::forward_to_stage(const Tensor& image, int upto) const {
  if (upto < kStem || upto > kNumStages) {
    throw ShapeError("forward_to_stage: block index " + std::to_string(upto) + " out of range 0..4");
  }
  check_image(image);
  return run_blocks(image, kStem, upto);
}

Tensor StagedBackbone::forward(const Tensor& image) const {
  return head_.classify(forward_to_stage(image, kNumStages));
}

void StagedBackbone::reset_head(std::size_t in_channels, Rng& rng) {
  head_ = ClassifierHead::make(in_channels, cfg_.num_classes, rng);
}

void StagedBackbone::set_frozen_prefix(int index) {
  if (index < 0 || index > kNumStages) {
    throw ShapeError("set_frozen_prefix: index " + std::to_string(index) + " out of range 0..4");
  }
  frozen_prefix_ = index;
  for (int b = kStem; b <= kNumStages; ++b) {
    const bool frozen = index > 0 && b < index;
    for (Parameter* p : block_parameters(b)) p->value.set_requires_grad(!frozen);
  }
}

std::vector<Parameter*> StagedBackbone::block_parameters(int block) {
  if (block == kStem) {
    return {&stem_conv_.weight, &stem_conv_.bias, &stem_norm_.gamma, &stem_norm_.beta};
  }
  std::vector<Parameter*> out;
  for (auto& blk : stages_.at(static_cast<std::size_t>(block - 1))) {
    for (Parameter* p : blk.parameters()) out.push_back(p);
  }
  return out;
}

std::vector<Parameter*> StagedBackbone::parameters() {
  std::vector<Parameter*> out;
  for (int b = kStem; b <= kNumStages; ++b) {
    for (Parameter* p : block_parameters(b)) out.push_back(p);
  }
  out.push_back(&head_.weight);
  out.push_back(&head_.bias);
  return out;
}

}  // namespace ppl
