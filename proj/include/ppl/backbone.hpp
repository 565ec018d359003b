#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "ppl/layers.hpp"

namespace ppl {

/// Block indices used by forward_to_stage: 0 is the stem, 1..4 the stages.
inline constexpr int kStem = 0;
inline constexpr int kNumStages = 4;

struct StageConfig {
  int stage_index = 1;
  std::size_t in_channels = 16;
  std::size_t out_channels = 16;
  std::size_t blocks = 2;
  std::size_t stride = 1;
};

struct BackboneConfig {
  std::size_t in_channels = 3;
  std::size_t stem_channels = 16;
  std::size_t stem_stride = 2;
  bool stem_pool = true;  // 2×2 average pool after the stem convolution
  std::array<StageConfig, kNumStages> stages{};
  std::size_t num_classes = 6;
  std::size_t norm_group_size = 8;
  std::size_t min_input = 32;
  // Fixed input standardization applied at the start of the stem:
  // (x − input_mean) · input_scale.
  double input_mean = 0.5;
  double input_scale = 4.0;

  /// Stem 16, stages 16/24/32/64 with two residual blocks each. The only
  /// strides sit in the stem and stage 1, so 96×96 inputs reach 12×12.
  static BackboneConfig tiny(std::size_t num_classes = 6);
  /// Same topology at stages 16/32/64/128 (about twice the compute).
  static BackboneConfig wide(std::size_t num_classes = 6);

  void validate() const;
  std::size_t head_channels() const { return stages.back().out_channels; }
  /// Channels produced by block `block` (0 = stem).
  std::size_t channels_after(int block) const;
  /// Product of strides of blocks first..last inclusive.
  std::size_t stride_between(int first, int last) const;
  /// Spatial extent after `block` for an input extent.
  std::size_t extent_after(int block, std::size_t input) const;
};

/// Two 3×3 convolutions with normalization; a 1×1 projection on the shortcut
/// whenever the shape changes.
struct ResidualBlock {
  Conv2d conv1;
  GroupNorm norm1;
  Conv2d conv2;
  GroupNorm norm2;
  bool has_projection = false;
  Conv2d projection;

  Tensor operator()(const Tensor& x) const;
  std::vector<Parameter*> parameters();
};

struct ClassifierHead {
  Parameter weight;  // classes × in_channels (ω)
  Parameter bias;

  static ClassifierHead make(std::size_t in_channels, std::size_t classes, Rng& rng);
  std::size_t in_channels() const { return weight.value.dim(1); }
  std::size_t classes() const { return weight.value.dim(0); }

  /// Logits from global-average-pooled features: N×C×h×w -> N×classes
  /// (C×h×w -> 1×classes).
  Tensor classify(const Tensor& feature) const;
};

class StagedBackbone {
 public:
  StagedBackbone(BackboneConfig cfg, std::uint64_t seed);

  const BackboneConfig& config() const { return cfg_; }

  /// Activations after block `upto` (0 = stem, 1..4 = stages). Accepts a
  /// 3×H×W image or an N×3×H×W batch.
  Tensor forward_to_stage(const Tensor& image, int upto) const;
  /// Runs blocks first..last (inclusive, 0 = stem) on an intermediate feature.
  /// An empty range (first > last) returns the input unchanged.
  Tensor run_blocks(const Tensor& feature, int first, int last) const;
  /// forward_to_stage(image, 4) followed by the classifier head.
  Tensor forward(const Tensor& image) const;

  ClassifierHead& head() { return head_; }
  const ClassifierHead& head() const { return head_; }
  /// Replaces the head with a freshly initialized one of the given width.
  void reset_head(std::size_t in_channels, Rng& rng);

  /// Clears requires_grad for the stem and every stage below `index`
  /// (index 0 leaves everything trainable). Restores it for the rest.
  void set_frozen_prefix(int index);
  int frozen_prefix() const { return frozen_prefix_; }

  std::vector<Parameter*> block_parameters(int block);
  /// Stem, stages, then head.
  std::vector<Parameter*> parameters();

 private:
  void check_image(const Tensor& image) const;

  BackboneConfig cfg_;
  Conv2d stem_conv_;
  GroupNorm stem_norm_;
  std::array<std::vector<ResidualBlock>, kNumStages> stages_;
  ClassifierHead head_;
  int frozen_prefix_ = 0;
};

}  // namespace ppl
