#pragma once

#include <functional>
#include <optional>
#include <vector>

#include "ppl/backbone.hpp"

namespace ppl {

/// Position and extent of one tile inside the source grid.
struct TileExtent {
  std::size_t row0 = 0;
  std::size_t col0 = 0;
  std::size_t height = 0;
  std::size_t width = 0;
};

/// K·K feature tiles in row-major slice order. Each tile is N×C×h_j×w_j.
struct PatchSet {
  std::vector<Tensor> patches;
  std::size_t grid = 1;
  std::size_t height = 0;  // extent of the map the tiles splice back into
  std::size_t width = 0;
  std::vector<TileExtent> tiles;
};

/// Splits `extent` into `k` non-empty pieces. Pieces are ceil(extent/k) wide
/// with the last one taking the remainder; when that would leave empty pieces
/// the first (extent mod k) pieces get one extra element instead.
std::vector<std::size_t> split_extent(std::size_t extent, std::size_t k);

using FeatureFn = std::function<Tensor(const Tensor&)>;

/// Slices an N×C×H×W map into K×K tiles and re-encodes each tile with the
/// shared `phi1` (pass std::nullopt to bypass it).
PatchSet patch_op(const Tensor& feature, std::size_t grid, const std::optional<Conv2d>& phi1);

/// Runs every tile independently through `stages`. `stride` is the total
/// stride of those stages; every tile extent must be divisible by it.
PatchSet process_patches(const PatchSet& patches, const FeatureFn& stages, std::size_t stride = 1);

/// Re-encodes each tile with `phi2` (nullopt bypasses it) and splices the
/// tiles back in slice order.
Tensor merge_op(const PatchSet& patches, const std::optional<Conv2d>& phi2);

/// Applies `fn` to every tile with weights shared across tiles. Tiles of equal
/// extent are run as one batch; the result keeps slice order.
std::vector<Tensor> apply_shared(const std::vector<Tensor>& tiles, const FeatureFn& fn);

struct BranchSpec {
  int stage = 4;         // destruct stage, 2..4
  std::size_t grid = 6;  // K

  bool operator==(const BranchSpec&) const = default;
};

/// Patch Operation at `spec.stage` followed by the shared later stages and the
/// Merge Operation. phi1 keeps the incoming channel count C1, phi2 keeps the
/// head width C2.
struct PatchBranch {
  BranchSpec spec;
  Conv2d phi1;
  Conv2d phi2;

  static PatchBranch make(BranchSpec spec, const BackboneConfig& cfg, Rng& rng);
  std::vector<Parameter*> parameters();
};

struct BranchOutputs {
  Tensor f_hat;                 // global branch, C2 channels
  std::vector<Tensor> f_tilde;  // merged patch branches, C2 channels each
  Tensor fused;                 // [f_hat, f_tilde...] along channels
  Tensor logits;
};

/// Validates branch specs against a backbone: stage range, distinct stages,
/// grid sizes and the stride alignment rule at `input_side`.
void validate_branches(const std::vector<BranchSpec>& specs, const BackboneConfig& cfg,
                       std::optional<std::size_t> input_side = std::nullopt);

/// Backbone plus zero or more patch branches and a single classifier over the
/// fused feature. With `detach` set each branch input is cut from the graph so
/// a branch only updates the blocks at and after its own Patch Operation.
class PatchNetwork {
 public:
  PatchNetwork(StagedBackbone backbone, std::vector<PatchBranch> branches, bool detach);

  /// Full forward. `live` (size 1 + branches) optionally marks which fused
  /// segments carry gradient; dead segments are cut with stop_gradient. The
  /// forward values do not depend on it.
  BranchOutputs forward(const Tensor& images, const std::vector<bool>* live = nullptr) const;

  StagedBackbone& backbone() { return backbone_; }
  const StagedBackbone& backbone() const { return backbone_; }
  std::vector<PatchBranch>& branches() { return branches_; }
  const std::vector<PatchBranch>& branches() const { return branches_; }
  bool detached() const { return detach_; }
  std::vector<BranchSpec> specs() const;

  std::vector<Parameter*> parameters();

 private:
  StagedBackbone backbone_;
  std::vector<PatchBranch> branches_;
  bool detach_;
};

/// One patch branch without detachment, fused channels 2·C2.
BranchOutputs dual_branch_forward(const Tensor& image, const PatchNetwork& net);
/// Several detached branches; throws when the network is not set up that way.
BranchOutputs explicit_forward(const Tensor& image, const PatchNetwork& net,
                               const std::vector<bool>* live = nullptr);

}  // namespace ppl
