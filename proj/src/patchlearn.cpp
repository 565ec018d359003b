#include "ppl/patchlearn.hpp"

#include <algorithm>
#include <map>
#include <set>
#include <string>
#include <utility>

namespace ppl {

namespace {

std::size_t height_axis(const Tensor& t) { return t.rank() - 2; }
std::size_t width_axis(const Tensor& t) { return t.rank() - 1; }

}  // namespace

std::vector<std::size_t> split_extent(std::size_t extent, std::size_t k) {
  if (k == 0 || k > extent) {
    throw ShapeError("grid size " + std::to_string(k) + " must be in 1.." + std::to_string(extent));
  }
  const std::size_t ceil = (extent + k - 1) / k;
  std::vector<std::size_t> parts;
  if ((k - 1) * ceil < extent) {
    parts.assign(k - 1, ceil);
    parts.push_back(extent - (k - 1) * ceil);
    return parts;
  }
  const std::size_t base = extent / k;
  const std::size_t extra = extent % k;
  for (std::size_t i = 0; i < k; ++i) parts.push_back(base + (i < extra ? 1 : 0));
  return parts;
}

std::vector<Tensor> apply_shared(const std::vector<Tensor>& tiles, const FeatureFn& fn) {
  std::vector<Tensor> out(tiles.size());
  if (tiles.empty()) return out;
  if (tiles.front().rank() != 4) {
    for (std::size_t i = 0; i < tiles.size(); ++i) out[i] = fn(tiles[i]);
    return out;
  }
  // Group equal extents in first-seen order so results do not depend on map ordering.
  std::vector<std::pair<std::pair<std::size_t, std::size_t>, std::vector<std::size_t>>> groups;
  for (std::size_t i = 0; i < tiles.size(); ++i) {
    const auto key = std::make_pair(tiles[i].dim(2), tiles[i].dim(3));
    auto it = std::find_if(groups.begin(), groups.end(), [&](const auto& g) { return g.first == key; });
    if (it == groups.end()) {
      groups.push_back({key, {i}});
    } else {
      it->second.push_back(i);
    }
  }
  for (const auto& [key, idx] : groups) {
    if (idx.size() == 1) {
      out[idx[0]] = fn(tiles[idx[0]]);
      continue;
    }
    std::vector<Tensor> members;
    for (auto i : idx) members.push_back(tiles[i]);
    const std::size_t n = tiles[idx[0]].dim(0);
    Tensor batched = fn(ops::concat(members, 0));
    for (std::size_t j = 0; j < idx.size(); ++j) out[idx[j]] = ops::narrow(batched, 0, j * n, n);
  }
  return out;
}

PatchSet patch_op(const Tensor& feature, std::size_t grid, const std::optional<Conv2d>& phi1) {
  if (feature.rank() != 3 && feature.rank() != 4) {
    throw ShapeError("patch_op: expected a feature volume, got " + shape_str(feature.shape()));
  }
  const std::size_t h = feature.dim(height_axis(feature));
  const std::size_t w = feature.dim(width_axis(feature));
  if (grid == 0 || grid > std::min(h, w)) {
    throw ShapeError("patch_op: grid size " + std::to_string(grid) + " exceeds min(H, W) = " +
                     std::to_string(std::min(h, w)));
  }
  PatchSet set;
  set.grid = grid;
  set.height = h;
  set.width = w;
  const auto rows = split_extent(h, grid);
  const auto cols = split_extent(w, grid);
  std::size_t r0 = 0;
  for (std::size_t r = 0; r < grid; ++r) {
    Tensor band = ops::narrow(feature, height_axis(feature), r0, rows[r]);
    std::size_t c0 = 0;
    for (std::size_t c = 0; c < grid; ++c) {
      set.patches.push_back(ops::narrow(band, width_axis(feature), c0, cols[c]));
      set.tiles.push_back({r0, c0, rows[r], cols[c]});
      c0 += cols[c];
    }
    r0 += rows[r];
  }
  if (phi1) set.patches = apply_shared(set.patches, [&](const Tensor& t) { return (*phi1)(t); });
  return set;
}

PatchSet process_patches(const PatchSet& patches, const FeatureFn& stages, std::size_t stride) {
  if (stride == 0) throw ShapeError("process_patches: stride must be positive");
  for (std::size_t j = 0; j < patches.tiles.size(); ++j) {
    const auto& t = patches.tiles[j];
    if (t.height % stride != 0 || t.width % stride != 0) {
      throw ShapeError("process_patches: tile " + std::to_string(j) + " (" +
                       std::to_string(t.height) + "×" + std::to_string(t.width) +
                       ") is not aligned to the stage stride " + std::to_string(stride));
    }
  }
  PatchSet out = patches;
  if (!stages) return out;
  out.patches = apply_shared(patches.patches, stages);
  std::size_t r0 = 0;
  for (std::size_t r = 0; r < patches.grid; ++r) {
    std::size_t c0 = 0;
    std::size_t row_h = 0;
    for (std::size_t c = 0; c < patches.grid; ++c) {
      const std::size_t j = r * patches.grid + c;
      const Tensor& p = out.patches[j];
      const std::size_t ph = p.dim(height_axis(p));
      const std::size_t pw = p.dim(width_axis(p));
      out.tiles[j] = {r0, c0, ph, pw};
      c0 += pw;
      row_h = ph;
    }
    if (r == 0) out.width = c0;
    r0 += row_h;
  }
  out.height = r0;
  return out;
}

Tensor merge_op(const PatchSet& patches, const std::optional<Conv2d>& phi2) {
  const std::size_t k = patches.grid;
  if (patches.patches.size() != k * k || patches.tiles.size() != k * k) {
    throw ShapeError("merge_op: expected " + std::to_string(k * k) + " tiles, got " +
                     std::to_string(patches.patches.size()));
  }
  // Tiles in one grid row share a height, tiles in one grid column a width, and
  // the extents add up to the target map.
  std::size_t total_h = 0;
  for (std::size_t r = 0; r < k; ++r) {
    std::size_t total_w = 0;
    for (std::size_t c = 0; c < k; ++c) {
      const std::size_t j = r * k + c;
      const auto& t = patches.tiles[j];
      const Tensor& p = patches.patches[j];
      if (p.dim(height_axis(p)) != t.height || p.dim(width_axis(p)) != t.width) {
        throw ShapeError("merge_op: tile " + std::to_string(j) + " has shape " +
                         shape_str(p.shape()) + " but its layout records " +
                         std::to_string(t.height) + "×" + std::to_string(t.width));
      }
      if (t.height != patches.tiles[r * k].height) {
        throw ShapeError("merge_op: tile " + std::to_string(j) + " height differs within its row");
      }
      if (t.width != patches.tiles[c].width) {
        throw ShapeError("merge_op: tile " + std::to_string(j) + " width differs within its column");
      }
      total_w += t.width;
    }
    if (total_w != patches.width) {
      throw ShapeError("merge_op: row " + std::to_string(r) + " spans " + std::to_string(total_w) +
                       " columns, expected " + std::to_string(patches.width));
    }
    total_h += patches.tiles[r * k].height;
  }
  if (total_h != patches.height) {
    throw ShapeError("merge_op: tiles span " + std::to_string(total_h) + " rows, expected " +
                     std::to_string(patches.height));
  }

  std::vector<Tensor> tiles = patches.patches;
  if (phi2) tiles = apply_shared(tiles, [&](const Tensor& t) { return (*phi2)(t); });
  const Tensor& first = tiles.front();
  std::vector<Tensor> bands;
  for (std::size_t r = 0; r < k; ++r) {
    std::vector<Tensor> row(tiles.begin() + static_cast<std::ptrdiff_t>(r * k),
                            tiles.begin() + static_cast<std::ptrdiff_t>((r + 1) * k));
    bands.push_back(k == 1 ? row.front() : ops::concat(row, width_axis(first)));
  }
  return k == 1 ? bands.front() : ops::concat(bands, height_axis(first));
}

PatchBranch PatchBranch::make(BranchSpec spec, const BackboneConfig& cfg, Rng& rng) {
  if (spec.stage < 2 || spec.stage > kNumStages) {
    throw ShapeError("patch branch: destruct stage " + std::to_string(spec.stage) +
                     " must be 2, 3 or 4");
  }
  PatchBranch b;
  b.spec = spec;
  const std::string name = "branch" + std::to_string(spec.stage);
  const std::size_t c1 = cfg.channels_after(spec.stage - 1);
  const std::size_t c2 = cfg.head_channels();
  b.phi1 = Conv2d::make(name + ".phi1", c1, c1, 3, 1, 1, rng);
  b.phi2 = Conv2d::make(name + ".phi2", c2, c2, 3, 1, 1, rng);
  for (Parameter* p : b.parameters()) p->new_layer = true;
  return b;
}

std::vector<Parameter*> PatchBranch::parameters() {
  return {&phi1.weight, &phi1.bias, &phi2.weight, &phi2.bias};
}

void validate_branches(const std::vector<BranchSpec>& specs, const BackboneConfig& cfg,
                       std::optional<std::size_t> input_side) {
  std::set<int> seen;
  for (const auto& s : specs) {
    if (s.stage < 2 || s.stage > kNumStages) {
      throw ShapeError("branch (" + std::to_string(s.stage) + "," + std::to_string(s.grid) +
                       "): destruct stage must be 2, 3 or 4");
    }
    if (!seen.insert(s.stage).second) {
      throw ShapeError("duplicate destruct stage " + std::to_string(s.stage));
    }
    if (s.grid == 0) throw ShapeError("branch at stage " + std::to_string(s.stage) + ": K must be >= 1");
    if (!input_side) continue;
    const std::size_t extent = cfg.extent_after(s.stage - 1, *input_side);
    if (s.grid > extent) {
      throw ShapeError("branch at stage " + std::to_string(s.stage) + ": K=" + std::to_string(s.grid) +
                       " exceeds the " + std::to_string(extent) + "×" + std::to_string(extent) +
                       " feature map");
    }
    const std::size_t stride = cfg.stride_between(s.stage, kNumStages);
    if (stride > 1) {
      if (extent % s.grid != 0 || (extent / s.grid) % stride != 0) {
        throw ShapeError("branch at stage " + std::to_string(s.stage) + ": K=" +
                         std::to_string(s.grid) + " does not split the " + std::to_string(extent) +
                         "-wide map into tiles aligned to stride " + std::to_string(stride));
      }
    }
  }
}

PatchNetwork::PatchNetwork(StagedBackbone backbone, std::vector<PatchBranch> branches, bool detach)
    : backbone_(std::move(backbone)), branches_(std::move(branches)), detach_(detach) {
  validate_branches(specs(), backbone_.config());
  const std::size_t want = backbone_.config().head_channels() * (1 + branches_.size());
  if (backbone_.head().in_channels() != want) {
    throw ShapeError("patch network: classifier takes " +
                     std::to_string(backbone_.head().in_channels()) + " channels but the fused feature has " +
                     std::to_string(want));
  }
}

std::vector<BranchSpec> PatchNetwork::specs() const {
  std::vector<BranchSpec> out;
  for (const auto& b : branches_) out.push_back(b.spec);
  return out;
}

BranchOutputs PatchNetwork::forward(const Tensor& images, const std::vector<bool>* live) const {
  if (live != nullptr && live->size() != 1 + branches_.size()) {
    throw ShapeError("forward: live mask needs " + std::to_string(1 + branches_.size()) + " entries");
  }
  const auto& cfg = backbone_.config();
  // Activations after every block; branch l taps the one before its stage.
  std::vector<Tensor> acts;
  acts.push_back(backbone_.forward_to_stage(images, kStem));
  for (int b = 1; b <= kNumStages; ++b) acts.push_back(backbone_.run_blocks(acts.back(), b, b));

  BranchOutputs out;
  out.f_hat = acts.back();
  std::vector<Tensor> segments;
  const bool hat_live = live == nullptr || (*live)[0];
  segments.push_back(hat_live ? out.f_hat : ops::stop_gradient(out.f_hat));

  for (std::size_t l = 0; l < branches_.size(); ++l) {
    const auto& br = branches_[l];
    Tensor input = acts[static_cast<std::size_t>(br.spec.stage - 1)];
    if (detach_) input = ops::stop_gradient(input);
    PatchSet tiles = patch_op(input, br.spec.grid, br.phi1);
    const int first = br.spec.stage;
    tiles = process_patches(
        tiles, [&](const Tensor& t) { return backbone_.run_blocks(t, first, kNumStages); },
        cfg.stride_between(first, kNumStages));
    Tensor merged = merge_op(tiles, br.phi2);
    out.f_tilde.push_back(merged);
    const bool seg_live = live == nullptr || (*live)[l + 1];
    segments.push_back(seg_live ? merged : ops::stop_gradient(merged));
  }
  const std::size_t channel_axis = images.rank() == 4 ? 1 : 0;
  out.fused = segments.size() == 1 ? segments.front() : ops::concat(segments, channel_axis);
  out.logits = backbone_.head().classify(out.fused);
  return out;
}

std::vector<Parameter*> PatchNetwork::parameters() {
  std::vector<Parameter*> out = backbone_.parameters();
  for (auto& b : branches_) {
    for (Parameter* p : b.parameters()) out.push_back(p);
  }
  return out;
}

BranchOutputs dual_branch_forward(const Tensor& image, const PatchNetwork& net) {
  if (net.branches().size() != 1) {
    throw ShapeError("dual_branch_forward: network has " + std::to_string(net.branches().size()) +
                     " patch branches, expected 1");
  }
  return net.forward(image);
}

BranchOutputs explicit_forward(const Tensor& image, const PatchNetwork& net,
                               const std::vector<bool>* live) {
  if (!net.detached() && !net.branches().empty()) {
    throw ShapeError("explicit_forward: network branches are not detached");
  }
  return net.forward(image, live);
}

}  // namespace ppl
