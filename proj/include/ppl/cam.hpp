#pragma once

#include <filesystem>
#include <vector>

#include "json.hpp"

#include "ppl/data.hpp"
#include "ppl/image.hpp"
#include "ppl/patchlearn.hpp"

namespace ppl {

/// Per-class activation maps for the classes present in one image.
struct CamStack {
  std::vector<std::size_t> classes;  // class indices (0-based), ascending
  std::vector<Map2d> maps;           // one per entry of `classes`
  bool normalized = false;

  std::size_t height() const { return maps.empty() ? 0 : maps.front().height; }
  std::size_t width() const { return maps.empty() ? 0 : maps.front().width; }
};

struct PseudoMask {
  LabelImage mask;  // 0 background, class index + 1 otherwise
  double tau = 0;
};

inline constexpr double kDefaultTau = 0.2;

/// Σ_k ω(k, c) · F(k, y, x) over a C×h×w (or 1×C×h×w) feature; bias excluded.
/// `omega` is classes × C.
Map2d raw_cam(const Tensor& feature, const Tensor& omega, std::size_t cls);

/// Clamp negatives to zero, then divide by the maximum. A map without positive
/// values becomes all zeros.
Map2d normalize_cam(const Map2d& map);

/// Classifier weights for fused segment `segment` (0 = global branch).
Tensor segment_weights(const PatchNetwork& net, std::size_t segment);

/// Raw CAMs for every fused segment of one forward pass, for `classes`.
std::vector<CamStack> segment_cams(const PatchNetwork& net, const Tensor& image,
                                   const std::vector<std::size_t>& classes);

/// Multi-scale CAMs per fused segment: each scale resizes the image, runs the
/// network, resizes the raw maps to the scale-1 grid, and the maps are summed
/// over scales then normalized.
std::vector<CamStack> fuse_scales(const Tensor& image, const PatchNetwork& net,
                                  const std::vector<double>& scales,
                                  const std::vector<std::size_t>& classes);

/// Elementwise mean of normalized stacks, re-normalized.
CamStack average_branch_cams(const std::vector<CamStack>& stacks);

/// Resizes every map and re-normalizes.
CamStack upsample(const CamStack& stack, std::size_t height, std::size_t width);

/// Per pixel: argmax over classes (lowest class wins ties); the class is
/// assigned when that score ≥ τ, else background.
PseudoMask threshold_to_mask(const CamStack& stack, double tau);

/// Full inference for one image: multi-scale, branch average, upsampled to
/// the image resolution and normalized.
CamStack infer_cam(const PatchNetwork& net, const Tensor& image, const LabelVector& labels,
                   const std::vector<double>& scales);

std::vector<std::size_t> present_classes(const LabelVector& labels);

/// CAM container: tensor "cam" (classes × H × W) plus meta {"classes",
/// "height", "width", "normalized", ...caller keys}.
void write_cam_file(const std::filesystem::path& path, const CamStack& stack,
                    const nlohmann::json& meta = nlohmann::json::object());
CamStack read_cam_file(const std::filesystem::path& path, nlohmann::json* meta = nullptr);

/// Per-pixel maximum over classes rendered with the jet colormap.
void write_cam_heatmap(const std::filesystem::path& path, const CamStack& stack);

}  // namespace ppl
