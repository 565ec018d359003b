#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "ppl/image.hpp"

namespace ppl {

/// 8-bit label image. Value 0 is background, 255 is "ignore".
struct LabelImage {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint8_t> labels;

  std::uint8_t at(std::size_t y, std::size_t x) const { return labels[y * width + x]; }
  bool operator==(const LabelImage&) const = default;
};

inline constexpr std::uint8_t kIgnoreLabel = 255;

using Rgb = std::array<std::uint8_t, 3>;

/// PASCAL-VOC style colour for a label id: index 0 black, 255 white-ish.
Rgb palette_color(std::uint8_t label);

/// Writes a 3×H×W image with values in [0,1] as 8-bit RGB (rounded).
void write_rgb_png(const std::filesystem::path& path, const Tensor& image);
/// Reads any 8-bit PNG as RGB scaled to [0,1].
Tensor read_rgb_png(const std::filesystem::path& path);

/// Single-channel palette PNG; pixel values are label ids.
void write_label_png(const std::filesystem::path& path, const LabelImage& mask);
/// Accepts palette or 8-bit grayscale PNGs and returns the raw indices.
LabelImage read_label_png(const std::filesystem::path& path);

/// Jet-coloured rendering of a map whose values lie in [0,1].
void write_heatmap_png(const std::filesystem::path& path, const Map2d& map);

}  // namespace ppl
