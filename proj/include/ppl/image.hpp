#pragma once

#include <span>
#include <vector>

#include "ppl/tensor.hpp"

namespace ppl {

/// Single-channel H×W map, row-major.
struct Map2d {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<Real> values;

  Map2d() = default;
  Map2d(std::size_t h, std::size_t w, Real fill = Real(0)) : height(h), width(w), values(h * w, fill) {}

  Real& at(std::size_t y, std::size_t x) { return values[y * width + x]; }
  Real at(std::size_t y, std::size_t x) const { return values[y * width + x]; }
  bool operator==(const Map2d&) const = default;
};

/// Bilinear resampling with corner-aligned sampling: output corners land exactly
/// on input corners, src = dst · (in − 1) / (out − 1).
std::vector<Real> resize_bilinear(std::span<const Real> plane, std::size_t height, std::size_t width,
                                  std::size_t out_height, std::size_t out_width);
Map2d resize_bilinear(const Map2d& map, std::size_t out_height, std::size_t out_width);
/// Per-channel resize of a C×H×W image.
Tensor resize_image(const Tensor& image, std::size_t out_height, std::size_t out_width);

Tensor flip_horizontal(const Tensor& image);

/// Copies `image` into a canvas of out_height×out_width filled with `fill`;
/// the output pixel (y, x) reads the source at (y + top, x + left), so
/// negative offsets pad.
Tensor crop_or_pad(const Tensor& image, std::ptrdiff_t top, std::ptrdiff_t left,
                   std::size_t out_height, std::size_t out_width, Real fill = Real(0));

}  // namespace ppl
