#include "ppl/image.hpp"

#include <cmath>

namespace ppl {

std::vector<Real> resize_bilinear(std::span<const Real> plane, std::size_t height, std::size_t width,
                                  std::size_t out_height, std::size_t out_width) {
  if (plane.size() != height * width) throw ShapeError("resize_bilinear: plane size mismatch");
  if (out_height == 0 || out_width == 0) throw ShapeError("resize_bilinear: empty output");
  std::vector<Real> out(out_height * out_width);
  const double sy = out_height > 1 ? double(height - 1) / double(out_height - 1) : 0.0;
  const double sx = out_width > 1 ? double(width - 1) / double(out_width - 1) : 0.0;
  for (std::size_t y = 0; y < out_height; ++y) {
    const double fy = y * sy;
    const auto y0 = std::min(static_cast<std::size_t>(fy), height - 1);
    const std::size_t y1 = std::min(y0 + 1, height - 1);
    const double wy = fy - static_cast<double>(y0);
    for (std::size_t x = 0; x < out_width; ++x) {
      const double fx = x * sx;
      const auto x0 = std::min(static_cast<std::size_t>(fx), width - 1);
      const std::size_t x1 = std::min(x0 + 1, width - 1);
      const double wx = fx - static_cast<double>(x0);
      const double top = plane[y0 * width + x0] * (1 - wx) + plane[y0 * width + x1] * wx;
      const double bot = plane[y1 * width + x0] * (1 - wx) + plane[y1 * width + x1] * wx;
      out[y * out_width + x] = static_cast<Real>(top * (1 - wy) + bot * wy);
    }
  }
  return out;
}

Map2d resize_bilinear(const Map2d& map, std::size_t out_height, std::size_t out_width) {
  Map2d out;
  out.height = out_height;
  out.width = out_width;
  out.values = resize_bilinear(map.values, map.height, map.width, out_height, out_width);
  return out;
}

Tensor resize_image(const Tensor& image, std::size_t out_height, std::size_t out_width) {
  if (image.rank() != 3) throw ShapeError("resize_image: expected C×H×W, got " + shape_str(image.shape()));
  const std::size_t c = image.dim(0);
  const std::size_t h = image.dim(1);
  const std::size_t w = image.dim(2);
  if (h == out_height && w == out_width) return image.clone();
  std::vector<Real> out;
  out.reserve(c * out_height * out_width);
  for (std::size_t ch = 0; ch < c; ++ch) {
    auto plane = resize_bilinear(image.data().subspan(ch * h * w, h * w), h, w, out_height, out_width);
    out.insert(out.end(), plane.begin(), plane.end());
  }
  return Tensor({c, out_height, out_width}, std::move(out));
}

Tensor flip_horizontal(const Tensor& image) {
  const std::size_t c = image.dim(0);
  const std::size_t h = image.dim(1);
  const std::size_t w = image.dim(2);
  std::vector<Real> out(image.numel());
  auto src = image.data();
  for (std::size_t i = 0; i < c * h; ++i) {
    for (std::size_t x = 0; x < w; ++x) out[i * w + x] = src[i * w + (w - 1 - x)];
  }
  return Tensor(image.shape(), std::move(out));
}

Tensor crop_or_pad(const Tensor& image, std::ptrdiff_t top, std::ptrdiff_t left,
                   std::size_t out_height, std::size_t out_width, Real fill) {
  const std::size_t c = image.dim(0);
  const auto h = static_cast<std::ptrdiff_t>(image.dim(1));
  const auto w = static_cast<std::ptrdiff_t>(image.dim(2));
  Tensor out({c, out_height, out_width}, fill);
  auto dst = out.mutable_data();
  auto src = image.data();
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t y = 0; y < out_height; ++y) {
      const std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(y) + top;
      if (sy < 0 || sy >= h) continue;
      for (std::size_t x = 0; x < out_width; ++x) {
        const std::ptrdiff_t sx = static_cast<std::ptrdiff_t>(x) + left;
        if (sx < 0 || sx >= w) continue;
        dst[(ch * out_height + y) * out_width + x] = src[(ch * h + sy) * w + sx];
      }
    }
  }
  return out;
}

}  // namespace ppl
