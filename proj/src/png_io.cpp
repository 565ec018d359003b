#include "ppl/png_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>
#include <stdexcept>

namespace ppl {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

FilePtr open_file(const std::filesystem::path& path, const char* mode) {
  FilePtr f(std::fopen(path.c_str(), mode));
  if (!f) throw std::runtime_error("cannot open " + path.string());
  return f;
}

[[noreturn]] void png_fail(png_structp, png_const_charp msg) { throw std::runtime_error(msg); }
void png_warn(png_structp, png_const_charp) {}

class PngWriter {
 public:
  explicit PngWriter(const std::filesystem::path& path) : file_(open_file(path, "wb")), path_(path) {
    png_ = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, png_fail, png_warn);
    info_ = png_create_info_struct(png_);
    png_init_io(png_, file_.get());
  }
  ~PngWriter() { png_destroy_write_struct(&png_, &info_); }

  void write(std::size_t h, std::size_t w, int color_type, const std::vector<std::uint8_t>& rows,
             std::size_t row_bytes, const std::vector<png_color>& palette = {}) {
    png_set_IHDR(png_, info_, static_cast<png_uint_32>(w), static_cast<png_uint_32>(h), 8, color_type,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    if (!palette.empty()) {
      png_set_PLTE(png_, info_, palette.data(), static_cast<int>(palette.size()));
    }
    png_write_info(png_, info_);
    for (std::size_t y = 0; y < h; ++y) {
      png_write_row(png_, rows.data() + y * row_bytes);
    }
    png_write_end(png_, nullptr);
  }

 private:
  FilePtr file_;
  std::filesystem::path path_;
  png_structp png_ = nullptr;
  png_infop info_ = nullptr;
};

struct RawPng {
  std::size_t height = 0;
  std::size_t width = 0;
  int color_type = 0;
  int channels = 0;
  std::vector<std::uint8_t> pixels;
};

RawPng read_png(const std::filesystem::path& path, bool expand_to_rgb) {
  FilePtr file = open_file(path, "rb");
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, png_fail, png_warn);
  png_infop info = png_create_info_struct(png);
  RawPng raw;
  try {
    png_init_io(png, file.get());
    png_read_info(png, info);
    raw.color_type = png_get_color_type(png, info);
    const int depth = png_get_bit_depth(png, info);
    if (depth == 16) png_set_strip_16(png);
    if (depth < 8) png_set_packing(png);
    if (expand_to_rgb) {
      if (raw.color_type == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
      if (raw.color_type == PNG_COLOR_TYPE_GRAY || raw.color_type == PNG_COLOR_TYPE_GRAY_ALPHA) {
        png_set_gray_to_rgb(png);
      }
      if (raw.color_type & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
    }
    png_read_update_info(png, info);
    raw.height = png_get_image_height(png, info);
    raw.width = png_get_image_width(png, info);
    raw.channels = png_get_channels(png, info);
    const std::size_t row_bytes = png_get_rowbytes(png, info);
    raw.pixels.resize(row_bytes * raw.height);
    for (std::size_t y = 0; y < raw.height; ++y) png_read_row(png, raw.pixels.data() + y * row_bytes, nullptr);
  } catch (const std::exception& e) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw std::runtime_error(path.string() + ": " + e.what());
  }
  png_destroy_read_struct(&png, &info, nullptr);
  return raw;
}

std::uint8_t to_byte(double v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

}  // namespace

Rgb palette_color(std::uint8_t label) {
  if (label == kIgnoreLabel) return {224, 224, 192};
  Rgb c{0, 0, 0};
  unsigned id = label;
  for (int shift = 7; shift >= 0 && id; --shift) {
    c[0] |= static_cast<std::uint8_t>(((id >> 0) & 1) << shift);
    c[1] |= static_cast<std::uint8_t>(((id >> 1) & 1) << shift);
    c[2] |= static_cast<std::uint8_t>(((id >> 2) & 1) << shift);
    id >>= 3;
  }
  return c;
}

void write_rgb_png(const std::filesystem::path& path, const Tensor& image) {
  if (image.rank() != 3 || image.dim(0) != 3) {
    throw ShapeError("write_rgb_png: expected 3×H×W, got " + shape_str(image.shape()));
  }
  const std::size_t h = image.dim(1);
  const std::size_t w = image.dim(2);
  std::vector<std::uint8_t> rows(h * w * 3);
  auto src = image.data();
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      for (std::size_t c = 0; c < 3; ++c) rows[(y * w + x) * 3 + c] = to_byte(src[(c * h + y) * w + x]);
    }
  }
  PngWriter(path).write(h, w, PNG_COLOR_TYPE_RGB, rows, w * 3);
}

Tensor read_rgb_png(const std::filesystem::path& path) {
  RawPng raw = read_png(path, true);
  if (raw.channels != 3) throw std::runtime_error(path.string() + ": could not decode as RGB");
  Tensor out({3, raw.height, raw.width});
  auto dst = out.mutable_data();
  for (std::size_t y = 0; y < raw.height; ++y) {
    for (std::size_t x = 0; x < raw.width; ++x) {
      for (std::size_t c = 0; c < 3; ++c) {
        dst[(c * raw.height + y) * raw.width + x] =
            static_cast<Real>(raw.pixels[(y * raw.width + x) * 3 + c]) / Real(255);
      }
    }
  }
  return out;
}

void write_label_png(const std::filesystem::path& path, const LabelImage& mask) {
  std::vector<png_color> palette(256);
  for (int i = 0; i < 256; ++i) {
    const Rgb c = palette_color(static_cast<std::uint8_t>(i));
    palette[i] = {c[0], c[1], c[2]};
  }
  PngWriter(path).write(mask.height, mask.width, PNG_COLOR_TYPE_PALETTE, mask.labels, mask.width, palette);
}

LabelImage read_label_png(const std::filesystem::path& path) {
  RawPng raw = read_png(path, false);
  if (raw.channels != 1 ||
      (raw.color_type != PNG_COLOR_TYPE_PALETTE && raw.color_type != PNG_COLOR_TYPE_GRAY)) {
    throw std::runtime_error(path.string() + ": label masks must be palette or 8-bit grayscale PNGs");
  }
  return {raw.height, raw.width, std::move(raw.pixels)};
}

void write_heatmap_png(const std::filesystem::path& path, const Map2d& map) {
  std::vector<std::uint8_t> rows(map.height * map.width * 3);
  for (std::size_t i = 0; i < map.values.size(); ++i) {
    const double v = std::clamp<double>(map.values[i], 0.0, 1.0);
    // jet: blue -> cyan -> yellow -> red
    const double r = std::clamp(1.5 - std::abs(4.0 * v - 3.0), 0.0, 1.0);
    const double g = std::clamp(1.5 - std::abs(4.0 * v - 2.0), 0.0, 1.0);
    const double b = std::clamp(1.5 - std::abs(4.0 * v - 1.0), 0.0, 1.0);
    rows[i * 3] = to_byte(r);
    rows[i * 3 + 1] = to_byte(g);
    rows[i * 3 + 2] = to_byte(b);
  }
  PngWriter(path).write(map.height, map.width, PNG_COLOR_TYPE_RGB, rows, map.width * 3);
}

}  // namespace ppl
