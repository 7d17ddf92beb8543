#include "rfedit/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>

#include "rfedit/error.hpp"

namespace rfedit {

std::uint8_t to_byte(double x) {
  const double v = std::round((std::clamp(x, -1.0, 1.0) + 1.0) * 127.5);
  return static_cast<std::uint8_t>(std::clamp(v, 0.0, 255.0));
}

double from_byte(std::uint8_t b) { return b / 127.5 - 1.0; }

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const { std::fclose(f); }
};
using File = std::unique_ptr<std::FILE, FileCloser>;

File open_file(const std::filesystem::path& path, const char* mode) {
  File f(std::fopen(path.c_str(), mode));
  if (!f) throw Error("cannot open '" + path.string() + "'");
  return f;
}

// Rows of `channels` interleaved bytes.
void write_raw(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes,
               int height, int width, int channels) {
  File f = open_file(path, "wb");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw Error("libpng initialization failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw Error("failed to write PNG '" + path.string() + "'");
  }
  png_init_io(png, f.get());
  png_set_IHDR(png, info, width, height, 8, channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int y = 0; y < height; ++y)
    png_write_row(png, const_cast<png_bytep>(bytes.data() + static_cast<std::size_t>(y) * width * channels));
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

// Decodes to 8-bit RGB or gray (alpha stripped).
std::vector<std::uint8_t> read_raw(const std::filesystem::path& path, int& height, int& width,
                                   int& channels) {
  File f = open_file(path, "rb");
  png_byte sig[8];
  if (std::fread(sig, 1, 8, f.get()) != 8 || png_sig_cmp(sig, 0, 8))
    throw FormatError("'" + path.string() + "' is not a PNG file");
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw Error("libpng initialization failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw FormatError("corrupt PNG '" + path.string() + "'");
  }
  png_init_io(png, f.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);
  png_set_strip_16(png);
  png_set_strip_alpha(png);
  png_set_packing(png);
  png_set_palette_to_rgb(png);
  const auto color = png_get_color_type(png, info);
  if (color == PNG_COLOR_TYPE_GRAY && png_get_bit_depth(png, info) < 8)
    png_set_expand_gray_1_2_4_to_8(png);
  png_read_update_info(png, info);
  width = static_cast<int>(png_get_image_width(png, info));
  height = static_cast<int>(png_get_image_height(png, info));
  channels = png_get_channels(png, info);
  std::vector<std::uint8_t> bytes(static_cast<std::size_t>(height) * width * channels);
  for (int y = 0; y < height; ++y)
    png_read_row(png, bytes.data() + static_cast<std::size_t>(y) * width * channels, nullptr);
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return bytes;
}

}  // namespace

void write_png(const std::filesystem::path& path, const LatentGrid& image) {
  const auto& s = image.shape();
  if (s.channels != 3 && s.channels != 1)
    throw ShapeError("write_png: need 1 or 3 channels, got " + s.str());
  std::vector<std::uint8_t> bytes(s.size());
  for (int y = 0; y < s.height; ++y)
    for (int x = 0; x < s.width; ++x)
      for (int c = 0; c < s.channels; ++c)
        bytes[(static_cast<std::size_t>(y) * s.width + x) * s.channels + c] =
            to_byte(image.at(c, y, x));
  write_raw(path, bytes, s.height, s.width, s.channels);
}

LatentGrid read_png(const std::filesystem::path& path) {
  int h = 0, w = 0, ch = 0;
  const auto bytes = read_raw(path, h, w, ch);
  LatentGrid out({3, h, w});
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c)
        out.at(c, y, x) =
            from_byte(bytes[(static_cast<std::size_t>(y) * w + x) * ch + (ch == 1 ? 0 : c)]);
  return out;
}

void write_mask_png(const std::filesystem::path& path, const std::vector<std::uint8_t>& mask,
                    int height, int width) {
  if (mask.size() != static_cast<std::size_t>(height) * width)
    throw ShapeError("write_mask_png: mask size does not match dimensions");
  std::vector<std::uint8_t> bytes(mask.size());
  std::transform(mask.begin(), mask.end(), bytes.begin(),
                 [](std::uint8_t m) { return m ? std::uint8_t{255} : std::uint8_t{0}; });
  write_raw(path, bytes, height, width, 1);
}

std::vector<std::uint8_t> read_mask_png(const std::filesystem::path& path, int& height,
                                        int& width) {
  int ch = 0;
  const auto bytes = read_raw(path, height, width, ch);
  std::vector<std::uint8_t> mask(static_cast<std::size_t>(height) * width);
  for (std::size_t i = 0; i < mask.size(); ++i) mask[i] = bytes[i * ch] >= 128 ? 1 : 0;
  return mask;
}

}  // namespace rfedit
