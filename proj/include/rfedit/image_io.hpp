#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "rfedit/latent_grid.hpp"

namespace rfedit {

/// [-1, 1] -> {0..255}: round((x + 1) * 127.5), clamped.
std::uint8_t to_byte(double x);
/// {0..255} -> [-1, 1]: b / 127.5 - 1.
double from_byte(std::uint8_t b);

/// 8-bit RGB (3 channels) or grayscale (1 channel) PNG.
void write_png(const std::filesystem::path& path, const LatentGrid& image);
/// Returns a 3-channel image; grayscale and alpha inputs are converted.
LatentGrid read_png(const std::filesystem::path& path);

/// Binary mask as an 8-bit grayscale PNG (0 / 255).
void write_mask_png(const std::filesystem::path& path, const std::vector<std::uint8_t>& mask,
                    int height, int width);
/// Pixels >= 128 become 1. Reports the image size through `height`/`width`.
std::vector<std::uint8_t> read_mask_png(const std::filesystem::path& path, int& height,
                                        int& width);

}  // namespace rfedit
