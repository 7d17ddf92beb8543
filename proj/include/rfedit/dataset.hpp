#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "rfedit/latent_grid.hpp"
#include "rfedit/rng.hpp"

namespace rfedit {

struct PaletteColor {
  std::string name;
  std::array<double, 3> rgb;  ///< in [0, 1]
  double hue() const;         ///< degrees in [0, 360)
};

/// The fixed 8-color palette.
const std::vector<PaletteColor>& palette();
const std::vector<std::string>& shape_names();     ///< circle, square, triangle
const std::vector<std::string>& position_names();  ///< left, right, top, bottom, center

int palette_index(std::string_view color);  ///< -1 when absent

struct ShapeAttributes {
  int color = 0;
  int shape = 0;
  int position = 0;
  int count = 1;
  double size = 6.0;     ///< half extent in pixels
  double offset_x = 0.0; ///< jitter around the position anchor
  double offset_y = 0.0;
  double background = 0.5;  ///< gray level in [0, 1]
};

struct ShapesSample {
  LatentGrid image;            ///< 3 x S x S in [-1, 1]
  std::string caption;         ///< "a {color} {shape} on the {position}"
  std::vector<std::uint8_t> mask;  ///< S x S, 1 where the shape covers the pixel
  ShapeAttributes attributes;
};

std::string caption_for(const ShapeAttributes& a);

/// Renders one anti-aliased shape (4x4 supersampling) on a flat background.
/// The mask marks every pixel with non-zero coverage.
ShapesSample render_sample(const ShapeAttributes& attributes, int image_size = 32);

/// Uniform color/shape/position, size in [0.16, 0.22] of the image,
/// +-1.5 px jitter, gray background in [0.35, 0.65].
ShapeAttributes random_attributes(Rng& rng, int image_size = 32);
/// Deterministic in `seed`; attributes drawn uniformly.
std::vector<ShapesSample> generate_dataset(int n, std::uint64_t seed, int image_size = 32);

/// SHA-256 over captions and pixel bytes.
std::string dataset_hash(const std::vector<ShapesSample>& samples);

}  // namespace rfedit
