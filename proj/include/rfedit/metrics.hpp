#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "rfedit/latent_grid.hpp"

namespace rfedit {

/// Images live in [-1, 1], so the data range is 2.
inline constexpr double kDataRange = 2.0;
/// Reported for identical images and as an upper cap.
inline constexpr double kPsnrCap = 99.0;

double psnr(const LatentGrid& a, const LatentGrid& b, double range = kDataRange);
/// PSNR over pixels where `exclude` (height * width entries) is zero. Throws
/// InvalidArgument when every pixel is excluded.
double psnr_outside(const LatentGrid& a, const LatentGrid& b,
                    const std::vector<std::uint8_t>& exclude, double range = kDataRange);

/// Mean SSIM over channels and all positions where an 11x11 Gaussian window
/// (sigma 1.5) fits; C1 = (0.01 L)^2, C2 = (0.03 L)^2.
double ssim(const LatentGrid& a, const LatentGrid& b, double range = kDataRange);
/// Mean of the SSIM map over window centers where `exclude` is zero.
double ssim_outside(const LatentGrid& a, const LatentGrid& b,
                    const std::vector<std::uint8_t>& exclude, double range = kDataRange);

/// Chroma-weighted circular mean hue (degrees) of the pixels where `region`
/// is set; negative when those pixels carry no chroma.
double region_hue(const LatentGrid& image, const std::vector<std::uint8_t>& region);

/// Palette color whose hue is nearest (circularly) to the region's mean hue.
/// Empty string when the region is achromatic.
std::string dominant_color(const LatentGrid& image, const std::vector<std::uint8_t>& region);

/// True when dominant_color over `region` is `target_color`.
bool edit_success(const LatentGrid& edited, const std::vector<std::uint8_t>& region,
                  const std::string& target_color);

}  // namespace rfedit
