#pragma once

#include <cstdint>
#include <string_view>
#include <vector>

#include "rfedit/latent_grid.hpp"
#include "rfedit/mask.hpp"

namespace rfedit {

/// Spatial region over which adain measures channel moments.
enum class MomentScope { global, masked };

MomentScope parse_moment_scope(std::string_view s);
const char* to_string(MomentScope s);

struct ShiftParams {
  double beta = 0.25;
  double epsilon = 1e-6;
  std::uint64_t seed = 0;
  MomentScope scope = MomentScope::global;

  void validate() const;
};

struct ChannelMoments {
  std::vector<double> mean;
  std::vector<double> stddev;  ///< population
};

/// Throws InvalidArgument for channels with fewer than two spatial positions.
ChannelMoments channel_moments(const LatentGrid& z);
/// Moments over pixels where `region` is nonzero (height * width entries).
ChannelMoments channel_moments(const LatentGrid& z, const std::vector<std::uint8_t>& region);

/// Per channel: sigma(ref) * (z - mu(z)) / (sigma(z) + epsilon) + mu(ref).
LatentGrid adain(const LatentGrid& z, const LatentGrid& ref, double epsilon = 1e-6);
/// Same map with moments taken from precomputed statistics.
LatentGrid adain(const LatentGrid& z, const ChannelMoments& z_stats,
                 const ChannelMoments& ref_stats, double epsilon);

/// Standard-normal tensor of `shape` drawn from `seed`, channel-major order.
LatentGrid standard_noise(GridShape shape, std::uint64_t seed);

/// Inside the pixel view of `mask`: beta * adain(z, noise) + (1 - beta) * z.
/// Outside it the input is returned untouched.
LatentGrid latents_shift(const LatentGrid& z, const EditMask& mask, const ShiftParams& params);

}  // namespace rfedit
