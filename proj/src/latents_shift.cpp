#include "rfedit/latents_shift.hpp"

#include <cmath>

#include "rfedit/error.hpp"
#include "rfedit/rng.hpp"

namespace rfedit {

MomentScope parse_moment_scope(std::string_view s) {
  if (s == "global") return MomentScope::global;
  if (s == "masked") return MomentScope::masked;
  throw InvalidArgument("unknown moment scope '" + std::string(s) + "'");
}

const char* to_string(MomentScope s) { return s == MomentScope::global ? "global" : "masked"; }

void ShiftParams::validate() const {
  if (!(beta >= 0.0 && beta <= 1.0)) throw InvalidArgument("beta must lie in [0, 1]");
  if (!(epsilon > 0.0)) throw InvalidArgument("epsilon must be positive");
}

ChannelMoments channel_moments(const LatentGrid& z) {
  return channel_moments(z, std::vector<std::uint8_t>(z.shape().plane(), 1));
}

ChannelMoments channel_moments(const LatentGrid& z, const std::vector<std::uint8_t>& region) {
  const auto& s = z.shape();
  if (region.size() != s.plane())
    throw ShapeError("channel_moments: region has " + std::to_string(region.size()) +
                     " entries, expected " + std::to_string(s.plane()));
  std::size_t n = 0;
  for (auto r : region) n += r != 0;
  if (n < 2) throw InvalidArgument("channel_moments: need at least two spatial positions");
  ChannelMoments m{std::vector<double>(s.channels), std::vector<double>(s.channels)};
  for (int c = 0; c < s.channels; ++c) {
    const auto ch = z.channel(c);
    double sum = 0.0;
    for (std::size_t i = 0; i < ch.size(); ++i)
      if (region[i]) sum += ch[i];
    const double mu = sum / static_cast<double>(n);
    double var = 0.0;
    for (std::size_t i = 0; i < ch.size(); ++i)
      if (region[i]) var += (ch[i] - mu) * (ch[i] - mu);
    m.mean[c] = mu;
    m.stddev[c] = std::sqrt(var / static_cast<double>(n));
  }
  return m;
}

LatentGrid adain(const LatentGrid& z, const ChannelMoments& zs, const ChannelMoments& rs,
                 double epsilon) {
  const auto& s = z.shape();
  if (zs.mean.size() != static_cast<std::size_t>(s.channels) ||
      rs.mean.size() != static_cast<std::size_t>(s.channels))
    throw ShapeError("adain: moment count does not match channels");
  LatentGrid out(s);
  const std::size_t plane = s.plane();
  for (int c = 0; c < s.channels; ++c) {
    const double scale = rs.stddev[c] / (zs.stddev[c] + epsilon);
    for (std::size_t i = 0; i < plane; ++i) {
      const std::size_t k = c * plane + i;
      out[k] = scale * (z[k] - zs.mean[c]) + rs.mean[c];
    }
  }
  return out;
}

LatentGrid adain(const LatentGrid& z, const LatentGrid& ref, double epsilon) {
  require_same_shape(z, ref, "adain");
  return adain(z, channel_moments(z), channel_moments(ref), epsilon);
}

LatentGrid standard_noise(GridShape shape, std::uint64_t seed) {
  Rng rng(seed);
  LatentGrid out(shape);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = rng.normal();
  return out;
}

LatentGrid latents_shift(const LatentGrid& z, const EditMask& mask, const ShiftParams& params) {
  params.validate();
  const auto& s = z.shape();
  if (mask.grid_h() <= 0 || s.height % mask.grid_h() != 0 || s.width % mask.grid_w() != 0 ||
      s.height / mask.grid_h() != s.width / mask.grid_w())
    throw ShapeError("latents_shift: mask grid " + std::to_string(mask.grid_h()) + "x" +
                     std::to_string(mask.grid_w()) + " does not tile latent " + s.str());
  if (params.beta == 0.0 || mask.empty()) return z;
  const auto region = mask.pixels(s.height / mask.grid_h());
  const LatentGrid noise = standard_noise(s, params.seed);
  const LatentGrid shifted =
      params.scope == MomentScope::global
          ? adain(z, channel_moments(z), channel_moments(noise), params.epsilon)
          : adain(z, channel_moments(z, region), channel_moments(noise, region), params.epsilon);
  LatentGrid out = z;
  const std::size_t plane = s.plane();
  for (int c = 0; c < s.channels; ++c)
    for (std::size_t i = 0; i < plane; ++i) {
      if (!region[i]) continue;
      const std::size_t k = c * plane + i;
      out[k] = params.beta * shifted[k] + (1.0 - params.beta) * z[k];
    }
  return out;
}

}  // namespace rfedit
