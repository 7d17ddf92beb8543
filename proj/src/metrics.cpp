#include "rfedit/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "rfedit/dataset.hpp"
#include "rfedit/error.hpp"

namespace rfedit {

namespace {

void check_region(const LatentGrid& a, const std::vector<std::uint8_t>& region, const char* what) {
  if (region.size() != a.shape().plane())
    throw ShapeError(std::string(what) + ": mask has " + std::to_string(region.size()) +
                     " pixels, image has " + std::to_string(a.shape().plane()));
}

double psnr_from_mse(double mse, double range) {
  if (mse <= 0.0) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(range * range / mse));
}

constexpr int kWindow = 11;
constexpr double kSigma = 1.5;

std::vector<double> gaussian_window() {
  std::vector<double> w(kWindow);
  double sum = 0.0;
  for (int i = 0; i < kWindow; ++i) {
    const double d = i - kWindow / 2;
    w[i] = std::exp(-d * d / (2.0 * kSigma * kSigma));
    sum += w[i];
  }
  for (auto& x : w) x /= sum;
  return w;
}

// SSIM map over valid window positions, (H - 10) x (W - 10) per channel,
// channel-major.
std::vector<double> ssim_map(const LatentGrid& a, const LatentGrid& b, double range) {
  require_same_shape(a, b, "ssim");
  const auto& s = a.shape();
  if (s.height < kWindow || s.width < kWindow)
    throw InvalidArgument("ssim needs images of at least 11x11 pixels");
  const auto w = gaussian_window();
  const double c1 = (0.01 * range) * (0.01 * range);
  const double c2 = (0.03 * range) * (0.03 * range);
  const int oh = s.height - kWindow + 1, ow = s.width - kWindow + 1;
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(s.channels) * oh * ow);
  for (int c = 0; c < s.channels; ++c)
    for (int y = 0; y < oh; ++y)
      for (int x = 0; x < ow; ++x) {
        double ma = 0, mb = 0, aa = 0, bb = 0, ab = 0;
        for (int dy = 0; dy < kWindow; ++dy)
          for (int dx = 0; dx < kWindow; ++dx) {
            const double k = w[dy] * w[dx];
            const double va = a.at(c, y + dy, x + dx), vb = b.at(c, y + dy, x + dx);
            ma += k * va;
            mb += k * vb;
            aa += k * va * va;
            bb += k * vb * vb;
            ab += k * va * vb;
          }
        const double va = aa - ma * ma, vb = bb - mb * mb, cov = ab - ma * mb;
        out.push_back(((2 * ma * mb + c1) * (2 * cov + c2)) /
                      ((ma * ma + mb * mb + c1) * (va + vb + c2)));
      }
  return out;
}

}  // namespace

double psnr(const LatentGrid& a, const LatentGrid& b, double range) {
  require_same_shape(a, b, "psnr");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += (a[i] - b[i]) * (a[i] - b[i]);
  return psnr_from_mse(acc / static_cast<double>(a.size()), range);
}

double psnr_outside(const LatentGrid& a, const LatentGrid& b,
                    const std::vector<std::uint8_t>& exclude, double range) {
  require_same_shape(a, b, "psnr_outside");
  check_region(a, exclude, "psnr_outside");
  const std::size_t plane = a.shape().plane();
  double acc = 0.0;
  std::size_t n = 0;
  for (int c = 0; c < a.shape().channels; ++c)
    for (std::size_t i = 0; i < plane; ++i) {
      if (exclude[i]) continue;
      const double d = a[c * plane + i] - b[c * plane + i];
      acc += d * d;
      ++n;
    }
  if (n == 0) throw InvalidArgument("psnr_outside: mask complement is empty");
  return psnr_from_mse(acc / static_cast<double>(n), range);
}

double ssim(const LatentGrid& a, const LatentGrid& b, double range) {
  const auto m = ssim_map(a, b, range);
  double acc = 0.0;
  for (double v : m) acc += v;
  return acc / static_cast<double>(m.size());
}

double ssim_outside(const LatentGrid& a, const LatentGrid& b,
                    const std::vector<std::uint8_t>& exclude, double range) {
  check_region(a, exclude, "ssim_outside");
  const auto m = ssim_map(a, b, range);
  const auto& s = a.shape();
  const int oh = s.height - kWindow + 1, ow = s.width - kWindow + 1, half = kWindow / 2;
  double acc = 0.0;
  std::size_t n = 0;
  for (int c = 0; c < s.channels; ++c)
    for (int y = 0; y < oh; ++y)
      for (int x = 0; x < ow; ++x) {
        if (exclude[static_cast<std::size_t>(y + half) * s.width + x + half]) continue;
        acc += m[(static_cast<std::size_t>(c) * oh + y) * ow + x];
        ++n;
      }
  if (n == 0) throw InvalidArgument("ssim_outside: mask complement has no window centers");
  return acc / static_cast<double>(n);
}

double region_hue(const LatentGrid& image, const std::vector<std::uint8_t>& region) {
  check_region(image, region, "region_hue");
  if (image.shape().channels != 3) throw ShapeError("region_hue needs an RGB image");
  const std::size_t plane = image.shape().plane();
  double sx = 0.0, sy = 0.0, weight = 0.0;
  for (std::size_t i = 0; i < plane; ++i) {
    if (!region[i]) continue;
    std::array<double, 3> rgb;
    for (int c = 0; c < 3; ++c) rgb[c] = std::clamp((image[c * plane + i] + 1.0) / 2.0, 0.0, 1.0);
    const double chroma = std::max({rgb[0], rgb[1], rgb[2]}) - std::min({rgb[0], rgb[1], rgb[2]});
    if (chroma <= 0.0) continue;
    const double h = PaletteColor{"", rgb}.hue() * std::numbers::pi / 180.0;
    sx += chroma * std::cos(h);
    sy += chroma * std::sin(h);
    weight += chroma;
  }
  if (weight <= 1e-9 || std::hypot(sx, sy) <= 1e-9 * weight) return -1.0;
  double deg = std::atan2(sy, sx) * 180.0 / std::numbers::pi;
  if (deg < 0.0) deg += 360.0;
  return deg;
}

std::string dominant_color(const LatentGrid& image, const std::vector<std::uint8_t>& region) {
  const double h = region_hue(image, region);
  if (h < 0.0) return {};
  const PaletteColor* best = nullptr;
  double best_d = 1e9;
  for (const auto& p : palette()) {
    double d = std::fabs(p.hue() - h);
    d = std::min(d, 360.0 - d);
    if (d < best_d) {
      best_d = d;
      best = &p;
    }
  }
  return best ? best->name : std::string{};
}

bool edit_success(const LatentGrid& edited, const std::vector<std::uint8_t>& region,
                  const std::string& target_color) {
  if (palette_index(target_color) < 0)
    throw InvalidArgument("unknown palette color '" + target_color + "'");
  return dominant_color(edited, region) == target_color;
}

}  // namespace rfedit
