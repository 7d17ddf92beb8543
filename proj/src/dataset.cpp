#include "rfedit/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "rfedit/checkpoint.hpp"
#include "rfedit/error.hpp"
#include "rfedit/rng.hpp"

namespace rfedit {

double PaletteColor::hue() const {
  const auto [r, g, b] = rgb;
  const double mx = std::max({r, g, b}), mn = std::min({r, g, b});
  const double c = mx - mn;
  if (c <= 0.0) return 0.0;
  double h;
  if (mx == r)
    h = std::fmod((g - b) / c, 6.0);
  else if (mx == g)
    h = (b - r) / c + 2.0;
  else
    h = (r - g) / c + 4.0;
  h *= 60.0;
  return h < 0 ? h + 360.0 : h;
}

const std::vector<PaletteColor>& palette() {
  static const std::vector<PaletteColor> colors = {
      {"red", {0.90, 0.10, 0.10}},    {"orange", {1.00, 0.55, 0.00}},
      {"yellow", {0.95, 0.90, 0.10}}, {"green", {0.10, 0.80, 0.20}},
      {"cyan", {0.10, 0.85, 0.90}},   {"blue", {0.10, 0.20, 0.95}},
      {"purple", {0.55, 0.10, 0.90}}, {"magenta", {0.95, 0.10, 0.75}},
  };
  return colors;
}

const std::vector<std::string>& shape_names() {
  static const std::vector<std::string> v = {"circle", "square", "triangle"};
  return v;
}

const std::vector<std::string>& position_names() {
  static const std::vector<std::string> v = {"left", "right", "top", "bottom", "center"};
  return v;
}

int palette_index(std::string_view color) {
  const auto& p = palette();
  for (std::size_t i = 0; i < p.size(); ++i)
    if (p[i].name == color) return static_cast<int>(i);
  return -1;
}

std::string caption_for(const ShapeAttributes& a) {
  return "a " + palette().at(a.color).name + " " + shape_names().at(a.shape) + " on the " +
         position_names().at(a.position);
}

namespace {

struct Point {
  double x, y;
};

double edge(Point a, Point b, Point p) { return (b.x - a.x) * (p.y - a.y) - (b.y - a.y) * (p.x - a.x); }

bool inside(const ShapeAttributes& a, double cx, double cy, Point p) {
  const double r = a.size;
  switch (a.shape) {
    case 0:
      return (p.x - cx) * (p.x - cx) + (p.y - cy) * (p.y - cy) <= r * r;
    case 1: {
      const double h = 0.85 * r;
      return std::abs(p.x - cx) <= h && std::abs(p.y - cy) <= h;
    }
    default: {
      const Point v0{cx, cy - r}, v1{cx + r, cy + 0.8 * r}, v2{cx - r, cy + 0.8 * r};
      const double e0 = edge(v0, v1, p), e1 = edge(v1, v2, p), e2 = edge(v2, v0, p);
      return (e0 >= 0 && e1 >= 0 && e2 >= 0) || (e0 <= 0 && e1 <= 0 && e2 <= 0);
    }
  }
}

Point anchor(int position, int size) {
  const double s = size;
  switch (position) {
    case 0: return {0.28 * s, 0.5 * s};
    case 1: return {0.72 * s, 0.5 * s};
    case 2: return {0.5 * s, 0.28 * s};
    case 3: return {0.5 * s, 0.72 * s};
    default: return {0.5 * s, 0.5 * s};
  }
}

}  // namespace

ShapesSample render_sample(const ShapeAttributes& attributes, int image_size) {
  if (attributes.color < 0 || attributes.color >= static_cast<int>(palette().size()) ||
      attributes.shape < 0 || attributes.shape >= static_cast<int>(shape_names().size()) ||
      attributes.position < 0 || attributes.position >= static_cast<int>(position_names().size()))
    throw InvalidArgument("render_sample: attribute index out of range");
  const Point c = anchor(attributes.position, image_size);
  const double cx = c.x + attributes.offset_x, cy = c.y + attributes.offset_y;
  const auto& rgb = palette()[attributes.color].rgb;
  constexpr int kSub = 4;

  ShapesSample s;
  s.attributes = attributes;
  s.caption = caption_for(attributes);
  s.image = LatentGrid({3, image_size, image_size});
  s.mask.assign(static_cast<std::size_t>(image_size) * image_size, 0);
  for (int y = 0; y < image_size; ++y)
    for (int x = 0; x < image_size; ++x) {
      int hits = 0;
      for (int sy = 0; sy < kSub; ++sy)
        for (int sx = 0; sx < kSub; ++sx)
          hits += inside(attributes, cx, cy, {x + (sx + 0.5) / kSub, y + (sy + 0.5) / kSub});
      const double cov = static_cast<double>(hits) / (kSub * kSub);
      s.mask[static_cast<std::size_t>(y) * image_size + x] = hits > 0;
      for (int ch = 0; ch < 3; ++ch) {
        const double v = attributes.background * (1.0 - cov) + rgb[ch] * cov;
        s.image.at(ch, y, x) = 2.0 * v - 1.0;
      }
    }
  return s;
}

ShapeAttributes random_attributes(Rng& rng, int image_size) {
  ShapeAttributes a;
  a.color = static_cast<int>(rng.below(palette().size()));
  a.shape = static_cast<int>(rng.below(shape_names().size()));
  a.position = static_cast<int>(rng.below(position_names().size()));
  a.size = image_size * rng.uniform(0.16, 0.22);
  a.offset_x = rng.uniform(-1.5, 1.5);
  a.offset_y = rng.uniform(-1.5, 1.5);
  a.background = rng.uniform(0.35, 0.65);
  return a;
}

std::vector<ShapesSample> generate_dataset(int n, std::uint64_t seed, int image_size) {
  if (n < 1) throw InvalidArgument("generate_dataset: n must be >= 1");
  Rng rng(seed);
  std::vector<ShapesSample> out;
  out.reserve(n);
  for (int i = 0; i < n; ++i) out.push_back(render_sample(random_attributes(rng, image_size), image_size));
  return out;
}

std::string dataset_hash(const std::vector<ShapesSample>& samples) {
  std::string bytes;
  for (const auto& s : samples) {
    bytes += s.caption;
    bytes.push_back('\n');
    for (double v : s.image.values()) {
      const long q = std::lround((v + 1.0) * 127.5);
      bytes.push_back(static_cast<char>(std::clamp(q, 0L, 255L)));
    }
  }
  return sha256_hex(bytes.data(), bytes.size());
}

}  // namespace rfedit
