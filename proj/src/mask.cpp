#include "rfedit/mask.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "rfedit/error.hpp"

namespace rfedit {

EditMask::EditMask(int grid_h, int grid_w, std::vector<std::uint8_t> values)
    : grid_h_(grid_h), grid_w_(grid_w), values_(std::move(values)) {
  if (grid_h < 1 || grid_w < 1) throw ShapeError("EditMask: empty grid");
  if (values_.size() != static_cast<std::size_t>(grid_h) * grid_w)
    throw ShapeError("EditMask: value count does not match grid");
  for (auto& v : values_)
    if (v > 1) throw InvalidArgument("EditMask: entries must be 0 or 1");
}

EditMask EditMask::zeros(int grid_h, int grid_w) {
  return EditMask(grid_h, grid_w, std::vector<std::uint8_t>(static_cast<std::size_t>(grid_h) * grid_w, 0));
}

EditMask EditMask::ones(int grid_h, int grid_w) {
  return EditMask(grid_h, grid_w, std::vector<std::uint8_t>(static_cast<std::size_t>(grid_h) * grid_w, 1));
}

EditMask EditMask::from_pixels(const std::vector<std::uint8_t>& pixels, int height, int width,
                               int patch_size) {
  if (patch_size < 1 || height % patch_size || width % patch_size)
    throw ShapeError("EditMask::from_pixels: size not divisible by patch");
  if (pixels.size() != static_cast<std::size_t>(height) * width)
    throw ShapeError("EditMask::from_pixels: pixel count mismatch");
  const int gh = height / patch_size, gw = width / patch_size;
  std::vector<std::uint8_t> v(static_cast<std::size_t>(gh) * gw, 0);
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x)
      if (pixels[static_cast<std::size_t>(y) * width + x])
        v[static_cast<std::size_t>(y / patch_size) * gw + x / patch_size] = 1;
  return EditMask(gh, gw, std::move(v));
}

int EditMask::count() const {
  return static_cast<int>(std::count(values_.begin(), values_.end(), 1));
}

std::vector<std::uint8_t> EditMask::pixels(int patch_size) const {
  const int h = grid_h_ * patch_size, w = grid_w_ * patch_size;
  std::vector<std::uint8_t> out(static_cast<std::size_t>(h) * w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      out[static_cast<std::size_t>(y) * w + x] = at(y / patch_size, x / patch_size);
  return out;
}

void ThresholdConfig::validate() const {
  if (!std::isfinite(k)) throw InvalidArgument("ThresholdConfig: k must be finite");
  if (dilation_steps < 0) throw InvalidArgument("ThresholdConfig: negative dilation_steps");
}

std::vector<int> select_edit_tokens(const TokenIds& source, const TokenIds& target,
                                    const std::vector<std::string>& override_words,
                                    const Vocabulary& vocab) {
  std::vector<int> out;
  if (!override_words.empty()) {
    std::vector<int> wanted;
    for (const auto& w : override_words)
      for (const auto& part : split_words(w)) wanted.push_back(vocab.id(part));
    for (int i = 0; i < source.length; ++i) {
      const int id = source.ids[i];
      if (id == kPadId || id == kUnkId) continue;
      if (std::find(wanted.begin(), wanted.end(), id) != wanted.end()) out.push_back(i);
    }
    if (out.empty()) throw NoEditTokens("no edit tokens found: override words absent from source prompt");
    return out;
  }
  if (source.width() != target.width())
    throw ShapeError("select_edit_tokens: prompts tokenized to different widths");
  for (int i = 0; i < source.width(); ++i) {
    if (source.ids[i] == target.ids[i]) continue;
    if (source.ids[i] == kPadId || source.ids[i] == kUnkId) continue;
    out.push_back(i);
  }
  if (out.empty()) throw NoEditTokens("no edit tokens found");
  return out;
}

std::vector<double> edit_relevance(const AttentionProbs& attn, const std::vector<int>& edit_tokens,
                                   int text_tokens, const ThresholdConfig& cfg) {
  if (edit_tokens.empty()) throw NoEditTokens("edit token set is empty");
  const int visual = attn.tokens() - text_tokens;
  if (text_tokens < 1 || visual < 1) throw ShapeError("edit_relevance: bad token partition");
  for (int e : edit_tokens)
    if (e < 0 || e >= text_tokens) throw InvalidArgument("edit_relevance: edit token outside text");

  auto reduce = [](Reduction r, double acc, double v, bool first) {
    if (first) return v;
    return r == Reduction::max ? std::max(acc, v) : acc + v;
  };
  std::vector<double> out(visual, 0.0);
  for (int j = 0; j < visual; ++j) {
    double over_tokens = 0.0;
    for (std::size_t ei = 0; ei < edit_tokens.size(); ++ei) {
      const int e = edit_tokens[ei];
      double over_heads = 0.0;
      for (int h = 0; h < attn.heads(); ++h) {
        const double a = cfg.direction == AttentionDirection::text_to_visual
                             ? attn.at(h, e, text_tokens + j)
                             : attn.at(h, text_tokens + j, e);
        over_heads = reduce(cfg.head_reduction, over_heads, a, h == 0);
      }
      if (cfg.head_reduction == Reduction::mean) over_heads /= attn.heads();
      over_tokens = reduce(cfg.token_reduction, over_tokens, over_heads, ei == 0);
    }
    if (cfg.token_reduction == Reduction::mean) over_tokens /= static_cast<double>(edit_tokens.size());
    out[j] = over_tokens;
  }
  return out;
}

EditMask threshold_relevance(const std::vector<double>& r, int grid_h, int grid_w,
                             const ThresholdConfig& cfg) {
  cfg.validate();
  if (r.size() != static_cast<std::size_t>(grid_h) * grid_w)
    throw ShapeError("threshold_relevance: relevance length does not match grid");
  if (std::all_of(r.begin(), r.end(), [](double v) { return v == 0.0; }))
    throw DegenerateMaskError("degenerate mask: all-zero relevance");
  const double n = static_cast<double>(r.size());
  const double mean = std::accumulate(r.begin(), r.end(), 0.0) / n;
  double var = 0.0;
  for (double v : r) var += (v - mean) * (v - mean);
  const double sd = std::sqrt(var / n);
  const double thr = mean + cfg.k * sd;
  std::vector<std::uint8_t> bits(r.size(), 0);
  // A flat map carries no location; rounding in `mean` must not select cells.
  if (sd > 1e-12 * std::abs(mean))
    for (std::size_t i = 0; i < r.size(); ++i) bits[i] = r[i] > thr;
  EditMask m(grid_h, grid_w, std::move(bits));
  if (m.empty())
    throw DegenerateMaskError(
        "degenerate mask: no visual token exceeds mean + k*std; supply an override mask");
  return dilate(m, cfg.dilation_steps);
}

EditMask extract_mask(const AttentionProbs& attn, const std::vector<int>& edit_tokens,
                      int text_tokens, int grid_h, int grid_w, const ThresholdConfig& cfg) {
  return threshold_relevance(edit_relevance(attn, edit_tokens, text_tokens, cfg), grid_h, grid_w, cfg);
}

EditMask dilate(const EditMask& mask, int steps) {
  if (steps < 0) throw InvalidArgument("dilate: negative steps");
  EditMask cur = mask;
  const int h = mask.grid_h(), w = mask.grid_w();
  for (int s = 0; s < steps; ++s) {
    std::vector<std::uint8_t> next(cur.values());
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        if (!cur.at(y, x)) continue;
        for (int dy = -1; dy <= 1; ++dy)
          for (int dx = -1; dx <= 1; ++dx) {
            const int yy = y + dy, xx = x + dx;
            if (yy >= 0 && yy < h && xx >= 0 && xx < w) next[static_cast<std::size_t>(yy) * w + xx] = 1;
          }
      }
    cur = EditMask(h, w, std::move(next));
  }
  return cur;
}

Reduction parse_reduction(std::string_view s) {
  if (s == "mean") return Reduction::mean;
  if (s == "max") return Reduction::max;
  throw InvalidArgument("unknown reduction '" + std::string(s) + "'");
}

AttentionDirection parse_direction(std::string_view s) {
  if (s == "text_to_visual") return AttentionDirection::text_to_visual;
  if (s == "visual_to_text") return AttentionDirection::visual_to_text;
  throw InvalidArgument("unknown attention direction '" + std::string(s) + "'");
}

const char* to_string(Reduction r) { return r == Reduction::mean ? "mean" : "max"; }
const char* to_string(AttentionDirection d) {
  return d == AttentionDirection::text_to_visual ? "text_to_visual" : "visual_to_text";
}

}  // namespace rfedit
