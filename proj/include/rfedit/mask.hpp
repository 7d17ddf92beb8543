#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "rfedit/attention.hpp"
#include "rfedit/vocab.hpp"

namespace rfedit {

/// Binary per-visual-token mask of the edited region. Token order is row
/// major over the patch grid, matching patchify.
class EditMask {
 public:
  EditMask() = default;
  EditMask(int grid_h, int grid_w, std::vector<std::uint8_t> values);
  static EditMask zeros(int grid_h, int grid_w);
  static EditMask ones(int grid_h, int grid_w);
  /// A patch is set when any of its pixels is set.
  static EditMask from_pixels(const std::vector<std::uint8_t>& pixels, int height, int width,
                              int patch_size);

  int grid_h() const { return grid_h_; }
  int grid_w() const { return grid_w_; }
  int tokens() const { return grid_h_ * grid_w_; }
  const std::vector<std::uint8_t>& values() const { return values_; }
  bool at(int y, int x) const { return values_[static_cast<std::size_t>(y) * grid_w_ + x] != 0; }
  bool token(int i) const { return values_[i] != 0; }
  int count() const;
  bool empty() const { return count() == 0; }

  /// Nearest-neighbor upsample to (grid_h * patch) x (grid_w * patch) pixels.
  std::vector<std::uint8_t> pixels(int patch_size) const;

  bool operator==(const EditMask&) const = default;

 private:
  int grid_h_ = 0;
  int grid_w_ = 0;
  std::vector<std::uint8_t> values_;
};

enum class Reduction { mean, max };
/// Which block of the joint attention map measures text/visual relevance.
enum class AttentionDirection { text_to_visual, visual_to_text };

struct ThresholdConfig {
  double k = 1.0;  ///< binarize relevance > mean + k * std
  int dilation_steps = 1;
  Reduction head_reduction = Reduction::mean;
  Reduction token_reduction = Reduction::mean;
  AttentionDirection direction = AttentionDirection::text_to_visual;

  void validate() const;
  bool operator==(const ThresholdConfig&) const = default;
};

/// Text positions that differ between the two prompts (pad/UNK positions in
/// the source excluded), or, with `override_words`, the source positions
/// holding one of those words. Throws NoEditTokens when the result is empty.
std::vector<int> select_edit_tokens(const TokenIds& source, const TokenIds& target,
                                    const std::vector<std::string>& override_words = {},
                                    const Vocabulary& vocab = Vocabulary::builtin());

/// Per-visual-token relevance of the edit tokens, reduced over heads then
/// over edit tokens. Text occupies the first `text_tokens` positions.
std::vector<double> edit_relevance(const AttentionProbs& attn, const std::vector<int>& edit_tokens,
                                   int text_tokens, const ThresholdConfig& cfg);

/// relevance > mean + k * std, then `dilation_steps` dilations. Throws
/// DegenerateMaskError when nothing passes the threshold.
EditMask threshold_relevance(const std::vector<double>& relevance, int grid_h, int grid_w,
                             const ThresholdConfig& cfg);

EditMask extract_mask(const AttentionProbs& attn, const std::vector<int>& edit_tokens,
                      int text_tokens, int grid_h, int grid_w, const ThresholdConfig& cfg);

/// 8-neighborhood dilation applied `steps` times.
EditMask dilate(const EditMask& mask, int steps);

Reduction parse_reduction(std::string_view s);
AttentionDirection parse_direction(std::string_view s);
const char* to_string(Reduction r);
const char* to_string(AttentionDirection d);

}  // namespace rfedit
