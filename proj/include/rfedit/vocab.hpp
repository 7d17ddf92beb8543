#pragma once

#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace rfedit {

inline constexpr int kPadId = 0;
inline constexpr int kUnkId = 1;
inline constexpr int kDefaultMaxTextTokens = 8;

/// Closed whitespace vocabulary over shape/color/position words.
class Vocabulary {
 public:
  /// The built-in vocabulary used by the toy model and dataset.
  static const Vocabulary& builtin();

  explicit Vocabulary(std::vector<std::string> words);

  int size() const { return static_cast<int>(words_.size()); }
  /// Id of a lowercase word, or kUnkId.
  int id(std::string_view word) const;
  const std::string& word(int id) const;
  const std::vector<std::string>& words() const { return words_; }
  bool contains(std::string_view word) const { return id(word) != kUnkId; }

 private:
  std::vector<std::string> words_;
};

/// A prompt mapped through the vocabulary, padded/truncated to a fixed width.
struct TokenIds {
  std::vector<int> ids;
  int length = 0;  ///< number of non-pad positions

  int width() const { return static_cast<int>(ids.size()); }
  bool is_pad(int i) const { return i >= length; }
  bool operator==(const TokenIds&) const = default;
};

/// Lowercases, splits on whitespace and maps unknown words to kUnkId.
/// Throws InvalidArgument for a prompt that is empty after trimming.
TokenIds tokenize(std::string_view prompt, int max_tokens = kDefaultMaxTextTokens,
                  const Vocabulary& vocab = Vocabulary::builtin());

/// Lowercased whitespace split, shared by tokenize and edit-word lookup.
std::vector<std::string> split_words(std::string_view prompt);

}  // namespace rfedit
