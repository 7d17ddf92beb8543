#include "rfedit/vocab.hpp"

#include <algorithm>
#include <cctype>
#include <sstream>

#include "rfedit/error.hpp"

namespace rfedit {

const Vocabulary& Vocabulary::builtin() {
  static const Vocabulary vocab({
      "<pad>",  "<unk>",  "a",       "an",      "the",     "on",     "in",    "at",
      "of",     "with",   "and",     "is",      "one",     "two",    "three", "red",
      "orange", "yellow", "green",   "cyan",    "blue",    "purple", "magenta", "white",
      "black",  "gray",   "pink",    "brown",   "circle",  "square", "triangle", "star",
      "heart",  "ring",   "diamond", "left",    "right",   "top",    "bottom", "center",
      "middle", "corner", "upper",   "lower",   "small",   "large",  "big",   "tiny",
      "shape",  "image",  "photo",   "picture", "background", "dark", "light", "bright",
      "round",  "box",    "side",    "over",    "under",   "near",   "tilted", "plain",
  });
  return vocab;
}

Vocabulary::Vocabulary(std::vector<std::string> words) : words_(std::move(words)) {
  if (words_.size() < 2 || words_[kPadId] != "<pad>" || words_[kUnkId] != "<unk>")
    throw InvalidArgument("vocabulary must start with <pad>, <unk>");
}

int Vocabulary::id(std::string_view word) const {
  auto it = std::find(words_.begin(), words_.end(), word);
  if (it == words_.end() || it - words_.begin() < 2) return kUnkId;
  return static_cast<int>(it - words_.begin());
}

const std::string& Vocabulary::word(int id) const {
  if (id < 0 || id >= size()) throw InvalidArgument("token id out of range: " + std::to_string(id));
  return words_[id];
}

std::vector<std::string> split_words(std::string_view prompt) {
  std::string lowered(prompt);
  std::transform(lowered.begin(), lowered.end(), lowered.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  std::istringstream in(lowered);
  std::vector<std::string> out;
  for (std::string w; in >> w;) out.push_back(w);
  return out;
}

TokenIds tokenize(std::string_view prompt, int max_tokens, const Vocabulary& vocab) {
  if (max_tokens < 1) throw InvalidArgument("max_tokens must be positive");
  const auto words = split_words(prompt);
  if (words.empty()) throw InvalidArgument("empty prompt");
  TokenIds out;
  out.ids.assign(max_tokens, kPadId);
  out.length = std::min<int>(static_cast<int>(words.size()), max_tokens);
  for (int i = 0; i < out.length; ++i) out.ids[i] = vocab.id(words[i]);
  return out;
}

}  // namespace rfedit
