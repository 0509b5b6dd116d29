#pragma once

#include "json.hpp"

#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace oneframe {

inline constexpr int kPad = 0;
inline constexpr int kCls = 1;
inline constexpr int kSep = 2;
inline constexpr int kMask = 3;
inline constexpr int kUnk = 4;
inline constexpr int kFirstWord = 5;

// Right-padded token ids with a validity mask.
struct TokenSequence {
  std::vector<int> ids;
  std::vector<unsigned char> mask;

  int valid_length() const;
  bool operator==(const TokenSequence&) const = default;
};

// Throws InputError if ids fall outside [0, vocab_size) or the mask is not a
// prefix of ones followed by zeros.
void validate_tokens(const TokenSequence& tokens, int vocab_size);

inline bool is_special_token(int id) { return id < kFirstWord; }

// Whitespace word-level vocabulary; words are lower-cased.
class Tokenizer {
 public:
  Tokenizer();
  static Tokenizer from_texts(const std::vector<std::string>& texts);

  int vocab_size() const { return static_cast<int>(words_.size()); }
  int id_of(std::string_view word) const;
  const std::string& word(int id) const { return words_.at(static_cast<std::size_t>(id)); }

  // [CLS] w1 .. wn [SEP] [PAD]...; words beyond max_len - 2 are dropped.
  TokenSequence encode(std::string_view text, int max_len) const;
  // Joins several captions with [SEP] between them (paragraph queries).
  TokenSequence encode_paragraph(const std::vector<std::string>& texts, int max_len) const;
  // Words of non-special ids, space separated.
  std::string decode(const std::vector<int>& ids) const;

  const std::vector<std::string>& words() const { return words_; }
  nlohmann::json to_json() const;
  static Tokenizer from_json(const nlohmann::json& j);

  static std::vector<std::string> split_words(std::string_view text);

 private:
  void add_word(const std::string& w);
  std::vector<std::string> words_;
  std::map<std::string, int, std::less<>> index_;
};

}  // namespace oneframe
