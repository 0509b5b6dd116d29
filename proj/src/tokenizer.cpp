#include "oneframe/tokenizer.hpp"

#include <algorithm>
#include <cctype>
#include <set>
#include <sstream>

#include "oneframe/error.hpp"

namespace oneframe {

int TokenSequence::valid_length() const {
  return static_cast<int>(std::count(mask.begin(), mask.end(), static_cast<unsigned char>(1)));
}

void validate_tokens(const TokenSequence& tokens, int vocab_size) {
  if (tokens.ids.size() != tokens.mask.size()) throw InputError("token ids and mask differ in length");
  bool padding = false;
  for (std::size_t i = 0; i < tokens.ids.size(); ++i) {
    if (tokens.ids[i] < 0 || tokens.ids[i] >= vocab_size) {
      throw InputError("token id " + std::to_string(tokens.ids[i]) + " outside vocabulary of size " +
                       std::to_string(vocab_size));
    }
    if (tokens.mask[i] > 1) throw InputError("token mask must be 0/1");
    if (tokens.mask[i] == 0) padding = true;
    else if (padding) throw InputError("token mask must be right padded");
  }
  if (tokens.ids.empty() || tokens.mask[0] == 0) throw InputError("token sequence has no valid position");
}

Tokenizer::Tokenizer() {
  for (const char* w : {"[PAD]", "[CLS]", "[SEP]", "[MASK]", "[UNK]"}) add_word(w);
}

void Tokenizer::add_word(const std::string& w) {
  index_.emplace(w, static_cast<int>(words_.size()));
  words_.push_back(w);
}

std::vector<std::string> Tokenizer::split_words(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : text) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      if (!cur.empty()) out.push_back(std::move(cur));
      cur.clear();
    } else {
      cur.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

Tokenizer Tokenizer::from_texts(const std::vector<std::string>& texts) {
  std::set<std::string> vocab;
  for (const auto& t : texts) {
    for (auto& w : split_words(t)) vocab.insert(std::move(w));
  }
  Tokenizer tok;
  for (const auto& w : vocab) {
    if (!tok.index_.count(w)) tok.add_word(w);
  }
  return tok;
}

int Tokenizer::id_of(std::string_view word) const {
  auto it = index_.find(word);
  return it == index_.end() ? kUnk : it->second;
}

TokenSequence Tokenizer::encode(std::string_view text, int max_len) const {
  return encode_paragraph({std::string(text)}, max_len);
}

TokenSequence Tokenizer::encode_paragraph(const std::vector<std::string>& texts, int max_len) const {
  if (max_len < 2) throw ConfigError("max_len must be at least 2");
  std::vector<int> body;
  for (std::size_t i = 0; i < texts.size(); ++i) {
    if (i > 0) body.push_back(kSep);
    for (const auto& w : split_words(texts[i])) body.push_back(id_of(w));
  }
  const auto keep = std::min<std::size_t>(body.size(), static_cast<std::size_t>(max_len - 2));
  TokenSequence seq;
  seq.ids.assign(static_cast<std::size_t>(max_len), kPad);
  seq.mask.assign(static_cast<std::size_t>(max_len), 0);
  seq.ids[0] = kCls;
  for (std::size_t i = 0; i < keep; ++i) seq.ids[i + 1] = body[i];
  seq.ids[keep + 1] = kSep;
  std::fill(seq.mask.begin(), seq.mask.begin() + static_cast<std::ptrdiff_t>(keep + 2), 1);
  return seq;
}

std::string Tokenizer::decode(const std::vector<int>& ids) const {
  std::ostringstream os;
  bool first = true;
  for (int id : ids) {
    if (id < 0 || id >= vocab_size() || is_special_token(id)) continue;
    if (!first) os << ' ';
    os << words_[static_cast<std::size_t>(id)];
    first = false;
  }
  return os.str();
}

nlohmann::json Tokenizer::to_json() const { return nlohmann::json(words_); }

Tokenizer Tokenizer::from_json(const nlohmann::json& j) {
  Tokenizer tok;
  const auto words = j.get<std::vector<std::string>>();
  if (words.size() < static_cast<std::size_t>(kFirstWord)) throw FormatError("vocabulary is missing reserved tokens");
  for (std::size_t i = 0; i < static_cast<std::size_t>(kFirstWord); ++i) {
    if (words[i] != tok.words_[i]) throw FormatError("vocabulary reserved tokens out of order");
  }
  for (std::size_t i = kFirstWord; i < words.size(); ++i) tok.add_word(words[i]);
  return tok;
}

}  // namespace oneframe
