#pragma once

// Word-level vocabulary for the toy language model. Ids 0..3 are the
// specials; the remaining ids are the corpus words in sorted order, so the
// vocabulary is a pure function of the corpus word set.

#include "mindcap/core/log.hpp"
#include "mindcap/core/text.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <map>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

namespace mindcap::blm {

using json = nlohmann::json;

struct TokenizedCaption {
  std::vector<int> ids;  // bos, words..., eos
  std::string source;
};

class Vocabulary {
 public:
  static constexpr int kPad = 0;
  static constexpr int kBos = 1;
  static constexpr int kEos = 2;
  static constexpr int kUnk = 3;
  static constexpr int kSpecials = 4;

  Vocabulary() : Vocabulary(std::vector<std::string>{}) {}

  explicit Vocabulary(std::vector<std::string> words) {
    std::sort(words.begin(), words.end());
    words.erase(std::unique(words.begin(), words.end()), words.end());
    words_ = {"<pad>", "<bos>", "<eos>", "<unk>"};
    for (auto& w : words) {
      if (w.empty() || w.front() == '<') throw std::invalid_argument("invalid vocabulary word '" + w + "'");
      words_.push_back(std::move(w));
    }
    for (size_t i = 0; i < words_.size(); ++i) index_[words_[i]] = static_cast<int>(i);
  }

  static Vocabulary build(const std::vector<std::string>& corpus) {
    std::set<std::string> seen;
    for (const auto& s : corpus)
      for (auto& w : text::normalize_words(s)) seen.insert(std::move(w));
    return Vocabulary(std::vector<std::string>(seen.begin(), seen.end()));
  }

  int size() const { return static_cast<int>(words_.size()); }

  int id(const std::string& w) const {
    auto it = index_.find(w);
    return it == index_.end() || it->second < kSpecials ? kUnk : it->second;
  }

  const std::string& word(int id) const { return words_.at(static_cast<size_t>(id)); }
  bool contains(const std::string& w) const { return id(w) != kUnk; }

  // Word ids without markers.
  std::vector<int> encode_words(const std::string& s) const {
    std::vector<int> out;
    for (const auto& w : text::normalize_words(s)) out.push_back(id(w));
    return out;
  }

  // bos + words + eos, keeping at most max_len ids in total.
  TokenizedCaption tokenize(const std::string& s, int max_len) const {
    if (max_len < 3) throw std::invalid_argument("max_len must leave room for markers and one word");
    auto words = encode_words(s);
    if (static_cast<int>(words.size()) > max_len - 2) {
      log::warn("caption truncated to ", max_len - 2, " words: '", s, "'");
      words.resize(static_cast<size_t>(max_len - 2));
    }
    TokenizedCaption t{{kBos}, s};
    t.ids.insert(t.ids.end(), words.begin(), words.end());
    t.ids.push_back(kEos);
    return t;
  }

  // Joins word tokens, skipping pad/bos and stopping at eos.
  std::string detokenize(const std::vector<int>& ids) const {
    std::vector<std::string> out;
    for (int i : ids) {
      if (i == kEos) break;
      if (i == kPad || i == kBos) continue;
      out.push_back(word(i));
    }
    return text::join(out);
  }

  const std::vector<std::string>& words() const { return words_; }

  json to_json() const { return std::vector<std::string>(words_.begin() + kSpecials, words_.end()); }
  static Vocabulary from_json(const json& j) { return Vocabulary(j.get<std::vector<std::string>>()); }

 private:
  std::vector<std::string> words_;
  std::map<std::string, int> index_;
};

}  // namespace mindcap::blm
