#pragma once

// Caption text normalisation shared by the tokenizer and the text metrics:
// ASCII lowercase, every non-alphanumeric character becomes a separator,
// whitespace collapses.

#include <cctype>
#include <string>
#include <vector>

namespace mindcap::text {

inline std::vector<std::string> normalize_words(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  for (const unsigned char ch : s) {
    if (std::isalnum(ch)) {
      cur.push_back(static_cast<char>(std::tolower(ch)));
    } else if (!cur.empty()) {
      out.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

inline std::string join(const std::vector<std::string>& words, const std::string& sep = " ") {
  std::string out;
  for (size_t i = 0; i < words.size(); ++i) {
    if (i) out += sep;
    out += words[i];
  }
  return out;
}

inline std::string normalize(const std::string& s) { return join(normalize_words(s)); }

}  // namespace mindcap::text
