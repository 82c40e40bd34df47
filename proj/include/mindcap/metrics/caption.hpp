#pragma once

// Caption metrics over normalised tokens: ROUGE-L, plain CIDEr,
// METEOR-lite (exact and stem matching, no synonym stage), cosine
// similarity under a frozen text encoder, and attribute F1.

#include "mindcap/core/log.hpp"
#include "mindcap/metrics/stemmer.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <set>
#include <stdexcept>
#include <string>
#include <tuple>
#include <vector>

namespace mindcap::metrics {

struct NormalizedCaption {
  std::vector<std::string> tokens;
  std::vector<std::string> stems;
};

// Lowercase, drop ASCII punctuation, split on whitespace, stem.
inline NormalizedCaption normalize(const std::string& s) {
  NormalizedCaption out;
  std::string cur;
  auto flush = [&] {
    if (cur.empty()) return;
    out.stems.push_back(stem(cur));
    out.tokens.push_back(std::move(cur));
    cur.clear();
  };
  for (const unsigned char ch : s) {
    if (std::isspace(ch)) flush();
    else if (!std::ispunct(ch)) cur.push_back(static_cast<char>(std::tolower(ch)));
  }
  flush();
  return out;
}

// ---------------------------------------------------------------- ROUGE-L

inline int lcs_length(const std::vector<std::string>& a, const std::vector<std::string>& b) {
  std::vector<int> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (size_t i = 1; i <= a.size(); ++i) {
    for (size_t j = 1; j <= b.size(); ++j)
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

inline double rouge_l(const std::vector<std::string>& cand, const std::vector<std::vector<std::string>>& refs,
                      double beta = 1.2) {
  if (refs.empty()) throw std::invalid_argument("rouge_l: at least one reference required");
  double best = 0.0;
  for (const auto& r : refs) {
    if (cand.empty() || r.empty()) continue;
    const int l = lcs_length(cand, r);
    if (l == 0) continue;
    const double p = static_cast<double>(l) / static_cast<double>(cand.size());
    const double rec = static_cast<double>(l) / static_cast<double>(r.size());
    const double b2 = beta * beta;
    best = std::max(best, (1 + b2) * p * rec / (rec + b2 * p));
  }
  return best;
}

inline double rouge_l(const std::string& cand, const std::vector<std::string>& refs) {
  std::vector<std::vector<std::string>> r;
  for (const auto& s : refs) r.push_back(normalize(s).tokens);
  return rouge_l(normalize(cand).tokens, r);
}

// ------------------------------------------------------------------ CIDEr

using NgramCounts = std::map<std::string, double>;

inline NgramCounts ngrams(const std::vector<std::string>& toks, int n) {
  NgramCounts out;
  for (size_t i = 0; i + static_cast<size_t>(n) <= toks.size(); ++i) {
    std::string g = toks[i];
    for (int k = 1; k < n; ++k) g += ' ' + toks[i + static_cast<size_t>(k)];
    out[g] += 1.0;
  }
  return out;
}

// Document frequencies for n = 1..4, one document per item (the union of
// that item's references).
class CorpusStats {
 public:
  static constexpr int kMaxN = 4;

  CorpusStats(std::array<std::map<std::string, double>, kMaxN> df, double size) : df_(std::move(df)), size_(size) {
    if (size_ < 2) throw std::invalid_argument("cider: degenerate corpus (fewer than 2 reference documents)");
    for (const auto& m : df_)
      for (const auto& [g, f] : m)
        if (f > size_) throw std::invalid_argument("cider: document frequency exceeds corpus size for '" + g + "'");
  }

  static CorpusStats build(const std::vector<std::vector<std::vector<std::string>>>& refs_per_item) {
    std::array<std::map<std::string, double>, kMaxN> df;
    for (const auto& refs : refs_per_item)
      for (int n = 1; n <= kMaxN; ++n) {
        std::set<std::string> seen;
        for (const auto& r : refs)
          for (const auto& kv : ngrams(r, n)) seen.insert(kv.first);
        for (const auto& g : seen) df[static_cast<size_t>(n - 1)][g] += 1.0;
      }
    return CorpusStats(std::move(df), static_cast<double>(refs_per_item.size()));
  }

  double size() const { return size_; }
  double df(int n, const std::string& g) const {
    const auto& m = df_.at(static_cast<size_t>(n - 1));
    auto it = m.find(g);
    return it == m.end() ? 0.0 : it->second;
  }
  // Unseen n-grams get df = 1.
  double idf(int n, const std::string& g) const { return std::log(size_ / std::max(1.0, df(n, g))); }
  const std::array<std::map<std::string, double>, kMaxN>& document_frequencies() const { return df_; }

 private:
  std::array<std::map<std::string, double>, kMaxN> df_;
  double size_;
};

inline NgramCounts tfidf(const std::vector<std::string>& toks, int n, const CorpusStats& corpus) {
  auto v = ngrams(toks, n);
  for (auto& [g, w] : v) w *= corpus.idf(n, g);
  return v;
}

inline double cosine(const NgramCounts& a, const NgramCounts& b) {
  double dot = 0, na = 0, nb = 0;
  for (const auto& [g, w] : a) {
    na += w * w;
    auto it = b.find(g);
    if (it != b.end()) dot += w * it->second;
  }
  for (const auto& kv : b) nb += kv.second * kv.second;
  if (na == 0.0 || nb == 0.0) return 0.0;
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

inline double cider(const std::vector<std::string>& cand, const std::vector<std::vector<std::string>>& refs,
                    const CorpusStats& corpus) {
  if (refs.empty()) throw std::invalid_argument("cider: at least one reference required");
  double total = 0.0;
  for (int n = 1; n <= CorpusStats::kMaxN; ++n) {
    const auto c = tfidf(cand, n, corpus);
    double s = 0.0;
    for (const auto& r : refs) s += cosine(c, tfidf(r, n, corpus));
    total += s / static_cast<double>(refs.size());
  }
  return 10.0 * total / CorpusStats::kMaxN;
}

// ------------------------------------------------------------ METEOR-lite

struct MeteorParams {
  double alpha = 0.9;
  double gamma = 0.5;
  double theta = 3.0;
};

struct Alignment {
  int matches = 0;
  int chunks = 0;
};

namespace detail {

// Maximum-cardinality alignment of candidate to reference positions whose
// stems agree (exact matches share a stem), with the fewest chunks among
// those. Memoised search over (candidate position, previous reference
// position, used reference set).
class Aligner {
 public:
  Aligner(const std::vector<std::string>& c, const std::vector<std::string>& r) : c_(c), r_(r) {
    if (r.size() > 63) throw std::invalid_argument("meteor_lite: reference longer than 63 tokens");
    for (const auto& s : c) remaining_c_[s] += 1;
    std::map<std::string, int> rc;
    for (const auto& s : r) rc[s] += 1;
    for (const auto& [s, n] : remaining_c_) target_ += std::min(n, rc.count(s) ? rc.at(s) : 0);
  }

  Alignment solve() {
    if (target_ == 0) return {};
    const int boundaries = best(0, -1, 0, 0);
    return {target_, boundaries};
  }

 private:
  const std::vector<std::string>& c_;
  const std::vector<std::string>& r_;
  std::map<std::string, int> remaining_c_;
  int target_ = 0;
  std::map<std::tuple<std::uint64_t, int, size_t>, int> memo_;
  static constexpr int kInf = 1 << 20;

  // prev: reference index matched at candidate i-1, or -1 when i-1 is unmatched.
  // Returns the minimum number of chunk starts from position i onward such
  // that the total match count reaches target_.
  int best(size_t i, int prev, std::uint64_t used, int matched) {
    if (i == c_.size()) return matched == target_ ? 0 : kInf;
    const auto key = std::make_tuple(used, prev, i);
    if (auto it = memo_.find(key); it != memo_.end()) return it->second;
    int out = best(i + 1, -1, used, matched);
    for (size_t j = 0; j < r_.size(); ++j) {
      if ((used >> j) & 1U || r_[j] != c_[i]) continue;
      const int start = prev >= 0 && static_cast<int>(j) == prev + 1 ? 0 : 1;
      const int rest = best(i + 1, static_cast<int>(j), used | (std::uint64_t{1} << j), matched + 1);
      out = std::min(out, rest + start);
    }
    return memo_[key] = out;
  }
};

}  // namespace detail

// Stems of the two captions; exact matches are a subset of stem matches.
inline Alignment meteor_align(const std::vector<std::string>& cand_stems, const std::vector<std::string>& ref_stems) {
  return detail::Aligner(cand_stems, ref_stems).solve();
}

inline double meteor_score(const Alignment& a, size_t cand_len, size_t ref_len, const MeteorParams& p = {}) {
  if (a.matches == 0) return 0.0;
  const double prec = static_cast<double>(a.matches) / static_cast<double>(cand_len);
  const double rec = static_cast<double>(a.matches) / static_cast<double>(ref_len);
  const double f = prec * rec / (p.alpha * prec + (1 - p.alpha) * rec);
  const double penalty = p.gamma * std::pow(static_cast<double>(a.chunks) / a.matches, p.theta);
  return f * (1 - penalty);
}

inline double meteor_lite(const NormalizedCaption& cand, const std::vector<NormalizedCaption>& refs,
                          const MeteorParams& p = {}) {
  if (refs.empty()) throw std::invalid_argument("meteor_lite: at least one reference required");
  double best = 0.0;
  for (const auto& r : refs)
    best = std::max(best, meteor_score(meteor_align(cand.stems, r.stems), cand.stems.size(), r.stems.size(), p));
  return best;
}

inline double meteor_lite(const std::string& cand, const std::vector<std::string>& refs) {
  std::vector<NormalizedCaption> r;
  for (const auto& s : refs) r.push_back(normalize(s));
  return meteor_lite(normalize(cand), r);
}

// ------------------------------------------------------ embedding metrics

using TextEncoder = std::function<Eigen::VectorXd(const std::string&)>;

inline double cosine(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  if (a.size() != b.size()) throw std::invalid_argument("cosine: dimension mismatch");
  const double na = a.norm(), nb = b.norm();
  if (na == 0.0 || nb == 0.0) return 0.0;
  return a.dot(b) / (na * nb);
}

inline double embed_similarity(const std::string& cand, const std::string& ref, const TextEncoder& enc) {
  if (normalize(cand).tokens.empty() || normalize(ref).tokens.empty()) {
    log::warn("embed_similarity: empty caption scores 0");
    return 0.0;
  }
  return cosine(enc(cand), enc(ref));
}

// Mean over references.
inline double embed_similarity(const std::string& cand, const std::vector<std::string>& refs, const TextEncoder& enc) {
  if (refs.empty()) throw std::invalid_argument("embed_similarity: at least one reference required");
  double s = 0.0;
  for (const auto& r : refs) s += embed_similarity(cand, r, enc);
  return s / static_cast<double>(refs.size());
}

// F1 between the lexicon words of the candidate and the union of lexicon
// words over the references; 0 when neither side mentions any.
inline double attribute_f1(const std::vector<std::string>& cand, const std::vector<std::vector<std::string>>& refs,
                           const std::set<std::string>& lexicon) {
  std::set<std::string> c, r;
  for (const auto& w : cand)
    if (lexicon.count(w)) c.insert(w);
  for (const auto& ref : refs)
    for (const auto& w : ref)
      if (lexicon.count(w)) r.insert(w);
  if (c.empty() || r.empty()) return 0.0;
  int hit = 0;
  for (const auto& w : c) hit += static_cast<int>(r.count(w));
  if (hit == 0) return 0.0;
  const double p = static_cast<double>(hit) / static_cast<double>(c.size());
  const double rec = static_cast<double>(hit) / static_cast<double>(r.size());
  return 2 * p * rec / (p + rec);
}

}  // namespace mindcap::metrics
