#pragma once

// Metric reports and corpus-level caption evaluation over the six text
// metrics: meteor_lite, rouge_l, cider, attr_f1, embed_sim and sent_sim.

#include "mindcap/core/random.hpp"
#include "mindcap/metrics/caption.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

namespace mindcap::metrics {

using json = nlohmann::json;

inline const std::vector<std::string>& text_metric_names() {
  static const std::vector<std::string> n{"meteor_lite", "rouge_l", "cider", "attr_f1", "embed_sim", "sent_sim"};
  return n;
}

struct MetricReport {
  static constexpr int kSchemaVersion = 1;

  std::map<std::string, double> values;
  std::string split;
  std::uint64_t seed = 0;
  std::string config_hash;
  int candidate_count = 0;

  void validate(const std::vector<std::string>& declared) const {
    for (const auto& k : declared)
      if (!values.count(k)) throw std::runtime_error("metric report is missing '" + k + "'");
    for (const auto& [k, v] : values)
      if (!std::isfinite(v)) throw std::runtime_error("metric report value '" + k + "' is not finite");
  }

  json to_json() const {
    return {{"schema_version", kSchemaVersion},
            {"metrics", values},
            {"metadata",
             {{"split", split}, {"seed", seed}, {"config_hash", config_hash}, {"candidate_count", candidate_count}}}};
  }

  static MetricReport from_json(const json& j) {
    if (j.at("schema_version").get<int>() != kSchemaVersion)
      throw std::runtime_error("unsupported metric report schema version");
    MetricReport r;
    r.values = j.at("metrics").get<std::map<std::string, double>>();
    const auto& m = j.at("metadata");
    r.split = m.at("split");
    r.seed = m.at("seed").get<std::uint64_t>();
    r.config_hash = m.at("config_hash");
    r.candidate_count = m.at("candidate_count");
    return r;
  }
};

struct TextEncoders {
  TextEncoder token;     // mean token embedding
  TextEncoder sentence;  // mean contextual hidden state
};

// Per-item scores for every text metric, with the CIDEr corpus built from
// all references of the evaluated items.
struct CaptionScores {
  std::map<std::string, std::vector<double>> per_item;

  std::map<std::string, double> means() const {
    std::map<std::string, double> out;
    for (const auto& [k, v] : per_item) {
      double s = 0.0;
      for (double x : v) s += x;
      out[k] = v.empty() ? 0.0 : s / static_cast<double>(v.size());
    }
    return out;
  }
};

inline CaptionScores score_captions(const std::vector<std::string>& candidates,
                                    const std::vector<std::vector<std::string>>& references,
                                    const TextEncoders& enc, const std::set<std::string>& lexicon) {
  if (candidates.size() != references.size()) throw std::invalid_argument("score_captions: unpaired lists");
  std::vector<std::vector<NormalizedCaption>> refs(references.size());
  std::vector<std::vector<std::vector<std::string>>> ref_tokens(references.size());
  for (size_t i = 0; i < references.size(); ++i)
    for (const auto& r : references[i]) {
      refs[i].push_back(normalize(r));
      ref_tokens[i].push_back(refs[i].back().tokens);
    }
  const auto corpus = CorpusStats::build(ref_tokens);
  CaptionScores s;
  for (const auto& n : text_metric_names()) s.per_item[n].reserve(candidates.size());
  for (size_t i = 0; i < candidates.size(); ++i) {
    const auto c = normalize(candidates[i]);
    s.per_item["meteor_lite"].push_back(meteor_lite(c, refs[i]));
    s.per_item["rouge_l"].push_back(rouge_l(c.tokens, ref_tokens[i]));
    s.per_item["cider"].push_back(cider(c.tokens, ref_tokens[i], corpus));
    s.per_item["attr_f1"].push_back(attribute_f1(c.tokens, ref_tokens[i], lexicon));
    s.per_item["embed_sim"].push_back(embed_similarity(candidates[i], references[i], enc.token));
    s.per_item["sent_sim"].push_back(embed_similarity(candidates[i], references[i], enc.sentence));
  }
  return s;
}

// Corpus CIDEr of candidates against a permuted assignment of reference
// sets, repeated `permutations` times with a seeded shuffle.
inline std::vector<double> cider_permutation_null(const std::vector<std::string>& candidates,
                                           const std::vector<std::vector<std::string>>& references, int permutations,
                                           Rng& rng) {
  std::vector<std::vector<std::vector<std::string>>> ref_tokens(references.size());
  for (size_t i = 0; i < references.size(); ++i)
    for (const auto& r : references[i]) ref_tokens[i].push_back(normalize(r).tokens);
  const auto corpus = CorpusStats::build(ref_tokens);
  std::vector<std::vector<std::string>> cand_tokens;
  for (const auto& c : candidates) cand_tokens.push_back(normalize(c).tokens);
  std::vector<double> out;
  for (int p = 0; p < permutations; ++p) {
    const auto perm = permutation(rng, static_cast<int>(references.size()));
    double s = 0.0;
    for (size_t i = 0; i < cand_tokens.size(); ++i)
      s += cider(cand_tokens[i], ref_tokens[static_cast<size_t>(perm[i])], corpus);
    out.push_back(s / static_cast<double>(cand_tokens.size()));
  }
  return out;
}

// Linear-interpolated quantile, q in [0, 1].
inline double quantile(std::vector<double> v, double q) {
  if (v.empty()) throw std::invalid_argument("quantile of an empty sample");
  std::sort(v.begin(), v.end());
  const double pos = q * static_cast<double>(v.size() - 1);
  const size_t lo = static_cast<size_t>(std::floor(pos));
  const size_t hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

}  // namespace mindcap::metrics
