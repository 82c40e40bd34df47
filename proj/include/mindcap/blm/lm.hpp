#pragma once

// Small word-level causal transformer language model. A sequence may start
// with continuous prefix rows (query embeddings) that carry no position;
// learned positions index the text tokens only. Output logits use the tied
// token-embedding table.

#include "mindcap/blm/tokenizer.hpp"
#include "mindcap/core/checkpoint.hpp"
#include "mindcap/core/nn.hpp"
#include "mindcap/core/optim.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace mindcap::blm {

using ag::Mat;
using ag::Var;

struct LmConfig {
  int dim = 48;
  int depth = 2;
  int heads = 4;
  int mlp_ratio = 2;
  int max_len = 16;  // ids per caption including bos and eos
  int epochs = 20;
  int batch_size = 32;
  int warmup_steps = 20;
  double learning_rate = 3e-3;
  double weight_decay = 0.01;
  double target_perplexity = 2.7;
  double heldout_fraction = 0.1;
  double context_fraction = 0.5;
  std::uint64_t seed = 11;

  json to_json() const {
    return {{"dim", dim},
            {"depth", depth},
            {"heads", heads},
            {"mlp_ratio", mlp_ratio},
            {"max_len", max_len},
            {"epochs", epochs},
            {"batch_size", batch_size},
            {"warmup_steps", warmup_steps},
            {"learning_rate", learning_rate},
            {"weight_decay", weight_decay},
            {"target_perplexity", target_perplexity},
            {"heldout_fraction", heldout_fraction},
            {"context_fraction", context_fraction},
            {"seed", seed}};
  }
  static LmConfig from_json(const json& j) {
    LmConfig c;
    c.dim = j.at("dim");
    c.depth = j.at("depth");
    c.heads = j.at("heads");
    c.mlp_ratio = j.at("mlp_ratio");
    c.max_len = j.at("max_len");
    c.epochs = j.at("epochs");
    c.batch_size = j.at("batch_size");
    c.warmup_steps = j.at("warmup_steps");
    c.learning_rate = j.at("learning_rate");
    c.weight_decay = j.at("weight_decay");
    c.target_perplexity = j.at("target_perplexity");
    c.heldout_fraction = j.at("heldout_fraction");
    c.context_fraction = j.at("context_fraction");
    c.seed = j.at("seed").get<std::uint64_t>();
    return c;
  }
};

class CausalLm {
 public:
  CausalLm(const LmConfig& cfg, Vocabulary vocab) : cfg_(cfg), vocab_(std::move(vocab)) {
    if (cfg.dim % cfg.heads != 0) throw std::invalid_argument("lm: dim must be divisible by heads");
    if (cfg.max_len < 3) throw std::invalid_argument("lm: max_len must be at least 3");
    Rng rng(derive_seed(cfg.seed, "lm/init"));
    tok_emb_ = ps_.add("tok_emb", normal_matrix<Mat>(rng, vocab_.size(), cfg.dim, 0.1), false);
    pos_emb_ = ps_.add("pos_emb", normal_matrix<Mat>(rng, cfg.max_len, cfg.dim, 0.1), false);
    for (int l = 0; l < cfg.depth; ++l)
      blocks_.emplace_back(ps_, "block." + std::to_string(l), cfg.dim, cfg.heads, cfg.dim * cfg.mlp_ratio, rng);
    norm_ = nn::LayerNorm(ps_, "norm", cfg.dim);
  }

  CausalLm(CausalLm&&) = default;
  CausalLm& operator=(CausalLm&&) = default;
  CausalLm(const CausalLm&) = delete;
  CausalLm& operator=(const CausalLm&) = delete;

  // Sequence s is its prefix rows (prefix_counts[s] of them, packed back to
  // back in `prefix`) followed by the embeddings of inputs[s]. Returns the
  // final hidden state of every text row, packed sequence by sequence.
  Var text_hidden(const Var* prefix, const std::vector<int>& prefix_counts,
                  const std::vector<std::vector<int>>& inputs) const {
    const auto S = static_cast<int>(inputs.size());
    int n_prefix = 0;
    if (!prefix_counts.empty()) {
      if (static_cast<int>(prefix_counts.size()) != S) throw std::invalid_argument("lm: one prefix count per sequence");
      for (int c : prefix_counts) {
        if (c < 0) throw std::invalid_argument("lm: negative prefix count");
        n_prefix += c;
      }
    }
    if (n_prefix > 0 && (!prefix || prefix->rows() != n_prefix || prefix->cols() != cfg_.dim))
      throw std::invalid_argument("lm: prefix rows do not match the prefix counts and model width");
    std::vector<int> ids, pos, seg;
    for (int s = 0; s < S; ++s) {
      const auto& seq = inputs[static_cast<size_t>(s)];
      if (seq.empty() || static_cast<int>(seq.size()) > cfg_.max_len)
        throw std::invalid_argument("lm: sequence length must lie in [1, max_len]");
      for (size_t j = 0; j < seq.size(); ++j) {
        if (seq[j] < 0 || seq[j] >= vocab_.size()) throw std::out_of_range("lm: token id out of range");
        ids.push_back(seq[j]);
        pos.push_back(static_cast<int>(j));
      }
      seg.push_back((n_prefix > 0 ? prefix_counts[static_cast<size_t>(s)] : 0) + static_cast<int>(seq.size()));
    }
    Var text = ag::add(ag::gather_rows(tok_emb_, ids), ag::gather_rows(pos_emb_, pos));
    Var x = text;
    std::vector<int> text_rows;
    if (n_prefix > 0) {
      Var pool = ag::concat_rows({*prefix, text});
      std::vector<int> order;
      int p = 0, t = 0;
      for (int s = 0; s < S; ++s) {
        for (int i = 0; i < prefix_counts[static_cast<size_t>(s)]; ++i) order.push_back(p++);
        for (size_t j = 0; j < inputs[static_cast<size_t>(s)].size(); ++j) {
          text_rows.push_back(static_cast<int>(order.size()));
          order.push_back(n_prefix + t++);
        }
      }
      x = ag::gather_rows(pool, order);
    }
    for (const auto& b : blocks_) x = b(x, seg, true);
    x = norm_(x);
    return n_prefix > 0 ? ag::gather_rows(x, text_rows) : x;
  }

  // Every sequence carries k prefix rows.
  Var text_hidden(const Var* prefix, int k, const std::vector<std::vector<int>>& inputs) const {
    return text_hidden(prefix, k > 0 ? std::vector<int>(inputs.size(), k) : std::vector<int>{}, inputs);
  }

  Var logits(const Var* prefix, const std::vector<int>& prefix_counts, const std::vector<std::vector<int>>& inputs) const {
    return ag::matmul(text_hidden(prefix, prefix_counts, inputs), ag::transpose(tok_emb_));
  }
  Var logits(const Var* prefix, int k, const std::vector<std::vector<int>>& inputs) const {
    return ag::matmul(text_hidden(prefix, k, inputs), ag::transpose(tok_emb_));
  }

  const LmConfig& config() const { return cfg_; }
  const Vocabulary& vocab() const { return vocab_; }
  int dim() const { return cfg_.dim; }
  const Var& token_embedding() const { return tok_emb_; }
  // Position-free word embeddings, used as context prefix rows.
  Var embed_words(const std::vector<int>& ids) const { return ag::gather_rows(tok_emb_, ids); }
  nn::ParamSet& params() { return ps_; }
  const nn::ParamSet& params() const { return ps_; }

  json config_json() const { return {{"lm", cfg_.to_json()}, {"vocab", vocab_.to_json()}}; }

  Checkpoint to_checkpoint(const json& metadata = json::object()) const {
    Checkpoint ck;
    ck.kind = "lm";
    ck.config = config_json();
    ck.config_hash = config_hash(ck.config);
    ck.metadata = metadata;
    ck.put_all(ps_.state(), "lm.");
    return ck;
  }

  static CausalLm from_checkpoint(const Checkpoint& ck) {
    if (config_hash(ck.config) != ck.config_hash) throw std::runtime_error("lm checkpoint config hash mismatch");
    CausalLm lm(LmConfig::from_json(ck.config.at("lm")), Vocabulary::from_json(ck.config.at("vocab")));
    lm.ps_.load_state(ck.tensors, "lm.");
    lm.ps_.set_trainable(false);
    return lm;
  }

 private:
  LmConfig cfg_;
  Vocabulary vocab_;
  nn::ParamSet ps_;
  Var tok_emb_, pos_emb_;
  std::vector<nn::TransformerBlock> blocks_;
  nn::LayerNorm norm_;
};

inline std::vector<int> inputs_of(const std::vector<int>& ids) { return {ids.begin(), ids.end() - 1}; }
inline std::vector<int> targets_of(const std::vector<int>& ids) { return {ids.begin() + 1, ids.end()}; }

inline double log_sum_exp(const Eigen::Ref<const ag::RowVec>& row) {
  const double m = row.maxCoeff();
  return m + std::log((row.array() - m).exp().sum());
}

struct CaptionLoss {
  Var mean;                         // batch mean of the per-stimulus mean over captions
  double caption_sum = 0.0;             // batch mean of the per-stimulus sum over captions
  std::vector<double> per_caption;  // summed token NLL of each caption, in input order
};

// Language-modelling loss of tokenised captions conditioned on prefixes.
// captions[b] holds the M_b captions (bos ... eos) of sample b, whose prefix is
// rows b*k .. b*k+k of `prefixes`.
inline CaptionLoss prefix_caption_loss(const CausalLm& lm, const Var* prefixes, int k,
                                       const std::vector<std::vector<std::vector<int>>>& captions) {
  const auto B = static_cast<int>(captions.size());
  std::vector<std::vector<int>> inputs;
  std::vector<int> targets, prefix_rows, owner;
  std::vector<double> weights;
  for (int b = 0; b < B; ++b) {
    const auto& caps = captions[static_cast<size_t>(b)];
    if (caps.empty()) throw std::invalid_argument("caption loss: sample without captions");
    for (const auto& c : caps) {
      if (c.size() < 2) throw std::invalid_argument("caption loss: caption needs bos and eos");
      inputs.push_back(inputs_of(c));
      const auto t = targets_of(c);
      targets.insert(targets.end(), t.begin(), t.end());
      weights.insert(weights.end(), t.size(), 1.0 / (static_cast<double>(B) * caps.size()));
      owner.insert(owner.end(), t.size(), static_cast<int>(inputs.size()) - 1);
      for (int i = 0; i < k; ++i) prefix_rows.push_back(b * k + i);
    }
  }
  Var logits;
  if (k > 0) {
    const Var p = ag::gather_rows(*prefixes, prefix_rows);
    logits = lm.logits(&p, k, inputs);
  } else {
    logits = lm.logits(nullptr, 0, inputs);
  }
  CaptionLoss out;
  out.mean = ag::cross_entropy(logits, targets, weights);
  out.per_caption.assign(inputs.size(), 0.0);
  for (size_t r = 0; r < targets.size(); ++r) {
    const auto row = logits.value().row(static_cast<Eigen::Index>(r));
    out.per_caption[static_cast<size_t>(owner[r])] += log_sum_exp(row) - row(targets[r]);
  }
  size_t c = 0;
  for (const auto& caps : captions)
    for (size_t j = 0; j < caps.size(); ++j) out.caption_sum += out.per_caption[c++] / B;
  return out;
}

struct DecodeParams {
  std::string strategy = "greedy";  // greedy | beam
  int beam_width = 3;
  int max_len = 16;

  json to_json() const { return {{"strategy", strategy}, {"beam_width", beam_width}, {"max_len", max_len}}; }
};

struct Decoded {
  std::vector<int> words;  // without markers
  bool ended = false;      // an end marker was produced
  double logprob = 0.0;
};

namespace detail {

// Log-probabilities of the next token with the non-generatable specials removed.
inline ag::RowVec next_logprobs(const Eigen::Ref<const ag::RowVec>& logits) {
  ag::RowVec lp = logits.array() - log_sum_exp(logits);
  lp(Vocabulary::kPad) = lp(Vocabulary::kBos) = lp(Vocabulary::kUnk) = -std::numeric_limits<double>::infinity();
  return lp;
}

inline Var prefix_var(const Mat* prefixes, const std::vector<int>& rows) {
  Mat p(static_cast<Eigen::Index>(rows.size()), prefixes->cols());
  for (size_t i = 0; i < rows.size(); ++i) p.row(static_cast<Eigen::Index>(i)) = prefixes->row(rows[i]);
  return ag::constant(std::move(p));
}

}  // namespace detail

// Greedy decoding of `count` sequences in lockstep. prefixes holds count*k rows.
inline std::vector<Decoded> greedy_decode(const CausalLm& lm, const Mat* prefixes, int k, int count, int max_len) {
  ag::NoGradGuard ng;
  max_len = std::min(max_len, lm.config().max_len);
  std::vector<Decoded> out(static_cast<size_t>(count));
  std::vector<int> active(static_cast<size_t>(count));
  std::iota(active.begin(), active.end(), 0);
  for (int step = 0; step < max_len - 1 && !active.empty(); ++step) {
    std::vector<std::vector<int>> inputs;
    std::vector<int> rows;
    for (int s : active) {
      std::vector<int> seq{Vocabulary::kBos};
      seq.insert(seq.end(), out[static_cast<size_t>(s)].words.begin(), out[static_cast<size_t>(s)].words.end());
      inputs.push_back(std::move(seq));
      for (int i = 0; i < k; ++i) rows.push_back(s * k + i);
    }
    Var logits;
    if (k > 0) {
      const Var p = detail::prefix_var(prefixes, rows);
      logits = lm.logits(&p, k, inputs);
    } else {
      logits = lm.logits(nullptr, 0, inputs);
    }
    std::vector<int> still;
    const int len = step + 1;
    for (size_t a = 0; a < active.size(); ++a) {
      auto& d = out[static_cast<size_t>(active[a])];
      const auto lp = detail::next_logprobs(logits.value().row(static_cast<Eigen::Index>((a + 1) * len - 1)));
      Eigen::Index best = 0;
      lp.maxCoeff(&best);
      d.logprob += lp(best);
      if (best == Vocabulary::kEos) {
        d.ended = true;
        continue;
      }
      d.words.push_back(static_cast<int>(best));
      // the next step would need an input longer than max_len - 1
      if (static_cast<int>(d.words.size()) < max_len - 2) still.push_back(active[a]);
    }
    active = std::move(still);
  }
  return out;
}

// Beam search for one prefix (k rows). Width 1 reproduces greedy decoding.
inline Decoded beam_decode(const CausalLm& lm, const Mat* prefix, int k, int width, int max_len) {
  if (width < 1) throw std::invalid_argument("beam width must be >= 1");
  ag::NoGradGuard ng;
  max_len = std::min(max_len, lm.config().max_len);
  std::vector<Decoded> alive{Decoded{}}, finished;
  for (int step = 0; step < max_len - 1 && !alive.empty(); ++step) {
    std::vector<std::vector<int>> inputs;
    std::vector<int> rows;
    for (const auto& h : alive) {
      std::vector<int> seq{Vocabulary::kBos};
      seq.insert(seq.end(), h.words.begin(), h.words.end());
      inputs.push_back(std::move(seq));
      for (int i = 0; i < k; ++i) rows.push_back(i);
    }
    Var logits;
    if (k > 0) {
      const Var p = detail::prefix_var(prefix, rows);
      logits = lm.logits(&p, k, inputs);
    } else {
      logits = lm.logits(nullptr, 0, inputs);
    }
    struct Cand {
      double score;
      int hyp, token;
    };
    std::vector<Cand> cands;
    const int len = step + 1;
    for (size_t h = 0; h < alive.size(); ++h) {
      const auto lp = detail::next_logprobs(logits.value().row(static_cast<Eigen::Index>((h + 1) * len - 1)));
      for (Eigen::Index t = 0; t < lp.size(); ++t)
        if (std::isfinite(lp(t))) cands.push_back({alive[h].logprob + lp(t), static_cast<int>(h), static_cast<int>(t)});
    }
    std::stable_sort(cands.begin(), cands.end(), [](const Cand& a, const Cand& b) { return a.score > b.score; });
    std::vector<Decoded> next;
    for (const auto& c : cands) {
      if (static_cast<int>(next.size()) >= width) break;
      Decoded d = alive[static_cast<size_t>(c.hyp)];
      d.logprob = c.score;
      if (c.token == Vocabulary::kEos) {
        d.ended = true;
        finished.push_back(std::move(d));
        // a finished hypothesis still takes one of the width slots this step
        next.push_back(Decoded{{}, true, -std::numeric_limits<double>::infinity()});
        continue;
      }
      d.words.push_back(c.token);
      next.push_back(std::move(d));
    }
    alive.clear();
    for (auto& d : next)
      if (!d.ended && static_cast<int>(d.words.size()) < max_len - 2) alive.push_back(std::move(d));
      else if (!d.ended) finished.push_back(std::move(d));
    if (!finished.empty() && !alive.empty()) {
      double best_fin = -std::numeric_limits<double>::infinity(), best_alive = best_fin;
      for (const auto& f : finished) best_fin = std::max(best_fin, f.logprob);
      for (const auto& a : alive) best_alive = std::max(best_alive, a.logprob);
      if (best_fin >= best_alive) break;  // scores only decrease
    }
  }
  for (auto& a : alive) finished.push_back(std::move(a));
  const auto it = std::max_element(finished.begin(), finished.end(),
                                   [](const Decoded& a, const Decoded& b) { return a.logprob < b.logprob; });
  return *it;
}

inline std::vector<Decoded> decode(const CausalLm& lm, const Mat* prefixes, int k, int count, const DecodeParams& p) {
  if (p.strategy == "greedy") return greedy_decode(lm, prefixes, k, count, p.max_len);
  if (p.strategy != "beam") throw std::invalid_argument("unknown decode strategy '" + p.strategy + "'");
  std::vector<Decoded> out;
  for (int s = 0; s < count; ++s) {
    if (k > 0) {
      const Mat one = prefixes->middleRows(static_cast<Eigen::Index>(s) * k, k);
      out.push_back(beam_decode(lm, &one, k, p.beam_width, p.max_len));
    } else {
      out.push_back(beam_decode(lm, nullptr, 0, p.beam_width, p.max_len));
    }
  }
  return out;
}

struct LmPretrainResult {
  CausalLm lm;
  double heldout_perplexity = 0.0;
  double unigram_perplexity = 0.0;
  std::vector<double> curve;  // held-out perplexity after each epoch
  bool reached_target = false;
};

// Per-token perplexity of tokenised sequences (no prefix).
inline double perplexity(const CausalLm& lm, const std::vector<std::vector<int>>& seqs) {
  ag::NoGradGuard ng;
  double nll = 0.0;
  size_t n = 0;
  for (size_t i = 0; i < seqs.size(); i += 256) {
    std::vector<std::vector<std::vector<int>>> batch;
    for (size_t j = i; j < std::min(seqs.size(), i + 256); ++j) {
      batch.push_back({seqs[j]});
      n += seqs[j].size() - 1;
    }
    const auto l = prefix_caption_loss(lm, nullptr, 0, batch);
    for (double v : l.per_caption) nll += v;
  }
  return std::exp(nll / static_cast<double>(n));
}

// Unigram baseline: add-one smoothed frequencies of the generatable tokens
// (words and eos) in the training sequences, scored on the held-out ones.
inline double unigram_perplexity(const std::vector<std::vector<int>>& train, const std::vector<std::vector<int>>& heldout,
                                 int vocab_size) {
  std::vector<double> counts(static_cast<size_t>(vocab_size), 0.0);
  for (const auto& s : train)
    for (size_t j = 1; j < s.size(); ++j) counts[static_cast<size_t>(s[j])] += 1.0;
  const int outcomes = vocab_size - 2;  // pad and bos are never predicted
  double total = outcomes;
  for (double c : counts) total += c;
  double nll = 0.0;
  size_t n = 0;
  for (const auto& s : heldout)
    for (size_t j = 1; j < s.size(); ++j) {
      nll -= std::log((counts[static_cast<size_t>(s[j])] + 1.0) / total);
      ++n;
    }
  return std::exp(nll / static_cast<double>(n));
}

// The corpus is organised in paraphrase groups (all captions of one scene).
// A context_fraction of the training sequences is preceded by the
// position-free word embeddings of another caption from the same group, so
// the model learns to draw content from prefix rows. Held-out perplexity is
// measured on plain captions without context.
inline LmPretrainResult pretrain_lm(const std::vector<std::vector<std::string>>& groups, const LmConfig& cfg) {
  std::vector<std::string> all;
  for (const auto& g : groups) all.insert(all.end(), g.begin(), g.end());
  if (all.size() < 1000) throw std::invalid_argument("pretrain_lm: corpus needs at least 1000 sentences");
  LmPretrainResult res{CausalLm(cfg, Vocabulary::build(all)), 0.0, 0.0, {}, false};
  CausalLm& lm = res.lm;

  Rng rng(derive_seed(cfg.seed, "lm/split"));
  const auto perm = permutation(rng, static_cast<int>(groups.size()));
  const auto n_held = std::max<size_t>(1, static_cast<size_t>(std::lround(cfg.heldout_fraction * groups.size())));
  std::vector<std::vector<std::vector<int>>> train_groups;
  std::vector<std::vector<int>> train, held;
  std::vector<std::pair<int, int>> train_index;  // (group, member)
  for (size_t i = 0; i < perm.size(); ++i) {
    std::vector<std::vector<int>> g;
    for (const auto& c : groups[static_cast<size_t>(perm[i])]) g.push_back(lm.vocab().tokenize(c, cfg.max_len).ids);
    if (i < n_held) {
      held.insert(held.end(), g.begin(), g.end());
    } else {
      for (size_t j = 0; j < g.size(); ++j) {
        train_index.emplace_back(static_cast<int>(train_groups.size()), static_cast<int>(j));
        train.push_back(g[j]);
      }
      train_groups.push_back(std::move(g));
    }
  }
  res.unigram_perplexity = unigram_perplexity(train, held, lm.vocab().size());

  lm.params().set_trainable(true);
  optim::AdamW opt(lm.params(), cfg.weight_decay);
  const long steps_per_epoch = static_cast<long>((train.size() + cfg.batch_size - 1) / cfg.batch_size);
  optim::WarmupCosine sched{cfg.learning_rate, cfg.warmup_steps, steps_per_epoch * cfg.epochs};
  std::uniform_real_distribution<double> coin(0.0, 1.0);
  long step = 0;
  double best = std::numeric_limits<double>::infinity();
  std::map<std::string, Mat> best_state = lm.params().state();
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto order = permutation(rng, static_cast<int>(train.size()));
    for (size_t i = 0; i < order.size(); i += static_cast<size_t>(cfg.batch_size)) {
      std::vector<std::vector<int>> inputs;
      std::vector<int> targets, counts, context_ids;
      std::vector<double> weights;
      const size_t end = std::min(order.size(), i + static_cast<size_t>(cfg.batch_size));
      for (size_t j = i; j < end; ++j) {
        const auto [g, m] = train_index[static_cast<size_t>(order[j])];
        const auto& group = train_groups[static_cast<size_t>(g)];
        const auto& ids = group[static_cast<size_t>(m)];
        int n_ctx = 0;
        if (group.size() > 1 && coin(rng) < cfg.context_fraction) {
          auto other = static_cast<size_t>(std::uniform_int_distribution<int>(0, static_cast<int>(group.size()) - 2)(rng));
          if (other >= static_cast<size_t>(m)) ++other;
          const auto& ctx = group[other];
          context_ids.insert(context_ids.end(), ctx.begin() + 1, ctx.end() - 1);
          n_ctx = static_cast<int>(ctx.size()) - 2;
        }
        counts.push_back(n_ctx);
        inputs.push_back(inputs_of(ids));
        const auto t = targets_of(ids);
        targets.insert(targets.end(), t.begin(), t.end());
        weights.insert(weights.end(), t.size(), 1.0 / static_cast<double>(end - i));
      }
      lm.params().zero_grad();
      Var logits;
      if (!context_ids.empty()) {
        const Var ctx = lm.embed_words(context_ids);
        logits = lm.logits(&ctx, counts, inputs);
      } else {
        logits = lm.logits(nullptr, 0, inputs);
      }
      const Var loss = ag::cross_entropy(logits, targets, weights);
      if (!std::isfinite(loss.item())) throw std::runtime_error("pretrain_lm diverged at epoch " + std::to_string(epoch));
      ag::backward(loss);
      opt.step(sched.at(step++));
    }
    const double ppl = perplexity(lm, held);
    res.curve.push_back(ppl);
    log::info("lm epoch ", epoch, " held-out perplexity ", ppl, " (unigram ", res.unigram_perplexity, ")");
    if (ppl < best) {
      best = ppl;
      best_state = lm.params().state();
    }
    if (ppl <= cfg.target_perplexity) {
      res.reached_target = true;
      break;
    }
  }
  if (!res.reached_target)
    log::warn("pretrain_lm: target perplexity ", cfg.target_perplexity, " not reached; keeping best ", best);
  lm.params().load_state(best_state);
  lm.params().zero_grad();
  lm.params().set_trainable(false);
  res.heldout_perplexity = best;
  return res;
}

}  // namespace mindcap::blm
