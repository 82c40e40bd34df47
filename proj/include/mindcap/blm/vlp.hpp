#pragma once

// Vision-language stand-in: a querying transformer whose learned queries
// cross-attend to image-feature tokens, plus a linear text projector into the
// language model's embedding space. Pretrained on (image feature, captions)
// pairs with the language model frozen, then frozen as a whole.

#include "mindcap/blm/lm.hpp"
#include "mindcap/data/dataset.hpp"

#include <map>
#include <memory>

namespace mindcap::blm {

struct VlpConfig {
  int query_count = 4;
  int dim = 48;
  int depth = 2;
  int heads = 4;
  int mlp_ratio = 2;
  int image_tokens = 4;
  int epochs = 30;
  int batch_size = 16;
  int warmup_steps = 30;
  double learning_rate = 6e-3;
  double weight_decay = 0.01;
  std::uint64_t seed = 13;

  json to_json() const {
    return {{"query_count", query_count}, {"dim", dim},
            {"depth", depth},             {"heads", heads},
            {"mlp_ratio", mlp_ratio},     {"image_tokens", image_tokens},
            {"epochs", epochs},           {"batch_size", batch_size},
            {"warmup_steps", warmup_steps}, {"learning_rate", learning_rate},
            {"weight_decay", weight_decay}, {"seed", seed}};
  }
  static VlpConfig from_json(const json& j) {
    VlpConfig c;
    c.query_count = j.at("query_count");
    c.dim = j.at("dim");
    c.depth = j.at("depth");
    c.heads = j.at("heads");
    c.mlp_ratio = j.at("mlp_ratio");
    c.image_tokens = j.at("image_tokens");
    c.epochs = j.at("epochs");
    c.batch_size = j.at("batch_size");
    c.warmup_steps = j.at("warmup_steps");
    c.learning_rate = j.at("learning_rate");
    c.weight_decay = j.at("weight_decay");
    c.seed = j.at("seed").get<std::uint64_t>();
    return c;
  }
};

class QFormer {
 public:
  QFormer() = default;
  QFormer(nn::ParamSet& ps, const VlpConfig& cfg, Rng& rng) : k_(cfg.query_count) {
    if (cfg.query_count < 1) throw std::invalid_argument("qformer: need at least one query");
    queries_ = ps.add("queries", normal_matrix<Mat>(rng, cfg.query_count, cfg.dim, 0.5), false);
    for (int l = 0; l < cfg.depth; ++l)
      blocks_.emplace_back(ps, "block." + std::to_string(l), cfg.dim, cfg.heads, cfg.dim * cfg.mlp_ratio, rng, true);
    norm_ = nn::LayerNorm(ps, "norm", cfg.dim);
  }

  // ctx packs one token segment per sample; returns B*K query outputs.
  Var operator()(const Var& ctx, const std::vector<int>& ctx_seg) const {
    const auto B = static_cast<int>(ctx_seg.size());
    std::vector<int> idx;
    for (int b = 0; b < B; ++b)
      for (int i = 0; i < k_; ++i) idx.push_back(i);
    Var x = ag::gather_rows(queries_, idx);
    const std::vector<int> seg(static_cast<size_t>(B), k_);
    for (const auto& blk : blocks_) x = blk(x, seg, false, &ctx, &ctx_seg);
    return norm_(x);
  }

 private:
  int k_ = 0;
  Var queries_;
  std::vector<nn::TransformerBlock> blocks_;
  nn::LayerNorm norm_;
};

// Splits a feature vector into image tokens: one linear map to
// image_tokens * dim values, reshaped, plus a learned position per token.
class VisionEmbedder {
 public:
  VisionEmbedder() = default;
  VisionEmbedder(nn::ParamSet& ps, int feature_dim, const VlpConfig& cfg, Rng& rng)
      : tokens_(cfg.image_tokens), dim_(cfg.dim) {
    proj_ = nn::Linear(ps, "proj", feature_dim, cfg.image_tokens * cfg.dim, rng);
    pos_ = ps.add("pos", normal_matrix<Mat>(rng, cfg.image_tokens, cfg.dim, 0.1), false);
  }

  Var operator()(const Mat& features) const {
    const auto B = static_cast<int>(features.rows());
    std::vector<int> idx;
    for (int b = 0; b < B; ++b)
      for (int t = 0; t < tokens_; ++t) idx.push_back(t);
    Var x = ag::reshape(proj_(ag::constant(features)), static_cast<Eigen::Index>(B) * tokens_, dim_);
    return ag::add(x, ag::gather_rows(pos_, idx));
  }
  int tokens() const { return tokens_; }

 private:
  int tokens_ = 0, dim_ = 0;
  nn::Linear proj_;
  Var pos_;
};

// The frozen half of the brain-language model: language model, Q-Former with
// its queries, text projector, and the image embedder used during
// vision-language pretraining. Parameters are never trainable outside
// pretrain_vlp.
class FrozenStack {
 public:
  FrozenStack(CausalLm lm, const VlpConfig& cfg, int feature_dim)
      : cfg_(cfg), feature_dim_(feature_dim), lm_(std::make_unique<CausalLm>(std::move(lm))) {
    Rng rng(derive_seed(cfg.seed, "vlp/init"));
    qformer_ = QFormer(qformer_ps_, cfg, rng);
    text_proj_ = nn::Linear(text_proj_ps_, "linear", cfg.dim, lm_->dim(), rng);
    vision_ = VisionEmbedder(vision_ps_, feature_dim, cfg, rng);
    freeze();
  }

  const CausalLm& lm() const { return *lm_; }
  const Vocabulary& vocab() const { return lm_->vocab(); }
  const VlpConfig& config() const { return cfg_; }
  int query_count() const { return cfg_.query_count; }
  int qformer_dim() const { return cfg_.dim; }
  int lm_dim() const { return lm_->dim(); }
  int feature_dim() const { return feature_dim_; }
  int max_caption_len() const { return lm_->config().max_len; }

  Var qformer(const Var& ctx, const std::vector<int>& ctx_seg) const { return qformer_(ctx, ctx_seg); }
  Var text_projection(const Var& q) const { return text_proj_(q); }

  // B*K query embeddings in LM space for a batch of image-feature rows.
  Var image_queries(const Mat& features) const {
    const std::vector<int> seg(static_cast<size_t>(features.rows()), vision_.tokens());
    return text_proj_(qformer_(vision_(features), seg));
  }

  std::vector<std::string> caption_features(const Mat& features, const DecodeParams& p) const {
    ag::NoGradGuard ng;
    const Mat q = image_queries(features).value();
    std::vector<std::string> out;
    for (const auto& d : decode(*lm_, &q, query_count(), static_cast<int>(features.rows()), p))
      out.push_back(vocab().detokenize(d.words));
    return out;
  }

  // SHA-256 digest per frozen component.
  std::map<std::string, std::string> digests() const {
    return {{"lm", tensor_digest(lm_->params().state())},
            {"qformer", tensor_digest(qformer_ps_.state())},
            {"text_projector", tensor_digest(text_proj_ps_.state())},
            {"vision", tensor_digest(vision_ps_.state())}};
  }

  // Mean of the LM token embeddings of the caption's in-vocabulary words.
  Eigen::VectorXd token_embedding(const std::string& caption) const {
    Eigen::VectorXd v = Eigen::VectorXd::Zero(lm_dim());
    int n = 0;
    for (int id : vocab().encode_words(caption)) {
      if (id == Vocabulary::kUnk) continue;
      v += lm_->token_embedding().value().row(id).transpose();
      ++n;
    }
    return n ? Eigen::VectorXd(v / n) : v;
  }

  // Mean of the LM's final hidden states over bos, words and eos.
  Eigen::VectorXd sentence_embedding(const std::string& caption) const {
    const auto t = vocab().tokenize(caption, max_caption_len());
    if (t.ids.size() <= 2) return Eigen::VectorXd::Zero(lm_dim());
    ag::NoGradGuard ng;
    const Var h = lm_->text_hidden(nullptr, 0, {t.ids});
    return h.value().colwise().mean().transpose();
  }

  nn::ParamSet& qformer_params() { return qformer_ps_; }
  nn::ParamSet& text_projector_params() { return text_proj_ps_; }
  nn::ParamSet& vision_params() { return vision_ps_; }
  const nn::ParamSet& lm_params() const { return lm_->params(); }

  void freeze() {
    for (auto* ps : {&qformer_ps_, &text_proj_ps_, &vision_ps_, &lm_->params()}) {
      ps->zero_grad();
      ps->set_trainable(false);
    }
  }

  Checkpoint to_checkpoint(const json& metadata = json::object()) const {
    Checkpoint ck;
    ck.kind = "vlp";
    ck.config = {{"lm", lm_->config_json()}, {"vlp", cfg_.to_json()}, {"feature_dim", feature_dim_}};
    ck.config_hash = config_hash(ck.config);
    ck.metadata = metadata;
    ck.metadata["digests"] = digests();
    ck.put_all(lm_->params().state(), "lm.");
    ck.put_all(qformer_ps_.state(), "qformer.");
    ck.put_all(text_proj_ps_.state(), "text_projector.");
    ck.put_all(vision_ps_.state(), "vision.");
    return ck;
  }

  static FrozenStack from_checkpoint(const Checkpoint& ck) {
    if (ck.kind != "vlp") throw std::runtime_error("expected a vlp checkpoint, got '" + ck.kind + "'");
    if (config_hash(ck.config) != ck.config_hash) throw std::runtime_error("vlp checkpoint config hash mismatch");
    const auto& lj = ck.config.at("lm");
    CausalLm lm(LmConfig::from_json(lj.at("lm")), Vocabulary::from_json(lj.at("vocab")));
    lm.params().load_state(ck.tensors, "lm.");
    FrozenStack s(std::move(lm), VlpConfig::from_json(ck.config.at("vlp")), ck.config.at("feature_dim"));
    s.qformer_ps_.load_state(ck.tensors, "qformer.");
    s.text_proj_ps_.load_state(ck.tensors, "text_projector.");
    s.vision_ps_.load_state(ck.tensors, "vision.");
    s.freeze();
    if (ck.metadata.contains("digests") && ck.metadata.at("digests") != json(s.digests()))
      throw std::runtime_error("vlp checkpoint digest mismatch");
    return s;
  }

 private:
  VlpConfig cfg_;
  int feature_dim_ = 0;
  std::unique_ptr<CausalLm> lm_;
  nn::ParamSet qformer_ps_, text_proj_ps_, vision_ps_;
  QFormer qformer_;
  nn::Linear text_proj_;
  VisionEmbedder vision_;
};

struct VlpItem {
  Eigen::VectorXd features;
  std::vector<std::vector<int>> captions;  // tokenised
};

struct VlpResult {
  std::vector<double> epoch_loss;
  std::string lm_digest_before, lm_digest_after;
};

// Trains the image embedder, Q-Former (with its queries) and text projector
// through the frozen LM with the multi-caption language-modelling loss.
inline VlpResult pretrain_vlp(FrozenStack& stack, const std::vector<VlpItem>& items) {
  const auto& cfg = stack.config();
  if (items.empty()) throw std::invalid_argument("pretrain_vlp: no training items");
  VlpResult res;
  res.lm_digest_before = stack.digests().at("lm");
  nn::ParamSet train;
  train.extend(stack.qformer_params(), "qformer.");
  train.extend(stack.text_projector_params(), "text_projector.");
  train.extend(stack.vision_params(), "vision.");
  train.set_trainable(true);
  optim::AdamW opt(train, cfg.weight_decay);
  const long steps_per_epoch = static_cast<long>((items.size() + cfg.batch_size - 1) / cfg.batch_size);
  optim::WarmupCosine sched{cfg.learning_rate, cfg.warmup_steps, steps_per_epoch * cfg.epochs};
  long step = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto order = data::Dataset::epoch_order(static_cast<int>(items.size()), derive_seed(cfg.seed, "vlp"), epoch);
    double sum = 0.0;
    int batches = 0;
    for (size_t i = 0; i < order.size(); i += static_cast<size_t>(cfg.batch_size)) {
      const size_t end = std::min(order.size(), i + static_cast<size_t>(cfg.batch_size));
      Mat feats(static_cast<Eigen::Index>(end - i), stack.feature_dim());
      std::vector<std::vector<std::vector<int>>> caps;
      for (size_t j = i; j < end; ++j) {
        const auto& it = items[static_cast<size_t>(order[j])];
        feats.row(static_cast<Eigen::Index>(j - i)) = it.features.transpose();
        caps.push_back(it.captions);
      }
      train.zero_grad();
      const Var q = stack.image_queries(feats);
      const auto loss = prefix_caption_loss(stack.lm(), &q, stack.query_count(), caps);
      if (!std::isfinite(loss.mean.item()))
        throw std::runtime_error("pretrain_vlp diverged at epoch " + std::to_string(epoch));
      ag::backward(loss.mean);
      opt.step(sched.at(step++));
      sum += loss.mean.item();
      ++batches;
    }
    res.epoch_loss.push_back(sum / batches);
    log::info("vlp epoch ", epoch, " caption loss ", res.epoch_loss.back());
  }
  stack.freeze();
  res.lm_digest_after = stack.digests().at("lm");
  if (res.lm_digest_after != res.lm_digest_before)
    throw std::runtime_error("pretrain_vlp: language model changed while frozen");
  return res;
}

}  // namespace mindcap::blm
