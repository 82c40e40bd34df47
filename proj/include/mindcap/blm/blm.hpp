#pragma once

// Brain-language model: brain encoder -> fMRI projector (fully connected layer
// then a 1-D convolution over the token sequence) -> frozen Q-Former -> frozen
// text projector -> query prefix for the frozen language model. Only the
// brain encoder and the fMRI projector are trained.

#include "mindcap/bed/bed.hpp"
#include "mindcap/blm/vlp.hpp"

#include <algorithm>
#include <map>
#include <memory>

namespace mindcap::blm {

struct BlmConfig {
  int projector_kernel = 3;
  int captions_per_stimulus = 5;  // M
  int epochs = 20;
  int warmup_steps = 100;
  double learning_rate = 5e-4;
  double weight_decay = 0.05;
  int batch_size = 8;
  std::string objective = "lm";  // lm | feature_mse
  std::string decode_strategy = "greedy";
  int beam_width = 3;
  std::uint64_t seed = 17;

  void validate() const {
    if (projector_kernel < 1 || projector_kernel % 2 == 0)
      throw std::invalid_argument("blm: projector_kernel must be odd and positive");
    if (captions_per_stimulus < 1 || epochs < 0 || batch_size < 1 || warmup_steps < 0 || learning_rate < 0)
      throw std::invalid_argument("blm: invalid training sizes");
    if (objective != "lm" && objective != "feature_mse") throw std::invalid_argument("blm: unknown objective " + objective);
    if (decode_strategy != "greedy" && decode_strategy != "beam")
      throw std::invalid_argument("blm: unknown decode strategy " + decode_strategy);
  }

  json to_json() const {
    return {{"projector_kernel", projector_kernel}, {"captions_per_stimulus", captions_per_stimulus},
            {"epochs", epochs},                     {"warmup_steps", warmup_steps},
            {"learning_rate", learning_rate},       {"weight_decay", weight_decay},
            {"batch_size", batch_size},             {"objective", objective},
            {"decode_strategy", decode_strategy},   {"beam_width", beam_width},
            {"seed", seed}};
  }
  static BlmConfig from_json(const json& j) {
    BlmConfig c;
    c.projector_kernel = j.at("projector_kernel");
    c.captions_per_stimulus = j.at("captions_per_stimulus");
    c.epochs = j.at("epochs");
    c.warmup_steps = j.at("warmup_steps");
    c.learning_rate = j.at("learning_rate");
    c.weight_decay = j.at("weight_decay");
    c.batch_size = j.at("batch_size");
    c.objective = j.at("objective");
    c.decode_strategy = j.at("decode_strategy");
    c.beam_width = j.at("beam_width");
    c.seed = j.at("seed").get<std::uint64_t>();
    return c;
  }

  // Full-scale schedule: 10 epochs, 1000 warmup steps, lr 1e-5, batch 2.
  static BlmConfig paper_scale() {
    BlmConfig c;
    c.epochs = 10;
    c.warmup_steps = 1000;
    c.learning_rate = 1e-5;
    c.batch_size = 2;
    return c;
  }
};

class FmriProjector {
 public:
  FmriProjector() = default;
  FmriProjector(nn::ParamSet& ps, int in_dim, int out_dim, int kernel, Rng& rng) : half_(kernel / 2) {
    fc_ = nn::Linear(ps, "fc", in_dim, out_dim, rng);
    conv_ = nn::Linear(ps, "conv", kernel * out_dim, out_dim, rng);
  }

  Var operator()(const Var& tokens, const std::vector<int>& seg) const {
    return conv_(ag::unfold_rows(fc_(tokens), half_, seg));
  }

  Var fc_weight() const { return fc_.weight; }
  Var conv_weight() const { return conv_.weight; }

 private:
  int half_ = 0;
  nn::Linear fc_, conv_;
};

// Deterministic caption subset for the M < 5 variants, drawn per stimulus.
inline std::vector<std::string> select_captions(const std::vector<std::string>& all, int m, std::uint64_t seed,
                                                const std::string& stimulus) {
  if (m >= static_cast<int>(all.size())) return all;
  Rng rng(derive_seed(seed, "captions/" + stimulus));
  auto perm = permutation(rng, static_cast<int>(all.size()));
  perm.resize(static_cast<size_t>(m));
  std::sort(perm.begin(), perm.end());
  std::vector<std::string> out;
  for (int i : perm) out.push_back(all[static_cast<size_t>(i)]);
  return out;
}

class BrainLanguageModel {
 public:
  BrainLanguageModel(const bed::BedConfig& bed_cfg, const FrozenStack& frozen, const BlmConfig& cfg)
      : bed_cfg_(bed_cfg), cfg_(cfg), frozen_(&frozen) {
    bed_cfg_.validate();
    cfg_.validate();
    Rng rng(derive_seed(cfg.seed, "blm/init"));
    Rng be_rng(derive_seed(bed_cfg.seed, "bed/init"));
    encoder_ = std::make_unique<bed::BrainEncoder>(be_ps_, bed_cfg_, be_rng);
    projector_ = FmriProjector(proj_ps_, bed_cfg_.token_dim, frozen.qformer_dim(), cfg.projector_kernel, rng);
  }

  // Copies the brain-encoder weights of a pretrained masked autoencoder.
  void load_encoder(const Checkpoint& bed_ck) {
    if (bed_ck.kind != "bed") throw std::runtime_error("expected a bed checkpoint, got '" + bed_ck.kind + "'");
    const auto other = bed::BedConfig::from_json(bed_ck.config);
    if (other.v_align != bed_cfg_.v_align || other.patch_size != bed_cfg_.patch_size ||
        other.token_dim != bed_cfg_.token_dim || other.encoder_depth != bed_cfg_.encoder_depth)
      throw std::invalid_argument("bed checkpoint is incompatible with the brain-language model layout");
    be_ps_.load_state(bed_ck.tensors, "be.");
  }

  // Q-Former outputs (B*K x qformer_dim) for a batch of patch matrices.
  Var qformer_out(const std::vector<const Mat*>& patches) const {
    const Var tokens = encoder_->encode_all(patches);
    const std::vector<int> seg(patches.size(), bed_cfg_.patch_count());
    return frozen_->qformer(projector_(tokens, seg), seg);
  }

  // Query embeddings in LM space, B*K x lm_dim.
  Var queries(const std::vector<const Mat*>& patches) const { return frozen_->text_projection(qformer_out(patches)); }

  CaptionLoss loss(const std::vector<const Mat*>& patches,
                   const std::vector<std::vector<std::vector<int>>>& captions) const {
    const Var q = queries(patches);
    return prefix_caption_loss(frozen_->lm(), &q, frozen_->query_count(), captions);
  }

  // Mean squared error between fMRI queries and image-derived target queries.
  Var feature_loss(const std::vector<const Mat*>& patches, const std::vector<const Mat*>& targets) const {
    const Var q = queries(patches);
    const int K = frozen_->query_count();
    Mat t(q.rows(), q.cols());
    for (size_t b = 0; b < targets.size(); ++b) t.middleRows(static_cast<Eigen::Index>(b) * K, K) = *targets[b];
    const std::vector<double> w(static_cast<size_t>(q.rows()), 1.0 / static_cast<double>(q.rows() * q.cols()));
    return ag::weighted_sq_error(q, t, w);
  }

  std::vector<std::string> caption(const std::vector<const Mat*>& patches, const DecodeParams& p) const {
    std::vector<std::string> out;
    ag::NoGradGuard ng;
    for (size_t i = 0; i < patches.size(); i += 32) {
      const std::vector<const Mat*> batch(patches.begin() + static_cast<long>(i),
                                          patches.begin() + static_cast<long>(std::min(patches.size(), i + 32)));
      const Mat q = queries(batch).value();
      for (const auto& d : decode(frozen_->lm(), &q, frozen_->query_count(), static_cast<int>(batch.size()), p)) {
        out.push_back(frozen_->vocab().detokenize(d.words));
        if (out.back().empty()) log::warn("empty caption decoded");
      }
    }
    return out;
  }

  DecodeParams decode_params() const { return {cfg_.decode_strategy, cfg_.beam_width, frozen_->max_caption_len()}; }

  const BlmConfig& config() const { return cfg_; }
  const bed::BedConfig& bed_config() const { return bed_cfg_; }
  const FrozenStack& frozen() const { return *frozen_; }
  nn::ParamSet& encoder_params() { return be_ps_; }
  nn::ParamSet& projector_params() { return proj_ps_; }
  const nn::ParamSet& encoder_params() const { return be_ps_; }
  const nn::ParamSet& projector_params() const { return proj_ps_; }
  const FmriProjector& projector() const { return projector_; }

  std::map<std::string, std::string> trainable_digests() const {
    return {{"brain_encoder", tensor_digest(be_ps_.state())}, {"fmri_projector", tensor_digest(proj_ps_.state())}};
  }

  json config_json() const {
    return {{"bed", bed_cfg_.to_json()}, {"blm", cfg_.to_json()}, {"frozen", frozen_->digests()}};
  }

  Checkpoint to_checkpoint(const json& metadata = json::object()) const {
    Checkpoint ck;
    ck.kind = "blm";
    ck.config = config_json();
    ck.config_hash = config_hash(ck.config);
    ck.metadata = metadata;
    ck.put_all(be_ps_.state(), "be.");
    ck.put_all(proj_ps_.state(), "fmri_projector.");
    return ck;
  }

  static BrainLanguageModel from_checkpoint(const Checkpoint& ck, const FrozenStack& frozen) {
    if (ck.kind != "blm") throw std::runtime_error("expected a blm checkpoint, got '" + ck.kind + "'");
    if (config_hash(ck.config) != ck.config_hash) throw std::runtime_error("blm checkpoint config hash mismatch");
    if (ck.config.at("frozen") != json(frozen.digests()))
      throw std::runtime_error("blm checkpoint was trained against a different frozen stack");
    BrainLanguageModel m(bed::BedConfig::from_json(ck.config.at("bed")), frozen, BlmConfig::from_json(ck.config.at("blm")));
    m.be_ps_.load_state(ck.tensors, "be.");
    m.proj_ps_.load_state(ck.tensors, "fmri_projector.");
    return m;
  }

 private:
  bed::BedConfig bed_cfg_;
  BlmConfig cfg_;
  const FrozenStack* frozen_;
  nn::ParamSet be_ps_, proj_ps_;
  std::unique_ptr<bed::BrainEncoder> encoder_;
  FmriProjector projector_;
};

struct BlmTrainItem {
  const Mat* patches = nullptr;
  std::vector<std::vector<int>> captions;  // tokenised, M per item
  const Mat* target_queries = nullptr;     // K x lm_dim, feature_mse objective only
};

struct BlmTrainResult {
  std::vector<double> epoch_loss;      // mean over captions (training objective)
  std::vector<double> epoch_caption_sum;   // sum over captions, lm objective only
  double initial_loss = 0.0;           // objective on a fixed training subset before the first step
  double final_loss = 0.0;             // same subset after the last step
  std::map<std::string, std::string> frozen_before, frozen_after;
};

class FrozenDigestError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

inline double objective_on(const BrainLanguageModel& m, const std::vector<BlmTrainItem>& items, size_t limit) {
  ag::NoGradGuard ng;
  double total = 0.0;
  const size_t n = std::min(limit, items.size());
  for (size_t i = 0; i < n; i += 32) {
    std::vector<const Mat*> p, t;
    std::vector<std::vector<std::vector<int>>> caps;
    for (size_t j = i; j < std::min(n, i + 32); ++j) {
      p.push_back(items[j].patches);
      t.push_back(items[j].target_queries);
      caps.push_back(items[j].captions);
    }
    const double l = m.config().objective == "lm" ? m.loss(p, caps).mean.item() : m.feature_loss(p, t).item();
    total += l * static_cast<double>(p.size());
  }
  return total / static_cast<double>(n);
}

}  // namespace detail

// Optimises the brain encoder and fMRI projector only. The frozen stack's
// digests are compared before and after; any change aborts with
// FrozenDigestError.
inline BlmTrainResult train_blm(BrainLanguageModel& model, const std::vector<BlmTrainItem>& items) {
  const auto& cfg = model.config();
  if (items.empty()) throw std::invalid_argument("train_blm: no training items");
  BlmTrainResult res;
  res.frozen_before = model.frozen().digests();

  nn::ParamSet train;
  train.extend(model.encoder_params(), "be.");
  train.extend(model.projector_params(), "fmri_projector.");
  train.set_trainable(true);
  optim::AdamW opt(train, cfg.weight_decay);
  const long steps_per_epoch = static_cast<long>((items.size() + cfg.batch_size - 1) / cfg.batch_size);
  optim::WarmupCosine sched{cfg.learning_rate, cfg.warmup_steps, std::max(1L, steps_per_epoch * cfg.epochs)};

  constexpr size_t kProbe = 256;
  res.initial_loss = detail::objective_on(model, items, kProbe);
  long step = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto order = data::Dataset::epoch_order(static_cast<int>(items.size()), derive_seed(cfg.seed, "blm"), epoch);
    double sum = 0.0, caption_total = 0.0;
    int batches = 0;
    for (size_t i = 0; i < order.size(); i += static_cast<size_t>(cfg.batch_size)) {
      std::vector<const Mat*> p, t;
      std::vector<std::vector<std::vector<int>>> caps;
      for (size_t j = i; j < std::min(order.size(), i + static_cast<size_t>(cfg.batch_size)); ++j) {
        const auto& it = items[static_cast<size_t>(order[j])];
        p.push_back(it.patches);
        t.push_back(it.target_queries);
        caps.push_back(it.captions);
      }
      train.zero_grad();
      Var loss;
      if (cfg.objective == "lm") {
        auto l = model.loss(p, caps);
        caption_total += l.caption_sum;
        loss = l.mean;
      } else {
        loss = model.feature_loss(p, t);
      }
      if (!std::isfinite(loss.item()))
        throw std::runtime_error("train_blm diverged at epoch " + std::to_string(epoch) + " step " + std::to_string(step));
      ag::backward(loss);
      opt.step(sched.at(step++));
      sum += loss.item();
      ++batches;
    }
    res.epoch_loss.push_back(sum / batches);
    res.epoch_caption_sum.push_back(caption_total / batches);
    log::info("blm epoch ", epoch, " loss ", res.epoch_loss.back(), " (caption sum ", res.epoch_caption_sum.back(), ")");
  }
  train.zero_grad();
  res.final_loss = detail::objective_on(model, items, kProbe);
  res.frozen_after = model.frozen().digests();
  if (res.frozen_after != res.frozen_before)
    throw FrozenDigestError("train_blm: frozen stack digest changed during training");
  return res;
}

}  // namespace mindcap::blm
