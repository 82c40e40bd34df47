#pragma once

// Self-supervised brain encoder-decoder: a masked autoencoder over fMRI patch
// sequences. Patches are tokenised by a stride-patch_size 1-D convolution
// (a shared linear map per patch), only the visible tokens pass through the
// encoder, and a smaller decoder reconstructs every patch from the encoded
// tokens plus a learned mask token.

#include "mindcap/core/checkpoint.hpp"
#include "mindcap/core/log.hpp"
#include "mindcap/core/nn.hpp"
#include "mindcap/core/optim.hpp"
#include "mindcap/data/prepared.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

namespace mindcap::bed {

using ag::Mat;
using ag::Var;

struct BedConfig {
  int patch_size = 16;
  int v_align = 512;
  int token_dim = 64;
  int decoder_dim = 32;
  int encoder_depth = 4;
  int decoder_depth = 2;
  int head_count = 4;
  int mlp_ratio = 2;
  double mask_ratio = 0.75;
  int epochs = 50;
  int warmup_epochs = 4;
  double learning_rate = 1e-3;
  double weight_decay = 0.05;
  int batch_size = 16;
  bool loss_on_all_patches = false;
  std::uint64_t seed = 7;

  int patch_count() const { return v_align / patch_size; }

  void validate() const {
    if (!(mask_ratio > 0.0 && mask_ratio < 1.0)) throw std::invalid_argument("bed: mask_ratio must lie in (0, 1)");
    if (decoder_depth >= encoder_depth) throw std::invalid_argument("bed: decoder must be shallower than encoder");
    if (patch_size < 1 || v_align < 1 || token_dim < 1 || decoder_dim < 1 || encoder_depth < 1 || decoder_depth < 1 ||
        head_count < 1 || mlp_ratio < 1 || epochs < 1 || batch_size < 1 || learning_rate < 0 || weight_decay < 0 ||
        warmup_epochs < 0)
      throw std::invalid_argument("bed: sizes must be positive");
    if (v_align % patch_size != 0) throw std::invalid_argument("bed: v_align must be divisible by patch_size");
    if (token_dim % head_count != 0 || decoder_dim % head_count != 0)
      throw std::invalid_argument("bed: widths must be divisible by head_count");
  }

  json to_json() const {
    return {{"patch_size", patch_size},       {"v_align", v_align},
            {"token_dim", token_dim},         {"decoder_dim", decoder_dim},
            {"encoder_depth", encoder_depth}, {"decoder_depth", decoder_depth},
            {"head_count", head_count},       {"mlp_ratio", mlp_ratio},
            {"mask_ratio", mask_ratio},       {"epochs", epochs},
            {"warmup_epochs", warmup_epochs}, {"learning_rate", learning_rate},
            {"weight_decay", weight_decay},   {"batch_size", batch_size},
            {"loss_on_all_patches", loss_on_all_patches}, {"seed", seed}};
  }

  static BedConfig from_json(const json& j) {
    BedConfig c;
    c.patch_size = j.at("patch_size");
    c.v_align = j.at("v_align");
    c.token_dim = j.at("token_dim");
    c.decoder_dim = j.at("decoder_dim");
    c.encoder_depth = j.at("encoder_depth");
    c.decoder_depth = j.at("decoder_depth");
    c.head_count = j.at("head_count");
    c.mlp_ratio = j.at("mlp_ratio");
    c.mask_ratio = j.at("mask_ratio");
    c.epochs = j.at("epochs");
    c.warmup_epochs = j.at("warmup_epochs");
    c.learning_rate = j.at("learning_rate");
    c.weight_decay = j.at("weight_decay");
    c.batch_size = j.at("batch_size");
    c.loss_on_all_patches = j.at("loss_on_all_patches");
    c.seed = j.at("seed").get<std::uint64_t>();
    return c;
  }

  // Full-scale values: 24/8 layers, 1024-wide tokens, patch 16 over 15728
  // aligned voxels, 500 epochs with 40 warmup, lr 2.5e-4, batch 16.
  static BedConfig paper_scale() {
    BedConfig c;
    c.patch_size = 16;
    c.v_align = 15728;
    c.token_dim = 1024;
    c.decoder_dim = 512;
    c.encoder_depth = 24;
    c.decoder_depth = 8;
    c.head_count = 16;
    c.mlp_ratio = 4;
    c.epochs = 500;
    c.warmup_epochs = 40;
    c.learning_rate = 2.5e-4;
    c.batch_size = 16;
    return c;
  }
};

struct MaskPlan {
  std::vector<int> kept, masked;  // both ascending
  int patch_count() const { return static_cast<int>(kept.size() + masked.size()); }

  // Inference plan: nothing masked.
  static MaskPlan all_kept(int patches) {
    MaskPlan p;
    for (int i = 0; i < patches; ++i) p.kept.push_back(i);
    return p;
  }

  bool is_partition(int patches) const {
    std::vector<int> seen(static_cast<size_t>(patches), 0);
    for (int i : kept) {
      if (i < 0 || i >= patches) return false;
      ++seen[static_cast<size_t>(i)];
    }
    for (int i : masked) {
      if (i < 0 || i >= patches) return false;
      ++seen[static_cast<size_t>(i)];
    }
    return std::all_of(seen.begin(), seen.end(), [](int c) { return c == 1; });
  }
};

inline int masked_count(int patches, double ratio) {
  return static_cast<int>(std::lround(ratio * patches));
}

// Uniformly random subset of round(ratio * P) patches is masked; the count is
// clamped to [1, P-1] so both sides stay non-empty.
inline MaskPlan random_mask(int patches, double ratio, Rng& rng) {
  if (!(ratio > 0.0 && ratio < 1.0)) throw std::invalid_argument("random_mask: ratio must lie in (0, 1)");
  if (patches < 2) throw std::invalid_argument("random_mask: need at least 2 patches");
  const int n_mask = std::clamp(masked_count(patches, ratio), 1, patches - 1);
  const auto perm = permutation(rng, patches);
  MaskPlan p;
  p.masked.assign(perm.begin(), perm.begin() + n_mask);
  p.kept.assign(perm.begin() + n_mask, perm.end());
  std::sort(p.masked.begin(), p.masked.end());
  std::sort(p.kept.begin(), p.kept.end());
  return p;
}

// Brain encoder: tokenizer + positional table + transformer stack. Shared by
// the masked autoencoder and the brain-language model.
class BrainEncoder {
 public:
  BrainEncoder(nn::ParamSet& ps, const BedConfig& cfg, Rng& rng) : cfg_(cfg) {
    tokenizer_ = nn::Linear(ps, "tokenizer", cfg.patch_size, cfg.token_dim, rng);
    for (int l = 0; l < cfg.encoder_depth; ++l)
      blocks_.emplace_back(ps, "encoder." + std::to_string(l), cfg.token_dim, cfg.head_count,
                           cfg.token_dim * cfg.mlp_ratio, rng);
    norm_ = nn::LayerNorm(ps, "encoder.norm", cfg.token_dim);
    pos_ = nn::sinusoidal_positions(cfg.patch_count(), cfg.token_dim);
  }

  // Encodes the kept tokens of each sequence. Returns the packed kept rows
  // (sum of kept counts x token_dim), in plan order.
  Var encode(const std::vector<const Mat*>& patches, const std::vector<MaskPlan>& plans) const {
    const int P = cfg_.patch_count();
    const auto B = static_cast<int>(patches.size());
    Mat stacked(static_cast<Eigen::Index>(B) * P, cfg_.patch_size);
    for (int b = 0; b < B; ++b) {
      if (patches[static_cast<size_t>(b)]->rows() != P || patches[static_cast<size_t>(b)]->cols() != cfg_.patch_size)
        throw std::invalid_argument("bed: patch matrix shape does not match the tokenizer");
      stacked.middleRows(static_cast<Eigen::Index>(b) * P, P) = *patches[static_cast<size_t>(b)];
    }
    Var tokens = ag::add(tokenizer_(ag::constant(std::move(stacked))), ag::constant(nn::tile_rows(pos_, B)));
    std::vector<int> idx, seg;
    for (int b = 0; b < B; ++b) {
      const auto& plan = plans[static_cast<size_t>(b)];
      if (!plan.is_partition(P)) throw std::invalid_argument("bed: mask plan does not partition the patches");
      for (int k : plan.kept) idx.push_back(b * P + k);
      seg.push_back(static_cast<int>(plan.kept.size()));
    }
    Var x = ag::gather_rows(tokens, idx);
    for (const auto& blk : blocks_) x = blk(x, seg, false);
    return norm_(x);
  }

  // All patches encoded (mask ratio 0). B*P x token_dim.
  Var encode_all(const std::vector<const Mat*>& patches) const {
    std::vector<MaskPlan> plans(patches.size(), MaskPlan::all_kept(cfg_.patch_count()));
    return encode(patches, plans);
  }

  const BedConfig& config() const { return cfg_; }

 private:
  BedConfig cfg_;
  nn::Linear tokenizer_;
  std::vector<nn::TransformerBlock> blocks_;
  nn::LayerNorm norm_;
  Mat pos_;
};

class BedModel {
 public:
  explicit BedModel(const BedConfig& cfg) : cfg_(cfg) {
    cfg_.validate();
    Rng rng(derive_seed(cfg.seed, "bed/init"));
    encoder_ = std::make_unique<BrainEncoder>(enc_params_, cfg_, rng);
    dec_embed_ = nn::Linear(dec_params_, "decoder.embed", cfg_.token_dim, cfg_.decoder_dim, rng);
    mask_token_ = dec_params_.add("decoder.mask_token", normal_matrix<Mat>(rng, 1, cfg_.decoder_dim, 0.02), false);
    for (int l = 0; l < cfg_.decoder_depth; ++l)
      dec_blocks_.emplace_back(dec_params_, "decoder." + std::to_string(l), cfg_.decoder_dim, cfg_.head_count,
                               cfg_.decoder_dim * cfg_.mlp_ratio, rng);
    dec_norm_ = nn::LayerNorm(dec_params_, "decoder.norm", cfg_.decoder_dim);
    head_ = nn::Linear(dec_params_, "decoder.head", cfg_.decoder_dim, cfg_.patch_size, rng);
    dec_pos_ = nn::sinusoidal_positions(cfg_.patch_count(), cfg_.decoder_dim);
  }

  // Predicted patches for every position, packed B*P x patch_size.
  Var forward(const std::vector<const Mat*>& patches, const std::vector<MaskPlan>& plans) const {
    const int P = cfg_.patch_count();
    const auto B = static_cast<int>(patches.size());
    Var enc = encoder_->encode(patches, plans);
    Var dec = dec_embed_(enc);
    const auto n_enc = static_cast<int>(dec.rows());
    Var pool = ag::concat_rows({dec, mask_token_});
    std::vector<int> order;
    order.reserve(static_cast<size_t>(B) * P);
    int base = 0;
    for (int b = 0; b < B; ++b) {
      const auto& plan = plans[static_cast<size_t>(b)];
      std::vector<int> slot(static_cast<size_t>(P), n_enc);  // mask token row
      for (size_t i = 0; i < plan.kept.size(); ++i) slot[static_cast<size_t>(plan.kept[i])] = base + static_cast<int>(i);
      order.insert(order.end(), slot.begin(), slot.end());
      base += static_cast<int>(plan.kept.size());
    }
    Var x = ag::add(ag::gather_rows(pool, order), ag::constant(nn::tile_rows(dec_pos_, B)));
    const std::vector<int> seg(static_cast<size_t>(B), P);
    for (const auto& blk : dec_blocks_) x = blk(x, seg, false);
    return head_(dec_norm_(x));
  }

  // Mean squared error over masked entries per sample, averaged over the batch.
  Var loss(const Var& pred, const std::vector<const Mat*>& targets, const std::vector<MaskPlan>& plans) const {
    const int P = cfg_.patch_count();
    const auto B = static_cast<int>(targets.size());
    Mat target(static_cast<Eigen::Index>(B) * P, cfg_.patch_size);
    std::vector<double> w(static_cast<size_t>(B) * P, 0.0);
    for (int b = 0; b < B; ++b) {
      target.middleRows(static_cast<Eigen::Index>(b) * P, P) = *targets[static_cast<size_t>(b)];
      const auto& plan = plans[static_cast<size_t>(b)];
      if (cfg_.loss_on_all_patches) {
        for (int p = 0; p < P; ++p) w[static_cast<size_t>(b * P + p)] = 1.0 / (B * P * cfg_.patch_size);
      } else {
        if (plan.masked.empty()) throw std::invalid_argument("bed_loss: empty masked set");
        const double wt = 1.0 / (static_cast<double>(B) * plan.masked.size() * cfg_.patch_size);
        for (int p : plan.masked) w[static_cast<size_t>(b * P + p)] = wt;
      }
    }
    return ag::weighted_sq_error(pred, target, w);
  }

  const BedConfig& config() const { return cfg_; }
  const BrainEncoder& encoder() const { return *encoder_; }
  nn::ParamSet& encoder_params() { return enc_params_; }
  nn::ParamSet& decoder_params() { return dec_params_; }
  const nn::ParamSet& encoder_params() const { return enc_params_; }
  const nn::ParamSet& decoder_params() const { return dec_params_; }

  Checkpoint to_checkpoint(const json& metadata = json::object(), const std::string& rng = "") const {
    Checkpoint ck;
    ck.kind = "bed";
    ck.config = cfg_.to_json();
    ck.config_hash = config_hash(ck.config);
    ck.metadata = metadata;
    ck.rng_state = rng;
    ck.put_all(enc_params_.state(), "be.");
    ck.put_all(dec_params_.state(), "bed_decoder.");
    return ck;
  }

  static BedModel from_checkpoint(const Checkpoint& ck) {
    if (ck.kind != "bed") throw std::runtime_error("expected a bed checkpoint, got '" + ck.kind + "'");
    if (config_hash(ck.config) != ck.config_hash) throw std::runtime_error("bed checkpoint config hash mismatch");
    BedModel m(BedConfig::from_json(ck.config));
    m.enc_params_.load_state(ck.tensors, "be.");
    m.dec_params_.load_state(ck.tensors, "bed_decoder.");
    return m;
  }

 private:
  BedConfig cfg_;
  nn::ParamSet enc_params_, dec_params_;
  std::unique_ptr<BrainEncoder> encoder_;
  nn::Linear dec_embed_;
  Var mask_token_;
  std::vector<nn::TransformerBlock> dec_blocks_;
  nn::LayerNorm dec_norm_;
  nn::Linear head_;
  Mat dec_pos_;
};

// Scalar masked-MSE on plain matrices (single sample).
inline double bed_loss(const Mat& pred, const Mat& target, const MaskPlan& plan) {
  if (pred.rows() != target.rows() || pred.cols() != target.cols())
    throw std::invalid_argument("bed_loss: shape mismatch");
  if (plan.masked.empty()) throw std::invalid_argument("bed_loss: empty masked set");
  double s = 0.0;
  for (int p : plan.masked) s += (pred.row(p) - target.row(p)).squaredNorm();
  return s / (static_cast<double>(plan.masked.size()) * static_cast<double>(pred.cols()));
}

struct PretrainResult {
  BedModel model;
  std::vector<double> epoch_loss;
  double initial_eval_mse = 0.0;
  double final_eval_mse = 0.0;
};

// Masked MSE over a fixed evaluation set with masks drawn from a fixed seed.
inline double evaluate_masked_mse(const BedModel& model, const std::vector<const Mat*>& items, std::uint64_t seed) {
  Rng rng(derive_seed(seed, "bed/eval_masks"));
  double total = 0.0;
  const size_t bs = 32;
  for (size_t i = 0; i < items.size(); i += bs) {
    std::vector<const Mat*> batch(items.begin() + static_cast<long>(i),
                                  items.begin() + static_cast<long>(std::min(items.size(), i + bs)));
    std::vector<MaskPlan> plans;
    for (size_t b = 0; b < batch.size(); ++b)
      plans.push_back(random_mask(model.config().patch_count(), model.config().mask_ratio, rng));
    const Var pred = model.forward(batch, plans);
    for (size_t b = 0; b < batch.size(); ++b) {
      const Mat p = pred.value().middleRows(static_cast<Eigen::Index>(b) * model.config().patch_count(),
                                            model.config().patch_count());
      total += bed_loss(p, *batch[b], plans[b]);
    }
  }
  return total / static_cast<double>(items.size());
}

// Cross-subject masked-patch pretraining with AdamW and warmup + cosine decay.
inline PretrainResult pretrain_bed(const std::vector<data::PreparedSubject>& subjects,
                                   const std::vector<data::PreparedItem>& eval_items, const BedConfig& cfg) {
  if (subjects.size() < 2) throw std::invalid_argument("pretrain_bed: cross-subject training needs >= 2 subjects");
  PretrainResult res{BedModel(cfg), {}, 0.0, 0.0};
  BedModel& model = res.model;
  const int P = cfg.patch_count();

  std::vector<const Mat*> train;
  for (const auto& s : subjects)
    for (const auto& it : s.train) {
      if (it.patches.patch_count() != P || it.patches.patch_size() != cfg.patch_size)
        throw std::invalid_argument("pretrain_bed: data patch layout does not match config");
      train.push_back(&it.patches.patches);
    }
  std::vector<const Mat*> eval;
  for (const auto& it : eval_items) eval.push_back(&it.patches.patches);

  nn::ParamSet opt_params;
  opt_params.extend(model.encoder_params(), "be.");
  opt_params.extend(model.decoder_params(), "bed_decoder.");
  optim::AdamW opt(opt_params, cfg.weight_decay);

  const int steps_per_epoch = static_cast<int>((train.size() + cfg.batch_size - 1) / cfg.batch_size);
  optim::WarmupCosine sched{cfg.learning_rate, static_cast<long>(cfg.warmup_epochs) * steps_per_epoch,
                            static_cast<long>(cfg.epochs) * steps_per_epoch};

  if (!eval.empty()) res.initial_eval_mse = evaluate_masked_mse(model, eval, cfg.seed);
  Rng mask_rng(derive_seed(cfg.seed, "bed/train_masks"));
  long step = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto order = data::Dataset::epoch_order(static_cast<int>(train.size()), derive_seed(cfg.seed, "bed"), epoch);
    double epoch_sum = 0.0;
    int batches = 0;
    for (size_t i = 0; i < order.size(); i += static_cast<size_t>(cfg.batch_size)) {
      std::vector<const Mat*> batch;
      std::vector<MaskPlan> plans;
      for (size_t j = i; j < std::min(order.size(), i + static_cast<size_t>(cfg.batch_size)); ++j) {
        batch.push_back(train[static_cast<size_t>(order[j])]);
        plans.push_back(random_mask(P, cfg.mask_ratio, mask_rng));
      }
      opt_params.zero_grad();
      Var loss = model.loss(model.forward(batch, plans), batch, plans);
      if (!std::isfinite(loss.item()))
        throw std::runtime_error("pretrain_bed diverged at epoch " + std::to_string(epoch) + " step " +
                                 std::to_string(step) + " (loss " + std::to_string(loss.item()) + ")");
      ag::backward(loss);
      opt.step(sched.at(step++));
      epoch_sum += loss.item();
      ++batches;
    }
    res.epoch_loss.push_back(epoch_sum / batches);
    log::info("bed epoch ", epoch, " masked mse ", res.epoch_loss.back());
  }
  if (!eval.empty()) res.final_eval_mse = evaluate_masked_mse(model, eval, cfg.seed);
  return res;
}

}  // namespace mindcap::bed
