#pragma once

// Latent diffusion over autoencoder codes: a scaled linear beta schedule,
// forward noising, a small caption-conditioned noise predictor, and the
// image-to-image reconstruction path (ridge -> sketch -> partial forward
// noise -> reverse denoising -> decode).

#include "mindcap/core/nn.hpp"
#include "mindcap/core/optim.hpp"
#include "mindcap/recon/autoencoder.hpp"

#include <cmath>
#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace mindcap::recon {

using ag::Mat;
using ag::Var;

class DiffusionSchedule {
 public:
  DiffusionSchedule() = default;

  // beta_t = (1000 / T) * linspace(beta_start, beta_end, T), t = 1..T.
  explicit DiffusionSchedule(int steps, double beta_start = 1e-4, double beta_end = 0.02)
      : steps_(steps), beta_start_(beta_start), beta_end_(beta_end) {
    if (steps < 2) throw std::invalid_argument("diffusion schedule needs at least 2 steps");
    beta_.assign(static_cast<size_t>(steps + 1), 0.0);
    alpha_bar_.assign(static_cast<size_t>(steps + 1), 1.0);
    const double s = 1000.0 / steps;
    for (int t = 1; t <= steps; ++t) {
      const double b = s * (beta_start + (beta_end - beta_start) * (t - 1) / (steps - 1));
      if (!(b > 0.0 && b < 1.0)) throw std::invalid_argument("diffusion schedule: beta outside (0, 1); use more steps");
      beta_[static_cast<size_t>(t)] = b;
      alpha_bar_[static_cast<size_t>(t)] = alpha_bar_[static_cast<size_t>(t - 1)] * (1.0 - b);
    }
  }

  int steps() const { return steps_; }
  double beta(int t) const { return beta_.at(static_cast<size_t>(t)); }
  double alpha_bar(int t) const { return alpha_bar_.at(static_cast<size_t>(t)); }

  json to_json() const { return {{"steps", steps_}, {"beta_start", beta_start_}, {"beta_end", beta_end_}, {"scaling", "linear_x1000_over_T"}}; }
  std::string hash() const { return config_hash(to_json()); }

  // Reverse steps executed for an image-to-image strength.
  int start_step(double strength) const {
    if (!(strength >= 0.0 && strength <= 1.0)) throw std::invalid_argument("strength must lie in [0, 1]");
    return static_cast<int>(std::lround(strength * steps_));
  }

 private:
  int steps_ = 0;
  double beta_start_ = 0, beta_end_ = 0;
  std::vector<double> beta_, alpha_bar_;
};

// z_t = sqrt(abar_t) z + sqrt(1 - abar_t) eps, eps ~ N(0, I).
inline Vec forward_diffuse(const Vec& z, int t, const DiffusionSchedule& s, Rng& rng) {
  if (t < 0 || t > s.steps()) throw std::out_of_range("forward_diffuse: t outside [0, T]");
  if (t == 0) return z;
  std::normal_distribution<double> n;
  Vec eps(z.size());
  for (Eigen::Index i = 0; i < eps.size(); ++i) eps(i) = n(rng);
  return std::sqrt(s.alpha_bar(t)) * z + std::sqrt(1.0 - s.alpha_bar(t)) * eps;
}

struct DenoiserConfig {
  int hidden = 128;
  int depth = 2;
  int heads = 4;
  int train_steps = 20000;
  int batch_size = 64;
  int warmup_steps = 100;
  double learning_rate = 2e-3;
  double weight_decay = 0.0;
  double uncond_prob = 0.1;  // caption dropped to the null token during training
  std::uint64_t seed = 23;

  json to_json() const {
    return {{"hidden", hidden},         {"depth", depth},
            {"heads", heads},           {"train_steps", train_steps},
            {"batch_size", batch_size}, {"warmup_steps", warmup_steps},
            {"learning_rate", learning_rate}, {"weight_decay", weight_decay},
            {"uncond_prob", uncond_prob}, {"seed", seed}};
  }
  static DenoiserConfig from_json(const json& j) {
    DenoiserConfig c;
    c.hidden = j.at("hidden");
    c.depth = j.at("depth");
    c.heads = j.at("heads");
    c.train_steps = j.at("train_steps");
    c.batch_size = j.at("batch_size");
    c.warmup_steps = j.at("warmup_steps");
    c.learning_rate = j.at("learning_rate");
    c.weight_decay = j.at("weight_decay");
    c.uncond_prob = j.at("uncond_prob");
    c.seed = j.at("seed").get<std::uint64_t>();
    return c;
  }
};

// Noise predictor: the noisy code plus a time embedding forms one query
// token that cross-attends to [null token; projected caption embeddings].
class Denoiser {
 public:
  Denoiser(const DenoiserConfig& cfg, const DiffusionSchedule& sched, int latent_dim, int text_dim)
      : cfg_(cfg), schedule_hash_(sched.hash()), steps_(sched.steps()), latent_dim_(latent_dim), text_dim_(text_dim) {
    Rng rng(derive_seed(cfg.seed, "denoiser/init"));
    const int d = cfg.hidden;
    in_ = nn::Linear(ps_, "in", latent_dim, d, rng);
    time1_ = nn::Linear(ps_, "time1", d, d, rng);
    time2_ = nn::Linear(ps_, "time2", d, d, rng);
    cond_ = nn::Linear(ps_, "cond", text_dim, d, rng);
    null_ = ps_.add("null_token", normal_matrix<Mat>(rng, 1, d, 0.5), false);
    for (int b = 0; b < cfg.depth; ++b) {
      const std::string n = "block" + std::to_string(b);
      Block blk;
      blk.ln_x = nn::LayerNorm(ps_, n + ".ln_x", d);
      blk.ln_ctx = nn::LayerNorm(ps_, n + ".ln_ctx", d);
      blk.cross = nn::MultiHeadAttention(ps_, n + ".cross", d, cfg.heads, rng);
      blk.ln_mlp = nn::LayerNorm(ps_, n + ".ln_mlp", d);
      blk.mlp = nn::Mlp(ps_, n + ".mlp", d, 4 * d, rng);
      blocks_.push_back(std::move(blk));
    }
    ln_out_ = nn::LayerNorm(ps_, "ln_out", d);
    out_ = nn::Linear(ps_, "out", d, latent_dim, rng);
    time_table_ = nn::sinusoidal_positions(steps_ + 1, d);
    text_pos_ = nn::sinusoidal_positions(64, d);
  }

  // z_t: B x latent_dim; t: per-row step in [1, T]; conds: per-row caption
  // embeddings (rows x text_dim) or nullptr for the unconditioned pass.
  Var operator()(const Mat& z_t, const std::vector<int>& t, const std::vector<const Mat*>& conds) const {
    const auto b = static_cast<size_t>(z_t.rows());
    if (t.size() != b || conds.size() != b) throw std::invalid_argument("denoiser: batch size mismatch");
    if (z_t.cols() != latent_dim_) throw std::invalid_argument("denoiser: latent dimension mismatch");
    Mat temb(z_t.rows(), cfg_.hidden);
    for (size_t i = 0; i < b; ++i) {
      if (t[i] < 1 || t[i] > steps_) throw std::out_of_range("denoiser: t outside [1, T]");
      temb.row(static_cast<Eigen::Index>(i)) = time_table_.row(t[i]);
    }
    Var x = ag::add(in_(ag::constant(z_t)), time2_(ag::gelu(time1_(ag::constant(temb)))));

    // All caption rows are projected in one product; the context of row i
    // is then gathered as [null; its caption rows].
    Eigen::Index total = 0;
    for (size_t i = 0; i < b; ++i) {
      if (!conds[i]) continue;
      if (conds[i]->cols() != text_dim_) throw std::invalid_argument("denoiser: caption embedding width mismatch");
      if (conds[i]->rows() > text_pos_.rows()) throw std::invalid_argument("denoiser: caption longer than 64 tokens");
      total += conds[i]->rows();
    }
    std::vector<int> q_seg(b, 1), ctx_seg, gather;
    Var table = null_;
    if (total > 0) {
      Mat text(total, text_dim_), pos(total, cfg_.hidden);
      Eigen::Index r = 0;
      for (size_t i = 0; i < b; ++i) {
        if (!conds[i]) continue;
        const auto rows = conds[i]->rows();
        text.middleRows(r, rows) = *conds[i];
        pos.middleRows(r, rows) = text_pos_.topRows(rows);
        r += rows;
      }
      table = ag::concat_rows({null_, ag::add(cond_(ag::constant(text)), ag::constant(pos))});
    }
    int next = 1;
    for (size_t i = 0; i < b; ++i) {
      gather.push_back(0);
      const int rows = conds[i] ? static_cast<int>(conds[i]->rows()) : 0;
      for (int k = 0; k < rows; ++k) gather.push_back(next++);
      ctx_seg.push_back(1 + rows);
    }
    const Var ctx = ag::gather_rows(table, gather);
    for (const auto& blk : blocks_) {
      x = ag::add(x, blk.cross(blk.ln_x(x), blk.ln_ctx(ctx), q_seg, ctx_seg, false));
      x = ag::add(x, blk.mlp(blk.ln_mlp(x)));
    }
    return out_(ln_out_(x));
  }

  Mat predict(const Mat& z_t, const std::vector<int>& t, const std::vector<const Mat*>& conds) const {
    ag::NoGradGuard ng;
    return (*this)(z_t, t, conds).value();
  }

  const DenoiserConfig& config() const { return cfg_; }
  const std::string& schedule_hash() const { return schedule_hash_; }
  int latent_dim() const { return latent_dim_; }
  int text_dim() const { return text_dim_; }
  nn::ParamSet& params() { return ps_; }
  const nn::ParamSet& params() const { return ps_; }

  json config_json() const {
    return {{"denoiser", cfg_.to_json()}, {"schedule_hash", schedule_hash_}, {"steps", steps_},
            {"latent_dim", latent_dim_}, {"text_dim", text_dim_}};
  }

  Checkpoint to_checkpoint(const json& metadata = json::object()) const {
    Checkpoint ck;
    ck.kind = "denoiser";
    ck.config = config_json();
    ck.config_hash = config_hash(ck.config);
    ck.metadata = metadata;
    ck.put_all(ps_.state(), "");
    return ck;
  }

  static Denoiser from_checkpoint(const Checkpoint& ck, const DiffusionSchedule& sched) {
    if (ck.kind != "denoiser") throw std::runtime_error("expected a denoiser checkpoint, got '" + ck.kind + "'");
    if (config_hash(ck.config) != ck.config_hash) throw std::runtime_error("denoiser checkpoint config hash mismatch");
    if (ck.config.at("schedule_hash") != sched.hash())
      throw std::runtime_error("denoiser was trained with a different diffusion schedule");
    Denoiser d(DenoiserConfig::from_json(ck.config.at("denoiser")), sched, ck.config.at("latent_dim"),
               ck.config.at("text_dim"));
    d.ps_.load_state(ck.tensors, "");
    return d;
  }

 private:
  struct Block {
    nn::LayerNorm ln_x, ln_ctx, ln_mlp;
    nn::MultiHeadAttention cross;
    nn::Mlp mlp;
  };

  DenoiserConfig cfg_;
  std::string schedule_hash_;
  int steps_, latent_dim_, text_dim_;
  nn::ParamSet ps_;
  nn::Linear in_, time1_, time2_, cond_, out_;
  Var null_;
  std::vector<Block> blocks_;
  nn::LayerNorm ln_out_;
  Mat time_table_, text_pos_;
};

// One training image: its autoencoder code and the embeddings of each of
// its captions.
struct DenoiserItem {
  Vec latent;
  std::vector<Mat> captions;
};

struct DenoiserTrainResult {
  std::vector<double> curve;  // loss per 100 steps
};

inline DenoiserTrainResult train_denoiser(Denoiser& model, const DiffusionSchedule& sched,
                                          const std::vector<DenoiserItem>& items) {
  if (items.empty()) throw std::invalid_argument("train_denoiser: no items");
  if (model.schedule_hash() != sched.hash()) throw std::invalid_argument("train_denoiser: schedule mismatch");
  const auto& cfg = model.config();
  Rng rng(derive_seed(cfg.seed, "denoiser/train"));
  auto& ps = model.params();
  ps.set_trainable(true);
  optim::AdamW opt(ps, cfg.weight_decay);
  optim::WarmupCosine lr{cfg.learning_rate, cfg.warmup_steps, cfg.train_steps};
  std::uniform_int_distribution<size_t> pick(0, items.size() - 1);
  std::uniform_int_distribution<int> pick_t(1, sched.steps());
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  std::normal_distribution<double> normal;
  const int d = model.latent_dim();
  DenoiserTrainResult res;
  double window = 0.0;
  for (int step = 0; step < cfg.train_steps; ++step) {
    Mat zt(cfg.batch_size, d), eps(cfg.batch_size, d);
    std::vector<int> ts;
    std::vector<const Mat*> conds;
    for (int b = 0; b < cfg.batch_size; ++b) {
      const auto& it = items[pick(rng)];
      const int t = pick_t(rng);
      const double drop = u01(rng);
      const Mat* c = nullptr;
      if (!it.captions.empty()) {
        std::uniform_int_distribution<size_t> pc(0, it.captions.size() - 1);
        c = &it.captions[pc(rng)];
      }
      if (drop < cfg.uncond_prob) c = nullptr;
      for (int k = 0; k < d; ++k) eps(b, k) = normal(rng);
      const double a = sched.alpha_bar(t);
      zt.row(b) = std::sqrt(a) * it.latent.transpose() + std::sqrt(1 - a) * eps.row(b);
      ts.push_back(t);
      conds.push_back(c);
    }
    ps.zero_grad();
    const std::vector<double> w(static_cast<size_t>(cfg.batch_size), 1.0 / (static_cast<double>(cfg.batch_size) * d));
    const Var loss = ag::weighted_sq_error(model(zt, ts, conds), eps, w);
    if (!std::isfinite(loss.item())) throw std::runtime_error("train_denoiser diverged at step " + std::to_string(step));
    ag::backward(loss);
    opt.step(lr.at(step));
    window += loss.item();
    if ((step + 1) % 100 == 0 || step + 1 == cfg.train_steps) {
      const int span = (step + 1) % 100 == 0 ? 100 : (step + 1) % 100;
      res.curve.push_back(window / span);
      log::info("denoiser step ", step + 1, " loss ", res.curve.back());
      window = 0.0;
    }
  }
  ps.zero_grad();
  ps.set_trainable(false);
  return res;
}

struct DenoiserEval {
  double model_mse = 0;         // true captions
  double shuffled_mse = 0;      // captions of another item
  double unconditioned_mse = 0;
  double zero_mse = 0;          // predicting eps = 0
};

// Noise-prediction error on held-out items with fixed (t, eps) draws per
// item; the caption used is each item's first.
inline DenoiserEval evaluate_denoiser(const Denoiser& model, const DiffusionSchedule& sched,
                                      const std::vector<DenoiserItem>& items, std::uint64_t seed) {
  if (items.size() < 2) throw std::invalid_argument("evaluate_denoiser: need at least two items");
  const int d = model.latent_dim();
  const auto n = static_cast<Eigen::Index>(items.size());
  Mat zt(n, d), eps(n, d);
  std::vector<int> ts;
  std::vector<const Mat*> own, shuffled, none(items.size(), nullptr);
  Rng rng(derive_seed(seed, "denoiser/eval"));
  std::uniform_int_distribution<int> pick_t(1, sched.steps());
  std::normal_distribution<double> normal;
  const auto perm = permutation(rng, static_cast<int>(n));
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& it = items[static_cast<size_t>(i)];
    const int t = pick_t(rng);
    for (int k = 0; k < d; ++k) eps(i, k) = normal(rng);
    const double a = sched.alpha_bar(t);
    zt.row(i) = std::sqrt(a) * it.latent.transpose() + std::sqrt(1 - a) * eps.row(i);
    ts.push_back(t);
    own.push_back(it.captions.empty() ? nullptr : &it.captions.front());
  }
  // one cycle through a random order, so no item keeps its own captions
  shuffled.resize(items.size());
  for (Eigen::Index k = 0; k < n; ++k) {
    const auto& other = items[static_cast<size_t>(perm[static_cast<size_t>((k + 1) % n)])];
    shuffled[static_cast<size_t>(perm[static_cast<size_t>(k)])] = other.captions.empty() ? nullptr : &other.captions.front();
  }
  DenoiserEval e;
  const double denom = static_cast<double>(n) * d;
  e.model_mse = (model.predict(zt, ts, own) - eps).squaredNorm() / denom;
  e.shuffled_mse = (model.predict(zt, ts, shuffled) - eps).squaredNorm() / denom;
  e.unconditioned_mse = (model.predict(zt, ts, none) - eps).squaredNorm() / denom;
  e.zero_mse = eps.squaredNorm() / denom;
  return e;
}

struct ReconParams {
  double strength = 0.8;
  int steps = 50;
  double guidance = 1.0;          // classifier-free guidance scale
  std::string sampler = "ddim";   // ddim (deterministic) | ddpm (stochastic)
};

struct ReconOutput {
  Vec image;
  Vec sketch;
  int reverse_steps = 0;
};

// Reconstructs a batch. x: fMRI rows (ridge input space); conds: caption
// embeddings per row or nullptr for the unconditioned pass; seeds: one RNG
// stream per row so results do not depend on batch composition.
inline std::vector<ReconOutput> reconstruct(const MatD& x, const std::vector<const Mat*>& conds,
                                            const std::vector<std::uint64_t>& seeds, const RidgeMap& ridge,
                                            const PcaAutoencoder& ae, const Denoiser* denoiser,
                                            const DiffusionSchedule& sched, const ReconParams& p) {
  const auto n = static_cast<size_t>(x.rows());
  if (conds.size() != n || seeds.size() != n) throw std::invalid_argument("reconstruct: batch size mismatch");
  if (p.steps != sched.steps()) throw std::invalid_argument("reconstruct: steps differ from the diffusion schedule");
  if (p.sampler != "ddim" && p.sampler != "ddpm") throw std::invalid_argument("reconstruct: unknown sampler " + p.sampler);
  if (ridge.output_dim() != ae.latent_dim()) throw std::invalid_argument("reconstruct: ridge output is not an autoencoder code");
  const int t0 = sched.start_step(p.strength);
  if (t0 > 0 && !denoiser) throw std::invalid_argument("reconstruct: missing denoiser");
  if (denoiser && denoiser->schedule_hash() != sched.hash()) throw std::invalid_argument("reconstruct: schedule mismatch");

  const MatD zvis = ridge.predict(x);
  std::vector<ReconOutput> out(n);
  std::vector<Rng> rngs;
  Mat z(static_cast<Eigen::Index>(n), ae.latent_dim());
  for (size_t i = 0; i < n; ++i) {
    out[i].sketch = ae.decode(zvis.row(static_cast<Eigen::Index>(i)).transpose());
    rngs.emplace_back(seeds[i]);
    z.row(static_cast<Eigen::Index>(i)) = forward_diffuse(ae.encode(out[i].sketch), t0, sched, rngs.back()).transpose();
  }
  const std::vector<const Mat*> none(n, nullptr);
  bool any_cond = false;
  for (const auto* c : conds) any_cond |= c != nullptr;
  std::normal_distribution<double> normal;
  for (int t = t0; t >= 1; --t) {
    const std::vector<int> ts(n, t);
    Mat eps = denoiser->predict(z, ts, conds);
    if (p.guidance != 1.0 && any_cond) {
      const Mat eps_u = denoiser->predict(z, ts, none);
      eps = eps_u + p.guidance * (eps - eps_u);
    }
    const double a = sched.alpha_bar(t), a_prev = sched.alpha_bar(t - 1);
    const Mat x0 = (z - std::sqrt(1 - a) * eps) / std::sqrt(a);
    if (p.sampler == "ddim") {
      z = std::sqrt(a_prev) * x0 + std::sqrt(1 - a_prev) * eps;
    } else {
      const double b = sched.beta(t);
      z = (std::sqrt(a_prev) * b / (1 - a)) * x0 + (std::sqrt(1 - b) * (1 - a_prev) / (1 - a)) * z;
      if (t > 1) {
        const double sd = std::sqrt(b * (1 - a_prev) / (1 - a));
        for (size_t i = 0; i < n; ++i)
          for (Eigen::Index k = 0; k < z.cols(); ++k) z(static_cast<Eigen::Index>(i), k) += sd * normal(rngs[i]);
      }
    }
    if (!z.allFinite()) throw std::runtime_error("reconstruct: non-finite latent at step " + std::to_string(t));
  }
  for (size_t i = 0; i < n; ++i) {
    out[i].image = ae.decode(z.row(static_cast<Eigen::Index>(i)).transpose());
    out[i].reverse_steps = t0;
  }
  return out;
}

}  // namespace mindcap::recon
