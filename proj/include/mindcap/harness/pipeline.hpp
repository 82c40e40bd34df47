#pragma once

// The full desk recipe as digest-keyed stages over one run directory:
// make_synth, pretrain_lm, pretrain_vlp, pretrain_bed, train_blm, caption,
// eval and, when enabled, recon_fit, train_denoiser and reconstruct.

#include "mindcap/bed/bed.hpp"
#include "mindcap/blm/blm.hpp"
#include "mindcap/core/png.hpp"
#include "mindcap/data/prepared.hpp"
#include "mindcap/harness/workspace.hpp"
#include "mindcap/metrics/image.hpp"
#include "mindcap/metrics/report.hpp"
#include "mindcap/recon/autoencoder.hpp"
#include "mindcap/recon/diffusion.hpp"
#include "mindcap/recon/ridge.hpp"

#include <cstdio>
#include <memory>
#include <numeric>
#include <optional>
#include <set>

namespace mindcap::harness {

struct CaptionRecord {
  std::string stimulus_id;
  std::string caption;
};

inline void write_captions(const fs::path& path, const std::vector<CaptionRecord>& caps, const blm::DecodeParams& p) {
  std::string out;
  for (const auto& c : caps)
    out += json{{"stimulus_id", c.stimulus_id}, {"caption", c.caption}, {"decode", p.to_json()}}.dump() + "\n";
  write_text_file(path, out);
}

inline std::vector<CaptionRecord> read_captions(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::vector<CaptionRecord> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const json j = json::parse(line);
    out.push_back({j.at("stimulus_id"), j.at("caption")});
  }
  return out;
}

// Variants of the brain-language model trained from the same frozen stack.
struct BlmVariant {
  std::string name = "full";
  bool pretrained_encoder = true;
  std::string objective = "lm";
  int captions_per_stimulus = 0;  // 0 keeps the configured M
};

// Mean of per-stimulus two-way scores, expressed per item.
inline std::vector<double> two_way_per_item(const std::vector<Eigen::VectorXd>& rf, const std::vector<Eigen::VectorXd>& tf) {
  const size_t n = rf.size();
  std::vector<double> out(n, 0.0);
  for (size_t i = 0; i < n; ++i) {
    const double own = 1.0 - metrics::pearson(rf[i], tf[i]);
    double s = 0.0;
    for (size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      const double other = 1.0 - metrics::pearson(rf[i], tf[j]);
      s += own < other ? 1.0 : (own == other ? 0.5 : 0.0);
    }
    out[i] = 100.0 * s / static_cast<double>(n - 1);
  }
  return out;
}

struct NullSummary {
  double mean = 0.0, std = 0.0, q975 = 0.0;
};

inline NullSummary summarize_null(const std::vector<double>& v) {
  NullSummary s;
  s.mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  double ss = 0.0;
  for (double x : v) ss += (x - s.mean) * (x - s.mean);
  s.std = std::sqrt(ss / static_cast<double>(v.size() > 1 ? v.size() - 1 : 1));
  s.q975 = metrics::quantile(v, 0.975);
  return s;
}

struct ReconRequest {
  recon::ReconParams params;
  bool write_images = true;
};

class Pipeline {
 public:
  explicit Pipeline(Workspace& ws) : ws_(ws), cfg_(ws.config()) {}

  Workspace& workspace() { return ws_; }
  const ExperimentConfig& config() const { return cfg_; }

  const data::Dataset& dataset() {
    if (!dataset_) dataset_ = data::Dataset::load(ws_.path("data"));
    return *dataset_;
  }

  const data::PreparedSubject& prepared(const std::string& subject) {
    auto it = prepared_.find(subject);
    if (it == prepared_.end()) it = prepared_.emplace(subject, data::prepare_subject(dataset(), subject, cfg_.bed.patch_size)).first;
    return it->second;
  }

  const blm::FrozenStack& stack() {
    if (!stack_) stack_.emplace(blm::FrozenStack::from_checkpoint(load_checkpoint(ws_.path("vlp.ckpt"))));
    return *stack_;
  }

  std::set<std::string> test_set() {
    const auto& t = dataset().manifest().subject(cfg_.blm_subject).test;
    return {t.begin(), t.end()};
  }

  // Attribute combinations outside the test split, in combination order.
  std::vector<int> non_test_combos() {
    const auto test = test_set();
    const auto world = dataset().world();
    std::vector<int> out;
    for (int c = 0; c < world.combination_count(); ++c)
      if (!test.count(data::stimulus_id(c))) out.push_back(c);
    return out;
  }

  std::set<std::string> lexicon() {
    const auto world = dataset().world();
    std::set<std::string> lex;
    for (const auto& group : {world.colors(), world.objects(), world.contexts()})
      for (const auto& w : group)
        for (const auto& t : text::normalize_words(w)) lex.insert(t);
    return lex;
  }

  // ------------------------------------------------------------- stages

  void make_synth() {
    json params = {{"data", cfg_.to_json().at("data")}, {"seed", cfg_.data.world.seed}};
    ws_.stage("make_synth", params, {}, {"data"}, [&] {
      dataset_.reset();
      prepared_.clear();
      fs::remove_all(ws_.path("data"));
      data::make_synth(cfg_.data, ws_.path("data"));
    });
  }

  void pretrain_lm() {
    ws_.stage("pretrain_lm", {{"lm", cfg_.lm.to_json()}}, {"data"}, {"lm.ckpt"}, [&] {
      const auto world = dataset().world();
      std::vector<std::vector<std::string>> corpus;
      for (int c : non_test_combos()) corpus.push_back(world.captions(world.attributes_of(c)));
      auto r = blm::pretrain_lm(corpus, cfg_.lm);
      const json meta = {{"heldout_perplexity", r.heldout_perplexity},
                         {"unigram_perplexity", r.unigram_perplexity},
                         {"curve", r.curve},
                         {"reached_target", r.reached_target}};
      save_checkpoint(r.lm.to_checkpoint(meta), ws_.path("lm.ckpt"));
    });
  }

  void pretrain_vlp() {
    ws_.stage("pretrain_vlp", {{"vlp", cfg_.vlp.to_json()}}, {"data", "lm.ckpt"}, {"vlp.ckpt"}, [&] {
      stack_.reset();
      const auto& ds = dataset();
      const auto world = ds.world();
      blm::FrozenStack st(blm::CausalLm::from_checkpoint(load_checkpoint(ws_.path("lm.ckpt"))), cfg_.vlp,
                          ds.manifest().feature_dim);
      std::vector<blm::VlpItem> items;
      for (int c : non_test_combos()) {
        const auto a = world.attributes_of(c);
        blm::VlpItem it{world.features(a), {}};
        for (const auto& s : world.captions(a)) it.captions.push_back(st.vocab().tokenize(s, st.max_caption_len()).ids);
        items.push_back(std::move(it));
      }
      const auto r = blm::pretrain_vlp(st, items);
      const auto ids = test_ids();
      blm::Mat f(static_cast<Eigen::Index>(ids.size()), ds.manifest().feature_dim);
      for (size_t i = 0; i < ids.size(); ++i) f.row(static_cast<Eigen::Index>(i)) = ds.features(ids[i]).transpose();
      const auto caps = st.caption_features(f, default_decode(st));
      const json meta = {{"epoch_loss", r.epoch_loss}, {"heldout_object_accuracy", object_accuracy(ids, caps)}};
      save_checkpoint(st.to_checkpoint(meta), ws_.path("vlp.ckpt"));
    });
  }

  void pretrain_bed() {
    ws_.stage("pretrain_bed", {{"bed", cfg_.bed.to_json()}}, {"data"}, {"bed.ckpt"}, [&] {
      const auto& ds = dataset();
      std::vector<data::PreparedSubject> subjects;
      std::vector<data::PreparedItem> eval;
      for (const auto& s : ds.manifest().subjects) {
        subjects.push_back(prepared(s.id));
        auto t = data::prepare_test_trials(ds, s.id, subjects.back().stats, cfg_.bed.patch_size);
        eval.insert(eval.end(), t.begin(), t.end());
      }
      auto r = bed::pretrain_bed(subjects, eval, cfg_.bed);
      const json meta = {{"epoch_loss", r.epoch_loss},
                         {"initial_eval_mse", r.initial_eval_mse},
                         {"final_eval_mse", r.final_eval_mse}};
      save_checkpoint(r.model.to_checkpoint(meta), ws_.path("bed.ckpt"));
    });
  }

  void train_blm() { train_blm_variant(BlmVariant{}, "blm.ckpt"); }

  json variant_params(const BlmVariant& v) const {
    blm::BlmConfig bc = cfg_.blm;
    bc.objective = v.objective;
    if (v.captions_per_stimulus > 0) bc.captions_per_stimulus = v.captions_per_stimulus;
    return {{"blm", bc.to_json()},
            {"subject", cfg_.blm_subject},
            {"pretrained_encoder", v.pretrained_encoder},
            {"caption_seed", cfg_.stage_seed("captions")}};
  }

  void train_blm_variant(const BlmVariant& v, const std::string& out, const std::string& stage_name = "train_blm") {
    std::vector<std::string> inputs{"data", "vlp.ckpt"};
    if (v.pretrained_encoder) inputs.push_back("bed.ckpt");
    ws_.stage(stage_name, variant_params(v), inputs, {out}, [&] {
      auto model = fit_blm(v);
      save_checkpoint(model.first.to_checkpoint(model.second), ws_.path(out));
    });
  }

  blm::BrainLanguageModel load_blm(const std::string& rel) {
    return blm::BrainLanguageModel::from_checkpoint(load_checkpoint(ws_.path(rel)), stack());
  }

  // Captions for the blm subject's averaged test trials.
  std::vector<CaptionRecord> caption_with(const blm::BrainLanguageModel& model, const data::PreparedSubject& ps) {
    std::vector<const blm::Mat*> patches;
    for (const auto& it : ps.test) patches.push_back(&it.patches.patches);
    const auto caps = model.caption(patches, model.decode_params());
    std::vector<CaptionRecord> out;
    for (size_t i = 0; i < caps.size(); ++i) out.push_back({ps.test[i].stimulus_id, caps[i]});
    return out;
  }

  void caption(const std::string& blm_ckpt = "blm.ckpt", const std::string& out = "captions.jsonl",
               const std::string& stage_name = "caption") {
    ws_.stage(stage_name, {{"subject", cfg_.blm_subject}}, {"data", "vlp.ckpt", blm_ckpt}, {out}, [&] {
      const auto model = load_blm(blm_ckpt);
      write_captions(ws_.path(out), caption_with(model, prepared(cfg_.blm_subject)), model.decode_params());
    });
  }

  void eval(const std::string& captions = "captions.jsonl", const std::string& out = "report.json",
            const std::string& stage_name = "eval") {
    const json params = {{"permutations", cfg_.metrics.permutations}, {"null_seed", cfg_.stage_seed("cider_null")}};
    ws_.stage(stage_name, params, {"data", "vlp.ckpt", captions}, {out}, [&] {
      const auto recs = read_captions(ws_.path(captions));
      write_text_file(ws_.path(out), evaluate(recs).to_json().dump(2) + "\n");
    });
  }

  // Six text metrics, object-word accuracy and the CIDEr shuffled-pairing null.
  metrics::MetricReport evaluate(const std::vector<CaptionRecord>& recs) {
    const auto& ds = dataset();
    const auto& st = stack();
    std::vector<std::string> ids, cands;
    std::vector<std::vector<std::string>> refs;
    for (const auto& r : recs) {
      ids.push_back(r.stimulus_id);
      cands.push_back(r.caption);
      refs.push_back(ds.captions(r.stimulus_id).captions);
    }
    const metrics::TextEncoders enc{[&st](const std::string& s) { return st.token_embedding(s); },
                                    [&st](const std::string& s) { return st.sentence_embedding(s); }};
    metrics::MetricReport rep;
    rep.values = metrics::score_captions(cands, refs, enc, lexicon()).means();
    rep.values["object_accuracy"] = object_accuracy(ids, cands);
    rep.values["chance_object_accuracy"] = 1.0 / static_cast<double>(ds.manifest().world.objects);
    Rng rng(cfg_.stage_seed("cider_null"));
    const auto null = summarize_null(metrics::cider_permutation_null(cands, refs, cfg_.metrics.permutations, rng));
    rep.values["cider_null_mean"] = null.mean;
    rep.values["cider_null_std"] = null.std;
    rep.values["cider_null_q975"] = null.q975;
    rep.split = "test";
    rep.seed = cfg_.seed;
    rep.config_hash = cfg_.hash();
    rep.candidate_count = static_cast<int>(recs.size());
    rep.validate(metrics::text_metric_names());
    return rep;
  }

  double object_accuracy(const std::vector<std::string>& ids, const std::vector<std::string>& caps) {
    const auto& ds = dataset();
    const auto world = ds.world();
    int hit = 0;
    for (size_t i = 0; i < ids.size(); ++i) {
      const auto words = text::normalize_words(caps[i]);
      const auto obj = world.object_word(ds.attributes(ids[i]).object);
      hit += std::find(words.begin(), words.end(), obj) != words.end() ? 1 : 0;
    }
    return ids.empty() ? 0.0 : static_cast<double>(hit) / static_cast<double>(ids.size());
  }

  std::vector<std::string> test_ids() {
    std::vector<std::string> ids;
    for (const auto& it : prepared(cfg_.blm_subject).test) ids.push_back(it.stimulus_id);
    return ids;
  }

  // ------------------------------------------------------ reconstruction

  void recon_fit() {
    const json params = {{"latent_dim", cfg_.recon.latent_dim}, {"subject", cfg_.blm_subject},
                         {"patch_size", cfg_.bed.patch_size}};
    ws_.stage("recon_fit", params, {"data"}, {"recon/autoencoder.ckpt", "recon/gt_extractor.ckpt", "recon/ridge.ckpt"},
              [&] {
                const auto& ds = dataset();
                const auto world = ds.world();
                const auto combos = non_test_combos();
                recon::MatD imgs(static_cast<Eigen::Index>(combos.size()), data::kImagePixels);
                recon::MatD feats(static_cast<Eigen::Index>(combos.size()), ds.manifest().feature_dim);
                for (size_t i = 0; i < combos.size(); ++i) {
                  const auto a = world.attributes_of(combos[i]);
                  imgs.row(static_cast<Eigen::Index>(i)) = world.render(a).transpose();
                  feats.row(static_cast<Eigen::Index>(i)) = world.features(a).transpose();
                }
                const auto ae = recon::PcaAutoencoder::fit(imgs, cfg_.recon.latent_dim);
                const auto gt = recon::GtFeatureExtractor::fit(ae, imgs, feats);
                const auto& ps = prepared(cfg_.blm_subject);
                recon::MatD x(static_cast<Eigen::Index>(ps.train.size()), ds.manifest().v_align);
                recon::MatD z(static_cast<Eigen::Index>(ps.train.size()), ae.latent_dim());
                std::vector<int> groups;
                std::map<std::string, int> gid;
                for (size_t i = 0; i < ps.train.size(); ++i) {
                  const auto& it = ps.train[i];
                  x.row(static_cast<Eigen::Index>(i)) = data::unpatchify(it.patches).transpose();
                  z.row(static_cast<Eigen::Index>(i)) = ae.encode(world.render(ds.attributes(it.stimulus_id))).transpose();
                  groups.push_back(gid.emplace(it.stimulus_id, static_cast<int>(gid.size())).first->second);
                }
                const auto sel = recon::fit_ridge_cv(x, z, groups);
                json cv = json::object();
                for (const auto& [lambda, r2] : sel.cv_r2) cv[std::to_string(lambda)] = r2;
                save_checkpoint(ae.to_checkpoint(), ws_.path("recon/autoencoder.ckpt"));
                save_checkpoint(gt.map().to_checkpoint(), ws_.path("recon/gt_extractor.ckpt"));
                save_checkpoint(sel.map.to_checkpoint({{"cv_r2", cv}}), ws_.path("recon/ridge.ckpt"));
              });
  }

  // LM word embeddings of the caption's in-vocabulary words; empty when none.
  blm::Mat caption_embedding(const std::string& caption) {
    const auto& st = stack();
    std::vector<int> keep;
    for (int id : st.vocab().encode_words(caption))
      if (id != blm::Vocabulary::kUnk) keep.push_back(id);
    if (keep.empty()) return blm::Mat(0, st.lm_dim());
    ag::NoGradGuard ng;
    return st.lm().embed_words(keep).value();
  }

  recon::DiffusionSchedule schedule() const { return recon::DiffusionSchedule(cfg_.recon.diffusion_steps); }

  void train_denoiser() {
    const json params = {{"denoiser", cfg_.recon.denoiser.to_json()}, {"steps", cfg_.recon.diffusion_steps}};
    ws_.stage("train_denoiser", params, {"data", "vlp.ckpt", "recon/autoencoder.ckpt"}, {"recon/denoiser.ckpt"}, [&] {
      const auto& ds = dataset();
      const auto world = ds.world();
      const auto ae = recon::PcaAutoencoder::from_checkpoint(load_checkpoint(ws_.path("recon/autoencoder.ckpt")));
      const auto sched = schedule();
      auto item_of = [&](const data::Attributes& a, const std::vector<std::string>& caps) {
        recon::DenoiserItem it{ae.encode(world.render(a)), {}};
        for (const auto& c : caps) {
          auto e = caption_embedding(c);
          if (e.rows() > 0) it.captions.push_back(std::move(e));
        }
        return it;
      };
      std::vector<recon::DenoiserItem> items, held;
      for (int c : non_test_combos()) {
        const auto a = world.attributes_of(c);
        items.push_back(item_of(a, world.captions(a)));
      }
      for (const auto& id : test_ids()) held.push_back(item_of(ds.attributes(id), ds.captions(id).captions));
      recon::Denoiser den(cfg_.recon.denoiser, sched, ae.latent_dim(), stack().lm_dim());
      const auto r = recon::train_denoiser(den, sched, items);
      const auto ev = recon::evaluate_denoiser(den, sched, held, cfg_.stage_seed("denoiser_eval"));
      const json meta = {{"curve", r.curve},
                         {"heldout",
                          {{"model_mse", ev.model_mse},
                           {"shuffled_mse", ev.shuffled_mse},
                           {"unconditioned_mse", ev.unconditioned_mse},
                           {"zero_mse", ev.zero_mse}}}};
      save_checkpoint(den.to_checkpoint(meta), ws_.path("recon/denoiser.ckpt"));
    });
  }

  void reconstruct() {
    ReconRequest req;
    req.params = recon_params();
    const json params = {{"strength", req.params.strength}, {"steps", req.params.steps},
                         {"guidance", req.params.guidance}, {"sampler", req.params.sampler},
                         {"permutations", cfg_.metrics.permutations}, {"seed", cfg_.stage_seed("recon")}};
    ws_.stage("reconstruct", params,
              {"data", "vlp.ckpt", "captions.jsonl", "recon/autoencoder.ckpt", "recon/gt_extractor.ckpt",
               "recon/ridge.ckpt", "recon/denoiser.ckpt"},
              {"recon/recon_report.json", "recon/images"}, [&] { run_reconstruction(req, ws_.path("recon")); });
  }

  recon::ReconParams recon_params() const {
    recon::ReconParams p;
    p.strength = cfg_.recon.strength;
    p.steps = cfg_.recon.diffusion_steps;
    p.guidance = cfg_.recon.guidance;
    p.sampler = cfg_.recon.sampler;
    return p;
  }

  // Reconstructs the blm subject's test split under five conditions and
  // writes recon_report.json plus, optionally, images/ with PNGs and
  // per-item sidecars for the generated-caption condition.
  metrics::MetricReport run_reconstruction(const ReconRequest& req, const fs::path& out_dir) {
    const auto& ds = dataset();
    const auto world = ds.world();
    const auto& st = stack();
    const auto ae = recon::PcaAutoencoder::from_checkpoint(load_checkpoint(ws_.path("recon/autoencoder.ckpt")));
    const recon::GtFeatureExtractor gt(ae, recon::RidgeMap::from_checkpoint(load_checkpoint(ws_.path("recon/gt_extractor.ckpt"))));
    const auto ridge = recon::RidgeMap::from_checkpoint(load_checkpoint(ws_.path("recon/ridge.ckpt")));
    const auto sched = recon::DiffusionSchedule(req.params.steps);
    const auto den = recon::Denoiser::from_checkpoint(load_checkpoint(ws_.path("recon/denoiser.ckpt")), sched);

    const auto& ps = prepared(cfg_.blm_subject);
    const auto n = ps.test.size();
    std::map<std::string, std::string> generated;
    for (const auto& r : read_captions(ws_.path("captions.jsonl"))) generated[r.stimulus_id] = r.caption;

    recon::MatD x(static_cast<Eigen::Index>(n), ds.manifest().v_align);
    std::vector<std::string> ids, gen_caps, gt_caps;
    std::vector<std::uint64_t> seeds;
    std::vector<Eigen::VectorXd> targets, target_feats;
    for (size_t i = 0; i < n; ++i) {
      const auto& id = ps.test[i].stimulus_id;
      ids.push_back(id);
      x.row(static_cast<Eigen::Index>(i)) = data::unpatchify(ps.test[i].patches).transpose();
      auto g = generated.find(id);
      if (g == generated.end()) throw std::runtime_error("no generated caption for " + id);
      gen_caps.push_back(g->second);
      gt_caps.push_back(ds.captions(id).captions.front());
      seeds.push_back(derive_seed(cfg_.stage_seed("recon"), id));
      targets.push_back(world.render(ds.attributes(id)));
      target_feats.push_back(gt(targets.back()));
    }
    // derangement: each item is conditioned on the caption of the next one
    // in a seeded random cycle
    Rng shuffle_rng(cfg_.stage_seed("recon_shuffle"));
    const auto cycle = permutation(shuffle_rng, static_cast<int>(n));
    std::vector<std::string> shuffled_caps(n);
    for (size_t k = 0; k < n; ++k)
      shuffled_caps[static_cast<size_t>(cycle[k])] = gen_caps[static_cast<size_t>(cycle[(k + 1) % n])];

    std::vector<blm::Mat> gen_emb, shuf_emb, gt_emb;
    for (size_t i = 0; i < n; ++i) {
      gen_emb.push_back(caption_embedding(gen_caps[i]));
      shuf_emb.push_back(caption_embedding(shuffled_caps[i]));
      gt_emb.push_back(caption_embedding(gt_caps[i]));
    }
    auto ptrs = [](const std::vector<blm::Mat>& v) {
      std::vector<const blm::Mat*> p;
      for (const auto& m : v) p.push_back(m.rows() > 0 ? &m : nullptr);
      return p;
    };
    const std::vector<const blm::Mat*> none(n, nullptr);

    metrics::MetricReport rep;
    std::vector<recon::ReconOutput> caption_out;
    std::vector<double> caption_two_way_items, caption_pixcorr_items, caption_ssim_items;
    auto img = [](const Eigen::VectorXd& p) { return metrics::Image{p, data::kImageSize, data::kImageSize, 3}; };
    auto run_row = [&](const std::string& name, const std::vector<const blm::Mat*>& conds, double strength,
                       std::vector<recon::ReconOutput>* keep) {
      recon::ReconParams p = req.params;
      p.strength = strength;
      auto outs = recon::reconstruct(x, conds, seeds, ridge, ae, &den, sched, p);
      std::vector<Eigen::VectorXd> rf;
      std::vector<double> pc, ss;
      for (size_t i = 0; i < n; ++i) {
        rf.push_back(gt(outs[i].image));
        pc.push_back(metrics::pixcorr(img(outs[i].image), img(targets[i])));
        ss.push_back(metrics::ssim(img(outs[i].image), img(targets[i])));
      }
      const auto tw = two_way_per_item(rf, target_feats);
      rep.values[name + "_two_way"] = metrics::two_way_identification(rf, target_feats);
      rep.values[name + "_pixcorr"] = std::accumulate(pc.begin(), pc.end(), 0.0) / static_cast<double>(n);
      rep.values[name + "_ssim"] = std::accumulate(ss.begin(), ss.end(), 0.0) / static_cast<double>(n);
      if (keep) {
        caption_two_way_items = tw;
        caption_pixcorr_items = pc;
        caption_ssim_items = ss;
        Rng rng(cfg_.stage_seed("recon_null"));
        std::vector<double> null;
        for (int k = 0; k < cfg_.metrics.permutations; ++k) {
          const auto perm = permutation(rng, static_cast<int>(n));
          std::vector<Eigen::VectorXd> shuffled_targets;
          for (int j : perm) shuffled_targets.push_back(target_feats[static_cast<size_t>(j)]);
          null.push_back(metrics::two_way_identification(rf, shuffled_targets));
        }
        const auto s = summarize_null(null);
        rep.values[name + "_two_way_null_mean"] = s.mean;
        rep.values[name + "_two_way_null_std"] = s.std;
        rep.values[name + "_two_way_z"] = s.std > 0 ? (rep.values[name + "_two_way"] - s.mean) / s.std : 0.0;
        *keep = outs;
      }
      return outs;
    };
    // Mean similarity between the conditioning caption and a caption the
    // frozen stack generates from the reconstruction's estimated features.
    auto conditioning_effect = [&](const std::vector<recon::ReconOutput>& outs, const std::vector<std::string>& conds) {
      blm::Mat f(static_cast<Eigen::Index>(n), ds.manifest().feature_dim);
      for (size_t i = 0; i < n; ++i) f.row(static_cast<Eigen::Index>(i)) = gt(outs[i].image).transpose();
      const auto caps = st.caption_features(f, default_decode(st));
      const metrics::TextEncoder enc = [&st](const std::string& s) { return st.token_embedding(s); };
      double s = 0.0;
      for (size_t i = 0; i < n; ++i) s += metrics::embed_similarity(conds[i], caps[i], enc);
      return s / static_cast<double>(n);
    };

    run_row("sketch", none, 0.0, nullptr);
    run_row("diffusion", none, req.params.strength, nullptr);
    run_row("caption", ptrs(gen_emb), req.params.strength, &caption_out);
    const auto shuffled_out = run_row("caption_shuffled", ptrs(shuf_emb), req.params.strength, nullptr);
    run_row("caption_gt", ptrs(gt_emb), req.params.strength, nullptr);
    rep.values["conditioning_true_embed_sim"] = conditioning_effect(caption_out, gen_caps);
    rep.values["conditioning_shuffled_embed_sim"] = conditioning_effect(shuffled_out, shuffled_caps);
    rep.split = "test";
    rep.seed = cfg_.seed;
    rep.config_hash = cfg_.hash();
    rep.candidate_count = static_cast<int>(n);
    rep.validate({});

    fs::create_directories(out_dir);
    if (req.write_images) {
      const fs::path dir = out_dir / "images";
      fs::remove_all(dir);
      fs::create_directories(dir);
      for (size_t i = 0; i < n; ++i) {
        write_png_rgb(dir / (ids[i] + ".png"), caption_out[i].image, data::kImageSize, data::kImageSize);
        write_png_rgb(dir / (ids[i] + "_sketch.png"), caption_out[i].sketch, data::kImageSize, data::kImageSize);
        const json side = {{"stimulus_id", ids[i]},
                           {"caption", gen_caps[i]},
                           {"seed", seeds[i]},
                           {"strength", req.params.strength},
                           {"steps", req.params.steps},
                           {"guidance", req.params.guidance},
                           {"sampler", req.params.sampler},
                           {"reverse_steps", caption_out[i].reverse_steps},
                           {"metrics",
                            {{"two_way", caption_two_way_items[i]},
                             {"pixcorr", caption_pixcorr_items[i]},
                             {"ssim", caption_ssim_items[i]}}}};
        write_text_file(dir / (ids[i] + ".json"), side.dump(2) + "\n");
      }
    }
    write_text_file(out_dir / "recon_report.json", rep.to_json().dump(2) + "\n");
    return rep;
  }

  // ------------------------------------------------------------ variants

  // Trains a brain-language model variant in memory and returns it with
  // its checkpoint metadata.
  std::pair<blm::BrainLanguageModel, json> fit_blm(const BlmVariant& v) {
    const auto& ds = dataset();
    const auto& st = stack();
    blm::BlmConfig bc = cfg_.blm;
    bc.objective = v.objective;
    if (v.captions_per_stimulus > 0) bc.captions_per_stimulus = v.captions_per_stimulus;
    blm::BrainLanguageModel model(cfg_.bed, st, bc);
    if (v.pretrained_encoder) model.load_encoder(load_checkpoint(ws_.path("bed.ckpt")));
    const auto& ps = prepared(cfg_.blm_subject);
    std::map<std::string, blm::Mat> targets;
    if (v.objective == "feature_mse") {
      ag::NoGradGuard ng;
      for (const auto& it : ps.train)
        if (!targets.count(it.stimulus_id)) {
          const blm::Mat f = ds.features(it.stimulus_id).transpose();
          targets[it.stimulus_id] = st.image_queries(f).value();
        }
    }
    const auto seed = cfg_.stage_seed("captions");
    std::vector<blm::BlmTrainItem> items;
    for (const auto& it : ps.train) {
      blm::BlmTrainItem b{&it.patches.patches, {}, nullptr};
      for (const auto& s : blm::select_captions(ds.captions(it.stimulus_id).captions, bc.captions_per_stimulus, seed,
                                                it.stimulus_id))
        b.captions.push_back(st.vocab().tokenize(s, st.max_caption_len()).ids);
      if (v.objective == "feature_mse") b.target_queries = &targets.at(it.stimulus_id);
      items.push_back(std::move(b));
    }
    const auto r = blm::train_blm(model, items);
    const json meta = {{"variant", v.name},
                       {"epoch_loss", r.epoch_loss},
                       {"epoch_caption_sum", r.epoch_caption_sum},
                       {"initial_loss", r.initial_loss},
                       {"final_loss", r.final_loss},
                       {"frozen_before", r.frozen_before},
                       {"frozen_after", r.frozen_after},
                       {"trainable", model.trainable_digests()}};
    return {std::move(model), meta};
  }

  static blm::DecodeParams default_decode(const blm::FrozenStack& st) { return {"greedy", 3, st.max_caption_len()}; }

 private:
  Workspace& ws_;
  ExperimentConfig cfg_;
  std::optional<data::Dataset> dataset_;
  std::map<std::string, data::PreparedSubject> prepared_;
  std::optional<blm::FrozenStack> stack_;
};

struct PipelineOptions {
  bool deterministic = true;
  std::string until;  // last stage to run; empty runs everything
};

inline const std::vector<std::string>& pipeline_stages() {
  static const std::vector<std::string> s{"make_synth", "pretrain_lm",   "pretrain_vlp",   "pretrain_bed",
                                          "train_blm",  "caption",       "eval",           "recon_fit",
                                          "train_denoiser", "reconstruct"};
  return s;
}

inline RunRecord make_run_record(const Workspace& ws, double seconds) {
  RunRecord rec;
  rec.config_hash = ws.config().hash();
  rec.profile = ws.config().profile;
  rec.seed = ws.config().seed;
  rec.deterministic = ws.deterministic();
  rec.stages = ws.records();
  rec.wall_clock_seconds = seconds;
  if (fs::exists(ws.path("report.json")))
    rec.reports["captions"] = metrics::MetricReport::from_json(read_json_file(ws.path("report.json")));
  if (fs::exists(ws.path("recon/recon_report.json")))
    rec.reports["recon"] = metrics::MetricReport::from_json(read_json_file(ws.path("recon/recon_report.json")));
  return rec;
}

inline RunRecord run_pipeline(const fs::path& root, const ExperimentConfig& cfg, const PipelineOptions& opt = {}) {
  cfg.validate();
  if (!opt.until.empty() &&
      std::find(pipeline_stages().begin(), pipeline_stages().end(), opt.until) == pipeline_stages().end())
    throw std::invalid_argument("unknown stage '" + opt.until + "'");
  const auto t0 = std::chrono::steady_clock::now();
  Workspace ws(root, cfg, opt.deterministic);
  write_text_file(ws.path("config.json"), cfg.to_json().dump(2) + "\n");
  Pipeline p(ws);
  const std::vector<std::pair<std::string, std::function<void()>>> steps{
      {"make_synth", [&] { p.make_synth(); }},         {"pretrain_lm", [&] { p.pretrain_lm(); }},
      {"pretrain_vlp", [&] { p.pretrain_vlp(); }},     {"pretrain_bed", [&] { p.pretrain_bed(); }},
      {"train_blm", [&] { p.train_blm(); }},           {"caption", [&] { p.caption(); }},
      {"eval", [&] { p.eval(); }},                     {"recon_fit", [&] { p.recon_fit(); }},
      {"train_denoiser", [&] { p.train_denoiser(); }}, {"reconstruct", [&] { p.reconstruct(); }}};
  for (const auto& [name, fn] : steps) {
    const bool recon_stage = name == "recon_fit" || name == "train_denoiser" || name == "reconstruct";
    if (recon_stage && !cfg.recon.enabled) break;
    fn();
    if (name == opt.until) break;
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  auto rec = make_run_record(ws, secs);
  write_text_file(ws.path("run_record.json"), rec.to_json().dump(2) + "\n");
  return rec;
}

}  // namespace mindcap::harness
