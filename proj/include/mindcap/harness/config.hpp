#pragma once

// Experiment configuration: one JSON document with data, bed, lm, vlp, blm,
// recon and metrics sections under a named profile. A config file overrides
// its profile's defaults key by key; keys the profile does not define are
// rejected. Every component seed is derived from the single global seed.

#include "mindcap/blm/blm.hpp"
#include "mindcap/data/dataset.hpp"
#include "mindcap/recon/diffusion.hpp"

#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace mindcap::harness {

using json = nlohmann::json;
namespace fs = std::filesystem;

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ReconSection {
  bool enabled = true;
  int latent_dim = 64;
  int diffusion_steps = 50;
  double strength = 0.8;
  double guidance = 3.0;
  std::string sampler = "ddim";
  recon::DenoiserConfig denoiser;
};

struct MetricsSection {
  int permutations = 200;
  std::vector<double> noise_coefficients{0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0};
};

namespace detail {

inline json without_seed(json j) {
  j.erase("seed");
  return j;
}

inline json with_seed(json j, std::uint64_t seed) {
  j["seed"] = seed;
  return j;
}

// Throws on any key of `user` that `reference` does not define. Arrays and
// scalars are replaced wholesale, so only objects are descended into.
inline void check_known_keys(const json& user, const json& reference, const std::string& path) {
  if (!user.is_object()) return;
  if (!reference.is_object()) throw ConfigError("config: '" + path + "' must not be an object");
  for (const auto& [k, v] : user.items()) {
    const std::string p = path.empty() ? k : path + "." + k;
    if (!reference.contains(k)) throw ConfigError("config: unknown key '" + p + "'");
    check_known_keys(v, reference.at(k), p);
  }
}

}  // namespace detail

struct ExperimentConfig {
  std::string profile = "desk";
  std::uint64_t seed = 1;
  data::SynthConfig data;
  bed::BedConfig bed;
  blm::LmConfig lm;
  blm::VlpConfig vlp;
  blm::BlmConfig blm;
  std::string blm_subject = "subj01";
  ReconSection recon;
  MetricsSection metrics;

  static ExperimentConfig desk() {
    ExperimentConfig c;
    c.apply_seed(c.seed);
    return c;
  }

  // Full-scale hyperparameters for reference runs on real data; never used
  // by the tests.
  static ExperimentConfig paper_scale() {
    ExperimentConfig c;
    c.profile = "paper-scale";
    c.bed = bed::BedConfig::paper_scale();
    c.blm = blm::BlmConfig::paper_scale();
    c.data.v_align = c.bed.v_align;
    c.data.world.subjects = {{"subj01", 15724}, {"subj02", 14278}};
    c.data.world.colors = 10;
    c.data.world.objects = 20;
    c.data.world.contexts = 10;
    c.data.train_stimuli = 1500;
    c.data.test_stimuli = 500;
    c.apply_seed(c.seed);
    return c;
  }

  static ExperimentConfig for_profile(const std::string& name) {
    if (name == "desk") return desk();
    if (name == "paper-scale") return paper_scale();
    throw ConfigError("config: unknown profile '" + name + "'");
  }

  // Sets the global seed and re-derives every component seed from it.
  void apply_seed(std::uint64_t s) {
    seed = s;
    data.world.seed = derive_seed(s, "data");
    bed.seed = derive_seed(s, "bed");
    lm.seed = derive_seed(s, "lm");
    vlp.seed = derive_seed(s, "vlp");
    blm.seed = derive_seed(s, "blm");
    recon.denoiser.seed = derive_seed(s, "denoiser");
  }

  std::uint64_t stage_seed(const std::string& label) const { return derive_seed(seed, label); }

  void validate() const {
    bed.validate();
    blm.validate();
    if (bed.v_align != data.v_align) throw ConfigError("config: bed.v_align must equal data.v_align");
    bool found = false;
    for (const auto& s : data.world.subjects) found |= s.id == blm_subject;
    if (!found) throw ConfigError("config: blm.subject '" + blm_subject + "' is not a data subject");
    if (lm.dim % lm.heads != 0) throw ConfigError("config: lm.dim must be divisible by lm.heads");
    if (vlp.dim % vlp.heads != 0) throw ConfigError("config: vlp.dim must be divisible by vlp.heads");
    if (recon.latent_dim < 1 || recon.diffusion_steps < 2) throw ConfigError("config: invalid recon sizes");
    if (!(recon.strength >= 0.0 && recon.strength <= 1.0)) throw ConfigError("config: recon.strength must lie in [0, 1]");
    if (recon.sampler != "ddim" && recon.sampler != "ddpm") throw ConfigError("config: unknown sampler " + recon.sampler);
    if (metrics.permutations < 1) throw ConfigError("config: metrics.permutations must be positive");
    for (double c : metrics.noise_coefficients)
      if (!(c > 0.0)) throw ConfigError("config: noise coefficients must be positive");
  }

  json to_json() const {
    json subjects = json::array();
    for (const auto& s : data.world.subjects) subjects.push_back({{"id", s.id}, {"voxels", s.voxel_count}});
    const auto& w = data.world;
    json blm_j = detail::without_seed(blm.to_json());
    blm_j["subject"] = blm_subject;
    return {
        {"profile", profile},
        {"seed", seed},
        {"data",
         {{"colors", w.colors},
          {"objects", w.objects},
          {"contexts", w.contexts},
          {"attr_embed_dim", w.attr_embed_dim},
          {"obs_noise_std", w.obs_noise_std},
          {"smoothing", w.smoothing},
          {"subjects", subjects},
          {"train_stimuli", data.train_stimuli},
          {"test_stimuli", data.test_stimuli},
          {"trials_per_stimulus", data.trials_per_stimulus},
          {"v_align", data.v_align},
          {"write_images", data.write_images}}},
        {"bed", detail::without_seed(bed.to_json())},
        {"lm", detail::without_seed(lm.to_json())},
        {"vlp", detail::without_seed(vlp.to_json())},
        {"blm", blm_j},
        {"recon",
         {{"enabled", recon.enabled},
          {"latent_dim", recon.latent_dim},
          {"diffusion_steps", recon.diffusion_steps},
          {"strength", recon.strength},
          {"guidance", recon.guidance},
          {"sampler", recon.sampler},
          {"denoiser", detail::without_seed(recon.denoiser.to_json())}}},
        {"metrics", {{"permutations", metrics.permutations}, {"noise_coefficients", metrics.noise_coefficients}}},
    };
  }

  // Parses a complete document (every key present).
  static ExperimentConfig from_json(const json& j) {
    try {
      ExperimentConfig c;
      c.profile = j.at("profile");
      const auto& d = j.at("data");
      c.data.world.colors = d.at("colors");
      c.data.world.objects = d.at("objects");
      c.data.world.contexts = d.at("contexts");
      c.data.world.attr_embed_dim = d.at("attr_embed_dim");
      c.data.world.obs_noise_std = d.at("obs_noise_std");
      c.data.world.smoothing = d.at("smoothing");
      c.data.world.subjects.clear();
      for (const auto& s : d.at("subjects")) c.data.world.subjects.push_back({s.at("id"), s.at("voxels")});
      c.data.train_stimuli = d.at("train_stimuli");
      c.data.test_stimuli = d.at("test_stimuli");
      c.data.trials_per_stimulus = d.at("trials_per_stimulus");
      c.data.v_align = d.at("v_align");
      c.data.write_images = d.at("write_images");
      c.bed = bed::BedConfig::from_json(detail::with_seed(j.at("bed"), 0));
      c.lm = blm::LmConfig::from_json(detail::with_seed(j.at("lm"), 0));
      c.vlp = blm::VlpConfig::from_json(detail::with_seed(j.at("vlp"), 0));
      c.blm = blm::BlmConfig::from_json(detail::with_seed(j.at("blm"), 0));
      c.blm_subject = j.at("blm").at("subject");
      const auto& r = j.at("recon");
      c.recon.enabled = r.at("enabled");
      c.recon.latent_dim = r.at("latent_dim");
      c.recon.diffusion_steps = r.at("diffusion_steps");
      c.recon.strength = r.at("strength");
      c.recon.guidance = r.at("guidance");
      c.recon.sampler = r.at("sampler");
      c.recon.denoiser = recon::DenoiserConfig::from_json(detail::with_seed(r.at("denoiser"), 0));
      c.metrics.permutations = j.at("metrics").at("permutations");
      c.metrics.noise_coefficients = j.at("metrics").at("noise_coefficients").get<std::vector<double>>();
      c.apply_seed(j.at("seed").get<std::uint64_t>());
      c.validate();
      return c;
    } catch (const json::exception& e) {
      throw ConfigError(std::string("config: ") + e.what());
    }
  }

  // Overlays a partial document on its profile's defaults.
  static ExperimentConfig from_overrides(const json& user) {
    if (!user.is_object()) throw ConfigError("config: top level must be an object");
    const std::string profile = user.value("profile", "desk");
    json base = for_profile(profile).to_json();
    detail::check_known_keys(user, base, "");
    base.merge_patch(user);
    return from_json(base);
  }

  static ExperimentConfig load(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("config: cannot read " + path.string());
    json j;
    try {
      j = json::parse(in);
    } catch (const json::exception& e) {
      throw ConfigError("config: " + path.string() + ": " + e.what());
    }
    return from_overrides(j);
  }

  // Canonical hash: object keys are serialised in sorted order.
  std::string hash() const { return config_hash(to_json()); }
};

}  // namespace mindcap::harness
