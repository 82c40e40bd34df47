#pragma once

// Synthetic brain-image-caption world. Each stimulus is a (color, object,
// context) triple. Its ground-truth visual feature is the sum of the three
// attribute embeddings; a subject's fMRI response is a spatially smooth
// linear mixture of that feature plus Gaussian observation noise.

#include "mindcap/core/random.hpp"

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace mindcap::data {

using Vec = Eigen::VectorXd;
using MatD = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct SubjectSpec {
  std::string id;
  int voxel_count = 0;
};

struct WorldConfig {
  int colors = 8;
  int objects = 16;
  int contexts = 8;
  int attr_embed_dim = 32;
  double obs_noise_std = 0.5;
  double smoothing = 3.0;  // Gaussian width (voxels) of the subject mixing maps
  std::vector<SubjectSpec> subjects{{"subj01", 500}, {"subj02", 470}};
  std::uint64_t seed = 1;
};

struct Attributes {
  int color = 0, object = 0, context = 0;
  bool operator==(const Attributes&) const = default;
};

inline const std::vector<std::string>& color_words() {
  static const std::vector<std::string> w{"red",    "blue",   "green", "yellow", "black",
                                          "white",  "orange", "purple", "pink",  "brown"};
  return w;
}
inline const std::vector<std::string>& object_words() {
  static const std::vector<std::string> w{"bear", "train", "cat",   "dog",   "car",   "bus",  "bird",
                                          "horse", "boat", "chair", "clock", "vase",  "kite", "bench",
                                          "cake", "truck", "sheep", "plane", "couch", "lamp"};
  return w;
}
inline const std::vector<std::string>& context_words() {
  static const std::vector<std::string> w{"kitchen", "street", "field", "beach",  "room",
                                          "park",    "forest", "desert", "garden", "harbor"};
  return w;
}

// Five fixed paraphrase templates.
inline std::vector<std::string> caption_templates(const std::string& color, const std::string& object,
                                                  const std::string& context) {
  return {
      "a " + color + " " + object + " in a " + context,
      "there is a " + color + " " + object + " at the " + context,
      "a photo of a " + color + " " + object + " in the " + context,
      "the " + object + " is " + color + " and sits in a " + context,
      "a " + context + " with a " + color + " " + object,
  };
}

inline constexpr int kImageSize = 32;
inline constexpr int kImageChannels = 3;
inline constexpr int kImagePixels = kImageSize * kImageSize * kImageChannels;

class SynthWorld {
 public:
  explicit SynthWorld(WorldConfig cfg) : cfg_(std::move(cfg)) {
    if (cfg_.colors < 1 || cfg_.colors > static_cast<int>(color_words().size()) || cfg_.objects < 1 ||
        cfg_.objects > static_cast<int>(object_words().size()) || cfg_.contexts < 1 ||
        cfg_.contexts > static_cast<int>(context_words().size()))
      throw std::invalid_argument("world sizes exceed the built-in attribute vocabularies");
    if (cfg_.attr_embed_dim < 1) throw std::invalid_argument("attr_embed_dim must be positive");
    if (cfg_.obs_noise_std < 0) throw std::invalid_argument("obs_noise_std must be nonnegative");

    Rng rng(derive_seed(cfg_.seed, "attr_embeddings"));
    const int n_attr = cfg_.colors + cfg_.objects + cfg_.contexts;
    attr_embeddings_ = normal_matrix<MatD>(rng, n_attr, cfg_.attr_embed_dim, std::sqrt(1.0 / 3.0));

    for (const auto& s : cfg_.subjects) {
      if (s.voxel_count < 1) throw std::invalid_argument("subject " + s.id + " has no voxels");
      Rng srng(derive_seed(cfg_.seed, "mixer/" + s.id));
      mixers_[s.id] = smooth_mixer(srng, s.voxel_count);
    }

    Rng prng(derive_seed(cfg_.seed, "palettes"));
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int k = 0; k < cfg_.contexts; ++k) {
      std::array<double, 6> p{};
      for (auto& x : p) x = 0.15 + 0.7 * u(prng);
      context_palette_.push_back(p);
    }
  }

  const WorldConfig& config() const { return cfg_; }
  int combination_count() const { return cfg_.colors * cfg_.objects * cfg_.contexts; }

  Attributes attributes_of(int combo) const {
    if (combo < 0 || combo >= combination_count()) throw std::out_of_range("combination index");
    return {combo / (cfg_.objects * cfg_.contexts), (combo / cfg_.contexts) % cfg_.objects,
            combo % cfg_.contexts};
  }
  int combo_of(const Attributes& a) const {
    return (a.color * cfg_.objects + a.object) * cfg_.contexts + a.context;
  }

  const std::string& color_word(int c) const { return color_words().at(static_cast<size_t>(c)); }
  const std::string& object_word(int o) const { return object_words().at(static_cast<size_t>(o)); }
  const std::string& context_word(int k) const { return context_words().at(static_cast<size_t>(k)); }

  std::vector<std::string> colors() const { return {color_words().begin(), color_words().begin() + cfg_.colors}; }
  std::vector<std::string> objects() const { return {object_words().begin(), object_words().begin() + cfg_.objects}; }
  std::vector<std::string> contexts() const {
    return {context_words().begin(), context_words().begin() + cfg_.contexts};
  }

  const MatD& attr_embeddings() const { return attr_embeddings_; }
  const MatD& mixer(const std::string& subject) const {
    auto it = mixers_.find(subject);
    if (it == mixers_.end()) throw std::out_of_range("unknown subject " + subject);
    return it->second;
  }

  Vec features(const Attributes& a) const {
    return attr_embeddings_.row(a.color).transpose() +
           attr_embeddings_.row(cfg_.colors + a.object).transpose() +
           attr_embeddings_.row(cfg_.colors + cfg_.objects + a.context).transpose();
  }

  // x = A_s v + eta, eta ~ N(0, obs_noise_std^2)
  Vec fmri(const std::string& subject, const Attributes& a, Rng& rng) const {
    Vec x = mixer(subject) * features(a);
    if (cfg_.obs_noise_std > 0) {
      std::normal_distribution<double> n(0.0, cfg_.obs_noise_std);
      for (Eigen::Index i = 0; i < x.size(); ++i) x(i) += n(rng);
    }
    return x;
  }

  std::vector<std::string> captions(const Attributes& a) const {
    return caption_templates(color_word(a.color), object_word(a.object), context_word(a.context));
  }

  // 32x32 RGB, channel-last, values in [0, 1].
  Vec render(const Attributes& a) const {
    Vec img(kImagePixels);
    const auto& pal = context_palette_[static_cast<size_t>(a.context)];
    const int horizon = 8 + (a.context * 5) % 16;
    const auto rgb = color_rgb(a.color);
    const int shape = a.object % 8;
    const int variant = (a.object / 8) % 3;
    const double radius = variant == 0 ? 9.0 : (variant == 1 ? 6.0 : 11.0);
    const double cx = 15.5 + (variant == 1 ? 4.0 : 0.0), cy = 15.5 + (variant == 1 ? 3.0 : 0.0);
    for (int y = 0; y < kImageSize; ++y)
      for (int x = 0; x < kImageSize; ++x) {
        const bool sky = y < horizon;
        const double shade = 0.85 + 0.15 * static_cast<double>(x) / (kImageSize - 1);
        double px[3];
        for (int c = 0; c < 3; ++c) px[c] = (sky ? pal[static_cast<size_t>(c)] : pal[static_cast<size_t>(3 + c)]) * shade;
        if (inside(shape, x - cx, y - cy, radius))
          for (int c = 0; c < 3; ++c) px[c] = rgb[static_cast<size_t>(c)];
        for (int c = 0; c < 3; ++c) img((y * kImageSize + x) * 3 + c) = px[c];
      }
    return img;
  }

 private:
  MatD smooth_mixer(Rng& rng, int voxels) const {
    const int d = cfg_.attr_embed_dim;
    MatD raw = normal_matrix<MatD>(rng, voxels, d, 1.0);
    MatD out = MatD::Zero(voxels, d);
    const double w = cfg_.smoothing;
    const int half = w > 0 ? static_cast<int>(std::ceil(3 * w)) : 0;
    for (int v = 0; v < voxels; ++v) {
      double norm = 0;
      for (int o = -half; o <= half; ++o) {
        const int src = v + o;
        if (src < 0 || src >= voxels) continue;
        const double k = w > 0 ? std::exp(-0.5 * o * o / (w * w)) : 1.0;
        out.row(v) += k * raw.row(src);
        norm += k * k;
      }
      out.row(v) /= std::sqrt(norm);
    }
    // unit expected signal variance per voxel for unit-variance features
    return out / std::sqrt(static_cast<double>(d));
  }

  static std::array<double, 3> color_rgb(int c) {
    static const std::array<std::array<double, 3>, 10> table{{{0.90, 0.10, 0.10},
                                                              {0.10, 0.25, 0.90},
                                                              {0.10, 0.75, 0.20},
                                                              {0.95, 0.90, 0.10},
                                                              {0.05, 0.05, 0.05},
                                                              {0.97, 0.97, 0.97},
                                                              {1.00, 0.55, 0.05},
                                                              {0.55, 0.15, 0.70},
                                                              {1.00, 0.60, 0.75},
                                                              {0.45, 0.28, 0.10}}};
    return table.at(static_cast<size_t>(c));
  }

  static bool inside(int shape, double dx, double dy, double r) {
    switch (shape) {
      case 0: return dx * dx + dy * dy <= r * r;                                        // disc
      case 1: return std::abs(dx) <= 0.8 * r && std::abs(dy) <= 0.8 * r;                 // square
      case 2: return dy <= 0.8 * r && dy >= -r && std::abs(dx) <= 0.5 * (dy + r);        // triangle
      case 3: return std::abs(dx) + std::abs(dy) <= r;                                   // diamond
      case 4: {                                                                          // ring
        const double q = dx * dx + dy * dy;
        return q <= r * r && q >= 0.36 * r * r;
      }
      case 5: return (std::abs(dx) <= 0.3 * r && std::abs(dy) <= r) ||                  // cross
                     (std::abs(dy) <= 0.3 * r && std::abs(dx) <= r);
      case 6: return std::abs(dx) <= r && std::abs(dy) <= 0.35 * r;                      // wide bar
      default: return std::abs(dx) <= 0.35 * r && std::abs(dy) <= r;                     // tall bar
    }
  }

  WorldConfig cfg_;
  MatD attr_embeddings_;
  std::map<std::string, MatD> mixers_;
  std::vector<std::array<double, 6>> context_palette_;
};

}  // namespace mindcap::data
