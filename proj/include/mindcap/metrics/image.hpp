#pragma once

// Image metrics on channel-last float images: pixel correlation, SSIM on
// the luma channel, and two-way identification in a feature space.

#include "mindcap/core/log.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <functional>
#include <stdexcept>
#include <vector>

namespace mindcap::metrics {

struct Image {
  Eigen::VectorXd pixels;  // height * width * channels, channel-last
  int height = 0;
  int width = 0;
  int channels = 3;

  void check() const {
    if (height < 1 || width < 1 || channels < 1 ||
        pixels.size() != static_cast<Eigen::Index>(height) * width * channels)
      throw std::invalid_argument("image: pixel count does not match its shape");
  }
  bool same_shape(const Image& o) const { return height == o.height && width == o.width && channels == o.channels; }
};

// Pearson correlation; 0 with a warning when either side is constant.
inline double pearson(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  if (a.size() != b.size() || a.size() == 0) throw std::invalid_argument("pearson: length mismatch");
  const Eigen::ArrayXd da = a.array() - a.mean();
  const Eigen::ArrayXd db = b.array() - b.mean();
  const double va = (da * da).sum(), vb = (db * db).sum();
  if (va == 0.0 || vb == 0.0) return 0.0;
  return (da * db).sum() / std::sqrt(va * vb);
}

inline double pixcorr(const Image& a, const Image& b) {
  a.check();
  b.check();
  if (!a.same_shape(b)) throw std::invalid_argument("pixcorr: shape mismatch");
  const double va = (a.pixels.array() - a.pixels.mean()).square().sum();
  const double vb = (b.pixels.array() - b.pixels.mean()).square().sum();
  if (va == 0.0 || vb == 0.0) {
    log::warn("pixcorr: constant image scores 0");
    return 0.0;
  }
  return pearson(a.pixels, b.pixels);
}

// ITU-R BT.601 luma for 3-channel images; single-channel images pass through.
inline Eigen::MatrixXd luma(const Image& img) {
  img.check();
  Eigen::MatrixXd out(img.height, img.width);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) {
      const Eigen::Index base = (static_cast<Eigen::Index>(y) * img.width + x) * img.channels;
      if (img.channels == 1) out(y, x) = img.pixels(base);
      else if (img.channels == 3)
        out(y, x) = 0.299 * img.pixels(base) + 0.587 * img.pixels(base + 1) + 0.114 * img.pixels(base + 2);
      else throw std::invalid_argument("luma: expected 1 or 3 channels");
    }
  return out;
}

struct SsimParams {
  int window = 11;
  double sigma = 1.5;
  double dynamic_range = 1.0;  // L
  double k1 = 0.01, k2 = 0.03;
};

inline Eigen::MatrixXd gaussian_window(int size, double sigma) {
  Eigen::MatrixXd w(size, size);
  const double c = (size - 1) / 2.0;
  for (int i = 0; i < size; ++i)
    for (int j = 0; j < size; ++j) w(i, j) = std::exp(-((i - c) * (i - c) + (j - c) * (j - c)) / (2 * sigma * sigma));
  return w / w.sum();
}

// Mean local SSIM over every window position fully inside the image.
inline double ssim(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b, const SsimParams& p = {}) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw std::invalid_argument("ssim: shape mismatch");
  if (a.rows() < p.window || a.cols() < p.window) throw std::invalid_argument("ssim: image smaller than the window");
  const Eigen::MatrixXd w = gaussian_window(p.window, p.sigma);
  const double c1 = (p.k1 * p.dynamic_range) * (p.k1 * p.dynamic_range);
  const double c2 = (p.k2 * p.dynamic_range) * (p.k2 * p.dynamic_range);
  double total = 0.0;
  long count = 0;
  for (Eigen::Index y = 0; y + p.window <= a.rows(); ++y)
    for (Eigen::Index x = 0; x + p.window <= a.cols(); ++x) {
      const auto pa = a.block(y, x, p.window, p.window).array();
      const auto pb = b.block(y, x, p.window, p.window).array();
      const double mu_a = (w.array() * pa).sum(), mu_b = (w.array() * pb).sum();
      const double var_a = (w.array() * (pa - mu_a).square()).sum();
      const double var_b = (w.array() * (pb - mu_b).square()).sum();
      const double cov = (w.array() * (pa - mu_a) * (pb - mu_b)).sum();
      total += ((2 * mu_a * mu_b + c1) * (2 * cov + c2)) / ((mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2));
      ++count;
    }
  return total / static_cast<double>(count);
}

inline double ssim(const Image& a, const Image& b, const SsimParams& p = {}) {
  if (!a.same_shape(b)) throw std::invalid_argument("ssim: shape mismatch");
  return ssim(luma(a), luma(b), p);
}

using FeatureExtractor = std::function<Eigen::VectorXd(const Image&)>;

// Percentage of (i, j != i) comparisons in which reconstruction i is closer
// to its own target than to target j under correlation distance; ties
// count one half.
inline double two_way_identification(const std::vector<Eigen::VectorXd>& recon_features,
                                     const std::vector<Eigen::VectorXd>& target_features) {
  const size_t n = recon_features.size();
  if (n != target_features.size()) throw std::invalid_argument("two_way_identification: unpaired lists");
  if (n < 2) throw std::invalid_argument("two_way_identification: at least 2 pairs required");
  double score = 0.0;
  for (size_t i = 0; i < n; ++i) {
    const double own = 1.0 - pearson(recon_features[i], target_features[i]);
    for (size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      const double other = 1.0 - pearson(recon_features[i], target_features[j]);
      score += own < other ? 1.0 : (own == other ? 0.5 : 0.0);
    }
  }
  return 100.0 * score / static_cast<double>(n * (n - 1));
}

inline double two_way_identification(const std::vector<Image>& recons, const std::vector<Image>& targets,
                                     const FeatureExtractor& f) {
  std::vector<Eigen::VectorXd> fr, ft;
  for (const auto& r : recons) fr.push_back(f(r));
  for (const auto& t : targets) ft.push_back(f(t));
  return two_way_identification(fr, ft);
}

}  // namespace mindcap::metrics
