#pragma once

// Independent brute-force reference implementations for the metrics module.

#include "mindcap/metrics/caption.hpp"
#include "mindcap/metrics/image.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <map>
#include <random>
#include <string>
#include <vector>

namespace mindcap::oracles {

inline std::vector<std::string> toks(const std::string& s) { return metrics::normalize(s).tokens; }

// Exponential-time LCS by plain recursion.
inline int naive_lcs(const std::vector<std::string>& a, const std::vector<std::string>& b, size_t i = 0,
                     size_t j = 0) {
  if (i == a.size() || j == b.size()) return 0;
  if (a[i] == b[j]) return 1 + naive_lcs(a, b, i + 1, j + 1);
  return std::max(naive_lcs(a, b, i + 1, j), naive_lcs(a, b, i, j + 1));
}

inline double rouge_oracle(const std::string& c, const std::string& r) {
  const auto a = toks(c), b = toks(r);
  const double l = naive_lcs(a, b);
  if (l == 0) return 0.0;
  const double p = l / a.size(), rec = l / b.size();
  return (1 + 1.44) * p * rec / (rec + 1.44 * p);
}

// Enumerates every injective partial map between equal-stem positions,
// keeps the maximum match count and, among those, the fewest chunks.
inline void enumerate_alignments(const std::vector<std::string>& c, const std::vector<std::string>& r, size_t i,
                                 std::vector<int>& map, std::vector<bool>& used, int& best_m, int& best_ch) {
  if (i == c.size()) {
    int m = 0, ch = 0;
    for (size_t k = 0; k < map.size(); ++k) {
      if (map[k] < 0) continue;
      ++m;
      if (k == 0 || map[k - 1] < 0 || map[k - 1] + 1 != map[k]) ++ch;
    }
    if (m > best_m || (m == best_m && ch < best_ch)) {
      best_m = m;
      best_ch = ch;
    }
    return;
  }
  map[i] = -1;
  enumerate_alignments(c, r, i + 1, map, used, best_m, best_ch);
  for (size_t j = 0; j < r.size(); ++j) {
    if (used[j] || r[j] != c[i]) continue;
    used[j] = true;
    map[i] = static_cast<int>(j);
    enumerate_alignments(c, r, i + 1, map, used, best_m, best_ch);
    used[j] = false;
  }
  map[i] = -1;
}

inline double meteor_oracle(const std::string& cand, const std::string& ref) {
  const auto c = metrics::normalize(cand).stems, r = metrics::normalize(ref).stems;
  std::vector<int> map(c.size(), -1);
  std::vector<bool> used(r.size(), false);
  int m = 0, ch = 1 << 20;
  enumerate_alignments(c, r, 0, map, used, m, ch);
  if (m == 0) return 0.0;
  const double p = static_cast<double>(m) / c.size(), rec = static_cast<double>(m) / r.size();
  const double f = p * rec / (0.9 * p + 0.1 * rec);
  return f * (1 - 0.5 * std::pow(static_cast<double>(ch) / m, 3));
}

// CIDEr from raw strings: n-grams joined with spaces, document frequencies
// counted over items by scanning every reference of every item.
inline double cider_oracle(const std::string& cand, size_t item, const std::vector<std::vector<std::string>>& refs) {
  auto grams = [](const std::vector<std::string>& t, int n) {
    std::map<std::string, double> out;
    for (int i = 0; i + n <= static_cast<int>(t.size()); ++i) {
      std::string g = t[i];
      for (int k = 1; k < n; ++k) g += " " + t[i + k];
      out[g] += 1;
    }
    return out;
  };
  const double size = static_cast<double>(refs.size());
  double total = 0;
  for (int n = 1; n <= 4; ++n) {
    auto idf = [&](const std::string& g) {
      double df = 0;
      for (const auto& item_refs : refs) {
        bool hit = false;
        for (const auto& r : item_refs) hit = hit || grams(toks(r), n).count(g);
        df += hit;
      }
      return std::log(size / std::max(1.0, df));
    };
    auto weigh = [&](const std::map<std::string, double>& counts) {
      double len = 0;
      for (const auto& kv : counts) len += kv.second;
      std::map<std::string, double> v;
      for (const auto& [g, c] : counts) v[g] = c / len * idf(g);
      return v;
    };
    const auto vc = weigh(grams(toks(cand), n));
    double per_n = 0;
    for (const auto& r : refs[item]) {
      const auto vr = weigh(grams(toks(r), n));
      double dot = 0, nc = 0, nr = 0;
      for (const auto& [g, w] : vc) {
        nc += w * w;
        if (auto it = vr.find(g); it != vr.end()) dot += w * it->second;
      }
      for (const auto& kv : vr) nr += kv.second * kv.second;
      per_n += (nc > 0 && nr > 0) ? dot / std::sqrt(nc * nr) : 0.0;
    }
    total += per_n / refs[item].size();
  }
  return 10.0 * total / 4;
}

inline metrics::Image random_image(std::uint64_t seed, int h = 32, int w = 32, int c = 3) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  metrics::Image img{Eigen::VectorXd(h * w * c), h, w, c};
  for (Eigen::Index i = 0; i < img.pixels.size(); ++i) img.pixels(i) = u(rng);
  return img;
}

inline double loop_pearson(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  double ma = 0, mb = 0;
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    ma += a(i);
    mb += b(i);
  }
  ma /= a.size();
  mb /= b.size();
  double sab = 0, saa = 0, sbb = 0;
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    sab += (a(i) - ma) * (b(i) - mb);
    saa += (a(i) - ma) * (a(i) - ma);
    sbb += (b(i) - mb) * (b(i) - mb);
  }
  return sab / std::sqrt(saa * sbb);
}

// SSIM of one 11x11 window written out term by term.
inline double single_window_ssim(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  double g[11][11], gs = 0;
  for (int i = 0; i < 11; ++i)
    for (int j = 0; j < 11; ++j) {
      g[i][j] = std::exp(-((i - 5.0) * (i - 5.0) + (j - 5.0) * (j - 5.0)) / (2 * 1.5 * 1.5));
      gs += g[i][j];
    }
  double ma = 0, mb = 0;
  for (int i = 0; i < 11; ++i)
    for (int j = 0; j < 11; ++j) {
      ma += g[i][j] / gs * a(i, j);
      mb += g[i][j] / gs * b(i, j);
    }
  double va = 0, vb = 0, cab = 0;
  for (int i = 0; i < 11; ++i)
    for (int j = 0; j < 11; ++j) {
      va += g[i][j] / gs * (a(i, j) - ma) * (a(i, j) - ma);
      vb += g[i][j] / gs * (b(i, j) - mb) * (b(i, j) - mb);
      cab += g[i][j] / gs * (a(i, j) - ma) * (b(i, j) - mb);
    }
  const double c1 = 0.0001, c2 = 0.0009;
  return (2 * ma * mb + c1) * (2 * cab + c2) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
}

// Mean of single-window SSIM over every valid 11x11 window.
inline double windowed_ssim_oracle(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  double sum = 0;
  int n = 0;
  for (Eigen::Index y = 0; y + 11 <= a.rows(); ++y)
    for (Eigen::Index x = 0; x + 11 <= a.cols(); ++x, ++n)
      sum += single_window_ssim(a.block(y, x, 11, 11), b.block(y, x, 11, 11));
  return sum / n;
}

}  // namespace mindcap::oracles
