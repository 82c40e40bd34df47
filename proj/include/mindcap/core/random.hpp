#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

namespace mindcap {

using Rng = std::mt19937_64;

// Derives an independent stream seed from a base seed and a label, so each
// stage/item owns its own generator regardless of evaluation order.
inline std::uint64_t derive_seed(std::uint64_t base, const std::string& label) {
  std::uint64_t h = 1469598103934665603ULL ^ base;
  for (unsigned char c : label) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  // splitmix64 finaliser
  h += 0x9e3779b97f4a7c15ULL;
  h = (h ^ (h >> 30)) * 0xbf58476d1ce4e5b9ULL;
  h = (h ^ (h >> 27)) * 0x94d049bb133111ebULL;
  return h ^ (h >> 31);
}

template <typename MatT>
MatT normal_matrix(Rng& rng, Eigen::Index rows, Eigen::Index cols, double stddev) {
  std::normal_distribution<double> dist(0.0, stddev);
  MatT m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = dist(rng);
  return m;
}

inline std::vector<int> permutation(Rng& rng, int n) {
  std::vector<int> p(static_cast<size_t>(n));
  std::iota(p.begin(), p.end(), 0);
  // Fisher-Yates with an explicit uniform draw; std::shuffle's algorithm is
  // implementation-defined.
  for (int i = n - 1; i > 0; --i) {
    std::uniform_int_distribution<int> d(0, i);
    std::swap(p[static_cast<size_t>(i)], p[static_cast<size_t>(d(rng))]);
  }
  return p;
}

inline std::string rng_state(const Rng& rng) {
  std::ostringstream os;
  os << rng;
  return os.str();
}

inline void restore_rng_state(Rng& rng, const std::string& state) {
  std::istringstream is(state);
  is >> rng;
}

}  // namespace mindcap
