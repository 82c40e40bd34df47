#pragma once

#include "mindcap/data/dataset.hpp"

#include <cmath>
#include <stdexcept>
#include <vector>

namespace mindcap::data {

struct AlignedFmri {
  Vec voxels;
  std::string subject_id, stimulus_id;
  int repetition = 0;
};

// P x patch_size; flattening row-major reproduces the aligned vector.
struct PatchSequence {
  MatD patches;
  int patch_count() const { return static_cast<int>(patches.rows()); }
  int patch_size() const { return static_cast<int>(patches.cols()); }
};

inline AlignedFmri align(const FmriSample& s, int v_align, int patch_size) {
  if (patch_size < 1 || v_align % patch_size != 0)
    throw std::invalid_argument("v_align (" + std::to_string(v_align) + ") is not divisible by patch size " +
                                std::to_string(patch_size));
  if (v_align < s.voxels.size())
    throw std::invalid_argument("v_align (" + std::to_string(v_align) + ") is smaller than the " +
                                std::to_string(s.voxels.size()) + " voxels of " + s.subject_id);
  AlignedFmri a{Vec::Zero(v_align), s.subject_id, s.stimulus_id, s.repetition};
  a.voxels.head(s.voxels.size()) = s.voxels;
  return a;
}

inline PatchSequence patchify(const AlignedFmri& a, int patch_size) {
  const auto v = static_cast<int>(a.voxels.size());
  if (patch_size < 1 || v % patch_size != 0) throw std::invalid_argument("length not divisible by patch size");
  PatchSequence p;
  p.patches = Eigen::Map<const MatD>(a.voxels.data(), v / patch_size, patch_size);
  return p;
}

inline PatchSequence align_and_patchify(const FmriSample& s, int v_align, int patch_size) {
  return patchify(align(s, v_align, patch_size), patch_size);
}

inline Vec unpatchify(const PatchSequence& p) {
  return Eigen::Map<const Vec>(p.patches.data(), p.patches.size());
}

inline FmriSample average_repetitions(const std::vector<FmriSample>& samples) {
  if (samples.empty()) throw std::invalid_argument("average_repetitions: no samples");
  FmriSample out{samples.front().subject_id, samples.front().stimulus_id, kAveragedRepetition,
                 Vec::Zero(samples.front().voxels.size())};
  for (const auto& s : samples) {
    if (s.subject_id != out.subject_id || s.stimulus_id != out.stimulus_id)
      throw std::invalid_argument("average_repetitions: mixed subject or stimulus ids");
    if (s.voxels.size() != out.voxels.size()) throw std::invalid_argument("average_repetitions: length mismatch");
    out.voxels += s.voxels;
  }
  out.voxels /= static_cast<double>(samples.size());
  return out;
}

// Groups consecutive trials of the same stimulus and averages them.
inline std::vector<FmriSample> average_by_stimulus(const std::vector<FmriSample>& trials) {
  std::vector<FmriSample> out;
  std::vector<FmriSample> group;
  for (const auto& t : trials) {
    if (!group.empty() && group.front().stimulus_id != t.stimulus_id) {
      out.push_back(average_repetitions(group));
      group.clear();
    }
    group.push_back(t);
  }
  if (!group.empty()) out.push_back(average_repetitions(group));
  return out;
}

inline constexpr double kStdFloor = 1e-8;

// Per-voxel z-scoring statistics estimated on a training split.
struct VoxelStats {
  Vec mean, stddev;

  static VoxelStats fit(const std::vector<FmriSample>& train) {
    if (train.empty()) throw std::invalid_argument("VoxelStats::fit: empty training split");
    const auto n = train.front().voxels.size();
    VoxelStats st{Vec::Zero(n), Vec::Zero(n)};
    for (const auto& s : train) {
      if (s.voxels.size() != n) throw std::invalid_argument("VoxelStats::fit: ragged samples");
      st.mean += s.voxels;
    }
    st.mean /= static_cast<double>(train.size());
    for (const auto& s : train) st.stddev += (s.voxels - st.mean).cwiseAbs2();
    st.stddev = (st.stddev / static_cast<double>(train.size())).cwiseSqrt();
    return st;
  }

  FmriSample apply(const FmriSample& s) const {
    if (s.voxels.size() != mean.size())
      throw std::invalid_argument("standardize: statistics length " + std::to_string(mean.size()) +
                                  " does not match " + std::to_string(s.voxels.size()) + " voxels");
    FmriSample out = s;
    for (Eigen::Index i = 0; i < mean.size(); ++i)
      out.voxels(i) = stddev(i) > kStdFloor ? (s.voxels(i) - mean(i)) / stddev(i) : 0.0;
    return out;
  }
};

inline std::vector<FmriSample> standardize(const std::vector<FmriSample>& samples, const VoxelStats& stats) {
  std::vector<FmriSample> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back(stats.apply(s));
  return out;
}

// Noise scale: mean absolute value of the raw signal.
inline double noise_base_std(const FmriSample& raw) { return raw.voxels.cwiseAbs().mean(); }

// Adds coeff * N(0, base_std^2) per voxel. coeff = 0 returns the input unchanged.
inline FmriSample inject_noise(const FmriSample& raw, double coeff, std::uint64_t seed) {
  if (!(coeff >= 0.0) || !std::isfinite(coeff)) throw std::invalid_argument("inject_noise: coeff must be >= 0");
  if (!raw.voxels.allFinite()) throw std::invalid_argument("inject_noise: non-finite input");
  FmriSample out = raw;
  if (coeff == 0.0) return out;
  const double base = noise_base_std(raw);
  Rng rng(derive_seed(seed, "noise/" + raw.subject_id + "/" + raw.stimulus_id + "/" + std::to_string(raw.repetition)));
  std::normal_distribution<double> n(0.0, base);
  for (Eigen::Index i = 0; i < out.voxels.size(); ++i) out.voxels(i) += coeff * n(rng);
  return out;
}

}  // namespace mindcap::data
