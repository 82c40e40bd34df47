#pragma once

#include "mindcap/data/preprocess.hpp"

#include <functional>
#include <optional>

namespace mindcap::data {

struct PreparedItem {
  std::string stimulus_id;
  int repetition = 0;
  PatchSequence patches;
};

// Standardised (train statistics), aligned and patchified fMRI for one
// subject. Training uses separate trials; test uses the repetition average.
struct PreparedSubject {
  std::string subject_id;
  VoxelStats stats;
  std::vector<PreparedItem> train;
  std::vector<PreparedItem> test;
};

// transform_test, when set, is applied to each raw averaged test sample
// before standardisation (used for noise injection).
inline PreparedSubject prepare_subject(const Dataset& ds, const std::string& subject, int patch_size,
                                       const std::function<FmriSample(const FmriSample&)>& transform_test = {}) {
  PreparedSubject p;
  p.subject_id = subject;
  const auto train = ds.trials(subject, "train");
  p.stats = VoxelStats::fit(train);
  const int v_align = ds.manifest().v_align;
  for (const auto& s : train)
    p.train.push_back({s.stimulus_id, s.repetition, align_and_patchify(p.stats.apply(s), v_align, patch_size)});
  for (const auto& raw : average_by_stimulus(ds.trials(subject, "test"))) {
    const FmriSample t = transform_test ? transform_test(raw) : raw;
    p.test.push_back({t.stimulus_id, t.repetition, align_and_patchify(p.stats.apply(t), v_align, patch_size)});
  }
  return p;
}

// Unaveraged held-out trials, standardised with the subject's train statistics.
inline std::vector<PreparedItem> prepare_test_trials(const Dataset& ds, const std::string& subject,
                                                     const VoxelStats& stats, int patch_size) {
  std::vector<PreparedItem> out;
  for (const auto& s : ds.trials(subject, "test"))
    out.push_back({s.stimulus_id, s.repetition, align_and_patchify(stats.apply(s), ds.manifest().v_align, patch_size)});
  return out;
}

}  // namespace mindcap::data
