#include "mindcap/data/prepared.hpp"

#include <gtest/gtest.h>

#include <fstream>
#include <iterator>
#include <random>

using namespace mindcap;
using namespace mindcap::data;

namespace {

fs::path scratch_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("mindcap_test_" + name);
  fs::remove_all(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

SynthConfig small_config() {
  SynthConfig c;
  c.train_stimuli = 512;
  c.test_stimuli = 64;
  c.trials_per_stimulus = 3;
  return c;
}

FmriSample sample(std::vector<double> v, const std::string& stim = "s", int rep = 0) {
  return {"subj", stim, rep, Eigen::Map<Vec>(v.data(), static_cast<Eigen::Index>(v.size()))};
}

}  // namespace

TEST(MakeSynth, CountsAndDisjointSplits) {
  const auto dir = scratch_dir("counts");
  const auto m = make_synth(small_config(), dir);
  ASSERT_EQ(m.subjects.size(), 2u);
  const auto ds = Dataset::load(dir);
  for (const auto& s : m.subjects) {
    EXPECT_EQ(s.train.size(), 512u);
    EXPECT_EQ(s.test.size(), 64u);
    std::set<std::string> tr(s.train.begin(), s.train.end());
    for (const auto& t : s.test) EXPECT_FALSE(tr.count(t));
    EXPECT_EQ(ds.trials(s.id, "train").size(), 1536u);
    EXPECT_EQ(fs::file_size(dir / s.train_file), 1536u * static_cast<unsigned>(s.voxel_count) * 4u);
  }
  for (const auto& st : m.stimuli) EXPECT_EQ(ds.captions(st.id).captions.size(), 5u);
  EXPECT_EQ(to_json(ds.manifest()), to_json(m));
  fs::remove_all(dir);
}

TEST(MakeSynth, SameSeedGivesByteIdenticalFiles) {
  const auto a = scratch_dir("det_a"), b = scratch_dir("det_b");
  const auto m = make_synth(small_config(), a);
  make_synth(small_config(), b);
  for (const auto& s : m.subjects) {
    EXPECT_EQ(slurp(a / s.train_file), slurp(b / s.train_file));
    EXPECT_EQ(slurp(a / s.test_file), slurp(b / s.test_file));
  }
  EXPECT_EQ(slurp(a / "manifest.json"), slurp(b / "manifest.json"));
  EXPECT_EQ(slurp(a / "captions.jsonl"), slurp(b / "captions.jsonl"));
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST(MakeSynth, ZeroNoiseTrialsAreIdentical) {
  auto cfg = small_config();
  cfg.world.obs_noise_std = 0.0;
  cfg.train_stimuli = 8;
  cfg.test_stimuli = 4;
  cfg.trials_per_stimulus = 2;
  const auto dir = scratch_dir("zero_noise");
  make_synth(cfg, dir);
  const auto t = Dataset::load(dir).trials("subj01", "train");
  EXPECT_EQ(t[0].stimulus_id, t[1].stimulus_id);
  EXPECT_EQ(t[0].voxels, t[1].voxels);
  fs::remove_all(dir);
}

TEST(MakeSynth, RejectsTooManyStimuli) {
  auto cfg = small_config();
  cfg.train_stimuli = 1000;
  cfg.test_stimuli = 100;
  EXPECT_THROW(make_synth(cfg, scratch_dir("too_many")), DatasetError);
}

TEST(LoadDataset, WrongVoxelCountIsByteLengthMismatch) {
  const auto dir = scratch_dir("bad_len");
  make_synth(small_config(), dir);
  json j;
  std::ifstream(dir / "manifest.json") >> j;
  j["subjects"][0]["voxel_count"] = 499;
  std::ofstream(dir / "manifest.json") << j.dump(2);
  try {
    Dataset::load(dir);
    FAIL() << "expected a byte-length mismatch";
  } catch (const DatasetError& e) {
    EXPECT_NE(std::string(e.what()).find("byte-length mismatch"), std::string::npos);
  }
  fs::remove_all(dir);
}

TEST(LoadDataset, MissingCaptionIsReported) {
  const auto dir = scratch_dir("no_caption");
  make_synth(small_config(), dir);
  const std::string caps = slurp(dir / "captions.jsonl");
  std::ofstream(dir / "captions.jsonl") << caps.substr(caps.find('\n') + 1);
  EXPECT_THROW(Dataset::load(dir), DatasetError);
  fs::remove_all(dir);
}

TEST(LoadDataset, EpochOrderIsDeterministic) {
  EXPECT_EQ(Dataset::epoch_order(100, 5, 3), Dataset::epoch_order(100, 5, 3));
  EXPECT_NE(Dataset::epoch_order(100, 5, 3), Dataset::epoch_order(100, 5, 4));
}

TEST(Patchify, SubjectOneLayout) {
  Rng rng(1);
  Vec v = normal_matrix<Vec>(rng, 15724, 1, 1.0);
  const FmriSample s{"subj01", "x", 0, v};
  const auto p = align_and_patchify(s, 15728, 16);
  EXPECT_EQ(p.patch_count(), 983);
  EXPECT_EQ(p.patch_size(), 16);
  EXPECT_EQ(p.patches.row(982).tail(4), Eigen::RowVectorXd::Zero(4));
  EXPECT_NE(p.patches(982, 11), 0.0);
}

TEST(Patchify, NoPaddingAndRoundTrip) {
  Rng rng(2);
  const FmriSample full{"s", "x", 0, normal_matrix<Vec>(rng, 1024, 1, 1.0)};
  const auto p = align_and_patchify(full, 1024, 16);
  EXPECT_EQ(p.patch_count(), 64);
  EXPECT_EQ(unpatchify(p), full.voxels);

  const FmriSample short_s{"s", "x", 0, normal_matrix<Vec>(rng, 1020, 1, 1.0)};
  Vec padded = Vec::Zero(1024);
  padded.head(1020) = short_s.voxels;
  EXPECT_EQ(unpatchify(align_and_patchify(short_s, 1024, 16)), padded);
}

TEST(Patchify, Errors) {
  const FmriSample s{"s", "x", 0, Vec::Ones(40)};
  EXPECT_THROW(align_and_patchify(s, 32, 16), std::invalid_argument);
  EXPECT_THROW(align_and_patchify(s, 50, 16), std::invalid_argument);
}

TEST(Average, SmallCases) {
  const auto v = sample({1.5, -2.0, 3.0});
  EXPECT_EQ(average_repetitions({v, v, v}).voxels, v.voxels);
  const auto avg = average_repetitions({sample({0, 2}), sample({2, 0})});
  EXPECT_EQ(avg.voxels, Vec::Ones(2));
  EXPECT_EQ(avg.repetition, kAveragedRepetition);
  EXPECT_THROW(average_repetitions({}), std::invalid_argument);
  EXPECT_THROW(average_repetitions({sample({1}, "a"), sample({1}, "b")}), std::invalid_argument);
}

TEST(Average, ThreeTrialVarianceIsOneThird) {
  // zero-signal world: only observation noise with std 1 reaches the voxels
  std::mt19937_64 rng(11);
  std::normal_distribution<double> n(0.0, 1.0);
  double sum = 0, sq = 0;
  long count = 0;
  for (int stim = 0; stim < 40; ++stim) {
    std::vector<FmriSample> trials;
    for (int r = 0; r < 3; ++r) {
      Vec v(500);
      for (auto& x : v) x = n(rng);
      trials.push_back({"s", "x", r, v});
    }
    const auto m = average_repetitions(trials);
    sum += m.voxels.sum();
    sq += m.voxels.squaredNorm();
    count += m.voxels.size();
  }
  const double mean = sum / count;
  const double var = sq / count - mean * mean;
  EXPECT_NEAR(var, 1.0 / 3.0, 0.02);
}

TEST(Standardize, TrainMomentsAndConstantVoxel) {
  Rng rng(3);
  std::vector<FmriSample> train;
  for (int i = 0; i < 50; ++i) {
    Vec v = normal_matrix<Vec>(rng, 6, 1, 2.0);
    v(0) += 5.0;
    v(3) = 7.0;  // constant voxel
    train.push_back({"s", "x", i, v});
  }
  const auto st = VoxelStats::fit(train);
  const auto z = standardize(train, st);
  for (int k = 0; k < 6; ++k) {
    double m = 0, s2 = 0;
    for (const auto& x : z) m += x.voxels(k);
    m /= 50;
    for (const auto& x : z) s2 += (x.voxels(k) - m) * (x.voxels(k) - m);
    EXPECT_LT(std::abs(m), 1e-6);
    if (k == 3) {
      for (const auto& x : z) EXPECT_EQ(x.voxels(k), 0.0);
    } else {
      EXPECT_NEAR(std::sqrt(s2 / 50), 1.0, 1e-6);
    }
  }
  const FmriSample test{"s", "y", 0, normal_matrix<Vec>(rng, 6, 1, 2.0)};
  const auto zt = st.apply(test);
  EXPECT_TRUE(zt.voxels.allFinite());
  EXPECT_NE(zt.voxels.mean(), 0.0);
  EXPECT_THROW(st.apply(FmriSample{"s", "y", 0, Vec::Zero(5)}), std::invalid_argument);
}

TEST(InjectNoise, ScaleAndIdentity) {
  Rng rng(4);
  const FmriSample raw{"s", "x", 0, normal_matrix<Vec>(rng, 20000, 1, 1.0)};
  const double base = raw.voxels.cwiseAbs().mean();
  const auto same = inject_noise(raw, 0.0, 9);
  EXPECT_EQ(std::memcmp(same.voxels.data(), raw.voxels.data(), sizeof(double) * 20000), 0);

  const Vec d = inject_noise(raw, 1.0, 9).voxels - raw.voxels;
  const double sd = std::sqrt((d.array() - d.mean()).square().mean());
  EXPECT_NEAR(sd / base, 1.0, 0.03);

  const Vec d5 = inject_noise(raw, 0.5, 9).voxels - raw.voxels;
  EXPECT_NEAR(std::sqrt((d5.array() - d5.mean()).square().mean()) / base, 0.5, 0.03);
}

TEST(InjectNoise, SweepIsReproducible) {
  Rng rng(5);
  const FmriSample raw{"s", "x", 0, normal_matrix<Vec>(rng, 300, 1, 1.0)};
  std::vector<Vec> first;
  for (int c = 1; c <= 10; ++c) first.push_back(inject_noise(raw, c / 10.0, 77).voxels);
  EXPECT_EQ(first.size(), 10u);
  for (int c = 1; c <= 10; ++c) EXPECT_EQ(inject_noise(raw, c / 10.0, 77).voxels, first[static_cast<size_t>(c - 1)]);
}

TEST(World, RegenerationIsBitIdentical) {
  const SynthWorld a(WorldConfig{}), b(WorldConfig{});
  EXPECT_EQ(a.attr_embeddings(), b.attr_embeddings());
  EXPECT_EQ(a.mixer("subj02"), b.mixer("subj02"));
  for (int c = 0; c < a.combination_count(); c += 97) {
    EXPECT_EQ(a.captions(a.attributes_of(c)).size(), 5u);
    EXPECT_EQ(a.combo_of(a.attributes_of(c)), c);
  }
}
