#include "grad_check.hpp"

#include "mindcap/bed/bed.hpp"

#include <gtest/gtest.h>

using namespace mindcap;
using namespace mindcap::bed;
using ag::Mat;

namespace {

BedConfig tiny_config() {
  BedConfig c;
  c.v_align = 64;
  c.patch_size = 8;
  c.token_dim = 16;
  c.decoder_dim = 8;
  c.encoder_depth = 2;
  c.decoder_depth = 1;
  c.head_count = 2;
  c.epochs = 2;
  c.warmup_epochs = 1;
  c.batch_size = 4;
  return c;
}

Mat random_patches(Rng& rng, const BedConfig& c) {
  return normal_matrix<Mat>(rng, c.patch_count(), c.patch_size, 1.0);
}

std::vector<data::PreparedSubject> random_subjects(const BedConfig& c, int per_subject, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<data::PreparedSubject> out(2);
  for (int s = 0; s < 2; ++s) {
    out[static_cast<size_t>(s)].subject_id = "subj0" + std::to_string(s + 1);
    for (int i = 0; i < per_subject; ++i)
      out[static_cast<size_t>(s)].train.push_back({"x", 0, {random_patches(rng, c)}});
  }
  return out;
}

}  // namespace

TEST(MaskPlan, Cardinalities) {
  Rng rng(1);
  const auto p = random_mask(983, 0.75, rng);
  EXPECT_EQ(p.masked.size(), 737u);
  EXPECT_EQ(p.kept.size(), 246u);
  EXPECT_TRUE(p.is_partition(983));
  EXPECT_EQ(random_mask(4, 0.75, rng).masked.size(), 3u);
  EXPECT_THROW(random_mask(4, 1.0, rng), std::invalid_argument);
  EXPECT_THROW(random_mask(4, 0.0, rng), std::invalid_argument);
  EXPECT_THROW(random_mask(1, 0.5, rng), std::invalid_argument);
}

TEST(MaskPlan, SeededPlansRepeat) {
  Rng a(42), b(42);
  for (int i = 0; i < 20; ++i) {
    const auto pa = random_mask(32, 0.75, a), pb = random_mask(32, 0.75, b);
    EXPECT_EQ(pa.masked, pb.masked);
    EXPECT_EQ(pa.kept, pb.kept);
  }
}

TEST(BedForward, ShapeAndInferencePlan) {
  const auto c = tiny_config();
  BedModel m(c);
  Rng rng(2);
  const Mat x = random_patches(rng, c);
  const auto plan = random_mask(c.patch_count(), c.mask_ratio, rng);
  const Var y = m.forward({&x}, {plan});
  EXPECT_EQ(y.rows(), x.rows());
  EXPECT_EQ(y.cols(), x.cols());
  EXPECT_EQ(m.encoder().encode_all({&x}).rows(), c.patch_count());
  const Mat wrong = Mat::Zero(c.patch_count(), c.patch_size + 1);
  EXPECT_THROW(m.forward({&wrong}, {plan}), std::invalid_argument);
}

TEST(BedForward, MaskedInputsNeverLeak) {
  const auto c = tiny_config();
  BedModel m(c);
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const Mat x = random_patches(rng, c);
    const auto plan = random_mask(c.patch_count(), c.mask_ratio, rng);
    Mat x2 = x;
    x2.row(plan.masked[static_cast<size_t>(trial) % plan.masked.size()]).setConstant(5.0);
    EXPECT_EQ(m.forward({&x}, {plan}).value(), m.forward({&x2}, {plan}).value());
  }
}

TEST(BedLoss, OracleAndSpecialCases) {
  Rng rng(4);
  const auto plan = random_mask(12, 0.75, rng);
  const Mat t = normal_matrix<Mat>(rng, 12, 5, 1.0);
  EXPECT_EQ(bed_loss(t, t, plan), 0.0);
  Mat off = t;
  for (int p : plan.masked) off.row(p).array() += 1.0;
  EXPECT_NEAR(bed_loss(off, t, plan), 1.0, 1e-12);

  const Mat p = normal_matrix<Mat>(rng, 12, 5, 1.0);
  double oracle = 0;
  int n = 0;
  for (int r = 0; r < 12; ++r) {
    if (std::find(plan.masked.begin(), plan.masked.end(), r) == plan.masked.end()) continue;
    for (int k = 0; k < 5; ++k) {
      oracle += (p(r, k) - t(r, k)) * (p(r, k) - t(r, k));
      ++n;
    }
  }
  EXPECT_NEAR(bed_loss(p, t, plan), oracle / n, 1e-10);
  EXPECT_THROW(bed_loss(p, t, MaskPlan::all_kept(12)), std::invalid_argument);
}

TEST(BedLoss, AutogradLossMatchesScalarLoss) {
  const auto c = tiny_config();
  BedModel m(c);
  Rng rng(5);
  const Mat a = random_patches(rng, c), b = random_patches(rng, c);
  const auto pa = random_mask(c.patch_count(), c.mask_ratio, rng), pb = random_mask(c.patch_count(), c.mask_ratio, rng);
  const Var pred = m.forward({&a, &b}, {pa, pb});
  const double expect = 0.5 * (bed_loss(pred.value().topRows(c.patch_count()), a, pa) +
                               bed_loss(pred.value().bottomRows(c.patch_count()), b, pb));
  EXPECT_NEAR(m.loss(pred, {&a, &b}, {pa, pb}).item(), expect, 1e-12);
}

TEST(BedLoss, GradientMatchesFiniteDifferences) {
  const auto c = tiny_config();
  BedModel m(c);
  Rng rng(6);
  const Mat a = random_patches(rng, c), b = random_patches(rng, c);
  const auto pa = random_mask(c.patch_count(), c.mask_ratio, rng), pb = random_mask(c.patch_count(), c.mask_ratio, rng);
  nn::ParamSet all;
  all.extend(m.encoder_params(), "be.");
  all.extend(m.decoder_params(), "bed_decoder.");
  const auto samples = gradcheck::check_gradients(
      all, [&] { return m.loss(m.forward({&a, &b}, {pa, pb}), {&a, &b}, {pa, pb}); }, 0.01, 7, 1e-4, 200);
  EXPECT_LE(gradcheck::max_rel_error(samples), 1e-4);
}

TEST(BedCheckpoint, RoundTripIsByteIdentical) {
  BedModel m(tiny_config());
  const std::string a = serialize_checkpoint(m.to_checkpoint({{"epochs", 0}}));
  const BedModel back = BedModel::from_checkpoint(deserialize_checkpoint(a));
  EXPECT_EQ(serialize_checkpoint(back.to_checkpoint({{"epochs", 0}})), a);

  auto ck = deserialize_checkpoint(a);
  ck.config["token_dim"] = 32;
  EXPECT_THROW(BedModel::from_checkpoint(ck), std::runtime_error);
}

TEST(BedConfig, Validation) {
  auto c = tiny_config();
  c.mask_ratio = 1.0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = tiny_config();
  c.decoder_depth = c.encoder_depth;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  EXPECT_EQ(BedConfig::from_json(tiny_config().to_json()).to_json(), tiny_config().to_json());
}

TEST(PretrainBed, ZeroLearningRateKeepsWeights) {
  auto c = tiny_config();
  c.learning_rate = 0.0;
  const auto before = BedModel(c).to_checkpoint();
  const auto res = pretrain_bed(random_subjects(c, 6, 8), {}, c);
  EXPECT_EQ(serialize_checkpoint(res.model.to_checkpoint()), serialize_checkpoint(before));
}

TEST(PretrainBed, SameSeedSameLossCurve) {
  const auto c = tiny_config();
  const auto subjects = random_subjects(c, 6, 9);
  const auto a = pretrain_bed(subjects, {}, c);
  const auto b = pretrain_bed(subjects, {}, c);
  EXPECT_EQ(a.epoch_loss, b.epoch_loss);
  EXPECT_EQ(a.epoch_loss.size(), 2u);
}

TEST(PretrainBed, NeedsTwoSubjects) {
  const auto c = tiny_config();
  auto subjects = random_subjects(c, 2, 10);
  subjects.pop_back();
  EXPECT_THROW(pretrain_bed(subjects, {}, c), std::invalid_argument);
}
