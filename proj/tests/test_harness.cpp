#include "mindcap/harness/experiments.hpp"
#include "tiny_config.hpp"

#include <gtest/gtest.h>

using namespace mindcap;
using namespace mindcap::harness;
using mindcap::testing::scratch_dir;
using mindcap::testing::tiny_config;
using mindcap::testing::tiny_overrides;

namespace {

void flip_byte(const fs::path& p, std::streamoff at) {
  std::fstream f(p, std::ios::in | std::ios::out | std::ios::binary);
  f.seekg(at);
  char c = 0;
  f.read(&c, 1);
  c = static_cast<char>(c ^ 0x5a);
  f.seekp(at);
  f.write(&c, 1);
}

void copy_tree(const fs::path& from, const fs::path& to) {
  fs::remove_all(to);
  fs::copy(from, to, fs::copy_options::recursive);
}

}  // namespace

// ------------------------------------------------------------------ config

TEST(Config, DeskDefaultsValidate) {
  const auto c = ExperimentConfig::desk();
  EXPECT_NO_THROW(c.validate());
  EXPECT_EQ(c.profile, "desk");
  EXPECT_EQ(c.bed.v_align, c.data.v_align);
}

TEST(Config, UnknownKeysAreRejected) {
  EXPECT_THROW(ExperimentConfig::from_overrides(json::parse(R"({"bogus": 1})")), ConfigError);
  try {
    ExperimentConfig::from_overrides(json::parse(R"({"bed": {"epochz": 3}})"));
    FAIL() << "nested unknown key accepted";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("bed.epochz"), std::string::npos);
  }
  EXPECT_THROW(ExperimentConfig::from_overrides(json::parse(R"({"profile": "laptop"})")), ConfigError);
}

TEST(Config, HashIsStableUnderKeyReordering) {
  const auto a = ExperimentConfig::from_overrides(json::parse(R"({"seed": 5, "bed": {"epochs": 3, "batch_size": 8}})"));
  const auto b = ExperimentConfig::from_overrides(json::parse(R"({"bed": {"batch_size": 8, "epochs": 3}, "seed": 5})"));
  EXPECT_EQ(a.hash(), b.hash());
  const auto c = ExperimentConfig::from_overrides(json::parse(R"({"seed": 6, "bed": {"epochs": 3, "batch_size": 8}})"));
  EXPECT_NE(a.hash(), c.hash());
}

TEST(Config, JsonRoundTripPreservesHash) {
  const auto c = tiny_config();
  const auto back = ExperimentConfig::from_json(c.to_json());
  EXPECT_EQ(back.hash(), c.hash());
  EXPECT_EQ(back.to_json(), c.to_json());
}

TEST(Config, GlobalSeedDerivesEveryComponentSeed) {
  auto c = ExperimentConfig::desk();
  c.apply_seed(99);
  EXPECT_EQ(c.bed.seed, derive_seed(99, "bed"));
  EXPECT_EQ(c.blm.seed, derive_seed(99, "blm"));
  EXPECT_EQ(c.recon.denoiser.seed, derive_seed(99, "denoiser"));
  EXPECT_NE(c.lm.seed, c.vlp.seed);
}

TEST(Config, PaperScaleProfileRecordsFullScaleSchedule) {
  const auto c = ExperimentConfig::for_profile("paper-scale");
  EXPECT_EQ(c.profile, "paper-scale");
  EXPECT_EQ(c.blm.batch_size, 2);
  EXPECT_EQ(c.blm.warmup_steps, 1000);
  EXPECT_DOUBLE_EQ(c.blm.learning_rate, 1e-5);
  EXPECT_NE(c.hash(), ExperimentConfig::desk().hash());
  EXPECT_NO_THROW(c.validate());
}

TEST(Config, InconsistentSectionsFailValidation) {
  EXPECT_THROW(ExperimentConfig::from_overrides(json::parse(R"({"bed": {"v_align": 256}})")), ConfigError);
  EXPECT_THROW(ExperimentConfig::from_overrides(json::parse(R"({"blm": {"subject": "subj09"}})")), ConfigError);
  EXPECT_THROW(ExperimentConfig::from_overrides(json::parse(R"({"recon": {"sampler": "euler"}})")), ConfigError);
}

TEST(Config, ShippedDeskConfigLoads) {
  const auto c = ExperimentConfig::load(fs::path(MINDCAP_SOURCE_DIR) / "configs" / "desk.json");
  EXPECT_EQ(c.hash(), ExperimentConfig::desk().hash());
}

// ------------------------------------------------------------------ stages

TEST(Workspace, StageFailureIsTaggedWithTheStage) {
  Workspace ws(scratch_dir("stage_fail"), tiny_config());
  try {
    ws.stage("explode", json::object(), {}, {"x.txt"}, [] { throw std::runtime_error("boom"); });
    FAIL() << "no error";
  } catch (const StageError& e) {
    EXPECT_EQ(e.stage(), "explode");
    EXPECT_NE(std::string(e.what()).find("boom"), std::string::npos);
  }
  EXPECT_THROW(ws.stage("lazy", json::object(), {}, {"never.txt"}, [] {}), StageError);
  EXPECT_THROW(ws.stage("needy", json::object(), {"missing.txt"}, {"y.txt"}, [] {}), StageError);
}

TEST(Workspace, ParameterChangeReRunsOnlyThatStage) {
  const auto root = scratch_dir("stage_params");
  int runs = 0;
  auto body = [&] {
    ++runs;
    write_text_file(root / "a.txt", "a");
  };
  {
    Workspace ws(root, tiny_config());
    EXPECT_TRUE(ws.stage("a", {{"k", 1}}, {}, {"a.txt"}, body).executed);
  }
  {
    Workspace ws(root, tiny_config());
    EXPECT_FALSE(ws.stage("a", {{"k", 1}}, {}, {"a.txt"}, body).executed);
    EXPECT_TRUE(ws.stage("a", {{"k", 2}}, {}, {"a.txt"}, body).executed);
  }
  EXPECT_EQ(runs, 2);
}

TEST(PathDigest, DirectoryDigestTracksContentAndNames) {
  const auto root = scratch_dir("digest");
  write_text_file(root / "d/one.txt", "1");
  write_text_file(root / "d/sub/two.txt", "2");
  const auto d0 = path_digest(root / "d");
  EXPECT_EQ(path_digest(root / "d"), d0);
  write_text_file(root / "d/sub/two.txt", "3");
  EXPECT_NE(path_digest(root / "d"), d0);
  EXPECT_THROW(path_digest(root / "nothing"), std::runtime_error);
}

// A tiny pipeline shared by the remaining tests.
class TinyPipeline : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    root_ = new fs::path(scratch_dir("pipeline"));
    try {
      record_ = new RunRecord(run_pipeline(*root_, tiny_config()));
    } catch (const std::exception& e) {
      setup_error_ = new std::string(e.what());
    }
  }
  void SetUp() override {
    if (!record_) FAIL() << "tiny pipeline failed: " << (setup_error_ ? *setup_error_ : "unknown error");
  }
  static void TearDownTestSuite() {
    delete record_;
    delete root_;
    delete setup_error_;
  }
  static fs::path* root_;
  static RunRecord* record_;
  static std::string* setup_error_;
};

fs::path* TinyPipeline::root_ = nullptr;
RunRecord* TinyPipeline::record_ = nullptr;
std::string* TinyPipeline::setup_error_ = nullptr;

TEST_F(TinyPipeline, FreshRunExecutesEveryStageAndReportsAllMetrics) {
  EXPECT_EQ(record_->executed_count(), static_cast<int>(pipeline_stages().size()));
  ASSERT_TRUE(record_->reports.count("captions"));
  const auto& rep = record_->reports.at("captions");
  EXPECT_NO_THROW(rep.validate(metrics::text_metric_names()));
  EXPECT_EQ(rep.candidate_count, 16);
  EXPECT_EQ(rep.config_hash, tiny_config().hash());
  ASSERT_TRUE(record_->reports.count("recon"));
  for (const auto& c : recon_conditions()) EXPECT_TRUE(record_->reports.at("recon").values.count(c + "_two_way"));
  for (const auto& s : record_->stages)
    for (const auto& [path, digest] : s.consumed) EXPECT_EQ(digest.size(), 64u) << s.name << " " << path;
  EXPECT_TRUE(fs::exists(*root_ / "run_record.json"));
  EXPECT_TRUE(fs::exists(*root_ / "recon/images"));
}

TEST_F(TinyPipeline, RerunWithoutChangesExecutesNothing) {
  const auto again = run_pipeline(*root_, tiny_config());
  EXPECT_EQ(again.executed_count(), 0);
  EXPECT_EQ(again.reports.at("captions").to_json(), record_->reports.at("captions").to_json());
}

TEST_F(TinyPipeline, CorruptedCheckpointNamesItsStage) {
  const auto copy = scratch_dir("pipeline_corrupt");
  copy_tree(*root_, copy);
  flip_byte(copy / "lm.ckpt", 100);
  try {
    run_pipeline(copy, tiny_config());
    FAIL() << "corruption not detected";
  } catch (const StageError& e) {
    EXPECT_EQ(e.stage(), "pretrain_lm");
    EXPECT_NE(std::string(e.what()).find("digest mismatch"), std::string::npos);
  }
}

TEST_F(TinyPipeline, SameConfigReproducesReportsBitForBit) {
  const auto other = scratch_dir("pipeline_twin");
  const auto twin = run_pipeline(other, tiny_config());
  EXPECT_EQ(read_text_file(other / "report.json"), read_text_file(*root_ / "report.json"));
  EXPECT_EQ(read_text_file(other / "recon/recon_report.json"), read_text_file(*root_ / "recon/recon_report.json"));
  EXPECT_EQ(twin.reports.at("captions").to_json(), record_->reports.at("captions").to_json());
}

TEST_F(TinyPipeline, NoiseSweepHasElevenRowsPerMetricAndCleanRowMatches) {
  const auto copy = scratch_dir("pipeline_sweep");
  copy_tree(*root_, copy);
  Workspace ws(copy, tiny_config());
  Pipeline p(ws);
  noise_sweep(p);
  const auto rows = read_noise_sweep_csv(copy / "noise_sweep.csv");
  ASSERT_EQ(rows.size(), 11u * metrics::text_metric_names().size());
  const auto clean = metrics::MetricReport::from_json(read_json_file(copy / "report.json"));
  std::set<double> coeffs;
  for (const auto& r : rows) {
    coeffs.insert(r.coeff);
    if (r.coeff == 0.0) EXPECT_EQ(r.value, clean.values.at(r.metric)) << r.metric;
  }
  EXPECT_EQ(coeffs.size(), 11u);
  EXPECT_TRUE(fs::exists(copy / "noise_sweep.png"));
}

TEST_F(TinyPipeline, AblationTableHasOneRowPerVariant) {
  const auto copy = scratch_dir("pipeline_ablate");
  copy_tree(*root_, copy);
  Workspace ws(copy, tiny_config());
  Pipeline p(ws);
  const auto t = ablate(p, {"full", "m1"});
  ASSERT_EQ(t.variants.size(), 2u);
  for (const auto& row : t.values) EXPECT_EQ(row.size(), metrics::text_metric_names().size());
  const auto j = read_json_file(copy / "ablate/caption_ablation.json");
  EXPECT_EQ(j.at("rows").size(), 2u);
  EXPECT_TRUE(fs::exists(copy / "ablate/recon_conditions.txt"));
  EXPECT_THROW(ablate(p, {"full", "wo_everything"}), std::invalid_argument);
}

TEST_F(TinyPipeline, CaptionSubsetsForFewerCaptionsAreDeterministic) {
  const auto copy = scratch_dir("pipeline_m1");
  copy_tree(*root_, copy);
  Workspace ws(copy, tiny_config());
  Pipeline p(ws);
  const auto a = p.fit_blm(blm_variant("m1"));
  const auto b = p.fit_blm(blm_variant("m1"));
  EXPECT_EQ(a.first.trainable_digests(), b.first.trainable_digests());
}

TEST_F(TinyPipeline, ReportRendersIdenticalBytesForEqualRecords) {
  const auto a = scratch_dir("report_a"), b = scratch_dir("report_b");
  render_report({*record_}, a);
  render_report({*record_}, b);
  for (const auto* f : {"report.txt", "report.json", "report.png"})
    EXPECT_EQ(read_text_file(a / f), read_text_file(b / f)) << f;
  // one header, one rule and one row per metric
  const auto text = read_text_file(a / "report.txt");
  const auto table = text.substr(0, text.find("\n\n") + 1);
  const auto lines = std::count(table.begin(), table.end(), '\n');
  EXPECT_EQ(static_cast<size_t>(lines), 3 + record_->reports.at("captions").values.size());
  EXPECT_THROW(render_report({}, a), std::invalid_argument);
}

TEST_F(TinyPipeline, RunRecordRoundTrips) {
  const auto j = read_json_file(*root_ / "run_record.json");
  const auto r = RunRecord::from_json(j);
  EXPECT_EQ(r.to_json(), j);
  EXPECT_EQ(r.config_hash, record_->config_hash);
}
