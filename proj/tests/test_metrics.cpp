#include "mindcap/core/text.hpp"
#include "mindcap/metrics/image.hpp"
#include "mindcap/metrics/report.hpp"

#include "oracles.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>

using namespace mindcap;
using namespace mindcap::metrics;
using namespace mindcap::oracles;

namespace {

Eigen::VectorXd hashed_word_vector(const std::string& w) {
  std::mt19937_64 rng(std::hash<std::string>{}(w));
  std::normal_distribution<double> n;
  Eigen::VectorXd v(16);
  for (Eigen::Index i = 0; i < v.size(); ++i) v(i) = n(rng);
  return v;
}

Eigen::VectorXd bag_encoder(const std::string& s) {
  Eigen::VectorXd v = Eigen::VectorXd::Zero(16);
  for (const auto& w : toks(s)) v += hashed_word_vector(w);
  return v;
}

}  // namespace

TEST(Normalize, LowercasesStripsPunctuationAndSplits) {
  EXPECT_EQ(normalize("A large black bear!").tokens, (std::vector<std::string>{"a", "large", "black", "bear"}));
  EXPECT_TRUE(normalize("").tokens.empty());
  EXPECT_TRUE(normalize("  ,;! ").tokens.empty());
  EXPECT_EQ(normalize("  Two\tspaces\n here ").tokens, (std::vector<std::string>{"two", "spaces", "here"}));
}

TEST(Normalize, IsIdempotentAndStemsEveryToken) {
  for (const std::string s : {"A large black bear!", "Cats, sleeping; on the MAT.", "there's a dog's bowl"}) {
    const auto once = normalize(s);
    const auto twice = normalize(text::join(once.tokens));
    EXPECT_EQ(once.tokens, twice.tokens);
    EXPECT_EQ(once.stems.size(), once.tokens.size());
  }
}

TEST(Stemmer, MatchesReferenceVocabulary) {
  const std::vector<std::pair<std::string, std::string>> cases{
      {"caresses", "caress"},   {"ponies", "poni"},      {"ties", "ti"},          {"caress", "caress"},
      {"cats", "cat"},          {"feed", "feed"},        {"agreed", "agre"},      {"plastered", "plaster"},
      {"bled", "bled"},         {"motoring", "motor"},   {"sing", "sing"},        {"conflated", "conflat"},
      {"troubled", "troubl"},   {"sized", "size"},       {"hopping", "hop"},      {"tanned", "tan"},
      {"falling", "fall"},      {"hissing", "hiss"},     {"fizzed", "fizz"},      {"failing", "fail"},
      {"filing", "file"},       {"happy", "happi"},      {"sky", "sky"},          {"relational", "relat"},
      {"conditional", "condit"}, {"rational", "ration"}, {"valenci", "valenc"},   {"digitizer", "digit"},
      {"conformabli", "conform"}, {"radicalli", "radic"}, {"differentli", "differ"}, {"vileli", "vile"},
      {"analogousli", "analog"}, {"vietnamization", "vietnam"}, {"predication", "predic"},
      {"operator", "oper"},     {"feudalism", "feudal"}, {"decisiveness", "decis"}, {"hopefulness", "hope"},
      {"callousness", "callous"}, {"formaliti", "formal"}, {"sensitiviti", "sensit"}, {"sensibiliti", "sensibl"},
      {"triplicate", "triplic"}, {"formative", "form"},   {"formalize", "formal"}, {"electriciti", "electr"},
      {"electrical", "electr"}, {"hopeful", "hope"},      {"goodness", "good"},    {"revival", "reviv"},
      {"allowance", "allow"},   {"inference", "infer"},  {"airliner", "airlin"},  {"gyroscopic", "gyroscop"},
      {"adjustable", "adjust"}, {"defensible", "defens"}, {"irritant", "irrit"},  {"replacement", "replac"},
      {"adjustment", "adjust"}, {"dependent", "depend"}, {"adoption", "adopt"},   {"homologou", "homolog"},
      {"communism", "commun"},  {"activate", "activ"},   {"angulariti", "angular"}, {"homologous", "homolog"},
      {"effective", "effect"},  {"bowdlerize", "bowdler"}, {"probate", "probat"}, {"rate", "rate"},
      {"cease", "ceas"},        {"controll", "control"}, {"roll", "roll"},        {"sleeping", "sleep"},
      {"sleeps", "sleep"},      {"a", "a"},              {"is", "is"}};
  for (const auto& [w, s] : cases) EXPECT_EQ(stem(w), s) << w;
}

TEST(RougeL, WorkedExample) {
  EXPECT_NEAR(rouge_l("the cat on the mat", {"the cat sat on the mat"}), 0.8944, 1e-4);
  EXPECT_NEAR(rouge_l("the cat on the mat", {"the cat sat on the mat"}), 2.44 * (5.0 / 6.0) / (5.0 / 6.0 + 1.44), 1e-12);
}

TEST(RougeL, MatchesNaiveRecursionOracle) {
  const std::vector<std::pair<std::string, std::string>> cases{
      {"the cat on the mat", "the cat sat on the mat"},
      {"a red bus in the street", "there is a red bus at the street"},
      {"a street with a red train", "the train is red and sits in a street"},
      {"a photo of a dog", "a dog in a photo of a park"},
      {"blue blue blue", "blue car blue"}};
  for (const auto& [c, r] : cases) EXPECT_NEAR(rouge_l(c, {r}), rouge_oracle(c, r), 1e-12) << c;
}

TEST(RougeL, IdentityDisjointAndEmpty) {
  EXPECT_NEAR(rouge_l("a red car in a field", {"a blue dog", "a red car in a field"}), 1.0, 1e-12);
  EXPECT_EQ(rouge_l("red car", {"blue dog"}), 0.0);
  EXPECT_EQ(rouge_l("", {"blue dog"}), 0.0);
  EXPECT_THROW(rouge_l("x", std::vector<std::string>{}), std::invalid_argument);
}

TEST(Cider, IdenticalToSingleReferenceScoresTen) {
  const std::vector<std::vector<std::vector<std::string>>> refs{{toks("a red car in a field")},
                                                                {toks("the blue dog sleeps")}};
  const auto corpus = CorpusStats::build(refs);
  EXPECT_NEAR(cider(toks("a red car in a field"), refs[0], corpus), 10.0, 1e-9);
  EXPECT_EQ(cider(toks("green boat harbor"), refs[0], corpus), 0.0);
}

TEST(Cider, ThreeItemHandComputation) {
  const std::vector<std::vector<std::vector<std::string>>> refs{
      {toks("a cat")}, {toks("a dog")}, {toks("a cat runs")}};
  const auto corpus = CorpusStats::build(refs);
  EXPECT_EQ(corpus.df(1, "a"), 3.0);
  EXPECT_EQ(corpus.df(1, "cat"), 2.0);
  EXPECT_EQ(corpus.df(2, "a cat"), 2.0);
  // "a" has idf log(3/3) = 0, so n=1 and n=2 vectors are parallel: 10 * (1 + 1) / 4.
  EXPECT_NEAR(cider(toks("a cat"), refs[0], corpus), 5.0, 1e-9);
  // "cat runs" and "runs" carry idf log 3 and pull the candidate off axis.
  const double l = std::log(1.5), r = std::log(3.0);
  const double cos = l / std::sqrt(l * l + r * r);
  EXPECT_NEAR(cider(toks("a cat runs"), refs[0], corpus), 10.0 * 2 * cos / 4, 1e-9);
  // Against item 2: only "a" overlaps and it carries no weight.
  EXPECT_NEAR(cider(toks("a cat"), refs[1], corpus), 0.0, 1e-12);
  // Two references: mean over references of the per-n cosines.
  const std::vector<std::vector<std::string>> two{toks("a cat"), toks("a dog")};
  EXPECT_NEAR(cider(toks("a cat"), two, corpus), 10.0 * (0.5 + 0.5) / 4, 1e-9);
}

TEST(Cider, DegenerateCorpusAndDfBound) {
  EXPECT_THROW(CorpusStats::build({{toks("a cat")}}), std::invalid_argument);
  std::array<std::map<std::string, double>, 4> df;
  df[0]["cat"] = 3;
  EXPECT_THROW(CorpusStats(df, 2), std::invalid_argument);
}

TEST(Cider, JointDfAndSizeScalingLeavesScoresUnchanged) {
  const std::vector<std::vector<std::vector<std::string>>> refs{
      {toks("a red car in a field"), toks("there is a red car at the field")},
      {toks("a blue dog in a park")},
      {toks("a red dog in a street")}};
  const auto corpus = CorpusStats::build(refs);
  auto doubled = corpus.document_frequencies();
  for (auto& m : doubled)
    for (auto& kv : m) kv.second *= 2;
  const CorpusStats scaled(doubled, corpus.size() * 2);
  for (const std::string c : {"a red car", "a red dog in a park", "blue dog"})
    for (const auto& r : refs) EXPECT_NEAR(cider(toks(c), r, corpus), cider(toks(c), r, scaled), 1e-12);
}

TEST(MeteorLite, WorkedExamples) {
  EXPECT_NEAR(meteor_lite("a red car in field", {"a red car in field"}), 1 - 0.5 * std::pow(1.0 / 5, 3), 1e-12);
  EXPECT_NEAR(meteor_lite("a red car in field", {"a red car in field"}), 0.996, 1e-12);
  EXPECT_EQ(meteor_lite("red car", {"blue dog"}), 0.0);
  // stems: cat/cat, sleep/sleep; one chunk of two matches
  EXPECT_NEAR(meteor_lite("cats sleeping", {"cat sleeps"}), 1 - 0.5 * std::pow(0.5, 3), 1e-12);
}

TEST(MeteorLite, MatchesBruteForceOracle) {
  const std::vector<std::pair<std::string, std::string>> cases{
      {"the cat sat on the mat", "on the mat sat the cat"},
      {"a red bus in a street", "there is a red bus at the street"},
      {"a street with a red train", "a red train in a street"},
      {"a a a b", "b a a"},
      {"the dogs run in the park", "a dog running in a park with the dogs"},
      {"a photo of a red cake in the desert", "a photo of a red bird in the park"}};
  for (const auto& [c, r] : cases) EXPECT_NEAR(meteor_lite(c, {r}), meteor_oracle(c, r), 1e-12) << c << " | " << r;
}

TEST(TextMetrics, CandidateAsReferenceAttainsMaximum) {
  const std::string c = "a green kite in a garden";
  const std::vector<std::string> refs{"a blue bench in a kitchen", "a kite"};
  auto with_c = refs;
  with_c.push_back(c);
  EXPECT_NEAR(rouge_l(c, with_c), 1.0, 1e-12);
  EXPECT_NEAR(meteor_lite(c, with_c), 1 - 0.5 * std::pow(1.0 / 6, 3), 1e-12);
}

TEST(TextMetrics, IrrelevantReferenceNeverDecreasesMaxOverReferences) {
  const std::vector<std::string> cands{"a red car in a field", "the dog", "kite"};
  const std::vector<std::string> refs{"a red car at the field", "a dog is in the field"};
  auto more = refs;
  more.push_back("zebra xylophone quartz");
  for (const auto& c : cands) {
    EXPECT_GE(rouge_l(c, more), rouge_l(c, refs));
    EXPECT_GE(meteor_lite(c, more), meteor_lite(c, refs));
    EXPECT_GE(rouge_l(c, refs), 0.0);
    EXPECT_LE(rouge_l(c, refs), 1.0);
    EXPECT_GE(meteor_lite(c, refs), 0.0);
    EXPECT_LE(meteor_lite(c, refs), 1.0);
  }
}

TEST(EmbedSimilarity, IdentitySymmetryAndPairedRandomCheck) {
  const TextEncoder enc = bag_encoder;
  EXPECT_NEAR(embed_similarity("a red car", "a red car", enc), 1.0, 1e-6);
  EXPECT_DOUBLE_EQ(embed_similarity("a red car", "a blue dog", enc), embed_similarity("a blue dog", "a red car", enc));
  EXPECT_EQ(embed_similarity("", "a blue dog", enc), 0.0);
  const std::vector<std::string> words{"red", "blue", "car", "dog", "bus", "park", "field", "kite", "cat", "sea"};
  std::mt19937_64 rng(5);
  std::uniform_int_distribution<size_t> pick(0, words.size() - 1);
  double same = 0, rand = 0;
  for (int i = 0; i < 100; ++i) {
    std::string a, b;
    for (int k = 0; k < 3; ++k) {
      a += words[pick(rng)] + " ";
      b += words[pick(rng)] + " ";
    }
    same += embed_similarity(a, a, enc);
    rand += embed_similarity(a, b, enc);
  }
  EXPECT_LT(rand / 100, same / 100);
}

TEST(AttributeF1, LexiconOverlap) {
  const std::set<std::string> lex{"red", "car", "field", "blue", "dog"};
  EXPECT_NEAR(attribute_f1(toks("a red car in a field"), {toks("a red car at the field")}, lex), 1.0, 1e-12);
  // candidate {red, dog}, reference {red, car, field}: P = 1/2, R = 1/3
  EXPECT_NEAR(attribute_f1(toks("a red dog"), {toks("a red car in a field")}, lex), 0.4, 1e-12);
  EXPECT_EQ(attribute_f1(toks("a photo"), {toks("a red car")}, lex), 0.0);
}

TEST(Pixcorr, OracleAndIdentityCases) {
  const auto a = random_image(1), b = random_image(2);
  EXPECT_NEAR(pixcorr(a, a), 1.0, 1e-9);
  Image neg = a;
  neg.pixels = -a.pixels.array() + 3.0;
  EXPECT_NEAR(pixcorr(a, neg), -1.0, 1e-9);
  EXPECT_NEAR(pixcorr(a, b), loop_pearson(a.pixels, b.pixels), 1e-12);
  Image mixed = a;
  mixed.pixels = 0.6 * a.pixels + 0.4 * b.pixels;
  EXPECT_NEAR(pixcorr(a, mixed), loop_pearson(a.pixels, mixed.pixels), 1e-12);
  EXPECT_DOUBLE_EQ(pixcorr(a, b), pixcorr(b, a));
  Image flat = a;
  flat.pixels.setConstant(0.5);
  EXPECT_EQ(pixcorr(a, flat), 0.0);
  EXPECT_THROW(pixcorr(a, random_image(3, 16, 16)), std::invalid_argument);
}

TEST(Pixcorr, IndependentNoiseIsUncorrelated) {
  int small = 0;
  for (std::uint64_t s = 0; s < 200; ++s) small += std::abs(pixcorr(random_image(100 + s), random_image(900 + s))) < 0.1;
  EXPECT_GE(small, 198);
}

TEST(Ssim, SingleWindowHandComputation) {
  for (std::uint64_t s = 0; s < 3; ++s) {
    const auto a = luma(random_image(10 + s, 11, 11));
    Eigen::MatrixXd b = 0.7 * a + 0.3 * luma(random_image(20 + s, 11, 11));
    EXPECT_NEAR(ssim(a, b), single_window_ssim(a, b), 1e-9);
  }
}

TEST(Ssim, IdentityShiftSymmetryAndErrors) {
  const auto a = random_image(4), b = random_image(5);
  EXPECT_EQ(ssim(a, a), 1.0);
  Image shifted = a;
  shifted.pixels.array() += 0.5;
  EXPECT_LT(ssim(a, shifted), 1.0);
  EXPECT_DOUBLE_EQ(ssim(a, b), ssim(b, a));
  EXPECT_THROW(ssim(random_image(6, 8, 8), random_image(7, 8, 8)), std::invalid_argument);
}

TEST(Ssim, MultiWindowAverageMatchesPerWindowOracle) {
  const auto a = luma(random_image(30, 13, 12)), b = luma(random_image(31, 13, 12));
  double sum = 0;
  int n = 0;
  for (int y = 0; y + 11 <= 13; ++y)
    for (int x = 0; x + 11 <= 12; ++x, ++n)
      sum += single_window_ssim(a.block(y, x, 11, 11), b.block(y, x, 11, 11));
  EXPECT_EQ(n, 6);
  EXPECT_NEAR(ssim(a, b), sum / n, 1e-9);
}

TEST(TwoWayIdentification, IdentityConstantAndNull) {
  std::vector<Image> imgs;
  for (std::uint64_t s = 0; s < 10; ++s) imgs.push_back(random_image(s));
  const FeatureExtractor id = [](const Image& i) { return i.pixels; };
  const FeatureExtractor flat = [](const Image&) { return Eigen::VectorXd::Ones(4).eval(); };
  EXPECT_EQ(two_way_identification(imgs, imgs, id), 100.0);
  EXPECT_EQ(two_way_identification(imgs, imgs, flat), 50.0);
  EXPECT_THROW(two_way_identification(std::vector<Image>{imgs[0]}, {imgs[0]}, id), std::invalid_argument);

  std::mt19937_64 rng(3);
  std::normal_distribution<double> n;
  Eigen::MatrixXd proj(20, 64);
  for (Eigen::Index i = 0; i < proj.size(); ++i) proj.data()[i] = n(rng);
  std::vector<Eigen::VectorXd> r, t;
  for (int i = 0; i < 200; ++i) {
    Eigen::VectorXd a(64), b(64);
    for (int k = 0; k < 64; ++k) {
      a(k) = n(rng);
      b(k) = n(rng);
    }
    r.push_back(proj * a);
    t.push_back(proj * b);
  }
  EXPECT_NEAR(two_way_identification(r, t), 50.0, 3.0);
}

TEST(TwoWayIdentification, InvariantUnderMonotoneDistanceTransform) {
  // Scaling features does not change correlation distances, and the
  // comparison only depends on the distance ordering.
  std::vector<Eigen::VectorXd> r, t, r2;
  std::mt19937_64 rng(9);
  std::normal_distribution<double> n;
  for (int i = 0; i < 30; ++i) {
    Eigen::VectorXd a(8), b(8);
    for (int k = 0; k < 8; ++k) {
      a(k) = n(rng);
      b(k) = a(k) + n(rng);
    }
    r.push_back(a);
    t.push_back(b);
    r2.push_back(3.0 * a.array() + 1.0);
  }
  EXPECT_EQ(two_way_identification(r, t), two_way_identification(r2, t));
}

TEST(MetricReport, JsonRoundTripAndValidation) {
  MetricReport r;
  r.values = {{"rouge_l", 0.5}, {"cider", 1.25}};
  r.split = "test";
  r.seed = 7;
  r.config_hash = "abc";
  r.candidate_count = 3;
  const auto back = MetricReport::from_json(r.to_json());
  EXPECT_EQ(back.to_json().dump(), r.to_json().dump());
  EXPECT_NO_THROW(r.validate({"rouge_l", "cider"}));
  EXPECT_THROW(r.validate({"meteor_lite"}), std::runtime_error);
  r.values["cider"] = std::nan("");
  EXPECT_THROW(r.validate({}), std::runtime_error);
}

TEST(CaptionScores, AllSixMetricsPresent) {
  const TextEncoders enc{bag_encoder, bag_encoder};
  const std::vector<std::string> c{"a red car in a field", "a blue dog"};
  const std::vector<std::vector<std::string>> refs{{"a red car in a field"}, {"a blue dog in a park"}};
  const auto s = score_captions(c, refs, enc, {"red", "blue", "car", "dog", "field", "park"});
  const auto m = s.means();
  for (const auto& k : text_metric_names()) ASSERT_TRUE(m.count(k)) << k;
  EXPECT_NEAR(s.per_item.at("rouge_l")[0], 1.0, 1e-12);
  EXPECT_NEAR(s.per_item.at("embed_sim")[0], 1.0, 1e-9);
}

TEST(Quantile, InterpolatesBetweenOrderStatistics) {
  EXPECT_DOUBLE_EQ(quantile({3, 1, 2, 4}, 0.5), 2.5);
  EXPECT_DOUBLE_EQ(quantile({3, 1, 2, 4}, 1.0), 4.0);
  EXPECT_DOUBLE_EQ(quantile({5}, 0.975), 5.0);
}

TEST(Cider, MatchesStringLevelOracle) {
  const std::vector<std::vector<std::string>> refs{{"a red car in a field", "there is a red car at the field"},
                                                   {"a blue dog in a park"},
                                                   {"a red dog in a street", "the dog is red"}};
  std::vector<std::vector<std::vector<std::string>>> ref_toks;
  for (const auto& item : refs) {
    ref_toks.emplace_back();
    for (const auto& r : item) ref_toks.back().push_back(toks(r));
  }
  const auto corpus = CorpusStats::build(ref_toks);
  for (const std::string c : {"a red car in a field", "a red dog in a park", "blue dog", "the red dog"})
    for (size_t i = 0; i < refs.size(); ++i)
      EXPECT_NEAR(cider(toks(c), ref_toks[i], corpus), cider_oracle(c, i, refs), 1e-12) << c << " | " << i;
}
