#include "grad_check.hpp"

#include "mindcap/core/checkpoint.hpp"
#include "mindcap/core/nn.hpp"
#include "mindcap/core/optim.hpp"

#include <gtest/gtest.h>

using namespace mindcap;
using ag::Mat;
using ag::Var;

namespace {

Mat rand_mat(Rng& rng, int r, int c) { return normal_matrix<Mat>(rng, r, c, 1.0); }

void expect_grads_match(nn::ParamSet& ps, const std::function<Var()>& f, double tol = 1e-6) {
  const auto samples = gradcheck::check_gradients(ps, f, 1.0, 3);
  for (const auto& s : samples)
    EXPECT_LE(s.rel_error, tol) << s.name << "[" << s.row << "," << s.col << "] analytic " << s.analytic << " numeric "
                                << s.numeric;
}

}  // namespace

TEST(Autograd, MatmulAddTransposeGelu) {
  Rng rng(1);
  nn::ParamSet ps;
  Var a = ps.add("a", rand_mat(rng, 3, 4), true);
  Var b = ps.add("b", rand_mat(rng, 4, 2), true);
  Var c = ps.add("c", rand_mat(rng, 1, 2), false);
  Var d = ps.add("d", rand_mat(rng, 2, 3), true);
  expect_grads_match(ps, [&] {
    Var y = ag::gelu(ag::add_row(ag::matmul(a, b), c));
    Var z = ag::mul(y, ag::transpose(d));
    return ag::sum(ag::scale(ag::sub(z, ag::tanh(y)), 0.7));
  });
}

TEST(Autograd, LayerNormGatherConcatReshape) {
  Rng rng(2);
  nn::ParamSet ps;
  Var x = ps.add("x", rand_mat(rng, 4, 6), true);
  Var g = ps.add("g", rand_mat(rng, 1, 6), false);
  Var b = ps.add("b", rand_mat(rng, 1, 6), false);
  Var w = ps.add("w", rand_mat(rng, 6, 6), true);
  expect_grads_match(ps, [&] {
    Var y = ag::layer_norm(x, g, b);
    Var picked = ag::gather_rows(y, {3, 0, 0, 2});  // duplicate rows scatter-add
    Var cat = ag::concat_rows({picked, ag::matmul(y, w)});
    Var r = ag::reshape(cat, 12, 4);
    return ag::sum(ag::mul(r, r));
  });
}

TEST(Autograd, UnfoldRowsRespectsSegments) {
  Rng rng(3);
  nn::ParamSet ps;
  Var x = ps.add("x", rand_mat(rng, 5, 2), true);
  Var w = ps.add("w", rand_mat(rng, 6, 3), true);
  const std::vector<int> seg{3, 2};
  const Var u = ag::unfold_rows(x, 1, seg);
  // row 2 is the last of segment 0: right neighbour must be zero padding
  EXPECT_EQ(u.value()(2, 4), 0.0);
  EXPECT_EQ(u.value()(2, 5), 0.0);
  EXPECT_EQ(u.value()(3, 0), 0.0);  // first row of segment 1, left padding
  EXPECT_DOUBLE_EQ(u.value()(1, 0), x.value()(0, 0));
  expect_grads_match(ps, [&] {
    Var y = ag::matmul(ag::unfold_rows(x, 1, seg), w);
    return ag::sum(ag::gelu(y));
  });
}

TEST(Autograd, AttentionSelfCrossAndCausal) {
  Rng rng(4);
  nn::ParamSet ps;
  Var q = ps.add("q", rand_mat(rng, 5, 4), true);
  Var k = ps.add("k", rand_mat(rng, 7, 4), true);
  Var v = ps.add("v", rand_mat(rng, 7, 4), true);
  Var w = ps.add("w", rand_mat(rng, 4, 4), true);
  expect_grads_match(ps, [&] {
    Var cross = ag::attention(q, k, v, 2, {2, 3}, {3, 4}, false);
    Var self = ag::attention(ag::matmul(q, w), q, q, 2, {2, 3}, {2, 3}, true);
    return ag::sum(ag::mul(ag::add(cross, self), ag::add(cross, self)));
  });
}

TEST(Autograd, CausalAttentionIgnoresFutureRows) {
  Rng rng(5);
  Mat x = rand_mat(rng, 4, 4);
  const Mat out1 = ag::attention(ag::constant(x), ag::constant(x), ag::constant(x), 2, {4}, {4}, true).value();
  Mat x2 = x;
  x2.row(3).setRandom();
  const Mat out2 = ag::attention(ag::constant(x2), ag::constant(x2), ag::constant(x2), 2, {4}, {4}, true).value();
  EXPECT_EQ(out1.topRows(3), out2.topRows(3));
  EXPECT_NE(out1.row(3), out2.row(3));
}

TEST(Autograd, CrossEntropyAndSquaredError) {
  Rng rng(6);
  nn::ParamSet ps;
  Var logits = ps.add("l", rand_mat(rng, 4, 5), true);
  Var p = ps.add("p", rand_mat(rng, 3, 2), true);
  const Mat target = rand_mat(rng, 3, 2);
  expect_grads_match(ps, [&] {
    Var ce = ag::cross_entropy(logits, {1, -1, 4, 0}, {0.5, 1.0, 2.0, 1.0});
    Var se = ag::weighted_sq_error(p, target, {1.0, 0.0, 0.25});
    return ag::add(ce, se);
  });
}

TEST(Autograd, CrossEntropyHandValue) {
  Mat l(2, 3);
  l << 1.0, 2.0, 0.5, -1.0, 0.0, 3.0;
  const double expect = -(2.0 - std::log(std::exp(1.0) + std::exp(2.0) + std::exp(0.5))) -
                        (3.0 - std::log(std::exp(-1.0) + std::exp(0.0) + std::exp(3.0)));
  EXPECT_NEAR(ag::cross_entropy(ag::constant(l), {1, 2}, {1.0, 1.0}).item(), expect, 1e-12);
}

TEST(Autograd, FrozenLeavesReceiveNoGradient) {
  Rng rng(7);
  Var w = ag::leaf(rand_mat(rng, 3, 3), false);
  Var x = ag::leaf(rand_mat(rng, 2, 3), true);
  ag::backward(ag::sum(ag::matmul(x, w)));
  EXPECT_EQ(w.grad().size(), 0);
  EXPECT_EQ(x.grad().rows(), 2);
}

TEST(Optim, ZeroLearningRateLeavesParametersBitIdentical) {
  Rng rng(8);
  nn::ParamSet ps;
  nn::Linear lin(ps, "lin", 3, 2, rng);
  const auto before = ps.state();
  optim::AdamW opt(ps, 0.05);
  for (int i = 0; i < 3; ++i) {
    ps.zero_grad();
    ag::backward(ag::sum(lin(ag::constant(rand_mat(rng, 4, 3)))));
    opt.step(0.0);
  }
  EXPECT_EQ(tensor_digest(before), tensor_digest(ps.state()));
}

TEST(Optim, WarmupCosineShape) {
  optim::WarmupCosine s{1.0, 10, 110};
  EXPECT_NEAR(s.at(0), 0.1, 1e-12);
  EXPECT_NEAR(s.at(9), 1.0, 1e-12);
  EXPECT_NEAR(s.at(10), 1.0, 1e-12);
  EXPECT_NEAR(s.at(60), 0.5, 1e-12);
  EXPECT_NEAR(s.at(110), 0.0, 1e-12);
}

TEST(Checkpoint, SerializeRoundTripIsByteStable) {
  Rng rng(9);
  Checkpoint ck;
  ck.kind = "test";
  ck.config = {{"b", 2}, {"a", 0.1}};
  ck.config_hash = config_hash(ck.config);
  ck.metadata = {{"loss", {1.5, 0.25}}};
  ck.rng_state = rng_state(rng);
  ck.tensors["x"] = rand_mat(rng, 3, 4);
  ck.tensors["y.z"] = rand_mat(rng, 1, 7);
  const std::string a = serialize_checkpoint(ck);
  const std::string b = serialize_checkpoint(deserialize_checkpoint(a));
  EXPECT_EQ(a, b);
  EXPECT_THROW(deserialize_checkpoint(a.substr(0, a.size() - 8)), std::runtime_error);
  std::string bad = a;
  bad[0] = 'X';
  EXPECT_THROW(deserialize_checkpoint(bad), std::runtime_error);
}

TEST(Checkpoint, ConfigHashIgnoresKeyOrder) {
  const json a = json::parse(R"({"x": 1, "y": {"p": 2, "q": [1,2]}})");
  const json b = json::parse(R"({"y": {"q": [1,2], "p": 2}, "x": 1})");
  EXPECT_EQ(config_hash(a), config_hash(b));
}
