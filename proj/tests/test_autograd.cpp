// Copyright 2026 the rwsaunet authors
// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>

#include "rwsa/gradcheck.hpp"
#include "rwsa/graph.hpp"
#include "rwsa/ops_core.hpp"

using namespace rwsa;

TEST(ForwardBackward, SumOfParameterGivesOnes) {
  ParamStore<double> store;
  auto p = store.create("p", Tensor<double>({3}, {1.0, -2.0, 0.5}));
  auto grads = forward_backward(reduce_sum(p), store);
  ASSERT_EQ(grads.count("p"), 1u);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_DOUBLE_EQ(grads["p"][i], 1.0);
}

TEST(ForwardBackward, QuadraticGradient) {
  ParamStore<double> store;
  auto p = store.create("p", Tensor<double>({2}, {1.0, 2.0}));
  auto grads = forward_backward(reduce_sum(mul(p, p)), store);
  EXPECT_DOUBLE_EQ(grads["p"][0], 2.0);
  EXPECT_DOUBLE_EQ(grads["p"][1], 4.0);
}

TEST(ForwardBackward, NonScalarRootRejected) {
  ParamStore<double> store;
  auto p = store.create("p", Tensor<double>({3}, 1.0));
  EXPECT_THROW(forward_backward(add(p, p), store), Error);
}

TEST(ForwardBackward, RandomFiveNodeGraphMatchesFiniteDifferences) {
  Rng rng(7);
  auto a0 = rand_uniform<double>(rng, {4}, -1.0, 1.0);
  auto b0 = rand_uniform<double>(rng, {4}, 0.2, 1.5);
  auto rep = grad_check(
      [](const std::vector<Var<double>>& ls) {
        auto x = mul(ls[0], ls[1]);          // 1
        auto y = add(x, sigmoid(ls[0]));     // 2, 3
        auto z = mul(y, exp(ls[1]));         // 4, 5
        return reduce_sum(z);
      },
      {a0, b0}, 1e-5, 1e-6);
  EXPECT_TRUE(rep.ok) << "rel err " << rep.max_rel_err;
}

TEST(ForwardBackward, SameSubgraphTwiceDoublesGradientExactly) {
  ParamStore<double> store;
  auto p = store.create("p", Tensor<double>({3}, {0.3, -1.2, 2.0}));
  auto f = mul(p, p);

  auto g_once = forward_backward(reduce_sum(f), store);
  auto f2 = mul(p, p);
  auto g_twice = forward_backward(reduce_sum(add(f2, f2)), store);
  for (std::size_t i = 0; i < 3; ++i)
    EXPECT_DOUBLE_EQ(g_twice["p"][i], 2.0 * g_once["p"][i]);
}

TEST(ForwardBackward, NanDuringForwardIsReportedWithOpTag) {
  auto x = make_leaf(Tensor<double>({2}, {-1.0, 4.0}), true);
  try {
    auto y = rwsa::log(x);  // log(-1) = nan
    FAIL() << "expected non-finite error";
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("log"), std::string::npos);
  }
}

// --- Tying -----------------------------------------------------------------

TEST(Tie, WriteThroughCanonicalIsVisibleAtAlias) {
  ParamStore<double> store;
  store.create("w", Tensor<double>({2, 2}, {1, 2, 3, 4}));
  auto h = store.tie("w", "site2");
  EXPECT_EQ(h.canonical->name, "w");
  store.param("w").node->value.array() += 1.0;
  auto r = store.at("site2");
  EXPECT_DOUBLE_EQ(r->value[0], 2.0);
  EXPECT_DOUBLE_EQ(r->value[3], 5.0);
  EXPECT_EQ(store.at("site2").get(), store.at("w").get());
}

TEST(Tie, GradAccumulatesAcrossSites) {
  // loss = sum(f(W) + g(site2)) with f = W*W and g = 3*site2.
  ParamStore<double> store;
  auto w = store.create("w", Tensor<double>({2}, {1.0, 2.0}));
  store.tie("w", "site2");
  auto site2 = store.at("site2");
  auto loss = reduce_sum(add(mul(w, w), mul_scalar(site2, 3.0)));
  auto grads = forward_backward(loss, store);
  EXPECT_DOUBLE_EQ(grads["w"][0], 2.0 + 3.0);
  EXPECT_DOUBLE_EQ(grads["w"][1], 4.0 + 3.0);
}

TEST(Tie, TiedGradEqualsSumOfUntiedTwinGrads) {
  Rng rng(21);
  auto init = rand_uniform<double>(rng, {3, 3}, -1.0, 1.0);
  auto data = rand_uniform<double>(rng, {3, 3}, -1.0, 1.0);

  // Tied: one parameter used at two sites.
  ParamStore<double> tied;
  auto w = tied.create("w", init.clone());
  tied.tie("w", "alias");
  auto x = constant(data);
  auto y1 = linear<double>(x, w);
  auto y2 = mul(tied.at("alias"), tied.at("alias"));
  auto g_tied = forward_backward(
      reduce_sum(add(reduce_sum(y1), reduce_sum(y2))), tied);

  // Untied twin: two parameters with identical values.
  ParamStore<double> untied;
  auto wa = untied.create("wa", init.clone());
  auto wb = untied.create("wb", init.clone());
  auto z1 = linear<double>(constant(data), wa);
  auto z2 = mul(wb, wb);
  auto g_untied = forward_backward(
      reduce_sum(add(reduce_sum(z1), reduce_sum(z2))), untied);

  for (std::size_t i = 0; i < init.size(); ++i)
    EXPECT_NEAR(g_tied["w"][i], g_untied["wa"][i] + g_untied["wb"][i], 1e-12);
}

TEST(Tie, ShapeValidationAtUse) {
  ParamStore<double> store;
  store.create("w", Tensor<double>({2, 3}, 0.5));
  store.tie("w", "alias");
  auto a = store.at("alias");
  EXPECT_EQ(a->value.shape(), (Shape{2, 3}));
  auto bad = constant(Tensor<double>({4}, 1.0));
  EXPECT_THROW(add(a, bad), Error);
}

// --- Shape ops --------------------------------------------------------------

TEST(ShapeOps, ReshapePermuteRoundTripIsBitExact) {
  // [B,C,T,F] -> [B*F, T, C] and back, as the sequence blocks do it.
  Rng rng(3);
  const std::size_t B = 2, C = 3, Tn = 4, F = 5;
  auto x0 = rand_uniform<double>(rng, {B, C, Tn, F}, -1.0, 1.0);
  x0.set_axes("BCTF");
  auto x = make_leaf(x0, true);
  auto t1 = permute(x, {0, 3, 2, 1});                  // [B,F,T,C]
  auto t2 = reshape(t1, {B * F, Tn, C});               // [B*F,T,C]
  auto t3 = reshape(t2, {B, F, Tn, C});
  auto back = permute(t3, {0, 3, 2, 1});               // [B,C,T,F]
  ASSERT_EQ(back->value.shape(), x0.shape());
  for (std::size_t i = 0; i < x0.size(); ++i)
    EXPECT_EQ(back->value[i], x0[i]);  // bit-exact

  // Gradient of identity chain is exactly one.
  backward(reduce_sum(back));
  for (std::size_t i = 0; i < x0.size(); ++i)
    EXPECT_DOUBLE_EQ(x->grad[i], 1.0);
}

TEST(ShapeOps, PermuteCarriesAxisLabels) {
  Tensor<double> t({2, 3, 4, 5}, 1.0);
  t.set_axes("BCTF");
  auto x = make_leaf(t, false);
  auto y = permute(x, {0, 3, 2, 1});
  EXPECT_EQ(y->value.axes(), "BFTC");
}

TEST(ShapeOps, FlipIsAnInvolution) {
  Rng rng(5);
  auto x0 = rand_uniform<double>(rng, {3, 4, 2}, -1.0, 1.0);
  auto x = make_leaf(x0, false);
  auto y = flip(flip(x, 1), 1);
  for (std::size_t i = 0; i < x0.size(); ++i) EXPECT_EQ(y->value[i], x0[i]);
}

TEST(ShapeOps, ReshapeElementCountMismatchRejected) {
  auto x = make_leaf(Tensor<double>({2, 3}, 1.0), false);
  EXPECT_THROW(reshape(x, {7}), Error);
}

TEST(ShapeOps, ConcatSliceRoundTrip) {
  Rng rng(11);
  auto a0 = rand_uniform<double>(rng, {2, 3, 4}, -1.0, 1.0);
  auto b0 = rand_uniform<double>(rng, {2, 5, 4}, -1.0, 1.0);
  auto a = make_leaf(a0, true);
  auto b = make_leaf(b0, true);
  auto c = concat<double>({a, b}, 1);
  ASSERT_EQ(c->value.shape(), (Shape{2, 8, 4}));
  auto a_back = slice(c, 1, 0, 3);
  auto b_back = slice(c, 1, 3, 5);
  for (std::size_t i = 0; i < a0.size(); ++i)
    EXPECT_EQ(a_back->value[i], a0[i]);
  for (std::size_t i = 0; i < b0.size(); ++i)
    EXPECT_EQ(b_back->value[i], b0[i]);
}

// --- Matmul -----------------------------------------------------------------

TEST(Matmul, GradsMatchFiniteDifferences3x4_4x2) {
  Rng rng(13);
  auto a0 = rand_uniform<double>(rng, {3, 4}, -1.0, 1.0);
  auto b0 = rand_uniform<double>(rng, {4, 2}, -1.0, 1.0);
  auto w0 = rand_uniform<double>(rng, {3, 2}, -1.0, 1.0);  // mixing weights
  auto rep = grad_check(
      [&](const std::vector<Var<double>>& ls) {
        auto y = matmul(ls[0], ls[1]);
        return reduce_sum(mul(y, constant(w0)));
      },
      {a0, b0}, 1e-5, 1e-6);
  EXPECT_TRUE(rep.ok) << "rel err " << rep.max_rel_err;
}

TEST(Matmul, LinearBiasGradIsColumnSum) {
  ParamStore<double> store;
  auto w = store.create("w", Tensor<double>({3, 2}, 0.0));
  auto b = store.create("b", Tensor<double>({2}, 0.0));
  auto x = constant(Tensor<double>({5, 3}, 1.0));
  auto grads = forward_backward(reduce_sum(linear(x, w, b)), store);
  EXPECT_DOUBLE_EQ(grads["b"][0], 5.0);
  EXPECT_DOUBLE_EQ(grads["b"][1], 5.0);
}

// --- Determinism ------------------------------------------------------------

TEST(Determinism, SameSeedSameValues) {
  Rng r1(99), r2(99);
  auto a = rand_normal<double>(r1, {64}, 1.0);
  auto b = rand_normal<double>(r2, {64}, 1.0);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i], b[i]);
}

TEST(Determinism, NameSeededInitIndependentOfOrder) {
  auto mk = [](std::uint64_t seed, const std::string& name) {
    Rng rng(fnv1a(name, seed));
    return rand_normal<double>(rng, {8}, 1.0);
  };
  auto a1 = mk(5, "enc.w");
  (void)mk(5, "other.w");
  auto a2 = mk(5, "enc.w");
  for (std::size_t i = 0; i < a1.size(); ++i) EXPECT_EQ(a1[i], a2[i]);
}
