// Copyright 2026 the rwsaunet authors
// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <functional>

#include "rwsa/gradcheck.hpp"
#include "rwsa/graph.hpp"
#include "rwsa/ops_core.hpp"

using namespace rwsa;

namespace {

// Runs the central finite-difference check at `points` random inputs drawn
// from [lo, hi]. Inputs for kinked ops are sampled away from the kink by the
// caller's choice of range.
void check_unary(const char* name,
                 std::function<Var<double>(const Var<double>&)> op, double lo,
                 double hi, int points = 10, double tol = 1e-5) {
  Rng rng(fnv1a(name));
  for (int p = 0; p < points; ++p) {
    auto x0 = rand_uniform<double>(rng, {2, 3}, lo, hi);
    Shape out_shape;
    {
      NoGradGuard ng;
      out_shape = op(make_leaf(x0.clone(), false))->value.shape();
    }
    auto w = rand_uniform<double>(rng, out_shape, -1.0, 1.0);
    auto rep = grad_check(
        [&](const std::vector<Var<double>>& ls) {
          return reduce_sum(mul(op(ls[0]), constant(w)));
        },
        {x0}, 1e-5, tol);
    EXPECT_TRUE(rep.ok) << name << " point " << p << " rel err "
                        << rep.max_rel_err;
  }
}

void check_binary(const char* name,
                  std::function<Var<double>(const Var<double>&, const Var<double>&)> op,
                  double lo, double hi, int points = 10, double tol = 1e-5) {
  Rng rng(fnv1a(name));
  for (int p = 0; p < points; ++p) {
    auto a0 = rand_uniform<double>(rng, {2, 3}, lo, hi);
    auto b0 = rand_uniform<double>(rng, {2, 3}, lo, hi);
    auto w = rand_uniform<double>(rng, {2, 3}, -1.0, 1.0);
    auto rep = grad_check(
        [&](const std::vector<Var<double>>& ls) {
          return reduce_sum(mul(op(ls[0], ls[1]), constant(w)));
        },
        {a0, b0}, 1e-5, tol);
    EXPECT_TRUE(rep.ok) << name << " point " << p << " rel err "
                        << rep.max_rel_err;
  }
}

}  // namespace

TEST(OpGradients, Elementwise) {
  check_binary("add", [](auto a, auto b) { return add(a, b); }, -2, 2);
  check_binary("sub", [](auto a, auto b) { return sub(a, b); }, -2, 2);
  check_binary("mul", [](auto a, auto b) { return mul(a, b); }, -2, 2);
  check_binary("div", [](auto a, auto b) { return div(a, b); }, 0.5, 2.0);
  check_unary("exp", [](auto x) { return rwsa::exp(x); }, -1, 1);
  check_unary("log", [](auto x) { return rwsa::log(x); }, 0.5, 3.0);
  check_unary("sqrt", [](auto x) { return rwsa::sqrt(x); }, 0.5, 3.0);
  check_unary("sin", [](auto x) { return rwsa::sin(x); }, -3, 3);
  check_unary("cos", [](auto x) { return rwsa::cos(x); }, -3, 3);
  check_unary("sigmoid", [](auto x) { return sigmoid(x); }, -3, 3);
  check_unary("softplus", [](auto x) { return softplus(x); }, -3, 3);
  check_unary("silu", [](auto x) { return silu(x); }, -3, 3);
  check_unary("pow03", [](auto x) { return pow_const(x, 0.3); }, 0.3, 3.0);
  // abs away from the kink at zero
  check_unary("abs", [](auto x) { return rwsa::abs(x); }, 0.2, 2.0);
  check_unary("neg_abs", [](auto x) { return rwsa::abs(x); }, -2.0, -0.2);
}

TEST(OpGradients, SuffixBroadcast) {
  Rng rng(fnv1a("suffix"));
  for (int p = 0; p < 10; ++p) {
    auto a0 = rand_uniform<double>(rng, {2, 3, 4}, -1, 1);
    auto b0 = rand_uniform<double>(rng, {4}, -1, 1);
    auto w = rand_uniform<double>(rng, {2, 3, 4}, -1, 1);
    auto rep = grad_check(
        [&](const std::vector<Var<double>>& ls) {
          auto y = add_suffix(mul_suffix(ls[0], ls[1]), ls[1]);
          return reduce_sum(mul(y, constant(w)));
        },
        {a0, b0}, 1e-5, 1e-5);
    EXPECT_TRUE(rep.ok) << "point " << p << " rel err " << rep.max_rel_err;
  }
}

TEST(OpGradients, ShapeOps) {
  check_unary("flip", [](auto x) { return flip(x, 1); }, -2, 2);
  check_unary("pad", [](auto x) { return pad_zero(x, 0, 1, 2); }, -2, 2);
  check_unary("permute+reshape", [](auto x) {
    return reshape(permute(x, {1, 0}), Shape{3, 2});
  }, -2, 2);
  check_unary("slice", [](auto x) { return slice(x, 1, 1, 2); }, -2, 2);
  Rng rng(fnv1a("concat"));
  for (int p = 0; p < 10; ++p) {
    auto a0 = rand_uniform<double>(rng, {2, 2}, -1, 1);
    auto b0 = rand_uniform<double>(rng, {2, 3}, -1, 1);
    auto w = rand_uniform<double>(rng, {2, 5}, -1, 1);
    auto rep = grad_check(
        [&](const std::vector<Var<double>>& ls) {
          return reduce_sum(mul(concat<double>({ls[0], ls[1]}, 1), constant(w)));
        },
        {a0, b0}, 1e-5, 1e-5);
    EXPECT_TRUE(rep.ok);
  }
}

TEST(OpGradients, Atan2AwayFromOrigin) {
  check_binary("atan2pp", [](auto y, auto x) { return rwsa::atan2(y, x); },
               0.5, 2.0);
  check_binary("atan2nn", [](auto y, auto x) { return rwsa::atan2(y, x); },
               -2.0, -0.5);
}

TEST(OpGradients, WrappedAbsAwayFromKinks) {
  // Kinks sit at multiples of pi; sample inside (0.2, 2.9).
  check_unary("wrapped_abs", [](auto x) { return wrapped_abs(x); }, 0.2, 2.9);
}

TEST(OpValues, Atan2SpecialCases) {
  auto y = make_leaf(Tensor<double>({3}, {0.0, 1.0, 0.0}), false);
  auto x = make_leaf(Tensor<double>({3}, {0.0, 0.0, -1.0}), false);
  auto phi = rwsa::atan2(y, x);
  EXPECT_DOUBLE_EQ(phi->value[0], 0.0);  // atan2(0,0) := 0
  EXPECT_DOUBLE_EQ(phi->value[1], M_PI / 2);
  EXPECT_DOUBLE_EQ(phi->value[2], M_PI);
}

TEST(OpValues, WrappedDistanceNearPi) {
  // Pair (pi - 0.1, -pi + 0.1): plain difference is 2pi - 0.2 but the wrapped
  // distance must be 0.2.
  double a = M_PI - 0.1, b = -M_PI + 0.1;
  auto d = wrapped_abs(make_leaf(Tensor<double>({1}, {a - b}), false));
  EXPECT_NEAR(d->value[0], 0.2, 1e-12);
}

TEST(OpValues, SigmoidSoftplusSiluSanity) {
  auto x = make_leaf(Tensor<double>({3}, {0.0, 25.0, -25.0}), false);
  auto s = sigmoid(x);
  EXPECT_DOUBLE_EQ(s->value[0], 0.5);
  EXPECT_NEAR(s->value[1], 1.0, 1e-10);
  auto sp = softplus(x);
  EXPECT_NEAR(sp->value[0], std::log(2.0), 1e-12);
  EXPECT_DOUBLE_EQ(sp->value[1], 25.0);  // linear tail
  auto sl = silu(x);
  EXPECT_DOUBLE_EQ(sl->value[0], 0.0);
}

TEST(Checkpoint, MatchesDirectGradients) {
  Rng rng(fnv1a("ckpt"));
  ParamStore<double> store;
  auto w = store.create("w", rand_uniform<double>(rng, {3, 3}, -1, 1));
  auto x0 = rand_uniform<double>(rng, {2, 3}, -1, 1);

  auto segment = [&](Var<double> in) {
    return silu(linear<double>(in, w));
  };

  auto x1 = make_leaf(x0.clone(), true);
  auto direct = forward_backward(reduce_sum(segment(x1)), store);
  Tensor<double> gx_direct = x1->grad.clone();

  auto x2 = make_leaf(x0.clone(), true);
  auto ck = checkpoint<double>(segment, x2);
  auto viack = forward_backward(reduce_sum(ck), store);
  for (std::size_t i = 0; i < 9; ++i)
    EXPECT_NEAR(direct["w"][i], viack["w"][i], 1e-14);
  for (std::size_t i = 0; i < x0.size(); ++i)
    EXPECT_NEAR(gx_direct[i], x2->grad[i], 1e-14);
}
