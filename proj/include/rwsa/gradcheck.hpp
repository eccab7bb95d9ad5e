// Copyright 2026 the rwsaunet authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "rwsa/graph.hpp"
#include "rwsa/ops_core.hpp"

namespace rwsa {

struct GradCheckReport {
  double max_rel_err = 0.0;
  bool ok = true;
};

// Central finite differences against reverse mode, in double precision.
// `build` must be a pure deterministic function of the leaf values. The
// relative error per leaf is ||g_ad - g_fd||_2 / max(||g_ad||, ||g_fd||, eps).
inline GradCheckReport grad_check(
    const std::function<Var<double>(const std::vector<Var<double>>&)>& build,
    std::vector<Tensor<double>> leaf_values, double eps = 1e-5,
    double tol = 1e-5) {
  GradCheckReport rep;

  auto make_leaves = [&](bool need_grad) {
    std::vector<Var<double>> leaves;
    leaves.reserve(leaf_values.size());
    for (auto& t : leaf_values) leaves.push_back(make_leaf(t.clone(), need_grad));
    return leaves;
  };

  auto leaves = make_leaves(true);
  Var<double> root = build(leaves);
  check(root->value.size() == 1, "grad_check: root must be scalar");
  backward(root);

  auto eval = [&](const std::vector<Tensor<double>>& vals) {
    NoGradGuard ng;
    std::vector<Var<double>> ls;
    ls.reserve(vals.size());
    for (const auto& t : vals) ls.push_back(make_leaf(t, false));
    return build(ls)->value[0];
  };

  for (std::size_t li = 0; li < leaf_values.size(); ++li) {
    const std::size_t m = leaf_values[li].size();
    Tensor<double> g_fd(leaf_values[li].shape());
    for (std::size_t i = 0; i < m; ++i) {
      std::vector<Tensor<double>> vals;
      for (const auto& t : leaf_values) vals.push_back(t.clone());
      vals[li][i] += eps;
      double up = eval(vals);
      vals[li][i] -= 2 * eps;
      double dn = eval(vals);
      g_fd[i] = (up - dn) / (2 * eps);
    }
    Tensor<double> g_ad = leaves[li]->grad.defined()
                              ? leaves[li]->grad
                              : Tensor<double>(leaf_values[li].shape(), 0.0);
    double num = 0, na = 0, nf = 0;
    for (std::size_t i = 0; i < m; ++i) {
      double d = g_ad[i] - g_fd[i];
      num += d * d;
      na += g_ad[i] * g_ad[i];
      nf += g_fd[i] * g_fd[i];
    }
    double rel = std::sqrt(num) /
                 std::max({std::sqrt(na), std::sqrt(nf), 1e-12});
    rep.max_rel_err = std::max(rep.max_rel_err, rel);
  }
  rep.ok = rep.max_rel_err < tol;
  return rep;
}

}  // namespace rwsa
