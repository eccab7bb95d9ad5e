// Copyright 2026 the rwsaunet authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <vector>

#include "rwsa/graph.hpp"
#include "rwsa/ops_core.hpp"

namespace rwsa {

inline constexpr double kNormEps = 1e-5;

// Layer norm over the last axis. gamma/beta have that axis's extent.
template <class T>
Var<T> layer_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta) {
  const auto& s = x->value.shape();
  const std::size_t m = s.back();
  const std::size_t rows = x->value.size() / m;
  check(gamma->value.shape() == Shape{m} && beta->value.shape() == Shape{m},
        "layer_norm: affine extent mismatch");

  Tensor<T> out(s);
  Tensor<T> xhat(s);          // saved for backward
  Tensor<T> inv_std({rows});  // saved for backward
  const T* xp = x->value.data();
  const T* gp = gamma->value.data();
  const T* bp = beta->value.data();
  T* op_ = out.data();
  T* hp = xhat.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* row = xp + r * m;
    T mean = 0;
    for (std::size_t i = 0; i < m; ++i) mean += row[i];
    mean /= static_cast<T>(m);
    T var = 0;
    for (std::size_t i = 0; i < m; ++i) {
      T d = row[i] - mean;
      var += d * d;
    }
    var /= static_cast<T>(m);
    T is = T(1) / std::sqrt(var + static_cast<T>(kNormEps));
    inv_std[r] = is;
    for (std::size_t i = 0; i < m; ++i) {
      T h = (row[i] - mean) * is;
      hp[r * m + i] = h;
      op_[r * m + i] = h * gp[i] + bp[i];
    }
  }
  Tensor<T> gv = gamma->value;
  return make_op_node<T>(
      "layer_norm", std::move(out), {x, gamma, beta},
      [xhat, inv_std, gv, rows, m](Node<T>& n) {
        const T* g = n.grad.data();
        const T* hp = xhat.data();
        if (n.parents[1]->requires_grad) {
          n.parents[1]->ensure_grad();
          T* gg = n.parents[1]->grad.data();
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t i = 0; i < m; ++i)
              gg[i] += g[r * m + i] * hp[r * m + i];
        }
        if (n.parents[2]->requires_grad) {
          n.parents[2]->ensure_grad();
          T* gb = n.parents[2]->grad.data();
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t i = 0; i < m; ++i) gb[i] += g[r * m + i];
        }
        if (n.parents[0]->requires_grad) {
          n.parents[0]->ensure_grad();
          T* gx = n.parents[0]->grad.data();
          const T* gp = gv.data();
          const T inv_m = T(1) / static_cast<T>(m);
          for (std::size_t r = 0; r < rows; ++r) {
            T sum_dg = 0, sum_dgh = 0;
            for (std::size_t i = 0; i < m; ++i) {
              T dg = g[r * m + i] * gp[i];
              sum_dg += dg;
              sum_dgh += dg * hp[r * m + i];
            }
            sum_dg *= inv_m;
            sum_dgh *= inv_m;
            const T is = inv_std[r];
            for (std::size_t i = 0; i < m; ++i) {
              T dg = g[r * m + i] * gp[i];
              gx[r * m + i] += is * (dg - sum_dg - hp[r * m + i] * sum_dgh);
            }
          }
        }
      });
}

// Instance norm over the (T, F) plane of a [B, C, T, F] map, with per-channel
// affine parameters. A single-element plane is still defined via the epsilon.
template <class T>
Var<T> instance_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta) {
  const auto& s = x->value.shape();
  check(s.size() == 4, "instance_norm: expected [B,C,T,F]");
  const std::size_t B = s[0], C = s[1], plane = s[2] * s[3];
  check(gamma->value.shape() == Shape{C} && beta->value.shape() == Shape{C},
        "instance_norm: affine extent mismatch");

  Tensor<T> out(s);
  Tensor<T> xhat(s);
  Tensor<T> inv_std({B * C});
  const T* xp = x->value.data();
  T* op_ = out.data();
  T* hp = xhat.data();
  for (std::size_t bc = 0; bc < B * C; ++bc) {
    const std::size_t c = bc % C;
    const T* row = xp + bc * plane;
    T mean = 0;
    for (std::size_t i = 0; i < plane; ++i) mean += row[i];
    mean /= static_cast<T>(plane);
    T var = 0;
    for (std::size_t i = 0; i < plane; ++i) {
      T d = row[i] - mean;
      var += d * d;
    }
    var /= static_cast<T>(plane);
    T is = T(1) / std::sqrt(var + static_cast<T>(kNormEps));
    inv_std[bc] = is;
    const T gc = gamma->value[c], bcf = beta->value[c];
    for (std::size_t i = 0; i < plane; ++i) {
      T h = (row[i] - mean) * is;
      hp[bc * plane + i] = h;
      op_[bc * plane + i] = h * gc + bcf;
    }
  }
  Tensor<T> gv = gamma->value;
  return make_op_node<T>(
      "instance_norm", std::move(out), {x, gamma, beta},
      [xhat, inv_std, gv, B, C, plane](Node<T>& n) {
        const T* g = n.grad.data();
        const T* hp = xhat.data();
        if (n.parents[1]->requires_grad) {
          n.parents[1]->ensure_grad();
          T* gg = n.parents[1]->grad.data();
          for (std::size_t bc = 0; bc < B * C; ++bc) {
            T acc = 0;
            for (std::size_t i = 0; i < plane; ++i)
              acc += g[bc * plane + i] * hp[bc * plane + i];
            gg[bc % C] += acc;
          }
        }
        if (n.parents[2]->requires_grad) {
          n.parents[2]->ensure_grad();
          T* gb = n.parents[2]->grad.data();
          for (std::size_t bc = 0; bc < B * C; ++bc) {
            T acc = 0;
            for (std::size_t i = 0; i < plane; ++i) acc += g[bc * plane + i];
            gb[bc % C] += acc;
          }
        }
        if (n.parents[0]->requires_grad) {
          n.parents[0]->ensure_grad();
          T* gx = n.parents[0]->grad.data();
          const T inv_p = T(1) / static_cast<T>(plane);
          for (std::size_t bc = 0; bc < B * C; ++bc) {
            const T gc = gv[bc % C];
            T sum_dg = 0, sum_dgh = 0;
            for (std::size_t i = 0; i < plane; ++i) {
              T dg = g[bc * plane + i] * gc;
              sum_dg += dg;
              sum_dgh += dg * hp[bc * plane + i];
            }
            sum_dg *= inv_p;
            sum_dgh *= inv_p;
            const T is = inv_std[bc];
            for (std::size_t i = 0; i < plane; ++i) {
              T dg = g[bc * plane + i] * gc;
              gx[bc * plane + i] +=
                  is * (dg - sum_dg - hp[bc * plane + i] * sum_dgh);
            }
          }
        }
      });
}

// PReLU with a per-channel slope on a [B, C, T, F] map.
template <class T>
Var<T> prelu(const Var<T>& x, const Var<T>& slope) {
  const auto& s = x->value.shape();
  check(s.size() == 4, "prelu: expected [B,C,T,F]");
  const std::size_t B = s[0], C = s[1], plane = s[2] * s[3];
  check(slope->value.shape() == Shape{C}, "prelu: slope extent mismatch");
  Tensor<T> out(s);
  const T* xp = x->value.data();
  T* op_ = out.data();
  for (std::size_t bc = 0; bc < B * C; ++bc) {
    const T a = slope->value[bc % C];
    const T* row = xp + bc * plane;
    T* orow = op_ + bc * plane;
    for (std::size_t i = 0; i < plane; ++i)
      orow[i] = row[i] > T(0) ? row[i] : a * row[i];
  }
  Tensor<T> xv = x->value, av = slope->value;
  return make_op_node<T>(
      "prelu", std::move(out), {x, slope}, [xv, av, B, C, plane](Node<T>& n) {
        const T* g = n.grad.data();
        const T* xp = xv.data();
        if (n.parents[0]->requires_grad) {
          n.parents[0]->ensure_grad();
          T* gx = n.parents[0]->grad.data();
          for (std::size_t bc = 0; bc < B * C; ++bc) {
            const T a = av[bc % C];
            for (std::size_t i = 0; i < plane; ++i) {
              const std::size_t k = bc * plane + i;
              gx[k] += g[k] * (xp[k] > T(0) ? T(1) : a);
            }
          }
        }
        if (n.parents[1]->requires_grad) {
          n.parents[1]->ensure_grad();
          T* ga = n.parents[1]->grad.data();
          for (std::size_t bc = 0; bc < B * C; ++bc) {
            T acc = 0;
            for (std::size_t i = 0; i < plane; ++i) {
              const std::size_t k = bc * plane + i;
              if (xp[k] <= T(0)) acc += g[k] * xp[k];
            }
            ga[bc % C] += acc;
          }
        }
      });
}

// Bounded mask activation 2*sigmoid(alpha[f] * x) on a [T, F] map with one
// learnable slope per frequency bin. Output is strictly inside (0, 2).
template <class T>
Var<T> learnable_sigmoid(const Var<T>& x, const Var<T>& alpha, T beta = T(2)) {
  const auto& s = x->value.shape();
  check(s.size() == 2, "learnable_sigmoid: expected [T,F]");
  const std::size_t Tn = s[0], F = s[1];
  check(alpha->value.shape() == Shape{F},
        "learnable_sigmoid: alpha extent mismatch");
  Tensor<T> out(s);
  const T* xp = x->value.data();
  const T* ap = alpha->value.data();
  T* op_ = out.data();
  for (std::size_t t = 0; t < Tn; ++t)
    for (std::size_t f = 0; f < F; ++f) {
      const std::size_t k = t * F + f;
      op_[k] = beta / (T(1) + std::exp(-ap[f] * xp[k]));
    }
  Tensor<T> xv = x->value, av = alpha->value, yv = out;
  return make_op_node<T>(
      "learnable_sigmoid", std::move(out), {x, alpha},
      [xv, av, yv, Tn, F, beta](Node<T>& n) {
        const T* g = n.grad.data();
        // d/du [beta*sig(u)] = y*(1 - y/beta), with u = alpha*x.
        if (n.parents[0]->requires_grad) {
          n.parents[0]->ensure_grad();
          T* gx = n.parents[0]->grad.data();
          for (std::size_t t = 0; t < Tn; ++t)
            for (std::size_t f = 0; f < F; ++f) {
              const std::size_t k = t * F + f;
              gx[k] += g[k] * yv[k] * (T(1) - yv[k] / beta) * av[f];
            }
        }
        if (n.parents[1]->requires_grad) {
          n.parents[1]->ensure_grad();
          T* ga = n.parents[1]->grad.data();
          for (std::size_t t = 0; t < Tn; ++t)
            for (std::size_t f = 0; f < F; ++f) {
              const std::size_t k = t * F + f;
              ga[f] += g[k] * yv[k] * (T(1) - yv[k] / beta) * xv[k];
            }
        }
      });
}

}  // namespace rwsa
