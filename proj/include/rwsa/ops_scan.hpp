// Copyright 2026 the rwsaunet authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Core>

#include <cmath>
#include <cstring>
#include <vector>

#include "rwsa/graph.hpp"
#include "rwsa/ops_core.hpp"

namespace rwsa {

// Selective state-space scan.
//
//   hbar_t = exp(delta_t * A)            (per channel/state, ZOH decay)
//   h_t    = hbar_t . h_{t-1} + (delta_t * u_t) x B_t   (Euler input path)
//   y_t    = C_t . h_t + D * u_t
//
// Shapes: u, delta [S, L, di]; B, C [S, L, n]; A [di, n]; D [di].
// The recurrence is sequential in t by contract; the backward pass
// rematerializes the state trajectory one sequence at a time.
template <class T>
Var<T> selective_scan(const Var<T>& u, const Var<T>& delta, const Var<T>& A,
                      const Var<T>& Bm, const Var<T>& Cm, const Var<T>& D) {
  const auto& us = u->value.shape();
  check(us.size() == 3, "selective_scan: u must be [S,L,di]");
  const std::size_t S = us[0], L = us[1], di = us[2];
  detail::check_same_shape(u->value, delta->value, "selective_scan(delta)");
  const auto& bs = Bm->value.shape();
  check(bs.size() == 3 && bs[0] == S && bs[1] == L,
        "selective_scan: B must be [S,L,n]");
  const std::size_t n = bs[2];
  detail::check_same_shape(Bm->value, Cm->value, "selective_scan(C)");
  check(A->value.shape() == (Shape{di, n}), "selective_scan: A must be [di,n]");
  check(D->value.shape() == (Shape{di}), "selective_scan: D must be [di]");

  using Arr = Eigen::Array<T, Eigen::Dynamic, 1>;
  using ArrMap = Eigen::Map<Arr>;
  using CArrMap = Eigen::Map<const Arr>;

  Tensor<T> out(us);
  const std::size_t dn = di * n;
  {
    Arr h(dn), abar(dn);
    for (std::size_t si = 0; si < S; ++si) {
      h.setZero();
      const T* up = u->value.data() + si * L * di;
      const T* dp = delta->value.data() + si * L * di;
      const T* bp = Bm->value.data() + si * L * n;
      const T* cp = Cm->value.data() + si * L * n;
      T* yp = out.data() + si * L * di;
      for (std::size_t t = 0; t < L; ++t) {
        const T* ut = up + t * di;
        const T* dt = dp + t * di;
        const T* bt = bp + t * n;
        const T* ct = cp + t * n;
        T* yt = yp + t * di;
        // abar = exp(delta ⊗ A), vectorized over the whole [di, n] block.
        for (std::size_t c = 0; c < di; ++c)
          abar.segment(c * n, n) =
              CArrMap(A->value.data() + c * n, n) * dt[c];
        abar = abar.exp();
        for (std::size_t c = 0; c < di; ++c) {
          auto hc = h.segment(c * n, n);
          hc = abar.segment(c * n, n) * hc +
               (dt[c] * ut[c]) * CArrMap(bt, n);
          yt[c] = (hc * CArrMap(ct, n)).sum() + D->value[c] * ut[c];
        }
      }
    }
  }

  Tensor<T> uv = u->value, dv = delta->value, Av = A->value, Bv = Bm->value,
            Cv = Cm->value, Dv = D->value;
  return make_op_node<T>(
      "selective_scan", std::move(out), {u, delta, A, Bm, Cm, D},
      [uv, dv, Av, Bv, Cv, Dv, S, L, di, n, dn](Node<T>& nd) {
        const bool needs[6] = {
            nd.parents[0]->requires_grad, nd.parents[1]->requires_grad,
            nd.parents[2]->requires_grad, nd.parents[3]->requires_grad,
            nd.parents[4]->requires_grad, nd.parents[5]->requires_grad};
        for (int i = 0; i < 6; ++i)
          if (needs[i]) nd.parents[i]->ensure_grad();
        Arr hb(dn), abar(dn);
        std::vector<T> hstore(L * dn);
        for (std::size_t si = 0; si < S; ++si) {
          const T* up = uv.data() + si * L * di;
          const T* dp = dv.data() + si * L * di;
          const T* bp = Bv.data() + si * L * n;
          const T* cp = Cv.data() + si * L * n;
          const T* gy = nd.grad.data() + si * L * di;
          // Recompute the state trajectory for this sequence.
          {
            Arr h(dn);
            h.setZero();
            for (std::size_t t = 0; t < L; ++t) {
              const T* ut = up + t * di;
              const T* dt = dp + t * di;
              const T* bt = bp + t * n;
              for (std::size_t c = 0; c < di; ++c)
                abar.segment(c * n, n) =
                    CArrMap(Av.data() + c * n, n) * dt[c];
              abar = abar.exp();
              for (std::size_t c = 0; c < di; ++c) {
                auto hc = h.segment(c * n, n);
                hc = abar.segment(c * n, n) * hc +
                     (dt[c] * ut[c]) * CArrMap(bt, n);
              }
              std::memcpy(hstore.data() + t * dn, h.data(), dn * sizeof(T));
            }
          }
          // Reverse sweep.
          hb.setZero();
          for (std::size_t t = L; t-- > 0;) {
            const T* ut = up + t * di;
            const T* dt = dp + t * di;
            const T* bt = bp + t * n;
            const T* ct = cp + t * n;
            const T* gyt = gy + t * di;
            const T* ht = hstore.data() + t * dn;
            const T* htm1 = t > 0 ? hstore.data() + (t - 1) * dn : nullptr;
            for (std::size_t c = 0; c < di; ++c)
              abar.segment(c * n, n) = CArrMap(Av.data() + c * n, n) * dt[c];
            abar = abar.exp();
            // hb_t (total) = hb_from_future + C_t * gy_t
            for (std::size_t c = 0; c < di; ++c)
              hb.segment(c * n, n) += gyt[c] * CArrMap(ct, n);
            if (needs[4]) {  // dC_t[n] = sum_c gy[c] * h_t[c,n]
              T* gC = nd.parents[4]->grad.data() + (si * L + t) * n;
              for (std::size_t c = 0; c < di; ++c)
                ArrMap(gC, n) += gyt[c] * CArrMap(ht + c * n, n);
            }
            for (std::size_t c = 0; c < di; ++c) {
              auto hbc = hb.segment(c * n, n);
              auto ac = abar.segment(c * n, n);
              const T du_state = (hbc * CArrMap(bt, n)).sum();
              if (needs[0])
                nd.parents[0]->grad[(si * L + t) * di + c] +=
                    Dv[c] * gyt[c] + du_state * dt[c];
              if (needs[5]) nd.parents[5]->grad[c] += gyt[c] * ut[c];
              T ddelta = du_state * ut[c];
              if (htm1) {
                auto hm = CArrMap(htm1 + c * n, n);
                auto Ac = CArrMap(Av.data() + c * n, n);
                ddelta += (hbc * hm * Ac * ac).sum();
                if (needs[2])
                  ArrMap(nd.parents[2]->grad.data() + c * n, n) +=
                      hbc * hm * ac * dt[c];
              }
              if (needs[1])
                nd.parents[1]->grad[(si * L + t) * di + c] += ddelta;
              if (needs[3]) {
                T* gB = nd.parents[3]->grad.data() + (si * L + t) * n;
                ArrMap(gB, n) += hbc * (dt[c] * ut[c]);
              }
              // propagate to h_{t-1}
              hbc *= ac;
            }
          }
        }
      });
}

}  // namespace rwsa
