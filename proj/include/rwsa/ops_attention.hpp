// Copyright 2026 the rwsaunet authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Core>

#include <cmath>
#include <vector>

#include "rwsa/graph.hpp"
#include "rwsa/ops_core.hpp"

namespace rwsa {

namespace attndetail {

template <class T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using StridedMap =
    Eigen::Map<const Mat<T>, 0, Eigen::OuterStride<Eigen::Dynamic>>;
template <class T>
using MutStridedMap = Eigen::Map<Mat<T>, 0, Eigen::OuterStride<Eigen::Dynamic>>;

// Head h of a [B', S, C] tensor at image b: an [S, dh] view with row stride C.
template <class T>
StridedMap<T> head_view(const Tensor<T>& t, std::size_t b, std::size_t S,
                        std::size_t C, std::size_t h, std::size_t dh) {
  return StridedMap<T>(t.data() + b * S * C + h * dh, S, dh,
                       Eigen::OuterStride<Eigen::Dynamic>(C));
}
template <class T>
MutStridedMap<T> head_view_mut(Tensor<T>& t, std::size_t b, std::size_t S,
                               std::size_t C, std::size_t h, std::size_t dh) {
  return MutStridedMap<T>(t.data() + b * S * C + h * dh, S, dh,
                          Eigen::OuterStride<Eigen::Dynamic>(C));
}

template <class T>
void softmax_rows(Mat<T>& m) {
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    T mx = m.row(r).maxCoeff();
    m.row(r) = (m.row(r).array() - mx).exp();
    m.row(r) /= m.row(r).sum();
  }
}

}  // namespace attndetail

// Scaled dot-product attention over [B', S, C] with `heads` channel blocks.
// Scale is 1/sqrt(C/heads). The softmax matrices are not kept; the backward
// pass recomputes them per (image, head) slice, which bounds peak memory at
// one S x S scratch block.
template <class T>
Var<T> attention_core(const Var<T>& q, const Var<T>& k, const Var<T>& v,
                      std::size_t heads) {
  const auto& s = q->value.shape();
  check(s.size() == 3, "attention: expected [B',S,C]");
  detail::check_same_shape(q->value, k->value, "attention");
  detail::check_same_shape(q->value, v->value, "attention");
  const std::size_t B = s[0], S = s[1], C = s[2];
  check(C % heads == 0, "attention: channels not divisible by heads");
  const std::size_t dh = C / heads;
  const T scale = T(1) / std::sqrt(static_cast<T>(dh));

  using attndetail::head_view;
  using attndetail::head_view_mut;
  using attndetail::Mat;

  Tensor<T> out(s, T(0));
  {
    Mat<T> scores(S, S);
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t h = 0; h < heads; ++h) {
        auto Q = head_view(q->value, b, S, C, h, dh);
        auto K = head_view(k->value, b, S, C, h, dh);
        auto V = head_view(v->value, b, S, C, h, dh);
        scores.noalias() = Q * K.transpose() * scale;
        attndetail::softmax_rows(scores);
        head_view_mut(out, b, S, C, h, dh).noalias() = scores * V;
      }
  }

  Tensor<T> qv = q->value, kv = k->value, vv = v->value;
  return make_op_node<T>(
      "attention", std::move(out), {q, k, v},
      [qv, kv, vv, B, S, C, heads, dh, scale](Node<T>& n) {
        using attndetail::head_view;
        using attndetail::head_view_mut;
        const bool nq = n.parents[0]->requires_grad;
        const bool nk = n.parents[1]->requires_grad;
        const bool nv = n.parents[2]->requires_grad;
        if (nq) n.parents[0]->ensure_grad();
        if (nk) n.parents[1]->ensure_grad();
        if (nv) n.parents[2]->ensure_grad();
        Mat<T> A(S, S), dA(S, S), dS(S, S);
        for (std::size_t b = 0; b < B; ++b)
          for (std::size_t h = 0; h < heads; ++h) {
            auto Q = head_view(qv, b, S, C, h, dh);
            auto K = head_view(kv, b, S, C, h, dh);
            auto V = head_view(vv, b, S, C, h, dh);
            auto dO = head_view(n.grad, b, S, C, h, dh);
            A.noalias() = Q * K.transpose() * scale;
            attndetail::softmax_rows(A);
            if (nv)
              head_view_mut(n.parents[2]->grad, b, S, C, h, dh).noalias() +=
                  A.transpose() * dO;
            if (!nq && !nk) continue;
            dA.noalias() = dO * V.transpose();
            // dS = A .* (dA - rowsum(dA .* A))
            for (std::size_t r = 0; r < S; ++r) {
              T dot = A.row(r).dot(dA.row(r));
              dS.row(r) = A.row(r).array() * (dA.row(r).array() - dot);
            }
            if (nq)
              head_view_mut(n.parents[0]->grad, b, S, C, h, dh).noalias() +=
                  dS * K * scale;
            if (nk)
              head_view_mut(n.parents[1]->grad, b, S, C, h, dh).noalias() +=
                  dS.transpose() * Q * scale;
          }
      });
}

// Value-level helper used by the invariant suite: the softmax attention
// matrix of one (image, head) slice.
template <class T>
attndetail::Mat<T> attention_matrix(const Tensor<T>& q, const Tensor<T>& k,
                                    std::size_t heads, std::size_t b,
                                    std::size_t h) {
  const std::size_t S = q.dim(1), C = q.dim(2), dh = C / heads;
  const T scale = T(1) / std::sqrt(static_cast<T>(dh));
  attndetail::Mat<T> scores =
      attndetail::head_view(q, b, S, C, h, dh) *
      attndetail::head_view(k, b, S, C, h, dh).transpose() * scale;
  attndetail::softmax_rows(scores);
  return scores;
}

}  // namespace rwsa
